//! Synthetic desk-scale datasets and deterministic batching.
//!
//! Two task families stand in for the usual image/sequence benchmarks: a
//! Gaussian-blob classification task and a windowed next-character
//! prediction task over a repeated phrase. Both are generated entirely from
//! an [`RngStream`], so a `(seed, stream)` pair pins the dataset bit-for-bit.
//!
//! Batching is stateless: the mini-batch at step `t` is a pure function of
//! the batch stream's key and `t`. A training loop that rolls a step back and
//! retries therefore sees exactly the batch sequence a rollback-free loop
//! would have seen.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::rng::{gaussian, RngStream};

/// How many times a phrase is repeated to form the character-task corpus.
const CHAR_TASK_REPEATS: usize = 8;

/// A labeled classification dataset with dense `f64` features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    /// Builds a dataset, validating that inputs and labels correspond:
    /// equal counts, uniform feature width, labels within `0..num_classes`.
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "dataset has {} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Parameter("num_classes must be >= 1".into()));
        }
        if let Some(first) = inputs.first() {
            let dim = first.len();
            if dim == 0 {
                return Err(Error::Parameter("examples must have >= 1 feature".into()));
            }
            if let Some(bad) = inputs.iter().position(|x| x.len() != dim) {
                return Err(Error::Dimension(format!(
                    "example {bad} has {} features, expected {dim}",
                    inputs[bad].len()
                )));
            }
        }
        if let Some(bad) = labels.iter().position(|&l| l >= num_classes) {
            return Err(Error::Parameter(format!(
                "label {} of example {bad} is outside 0..{num_classes}",
                labels[bad]
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Feature width; 0 only for an empty dataset.
    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Gaussian blob classification: `num_classes` unit-variance clusters whose
/// centers are pairwise `separation` apart (adjacent vertices of a regular
/// polygon in the first two feature dimensions; on a line if `dim == 1`).
/// Example `i` belongs to class `i % num_classes`, so class counts are as
/// balanced as `n` allows.
pub fn make_blobs(
    rng: &mut RngStream,
    n: usize,
    dim: usize,
    num_classes: usize,
    separation: f64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::Parameter(format!(
            "make_blobs needs >= 2 classes, got {num_classes}"
        )));
    }
    if n < num_classes {
        return Err(Error::Parameter(format!(
            "make_blobs needs n >= num_classes, got n={n}, num_classes={num_classes}"
        )));
    }
    if dim == 0 {
        return Err(Error::Parameter("make_blobs needs dim >= 1".into()));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::Parameter(format!(
            "separation must be finite and >= 0, got {separation}"
        )));
    }

    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|c| {
            let mut center = vec![0.0; dim];
            if dim == 1 {
                center[0] = separation * (c as f64 - (num_classes - 1) as f64 / 2.0);
            } else {
                // Circumradius such that adjacent centers are `separation` apart.
                let radius = separation / (2.0 * (std::f64::consts::PI / num_classes as f64).sin());
                let angle = std::f64::consts::TAU * c as f64 / num_classes as f64;
                center[0] = radius * angle.cos();
                center[1] = radius * angle.sin();
            }
            center
        })
        .collect();

    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        let noise = gaussian(rng, dim, 0.0, 1.0)?;
        let x: Vec<f64> = centers[class]
            .iter()
            .zip(&noise)
            .map(|(c, e)| c + e)
            .collect();
        inputs.push(x);
        labels.push(class);
    }
    Dataset::new(inputs, labels, num_classes)
}

/// Windowed next-character prediction over `phrase` repeated
/// `CHAR_TASK_REPEATS` times. Each input is the one-hot concatenation of
/// `window` consecutive characters; the label is the vocabulary index of the
/// character that follows. The vocabulary is the sorted set of distinct
/// characters in the phrase, and the dataset has
/// `len(repeated corpus) - window` examples.
pub fn make_char_task(phrase: &str, window: usize) -> Result<Dataset> {
    let phrase_chars: Vec<char> = phrase.chars().collect();
    if phrase_chars.is_empty() {
        return Err(Error::Parameter("phrase must be non-empty".into()));
    }
    if window == 0 {
        return Err(Error::Parameter("window must be >= 1".into()));
    }
    if window >= phrase_chars.len() {
        return Err(Error::Parameter(format!(
            "window ({window}) must be smaller than the phrase length ({})",
            phrase_chars.len()
        )));
    }

    let mut vocab: Vec<char> = phrase_chars.clone();
    vocab.sort_unstable();
    vocab.dedup();
    let index_of = |ch: char| vocab.iter().position(|&v| v == ch).unwrap();

    let corpus: Vec<char> = phrase_chars
        .iter()
        .copied()
        .cycle()
        .take(phrase_chars.len() * CHAR_TASK_REPEATS)
        .collect();

    let n = corpus.len() - window;
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = vec![0.0; window * vocab.len()];
        for (j, &ch) in corpus[i..i + window].iter().enumerate() {
            x[j * vocab.len() + index_of(ch)] = 1.0;
        }
        inputs.push(x);
        labels.push(index_of(corpus[i + window]));
    }
    Dataset::new(inputs, labels, vocab.len())
}

/// A fixed held-out probe set, disjoint (at the example level) from the
/// training data it was split from.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    data: Dataset,
}

impl ProbeSet {
    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Splits `dataset` into a training set and a probe set of exactly
/// `probe_size` examples, sampled by stratified draws: classes are visited
/// round-robin and a random not-yet-taken example of each class is chosen,
/// so probe class counts differ by at most one while any class has examples
/// left. Disjointness is established here by partitioning indices — this is
/// the only way to construct a [`ProbeSet`].
pub fn split_probe(
    dataset: &Dataset,
    probe_size: usize,
    rng: &mut RngStream,
) -> Result<(Dataset, ProbeSet)> {
    if probe_size == 0 {
        return Err(Error::Parameter("probe_size must be >= 1".into()));
    }
    if probe_size >= dataset.len() {
        return Err(Error::Parameter(format!(
            "probe_size ({probe_size}) must leave training data (dataset has {} examples)",
            dataset.len()
        )));
    }

    // Pool of available indices per class.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for i in 0..dataset.len() {
        by_class[dataset.label(i)].push(i);
    }

    let mut probe_indices = Vec::with_capacity(probe_size);
    let mut class = 0;
    let mut empty_rounds = 0;
    while probe_indices.len() < probe_size {
        let pool = &mut by_class[class];
        if pool.is_empty() {
            empty_rounds += 1;
            // All classes exhausted would mean probe_size >= len, excluded above.
            debug_assert!(empty_rounds <= dataset.num_classes());
        } else {
            empty_rounds = 0;
            let pick = rng.next_below(pool.len() as u64) as usize;
            probe_indices.push(pool.swap_remove(pick));
        }
        class = (class + 1) % dataset.num_classes();
    }

    let mut in_probe = vec![false; dataset.len()];
    for &i in &probe_indices {
        debug_assert!(!in_probe[i], "probe indices must be unique");
        in_probe[i] = true;
    }

    let take = |want_probe: bool| -> Result<Dataset> {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (i, &flagged) in in_probe.iter().enumerate() {
            if flagged == want_probe {
                inputs.push(dataset.input(i).to_vec());
                labels.push(dataset.label(i));
            }
        }
        Dataset::new(inputs, labels, dataset.num_classes())
    };

    let probe = take(true)?;
    let train = take(false)?;
    debug_assert_eq!(probe.len() + train.len(), dataset.len());
    Ok((train, ProbeSet { data: probe }))
}

/// Stateless deterministic mini-batch sampler: the batch at step `t` depends
/// only on the stream key and `t`, never on how many batches were drawn
/// before or whether earlier steps were rolled back.
#[derive(Debug, Clone)]
pub struct BatchStream {
    data_len: usize,
    batch_size: usize,
    rng: RngStream,
}

impl BatchStream {
    pub fn new(data_len: usize, batch_size: usize, rng: RngStream) -> Result<Self> {
        if data_len == 0 {
            return Err(Error::Parameter("batch stream needs a non-empty dataset".into()));
        }
        if batch_size == 0 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        Ok(BatchStream {
            data_len,
            batch_size,
            rng,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Indices (with replacement) of the mini-batch for step `t`.
    pub fn indices(&self, t: u64) -> Vec<usize> {
        let mut r = self.rng.substream(t);
        (0..self.batch_size)
            .map(|_| r.next_below(self.data_len as u64) as usize)
            .collect()
    }
}

/// Writes a dataset as CSV, one `feature,...,label` row per example. For
/// offline inspection only; nothing on the training path reads this.
pub fn dataset_to_csv<W: Write>(dataset: &Dataset, mut w: W) -> Result<()> {
    for i in 0..dataset.len() {
        let mut row = String::new();
        for v in dataset.input(i) {
            row.push_str(&format!("{v},"));
        }
        row.push_str(&format!("{}\n", dataset.label(i)));
        w.write_all(row.as_bytes())?;
    }
    Ok(())
}

/// Reads a dataset written by [`dataset_to_csv`]. The class count is
/// inferred as `max label + 1`.
pub fn dataset_from_csv<R: BufRead>(r: R) -> Result<Dataset> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::Format(format!(
                "dataset row {} needs at least one feature and a label",
                lineno + 1
            )));
        }
        let (feat, lab) = fields.split_at(fields.len() - 1);
        let x: Vec<f64> = feat
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::Format(format!("dataset row {}: bad feature {f:?}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        let label: usize = lab[0].parse().map_err(|_| {
            Error::Format(format!("dataset row {}: bad label {:?}", lineno + 1, lab[0]))
        })?;
        inputs.push(x);
        labels.push(label);
    }
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(inputs, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> RngStream {
        RngStream::new(42, 0)
    }

    #[test]
    fn blobs_round_robin_class_assignment() {
        let d = make_blobs(&mut rng(), 4, 2, 4, 3.0).unwrap();
        assert_eq!(d.labels(), &[0, 1, 2, 3]);
    }

    #[test]
    fn blobs_shapes_and_ranges() {
        let d = make_blobs(&mut rng(), 50, 3, 4, 2.0).unwrap();
        assert_eq!(d.len(), 50);
        assert_eq!(d.input_dim(), 3);
        assert_eq!(d.num_classes(), 4);
        assert!(d.labels().iter().all(|&l| l < 4));
    }

    #[test]
    fn blobs_are_deterministic_per_stream() {
        let a = make_blobs(&mut rng(), 20, 2, 3, 5.0).unwrap();
        let b = make_blobs(&mut rng(), 20, 2, 3, 5.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blobs_separation_controls_center_distance() {
        // With zero noise dimensions impossible, check statistically: class
        // means of a well-separated task are roughly `separation` apart.
        let d = make_blobs(&mut rng(), 600, 2, 2, 10.0).unwrap();
        let mut means = [[0.0f64; 2]; 2];
        let mut counts = [0usize; 2];
        for i in 0..d.len() {
            let l = d.label(i);
            counts[l] += 1;
            means[l][0] += d.input(i)[0];
            means[l][1] += d.input(i)[1];
        }
        for (m, c) in means.iter_mut().zip(counts) {
            m[0] /= c as f64;
            m[1] /= c as f64;
        }
        let dist =
            ((means[0][0] - means[1][0]).powi(2) + (means[0][1] - means[1][1]).powi(2)).sqrt();
        assert!((dist - 10.0).abs() < 0.5, "center distance {dist}");
    }

    #[test]
    fn blobs_validates_parameters() {
        assert!(matches!(
            make_blobs(&mut rng(), 1, 2, 2, 1.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            make_blobs(&mut rng(), 10, 2, 1, 1.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            make_blobs(&mut rng(), 10, 2, 2, -1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn char_task_ab_window_one() {
        let d = make_char_task("ab", 1).unwrap();
        // Corpus is "ab" repeated; every input is a one-hot of 'a' or 'b'
        // and the label is the other character.
        assert_eq!(d.num_classes(), 2);
        assert_eq!(d.input_dim(), 2);
        assert_eq!(d.len(), 2 * CHAR_TASK_REPEATS - 1);
        for i in 0..d.len() {
            let x = d.input(i);
            if x == [1.0, 0.0] {
                assert_eq!(d.label(i), 1, "'a' is followed by 'b'");
            } else {
                assert_eq!(x, &[0.0, 1.0]);
                assert_eq!(d.label(i), 0, "'b' is followed by 'a'");
            }
        }
    }

    #[test]
    fn char_task_size_matches_corpus_length() {
        let phrase = "abcde";
        let window = 3;
        let d = make_char_task(phrase, window).unwrap();
        assert_eq!(d.len(), phrase.len() * CHAR_TASK_REPEATS - window);
    }

    #[test]
    fn char_task_validates_window() {
        assert!(matches!(make_char_task("abc", 0), Err(Error::Parameter(_))));
        assert!(matches!(make_char_task("abc", 3), Err(Error::Parameter(_))));
        assert!(matches!(make_char_task("", 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn split_probe_sizes_and_stratification() {
        let d = make_blobs(&mut rng(), 100, 2, 4, 5.0).unwrap();
        let (train, probe) = split_probe(&d, 16, &mut rng()).unwrap();
        assert_eq!(probe.len(), 16);
        assert_eq!(train.len(), 84);
        // 16 over 4 classes: exactly 4 each.
        let mut counts = [0usize; 4];
        for i in 0..probe.len() {
            counts[probe.data().label(i)] += 1;
        }
        assert_eq!(counts, [4, 4, 4, 4]);
    }

    #[test]
    fn split_probe_is_disjoint_from_training() {
        // Blob features are continuous, so shared content would mean a
        // shared index; check no probe row appears among the training rows.
        let d = make_blobs(&mut rng(), 60, 2, 3, 4.0).unwrap();
        let (train, probe) = split_probe(&d, 9, &mut rng()).unwrap();
        for i in 0..probe.len() {
            let p = probe.data().input(i);
            assert!(
                (0..train.len()).all(|j| train.input(j) != p),
                "probe example {i} leaked into the training set"
            );
        }
    }

    #[test]
    fn split_probe_validates_sizes() {
        let d = make_blobs(&mut rng(), 10, 2, 2, 1.0).unwrap();
        assert!(matches!(
            split_probe(&d, 0, &mut rng()),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            split_probe(&d, 10, &mut rng()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn batches_are_pure_functions_of_step() {
        let s = BatchStream::new(50, 8, rng()).unwrap();
        let first = s.indices(5);
        let _ = s.indices(7); // interleaved draws must not matter
        assert_eq!(s.indices(5), first);
        assert_ne!(s.indices(5), s.indices(6));
        assert!(s.indices(123).iter().all(|&i| i < 50));
        assert_eq!(s.indices(0).len(), 8);
    }

    #[test]
    fn batch_stream_validates_parameters() {
        assert!(BatchStream::new(0, 4, rng()).is_err());
        assert!(BatchStream::new(10, 0, rng()).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let d = make_blobs(&mut rng(), 30, 3, 3, 2.0).unwrap();
        let mut buf = Vec::new();
        dataset_to_csv(&d, &mut buf).unwrap();
        let back = dataset_from_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn dataset_csv_rejects_malformed_rows() {
        let r = dataset_from_csv(std::io::Cursor::new(b"1.0,zzz\n".to_vec()));
        assert!(matches!(r, Err(Error::Format(_))));
    }

    #[test]
    fn dataset_validates_construction() {
        assert!(Dataset::new(vec![vec![1.0]], vec![0, 1], 2).is_err());
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0, 0], 1).is_err());
        assert!(Dataset::new(vec![vec![1.0]], vec![3], 2).is_err());
    }
}
