//! Multilayer perceptron with hand-derived backpropagation.
//!
//! Parameters live in one flat vector laid out layer by layer — row-major
//! weight matrix first, then the bias vector — which is what lets the
//! optimizer, the controller, and the snapshot machinery treat the model as
//! an opaque `&[f64]`. Hidden activations are tanh, the output layer is
//! linear, and the loss is mean cross-entropy computed through the
//! max-shifted log-sum-exp.
//!
//! The backward pass is derived directly from those formulas:
//!
//! * output layer: `dz_L = softmax(z_L) - onehot(label)`,
//! * through a tanh layer with activation `a`: `dz = (Wᵀ dz_next) ⊙ (1 - a²)`,
//! * per layer: `dW = dz ⊗ a_prev`, `db = dz`,
//!
//! accumulated example by example in batch order and scaled by `1/B` at the
//! end, so the gradient of a batch is a deterministic left-to-right sum.
//! `grad_check` in the verification module validates this against central
//! finite differences.

use crate::data::{Dataset, ProbeSet};
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, softmax};
use crate::rng::{gaussian, RngStream};

/// Architecture of an MLP: the sizes of every layer, input and output
/// included. Hidden layers use tanh; the final layer emits raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
}

impl MlpSpec {
    /// At least two layers (input and output), every size >= 1.
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Parameter(format!(
                "an MLP needs at least input and output layers, got {:?}",
                layer_sizes
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Parameter(format!(
                "layer sizes must be >= 1, got {:?}",
                layer_sizes
            )));
        }
        Ok(MlpSpec { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Total parameter count: sum over layers of `out * in + out`.
    pub fn param_count(&self) -> usize {
        self.layers().map(|l| l.weight_len + l.out_dim).sum()
    }

    /// Per-layer offsets into the flat parameter vector.
    fn layers(&self) -> impl Iterator<Item = LayerSlot> + '_ {
        let sizes = &self.layer_sizes;
        let mut offset = 0;
        (0..sizes.len() - 1).map(move |l| {
            let in_dim = sizes[l];
            let out_dim = sizes[l + 1];
            let weight_len = in_dim * out_dim;
            let slot = LayerSlot {
                weight_offset: offset,
                bias_offset: offset + weight_len,
                in_dim,
                out_dim,
                weight_len,
            };
            offset += weight_len + out_dim;
            slot
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    weight_offset: usize,
    bias_offset: usize,
    in_dim: usize,
    out_dim: usize,
    weight_len: usize,
}

/// Draws initial parameters: weights are Gaussian with std `1/sqrt(fan_in)`
/// per layer, biases start at zero.
pub fn init_params(spec: &MlpSpec, rng: &mut RngStream) -> Vec<f64> {
    let mut params = Vec::with_capacity(spec.param_count());
    for layer in spec.layers() {
        let std = 1.0 / (layer.in_dim as f64).sqrt();
        let w = gaussian(rng, layer.weight_len, 0.0, std)
            .expect("fan-in derived std is always finite and positive");
        params.extend_from_slice(&w);
        params.extend(std::iter::repeat_n(0.0, layer.out_dim));
    }
    params
}

fn check_params(spec: &MlpSpec, params: &[f64]) -> Result<()> {
    if params.len() != spec.param_count() {
        return Err(Error::Dimension(format!(
            "parameter vector has {} elements, spec {:?} needs {}",
            params.len(),
            spec.layer_sizes,
            spec.param_count()
        )));
    }
    Ok(())
}

fn check_data(spec: &MlpSpec, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Parameter("dataset is empty".into()));
    }
    if data.input_dim() != spec.input_dim() {
        return Err(Error::Dimension(format!(
            "dataset features have {} dims, model expects {}",
            data.input_dim(),
            spec.input_dim()
        )));
    }
    if data.num_classes() != spec.output_dim() {
        return Err(Error::Dimension(format!(
            "dataset has {} classes, model emits {} logits",
            data.num_classes(),
            spec.output_dim()
        )));
    }
    Ok(())
}

/// Forward pass for one example; returns the activations of every layer
/// (activations[0] is the input, the last entry the raw logits).
fn forward(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let num_layers = spec.layer_sizes.len() - 1;
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(num_layers + 1);
    acts.push(x.to_vec());
    for (l, layer) in spec.layers().enumerate() {
        let w = &params[layer.weight_offset..layer.weight_offset + layer.weight_len];
        let b = &params[layer.bias_offset..layer.bias_offset + layer.out_dim];
        let a_prev = acts.last().unwrap();
        let mut z = Vec::with_capacity(layer.out_dim);
        for r in 0..layer.out_dim {
            let row = &w[r * layer.in_dim..(r + 1) * layer.in_dim];
            let mut acc = b[r];
            for c in 0..layer.in_dim {
                acc += row[c] * a_prev[c];
            }
            z.push(acc);
        }
        if l != num_layers - 1 {
            for v in &mut z {
                *v = v.tanh();
            }
        }
        acts.push(z);
    }
    acts
}

fn example_loss(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

/// Mean cross-entropy of `params` over the examples selected by `idx`.
/// Forward passes only; bitwise identical to the loss that
/// [`loss_and_grad`] reports for the same batch.
pub fn batch_loss(params: &[f64], data: &Dataset, idx: &[usize], spec: &MlpSpec) -> Result<f64> {
    check_params(spec, params)?;
    check_data(spec, data)?;
    if idx.is_empty() {
        return Err(Error::Parameter("batch is empty".into()));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= data.len()) {
        return Err(Error::Parameter(format!(
            "batch index {bad} is outside the dataset (len {})",
            data.len()
        )));
    }
    let mut total = 0.0;
    for &i in idx {
        let acts = forward(spec, params, data.input(i));
        total += example_loss(acts.last().unwrap(), data.label(i));
    }
    Ok(total / idx.len() as f64)
}

/// Mean cross-entropy and its gradient over the examples selected by `idx`.
///
/// The gradient has the same layout as the parameter vector. Pure: equal
/// inputs produce bit-identical outputs.
pub fn loss_and_grad(
    params: &[f64],
    data: &Dataset,
    idx: &[usize],
    spec: &MlpSpec,
) -> Result<(f64, Vec<f64>)> {
    check_params(spec, params)?;
    check_data(spec, data)?;
    if idx.is_empty() {
        return Err(Error::Parameter("batch is empty".into()));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= data.len()) {
        return Err(Error::Parameter(format!(
            "batch index {bad} is outside the dataset (len {})",
            data.len()
        )));
    }

    let layers: Vec<LayerSlot> = spec.layers().collect();
    let mut grad = vec![0.0; spec.param_count()];
    let mut total = 0.0;

    for &i in idx {
        let acts = forward(spec, params, data.input(i));
        let logits = acts.last().unwrap();
        total += example_loss(logits, data.label(i));

        // dL/dz for the output layer.
        let mut delta = softmax(logits);
        delta[data.label(i)] -= 1.0;

        for (l, layer) in layers.iter().enumerate().rev() {
            let a_prev = &acts[l];
            let gw = layer.weight_offset;
            let gb = layer.bias_offset;
            for r in 0..layer.out_dim {
                let d = delta[r];
                for c in 0..layer.in_dim {
                    grad[gw + r * layer.in_dim + c] += d * a_prev[c];
                }
                grad[gb + r] += d;
            }
            if l > 0 {
                // Backpropagate through the tanh of layer l-1's output:
                // a_prev holds tanh(z), so dtanh/dz = 1 - a_prev^2.
                let w = &params[layer.weight_offset..layer.weight_offset + layer.weight_len];
                let mut prev = vec![0.0; layer.in_dim];
                for c in 0..layer.in_dim {
                    let mut acc = 0.0;
                    for r in 0..layer.out_dim {
                        acc += w[r * layer.in_dim + c] * delta[r];
                    }
                    prev[c] = acc * (1.0 - a_prev[c] * a_prev[c]);
                }
                delta = prev;
            }
        }
    }

    let scale = 1.0 / idx.len() as f64;
    total *= scale;
    for g in &mut grad {
        *g *= scale;
    }
    Ok((total, grad))
}

/// Mean cross-entropy over the whole probe set. Pure and side-effect free:
/// it never touches optimizer or controller state, which is what makes the
/// probe signal external to training.
pub fn probe_loss(params: &[f64], probe: &ProbeSet, spec: &MlpSpec) -> Result<f64> {
    let idx: Vec<usize> = (0..probe.len()).collect();
    batch_loss(params, probe.data(), &idx, spec)
}

/// Fraction of examples whose argmax logit equals the label.
pub fn accuracy(params: &[f64], data: &Dataset, spec: &MlpSpec) -> Result<f64> {
    check_params(spec, params)?;
    check_data(spec, data)?;
    let mut correct = 0usize;
    for i in 0..data.len() {
        let acts = forward(spec, params, data.input(i));
        let logits = acts.last().unwrap();
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = k;
            }
        }
        if best == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;

    fn rng() -> RngStream {
        RngStream::new(7, 0)
    }

    #[test]
    fn param_count_for_small_spec() {
        // [2, 3, 2]: 2*3 + 3 + 3*2 + 2 = 17
        let spec = MlpSpec::new(vec![2, 3, 2]).unwrap();
        assert_eq!(spec.param_count(), 17);
    }

    #[test]
    fn spec_validates_shape() {
        assert!(MlpSpec::new(vec![3]).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2]).is_err());
    }

    #[test]
    fn init_is_deterministic_and_stream_sensitive() {
        let spec = MlpSpec::new(vec![4, 5, 3]).unwrap();
        let a = init_params(&spec, &mut RngStream::new(1, 2));
        let b = init_params(&spec, &mut RngStream::new(1, 2));
        let c = init_params(&spec, &mut RngStream::new(1, 3));
        assert_eq!(a.len(), spec.param_count());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.iter().zip(&c).any(|(x, y)| x.to_bits() != y.to_bits()));
    }

    #[test]
    fn init_biases_are_zero() {
        let spec = MlpSpec::new(vec![2, 3, 2]).unwrap();
        let p = init_params(&spec, &mut rng());
        // Layout: 6 weights, 3 biases, 6 weights, 2 biases.
        assert!(p[6..9].iter().all(|&b| b == 0.0));
        assert!(p[15..17].iter().all(|&b| b == 0.0));
        assert!(p[0..6].iter().any(|&w| w != 0.0));
    }

    #[test]
    fn zero_params_give_uniform_loss_ln_c() {
        let spec = MlpSpec::new(vec![3, 4]).unwrap();
        let params = vec![0.0; spec.param_count()];
        let data = make_blobs(&mut rng(), 12, 3, 4, 2.0).unwrap();
        let idx: Vec<usize> = (0..data.len()).collect();
        let loss = batch_loss(&params, &data, &idx, &spec).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_logits_give_small_loss() {
        // Two classes, one feature fixed at 1.0; weight the correct logit up.
        let spec = MlpSpec::new(vec![1, 2]).unwrap();
        // Layout: w = [[w0], [w1]], b = [b0, b1].
        let params = vec![20.0, -20.0, 0.0, 0.0];
        let data = Dataset::new(vec![vec![1.0]; 4], vec![0; 4], 2).unwrap();
        let idx: Vec<usize> = (0..4).collect();
        let loss = batch_loss(&params, &data, &idx, &spec).unwrap();
        assert!(loss < 0.01, "saturated loss was {loss}");
    }

    #[test]
    fn batch_loss_matches_loss_and_grad_bitwise() {
        let spec = MlpSpec::new(vec![2, 5, 3]).unwrap();
        let data = make_blobs(&mut rng(), 30, 2, 3, 3.0).unwrap();
        let params = init_params(&spec, &mut rng());
        let idx = vec![0, 3, 7, 7, 21];
        let fwd = batch_loss(&params, &data, &idx, &spec).unwrap();
        let (loss, _) = loss_and_grad(&params, &data, &idx, &spec).unwrap();
        assert_eq!(fwd.to_bits(), loss.to_bits());
    }

    #[test]
    fn duplicated_batch_changes_nothing_material() {
        let spec = MlpSpec::new(vec![2, 4, 3]).unwrap();
        let data = make_blobs(&mut rng(), 20, 2, 3, 3.0).unwrap();
        let params = init_params(&spec, &mut rng());
        let once = vec![1, 5, 9];
        let twice = vec![1, 5, 9, 1, 5, 9];
        let (l1, g1) = loss_and_grad(&params, &data, &once, &spec).unwrap();
        let (l2, g2) = loss_and_grad(&params, &data, &twice, &spec).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_is_pure() {
        let spec = MlpSpec::new(vec![2, 3, 2]).unwrap();
        let data = make_blobs(&mut rng(), 10, 2, 2, 2.0).unwrap();
        let params = init_params(&spec, &mut rng());
        let idx = vec![0, 1, 2];
        let (l1, g1) = loss_and_grad(&params, &data, &idx, &spec).unwrap();
        let (l2, g2) = loss_and_grad(&params, &data, &idx, &spec).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn dimension_errors_are_reported() {
        let spec = MlpSpec::new(vec![2, 3, 2]).unwrap();
        let data = make_blobs(&mut rng(), 10, 2, 2, 2.0).unwrap();
        let short = vec![0.0; 5];
        assert!(matches!(
            loss_and_grad(&short, &data, &[0], &spec),
            Err(Error::Dimension(_))
        ));
        let wide = make_blobs(&mut rng(), 10, 3, 2, 2.0).unwrap();
        let params = init_params(&spec, &mut rng());
        assert!(matches!(
            loss_and_grad(&params, &wide, &[0], &spec),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            loss_and_grad(&params, &data, &[], &spec),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            loss_and_grad(&params, &data, &[99], &spec),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn accuracy_of_hand_built_classifier() {
        // One feature; logit_0 = x, logit_1 = -x: positive x -> class 0.
        let spec = MlpSpec::new(vec![1, 2]).unwrap();
        let params = vec![1.0, -1.0, 0.0, 0.0];
        let data = Dataset::new(
            vec![vec![2.0], vec![-3.0], vec![1.0], vec![-0.5]],
            vec![0, 1, 0, 0],
            2,
        )
        .unwrap();
        let acc = accuracy(&params, &data, &spec).unwrap();
        assert!((acc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn non_finite_params_propagate_to_loss() {
        let spec = MlpSpec::new(vec![2, 3, 2]).unwrap();
        let data = make_blobs(&mut rng(), 10, 2, 2, 2.0).unwrap();
        let mut params = init_params(&spec, &mut rng());
        params[0] = f64::NAN;
        let loss = batch_loss(&params, &data, &[0, 1], &spec).unwrap();
        assert!(loss.is_nan());
    }
}
