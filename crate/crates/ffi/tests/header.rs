//! Checks that the generated C header declares the full exported interface.
//! The build script rewrites the header on every compile, so these tests see
//! the header that matches the library under test.

use std::path::Path;

fn header() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/trainstab.h");
    std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn the_header_declares_every_exported_function() {
    let header = header();
    for symbol in [
        "stab_controller_new",
        "stab_controller_submit",
        "stab_controller_params",
        "stab_controller_param_count",
        "stab_controller_state",
        "stab_controller_state_len",
        "stab_controller_y_hat",
        "stab_controller_step_count",
        "stab_controller_accept_count",
        "stab_controller_rollback_count",
        "stab_controller_free",
    ] {
        assert!(header.contains(symbol), "header is missing {symbol}");
    }
}

#[test]
fn the_header_declares_the_status_and_decision_enums() {
    let header = header();
    for name in [
        "STAB_STATUS_OK",
        "STAB_STATUS_NULL_ARGUMENT",
        "STAB_STATUS_INVALID_ARGUMENT",
        "STAB_STATUS_DIMENSION_MISMATCH",
        "STAB_DECISION_ACCEPT",
        "STAB_DECISION_ROLLBACK",
    ] {
        assert!(header.contains(name), "header is missing enum value {name}");
    }
    // The controller itself stays opaque: a forward declaration, no fields.
    assert!(header.contains("typedef struct StabController StabController;"));
}

#[test]
fn the_header_is_guarded_and_c_plus_plus_safe() {
    let header = header();
    assert!(header.contains("#ifndef TRAINSTAB_H"));
    assert!(header.contains("#define TRAINSTAB_H"));
    assert!(header.contains("extern \"C\""));
}
