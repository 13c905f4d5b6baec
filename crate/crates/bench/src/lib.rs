//! Shared inputs for the criterion benchmarks in `benches/`.

use stripe_core::detect::DetectorConfig;
use stripe_core::qpat::{default_phantom_spec, detection_image, forward, make_phantom};
use stripe_core::{Grid, ScalarField};

/// Smoothed disk of radius `n/4` on an `n × n` unit-pixel grid.
pub fn disk(n: usize) -> ScalarField {
    let c = 0.5 * n as f64;
    let r = 0.25 * n as f64;
    ScalarField::from_fn(Grid::pixels(n), |x, y| {
        let d = (x - c).hypot(y - c) - r;
        0.5 * (1.0 - (d / 1.5).tanh())
    })
}

/// Max-normalized energy of the built-in phantom, as the detector sees it.
pub fn phantom_image() -> ScalarField {
    let spec = default_phantom_spec();
    let p = make_phantom(&spec).expect("built-in phantom is valid");
    let data = forward(&p, &spec.illumination).expect("forward solve converges");
    detection_image(&data).expect("energy is positive")
}

/// Parameters of the plain order-`m` run on the phantom.
pub fn phantom_config(m: usize) -> DetectorConfig {
    DetectorConfig::table1(1, m, 1.0).expect("table entry exists")
}
