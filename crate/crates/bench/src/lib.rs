//! Fixtures shared by the kernel benchmarks.

use sublab::{ControlPath, Model};

/// Smooth deterministic control with a few Fourier modes per component.
pub fn wavy(steps: usize, dim: usize) -> ControlPath {
    ControlPath::from_fn(steps, dim, |t| {
        (0..dim)
            .map(|c| {
                let k = (c + 1) as f64;
                0.6 * (2.0 * std::f64::consts::PI * k * t).sin() + 0.3 * (std::f64::consts::PI * (k + 1.0) * t).cos()
            })
            .collect()
    })
}

pub fn models() -> Vec<Model> {
    vec![Model::heisenberg3(), Model::engel(), Model::heisenberg_product(8)]
}
