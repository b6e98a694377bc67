//! Finite-difference gradient checking.
//!
//! The numeric side uses only forward evaluations on non-recording tapes,
//! so it stays independent of the backward rules it verifies.

use super::{Tape, Tensor};

/// Central-difference step used throughout the test suites.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Compare analytic gradients against central finite differences.
///
/// `loss_fn` must rebuild the same scalar loss from the current parameter
/// values on the tape it is given. Returns the maximum relative error over
/// every entry of every parameter, with the denominator floored at 1e-4 so
/// near-zero gradient pairs compare absolutely.
pub fn max_relative_error(
    params: &[Tensor],
    mut loss_fn: impl FnMut(&Tape) -> Tensor,
    step: f64,
) -> f64 {
    for p in params {
        p.zero_grad();
    }
    let tape = Tape::new();
    let loss = loss_fn(&tape);
    tape.backward(&loss);
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();
    for p in params {
        p.zero_grad();
    }

    let mut worst: f64 = 0.0;
    for (pi, p) in params.iter().enumerate() {
        let base = p.to_vec();
        for k in 0..base.len() {
            let mut bumped = base.clone();
            bumped[k] = base[k] + step;
            p.set_values(&bumped);
            let up = loss_fn(&Tape::eval()).item();
            bumped[k] = base[k] - step;
            p.set_values(&bumped);
            let down = loss_fn(&Tape::eval()).item();
            p.set_values(&base);

            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pi][k];
            let denom = a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}
