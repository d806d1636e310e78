//! Optional amplitude windowing, offered as a preprocessing step for data
//! whose edges are not already quiet. The solver itself never windows.

use crate::error::{Error, Result};
use crate::signal::SignalMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Window {
    /// Leave the data untouched.
    None,
    /// Tukey taper: flat over the central `1 - alpha` fraction, raised-cosine
    /// ramps over `alpha/2` at each end. `alpha = 1` is a full raised cosine.
    Tukey { alpha: f64 },
}

pub(crate) fn tukey_weights(n: usize, alpha: f64) -> Vec<f64> {
    debug_assert!(n >= 2);
    if alpha == 0.0 {
        return vec![1.0; n];
    }
    let span = (n - 1) as f64;
    let edge = alpha / 2.0;
    (0..n)
        .map(|t| {
            let x = t as f64 / span;
            if x < edge {
                0.5 * (1.0 + (std::f64::consts::PI * (2.0 * x / alpha - 1.0)).cos())
            } else if x <= 1.0 - edge {
                1.0
            } else {
                0.5 * (1.0 + (std::f64::consts::PI * (2.0 * (1.0 - x) / alpha - 1.0)).cos())
            }
        })
        .collect()
}

/// Multiplies every row of `x` by the window weights.
pub fn apply_window(x: &SignalMatrix, window: &Window) -> Result<SignalMatrix> {
    match window {
        Window::None => Ok(x.clone()),
        Window::Tukey { alpha } => {
            if !alpha.is_finite() || *alpha < 0.0 || *alpha > 1.0 {
                return Err(Error::InvalidParameter {
                    name: "alpha",
                    reason: format!("tukey fraction must lie in [0, 1], got {}", alpha),
                });
            }
            let n = x.n_samples();
            let w = tukey_weights(n, *alpha);
            let mut out = x.array().clone();
            for mut row in out.rows_mut() {
                for (v, wt) in row.iter_mut().zip(&w) {
                    *v *= wt;
                }
            }
            SignalMatrix::new(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn ramp(p: usize, n: usize) -> SignalMatrix {
        let data = Array2::from_shape_fn((p, n), |(i, j)| (i * n + j) as f64 + 1.0);
        SignalMatrix::new(data).unwrap()
    }

    #[test]
    fn none_is_identity() {
        let x = ramp(2, 16);
        let y = apply_window(&x, &Window::None).unwrap();
        assert_eq!(x.array(), y.array());
    }

    #[test]
    fn full_taper_zeroes_both_ends() {
        let x = ramp(1, 64);
        let y = apply_window(&x, &Window::Tukey { alpha: 1.0 }).unwrap();
        assert_eq!(y.array()[[0, 0]], 0.0);
        assert_eq!(y.array()[[0, 63]], 0.0);
        // interior stays positive for a positive input
        assert!(y.array()[[0, 32]] > 0.0);
    }

    #[test]
    fn central_fraction_is_untouched() {
        // weights evaluated independently: indices with x in [alpha/2, 1-alpha/2]
        // take weight exactly 1, so those samples pass through bit-identical.
        let n = 200;
        let alpha = 0.2;
        let x = ramp(3, n);
        let y = apply_window(&x, &Window::Tukey { alpha }).unwrap();
        let span = (n - 1) as f64;
        let mut flat = 0usize;
        for t in 0..n {
            let frac = t as f64 / span;
            if frac >= alpha / 2.0 && frac <= 1.0 - alpha / 2.0 {
                flat += 1;
                for i in 0..3 {
                    assert_eq!(y.array()[[i, t]], x.array()[[i, t]]);
                }
            }
        }
        // central 80% of samples, up to rounding at the taper edges
        assert!(flat >= (0.8 * n as f64) as usize);
    }

    #[test]
    fn rejects_fraction_outside_unit_interval() {
        let x = ramp(1, 8);
        assert!(apply_window(&x, &Window::Tukey { alpha: -0.1 }).is_err());
        assert!(apply_window(&x, &Window::Tukey { alpha: 1.5 }).is_err());
        assert!(apply_window(&x, &Window::Tukey { alpha: f64::NAN }).is_err());
    }
}
