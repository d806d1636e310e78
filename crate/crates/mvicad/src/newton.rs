//! Quasi-Newton update for one unmixing matrix.
//!
//! The Hessian of the loss with respect to a relative perturbation of `W^i`
//! couples the entries in pairs: `(a, b)` with `(b, a)`, and each diagonal
//! entry with itself. Solving those 2x2 systems gives a direction at the
//! same cost as the gradient; a backtracking search on the view loss then
//! picks the step.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::likelihood::{
    check_model, view_grad_gamma, view_inputs, view_loss_parts, Contrast, ModelParams,
};
use crate::linalg;
use crate::signal::{MatrixRole, MixingMatrix, ViewSet};

/// A pair block whose determinant falls at or below this is treated as
/// indefinite and falls back to the plain gradient for that pair.
const PAIR_DET_FLOOR: f64 = 1e-6;

/// Backtracking line-search controls.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchConfig {
    /// First step length tried.
    pub rho_init: f64,
    /// Multiplier applied after each rejected step, in (0, 1).
    pub shrink: f64,
    /// Rejections allowed before the update is abandoned.
    pub max_backtracks: u32,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            rho_init: 1.0,
            shrink: 0.5,
            max_backtracks: 30,
        }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_init.is_finite() && self.rho_init > 0.0) {
            return Err(Error::InvalidParameter {
                name: "rho_init",
                reason: format!("must be positive and finite, got {}", self.rho_init),
            });
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidParameter {
                name: "shrink",
                reason: format!("must lie strictly between 0 and 1, got {}", self.shrink),
            });
        }
        Ok(())
    }
}

/// Solves the pairwise Hessian approximation for a descent direction.
///
/// Off-diagonal pairs solve `[[gamma_ab, 1], [1, gamma_ba]]` against the
/// negated gradient; pairs whose determinant is not safely positive fall
/// back to `-G`. Diagonal entries use `-g_aa / (1 + gamma_aa)`.
pub fn newton_direction(gradient: &Array2<f64>, gamma: &Array2<f64>) -> Array2<f64> {
    let p = gradient.nrows();
    let mut d = Array2::<f64>::zeros((p, p));
    for a in 0..p {
        d[[a, a]] = -gradient[[a, a]] / (1.0 + gamma[[a, a]]);
        for b in (a + 1)..p {
            let g_ab = gradient[[a, b]];
            let g_ba = gradient[[b, a]];
            let c_ab = gamma[[a, b]];
            let c_ba = gamma[[b, a]];
            let det = c_ab * c_ba - 1.0;
            if det <= PAIR_DET_FLOOR {
                d[[a, b]] = -g_ab;
                d[[b, a]] = -g_ba;
            } else {
                d[[a, b]] = (-c_ba * g_ab + g_ba) / det;
                d[[b, a]] = (g_ab - c_ab * g_ba) / det;
            }
        }
    }
    d
}

/// One accepted unmixing update.
#[derive(Debug, Clone)]
pub struct WUpdate {
    pub unmixing: MixingMatrix,
    pub loss_before: f64,
    pub loss_after: f64,
    /// Step length that was accepted.
    pub step: f64,
}

pub(crate) struct SearchOutcome {
    pub(crate) w: MixingMatrix,
    /// `w * x` at the accepted candidate, reused by the caller.
    pub(crate) z: Array2<f64>,
    pub(crate) loss_before: f64,
    pub(crate) loss_after: f64,
    pub(crate) step: f64,
}

/// Runs the direction solve and backtracking search for one view with its
/// cross-view term `b` held fixed. `None` means no strictly decreasing step
/// was found and the current matrix stands.
pub(crate) fn search_view_update(
    w: &MixingMatrix,
    x: &Array2<f64>,
    b: &Array2<f64>,
    m: usize,
    sigma: f64,
    cfg: &LineSearchConfig,
) -> Option<SearchOutcome> {
    let n = x.ncols();
    let z = w.array().dot(x);
    // the stored matrix is known invertible, so this cannot fail
    let (logdet, _) = linalg::log_abs_det(w.array()).expect("stored unmixing is invertible");
    let loss_before = view_loss_parts(&z, b, logdet, m, n, sigma, Contrast::LogCosh);
    let (gradient, gamma) = view_grad_gamma(&z, b, m, sigma, Contrast::LogCosh);
    if gradient.iter().all(|&g| g == 0.0) {
        return None;
    }
    let direction = newton_direction(&gradient, &gamma);

    let dw = direction.dot(w.array());
    let mut rho = cfg.rho_init;
    for _ in 0..=cfg.max_backtracks {
        let candidate = w.array() + &(&dw * rho);
        // a singular or overflowed candidate is an ordinary rejection
        if let Ok(w_new) = MixingMatrix::new(candidate, MatrixRole::Unmixing) {
            let z_new = w_new.array().dot(x);
            let (logdet_new, _) =
                linalg::log_abs_det(w_new.array()).expect("validated above");
            let loss_new = view_loss_parts(&z_new, b, logdet_new, m, n, sigma, Contrast::LogCosh);
            if loss_new < loss_before {
                return Some(SearchOutcome {
                    w: w_new,
                    z: z_new,
                    loss_before,
                    loss_after: loss_new,
                    step: rho,
                });
            }
        }
        rho *= cfg.shrink;
    }
    None
}

/// Computes a quasi-Newton step for view `i` against the rest of the model.
///
/// Returns the accepted update, or `None` when the search exhausted its
/// backtracks without a strict decrease of the view loss.
pub fn update_unmixing(
    i: usize,
    params: &ModelParams,
    views: &ViewSet,
    cfg: &LineSearchConfig,
) -> Result<Option<WUpdate>> {
    let (m, _, _) = check_model(params, views)?;
    if i >= m {
        return Err(Error::InvalidParameter {
            name: "view index",
            reason: format!("index {} out of range for {} views", i, m),
        });
    }
    cfg.validate()?;
    let (_, b) = view_inputs(i, params, views);
    Ok(search_view_update(
        &params.unmixing[i],
        views.observations(i),
        &b,
        m,
        params.sigma,
        cfg,
    )
    .map(|out| WUpdate {
        unmixing: out.w,
        loss_before: out.loss_before,
        loss_after: out.loss_after,
        step: out.step,
    }))
}
