//! The shared-source model and its negative log-likelihood.
//!
//! For views `X^i`, unmixing matrices `W^i`, and per-view delays `tau^i`,
//! the aligned estimates are `Y^i = T_{-tau^i}(W^i X^i)` and the shared
//! source estimate is their average `S`. The objective is
//!
//! ```text
//! L = -n * sum_i log|W^i| + 1/(2 sigma^2) * sum_i ||Y^i - S||^2 + sum f(S)
//! ```
//!
//! with `f(u) = log cosh(u)` applied elementwise. Per-view slices of `L`
//! (constant terms dropped), relative gradients, and the diagonal Hessian
//! approximation used by the quasi-Newton step live here too.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg;
use crate::signal::{shift_rows, DelayVector, MixingMatrix, ViewSet};

/// Floor applied to Hessian coefficients to keep the 2x2 block solves sane.
pub(crate) const GAMMA_FLOOR: f64 = 1e-6;

/// Smooth surrogate density term. `Zero` switches the term off; it exists
/// for closed-form checks of the quadratic and log-det parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Contrast {
    LogCosh,
    #[allow(dead_code)] // constructed by closed-form tests only
    Zero,
}

impl Contrast {
    #[inline]
    pub(crate) fn value(self, u: f64) -> f64 {
        match self {
            // log cosh(u) = |u| + ln(1 + e^{-2|u|}) - ln 2, stable for large |u|
            Contrast::LogCosh => {
                let a = u.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
            Contrast::Zero => 0.0,
        }
    }

    #[inline]
    pub(crate) fn d1(self, u: f64) -> f64 {
        match self {
            Contrast::LogCosh => u.tanh(),
            Contrast::Zero => 0.0,
        }
    }

    #[inline]
    pub(crate) fn d2(self, u: f64) -> f64 {
        match self {
            Contrast::LogCosh => {
                let t = u.tanh();
                1.0 - t * t
            }
            Contrast::Zero => 0.0,
        }
    }
}

/// `log cosh` and its first two derivatives at `u`, overflow-free.
pub fn log_cosh_eval(u: f64) -> (f64, f64, f64) {
    (
        Contrast::LogCosh.value(u),
        Contrast::LogCosh.d1(u),
        Contrast::LogCosh.d2(u),
    )
}

/// Current model iterate: one unmixing matrix and one delay vector per view,
/// plus the shared noise scale of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub unmixing: Vec<MixingMatrix>,
    pub delays: Vec<DelayVector>,
    pub sigma: f64,
}

impl ModelParams {
    pub fn new(unmixing: Vec<MixingMatrix>, delays: Vec<DelayVector>, sigma: f64) -> Result<Self> {
        let params = ModelParams {
            unmixing,
            delays,
            sigma,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn n_views(&self) -> usize {
        self.unmixing.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.unmixing.is_empty() {
            return Err(Error::InvalidParameter {
                name: "unmixing",
                reason: "need at least one view".into(),
            });
        }
        if self.delays.len() != self.unmixing.len() {
            return Err(Error::DimensionMismatch {
                what: "delay vectors vs unmixing matrices",
                expected: self.unmixing.len(),
                got: self.delays.len(),
            });
        }
        let p = self.unmixing[0].order();
        let n = self.delays[0].n();
        for w in &self.unmixing {
            if w.order() != p {
                return Err(Error::DimensionMismatch {
                    what: "unmixing order across views",
                    expected: p,
                    got: w.order(),
                });
            }
        }
        for d in &self.delays {
            if d.len() != p {
                return Err(Error::DimensionMismatch {
                    what: "delay entries vs sources",
                    expected: p,
                    got: d.len(),
                });
            }
            if d.n() != n {
                return Err(Error::DimensionMismatch {
                    what: "delay modulus across views",
                    expected: n,
                    got: d.n(),
                });
            }
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("must be positive and finite, got {}", self.sigma),
            });
        }
        Ok(())
    }
}

/// Relative gradient and Hessian coefficients for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct GradHess {
    pub gradient: Array2<f64>,
    pub gamma: Array2<f64>,
}

pub(crate) fn check_model(params: &ModelParams, views: &ViewSet) -> Result<(usize, usize, usize)> {
    params.validate()?;
    let m = views.n_views();
    let p = views.n_signals();
    let n = views.n_samples();
    if params.unmixing.len() != m {
        return Err(Error::DimensionMismatch {
            what: "unmixing matrices vs views",
            expected: m,
            got: params.unmixing.len(),
        });
    }
    if params.unmixing[0].order() != p {
        return Err(Error::DimensionMismatch {
            what: "unmixing order vs view signals",
            expected: p,
            got: params.unmixing[0].order(),
        });
    }
    if params.delays[0].n() != n {
        return Err(Error::DimensionMismatch {
            what: "delay modulus vs view samples",
            expected: n,
            got: params.delays[0].n(),
        });
    }
    Ok((m, p, n))
}

/// `log|det W^i|`, with the singular case reported against the view index.
pub(crate) fn view_log_abs_det(w: &Array2<f64>, view: usize) -> Result<f64> {
    match linalg::log_abs_det(w) {
        Ok((logdet, _)) => Ok(logdet),
        Err(_) => Err(Error::SingularUnmixing { view }),
    }
}

pub(crate) fn compute_aligned(
    params: &ModelParams,
    views: &ViewSet,
) -> (Vec<Array2<f64>>, Array2<f64>) {
    let m = views.n_views();
    let mut aligned = Vec::with_capacity(m);
    for i in 0..m {
        let z = params.unmixing[i].array().dot(views.observations(i));
        aligned.push(shift_rows(&z, &params.delays[i].negated()));
    }
    let mean = mean_of(&aligned);
    (aligned, mean)
}

pub(crate) fn mean_of(aligned: &[Array2<f64>]) -> Array2<f64> {
    let mut sum = aligned[0].clone();
    for y in &aligned[1..] {
        sum += y;
    }
    sum / aligned.len() as f64
}

/// Sum of the aligned estimates of every view except `i`, in ascending
/// view order. Callers divide by `m - 1` where the average is needed.
pub(crate) fn others_sum(aligned: &[Array2<f64>], skip: usize) -> Array2<f64> {
    let (p, n) = aligned[0].dim();
    let mut sum = Array2::<f64>::zeros((p, n));
    for (j, y) in aligned.iter().enumerate() {
        if j != skip {
            sum += y;
        }
    }
    sum
}

/// Aligned per-view source estimates `Y^i` and their average.
pub fn aligned_sources(
    params: &ModelParams,
    views: &ViewSet,
) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
    check_model(params, views)?;
    Ok(compute_aligned(params, views))
}

/// `sum_i ||Y^i - mean||^2`, the delay-sensitive part of the objective.
pub fn quadratic_misfit(aligned: &[Array2<f64>], mean: &Array2<f64>) -> f64 {
    let mut q = 0.0;
    for y in aligned {
        for (a, b) in y.iter().zip(mean.iter()) {
            let d = a - b;
            q += d * d;
        }
    }
    q
}

/// Full objective value at the given parameters.
pub fn negative_log_likelihood(params: &ModelParams, views: &ViewSet) -> Result<f64> {
    let (_, _, n) = check_model(params, views)?;
    nll_with(params, views, Contrast::LogCosh, n)
}

pub(crate) fn nll_with(
    params: &ModelParams,
    views: &ViewSet,
    contrast: Contrast,
    n: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, w) in params.unmixing.iter().enumerate() {
        total -= n as f64 * view_log_abs_det(w.array(), i)?;
    }
    let (aligned, mean) = compute_aligned(params, views);
    total += quadratic_misfit(&aligned, &mean) / (2.0 * params.sigma * params.sigma);
    total += mean.iter().map(|&u| contrast.value(u)).sum::<f64>();
    Ok(total)
}

/// Loss slice for view `i`: the full objective minus terms constant in `W^i`.
///
/// With `Z = W^i X^i` and `B = sum_{j != i} T_{tau^i - tau^j}(W^j X^j)`,
///
/// ```text
/// L^i = -n log|W^i| + (m-1)/(2 m sigma^2) ||Z - B/(m-1)||^2 + sum f((Z + B)/m)
/// ```
pub fn view_loss(i: usize, params: &ModelParams, views: &ViewSet) -> Result<f64> {
    let (m, _, n) = check_model(params, views)?;
    check_view_index(i, m)?;
    let (z, b) = view_inputs(i, params, views);
    let logdet = view_log_abs_det(params.unmixing[i].array(), i)?;
    Ok(view_loss_parts(
        &z,
        &b,
        logdet,
        m,
        n,
        params.sigma,
        Contrast::LogCosh,
    ))
}

/// Relative gradient of the per-sample loss of view `i` at the current iterate.
pub fn relative_gradient(i: usize, params: &ModelParams, views: &ViewSet) -> Result<Array2<f64>> {
    Ok(gradient_and_hessian(i, params, views)?.gradient)
}

/// Diagonal Hessian coefficients used by the pairwise quasi-Newton solve.
pub fn hessian_coefficients(
    i: usize,
    params: &ModelParams,
    views: &ViewSet,
) -> Result<Array2<f64>> {
    Ok(gradient_and_hessian(i, params, views)?.gamma)
}

/// Gradient and Hessian coefficients in one pass.
pub fn gradient_and_hessian(i: usize, params: &ModelParams, views: &ViewSet) -> Result<GradHess> {
    let (m, _, _) = check_model(params, views)?;
    check_view_index(i, m)?;
    let (z, b) = view_inputs(i, params, views);
    let (gradient, gamma) = view_grad_gamma(&z, &b, m, params.sigma, Contrast::LogCosh);
    Ok(GradHess { gradient, gamma })
}

fn check_view_index(i: usize, m: usize) -> Result<()> {
    if i >= m {
        return Err(Error::InvalidParameter {
            name: "view index",
            reason: format!("index {} out of range for {} views", i, m),
        });
    }
    Ok(())
}

/// `(Z, B)` for view `i`: its unaligned source estimate and the sum of the
/// other views' estimates brought into its timeline.
pub(crate) fn view_inputs(
    i: usize,
    params: &ModelParams,
    views: &ViewSet,
) -> (Array2<f64>, Array2<f64>) {
    let (aligned, _) = compute_aligned(params, views);
    let z = params.unmixing[i].array().dot(views.observations(i));
    let b = shift_rows(&others_sum(&aligned, i), params.delays[i].delays());
    (z, b)
}

pub(crate) fn view_loss_parts(
    z: &Array2<f64>,
    b: &Array2<f64>,
    log_abs_det: f64,
    m: usize,
    n: usize,
    sigma: f64,
    contrast: Contrast,
) -> f64 {
    let mf = m as f64;
    let mut loss = -(n as f64) * log_abs_det;
    if m > 1 {
        let coef = (mf - 1.0) / (2.0 * mf * sigma * sigma);
        let denom = mf - 1.0;
        let mut q = 0.0;
        for (zv, bv) in z.iter().zip(b.iter()) {
            let d = zv - bv / denom;
            q += d * d;
        }
        loss += coef * q;
    }
    let mut fsum = 0.0;
    for (zv, bv) in z.iter().zip(b.iter()) {
        fsum += contrast.value((zv + bv) / mf);
    }
    loss + fsum
}

pub(crate) fn view_grad_gamma(
    z: &Array2<f64>,
    b: &Array2<f64>,
    m: usize,
    sigma: f64,
    contrast: Contrast,
) -> (Array2<f64>, Array2<f64>) {
    let (p, n) = z.dim();
    let mf = m as f64;
    let nf = n as f64;
    let quad_coef = if m > 1 {
        (mf - 1.0) / (mf * sigma * sigma)
    } else {
        0.0
    };

    // shared source estimate seen from this view's timeline
    let stilde = (z + b) / mf;

    let mut acc = Array2::<f64>::zeros((p, p));
    if m > 1 {
        let denom = mf - 1.0;
        let resid = z - &(b / denom);
        acc = resid.dot(&z.t()) * quad_coef;
    }
    let score = stilde.mapv(|u| contrast.d1(u));
    acc = acc + score.dot(&z.t()) / mf;
    let mut gradient = acc / nf;
    for a in 0..p {
        gradient[[a, a]] -= 1.0;
    }

    let mut curvature = vec![0.0; p];
    for a in 0..p {
        let mut s = 0.0;
        for t in 0..n {
            s += contrast.d2(stilde[[a, t]]);
        }
        curvature[a] = s / nf;
    }
    let mut power = vec![0.0; p];
    for bidx in 0..p {
        let mut s = 0.0;
        for t in 0..n {
            let v = z[[bidx, t]];
            s += v * v;
        }
        power[bidx] = s / nf;
    }
    let mut gamma = Array2::<f64>::zeros((p, p));
    for a in 0..p {
        let row_coef = quad_coef + curvature[a] / (mf * mf);
        for bidx in 0..p {
            gamma[[a, bidx]] = (row_coef * power[bidx]).max(GAMMA_FLOOR);
        }
    }
    (gradient, gamma)
}
