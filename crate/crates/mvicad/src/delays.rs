//! Integer delay estimation by circular cross-correlation.
//!
//! The score of a candidate delay `tau` for a row `z` against a reference is
//! the inner product of `T_{-tau}(z)` with the reference. All `n` scores come
//! from one FFT product, and the argmax is restricted to `|tau| <= tau_max`.

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::likelihood::{check_model, compute_aligned, others_sum, ModelParams};
use crate::signal::{canonicalize_delay, shift_rows, DelayVector, ViewSet};

/// Whether each source row gets its own delay or the whole view shares one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayMode {
    PerSource,
    PerView,
}

/// FFT plans and scratch for length-`n` circular correlations.
pub struct Correlator {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl Correlator {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Correlator {
            n,
            forward,
            inverse,
            scratch: vec![Complex::new(0.0, 0.0); scratch_len],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// All circular correlation scores: `out[k] = sum_t z[(t + k) % n] * r[t]`,
    /// with negative delays wrapped to the top indices.
    pub(crate) fn correlate(&mut self, z: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.n || reference.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "correlation input length",
                expected: self.n,
                got: if z.len() != self.n {
                    z.len()
                } else {
                    reference.len()
                },
            });
        }
        let mut zf: Vec<Complex<f64>> = z.iter().map(|&v| Complex::new(v, 0.0)).collect();
        let mut rf: Vec<Complex<f64>> =
            reference.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process_with_scratch(&mut zf, &mut self.scratch);
        self.forward.process_with_scratch(&mut rf, &mut self.scratch);
        for (a, b) in zf.iter_mut().zip(&rf) {
            *a *= b.conj();
        }
        self.inverse.process_with_scratch(&mut zf, &mut self.scratch);
        let scale = 1.0 / self.n as f64;
        Ok(zf.into_iter().map(|c| c.re * scale).collect())
    }
}

impl std::fmt::Debug for Correlator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Correlator").field("n", &self.n).finish()
    }
}

/// Picks the delay in the scan order `0, -1, +1, -2, +2, ...`, keeping the
/// first strict maximum. `scores` is indexed like `Correlator::correlate`
/// output.
pub(crate) fn select_delay(scores: &[f64], tau_max: i64) -> i64 {
    let n = scores.len() as i64;
    let at = |tau: i64| scores[tau.rem_euclid(n) as usize];
    let mut best_tau = 0i64;
    let mut best = at(0);
    for k in 1..=tau_max {
        for tau in [-k, k] {
            let s = at(tau);
            if s > best {
                best = s;
                best_tau = tau;
            }
        }
    }
    best_tau
}

/// Like `select_delay`, but may negate the row: picks the `(tau, flip)`
/// pair maximizing `sign * score(tau)` in the same scan order, trying the
/// unflipped candidate first so exact ties keep the row as it is.
pub(crate) fn select_signed(scores: &[f64], tau_max: i64) -> (i64, bool) {
    let n = scores.len() as i64;
    let at = |tau: i64| scores[tau.rem_euclid(n) as usize];
    let mut best_tau = 0i64;
    let mut best = at(0);
    let mut flip = false;
    if -at(0) > best {
        best = -at(0);
        flip = true;
    }
    for k in 1..=tau_max {
        for tau in [-k, k] {
            let s = at(tau);
            if s > best {
                best = s;
                best_tau = tau;
                flip = false;
            }
            if -s > best {
                best = -s;
                best_tau = tau;
                flip = true;
            }
        }
    }
    (best_tau, flip)
}

pub(crate) fn check_window(tau_max: i64, n: usize) -> Result<()> {
    if tau_max < 0 || 2 * tau_max >= n as i64 {
        return Err(Error::InvalidParameter {
            name: "tau_max",
            reason: format!("must satisfy 0 <= tau_max < n/2 = {}/2", n),
        });
    }
    Ok(())
}

/// The delay in `[-tau_max, tau_max]` whose removal best aligns `z` with the
/// reference, i.e. the argmax of `<T_{-tau}(z), reference>`. Ties resolve to
/// the candidate closest to zero, negative first.
pub fn best_delay(
    z: &[f64],
    reference: &[f64],
    tau_max: i64,
    corr: &mut Correlator,
) -> Result<i64> {
    check_window(tau_max, corr.n)?;
    let scores = corr.correlate(z, reference)?;
    Ok(select_delay(&scores, tau_max))
}

/// Re-estimates the delays of view `i` against the other views.
///
/// `z` is the view's raw source estimate and `others` the sum of the other
/// views' aligned estimates. Each row is scored against the corresponding
/// row of `others / (m - 1)`; per-view mode sums the score curves over rows
/// first so every row moves together.
pub(crate) fn update_view_delays(
    z: &Array2<f64>,
    others: &Array2<f64>,
    m: usize,
    tau_max: i64,
    mode: DelayMode,
    corr: &mut Correlator,
) -> Result<Vec<i64>> {
    check_window(tau_max, corr.n)?;
    let p = z.nrows();
    let denom = (m - 1) as f64;
    let mut curves = Vec::with_capacity(p);
    for j in 0..p {
        let z_row = z.row(j);
        let reference: Vec<f64> = others.row(j).iter().map(|&v| v / denom).collect();
        curves.push(corr.correlate(z_row.as_slice().expect("row is contiguous"), &reference)?);
    }
    match mode {
        DelayMode::PerSource => Ok(curves
            .iter()
            .map(|scores| select_delay(scores, tau_max))
            .collect()),
        DelayMode::PerView => {
            let n = corr.n;
            let mut total = vec![0.0; n];
            for scores in &curves {
                for (acc, s) in total.iter_mut().zip(scores) {
                    *acc += s;
                }
            }
            let shared = select_delay(&total, tau_max);
            Ok(vec![shared; p])
        }
    }
}

/// A view's joint discrete update: a row permutation, per-row sign flips
/// and per-row delays. `perm[j]` is the row index that current row `j`
/// moves to; `delays[j]` and `flips[j]` travel with the row.
pub(crate) struct AlignedUpdate {
    pub(crate) perm: Vec<usize>,
    pub(crate) delays: Vec<i64>,
    pub(crate) flips: Vec<bool>,
}

impl AlignedUpdate {
    pub(crate) fn permuted(&self) -> bool {
        self.perm.iter().enumerate().any(|(j, &k)| j != k)
    }
}

/// Rows beyond this count skip the permutation search; the subset DP in
/// `best_assignment` is O(p * 2^p).
const ASSIGN_MAX_ROWS: usize = 16;

/// Exact maximum-weight assignment of rows to reference rows. `score[j][k]`
/// is the gain of matching row `j` to reference row `k`; returns the argmax
/// permutation. Deterministic: ties keep the lowest column for the earliest
/// row.
fn best_assignment(score: &[Vec<f64>]) -> Vec<usize> {
    let p = score.len();
    let full: usize = (1 << p) - 1;
    let mut dp = vec![f64::NEG_INFINITY; full + 1];
    let mut choice = vec![usize::MAX; full + 1];
    dp[0] = 0.0;
    for mask in 0..full {
        if dp[mask] == f64::NEG_INFINITY {
            continue;
        }
        // dp[mask] assigns rows 0..popcount(mask) to the columns in mask
        let j = (mask as u32).count_ones() as usize;
        for k in 0..p {
            if mask & (1 << k) != 0 {
                continue;
            }
            let cand = dp[mask] + score[j][k];
            let next = mask | (1 << k);
            if cand > dp[next] {
                dp[next] = cand;
                choice[next] = k;
            }
        }
    }
    let mut perm = vec![0usize; p];
    let mut mask = full;
    for j in (0..p).rev() {
        let k = choice[mask];
        perm[j] = k;
        mask &= !(1 << k);
    }
    perm
}

/// `update_view_delays` extended with per-row sign flips and a row
/// permutation. Reordering or negating rows of `W^i` leaves the
/// log-determinant magnitude and the even contrast alone, so minimizing the
/// quadratic misfit jointly over (permutation, sign, shift) is still an
/// exact descent step on it. Without the permutation a view whose rows
/// converged in a different source order than the rest can never rejoin the
/// consensus: each row keeps chasing the wrong reference row, and no
/// sequence of gradient steps on `W^i` can swap two rows without passing
/// through a singular matrix. Views with more than `ASSIGN_MAX_ROWS` rows
/// keep the identity pairing and only search sign and shift.
pub(crate) fn update_view_delays_aligned(
    z: &Array2<f64>,
    others: &Array2<f64>,
    m: usize,
    tau_max: i64,
    mode: DelayMode,
    corr: &mut Correlator,
) -> Result<AlignedUpdate> {
    check_window(tau_max, corr.n)?;
    let p = z.nrows();
    let n = corr.n;
    let denom = (m - 1) as f64;
    let search_perm = p <= ASSIGN_MAX_ROWS;
    // curves[j][k]: correlation of row j against reference row k
    let mut curves: Vec<Vec<Vec<f64>>> = Vec::with_capacity(p);
    let references: Vec<Vec<f64>> = (0..p)
        .map(|k| others.row(k).iter().map(|&v| v / denom).collect())
        .collect();
    for j in 0..p {
        let z_row = z.row(j);
        let z_slice = z_row.as_slice().expect("row is contiguous");
        let mut row_curves = Vec::with_capacity(p);
        for (k, reference) in references.iter().enumerate() {
            if search_perm || k == j {
                row_curves.push(corr.correlate(z_slice, reference)?);
            } else {
                row_curves.push(Vec::new());
            }
        }
        curves.push(row_curves);
    }
    let identity: Vec<usize> = (0..p).collect();
    match mode {
        DelayMode::PerSource => {
            let perm = if search_perm {
                // match on peak strength; the shift itself is re-read from
                // the winning pair's curve afterwards
                let score: Vec<Vec<f64>> = (0..p)
                    .map(|j| {
                        (0..p)
                            .map(|k| {
                                let (tau, flip) = select_signed(&curves[j][k], tau_max);
                                let s = curves[j][k][tau.rem_euclid(n as i64) as usize];
                                if flip {
                                    -s
                                } else {
                                    s
                                }
                            })
                            .collect()
                    })
                    .collect();
                best_assignment(&score)
            } else {
                identity
            };
            let mut delays = Vec::with_capacity(p);
            let mut flips = Vec::with_capacity(p);
            for (j, &k) in perm.iter().enumerate() {
                let (tau, flip) = select_signed(&curves[j][k], tau_max);
                delays.push(tau);
                flips.push(flip);
            }
            Ok(AlignedUpdate { perm, delays, flips })
        }
        DelayMode::PerView => {
            // one shared shift; rows may still flip and permute. Scored in
            // the same scan order as select_delay so ties keep the shift
            // closest to zero, negative first.
            let mut best_val = f64::NEG_INFINITY;
            let mut best_tau = 0i64;
            let mut best_perm = identity.clone();
            let mut scan: Vec<i64> = vec![0];
            for k in 1..=tau_max {
                scan.push(-k);
                scan.push(k);
            }
            for &tau in &scan {
                let idx = tau.rem_euclid(n as i64) as usize;
                let (val, perm) = if search_perm {
                    let score: Vec<Vec<f64>> = (0..p)
                        .map(|j| (0..p).map(|k| curves[j][k][idx].abs()).collect())
                        .collect();
                    let perm = best_assignment(&score);
                    let val = perm
                        .iter()
                        .enumerate()
                        .map(|(j, &k)| score[j][k])
                        .sum::<f64>();
                    (val, perm)
                } else {
                    let val = (0..p).map(|j| curves[j][j][idx].abs()).sum::<f64>();
                    (val, identity.clone())
                };
                if val > best_val {
                    best_val = val;
                    best_tau = tau;
                    best_perm = perm;
                }
            }
            let idx = best_tau.rem_euclid(n as i64) as usize;
            let flips = best_perm
                .iter()
                .enumerate()
                .map(|(j, &k)| curves[j][k][idx] < 0.0)
                .collect();
            Ok(AlignedUpdate {
                perm: best_perm,
                delays: vec![best_tau; p],
                flips,
            })
        }
    }
}

/// Re-estimates the delay vector of view `i` against the rest of the model,
/// searching `[-tau_max, tau_max]`. The returned vector replaces
/// `params.delays[i]`; the model itself is not touched.
pub fn update_delays(
    i: usize,
    params: &ModelParams,
    views: &ViewSet,
    tau_max: i64,
    mode: DelayMode,
) -> Result<DelayVector> {
    let (m, _, n) = check_model(params, views)?;
    if i >= m {
        return Err(Error::InvalidParameter {
            name: "view index",
            reason: format!("index {} out of range for {} views", i, m),
        });
    }
    if m < 2 {
        return Err(Error::InvalidParameter {
            name: "views",
            reason: "delay estimation needs at least two views".into(),
        });
    }
    check_window(tau_max, n)?;
    let (aligned, _) = compute_aligned(params, views);
    let others = others_sum(&aligned, i);
    // undo the current alignment to get the raw estimate back, bit for bit
    let z = shift_rows(&aligned[i], params.delays[i].delays());
    let mut corr = Correlator::new(n);
    let new_delays = update_view_delays(&z, &others, m, tau_max, mode, &mut corr)?;
    DelayVector::new(new_delays, n, tau_max)
}

pub(crate) struct Recenter {
    #[allow(dead_code)] // inspected by tests
    pub(crate) offsets: Vec<i64>,
    pub(crate) changed: bool,
}

/// Rounds to the nearest integer with halves going down, so that the
/// centered mean `sum/count - result` lands in (-1/2, 1/2].
fn rounded_mean(sum: i64, count: i64) -> i64 {
    (2 * sum + count - 1).div_euclid(2 * count)
}

/// Shrinks a gauge offset toward zero until subtracting it keeps every
/// delay inside its bound. An offset of zero always fits.
fn admissible_offset(mut c: i64, taus: &[(i64, i64)], n: usize) -> i64 {
    while c != 0
        && taus
            .iter()
            .any(|&(tau, bound)| canonicalize_delay(tau - c, n).abs() > bound)
    {
        c -= c.signum();
    }
    c
}

/// Removes the common part of the delays: subtracts the rounded per-source
/// mean across views (one shared offset in per-view mode) and shifts the
/// aligned cache to match. The model this produces is exactly equivalent;
/// only the delay gauge moves.
///
/// An offset is shrunk toward zero when centering would push a delay past
/// its bound: the delay window both stores and searches `[-tau_max,
/// tau_max]`, and a delay parked outside it would never be re-reachable by
/// the update, leaving the fit oscillating instead of settling.
pub(crate) fn recenter_delays(
    delays: &mut Vec<DelayVector>,
    aligned: &mut [Array2<f64>],
    mode: DelayMode,
) -> Result<Recenter> {
    let m = delays.len() as i64;
    let p = delays[0].delays().len();
    let n = aligned[0].ncols();

    let mut offsets = Vec::with_capacity(p);
    match mode {
        DelayMode::PerSource => {
            for j in 0..p {
                let sum: i64 = delays.iter().map(|d| d.delays()[j]).sum();
                let c = rounded_mean(sum, m);
                let pairs: Vec<(i64, i64)> = delays
                    .iter()
                    .map(|d| (d.delays()[j], d.tau_max()))
                    .collect();
                offsets.push(admissible_offset(c, &pairs, n));
            }
        }
        DelayMode::PerView => {
            // one offset for the whole model keeps each view's delays equal
            // across sources
            let sum: i64 = delays.iter().flat_map(|d| d.delays().iter()).sum();
            let c = rounded_mean(sum, m * p as i64);
            let pairs: Vec<(i64, i64)> = delays
                .iter()
                .flat_map(|d| {
                    let bound = d.tau_max();
                    d.delays().iter().map(move |&tau| (tau, bound))
                })
                .collect();
            let c = admissible_offset(c, &pairs, n);
            offsets = vec![c; p];
        }
    }
    if offsets.iter().all(|&c| c == 0) {
        return Ok(Recenter {
            offsets,
            changed: false,
        });
    }

    let mut recentred = Vec::with_capacity(delays.len());
    for d in delays.iter() {
        let moved: Vec<i64> = d
            .delays()
            .iter()
            .zip(&offsets)
            .map(|(&tau, &c)| canonicalize_delay(tau - c, n))
            .collect();
        recentred.push(DelayVector::new(moved, n, d.tau_max())?);
    }
    *delays = recentred;
    for a in aligned.iter_mut() {
        *a = shift_rows(a, &offsets);
    }
    Ok(Recenter {
        offsets,
        changed: true,
    })
}
