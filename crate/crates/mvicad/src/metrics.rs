//! Recovery quality measures: the Amari index for unmixing accuracy,
//! source matching across sign, permutation and shift, and a regression
//! report for delay recovery.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::delays::{check_window, Correlator};
use crate::error::{Error, Result};
use crate::signal::DelayVector;

/// Amari index of the product `P = W A`: zero exactly when `P` is a scaled
/// permutation, i.e. when `W` inverts `A` up to source order and scale.
///
/// ```text
/// (1/2p) [ sum_rows (sum_j |P_ij| / max_j |P_ij| - 1)
///        + sum_cols (sum_i |P_ij| / max_i |P_ij| - 1) ]
/// ```
///
/// A row or column of zeros makes the index infinite.
pub fn amari_distance(w: &Array2<f64>, a: &Array2<f64>) -> Result<f64> {
    let p = w.nrows();
    if w.ncols() != p || a.nrows() != p || a.ncols() != p {
        return Err(Error::DimensionMismatch {
            what: "amari_distance operands",
            expected: p,
            got: if w.ncols() != p { w.ncols() } else { a.nrows() },
        });
    }
    let prod = w.dot(a);
    if prod.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "unmixing-mixing product".into(),
        });
    }
    let abs = prod.mapv(f64::abs);
    let mut total = 0.0;
    for row in abs.rows() {
        let sum: f64 = row.sum();
        let max = row.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += sum / max - 1.0;
    }
    for col in abs.columns() {
        let sum: f64 = col.sum();
        let max = col.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += sum / max - 1.0;
    }
    Ok(total / (2.0 * p as f64))
}

/// How estimated source rows line up with reference rows.
///
/// Indexed by reference row: `perm[k]` is the estimated row matched to
/// reference `k`, which looks like `signs[k] * T_{lags[k]}(reference_k)`
/// with normalized correlation `scores[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationMatch {
    pub perm: Vec<usize>,
    pub signs: Vec<f64>,
    pub lags: Vec<i64>,
    pub scores: Vec<f64>,
}

/// Scans `|curve|` over the delay window in the order `0, -1, +1, ...` and
/// returns the first strict maximum with its signed value.
fn peak_in_window(curve: &[f64], tau_max: i64) -> (i64, f64) {
    let n = curve.len() as i64;
    let at = |tau: i64| curve[tau.rem_euclid(n) as usize];
    let mut best_tau = 0i64;
    let mut best = at(0).abs();
    for k in 1..=tau_max {
        for tau in [-k, k] {
            let v = at(tau).abs();
            if v > best {
                best = v;
                best_tau = tau;
            }
        }
    }
    (best_tau, at(best_tau))
}

/// Pairs estimated rows with reference rows greedily, strongest normalized
/// circular correlation first, allowing shifts up to `tau_max` and sign
/// flips.
pub fn match_permutation(
    estimated: &Array2<f64>,
    reference: &Array2<f64>,
    tau_max: i64,
) -> Result<PermutationMatch> {
    let (p, n) = reference.dim();
    if estimated.dim() != (p, n) {
        return Err(Error::DimensionMismatch {
            what: "estimated rows vs reference",
            expected: p * n,
            got: estimated.nrows() * estimated.ncols(),
        });
    }
    check_window(tau_max, n)?;
    let norm = |m: &Array2<f64>, j: usize| -> f64 {
        m.row(j).iter().map(|v| v * v).sum::<f64>().sqrt()
    };

    let mut corr = Correlator::new(n);
    struct Candidate {
        score: f64,
        est: usize,
        reference: usize,
        lag: i64,
        sign: f64,
    }
    let mut candidates = Vec::with_capacity(p * p);
    for e in 0..p {
        let ne = norm(estimated, e);
        for r in 0..p {
            let nr = norm(reference, r);
            let curve = corr.correlate(
                estimated.row(e).as_slice().expect("row is contiguous"),
                reference.row(r).as_slice().expect("row is contiguous"),
            )?;
            let (lag, value) = peak_in_window(&curve, tau_max);
            let scale = ne * nr;
            let score = if scale > 0.0 { value.abs() / scale } else { 0.0 };
            candidates.push(Candidate {
                score,
                est: e,
                reference: r,
                lag,
                sign: if value < 0.0 { -1.0 } else { 1.0 },
            });
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.reference.cmp(&b.reference))
            .then(a.est.cmp(&b.est))
    });

    let mut perm = vec![usize::MAX; p];
    let mut signs = vec![1.0; p];
    let mut lags = vec![0i64; p];
    let mut scores = vec![0.0; p];
    let mut est_used = vec![false; p];
    let mut ref_used = vec![false; p];
    for c in candidates {
        if est_used[c.est] || ref_used[c.reference] {
            continue;
        }
        est_used[c.est] = true;
        ref_used[c.reference] = true;
        perm[c.reference] = c.est;
        signs[c.reference] = c.sign;
        lags[c.reference] = c.lag;
        scores[c.reference] = c.score;
    }
    Ok(PermutationMatch {
        perm,
        signs,
        lags,
        scores,
    })
}

/// Permutation-test controls for the delay regression.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationTest {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for PermutationTest {
    fn default() -> Self {
        PermutationTest {
            resamples: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayRegression {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Fraction of label shuffles whose absolute correlation reaches the
    /// observed one.
    pub p_value: f64,
}

/// Centered true/estimated delay pairs and their least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayReport {
    /// `(true, estimated)` after removing each source's mean across views.
    pub pairs: Vec<(f64, f64)>,
    /// `None` when either coordinate has no variance left.
    pub regression: Option<DelayRegression>,
}

fn pearson(pairs: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = (sxy * sxy) / (sxx * syy);
    Some((slope, intercept, r2))
}

/// Compares estimated per-view delays against the truth, after matching
/// sources. `perm[k]` names the estimated source for true source `k`.
///
/// Both delay sets carry an arbitrary per-source constant (any common shift
/// moves between the source and the delays), so each source's delays are
/// centered by their real mean across views before pairing. The p-value
/// shuffles the estimated values within the pairing.
pub fn delay_recovery_report(
    estimated: &[DelayVector],
    truth: &[DelayVector],
    perm: &[usize],
    test: &PermutationTest,
) -> Result<DelayReport> {
    let m = truth.len();
    if m == 0 || estimated.len() != m {
        return Err(Error::DimensionMismatch {
            what: "estimated vs true view count",
            expected: m,
            got: estimated.len(),
        });
    }
    let p = truth[0].delays().len();
    if perm.len() != p {
        return Err(Error::DimensionMismatch {
            what: "source matching",
            expected: p,
            got: perm.len(),
        });
    }
    let mut seen = vec![false; p];
    for &e in perm {
        if e >= p || seen[e] {
            return Err(Error::InvalidParameter {
                name: "perm",
                reason: "must be a permutation of the source indices".into(),
            });
        }
        seen[e] = true;
    }
    for d in truth.iter().chain(estimated.iter()) {
        if d.delays().len() != p {
            return Err(Error::DimensionMismatch {
                what: "delay vector length",
                expected: p,
                got: d.delays().len(),
            });
        }
    }

    let mut pairs = Vec::with_capacity(p * m);
    for k in 0..p {
        let e = perm[k];
        let true_mean =
            truth.iter().map(|d| d.delays()[k] as f64).sum::<f64>() / m as f64;
        let est_mean =
            estimated.iter().map(|d| d.delays()[e] as f64).sum::<f64>() / m as f64;
        for i in 0..m {
            pairs.push((
                truth[i].delays()[k] as f64 - true_mean,
                estimated[i].delays()[e] as f64 - est_mean,
            ));
        }
    }

    let regression = pearson(&pairs).map(|(slope, intercept, r_squared)| {
        let observed = r_squared.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(test.seed);
        let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let mut hits = 0usize;
        let mut shuffled = vec![(0.0, 0.0); pairs.len()];
        for _ in 0..test.resamples {
            ys.shuffle(&mut rng);
            for (slot, (&x, &y)) in shuffled.iter_mut().zip(xs.iter().zip(ys.iter())) {
                *slot = (x, y);
            }
            if let Some((_, _, r2)) = pearson(&shuffled) {
                if r2.sqrt() >= observed {
                    hits += 1;
                }
            }
        }
        DelayRegression {
            slope,
            intercept,
            r_squared,
            p_value: hits as f64 / test.resamples as f64,
        }
    });

    Ok(DelayReport { pairs, regression })
}
