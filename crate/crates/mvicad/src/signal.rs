//! Core data types: multichannel signals, per-row circular delays, square
//! mixing/unmixing matrices, and the set of observed views.
//!
//! The delay convention: a positive delay rolls a row to the right, so the
//! shifted row at column `t` holds the input value at column `(t - tau) mod n`.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg;

/// A `signals x samples` matrix of finite values. Rows are channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix(Array2<f64>);

impl SignalMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (p, n) = data.dim();
        if p < 1 {
            return Err(Error::InvalidParameter {
                name: "signals",
                reason: "need at least one row".into(),
            });
        }
        if n < 2 {
            return Err(Error::InvalidParameter {
                name: "samples",
                reason: "need at least two columns".into(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "signal matrix".into(),
            });
        }
        Ok(SignalMatrix(data))
    }

    pub fn n_signals(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.0.ncols()
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }
}

/// Maps an arbitrary integer delay to its representative in `(-n/2, n/2]`.
pub fn canonicalize_delay(delay: i64, n: usize) -> i64 {
    let n = n as i64;
    debug_assert!(n >= 1);
    let r = delay.rem_euclid(n);
    if 2 * r > n {
        r - n
    } else {
        r
    }
}

/// Per-row integer circular delays for signals of length `n`.
///
/// Entries are stored canonicalized to `(-n/2, n/2]` and bounded by
/// `tau_max` in magnitude.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayVector {
    delays: Vec<i64>,
    n: usize,
    tau_max: i64,
}

impl DelayVector {
    /// Builds a delay vector, canonicalizing entries and checking the bound.
    pub fn new(delays: Vec<i64>, n: usize, tau_max: i64) -> Result<Self> {
        if delays.is_empty() {
            return Err(Error::InvalidParameter {
                name: "delays",
                reason: "need at least one entry".into(),
            });
        }
        if n < 2 {
            return Err(Error::InvalidParameter {
                name: "n",
                reason: "signal length must be at least two".into(),
            });
        }
        if tau_max < 0 || 2 * tau_max > n as i64 {
            return Err(Error::InvalidParameter {
                name: "tau_max",
                reason: format!("must satisfy 0 <= tau_max <= n/2 with n = {}", n),
            });
        }
        let delays: Vec<i64> = delays.into_iter().map(|d| canonicalize_delay(d, n)).collect();
        for &d in &delays {
            if d.abs() > tau_max {
                return Err(Error::InvalidParameter {
                    name: "delays",
                    reason: format!("entry {} exceeds tau_max {}", d, tau_max),
                });
            }
        }
        Ok(DelayVector { delays, n, tau_max })
    }

    pub fn zeros(p: usize, n: usize, tau_max: i64) -> Result<Self> {
        DelayVector::new(vec![0; p], n, tau_max)
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau_max(&self) -> i64 {
        self.tau_max
    }

    pub fn delays(&self) -> &[i64] {
        &self.delays
    }

    pub fn get(&self, j: usize) -> i64 {
        self.delays[j]
    }

    /// The vector of negated delays (inverse shift).
    pub fn negated(&self) -> Vec<i64> {
        self.delays.iter().map(|d| -d).collect()
    }
}

/// Shifts each row of `x` circularly by the matching entry of `delays`.
/// Output column `t` of row `j` holds input column `(t - delays[j]) mod n`.
pub(crate) fn shift_rows(x: &Array2<f64>, delays: &[i64]) -> Array2<f64> {
    let (p, n) = x.dim();
    debug_assert_eq!(p, delays.len());
    let mut out = Array2::<f64>::zeros((p, n));
    for j in 0..p {
        let src = x.row(j);
        let src = src.as_slice().expect("row-major layout");
        let mut dst = out.row_mut(j);
        let dst = dst.as_slice_mut().expect("row-major layout");
        let off = delays[j].rem_euclid(n as i64) as usize;
        dst[off..].copy_from_slice(&src[..n - off]);
        dst[..off].copy_from_slice(&src[n - off..]);
    }
    out
}

/// Applies the per-row circular delay operator to a signal matrix.
pub fn circular_shift(s: &SignalMatrix, tau: &DelayVector) -> Result<SignalMatrix> {
    if tau.len() != s.n_signals() {
        return Err(Error::DimensionMismatch {
            what: "delay entries vs signal rows",
            expected: s.n_signals(),
            got: tau.len(),
        });
    }
    if tau.n() != s.n_samples() {
        return Err(Error::DimensionMismatch {
            what: "delay modulus vs signal columns",
            expected: s.n_samples(),
            got: tau.n(),
        });
    }
    Ok(SignalMatrix(shift_rows(s.array(), tau.delays())))
}

/// Whether a square matrix acts as a mixing (sources to observations) or
/// unmixing (observations to sources) map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixRole {
    Mixing,
    Unmixing,
}

/// An invertible square matrix tagged with its role.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    data: Array2<f64>,
    role: MatrixRole,
}

impl MixingMatrix {
    pub fn new(data: Array2<f64>, role: MatrixRole) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c {
            return Err(Error::DimensionMismatch {
                what: "mixing matrix rows vs columns",
                expected: r,
                got: c,
            });
        }
        if r == 0 {
            return Err(Error::InvalidParameter {
                name: "mixing matrix",
                reason: "must be at least 1x1".into(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "mixing matrix".into(),
            });
        }
        // |det| > 0 is part of the contract; LU errors on an exact zero pivot.
        linalg::log_abs_det(&data)?;
        Ok(MixingMatrix { data, role })
    }

    pub fn order(&self) -> usize {
        self.data.nrows()
    }

    pub fn role(&self) -> MatrixRole {
        self.role
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }
}

/// Ground-truth attachment for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTruth {
    pub mixing: MixingMatrix,
    pub delays: DelayVector,
}

/// One observed view: a signal matrix, optionally with its generation truth.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub observations: SignalMatrix,
    pub truth: Option<ViewTruth>,
}

/// The full set of observed views, shape-checked against each other.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    views: Vec<View>,
}

impl ViewSet {
    pub fn new(views: Vec<View>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::InvalidParameter {
                name: "views",
                reason: "need at least one view".into(),
            });
        }
        let p = views[0].observations.n_signals();
        let n = views[0].observations.n_samples();
        for (i, view) in views.iter().enumerate() {
            if view.observations.n_signals() != p {
                return Err(Error::DimensionMismatch {
                    what: "signal count across views",
                    expected: p,
                    got: view.observations.n_signals(),
                });
            }
            if view.observations.n_samples() != n {
                return Err(Error::DimensionMismatch {
                    what: "sample count across views",
                    expected: n,
                    got: view.observations.n_samples(),
                });
            }
            if let Some(truth) = &view.truth {
                if truth.mixing.order() != p {
                    return Err(Error::DimensionMismatch {
                        what: "truth mixing order",
                        expected: p,
                        got: truth.mixing.order(),
                    });
                }
                if truth.delays.len() != p || truth.delays.n() != n {
                    return Err(Error::DimensionMismatch {
                        what: "truth delay shape",
                        expected: p,
                        got: truth.delays.len(),
                    });
                }
            }
            let _ = i;
        }
        Ok(ViewSet { views })
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_signals(&self) -> usize {
        self.views[0].observations.n_signals()
    }

    pub fn n_samples(&self) -> usize {
        self.views[0].observations.n_samples()
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn view(&self, i: usize) -> &View {
        &self.views[i]
    }

    pub fn observations(&self, i: usize) -> &Array2<f64> {
        self.views[i].observations.array()
    }
}
