//! On-disk dataset layout: a directory holding `manifest.json` plus one raw
//! binary file per array. Floats are 64-bit little-endian, row-major
//! (source-major, time-minor); delay vectors are 64-bit little-endian
//! signed integers. The round trip is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use mvicad::{
    DelayVector, GroundTruth, MatrixRole, MixingMatrix, SignalMatrix, View, ViewSet, ViewTruth,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f64le";

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("missing file: {path}")]
    MissingFile { path: PathBuf },

    #[error("size mismatch in {path}: expected {expected} bytes, got {got}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        got: u64,
    },

    #[error("non-finite value in {path} at element {index}")]
    NonFinite { path: PathBuf, index: usize },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Model(#[from] mvicad::Error),
}

/// Index of a dataset directory. Paths are file names relative to the
/// directory holding the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub dtype: String,
    /// One observation file per view, each p*n*8 bytes.
    pub views: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthFiles>,
    #[serde(default)]
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFiles {
    /// Shared sources, p*n*8 bytes.
    pub sources: String,
    /// Per-view mixing matrices, p*p*8 bytes each.
    pub mixing: Vec<String>,
    /// Per-view delay vectors, p i64 values each.
    pub delays: Vec<String>,
    /// Per-view pre-mixing noise, p*n*8 bytes each.
    pub noise: Vec<String>,
    /// Bound the stored delays were drawn under.
    pub tau_max: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Free-form record of how the data was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.into(),
        source,
    }
}

pub fn write_f64_file<I>(path: &Path, values: I) -> Result<()>
where
    I: IntoIterator<Item = f64>,
{
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| io_err(path, e))
}

pub fn write_i64_file<I>(path: &Path, values: I) -> Result<()>
where
    I: IntoIterator<Item = i64>,
{
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| io_err(path, e))
}

fn read_sized(path: &Path, expected: u64) -> Result<Vec<u8>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(DatasetError::MissingFile { path: path.into() })
        }
        Err(e) => return Err(io_err(path, e)),
    };
    if bytes.len() as u64 != expected {
        return Err(DatasetError::SizeMismatch {
            path: path.into(),
            expected,
            got: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

/// Reads exactly `count` finite f64 values.
pub fn read_f64_file(path: &Path, count: usize) -> Result<Vec<f64>> {
    let bytes = read_sized(path, count as u64 * 8)?;
    let mut out = Vec::with_capacity(count);
    for (index, chunk) in bytes.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(DatasetError::NonFinite {
                path: path.into(),
                index,
            });
        }
        out.push(v);
    }
    Ok(out)
}

pub fn read_i64_file(path: &Path, count: usize) -> Result<Vec<i64>> {
    let bytes = read_sized(path, count as u64 * 8)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|chunk| i64::from_le_bytes(chunk.try_into().unwrap()))
        .collect())
}

fn matrix_values(a: &Array2<f64>) -> impl Iterator<Item = f64> + '_ {
    a.iter().copied()
}

/// Writes `views` (and the truth behind them, when given) into `dir`,
/// creating it if needed, and returns the manifest that was stored as
/// `manifest.json`.
pub fn write_dataset(
    dir: &Path,
    views: &ViewSet,
    truth: Option<&GroundTruth>,
    metadata: Metadata,
) -> Result<DatasetManifest> {
    let m = views.n_views();
    let p = views.n_signals();
    let n = views.n_samples();
    if let Some(gt) = truth {
        if gt.mixing.len() != m || gt.delays.len() != m || gt.noise.len() != m {
            return Err(DatasetError::Manifest(format!(
                "ground truth covers {} views, dataset has {}",
                gt.mixing.len(),
                m
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let mut view_files = Vec::with_capacity(m);
    for i in 0..m {
        let name = format!("view_{:03}.f64", i);
        write_f64_file(&dir.join(&name), matrix_values(views.observations(i)))?;
        view_files.push(name);
    }

    let ground_truth = match truth {
        None => None,
        Some(gt) => {
            let sources = "sources.f64".to_string();
            write_f64_file(&dir.join(&sources), matrix_values(gt.sources.array()))?;
            let mut mixing = Vec::with_capacity(m);
            let mut delays = Vec::with_capacity(m);
            let mut noise = Vec::with_capacity(m);
            for i in 0..m {
                let mix_name = format!("mixing_{:03}.f64", i);
                write_f64_file(&dir.join(&mix_name), matrix_values(gt.mixing[i].array()))?;
                mixing.push(mix_name);
                let delay_name = format!("delays_{:03}.i64", i);
                write_i64_file(&dir.join(&delay_name), gt.delays[i].delays().to_vec())?;
                delays.push(delay_name);
                let noise_name = format!("noise_{:03}.f64", i);
                write_f64_file(&dir.join(&noise_name), matrix_values(gt.noise[i].array()))?;
                noise.push(noise_name);
            }
            let tau_max = gt.delays.iter().map(|d| d.tau_max()).max().unwrap_or(0);
            Some(GroundTruthFiles {
                sources,
                mixing,
                delays,
                noise,
                tau_max,
            })
        }
    };

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        m,
        p,
        n,
        dtype: DTYPE.to_string(),
        views: view_files,
        ground_truth,
        metadata,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DatasetError::Manifest(e.to_string()))?;
    let path = dir.join("manifest.json");
    fs::write(&path, text.as_bytes()).map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

fn validate_manifest(man: &DatasetManifest) -> Result<()> {
    if man.format_version != FORMAT_VERSION {
        return Err(DatasetError::Manifest(format!(
            "unsupported format_version {}, expected {}",
            man.format_version, FORMAT_VERSION
        )));
    }
    if man.dtype != DTYPE {
        return Err(DatasetError::Manifest(format!(
            "unsupported dtype {:?}, expected {:?}",
            man.dtype, DTYPE
        )));
    }
    if man.m < 1 {
        return Err(DatasetError::Manifest("m must be at least 1".into()));
    }
    if man.p < 1 || man.n < 1 {
        return Err(DatasetError::Manifest(format!(
            "empty array shape {}x{}",
            man.p, man.n
        )));
    }
    if man.views.len() != man.m {
        return Err(DatasetError::Manifest(format!(
            "manifest lists {} view files for m={}",
            man.views.len(),
            man.m
        )));
    }
    if let Some(gt) = &man.ground_truth {
        if gt.mixing.len() != man.m || gt.delays.len() != man.m || gt.noise.len() != man.m {
            return Err(DatasetError::Manifest(
                "ground truth file lists must have one entry per view".into(),
            ));
        }
        if gt.tau_max < 0 {
            return Err(DatasetError::Manifest(format!(
                "tau_max must be non-negative, got {}",
                gt.tau_max
            )));
        }
    }
    Ok(())
}

fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let values = read_f64_file(path, rows * cols)?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("shape matches read length"))
}

/// Inverse of [`write_dataset`]. The returned views carry per-view truth
/// exactly when the manifest references ground-truth files.
pub fn read_dataset(dir: &Path) -> Result<(ViewSet, Option<GroundTruth>, DatasetManifest)> {
    let manifest_path = dir.join("manifest.json");
    let text = match fs::read_to_string(&manifest_path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(DatasetError::MissingFile {
                path: manifest_path,
            })
        }
        Err(e) => return Err(io_err(&manifest_path, e)),
    };
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    validate_manifest(&manifest)?;

    let (m, p, n) = (manifest.m, manifest.p, manifest.n);
    let mut observations = Vec::with_capacity(m);
    for name in &manifest.views {
        observations.push(SignalMatrix::new(read_matrix(&dir.join(name), p, n)?)?);
    }

    let truth = match &manifest.ground_truth {
        None => None,
        Some(gt) => {
            let sources = SignalMatrix::new(read_matrix(&dir.join(&gt.sources), p, n)?)?;
            let mut mixing = Vec::with_capacity(m);
            for name in &gt.mixing {
                mixing.push(MixingMatrix::new(
                    read_matrix(&dir.join(name), p, p)?,
                    MatrixRole::Mixing,
                )?);
            }
            let mut delays = Vec::with_capacity(m);
            for name in &gt.delays {
                let values = read_i64_file(&dir.join(name), p)?;
                delays.push(DelayVector::new(values, n, gt.tau_max)?);
            }
            let mut noise = Vec::with_capacity(m);
            for name in &gt.noise {
                noise.push(SignalMatrix::new(read_matrix(&dir.join(name), p, n)?)?);
            }
            Some(GroundTruth {
                sources,
                mixing,
                delays,
                noise,
            })
        }
    };

    let views: Vec<View> = observations
        .into_iter()
        .enumerate()
        .map(|(i, obs)| View {
            observations: obs,
            truth: truth.as_ref().map(|gt| ViewTruth {
                mixing: gt.mixing[i].clone(),
                delays: gt.delays[i].clone(),
            }),
        })
        .collect();
    Ok((ViewSet::new(views)?, truth, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "mvicad-dataset-{}-{}",
            tag,
            std::process::id()
        ));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn f64_files_round_trip_bitwise() {
        let dir = tmp_dir("f64");
        let path = dir.join("x.f64");
        let values = vec![0.0, -0.0, 1.5, f64::MIN_POSITIVE, -3.25e300, 1e-308];
        write_f64_file(&path, values.iter().copied()).unwrap();
        let back = read_f64_file(&path, values.len()).unwrap();
        let bits: Vec<u64> = back.iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, want);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn short_file_reports_its_size() {
        let dir = tmp_dir("short");
        let path = dir.join("x.f64");
        fs::write(&path, [0u8; 12]).unwrap();
        match read_f64_file(&path, 2) {
            Err(DatasetError::SizeMismatch { expected, got, .. }) => {
                assert_eq!((expected, got), (16, 12));
            }
            other => panic!("expected size mismatch, got {:?}", other),
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn absent_file_is_its_own_error() {
        let dir = tmp_dir("absent");
        match read_f64_file(&dir.join("nope.f64"), 1) {
            Err(DatasetError::MissingFile { path }) => {
                assert!(path.ends_with("nope.f64"));
            }
            other => panic!("expected missing file, got {:?}", other),
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn non_finite_payload_is_rejected_with_its_index() {
        let dir = tmp_dir("nan");
        let path = dir.join("x.f64");
        let mut buf = Vec::new();
        buf.extend_from_slice(&1.0f64.to_le_bytes());
        buf.extend_from_slice(&f64::NAN.to_le_bytes());
        fs::write(&path, &buf).unwrap();
        match read_f64_file(&path, 2) {
            Err(DatasetError::NonFinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected non-finite error, got {:?}", other),
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn zero_view_manifest_fails_validation() {
        let man = DatasetManifest {
            format_version: FORMAT_VERSION,
            m: 0,
            p: 3,
            n: 700,
            dtype: DTYPE.into(),
            views: vec![],
            ground_truth: None,
            metadata: Metadata::default(),
        };
        match validate_manifest(&man) {
            Err(DatasetError::Manifest(msg)) => assert!(msg.contains("m must be")),
            other => panic!("expected manifest error, got {:?}", other),
        }
    }
}
