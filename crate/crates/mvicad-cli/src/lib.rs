//! Experiment harness around the solver: dataset serialization, benchmark
//! grids, CSV emission, and SVG figures. The `mvicad` binary is a thin
//! clap wrapper over this crate.

pub mod csv;
pub mod dataset;
pub mod experiment;
pub mod plot;

use std::path::PathBuf;

pub use dataset::{read_dataset, write_dataset, DatasetError, DatasetManifest};
pub use experiment::{bench_amari, bench_delays, thread_pool, threads_from_env, ExperimentGrid};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error(transparent)]
    Model(#[from] mvicad::Error),

    /// A bad flag value, grid shape, or environment setting.
    #[error("{0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error("plot: {0}")]
    Plot(String),
}

/// Process exit code for an error: 1 usage, 2 data, 3 numeric failure.
pub fn exit_code(err: &HarnessError) -> i32 {
    match err {
        HarnessError::InvalidConfig(_) => 1,
        HarnessError::Dataset(_)
        | HarnessError::Io { .. }
        | HarnessError::Csv { .. }
        | HarnessError::Plot(_) => 2,
        HarnessError::Model(e) => match e {
            mvicad::Error::InvalidParameter { .. } => 1,
            mvicad::Error::DimensionMismatch { .. } => 2,
            _ => 3,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_split_usage_data_and_numeric() {
        assert_eq!(exit_code(&HarnessError::InvalidConfig("x".into())), 1);
        assert_eq!(
            exit_code(&HarnessError::Model(mvicad::Error::InvalidParameter {
                name: "tau_max",
                reason: "negative".into(),
            })),
            1
        );
        assert_eq!(
            exit_code(&HarnessError::Dataset(DatasetError::Manifest("m".into()))),
            2
        );
        assert_eq!(exit_code(&HarnessError::Plot("empty".into())), 2);
        assert_eq!(
            exit_code(&HarnessError::Model(mvicad::Error::SingularUnmixing {
                view: 0
            })),
            3
        );
    }
}
