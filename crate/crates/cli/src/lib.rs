//! Pipeline orchestration behind the `emrkg` binary.

pub mod config;
pub mod emr;
pub mod manifest;
pub mod stages;

use thiserror::Error;

/// A problem with input data found by the CLI itself rather than a library.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct DataError(pub String);

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

/// Maps an error chain to a process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use emrkg_core::tagger::TaggerError;
    for cause in err.chain() {
        if cause.is::<config::ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(t) = cause.downcast_ref::<TaggerError>() {
            return match t {
                TaggerError::DivergedLoss { .. } | TaggerError::NonFiniteParameters => EXIT_INTERNAL,
                TaggerError::InvalidConfig(_) => EXIT_CONFIG,
                _ => EXIT_DATA,
            };
        }
        if let Some(d) = cause.downcast_ref::<emrkg_core::derm::DermError>() {
            return match d {
                emrkg_core::derm::DermError::InvalidConfig(_) => EXIT_CONFIG,
                _ => EXIT_DATA,
            };
        }
        if let Some(f) = cause.downcast_ref::<emrkg_core::fusion::FusionError>() {
            return match f {
                emrkg_core::fusion::FusionError::InvalidConfig(_) => EXIT_CONFIG,
                _ => EXIT_DATA,
            };
        }
        if cause.is::<DataError>()
            || cause.is::<emrkg_core::corpus::CorpusError>()
            || cause.is::<emrkg_core::kb::KbError>()
            || cause.is::<emrkg_core::graph::GraphError>()
            || cause.is::<emrkg_core::metrics::MetricsError>()
            || cause.is::<serde_json::Error>()
            || cause.is::<std::io::Error>()
        {
            return EXIT_DATA;
        }
    }
    EXIT_INTERNAL
}
