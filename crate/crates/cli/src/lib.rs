//! File formats and command implementations behind the `planefilter` binary.

pub mod commands;
pub mod error;
pub mod formats;

pub use error::CliError;

/// Environment variable capping the worker thread count (`0` = automatic).
pub const THREADS_ENV: &str = "PLANEFILTER_THREADS";

/// Sizes the global worker pool from [`THREADS_ENV`]. Unset, empty or `0`
/// leaves the default.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(());
    }
    let n: usize = raw
        .parse()
        .map_err(|_| CliError::Invalid(format!("{THREADS_ENV} must be a non-negative integer, got {raw:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    Ok(())
}
