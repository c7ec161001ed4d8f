//! Experiment drivers behind the CLI. Every command writes flat CSV files
//! with a header row plus one JSON manifest echoing the config.

mod approx;
mod config;
mod hist;
mod run;
mod synth2;

use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub use approx::{approx_quality, cmd_approx_check, correlations, Correlation, ScatterRow, UtilityBench};
pub use config::{
    ApproxConfig, DatasetSpec, ExperimentConfig, GoalContextConfig, HistConfig, SplitConfig, Synth2Config,
    TrainSettings, UnlabeledSource,
};
pub use hist::{cmd_util_hist, exact_utility_samples, HistRow};
pub use run::{cmd_run, run_seeds, write_curves};
pub use synth2::{cmd_synth2, synth2_study, QueryRow, StrategySummary, Synth2Study};

/// Writes `rows` under an explicit header so empty files still carry one.
pub(crate) fn write_csv<R: Serialize, const N: usize>(path: impl AsRef<Path>, header: [&str; N], rows: &[R]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `a..b` (exclusive), `a..=b`, a comma list, or a single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || crate::error::Error::Config(format!("cannot parse seeds {s:?}"));
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
    if let Some((a, b)) = s.split_once("..=") {
        return Ok((num(a)?..=num(b)?).collect());
    }
    if let Some((a, b)) = s.split_once("..") {
        let v: Vec<u64> = (num(a)?..num(b)?).collect();
        return if v.is_empty() { Err(bad()) } else { Ok(v) };
    }
    s.split(',').map(num).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..5").unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(parse_seeds("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert_eq!(parse_seeds("1, 4,9").unwrap(), vec![1, 4, 9]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
