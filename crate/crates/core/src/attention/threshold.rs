use serde::{Deserialize, Serialize};

use super::grid::{Grid, Mask};
use crate::error::{Error, Result};

/// How the sweep parameter of the cropper is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Keep the top `p` proportion of cells.
    #[default]
    Proportion,
    /// Keep cells with `S >= p * max(S)`.
    Normalized,
}

impl ThresholdMode {
    pub fn apply(self, s: &Grid, p: f64) -> Result<(f64, Mask)> {
        match self {
            ThresholdMode::Proportion => percentile_threshold(s, p),
            ThresholdMode::Normalized => normalized_threshold(s, p),
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("top_p must lie in (0, 1], got {p}")))
    }
}

/// Number of cells a top-`p` cut must keep: `ceil(p * n)`, at least 1.
///
/// The product is nudged down by 1e-9 before rounding up so that values
/// like `0.3 * 100 = 30.000000000000004` count as 30.
pub(crate) fn keep_count(p: f64, n: usize) -> usize {
    ((p * n as f64 - 1e-9).ceil().max(1.0) as usize).min(n)
}

/// `tau` is the `ceil(p * N)`-th largest value; every cell with `S >= tau`
/// is kept, so ties at `tau` may push the kept count above `ceil(p * N)`.
pub fn percentile_threshold(s: &Grid, top_p: f64) -> Result<(f64, Mask)> {
    check_p(top_p)?;
    if s.is_empty() {
        return Err(Error::invalid("cannot threshold an empty grid"));
    }
    let k = keep_count(top_p, s.len());
    let mut sorted = s.data.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let tau = sorted[k - 1];
    let mask = Mask::new(s.width, s.height, s.data.iter().map(|&v| v >= tau).collect())?;
    Ok((tau, mask))
}

pub fn normalized_threshold(s: &Grid, t: f64) -> Result<(f64, Mask)> {
    check_p(t)?;
    if s.is_empty() {
        return Err(Error::invalid("cannot threshold an empty grid"));
    }
    let tau = t * s.max();
    let mask = Mask::new(s.width, s.height, s.data.iter().map(|&v| v >= tau).collect())?;
    Ok((tau, mask))
}
