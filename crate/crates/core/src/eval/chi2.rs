use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredResult {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    /// `[[a_hits, a_misses], [b_hits, b_misses]]`.
    pub table: [[u64; 2]; 2],
}

/// Pearson chi-squared test of equal hit rates in two groups (no continuity correction).
pub fn chi_squared_2x2(
    a_hits: u64,
    a_total: u64,
    b_hits: u64,
    b_total: u64,
) -> Result<ChiSquaredResult> {
    if a_hits > a_total || b_hits > b_total {
        return Err(Error::InvalidArgument("hits exceed total".into()));
    }
    let table = [[a_hits, a_total - a_hits], [b_hits, b_total - b_hits]];
    let n = (a_total + b_total) as f64;
    let rows = [a_total as f64, b_total as f64];
    let cols = [(a_hits + b_hits) as f64, n - (a_hits + b_hits) as f64];
    let mut statistic = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &observed) in row.iter().enumerate() {
            let expected = rows[i] * cols[j] / n;
            if expected <= 0.0 || expected.is_nan() {
                return Err(Error::ZeroExpectedCount);
            }
            statistic += (observed as f64 - expected).powi(2) / expected;
        }
    }
    Ok(ChiSquaredResult {
        statistic,
        df: 1,
        p_value: chi_squared_df1_sf(statistic),
        table,
    })
}

/// Upper tail of chi-squared with one degree of freedom: `erfc(sqrt(x / 2))`.
pub fn chi_squared_df1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    erfc((x / 2.0).sqrt()).clamp(0.0, 1.0)
}
