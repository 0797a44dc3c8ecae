use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// p-value reported when the differences have zero variance and a nonzero
/// mean.
pub const DEGENERATE_P_BOUND: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub mean_diff: f64,
    /// `None` when the differences have zero variance.
    pub t_statistic: Option<f64>,
    pub p_value: f64,
    pub degenerate: bool,
}

/// Two-sided paired t-test of `a` against `b`.
///
/// Constant nonzero differences make the statistic infinite. The result then
/// carries `degenerate = true` and a p-value of 0, which callers should read
/// as "below [`DEGENERATE_P_BOUND`]".
pub fn paired_compare(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::contract("a paired test needs at least two pairs"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric {
            context: "paired differences".into(),
        });
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let scale = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if var <= (f64::EPSILON * scale).powi(2) {
        return Ok(if mean == 0.0 {
            PairedTest {
                mean_diff: 0.0,
                t_statistic: Some(0.0),
                p_value: 1.0,
                degenerate: false,
            }
        } else {
            PairedTest {
                mean_diff: mean,
                t_statistic: None,
                p_value: 0.0,
                degenerate: true,
            }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::contract(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(PairedTest {
        mean_diff: mean,
        t_statistic: Some(t),
        p_value: p,
        degenerate: false,
    })
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
