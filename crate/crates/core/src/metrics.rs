//! Forecast accuracy metrics.
//!
//! Prefactor convention: every metric averages (or pools) over all
//! forecasted points, never per-window first. `ql` is the normalized pooled
//! quantile loss `Σ pinball / Σ |y|`; all metrics are invariant under a
//! common positive rescaling of actuals and predictions.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::loss::quantile_loss;

fn check_same_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension {
            op,
            detail: format!("{} actuals vs {} predictions", a.len(), b.len()),
        });
    }
    Ok(())
}

/// Pooled normalized quantile loss at level `q`:
/// `Σ L_q(y, ŷ) / Σ |y|` over all points.
pub fn ql(q: f64, actuals: &[f64], preds: &[f64]) -> Result<f64> {
    check_same_len("ql", actuals, preds)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&y, &p) in actuals.iter().zip(preds) {
        num += quantile_loss(y, p, q)?;
        den += y.abs();
    }
    if den == 0.0 {
        return Err(Error::Undefined(String::from(
            "ql: all actuals are zero, the normalizer vanishes",
        )));
    }
    Ok(num / den)
}

/// Symmetric mean absolute percentage error:
/// mean over points of `|2(y − ŷ) / (y + ŷ)|`. A term with `y + ŷ = 0` is
/// defined as 0 when both are 0 and is an error otherwise.
pub fn smape(actuals: &[f64], preds: &[f64]) -> Result<f64> {
    check_same_len("smape", actuals, preds)?;
    let mut acc = 0.0;
    for (&y, &p) in actuals.iter().zip(preds) {
        let den = y + p;
        if den == 0.0 {
            if y == 0.0 && p == 0.0 {
                continue; // term defined as zero
            }
            return Err(Error::Undefined(format!(
                "smape: y + yhat = 0 with y = {y}, yhat = {p}"
            )));
        }
        acc += (2.0 * (y - p) / den).abs();
    }
    Ok(acc / actuals.len() as f64)
}

/// Root mean squared error divided by the mean absolute actual.
pub fn nrmse(actuals: &[f64], preds: &[f64]) -> Result<f64> {
    check_same_len("nrmse", actuals, preds)?;
    let n = actuals.len() as f64;
    let mse: f64 = actuals
        .iter()
        .zip(preds)
        .map(|(&y, &p)| (y - p) * (y - p))
        .sum::<f64>()
        / n;
    let denom: f64 = actuals.iter().map(|y| y.abs()).sum::<f64>() / n;
    if denom == 0.0 {
        return Err(Error::Undefined(String::from(
            "nrmse: all actuals are zero",
        )));
    }
    Ok(libm::sqrt(mse) / denom)
}

/// Per-series MASE terms and the aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct MaseReport {
    /// Mean over series with a defined denominator.
    pub value: f64,
    /// Series indices excluded because the in-sample seasonal-naive error
    /// was zero.
    pub excluded: Vec<usize>,
}

/// Mean absolute scaled error at seasonal frequency `m`.
///
/// For each series: (mean |y − ŷ| over the horizon) divided by the in-sample
/// mean |y_t − y_{t−m}|. Series with a zero denominator are excluded from the
/// mean and reported.
pub fn mase(
    actuals: &[Vec<f64>],
    preds: &[Vec<f64>],
    insample: &[Vec<f64>],
    m: usize,
) -> Result<MaseReport> {
    if actuals.len() != preds.len() || actuals.len() != insample.len() || actuals.is_empty() {
        return Err(Error::Dimension {
            op: "mase",
            detail: format!(
                "{} actual, {} predicted, {} in-sample series",
                actuals.len(),
                preds.len(),
                insample.len()
            ),
        });
    }
    let mut acc = 0.0;
    let mut used = 0usize;
    let mut excluded = Vec::new();
    for (i, ((ya, yp), hist)) in actuals.iter().zip(preds).zip(insample).enumerate() {
        check_same_len("mase", ya, yp)?;
        if hist.len() <= m {
            return Err(Error::Undefined(format!(
                "mase: series {i} has {} in-sample points for seasonal frequency {m}",
                hist.len()
            )));
        }
        let mae: f64 =
            ya.iter().zip(yp).map(|(&y, &p)| (y - p).abs()).sum::<f64>() / ya.len() as f64;
        let denom: f64 = (m..hist.len())
            .map(|t| (hist[t] - hist[t - m]).abs())
            .sum::<f64>()
            / (hist.len() - m) as f64;
        if denom == 0.0 {
            excluded.push(i);
            continue;
        }
        acc += mae / denom;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Undefined(String::from(
            "mase: every series has a zero seasonal-naive denominator",
        )));
    }
    Ok(MaseReport {
        value: acc / used as f64,
        excluded,
    })
}

/// Fraction of forecast points where a higher quantile level's value lies
/// strictly below a lower level's. `rows[point][level]`, levels ascending.
pub fn quantile_crossing_rate(rows: &[Vec<f64>]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let crossed = rows
        .iter()
        .filter(|r| r.windows(2).any(|w| w[1] < w[0]))
        .count();
    crossed as f64 / rows.len() as f64
}
