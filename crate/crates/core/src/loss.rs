//! Training losses: quantile (pinball) loss and Gaussian negative
//! log-likelihood. Scalar forms for metrics/tests, graph forms for training.
//!
//! Batch losses reduce by mean over every (series, horizon step, level)
//! term, keeping learning-rate semantics independent of horizon length and
//! of the number of quantile levels.

use alloc::format;

use crate::error::{Error, Result};
use crate::tape::{Tape, VarId};
use crate::tensor::Element;

/// Half of `log(2π)`, the constant term of the Gaussian NLL.
pub const HALF_LN_TWO_PI: f64 = 0.918938533204672741780329736406;

/// Pinball loss `q·(y − ŷ)⁺ + (1 − q)·(ŷ − y)⁺`.
pub fn quantile_loss(y: f64, pred: f64, level: f64) -> Result<f64> {
    check_level(level)?;
    let diff = y - pred;
    Ok(if diff >= 0.0 {
        level * diff
    } else {
        (1.0 - level) * (-diff)
    })
}

/// Sum of pinball losses over a set of levels for one observation.
pub fn total_quantile_loss(y: f64, preds: &[f64], levels: &[f64]) -> Result<f64> {
    if preds.len() != levels.len() {
        return Err(Error::Config(format!(
            "{} predictions for {} levels",
            preds.len(),
            levels.len()
        )));
    }
    let mut acc = 0.0;
    for (&p, &q) in preds.iter().zip(levels) {
        acc += quantile_loss(y, p, q)?;
    }
    Ok(acc)
}

/// Gaussian negative log-likelihood
/// `½·log(2π) + log σ + (y − μ)² / (2σ²)`.
pub fn gaussian_nll(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::Domain {
            op: "gaussian_nll",
            detail: format!("sigma must be positive, got {sigma}"),
        });
    }
    let resid = y - mu;
    Ok(HALF_LN_TWO_PI + libm::log(sigma) + resid * resid / (2.0 * sigma * sigma))
}

pub(crate) fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "quantile level must lie in (0, 1), got {level}"
        )));
    }
    Ok(())
}

pub(crate) fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Config(alloc::string::String::from(
            "at least one quantile level is required",
        )));
    }
    for &q in levels {
        check_level(q)?;
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "quantile levels must be strictly increasing, got {levels:?}"
        )));
    }
    Ok(())
}

/// Mean total pinball loss on the tape.
///
/// `preds[n, m]` holds one column per level; `targets[n]`. The result is the
/// mean over all `n·m` loss terms.
pub fn quantile_loss_graph<T: Element>(
    tape: &mut Tape<T>,
    preds: VarId,
    targets: VarId,
    levels: &[f64],
) -> Result<VarId> {
    check_levels(levels)?;
    let shape = tape.value(preds).shape().to_vec();
    if shape.len() != 2 || shape[1] != levels.len() {
        return Err(Error::Dimension {
            op: "quantile_loss",
            detail: format!("predictions {shape:?} for {} levels", levels.len()),
        });
    }
    let n = shape[0];
    let mut acc: Option<VarId> = None;
    for (j, &q) in levels.iter().enumerate() {
        let col = tape.select_col(preds, j)?;
        let under = tape.sub(targets, col)?; // y − ŷ
        let over = tape.sub(col, targets)?; // ŷ − y
        let under_pos = tape.relu(under)?;
        let over_pos = tape.relu(over)?;
        let a = tape.mul_scalar(under_pos, T::from_f64(q))?;
        let b = tape.mul_scalar(over_pos, T::from_f64(1.0 - q))?;
        let term = tape.add(a, b)?;
        let s = tape.sum(term)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, s)?,
            None => s,
        });
    }
    let total = acc.expect("levels checked non-empty");
    tape.mul_scalar(total, T::from_f64(1.0 / (n * levels.len()) as f64))
}

/// Mean Gaussian NLL on the tape. `mu`, `sigma` and `targets` are `[n]`
/// vectors; `sigma` must already be strictly positive (the head guarantees
/// it through Soft-ReLU).
pub fn gaussian_nll_graph<T: Element>(
    tape: &mut Tape<T>,
    mu: VarId,
    sigma: VarId,
    targets: VarId,
) -> Result<VarId> {
    let log_sigma = tape.log(sigma)?;
    let resid = tape.sub(targets, mu)?;
    let sq = tape.square(resid)?;
    let var2 = tape.square(sigma)?;
    let var2 = tape.mul_scalar(var2, T::from_f64(2.0))?;
    let quad = tape.div(sq, var2)?;
    let per_point = tape.add(log_sigma, quad)?;
    let m = tape.mean(per_point)?;
    tape.add_scalar(m, T::from_f64(HALF_LN_TWO_PI))
}
