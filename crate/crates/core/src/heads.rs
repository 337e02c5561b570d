//! Output heads and probabilistic forecast values.
//!
//! A head is one shared dense layer mapping each decoder latent to either a
//! vector of quantile forecasts or a `(μ, σ)` pair. σ goes through Soft-ReLU
//! so it is always positive; quantile columns are deliberately unconstrained
//! across levels (crossings are reported by the bench, not clamped).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Dense, ParamStore, Session};
use crate::loss::{check_level, check_levels};
use crate::rng::RngState;
use crate::tape::VarId;
use crate::tensor::Element;

/// Floor added after Soft-ReLU so σ stays positive even when the raw
/// pre-activation underflows `exp` in 32-bit.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Which probabilistic output the model produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Quantile { levels: Vec<f64> },
    Gaussian,
}

impl HeadKind {
    /// Paper protocol default: joint 0.5 / 0.9 quantile training.
    pub fn default_quantile() -> Self {
        HeadKind::Quantile {
            levels: alloc::vec![0.5, 0.9],
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            HeadKind::Quantile { levels } => levels.len(),
            HeadKind::Gaussian => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HeadKind::Quantile { levels } => check_levels(levels),
            HeadKind::Gaussian => Ok(()),
        }
    }
}

/// Tape handles produced by a head forward pass.
pub enum HeadOutput {
    /// `[n, m]`, column `j` forecasts level `j`.
    Quantile { preds: VarId },
    /// `[n]` each; `sigma` is strictly positive.
    Gaussian { mu: VarId, sigma: VarId },
}

/// Shared output dense layer applied to every horizon step's latent.
#[derive(Debug, Clone)]
pub struct OutputHead {
    pub dense: Dense,
    pub kind: HeadKind,
}

impl OutputHead {
    pub fn init<T: Element>(
        params: &mut ParamStore<T>,
        rng: &mut RngState,
        latent: usize,
        kind: HeadKind,
    ) -> Result<Self> {
        kind.validate()?;
        let dense = Dense::init(params, rng, "head", latent, kind.output_dim());
        if matches!(kind, HeadKind::Gaussian) {
            // Start the raw sigma column at softplus^-1(1) so the initial
            // scale is near one. A zero bias lets He-initialized activity
            // push sigma toward zero, where the likelihood's 1/sigma^2 terms
            // blow the first gradients up by orders of magnitude.
            let mut bias = params.get(dense.bias).clone();
            bias.data_mut()[1] = T::from_f64(libm::log(core::f64::consts::E - 1.0));
            params.set(dense.bias, bias);
        }
        Ok(OutputHead { dense, kind })
    }

    /// `delta[n, latent]` -> head outputs.
    pub fn forward<T: Element>(
        &self,
        sess: &mut Session<'_, T>,
        delta: VarId,
    ) -> Result<HeadOutput> {
        let raw = self.dense.forward(sess, delta).map_err(name_head_err)?;
        match &self.kind {
            HeadKind::Quantile { .. } => Ok(HeadOutput::Quantile { preds: raw }),
            HeadKind::Gaussian => {
                let mu = sess.tape.select_col(raw, 0).map_err(name_head_err)?;
                let raw_sigma = sess.tape.select_col(raw, 1).map_err(name_head_err)?;
                let sp = sess.tape.softplus(raw_sigma).map_err(name_head_err)?;
                let sigma = sess
                    .tape
                    .add_scalar(sp, T::from_f64(SIGMA_FLOOR))
                    .map_err(name_head_err)?;
                Ok(HeadOutput::Gaussian { mu, sigma })
            }
        }
    }
}

fn name_head_err(e: Error) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFinite { op: "output_head" },
        other => other,
    }
}

/// Standard normal cumulative distribution function, via `erfc`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Standard normal density.
fn normal_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI)
}

/// Inverse standard normal CDF (percent point function).
///
/// Rational approximation (Acklam) refined with one Halley step against the
/// erfc-based CDF; absolute error well under 1e-9 across (1e-10, 1 − 1e-10).
///
/// Levels above one half reduce to the lower tail by symmetry: `1 − p` is
/// exact there, and `erfc` keeps full precision on the lower tail where the
/// direct upper-tail CDF would cancel catastrophically.
pub fn normal_ppf(p: f64) -> Result<f64> {
    check_level(p)?;
    if p > 0.5 {
        return Ok(-ppf_lower_half(1.0 - p));
    }
    Ok(ppf_lower_half(p))
}

fn ppf_lower_half(p: f64) -> f64 {

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    // One Halley refinement against the exact CDF; x <= 0 here, so the
    // erfc argument is non-negative and fully precise.
    let e = normal_cdf(x) - p;
    let u = e / normal_pdf(x);
    x - u / (1.0 + x * u / 2.0)
}

/// Quantiles of `N(mu, sigma²)` at the given levels: `μ + σ·Φ⁻¹(q)`.
pub fn gaussian_quantiles(mu: f64, sigma: f64, levels: &[f64]) -> Result<Vec<f64>> {
    if sigma <= 0.0 {
        return Err(Error::Domain {
            op: "gaussian_quantiles",
            detail: format!("sigma must be positive, got {sigma}"),
        });
    }
    levels
        .iter()
        .map(|&q| Ok(mu + sigma * normal_ppf(q)?))
        .collect()
}

/// Probabilistic forecast values for one series over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForecastValues {
    Quantile {
        levels: Vec<f64>,
        /// `rows[step][level]`, de-normalized.
        rows: Vec<Vec<f64>>,
    },
    Gaussian {
        mean: Vec<f64>,
        std: Vec<f64>,
    },
}

/// Per-series, per-horizon probabilistic output with the de-normalization
/// scale and the horizon timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub series_id: String,
    /// Timestamp of the last history point the forecast conditions on.
    pub origin: NaiveDateTime,
    pub stamps: Vec<NaiveDateTime>,
    pub values: ForecastValues,
    pub scale: f64,
    /// Number of zero-padded input positions (cold-start indicator).
    pub padded: usize,
}

impl ForecastResult {
    pub fn horizon(&self) -> usize {
        self.stamps.len()
    }

    /// Forecast of the given quantile level; for Gaussian values this is the
    /// percent point function of the fitted distribution.
    pub fn quantile(&self, level: f64) -> Result<Vec<f64>> {
        match &self.values {
            ForecastValues::Quantile { levels, rows } => {
                let j = levels
                    .iter()
                    .position(|&q| (q - level).abs() < 1e-12)
                    .ok_or_else(|| {
                        Error::Config(format!("level {level} not among trained levels {levels:?}"))
                    })?;
                Ok(rows.iter().map(|r| r[j]).collect())
            }
            ForecastValues::Gaussian { mean, std } => mean
                .iter()
                .zip(std)
                .map(|(&m, &s)| Ok(m + s * normal_ppf(level)?))
                .collect(),
        }
    }

    /// Point forecast: median for quantile heads, mean for Gaussian.
    pub fn point(&self) -> Vec<f64> {
        match &self.values {
            ForecastValues::Quantile { levels, rows } => {
                let j = levels
                    .iter()
                    .position(|&q| (q - 0.5).abs() < 1e-12)
                    .unwrap_or(levels.len() / 2);
                rows.iter().map(|r| r[j]).collect()
            }
            ForecastValues::Gaussian { mean, .. } => mean.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = match &self.values {
            ForecastValues::Quantile { rows, .. } => {
                rows.iter().flatten().all(|v| v.is_finite())
            }
            ForecastValues::Gaussian { mean, std } => {
                mean.iter().all(|v| v.is_finite())
                    && std.iter().all(|v| v.is_finite() && *v > 0.0)
            }
        };
        if !finite {
            return Err(Error::NonFinite { op: "forecast" });
        }
        Ok(())
    }
}
