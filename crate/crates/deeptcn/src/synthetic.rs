//! Seeded synthetic panels for the bench and the test suites.

use deeptcn_core::calendar::parse_stamp;
use deeptcn_core::panel::{
    CovariateSchema, EmbedSource, EmbeddedFeature, Granularity, PanelBuilder, SeriesPanel,
};
use deeptcn_core::rng::RngState;

/// Daily panel with period-7 seasonality whose amplitude depends on a
/// categorical attribute, plus Gaussian noise of 0.1 times the amplitude.
/// The conditional distribution of every point is known exactly, which makes
/// the panel usable for calibration checks.
pub fn seasonal_daily_panel(seed: u64, n_series: usize, days: usize) -> SeriesPanel {
    let start = parse_stamp("2022-01-03").unwrap(); // a Monday
    let profile = [0.5f64, 0.7, 0.9, 1.1, 1.3, 1.8, 0.8];
    let amplitudes = [2.0f64, 4.0, 8.0, 16.0, 32.0];
    let mut rng = RngState::new(seed);
    let mut b = PanelBuilder::new(Granularity::Daily).static_columns(["category"]);
    for i in 0..n_series {
        let cat = i % amplitudes.len();
        let amp = amplitudes[cat];
        let values: Vec<f32> = (0..days)
            .map(|t| (amp * profile[t % 7] + 0.1 * amp * rng.normal()) as f32)
            .collect();
        b.add_series(
            &format!("s{i:03}"),
            start,
            values,
            &[&format!("cat{cat}")],
            vec![],
        );
    }
    b.build().expect("generator produces a valid panel")
}

/// The noise scale of a [`seasonal_daily_panel`] series (0.1 · amplitude).
pub fn seasonal_noise_sigma(series_index: usize) -> f64 {
    let amplitudes = [2.0f64, 4.0, 8.0, 16.0, 32.0];
    0.1 * amplitudes[series_index % amplitudes.len()]
}

/// Hourly panel in the style of household electricity consumption: a daily
/// profile from one of two archetypes, a weekend dip, a wide spread of
/// per-series scales, and multiplicative noise.
pub fn electricity_like_panel(seed: u64, n_series: usize, hours: usize) -> SeriesPanel {
    let start = parse_stamp("2014-01-06T00").unwrap(); // a Monday
    let mut rng = RngState::new(seed);
    // archetype 0: evening peak; archetype 1: office hours
    let evening: Vec<f64> = (0..24)
        .map(|h| 0.35 + 0.65 * (-((h as f64 - 19.0) * (h as f64 - 19.0)) / 18.0).exp())
        .collect();
    let office: Vec<f64> = (0..24)
        .map(|h| {
            0.25 + if (8..18).contains(&h) { 0.75 } else { 0.0 }
                + 0.1 * ((h as f64) / 24.0 * core::f64::consts::TAU).sin()
        })
        .collect();
    let mut b = PanelBuilder::new(Granularity::Hourly).static_columns(["archetype"]);
    for i in 0..n_series {
        let arch = i % 2;
        let profile = if arch == 0 { &evening } else { &office };
        // scales spread over two orders of magnitude
        let scale = 10.0f64.powf(rng.uniform(0.0, 2.0));
        let weekend_dip = if arch == 1 { 0.45 } else { 0.85 };
        let values: Vec<f32> = (0..hours)
            .map(|t| {
                let hod = t % 24;
                let dow = (t / 24) % 7; // starts on a Monday
                let weekend = dow >= 5;
                let base = scale * profile[hod] * if weekend { weekend_dip } else { 1.0 };
                let noisy = base * (1.0 + 0.08 * rng.normal());
                noisy.max(0.0) as f32
            })
            .collect();
        b.add_series(
            &format!("mt{i:03}"),
            start,
            values,
            &[if arch == 0 { "evening" } else { "office" }],
            vec![],
        );
    }
    b.build().expect("generator produces a valid panel")
}

/// Long-memory fixture: a deterministic spike pattern of period 96 with a
/// per-series phase and mild noise. Phase is recoverable only from history;
/// the matching schema therefore carries no calendar features, so an
/// encoder whose receptive field spans a full period has a real advantage.
pub fn long_memory_panel(seed: u64, n_series: usize, len: usize) -> SeriesPanel {
    const PERIOD: usize = 96;
    const SPIKE: usize = 8;
    let start = parse_stamp("2022-06-06T00").unwrap();
    let mut rng = RngState::new(seed);
    let mut b = PanelBuilder::new(Granularity::Hourly);
    for i in 0..n_series {
        let phase = rng.below(PERIOD);
        let values: Vec<f32> = (0..len)
            .map(|t| {
                let p = (t + phase) % PERIOD;
                let base = if p < SPIKE { 1.0 } else { 0.1 };
                (base + 0.02 * rng.normal()) as f32
            })
            .collect();
        b.add_series(&format!("lm{i:03}"), start, values, &[], vec![]);
    }
    b.build().expect("generator produces a valid panel")
}

/// Schema for the long-memory fixture: series-id embedding only, no
/// calendar features that could leak the phase.
pub fn long_memory_schema(panel: &SeriesPanel) -> CovariateSchema {
    CovariateSchema {
        granularity: panel.granularity,
        calendar: vec![],
        holiday_flag: false,
        real_covariates: vec![],
        embedded: vec![EmbeddedFeature {
            name: "series_id".to_string(),
            vocab: panel.len(),
            dim: CovariateSchema::embed_dim(panel.len()),
            source: EmbedSource::SeriesId,
        }],
    }
}

/// Intermittent monthly demand in the style of slow-moving spare parts:
/// 51 months per series, many zeros, Poisson-ish positive bursts.
pub fn parts_like_panel(seed: u64, n_series: usize) -> SeriesPanel {
    let start = parse_stamp("2000-01-01").unwrap();
    let mut rng = RngState::new(seed);
    let mut b = PanelBuilder::new(Granularity::Monthly);
    for i in 0..n_series {
        let p_demand = rng.uniform(0.05, 0.6);
        let burst = 1.0 + rng.uniform(0.0, 4.0);
        let values: Vec<f32> = (0..51)
            .map(|_| {
                if rng.next_f64() < p_demand {
                    (1.0 + (burst * rng.next_f64()).floor()) as f32
                } else {
                    0.0
                }
            })
            .collect();
        b.add_series(&format!("part{i:04}"), start, values, &[], vec![]);
    }
    b.build().expect("generator produces a valid panel")
}
