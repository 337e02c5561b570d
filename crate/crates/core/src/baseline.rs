//! Seasonal-naive baseline: repeat the most recent full season.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::heads::{ForecastResult, ForecastValues};
use crate::panel::SeriesPanel;

/// Forecast `horizon` steps after `origin_pos` (series-local index of the
/// last observed point) by copying values one season back:
/// `ŷ_{t+ω} = y_{t+ω−m·ceil(ω/m)}`. Quantile outputs at every level equal
/// the point forecast.
pub fn seasonal_naive(
    panel: &SeriesPanel,
    series: usize,
    origin_pos: i64,
    horizon: usize,
    season: usize,
    levels: &[f64],
) -> Result<ForecastResult> {
    let s = &panel.series[series];
    if season == 0 {
        return Err(Error::Config(alloc::string::String::from(
            "season length must be positive",
        )));
    }
    if origin_pos < season as i64 - 1 || origin_pos >= s.len() as i64 {
        return Err(Error::Data(format!(
            "series '{}': needs {season} observed points ending at origin, has origin {origin_pos} with length {}",
            s.id,
            s.len()
        )));
    }

    let mut point = Vec::with_capacity(horizon);
    for step in 1..=horizon {
        let lag = season * step.div_ceil(season);
        let src = origin_pos + step as i64 - lag as i64;
        debug_assert!(src >= 0 && src <= origin_pos);
        point.push(s.values[src as usize] as f64);
    }

    let stamps: Vec<_> = (1..=horizon as i64)
        .map(|w| panel.stamp_at(series, origin_pos + w))
        .collect();
    let rows: Vec<Vec<f64>> = point
        .iter()
        .map(|&v| levels.iter().map(|_| v).collect())
        .collect();

    Ok(ForecastResult {
        series_id: s.id.clone(),
        origin: panel.stamp_at(series, origin_pos),
        stamps,
        values: ForecastValues::Quantile {
            levels: levels.to_vec(),
            rows,
        },
        scale: 1.0,
        padded: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::parse_stamp;
    use crate::panel::{Granularity, PanelBuilder};
    use alloc::vec;

    fn periodic_panel(len: usize, period: usize) -> SeriesPanel {
        let start = parse_stamp("2020-01-01T00").unwrap();
        let values: Vec<f32> = (0..len).map(|t| (t % period) as f32 + 1.0).collect();
        let mut b = PanelBuilder::new(Granularity::Hourly);
        b.add_series("s", start, values, &[], vec![]);
        b.build().unwrap()
    }

    #[test]
    fn exact_on_periodic_series() {
        let panel = periodic_panel(96, 24);
        let fc = seasonal_naive(&panel, 0, 71, 24, 24, &[0.5, 0.9]).unwrap();
        let point = fc.point();
        for (w, v) in point.iter().enumerate() {
            let truth = panel.series[0].values[72 + w] as f64;
            assert_eq!(*v, truth);
        }
    }

    #[test]
    fn one_day_ahead_copies_last_day() {
        let panel = periodic_panel(70, 7);
        // m=24 window over a period-7 series: forecast equals the value 24
        // steps back regardless of the series content
        let fc = seasonal_naive(&panel, 0, 47, 24, 24, &[0.5]).unwrap();
        let point = fc.point();
        for (w, v) in point.iter().enumerate() {
            assert_eq!(*v, panel.series[0].values[48 + w - 24] as f64);
        }
    }

    #[test]
    fn two_seasons_repeat_the_same_day() {
        let panel = periodic_panel(96, 24);
        let fc = seasonal_naive(&panel, 0, 47, 48, 24, &[0.5]).unwrap();
        let point = fc.point();
        for w in 0..24 {
            assert_eq!(point[w], point[w + 24]);
            assert_eq!(point[w], panel.series[0].values[24 + w] as f64);
        }
    }

    #[test]
    fn insufficient_history_is_an_error() {
        let panel = periodic_panel(10, 24);
        assert!(seasonal_naive(&panel, 0, 9, 4, 24, &[0.5]).is_err());
    }
}
