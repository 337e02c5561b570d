//! Panels of aligned series, covariate featurization, per-series scaling and
//! training-window extraction.
//!
//! A panel keeps each series as a contiguous value array anchored at a start
//! timestamp, static categorical attributes coded against per-column
//! vocabularies, optional dynamic real covariates, and a holiday calendar.
//! Windows cut from a panel are the unit of minibatching.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::calendar::{self, CalendarFeature, Stamp};
use crate::error::{Error, Result};

pub use crate::calendar::Granularity;

/// One series: values at `start + i` steps, plus aligned real covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub id: String,
    pub start: Stamp,
    pub values: Vec<f32>,
    /// `real_covs[c][t]` aligned with `values`; columns named by the panel.
    pub real_covs: Vec<Vec<f32>>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Collection of aligned series with static attributes and shared calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPanel {
    pub granularity: Granularity,
    /// Sorted by id; the position is the dense series index.
    pub series: Vec<Series>,
    pub static_names: Vec<String>,
    /// Sorted distinct values per static column; position = category code.
    pub static_vocabs: Vec<Vec<String>>,
    /// `static_codes[series][column]`.
    pub static_codes: Vec<Vec<usize>>,
    pub real_cov_names: Vec<String>,
    pub holidays: BTreeSet<NaiveDate>,
}

impl SeriesPanel {
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn series_index(&self, id: &str) -> Option<usize> {
        self.series
            .binary_search_by(|s| s.id.as_str().cmp(id))
            .ok()
    }

    pub fn stamp_at(&self, series: usize, pos: i64) -> Stamp {
        calendar::step(self.series[series].start, self.granularity, pos)
    }

    pub fn local_index(&self, series: usize, stamp: Stamp) -> Result<i64> {
        calendar::index_of(self.series[series].start, self.granularity, stamp)
    }

    /// Longest series length in the panel.
    pub fn max_len(&self) -> usize {
        self.series.iter().map(Series::len).max().unwrap_or(0)
    }

    /// Latest observed timestamp across all series.
    pub fn end_stamp(&self) -> Option<Stamp> {
        self.series
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| calendar::step(s.start, self.granularity, s.len() as i64 - 1))
            .max()
    }
}

/// Incremental panel construction with validation at `build`.
#[derive(Debug, Clone)]
pub struct PanelBuilder {
    granularity: Granularity,
    static_names: Vec<String>,
    real_cov_names: Vec<String>,
    holidays: BTreeSet<NaiveDate>,
    rows: Vec<(String, Stamp, Vec<f32>, Vec<String>, Vec<Vec<f32>>)>,
}

impl PanelBuilder {
    pub fn new(granularity: Granularity) -> Self {
        PanelBuilder {
            granularity,
            static_names: Vec::new(),
            real_cov_names: Vec::new(),
            holidays: BTreeSet::new(),
            rows: Vec::new(),
        }
    }

    pub fn static_columns<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.static_names = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn real_covariates<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.real_cov_names = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn holidays(mut self, dates: impl IntoIterator<Item = NaiveDate>) -> Self {
        self.holidays = dates.into_iter().collect();
        self
    }

    pub fn add_series(
        &mut self,
        id: &str,
        start: Stamp,
        values: Vec<f32>,
        statics: &[&str],
        real_covs: Vec<Vec<f32>>,
    ) -> &mut Self {
        self.rows.push((
            id.to_string(),
            start,
            values,
            statics.iter().map(|s| s.to_string()).collect(),
            real_covs,
        ));
        self
    }

    pub fn build(self) -> Result<SeriesPanel> {
        let mut rows = self.rows;
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        for pair in rows.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Data(format!("duplicate series id '{}'", pair[0].0)));
            }
        }

        let mut vocab_sets: Vec<BTreeSet<String>> =
            vec![BTreeSet::new(); self.static_names.len()];
        for (id, start, values, statics, covs) in &rows {
            if statics.len() != self.static_names.len() {
                return Err(Error::Data(format!(
                    "series '{id}': {} static values for {} columns",
                    statics.len(),
                    self.static_names.len()
                )));
            }
            if covs.len() != self.real_cov_names.len() {
                return Err(Error::Data(format!(
                    "series '{id}': {} covariate columns, expected {}",
                    covs.len(),
                    self.real_cov_names.len()
                )));
            }
            for (c, col) in covs.iter().enumerate() {
                if col.len() != values.len() {
                    return Err(Error::Data(format!(
                        "series '{id}': covariate '{}' has {} points, values have {}",
                        self.real_cov_names[c],
                        col.len(),
                        values.len()
                    )));
                }
                if let Some(p) = col.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Data(format!(
                        "series '{id}': non-finite covariate '{}' at position {p}",
                        self.real_cov_names[c]
                    )));
                }
            }
            if let Some(p) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "series '{id}': non-finite value at position {p}"
                )));
            }
            if self.granularity == Granularity::Monthly && start.day() != 1 {
                return Err(Error::Data(format!(
                    "series '{id}': monthly series must start on the first of a month"
                )));
            }
            for (c, v) in statics.iter().enumerate() {
                vocab_sets[c].insert(v.clone());
            }
        }

        let static_vocabs: Vec<Vec<String>> = vocab_sets
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect();

        let mut series = Vec::with_capacity(rows.len());
        let mut static_codes = Vec::with_capacity(rows.len());
        for (id, start, values, statics, real_covs) in rows {
            let codes: Vec<usize> = statics
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    static_vocabs[c]
                        .binary_search(v)
                        .expect("vocab built from these values")
                })
                .collect();
            static_codes.push(codes);
            series.push(Series {
                id,
                start,
                values,
                real_covs,
            });
        }

        Ok(SeriesPanel {
            granularity: self.granularity,
            series,
            static_names: self.static_names,
            static_vocabs,
            static_codes,
            real_cov_names: self.real_cov_names,
            holidays: self.holidays,
        })
    }
}

/// Where an embedded feature's code comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedSource {
    SeriesId,
    /// Index into the panel's static columns.
    StaticColumn(usize),
}

/// One categorical feature mapped through an embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedFeature {
    pub name: String,
    pub vocab: usize,
    pub dim: usize,
    pub source: EmbedSource,
}

/// Ordered covariate layout shared by the encoder history channels and the
/// decoder's future inputs.
///
/// Numeric part (width `numeric_width()`): a sin/cos pair per calendar
/// feature, then the holiday flag, then the passthrough real covariates.
/// Embedded categorical features contribute their table dimensions on top,
/// giving `total_width()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub granularity: Granularity,
    pub calendar: Vec<CalendarFeature>,
    pub holiday_flag: bool,
    pub real_covariates: Vec<String>,
    pub embedded: Vec<EmbeddedFeature>,
}

impl CovariateSchema {
    /// Default embedding dimension: `min(20, ceil(sqrt(vocab)))`.
    pub fn embed_dim(vocab: usize) -> usize {
        let root = libm::ceil(libm::sqrt(vocab as f64)) as usize;
        root.clamp(1, 20)
    }

    /// Calendar defaults for the panel's granularity, the holiday flag when
    /// a calendar is present, every real covariate column, an embedding per
    /// static column, and optionally a series-id embedding.
    ///
    /// The series-id embedding personalizes forecasts but makes unseen ids
    /// unforecastable; disable it for cold-start settings.
    pub fn default_for(panel: &SeriesPanel, include_series_id: bool) -> Self {
        let mut embedded = Vec::new();
        if include_series_id {
            embedded.push(EmbeddedFeature {
                name: String::from("series_id"),
                vocab: panel.len(),
                dim: Self::embed_dim(panel.len()),
                source: EmbedSource::SeriesId,
            });
        }
        for (c, name) in panel.static_names.iter().enumerate() {
            let vocab = panel.static_vocabs[c].len();
            embedded.push(EmbeddedFeature {
                name: name.clone(),
                vocab,
                dim: Self::embed_dim(vocab),
                source: EmbedSource::StaticColumn(c),
            });
        }
        CovariateSchema {
            granularity: panel.granularity,
            calendar: CalendarFeature::defaults(panel.granularity).to_vec(),
            holiday_flag: !panel.holidays.is_empty(),
            real_covariates: panel.real_cov_names.clone(),
            embedded,
        }
    }

    pub fn numeric_width(&self) -> usize {
        2 * self.calendar.len() + usize::from(self.holiday_flag) + self.real_covariates.len()
    }

    pub fn total_width(&self) -> usize {
        self.numeric_width() + self.embedded.iter().map(|e| e.dim).sum::<usize>()
    }

    pub fn validate(&self, panel: &SeriesPanel) -> Result<()> {
        if self.granularity != panel.granularity {
            return Err(Error::Config(format!(
                "schema granularity {} does not match panel {}",
                self.granularity.as_str(),
                panel.granularity.as_str()
            )));
        }
        for name in &self.real_covariates {
            if !panel.real_cov_names.contains(name) {
                return Err(Error::Config(format!(
                    "real covariate '{name}' not present in panel"
                )));
            }
        }
        for emb in &self.embedded {
            match emb.source {
                EmbedSource::SeriesId => {
                    if emb.vocab < panel.len() {
                        return Err(Error::Config(format!(
                            "series-id vocabulary {} smaller than panel size {}",
                            emb.vocab,
                            panel.len()
                        )));
                    }
                }
                EmbedSource::StaticColumn(c) => {
                    if c >= panel.static_names.len() {
                        return Err(Error::Config(format!(
                            "embedded feature '{}' references missing static column {c}",
                            emb.name
                        )));
                    }
                    if panel.static_vocabs[c].len() > emb.vocab {
                        return Err(Error::Config(format!(
                            "feature '{}': panel vocabulary {} exceeds embedding vocabulary {}",
                            emb.name,
                            panel.static_vocabs[c].len(),
                            emb.vocab
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Numeric covariate rows for positions `[lo, lo + len)` of a series,
/// row-major `[len × numeric_width]`.
///
/// Calendar features and the holiday flag extend arbitrarily far into the
/// future; real covariates exist only where the series has data, anything
/// else is an error.
pub fn featurize(
    panel: &SeriesPanel,
    schema: &CovariateSchema,
    series: usize,
    lo: i64,
    len: usize,
) -> Result<Vec<f32>> {
    let s = &panel.series[series];
    let width = schema.numeric_width();
    let mut out = Vec::with_capacity(len * width);
    let real_cols: Vec<usize> = schema
        .real_covariates
        .iter()
        .map(|name| {
            panel
                .real_cov_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("real covariate '{name}' not in panel")))
        })
        .collect::<Result<_>>()?;

    for i in 0..len {
        let pos = lo + i as i64;
        let stamp = panel.stamp_at(series, pos);
        for feat in &schema.calendar {
            let (sin, cos) = feat.encode(stamp);
            out.push(sin as f32);
            out.push(cos as f32);
        }
        if schema.holiday_flag {
            out.push(if panel.holidays.contains(&stamp.date()) {
                1.0
            } else {
                0.0
            });
        }
        for &c in &real_cols {
            if pos < 0 || pos >= s.len() as i64 {
                return Err(Error::Data(format!(
                    "real covariate '{}' requested at position {pos} beyond known range of series '{}' (len {}); only calendar features extend into the future",
                    panel.real_cov_names[c], s.id, s.len()
                )));
            }
            out.push(s.real_covs[c][pos as usize]);
        }
    }
    Ok(out)
}

/// Embedding codes for one series, ordered per `schema.embedded`.
pub fn embed_codes(
    panel: &SeriesPanel,
    schema: &CovariateSchema,
    series: usize,
) -> Result<Vec<usize>> {
    schema
        .embedded
        .iter()
        .map(|emb| match emb.source {
            EmbedSource::SeriesId => Ok(series),
            EmbedSource::StaticColumn(c) => {
                panel.static_codes[series].get(c).copied().ok_or_else(|| {
                    Error::Index {
                        what: format!("static column for feature '{}'", emb.name),
                        index: c,
                        bound: panel.static_codes[series].len(),
                    }
                })
            }
        })
        .collect()
}

/// Per-series scaling by `1 + mean(|values|)`: strictly positive, invariant
/// under sign flips, and the +1 keeps all-zero cold-start series unscaled.
pub fn scale_series(values: &[f32]) -> (Vec<f32>, f64) {
    let scale = series_scale(values);
    let inv = (1.0 / scale) as f32;
    (values.iter().map(|&v| v * inv).collect(), scale)
}

/// The scale alone: `1 + mean(|values|)`; an empty range scales by 1.
pub fn series_scale(values: &[f32]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    let sum: f64 = values.iter().map(|&v| (v as f64).abs()).sum();
    1.0 + sum / values.len() as f64
}

/// Undo `scale_series`.
pub fn unscale(values: &[f32], scale: f64) -> Vec<f32> {
    values.iter().map(|&v| (v as f64 * scale) as f32).collect()
}

/// Scales over each series' training range (values strictly before
/// `before`, or the whole series when `None`).
pub fn training_scales(panel: &SeriesPanel, before: Option<Stamp>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(panel.len());
    for (idx, s) in panel.series.iter().enumerate() {
        let hi = match before {
            Some(stamp) => {
                let local = panel.local_index(idx, stamp)?;
                local.clamp(0, s.len() as i64) as usize
            }
            None => s.len(),
        };
        out.push(series_scale(&s.values[..hi]));
    }
    Ok(out)
}

/// One (input range, future covariates, target range) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub series: usize,
    /// Series-local index of the first target position.
    pub target_start: i64,
    /// Scaled input values, length `input_len`, zero-padded on the left.
    pub input: Vec<f32>,
    /// `[input_len × numeric_width]`; padded rows are all zero.
    pub input_covs: Vec<f32>,
    /// `[horizon × numeric_width]`.
    pub future_covs: Vec<f32>,
    /// Embedding codes per `schema.embedded`.
    pub codes: Vec<usize>,
    /// Scaled targets, length `horizon`.
    pub targets: Vec<f32>,
    pub scale: f64,
    /// Zero-padded input positions; nonzero marks a short-history window.
    pub padded: usize,
}

/// Extraction result; `skipped` counts series that produced no window
/// (typically shorter than the horizon).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub windows: Vec<TrainingWindow>,
    pub skipped: usize,
}

/// Inclusive-exclusive bounds on *target* timestamps. Windows whose target
/// range crosses either boundary are excluded, so splits partition time.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TimeRange {
    pub min_target: Option<Stamp>,
    pub max_target_exclusive: Option<Stamp>,
}

impl TimeRange {
    pub fn all() -> Self {
        TimeRange::default()
    }

    pub fn before(stamp: Stamp) -> Self {
        TimeRange {
            min_target: None,
            max_target_exclusive: Some(stamp),
        }
    }

    pub fn from(stamp: Stamp) -> Self {
        TimeRange {
            min_target: Some(stamp),
            max_target_exclusive: None,
        }
    }
}

/// Sliding windows per series. Targets start at series-local index `s`,
/// stepping by `stride`; a series provides unpadded windows whenever it is
/// long enough, otherwise a single left-zero-padded window with all the
/// history it has.
pub fn make_windows(
    panel: &SeriesPanel,
    schema: &CovariateSchema,
    scales: &[f64],
    input_len: usize,
    horizon: usize,
    stride: usize,
    range: &TimeRange,
) -> Result<WindowSet> {
    if input_len == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "input length {input_len}, horizon {horizon} and stride {stride} must be positive"
        )));
    }
    if scales.len() != panel.len() {
        return Err(Error::Config(format!(
            "{} scales for {} series",
            scales.len(),
            panel.len()
        )));
    }
    schema.validate(panel)?;

    let mut windows = Vec::new();
    let mut skipped = 0usize;

    for (idx, s) in panel.series.iter().enumerate() {
        let len = s.len() as i64;
        if len < horizon as i64 + 1 {
            skipped += 1;
            continue;
        }
        // No padded windows when the history suffices; otherwise one window
        // holding everything the series has.
        let mut first = (input_len as i64).min(len - horizon as i64);
        let mut last = len - horizon as i64;
        if let Some(min_t) = range.min_target {
            let lo = panel.local_index(idx, min_t)?;
            first = first.max(lo);
        }
        if let Some(max_t) = range.max_target_exclusive {
            let hi = panel.local_index(idx, max_t)?;
            last = last.min(hi - horizon as i64);
        }
        let mut produced = false;
        let mut start = first;
        while start <= last {
            windows.push(cut_window(
                panel, schema, scales, idx, start, input_len, horizon,
            )?);
            produced = true;
            start += stride as i64;
        }
        if !produced {
            skipped += 1;
        }
    }

    Ok(WindowSet { windows, skipped })
}

/// A single window with targets starting at series-local `target_start`.
pub fn cut_window(
    panel: &SeriesPanel,
    schema: &CovariateSchema,
    scales: &[f64],
    series: usize,
    target_start: i64,
    input_len: usize,
    horizon: usize,
) -> Result<TrainingWindow> {
    let s = &panel.series[series];
    if target_start < 0 || target_start + horizon as i64 > s.len() as i64 {
        return Err(Error::Data(format!(
            "target range [{target_start}, {}) outside series '{}' of length {}",
            target_start + horizon as i64,
            s.id,
            s.len()
        )));
    }
    let scale = scales[series];
    let inv = (1.0 / scale) as f32;
    let width = schema.numeric_width();

    let padded = (input_len as i64 - target_start).max(0) as usize;
    let observed = input_len - padded;
    let in_lo = target_start - observed as i64;

    let mut input = vec![0.0f32; input_len];
    for (k, pos) in (in_lo..target_start).enumerate() {
        input[padded + k] = s.values[pos as usize] * inv;
    }
    let mut input_covs = vec![0.0f32; input_len * width];
    if observed > 0 {
        let rows = featurize(panel, schema, series, in_lo, observed)?;
        input_covs[padded * width..].copy_from_slice(&rows);
    }
    let future_covs = featurize(panel, schema, series, target_start, horizon)?;
    let codes = embed_codes(panel, schema, series)?;
    let targets: Vec<f32> = (0..horizon)
        .map(|w| s.values[(target_start + w as i64) as usize] * inv)
        .collect();

    Ok(TrainingWindow {
        series,
        target_start,
        input,
        input_covs,
        future_covs,
        codes,
        targets,
        scale,
        padded,
    })
}

/// History-only window used at forecast time: input ends at `origin`
/// (inclusive), targets need not exist. Returns the scaled input, the
/// covariate rows, and the padding count.
pub fn cut_forecast_input(
    panel: &SeriesPanel,
    schema: &CovariateSchema,
    series: usize,
    origin_pos: i64,
    input_len: usize,
    scale: f64,
) -> Result<(Vec<f32>, Vec<f32>, usize)> {
    let s = &panel.series[series];
    let next = origin_pos + 1; // first forecast position
    if next < 0 || next > s.len() as i64 {
        return Err(Error::Data(format!(
            "origin position {origin_pos} outside series '{}' of length {}",
            s.id,
            s.len()
        )));
    }
    let inv = (1.0 / scale) as f32;
    let width = schema.numeric_width();
    let padded = (input_len as i64 - next).max(0) as usize;
    let observed = input_len - padded;
    let in_lo = next - observed as i64;

    let mut input = vec![0.0f32; input_len];
    for (k, pos) in (in_lo..next).enumerate() {
        input[padded + k] = s.values[pos as usize] * inv;
    }
    let mut covs = vec![0.0f32; input_len * width];
    if observed > 0 {
        let rows = featurize(panel, schema, series, in_lo, observed)?;
        covs[padded * width..].copy_from_slice(&rows);
    }
    Ok((input, covs, padded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::parse_stamp;

    fn daily_panel(lengths: &[usize]) -> SeriesPanel {
        let start = parse_stamp("2020-01-01").unwrap();
        let mut b = PanelBuilder::new(Granularity::Daily).static_columns(["category"]);
        for (i, &len) in lengths.iter().enumerate() {
            let values: Vec<f32> = (0..len).map(|t| t as f32 + 1.0).collect();
            b.add_series(&format!("s{i:02}"), start, values, &["a"], vec![]);
        }
        b.build().unwrap()
    }

    #[test]
    fn builder_smoke_two_series() {
        let panel = daily_panel(&[10, 10]);
        assert_eq!(panel.len(), 2);
        assert_eq!(panel.static_vocabs[0], vec![String::from("a")]);
        assert_eq!(panel.series_index("s01"), Some(1));
        assert_eq!(panel.series_index("nope"), None);
    }

    #[test]
    fn builder_rejects_duplicates_and_nan() {
        let start = parse_stamp("2020-01-01").unwrap();
        let mut b = PanelBuilder::new(Granularity::Daily);
        b.add_series("x", start, vec![1.0], &[], vec![]);
        b.add_series("x", start, vec![1.0], &[], vec![]);
        assert!(b.build().is_err());

        let mut b = PanelBuilder::new(Granularity::Daily);
        b.add_series("x", start, vec![1.0, f32::NAN], &[], vec![]);
        assert!(b.build().is_err());
    }

    #[test]
    fn scale_rules() {
        // all zeros -> scale 1, values unchanged
        let (scaled, scale) = scale_series(&[0.0, 0.0, 0.0]);
        assert_eq!(scale, 1.0);
        assert_eq!(scaled, vec![0.0, 0.0, 0.0]);

        // constant 9 -> scale 10, scaled 0.9
        let (scaled, scale) = scale_series(&[9.0, 9.0]);
        assert_eq!(scale, 10.0);
        assert!((scaled[0] - 0.9).abs() < 1e-7);

        // sign-flip invariance
        let (_, s1) = scale_series(&[3.0, -4.0]);
        let (_, s2) = scale_series(&[-3.0, 4.0]);
        assert_eq!(s1, s2);
        assert!(s1 > 0.0);
    }

    #[test]
    fn scale_round_trip() {
        let values = [1.5f32, -2.25, 1000.0, 0.0, 3.333];
        let (scaled, scale) = scale_series(&values);
        let back = unscale(&scaled, scale);
        for (orig, rt) in values.iter().zip(&back) {
            assert!((orig - rt).abs() <= 1e-6 * orig.abs().max(1.0));
        }
    }

    #[test]
    fn window_count_matches_enumeration() {
        // length 10, input 4, horizon 2, stride 1 -> 10 - (4+2) + 1 = 5
        let panel = daily_panel(&[10]);
        let schema = CovariateSchema::default_for(&panel, false);
        let scales = training_scales(&panel, None).unwrap();
        let ws = make_windows(&panel, &schema, &scales, 4, 2, 1, &TimeRange::all()).unwrap();
        assert_eq!(ws.windows.len(), 5);
        assert_eq!(ws.skipped, 0);
        assert!(ws.windows.iter().all(|w| w.padded == 0));
    }

    #[test]
    fn short_series_padded_with_zeros() {
        // length 3 history with input_len 8 -> 5 leading zeros
        let panel = daily_panel(&[3]);
        let schema = CovariateSchema::default_for(&panel, false);
        let scales = training_scales(&panel, None).unwrap();
        let (input, _covs, padded) =
            cut_forecast_input(&panel, &schema, 0, 2, 8, scales[0]).unwrap();
        assert_eq!(padded, 5);
        assert_eq!(&input[..5], &[0.0; 5]);
        assert!(input[5] > 0.0);
    }

    #[test]
    fn stride_equal_horizon_gives_disjoint_targets() {
        let panel = daily_panel(&[20]);
        let schema = CovariateSchema::default_for(&panel, false);
        let scales = training_scales(&panel, None).unwrap();
        let ws = make_windows(&panel, &schema, &scales, 4, 3, 3, &TimeRange::all()).unwrap();
        let starts: Vec<i64> = ws.windows.iter().map(|w| w.target_start).collect();
        for pair in starts.windows(2) {
            assert!(pair[1] - pair[0] >= 3);
        }
    }

    #[test]
    fn series_shorter_than_horizon_is_skipped() {
        let panel = daily_panel(&[2, 10]);
        let schema = CovariateSchema::default_for(&panel, false);
        let scales = training_scales(&panel, None).unwrap();
        let ws = make_windows(&panel, &schema, &scales, 4, 3, 1, &TimeRange::all()).unwrap();
        assert_eq!(ws.skipped, 1);
        assert!(ws.windows.iter().all(|w| w.series == 1));
    }

    #[test]
    fn split_excludes_windows_crossing_boundary() {
        let panel = daily_panel(&[30]);
        let schema = CovariateSchema::default_for(&panel, false);
        let scales = training_scales(&panel, None).unwrap();
        let boundary = panel.stamp_at(0, 24);
        let train = make_windows(
            &panel,
            &schema,
            &scales,
            4,
            4,
            1,
            &TimeRange::before(boundary),
        )
        .unwrap();
        let eval = make_windows(
            &panel,
            &schema,
            &scales,
            4,
            4,
            1,
            &TimeRange::from(boundary),
        )
        .unwrap();
        // training targets all end before position 24
        for w in &train.windows {
            assert!(w.target_start + 4 <= 24);
        }
        // evaluation targets all start at or after 24
        for w in &eval.windows {
            assert!(w.target_start >= 24);
        }
        // splits partition time: max train target stamp < min eval input end
        let max_train = train
            .windows
            .iter()
            .map(|w| w.target_start + 3)
            .max()
            .unwrap();
        let min_eval_input_end = eval
            .windows
            .iter()
            .map(|w| w.target_start - 1)
            .min()
            .unwrap();
        assert!(max_train < min_eval_input_end + 4);
        assert!(panel.stamp_at(0, max_train) < panel.stamp_at(0, min_eval_input_end + 1));
    }

    #[test]
    fn no_target_leakage_into_inputs() {
        // poison the target range with NaN markers; inputs must stay finite
        let mut panel = daily_panel(&[20]);
        let schema = CovariateSchema::default_for(&panel, false);
        let scales = training_scales(&panel, Some(panel.stamp_at(0, 14))).unwrap();
        for t in 14..20 {
            panel.series[0].values[t] = f32::NAN;
        }
        let ws = make_windows(
            &panel,
            &schema,
            &scales,
            6,
            2,
            1,
            &TimeRange::before(panel.stamp_at(0, 14)),
        )
        .unwrap();
        assert!(!ws.windows.is_empty());
        for w in &ws.windows {
            assert!(w.input.iter().all(|v| v.is_finite()));
            assert!(w.input_covs.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn featurize_is_pure_and_granularity_dependent() {
        let panel = daily_panel(&[10]);
        let schema = CovariateSchema::default_for(&panel, false);
        // daily default: day-of-week + day-of-year
        assert_eq!(schema.calendar.len(), 2);
        let a = featurize(&panel, &schema, 0, 0, 10).unwrap();
        let b = featurize(&panel, &schema, 0, 0, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hourly_and_monthly_calendar_defaults() {
        assert_eq!(
            CalendarFeature::defaults(Granularity::Hourly),
            &[
                CalendarFeature::HourOfDay,
                CalendarFeature::DayOfWeek,
                CalendarFeature::DayOfMonth
            ]
        );
        assert_eq!(
            CalendarFeature::defaults(Granularity::Monthly),
            &[CalendarFeature::MonthOfYear]
        );
    }

    #[test]
    fn real_covariates_do_not_extend_into_the_future() {
        let start = parse_stamp("2020-01-01").unwrap();
        let mut b = PanelBuilder::new(Granularity::Daily).real_covariates(["price"]);
        b.add_series(
            "x",
            start,
            vec![1.0, 2.0, 3.0, 4.0],
            &[],
            vec![vec![9.0, 9.0, 9.0, 9.0]],
        );
        let panel = b.build().unwrap();
        let schema = CovariateSchema::default_for(&panel, false);
        assert!(featurize(&panel, &schema, 0, 0, 4).is_ok());
        assert!(featurize(&panel, &schema, 0, 2, 4).is_err());
    }

    #[test]
    fn embed_dim_rule() {
        assert_eq!(CovariateSchema::embed_dim(1), 1);
        assert_eq!(CovariateSchema::embed_dim(50), 8);
        assert_eq!(CovariateSchema::embed_dim(10_000), 20);
    }
}
