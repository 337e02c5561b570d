//! On-disk formats: prepared panel directories, per-epoch history CSV, and
//! forecast CSV dumps.
//!
//! A prepared panel is a directory holding `panel.json` (schema, ids,
//! granularity, vocabularies, holidays) and `values.bin` (little-endian
//! 32-bit floats, series-major: each series' values followed by its real
//! covariate columns).

use std::path::Path;

use deeptcn_core::calendar::{self, Granularity};
use deeptcn_core::heads::{ForecastResult, ForecastValues};
use deeptcn_core::panel::{PanelBuilder, SeriesPanel};
use deeptcn_core::train::EpochRecord;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

const PANEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PanelHeader {
    format_version: u32,
    granularity: Granularity,
    static_names: Vec<String>,
    real_cov_names: Vec<String>,
    holidays: Vec<String>,
    series: Vec<SeriesHeader>,
}

#[derive(Serialize, Deserialize)]
struct SeriesHeader {
    id: String,
    start: String,
    len: usize,
    statics: Vec<String>,
}

/// Write a panel directory (`panel.json` + `values.bin`).
pub fn save_panel(panel: &SeriesPanel, dir: &Path) -> AppResult<()> {
    std::fs::create_dir_all(dir)?;
    let header = PanelHeader {
        format_version: PANEL_FORMAT_VERSION,
        granularity: panel.granularity,
        static_names: panel.static_names.clone(),
        real_cov_names: panel.real_cov_names.clone(),
        holidays: panel.holidays.iter().map(|d| d.to_string()).collect(),
        series: panel
            .series
            .iter()
            .enumerate()
            .map(|(i, s)| SeriesHeader {
                id: s.id.clone(),
                start: calendar::format_stamp(s.start, panel.granularity),
                len: s.len(),
                statics: panel.static_codes[i]
                    .iter()
                    .enumerate()
                    .map(|(c, &code)| panel.static_vocabs[c][code].clone())
                    .collect(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&header)?;
    std::fs::write(dir.join("panel.json"), json)?;

    let mut bytes: Vec<u8> = Vec::new();
    for s in &panel.series {
        for v in &s.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for col in &s.real_covs {
            for v in col {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::write(dir.join("values.bin"), bytes)?;
    Ok(())
}

/// Read a panel directory written by [`save_panel`].
pub fn load_panel_dir(dir: &Path) -> AppResult<SeriesPanel> {
    let json = std::fs::read_to_string(dir.join("panel.json"))
        .map_err(|e| AppError::Data(format!("{}: {e}", dir.join("panel.json").display())))?;
    let header: PanelHeader = serde_json::from_str(&json)?;
    if header.format_version != PANEL_FORMAT_VERSION {
        return Err(AppError::Data(format!(
            "panel format version {} unsupported (expected {PANEL_FORMAT_VERSION})",
            header.format_version
        )));
    }
    let bytes = std::fs::read(dir.join("values.bin"))?;
    let n_cov = header.real_cov_names.len();
    let total: usize = header.series.iter().map(|s| s.len * (1 + n_cov)).sum();
    if bytes.len() != total * 4 {
        return Err(AppError::Data(format!(
            "values.bin holds {} bytes, header implies {}",
            bytes.len(),
            total * 4
        )));
    }

    let mut floats = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut holidays = Vec::new();
    for d in &header.holidays {
        holidays.push(calendar::parse_date(d).map_err(AppError::Core)?);
    }
    let mut builder = PanelBuilder::new(header.granularity)
        .static_columns(header.static_names.clone())
        .real_covariates(header.real_cov_names.clone())
        .holidays(holidays);
    for s in &header.series {
        let start = calendar::parse_stamp(&s.start).map_err(AppError::Core)?;
        let values: Vec<f32> = floats.by_ref().take(s.len).collect();
        let covs: Vec<Vec<f32>> = (0..n_cov)
            .map(|_| floats.by_ref().take(s.len).collect())
            .collect();
        let statics: Vec<&str> = s.statics.iter().map(String::as_str).collect();
        builder.add_series(&s.id, start, values, &statics, covs);
    }
    builder.build().map_err(AppError::Core)
}

/// Per-epoch history CSV written next to checkpoints.
pub fn save_history(history: &[EpochRecord], head_label: &str, path: &Path) -> AppResult<()> {
    let mut out = String::from(match head_label {
        "gaussian" => "epoch,train_nll,train_l1,selection_nll\n",
        _ => "epoch,train_quantile_loss,train_l1,selection_quantile_loss\n",
    });
    for rec in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            rec.epoch, rec.train_loss, rec.train_l1, rec.selection_loss
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Forecast dump: `series_id,origin,step,level_or_param,value`.
pub fn save_forecasts(
    forecasts: &[ForecastResult],
    granularity: Granularity,
    path: &Path,
) -> AppResult<()> {
    let mut out = String::from("series_id,origin,step,level_or_param,value\n");
    for fc in forecasts {
        let origin = calendar::format_stamp(fc.origin, granularity);
        match &fc.values {
            ForecastValues::Quantile { levels, rows } => {
                for (step, row) in rows.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        out.push_str(&format!(
                            "{},{},{},q{},{}\n",
                            fc.series_id,
                            origin,
                            step + 1,
                            levels[j],
                            v
                        ));
                    }
                }
            }
            ForecastValues::Gaussian { mean, std } => {
                for step in 0..mean.len() {
                    out.push_str(&format!(
                        "{},{},{},mu,{}\n",
                        fc.series_id,
                        origin,
                        step + 1,
                        mean[step]
                    ));
                    out.push_str(&format!(
                        "{},{},{},sigma,{}\n",
                        fc.series_id,
                        origin,
                        step + 1,
                        std[step]
                    ));
                }
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use deeptcn_core::calendar::parse_stamp;
    use deeptcn_core::panel::Granularity;

    #[test]
    fn panel_round_trip_is_lossless() {
        let start = parse_stamp("2020-05-01T00").unwrap();
        let mut b = PanelBuilder::new(Granularity::Hourly)
            .static_columns(["kind"])
            .real_covariates(["temp"]);
        b.add_series(
            "x1",
            start,
            vec![1.5, 2.25, -3.125, 0.0],
            &["a"],
            vec![vec![20.0, 21.5, 19.75, 18.0]],
        );
        b.add_series("x2", start, vec![9.0, 8.0, 7.0, 6.5], &["b"], vec![vec![
            1.0, 2.0, 3.0, 4.0,
        ]]);
        let panel = b.build().unwrap();

        let dir = tempfile::tempdir().unwrap();
        save_panel(&panel, dir.path()).unwrap();
        let loaded = load_panel_dir(dir.path()).unwrap();
        assert_eq!(panel, loaded);

        // write -> read -> write produces byte-identical files
        let dir2 = tempfile::tempdir().unwrap();
        save_panel(&loaded, dir2.path()).unwrap();
        let a = std::fs::read(dir.path().join("values.bin")).unwrap();
        let b2 = std::fs::read(dir2.path().join("values.bin")).unwrap();
        assert_eq!(a, b2);
        let ja = std::fs::read(dir.path().join("panel.json")).unwrap();
        let jb = std::fs::read(dir2.path().join("panel.json")).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn truncated_values_bin_is_rejected() {
        let start = parse_stamp("2020-05-01").unwrap();
        let mut b = PanelBuilder::new(Granularity::Daily);
        b.add_series("x", start, vec![1.0, 2.0, 3.0], &[], vec![]);
        let panel = b.build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_panel(&panel, dir.path()).unwrap();
        let bin = dir.path().join("values.bin");
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&bin, bytes).unwrap();
        assert!(load_panel_dir(dir.path()).is_err());
    }
}
