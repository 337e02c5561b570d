//! Checkpoint format behavior: bitwise round trips, integrity checking and
//! version guarding.

use deeptcn::checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint,
};
use deeptcn::synthetic::seasonal_daily_panel;
use deeptcn_core::heads::{ForecastValues, HeadKind};
use deeptcn_core::model::ModelSpec;
use deeptcn_core::panel::CovariateSchema;
use deeptcn_core::train::{train, TrainConfig, TrainedModel};

fn quick_model(seed: u64) -> (deeptcn_core::panel::SeriesPanel, TrainedModel<f32>) {
    let panel = seasonal_daily_panel(seed, 8, 56);
    let schema = CovariateSchema::default_for(&panel, true);
    let spec = ModelSpec {
        input_len: 14,
        horizon: 7,
        kernel: 2,
        dilations: vec![1, 2],
        channels: 0,
        latent: 0,
        head: HeadKind::default_quantile(),
        seed,
    };
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let outcome = train(&panel, &spec, &schema, &cfg).unwrap();
    (panel, outcome.trained)
}

fn forecast_bits(tm: &mut TrainedModel<f32>, panel: &deeptcn_core::panel::SeriesPanel) -> Vec<u64> {
    let ids: Vec<&str> = panel.series.iter().map(|s| s.id.as_str()).collect();
    let origin = panel.stamp_at(0, 55);
    let fcs = tm.forecast(panel, &ids, origin).unwrap();
    fcs.iter()
        .flat_map(|fc| match &fc.values {
            ForecastValues::Quantile { rows, .. } => rows
                .iter()
                .flatten()
                .map(|v| v.to_bits())
                .collect::<Vec<u64>>(),
            ForecastValues::Gaussian { mean, std } => mean
                .iter()
                .chain(std)
                .map(|v| v.to_bits())
                .collect::<Vec<u64>>(),
        })
        .collect()
}

#[test]
fn round_trip_preserves_forecasts_bitwise() {
    let (panel, mut tm) = quick_model(404);
    let before = forecast_bits(&mut tm, &panel);

    let bytes = checkpoint_bytes(&tm).unwrap();
    let mut restored = checkpoint_from_bytes(&bytes).unwrap();
    let after = forecast_bits(&mut restored, &panel);
    assert_eq!(before, after);

    // save -> load -> save is byte-identical
    let bytes2 = checkpoint_bytes(&restored).unwrap();
    assert_eq!(bytes, bytes2);
}

#[test]
fn file_round_trip() {
    let (panel, tm) = quick_model(405);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.dtcn");
    save_checkpoint(&tm, &path).unwrap();
    let mut loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.series_ids, tm.series_ids);
    assert_eq!(loaded.scales, tm.scales);
    assert_eq!(loaded.meta, tm.meta);
    let _ = forecast_bits(&mut loaded, &panel);
}

#[test]
fn corrupting_one_payload_byte_fails_integrity() {
    let (_, tm) = quick_model(406);
    let bytes = checkpoint_bytes(&tm).unwrap();
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16 + header_len;
    let mut corrupted = bytes.clone();
    corrupted[payload_start + 10] ^= 0x01;
    let err = checkpoint_from_bytes(&corrupted).unwrap_err();
    assert!(err.to_string().contains("integrity"), "{err}");
}

#[test]
fn future_version_is_a_version_error_not_a_crash() {
    let (_, tm) = quick_model(407);
    let mut bytes = checkpoint_bytes(&tm).unwrap();
    bytes[4..8].copy_from_slice(&999u32.to_le_bytes());
    let err = checkpoint_from_bytes(&bytes).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("version 999"), "{msg}");
}

#[test]
fn truncation_is_reported_against_the_header() {
    let (_, tm) = quick_model(408);
    let bytes = checkpoint_bytes(&tm).unwrap();
    let cut = &bytes[..bytes.len() - 64];
    let err = checkpoint_from_bytes(cut).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");

    let err = checkpoint_from_bytes(b"nope").unwrap_err();
    assert!(err.to_string().contains("magic"), "{err}");
}
