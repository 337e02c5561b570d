//! Acceptance gate: one test per criterion, each printing a PASS line with
//! the measured numbers (visible under `--nocapture`).

use std::time::Instant;

use deeptcn::bench::{self, EvalProtocol, Pooling};
use deeptcn::checkpoint::checkpoint_bytes;
use deeptcn::prepare;
use deeptcn::synthetic::{
    electricity_like_panel, long_memory_panel, long_memory_schema, parts_like_panel,
    seasonal_daily_panel,
};
use deeptcn_core::calendar::step;
use deeptcn_core::gradcheck::op_suite;
use deeptcn_core::heads::{ForecastValues, HeadKind};
use deeptcn_core::layers::{
    receptive_field, Activation, BufStore, Encoder, Mode, ParamStore, Session,
};
use deeptcn_core::loss::quantile_loss;
use deeptcn_core::metrics;
use deeptcn_core::model::{composite_grad_check, ModelSpec};
use deeptcn_core::panel::{CovariateSchema, SeriesPanel};
use deeptcn_core::rng::RngState;
use deeptcn_core::tape::Tape;
use deeptcn_core::tensor::Tensor;
use deeptcn_core::train::{train, TrainConfig};

const SECTION_ARCHITECTURES: [&[usize]; 3] = [
    &[1, 2, 4, 8, 16],
    &[1, 2, 4, 8, 16, 32],
    &[1, 2, 4, 8, 16, 20, 32],
];

#[test]
fn criterion_01_gradient_oracle_suite() {
    let started = Instant::now();
    let tolerance = 1e-6;

    let checks = op_suite(20240601, 20).unwrap();
    let mut worst: f64 = 0.0;
    assert!(
        checks.iter().any(|c| c.name == "causal_conv")
            && checks.iter().any(|c| c.name == "batchnorm_train")
            && checks.iter().any(|c| c.name == "dense")
            && checks.iter().any(|c| c.name == "embedding")
            && checks.iter().any(|c| c.name == "softplus")
            && checks.iter().any(|c| c.name == "relu")
            && checks.iter().any(|c| c.name == "quantile_loss")
            && checks.iter().any(|c| c.name == "gaussian_nll"),
        "missing required operations in the suite"
    );
    for c in &checks {
        assert!(
            c.max_rel_err < tolerance,
            "{}: {:.3e} over 20 configurations",
            c.name,
            c.max_rel_err
        );
        worst = worst.max(c.max_rel_err);
    }
    // full encoder-decoder composite, both heads, both modes, 20 seeds
    for seed in 0..20u64 {
        for (head, mode) in [
            (HeadKind::default_quantile(), Mode::Train),
            (HeadKind::default_quantile(), Mode::Infer),
            (HeadKind::Gaussian, Mode::Train),
            (HeadKind::Gaussian, Mode::Infer),
        ] {
            let err = composite_grad_check(seed, head, mode).unwrap();
            assert!(err < tolerance, "composite seed {seed}: {err:.3e}");
            worst = worst.max(err);
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "gradient suite took {elapsed:.1}s");
    println!(
        "PASS criterion 1: gradient oracle suite, worst rel err {worst:.3e} < 1e-6, {elapsed:.1}s"
    );
}

fn build_encoder(dilations: &[usize], seed: u64) -> (ParamStore<f64>, BufStore<f64>, Encoder) {
    let mut params = ParamStore::new();
    let mut buffers = BufStore::new();
    let mut rng = RngState::new(seed);
    let encoder = Encoder::init(&mut params, &mut buffers, &mut rng, 2, 3, 2, dilations, 168)
        .unwrap();
    (params, buffers, encoder)
}

fn encoder_sequence(
    params: &ParamStore<f64>,
    buffers: &BufStore<f64>,
    encoder: &Encoder,
    input: &Tensor<f64>,
) -> Vec<f64> {
    let mut bufs = buffers.clone();
    let mut tape = Tape::new();
    let mut sess = Session::new(&mut tape, params, &mut bufs, Mode::Infer);
    let x = sess.tape.constant(input.clone());
    let out = encoder.forward_sequence(&mut sess, x).unwrap();
    tape.value(out).data().to_vec()
}

#[test]
fn criterion_02_causality_and_receptive_field() {
    let started = Instant::now();
    let input_len = 168usize;

    for (ai, dilations) in SECTION_ARCHITECTURES.iter().enumerate() {
        // bitwise: no future-to-past influence through the production path
        let (params, buffers, encoder) = build_encoder(dilations, 50 + ai as u64);
        let mut rng = RngState::new(60 + ai as u64);
        let data: Vec<f64> = (0..2 * input_len).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let base = Tensor::new(vec![1, 2, input_len], data).unwrap();
        let base_out = encoder_sequence(&params, &buffers, &encoder, &base);
        for &bump in &[3usize, 80, input_len - 1] {
            let mut perturbed = base.clone();
            for c in 0..2 {
                perturbed.data_mut()[c * input_len + bump] += 1.0;
            }
            let out = encoder_sequence(&params, &buffers, &encoder, &perturbed);
            for c in 0..3 {
                for t in 0..bump {
                    let i = c * input_len + t;
                    assert_eq!(
                        base_out[i].to_bits(),
                        out[i].to_bits(),
                        "{dilations:?}: bump at {bump} reached t={t}"
                    );
                }
            }
        }

        // exact receptive field in the linear configuration
        let rf = receptive_field(dilations, 2, 2).unwrap();
        assert!(rf <= input_len);
        let (params, buffers, mut encoder) = build_encoder(dilations, 70 + ai as u64);
        encoder.options.activation = Activation::Identity;
        encoder.options.batch_norm = false;
        let base_out = encoder_sequence(&params, &buffers, &encoder, &base);
        let base_h: Vec<f64> = (0..3)
            .map(|c| base_out[c * input_len + input_len - 1])
            .collect();
        for t in 0..input_len {
            let mut perturbed = base.clone();
            perturbed.data_mut()[t] += 1.0;
            let out = encoder_sequence(&params, &buffers, &encoder, &perturbed);
            let delta: f64 = (0..3)
                .map(|c| (out[c * input_len + input_len - 1] - base_h[c]).abs())
                .fold(0.0, f64::max);
            if t >= input_len - rf {
                assert!(delta > 0.0, "{dilations:?}: no influence inside rf at t={t}");
            } else {
                assert!(
                    delta == 0.0,
                    "{dilations:?}: influence {delta:e} outside rf {rf} at t={t}"
                );
            }
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "causality suite took {elapsed:.1}s");
    println!(
        "PASS criterion 2: causality bitwise and receptive fields exact for {:?}, {elapsed:.1}s",
        SECTION_ARCHITECTURES
            .iter()
            .map(|d| receptive_field(d, 2, 2).unwrap())
            .collect::<Vec<_>>()
    );
}

#[test]
fn criterion_03_metric_fixtures() {
    // hand-computed values on small fixtures, to 1e-9
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;

    assert!(close(metrics::ql(0.5, &[10.0], &[6.0]).unwrap(), 0.2));
    assert!(close(
        metrics::ql(0.9, &[5.0, 10.0], &[10.0, 8.0]).unwrap(),
        // (0.1*5 + 0.9*2) / 15
        2.3 / 15.0
    ));
    assert!(close(metrics::smape(&[10.0, 10.0], &[30.0, 10.0]).unwrap(), 0.5));
    assert!(close(metrics::smape(&[3.0], &[1.0]).unwrap(), 1.0));
    assert!(close(metrics::nrmse(&[2.0, 4.0], &[4.0, 2.0]).unwrap(), 2.0 / 3.0));
    assert!(close(metrics::nrmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0));
    let mase = metrics::mase(
        &[vec![0.0, 1.0]],
        &[vec![1.0, 0.0]],
        &[vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]],
        1,
    )
    .unwrap();
    assert!(close(mase.value, 1.0));
    let mase = metrics::mase(
        &[vec![4.0, 6.0]],
        &[vec![5.0, 5.0]],
        &[vec![1.0, 3.0, 1.0, 5.0]], // |diffs| at lag 2: 0, 2 -> denom 1
        2,
    )
    .unwrap();
    assert!(close(mase.value, 1.0));

    // QL at 0.5 equals half the sum of absolute errors over the sum of |y|
    let mut rng = RngState::new(303);
    for _ in 0..100 {
        let n = 1 + rng.below(10);
        let y: Vec<f64> = (0..n).map(|_| rng.uniform(-8.0, 8.0)).collect();
        if y.iter().all(|v| *v == 0.0) {
            continue;
        }
        let p: Vec<f64> = (0..n).map(|_| rng.uniform(-8.0, 8.0)).collect();
        let lhs = metrics::ql(0.5, &y, &p).unwrap();
        let sum_ae: f64 = y.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        let sum_abs: f64 = y.iter().map(|v| v.abs()).sum();
        assert!((lhs - 0.5 * sum_ae / sum_abs).abs() < 1e-9);
    }
    println!("PASS criterion 3: metric fixtures to 1e-9 and QL50 = 0.5*SumAE/Sum|y| on 100 fixtures");
}

#[test]
fn criterion_04_pinball_minimizer_is_empirical_quantile() {
    let mut rng = RngState::new(404);
    for trial in 0..50 {
        let n = 2 + rng.below(49);
        let sample: Vec<f64> = (0..n).map(|_| rng.uniform(-10.0, 10.0)).collect();
        for q in [0.1, 0.5, 0.9] {
            // brute-force scan of the constant predictor over sample values
            let total = |c: f64| -> f64 {
                sample.iter().map(|&y| quantile_loss(y, c, q).unwrap()).sum()
            };
            let mut best = f64::INFINITY;
            let mut best_c = f64::NAN;
            for &c in &sample {
                let l = total(c);
                if l < best {
                    best = l;
                    best_c = c;
                }
            }
            // the canonical empirical q-quantile: the ceil(n*q)-th order stat
            let mut sorted = sample.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let k = ((n as f64 * q).ceil() as usize).clamp(1, n);
            let canonical = sorted[k - 1];
            let canonical_loss = total(canonical);
            assert!(
                (best - canonical_loss).abs() < 1e-9,
                "trial {trial} q={q}: scan found {best_c} (loss {best}), quantile {canonical} (loss {canonical_loss})"
            );
        }
    }
    println!("PASS criterion 4: pinball-minimizing constants are empirical quantiles (50 samples, q in {{0.1, 0.5, 0.9}})");
}

/// Train boundary covering everything before the final `holdout` steps.
fn holdout_boundary(panel: &SeriesPanel, holdout: usize) -> deeptcn_core::calendar::Stamp {
    let end = panel.end_stamp().unwrap();
    step(end, panel.granularity, -(holdout as i64) + 1)
}

/// Schema for the short synthetic daily panels: day-of-week only. Twenty
/// weeks cover a fraction of the day-of-year cycle, so that feature would
/// drift monotonically into values batch-norm running statistics never saw;
/// on panels spanning full years the cycle closes and the default applies.
fn weekly_schema(panel: &SeriesPanel) -> CovariateSchema {
    let mut schema = CovariateSchema::default_for(panel, true);
    schema
        .calendar
        .retain(|f| *f == deeptcn_core::calendar::CalendarFeature::DayOfWeek);
    schema
}

#[test]
fn criterion_05_synthetic_end_to_end_beats_naive() {
    let started = Instant::now();
    let panel = seasonal_daily_panel(505, 50, 140);
    let schema = weekly_schema(&panel);
    let spec = ModelSpec {
        input_len: 28,
        horizon: 7,
        kernel: 2,
        dilations: vec![1, 2, 4],
        channels: 0,
        latent: 0,
        head: HeadKind::default_quantile(),
        seed: 505,
    };
    let cfg = TrainConfig {
        batch_size: 64,
        learning_rate: 5e-3,
        epochs: 60,
        patience: Some(15),
        stride: 1,
        train_before: Some(holdout_boundary(&panel, 7)),
        ..TrainConfig::default()
    };
    let outcome = train(&panel, &spec, &schema, &cfg).unwrap();
    let mut tm = outcome.trained;

    let protocol = EvalProtocol {
        name: "synthetic-final-week".to_string(),
        windows: 1,
        horizon: 7,
        season: 7,
        levels: vec![0.5, 0.9],
        pooling: Pooling::Pooled,
    };
    let model_report = bench::eval_model(&mut tm, &panel, &protocol, "deeptcn", "synthetic").unwrap();
    let naive_report = bench::eval_seasonal_naive(&panel, &protocol, "synthetic").unwrap();
    let model_ql50 = model_report.metrics["ql50"];
    let naive_ql50 = naive_report.metrics["ql50"];

    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        model_ql50 <= 0.8 * naive_ql50,
        "model QL50 {model_ql50:.4} vs naive {naive_ql50:.4} (need <= 0.8x)"
    );
    assert!(elapsed < 600.0, "end-to-end run took {elapsed:.1}s");
    println!(
        "PASS criterion 5: QL50 {model_ql50:.4} <= 0.8 x naive {naive_ql50:.4} (ratio {:.3}), {:.0} epochs, {elapsed:.1}s",
        model_ql50 / naive_ql50,
        tm.meta.epochs_run
    );
}

#[test]
fn criterion_06_gaussian_calibration_coverage() {
    let started = Instant::now();
    let panel = seasonal_daily_panel(606, 50, 140);
    let schema = weekly_schema(&panel);
    let spec = ModelSpec {
        input_len: 28,
        horizon: 7,
        kernel: 2,
        dilations: vec![1, 2, 4],
        channels: 0,
        latent: 0,
        head: HeadKind::Gaussian,
        seed: 606,
    };
    let cfg = TrainConfig {
        batch_size: 64,
        learning_rate: 5e-3,
        epochs: 60,
        patience: Some(15),
        stride: 1,
        train_before: Some(holdout_boundary(&panel, 7)),
        ..TrainConfig::default()
    };
    let outcome = train(&panel, &spec, &schema, &cfg).unwrap();
    let mut tm = outcome.trained;

    // coverage of the 0.9 quantile over the held-out final week
    let end = panel.end_stamp().unwrap();
    let origin = step(end, panel.granularity, -7);
    let ids: Vec<&str> = panel.series.iter().map(|s| s.id.as_str()).collect();
    let forecasts = tm.forecast(&panel, &ids, origin).unwrap();
    let mut covered = 0usize;
    let mut total = 0usize;
    for fc in &forecasts {
        let series = panel.series_index(&fc.series_id).unwrap();
        let lo = panel.local_index(series, origin).unwrap();
        let q90 = fc.quantile(0.9).unwrap();
        for (w, &qv) in q90.iter().enumerate() {
            let actual = panel.series[series].values[(lo + 1 + w as i64) as usize] as f64;
            if actual <= qv {
                covered += 1;
            }
            total += 1;
        }
    }
    let coverage = covered as f64 / total as f64;
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        (0.85..=0.95).contains(&coverage),
        "0.9-quantile empirical coverage {coverage:.3} outside [0.85, 0.95]"
    );
    println!(
        "PASS criterion 6: 0.9-quantile coverage {coverage:.3} in [0.85, 0.95] over {total} held-out points, {elapsed:.1}s"
    );
}

#[test]
fn criterion_07_electricity_subset_beats_naive() {
    let started = Instant::now();
    let hours = 6 * 7 * 24 + 7 * 24; // six training weeks plus the eval week
    let panel = electricity_like_panel(707, 20, hours);
    let schema = CovariateSchema::default_for(&panel, true);
    let spec = ModelSpec {
        input_len: 168,
        horizon: 24,
        kernel: 2,
        dilations: vec![1, 2, 4, 8, 16, 20, 32],
        channels: 0,
        latent: 0,
        head: HeadKind::default_quantile(),
        seed: 707,
    };
    let cfg = TrainConfig {
        batch_size: 128,
        learning_rate: 1e-2,
        epochs: 30,
        patience: Some(8),
        stride: 6,
        train_before: Some(holdout_boundary(&panel, 7 * 24)),
        ..TrainConfig::default()
    };
    let outcome = train(&panel, &spec, &schema, &cfg).unwrap();
    let mut tm = outcome.trained;

    let protocol = EvalProtocol {
        name: "electricity".to_string(),
        windows: 7,
        horizon: 24,
        season: 24,
        levels: vec![0.5, 0.9],
        pooling: Pooling::Pooled,
    };
    let model_report =
        bench::eval_model(&mut tm, &panel, &protocol, "deeptcn-quantile", "electricity-like")
            .unwrap();
    let naive_report =
        bench::eval_seasonal_naive(&panel, &protocol, "electricity-like").unwrap();
    let model_ql50 = model_report.metrics["ql50"];
    let naive_ql50 = naive_report.metrics["ql50"];
    let elapsed = started.elapsed().as_secs_f64();

    assert!(
        model_ql50 < naive_ql50,
        "model QL50 {model_ql50:.4} must beat naive {naive_ql50:.4}"
    );
    println!(
        "PASS criterion 7: 20-series hourly subset, 7x24h rolling: QL50 {model_ql50:.4} < naive {naive_ql50:.4} (QL90 {:.4}), runtime {elapsed:.1}s",
        model_report.metrics["ql90"]
    );
}

#[test]
fn criterion_08_parts_filter_counts_reported() {
    let panel = parts_like_panel(808, 2674);
    let (filtered, counts) = prepare::filter_parts(&panel).unwrap();
    assert_eq!(counts.input, 2674);
    assert_eq!(
        counts.retained,
        counts.input - counts.dropped_sparse - counts.dropped_leading - counts.dropped_trailing
    );
    assert_eq!(filtered.len(), counts.retained);
    // every survivor satisfies all three rules
    for s in &filtered.series {
        assert_eq!(s.len(), 51);
        assert!(s.values.iter().filter(|&&v| v > 0.0).count() >= 10);
        assert!(s.values[..15].iter().any(|&v| v > 0.0));
        assert!(s.values[36..].iter().any(|&v| v > 0.0));
    }
    // reference counts reported, not asserted: the published figures for the
    // original dataset disagree with each other (1,406 summarized vs 1,046
    // after filtering), so equality is not a sound gate even on real data
    println!(
        "PASS criterion 8: filter retained {} of {} synthetic series ({} sparse, {} leading, {} trailing); reference figures for the original data: 1406 summarized / 1046 filtered",
        counts.retained,
        counts.input,
        counts.dropped_sparse,
        counts.dropped_leading,
        counts.dropped_trailing
    );
}

#[test]
fn criterion_09_determinism_and_round_trip() {
    let panel = seasonal_daily_panel(909, 10, 70);
    let schema = CovariateSchema::default_for(&panel, true);
    let spec = ModelSpec {
        input_len: 14,
        horizon: 7,
        kernel: 2,
        dilations: vec![1, 2],
        channels: 0,
        latent: 0,
        head: HeadKind::default_quantile(),
        seed: 909,
    };
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let a = train(&panel, &spec, &schema, &cfg).unwrap();
    let b = train(&panel, &spec, &schema, &cfg).unwrap();
    let bytes_a = checkpoint_bytes(&a.trained).unwrap();
    let bytes_b = checkpoint_bytes(&b.trained).unwrap();
    assert_eq!(bytes_a, bytes_b, "identical runs must produce identical bytes");

    // round trip preserves forecasts bitwise
    let mut tm = a.trained;
    let ids: Vec<&str> = panel.series.iter().map(|s| s.id.as_str()).collect();
    let origin = panel.stamp_at(0, 69);
    let before = tm.forecast(&panel, &ids, origin).unwrap();
    let mut restored = deeptcn::checkpoint::checkpoint_from_bytes(&bytes_a).unwrap();
    let after = restored.forecast(&panel, &ids, origin).unwrap();
    for (x, y) in before.iter().zip(&after) {
        match (&x.values, &y.values) {
            (
                ForecastValues::Quantile { rows: ra, .. },
                ForecastValues::Quantile { rows: rb, .. },
            ) => {
                for (va, vb) in ra.iter().flatten().zip(rb.iter().flatten()) {
                    assert_eq!(va.to_bits(), vb.to_bits());
                }
            }
            _ => panic!("expected quantile forecasts"),
        }
    }
    println!(
        "PASS criterion 9: two identical runs -> identical {}-byte checkpoints; round trip preserves forecasts bitwise",
        bytes_a.len()
    );
}

#[test]
fn criterion_10_deeper_encoder_trains_at_least_as_low() {
    let started = Instant::now();
    let panel = long_memory_panel(1010, 12, 1200);
    let schema = long_memory_schema(&panel);
    let base_spec = ModelSpec {
        input_len: 168,
        horizon: 1,
        kernel: 2,
        dilations: vec![1], // replaced per run
        channels: 8,
        latent: 8,
        head: HeadKind::Quantile { levels: vec![0.5] },
        seed: 1010,
    };
    let cfg = TrainConfig {
        batch_size: 64,
        learning_rate: 5e-3,
        epochs: 30,
        patience: None,
        stride: 4,
        ..TrainConfig::default()
    };
    let lists = vec![vec![1, 2, 4, 8, 16], vec![1, 2, 4, 8, 16, 32]];
    let curves = bench::sensitivity_run(&panel, &schema, &base_spec, &cfg, &lists).unwrap();
    let five = curves[0].1.last().unwrap().train_l1;
    let six = curves[1].1.last().unwrap().train_l1;
    let elapsed = started.elapsed().as_secs_f64();

    // receptive fields: 63 steps for five levels, 127 for six; the pattern
    // period is 96, so only the deeper net always sees a full cycle
    assert!(
        six <= five,
        "six-layer final L1 {six:.4} should be <= five-layer {five:.4}"
    );
    println!(
        "PASS criterion 10: final training L1 six-layer {six:.4} <= five-layer {five:.4}, {elapsed:.1}s"
    );
}
