use deeptcn::synthetic::seasonal_daily_panel;
use deeptcn_core::calendar::{step, CalendarFeature};
use deeptcn_core::heads::{ForecastValues, HeadKind};
use deeptcn_core::model::ModelSpec;
use deeptcn_core::panel::CovariateSchema;
use deeptcn_core::train::{train, TrainConfig};

fn main() {
    let panel = seasonal_daily_panel(606, 50, 140);
    let mut schema = CovariateSchema::default_for(&panel, true);
    schema.calendar.retain(|f| *f == CalendarFeature::DayOfWeek);
    let end = panel.end_stamp().unwrap();
    let boundary = step(end, panel.granularity, -7 + 1);
    let spec = ModelSpec {
        input_len: 28, horizon: 7, kernel: 2, dilations: vec![1, 2, 4],
        channels: 0, latent: 0, head: HeadKind::Gaussian, seed: 606,
    };
    let cfg = TrainConfig {
        batch_size: 64, learning_rate: 5e-3, epochs: 60, patience: Some(15),
        stride: 1, train_before: Some(boundary), ..TrainConfig::default()
    };
    let outcome = train(&panel, &spec, &schema, &cfg).unwrap();
    println!("epochs {} best {} train_loss first {:.4} last {:.4}",
        outcome.history.len(), outcome.trained.meta.best_epoch,
        outcome.history.first().unwrap().train_loss,
        outcome.history.last().unwrap().train_loss);
    let mut tm = outcome.trained;
    let origin = step(end, panel.granularity, -7);
    let fc = tm.forecast(&panel, &["s000", "s004"], origin).unwrap();
    for f in &fc {
        let series = panel.series_index(&f.series_id).unwrap();
        let lo = panel.local_index(series, origin).unwrap();
        if let ForecastValues::Gaussian { mean, std } = &f.values {
            println!("{} scale {:.3}:", f.series_id, f.scale);
            for w in 0..7 {
                let actual = panel.series[series].values[(lo + 1 + w as i64) as usize];
                println!("  w{} actual {:>8.3} mu {:>8.3} sigma {:>8.3}", w, actual, mean[w], std[w]);
            }
        }
    }
}
