use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use spinecurve::laplace_regressor::{parse_training_csv, train_with_validation, TrainOutcome};
use spinecurve::{predict_angle, train, LabeledSample, RegressorModel, TrainConfig};

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Training CSV with header `kappa,angle_deg`.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation CSV; without it a seeded share of the training set is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Model JSON to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Per-epoch loss log; defaults to `<out>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().max_epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().patience)]
    pub patience: usize,
}

impl CalibrateArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            max_epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            patience: self.patience,
            ..TrainConfig::default()
        }
    }
}

fn read_samples(path: &Path) -> anyhow::Result<Vec<LabeledSample>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_training_csv(&text).with_context(|| format!("in {}", path.display()))
}

pub fn mean_abs_error(model: &RegressorModel, samples: &[LabeledSample]) -> anyhow::Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += (predict_angle(model, s.kappa)?.0 - s.angle_deg).abs();
    }
    Ok(total / samples.len() as f64)
}

pub fn calibrate(args: &CalibrateArgs) -> anyhow::Result<(TrainOutcome, Option<f64>)> {
    let config = args.config();
    let train_set = read_samples(&args.train)?;
    let (outcome, val_mae) = match &args.val {
        Some(p) => {
            let val_set = read_samples(p)?;
            let outcome = train_with_validation(&train_set, &val_set, &config)?;
            let mae = mean_abs_error(&outcome.model, &val_set)?;
            (outcome, Some(mae))
        }
        None => (train(&train_set, &config)?, None),
    };
    std::fs::write(&args.out, outcome.model.to_json()? + "\n")
        .with_context(|| format!("writing {}", args.out.display()))?;
    let log = args.log.clone().unwrap_or_else(|| {
        let mut s = args.out.as_os_str().to_owned();
        s.push(".log.csv");
        PathBuf::from(s)
    });
    std::fs::write(&log, outcome.log_csv()).with_context(|| format!("writing {}", log.display()))?;
    Ok((outcome, val_mae))
}

pub fn run(args: &CalibrateArgs) -> anyhow::Result<u8> {
    let (outcome, val_mae) = calibrate(args)?;
    println!("epochs\t{}", outcome.log.len());
    println!("best_epoch\t{}", outcome.best_epoch);
    if let Some(mae) = val_mae {
        println!("val_mae_deg\t{mae:.4}");
    }
    Ok(0)
}
