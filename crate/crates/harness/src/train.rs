//! Training runs: data, model, optimizer loop, evaluation.

use std::path::Path;
use std::time::Instant;

use samlab_core::attacks::{pgd, robust_accuracy};
use samlab_core::data::{load_delimited, sample_feature_model, sample_mixture2d, Blob, Dataset, DelimitedSchema, Task};
use samlab_core::models::{accuracy, Activation, LinearModel, MlpModel, Model};
use samlab_core::optim::{plain_step, sam_step, OptimizerState};
use samlab_core::rng::{derive_seed, streams, SeedStream};
use samlab_core::theory::estimate_wr;

use crate::config::{BudgetConfig, DataConfig, Mode, ModelConfig, RunConfig};
use crate::error::{HarnessError, Result};
use crate::results::{fmt_f64, metric_cells, metric_columns, RobustResult, RunRecord, Table};

/// Sub-seeds of a run, each `derive_seed(run seed, index)`.
pub mod seeds {
    pub const TRAIN_DATA: u64 = 0;
    pub const TEST_DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const TRAIN_ATTACK: u64 = 4;
    pub const EVAL_ATTACK: u64 = 5;
}

pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn build_data(cfg: &DataConfig, seed: u64) -> Result<Splits> {
    let train_seed = derive_seed(seed, seeds::TRAIN_DATA);
    let test_seed = derive_seed(seed, seeds::TEST_DATA);
    Ok(match cfg {
        DataConfig::FeatureModel {
            p,
            eta,
            n,
            samples,
            test_samples,
        } => {
            let spec = samlab_core::theory::FeatureModelSpec::new(*p, *eta, *n)?;
            Splits {
                train: sample_feature_model(&spec, *samples, train_seed)?,
                test: sample_feature_model(&spec, *test_samples, test_seed)?,
            }
        }
        DataConfig::Mixture2d {
            centers,
            spread,
            samples,
            test_samples,
        } => {
            let blobs: Vec<Blob> = centers
                .iter()
                .map(|c| Blob {
                    center: [c.x, c.y],
                    class: c.class,
                })
                .collect();
            Splits {
                train: sample_mixture2d(&blobs, *spread, *samples, train_seed)?,
                test: sample_mixture2d(&blobs, *spread, *test_samples, test_seed)?,
            }
        }
        DataConfig::Delimited {
            path,
            features,
            classes,
            test_path,
        } => {
            let schema = DelimitedSchema {
                features: *features,
                task: if *classes == 0 {
                    Task::Binary
                } else {
                    Task::Multiclass(*classes)
                },
            };
            let train = load_file(path, schema)?;
            let test = match test_path {
                Some(p) => load_file(p, schema)?,
                None => train.clone(),
            };
            Splits { train, test }
        }
    })
}

fn load_file(path: &Path, schema: DelimitedSchema) -> Result<Dataset> {
    load_delimited(path, schema).map_err(|e| match e {
        samlab_core::Error::Io(io) => HarnessError::runtime(format!("{}: {io}", path.display())),
        other => other.into(),
    })
}

pub fn build_model(cfg: &ModelConfig, data: &Dataset, seed: u64) -> Result<Model> {
    let init = derive_seed(seed, seeds::INIT);
    let classes = data.task.num_classes();
    Ok(match cfg {
        ModelConfig::Linear { bias } => {
            if classes != 2 {
                return Err(HarnessError::runtime(format!(
                    "a linear model needs two classes, the data has {classes}"
                )));
            }
            Model::Linear(LinearModel::init(data.dim(), *bias, init)?)
        }
        ModelConfig::Mlp { hidden, activation } => {
            let mut layers = vec![data.dim()];
            layers.extend(hidden);
            layers.push(classes);
            Model::Mlp(MlpModel::init(&layers, Activation::parse(activation)?, init)?)
        }
    })
}

/// Clean accuracy and robust accuracy for each budget.
pub fn evaluate(model: &Model, test: &Dataset, evals: &[BudgetConfig], seed: u64) -> Result<(f64, Vec<RobustResult>)> {
    let clean = accuracy(model, &test.x, &test.classes())?;
    let attack_seed = derive_seed(seed, seeds::EVAL_ATTACK);
    let mut robust = Vec::with_capacity(evals.len());
    for (i, b) in evals.iter().enumerate() {
        let budget = b.to_budget().map_err(|e| HarnessError::Config(vec![e]))?;
        let acc = robust_accuracy(model, test, &budget, derive_seed(attack_seed, i as u64))?;
        robust.push(RobustResult {
            budget: b.clone(),
            accuracy: acc,
        });
    }
    Ok((clean, robust))
}

/// Robust feature weight of a linear model on feature-model data.
pub fn wr_of(model: &Model, data: &DataConfig) -> Option<f64> {
    match (model, data) {
        (Model::Linear(m), DataConfig::FeatureModel { .. }) => estimate_wr(m.weights()).ok(),
        _ => None,
    }
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub model: Model,
}

/// Trains per `cfg` (which must be valid) and evaluates the final model.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let data_cfg = cfg.data.as_ref().expect("validated");
    let splits = build_data(data_cfg, cfg.seed)?;
    let mut model = build_model(&cfg.model, &splits.train, cfg.seed)?;
    let epoch_loss = train_model(&mut model, &splits.train, cfg)?;
    let (clean, robust) = evaluate(&model, &splits.test, &cfg.eval, cfg.seed)?;
    let record = RunRecord {
        format: crate::results::RECORD_FORMAT.into(),
        config: cfg.clone(),
        seed: cfg.seed,
        epoch_loss,
        clean_accuracy: clean,
        robust_accuracy: robust,
        wr_estimate: wr_of(&model, data_cfg),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { record, model })
}

/// The optimization loop. Returns the mean batch loss of every epoch.
pub fn train_model(model: &mut Model, train: &Dataset, cfg: &RunConfig) -> Result<Vec<f64>> {
    let opt = &cfg.optimizer;
    let t = &cfg.train;
    let base = opt.base_optimizer();
    let mut state = OptimizerState::for_base(&base);
    let inner = match (opt.mode, &opt.attack) {
        (Mode::Adversarial, Some(b)) => Some(b.to_budget().map_err(|e| HarnessError::Config(vec![e]))?),
        _ => None,
    };
    let classes = train.classes();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle = SeedStream::new(derive_seed(cfg.seed, seeds::SHUFFLE), streams::SHUFFLE);
    let attack_seed = derive_seed(cfg.seed, seeds::TRAIN_ATTACK);
    let batches = train.len().div_ceil(t.batch_size);

    let mut history = Vec::with_capacity(t.epochs);
    for epoch in 0..t.epochs {
        let lr = t.lr_at(opt.lr, epoch);
        let base = base.with_lr(lr);
        let sam = samlab_core::optim::SamConfig { base, ..opt.sam() };
        shuffle.shuffle(&mut order);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(t.batch_size).enumerate() {
            let context = |e: samlab_core::Error| {
                HarnessError::runtime(format!("epoch {epoch} batch {b}: {e}"))
            };
            let (x, _) = train.select(chunk).map_err(context)?;
            let y: Vec<usize> = chunk.iter().map(|&i| classes[i]).collect();
            let loss = match opt.mode {
                Mode::Plain => plain_step(model, &x, &y, &base, &mut state).map_err(context)?,
                Mode::Sam => sam_step(model, &x, &y, &sam, &mut state).map_err(context)?.loss,
                Mode::Adversarial => {
                    let budget = inner.as_ref().expect("adversarial budget");
                    let seed = derive_seed(attack_seed, (epoch * batches + b) as u64);
                    let adv = pgd(&*model, &x, &y, budget, seed).map_err(context)?;
                    plain_step(model, &adv.x_adv, &y, &base, &mut state).map_err(context)?
                }
            };
            if !loss.is_finite() {
                return Err(HarnessError::runtime(format!(
                    "epoch {epoch} batch {b}: non-finite loss"
                )));
            }
            total += loss;
        }
        history.push(total / batches as f64);
    }
    Ok(history)
}

/// One-row results table of a training run.
pub fn train_table(record: &RunRecord) -> Table {
    let cfg = &record.config;
    let mut columns = vec!["seed".to_string(), "mode".into(), "rho".into()];
    columns.extend(metric_columns(&cfg.eval));
    let mut table = Table::new("train", columns);
    let mut row = vec![
        record.seed.to_string(),
        cfg.optimizer.mode.name().into(),
        fmt_f64(cfg.optimizer.rho),
    ];
    row.extend(metric_cells(record, cfg.eval.len()));
    table.push(row);
    table
}

/// Runs, then writes `results.csv`, `run.json` and `model.ckpt` under `out`.
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<RunRecord> {
    let outcome = run_train(cfg)?;
    std::fs::create_dir_all(out)?;
    train_table(&outcome.record).write(&out.join("results.csv"))?;
    outcome.record.write(&out.join("run.json"))?;
    outcome.model.save(out.join("model.ckpt"))?;
    Ok(outcome.record)
}
