use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, EvalMode};
use super::identified::IdentifiedModel;
use super::loss::{batch_loss_grad, encoder_loss};
use super::scaler::Scaler;
use crate::autodiff::{AdamConfig, AdamState, Parameters};
use crate::data::Dataset;
use crate::encoder::{legal_starts, Encoder};
use crate::error::{Error, Result};
use crate::model::{KoopmanModel, ModelConfig, StructureKind};

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Section length `T`.
    pub horizon: usize,
    pub batch_size: usize,
    /// Encoder lag `n`.
    pub lag: usize,
    pub n_z: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    #[serde(rename = "b_structure")]
    pub b_kind: StructureKind,
    #[serde(rename = "k_structure")]
    pub k_kind: StructureKind,
    pub encoder_hidden: Vec<usize>,
    pub b_hidden: Vec<usize>,
    pub k_hidden: Vec<usize>,
    pub bypass: bool,
    pub c_identity: bool,
    /// Weight of the squared parameter norm added to the batch loss.
    pub l2: f64,
    pub a_radius: f64,
    /// Initial scale of the state-dependent part of `B`.
    pub b_init_scale: f64,
    /// Initial scale of `K`.
    pub k_init_scale: f64,
    /// Sections per forward pass when evaluating the validation loss.
    pub eval_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            horizon: 51,
            batch_size: 256,
            lag: 12,
            n_z: 12,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 2000,
            patience: 20,
            seed: 0,
            b_kind: StructureKind::General,
            k_kind: StructureKind::Linear,
            encoder_hidden: vec![40],
            b_hidden: vec![40],
            k_hidden: vec![80],
            bypass: true,
            c_identity: false,
            l2: 0.0,
            a_radius: 0.95,
            b_init_scale: 0.1,
            k_init_scale: 0.1,
            eval_chunk: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.n_z == 0 {
            return bad("n_z must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        if !(self.a_radius > 0.0 && self.a_radius.is_finite()) {
            return bad(format!("a_radius must be positive, got {}", self.a_radius));
        }
        for (name, v) in [("b_init_scale", self.b_init_scale), ("k_init_scale", self.k_init_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.b_kind == StructureKind::None {
            return bad("b_structure cannot be `none`".into());
        }
        for (name, w) in [
            ("encoder_hidden", &self.encoder_hidden),
            ("b_hidden", &self.b_hidden),
            ("k_hidden", &self.k_hidden),
        ] {
            if w.contains(&0) {
                return bad(format!("{name} widths must be positive"));
            }
        }
        if self.eval_chunk == 0 {
            return bad("eval_chunk must be at least 1".into());
        }
        Ok(())
    }

    pub fn model_config(&self, n_u: usize, n_y: usize) -> ModelConfig {
        let mut m = ModelConfig::new(self.n_z, n_u, n_y);
        m.b_kind = self.b_kind;
        m.k_kind = self.k_kind;
        m.b_hidden = self.b_hidden.clone();
        m.k_hidden = self.k_hidden.clone();
        m.bypass = self.bypass;
        m.c_identity = self.c_identity;
        m.a_radius = self.a_radius;
        m.b_init_scale = self.b_init_scale;
        m.k_init_scale = self.k_init_scale;
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    /// Full-section loss on the validation split (the stopping statistic).
    pub val_loss: f64,
    /// Free-run NRMS on the validation split.
    pub val_nrms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub n_params: usize,
    pub sections_per_epoch: usize,
    pub batches_per_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Not serialized, so reports of identical runs are identical files.
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Result of a successful run: the best-validation snapshot and its report.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: IdentifiedModel,
    pub report: TrainReport,
}

/// Progress callback: each finished epoch and, when validation improved,
/// the new best snapshot.
pub type Observer<'a> = dyn FnMut(&EpochRecord, Option<&IdentifiedModel>) + 'a;

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(ds, cfg, &mut |_, _| {})
}

pub fn train_with_observer(
    ds: &Dataset,
    cfg: &TrainConfig,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let (n_u, n_y) = (ds.n_u(), ds.n_y());
    if n_u == 0 {
        return Err(Error::Data("training needs at least one input channel".into()));
    }
    let scaler = Scaler::fit(&ds.train)?;
    let train = scaler.scale_series(&ds.train)?;
    let val = scaler.scale_series(&ds.val)?;
    let starts: Vec<usize> = legal_starts(train.len(), cfg.lag, cfg.horizon).collect();
    if starts.len() < cfg.batch_size {
        return Err(Error::Data(format!(
            "training split has {} sections of horizon {} with lag {}, fewer than one batch of {}",
            starts.len(),
            cfg.horizon,
            cfg.lag,
            cfg.batch_size
        )));
    }
    if legal_starts(val.len(), cfg.lag, cfg.horizon).is_empty() || val.len() < cfg.lag + 2 {
        return Err(Error::Data("validation split is too short for the horizon and lag".into()));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let model = KoopmanModel::init(&cfg.model_config(n_u, n_y), &mut init_rng)?;
    let encoder = Encoder::init(
        cfg.lag,
        n_u,
        n_y,
        cfg.n_z,
        &cfg.encoder_hidden,
        cfg.bypass,
        &mut init_rng,
    )?;
    let mut current = IdentifiedModel::new(model, encoder, scaler)?;
    let mut best = current.clone();
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
    });

    let batches = starts.len() / cfg.batch_size;
    let mut report = TrainReport {
        config: cfg.clone(),
        n_params: count_params(&current),
        sections_per_epoch: batches * cfg.batch_size,
        batches_per_epoch: batches,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
        wall_time_s: 0.0,
    };
    let diverged = |epoch, batch, loss| Error::Divergence { epoch, batch, loss };
    let mut order = starts.clone();
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for (b, ks) in order.chunks_exact(cfg.batch_size).enumerate() {
            let (loss, grads) = match batch_loss_grad(
                &current.model,
                &current.encoder,
                &train,
                ks,
                cfg.horizon,
                cfg.l2,
            ) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(diverged(epoch, b, f64::NAN)),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || grads.values().any(|g| !g.is_finite()) {
                return Err(diverged(epoch, b, loss));
            }
            adam.step(&mut current, &grads)?;
            sum += loss;
        }
        let val_loss = match encoder_loss(&current.model, &current.encoder, &val, cfg.horizon, cfg.eval_chunk) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => return Err(diverged(epoch, batches, v)),
            Err(Error::NonFinite(_)) => return Err(diverged(epoch, batches, f64::NAN)),
            Err(e) => return Err(e),
        };
        let val_nrms = match evaluate(&current, &ds.val, EvalMode::Simulation) {
            Ok(v) => v,
            // a free run may blow up long before the sectioned loss does
            Err(Error::NonFinite(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_loss: sum / batches as f64,
            val_loss,
            val_nrms,
        };
        let improved = val_loss < report.best_val_loss;
        if improved {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best = current.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        observer(&record, improved.then_some(&best));
        report.epochs.push(record);
        if since_best >= cfg.patience {
            report.stopped_early = true;
            break;
        }
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        model: best,
        report,
    })
}

fn count_params(m: &IdentifiedModel) -> usize {
    let mut n = 0;
    m.visit_params("", &mut |_, t| n += t.len());
    n
}
