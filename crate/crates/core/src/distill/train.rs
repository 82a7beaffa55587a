//! Epoch loop with early stopping, and the concrete model-training session.

use std::borrow::Cow;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DistillConfig, Method};
use super::data::{batch_indices, gather_rows, Samples};
use super::losses::{combined_loss, FeatureRegressor, StudentTerms, TeacherTerms};
use crate::error::{Error, Result};
use crate::rng::{self, Rng, Stream};
use crate::tensor::{Adam, AdamHyper, Tape, Tensor};
use crate::zoo::{ActShape, Model, Snapshot};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub elapsed_s: f64,
    pub stopped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub log: Vec<EpochRecord>,
}

/// Early-stopping bookkeeping. Only a strictly lower validation loss counts
/// as an improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub bad_epochs: usize,
    pub patience: usize,
}

impl TrainState {
    pub fn new(patience: usize) -> Self {
        TrainState { epoch: 0, best_val_loss: f64::INFINITY, best_epoch: 0, bad_epochs: 0, patience }
    }

    /// Records the validation loss of the next epoch; true on improvement.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        self.epoch += 1;
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.best_epoch = self.epoch;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn exhausted(&self) -> bool {
        self.bad_epochs >= self.patience
    }
}

/// Something that can be trained an epoch at a time.
pub trait Session {
    type Snapshot;

    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;
    fn validate(&mut self) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: &Self::Snapshot);
}

/// Runs up to `max_epochs`, stops after `patience` epochs without
/// improvement, and leaves the session at its best-validation snapshot.
pub fn run_epochs<S: Session>(
    session: &mut S,
    max_epochs: usize,
    patience: usize,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport> {
    let mut state = TrainState::new(patience);
    let mut best = None;
    let mut log = Vec::new();
    let start = Instant::now();
    for epoch in 1..=max_epochs {
        let train_loss = session.train_epoch(epoch)?;
        let val_loss = session.validate()?;
        if !val_loss.is_finite() {
            return Err(Error::invalid(format!("validation loss became {val_loss} at epoch {epoch}")));
        }
        if state.observe(val_loss) || best.is_none() {
            best = Some(session.snapshot());
        }
        let stopped = state.exhausted() && epoch < max_epochs;
        let rec = EpochRecord { epoch, train_loss, val_loss, elapsed_s: start.elapsed().as_secs_f64(), stopped };
        on_epoch(&rec);
        log.push(rec);
        if state.exhausted() {
            break;
        }
    }
    if let Some(snap) = &best {
        session.restore(snap);
    }
    Ok(TrainReport {
        epochs_run: log.len(),
        best_epoch: state.best_epoch,
        best_val_loss: state.best_val_loss,
        stopped_early: log.last().is_some_and(|r| r.stopped),
        log,
    })
}

/// Teacher outputs over the training set, computed once in eval mode.
#[derive(Debug, Clone)]
pub struct TeacherCache {
    pub logits: Vec<f32>,
    pub embeddings: Option<Tensor<f32>>,
    pub hints: Option<Tensor<f32>>,
}

impl TeacherCache {
    /// `hint` selects a teacher layer whose output is average-pooled to at
    /// most `pool_to` spatially.
    pub fn build(
        teacher: &Model<f32>,
        samples: &Samples,
        batch_size: usize,
        embeddings: bool,
        hint: Option<(usize, (usize, usize))>,
    ) -> Result<Self> {
        let mut logits = Vec::with_capacity(samples.len());
        let mut emb = Vec::new();
        let mut hints = Vec::new();
        let (mut emb_dim, mut hint_shape) = (0, Vec::new());
        for rows in batch_indices(samples.len(), batch_size, None) {
            let (x, _) = samples.gather(&rows);
            let tape = Tape::no_grad();
            let fwd = teacher.forward_eval(&tape, tape.constant(&x))?;
            logits.extend_from_slice(fwd.logits.value().data());
            if embeddings {
                let e = fwd.embedding.value();
                emb_dim = e.shape()[1];
                emb.extend_from_slice(e.data());
            }
            if let Some((idx, (ph, pw))) = hint {
                let out = fwd.outputs[idx];
                let s = out.shape();
                if s.len() != 4 {
                    return Err(Error::ConfigGeneral(format!("hint layer output {s:?} is not a feature map")));
                }
                let (h, w) = (s[2].min(ph), s[3].min(pw));
                let pooled = if (h, w) == (s[2], s[3]) { out } else { out.adaptive_avg_pool2d(h, w)? };
                hint_shape = pooled.shape()[1..].to_vec();
                hints.extend_from_slice(pooled.value().data());
            }
        }
        let n = samples.len();
        let embeddings = embeddings.then(|| Tensor::new(vec![n, emb_dim], emb)).transpose()?;
        let hints = hint
            .map(|_| {
                let mut shape = vec![n];
                shape.extend(&hint_shape);
                Tensor::new(shape, hints)
            })
            .transpose()?;
        Ok(TeacherCache { logits, embeddings, hints })
    }
}

enum Objective<'a> {
    /// BCE on hard labels. Teacher and baseline students share it: BCE on
    /// sigmoid outputs, evaluated from the logits so saturated outputs keep
    /// their gradient.
    HardLabel,
    Distill {
        method: Method,
        cache: Cow<'a, TeacherCache>,
        guide: Option<usize>,
        regressor: Option<(FeatureRegressor<f32>, Adam<f32>)>,
    },
}

/// Training of one model on in-memory samples.
pub struct ModelSession<'a> {
    model: &'a mut Model<f32>,
    adam: Adam<f32>,
    train: &'a Samples,
    val: &'a Samples,
    cfg: DistillConfig,
    objective: Objective<'a>,
    shuffle: Rng,
    dropout: Rng,
}

type SessionSnapshot = (Snapshot<f32>, Option<FeatureRegressor<f32>>);

impl<'a> ModelSession<'a> {
    pub fn new(
        model: &'a mut Model<f32>,
        train: &'a Samples,
        val: &'a Samples,
        cfg: &DistillConfig,
        teacher: Option<&Model<f32>>,
    ) -> Result<Self> {
        Self::with_cache(model, train, val, cfg, teacher, None)
    }

    /// Like [`ModelSession::new`], reusing teacher outputs computed earlier
    /// with [`TeacherCache::for_student`].
    pub fn with_cache(
        model: &'a mut Model<f32>,
        train: &'a Samples,
        val: &'a Samples,
        cfg: &DistillConfig,
        teacher: Option<&Model<f32>>,
        cache: Option<&'a TeacherCache>,
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Empty("training split".into()));
        }
        if val.is_empty() {
            return Err(Error::Empty("validation split".into()));
        }
        let objective = match teacher {
            None => Objective::HardLabel,
            Some(t) => distill_objective(model, t, train, cfg, cache)?,
        };
        let hyper = AdamHyper { lr: cfg.lr, ..AdamHyper::default() };
        Ok(ModelSession {
            adam: Adam::new(model.params(), hyper),
            model,
            train,
            val,
            cfg: cfg.clone(),
            objective,
            shuffle: rng::stream(cfg.seed, Stream::Shuffle),
            dropout: rng::stream(cfg.seed, Stream::Dropout),
        })
    }
}

/// Layers matched by feature distillation.
struct FeatureTaps {
    guide: usize,
    guide_channels: usize,
    hint: usize,
    hint_channels: usize,
    extent: (usize, usize),
}

fn feature_taps(student: &Model<f32>, teacher: &Model<f32>, cfg: &DistillConfig) -> Result<FeatureTaps> {
    let guide_name = cfg
        .guide_layer
        .clone()
        .or_else(|| student.config().feature_layer.clone())
        .ok_or_else(|| Error::ConfigGeneral("feature method needs a guide layer".into()))?;
    let hint_name = cfg
        .hint_layer
        .clone()
        .or_else(|| teacher.config().feature_layer.clone())
        .ok_or_else(|| Error::ConfigGeneral("feature method needs a hint layer".into()))?;
    let (guide, gshape) = student.tap(&guide_name)?;
    let (hint, hshape) = teacher.tap(&hint_name)?;
    let (ActShape::Map { c: guide_channels, h, w }, ActShape::Map { c: hint_channels, .. }) = (gshape, hshape) else {
        return Err(Error::ConfigGeneral(format!(
            "guide `{guide_name}` and hint `{hint_name}` must both be feature maps"
        )));
    };
    Ok(FeatureTaps { guide, guide_channels, hint, hint_channels, extent: (h, w) })
}

impl TeacherCache {
    /// The teacher outputs `cfg.method` needs to train `student`.
    pub fn for_student(teacher: &Model<f32>, student: &Model<f32>, train: &Samples, cfg: &DistillConfig) -> Result<Self> {
        let hint = match cfg.method {
            Method::Feature => {
                let t = feature_taps(student, teacher, cfg)?;
                Some((t.hint, t.extent))
            }
            _ => None,
        };
        Self::build(teacher, train, cfg.batch_size, cfg.method == Method::Relational, hint)
    }

    fn check(&self, cfg: &DistillConfig, n: usize) -> Result<()> {
        let ok = self.logits.len() == n
            && match cfg.method {
                Method::Response => true,
                Method::Feature => self.hints.as_ref().is_some_and(|h| h.shape()[0] == n),
                Method::Relational => self.embeddings.as_ref().is_some_and(|e| e.shape()[0] == n),
            };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("teacher cache does not fit {} distillation on {n} samples", cfg.method)))
        }
    }
}

fn distill_objective<'a>(
    student: &Model<f32>,
    teacher: &Model<f32>,
    train: &Samples,
    cfg: &DistillConfig,
    cache: Option<&'a TeacherCache>,
) -> Result<Objective<'a>> {
    let method = cfg.method;
    let mut guide = None;
    let mut regressor = None;
    if method == Method::Feature {
        let t = feature_taps(student, teacher, cfg)?;
        guide = Some(t.guide);
        let reg = FeatureRegressor::new(t.guide_channels, t.hint_channels, cfg.seed);
        let adam = Adam::new(reg.params(), AdamHyper { lr: cfg.lr, ..AdamHyper::default() });
        regressor = Some((reg, adam));
    }
    let cache = match cache {
        Some(c) => {
            c.check(cfg, train.len())?;
            Cow::Borrowed(c)
        }
        None => Cow::Owned(TeacherCache::for_student(teacher, student, train, cfg)?),
    };
    Ok(Objective::Distill { method, cache, guide, regressor })
}

impl Session for ModelSession<'_> {
    type Snapshot = SessionSnapshot;

    fn train_epoch(&mut self, _epoch: usize) -> Result<f64> {
        let batches = batch_indices(self.train.len(), self.cfg.batch_size, Some(&mut self.shuffle));
        let mut total = 0.0;
        for rows in batches {
            let (x, y) = self.train.gather(&rows);
            let tape = Tape::new();
            let fwd = self.model.forward_train(&tape, tape.constant(&x), &mut self.dropout)?;
            let loss = match &self.objective {
                Objective::HardLabel => fwd.logits.bce_with_logits(&y)?,
                Objective::Distill { method, cache, guide, regressor } => {
                    let logits: Vec<f32> = rows.iter().map(|&i| cache.logits[i]).collect();
                    let emb = cache.embeddings.as_ref().map(|e| gather_rows(e, &rows));
                    let hint = cache.hints.as_ref().map(|h| gather_rows(h, &rows));
                    let empty = Tensor::zeros(vec![1]);
                    let teacher = TeacherTerms { logits: &logits, embedding: emb.as_ref().unwrap_or(&empty), hint: hint.as_ref() };
                    let student = StudentTerms {
                        logits: fwd.logits,
                        embedding: fwd.embedding,
                        guide: guide.map(|g| fwd.outputs[g]),
                    };
                    combined_loss(*method, &student, &teacher, &y, &self.cfg, regressor.as_ref().map(|r| &r.0))?
                }
            };
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(Error::invalid(format!("training loss became {value}")));
            }
            total += value * rows.len() as f64;
            let grads = tape.backward(loss)?;
            self.model.params_mut().accumulate(&grads);
            self.adam.step(self.model.params_mut());
            if let Objective::Distill { regressor: Some((reg, adam)), .. } = &mut self.objective {
                reg.params_mut().accumulate(&grads);
                adam.step(reg.params_mut());
            }
        }
        Ok(total / self.train.len() as f64)
    }

    /// Hard-label loss on the validation split in eval mode.
    fn validate(&mut self) -> Result<f64> {
        let mut total = 0.0;
        for rows in batch_indices(self.val.len(), self.cfg.batch_size, None) {
            let (x, y) = self.val.gather(&rows);
            let tape = Tape::no_grad();
            let logits = self.model.forward_eval(&tape, tape.constant(&x))?.logits;
            let loss = logits.bce_with_logits(&y)?;
            total += loss.item() as f64 * rows.len() as f64;
        }
        Ok(total / self.val.len() as f64)
    }

    fn snapshot(&self) -> SessionSnapshot {
        let reg = match &self.objective {
            Objective::Distill { regressor: Some((r, _)), .. } => Some(r.clone()),
            _ => None,
        };
        (self.model.snapshot(), reg)
    }

    fn restore(&mut self, (snap, reg): &SessionSnapshot) {
        self.model.restore(snap);
        if let (Objective::Distill { regressor: Some((r, _)), .. }, Some(saved)) = (&mut self.objective, reg) {
            r.params_mut().load_values(saved.params());
        }
    }
}

/// Trains `model` (distilling from `teacher` when given) and leaves it at
/// the best-validation epoch.
pub fn train(
    model: &mut Model<f32>,
    train: &Samples,
    val: &Samples,
    cfg: &DistillConfig,
    teacher: Option<&Model<f32>>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport> {
    let mut session = ModelSession::new(model, train, val, cfg, teacher)?;
    run_epochs(&mut session, cfg.max_epochs, cfg.patience, on_epoch)
}

/// [`train`] with teacher outputs precomputed by [`TeacherCache::for_student`],
/// so several runs can share one teacher pass.
pub fn train_cached(
    model: &mut Model<f32>,
    train: &Samples,
    val: &Samples,
    cfg: &DistillConfig,
    teacher: &Model<f32>,
    cache: &TeacherCache,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport> {
    let mut session = ModelSession::with_cache(model, train, val, cfg, Some(teacher), Some(cache))?;
    run_epochs(&mut session, cfg.max_epochs, cfg.patience, on_epoch)
}
