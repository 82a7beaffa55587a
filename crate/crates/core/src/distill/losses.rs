//! Hard-label and distillation objectives. Teacher quantities always enter as
//! plain tensors or constants, so no gradient can reach the teacher.

use rand::Rng as _;

use super::config::{DistillConfig, Method};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::{Conv2dOptions, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// Mean binary cross-entropy on probabilities.
pub fn bce_loss<'t, T: Scalar>(probabilities: Var<'t, T>, labels: &[T]) -> Result<Var<'t, T>> {
    probabilities.bce(labels)
}

/// Mean binary cross-entropy on logits, overflow-safe.
pub fn bce_with_logits_loss<'t, T: Scalar>(logits: Var<'t, T>, labels: &[T]) -> Result<Var<'t, T>> {
    logits.bce_with_logits(labels)
}

/// Binary KL between temperature-softened teacher and student outputs,
/// batch mean, optionally times `T^2`.
pub fn soft_target_loss<'t, T: Scalar>(
    student_logits: Var<'t, T>,
    teacher_logits: &[T],
    temperature: T,
    temperature_squared: bool,
) -> Result<Var<'t, T>> {
    let scale = if temperature_squared { temperature * temperature } else { T::one() };
    student_logits.binary_soft_kl(teacher_logits, temperature, scale)
}

/// Trainable 1x1 convolution from guide channels to hint channels.
#[derive(Debug, Clone)]
pub struct FeatureRegressor<T: Scalar = f32> {
    store: ParamStore<T>,
    weight: ParamId,
    bias: ParamId,
}

impl<T: Scalar> FeatureRegressor<T> {
    pub fn new(guide_channels: usize, hint_channels: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, Stream::Regressor);
        let bound = (6.0 / guide_channels as f64).sqrt();
        let mut store = ParamStore::new();
        let weight = store.add(
            "regressor.weight",
            Tensor::from_fn(vec![hint_channels, guide_channels, 1, 1], |_| T::lit(r.gen_range(-bound..bound))),
        );
        let bias = store.add("regressor.bias", Tensor::zeros(vec![hint_channels]));
        FeatureRegressor { store, weight, bias }
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn apply<'t>(&self, tape: &'t Tape<T>, guide: Var<'t, T>) -> Result<Var<'t, T>> {
        guide.conv2d(
            tape.param(&self.store, self.weight),
            Some(tape.param(&self.store, self.bias)),
            Conv2dOptions::default(),
        )
    }
}

/// MSE between the regressed guide map and the hint map. The spatially
/// larger map is average-pooled down to the smaller one first.
pub fn feature_loss<'t, T: Scalar>(
    guide: Var<'t, T>,
    hint: Var<'t, T>,
    regressor: &FeatureRegressor<T>,
) -> Result<Var<'t, T>> {
    let (gs, hs) = (guide.shape(), hint.shape());
    if gs.len() != 4 || hs.len() != 4 || gs[0] != hs[0] {
        return Err(Error::shape("feature_loss", format!("guide {gs:?} vs hint {hs:?}")));
    }
    let (h, w) = (gs[2].min(hs[2]), gs[3].min(hs[3]));
    let pool = |v: Var<'t, T>, s: &[usize]| {
        if s[2] == h && s[3] == w {
            Ok(v)
        } else {
            v.adaptive_avg_pool2d(h, w)
        }
    };
    let guide = pool(guide, &gs)?;
    let hint = pool(hint, &hs)?;
    regressor.apply(guide.tape(), guide)?.mse(hint)
}

fn batch_of(op: &'static str, s: &[usize], t: &[usize], min: usize) -> Result<()> {
    if s.len() != 2 || t.len() != 2 || s[0] != t[0] {
        return Err(Error::shape(op, format!("student {s:?} vs teacher {t:?}, both must be [N,D]")));
    }
    if s[0] < min {
        return Err(Error::invalid(format!("{op} needs a batch of at least {min}, got {}", s[0])));
    }
    Ok(())
}

/// Huber loss between mean-normalized pairwise distance tables.
pub fn rkd_distance_loss<'t, T: Scalar>(student: Var<'t, T>, teacher: Var<'t, T>) -> Result<Var<'t, T>> {
    batch_of("rkd_distance_loss", &student.shape(), &teacher.shape(), 2)?;
    let t = teacher.pdist()?.div_mean_positive();
    let s = student.pdist()?.div_mean_positive();
    s.smooth_l1(t)
}

/// Huber loss between the cosines of all triplet angles. Entry `[a][b][c]`
/// is the cosine at vertex `a` between the directions to `b` and `c`.
pub fn rkd_angle_loss<'t, T: Scalar>(student: Var<'t, T>, teacher: Var<'t, T>) -> Result<Var<'t, T>> {
    batch_of("rkd_angle_loss", &student.shape(), &teacher.shape(), 3)?;
    let cosines = |x: Var<'t, T>| -> Result<Var<'t, T>> {
        let e = x.pairwise_diff()?.l2_normalize_last();
        e.bmm_nt(e)
    };
    cosines(student)?.smooth_l1(cosines(teacher)?)
}

/// Student-side quantities of one batch.
#[derive(Debug, Clone, Copy)]
pub struct StudentTerms<'t, T: Scalar> {
    pub logits: Var<'t, T>,
    pub embedding: Var<'t, T>,
    pub guide: Option<Var<'t, T>>,
}

/// Teacher-side quantities of one batch, precomputed in eval mode.
#[derive(Debug, Clone, Copy)]
pub struct TeacherTerms<'a, T: Scalar> {
    pub logits: &'a [T],
    pub embedding: &'a Tensor<T>,
    pub hint: Option<&'a Tensor<T>>,
}

/// The method's distillation term alone.
pub fn distillation_loss<'t, T: Scalar>(
    method: Method,
    student: &StudentTerms<'t, T>,
    teacher: &TeacherTerms<'_, T>,
    cfg: &DistillConfig,
    regressor: Option<&FeatureRegressor<T>>,
) -> Result<Var<'t, T>> {
    let tape = student.logits.tape();
    match method {
        Method::Response => {
            soft_target_loss(student.logits, teacher.logits, T::lit(cfg.temperature), cfg.temperature_squared)
        }
        Method::Feature => {
            let missing = |what: &str| Error::ConfigGeneral(format!("feature method needs a {what}"));
            let guide = student.guide.ok_or_else(|| missing("student guide layer"))?;
            let hint = teacher.hint.ok_or_else(|| missing("teacher hint layer"))?;
            let regressor = regressor.ok_or_else(|| missing("regressor"))?;
            feature_loss(guide, tape.constant(hint), regressor)
        }
        Method::Relational => {
            let t = tape.constant(teacher.embedding);
            rkd_distance_loss(student.embedding, t)?.add(rkd_angle_loss(student.embedding, t)?)
        }
    }
}

/// `w_d * L_distill + w_s * L_student` with the weights from
/// [`DistillConfig::weights`] and `L_student` the logit BCE.
pub fn combined_loss<'t, T: Scalar>(
    method: Method,
    student: &StudentTerms<'t, T>,
    teacher: &TeacherTerms<'_, T>,
    labels: &[T],
    cfg: &DistillConfig,
    regressor: Option<&FeatureRegressor<T>>,
) -> Result<Var<'t, T>> {
    let (wd, ws) = cfg.weights();
    let hard = bce_with_logits_loss(student.logits, labels)?;
    let soft = distillation_loss(method, student, teacher, cfg, regressor)?;
    soft.scale(T::lit(wd)).add(hard.scale(T::lit(ws)))
}
