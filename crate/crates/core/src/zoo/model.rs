//! Realized networks: parameters, running statistics and the forward pass.

use rand::distributions::{Distribution, Uniform};

use super::config::{ActShape, BneckSpec, ConvSpec, Family, LayerKind, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::{self, Rng, Stream};
use crate::tensor::ops::{BatchStats, BN_EPS, BN_MOMENTUM};
use crate::tensor::{
    Activation, Conv2dOptions, NormMode, ParamId, ParamStore, RunningStats, Scalar, Tape, Tensor, Var,
};

/// Switches used to ablate parts of every bottleneck block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub residual: bool,
    pub squeeze_excite: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation { residual: true, squeeze_excite: true }
    }
}

#[derive(Debug, Clone)]
struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
}

#[derive(Debug, Clone)]
struct ConvUnit {
    weight: ParamId,
    bias: Option<ParamId>,
    bn: Option<BatchNorm>,
    act: Option<Activation>,
    opts: Conv2dOptions,
}

#[derive(Debug, Clone)]
struct SqueezeExcite {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct Bottleneck {
    expand: Option<ConvUnit>,
    depthwise: ConvUnit,
    se: Option<SqueezeExcite>,
    project: ConvUnit,
    residual: bool,
}

#[derive(Debug, Clone)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
    act: Option<Activation>,
    dropout: Option<f64>,
}

#[derive(Debug, Clone)]
enum Layer {
    Conv(ConvUnit),
    Bneck(Box<Bottleneck>),
    Pool,
    AdaptivePool(usize),
    Flatten,
    Linear(Dense),
    Dropout(f64),
}

impl Layer {
    fn has_params(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::Bneck(_) | Layer::Linear(_))
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward<'t, T: Scalar> {
    /// `[N,1]` logits.
    pub logits: Var<'t, T>,
    /// Flattened `[N,D]` input of the last parametric layer.
    pub embedding: Var<'t, T>,
    /// Output of every layer, in config order.
    pub outputs: Vec<Var<'t, T>>,
}

struct RunCtx<'a, T: Scalar> {
    rng: Option<&'a mut Rng>,
    updates: Vec<(usize, BatchStats<T>)>,
}

impl<T: Scalar> RunCtx<'_, T> {
    fn train(&self) -> bool {
        self.rng.is_some()
    }
}

/// A network built from a [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    shapes: Vec<ActShape>,
    params: ParamStore<T>,
    stats: Vec<(String, RunningStats<T>)>,
    layers: Vec<Layer>,
    ablation: Ablation,
}

/// Copy of all learned values, used to restore the best epoch.
#[derive(Debug, Clone)]
pub struct Snapshot<T: Scalar> {
    params: ParamStore<T>,
    stats: Vec<RunningStats<T>>,
}

struct Builder<'a, T: Scalar> {
    params: ParamStore<T>,
    stats: Vec<(String, RunningStats<T>)>,
    rng: &'a mut Rng,
}

impl<T: Scalar> Builder<'_, T> {
    /// He-uniform weights, bound `sqrt(6 / fan_in)`, drawn in single precision.
    fn kaiming(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let n: usize = shape.iter().product();
        let dist = Uniform::new(-bound, bound);
        let data = (0..n).map(|_| T::lit(dist.sample(&mut *self.rng) as f64)).collect();
        self.params.add(name, Tensor::new(shape, data).expect("valid shape"))
    }

    fn constant(&mut self, name: String, len: usize, value: f64) -> ParamId {
        self.params.add(name, Tensor::full(vec![len], T::lit(value)))
    }

    fn batch_norm(&mut self, prefix: &str, channels: usize) -> BatchNorm {
        let gamma = self.constant(format!("{prefix}.bn.gamma"), channels, 1.0);
        let beta = self.constant(format!("{prefix}.bn.beta"), channels, 0.0);
        self.stats.push((format!("{prefix}.bn"), RunningStats::new(channels)));
        BatchNorm { gamma, beta, stats: self.stats.len() - 1 }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        prefix: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
        bn: bool,
        act: Option<Activation>,
    ) -> ConvUnit {
        let fan_in = cin / groups * kernel * kernel;
        let weight = self.kaiming(format!("{prefix}.weight"), vec![cout, cin / groups, kernel, kernel], fan_in);
        let bias = bias.then(|| self.constant(format!("{prefix}.bias"), cout, 0.0));
        let bn = bn.then(|| self.batch_norm(prefix, cout));
        ConvUnit {
            weight,
            bias,
            bn,
            act,
            opts: Conv2dOptions { stride, padding: kernel / 2, groups },
        }
    }

    fn conv_spec(&mut self, prefix: &str, s: &ConvSpec) -> ConvUnit {
        self.conv(prefix, s.in_channels, s.out_channels, s.kernel, s.stride, 1, s.bias, s.batch_norm, s.activation)
    }

    fn bneck(&mut self, prefix: &str, s: &BneckSpec) -> Bottleneck {
        let exp = s.expansion_ratio.apply(s.in_channels).expect("validated ratio");
        let act = Some(s.activation);
        let expand = (exp != s.in_channels)
            .then(|| self.conv(&format!("{prefix}.expand"), s.in_channels, exp, 1, 1, 1, false, true, act));
        let depthwise = self.conv(&format!("{prefix}.dw"), exp, exp, s.kernel, s.stride, exp, false, true, act);
        let se = s.se.then(|| {
            let sq = se_width(exp);
            SqueezeExcite {
                w1: self.kaiming(format!("{prefix}.se.fc1.weight"), vec![sq, exp], exp),
                b1: self.constant(format!("{prefix}.se.fc1.bias"), sq, 0.0),
                w2: self.kaiming(format!("{prefix}.se.fc2.weight"), vec![exp, sq], sq),
                b2: self.constant(format!("{prefix}.se.fc2.bias"), exp, 0.0),
            }
        });
        let project = self.conv(&format!("{prefix}.project"), exp, s.out_channels, 1, 1, 1, false, true, None);
        Bottleneck {
            expand,
            depthwise,
            se,
            project,
            residual: s.stride == 1 && s.in_channels == s.out_channels,
        }
    }
}

/// Squeeze width of an SE block over `channels` (reduction 4).
pub fn se_width(channels: usize) -> usize {
    (channels / 4).max(1)
}

impl<T: Scalar> Model<T> {
    /// Realizes `config` with weights drawn from the init stream of `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let shapes = config.infer_shapes()?;
        let mut init = rng::stream(seed, Stream::Init);
        let mut b = Builder { params: ParamStore::new(), stats: Vec::new(), rng: &mut init };
        let mut layers = Vec::with_capacity(config.layers.len());
        for spec in &config.layers {
            let name = spec.name.as_str();
            layers.push(match &spec.kind {
                LayerKind::Conv(s) => Layer::Conv(b.conv_spec(name, s)),
                LayerKind::Bneck(s) => Layer::Bneck(Box::new(b.bneck(name, s))),
                LayerKind::Pool => Layer::Pool,
                LayerKind::AdaptivePool { output } => Layer::AdaptivePool(*output),
                LayerKind::Pointwise(s) => {
                    Layer::Conv(b.conv(name, s.in_channels, s.out_channels, 1, 1, 1, true, false, s.activation))
                }
                LayerKind::Flatten => Layer::Flatten,
                LayerKind::Linear(s) => Layer::Linear(Dense {
                    weight: b.kaiming(format!("{name}.weight"), vec![s.out_channels, s.in_channels], s.in_channels),
                    bias: b.constant(format!("{name}.bias"), s.out_channels, 0.0),
                    act: s.activation,
                    dropout: s.dropout_p.filter(|p| *p > 0.0),
                }),
                LayerKind::Dropout { p } => Layer::Dropout(*p),
            });
        }
        Ok(Model {
            config: config.clone(),
            shapes,
            params: b.params,
            stats: b.stats,
            layers,
            ablation: Ablation::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Named batch-norm running statistics, in build order.
    pub fn running_stats(&self) -> &[(String, RunningStats<T>)] {
        &self.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [(String, RunningStats<T>)] {
        &mut self.stats
    }

    /// Per-sample output shape of every layer.
    pub fn layer_shapes(&self) -> &[ActShape] {
        &self.shapes
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    pub fn set_ablation(&mut self, ablation: Ablation) {
        self.ablation = ablation;
    }

    /// Index and per-sample shape of the named layer's output.
    pub fn tap(&self, layer: &str) -> Result<(usize, ActShape)> {
        let idx = self
            .config
            .layer_index(layer)
            .ok_or_else(|| Error::invalid(format!("model `{}` has no layer `{layer}`", self.name())))?;
        Ok((idx, self.shapes[idx]))
    }

    pub fn snapshot(&self) -> Snapshot<T> {
        Snapshot {
            params: self.params.clone(),
            stats: self.stats.iter().map(|(_, s)| s.clone()).collect(),
        }
    }

    pub fn restore(&mut self, snap: &Snapshot<T>) {
        self.params.load_values(&snap.params);
        for ((_, dst), src) in self.stats.iter_mut().zip(&snap.stats) {
            *dst = src.clone();
        }
    }

    /// Same weights in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut params = ParamStore::new();
        for (_, p) in self.params.iter() {
            let id = params.add(p.name.clone(), p.tensor.cast::<U>());
            if !p.tensor.requires_grad() {
                params.get_mut(id).set_requires_grad(false);
            }
        }
        let cast = |v: &[T]| v.iter().map(|x| U::lit(x.f64())).collect();
        Model {
            config: self.config.clone(),
            shapes: self.shapes.clone(),
            params,
            stats: self
                .stats
                .iter()
                .map(|(n, s)| (n.clone(), RunningStats { mean: cast(&s.mean), var: cast(&s.var) }))
                .collect(),
            layers: self.layers.clone(),
            ablation: self.ablation,
        }
    }

    /// Training-mode pass: batch statistics, active dropout, running stats updated.
    pub fn forward_train<'t>(&mut self, tape: &'t Tape<T>, x: Var<'t, T>, rng: &mut Rng) -> Result<Forward<'t, T>> {
        let mut ctx = RunCtx { rng: Some(rng), updates: Vec::new() };
        let out = self.run(tape, x, &mut ctx)?;
        let momentum = T::lit(BN_MOMENTUM);
        for (idx, batch) in ctx.updates {
            self.stats[idx].1.update(&batch, momentum);
        }
        Ok(out)
    }

    /// Inference-mode pass using running statistics; the model is not modified.
    pub fn forward_eval<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Forward<'t, T>> {
        self.run(tape, x, &mut RunCtx { rng: None, updates: Vec::new() })
    }

    /// Eval-mode logits for an `[N,C,H,W]` batch, without recording gradients.
    pub fn predict_logits(&self, batch: &Tensor<T>) -> Result<Vec<T>> {
        let tape = Tape::no_grad();
        let fwd = self.forward_eval(&tape, tape.constant(batch))?;
        Ok(fwd.logits.value().into_vec())
    }

    fn run<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, ctx: &mut RunCtx<'_, T>) -> Result<Forward<'t, T>> {
        let xs = x.shape();
        if xs.len() != 4 || xs[1..] != self.config.input_shape {
            return Err(Error::shape(
                "forward",
                format!("input {xs:?} vs model input [N,{:?}]", self.config.input_shape),
            ));
        }
        let n = xs[0];
        let last_param = self.layers.iter().rposition(Layer::has_params);
        let mut cur = x;
        let mut embedding = None;
        let mut outputs = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            if Some(i) == last_param {
                embedding = Some(cur.reshape(vec![n, cur.numel() / n])?);
            }
            cur = match layer {
                Layer::Conv(u) => self.conv_unit(tape, cur, u, ctx)?,
                Layer::Bneck(b) => self.bottleneck(tape, cur, b, ctx)?,
                Layer::Pool => cur.max_pool2x2()?,
                Layer::AdaptivePool(o) => cur.adaptive_avg_pool2d(*o, *o)?,
                Layer::Flatten => cur.flatten()?,
                Layer::Linear(d) => {
                    let w = tape.param(&self.params, d.weight);
                    let b = tape.param(&self.params, d.bias);
                    let mut y = cur.linear(w, Some(b))?;
                    if let Some(a) = d.act {
                        y = y.activation(a);
                    }
                    match (d.dropout, ctx.rng.as_deref_mut()) {
                        (Some(p), Some(r)) => y.dropout(p, true, r)?,
                        _ => y,
                    }
                }
                Layer::Dropout(p) => match ctx.rng.as_deref_mut() {
                    Some(r) if *p > 0.0 => cur.dropout(*p, true, r)?,
                    _ => cur,
                },
            };
            outputs.push(cur);
        }
        let embedding = embedding.unwrap_or_else(|| cur);
        Ok(Forward { logits: cur.reshape(vec![n, 1])?, embedding, outputs })
    }

    fn conv_unit<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, u: &ConvUnit, ctx: &mut RunCtx<'_, T>) -> Result<Var<'t, T>> {
        let w = tape.param(&self.params, u.weight);
        let b = u.bias.map(|id| tape.param(&self.params, id));
        let mut y = x.conv2d(w, b, u.opts)?;
        if let Some(bn) = &u.bn {
            let gamma = tape.param(&self.params, bn.gamma);
            let beta = tape.param(&self.params, bn.beta);
            let eps = T::lit(BN_EPS);
            y = if ctx.train() {
                let (y, stats) = y.batch_norm2d(gamma, beta, NormMode::Train, eps)?;
                ctx.updates.extend(stats.map(|s| (bn.stats, s)));
                y
            } else {
                let rs = &self.stats[bn.stats].1;
                y.batch_norm2d(gamma, beta, NormMode::Eval { mean: &rs.mean, var: &rs.var }, eps)?.0
            };
        }
        Ok(match u.act {
            Some(a) => y.activation(a),
            None => y,
        })
    }

    fn bottleneck<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, b: &Bottleneck, ctx: &mut RunCtx<'_, T>) -> Result<Var<'t, T>> {
        let mut y = match &b.expand {
            Some(u) => self.conv_unit(tape, x, u, ctx)?,
            None => x,
        };
        y = self.conv_unit(tape, y, &b.depthwise, ctx)?;
        if let (Some(se), true) = (&b.se, self.ablation.squeeze_excite) {
            let gate = squeeze_excite(tape, &self.params, y, se)?;
            y = y.scale_channels(gate)?;
        }
        y = self.conv_unit(tape, y, &b.project, ctx)?;
        if b.residual && self.ablation.residual {
            y = y.add(x)?;
        }
        Ok(y)
    }

    /// SE gate values in `(0,1)`, shape `[N,C]`, for the named bottleneck's
    /// depthwise output under eval mode.
    pub fn se_gate(&self, layer: &str, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let (idx, _) = self.tap(layer)?;
        let Layer::Bneck(b) = &self.layers[idx] else {
            return Err(Error::invalid(format!("`{layer}` is not a bottleneck")));
        };
        let Some(se) = &b.se else {
            return Err(Error::invalid(format!("`{layer}` has no SE block")));
        };
        let tape = Tape::no_grad();
        let fwd = self.forward_eval(&tape, tape.constant(batch))?;
        let input = if idx == 0 { tape.constant(batch) } else { fwd.outputs[idx - 1] };
        let mut ctx = RunCtx { rng: None, updates: Vec::new() };
        let mut y = match &b.expand {
            Some(u) => self.conv_unit(&tape, input, u, &mut ctx)?,
            None => input,
        };
        y = self.conv_unit(&tape, y, &b.depthwise, &mut ctx)?;
        Ok(squeeze_excite(&tape, &self.params, y, se)?.value())
    }
}

fn squeeze_excite<'t, T: Scalar>(
    tape: &'t Tape<T>,
    params: &ParamStore<T>,
    y: Var<'t, T>,
    se: &SqueezeExcite,
) -> Result<Var<'t, T>> {
    let s = y.shape();
    let pooled = y.adaptive_avg_pool2d(1, 1)?.reshape(vec![s[0], s[1]])?;
    let h = pooled
        .linear(tape.param(params, se.w1), Some(tape.param(params, se.b1)))?
        .relu();
    Ok(h.linear(tape.param(params, se.w2), Some(tape.param(params, se.b2)))?.sigmoid())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::config::{LayerSpec, PointwiseSpec, Ratio};
    use rand::Rng;

    fn head(c: usize) -> Vec<LayerSpec> {
        let l = |name: &str, kind| LayerSpec { name: name.into(), kind };
        vec![
            l("pool", LayerKind::AdaptivePool { output: 1 }),
            l("h1", LayerKind::Pointwise(PointwiseSpec { in_channels: c, out_channels: 4, activation: Some(Activation::Relu) })),
            l("h2", LayerKind::Pointwise(PointwiseSpec { in_channels: 4, out_channels: 1, activation: None })),
            l("flat", LayerKind::Flatten),
        ]
    }

    fn one_block(se: bool, stride: usize) -> ModelConfig {
        let mut layers = vec![LayerSpec {
            name: "b".into(),
            kind: LayerKind::Bneck(BneckSpec {
                in_channels: 2,
                out_channels: 2,
                kernel: 3,
                stride,
                expansion_ratio: Ratio::new(3, 1),
                se,
                activation: Activation::Hardswish,
            }),
        }];
        layers.extend(head(2));
        ModelConfig { name: "blk".into(), family: Family::Student, input_shape: [2, 6, 6], layers, feature_layer: None }
    }

    fn input(seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, Stream::Clips);
        Tensor::from_fn(vec![2, 2, 6, 6], |_| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn residual_ablation_recovers_skip() {
        let mut m = Model::<f64>::build(&one_block(true, 1), 3).unwrap();
        let x = input(1);
        let tape = Tape::no_grad();
        let with = m.forward_eval(&tape, tape.constant(&x)).unwrap().outputs[0].value();
        m.set_ablation(Ablation { residual: false, squeeze_excite: true });
        let without = m.forward_eval(&tape, tape.constant(&x)).unwrap().outputs[0].value();
        for ((a, b), xi) in with.data().iter().zip(without.data()).zip(x.data()) {
            assert!((a - b - xi).abs() < 1e-12);
        }
    }

    #[test]
    fn strided_block_has_no_skip() {
        let m = Model::<f64>::build(&one_block(false, 2), 3).unwrap();
        assert_eq!(m.layer_shapes()[0], ActShape::Map { c: 2, h: 3, w: 3 });
        let Layer::Bneck(b) = &m.layers[0] else { panic!() };
        assert!(!b.residual);
    }

    #[test]
    fn se_gate_in_open_unit_interval_and_matters() {
        let mut m = Model::<f64>::build(&one_block(true, 1), 5).unwrap();
        let x = input(2);
        let gate = m.se_gate("b", &x).unwrap();
        assert_eq!(gate.shape(), &[2, 6]);
        assert!(gate.data().iter().all(|g| *g > 0.0 && *g < 1.0));
        let a = m.predict_logits(&x).unwrap();
        m.set_ablation(Ablation { residual: true, squeeze_excite: false });
        let b = m.predict_logits(&x).unwrap();
        assert!(a.iter().zip(&b).any(|(p, q)| (p - q).abs() > 1e-9));
        let zeros = Tensor::zeros(vec![1, 2, 6, 6]);
        let z_off = m.predict_logits(&zeros).unwrap();
        m.set_ablation(Ablation::default());
        let z_on = m.predict_logits(&zeros).unwrap();
        assert!((z_on[0] - z_off[0]).abs() < 1e-12, "zero input unaffected by the gate");
    }

    #[test]
    fn train_pass_updates_running_stats_eval_does_not() {
        let mut m = Model::<f64>::build(&one_block(true, 1), 5).unwrap();
        let before = m.running_stats()[0].1.clone();
        let x = input(3);
        let tape = Tape::new();
        m.forward_eval(&tape, tape.input(&x)).unwrap();
        assert_eq!(m.running_stats()[0].1, before);
        let mut r = rng::stream(0, Stream::Dropout);
        m.forward_train(&tape, tape.input(&x), &mut r).unwrap();
        assert_ne!(m.running_stats()[0].1, before);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let m = Model::<f64>::build(&one_block(true, 1), 5).unwrap();
        let err = m.predict_logits(&Tensor::zeros(vec![1, 1, 6, 6])).unwrap_err();
        assert!(err.to_string().contains("input"), "{err}");
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut m = Model::<f64>::build(&one_block(true, 1), 5).unwrap();
        let snap = m.snapshot();
        let x = input(4);
        let before = m.predict_logits(&x).unwrap();
        m.params_mut().iter_mut().for_each(|p| p.tensor.data_mut().iter_mut().for_each(|v| *v += 0.1));
        assert_ne!(m.predict_logits(&x).unwrap(), before);
        m.restore(&snap);
        assert_eq!(m.predict_logits(&x).unwrap(), before);
    }
}
