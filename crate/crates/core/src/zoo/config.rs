//! Declarative architecture descriptions (JSON-serializable).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::Activation;

/// Positive rational expansion ratio, written `"9/2"` or `"6"` in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u32,
    pub den: u32,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Self {
        Ratio { num, den }
    }

    /// `channels * ratio` if it is a whole number.
    pub fn apply(self, channels: usize) -> Option<usize> {
        let scaled = channels * self.num as usize;
        (self.den != 0 && scaled % self.den as usize == 0).then(|| scaled / self.den as usize)
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Ratio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("bad ratio `{s}`: {e}"));
        match s.split_once('/') {
            Some((n, d)) => Ok(Ratio::new(parse(n)?, parse(d)?)),
            None => Ok(Ratio::new(parse(s)?, 1)),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u32),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(Ratio::new(v, 1)),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

/// Convolution followed by optional batch norm and activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "yes")]
    pub bias: bool,
    #[serde(default = "yes")]
    pub batch_norm: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
}

/// Inverted residual block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BneckSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    pub expansion_ratio: Ratio,
    #[serde(default)]
    pub se: bool,
    pub activation: Activation,
}

/// 1x1 convolution with bias and no normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
}

/// Fully connected layer, optionally followed by activation then dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv(ConvSpec),
    Bneck(BneckSpec),
    /// 2x2 max pooling, stride 2.
    Pool,
    AdaptivePool { output: usize },
    Pointwise(PointwiseSpec),
    Flatten,
    Linear(LinearSpec),
    Dropout { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Teacher,
    Student,
}

/// Whole-network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub family: Family,
    /// `[channels, height, width]` of one input.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    /// Layer whose output is used for feature distillation by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_layer: Option<String>,
}

/// Per-sample activation shape: `[C,H,W]` maps or `[F]` vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Map { c: usize, h: usize, w: usize },
    Vector(usize),
}

impl ActShape {
    pub fn numel(self) -> usize {
        match self {
            ActShape::Map { c, h, w } => c * h * w,
            ActShape::Vector(f) => f,
        }
    }

    pub fn dims(self) -> Vec<usize> {
        match self {
            ActShape::Map { c, h, w } => vec![c, h, w],
            ActShape::Vector(f) => vec![f],
        }
    }
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Checks every layer invariant and returns the output shape of each layer.
    pub fn infer_shapes(&self) -> Result<Vec<ActShape>> {
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Unsupported(format!(
                "input shape {:?} is not fully specified",
                self.input_shape
            )));
        }
        let mut cur = ActShape::Map { c, h, w };
        let mut shapes = Vec::with_capacity(self.layers.len());
        let student = self.family == Family::Student;
        for (index, layer) in self.layers.iter().enumerate() {
            let err = |message: String| Error::Config { index, message: format!("`{}`: {message}", layer.name) };
            let map = |cur: ActShape| match cur {
                ActShape::Map { c, h, w } => Ok((c, h, w)),
                ActShape::Vector(_) => Err(err("expects a feature map, got a flat vector".into())),
            };
            let check_kernel = |k: usize| {
                let allowed: &[usize] = if student { &[1, 3] } else { &[1, 3, 5] };
                if allowed.contains(&k) {
                    Ok(())
                } else {
                    Err(err(format!("kernel {k} not in {allowed:?}")))
                }
            };
            let check_stride = |s: usize| {
                if s == 1 || s == 2 {
                    Ok(())
                } else {
                    Err(err(format!("stride {s} not in [1, 2]")))
                }
            };
            let chain = |expected: usize, got: usize| {
                if expected == got {
                    Ok(())
                } else {
                    Err(err(format!("in_channels {got} but previous layer yields {expected}")))
                }
            };
            cur = match &layer.kind {
                LayerKind::Conv(s) => {
                    let (c, h, w) = map(cur)?;
                    chain(c, s.in_channels)?;
                    check_kernel(s.kernel)?;
                    check_stride(s.stride)?;
                    let pad = s.kernel / 2;
                    if s.kernel > h + 2 * pad || s.kernel > w + 2 * pad {
                        return Err(err(format!("kernel {} exceeds {h}x{w}", s.kernel)));
                    }
                    ActShape::Map {
                        c: s.out_channels,
                        h: (h + 2 * pad - s.kernel) / s.stride + 1,
                        w: (w + 2 * pad - s.kernel) / s.stride + 1,
                    }
                }
                LayerKind::Bneck(s) => {
                    let (c, h, w) = map(cur)?;
                    chain(c, s.in_channels)?;
                    check_kernel(s.kernel)?;
                    check_stride(s.stride)?;
                    if s.expansion_ratio.den == 0 || s.expansion_ratio.num < s.expansion_ratio.den {
                        return Err(err(format!("expansion ratio {} below 1", s.expansion_ratio)));
                    }
                    if s.expansion_ratio.apply(s.in_channels).is_none() {
                        return Err(err(format!(
                            "{} x {} is not a whole channel count",
                            s.in_channels, s.expansion_ratio
                        )));
                    }
                    let pad = s.kernel / 2;
                    ActShape::Map {
                        c: s.out_channels,
                        h: (h + 2 * pad - s.kernel) / s.stride + 1,
                        w: (w + 2 * pad - s.kernel) / s.stride + 1,
                    }
                }
                LayerKind::Pool => {
                    let (c, h, w) = map(cur)?;
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(err(format!("2x2 pooling of odd extent {h}x{w}")));
                    }
                    ActShape::Map { c, h: h / 2, w: w / 2 }
                }
                LayerKind::AdaptivePool { output } => {
                    let (c, _, _) = map(cur)?;
                    if *output == 0 {
                        return Err(err("adaptive pool output must be >= 1".into()));
                    }
                    ActShape::Map { c, h: *output, w: *output }
                }
                LayerKind::Pointwise(s) => {
                    let (c, h, w) = map(cur)?;
                    chain(c, s.in_channels)?;
                    ActShape::Map { c: s.out_channels, h, w }
                }
                LayerKind::Flatten => ActShape::Vector(cur.numel()),
                LayerKind::Linear(s) => {
                    let ActShape::Vector(f) = cur else {
                        return Err(err("linear layer needs a flattened input".into()));
                    };
                    chain(f, s.in_channels)?;
                    if let Some(p) = s.dropout_p {
                        if !(0.0..1.0).contains(&p) {
                            return Err(err(format!("dropout_p {p} outside [0,1)")));
                        }
                    }
                    ActShape::Vector(s.out_channels)
                }
                LayerKind::Dropout { p } => {
                    if !(0.0..1.0).contains(p) {
                        return Err(err(format!("dropout p {p} outside [0,1)")));
                    }
                    cur
                }
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.infer_shapes()?;
        let mut seen = std::collections::HashSet::new();
        for (index, l) in self.layers.iter().enumerate() {
            if !seen.insert(l.name.as_str()) {
                return Err(Error::Config { index, message: format!("duplicate layer name `{}`", l.name) });
            }
        }
        if shapes.last() != Some(&ActShape::Vector(1)) {
            return Err(Error::ConfigGeneral(format!(
                "`{}` must end in a single logit, ends in {:?}",
                self.name,
                shapes.last()
            )));
        }
        if self.family == Family::Student {
            self.check_student_head()?;
        }
        if let Some(f) = &self.feature_layer {
            if self.layer_index(f).is_none() {
                return Err(Error::ConfigGeneral(format!("feature layer `{f}` not found")));
            }
        }
        Ok(())
    }

    /// Students end with adaptive pool, two pointwise convs (an optional
    /// dropout between them) and a flatten.
    fn check_student_head(&self) -> Result<()> {
        let tail: Vec<&LayerKind> = self
            .layers
            .iter()
            .map(|l| &l.kind)
            .filter(|k| !matches!(k, LayerKind::Dropout { .. }))
            .rev()
            .take(4)
            .collect();
        let ok = matches!(
            tail.as_slice(),
            [LayerKind::Flatten, LayerKind::Pointwise(_), LayerKind::Pointwise(_), LayerKind::AdaptivePool { .. }]
        );
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigGeneral(format!(
                "student `{}` must end with adaptive_pool, two pointwise convs and flatten",
                self.name
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_parsing() {
        assert_eq!("9/2".parse::<Ratio>().unwrap(), Ratio::new(9, 2));
        assert_eq!("6".parse::<Ratio>().unwrap(), Ratio::new(6, 1));
        assert_eq!(Ratio::new(11, 3).apply(24), Some(88));
        assert_eq!(Ratio::new(11, 3).apply(16), None);
        let json = serde_json::to_string(&Ratio::new(9, 2)).unwrap();
        assert_eq!(json, "\"9/2\"");
        let back: Ratio = serde_json::from_str("4").unwrap();
        assert_eq!(back, Ratio::new(4, 1));
    }

    fn tiny(layers: &str) -> String {
        format!(r#"{{"name":"t","family":"student","input_shape":[1,8,8],"layers":{layers}}}"#)
    }

    #[test]
    fn channel_chaining_error_names_layer_index() {
        let text = tiny(
            r#"[{"name":"stem","kind":"conv","in_channels":1,"out_channels":4,"kernel":3,"activation":"relu"},
                {"name":"b1","kind":"bneck","in_channels":8,"out_channels":4,"kernel":3,"expansion_ratio":"2","activation":"relu"}]"#,
        );
        match ModelConfig::from_json(&text) {
            Err(Error::Config { index, message }) => {
                assert_eq!(index, 1);
                assert!(message.contains("in_channels 8"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn student_rejects_five_by_five() {
        let text = tiny(
            r#"[{"name":"stem","kind":"conv","in_channels":1,"out_channels":4,"kernel":5}]"#,
        );
        assert!(matches!(ModelConfig::from_json(&text), Err(Error::Config { index: 0, .. })));
    }

    #[test]
    fn student_head_is_enforced() {
        let text = tiny(
            r#"[{"name":"stem","kind":"conv","in_channels":1,"out_channels":4,"kernel":3},
                {"name":"pool","kind":"adaptive_pool","output":1},
                {"name":"flat","kind":"flatten"},
                {"name":"fc","kind":"linear","in_channels":4,"out_channels":1}]"#,
        );
        assert!(matches!(ModelConfig::from_json(&text), Err(Error::ConfigGeneral(_))));
        let text = tiny(
            r#"[{"name":"stem","kind":"conv","in_channels":1,"out_channels":4,"kernel":3},
                {"name":"pool","kind":"adaptive_pool","output":1},
                {"name":"h1","kind":"pointwise","in_channels":4,"out_channels":8,"activation":"relu"},
                {"name":"drop","kind":"dropout","p":0.2},
                {"name":"h2","kind":"pointwise","in_channels":8,"out_channels":1},
                {"name":"flat","kind":"flatten"}]"#,
        );
        ModelConfig::from_json(&text).unwrap();
    }

    #[test]
    fn output_must_be_one_logit() {
        let text = tiny(
            r#"[{"name":"pool","kind":"adaptive_pool","output":1},
                {"name":"h1","kind":"pointwise","in_channels":1,"out_channels":8},
                {"name":"h2","kind":"pointwise","in_channels":8,"out_channels":2},
                {"name":"flat","kind":"flatten"}]"#,
        );
        assert!(ModelConfig::from_json(&text).is_err());
    }
}
