//! Architecture descriptions. A [`NetworkSpec`] is a validated, text-round-
//! trippable layer plan; [`super::build_network`] turns it into parameters.

use std::fmt;

use crate::error::{Error, Result};
use crate::kv;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Generator,
    Discriminator,
    Clone,
    Victim,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Discriminator => "discriminator",
            Role::Clone => "clone",
            Role::Victim => "victim",
        }
    }

    pub fn parse(s: &str) -> Result<Role> {
        match s {
            "generator" => Ok(Role::Generator),
            "discriminator" => Ok(Role::Discriminator),
            "clone" => Ok(Role::Clone),
            "victim" => Ok(Role::Victim),
            other => Err(Error::config(format!("unknown role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputShape {
    /// Latent vector of the given dimension.
    Latent(usize),
    /// Image batch of (channels, height, width).
    Image { c: usize, h: usize, w: usize },
}

impl fmt::Display for InputShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputShape::Latent(m) => write!(f, "latent:{m}"),
            InputShape::Image { c, h, w } => write!(f, "image:{c}x{h}x{w}"),
        }
    }
}

impl InputShape {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(m) = s.strip_prefix("latent:") {
            let m: usize = m
                .parse()
                .map_err(|_| Error::config(format!("bad latent dim `{m}`")))?;
            return Ok(InputShape::Latent(m));
        }
        if let Some(dims) = s.strip_prefix("image:") {
            let parts: Vec<usize> = dims
                .split('x')
                .map(|p| p.parse().map_err(|_| Error::config(format!("bad image dims `{dims}`"))))
                .collect::<Result<_>>()?;
            if parts.len() != 3 {
                return Err(Error::config(format!("image dims need CxHxW, got `{dims}`")));
            }
            return Ok(InputShape::Image {
                c: parts[0],
                h: parts[1],
                w: parts[2],
            });
        }
        Err(Error::config(format!("unknown input shape `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv { out: usize, k: usize, s: usize, p: usize },
    Deconv { out: usize, k: usize, s: usize, p: usize },
    Bn,
    Relu,
    Leaky { slope: f32 },
    Tanh,
    Sigmoid,
    Flatten,
    Reshape { c: usize, h: usize, w: usize },
    Linear { out: usize },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { out, k, s, p } => write!(f, "conv:{out}x{k}x{s}x{p}"),
            LayerSpec::Deconv { out, k, s, p } => write!(f, "deconv:{out}x{k}x{s}x{p}"),
            LayerSpec::Bn => write!(f, "bn"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::Leaky { slope } => write!(f, "leaky:{slope}"),
            LayerSpec::Tanh => write!(f, "tanh"),
            LayerSpec::Sigmoid => write!(f, "sigmoid"),
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::Reshape { c, h, w } => write!(f, "reshape:{c}x{h}x{w}"),
            LayerSpec::Linear { out } => write!(f, "linear:{out}"),
        }
    }
}

impl LayerSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let (head, args) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let nums = |a: &str| -> Result<Vec<usize>> {
            a.split('x')
                .map(|p| {
                    p.parse::<usize>()
                        .map_err(|_| Error::config(format!("bad layer args `{a}`")))
                })
                .collect()
        };
        match (head, args) {
            ("conv", Some(a)) => {
                let v = nums(a)?;
                if v.len() != 4 {
                    return Err(Error::config(format!("conv needs OUTxKxSxP, got `{a}`")));
                }
                Ok(LayerSpec::Conv { out: v[0], k: v[1], s: v[2], p: v[3] })
            }
            ("deconv", Some(a)) => {
                let v = nums(a)?;
                if v.len() != 4 {
                    return Err(Error::config(format!("deconv needs OUTxKxSxP, got `{a}`")));
                }
                Ok(LayerSpec::Deconv { out: v[0], k: v[1], s: v[2], p: v[3] })
            }
            ("bn", None) => Ok(LayerSpec::Bn),
            ("relu", None) => Ok(LayerSpec::Relu),
            ("leaky", Some(a)) => {
                let slope: f32 = a
                    .parse()
                    .map_err(|_| Error::config(format!("bad leaky slope `{a}`")))?;
                Ok(LayerSpec::Leaky { slope })
            }
            ("tanh", None) => Ok(LayerSpec::Tanh),
            ("sigmoid", None) => Ok(LayerSpec::Sigmoid),
            ("flatten", None) => Ok(LayerSpec::Flatten),
            ("reshape", Some(a)) => {
                let v = nums(a)?;
                if v.len() != 3 {
                    return Err(Error::config(format!("reshape needs CxHxW, got `{a}`")));
                }
                Ok(LayerSpec::Reshape { c: v[0], h: v[1], w: v[2] })
            }
            ("linear", Some(a)) => {
                let v = nums(a)?;
                if v.len() != 1 {
                    return Err(Error::config(format!("linear needs OUT, got `{a}`")));
                }
                Ok(LayerSpec::Linear { out: v[0] })
            }
            _ => Err(Error::config(format!("unknown layer `{s}`"))),
        }
    }
}

/// Symbolic shape used while checking a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymShape {
    Flat(usize),
    Map { c: usize, h: usize, w: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub role: Role,
    pub input: InputShape,
    pub plan: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Shape-checks the plan and enforces the role contracts: generators end
    /// in tanh (range [-1, 1]), discriminators end in a scalar sigmoid,
    /// clone/victim networks end in a raw-score linear layer.
    pub fn validate(&self) -> Result<SymShape> {
        let mut shape = match self.input {
            InputShape::Latent(m) => {
                if m == 0 {
                    return Err(Error::validation("latent dimension must be positive"));
                }
                SymShape::Flat(m)
            }
            InputShape::Image { c, h, w } => {
                if c == 0 || h == 0 || w == 0 {
                    return Err(Error::validation("image input dims must be positive"));
                }
                SymShape::Map { c, h, w }
            }
        };
        if self.plan.is_empty() {
            return Err(Error::validation("empty layer plan"));
        }
        for (idx, layer) in self.plan.iter().enumerate() {
            shape = step_shape(shape, layer)
                .map_err(|e| Error::validation(format!("layer {idx} ({layer}): {e}")))?;
        }
        match self.role {
            Role::Generator => {
                if !matches!(self.plan.last(), Some(LayerSpec::Tanh)) {
                    return Err(Error::validation("generator must end with tanh"));
                }
                if !matches!(shape, SymShape::Map { .. }) {
                    return Err(Error::validation("generator must emit an image map"));
                }
            }
            Role::Discriminator => {
                if !matches!(self.plan.last(), Some(LayerSpec::Sigmoid)) {
                    return Err(Error::validation("discriminator must end with sigmoid"));
                }
                if shape != SymShape::Flat(1) {
                    return Err(Error::validation("discriminator must emit one score"));
                }
            }
            Role::Clone | Role::Victim => {
                if !matches!(self.plan.last(), Some(LayerSpec::Linear { .. })) {
                    return Err(Error::validation(
                        "classifier must end with a raw-score linear layer",
                    ));
                }
                match shape {
                    SymShape::Flat(k) if k >= 2 => {}
                    _ => return Err(Error::validation("classifier must emit K >= 2 scores")),
                }
            }
        }
        Ok(shape)
    }

    pub fn output_shape(&self) -> Result<SymShape> {
        self.validate()
    }

    pub fn num_classes(&self) -> Option<usize> {
        match (self.role, self.validate().ok()?) {
            (Role::Clone | Role::Victim, SymShape::Flat(k)) => Some(k),
            _ => None,
        }
    }

    pub fn to_text(&self) -> String {
        let plan = self
            .plan
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join("|");
        format!(
            "input = {}\nplan = {}\nrole = {}\n",
            self.input,
            plan,
            self.role.as_str()
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let map = kv::parse(text)?;
        let view = kv::View::new(&map);
        let role = Role::parse(
            view.raw("role")
                .ok_or_else(|| Error::config("network spec missing `role`"))?,
        )?;
        let input = InputShape::parse(
            view.raw("input")
                .ok_or_else(|| Error::config("network spec missing `input`"))?,
        )?;
        let plan_text = view
            .raw("plan")
            .ok_or_else(|| Error::config("network spec missing `plan`"))?;
        let plan = plan_text
            .split('|')
            .map(|p| LayerSpec::parse(p.trim()))
            .collect::<Result<Vec<_>>>()?;
        let spec = NetworkSpec { role, input, plan };
        spec.validate()?;
        Ok(spec)
    }

    /// DCGAN-style generator for 32x32 output: latent -> 4x4 map widened to
    /// `base` channels, then three stride-2 transposed convolutions.
    pub fn generator_32(latent: usize, base: usize, out_ch: usize) -> Self {
        NetworkSpec {
            role: Role::Generator,
            input: InputShape::Latent(latent),
            plan: vec![
                LayerSpec::Linear { out: base * 16 },
                LayerSpec::Reshape { c: base, h: 4, w: 4 },
                LayerSpec::Bn,
                LayerSpec::Relu,
                LayerSpec::Deconv { out: base / 2, k: 4, s: 2, p: 1 },
                LayerSpec::Bn,
                LayerSpec::Relu,
                LayerSpec::Deconv { out: base / 4, k: 4, s: 2, p: 1 },
                LayerSpec::Bn,
                LayerSpec::Relu,
                LayerSpec::Deconv { out: out_ch, k: 4, s: 2, p: 1 },
                LayerSpec::Tanh,
            ],
        }
    }

    /// Mirror-image discriminator: stride-2 convolutions with leaky ReLU,
    /// batch norm on the inner blocks, scalar sigmoid head.
    pub fn discriminator_32(in_ch: usize, base: usize) -> Self {
        NetworkSpec {
            role: Role::Discriminator,
            input: InputShape::Image { c: in_ch, h: 32, w: 32 },
            plan: vec![
                LayerSpec::Conv { out: base, k: 4, s: 2, p: 1 },
                LayerSpec::Leaky { slope: 0.2 },
                LayerSpec::Conv { out: base * 2, k: 4, s: 2, p: 1 },
                LayerSpec::Bn,
                LayerSpec::Leaky { slope: 0.2 },
                LayerSpec::Conv { out: base * 4, k: 4, s: 2, p: 1 },
                LayerSpec::Bn,
                LayerSpec::Leaky { slope: 0.2 },
                LayerSpec::Flatten,
                LayerSpec::Linear { out: 1 },
                LayerSpec::Sigmoid,
            ],
        }
    }

    /// Four-block CNN classifier for 32x32 inputs (victim and clone).
    pub fn classifier_32(
        role: Role,
        in_ch: usize,
        classes: usize,
        arch: ClassifierArch,
    ) -> Self {
        let block = |out, k, s| {
            vec![
                LayerSpec::Conv { out, k, s, p: 1 },
                LayerSpec::Bn,
                LayerSpec::Relu,
            ]
        };
        let mut plan = Vec::new();
        // stride-2 k4 stem keeps every input pixel in view at half the
        // spatial cost of a stride-1 stem
        match arch {
            ClassifierArch::Small => {
                for (out, k, s) in [(16, 4, 2), (32, 3, 2), (64, 3, 2), (64, 3, 1)] {
                    plan.extend(block(out, k, s));
                }
            }
            ClassifierArch::Wide => {
                for (out, k, s) in [(32, 4, 2), (64, 3, 2), (128, 3, 2), (128, 3, 1)] {
                    plan.extend(block(out, k, s));
                }
            }
            ClassifierArch::Deep => {
                for (out, k, s) in [
                    (16, 4, 2),
                    (32, 3, 1),
                    (32, 3, 2),
                    (64, 3, 1),
                    (64, 3, 2),
                    (64, 3, 1),
                ] {
                    plan.extend(block(out, k, s));
                }
            }
        }
        plan.push(LayerSpec::Flatten);
        plan.push(LayerSpec::Linear { out: classes });
        NetworkSpec {
            role,
            input: InputShape::Image { c: in_ch, h: 32, w: 32 },
            plan,
        }
    }
}

fn step_shape(shape: SymShape, layer: &LayerSpec) -> std::result::Result<SymShape, String> {
    let conv_extent = |v: usize, k: usize, s: usize, p: usize| -> std::result::Result<usize, String> {
        let padded = v + 2 * p;
        if padded < k {
            return Err(format!("kernel {k} larger than padded extent {padded}"));
        }
        let out = (padded - k) / s + 1;
        if out == 0 {
            return Err("output extent collapsed to zero".into());
        }
        Ok(out)
    };
    match (shape, layer) {
        (SymShape::Map { c: _, h, w }, LayerSpec::Conv { out, k, s, p }) => Ok(SymShape::Map {
            c: *out,
            h: conv_extent(h, *k, *s, *p)?,
            w: conv_extent(w, *k, *s, *p)?,
        }),
        (SymShape::Map { c: _, h, w }, LayerSpec::Deconv { out, k, s, p }) => {
            let grow = |v: usize| -> std::result::Result<usize, String> {
                let expanded = (v - 1) * s + k;
                if expanded <= 2 * p {
                    return Err("transposed conv output collapsed".into());
                }
                Ok(expanded - 2 * p)
            };
            Ok(SymShape::Map { c: *out, h: grow(h)?, w: grow(w)? })
        }
        (SymShape::Map { .. }, LayerSpec::Bn) => Ok(shape),
        (s, LayerSpec::Relu | LayerSpec::Leaky { .. } | LayerSpec::Tanh | LayerSpec::Sigmoid) => {
            Ok(s)
        }
        (SymShape::Map { c, h, w }, LayerSpec::Flatten) => Ok(SymShape::Flat(c * h * w)),
        (SymShape::Flat(d), LayerSpec::Reshape { c, h, w }) => {
            if d != c * h * w {
                return Err(format!("cannot reshape {d} features into {c}x{h}x{w}"));
            }
            Ok(SymShape::Map { c: *c, h: *h, w: *w })
        }
        (SymShape::Flat(_), LayerSpec::Linear { out }) => {
            if *out == 0 {
                return Err("linear output must be positive".into());
            }
            Ok(SymShape::Flat(*out))
        }
        (SymShape::Flat(_), l) => Err(format!("layer {l} needs a feature map input")),
        (SymShape::Map { .. }, l) => Err(format!("layer {l} needs flat input")),
    }
}

/// Named classifier families for the architecture ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierArch {
    Small,
    Wide,
    Deep,
}

impl fmt::Display for ClassifierArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl ClassifierArch {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(ClassifierArch::Small),
            "wide" => Ok(ClassifierArch::Wide),
            "deep" => Ok(ClassifierArch::Deep),
            other => Err(Error::config(format!("unknown classifier arch `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ClassifierArch::Small => "small",
            ClassifierArch::Wide => "wide",
            ClassifierArch::Deep => "deep",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        assert_eq!(
            NetworkSpec::generator_32(100, 64, 1).validate().unwrap(),
            SymShape::Map { c: 1, h: 32, w: 32 }
        );
        assert_eq!(
            NetworkSpec::discriminator_32(1, 16).validate().unwrap(),
            SymShape::Flat(1)
        );
        let clone = NetworkSpec::classifier_32(Role::Clone, 1, 10, ClassifierArch::Small);
        assert_eq!(clone.validate().unwrap(), SymShape::Flat(10));
        assert_eq!(clone.num_classes(), Some(10));
    }

    #[test]
    fn text_round_trip() {
        for spec in [
            NetworkSpec::generator_32(100, 64, 3),
            NetworkSpec::discriminator_32(3, 16),
            NetworkSpec::classifier_32(Role::Victim, 1, 10, ClassifierArch::Deep),
        ] {
            let text = spec.to_text();
            let parsed = NetworkSpec::parse(&text).unwrap();
            assert_eq!(parsed, spec);
        }
    }

    #[test]
    fn role_contracts_enforced() {
        // generator without tanh
        let mut bad = NetworkSpec::generator_32(100, 64, 1);
        bad.plan.pop();
        assert!(bad.validate().is_err());
        // discriminator without sigmoid
        let mut bad = NetworkSpec::discriminator_32(1, 16);
        bad.plan.pop();
        assert!(bad.validate().is_err());
        // classifier with trailing activation
        let mut bad = NetworkSpec::classifier_32(Role::Clone, 1, 10, ClassifierArch::Small);
        bad.plan.push(LayerSpec::Relu);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn inconsistent_reshape_rejected() {
        let spec = NetworkSpec {
            role: Role::Generator,
            input: InputShape::Latent(10),
            plan: vec![
                LayerSpec::Linear { out: 37 },
                LayerSpec::Reshape { c: 4, h: 3, w: 3 },
                LayerSpec::Tanh,
            ],
        };
        assert!(spec.validate().is_err());
    }
}
