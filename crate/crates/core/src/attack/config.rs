//! Every knob of the extraction run, parsed from flat dotted key-value
//! text. Paper-scale values are the defaults; desk runs override them.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kv;
use crate::nn::ClassifierArch;

/// Which clone-training loss runs during the alternating phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMode {
    Hard,
    SoftL1,
    SoftKl,
}

impl std::fmt::Display for AttackMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl AttackMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackMode::Hard => "hard",
            AttackMode::SoftL1 => "soft_l1",
            AttackMode::SoftKl => "soft_kl",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(AttackMode::Hard),
            "soft_l1" => Ok(AttackMode::SoftL1),
            "soft_kl" => Ok(AttackMode::SoftKl),
            other => Err(Error::config(format!(
                "attack.mode must be hard|soft_l1|soft_kl, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub seed: u64,
    pub mode: AttackMode,
    pub lambda_div: f64,
    /// Victim queries spent on each clone-initialization phase.
    pub n_c: u64,
    /// Victim-query budget of the alternating phase.
    pub n_q: u64,
    /// Generator-refinement iterations (zero victim queries).
    pub n_g: u64,
    pub batch_size: usize,
    pub iteration_gap_g: u64,
    pub iteration_gap_c: u64,
    pub discriminator_enabled: bool,
    /// Fraction of proxy images mixed into clone-initialization batches.
    pub init_mix_fraction: f64,
    pub pretrain_epochs: usize,
    pub init_epochs: usize,
    pub retrain_epochs: usize,
    pub early_stop: bool,
    /// Alternating iterations between accuracy/histogram checkpoints.
    pub eval_every: u64,
    pub hist_samples: usize,
    /// Extra checkpoint cadence inside the alternating phase (0 = phase
    /// boundaries only).
    pub checkpoint_every: u64,

    pub clone_lr_peak: f32,
    pub clone_lr_alternating: f32,
    pub clone_momentum: f32,
    pub clone_weight_decay: f32,

    pub gan_lr: f32,
    pub gan_beta1: f32,
    pub gan_beta2: f32,
    /// The discriminator updates on every k-th generator/discriminator
    /// iteration; 1 keeps the classic lockstep game.
    pub gan_d_every: u64,

    pub latent_dim: usize,
    pub generator_base: usize,
    pub discriminator_base: usize,
    pub clone_arch: ClassifierArch,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            seed: 7,
            mode: AttackMode::Hard,
            lambda_div: 500.0,
            n_c: 50_000,
            n_q: 8_000_000,
            n_g: 5_000,
            batch_size: 128,
            iteration_gap_g: 0,
            iteration_gap_c: 0,
            discriminator_enabled: true,
            init_mix_fraction: 0.5,
            pretrain_epochs: 10,
            init_epochs: 200,
            retrain_epochs: 200,
            early_stop: false,
            eval_every: 50,
            hist_samples: 512,
            checkpoint_every: 0,
            clone_lr_peak: 0.1,
            clone_lr_alternating: 0.01,
            clone_momentum: 0.9,
            clone_weight_decay: 5e-4,
            gan_lr: 2e-4,
            gan_beta1: 0.5,
            gan_beta2: 0.999,
            gan_d_every: 1,
            latent_dim: 100,
            generator_base: 256,
            discriminator_base: 64,
            clone_arch: ClassifierArch::Small,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_div < 0.0 {
            return Err(Error::config("attack.lambda_div must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("attack.batch_size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.init_mix_fraction) {
            return Err(Error::config("attack.init_mix_fraction must lie in [0, 1]"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("nets.latent_dim must be >= 1"));
        }
        if self.generator_base % 4 != 0 || self.generator_base == 0 {
            return Err(Error::config("nets.generator_base must be a positive multiple of 4"));
        }
        if self.discriminator_base == 0 {
            return Err(Error::config("nets.discriminator_base must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("attack.eval_every must be >= 1"));
        }
        if self.gan_d_every == 0 {
            return Err(Error::config("gan.d_every must be >= 1"));
        }
        if self.hist_samples == 0 {
            return Err(Error::config("attack.hist_samples must be >= 1"));
        }
        for (name, v) in [
            ("clone.lr_peak", self.clone_lr_peak),
            ("clone.lr_alternating", self.clone_lr_alternating),
            ("gan.lr", self.gan_lr),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("attack.seed", self.seed.to_string());
        put("attack.mode", self.mode.as_str().to_string());
        put("attack.lambda_div", self.lambda_div.to_string());
        put("attack.n_c", self.n_c.to_string());
        put("attack.n_q", self.n_q.to_string());
        put("attack.n_g", self.n_g.to_string());
        put("attack.batch_size", self.batch_size.to_string());
        put("attack.iteration_gap_g", self.iteration_gap_g.to_string());
        put("attack.iteration_gap_c", self.iteration_gap_c.to_string());
        put(
            "attack.discriminator_enabled",
            self.discriminator_enabled.to_string(),
        );
        put("attack.init_mix_fraction", self.init_mix_fraction.to_string());
        put("attack.pretrain_epochs", self.pretrain_epochs.to_string());
        put("attack.init_epochs", self.init_epochs.to_string());
        put("attack.retrain_epochs", self.retrain_epochs.to_string());
        put("attack.early_stop", self.early_stop.to_string());
        put("attack.eval_every", self.eval_every.to_string());
        put("attack.hist_samples", self.hist_samples.to_string());
        put("attack.checkpoint_every", self.checkpoint_every.to_string());
        put("clone.lr_peak", self.clone_lr_peak.to_string());
        put("clone.lr_alternating", self.clone_lr_alternating.to_string());
        put("clone.momentum", self.clone_momentum.to_string());
        put("clone.weight_decay", self.clone_weight_decay.to_string());
        put("gan.d_every", self.gan_d_every.to_string());
        put("gan.lr", self.gan_lr.to_string());
        put("gan.beta1", self.gan_beta1.to_string());
        put("gan.beta2", self.gan_beta2.to_string());
        put("nets.latent_dim", self.latent_dim.to_string());
        put("nets.generator_base", self.generator_base.to_string());
        put("nets.discriminator_base", self.discriminator_base.to_string());
        put("nets.clone_arch", self.clone_arch.as_str().to_string());
        m
    }

    pub fn to_text(&self) -> String {
        kv::format(&self.to_kv())
    }

    /// Builds a config from parsed key-value text. Unknown `attack.*`,
    /// `clone.*`, `gan.*` and `nets.*` keys are errors; keys in other
    /// sections are left for the caller. The returned report lists every
    /// field that fell back to its default.
    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<(Self, Vec<String>)> {
        let known = AttackConfig::default().to_kv();
        for key in map.keys() {
            let section = key.split('.').next().unwrap_or("");
            if matches!(section, "attack" | "clone" | "gan" | "nets") && !known.contains_key(key) {
                return Err(Error::config(format!("unknown config key `{key}`")));
            }
        }
        let view = kv::View::new(map);
        let mut defaults_report = Vec::new();
        macro_rules! field {
            ($key:literal, $default:expr, $parse:expr) => {
                match view.raw($key) {
                    Some(raw) => $parse(raw)?,
                    None => {
                        defaults_report.push(format!("{} = {}", $key, $default));
                        $default
                    }
                }
            };
        }
        let d = AttackConfig::default();
        let parse_u64 = |key: &'static str| {
            move |raw: &str| -> Result<u64> {
                raw.parse()
                    .map_err(|_| Error::config(format!("field `{key}`: bad integer `{raw}`")))
            }
        };
        let parse_usize = |key: &'static str| {
            move |raw: &str| -> Result<usize> {
                raw.parse()
                    .map_err(|_| Error::config(format!("field `{key}`: bad integer `{raw}`")))
            }
        };
        let parse_f64 = |key: &'static str| {
            move |raw: &str| -> Result<f64> {
                raw.parse()
                    .map_err(|_| Error::config(format!("field `{key}`: bad number `{raw}`")))
            }
        };
        let parse_f32 = |key: &'static str| {
            move |raw: &str| -> Result<f32> {
                raw.parse()
                    .map_err(|_| Error::config(format!("field `{key}`: bad number `{raw}`")))
            }
        };
        let parse_bool = |key: &'static str| {
            move |raw: &str| -> Result<bool> {
                match raw {
                    "true" => Ok(true),
                    "false" => Ok(false),
                    _ => Err(Error::config(format!(
                        "field `{key}`: expected true/false, got `{raw}`"
                    ))),
                }
            }
        };

        let cfg = AttackConfig {
            seed: field!("attack.seed", d.seed, parse_u64("attack.seed")),
            mode: field!("attack.mode", d.mode, |raw: &str| AttackMode::parse(raw)),
            lambda_div: field!(
                "attack.lambda_div",
                d.lambda_div,
                parse_f64("attack.lambda_div")
            ),
            n_c: field!("attack.n_c", d.n_c, parse_u64("attack.n_c")),
            n_q: field!("attack.n_q", d.n_q, parse_u64("attack.n_q")),
            n_g: field!("attack.n_g", d.n_g, parse_u64("attack.n_g")),
            batch_size: field!(
                "attack.batch_size",
                d.batch_size,
                parse_usize("attack.batch_size")
            ),
            iteration_gap_g: field!(
                "attack.iteration_gap_g",
                d.iteration_gap_g,
                parse_u64("attack.iteration_gap_g")
            ),
            iteration_gap_c: field!(
                "attack.iteration_gap_c",
                d.iteration_gap_c,
                parse_u64("attack.iteration_gap_c")
            ),
            discriminator_enabled: field!(
                "attack.discriminator_enabled",
                d.discriminator_enabled,
                parse_bool("attack.discriminator_enabled")
            ),
            init_mix_fraction: field!(
                "attack.init_mix_fraction",
                d.init_mix_fraction,
                parse_f64("attack.init_mix_fraction")
            ),
            pretrain_epochs: field!(
                "attack.pretrain_epochs",
                d.pretrain_epochs,
                parse_usize("attack.pretrain_epochs")
            ),
            init_epochs: field!(
                "attack.init_epochs",
                d.init_epochs,
                parse_usize("attack.init_epochs")
            ),
            retrain_epochs: field!(
                "attack.retrain_epochs",
                d.retrain_epochs,
                parse_usize("attack.retrain_epochs")
            ),
            early_stop: field!("attack.early_stop", d.early_stop, parse_bool("attack.early_stop")),
            eval_every: field!("attack.eval_every", d.eval_every, parse_u64("attack.eval_every")),
            hist_samples: field!(
                "attack.hist_samples",
                d.hist_samples,
                parse_usize("attack.hist_samples")
            ),
            checkpoint_every: field!(
                "attack.checkpoint_every",
                d.checkpoint_every,
                parse_u64("attack.checkpoint_every")
            ),
            clone_lr_peak: field!("clone.lr_peak", d.clone_lr_peak, parse_f32("clone.lr_peak")),
            clone_lr_alternating: field!(
                "clone.lr_alternating",
                d.clone_lr_alternating,
                parse_f32("clone.lr_alternating")
            ),
            clone_momentum: field!(
                "clone.momentum",
                d.clone_momentum,
                parse_f32("clone.momentum")
            ),
            clone_weight_decay: field!(
                "clone.weight_decay",
                d.clone_weight_decay,
                parse_f32("clone.weight_decay")
            ),
            gan_d_every: field!("gan.d_every", d.gan_d_every, parse_u64("gan.d_every")),
            gan_lr: field!("gan.lr", d.gan_lr, parse_f32("gan.lr")),
            gan_beta1: field!("gan.beta1", d.gan_beta1, parse_f32("gan.beta1")),
            gan_beta2: field!("gan.beta2", d.gan_beta2, parse_f32("gan.beta2")),
            latent_dim: field!("nets.latent_dim", d.latent_dim, parse_usize("nets.latent_dim")),
            generator_base: field!(
                "nets.generator_base",
                d.generator_base,
                parse_usize("nets.generator_base")
            ),
            discriminator_base: field!(
                "nets.discriminator_base",
                d.discriminator_base,
                parse_usize("nets.discriminator_base")
            ),
            clone_arch: field!("nets.clone_arch", d.clone_arch, |raw: &str| {
                ClassifierArch::parse(raw)
            }),
        };
        cfg.validate()?;
        Ok((cfg, defaults_report))
    }

    pub fn parse_text(text: &str) -> Result<(Self, Vec<String>)> {
        Self::from_kv(&kv::parse(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_all_defaults_with_full_report() {
        let (cfg, report) = AttackConfig::parse_text("").unwrap();
        assert_eq!(cfg, AttackConfig::default());
        assert_eq!(report.len(), cfg.to_kv().len());
        assert!(report.iter().any(|r| r.starts_with("attack.lambda_div")));
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = AttackConfig::default();
        cfg.lambda_div = 123.5;
        cfg.mode = AttackMode::SoftL1;
        cfg.n_q = 2048;
        let text = cfg.to_text();
        let (back, report) = AttackConfig::parse_text(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(report.is_empty(), "explicit config should default nothing");
    }

    #[test]
    fn invariant_violations_name_the_field() {
        let err = AttackConfig::parse_text("attack.lambda_div = -1").unwrap_err();
        assert!(err.to_string().contains("lambda_div"), "{err}");
        let err = AttackConfig::parse_text("attack.mode = softish").unwrap_err();
        assert!(err.to_string().contains("attack.mode"), "{err}");
        let err = AttackConfig::parse_text("attack.batch_size = 0").unwrap_err();
        assert!(err.to_string().contains("batch_size"), "{err}");
    }

    #[test]
    fn unknown_attack_keys_rejected() {
        let err = AttackConfig::parse_text("attack.typo = 1").unwrap_err();
        assert!(err.to_string().contains("attack.typo"));
        // foreign sections pass through untouched
        assert!(AttackConfig::parse_text("victim.model = v.mxvm").is_ok());
    }
}
