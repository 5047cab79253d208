//! Run configuration: the attack knobs plus the sections describing which
//! victim to target, which proxy corpus to use, and which labeled set to
//! report accuracy against.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mex_core::attack::AttackConfig;
use mex_core::data::{load_labeled_dir, pattern_dataset, ImageSet, LabeledImages};
use mex_core::kv;
use mex_core::synth::{
    default_variants, generate_corpus, load_corpus, ShapeImageSpec, VariantSpec,
};

pub struct RunConfig {
    pub attack: AttackConfig,
    pub defaults_report: Vec<String>,
    pub victim_model: PathBuf,
    pub proxy: ProxySpec,
    pub test: TestSpec,
    /// Canonical text of the fully parsed configuration.
    pub raw: BTreeMap<String, String>,
}

pub enum ProxySpec {
    Synthetic {
        total: usize,
        seed: u64,
        grey: bool,
        mix: Vec<(String, f64)>,
    },
    Dir(PathBuf),
}

pub enum TestSpec {
    Patterns { count: usize, seed: u64 },
    Dir(PathBuf),
    None,
}

fn check_known_keys(map: &BTreeMap<String, String>) -> Result<()> {
    const KNOWN: &[&str] = &[
        "victim.model",
        "proxy.kind",
        "proxy.total",
        "proxy.seed",
        "proxy.grey",
        "proxy.mix",
        "proxy.dir",
        "test.kind",
        "test.count",
        "test.seed",
        "test.dir",
    ];
    for key in map.keys() {
        let section = key.split('.').next().unwrap_or("");
        if matches!(section, "victim" | "proxy" | "test") && !KNOWN.contains(&key.as_str()) {
            bail!("unknown config key `{key}`");
        }
    }
    Ok(())
}

pub fn parse_mix(text: &str) -> Result<Vec<(String, f64)>> {
    text.split(',')
        .map(|part| {
            let (name, frac) = part
                .split_once('=')
                .with_context(|| format!("mix entry `{part}` must be name=fraction"))?;
            let frac: f64 = frac
                .parse()
                .with_context(|| format!("bad fraction in `{part}`"))?;
            Ok((name.trim().to_string(), frac))
        })
        .collect()
}

pub fn variants_from_mix(mix: &[(String, f64)], grey: bool) -> Result<Vec<VariantSpec>> {
    mix.iter()
        .map(|(name, fraction)| {
            let spec = match name.as_str() {
                "large" => ShapeImageSpec::large(grey),
                "small" => ShapeImageSpec::small(grey),
                "sparse" => ShapeImageSpec::sparse(grey),
                other => bail!("unknown variant `{other}` (expected large|small|sparse)"),
            };
            Ok(VariantSpec {
                name: name.clone(),
                spec,
                fraction: *fraction,
            })
        })
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let map = kv::parse(text)?;
        check_known_keys(&map)?;
        let (attack, defaults_report) = AttackConfig::from_kv(&map)?;
        let view = kv::View::new(&map);

        let victim_model = PathBuf::from(
            view.raw("victim.model")
                .context("config missing `victim.model`")?,
        );

        let proxy = match view.raw("proxy.kind").unwrap_or("synthetic") {
            "synthetic" => {
                let mix = match view.raw("proxy.mix") {
                    Some(m) => parse_mix(m)?,
                    None => default_variants(true)
                        .iter()
                        .map(|v| (v.name.clone(), v.fraction))
                        .collect(),
                };
                ProxySpec::Synthetic {
                    total: view.parse_as("proxy.total")?.unwrap_or(10_000),
                    seed: view.parse_as("proxy.seed")?.unwrap_or(4242),
                    grey: view.bool("proxy.grey")?.unwrap_or(true),
                    mix,
                }
            }
            "dir" => ProxySpec::Dir(PathBuf::from(
                view.raw("proxy.dir")
                    .context("proxy.kind = dir needs `proxy.dir`")?,
            )),
            other => bail!("proxy.kind must be synthetic|dir, got `{other}`"),
        };

        let test = match view.raw("test.kind").unwrap_or("patterns") {
            "patterns" => TestSpec::Patterns {
                count: view.parse_as("test.count")?.unwrap_or(2_000),
                seed: view.parse_as("test.seed")?.unwrap_or(9009),
            },
            "dir" => TestSpec::Dir(PathBuf::from(
                view.raw("test.dir").context("test.kind = dir needs `test.dir`")?,
            )),
            "none" => TestSpec::None,
            other => bail!("test.kind must be patterns|dir|none, got `{other}`"),
        };

        Ok(RunConfig {
            attack,
            defaults_report,
            victim_model,
            proxy,
            test,
            raw: map,
        })
    }

    pub fn build_proxy(&self) -> Result<ImageSet> {
        match &self.proxy {
            ProxySpec::Synthetic {
                total,
                seed,
                grey,
                mix,
            } => {
                let variants = variants_from_mix(mix, *grey)?;
                let (images, _) = generate_corpus(&variants, *total, *seed)?;
                Ok(ImageSet::from_rasters(&images)?)
            }
            ProxySpec::Dir(dir) => {
                let (images, _) = load_corpus(dir)?;
                Ok(ImageSet::from_rasters(&images)?)
            }
        }
    }

    pub fn build_test(&self) -> Result<Option<LabeledImages>> {
        Ok(match &self.test {
            TestSpec::Patterns { count, seed } => Some(pattern_dataset(*count, *seed)),
            TestSpec::Dir(dir) => Some(load_labeled_dir(dir)?),
            TestSpec::None => None,
        })
    }
}
