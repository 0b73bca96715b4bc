//! Run configuration: one TOML file with `[model]`, `[tracker]`, `[loss]`,
//! `[train]`, `[data]`, `[eval]` and `[run]` sections. Every section and
//! key is optional; unknown keys are rejected by name.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Layout, SuiteConfig};
use crate::error::{Error, Result};
use crate::evalkit::EvalConfig;
use crate::model::ModelConfig;
use crate::pipeline::TrackerConfig;
use crate::training::{LossWeights, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub suite: SuiteConfig,
    /// Master seed of the test split of the synthetic suites.
    pub eval_seed: u64,
    /// Directory holding the materialized suites.
    pub suites_dir: PathBuf,
    /// Training dataset; the `plain` suite when unset.
    pub train_root: Option<PathBuf>,
    pub train_layout: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { suite: SuiteConfig::default(), eval_seed: 9001, suites_dir: PathBuf::from("suites"), train_root: None, train_layout: "got10k".into() }
    }
}

impl DataConfig {
    pub fn layout(&self) -> Result<Layout> {
        self.train_layout.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub output_dir: PathBuf,
    /// Training seeds; ablations average over all of them.
    pub seeds: Vec<u64>,
    /// Sequences tracked concurrently. 1 keeps runs bit-reproducible in order.
    pub parallelism: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { output_dir: PathBuf::from("runs"), seeds: vec![7], parallelism: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub tracker: TrackerConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub run: RunSection,
}

impl RunConfig {
    /// Parses a config file. Keys missing from the file, including keys of
    /// partially given sections, keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        Self::from_table(doc)
    }

    fn from_table(doc: toml::Table) -> Result<Self> {
        let mut base = toml::Table::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, doc);
        let cfg: Self = toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Loads `path` if given, then applies `section.key=value` overrides.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_table(doc)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.tracker.tpr_params.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.data.layout()?;
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        if self.run.parallelism == 0 {
            return Err(Error::Config("run.parallelism must be at least 1".into()));
        }
        if self.eval.success_points < 2 || self.eval.precision_points < 2 || self.eval.npr_points < 2 {
            return Err(Error::Config("eval grids need at least 2 points".into()));
        }
        Ok(())
    }

    /// Hex sha256 over the sections that determine trained weights: model,
    /// loss and training schedule. Tracker switches and paths are left out
    /// so that every prompt mode of one checkpoint shares a hash.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            model: &'a ModelConfig,
            loss: &'a LossWeights,
            train: &'a TrainConfig,
        }
        let text = toml::to_string(&Hashed { model: &self.model, loss: &self.loss, train: &self.train })
            .expect("config sections serialize");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form section.key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    let value = parse_value(raw.trim());
    let (last, parents) = keys.split_last().filter(|(l, _)| !l.is_empty()).ok_or_else(|| Error::Config(format!("empty key in `{spec}`")))?;
    let mut table = doc;
    for k in parents {
        table = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{k}` in `{spec}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.tracker.tpr_params.tau, 0.05);
        assert_eq!(cfg.tracker.tpr_params.gamma, 0.25);
        assert_eq!((cfg.loss.lambda_cls, cfg.loss.lambda_can, cfg.loss.lambda_reg), (100.0, 10.0, 1.0));
        assert_eq!(cfg.model.scale_factor, 5.0);
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml("[tracker]\nbogus_key = 3\n").unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
        let err = RunConfig::from_toml("[nonsense]\n").unwrap_err().to_string();
        assert!(err.contains("nonsense"), "{err}");
    }

    #[test]
    fn hash_tracks_weight_sections_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.tracker.tpr = false;
        b.run.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.loss.lambda_can = 5.0;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn overrides_win() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "[tracker]\ntpr = true\n[run]\nseeds = [1]\n").unwrap();
        let cfg = RunConfig::load_with_overrides(
            Some(&p),
            &["tracker.tpr=false".into(), "run.seeds=[3, 4]".into(), "run.output_dir=out/x".into(), "tracker.refinement.gamma=0.4".into()],
        )
        .unwrap();
        assert!(!cfg.tracker.tpr);
        assert_eq!(cfg.run.seeds, vec![3, 4]);
        assert_eq!(cfg.run.output_dir, PathBuf::from("out/x"));
        assert_eq!(cfg.tracker.tpr_params.gamma, 0.4);
        assert!(RunConfig::load_with_overrides(None, &["nokey".into()]).is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_toml("[train.stage1]\nsamples_per_epoch = 16\n").unwrap();
        assert_eq!(cfg.train.stage1.samples_per_epoch, 16);
        assert_eq!(cfg.train.stage1.epochs, TrainConfig::default().stage1.epochs);
        assert_eq!(cfg.train.stage2, TrainConfig::default().stage2);
        let err = RunConfig::from_toml("[train.stage1]\nepochz = 1\n").unwrap_err().to_string();
        assert!(err.contains("epochz"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[run]\nparallelism = 0\n").is_err());
        assert!(RunConfig::from_toml("[data]\ntrain_layout = \"vot\"\n").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn toml_round_trip_keeps_hash(
                tau in 0.0..1.0f64, gamma in 0.0..1.0f64, cap in 1usize..20,
                lc in 0.0..500.0f64, seed in any::<u32>(),
            ) {
                let mut cfg = RunConfig::default();
                cfg.tracker.tpr_params.tau = tau;
                cfg.tracker.tpr_params.gamma = gamma;
                cfg.tracker.tpr_params.max_candidates = cap;
                cfg.loss.lambda_cls = lc;
                cfg.run.seeds = vec![seed as u64];
                let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
                prop_assert_eq!(back.hash(), cfg.hash());
                prop_assert_eq!(back, cfg);
            }
        }
    }
}
