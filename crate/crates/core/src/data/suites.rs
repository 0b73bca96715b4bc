//! Canonical synthetic suites: `plain`, `distractor`, `occlusion`, `deform`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::loaders::{load_dataset, write_sequence, DatasetLoad, Layout};
use crate::data::synth::{
    generate_synthetic, random_object, DeformSpec, DistractorDesc, MotionModel, OcclusionEvent, SynthSpec,
};
use crate::data::SequenceRecord;
use crate::error::{Error, Result};

pub const SUITE_NAMES: [&str; 4] = ["plain", "distractor", "occlusion", "deform"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteKind {
    Plain,
    Distractor,
    Occlusion,
    Deform,
}

impl SuiteKind {
    pub const ALL: [SuiteKind; 4] = [SuiteKind::Plain, SuiteKind::Distractor, SuiteKind::Occlusion, SuiteKind::Deform];

    pub fn name(self) -> &'static str {
        SUITE_NAMES[self as usize]
    }
}

impl fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SuiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SuiteKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}` (expected one of {})", SUITE_NAMES.join(", "))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub master_seed: u64,
    pub sequences: usize,
    pub length: usize,
    pub width: usize,
    pub height: usize,
    pub noise: f32,
    /// Range of target sides in pixels.
    pub target_size: (f64, f64),
    /// Range of target speeds in pixels per frame.
    pub speed: (f64, f64),
    pub turn_rate: f64,
    /// Range of distractor similarity levels.
    pub distractor_similarity: (f64, f64),
    pub max_distractors: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            master_seed: 2024,
            sequences: 20,
            length: 60,
            width: 160,
            height: 120,
            noise: 0.02,
            target_size: (14.0, 26.0),
            speed: (0.5, 2.0),
            turn_rate: 0.08,
            distractor_similarity: (0.55, 0.85),
            max_distractors: 3,
        }
    }
}

fn sequence_spec(kind: SuiteKind, cfg: &SuiteConfig, rng: &mut ChaCha8Rng) -> SynthSpec {
    let target = random_object(rng, cfg.target_size);
    let speed = rng.gen_range(cfg.speed.0..=cfg.speed.1);
    let mut spec = SynthSpec {
        width: cfg.width,
        height: cfg.height,
        length: cfg.length,
        target,
        start: None,
        distractors: Vec::new(),
        motion: MotionModel { speed, turn_rate: cfg.turn_rate },
        occlusions: Vec::new(),
        deform: None,
        noise: cfg.noise,
        seed: rng.gen(),
    };
    let len = cfg.length;
    match kind {
        SuiteKind::Plain => {}
        SuiteKind::Distractor => {
            let n = rng.gen_range(1..=cfg.max_distractors.max(1));
            let lo = (len / 5).max(1);
            let span = (len - 2 * lo).max(1);
            for k in 0..n {
                let base = lo + k * span / n;
                let crossing = (base + rng.gen_range(0..(span / n).max(1))).min(len - 1);
                spec.distractors.push(DistractorDesc {
                    similarity: rng.gen_range(cfg.distractor_similarity.0..=cfg.distractor_similarity.1),
                    speed: rng.gen_range(cfg.speed.0..=cfg.speed.1),
                    crossing: Some(crossing),
                    seed: rng.gen(),
                });
            }
        }
        SuiteKind::Occlusion => {
            let n = rng.gen_range(1..=2);
            let slot = (len - len / 6) / n;
            for k in 0..n {
                let duration = rng.gen_range(4..=8).min(slot / 2).max(1);
                let start = len / 6 + k * slot + rng.gen_range(0..(slot - duration).max(1));
                let g: f32 = rng.gen_range(0.3..0.7);
                spec.occlusions.push(OcclusionEvent { start, duration, color: [g, g, g] });
            }
        }
        SuiteKind::Deform => {
            spec.deform = Some(DeformSpec { amplitude: rng.gen_range(0.25..0.4), period: rng.gen_range(20.0..40.0) });
        }
    }
    spec
}

/// Sequences of one suite, reproducible from `cfg.master_seed`.
pub fn make_suite(kind: SuiteKind, cfg: &SuiteConfig) -> Result<Vec<SequenceRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed ^ (kind as u64 + 1).wrapping_mul(0x2545_f491_4f6c_dd1d));
    (0..cfg.sequences)
        .map(|i| {
            let spec = sequence_spec(kind, cfg, &mut rng);
            let area = spec.target.width * spec.target.height;
            let fast = spec.motion.speed > 1.5;
            let mut rec = generate_synthetic(spec, &format!("{}-{:03}", kind.name(), i))?;
            rec.attributes.push(kind.name().to_string());
            if fast {
                rec.attributes.push("fast_motion".into());
            }
            if area < 300.0 {
                rec.attributes.push("small_target".into());
            }
            Ok(rec)
        })
        .collect()
}

/// All four canonical suites.
pub fn make_suites(cfg: &SuiteConfig) -> Result<Vec<(SuiteKind, Vec<SequenceRecord>)>> {
    SuiteKind::ALL.into_iter().map(|k| Ok((k, make_suite(k, cfg)?))).collect()
}


/// Writes a suite under `dir` in the GOT-10k style layout, with `list.txt`,
/// `attributes.txt` and a `manifest.toml` recording the generator settings.
pub fn materialize_suite(dir: &Path, kind: SuiteKind, cfg: &SuiteConfig, sequences: &[SequenceRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut list = String::new();
    let mut attrs = String::new();
    for rec in sequences {
        write_sequence(rec, &dir.join(&rec.name))?;
        list.push_str(&rec.name);
        list.push('\n');
        attrs.push_str(&format!("{}\t{}\n", rec.name, rec.attributes.join(",")));
    }
    fs::write(dir.join("list.txt"), list)?;
    fs::write(dir.join("attributes.txt"), attrs)?;
    #[derive(Serialize)]
    struct Manifest<'a> {
        suite: SuiteKind,
        generator: &'a SuiteConfig,
    }
    let manifest = toml::to_string(&Manifest { suite: kind, generator: cfg }).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("manifest.toml"), manifest)?;
    Ok(())
}

pub fn load_suite(dir: &Path) -> Result<DatasetLoad> {
    load_dataset(dir, Layout::Got10k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;

    #[test]
    fn suite_contract() {
        let cfg = SuiteConfig::default();
        for (kind, seqs) in make_suites(&cfg).unwrap() {
            assert!(seqs.len() >= 20);
            for s in &seqs {
                assert!(s.len() >= 60);
                s.validate().unwrap();
                assert!(s.has_attribute(kind.name()));
            }
        }
    }

    #[test]
    fn distractors_cross() {
        let seqs = make_suite(SuiteKind::Distractor, &SuiteConfig::default()).unwrap();
        for s in &seqs {
            let crate::data::FrameSource::Synthetic(scene) = &s.frames else { panic!() };
            for d in scene.distractor_boxes() {
                assert!((0..s.len()).any(|t| iou(&d[t], &s.boxes[t]) > 0.0), "{}", s.name);
            }
        }
    }

    #[test]
    fn reproducible() {
        let cfg = SuiteConfig { sequences: 3, ..Default::default() };
        let a = make_suite(SuiteKind::Occlusion, &cfg).unwrap();
        let b = make_suite(SuiteKind::Occlusion, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.boxes, y.boxes);
            assert_eq!(x.visible, y.visible);
            assert_eq!(x.frame(5).unwrap(), y.frame(5).unwrap());
        }
    }

    #[test]
    fn materialized_suite_reloads() {
        let cfg = SuiteConfig { sequences: 2, length: 6, ..Default::default() };
        let seqs = make_suite(SuiteKind::Occlusion, &cfg).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        materialize_suite(tmp.path(), SuiteKind::Occlusion, &cfg, &seqs).unwrap();
        let load = load_suite(tmp.path()).unwrap();
        assert!(load.errors.is_empty(), "{:?}", load.errors);
        assert_eq!(load.sequences.len(), 2);
        for (a, b) in seqs.iter().zip(&load.sequences) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.visible, b.visible);
            assert_eq!(a.attributes, b.attributes);
            for (x, y) in a.boxes.iter().zip(&b.boxes) {
                assert!((x.x - y.x).abs() < 1e-9 && (x.w - y.w).abs() < 1e-9);
            }
            let f = b.frame(3).unwrap();
            assert_eq!(f, a.frame(3).unwrap().quantized());
        }
    }
}
