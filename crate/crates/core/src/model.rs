//! The full learned tracker: adapter, prompt generation, relation modeling
//! and the tracking head, together with the frozen encoders they sit on.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{
    encode_roi, Adapter, EmbeddingVector, FrameBackbone, FrameEncoderSpec, RoiEmbedder, ToyEmbedder, ToyFrameEncoder,
};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, SearchRegion};
use crate::grid::{FeatureGrid, ScoreMap};
use crate::head::{HeadOutput, TrackingHead};
use crate::image::Frame;
use crate::nn::Linear;
use crate::params::{ParamGroup, ParamStore};
use crate::prompting::{extract_template_feature, Pgn, RelationModel};
use crate::training::labels::LabelPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: FrameEncoderSpec,
    /// Name of the RoI embedder; only `toy` ships with the crate.
    pub embedder: String,
    pub embed_resolution: usize,
    pub encoder_layers: usize,
    /// Gaussian label width as a fraction of the smaller grid side.
    pub sigma_factor: f64,
    /// Search-region side in units of `sqrt(w * h)` of the target box.
    pub scale_factor: f64,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: FrameEncoderSpec::toy(),
            embedder: "toy".into(),
            embed_resolution: 32,
            encoder_layers: 2,
            // one cell on the 12x12 grid; wider peaks split the target over
            // several refinement candidates
            sigma_factor: 1.0 / 12.0,
            scale_factor: 5.0,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.encoder.output_grid() < 3 {
            return Err(Error::Config("score maps need at least a 3x3 grid".into()));
        }
        if !(self.sigma_factor > 0.0) || !(self.scale_factor > 0.0) {
            return Err(Error::Config("sigma_factor and scale_factor must be positive".into()));
        }
        if self.embed_resolution < 6 {
            return Err(Error::Config("embed_resolution must be at least 6".into()));
        }
        Ok(())
    }
}

fn build_backbone(spec: &FrameEncoderSpec) -> Result<Arc<dyn FrameBackbone>> {
    match spec.name.as_str() {
        "toy" => Ok(Arc::new(ToyFrameEncoder::new(spec.clone())?)),
        other => Err(Error::Config(format!(
            "frame encoder `{other}` needs external weights; implement FrameBackbone and use PivotModel::with_encoders"
        ))),
    }
}

fn build_embedder(name: &str, resolution: usize) -> Result<Arc<dyn RoiEmbedder>> {
    match name {
        "toy" => Ok(Arc::new(ToyEmbedder { resolution })),
        other => Err(Error::Config(format!(
            "embedder `{other}` needs external weights; implement RoiEmbedder and use PivotModel::with_encoders"
        ))),
    }
}

#[derive(Clone)]
pub struct PivotModel {
    pub config: ModelConfig,
    pub backbone: Arc<dyn FrameBackbone>,
    pub embedder: Arc<dyn RoiEmbedder>,
    pub store: ParamStore,
    pub adapter: Adapter,
    pub pgn: Pgn,
    pub rm: RelationModel,
    pub head: TrackingHead,
}

impl std::fmt::Debug for PivotModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PivotModel")
            .field("config", &self.config)
            .field("parameters", &self.store.count_scalars())
            .finish()
    }
}

impl PivotModel {
    /// Freshly initialized model with the built-in toy encoders.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let backbone = build_backbone(&config.encoder)?;
        let embedder = build_embedder(&config.embedder, config.embed_resolution)?;
        Self::with_encoders(config, backbone, embedder)
    }

    /// Freshly initialized model on caller-supplied encoders.
    pub fn with_encoders(
        config: ModelConfig,
        backbone: Arc<dyn FrameBackbone>,
        embedder: Arc<dyn RoiEmbedder>,
    ) -> Result<Self> {
        config.validate()?;
        let c = config.encoder.channels;
        let g = config.encoder.output_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let adapter = Adapter { lin: Linear::identity(&mut store, "adapter", ParamGroup::Tracker, c) };
        let head = TrackingHead::new(&mut store, c, (g, g), config.encoder_layers, &mut rng);
        let pgn = Pgn::new(&mut store, c, &mut rng);
        let rm = RelationModel::new(&mut store, c, &mut rng);
        Ok(Self { config, backbone, embedder, store, adapter, pgn, rm, head })
    }

    pub fn grid(&self) -> (usize, usize) {
        self.head.grid
    }

    pub fn channels(&self) -> usize {
        self.head.channels
    }

    pub fn resolution(&self) -> usize {
        self.config.encoder.input_resolution
    }

    pub fn search_region(&self, b: &BoundingBox) -> Result<SearchRegion> {
        SearchRegion::around(b, self.config.scale_factor, self.resolution())
    }

    /// Adapted features of a model-input patch.
    pub fn encode_patch(&self, patch: &Frame) -> Result<FeatureGrid> {
        let raw = self.backbone.encode(patch)?;
        Ok(self.adapter.apply(&self.store, &raw))
    }

    pub fn label(&self, b: &BoundingBox, region: &SearchRegion) -> LabelPair {
        let (h, w) = self.grid();
        LabelPair::new(b, region, h, w, self.config.sigma_factor)
    }

    pub fn template_feature(&self, frame: &Frame, b: &BoundingBox) -> Result<FeatureGrid> {
        extract_template_feature(self.backbone.as_ref(), &self.adapter, &self.store, frame, b)
    }

    pub fn embed(&self, frame: &Frame, b: &BoundingBox) -> Result<EmbeddingVector> {
        encode_roi(self.embedder.as_ref(), frame, b)
    }

    pub fn prompt(&self, tem1: &FeatureGrid, tem2: &FeatureGrid, cur: &FeatureGrid) -> Result<ScoreMap> {
        self.pgn.forward(&self.store, tem1, tem2, cur)
    }

    pub fn relate(&self, h_can: &ScoreMap, cur: &FeatureGrid) -> Result<FeatureGrid> {
        self.rm.forward(&self.store, h_can, cur)
    }

    pub fn predict(
        &self,
        ref1: (&FeatureGrid, &LabelPair),
        ref2: (&FeatureGrid, &LabelPair),
        cur: &FeatureGrid,
    ) -> Result<HeadOutput> {
        self.head.forward(&self.store, ref1.0, ref1.1, ref2.0, ref2.1, cur)
    }
}
