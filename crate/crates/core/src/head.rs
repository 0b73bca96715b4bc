//! Transformer model predictor.
//!
//! Reference-frame features are tagged with embedded labels (Gaussian map and
//! ltrb map through 1×1 projections), every grid gets a learned per-cell
//! position code and a per-frame slot code, and the three frames are run
//! through a small transformer encoder as one token sequence. A learned query
//! attends over the encoded tokens and is projected to the filter `omega`.
//! The score map is `z_cur · omega` per cell; the regression branch reads the
//! current tokens modulated channel-wise by `omega`.

use rand::Rng;

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::geometry::SearchRegion;
use crate::grid::{ltrb_decode, DecodedBox, FeatureGrid, LtrbMap, ScoreMap};
use crate::nn::{ChannelNorm, Conv3x3, ConvBlock, Linear};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::prompting::grid_var;
use crate::training::labels::LabelPair;

const GROUP: ParamGroup = ParamGroup::Tracker;

/// Softplus inverse of the initial ltrb distance (0.1 of the region side).
const REG_BIAS_INIT: f64 = -2.252_168_8;

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Attention {
    fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut impl Rng) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), GROUP, c, c, 1.0, rng),
            k: Linear::new(store, &format!("{name}.k"), GROUP, c, c, 1.0, rng),
            v: Linear::new(store, &format!("{name}.v"), GROUP, c, c, 1.0, rng),
            o: Linear::new(store, &format!("{name}.o"), GROUP, c, c, 0.5, rng),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, q_in: Var, kv_in: Var) -> Var {
        let c = tape.value(q_in).cols;
        let q = self.q.forward(tape, store, q_in);
        let k = self.k.forward(tape, store, kv_in);
        let v = self.v.forward(tape, store, kv_in);
        let s = tape.matmul_t(q, false, k, true);
        let s = tape.scale(s, 1.0 / (c as f64).sqrt());
        let a = tape.softmax_rows(s);
        let o = tape.matmul(a, v);
        self.o.forward(tape, store, o)
    }
}

#[derive(Debug, Clone, Copy)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(store: &mut ParamStore, name: &str, c: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), GROUP, c, hidden, 1.0, rng),
            down: Linear::new(store, &format!("{name}.down"), GROUP, hidden, c, 0.5, rng),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let h = self.up.forward(tape, store, x);
        let h = tape.gelu(h);
        self.down.forward(tape, store, h)
    }
}

/// Pre-norm self-attention block.
#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    norm1: ChannelNorm,
    attn: Attention,
    norm2: ChannelNorm,
    ffn: FeedForward,
}

impl EncoderLayer {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let n = self.norm1.forward(tape, store, x);
        let a = self.attn.forward(tape, store, n, n);
        let x = tape.add(x, a);
        let n = self.norm2.forward(tape, store, x);
        let f = self.ffn.forward(tape, store, n);
        tape.add(x, f)
    }
}

/// Pre-norm cross-attention block for the filter query.
#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    norm_q: ChannelNorm,
    norm_kv: ChannelNorm,
    attn: Attention,
    norm2: ChannelNorm,
    ffn: FeedForward,
}

impl DecoderLayer {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, q: Var, memory: Var) -> Var {
        let nq = self.norm_q.forward(tape, store, q);
        let nk = self.norm_kv.forward(tape, store, memory);
        let a = self.attn.forward(tape, store, nq, nk);
        let q = tape.add(q, a);
        let n = self.norm2.forward(tape, store, q);
        let f = self.ffn.forward(tape, store, n);
        tape.add(q, f)
    }
}

#[derive(Debug, Clone)]
pub struct TrackingHead {
    pub channels: usize,
    pub grid: (usize, usize),
    cls_embed: Linear,
    reg_embed: Linear,
    pos: ParamId,
    slots: [ParamId; 3],
    encoder: Vec<EncoderLayer>,
    decoder: DecoderLayer,
    query: ParamId,
    out_norm: ChannelNorm,
    omega_proj: Linear,
    reg_block: ConvBlock,
    reg_out: Conv3x3,
}

/// Tape handles of one head forward pass.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub omega: Var,
    pub z_cur: Var,
    pub h_cls: Var,
    pub d: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// Filter weights, length C.
    pub omega: Vec<f64>,
    pub z_cur: FeatureGrid,
    pub h_cls: ScoreMap,
    pub d: LtrbMap,
}

impl TrackingHead {
    pub fn new(
        store: &mut ParamStore,
        channels: usize,
        grid: (usize, usize),
        encoder_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let c = channels;
        let hidden = 2 * c;
        let cells = grid.0 * grid.1;
        let enc = (0..encoder_layers)
            .map(|i| {
                let name = format!("head.enc{i}");
                EncoderLayer {
                    norm1: ChannelNorm::new(store, &format!("{name}.norm1"), GROUP, c),
                    attn: Attention::new(store, &format!("{name}.attn"), c, rng),
                    norm2: ChannelNorm::new(store, &format!("{name}.norm2"), GROUP, c),
                    ffn: FeedForward::new(store, &format!("{name}.ffn"), c, hidden, rng),
                }
            })
            .collect();
        let decoder = DecoderLayer {
            norm_q: ChannelNorm::new(store, "head.dec.norm_q", GROUP, c),
            norm_kv: ChannelNorm::new(store, "head.dec.norm_kv", GROUP, c),
            attn: Attention::new(store, "head.dec.attn", c, rng),
            norm2: ChannelNorm::new(store, "head.dec.norm2", GROUP, c),
            ffn: FeedForward::new(store, "head.dec.ffn", c, hidden, rng),
        };
        let reg_out = Conv3x3::new(store, "head.reg_out", GROUP, c, 4, 0.1, rng);
        store.value_mut(reg_out.lin.b).data.fill(REG_BIAS_INIT);
        Self {
            channels,
            grid,
            cls_embed: Linear::new(store, "head.label_cls", GROUP, 1, c, 1.0, rng),
            reg_embed: Linear::new(store, "head.label_reg", GROUP, 4, c, 1.0, rng),
            pos: store.add_normal("head.pos", GROUP, cells, c, 0.1, rng),
            slots: [
                store.add_normal("head.slot_ref1", GROUP, 1, c, 0.1, rng),
                store.add_normal("head.slot_ref2", GROUP, 1, c, 0.1, rng),
                store.add_normal("head.slot_cur", GROUP, 1, c, 0.1, rng),
            ],
            encoder: enc,
            decoder,
            query: store.add_normal("head.query", GROUP, 1, c, 1.0, rng),
            out_norm: ChannelNorm::new(store, "head.out_norm", GROUP, c),
            omega_proj: Linear::new(store, "head.omega", GROUP, c, c, 0.1, rng),
            reg_block: ConvBlock::new(store, "head.reg_block", GROUP, c, c, rng),
            reg_out,
        }
    }

    fn label_tokens(&self, tape: &mut Tape, store: &ParamStore, feat: Var, y: &LabelPair) -> Var {
        let cells = self.grid.0 * self.grid.1;
        let cls = tape.constant(Tensor::new(cells, 1, y.cls.values.clone()));
        let reg = tape.constant(Tensor::new(cells, 4, y.masked_reg()));
        let ec = self.cls_embed.forward(tape, store, cls);
        let er = self.reg_embed.forward(tape, store, reg);
        let x = tape.add(feat, ec);
        tape.add(x, er)
    }

    /// Builds the head on the tape from `[H*W, C]` feature variables.
    #[allow(clippy::too_many_arguments)]
    pub fn graph(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ref1: Var,
        y1: &LabelPair,
        ref2: Var,
        y2: &LabelPair,
        cur: Var,
    ) -> HeadVars {
        let (h, w) = self.grid;
        let cells = h * w;
        let pos = tape.param(store, self.pos);
        let mut frames = Vec::with_capacity(3);
        for (k, (feat, label)) in [(ref1, Some(y1)), (ref2, Some(y2)), (cur, None)].into_iter().enumerate() {
            let x = match label {
                Some(y) => self.label_tokens(tape, store, feat, y),
                None => feat,
            };
            let x = tape.add(x, pos);
            let slot = tape.param(store, self.slots[k]);
            frames.push(tape.add_row(x, slot));
        }
        let mut tokens = tape.concat_rows(&frames);
        for layer in &self.encoder {
            tokens = layer.forward(tape, store, tokens);
        }
        let memory = self.out_norm.forward(tape, store, tokens);
        let query = tape.param(store, self.query);
        let q = self.decoder.forward(tape, store, query, memory);
        let omega = self.omega_proj.forward(tape, store, q);

        let z_cur = tape.slice_rows(memory, 2 * cells, cells);
        let h_cls = tape.matmul_t(z_cur, false, omega, true);

        let m = tape.mul_row(z_cur, omega);
        let r = self.reg_block.forward(tape, store, m, h, w);
        let r = self.reg_out.forward(tape, store, r, h, w);
        let d = tape.softplus(r);
        HeadVars { omega, z_cur, h_cls, d }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        v_ref1: &FeatureGrid,
        y1: &LabelPair,
        v_ref2: &FeatureGrid,
        y2: &LabelPair,
        v_cur_p: &FeatureGrid,
    ) -> Result<HeadOutput> {
        let (h, w) = self.grid;
        for (g, what) in [(v_ref1, "reference 1"), (v_ref2, "reference 2"), (v_cur_p, "current")] {
            if (g.h, g.w, g.c) != (h, w, self.channels) {
                return shape_err(format!(
                    "head expects {h}x{w}x{} grids, {what} is {}x{}x{}",
                    self.channels, g.h, g.w, g.c
                ));
            }
        }
        for (y, what) in [(y1, "label 1"), (y2, "label 2")] {
            if (y.cls.h, y.cls.w, y.reg.h, y.reg.w) != (h, w, h, w) {
                return shape_err(format!("{what} does not match the {h}x{w} grid"));
            }
        }
        let mut tape = Tape::new();
        let r1 = grid_var(&mut tape, v_ref1);
        let r2 = grid_var(&mut tape, v_ref2);
        let c = grid_var(&mut tape, v_cur_p);
        let vars = self.graph(&mut tape, store, r1, y1, r2, y2, c);
        Ok(HeadOutput {
            omega: tape.value(vars.omega).data.clone(),
            z_cur: FeatureGrid::new(h, w, self.channels, v_cur_p.stride, tape.value(vars.z_cur).data.clone())?,
            h_cls: ScoreMap::new(h, w, v_cur_p.stride, tape.value(vars.h_cls).data.clone())?,
            d: LtrbMap::new(h, w, tape.value(vars.d).data.clone())?,
        })
    }
}

/// Box and confidence at the score-map maximum (first cell on ties).
pub fn decode_prediction(h_cls: &ScoreMap, d: &LtrbMap, region: &SearchRegion) -> (DecodedBox, f64) {
    let p = h_cls.argmax();
    (ltrb_decode(d, p, region), h_cls.get(p))
}
