//! Tiny post-norm transformer encoder with low-rank adapters on the
//! attention projections.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix, Real, Var};
use crate::data::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab_size: u32,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_width: usize,
    /// Adapter rank `r`.
    pub rank: usize,
    /// Adapter scaling numerator; updates are scaled by `alpha / rank`.
    pub alpha: f64,
    /// Dropout on the adapter input, training only.
    pub dropout: f64,
    /// Whether the scalar head joins the trainable subspace.
    pub train_head: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            vocab_size: 4096,
            width: 64,
            layers: 2,
            heads: 4,
            ffn_width: 256,
            rank: 8,
            alpha: 16.0,
            dropout: 0.05,
            train_head: true,
        }
    }
}

impl TransformerConfig {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn adapter_scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Adapter coordinates per adapted projection: `A` (r×w) then `B` (w×r).
    pub fn adapter_len(&self) -> usize {
        2 * self.rank * self.width
    }
}

/// The four adapted projections, in layout order.
pub const PROJECTIONS: [&str; 4] = ["q", "k", "v", "o"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `w × w` each, applied as `x · W`.
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    /// `w × ffn`
    pub w1: Vec<f64>,
    /// `ffn × w`
    pub w2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerBase {
    pub config: TransformerConfig,
    /// `vocab × w`
    pub embedding: Vec<f64>,
    pub layers: Vec<Layer>,
    /// Initial (or, with `train_head = false`, frozen) head, length `w`.
    pub head: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Per-graph handles of the trainable factors.
pub(crate) struct BoundAdapters {
    /// `[layer][projection] -> (A, B)`
    pub factors: Vec<[(Var, Var); 4]>,
}

/// Dropout masks for the adapter inputs of one sequence.
pub(crate) trait MaskSource {
    fn mask(&mut self, rows: usize, cols: usize) -> Option<Vec<f64>>;
}

impl TransformerBase {
    pub(crate) fn init(config: TransformerConfig, rng: &mut ChaCha8Rng) -> Self {
        let w = config.width;
        let f = config.ffn_width;
        let embedding = uniform(rng, config.vocab_size as usize * w, 1.0);
        let layers = (0..config.layers)
            .map(|_| Layer {
                wq: uniform(rng, w * w, 1.0 / (w as f64).sqrt()),
                wk: uniform(rng, w * w, 1.0 / (w as f64).sqrt()),
                wv: uniform(rng, w * w, 1.0 / (w as f64).sqrt()),
                wo: uniform(rng, w * w, 1.0 / (w as f64).sqrt()),
                w1: uniform(rng, w * f, 1.0 / (w as f64).sqrt()),
                w2: uniform(rng, f * w, 1.0 / (f as f64).sqrt()),
            })
            .collect();
        let head = uniform(rng, w, 1.0 / (w as f64).sqrt());
        TransformerBase {
            config,
            embedding,
            layers,
            head,
        }
    }

    /// Initial adapter factors: `A` uniform in `±1/√w`, `B = 0`.
    pub(crate) fn init_adapters(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let c = &self.config;
        let bound = 1.0 / (c.width as f64).sqrt();
        let mut out = Vec::with_capacity(c.layers * 4 * c.adapter_len());
        for _ in 0..c.layers * 4 {
            out.extend(uniform(rng, c.rank * c.width, bound));
            out.extend(std::iter::repeat(0.0).take(c.width * c.rank));
        }
        out
    }

    pub fn adapter_count(&self) -> usize {
        self.config.layers * 4 * self.config.adapter_len()
    }

    pub fn frozen_count(&self) -> usize {
        let head = if self.config.train_head {
            0
        } else {
            self.head.len()
        };
        self.embedding.len()
            + self
                .layers
                .iter()
                .map(|l| l.wq.len() + l.wk.len() + l.wv.len() + l.wo.len() + l.w1.len() + l.w2.len())
                .sum::<usize>()
            + head
    }

    pub(crate) fn bind<S: Real>(&self, g: &mut Graph<S>) -> BoundAdapters {
        let c = &self.config;
        let mut offset = 0;
        let mut factors = Vec::with_capacity(c.layers);
        let mut next = |g: &mut Graph<S>| {
            let a = g.param(offset, c.rank, c.width);
            let b = g.param(offset + c.rank * c.width, c.width, c.rank);
            offset += c.adapter_len();
            (a, b)
        };
        for _ in 0..c.layers {
            factors.push([next(g), next(g), next(g), next(g)]);
        }
        BoundAdapters { factors }
    }

    fn sinusoid(t: usize, w: usize) -> Matrix<f64> {
        let mut m = Matrix::zeros(t, w);
        for pos in 0..t {
            for i in 0..w {
                let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / w as f64);
                let angle = pos as f64 * rate;
                m.data[pos * w + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            }
        }
        m
    }

    #[allow(clippy::too_many_arguments)]
    fn projection<S: Real>(
        &self,
        g: &mut Graph<S>,
        x: Var,
        weight: &[f64],
        adapter: Option<(Var, Var)>,
        masks: &mut dyn MaskSource,
    ) -> Var {
        let w = self.config.width;
        let wm = g.constant_f64(w, w, weight);
        let base = g.matmul(x, wm);
        let Some((a, b)) = adapter else {
            return base;
        };
        let rows = g.value(x).rows;
        let input = match masks.mask(rows, w) {
            Some(mask) => {
                let m = g.constant_f64(rows, w, &mask);
                g.mul(x, m)
            }
            None => x,
        };
        let low = g.matmul_t(input, a);
        let up = g.matmul_t(low, b);
        let up = g.scale(up, self.config.adapter_scale());
        g.add(base, up)
    }

    /// Records the scalar reward of `tokens`. Without `adapters` the frozen
    /// base network is evaluated.
    pub(crate) fn record<S: Real>(
        &self,
        g: &mut Graph<S>,
        adapters: Option<&BoundAdapters>,
        head: Var,
        tokens: &[TokenId],
        masks: &mut dyn MaskSource,
    ) -> Var {
        let c = &self.config;
        let w = c.width;
        let t = tokens.len();
        let pos = Self::sinusoid(t, w);
        let mut emb = Vec::with_capacity(t * w);
        for (p, &tok) in tokens.iter().enumerate() {
            let row = &self.embedding[tok as usize * w..(tok as usize + 1) * w];
            emb.extend(row.iter().zip(pos.row(p)).map(|(e, s)| e + s));
        }
        let mut x = g.constant_f64(t, w, &emb);
        let dh = c.head_dim();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();

        for (li, layer) in self.layers.iter().enumerate() {
            let ad = |i: usize| adapters.map(|a| a.factors[li][i]);
            let q = self.projection(g, x, &layer.wq, ad(0), masks);
            let k = self.projection(g, x, &layer.wk, ad(1), masks);
            let v = self.projection(g, x, &layer.wv, ad(2), masks);
            let mut outs = Vec::with_capacity(c.heads);
            for h in 0..c.heads {
                let qh = g.slice_cols(q, h * dh, dh);
                let kh = g.slice_cols(k, h * dh, dh);
                let vh = g.slice_cols(v, h * dh, dh);
                let scores = g.matmul_t(qh, kh);
                let scores = g.scale(scores, inv_sqrt);
                let attn = g.softmax_rows(scores);
                outs.push(g.matmul(attn, vh));
            }
            let cat = if outs.len() == 1 {
                outs[0]
            } else {
                g.concat_cols(&outs)
            };
            let o = self.projection(g, cat, &layer.wo, ad(3), masks);
            let res = g.add(x, o);
            let x1 = g.layer_norm_rows(res, 1e-5);
            let w1 = g.constant_f64(w, c.ffn_width, &layer.w1);
            let w2 = g.constant_f64(c.ffn_width, w, &layer.w2);
            let hdn = g.matmul(x1, w1);
            let hdn = g.gelu(hdn);
            let ff = g.matmul(hdn, w2);
            let res = g.add(x1, ff);
            x = g.layer_norm_rows(res, 1e-5);
        }
        let pooled = g.mean_rows(x);
        g.matmul(pooled, head)
    }
}
