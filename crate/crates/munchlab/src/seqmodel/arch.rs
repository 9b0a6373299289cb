//! Architecture description, parameter layout, and initialization.
//!
//! Parameters live in one flat f32 buffer. The manifest fixes tensor order
//! and shapes; checkpoints serialize it so a loaded buffer can be validated
//! against the architecture that wrote it.
//!
//! Tensor order: tok_embed [V,E], pos_embed [C,E], then per layer
//! attn_norm [E], wq/wk/wv/wo [E,E], ffn_norm [E], fc1 [F,E], fc2 [E,F],
//! then final_norm [E] and unembed [V,E]. Weight matrices are [out, in]
//! row-major and apply as y = x · Wᵀ.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::rngutil::derive_rng;

/// Attention heads are fixed at 16 lanes each; embed_dim must be a multiple.
pub const HEAD_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelArch {
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub n_layers: usize,
    pub context_len: usize,
}

impl Default for ModelArch {
    fn default() -> Self {
        ModelArch { embed_dim: 64, ffn_dim: 128, n_layers: 2, context_len: 64 }
    }
}

impl ModelArch {
    pub fn n_heads(&self) -> usize {
        (self.embed_dim / HEAD_DIM).max(1)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads()
    }

    /// (name, shape) pairs in buffer order.
    pub fn manifest(&self, vocab: usize) -> Vec<(String, Vec<usize>)> {
        let e = self.embed_dim;
        let f = self.ffn_dim;
        let mut m = vec![
            ("tok_embed".to_string(), vec![vocab, e]),
            ("pos_embed".to_string(), vec![self.context_len, e]),
        ];
        for l in 0..self.n_layers {
            m.push((format!("layer{l}.attn_norm"), vec![e]));
            m.push((format!("layer{l}.wq"), vec![e, e]));
            m.push((format!("layer{l}.wk"), vec![e, e]));
            m.push((format!("layer{l}.wv"), vec![e, e]));
            m.push((format!("layer{l}.wo"), vec![e, e]));
            m.push((format!("layer{l}.ffn_norm"), vec![e]));
            m.push((format!("layer{l}.fc1"), vec![f, e]));
            m.push((format!("layer{l}.fc2"), vec![e, f]));
        }
        m.push(("final_norm".to_string(), vec![e]));
        m.push(("unembed".to_string(), vec![vocab, e]));
        m
    }

    pub fn param_count(&self, vocab: usize) -> usize {
        self.manifest(vocab).iter().map(|(_, shape)| shape.iter().product::<usize>()).sum()
    }
}

/// Element-offset map over the flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Layout {
    pub tok_embed: Range<usize>,
    pub pos_embed: Range<usize>,
    pub layers: Vec<LayerRanges>,
    pub final_norm: Range<usize>,
    pub unembed: Range<usize>,
    pub total: usize,
}

#[derive(Debug, Clone)]
pub struct LayerRanges {
    pub attn_norm: Range<usize>,
    pub wq: Range<usize>,
    pub wk: Range<usize>,
    pub wv: Range<usize>,
    pub wo: Range<usize>,
    pub ffn_norm: Range<usize>,
    pub fc1: Range<usize>,
    pub fc2: Range<usize>,
}

impl Layout {
    pub fn new(arch: &ModelArch, vocab: usize) -> Layout {
        let e = arch.embed_dim;
        let f = arch.ffn_dim;
        let mut at = 0usize;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let tok_embed = take(vocab * e);
        let pos_embed = take(arch.context_len * e);
        let layers = (0..arch.n_layers)
            .map(|_| LayerRanges {
                attn_norm: take(e),
                wq: take(e * e),
                wk: take(e * e),
                wv: take(e * e),
                wo: take(e * e),
                ffn_norm: take(e),
                fc1: take(f * e),
                fc2: take(e * f),
            })
            .collect();
        let final_norm = take(e);
        let unembed = take(vocab * e);
        Layout { tok_embed, pos_embed, layers, final_norm, unembed, total: at }
    }
}

/// Gaussian initialization in the style of small decoder stacks: embeddings
/// and input projections at sd 0.02, residual-writing projections (wo, fc2)
/// shrunk by 1/sqrt(2 * n_layers), norm gains at one.
pub fn init_params(arch: &ModelArch, vocab: usize, seed: u64) -> Vec<f32> {
    let layout = Layout::new(arch, vocab);
    let mut params = vec![0.0f32; layout.total];
    let mut rng = derive_rng(seed, "seqmodel.init");

    let mut gauss = move |sd: f64| -> f32 {
        // Box-Muller; one value per draw keeps the stream layout simple.
        use rand::Rng;
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        (z * sd) as f32
    };

    let base_sd = 0.02;
    let resid_sd = base_sd / ((2 * arch.n_layers) as f64).sqrt();

    let mut fill = |range: Range<usize>, sd: f64, buf: &mut [f32]| {
        for x in &mut buf[range] {
            *x = gauss(sd);
        }
    };

    fill(layout.tok_embed.clone(), base_sd, &mut params);
    fill(layout.pos_embed.clone(), base_sd, &mut params);
    for l in &layout.layers {
        params[l.attn_norm.clone()].fill(1.0);
        fill(l.wq.clone(), base_sd, &mut params);
        fill(l.wk.clone(), base_sd, &mut params);
        fill(l.wv.clone(), base_sd, &mut params);
        fill(l.wo.clone(), resid_sd, &mut params);
        params[l.ffn_norm.clone()].fill(1.0);
        fill(l.fc1.clone(), base_sd, &mut params);
        fill(l.fc2.clone(), resid_sd, &mut params);
    }
    params[layout.final_norm.clone()].fill(1.0);
    fill(layout.unembed.clone(), base_sd, &mut params);

    params
}
