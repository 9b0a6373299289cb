//! The model itself plus batched forward/backward passes.
//!
//! Layer structure (pre-norm residual blocks, RMS norms with learned gains):
//!
//! ```text
//! x0   = tok_embed[id] + pos_embed[pos]
//! x1   = x0 + Wo·attn(rmsnorm_g1(x0))          (causal, multi-head)
//! x2   = x1 + W2·gelu(W1·rmsnorm_g2(x1))
//! ...repeat per layer...
//! logits = unembed · rmsnorm_gf(x_final)        (only at loss positions)
//! ```
//!
//! The gradient entry point computes d/dθ of Σ_i weight_i · NLL_i where
//! NLL_i is example i's summed next-token negative log-likelihood over its
//! target tokens. Every training objective in the crate is a weighted sum
//! of sequence NLLs with weights that are constants at the evaluation
//! point, so this one backward pass serves them all.

use serde::{Deserialize, Serialize};

use super::arch::{init_params, Layout, ModelArch};
use super::linalg::{matmul_nn_acc, matmul_nt, matmul_tn_acc};
use super::vocab::Vocabulary;
use super::ModelError;

pub const RMS_EPS: f32 = 1e-5;

/// Provenance marker carried through checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Original,
    Reference,
    Unlearned,
}

/// One training or scoring item: the full token sequence is
/// `prompt ++ target` and the loss covers exactly the target tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqExample {
    pub prompt: Vec<u32>,
    pub target: Vec<u32>,
}

impl SeqExample {
    pub fn new(prompt: Vec<u32>, target: Vec<u32>) -> SeqExample {
        SeqExample { prompt, target }
    }

    pub fn total_len(&self) -> usize {
        self.prompt.len() + self.target.len()
    }
}

/// Weights, vocabulary, and architecture. Parameters are one flat f32
/// buffer addressed through a `Layout` derived from the architecture.
#[derive(Debug, Clone)]
pub struct Model {
    pub arch: ModelArch,
    pub vocab: Vocabulary,
    pub seed: u64,
    pub tag: ModelTag,
    params: Vec<f32>,
    layout: Layout,
}

impl Model {
    fn validate_arch(arch: &ModelArch) -> Result<(), ModelError> {
        let ok = arch.embed_dim > 0
            && arch.ffn_dim > 0
            && arch.n_layers > 0
            && arch.context_len >= 2
            && arch.embed_dim % arch.n_heads() == 0;
        if ok {
            Ok(())
        } else {
            Err(ModelError::ArchInvalid(format!("{arch:?}")))
        }
    }

    /// Fresh model with seeded Gaussian initialization.
    pub fn init(arch: ModelArch, vocab: Vocabulary, seed: u64) -> Result<Model, ModelError> {
        Self::validate_arch(&arch)?;
        let params = init_params(&arch, vocab.len(), seed);
        let layout = Layout::new(&arch, vocab.len());
        Ok(Model { arch, vocab, seed, tag: ModelTag::Original, params, layout })
    }

    /// Rebuilds a model around an existing parameter buffer.
    pub fn from_parts(
        arch: ModelArch,
        vocab: Vocabulary,
        params: Vec<f32>,
        seed: u64,
        tag: ModelTag,
    ) -> Result<Model, ModelError> {
        Self::validate_arch(&arch)?;
        let want = arch.param_count(vocab.len());
        if params.len() != want {
            return Err(ModelError::ParamCount { got: params.len(), want });
        }
        let layout = Layout::new(&arch, vocab.len());
        Ok(Model { arch, vocab, seed, tag, params, layout })
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Same weights retagged; used when an original model doubles as the
    /// frozen reference.
    pub fn retagged(&self, tag: ModelTag) -> Model {
        let mut m = self.clone();
        m.tag = tag;
        m
    }
}

/// Per-example results of a batch pass.
#[derive(Debug, Clone)]
pub struct BatchValues {
    /// Summed next-token NLL over each example's target tokens, in nats.
    pub nll: Vec<f64>,
    /// Target token count per example.
    pub token_counts: Vec<usize>,
}

impl BatchValues {
    /// Mean over examples of summed sequence NLL.
    pub fn mean_sequence_nll(&self) -> f64 {
        if self.nll.is_empty() {
            return 0.0;
        }
        self.nll.iter().sum::<f64>() / self.nll.len() as f64
    }

    /// Total NLL divided by total target tokens.
    pub fn mean_token_nll(&self) -> f64 {
        let tokens: usize = self.token_counts.iter().sum();
        if tokens == 0 {
            return 0.0;
        }
        self.nll.iter().sum::<f64>() / tokens as f64
    }
}

struct Packed {
    ids: Vec<u32>,
    row_off: Vec<usize>,
    /// (flat position, target token, example index); the position's logits
    /// predict the target token.
    loss: Vec<(usize, u32, usize)>,
}

fn pack(model: &Model, batch: &[&SeqExample]) -> Result<Packed, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let vocab = model.vocab.len() as u32;
    let mut ids = Vec::new();
    let mut row_off = Vec::with_capacity(batch.len() + 1);
    row_off.push(0);
    let mut loss = Vec::new();
    for (e, ex) in batch.iter().enumerate() {
        if ex.prompt.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        if ex.target.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        let len = ex.total_len();
        if len > model.arch.context_len {
            return Err(ModelError::ContextOverflow { len, max: model.arch.context_len });
        }
        let base = ids.len();
        for &t in ex.prompt.iter().chain(&ex.target) {
            if t >= vocab {
                return Err(ModelError::TokenOutOfRange { id: t, vocab: model.vocab.len() });
            }
            ids.push(t);
        }
        for (j, &t) in ex.target.iter().enumerate() {
            loss.push((base + ex.prompt.len() - 1 + j, t, e));
        }
        row_off.push(ids.len());
    }
    Ok(Packed { ids, row_off, loss })
}

struct LayerCache {
    x_in: Vec<f32>,
    normed1: Vec<f32>,
    inv1: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    /// Per row: attention weights flattened as [head][t][u], u ≤ t.
    att: Vec<Vec<f32>>,
    ctx: Vec<f32>,
    x_mid: Vec<f32>,
    normed2: Vec<f32>,
    inv2: Vec<f32>,
    hpre: Vec<f32>,
    hact: Vec<f32>,
}

struct ForwardOut {
    values: BatchValues,
    caches: Vec<LayerCache>,
    /// Gathered pre-final-norm rows, one per loss position.
    xf_rows: Vec<f32>,
    final_normed: Vec<f32>,
    final_inv: Vec<f32>,
    logits: Vec<f32>,
}

fn rmsnorm_rows(n: usize, e: usize, x: &[f32], g: &[f32], y: &mut [f32], inv: &mut [f32]) {
    for r in 0..n {
        let row = &x[r * e..(r + 1) * e];
        let ms: f64 = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / e as f64;
        let s = 1.0 / (ms + RMS_EPS as f64).sqrt() as f32;
        inv[r] = s;
        let out = &mut y[r * e..(r + 1) * e];
        for i in 0..e {
            out[i] = g[i] * row[i] * s;
        }
    }
}

/// Adds the rmsnorm input gradient into `dx` and the gain gradient into `dg`.
fn rmsnorm_backward(
    n: usize,
    e: usize,
    dy: &[f32],
    x: &[f32],
    inv: &[f32],
    g: &[f32],
    dx: &mut [f32],
    dg: &mut [f32],
) {
    for r in 0..n {
        let xr = &x[r * e..(r + 1) * e];
        let dyr = &dy[r * e..(r + 1) * e];
        let s = inv[r];
        let mut dot: f64 = 0.0;
        for i in 0..e {
            dg[i] += dyr[i] * xr[i] * s;
            dot += (dyr[i] * g[i]) as f64 * xr[i] as f64;
        }
        let k = s as f64 * s as f64 * s as f64 / e as f64 * dot;
        let dxr = &mut dx[r * e..(r + 1) * e];
        for i in 0..e {
            dxr[i] += dyr[i] * g[i] * s - (k * xr[i] as f64) as f32;
        }
    }
}

const GELU_C0: f32 = 0.797_884_56; // sqrt(2/pi)
const GELU_C1: f32 = 0.044715;

pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C0 * (x + GELU_C1 * x * x * x)).tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let u = GELU_C0 * (x + GELU_C1 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C0 * (1.0 + 3.0 * GELU_C1 * x * x)
}

fn forward(model: &Model, packed: &Packed) -> ForwardOut {
    let arch = &model.arch;
    let e = arch.embed_dim;
    let heads = arch.n_heads();
    let hd = arch.head_dim();
    let scale = 1.0 / (hd as f32).sqrt();
    let n = packed.ids.len();
    let n_rows = packed.row_off.len() - 1;
    let layout = model.layout();
    let p = &model.params;

    let mut x = vec![0.0f32; n * e];
    for r in 0..n_rows {
        for (pos, flat) in (packed.row_off[r]..packed.row_off[r + 1]).enumerate() {
            let id = packed.ids[flat] as usize;
            let tok = &p[layout.tok_embed.clone()][id * e..(id + 1) * e];
            let pe = &p[layout.pos_embed.clone()][pos * e..(pos + 1) * e];
            let out = &mut x[flat * e..(flat + 1) * e];
            for i in 0..e {
                out[i] = tok[i] + pe[i];
            }
        }
    }

    let mut caches = Vec::with_capacity(arch.n_layers);
    for lr in &layout.layers {
        let x_in = x.clone();
        let mut normed1 = vec![0.0f32; n * e];
        let mut inv1 = vec![0.0f32; n];
        rmsnorm_rows(n, e, &x_in, &p[lr.attn_norm.clone()], &mut normed1, &mut inv1);

        let mut q = vec![0.0f32; n * e];
        let mut k = vec![0.0f32; n * e];
        let mut v = vec![0.0f32; n * e];
        matmul_nt(n, e, e, &normed1, &p[lr.wq.clone()], &mut q);
        matmul_nt(n, e, e, &normed1, &p[lr.wk.clone()], &mut k);
        matmul_nt(n, e, e, &normed1, &p[lr.wv.clone()], &mut v);

        let mut ctx = vec![0.0f32; n * e];
        let mut att_rows = Vec::with_capacity(n_rows);
        let mut scores = vec![0.0f32; arch.context_len];
        for r in 0..n_rows {
            let base = packed.row_off[r];
            let len = packed.row_off[r + 1] - base;
            let mut att = vec![0.0f32; heads * len * len];
            for h in 0..heads {
                let ho = h * hd;
                for t in 0..len {
                    let qt = &q[(base + t) * e + ho..(base + t) * e + ho + hd];
                    let mut maxs = f32::NEG_INFINITY;
                    for (u, s) in scores.iter_mut().enumerate().take(t + 1) {
                        let ku = &k[(base + u) * e + ho..(base + u) * e + ho + hd];
                        let mut acc = 0.0f32;
                        for i in 0..hd {
                            acc += qt[i] * ku[i];
                        }
                        *s = acc * scale;
                        maxs = maxs.max(*s);
                    }
                    let mut denom = 0.0f64;
                    for s in scores.iter_mut().take(t + 1) {
                        *s = (*s - maxs).exp();
                        denom += *s as f64;
                    }
                    let inv_denom = (1.0 / denom) as f32;
                    let arow = &mut att[h * len * len + t * len..h * len * len + t * len + t + 1];
                    let ctx_t = &mut ctx[(base + t) * e + ho..(base + t) * e + ho + hd];
                    for u in 0..=t {
                        let a = scores[u] * inv_denom;
                        arow[u] = a;
                        let vu = &v[(base + u) * e + ho..(base + u) * e + ho + hd];
                        for i in 0..hd {
                            ctx_t[i] += a * vu[i];
                        }
                    }
                }
            }
            att_rows.push(att);
        }

        // Attention output projection and residual.
        let mut attn_out = vec![0.0f32; n * e];
        matmul_nt(n, e, e, &ctx, &p[lr.wo.clone()], &mut attn_out);
        for i in 0..n * e {
            x[i] += attn_out[i];
        }
        let x_mid = x.clone();

        let mut normed2 = vec![0.0f32; n * e];
        let mut inv2 = vec![0.0f32; n];
        rmsnorm_rows(n, e, &x_mid, &p[lr.ffn_norm.clone()], &mut normed2, &mut inv2);

        let f = arch.ffn_dim;
        let mut hpre = vec![0.0f32; n * f];
        matmul_nt(n, e, f, &normed2, &p[lr.fc1.clone()], &mut hpre);
        let hact: Vec<f32> = hpre.iter().map(|&h| gelu(h)).collect();
        let mut ffn_out = vec![0.0f32; n * e];
        matmul_nt(n, f, e, &hact, &p[lr.fc2.clone()], &mut ffn_out);
        for i in 0..n * e {
            x[i] += ffn_out[i];
        }

        caches.push(LayerCache {
            x_in,
            normed1,
            inv1,
            q,
            k,
            v,
            att: att_rows,
            ctx,
            x_mid,
            normed2,
            inv2,
            hpre,
            hact,
        });
    }

    // Final norm and logits only at loss positions.
    let n_loss = packed.loss.len();
    let mut xf_rows = vec![0.0f32; n_loss * e];
    for (i, &(pos, _, _)) in packed.loss.iter().enumerate() {
        xf_rows[i * e..(i + 1) * e].copy_from_slice(&x[pos * e..(pos + 1) * e]);
    }
    let mut final_normed = vec![0.0f32; n_loss * e];
    let mut final_inv = vec![0.0f32; n_loss];
    rmsnorm_rows(n_loss, e, &xf_rows, &p[layout.final_norm.clone()], &mut final_normed, &mut final_inv);

    let vsize = model.vocab.len();
    let mut logits = vec![0.0f32; n_loss * vsize];
    matmul_nt(n_loss, e, vsize, &final_normed, &p[layout.unembed.clone()], &mut logits);

    let mut nll = vec![0.0f64; n_rows];
    let mut token_counts = vec![0usize; n_rows];
    for (i, &(_, target, ex)) in packed.loss.iter().enumerate() {
        let row = &logits[i * vsize..(i + 1) * vsize];
        let maxl = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse: f64 = maxl + row.iter().map(|&l| (l as f64 - maxl).exp()).sum::<f64>().ln();
        nll[ex] += lse - row[target as usize] as f64;
        token_counts[ex] += 1;
    }

    ForwardOut {
        values: BatchValues { nll, token_counts },
        caches,
        xf_rows,
        final_normed,
        final_inv,
        logits,
    }
}

/// Summed target NLL per example, no gradients.
pub fn batch_nll(model: &Model, batch: &[&SeqExample]) -> Result<BatchValues, ModelError> {
    let packed = pack(model, batch)?;
    Ok(forward(model, &packed).values)
}

/// Accumulates d/dθ of Σ_i weights[i] · NLL_i into `grad` (same length as
/// the parameter buffer, caller-zeroed) and returns the per-example NLLs.
pub fn batch_nll_grad(
    model: &Model,
    batch: &[&SeqExample],
    weights: &[f64],
    grad: &mut [f32],
) -> Result<BatchValues, ModelError> {
    if weights.len() != batch.len() {
        return Err(ModelError::WeightCount { got: weights.len(), want: batch.len() });
    }
    if grad.len() != model.param_count() {
        return Err(ModelError::ParamCount { got: grad.len(), want: model.param_count() });
    }
    let packed = pack(model, batch)?;
    let fwd = forward(model, &packed);

    let arch = &model.arch;
    let e = arch.embed_dim;
    let f = arch.ffn_dim;
    let heads = arch.n_heads();
    let hd = arch.head_dim();
    let scale = 1.0 / (hd as f32).sqrt();
    let n = packed.ids.len();
    let n_rows = packed.row_off.len() - 1;
    let n_loss = packed.loss.len();
    let vsize = model.vocab.len();
    let layout = model.layout();
    let p = &model.params;

    // d(loss)/d(logits): weight * (softmax - onehot) per loss row.
    let mut dlogits = vec![0.0f32; n_loss * vsize];
    for (i, &(_, target, ex)) in packed.loss.iter().enumerate() {
        let w = weights[ex];
        if w == 0.0 {
            continue;
        }
        let row = &fwd.logits[i * vsize..(i + 1) * vsize];
        let maxl = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let denom: f64 = row.iter().map(|&l| (l as f64 - maxl).exp()).sum();
        let drow = &mut dlogits[i * vsize..(i + 1) * vsize];
        for j in 0..vsize {
            let pj = (row[j] as f64 - maxl).exp() / denom;
            drow[j] = (w * pj) as f32;
        }
        drow[target as usize] -= w as f32;
    }

    // Unembed and final norm.
    matmul_tn_acc(vsize, n_loss, e, &dlogits, &fwd.final_normed, &mut grad[layout.unembed.clone()]);
    let mut d_final_normed = vec![0.0f32; n_loss * e];
    matmul_nn_acc(n_loss, vsize, e, &dlogits, &p[layout.unembed.clone()], &mut d_final_normed);

    let mut d_xf_rows = vec![0.0f32; n_loss * e];
    {
        let (g_slice, dg_slice) = (&p[layout.final_norm.clone()], layout.final_norm.clone());
        let mut dg = vec![0.0f32; e];
        rmsnorm_backward(n_loss, e, &d_final_normed, &fwd.xf_rows, &fwd.final_inv, g_slice, &mut d_xf_rows, &mut dg);
        for (i, d) in dg.iter().enumerate() {
            grad[dg_slice.start + i] += d;
        }
    }

    let mut dx = vec![0.0f32; n * e];
    for (i, &(pos, _, _)) in packed.loss.iter().enumerate() {
        let src = &d_xf_rows[i * e..(i + 1) * e];
        let dst = &mut dx[pos * e..(pos + 1) * e];
        for j in 0..e {
            dst[j] += src[j];
        }
    }

    for (l, lr) in layout.layers.iter().enumerate().rev() {
        let cache = &fwd.caches[l];

        // FFN block: x_out = x_mid + gelu(normed2·W1ᵀ)·W2ᵀ.
        let mut d_hact = vec![0.0f32; n * f];
        matmul_nn_acc(n, e, f, &dx, &p[lr.fc2.clone()], &mut d_hact);
        matmul_tn_acc(e, n, f, &dx, &cache.hact, &mut grad[lr.fc2.clone()]);
        let mut d_hpre = d_hact;
        for i in 0..n * f {
            d_hpre[i] *= gelu_grad(cache.hpre[i]);
        }
        let mut d_normed2 = vec![0.0f32; n * e];
        matmul_nn_acc(n, f, e, &d_hpre, &p[lr.fc1.clone()], &mut d_normed2);
        matmul_tn_acc(f, n, e, &d_hpre, &cache.normed2, &mut grad[lr.fc1.clone()]);
        {
            let mut dg = vec![0.0f32; e];
            rmsnorm_backward(n, e, &d_normed2, &cache.x_mid, &cache.inv2, &p[lr.ffn_norm.clone()], &mut dx, &mut dg);
            for (i, d) in dg.iter().enumerate() {
                grad[lr.ffn_norm.start + i] += d;
            }
        }

        // Attention block: x_mid = x_in + ctx·Woᵀ.
        let mut d_ctx = vec![0.0f32; n * e];
        matmul_nn_acc(n, e, e, &dx, &p[lr.wo.clone()], &mut d_ctx);
        matmul_tn_acc(e, n, e, &dx, &cache.ctx, &mut grad[lr.wo.clone()]);

        let mut dq = vec![0.0f32; n * e];
        let mut dk = vec![0.0f32; n * e];
        let mut dv = vec![0.0f32; n * e];
        let mut datt = vec![0.0f32; arch.context_len];
        for r in 0..n_rows {
            let base = packed.row_off[r];
            let len = packed.row_off[r + 1] - base;
            let att = &cache.att[r];
            for h in 0..heads {
                let ho = h * hd;
                for t in 0..len {
                    let arow = &att[h * len * len + t * len..h * len * len + t * len + t + 1];
                    let dctx_t = &d_ctx[(base + t) * e + ho..(base + t) * e + ho + hd];
                    let mut dot_aw = 0.0f64;
                    for u in 0..=t {
                        let vu = &cache.v[(base + u) * e + ho..(base + u) * e + ho + hd];
                        let mut acc = 0.0f32;
                        for i in 0..hd {
                            acc += dctx_t[i] * vu[i];
                        }
                        datt[u] = acc;
                        dot_aw += (arow[u] * acc) as f64;
                        let dvu = &mut dv[(base + u) * e + ho..(base + u) * e + ho + hd];
                        for i in 0..hd {
                            dvu[i] += arow[u] * dctx_t[i];
                        }
                    }
                    let qt = &cache.q[(base + t) * e + ho..(base + t) * e + ho + hd];
                    let dqt_base = (base + t) * e + ho;
                    for u in 0..=t {
                        let ds = arow[u] * (datt[u] - dot_aw as f32) * scale;
                        let ku = &cache.k[(base + u) * e + ho..(base + u) * e + ho + hd];
                        let dku = &mut dk[(base + u) * e + ho..(base + u) * e + ho + hd];
                        for i in 0..hd {
                            dku[i] += ds * qt[i];
                        }
                        let dqt = &mut dq[dqt_base..dqt_base + hd];
                        for i in 0..hd {
                            dqt[i] += ds * ku[i];
                        }
                    }
                }
            }
        }

        let mut d_normed1 = vec![0.0f32; n * e];
        matmul_nn_acc(n, e, e, &dq, &p[lr.wq.clone()], &mut d_normed1);
        matmul_nn_acc(n, e, e, &dk, &p[lr.wk.clone()], &mut d_normed1);
        matmul_nn_acc(n, e, e, &dv, &p[lr.wv.clone()], &mut d_normed1);
        matmul_tn_acc(e, n, e, &dq, &cache.normed1, &mut grad[lr.wq.clone()]);
        matmul_tn_acc(e, n, e, &dk, &cache.normed1, &mut grad[lr.wk.clone()]);
        matmul_tn_acc(e, n, e, &dv, &cache.normed1, &mut grad[lr.wv.clone()]);
        {
            let mut dg = vec![0.0f32; e];
            rmsnorm_backward(n, e, &d_normed1, &cache.x_in, &cache.inv1, &p[lr.attn_norm.clone()], &mut dx, &mut dg);
            for (i, d) in dg.iter().enumerate() {
                grad[lr.attn_norm.start + i] += d;
            }
        }
    }

    // Embedding scatter.
    let d_tok_base = layout.tok_embed.start;
    let d_pos_base = layout.pos_embed.start;
    for r in 0..n_rows {
        for (pos, flat) in (packed.row_off[r]..packed.row_off[r + 1]).enumerate() {
            let id = packed.ids[flat] as usize;
            let src = &dx[flat * e..(flat + 1) * e];
            for i in 0..e {
                grad[d_tok_base + id * e + i] += src[i];
            }
            for i in 0..e {
                grad[d_pos_base + pos * e + i] += src[i];
            }
        }
    }

    Ok(fwd.values)
}
