//! Incremental evaluation: a KV cache advanced one token at a time, used
//! for greedy decoding, next-token distributions, and continuation scoring.
//! This path shares no code with the batched trainer on purpose; tests pin
//! agreement between the two.

use super::model::{Model, RMS_EPS};
use super::vocab::EOS;
use super::ModelError;

struct LayerKv {
    k: Vec<f32>,
    v: Vec<f32>,
}

/// A growing context. `push` appends a token; `score_continuation` scores a
/// candidate continuation and restores the state afterward, so many
/// candidates can share one prompt cheaply.
pub struct DecodeState<'m> {
    model: &'m Model,
    kv: Vec<LayerKv>,
    len: usize,
    /// Final residual-stream vector at the newest position.
    last_hidden: Vec<f32>,
    /// Memoized log-probabilities for the next token.
    last_lp: Option<Vec<f64>>,
}

fn rmsnorm_vec(x: &[f32], g: &[f32], out: &mut [f32]) {
    let e = x.len();
    let ms: f64 = x.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / e as f64;
    let s = 1.0 / (ms + RMS_EPS as f64).sqrt() as f32;
    for i in 0..e {
        out[i] = g[i] * x[i] * s;
    }
}

fn gemv_nt(w: &[f32], x: &[f32], out: &mut [f32]) {
    let k = x.len();
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &w[o * k..(o + 1) * k];
        let mut acc = 0.0f32;
        for i in 0..k {
            acc += row[i] * x[i];
        }
        *slot = acc;
    }
}

impl<'m> DecodeState<'m> {
    pub fn new(model: &'m Model) -> DecodeState<'m> {
        let e = model.arch.embed_dim;
        let c = model.arch.context_len;
        DecodeState {
            model,
            kv: (0..model.arch.n_layers)
                .map(|_| LayerKv { k: Vec::with_capacity(c * e), v: Vec::with_capacity(c * e) })
                .collect(),
            len: 0,
            last_hidden: vec![0.0; e],
            last_lp: None,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Remaining capacity before the context window is full.
    pub fn remaining(&self) -> usize {
        self.model.arch.context_len - self.len
    }

    pub fn push(&mut self, id: u32) -> Result<(), ModelError> {
        let model = self.model;
        let arch = &model.arch;
        let e = arch.embed_dim;
        if self.len >= arch.context_len {
            return Err(ModelError::ContextOverflow { len: self.len + 1, max: arch.context_len });
        }
        if id as usize >= model.vocab.len() {
            return Err(ModelError::TokenOutOfRange { id, vocab: model.vocab.len() });
        }
        let layout = model.layout();
        let p = model.params();
        let pos = self.len;

        let mut x = vec![0.0f32; e];
        {
            let tok = &p[layout.tok_embed.clone()][id as usize * e..(id as usize + 1) * e];
            let pe = &p[layout.pos_embed.clone()][pos * e..(pos + 1) * e];
            for i in 0..e {
                x[i] = tok[i] + pe[i];
            }
        }

        let heads = arch.n_heads();
        let hd = arch.head_dim();
        let scale = 1.0 / (hd as f32).sqrt();
        let mut normed = vec![0.0f32; e];
        let mut q = vec![0.0f32; e];
        let mut buf = vec![0.0f32; e];

        for (l, lr) in layout.layers.iter().enumerate() {
            rmsnorm_vec(&x, &p[lr.attn_norm.clone()], &mut normed);
            gemv_nt(&p[lr.wq.clone()], &normed, &mut q);
            gemv_nt(&p[lr.wk.clone()], &normed, &mut buf);
            self.kv[l].k.extend_from_slice(&buf);
            gemv_nt(&p[lr.wv.clone()], &normed, &mut buf);
            self.kv[l].v.extend_from_slice(&buf);

            let keys = &self.kv[l].k;
            let vals = &self.kv[l].v;
            let t = pos;
            let mut ctx = vec![0.0f32; e];
            let mut scores = vec![0.0f32; t + 1];
            for h in 0..heads {
                let ho = h * hd;
                let qh = &q[ho..ho + hd];
                let mut maxs = f32::NEG_INFINITY;
                for (u, s) in scores.iter_mut().enumerate() {
                    let ku = &keys[u * e + ho..u * e + ho + hd];
                    let mut acc = 0.0f32;
                    for i in 0..hd {
                        acc += qh[i] * ku[i];
                    }
                    *s = acc * scale;
                    maxs = maxs.max(*s);
                }
                let mut denom = 0.0f64;
                for s in scores.iter_mut() {
                    *s = (*s - maxs).exp();
                    denom += *s as f64;
                }
                let inv = (1.0 / denom) as f32;
                let ctx_h = &mut ctx[ho..ho + hd];
                for (u, &s) in scores.iter().enumerate() {
                    let a = s * inv;
                    let vu = &vals[u * e + ho..u * e + ho + hd];
                    for i in 0..hd {
                        ctx_h[i] += a * vu[i];
                    }
                }
            }
            gemv_nt(&p[lr.wo.clone()], &ctx, &mut buf);
            for i in 0..e {
                x[i] += buf[i];
            }

            rmsnorm_vec(&x, &p[lr.ffn_norm.clone()], &mut normed);
            let f = arch.ffn_dim;
            let mut h1 = vec![0.0f32; f];
            gemv_nt(&p[lr.fc1.clone()], &normed, &mut h1);
            for v in h1.iter_mut() {
                *v = super::model::gelu(*v);
            }
            gemv_nt(&p[lr.fc2.clone()], &h1, &mut buf);
            for i in 0..e {
                x[i] += buf[i];
            }
        }

        self.last_hidden = x;
        self.last_lp = None;
        self.len += 1;
        Ok(())
    }

    /// Log-probabilities of the next token given everything pushed so far.
    /// At least one token must have been pushed.
    pub fn last_logprobs(&mut self) -> &[f64] {
        assert!(self.len > 0, "last_logprobs on an empty context");
        if self.last_lp.is_none() {
            let model = self.model;
            let e = model.arch.embed_dim;
            let layout = model.layout();
            let p = model.params();
            let mut normed = vec![0.0f32; e];
            rmsnorm_vec(&self.last_hidden, &p[layout.final_norm.clone()], &mut normed);
            let vsize = model.vocab.len();
            let mut logits = vec![0.0f32; vsize];
            gemv_nt(&p[layout.unembed.clone()], &normed, &mut logits);
            let maxl = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let lse: f64 =
                maxl + logits.iter().map(|&l| (l as f64 - maxl).exp()).sum::<f64>().ln();
            self.last_lp = Some(logits.iter().map(|&l| l as f64 - lse).collect());
        }
        self.last_lp.as_deref().expect("just filled")
    }

    fn rollback(&mut self, len: usize, hidden: Vec<f32>, lp: Option<Vec<f64>>) {
        let e = self.model.arch.embed_dim;
        for layer in &mut self.kv {
            layer.k.truncate(len * e);
            layer.v.truncate(len * e);
        }
        self.len = len;
        self.last_hidden = hidden;
        self.last_lp = lp;
    }

    /// Total log-probability of `continuation` given the current context.
    /// The state is left exactly as it was.
    pub fn score_continuation(&mut self, continuation: &[u32]) -> Result<f64, ModelError> {
        let len0 = self.len;
        let hidden0 = self.last_hidden.clone();
        let lp0 = self.last_lp.clone();
        let mut total = 0.0f64;
        let mut result = Ok(());
        for (i, &tok) in continuation.iter().enumerate() {
            if tok as usize >= self.model.vocab.len() {
                result = Err(ModelError::TokenOutOfRange { id: tok, vocab: self.model.vocab.len() });
                break;
            }
            total += self.last_logprobs()[tok as usize];
            if i + 1 < continuation.len() {
                if let Err(e) = self.push(tok) {
                    result = Err(e);
                    break;
                }
            }
        }
        self.rollback(len0, hidden0, lp0);
        result.map(|_| total)
    }
}

/// Result of greedy decoding. `hit_eos` is false when the context filled up
/// or `max_new` ran out before the end token appeared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub tokens: Vec<u32>,
    pub hit_eos: bool,
}

/// Greedy argmax decoding; ties break toward the lowest token index. The
/// returned tokens exclude the end token.
pub fn greedy_decode(model: &Model, prompt: &[u32], max_new: usize) -> Result<Decoded, ModelError> {
    if prompt.is_empty() {
        return Err(ModelError::EmptyPrompt);
    }
    let mut state = DecodeState::new(model);
    for &t in prompt {
        state.push(t)?;
    }
    let mut tokens = Vec::new();
    for _ in 0..max_new {
        let lp = state.last_logprobs();
        let mut best = 0usize;
        let mut best_lp = f64::NEG_INFINITY;
        for (i, &v) in lp.iter().enumerate() {
            if v > best_lp {
                best_lp = v;
                best = i;
            }
        }
        if best as u32 == EOS {
            return Ok(Decoded { tokens, hit_eos: true });
        }
        if state.remaining() == 0 {
            return Ok(Decoded { tokens, hit_eos: false });
        }
        state.push(best as u32)?;
        tokens.push(best as u32);
    }
    Ok(Decoded { tokens, hit_eos: false })
}

/// Next-token distribution after consuming `prefix`.
pub fn next_token_logprobs(model: &Model, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
    if prefix.is_empty() {
        return Err(ModelError::EmptyPrompt);
    }
    let mut state = DecodeState::new(model);
    for &t in prefix {
        state.push(t)?;
    }
    Ok(state.last_logprobs().to_vec())
}

/// Summed NLL of `continuation` after `prompt`, in nats.
pub fn sequence_nll(model: &Model, prompt: &[u32], continuation: &[u32]) -> Result<f64, ModelError> {
    if prompt.is_empty() {
        return Err(ModelError::EmptyPrompt);
    }
    let mut state = DecodeState::new(model);
    for &t in prompt {
        state.push(t)?;
    }
    Ok(-state.score_continuation(continuation)?)
}
