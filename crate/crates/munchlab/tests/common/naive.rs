//! Scalar f64 reimplementation of the forward NLL. Tensors are located by
//! walking `ModelArch::manifest` and accumulating offsets, so a layout bug
//! in the production side cannot hide here.

use munchlab::seqmodel::{Model, ModelArch, SeqExample, RMS_EPS};

struct Tensors<'p> {
    params: &'p [f32],
    entries: Vec<(String, usize, Vec<usize>)>,
}

impl<'p> Tensors<'p> {
    fn new(params: &'p [f32], arch: &ModelArch, vocab: usize) -> Tensors<'p> {
        let mut at = 0;
        let entries = arch
            .manifest(vocab)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let e = (name, at, shape);
                at += n;
                e
            })
            .collect();
        assert_eq!(at, params.len(), "manifest does not tile the buffer");
        Tensors { params, entries }
    }

    fn get(&self, name: &str) -> (&'p [f32], &[usize]) {
        let (_, off, shape) = self
            .entries
            .iter()
            .find(|(n, _, _)| n == name)
            .unwrap_or_else(|| panic!("no tensor named {name}"));
        let n: usize = shape.iter().product();
        (&self.params[*off..*off + n], shape)
    }
}

fn rmsnorm(x: &[f64], gain: &[f32]) -> Vec<f64> {
    let e = x.len();
    let ms = x.iter().map(|v| v * v).sum::<f64>() / e as f64;
    let inv = 1.0 / (ms + RMS_EPS as f64).sqrt();
    (0..e).map(|i| gain[i] as f64 * x[i] * inv).collect()
}

/// y = W · x for a row-major [out, in] matrix.
fn apply(w: &[f32], shape: &[usize], x: &[f64]) -> Vec<f64> {
    let (out, inp) = (shape[0], shape[1]);
    assert_eq!(inp, x.len());
    (0..out)
        .map(|o| (0..inp).map(|i| w[o * inp + i] as f64 * x[i]).sum())
        .collect()
}

fn gelu(x: f64) -> f64 {
    let c0 = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c0 * (x + 0.044715 * x * x * x)).tanh())
}

/// Summed NLL of `target` given `prompt`, matching the production
/// loss-position convention.
pub fn nll(params: &[f32], arch: &ModelArch, vocab: usize, prompt: &[u32], target: &[u32]) -> f64 {
    let tensors = Tensors::new(params, arch, vocab);
    let e = arch.embed_dim;
    let heads = arch.n_heads();
    let hd = arch.head_dim();
    let seq: Vec<u32> = prompt.iter().chain(target).copied().collect();
    let t_len = seq.len();

    let (tok, _) = tensors.get("tok_embed");
    let (pos, _) = tensors.get("pos_embed");
    let mut x: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            let id = seq[t] as usize;
            (0..e).map(|i| tok[id * e + i] as f64 + pos[t * e + i] as f64).collect()
        })
        .collect();

    for l in 0..arch.n_layers {
        let (g1, _) = tensors.get(&format!("layer{l}.attn_norm"));
        let normed: Vec<Vec<f64>> = x.iter().map(|row| rmsnorm(row, g1)).collect();
        let (wq, sq) = tensors.get(&format!("layer{l}.wq"));
        let (wk, sk) = tensors.get(&format!("layer{l}.wk"));
        let (wv, sv) = tensors.get(&format!("layer{l}.wv"));
        let q: Vec<Vec<f64>> = normed.iter().map(|r| apply(wq, sq, r)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|r| apply(wk, sk, r)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|r| apply(wv, sv, r)).collect();

        let scale = 1.0 / (hd as f64).sqrt();
        let mut ctx = vec![vec![0.0f64; e]; t_len];
        for h in 0..heads {
            let ho = h * hd;
            for t in 0..t_len {
                let scores: Vec<f64> = (0..=t)
                    .map(|u| (0..hd).map(|i| q[t][ho + i] * k[u][ho + i]).sum::<f64>() * scale)
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let denom: f64 = exps.iter().sum();
                for u in 0..=t {
                    let a = exps[u] / denom;
                    for i in 0..hd {
                        ctx[t][ho + i] += a * v[u][ho + i];
                    }
                }
            }
        }

        let (wo, so) = tensors.get(&format!("layer{l}.wo"));
        for t in 0..t_len {
            let out = apply(wo, so, &ctx[t]);
            for i in 0..e {
                x[t][i] += out[i];
            }
        }

        let (g2, _) = tensors.get(&format!("layer{l}.ffn_norm"));
        let (fc1, s1) = tensors.get(&format!("layer{l}.fc1"));
        let (fc2, s2) = tensors.get(&format!("layer{l}.fc2"));
        for t in 0..t_len {
            let normed = rmsnorm(&x[t], g2);
            let h: Vec<f64> = apply(fc1, s1, &normed).into_iter().map(gelu).collect();
            let out = apply(fc2, s2, &h);
            for i in 0..e {
                x[t][i] += out[i];
            }
        }
    }

    let (gf, _) = tensors.get("final_norm");
    let (un, su) = tensors.get("unembed");
    let mut total = 0.0;
    for j in 0..target.len() {
        let row = prompt.len() - 1 + j;
        let logits = apply(un, su, &rmsnorm(&x[row], gf));
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[seq[row + 1] as usize];
    }
    total
}

/// [`nll`] for a whole batch against one model.
pub fn batch(model: &Model, batch: &[&SeqExample]) -> Vec<f64> {
    batch
        .iter()
        .map(|ex| nll(model.params(), &model.arch, model.vocab.len(), &ex.prompt, &ex.target))
        .collect()
}
