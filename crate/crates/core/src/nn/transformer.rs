use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::normal;
use super::{Mat, ParamId, ParamSet, Tape, Var};

/// Shape of a small pre-norm transformer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub segments: usize,
    /// Left-to-right attention only.
    pub causal: bool,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            ));
        }
        if self.vocab_size == 0 || self.max_len == 0 || self.segments == 0 || self.ff_dim == 0 {
            return Err("vocab_size, max_len, segments and ff_dim must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: (ParamId, ParamId),
    qkv: (ParamId, ParamId),
    out: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
}

/// Token + position + segment embeddings followed by `layers` self-attention
/// blocks and a final layer norm. Produces one `dim`-vector per input token.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    tok: ParamId,
    pos: ParamId,
    seg: ParamId,
    blocks: Vec<Block>,
    ln_f: (ParamId, ParamId),
}

impl Encoder {
    pub fn new<R: Rng>(cfg: EncoderConfig, params: &mut ParamSet, prefix: &str, rng: &mut R) -> Self {
        let d = cfg.dim;
        let emb_std = 0.1;
        let w_std = (1.0 / d as f64).sqrt();
        let resid_std = w_std / (2.0 * cfg.layers.max(1) as f64).sqrt();
        let ff_std = (1.0 / cfg.ff_dim as f64).sqrt() / (2.0 * cfg.layers.max(1) as f64).sqrt();
        let mut add = |name: &str, m: Mat| params.add(format!("{prefix}.{name}"), m);

        let tok = add("tok", normal(rng, cfg.vocab_size, d, emb_std));
        let pos = add("pos", normal(rng, cfg.max_len, d, emb_std));
        let seg = add("seg", normal(rng, cfg.segments, d, emb_std));
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let ln1 = (add(&format!("{l}.ln1.g"), Mat::ones((1, d))), add(&format!("{l}.ln1.b"), Mat::zeros((1, d))));
            let qkv = (
                add(&format!("{l}.qkv.w"), normal(rng, d, 3 * d, w_std)),
                add(&format!("{l}.qkv.b"), Mat::zeros((1, 3 * d))),
            );
            let out = (
                add(&format!("{l}.out.w"), normal(rng, d, d, resid_std)),
                add(&format!("{l}.out.b"), Mat::zeros((1, d))),
            );
            let ln2 = (add(&format!("{l}.ln2.g"), Mat::ones((1, d))), add(&format!("{l}.ln2.b"), Mat::zeros((1, d))));
            let ff1 = (
                add(&format!("{l}.ff1.w"), normal(rng, d, cfg.ff_dim, w_std)),
                add(&format!("{l}.ff1.b"), Mat::zeros((1, cfg.ff_dim))),
            );
            let ff2 = (
                add(&format!("{l}.ff2.w"), normal(rng, cfg.ff_dim, d, ff_std)),
                add(&format!("{l}.ff2.b"), Mat::zeros((1, d))),
            );
            blocks.push(Block { ln1, qkv, out, ln2, ff1, ff2 });
        }
        let ln_f = (add("lnf.g", Mat::ones((1, d))), add("lnf.b", Mat::zeros((1, d))));
        Encoder { cfg, tok, pos, seg, blocks, ln_f }
    }

    /// Hidden states `[ids.len(), dim]`.
    pub fn forward(&self, t: &mut Tape, ids: &[u32], segments: &[usize]) -> Var {
        assert_eq!(ids.len(), segments.len(), "one segment id per token");
        assert!(ids.len() <= self.cfg.max_len, "sequence longer than max_len");
        let n = ids.len();
        let tok_ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..n).collect();
        let x = t.gather(self.tok, &tok_ids);
        let p = t.gather(self.pos, &positions);
        let s = t.gather(self.seg, segments);
        let x = t.add(x, p);
        let mut h = t.add(x, s);
        for block in &self.blocks {
            h = self.block(t, block, h);
        }
        layer_norm(t, h, self.ln_f)
    }

    fn block(&self, t: &mut Tape, b: &Block, x: Var) -> Var {
        let d = self.cfg.dim;
        let hd = d / self.cfg.heads;
        let scale = 1.0 / (hd as f64).sqrt();

        let a = layer_norm(t, x, b.ln1);
        let qkv = linear(t, a, b.qkv);
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let q = t.cols(qkv, h * hd, hd);
            let k = t.cols(qkv, d + h * hd, hd);
            let v = t.cols(qkv, 2 * d + h * hd, hd);
            let scores = t.matmul_t(q, k);
            let scores = t.scale(scores, scale);
            let attn = t.softmax(scores, self.cfg.causal);
            heads.push(t.matmul(attn, v));
        }
        let merged = if heads.len() == 1 { heads[0] } else { t.concat_cols(&heads) };
        let attn_out = linear(t, merged, b.out);
        let x = t.add(x, attn_out);

        let f = layer_norm(t, x, b.ln2);
        let f = linear(t, f, b.ff1);
        let f = t.gelu(f);
        let f = linear(t, f, b.ff2);
        t.add(x, f)
    }
}

pub fn linear(t: &mut Tape, x: Var, (w, b): (ParamId, ParamId)) -> Var {
    let wv = t.param(w);
    let bv = t.param(b);
    let y = t.matmul(x, wv);
    t.add_row(y, bv)
}

fn layer_norm(t: &mut Tape, x: Var, (g, b): (ParamId, ParamId)) -> Var {
    let gv = t.param(g);
    let bv = t.param(b);
    t.layer_norm(x, gv, bv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;

    fn cfg(causal: bool) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 11,
            dim: 8,
            layers: 2,
            heads: 2,
            ff_dim: 12,
            max_len: 16,
            segments: 3,
            causal,
        }
    }

    fn run(enc: &Encoder, ps: &ParamSet, ids: &[u32]) -> Mat {
        let mut t = Tape::new(ps);
        let segs = vec![1; ids.len()];
        let h = enc.forward(&mut t, ids, &segs);
        t.value(h).to_owned()
    }

    #[test]
    fn output_shape_matches_input() {
        let mut ps = ParamSet::new();
        let enc = Encoder::new(cfg(false), &mut ps, "enc", &mut rng(1));
        let out = run(&enc, &ps, &[1, 2, 3, 4, 5]);
        assert_eq!(out.dim(), (5, 8));
        assert!(out.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn causal_prefix_is_unaffected_by_future_tokens() {
        let mut ps = ParamSet::new();
        let enc = Encoder::new(cfg(true), &mut ps, "dec", &mut rng(2));
        let a = run(&enc, &ps, &[1, 2, 3, 4, 5, 6]);
        let b = run(&enc, &ps, &[1, 2, 3, 9, 10, 0]);
        for r in 0..3 {
            assert_eq!(a.row(r), b.row(r));
        }
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn bidirectional_sees_future_tokens() {
        let mut ps = ParamSet::new();
        let enc = Encoder::new(cfg(false), &mut ps, "enc", &mut rng(3));
        let a = run(&enc, &ps, &[1, 2, 3, 4]);
        let b = run(&enc, &ps, &[1, 2, 3, 7]);
        assert_ne!(a.row(0), b.row(0));
    }

    #[test]
    fn rejects_bad_head_split() {
        let mut c = cfg(false);
        c.heads = 3;
        assert!(c.validate().is_err());
    }
}
