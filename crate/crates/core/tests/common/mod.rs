#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Normal};

use storyrewrite::nn::{Mat, ParamSet};
use storyrewrite::seed::rng;

pub const EPS: f64 = 1e-3;

/// Worst relative error between `analytic` and central differences, taken
/// per parameter matrix as `|a - n| / max(|a|, |n|)` in Frobenius norm.
/// Matrices whose gradients both vanish (below 1e-10) count as exact.
pub fn gradcheck<M>(
    model: &mut M,
    analytic: &[Mat],
    params: impl Fn(&mut M) -> &mut ParamSet,
    loss: impl Fn(&M) -> f64,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for (pi, a) in analytic.iter().enumerate() {
        let (rows, cols) = a.dim();
        let mut num = Mat::zeros((rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                let orig = params(model).values[pi][[r, c]];
                params(model).values[pi][[r, c]] = orig + EPS;
                let up = loss(model);
                params(model).values[pi][[r, c]] = orig - EPS;
                let down = loss(model);
                params(model).values[pi][[r, c]] = orig;
                num[[r, c]] = (up - down) / (2.0 * EPS);
            }
        }
        let norm = |m: &Mat| m.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&(a - &num));
        let scale = norm(a).max(norm(&num));
        let rel = if scale < 1e-10 { 0.0 } else { diff / scale };
        if rel > worst.0 {
            worst = (rel, params(model).names[pi].clone());
        }
    }
    worst
}

/// Adds Gaussian noise to every parameter so zero-initialized heads and
/// unit layer-norm gains do not make the check trivial.
pub fn jitter(params: &mut ParamSet, seed: u64, std: f64) {
    let mut r = rng(seed);
    let n = Normal::new(0.0, std).unwrap();
    for m in params.values.iter_mut() {
        m.mapv_inplace(|x| x + n.sample(&mut r));
    }
}

/// Between 1 and `max_len` tokens drawn uniformly from `alphabet`.
pub fn random_tokens(r: &mut impl Rng, max_len: usize, alphabet: &[&str]) -> Vec<String> {
    let len = r.random_range(1..=max_len);
    (0..len).map(|_| alphabet[r.random_range(0..alphabet.len())].to_string()).collect()
}

pub mod models {
    use storyrewrite::corpus::{build_vocab, StoryPair, Vocab};
    use storyrewrite::generator::{generator_instances, GeneratorArch, GeneratorModel};
    use storyrewrite::synthetic::templated_corpus;
    use storyrewrite::tagger::{tagger_instances, TaggerArch, TaggerModel};

    use super::{gradcheck, jitter};

    fn corpus() -> (Vec<StoryPair>, Vocab) {
        let (pairs, _) = templated_corpus(4, 11);
        let vocab = build_vocab(&pairs, 1).unwrap();
        (pairs, vocab)
    }

    /// `(seed, lambda, worst relative error, parameter)` for a small jittered
    /// tagger on one templated instance per seed.
    pub fn tagger_gradcheck(seeds: &[u64]) -> Vec<(u64, f64, f64, String)> {
        let (pairs, vocab) = corpus();
        let arch = TaggerArch {
            dim: 8,
            layers: 2,
            heads: 2,
            ff_dim: 12,
            max_len: 64,
        };
        let instances = tagger_instances(&pairs, &vocab, arch.max_len).unwrap();
        let mut out = Vec::new();
        for (i, &seed) in seeds.iter().enumerate() {
            let mut model = TaggerModel::new(arch, &vocab, seed).unwrap();
            jitter(&mut model.params, seed + 100, 0.1);
            let inst = &instances[i % instances.len()];
            for lambda in [0.8, 0.3] {
                let (_, grads) = model.loss_and_grads(&inst.input, &inst.labels, lambda).unwrap();
                let (err, name) = gradcheck(
                    &mut model,
                    &grads,
                    |m| &mut m.params,
                    |m| m.loss(&inst.input, &inst.labels, lambda).unwrap(),
                );
                out.push((seed, lambda, err, name));
            }
        }
        out
    }

    /// `(seed, worst relative error, parameter)` for a small jittered
    /// generator on one teacher-forced instance per seed.
    pub fn generator_gradcheck(seeds: &[u64]) -> Vec<(u64, f64, String)> {
        let (pairs, vocab) = corpus();
        let arch = GeneratorArch {
            dim: 8,
            layers: 2,
            heads: 2,
            ff_dim: 12,
            max_len: 72,
            max_context_len: 48,
        };
        let instances = generator_instances(&pairs, &vocab, &arch, None).unwrap();
        let mut out = Vec::new();
        for (i, &seed) in seeds.iter().enumerate() {
            let mut model = GeneratorModel::new(arch, &vocab, seed).unwrap();
            jitter(&mut model.params, seed + 200, 0.1);
            let inst = &instances[i % instances.len()];
            let (_, grads) = model.loss_and_grads(&inst.context, &inst.target).unwrap();
            let (err, name) = gradcheck(
                &mut model,
                &grads,
                |m| &mut m.params,
                |m| m.generation_loss(&inst.context, &inst.target).unwrap(),
            );
            out.push((seed, err, name));
        }
        out
    }
}
