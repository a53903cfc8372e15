//! Customize stage: a left-to-right language model that fills a skeleton
//! under a condition.

pub mod sampler;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{augment_all, AugmentConfig, Variant, DEFAULT_REPLACE_RATIO};
use crate::checkpoint::{restore_params, Checkpoint};
use crate::corpus::{BasicTokenizer, FormattedInput, InputFormatter, Section, Side, StoryPair, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::nn::transformer::linear;
use crate::nn::{softmax_rows, Encoder, EncoderConfig, Mat, ParamId, ParamSet, Tape, Target, Var};
use crate::seed::{derive_seed, rng};
use crate::skeleton::{build_skeleton, pair_labels, LabelSeq, Skeleton, SkeletonSource};
use crate::tagger::TaggerModel;
use crate::train::{fit, Schedule};

pub use sampler::{argmax, sample_top_k, top_k_distribution, top_k_indices, SamplerConfig};

const KIND: &str = "generator";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorArch {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Positions available for context plus generated ending.
    pub max_len: usize,
    /// Longest context (`[PRE] … [END]`); the rest is room for the ending.
    pub max_context_len: usize,
}

impl Default for GeneratorArch {
    fn default() -> Self {
        GeneratorArch {
            dim: 64,
            layers: 2,
            heads: 4,
            ff_dim: 256,
            max_len: 300,
            max_context_len: 240,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Train on blank/replace/shuffle variants of every skeleton as well.
    pub augment: bool,
    pub replace_ratio: f64,
}

impl Default for GeneratorTrainConfig {
    fn default() -> Self {
        GeneratorTrainConfig {
            learning_rate: 1.5e-4,
            warmup_steps: 2000,
            batch_size: 8,
            epochs: 10,
            seed: 42,
            augment: true,
            replace_ratio: DEFAULT_REPLACE_RATIO,
        }
    }
}

impl GeneratorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Invalid("batch_size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Invalid("learning_rate must be positive".into()));
        }
        AugmentConfig::new(self.replace_ratio, self.seed).map(|_| ())
    }

    /// Augmentation settings used for training with this config.
    pub fn augment_config(&self) -> Result<AugmentConfig> {
        AugmentConfig::new(self.replace_ratio, derive_seed(self.seed, &["augment"]))
    }
}

#[derive(Debug, Clone)]
struct GeneratorNet {
    encoder: Encoder,
    out: (ParamId, ParamId),
}

impl GeneratorNet {
    /// Next-token logits for positions `from..` of `ids`.
    fn logits<'p>(&self, t: &mut Tape<'p>, seq: &FormattedInput, from: usize) -> Var {
        let h = self.encoder.forward(t, &seq.ids, &seq.segment_ids());
        let h = if from > 0 { t.rows_from(h, from) } else { h };
        linear(t, h, self.out)
    }

    fn loss(&self, params: &ParamSet, context: &FormattedInput, target: &[TokenId], grads: Option<&mut [Mat]>) -> f64 {
        let seq = teacher_forced(context, target);
        let mut t = Tape::new(params);
        let logits = self.logits(&mut t, &seq, context.len() - 1);
        let targets = target
            .iter()
            .enumerate()
            .map(|(row, &id)| Target {
                row,
                class: id as usize,
                weight: 1.0,
            })
            .collect();
        let loss = t.weighted_nll(logits, targets);
        if let Some(g) = grads {
            t.backward(loss, g);
        }
        t.scalar(loss)
    }
}

/// `context ++ target[..m-1]`; the position before each target token
/// predicts it.
fn teacher_forced(context: &FormattedInput, target: &[TokenId]) -> FormattedInput {
    let mut seq = context.clone();
    seq.ids.extend_from_slice(&target[..target.len() - 1]);
    seq
}

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub arch: GeneratorArch,
    net: GeneratorNet,
    pub params: ParamSet,
    pub vocab_hash: String,
}

impl GeneratorModel {
    pub fn new(arch: GeneratorArch, vocab: &Vocab, seed: u64) -> Result<Self> {
        if arch.max_context_len >= arch.max_len {
            return Err(Error::Invalid("max_context_len must be below max_len".into()));
        }
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            dim: arch.dim,
            layers: arch.layers,
            heads: arch.heads,
            ff_dim: arch.ff_dim,
            max_len: arch.max_len,
            segments: Section::COUNT,
            causal: true,
        };
        cfg.validate().map_err(Error::Invalid)?;
        let mut params = ParamSet::new();
        let mut r = rng(derive_seed(seed, &["generator-init"]));
        let encoder = Encoder::new(cfg, &mut params, "dec", &mut r);
        let w = crate::nn::init::normal(&mut r, arch.dim, vocab.len(), (1.0 / arch.dim as f64).sqrt());
        let out = (params.add("out.w", w), params.add("out.b", Mat::zeros((1, vocab.len()))));
        Ok(GeneratorModel {
            arch,
            net: GeneratorNet { encoder, out },
            params,
            vocab_hash: vocab.hash(),
        })
    }

    pub fn formatter<'a>(&self, vocab: &'a Vocab) -> InputFormatter<'a> {
        InputFormatter::new(vocab, self.arch.max_context_len)
    }

    /// Sum over target tokens of `-ln p(token | prefix)`. `target` should end
    /// with `[EOE]`.
    pub fn generation_loss(&self, context: &FormattedInput, target: &[TokenId]) -> Result<f64> {
        self.check_instance(context, target)?;
        Ok(self.net.loss(&self.params, context, target, None))
    }

    pub fn loss_and_grads(&self, context: &FormattedInput, target: &[TokenId]) -> Result<(f64, Vec<Mat>)> {
        self.check_instance(context, target)?;
        let mut grads = self.params.zero_grads();
        let loss = self.net.loss(&self.params, context, target, Some(&mut grads));
        Ok((loss, grads))
    }

    fn check_instance(&self, context: &FormattedInput, target: &[TokenId]) -> Result<()> {
        if target.is_empty() {
            return Err(Error::Empty("generation target"));
        }
        if context.is_empty() {
            return Err(Error::Empty("generation context"));
        }
        let len = context.len() + target.len() - 1;
        if len > self.arch.max_len {
            return Err(Error::TooLong {
                len,
                max: self.arch.max_len,
            });
        }
        let v = self.params.get(self.net.out.1).ncols();
        if let Some(&bad) = target.iter().chain(&context.ids).find(|&&id| id as usize >= v) {
            return Err(Error::Invalid(format!("token id {bad} outside the vocabulary")));
        }
        Ok(())
    }

    /// Output projection (`dim × |V|`) and bias (`1 × |V|`).
    pub fn output_layer_mut(&mut self) -> (&mut Mat, &mut Mat) {
        let (w, b) = self.net.out;
        let (lo, hi) = self.params.values.split_at_mut(b.0);
        (&mut lo[w.0], &mut hi[0])
    }

    /// Unmasked next-token distributions for every position of `seq`
    /// (`len × |V|`); row `i` only sees positions `..=i`.
    pub fn token_distributions(&self, seq: &FormattedInput) -> Mat {
        let mut t = Tape::new(&self.params);
        let logits = self.net.logits(&mut t, seq, 0);
        softmax_rows(t.value(logits), false)
    }

    /// Next-token distribution after `seq`, with reserved tokens other than
    /// `[EOE]` removed and the rest renormalized.
    pub fn next_token_distribution(&self, seq: &FormattedInput) -> Vec<f64> {
        let mut t = Tape::new(&self.params);
        let logits = self.net.logits(&mut t, seq, seq.len() - 1);
        let mut p = softmax_rows(t.value(logits), false).row(0).to_vec();
        for (id, v) in p.iter_mut().enumerate() {
            let id = id as TokenId;
            if Vocab::is_reserved(id) && id != Vocab::EOE {
                *v = 0.0;
            }
        }
        let z: f64 = p.iter().sum();
        if z > 0.0 {
            p.iter_mut().for_each(|v| *v /= z);
        }
        p
    }

    /// Samples an ending after `context` until `[EOE]`, the length cap or the
    /// position limit. The result excludes `[EOE]`.
    pub fn generate<R: rand::Rng + ?Sized>(
        &self,
        context: &FormattedInput,
        cfg: &SamplerConfig,
        rng: &mut R,
    ) -> Result<Vec<TokenId>> {
        cfg.validate()?;
        if context.is_empty() || context.len() >= self.arch.max_len {
            return Err(Error::TooLong {
                len: context.len(),
                max: self.arch.max_len - 1,
            });
        }
        let mut seq = context.clone();
        let mut out = Vec::new();
        while out.len() < cfg.max_ending_length && seq.len() < self.arch.max_len {
            let p = self.next_token_distribution(&seq);
            let id = sample_top_k(&p, cfg.k, cfg.temperature, rng)? as TokenId;
            if id == Vocab::EOE {
                break;
            }
            out.push(id);
            seq.ids.push(id);
        }
        Ok(out)
    }

    /// Fills `skeleton` for the counterfactual side of `pair`. Randomness is
    /// seeded from `(cfg.seed, pair.id)`.
    pub fn generate_ending(
        &self,
        pair: &StoryPair,
        skeleton: &Skeleton,
        vocab: &Vocab,
        cfg: &SamplerConfig,
    ) -> Result<Vec<String>> {
        self.check_vocab(vocab)?;
        let context = self.formatter(vocab).customize(pair, Side::Counterfactual, skeleton)?;
        let mut r = rng(derive_seed(cfg.seed, &[&pair.id]));
        let ids = self.generate(&context, cfg, &mut r)?;
        Ok(vocab.decode(&ids))
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        let found = vocab.hash();
        if found != self.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: self.vocab_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, train: &GeneratorTrainConfig, provenance: Option<(&str, u64)>) -> Result<()> {
        let mut ck = Checkpoint::new(KIND, self.vocab_hash.clone(), self.arch, *train, self.params.clone());
        ck.config_hash = provenance.map(|p| p.0.to_string());
        ck.seed = provenance.map(|p| p.1);
        ck.save(path)
    }

    pub fn load(path: &Path, vocab: &Vocab) -> Result<(Self, Checkpoint<GeneratorArch, GeneratorTrainConfig>)> {
        let ck: Checkpoint<GeneratorArch, GeneratorTrainConfig> = Checkpoint::load(path, KIND)?;
        if ck.vocab_hash != vocab.hash() {
            return Err(Error::VocabMismatch {
                expected: ck.vocab_hash.clone(),
                found: vocab.hash(),
            });
        }
        let mut model = GeneratorModel::new(ck.arch, vocab, 0)?;
        restore_params(&mut model.params, ck.params.clone())?;
        Ok((model, ck))
    }
}

/// Output of the full two-stage rewrite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rewrite {
    pub story_id: String,
    pub skeleton: Skeleton,
    pub ending: Vec<String>,
}

/// Sketch with `tagger`, then customize with `generator`.
pub fn rewrite(
    tagger: &TaggerModel,
    generator: &GeneratorModel,
    pair: &StoryPair,
    vocab: &Vocab,
    cfg: &SamplerConfig,
) -> Result<Rewrite> {
    let skeleton = tagger.predict_skeleton(pair, vocab)?;
    let ending = generator.generate_ending(pair, &skeleton, vocab, cfg)?;
    Ok(Rewrite {
        story_id: pair.id.clone(),
        skeleton,
        ending,
    })
}

/// One customize-stage training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInstance {
    pub story_id: String,
    pub side: Side,
    pub variant: Option<Variant>,
    pub context: FormattedInput,
    /// Ending ids followed by `[EOE]`.
    pub target: Vec<TokenId>,
}

/// Builds training examples from both sides of every pair. The skeleton for
/// a target ending comes from the other ending, which is what the sketch
/// stage provides at inference time. With `augment`, each skeleton also
/// appears in its blank, replace and shuffle variants. Targets are cut at the
/// tail to respect `arch.max_len`.
pub fn generator_instances(
    pairs: &[StoryPair],
    vocab: &Vocab,
    arch: &GeneratorArch,
    augment: Option<&AugmentConfig>,
) -> Result<Vec<GeneratorInstance>> {
    let labels = pairs.iter().map(pair_labels).collect::<Result<Vec<_>>>()?;
    generator_instances_with_labels(pairs, &labels, vocab, arch, augment)
}

/// Like [`generator_instances`] with precomputed `(original, counterfactual)`
/// labels per pair.
pub fn generator_instances_with_labels(
    pairs: &[StoryPair],
    labels: &[(LabelSeq, LabelSeq)],
    vocab: &Vocab,
    arch: &GeneratorArch,
    augment: Option<&AugmentConfig>,
) -> Result<Vec<GeneratorInstance>> {
    if pairs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "pairs vs label records",
            left: pairs.len(),
            right: labels.len(),
        });
    }
    let fmt = InputFormatter::new(vocab, arch.max_context_len);
    let mut out = Vec::new();
    for (pair, (l, l2)) in pairs.iter().zip(labels) {
        let e = pair
            .ending_tokens(Side::Original, &BasicTokenizer)
            .expect("original ending always present");
        let e2 = pair.ending_tokens(Side::Counterfactual, &BasicTokenizer).ok_or_else(|| {
            Error::Invalid(format!("{}: no counterfactual ending to train on", pair.id))
        })?;
        let from_original = build_skeleton(&e, l, SkeletonSource::Lcs)?;
        let from_counterfactual = build_skeleton(&e2, l2, SkeletonSource::Lcs)?;
        for (side, skeleton, target) in [
            (Side::Counterfactual, from_original, &e2),
            (Side::Original, from_counterfactual, &e),
        ] {
            let mut skeletons = vec![(None, skeleton.clone())];
            if let Some(cfg) = augment {
                for (v, k) in augment_all(&skeleton, cfg, vocab, &augment_key(&pair.id, side))? {
                    skeletons.push((Some(v), k));
                }
            }
            let mut ids = vocab.encode(target);
            ids.push(Vocab::EOE);
            for (variant, k) in skeletons {
                let context = fmt.customize(pair, side, &k)?;
                let room = arch.max_len + 1 - context.len();
                let mut target = ids.clone();
                if target.len() > room {
                    log::warn!("{}: target truncated from {} to {room} tokens", pair.id, target.len());
                    target.truncate(room);
                }
                out.push(GeneratorInstance {
                    story_id: pair.id.clone(),
                    side,
                    variant,
                    context,
                    target,
                });
            }
        }
    }
    Ok(out)
}

/// Seed label for the augmented variants of the skeleton used to generate
/// the `target_side` ending of story `id`.
pub fn augment_key(id: &str, target_side: Side) -> String {
    format!("{id}/{}", side_key(target_side))
}

fn side_key(side: Side) -> &'static str {
    match side {
        Side::Original => "original",
        Side::Counterfactual => "counterfactual",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean per-token negative log-likelihood on the dev instances.
    pub dev_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub epochs: Vec<GeneratorEpoch>,
    pub best_epoch: usize,
    pub instances_per_epoch: usize,
}

/// Mean per-token loss over `instances`.
pub fn dev_token_loss(model: &GeneratorModel, instances: &[GeneratorInstance]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for inst in instances {
        total += model.generation_loss(&inst.context, &inst.target)?;
        tokens += inst.target.len();
    }
    if tokens == 0 {
        return Err(Error::Empty("dev set"));
    }
    Ok(total / tokens as f64)
}

/// Trains on `pairs` (augmented if configured) and keeps the epoch with the
/// lowest dev token loss when `dev` is non-empty. Dev instances use LCS
/// skeletons only.
pub fn train_generator(
    pairs: &[StoryPair],
    dev: &[StoryPair],
    vocab: &Vocab,
    arch: GeneratorArch,
    cfg: &GeneratorTrainConfig,
) -> Result<(GeneratorModel, GeneratorReport)> {
    cfg.validate()?;
    let aug = cfg.augment_config()?;
    let train = generator_instances(pairs, vocab, &arch, cfg.augment.then_some(&aug))?;
    let dev = generator_instances(dev, vocab, &arch, None)?;
    train_generator_instances(&train, &dev, vocab, arch, cfg)
}

pub fn train_generator_instances(
    train: &[GeneratorInstance],
    dev: &[GeneratorInstance],
    vocab: &Vocab,
    arch: GeneratorArch,
    cfg: &GeneratorTrainConfig,
) -> Result<(GeneratorModel, GeneratorReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut model = GeneratorModel::new(arch, vocab, cfg.seed)?;
    for inst in train.iter().chain(dev) {
        model.check_instance(&inst.context, &inst.target)?;
    }
    let mut params = std::mem::take(&mut model.params);
    let net = model.net.clone();
    let schedule = Schedule {
        learning_rate: cfg.learning_rate,
        warmup_steps: cfg.warmup_steps,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        seed: cfg.seed,
    };
    let mut dev_log = Vec::new();
    let report = fit(
        &mut params,
        train.len(),
        &schedule,
        |p, i, g| net.loss(p, &train[i].context, &train[i].target, Some(g)),
        |p, _| {
            if dev.is_empty() {
                dev_log.push(None);
                return None;
            }
            let mut total = 0.0;
            let mut tokens = 0;
            for inst in dev {
                total += net.loss(p, &inst.context, &inst.target, None);
                tokens += inst.target.len();
            }
            let l = total / tokens as f64;
            dev_log.push(Some(l));
            Some(-l)
        },
    );
    model.params = params;
    let report = GeneratorReport {
        epochs: report
            .epochs
            .iter()
            .zip(dev_log)
            .map(|(e, dev_loss)| GeneratorEpoch {
                epoch: e.epoch,
                train_loss: e.train_loss,
                dev_loss,
            })
            .collect(),
        best_epoch: report.best_epoch,
        instances_per_epoch: report.instances_per_epoch,
    };
    Ok((model, report))
}
