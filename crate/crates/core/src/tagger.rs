//! Sketch stage: per-token causal/background labeling of the ending.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{restore_params, Checkpoint};
use crate::corpus::{
    ending_tokens, BasicTokenizer, FormattedInput, InputFormatter, Section, Side, StoryPair, Vocab,
};
use crate::error::{Error, Result};
use crate::eval::{label_metrics, LabelMetrics};
use crate::nn::{softmax_rows, Encoder, EncoderConfig, Mat, ParamId, ParamSet, Tape, Target, PROB_EPS};
use crate::seed::{derive_seed, rng};
use crate::skeleton::{build_skeleton, pair_labels, Label, LabelSeq, Skeleton, SkeletonSource};
use crate::train::{fit, FitReport, Schedule};

pub const DEFAULT_LAMBDA: f64 = 0.8;
const KIND: &str = "tagger";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggerArch {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
}

impl Default for TaggerArch {
    fn default() -> Self {
        TaggerArch {
            dim: 64,
            layers: 2,
            heads: 4,
            ff_dim: 256,
            max_len: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggerTrainConfig {
    /// Weight of causal tokens in the loss; background tokens get `1 - lambda`.
    pub lambda: f64,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub max_sequence_length: usize,
}

impl Default for TaggerTrainConfig {
    fn default() -> Self {
        TaggerTrainConfig {
            lambda: DEFAULT_LAMBDA,
            learning_rate: 5e-5,
            warmup_steps: 2000,
            batch_size: 8,
            epochs: 5,
            seed: 42,
            max_sequence_length: 300,
        }
    }
}

impl TaggerTrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Invalid("batch_size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Invalid("learning_rate must be positive".into()));
        }
        Ok(())
    }

    fn schedule(&self) -> Schedule {
        Schedule {
            learning_rate: self.learning_rate,
            warmup_steps: self.warmup_steps,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("lambda must lie in (0, 1), got {lambda}")))
    }
}

/// Parameter layout of the tagger: a bidirectional encoder plus a 2-way
/// linear head applied to ending positions.
#[derive(Debug, Clone)]
struct TaggerNet {
    encoder: Encoder,
    head: (ParamId, ParamId),
}

impl TaggerNet {
    fn hidden<'p>(&self, t: &mut Tape<'p>, input: &FormattedInput) -> crate::nn::Var {
        self.encoder.forward(t, &input.ids, &input.segment_ids())
    }

    /// Logits for rows `start..` of the sequence.
    fn logits_from<'p>(&self, t: &mut Tape<'p>, input: &FormattedInput, start: usize) -> crate::nn::Var {
        let h = self.hidden(t, input);
        let h = if start > 0 { t.rows_from(h, start) } else { h };
        crate::nn::transformer::linear(t, h, self.head)
    }

    fn loss(
        &self,
        params: &ParamSet,
        input: &FormattedInput,
        gold: &[Label],
        lambda: f64,
        grads: Option<&mut [Mat]>,
    ) -> f64 {
        let mut t = Tape::new(params);
        let logits = self.logits_from(&mut t, input, input.ending_start);
        let loss = t.weighted_nll(logits, weighted_targets(gold, lambda));
        if let Some(g) = grads {
            t.backward(loss, g);
        }
        t.scalar(loss)
    }
}

fn weighted_targets(gold: &[Label], lambda: f64) -> Vec<Target> {
    gold.iter()
        .enumerate()
        .map(|(row, &label)| Target {
            row,
            class: label.index(),
            weight: match label {
                Label::Causal => lambda,
                Label::Background => 1.0 - lambda,
            },
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TaggerModel {
    pub arch: TaggerArch,
    net: TaggerNet,
    pub params: ParamSet,
    pub vocab_hash: String,
}

impl TaggerModel {
    pub fn new(arch: TaggerArch, vocab: &Vocab, seed: u64) -> Result<Self> {
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            dim: arch.dim,
            layers: arch.layers,
            heads: arch.heads,
            ff_dim: arch.ff_dim,
            max_len: arch.max_len,
            segments: Section::COUNT,
            causal: false,
        };
        cfg.validate().map_err(Error::Invalid)?;
        let mut params = ParamSet::new();
        let mut r = rng(derive_seed(seed, &["tagger-init"]));
        let encoder = Encoder::new(cfg, &mut params, "enc", &mut r);
        let w = crate::nn::init::normal(&mut r, arch.dim, 2, (1.0 / arch.dim as f64).sqrt());
        let head = (params.add("head.w", w), params.add("head.b", Mat::zeros((1, 2))));
        Ok(TaggerModel {
            arch,
            net: TaggerNet { encoder, head },
            params,
            vocab_hash: vocab.hash(),
        })
    }

    /// Head weights `W` (`dim × 2`) and bias `b` (`1 × 2`).
    pub fn head_mut(&mut self) -> (&mut Mat, &mut Mat) {
        let (w, b) = self.net.head;
        let (lo, hi) = self.params.values.split_at_mut(b.0);
        (&mut lo[w.0], &mut hi[0])
    }

    /// Logits for every position of `input` (`len × 2`).
    pub fn logits(&self, input: &FormattedInput) -> Mat {
        let mut t = Tape::new(&self.params);
        let v = self.net.logits_from(&mut t, input, 0);
        t.value(v).to_owned()
    }

    /// Label probabilities `[p(causal), p(background)]` for each ending token.
    pub fn label_distribution(&self, input: &FormattedInput) -> Result<Vec<[f64; 2]>> {
        if input.ending_len() == 0 {
            return Err(Error::Empty("ending span"));
        }
        let mut t = Tape::new(&self.params);
        let v = self.net.logits_from(&mut t, input, input.ending_start);
        let probs = softmax_rows(t.value(v), false);
        Ok(probs.rows().into_iter().map(|r| [r[0], r[1]]).collect())
    }

    pub fn predict_labels(&self, input: &FormattedInput) -> Result<LabelSeq> {
        Ok(labels_from_probs(&self.label_distribution(input)?))
    }

    /// Labels the original ending and blanks out the predicted causal tokens.
    /// Ending tokens cut off by the length limit are kept as background.
    pub fn predict_skeleton(&self, pair: &StoryPair, vocab: &Vocab) -> Result<Skeleton> {
        self.check_vocab(vocab)?;
        let fmt = InputFormatter::new(vocab, self.arch.max_len);
        let input = fmt.sketch(pair, Side::Original)?;
        let mut labels = self.predict_labels(&input)?;
        let tokens = ending_tokens(&pair.story.ending, &BasicTokenizer);
        labels.resize(tokens.len(), Label::Background);
        build_skeleton(&tokens, &labels, SkeletonSource::Predicted)
    }

    /// Weighted loss of one instance under the current parameters.
    pub fn loss(&self, input: &FormattedInput, gold: &[Label], lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        check_gold(input, gold)?;
        Ok(self.net.loss(&self.params, input, gold, lambda, None))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grads(
        &self,
        input: &FormattedInput,
        gold: &[Label],
        lambda: f64,
    ) -> Result<(f64, Vec<Mat>)> {
        check_lambda(lambda)?;
        check_gold(input, gold)?;
        let mut grads = self.params.zero_grads();
        let loss = self.net.loss(&self.params, input, gold, lambda, Some(&mut grads));
        Ok((loss, grads))
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

    pub fn save(&self, path: &Path, train: &TaggerTrainConfig, provenance: Option<(&str, u64)>) -> Result<()> {
        let mut ck = Checkpoint::new(KIND, self.vocab_hash.clone(), self.arch, *train, self.params.clone());
        ck.config_hash = provenance.map(|p| p.0.to_string());
        ck.seed = provenance.map(|p| p.1);
        ck.save(path)
    }

    pub fn load(path: &Path, vocab: &Vocab) -> Result<(Self, Checkpoint<TaggerArch, TaggerTrainConfig>)> {
        let ck: Checkpoint<TaggerArch, TaggerTrainConfig> = Checkpoint::load(path, KIND)?;
        if ck.vocab_hash != vocab.hash() {
            return Err(Error::VocabMismatch {
                expected: ck.vocab_hash.clone(),
                found: vocab.hash(),
            });
        }
        let mut model = TaggerModel::new(ck.arch, vocab, 0)?;
        restore_params(&mut model.params, ck.params.clone())?;
        Ok((model, ck))
    }
}

fn check_gold(input: &FormattedInput, gold: &[Label]) -> Result<()> {
    if input.ending_len() != gold.len() {
        return Err(Error::LengthMismatch {
            what: "ending span vs gold labels",
            left: input.ending_len(),
            right: gold.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::Empty("ending span"));
    }
    Ok(())
}

/// Per-token argmax; exact ties go to causal.
pub fn labels_from_probs(probs: &[[f64; 2]]) -> LabelSeq {
    probs
        .iter()
        .map(|p| if p[0] >= p[1] { Label::Causal } else { Label::Background })
        .collect()
}

/// Labels from full-sequence logits (`len × 2`); rows before `ending_start`
/// are ignored.
pub fn labels_from_logits(logits: &Mat, ending_start: usize) -> LabelSeq {
    let tail = logits.slice(ndarray::s![ending_start.., ..]);
    let probs = softmax_rows(tail, false);
    labels_from_probs(&probs.rows().into_iter().map(|r| [r[0], r[1]]).collect::<Vec<_>>())
}

/// `-Σ [λ·1{gold=causal}·ln p(causal) + (1-λ)·1{gold=background}·ln p(background)]`.
/// Probabilities are floored at `1e-12` before the log.
pub fn weighted_ce_loss(probs: &[[f64; 2]], gold: &[Label], lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if probs.len() != gold.len() {
        return Err(Error::LengthMismatch {
            what: "probabilities vs gold labels",
            left: probs.len(),
            right: gold.len(),
        });
    }
    let mut loss = 0.0;
    for (p, &g) in probs.iter().zip(gold) {
        let prob = p[g.index()];
        if prob < PROB_EPS {
            warn!("gold label probability {prob:e} clamped to {PROB_EPS:e}");
        }
        let w = match g {
            Label::Causal => lambda,
            Label::Background => 1.0 - lambda,
        };
        loss -= w * prob.max(PROB_EPS).ln();
    }
    Ok(loss)
}

/// One labeled sketch-stage input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerInstance {
    pub story_id: String,
    pub side: Side,
    pub input: FormattedInput,
    pub labels: LabelSeq,
}

/// Two instances per pair: the original side and the swapped counterfactual
/// side, each labeled by the LCS of the two endings.
pub fn tagger_instances(pairs: &[StoryPair], vocab: &Vocab, max_len: usize) -> Result<Vec<TaggerInstance>> {
    let labels = pairs.iter().map(pair_labels).collect::<Result<Vec<_>>>()?;
    tagger_instances_with_labels(pairs, &labels, vocab, max_len)
}

/// Like [`tagger_instances`] with precomputed `(original, counterfactual)`
/// labels per pair.
pub fn tagger_instances_with_labels(
    pairs: &[StoryPair],
    labels: &[(LabelSeq, LabelSeq)],
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<TaggerInstance>> {
    if pairs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "pairs vs label records",
            left: pairs.len(),
            right: labels.len(),
        });
    }
    let fmt = InputFormatter::new(vocab, max_len);
    let mut out = Vec::with_capacity(pairs.len() * 2);
    for (pair, (l, l2)) in pairs.iter().zip(labels) {
        out.push(labeled_instance(&fmt, pair, Side::Original, l.clone())?);
        out.push(labeled_instance(&fmt, pair, Side::Counterfactual, l2.clone())?);
    }
    Ok(out)
}

/// Formats one side of `pair` and attaches `labels`, cut to the kept ending.
pub fn labeled_instance(
    fmt: &InputFormatter,
    pair: &StoryPair,
    side: Side,
    mut labels: LabelSeq,
) -> Result<TaggerInstance> {
    let input = fmt.sketch(pair, side)?;
    labels.truncate(input.ending_len());
    check_gold(&input, &labels)?;
    Ok(TaggerInstance {
        story_id: pair.id.clone(),
        side,
        input,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Option<LabelMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerReport {
    pub epochs: Vec<TaggerEpoch>,
    pub best_epoch: usize,
    pub instances_per_epoch: usize,
}

/// Label metrics of `model` over labeled instances.
pub fn evaluate_tagger(model: &TaggerModel, instances: &[TaggerInstance]) -> Result<LabelMetrics> {
    let mut predicted = Vec::with_capacity(instances.len());
    let mut gold = Vec::with_capacity(instances.len());
    for inst in instances {
        predicted.push(model.predict_labels(&inst.input)?);
        gold.push(inst.labels.clone());
    }
    label_metrics(&predicted, &gold)
}

/// Trains on both sides of every pair; selects the epoch with the best dev
/// causal F1 when `dev` is non-empty.
pub fn train_tagger(
    pairs: &[StoryPair],
    dev: &[StoryPair],
    vocab: &Vocab,
    arch: TaggerArch,
    cfg: &TaggerTrainConfig,
) -> Result<(TaggerModel, TaggerReport)> {
    let train = tagger_instances(pairs, vocab, cfg.max_sequence_length.min(arch.max_len))?;
    let dev = tagger_instances(dev, vocab, cfg.max_sequence_length.min(arch.max_len))?;
    train_tagger_instances(&train, &dev, vocab, arch, cfg)
}

pub fn train_tagger_instances(
    train: &[TaggerInstance],
    dev: &[TaggerInstance],
    vocab: &Vocab,
    arch: TaggerArch,
    cfg: &TaggerTrainConfig,
) -> Result<(TaggerModel, TaggerReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    for inst in train.iter().chain(dev) {
        check_gold(&inst.input, &inst.labels)?;
        if inst.input.len() > arch.max_len {
            return Err(Error::TooLong {
                len: inst.input.len(),
                max: arch.max_len,
            });
        }
    }
    let mut model = TaggerModel::new(arch, vocab, cfg.seed)?;
    let mut params = std::mem::take(&mut model.params);
    let net = model.net.clone();
    let mut dev_log: Vec<Option<LabelMetrics>> = Vec::new();
    let mut eval_error: Option<Error> = None;

    let fit_report: FitReport = fit(
        &mut params,
        train.len(),
        &cfg.schedule(),
        |p, i, g| net.loss(p, &train[i].input, &train[i].labels, cfg.lambda, Some(g)),
        |p, _epoch| {
            if dev.is_empty() {
                dev_log.push(None);
                return None;
            }
            let snapshot = TaggerModel {
                arch,
                net: net.clone(),
                params: p.clone(),
                vocab_hash: String::new(),
            };
            match evaluate_tagger(&snapshot, dev) {
                Ok(m) => {
                    dev_log.push(Some(m));
                    Some(m.cf1)
                }
                Err(e) => {
                    eval_error.get_or_insert(e);
                    dev_log.push(None);
                    None
                }
            }
        },
    );
    if let Some(e) = eval_error {
        return Err(e);
    }
    model.params = params;
    let report = TaggerReport {
        epochs: fit_report
            .epochs
            .iter()
            .zip(dev_log)
            .map(|(e, dev)| TaggerEpoch {
                epoch: e.epoch,
                train_loss: e.train_loss,
                dev,
            })
            .collect(),
        best_epoch: fit_report.best_epoch,
        instances_per_epoch: fit_report.instances_per_epoch,
    };
    Ok((model, report))
}
