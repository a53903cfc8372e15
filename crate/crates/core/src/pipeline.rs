//! Command implementations behind the CLI.
//!
//! Each config owns a run directory named after its hash. Every file written
//! there records the config hash and global seed; JSONL files carry them in
//! a header line. Commands that read an artifact check the hash against the
//! current config before using it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_all, AugmentedRecord};
use crate::config::PipelineConfig;
use crate::corpus::{
    build_vocab, detokenize, ending_tokens, load_dataset, tokenize, BasicTokenizer, InputFormatter, Side, Split,
    StoryPair, Vocab,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_human, make_annotation_sheets, paired_t_test, read_sheet, rouge_l, rouge_l_max, skeleton_coverage,
    AnnotationSheets, HumanMeans, HumanScoreSheet, LabelMetrics, RougeL, SheetItem, SheetMapping, TTest,
};
use crate::generator::{
    augment_key, generator_instances_with_labels, rewrite, train_generator_instances, GeneratorEpoch, GeneratorModel,
    GeneratorReport, SamplerConfig,
};
use crate::seed::derive_seed;
use crate::skeleton::{build_skeleton, Label, LabelSeq, Skeleton, SkeletonRecord, SkeletonSource};
use crate::tagger::{
    evaluate_tagger, labeled_instance, tagger_instances_with_labels, train_tagger_instances, TaggerEpoch,
    TaggerModel, TaggerReport,
};

pub const ARTIFACT_VERSION: u32 = 1;

/// Artifact file names inside a run directory.
pub mod files {
    use crate::corpus::Split;

    pub const CONFIG: &str = "config.toml";
    pub const VOCAB: &str = "vocab.json";
    pub const PREPARE: &str = "prepare.json";
    pub const AUGMENTED: &str = "augmented.train.jsonl";
    pub const TAGGER: &str = "tagger.ckpt.json";
    pub const TAGGER_LOG: &str = "tagger.metrics.jsonl";
    pub const GENERATOR: &str = "generator.ckpt.json";
    pub const GENERATOR_LOG: &str = "generator.metrics.jsonl";
    pub const SKETCH_EVAL: &str = "eval-sketch.json";
    pub const SKETCH_EVAL_TXT: &str = "eval-sketch.txt";
    pub const REPORT: &str = "report.json";
    pub const REPORT_TXT: &str = "report.txt";
    pub const REPORT_ITEMS: &str = "report.items.jsonl";
    pub const SHEETS_DIR: &str = "sheets";

    pub fn skeletons(split: Split) -> String {
        format!("skeletons.{}.jsonl", split.as_str())
    }

    pub fn generations(method: &str) -> String {
        format!("generations-{method}.jsonl")
    }
}

const FMT_SKELETONS: &str = "storyrewrite.skeletons";
const FMT_AUGMENTED: &str = "storyrewrite.augmented";
const FMT_TAGGER_LOG: &str = "storyrewrite.tagger-log";
const FMT_GENERATOR_LOG: &str = "storyrewrite.generator-log";
pub const FMT_GENERATIONS: &str = "storyrewrite.generations";
const FMT_REPORT_ITEMS: &str = "storyrewrite.report-items";

/// First line of every JSONL artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
}

pub fn write_jsonl<T: Serialize>(path: &Path, header: &ArtifactHeader, rows: &[T]) -> Result<()> {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, format: &str) -> Result<(ArtifactHeader, Vec<T>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, message: String| Error::Dataset {
        path: path.to_path_buf(),
        line,
        message,
    };
    let (_, first) = lines.next().ok_or_else(|| bad(1, "missing header line".into()))?;
    let header: ArtifactHeader =
        serde_json::from_str(first).map_err(|e| bad(1, format!("bad header: {e}")))?;
    if header.format != format || header.version != ARTIFACT_VERSION {
        return Err(bad(
            1,
            format!("expected {format} v{ARTIFACT_VERSION}, found {} v{}", header.format, header.version),
        ));
    }
    let rows = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(i + 1, e.to_string())))
        .collect::<Result<Vec<T>>>()?;
    Ok((header, rows))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// A validated config and its run directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: PipelineConfig,
    pub hash: String,
    pub dir: PathBuf,
}

impl Run {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        let dir = config.run_dir();
        Ok(Run { config, hash, dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn header(&self, format: &str) -> ArtifactHeader {
        ArtifactHeader {
            format: format.into(),
            version: ARTIFACT_VERSION,
            config_hash: self.hash.clone(),
            seed: self.config.seed,
        }
    }

    fn ensure_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let cfg = self.path(files::CONFIG);
        let text = format!("# config hash {}\n{}", self.hash, self.config.to_toml());
        std::fs::write(&cfg, text).map_err(|e| Error::io(&cfg, e))
    }

    fn check_hash(&self, path: &Path, found: Option<&str>) -> Result<()> {
        match found {
            Some(h) if h == self.hash => Ok(()),
            other => Err(Error::ConfigMismatch {
                path: path.to_path_buf(),
                expected: self.hash.clone(),
                found: other.unwrap_or("none").to_string(),
            }),
        }
    }

    /// Reads a JSONL artifact produced by this config.
    fn read_own<T: DeserializeOwned>(&self, name: &str, format: &str) -> Result<Vec<T>> {
        let path = self.require(&self.path(name), "artifact")?;
        let (header, rows) = read_jsonl(&path, format)?;
        self.check_hash(&path, Some(&header.config_hash))?;
        Ok(rows)
    }

    fn require(&self, path: &Path, what: &str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path.to_path_buf())
        } else {
            Err(Error::Config(format!("{what} {} does not exist", path.display())))
        }
    }

    fn split_path(&self, split: Split) -> Option<&Path> {
        match split {
            Split::Train => Some(&self.config.data.train),
            Split::Dev => self.config.data.dev.as_deref(),
            Split::Test => Some(&self.config.data.test),
        }
    }

    fn load_split(&self, split: Split) -> Result<Vec<StoryPair>> {
        let path = self
            .split_path(split)
            .ok_or_else(|| Error::Config(format!("no {} data configured", split.as_str())))?;
        load_dataset(&self.require(path, &format!("data.{}", split.as_str()))?, split)
    }

    pub fn load_vocab(&self) -> Result<Vocab> {
        let path = self.require(&self.path(files::VOCAB), "vocabulary")?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let (vocab, hash) = Vocab::from_json_with(&text)?;
        self.check_hash(&path, hash.as_deref())?;
        Ok(vocab)
    }

    /// Dataset pairs joined with their prepared label records, in dataset
    /// order. Pairs without a record (no reference ending) are left out.
    fn labeled_split(&self, split: Split) -> Result<(Vec<StoryPair>, Vec<(LabelSeq, LabelSeq)>)> {
        let pairs = self.load_split(split)?;
        let records: Vec<SkeletonRecord> = self.read_own(&files::skeletons(split), FMT_SKELETONS)?;
        let mut by_id: BTreeMap<&str, &SkeletonRecord> = BTreeMap::new();
        for r in &records {
            if by_id.insert(&r.story_id, r).is_some() {
                return Err(Error::Format(format!("duplicate record for story {}", r.story_id)));
            }
        }
        let mut kept = Vec::new();
        let mut labels = Vec::new();
        for p in pairs {
            if let Some(r) = by_id.remove(p.id.as_str()) {
                labels.push((r.labels_original.clone(), r.labels_counterfactual.clone()));
                kept.push(p);
            }
        }
        if let Some(id) = by_id.keys().next() {
            return Err(Error::Format(format!(
                "{} split has no story {id} from the prepared records; rerun prepare",
                split.as_str()
            )));
        }
        Ok((kept, labels))
    }

    fn splits(&self) -> Vec<Split> {
        let mut s = vec![Split::Train];
        if self.config.data.dev.is_some() {
            s.push(Split::Dev);
        }
        s.push(Split::Test);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitStats {
    pub pairs: usize,
    /// Pairs with a reference counterfactual ending, hence LCS labels.
    pub labeled_pairs: usize,
    /// Label counts over both endings of every labeled pair.
    pub causal_tokens: usize,
    pub background_tokens: usize,
}

impl SplitStats {
    /// Background tokens per causal token.
    pub fn background_per_causal(&self) -> Option<f64> {
        (self.causal_tokens > 0).then(|| self.background_tokens as f64 / self.causal_tokens as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub config_hash: String,
    pub seed: u64,
    pub vocab_size: usize,
    pub splits: BTreeMap<String, SplitStats>,
    pub augmented_records: usize,
}

impl PrepareReport {
    pub fn summary(&self) -> String {
        let mut out = format!("vocabulary: {} tokens\n", self.vocab_size);
        for (name, s) in &self.splits {
            let ratio = s
                .background_per_causal()
                .map(|r| format!("1:{r:.2}"))
                .unwrap_or_else(|| "n/a".into());
            out.push_str(&format!(
                "{name}: {} pairs, {} labeled, causal:background = {ratio} ({} / {} tokens)\n",
                s.pairs, s.labeled_pairs, s.causal_tokens, s.background_tokens
            ));
        }
        if self.augmented_records > 0 {
            out.push_str(&format!("augmented skeletons: {}\n", self.augmented_records));
        }
        out
    }
}

/// Builds or copies the vocabulary, writes LCS labels and skeletons for every
/// split and, when augmentation is on, the augmented training skeletons.
pub fn cmd_prepare(run: &Run) -> Result<PrepareReport> {
    let mut data = BTreeMap::new();
    for split in run.splits() {
        data.insert(split.as_str(), (split, run.load_split(split)?));
    }
    let vocab = match &run.config.data.vocab {
        Some(p) => Vocab::load(&run.require(p, "data.vocab")?)?,
        None => build_vocab(&data["train"].1, run.config.min_count)?,
    };
    run.ensure_dir()?;
    let vpath = run.path(files::VOCAB);
    std::fs::write(&vpath, vocab.to_json_with(Some((&run.hash, run.config.seed))) + "\n")
        .map_err(|e| Error::io(&vpath, e))?;

    let mut splits = BTreeMap::new();
    let mut augmented = Vec::new();
    let aug_cfg = run.config.generator_train().augment_config()?;
    for (name, (split, pairs)) in &data {
        let mut stats = SplitStats {
            pairs: pairs.len(),
            ..Default::default()
        };
        let mut records = Vec::with_capacity(pairs.len());
        for p in pairs {
            if p.reference_endings.is_empty() {
                continue;
            }
            let r = SkeletonRecord::from_pair(p)?;
            for l in r.labels_original.iter().chain(&r.labels_counterfactual) {
                match l {
                    Label::Causal => stats.causal_tokens += 1,
                    Label::Background => stats.background_tokens += 1,
                }
            }
            if *split == Split::Train && run.config.augment.enabled {
                let e = ending_tokens(&p.story.ending, &BasicTokenizer);
                let k = build_skeleton(&e, &r.labels_original, SkeletonSource::Lcs)?;
                for (variant, s) in augment_all(&k, &aug_cfg, &vocab, &augment_key(&p.id, Side::Counterfactual))? {
                    augmented.push(AugmentedRecord {
                        story_id: p.id.clone(),
                        variant,
                        skeleton_tokens: s.render(),
                    });
                }
            }
            records.push(r);
        }
        stats.labeled_pairs = records.len();
        if stats.labeled_pairs < stats.pairs {
            warn!(
                "{name}: {} pairs have no reference ending and get no labels",
                stats.pairs - stats.labeled_pairs
            );
        }
        write_jsonl(&run.path(&files::skeletons(*split)), &run.header(FMT_SKELETONS), &records)?;
        splits.insert(name.to_string(), stats);
    }
    if run.config.augment.enabled {
        write_jsonl(&run.path(files::AUGMENTED), &run.header(FMT_AUGMENTED), &augmented)?;
    }
    let report = PrepareReport {
        config_hash: run.hash.clone(),
        seed: run.config.seed,
        vocab_size: vocab.len(),
        splits,
        augmented_records: augmented.len(),
    };
    write_json(&run.path(files::PREPARE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogRow<T> {
    #[serde(flatten)]
    epoch: T,
    selected: bool,
}

fn dev_split(run: &Run) -> Result<(Vec<StoryPair>, Vec<(LabelSeq, LabelSeq)>)> {
    if run.config.data.dev.is_some() {
        run.labeled_split(Split::Dev)
    } else {
        Ok((Vec::new(), Vec::new()))
    }
}

/// Trains the tagger on both sides of every labeled training pair.
pub fn cmd_train_sketch(run: &Run) -> Result<TaggerReport> {
    let vocab = run.load_vocab()?;
    let (pairs, labels) = run.labeled_split(Split::Train)?;
    let (dev_pairs, dev_labels) = dev_split(run)?;
    let arch = run.config.tagger_arch();
    let cfg = run.config.tagger_train();
    let train = tagger_instances_with_labels(&pairs, &labels, &vocab, arch.max_len)?;
    let dev = tagger_instances_with_labels(&dev_pairs, &dev_labels, &vocab, arch.max_len)?;
    info!("sketch stage: {} training instances from {} pairs", train.len(), pairs.len());
    let (model, report) = train_tagger_instances(&train, &dev, &vocab, arch, &cfg)?;
    model.save(&run.path(files::TAGGER), &cfg, Some((&run.hash, run.config.seed)))?;
    let rows: Vec<LogRow<TaggerEpoch>> = report
        .epochs
        .iter()
        .map(|e| LogRow {
            epoch: e.clone(),
            selected: e.epoch == report.best_epoch,
        })
        .collect();
    write_jsonl(&run.path(files::TAGGER_LOG), &run.header(FMT_TAGGER_LOG), &rows)?;
    Ok(report)
}

/// Trains the generator on LCS skeletons (plus augmented variants when
/// enabled) for both sides of every labeled training pair.
pub fn cmd_train_customize(run: &Run) -> Result<GeneratorReport> {
    let vocab = run.load_vocab()?;
    let (pairs, labels) = run.labeled_split(Split::Train)?;
    let (dev_pairs, dev_labels) = dev_split(run)?;
    let arch = run.config.generator_arch();
    let cfg = run.config.generator_train();
    let aug = cfg.augment_config()?;
    if cfg.augment {
        // the dump is informational, but a stale one means prepare ran under
        // a different config
        let _: Vec<AugmentedRecord> = run.read_own(files::AUGMENTED, FMT_AUGMENTED)?;
    }
    let train = generator_instances_with_labels(&pairs, &labels, &vocab, &arch, cfg.augment.then_some(&aug))?;
    let dev = generator_instances_with_labels(&dev_pairs, &dev_labels, &vocab, &arch, None)?;
    info!("customize stage: {} training instances from {} pairs", train.len(), pairs.len());
    let (model, report) = train_generator_instances(&train, &dev, &vocab, arch, &cfg)?;
    model.save(&run.path(files::GENERATOR), &cfg, Some((&run.hash, run.config.seed)))?;
    let rows: Vec<LogRow<GeneratorEpoch>> = report
        .epochs
        .iter()
        .map(|e| LogRow {
            epoch: e.clone(),
            selected: e.epoch == report.best_epoch,
        })
        .collect();
    write_jsonl(&run.path(files::GENERATOR_LOG), &run.header(FMT_GENERATOR_LOG), &rows)?;
    Ok(report)
}

fn load_tagger(run: &Run, vocab: &Vocab) -> Result<TaggerModel> {
    let path = run.require(&run.path(files::TAGGER), "tagger checkpoint")?;
    let (model, ck) = TaggerModel::load(&path, vocab)?;
    run.check_hash(&path, ck.config_hash.as_deref())?;
    Ok(model)
}

fn load_generator(run: &Run, vocab: &Vocab) -> Result<GeneratorModel> {
    let path = run.require(&run.path(files::GENERATOR), "generator checkpoint")?;
    let (model, ck) = GeneratorModel::load(&path, vocab)?;
    run.check_hash(&path, ck.config_hash.as_deref())?;
    Ok(model)
}

/// How a generations file was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Predicted skeleton, then generation.
    Sc,
    /// Gold LCS skeleton, then generation.
    Lcs,
    /// The original ending, unchanged.
    Copy,
    /// The first human-edited counterfactual ending.
    Reference,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sc, Method::Lcs, Method::Copy, Method::Reference];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sc => "sc",
            Method::Lcs => "lcs",
            Method::Copy => "copy",
            Method::Reference => "reference",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown method {s:?}; expected sc, lcs, copy or reference")))
    }
}

/// One row of a generations file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub story_id: String,
    pub method: Method,
    /// Rendered skeleton the ending was generated from, if any.
    pub skeleton: Option<Vec<String>>,
    /// Space-separated tokens.
    pub generated_ending: String,
    pub sampler_config: Option<SamplerConfig>,
}

impl GenerationRecord {
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.generated_ending)
    }

    pub fn parsed_skeleton(&self) -> Option<Skeleton> {
        self.skeleton.as_ref().map(|t| Skeleton::parse(t, SkeletonSource::Predicted))
    }
}

/// Writes one counterfactual ending per test pair.
pub fn cmd_infer(run: &Run, method: Method) -> Result<PathBuf> {
    let vocab = run.load_vocab()?;
    let pairs = run.load_split(Split::Test)?;
    let sampler = run.config.sampler_config();
    let mut rows = Vec::with_capacity(pairs.len());
    match method {
        Method::Sc => {
            let tagger = load_tagger(run, &vocab)?;
            let generator = load_generator(run, &vocab)?;
            for p in &pairs {
                let r = rewrite(&tagger, &generator, p, &vocab, &sampler)?;
                rows.push(GenerationRecord {
                    story_id: p.id.clone(),
                    method,
                    skeleton: Some(r.skeleton.render()),
                    generated_ending: detokenize(&r.ending),
                    sampler_config: Some(sampler),
                });
            }
        }
        Method::Lcs => {
            let generator = load_generator(run, &vocab)?;
            let (labeled, labels) = run.labeled_split(Split::Test)?;
            for (p, (l, _)) in labeled.iter().zip(&labels) {
                let e = ending_tokens(&p.story.ending, &BasicTokenizer);
                let k = build_skeleton(&e, l, SkeletonSource::Lcs)?;
                let ending = generator.generate_ending(p, &k, &vocab, &sampler)?;
                rows.push(GenerationRecord {
                    story_id: p.id.clone(),
                    method,
                    skeleton: Some(k.render()),
                    generated_ending: detokenize(&ending),
                    sampler_config: Some(sampler),
                });
            }
        }
        Method::Copy | Method::Reference => {
            for p in &pairs {
                let side = if method == Method::Copy { Side::Original } else { Side::Counterfactual };
                let e = p
                    .ending(side)
                    .ok_or_else(|| Error::Invalid(format!("{}: no reference ending", p.id)))?;
                rows.push(GenerationRecord {
                    story_id: p.id.clone(),
                    method,
                    skeleton: None,
                    generated_ending: detokenize(&ending_tokens(e, &BasicTokenizer)),
                    sampler_config: None,
                });
            }
        }
    }
    run.ensure_dir()?;
    let path = run.path(&files::generations(method.as_str()));
    write_jsonl(&path, &run.header(FMT_GENERATIONS), &rows)?;
    Ok(path)
}

/// Sketch-stage scores on the test split (original side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchEval {
    pub config_hash: String,
    pub seed: u64,
    pub lambda: f64,
    pub items: usize,
    pub metrics: LabelMetrics,
    /// Share of items whose predicted skeleton equals the LCS skeleton.
    pub skeleton_exact_match: f64,
}

impl SketchEval {
    pub fn table(&self) -> String {
        let m = &self.metrics;
        let f = |x: f64| format!("{x:.3}");
        table(
            &["lambda", "CP", "CR", "CF1", "BP", "BR", "BF1", "skeleton_match"],
            vec![vec![
                format!("{}", self.lambda),
                f(m.cp),
                f(m.cr),
                f(m.cf1),
                f(m.bp),
                f(m.br),
                f(m.bf1),
                f(self.skeleton_exact_match),
            ]],
        )
    }
}

pub fn cmd_eval(run: &Run) -> Result<SketchEval> {
    let vocab = run.load_vocab()?;
    let tagger = load_tagger(run, &vocab)?;
    let (pairs, labels) = run.labeled_split(Split::Test)?;
    if pairs.is_empty() {
        return Err(Error::Empty("labeled test split"));
    }
    let fmt = InputFormatter::new(&vocab, tagger.arch.max_len);
    let mut instances = Vec::with_capacity(pairs.len());
    let mut matches = 0usize;
    for (p, (l, _)) in pairs.iter().zip(&labels) {
        instances.push(labeled_instance(&fmt, p, Side::Original, l.clone())?);
        let e = ending_tokens(&p.story.ending, &BasicTokenizer);
        let gold = build_skeleton(&e, l, SkeletonSource::Lcs)?;
        if tagger.predict_skeleton(p, &vocab)?.items() == gold.items() {
            matches += 1;
        }
    }
    let metrics = evaluate_tagger(&tagger, &instances)?;
    let out = SketchEval {
        config_hash: run.hash.clone(),
        seed: run.config.seed,
        lambda: run.config.tagger.lambda,
        items: pairs.len(),
        metrics,
        skeleton_exact_match: matches as f64 / pairs.len() as f64,
    };
    write_json(&run.path(files::SKETCH_EVAL), &out)?;
    let txt = run.path(files::SKETCH_EVAL_TXT);
    std::fs::write(&txt, out.table()).map_err(|e| Error::io(&txt, e))?;
    Ok(out)
}

/// Per-item automatic scores of one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScores {
    pub run: String,
    pub story_id: String,
    pub rouge_original: RougeL,
    pub rouge_reference: RougeL,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub source_config_hash: String,
    pub items: usize,
    /// Mean ROUGE-L against the original endings.
    pub rouge_original: RougeL,
    /// Mean over items of the best ROUGE-L against any reference ending.
    pub rouge_reference: RougeL,
    /// Mean skeleton coverage, when the run recorded skeletons.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub run: String,
    pub baseline: String,
    pub metric: String,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub seed: u64,
    pub runs: Vec<RunSummary>,
    /// Paired t-tests of every run against the first one.
    pub comparisons: Vec<Comparison>,
    pub sketch: Option<SketchEval>,
}

impl Report {
    pub fn table(&self) -> String {
        let f = |x: f64| format!("{x:.4}");
        let mut out = table(
            &["run", "items", "orig_P", "orig_R", "orig_F", "ref_P", "ref_R", "ref_F", "coverage"],
            self.runs
                .iter()
                .map(|r| {
                    vec![
                        r.name.clone(),
                        r.items.to_string(),
                        f(r.rouge_original.precision),
                        f(r.rouge_original.recall),
                        f(r.rouge_original.f_measure),
                        f(r.rouge_reference.precision),
                        f(r.rouge_reference.recall),
                        f(r.rouge_reference.f_measure),
                        r.coverage.map(f).unwrap_or_else(|| "-".into()),
                    ]
                })
                .collect(),
        );
        if !self.comparisons.is_empty() {
            out.push('\n');
            out.push_str(&table(
                &["run", "baseline", "metric", "t", "p", "df"],
                self.comparisons
                    .iter()
                    .map(|c| {
                        vec![
                            c.run.clone(),
                            c.baseline.clone(),
                            c.metric.clone(),
                            format!("{:.4}", c.test.t),
                            format!("{:.4}", c.test.p_value),
                            c.test.df.to_string(),
                        ]
                    })
                    .collect(),
            ));
        }
        if let Some(s) = &self.sketch {
            out.push('\n');
            out.push_str(&s.table());
        }
        out
    }
}

/// Generation files in the run directory, named by method.
pub fn discover_generations(run: &Run) -> Result<Vec<(String, PathBuf)>> {
    let mut found = Vec::new();
    for m in Method::ALL {
        let p = run.path(&files::generations(m.as_str()));
        if p.exists() {
            found.push((m.as_str().to_string(), p));
        }
    }
    if found.is_empty() {
        return Err(Error::Config(format!("no generation files in {}", run.dir.display())));
    }
    Ok(found)
}

fn read_generations(path: &Path) -> Result<(ArtifactHeader, Vec<GenerationRecord>)> {
    read_jsonl(path, FMT_GENERATIONS)
}

/// Scores every run against the test split and writes the comparison table.
pub fn cmd_report(run: &Run, runs: &[(String, PathBuf)]) -> Result<Report> {
    let runs = if runs.is_empty() { discover_generations(run)? } else { runs.to_vec() };
    let pairs = run.load_split(Split::Test)?;
    let by_id: BTreeMap<&str, &StoryPair> = pairs.iter().map(|p| (p.id.as_str(), p)).collect();
    let expected: BTreeSet<&str> = by_id.keys().copied().collect();

    let mut summaries = Vec::new();
    let mut all_items: Vec<ItemScores> = Vec::new();
    let mut per_run: Vec<BTreeMap<String, f64>> = Vec::new();
    for (name, path) in &runs {
        let (header, rows) = read_generations(&run.require(path, "generations file")?)?;
        let got: BTreeSet<&str> = rows.iter().map(|r| r.story_id.as_str()).collect();
        if got != expected || got.len() != rows.len() {
            let missing = expected.difference(&got).count();
            let extra = got.difference(&expected).count();
            return Err(Error::Invalid(format!(
                "split mismatch: {} covers {} items ({missing} test items missing, {extra} unknown, {} duplicates)",
                path.display(),
                rows.len(),
                rows.len() - got.len()
            )));
        }
        let mut items = Vec::with_capacity(rows.len());
        for r in &rows {
            let p = by_id[r.story_id.as_str()];
            let gen = r.tokens();
            let orig = ending_tokens(&p.story.ending, &BasicTokenizer);
            let refs: Vec<Vec<String>> = p
                .reference_endings
                .iter()
                .map(|e| ending_tokens(e, &BasicTokenizer))
                .collect();
            items.push(ItemScores {
                run: name.clone(),
                story_id: r.story_id.clone(),
                rouge_original: rouge_l(&gen, &orig),
                rouge_reference: rouge_l_max(&gen, &refs),
                coverage: r.parsed_skeleton().map(|k| skeleton_coverage(&gen, &k)),
            });
        }
        items.sort_by(|a, b| a.story_id.cmp(&b.story_id));
        let n = items.len() as f64;
        let mean = |f: &dyn Fn(&ItemScores) -> RougeL| {
            let s = items.iter().map(f).fold((0.0, 0.0, 0.0), |acc, x| {
                (acc.0 + x.precision, acc.1 + x.recall, acc.2 + x.f_measure)
            });
            RougeL {
                precision: s.0 / n,
                recall: s.1 / n,
                f_measure: s.2 / n,
            }
        };
        let coverage = if items.iter().all(|i| i.coverage.is_some()) && !items.is_empty() {
            Some(items.iter().map(|i| i.coverage.unwrap_or(0.0)).sum::<f64>() / n)
        } else {
            None
        };
        summaries.push(RunSummary {
            name: name.clone(),
            source_config_hash: header.config_hash.clone(),
            items: items.len(),
            rouge_original: mean(&|i| i.rouge_original),
            rouge_reference: mean(&|i| i.rouge_reference),
            coverage,
        });
        per_run.push(items.iter().map(|i| (i.story_id.clone(), i.rouge_reference.f_measure)).collect());
        all_items.extend(items);
    }

    let mut comparisons = Vec::new();
    if expected.len() >= 2 {
        let base: Vec<f64> = per_run[0].values().copied().collect();
        for (k, (name, _)) in runs.iter().enumerate().skip(1) {
            let xs: Vec<f64> = per_run[k].values().copied().collect();
            comparisons.push(Comparison {
                run: name.clone(),
                baseline: runs[0].0.clone(),
                metric: "rouge_reference_f".into(),
                test: paired_t_test(&xs, &base)?,
            });
        }
    }
    let sketch_path = run.path(files::SKETCH_EVAL);
    let sketch = if sketch_path.exists() {
        let s: SketchEval = read_json(&sketch_path)?;
        run.check_hash(&sketch_path, Some(&s.config_hash))?;
        Some(s)
    } else {
        None
    };
    let report = Report {
        config_hash: run.hash.clone(),
        seed: run.config.seed,
        runs: summaries,
        comparisons,
        sketch,
    };
    run.ensure_dir()?;
    write_json(&run.path(files::REPORT), &report)?;
    let txt = run.path(files::REPORT_TXT);
    std::fs::write(&txt, report.table()).map_err(|e| Error::io(&txt, e))?;
    write_jsonl(&run.path(files::REPORT_ITEMS), &run.header(FMT_REPORT_ITEMS), &all_items)?;
    Ok(report)
}

/// Blind annotation sheets over `n` sampled test items for the given runs.
pub fn cmd_sheets_make(
    run: &Run,
    runs: &[(String, PathBuf)],
    n: usize,
    annotators: usize,
    out: Option<&Path>,
) -> Result<(PathBuf, AnnotationSheets)> {
    let runs = if runs.is_empty() { discover_generations(run)? } else { runs.to_vec() };
    let pairs = run.load_split(Split::Test)?;
    let items: BTreeMap<String, SheetItem> = pairs
        .iter()
        .map(|p| {
            (
                p.id.clone(),
                SheetItem {
                    premise: p.story.premise.clone(),
                    counterfactual_condition: p.counterfactual_condition.clone(),
                    original_ending: p.story.ending.join(" "),
                },
            )
        })
        .collect();
    let mut gens = BTreeMap::new();
    for (name, path) in &runs {
        let (_, rows) = read_generations(&run.require(path, "generations file")?)?;
        let texts: BTreeMap<String, String> =
            rows.into_iter().map(|r| (r.story_id, r.generated_ending)).collect();
        if gens.insert(name.clone(), texts).is_some() {
            return Err(Error::Invalid(format!("run name {name} given twice")));
        }
    }
    let mut sheets = make_annotation_sheets(&items, &gens, n, derive_seed(run.config.seed, &["sheets"]), annotators)?;
    sheets.mapping.config_hash = Some(run.hash.clone());
    sheets.mapping.seed = Some(run.config.seed);
    for s in sheets.sheets.iter_mut() {
        *s = format!("# config {} seed {}\n{s}", run.hash, run.config.seed);
    }
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| run.path(files::SHEETS_DIR));
    sheets.write(&dir)?;
    Ok((dir, sheets))
}

/// Contents of `human.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanReport {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub methods: BTreeMap<String, HumanMeans>,
}

/// Un-blinds filled sheets with `key` and averages the scores per method.
/// Writes `human.json` and `human.txt` into `out` (default: the key's folder).
pub fn cmd_sheets_aggregate(
    key: &Path,
    sheets: &[PathBuf],
    out: Option<&Path>,
) -> Result<BTreeMap<String, HumanMeans>> {
    let mapping: SheetMapping = read_json(key)?;
    if mapping.format != crate::eval::human::MAPPING_FORMAT {
        return Err(Error::Format(format!("{}: not a sheet key file", key.display())));
    }
    let mut parsed: Vec<HumanScoreSheet> = Vec::with_capacity(sheets.len());
    for path in sheets {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        parsed.push(read_sheet(&text, &name, &mapping)?);
    }
    let means = aggregate_human(&parsed)?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| key.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_json(
        &dir.join("human.json"),
        &HumanReport {
            config_hash: mapping.config_hash.clone(),
            seed: mapping.seed,
            methods: means.clone(),
        },
    )?;
    let f = |x: f64| format!("{x:.3}");
    let txt = table(
        &["method", "items", "PRE", "CF", "PLOT", "Avg"],
        means
            .iter()
            .map(|(m, h)| vec![m.clone(), h.items.to_string(), f(h.pre), f(h.cf), f(h.plot), f(h.avg)])
            .collect(),
    );
    let p = dir.join("human.txt");
    std::fs::write(&p, txt).map_err(|e| Error::io(&p, e))?;
    Ok(means)
}

/// Aligned plain-text table; the first column is left-aligned, the rest
/// right-aligned.
pub fn table(headers: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = w - c.chars().count();
            if i == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    for r in &rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_alignment() {
        let t = table(&["run", "F"], vec![vec!["sc".into(), "0.5000".into()], vec!["reference".into(), "1".into()]]);
        assert_eq!(t, "run             F\nsc         0.5000\nreference       1\n");
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("beam".parse::<Method>().is_err());
    }

    #[test]
    fn jsonl_header_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        let h = ArtifactHeader {
            format: "x".into(),
            version: ARTIFACT_VERSION,
            config_hash: "h".into(),
            seed: 1,
        };
        write_jsonl(&p, &h, &[1u32, 2, 3]).unwrap();
        let (back, rows): (_, Vec<u32>) = read_jsonl(&p, "x").unwrap();
        assert_eq!(back, h);
        assert_eq!(rows, vec![1, 2, 3]);
        assert!(read_jsonl::<u32>(&p, "y").is_err());
    }
}
