//! Blind annotation sheets for PRE / CF / PLOT scoring and their aggregation.
//!
//! Each annotator gets a CSV file. A row shows one story's context plus one
//! slot per method, in shuffled order. Slots carry random keys. The
//! key → (method, item) mapping is kept in a separate file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};

pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 3;
pub const MAPPING_FORMAT: &str = "storyrewrite.sheet-key";

const RUBRIC: &[&str] = &[
    "Score every candidate ending on three aspects, each 1, 2 or 3.",
    "pre: 3 = agrees with every detail of the premise; 2 = related to the premise with a few minor contradictions; 1 = ignores or contradicts the premise.",
    "cf: 3 = premise, counterfactual condition and ending form one coherent story; 2 = mostly fits the counterfactual condition with minor conflicts; 1 = clearly conflicts with the counterfactual condition.",
    "plot: 3 = keeps the main events of the original ending; 2 = loosely related to the original plot; 1 = unrelated to the original ending.",
    "Leave a cell empty if you cannot judge it.",
];

/// Story context shown next to the candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetItem {
    pub premise: String,
    pub counterfactual_condition: String,
    pub original_ending: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlindKey {
    pub method: String,
    pub item: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetMapping {
    pub format: String,
    pub version: u32,
    /// Producing run, when made from a pipeline config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub keys: BTreeMap<String, BlindKey>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSheets {
    /// CSV text, one per annotator.
    pub sheets: Vec<String>,
    pub mapping: SheetMapping,
    /// Sampled item ids in sorted order.
    pub items: Vec<String>,
}

impl AnnotationSheets {
    /// Writes `annotator-NN.csv` files and `key.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, sheet) in self.sheets.iter().enumerate() {
            let path = dir.join(sheet_file_name(i));
            std::fs::write(&path, sheet).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join("key.json");
        let text = serde_json::to_string_pretty(&self.mapping).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

pub fn sheet_file_name(annotator: usize) -> String {
    format!("annotator-{:02}.csv", annotator + 1)
}

/// Samples `n` items shared by all runs and builds one blind sheet per
/// annotator. `runs` maps method id → item id → generated ending.
pub fn make_annotation_sheets(
    items: &BTreeMap<String, SheetItem>,
    runs: &BTreeMap<String, BTreeMap<String, String>>,
    n: usize,
    seed: u64,
    annotators: usize,
) -> Result<AnnotationSheets> {
    if runs.is_empty() {
        return Err(Error::Empty("method runs"));
    }
    if annotators == 0 {
        return Err(Error::Invalid("need at least one annotator".into()));
    }
    for (method, gens) in runs {
        if let Some(missing) = items.keys().find(|id| !gens.contains_key(*id)) {
            return Err(Error::Invalid(format!("run {method} has no generation for item {missing}")));
        }
    }
    if n > items.len() {
        return Err(Error::Invalid(format!(
            "cannot sample {n} items from a test set of {}",
            items.len()
        )));
    }
    let mut ids: Vec<&String> = items.keys().collect();
    ids.shuffle(&mut rng(derive_seed(seed, &["sheets", "sample"])));
    let mut sampled: Vec<String> = ids[..n].iter().map(|s| s.to_string()).collect();
    sampled.sort();

    let methods: Vec<&String> = runs.keys().collect();
    let mut key_rng = rng(derive_seed(seed, &["sheets", "keys"]));
    let mut keys = BTreeMap::new();
    let mut sheets = Vec::with_capacity(annotators);
    for a in 0..annotators {
        let mut order = sampled.clone();
        let mut r = rng(derive_seed(seed, &["sheets", "annotator", &a.to_string()]));
        order.shuffle(&mut r);
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(header(methods.len())).map_err(csv_err)?;
        for (row, item) in order.iter().enumerate() {
            let ctx = &items[item];
            let mut rec = vec![
                (row + 1).to_string(),
                item.clone(),
                ctx.premise.clone(),
                ctx.counterfactual_condition.clone(),
                ctx.original_ending.clone(),
            ];
            let mut slots = methods.clone();
            slots.shuffle(&mut r);
            for m in slots {
                let key = fresh_key(&mut key_rng, &keys);
                keys.insert(
                    key.clone(),
                    BlindKey {
                        method: m.clone(),
                        item: item.clone(),
                    },
                );
                rec.extend([key, runs[m][item].clone(), String::new(), String::new(), String::new()]);
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .expect("csv output is utf-8");
        let mut text: String = RUBRIC.iter().map(|l| format!("# {l}\n")).collect();
        text.push_str(&body);
        sheets.push(text);
    }
    Ok(AnnotationSheets {
        sheets,
        mapping: SheetMapping {
            format: MAPPING_FORMAT.into(),
            version: 1,
            config_hash: None,
            seed: None,
            keys,
        },
        items: sampled,
    })
}

fn header(slots: usize) -> Vec<String> {
    let mut h: Vec<String> = ["row", "item", "premise", "counterfactual_condition", "original_ending"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for s in 1..=slots {
        for f in ["key", "ending", "pre", "cf", "plot"] {
            h.push(format!("s{s}_{f}"));
        }
    }
    h
}

fn fresh_key<R: Rng>(r: &mut R, taken: &BTreeMap<String, BlindKey>) -> String {
    loop {
        let k = format!("{:08x}", r.random::<u32>());
        if !taken.contains_key(&k) {
            return k;
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectScores {
    pub pre: u8,
    pub cf: u8,
    pub plot: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanScore {
    pub item: String,
    pub method: String,
    pub scores: AspectScores,
}

/// Un-blinded scores from one annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanScoreSheet {
    pub annotator: String,
    pub scores: Vec<HumanScore>,
}

/// Parses a filled sheet and resolves its keys. Slots whose three score cells
/// are all empty are skipped; partially filled or out-of-range slots are errors.
pub fn read_sheet(text: &str, annotator: &str, mapping: &SheetMapping) -> Result<HumanScoreSheet> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let head = r.headers().map_err(csv_err)?.clone();
    if head.len() < 5 || (head.len() - 5) % 5 != 0 || &head[1] != "item" {
        return Err(Error::Format(format!("{annotator}: unexpected sheet header")));
    }
    let slots = (head.len() - 5) / 5;
    let mut scores = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let item = &rec[1];
        for s in 0..slots {
            let base = 5 + s * 5;
            let key = &rec[base];
            let blind = mapping
                .keys
                .get(key)
                .ok_or_else(|| Error::Format(format!("{annotator} row {}: unknown key {key}", line + 1)))?;
            if blind.item != item {
                return Err(Error::Format(format!(
                    "{annotator} row {}: key {key} belongs to item {}, not {item}",
                    line + 1,
                    blind.item
                )));
            }
            let cells = [&rec[base + 2], &rec[base + 3], &rec[base + 4]];
            if cells.iter().all(|c| c.trim().is_empty()) {
                continue;
            }
            let mut v = [0u8; 3];
            for (slot, cell) in v.iter_mut().zip(cells) {
                *slot = parse_score(cell.trim()).ok_or_else(|| {
                    Error::Format(format!(
                        "{annotator} row {}: score {cell:?} for key {key} is not one of 1, 2, 3",
                        line + 1
                    ))
                })?;
            }
            scores.push(HumanScore {
                item: blind.item.clone(),
                method: blind.method.clone(),
                scores: AspectScores {
                    pre: v[0],
                    cf: v[1],
                    plot: v[2],
                },
            });
        }
    }
    Ok(HumanScoreSheet {
        annotator: annotator.to_string(),
        scores,
    })
}

fn parse_score(s: &str) -> Option<u8> {
    s.parse::<u8>().ok().filter(|v| (MIN_SCORE..=MAX_SCORE).contains(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanMeans {
    pub pre: f64,
    pub cf: f64,
    pub plot: f64,
    pub avg: f64,
    pub items: usize,
}

impl HumanMeans {
    pub fn from_aspects(pre: f64, cf: f64, plot: f64, items: usize) -> Self {
        HumanMeans {
            pre,
            cf,
            plot,
            avg: (pre + cf + plot) / 3.0,
            items,
        }
    }
}

/// Per-method means: first over annotators for each item, then over items.
/// Every method must have at least one score for every item seen in any sheet.
pub fn aggregate_human(sheets: &[HumanScoreSheet]) -> Result<BTreeMap<String, HumanMeans>> {
    let mut cells: BTreeMap<(&str, &str), Vec<AspectScores>> = BTreeMap::new();
    let mut methods = BTreeSet::new();
    let mut items = BTreeSet::new();
    for sheet in sheets {
        for s in &sheet.scores {
            for v in [s.scores.pre, s.scores.cf, s.scores.plot] {
                if !(MIN_SCORE..=MAX_SCORE).contains(&v) {
                    return Err(Error::Invalid(format!(
                        "{}: score {v} for {}/{} out of range",
                        sheet.annotator, s.method, s.item
                    )));
                }
            }
            methods.insert(s.method.as_str());
            items.insert(s.item.as_str());
            cells.entry((s.method.as_str(), s.item.as_str())).or_default().push(s.scores);
        }
    }
    if cells.is_empty() {
        return Err(Error::Empty("score sheets"));
    }
    let missing: Vec<String> = methods
        .iter()
        .flat_map(|m| items.iter().map(move |i| (*m, *i)))
        .filter(|k| !cells.contains_key(k))
        .map(|(m, i)| format!("{m}/{i}"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Invalid(format!("missing scores for {}", missing.join(", "))));
    }
    let mut out = BTreeMap::new();
    for m in methods {
        let mut sums = [0.0; 3];
        for i in &items {
            let v = &cells[&(m, *i)];
            let k = v.len() as f64;
            sums[0] += v.iter().map(|s| s.pre as f64).sum::<f64>() / k;
            sums[1] += v.iter().map(|s| s.cf as f64).sum::<f64>() / k;
            sums[2] += v.iter().map(|s| s.plot as f64).sum::<f64>() / k;
        }
        let n = items.len() as f64;
        out.insert(
            m.to_string(),
            HumanMeans::from_aspects(sums[0] / n, sums[1] / n, sums[2] / n, items.len()),
        );
    }
    Ok(out)
}
