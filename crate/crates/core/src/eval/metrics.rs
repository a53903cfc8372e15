use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{lcs_len, Label, Skeleton};

/// ROUGE-L with the balanced (β = 1) F-measure.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> RougeL {
    let cand: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let refr: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let l = lcs_len(&cand, &refr);
    if l == 0 {
        return RougeL::default();
    }
    let precision = l as f64 / cand.len() as f64;
    let recall = l as f64 / refr.len() as f64;
    RougeL {
        precision,
        recall,
        f_measure: harmonic(precision, recall),
    }
}

/// ROUGE-L against the best-matching reference (by F-measure).
pub fn rouge_l_max<S: AsRef<str>>(candidate: &[S], references: &[Vec<S>]) -> RougeL {
    references
        .iter()
        .map(|r| rouge_l(candidate, r))
        .fold(RougeL::default(), |best, s| if s.f_measure > best.f_measure { s } else { best })
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Token-level confusion counts with causal as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    /// gold causal, predicted causal
    pub causal_tp: usize,
    /// gold background, predicted causal
    pub causal_fp: usize,
    /// gold causal, predicted background
    pub causal_fn: usize,
    /// gold background, predicted background
    pub background_tp: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted: Label, gold: Label) {
        match (predicted, gold) {
            (Label::Causal, Label::Causal) => self.causal_tp += 1,
            (Label::Causal, Label::Background) => self.causal_fp += 1,
            (Label::Background, Label::Causal) => self.causal_fn += 1,
            (Label::Background, Label::Background) => self.background_tp += 1,
        }
    }

    pub fn metrics(&self) -> LabelMetrics {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let cp = ratio(self.causal_tp, self.causal_tp + self.causal_fp);
        let cr = ratio(self.causal_tp, self.causal_tp + self.causal_fn);
        // Background precision: of tokens predicted background, how many are.
        let bp = ratio(self.background_tp, self.background_tp + self.causal_fn);
        let br = ratio(self.background_tp, self.background_tp + self.causal_fp);
        LabelMetrics {
            cp,
            cr,
            cf1: harmonic(cp, cr),
            bp,
            br,
            bf1: harmonic(bp, br),
        }
    }
}

/// Micro-averaged precision/recall/F1 for causal (C) and background (B)
/// tokens.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub bp: f64,
    pub br: f64,
    pub bf1: f64,
}

pub fn confusion(predicted: &[Vec<Label>], gold: &[Vec<Label>]) -> Result<Confusion> {
    if predicted.len() != gold.len() {
        return Err(Error::LengthMismatch {
            what: "predicted vs gold sequences",
            left: predicted.len(),
            right: gold.len(),
        });
    }
    let mut c = Confusion::default();
    for (p, g) in predicted.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch {
                what: "predicted vs gold labels",
                left: p.len(),
                right: g.len(),
            });
        }
        for (&a, &b) in p.iter().zip(g) {
            c.add(a, b);
        }
    }
    Ok(c)
}

pub fn label_metrics(predicted: &[Vec<Label>], gold: &[Vec<Label>]) -> Result<LabelMetrics> {
    Ok(confusion(predicted, gold)?.metrics())
}

/// Fraction of the skeleton's background tokens that the generation contains
/// as an in-order subsequence. Vacuously 1 for a skeleton with no background.
pub fn skeleton_coverage<S: AsRef<str>>(generated: &[S], skeleton: &Skeleton) -> f64 {
    let background = skeleton.background();
    if background.is_empty() {
        return 1.0;
    }
    let generated: Vec<&str> = generated.iter().map(AsRef::as_ref).collect();
    lcs_len(&background, &generated) as f64 / background.len() as f64
}
