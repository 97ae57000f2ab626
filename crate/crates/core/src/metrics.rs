//! Binary classification metrics and learning-curve bookkeeping.
//!
//! Undefined values (precision with no predicted positives, F1 when both
//! precision and recall vanish, AUC on single-class input) are `None`,
//! serialized as JSON `null` and as empty CSV fields. They are never zero.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ROC AUC via the Mann-Whitney rank sum with midranks for ties.
/// `None` unless both classes are present.
pub fn auc(scores: &[(f64, bool)]) -> Option<f64> {
    let n_pos = scores.iter().filter(|s| s.1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares the mean rank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let positives = order[i..=j].iter().filter(|&&k| scores[k].1).count();
        rank_sum += midrank * positives as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// From `(predicted, truth)` pairs, positive meaning trauma.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (p, t) in pairs {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; undefined when either is
    /// undefined or both are zero.
    pub fn f1(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        if p + r == 0.0 {
            None
        } else {
            Some(2.0 * p * r / (p + r))
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// One evaluation of a model on the frozen test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub n_on_vocab: usize,
}

impl EvalRecord {
    /// Scores are P(trauma); `threshold` turns them into hard predictions.
    pub fn from_scores(
        iteration: usize,
        scored: &[(f64, bool)],
        threshold: f64,
        n_on_vocab: usize,
    ) -> Self {
        let c = Confusion::from_pairs(scored.iter().map(|&(s, t)| (s >= threshold, t)));
        Self {
            iteration,
            auc: auc(scored),
            f1: c.f1(),
            precision: c.precision(),
            recall: c.recall(),
            n_on_vocab,
        }
    }
}

/// Evaluations of one case (one labeled-set size), ordered by iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub case_labels: usize,
    points: Vec<EvalRecord>,
}

fn max_by_metric(points: &[EvalRecord], key: impl Fn(&EvalRecord) -> Option<f64>) -> Option<&EvalRecord> {
    // first point attaining the maximum
    points.iter().fold(None, |best: Option<&EvalRecord>, p| match (key(p), best.and_then(&key)) {
        (Some(v), Some(b)) if v > b => Some(p),
        (Some(_), None) => Some(p),
        _ => best,
    })
}

impl LearningCurve {
    pub fn new(case_labels: usize, mut points: Vec<EvalRecord>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config(format!("learning curve for case {case_labels} has no points")));
        }
        points.sort_by_key(|p| p.iteration);
        Ok(Self {
            case_labels,
            points,
        })
    }

    pub fn points(&self) -> &[EvalRecord] {
        &self.points
    }

    pub fn best_auc(&self) -> Option<&EvalRecord> {
        max_by_metric(&self.points, |p| p.auc)
    }

    pub fn best_f1(&self) -> Option<&EvalRecord> {
        max_by_metric(&self.points, |p| p.f1)
    }

    pub fn last(&self) -> &EvalRecord {
        self.points.last().expect("non-empty by construction")
    }

    /// `iteration,auc,f1,precision,recall,n_on_vocab`, empty fields for undefined values.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,auc,f1,precision,recall,n_on_vocab")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                p.iteration,
                fmt_opt(p.auc),
                fmt_opt(p.f1),
                fmt_opt(p.precision),
                fmt_opt(p.recall),
                p.n_on_vocab
            )?;
        }
        Ok(())
    }

    pub fn read_csv(case_labels: usize, text: &str) -> Result<Self> {
        let parse = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::Config(format!("bad metric value {s:?}")))
            }
        };
        let mut points = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Config(format!("bad curve row {line:?}")));
            }
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad integer {s:?}")))
            };
            points.push(EvalRecord {
                iteration: int(f[0])?,
                auc: parse(f[1])?,
                f1: parse(f[2])?,
                precision: parse(f[3])?,
                recall: parse(f[4])?,
                n_on_vocab: int(f[5])?,
            });
        }
        Self::new(case_labels, points)
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub case_labels: usize,
    pub best_auc: Option<f64>,
    pub best_f1: Option<f64>,
    pub iterations_to_best: Option<usize>,
}

/// One row per curve: the best AUC and F1 over its evaluations.
pub fn summarize(curves: &[LearningCurve]) -> Vec<SummaryRow> {
    curves
        .iter()
        .map(|c| SummaryRow {
            case_labels: c.case_labels,
            best_auc: c.best_auc().and_then(|p| p.auc),
            best_f1: c.best_f1().and_then(|p| p.f1),
            iterations_to_best: c.best_auc().map(|p| p.iteration),
        })
        .collect()
}
