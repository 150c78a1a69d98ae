//! Attachment scores and error analysis by dependency length, distance to the root,
//! sentence length and dependency label.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::treebank::AnnotatedSentence;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("sentence {index} ({id}): {message}")]
    Mismatch { index: usize, id: String, message: String },
    #[error("relative error reduction is undefined when the baseline score is 100")]
    PerfectBaseline,
}

/// Whether punctuation tokens (as marked in the gold file) are scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PunctMode {
    #[default]
    Include,
    Exclude,
}

impl PunctMode {
    pub fn parse(s: &str) -> Option<PunctMode> {
        match s {
            "include" => Some(PunctMode::Include),
            "exclude" => Some(PunctMode::Exclude),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PunctMode::Include => "include",
            PunctMode::Exclude => "exclude",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Score {
    pub scored: usize,
    pub head_correct: usize,
    pub label_correct: usize,
}

impl Score {
    pub fn uas(&self) -> f64 {
        percent(self.head_correct, self.scored)
    }

    pub fn las(&self) -> f64 {
        percent(self.label_correct, self.scored)
    }
}

fn percent(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        100.0 * a as f64 / b as f64
    }
}

/// `(new − old) / (100 − old) × 100`: the share of the baseline's remaining error removed.
pub fn relative_error_reduction(old: f64, new: f64) -> Result<f64, EvalError> {
    if old >= 100.0 {
        return Err(EvalError::PerfectBaseline);
    }
    Ok((new - old) / (100.0 - old) * 100.0)
}

fn check_alignment(gold: &[AnnotatedSentence], pred: &[AnnotatedSentence]) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::Mismatch {
            index: gold.len().min(pred.len()),
            id: "-".into(),
            message: format!("{} gold sentences but {} predicted", gold.len(), pred.len()),
        });
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::Mismatch {
                index: i + 1,
                id: g.sent_id().unwrap_or("-").to_string(),
                message: format!("{} gold tokens but {} predicted", g.len(), p.len()),
            });
        }
    }
    Ok(())
}

fn scored(mode: PunctMode, is_punct: bool) -> bool {
    mode == PunctMode::Include || !is_punct
}

/// UAS/LAS over aligned gold and predicted sentences.
pub fn score(gold: &[AnnotatedSentence], pred: &[AnnotatedSentence], mode: PunctMode) -> Result<Score, EvalError> {
    check_alignment(gold, pred)?;
    let mut s = Score::default();
    for (g, p) in gold.iter().zip(pred) {
        for (gt, pt) in g.tokens.iter().zip(&p.tokens) {
            if !scored(mode, gt.is_punct) {
                continue;
            }
            s.scored += 1;
            if gt.head == pt.head {
                s.head_correct += 1;
                if gt.deprel == pt.deprel {
                    s.label_correct += 1;
                }
            }
        }
    }
    Ok(s)
}

/// Counts behind a labelled F-score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BinCounts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl BinCounts {
    pub fn precision(&self) -> f64 {
        percent(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        percent(self.correct, self.gold)
    }

    pub fn f_score(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Bin names shared by the length and distance schemes.
pub const DISTANCE_BINS: [&str; 11] = ["ROOT", "1", "2", "3", "4", "5", "6", "7", "8", "9", ">=10"];
pub const SENTENCE_BINS: [&str; 6] = ["1-9", "10-19", "20-29", "30-39", "40-49", ">=50"];

/// Dependency-length bin of an arc: root attachments go to `ROOT`.
pub fn length_bin(head: usize, dependent: usize) -> usize {
    if head == 0 {
        0
    } else {
        head.abs_diff(dependent).min(10)
    }
}

/// Number of arcs on the path from each word to the root (index 0 unused).
/// Words on a cycle or attached to a missing head get `usize::MAX`.
pub fn root_distances(heads: &[usize]) -> Vec<usize> {
    let n = heads.len();
    let mut depth = vec![None; n];
    depth[0] = Some(0);
    for start in 1..n {
        let mut path = Vec::new();
        let mut w = start;
        let base = loop {
            if let Some(d) = depth[w] {
                break d;
            }
            if heads[w] >= n || path.contains(&w) {
                break usize::MAX;
            }
            path.push(w);
            w = heads[w];
        };
        for (k, &p) in path.iter().rev().enumerate() {
            depth[p] = Some(base.saturating_add(k + 1));
        }
    }
    depth.into_iter().map(|d| d.unwrap_or(usize::MAX)).collect()
}

/// Root-distance bin: children of the root form the `ROOT` bin and a word at distance
/// `d > 1` goes to bin `d − 1`, capped at `>=10`.
pub fn distance_bin(distance: usize) -> usize {
    distance.saturating_sub(1).min(10)
}

pub fn sentence_bin(len: usize) -> usize {
    (len / 10).min(5)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorReport {
    pub score: Score,
    pub dependency_length: [BinCounts; 11],
    pub root_distance: [BinCounts; 11],
    /// Scored tokens and label-correct tokens per sentence-length bin.
    pub sentence_length: [(usize, usize); 6],
    pub sentences_per_length: [usize; 6],
    pub deprels: BTreeMap<String, BinCounts>,
}

/// Full error analysis of a predicted corpus.
pub fn analyze(gold: &[AnnotatedSentence], pred: &[AnnotatedSentence], mode: PunctMode) -> Result<ErrorReport, EvalError> {
    let mut r = ErrorReport {
        score: score(gold, pred, mode)?,
        ..ErrorReport::default()
    };
    for (g, p) in gold.iter().zip(pred) {
        let gh = g.heads();
        let ph = p.heads();
        let gd = root_distances(&gh);
        let pd = root_distances(&ph);
        let sb = sentence_bin(g.len());
        r.sentences_per_length[sb] += 1;
        for (i, (gt, pt)) in g.tokens.iter().zip(&p.tokens).enumerate() {
            if !scored(mode, gt.is_punct) {
                continue;
            }
            let w = i + 1;
            let correct = gt.head == pt.head && gt.deprel == pt.deprel;
            let (gl, pl) = (length_bin(gt.head, w), length_bin(pt.head, w));
            r.dependency_length[gl].gold += 1;
            r.dependency_length[pl].predicted += 1;
            if correct {
                r.dependency_length[gl].correct += 1;
            }
            let (gb, pb) = (distance_bin(gd[w]), distance_bin(pd[w]));
            r.root_distance[gb].gold += 1;
            r.root_distance[pb].predicted += 1;
            if correct && gb == pb {
                r.root_distance[gb].correct += 1;
            }
            r.sentence_length[sb].0 += 1;
            if correct {
                r.sentence_length[sb].1 += 1;
            }
            r.deprels.entry(gt.deprel.clone()).or_default().gold += 1;
            r.deprels.entry(pt.deprel.clone()).or_default().predicted += 1;
            if correct {
                r.deprels.get_mut(&gt.deprel).expect("inserted").correct += 1;
            }
        }
    }
    Ok(r)
}

impl ErrorReport {
    pub fn sentence_las(&self, bin: usize) -> f64 {
        let (n, c) = self.sentence_length[bin];
        percent(c, n)
    }

    /// Per-label F-scores with the relative error reduction of `self` over `baseline`
    /// (`None` where the label is missing from the baseline or the baseline F is 100).
    pub fn deprel_table(&self, baseline: Option<&ErrorReport>) -> Vec<(String, BinCounts, Option<f64>)> {
        let mut rows: Vec<(String, BinCounts, Option<f64>)> = self
            .deprels
            .iter()
            .map(|(label, counts)| {
                let rer = baseline
                    .and_then(|b| b.deprels.get(label))
                    .and_then(|old| relative_error_reduction(old.f_score(), counts.f_score()).ok());
                (label.clone(), *counts, rer)
            })
            .collect();
        if baseline.is_some() {
            rows.sort_by(|a, b| {
                a.2.unwrap_or(f64::INFINITY)
                    .total_cmp(&b.2.unwrap_or(f64::INFINITY))
                    .then_with(|| a.0.cmp(&b.0))
            });
        }
        rows
    }

    /// Human-readable tables.
    pub fn to_text(&self, baseline: Option<&ErrorReport>) -> String {
        let mut out = String::new();
        writeln!(out, "UAS {:.2}  LAS {:.2}  ({} tokens)", self.score.uas(), self.score.las(), self.score.scored).unwrap();
        for (title, bins) in [
            ("Labelled F-score by dependency length", &self.dependency_length),
            ("Labelled F-score by distance to root", &self.root_distance),
        ] {
            writeln!(out, "\n{title}").unwrap();
            writeln!(out, "{:<6} {:>7} {:>7} {:>7} {:>7}", "bin", "gold", "pred", "correct", "F").unwrap();
            for (name, c) in DISTANCE_BINS.iter().zip(bins.iter()) {
                writeln!(out, "{:<6} {:>7} {:>7} {:>7} {:>7.2}", name, c.gold, c.predicted, c.correct, c.f_score()).unwrap();
            }
        }
        writeln!(out, "\nLAS by sentence length").unwrap();
        writeln!(out, "{:<6} {:>9} {:>7} {:>7}", "bin", "sentences", "tokens", "LAS").unwrap();
        for (b, name) in SENTENCE_BINS.iter().enumerate() {
            writeln!(
                out,
                "{:<6} {:>9} {:>7} {:>7.2}",
                name,
                self.sentences_per_length[b],
                self.sentence_length[b].0,
                self.sentence_las(b)
            )
            .unwrap();
        }
        writeln!(out, "\nLabelled F-score by dependency label").unwrap();
        match baseline {
            Some(_) => writeln!(out, "{:<12} {:>7} {:>7} {:>7} {:>7} {:>8}", "label", "gold", "pred", "correct", "F", "RER").unwrap(),
            None => writeln!(out, "{:<12} {:>7} {:>7} {:>7} {:>7}", "label", "gold", "pred", "correct", "F").unwrap(),
        }
        for (label, c, rer) in self.deprel_table(baseline) {
            write!(out, "{:<12} {:>7} {:>7} {:>7} {:>7.2}", label, c.gold, c.predicted, c.correct, c.f_score()).unwrap();
            if baseline.is_some() {
                match rer {
                    Some(v) => write!(out, " {v:>8.2}").unwrap(),
                    None => write!(out, " {:>8}", "-").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Tab-separated rows: `scheme, bin, gold, predicted, correct, value`, where value is
    /// the labelled F-score (LAS for sentence-length bins).
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("scheme\tbin\tgold\tpredicted\tcorrect\tvalue\n");
        for (scheme, bins) in [("dependency_length", &self.dependency_length), ("root_distance", &self.root_distance)] {
            for (name, c) in DISTANCE_BINS.iter().zip(bins.iter()) {
                writeln!(out, "{scheme}\t{name}\t{}\t{}\t{}\t{:.4}", c.gold, c.predicted, c.correct, c.f_score()).unwrap();
            }
        }
        for (b, name) in SENTENCE_BINS.iter().enumerate() {
            let (n, c) = self.sentence_length[b];
            writeln!(out, "sentence_length\t{name}\t{n}\t{n}\t{c}\t{:.4}", self.sentence_las(b)).unwrap();
        }
        for (label, c) in &self.deprels {
            writeln!(out, "deprel\t{label}\t{}\t{}\t{}\t{:.4}", c.gold, c.predicted, c.correct, c.f_score()).unwrap();
        }
        out
    }
}
