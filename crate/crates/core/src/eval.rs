//! Ranking metrics and the held-out evaluation protocol.
//!
//! Each held-out positive of a user is ranked against `N` items the user never
//! interacted with (in train or test). AUC is pooled over every scored
//! `(positive, negative)` pair; NDCG@k is averaged over a user's positives and
//! then over users.

use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::graph::{Edge, GraphError, InteractionGraph, Side};
use crate::model::layers::{logit, Affine, MlpHead};
use crate::numeric::ops::dot;
use crate::numeric::{Matrix, NumericError};
use crate::par::{map_range, ExecMode};
use crate::rng::{derive_index, rng_from};

use rand::seq::index::sample;
use rand::Rng as _;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("undefined metric: {0}")]
    Undefined(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("report columns differ: expected [{expected}], found [{found}]")]
    Schema { expected: String, found: String },
    #[error("report line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that can rank items for a user. Higher scores rank first; only
/// the order matters.
pub trait Scorer: Sync {
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    fn score(&self, user: usize, item: usize) -> f64;
}

/// How a pair of final vectors becomes a ranking score.
#[derive(Clone, Debug, PartialEq)]
pub enum Link {
    /// `u · i`
    Dot,
    /// `w2 · ReLU(W1 [u ⊕ i] + b1) + b2`
    Mlp {
        w1: Matrix,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
    },
}

/// Scores from fixed user and item vectors. Scores are logits; the
/// interaction probability is their sigmoid.
#[derive(Clone, Debug)]
pub struct EmbeddingScorer {
    users: Matrix,
    items: Matrix,
    link: Link,
}

impl EmbeddingScorer {
    pub fn new(users: Matrix, items: Matrix, link: Link) -> Result<Self, NumericError> {
        let d = users.cols();
        if items.cols() != d {
            return Err(NumericError::Shape {
                op: "scorer",
                expected: (items.rows(), d),
                found: items.shape(),
            });
        }
        if let Link::Mlp { w1, b1, w2, .. } = &link {
            if w1.cols() != 2 * d || b1.len() != w1.rows() || w2.len() != w1.rows() {
                return Err(NumericError::Shape {
                    op: "scorer head",
                    expected: (w1.rows(), 2 * d),
                    found: w1.shape(),
                });
            }
        }
        Ok(EmbeddingScorer { users, items, link })
    }

    pub fn users(&self) -> &Matrix {
        &self.users
    }

    pub fn items(&self) -> &Matrix {
        &self.items
    }

    pub fn link(&self) -> &Link {
        &self.link
    }
}

impl Scorer for EmbeddingScorer {
    fn n_users(&self) -> usize {
        self.users.rows()
    }

    fn n_items(&self) -> usize {
        self.items.rows()
    }

    fn score(&self, user: usize, item: usize) -> f64 {
        let (u, i) = (self.users.row(user), self.items.row(item));
        match &self.link {
            Link::Dot => dot(u, i),
            Link::Mlp { w1, b1, w2, b2 } => {
                let head = MlpHead {
                    hidden: Affine { w: w1, b: b1 },
                    out_w: w2,
                    out_b: *b2,
                };
                logit(u, i, Some(&head)).expect("shapes checked at construction")
            }
        }
    }
}

fn check_scores(scores: &[f64]) -> Result<(), EvalError> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::Invalid("NaN score".into()));
    }
    Ok(())
}

/// Pairwise AUC: `(#(pos > neg) + ½ #(pos = neg)) / (n_pos · n_neg)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_scores(scores)?;
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::Undefined(
            "AUC needs both positive and negative labels",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // half-unit wins, summed over groups of tied scores in ascending order
    let mut half_wins = 0u64;
    let mut neg_below = 0u64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group = &order[start..end];
        let pos = group.iter().filter(|&&k| labels[k]).count() as u64;
        let neg = group.len() as u64 - pos;
        half_wins += pos * (2 * neg_below + neg);
        neg_below += neg;
        start = end;
    }
    Ok(half_wins as f64 / (2 * n_pos * n_neg) as f64)
}

/// `Σ_{p ≤ k} rel_p / log2(p + 1)` with 1-based positions.
pub fn dcg_at_k(ranked_relevance: &[bool], k: usize) -> f64 {
    ranked_relevance
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
        .sum()
}

/// DCG@k normalised by the DCG@k of the ideal ordering.
pub fn ndcg_at_k(ranked_relevance: &[bool], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::Invalid("k must be at least 1".into()));
    }
    let n_rel = ranked_relevance.iter().filter(|&&r| r).count();
    if n_rel == 0 {
        return Err(EvalError::Undefined(
            "NDCG needs at least one relevant item",
        ));
    }
    let ideal: f64 = (0..n_rel.min(k))
        .map(|p| 1.0 / ((p + 2) as f64).log2())
        .sum();
    Ok(dcg_at_k(ranked_relevance, k) / ideal)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalProtocol {
    pub negatives: usize,
    pub ks: Vec<usize>,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            negatives: 99,
            ks: vec![1, 2, 10],
            seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.negatives == 0 {
            return Err(EvalError::Invalid(
                "eval.negatives must be at least 1".into(),
            ));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(EvalError::Invalid(
                "eval.ks must be non-empty and all at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!("sampled-negatives n={} seed={}", self.negatives, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub dataset: String,
    pub auc: f64,
    pub ndcg: Vec<(usize, f64)>,
    pub n_users_evaluated: usize,
    /// Users without a usable held-out positive.
    pub n_users_skipped: usize,
    pub protocol: String,
}

#[derive(Default)]
struct UserTally {
    half_wins: u64,
    pairs: u64,
    ndcg_mean: Vec<f64>,
    evaluated: bool,
}

/// `(auc, [(k, ndcg@k)], users evaluated, users skipped)`.
pub type EvalOutcome = (f64, Vec<(usize, f64)>, usize, usize);

/// Ranks every held-out positive against sampled unseen items.
pub fn evaluate(
    scorer: &dyn Scorer,
    train: &InteractionGraph,
    test: &[Edge],
    protocol: &EvalProtocol,
    mode: ExecMode,
) -> Result<EvalOutcome, EvalError> {
    protocol.validate()?;
    let (nu, ni) = (train.n_users(), train.n_items());
    if scorer.n_users() != nu || scorer.n_items() != ni {
        return Err(EvalError::Invalid(format!(
            "scorer covers {} users and {} items, graph has {nu} and {ni}",
            scorer.n_users(),
            scorer.n_items()
        )));
    }
    if test.is_empty() {
        return Err(EvalError::Undefined("empty test set"));
    }
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); nu];
    for e in test {
        train.check_index(Side::User, e.user as usize)?;
        train.check_index(Side::Item, e.item as usize)?;
        by_user[e.user as usize].push(e.item as usize);
    }

    let ks = &protocol.ks;
    let tallies = map_range(mode, nu, |u| -> Result<UserTally, EvalError> {
        let positives = &by_user[u];
        if positives.is_empty() {
            return Ok(UserTally::default());
        }
        let mut seen = vec![false; ni];
        train
            .neighbor_slices(Side::User, u)
            .0
            .iter()
            .for_each(|&i| seen[i as usize] = true);
        positives.iter().for_each(|&i| seen[i] = true);
        let unseen: usize = seen.iter().filter(|&&s| !s).count();
        if unseen == 0 {
            return Ok(UserTally::default());
        }
        let n_neg = protocol.negatives.min(unseen);
        let mut rng = rng_from(derive_index(protocol.seed, u as u64));
        let complement: Vec<usize> = if unseen * 4 < ni {
            (0..ni).filter(|&i| !seen[i]).collect()
        } else {
            Vec::new()
        };
        let mut tally = UserTally {
            ndcg_mean: vec![0.0; ks.len()],
            evaluated: true,
            ..Default::default()
        };
        let mut negatives = Vec::with_capacity(n_neg);
        let mut picked = vec![false; ni];
        for &p in positives {
            negatives.clear();
            if complement.is_empty() {
                while negatives.len() < n_neg {
                    let j = rng.gen_range(0..ni);
                    if !seen[j] && !picked[j] {
                        picked[j] = true;
                        negatives.push(j);
                    }
                }
                negatives.iter().for_each(|&j| picked[j] = false);
            } else {
                negatives.extend(
                    sample(&mut rng, complement.len(), n_neg)
                        .into_iter()
                        .map(|k| complement[k]),
                );
            }
            let sp = scorer.score(u, p);
            let mut cands: Vec<(f64, usize)> = Vec::with_capacity(n_neg + 1);
            cands.push((sp, p));
            for &j in &negatives {
                let s = scorer.score(u, j);
                tally.half_wins += match s.partial_cmp(&sp) {
                    Some(std::cmp::Ordering::Less) => 2,
                    Some(std::cmp::Ordering::Equal) => 1,
                    Some(std::cmp::Ordering::Greater) => 0,
                    None => return Err(EvalError::Invalid("NaN score".into())),
                };
                cands.push((s, j));
            }
            if sp.is_nan() {
                return Err(EvalError::Invalid("NaN score".into()));
            }
            tally.pairs += n_neg as u64;
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let ranked: Vec<bool> = cands.iter().map(|c| c.1 == p).collect();
            for (m, &k) in tally.ndcg_mean.iter_mut().zip(ks) {
                *m += ndcg_at_k(&ranked, k)?;
            }
        }
        let n = positives.len() as f64;
        tally.ndcg_mean.iter_mut().for_each(|m| *m /= n);
        Ok(tally)
    });

    let mut half_wins = 0u64;
    let mut pairs = 0u64;
    let mut ndcg = vec![0.0; ks.len()];
    let mut evaluated = 0usize;
    for t in tallies {
        let t = t?;
        if t.evaluated {
            half_wins += t.half_wins;
            pairs += t.pairs;
            ndcg.iter_mut().zip(&t.ndcg_mean).for_each(|(a, b)| *a += b);
            evaluated += 1;
        }
    }
    if evaluated == 0 {
        return Err(EvalError::Undefined(
            "no user has a held-out positive with unseen negatives",
        ));
    }
    let auc = half_wins as f64 / (2 * pairs) as f64;
    let ndcg = ks
        .iter()
        .zip(ndcg)
        .map(|(&k, s)| (k, s / evaluated as f64))
        .collect();
    Ok((auc, ndcg, evaluated, nu - evaluated))
}

impl MetricsReport {
    /// Runs [`evaluate`] and labels the result.
    pub fn compute(
        model: &str,
        dataset: &str,
        scorer: &dyn Scorer,
        train: &InteractionGraph,
        test: &[Edge],
        protocol: &EvalProtocol,
        mode: ExecMode,
    ) -> Result<Self, EvalError> {
        let (auc, ndcg, n_users_evaluated, n_users_skipped) =
            evaluate(scorer, train, test, protocol, mode)?;
        Ok(MetricsReport {
            model: model.to_string(),
            dataset: dataset.to_string(),
            auc,
            ndcg,
            n_users_evaluated,
            n_users_skipped,
            protocol: format!("{} skipped={}", protocol.describe(), n_users_skipped),
        })
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ndcg.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["model".to_string(), "dataset".into(), "auc".into()];
        cols.extend(self.ndcg.iter().map(|(k, _)| format!("ndcg@{k}")));
        cols.extend(["n_users".to_string(), "protocol".into()]);
        cols
    }

    pub fn to_table(&self) -> ReportTable {
        let mut row = vec![
            self.model.clone(),
            self.dataset.clone(),
            self.auc.to_string(),
        ];
        row.extend(self.ndcg.iter().map(|(_, v)| v.to_string()));
        row.extend([self.n_users_evaluated.to_string(), self.protocol.clone()]);
        ReportTable {
            columns: self.columns(),
            rows: vec![row],
        }
    }
}

/// A CSV report: a header plus rows of equal width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn csv_field(s: &str) -> Result<&str, EvalError> {
    if s.contains([',', '\n', '"']) {
        return Err(EvalError::Invalid(format!(
            "report field `{s}` contains a separator"
        )));
    }
    Ok(s)
}

impl ReportTable {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<(), EvalError> {
        let line = |fields: &[String]| -> Result<String, EvalError> {
            Ok(fields
                .iter()
                .map(|f| csv_field(f))
                .collect::<Result<Vec<_>, _>>()?
                .join(","))
        };
        writeln!(out, "{}", line(&self.columns)?)?;
        for row in &self.rows {
            writeln!(out, "{}", line(row)?)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, EvalError> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.ok_or(EvalError::Parse {
            line: 1,
            message: "empty report".into(),
        })?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        if columns.first().map(String::as_str) != Some("model") {
            return Err(EvalError::Parse {
                line: 1,
                message: "header must start with `model`".into(),
            });
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<String> = line.split(',').map(str::to_string).collect();
            if row.len() != columns.len() {
                return Err(EvalError::Parse {
                    line: n + 2,
                    message: format!("{} fields, header has {}", row.len(), columns.len()),
                });
            }
            rows.push(row);
        }
        Ok(ReportTable { columns, rows })
    }

    /// Concatenates tables with identical columns, preserving order.
    pub fn merge(tables: &[ReportTable]) -> Result<ReportTable, EvalError> {
        let first = tables
            .first()
            .ok_or_else(|| EvalError::Invalid("nothing to merge".into()))?;
        let mut merged = ReportTable {
            columns: first.columns.clone(),
            rows: Vec::new(),
        };
        for t in tables {
            if t.columns != first.columns {
                return Err(EvalError::Schema {
                    expected: first.columns.join(","),
                    found: t.columns.join(","),
                });
            }
            merged.rows.extend(t.rows.iter().cloned());
        }
        Ok(merged)
    }
}

impl fmt::Display for ReportTable {
    /// Left-aligned columns, numbers shown to 4 decimals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shown: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|v| match v.parse::<f64>() {
                        Ok(x) if v.contains('.') => format!("{x:.4}"),
                        _ => v.clone(),
                    })
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|c| {
                shown
                    .iter()
                    .map(|r| r[c].len())
                    .chain([self.columns[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |f: &mut fmt::Formatter<'_>, cells: &[String]| {
            let text: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect();
            writeln!(f, "{}", text.join("  ").trim_end())
        };
        line(f, &self.columns)?;
        for r in &shown {
            line(f, r)?;
        }
        Ok(())
    }
}
