//! Retrieval metrics (mAP, mINP, rank-1) and the leave-one-out query
//! protocol over fused pair embeddings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("embedding dims differ: {0} vs {1}")]
    Dim(usize, usize),
    #[error("expected a [rows, dim] matrix, got shape {0:?}")]
    Shape(Vec<usize>),
    #[error("{0} labels for {1} embeddings")]
    Labels(usize, usize),
    #[error("cannot split {n} identities into {k} folds")]
    Folds { n: usize, k: usize },
    #[error("no query has a match in its gallery")]
    NoQueries,
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

/// Pairwise distances with the indices of rows that had zero norm.
#[derive(Clone, Debug)]
pub struct Distances {
    pub values: Tensor<f64>,
    pub zero_norm_queries: Vec<usize>,
    pub zero_norm_gallery: Vec<usize>,
}

fn normalized_rows(t: &Tensor<f64>) -> Result<(Vec<Vec<f64>>, Vec<usize>), EvalError> {
    let &[n, e] = t.shape() else {
        return Err(EvalError::Shape(t.shape().to_vec()));
    };
    let mut zero = Vec::new();
    let rows = (0..n)
        .map(|i| {
            let row = &t.data()[i * e..(i + 1) * e];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                zero.push(i);
                vec![0.0; e]
            } else {
                row.iter().map(|v| v / norm).collect()
            }
        })
        .collect();
    Ok((rows, zero))
}

/// Euclidean distances between L2-normalized rows. Zero rows stay zero and
/// are reported so the caller can warn.
pub fn distance_matrix(queries: &Tensor<f64>, gallery: &Tensor<f64>) -> Result<Distances, EvalError> {
    let (q, zq) = normalized_rows(queries)?;
    let (g, zg) = normalized_rows(gallery)?;
    let (dq, dg) = (queries.shape()[1], gallery.shape()[1]);
    if dq != dg {
        return Err(EvalError::Dim(dq, dg));
    }
    let data: Vec<f64> = q
        .par_iter()
        .flat_map_iter(|a| {
            g.iter()
                .map(move |b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        })
        .collect();
    Ok(Distances {
        values: Tensor::new(&[q.len(), g.len()], data).expect("q x g values"),
        zero_norm_queries: zq,
        zero_norm_gallery: zg,
    })
}

/// A query's gallery sorted by ascending distance.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub query: usize,
    pub gallery: Vec<usize>,
    pub matches: Vec<bool>,
}

/// Ranks `candidates` by `distance`; ties keep the candidate order.
pub fn rank(query: usize, candidates: &[usize], distance: impl Fn(usize) -> f64, is_match: impl Fn(usize) -> bool) -> RankingResult {
    let mut order: Vec<(f64, usize)> = candidates.iter().map(|&g| (distance(g), g)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let gallery: Vec<usize> = order.into_iter().map(|(_, g)| g).collect();
    let matches = gallery.iter().map(|&g| is_match(g)).collect();
    RankingResult { query, gallery, matches }
}

/// Mean over match positions of the precision at that position; `None`
/// without matches.
pub fn average_precision(matches: &[bool]) -> Option<f64> {
    let positions: Vec<usize> = matches.iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| k + 1).collect();
    if positions.is_empty() {
        return None;
    }
    let m = positions.len();
    Some(rational_ap(&positions).unwrap_or_else(|| {
        positions.iter().enumerate().map(|(i, &k)| (i + 1) as f64 / k as f64).sum::<f64>() / m as f64
    }))
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Exact rational sum, rounded once at the end; `None` when the terms
/// overflow 128 bits or the result does not convert exactly.
fn rational_ap(positions: &[usize]) -> Option<f64> {
    let (mut num, mut den) = (0u128, 1u128);
    for (i, &k) in positions.iter().enumerate() {
        let (hits, k) = ((i + 1) as u128, k as u128);
        num = num.checked_mul(k)?.checked_add(hits.checked_mul(den)?)?;
        den = den.checked_mul(k)?;
        let g = gcd(num, den);
        (num, den) = (num / g, den / g);
    }
    den = den.checked_mul(positions.len() as u128)?;
    let g = gcd(num, den);
    let (num, den) = (num / g, den / g);
    const EXACT: u128 = 1 << f64::MANTISSA_DIGITS;
    (num <= EXACT && den <= EXACT).then(|| num as f64 / den as f64)
}

/// Number of matches over the 1-based rank of the last one.
pub fn inverse_negative_penalty(matches: &[bool]) -> Option<f64> {
    let last = matches.iter().rposition(|&m| m)?;
    let count = matches.iter().filter(|&&m| m).count();
    Some(count as f64 / (last + 1) as f64)
}

pub fn first_match_rank(matches: &[bool]) -> Option<usize> {
    matches.iter().position(|&m| m).map(|p| p + 1)
}

/// Expected AP of a uniformly random ranking of `n` items with `m` matches.
pub fn expected_random_ap(n: usize, m: usize) -> f64 {
    let harmonic: f64 = (1..=n).map(|r| 1.0 / r as f64).sum();
    let nf = n as f64;
    if n == 1 {
        return 1.0;
    }
    (harmonic + (m as f64 - 1.0) / (nf - 1.0) * (nf - harmonic)) / nf
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "mINP")]
    pub minp: f64,
    pub rank1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryRecord {
    pub query_id: String,
    pub identity: usize,
    pub ap: f64,
    pub inp: f64,
    pub first_match: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LooqReport {
    pub metrics: Metrics,
    pub queries: Vec<QueryRecord>,
    /// Queries whose identity has no other pair.
    pub skipped: Vec<String>,
    pub zero_norm: Vec<usize>,
}

/// Ranks every other pair for every pair, from the full distance matrix.
pub fn looq_rankings(embeddings: &Tensor<f64>, labels: &[usize]) -> Result<(Vec<RankingResult>, Vec<usize>), EvalError> {
    let d = distance_matrix(embeddings, embeddings)?;
    let n = embeddings.shape()[0];
    if labels.len() != n {
        return Err(EvalError::Labels(labels.len(), n));
    }
    let dist = d.values.data();
    let rankings = (0..n)
        .into_par_iter()
        .map(|q| {
            let others: Vec<usize> = (0..n).filter(|&g| g != q).collect();
            rank(q, &others, |g| dist[q * n + g], |g| labels[g] == labels[q])
        })
        .collect();
    Ok((rankings, d.zero_norm_queries))
}

/// Leave-one-out query protocol: each pair queries a gallery of all the
/// other pairs.
pub fn looq_evaluate(embeddings: &Tensor<f64>, labels: &[usize], query_ids: &[String]) -> Result<LooqReport, EvalError> {
    if query_ids.len() != labels.len() {
        return Err(EvalError::Labels(labels.len(), query_ids.len()));
    }
    let (rankings, zero_norm) = looq_rankings(embeddings, labels)?;
    let mut queries = Vec::new();
    let mut skipped = Vec::new();
    for r in &rankings {
        let id = query_ids[r.query].clone();
        match (average_precision(&r.matches), inverse_negative_penalty(&r.matches), first_match_rank(&r.matches)) {
            (Some(ap), Some(inp), Some(first)) => queries.push(QueryRecord {
                query_id: id,
                identity: labels[r.query],
                ap,
                inp,
                first_match: first,
            }),
            _ => skipped.push(id),
        }
    }
    if queries.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let n = queries.len() as f64;
    let metrics = Metrics {
        map: queries.iter().map(|q| q.ap).sum::<f64>() / n,
        minp: queries.iter().map(|q| q.inp).sum::<f64>() / n,
        rank1: queries.iter().filter(|q| q.first_match == 1).count() as f64 / n,
    };
    Ok(LooqReport {
        metrics,
        queries,
        skipped,
        zero_norm,
    })
}

impl LooqReport {
    pub fn query_csv(&self, identities: &[String]) -> String {
        let mut s = String::from("query_id,identity,AP,INP,rank_of_first_match\n");
        for q in &self.queries {
            let name = identities.get(q.identity).cloned().unwrap_or_else(|| q.identity.to_string());
            writeln!(s, "{},{},{},{},{}", q.query_id, name, q.ap, q.inp, q.first_match).expect("string write");
        }
        s
    }
}

/// Summary record written by evaluation runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub protocol: String,
    pub model: String,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "mINP")]
    pub minp: f64,
    pub rank1: f64,
}

impl Summary {
    pub fn new(protocol: &str, model: &str, m: Metrics) -> Self {
        Self {
            protocol: protocol.to_string(),
            model: model.to_string(),
            map: m.map,
            minp: m.minp,
            rank1: m.rank1,
        }
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let io = |msg: String| EvalError::Io {
            path: path.display().to_string(),
            msg,
        };
        let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}

/// Identity-disjoint folds of near-equal size, as (train, validation) pairs.
pub fn kfold_split<T: Clone, R: Rng + ?Sized>(identities: &[T], k: usize, rng: &mut R) -> Result<Vec<(Vec<T>, Vec<T>)>, EvalError> {
    let n = identities.len();
    if k == 0 || k > n {
        return Err(EvalError::Folds { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds
        .iter()
        .enumerate()
        .map(|(f, val)| {
            let train = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, idx)| idx.iter().map(|&i| identities[i].clone()))
                .collect();
            (train, val.iter().map(|&i| identities[i].clone()).collect())
        })
        .collect())
}
