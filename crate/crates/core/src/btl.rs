//! Bradley-Terry-Luce strengths from pairwise comparisons, fitted by
//! minorization-maximization, and their mapping onto `[0, 1]` trait scores.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::traits::{Trait, TraitVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairwiseComparison {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub video_a: String,
    pub video_b: String,
    pub winner: Winner,
    #[serde(default)]
    pub worker_id: String,
}

impl PairwiseComparison {
    pub fn winner_id(&self) -> &str {
        match self.winner {
            Winner::A => &self.video_a,
            Winner::B => &self.video_b,
        }
    }

    pub fn loser_id(&self) -> &str {
        match self.winner {
            Winner::A => &self.video_b,
            Winner::B => &self.video_a,
        }
    }

    pub fn swapped(&self) -> Self {
        PairwiseComparison {
            winner: match self.winner {
                Winner::A => Winner::B,
                Winner::B => Winner::A,
            },
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BtlOptions {
    /// One virtual win and one virtual loss per item against a unit-strength phantom.
    pub regularize: bool,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for BtlOptions {
    fn default() -> Self {
        BtlOptions {
            regularize: true,
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtlFit {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    /// Positive, summing to the number of items.
    pub strengths: BTreeMap<String, f64>,
    pub normalized_scores: BTreeMap<String, f64>,
    /// Data log-likelihood at the fitted strengths.
    pub log_likelihood: f64,
    /// Objective after each sweep (includes the virtual comparisons when regularized).
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub normalization: String,
}

pub const NORMALIZATION: &str = "min-max of log-strength";

pub fn btl_probability(w_a: f64, w_b: f64) -> f64 {
    w_a / (w_a + w_b)
}

/// Line-delimited JSON records with keys `trait, video_a, video_b, winner, worker_id`.
pub fn parse_comparisons(text: &str) -> Result<Vec<PairwiseComparison>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: PairwiseComparison = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if c.video_a == c.video_b {
            return Err(Error::Validation(format!("line {}: video compared with itself ({})", i + 1, c.video_a)));
        }
        out.push(c);
    }
    Ok(out)
}

struct Graph {
    ids: Vec<String>,
    wins: Vec<f64>,
    /// Symmetric pair counts.
    pairs: BTreeMap<(usize, usize), f64>,
    beats: Vec<BTreeSet<usize>>,
}

fn build_graph(comparisons: &[PairwiseComparison]) -> Result<Graph> {
    let ids: Vec<String> = comparisons
        .iter()
        .flat_map(|c| [c.video_a.clone(), c.video_b.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n = ids.len();
    let mut g = Graph {
        wins: vec![0.0; n],
        pairs: BTreeMap::new(),
        beats: vec![BTreeSet::new(); n],
        ids: ids.clone(),
    };
    for c in comparisons {
        if c.video_a == c.video_b {
            return Err(Error::Validation(format!("video {} compared with itself", c.video_a)));
        }
        let w = index[c.winner_id()];
        let l = index[c.loser_id()];
        g.wins[w] += 1.0;
        *g.pairs.entry((w.min(l), w.max(l))).or_insert(0.0) += 1.0;
        g.beats[w].insert(l);
    }
    Ok(g)
}

fn components(g: &Graph) -> Vec<Vec<String>> {
    let n = g.ids.len();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in g.pairs.keys() {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = vec![];
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(v) = stack.pop() {
            comp.push(g.ids[v].clone());
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        comp.sort();
        out.push(comp);
    }
    out
}

fn reach_all(n: usize, edges: &[BTreeSet<usize>]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &u in &edges[v] {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn strongly_connected(g: &Graph) -> bool {
    let n = g.ids.len();
    let mut rev = vec![BTreeSet::new(); n];
    for (w, ls) in g.beats.iter().enumerate() {
        for &l in ls {
            rev[l].insert(w);
        }
    }
    reach_all(n, &g.beats) && reach_all(n, &rev)
}

fn data_log_likelihood(g: &Graph, comparisons: &[PairwiseComparison], w: &[f64]) -> f64 {
    let index: BTreeMap<&str, usize> = g.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    comparisons
        .iter()
        .map(|c| {
            let a = w[index[c.winner_id()]];
            let b = w[index[c.loser_id()]];
            (a / (a + b)).ln()
        })
        .sum()
}

fn objective(g: &Graph, w: &[f64], regularize: bool) -> f64 {
    let mut ll: f64 = g.wins.iter().zip(w).map(|(k, wi)| k * wi.ln()).sum();
    for (&(a, b), &n) in &g.pairs {
        ll -= n * (w[a] + w[b]).ln();
    }
    if regularize {
        for &wi in w {
            ll += wi.ln() - 2.0 * (wi + 1.0).ln();
        }
    }
    ll
}

/// Fits one trait's strengths. All comparisons must concern the same trait.
pub fn fit_btl(comparisons: &[PairwiseComparison], options: &BtlOptions) -> Result<BtlFit> {
    let Some(first) = comparisons.first() else {
        return Err(Error::Validation("no comparisons to fit".into()));
    };
    let trait_ = first.trait_;
    if let Some(c) = comparisons.iter().find(|c| c.trait_ != trait_) {
        return Err(Error::Validation(format!("mixed traits {} and {}", trait_.name(), c.trait_.name())));
    }
    let g = build_graph(comparisons)?;
    let comps = components(&g);
    if comps.len() > 1 {
        return Err(Error::Disconnected(comps));
    }
    if !options.regularize && !strongly_connected(&g) {
        return Err(Error::Validation(
            "without regularization every item must be reachable through wins and losses".into(),
        ));
    }
    let n = g.ids.len();
    let mut nbrs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (&(a, b), &c) in &g.pairs {
        nbrs[a].push((b, c));
        nbrs[b].push((a, c));
    }
    let extra_wins = if options.regularize { 1.0 } else { 0.0 };
    let mut w = vec![1.0; n];
    let mut trace = vec![objective(&g, &w, options.regularize)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let mut next: Vec<f64> = (0..n)
            .map(|i| {
                let mut denom: f64 = nbrs[i].iter().map(|&(j, c)| c / (w[i] + w[j])).sum();
                if options.regularize {
                    denom += 2.0 / (w[i] + 1.0);
                }
                (g.wins[i] + extra_wins) / denom
            })
            .collect();
        if !options.regularize {
            let s: f64 = next.iter().sum();
            next.iter_mut().for_each(|v| *v *= n as f64 / s);
        }
        if next.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Numeric(format!("strengths left the positive reals at sweep {iterations}")));
        }
        let change = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs() / b)
            .fold(0.0, f64::max);
        w = next;
        trace.push(objective(&g, &w, options.regularize));
        if change < options.tolerance {
            converged = true;
            break;
        }
    }
    let log_likelihood = data_log_likelihood(&g, comparisons, &w);
    let s: f64 = w.iter().sum();
    let strengths: BTreeMap<String, f64> = g.ids.iter().cloned().zip(w.iter().map(|v| v * n as f64 / s)).collect();
    Ok(BtlFit {
        trait_,
        normalized_scores: normalize_scores(&strengths),
        strengths,
        log_likelihood,
        objective_trace: trace,
        iterations,
        converged,
        normalization: NORMALIZATION.into(),
    })
}

/// Min-max over log-strengths; no spread maps everything to 0.5.
pub fn normalize_scores(strengths: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let logs: BTreeMap<&String, f64> = strengths.iter().map(|(k, v)| (k, v.ln())).collect();
    let lo = logs.values().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    logs.into_iter()
        .map(|(k, v)| {
            let s = if spread <= 1e-12 * (1.0 + hi.abs()) { 0.5 } else { ((v - lo) / spread).clamp(0.0, 1.0) };
            (k.clone(), s)
        })
        .collect()
}

/// Fits every trait present in `comparisons`.
pub fn fit_all_traits(comparisons: &[PairwiseComparison], options: &BtlOptions) -> Result<BTreeMap<Trait, BtlFit>> {
    let mut by_trait: BTreeMap<usize, Vec<PairwiseComparison>> = BTreeMap::new();
    for c in comparisons {
        by_trait.entry(c.trait_.index()).or_default().push(c.clone());
    }
    by_trait
        .into_values()
        .map(|cs| {
            let fit = fit_btl(&cs, options)?;
            Ok((fit.trait_, fit))
        })
        .collect()
}

/// Comparisons for every unordered pair, `n_per_pair` Bernoulli draws each,
/// with the listed order of the two items randomized.
pub fn simulate_comparisons(
    true_strengths: &BTreeMap<String, f64>,
    n_per_pair: usize,
    trait_: Trait,
    seed: u64,
) -> Result<Vec<PairwiseComparison>> {
    if true_strengths.len() < 2 {
        return Err(Error::Validation("need at least two items".into()));
    }
    if let Some((k, v)) = true_strengths.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Validation(format!("strength of {k} is {v}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<(&String, f64)> = true_strengths.iter().map(|(k, v)| (k, *v)).collect();
    let mut out = Vec::with_capacity(items.len() * (items.len() - 1) / 2 * n_per_pair);
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            for k in 0..n_per_pair {
                let (a, b) = if rng.random::<bool>() { (items[i], items[j]) } else { (items[j], items[i]) };
                let a_wins = rng.random::<f64>() < btl_probability(a.1, b.1);
                out.push(PairwiseComparison {
                    trait_,
                    video_a: a.0.clone(),
                    video_b: b.0.clone(),
                    winner: if a_wins { Winner::A } else { Winner::B },
                    worker_id: format!("sim{}", k % 7),
                });
            }
        }
    }
    Ok(out)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Per-video score table, one JSON object per line after a metadata line.
pub fn score_table_jsonl(fits: &BTreeMap<Trait, BtlFit>) -> String {
    let meta: BTreeMap<&str, serde_json::Value> = fits
        .values()
        .map(|f| {
            (
                f.trait_.name(),
                json!({"iterations": f.iterations, "converged": f.converged, "log_likelihood": f.log_likelihood}),
            )
        })
        .collect();
    let mut out = serde_json::to_string(&json!({"normalization": NORMALIZATION, "fits": meta})).expect("json");
    out.push('\n');
    let ids: BTreeSet<&String> = fits.values().flat_map(|f| f.normalized_scores.keys()).collect();
    for id in ids {
        let scores: BTreeMap<&str, f64> = fits
            .values()
            .filter_map(|f| f.normalized_scores.get(id).map(|s| (f.trait_.name(), *s)))
            .collect();
        out.push_str(&serde_json::to_string(&json!({"id": id, "scores": scores})).expect("json"));
        out.push('\n');
    }
    out
}

/// Sets labels on records scored for all five traits; returns how many were set.
pub fn merge_scores(manifest: &mut DatasetManifest, fits: &BTreeMap<Trait, BtlFit>) -> Result<usize> {
    let mut merged = 0;
    for r in &mut manifest.records {
        let vals: Option<Vec<f64>> = Trait::ALL
            .iter()
            .map(|t| fits.get(t).and_then(|f| f.normalized_scores.get(&r.id).copied()))
            .collect();
        if let Some(v) = vals {
            r.labels = Some(TraitVector::from_slice(&v)?);
            merged += 1;
        }
    }
    Ok(merged)
}
