//! Meta-evaluation: agreement between metric scores and human judgments, with
//! input-level percentile bootstrap intervals, plus alignment/uniformity
//! diagnostics for an embedding space.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{cos_sim, Embedder};
use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;
pub const DEFAULT_UNIFORMITY_PAIRS: usize = 50_000;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::TooFewPoints(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input".into()));
    }
    Ok(())
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share the mean of their ranks.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of fractional ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&fractional_ranks(x), &fractional_ranks(y))
}

/// Integer pair counts behind Kendall's tau-b.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TauCounts {
    /// Total pairs `n(n-1)/2`.
    pub pairs: i64,
    /// Concordant minus discordant pairs.
    pub score: i64,
    /// Pairs tied in x.
    pub ties_x: i64,
    /// Pairs tied in y.
    pub ties_y: i64,
}

impl TauCounts {
    pub fn tau_b(&self) -> Result<f64> {
        let dx = self.pairs - self.ties_x;
        let dy = self.pairs - self.ties_y;
        if dx == 0 || dy == 0 {
            return Err(Error::AllTied);
        }
        Ok(self.score as f64 / ((dx as f64) * (dy as f64)).sqrt())
    }
}

fn tied_pairs(run: i64) -> i64 {
    run * (run - 1) / 2
}

/// Pair counts in O(n log n) (Knight's algorithm): sort by (x, y), then count
/// the inversions in y with a merge sort.
pub fn kendall_counts(x: &[f64], y: &[f64]) -> Result<TauCounts> {
    check_pair(x, y)?;
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let mut ties_x = 0i64;
    let mut ties_xy = 0i64;
    let (mut run_x, mut run_xy) = (1i64, 1i64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                ties_xy += tied_pairs(run_xy);
                run_xy = 1;
            }
        } else {
            ties_x += tied_pairs(run_x);
            ties_xy += tied_pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    ties_x += tied_pairs(run_x);
    ties_xy += tied_pairs(run_xy);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut ties_y = 0i64;
    let mut run_y = 1i64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            ties_y += tied_pairs(run_y);
            run_y = 1;
        }
    }
    ties_y += tied_pairs(run_y);

    let pairs = tied_pairs(n as i64);
    let score = pairs - ties_x - ties_y + ties_xy - 2 * swaps;
    Ok(TauCounts {
        pairs,
        score,
        ties_x,
        ties_y,
    })
}

/// Sort ascending, returning the number of strictly inverted pairs.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(left, bl) + merge_count(right, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall's tau-b (tie-corrected).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    kendall_counts(x, y)?.tau_b()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationStat {
    Pearson,
    Spearman,
    Kendall,
}

impl CorrelationStat {
    pub fn compute(self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            CorrelationStat::Pearson => pearson(x, y),
            CorrelationStat::Spearman => spearman(x, y),
            CorrelationStat::Kendall => kendall_tau(x, y),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CorrelationStat::Pearson => "pearson",
            CorrelationStat::Spearman => "spearman",
            CorrelationStat::Kendall => "kendall",
        }
    }
}

/// One (metric, human) observation. `system_id` distinguishes several
/// systems' outputs for the same input document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedItem {
    pub input_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_id: Option<String>,
    pub metric_value: f64,
    pub human_value: f64,
}

/// Metric scores paired with human scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedScores {
    items: Vec<PairedItem>,
}

impl PairedScores {
    pub fn new(items: Vec<PairedItem>) -> Result<Self> {
        if items.len() < 2 {
            return Err(Error::TooFewPoints(items.len()));
        }
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert((item.input_id.as_str(), item.system_id.as_deref())) {
                return Err(Error::DuplicateId(item.input_id.clone()));
            }
            if !item.metric_value.is_finite() || !item.human_value.is_finite() {
                return Err(Error::NonFinite(item.input_id.clone()));
            }
        }
        Ok(PairedScores { items })
    }

    /// Convenience constructor for a single system: ids are "0", "1", ...
    pub fn from_vectors(metric: &[f64], human: &[f64]) -> Result<Self> {
        if metric.len() != human.len() {
            return Err(Error::LengthMismatch(metric.len(), human.len()));
        }
        Self::new(
            metric
                .iter()
                .zip(human)
                .enumerate()
                .map(|(i, (&m, &h))| PairedItem {
                    input_id: i.to_string(),
                    system_id: None,
                    metric_value: m,
                    human_value: h,
                })
                .collect(),
        )
    }

    pub fn items(&self) -> &[PairedItem] {
        &self.items
    }

    pub fn metric_values(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.metric_value).collect()
    }

    pub fn human_values(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.human_value).collect()
    }

    /// Item indices grouped by input id, in first-appearance order.
    fn input_groups(&self) -> Vec<Vec<usize>> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, item) in self.items.iter().enumerate() {
            let entry = groups.entry(item.input_id.as_str()).or_default();
            if entry.is_empty() {
                order.push(item.input_id.as_str());
            }
            entry.push(i);
        }
        order.into_iter().map(|id| groups[id].clone()).collect()
    }
}

/// Correlation coefficients with a bootstrap interval for one of them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationResult {
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub kendall_tau: f64,
    /// Statistic the interval is computed for.
    pub stat: CorrelationStat,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_resamples: usize,
    /// Resamples skipped because the statistic was undefined.
    pub n_degenerate: usize,
    pub level: f64,
    pub method: &'static str,
    pub n_items: usize,
}

/// Linear-interpolation quantile of sorted data (`q` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Deterministic RNG for resample `index` of a run seeded with `seed`.
fn resample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Input-level percentile bootstrap: input ids are drawn with replacement and
/// every item of a drawn input enters the resample.
pub fn bootstrap_ci(
    paired: &PairedScores,
    stat: CorrelationStat,
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<CorrelationResult> {
    if n_resamples == 0 {
        return Err(Error::Config("n_resamples must be at least 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let metric = paired.metric_values();
    let human = paired.human_values();
    let pearson_r = pearson(&metric, &human)?;
    let spearman_rho = spearman(&metric, &human)?;
    let kendall = kendall_tau(&metric, &human)?;

    let groups = paired.input_groups();
    let stats: Vec<Option<f64>> = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = resample_rng(seed, r);
            let mut xs = Vec::with_capacity(metric.len());
            let mut ys = Vec::with_capacity(metric.len());
            for _ in 0..groups.len() {
                for &i in &groups[rng.gen_range(0..groups.len())] {
                    xs.push(metric[i]);
                    ys.push(human[i]);
                }
            }
            stat.compute(&xs, &ys).ok()
        })
        .collect();

    let mut valid: Vec<f64> = stats.into_iter().flatten().collect();
    let degenerate = n_resamples - valid.len();
    if 2 * degenerate > n_resamples || valid.is_empty() {
        return Err(Error::TooFewValid {
            degenerate,
            total: n_resamples,
        });
    }
    valid.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let tail = (1.0 - level) / 2.0;
    Ok(CorrelationResult {
        pearson_r,
        spearman_rho,
        kendall_tau: kendall,
        stat,
        ci_low: Some(quantile_sorted(&valid, tail)),
        ci_high: Some(quantile_sorted(&valid, 1.0 - tail)),
        n_resamples,
        n_degenerate: degenerate,
        level,
        method: "percentile",
        n_items: paired.items().len(),
    })
}

/// Mean cosine similarity over name-variation pairs.
pub fn alignment(pairs: &[(String, String)], embedder: &Embedder) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut total = 0.0;
    for (a, b) in pairs {
        let v = embedder.embed(&[a.as_str(), b.as_str()])?;
        total += cos_sim(&v[0], &v[1])?;
    }
    Ok(total / pairs.len() as f64)
}

/// Mean cosine similarity over `n_pairs` random pairs of distinct phrases,
/// drawn with replacement across draws. Duplicate phrase texts are collapsed
/// first.
pub fn uniformity(
    phrases: &[String],
    embedder: &Embedder,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    let mut seen = HashSet::new();
    let distinct: Vec<&str> = phrases
        .iter()
        .map(String::as_str)
        .filter(|p| seen.insert(*p))
        .collect();
    if distinct.len() < 2 {
        return Err(Error::TooFewPhrases(distinct.len()));
    }
    if n_pairs == 0 {
        return Err(Error::Config("n_pairs must be at least 1".into()));
    }
    let vectors = embedder.embed(&distinct)?;
    let n = distinct.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_pairs {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        total += cos_sim(&vectors[i], &vectors[j])?;
    }
    Ok(total / n_pairs as f64)
}
