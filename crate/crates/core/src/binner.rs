//! Threshold initialization from univariate decision trees.
//!
//! For every continuous feature a small classification tree is grown on that
//! feature alone; its split points become the initial threshold biases. When
//! the tree yields fewer splits than neurons allocated to the feature, the
//! remaining biases come from empirical quantiles.

use serde::{Deserialize, Serialize};

/// Sorted, strictly increasing thresholds for one feature.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BinEdges(pub Vec<f64>);

impl BinEdges {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Weighted Gini gain of splitting `parent` into `left` and the remainder,
/// from class counts: `Σl²/nl + Σr²/nr − Σp²/n`.
pub(crate) fn gini_gain(parent: &[usize], left: &[usize]) -> f64 {
    let n: usize = parent.iter().sum();
    let nl: usize = left.iter().sum();
    let nr = n - nl;
    if nl == 0 || nr == 0 {
        return 0.0;
    }
    let mut sl = 0.0;
    let mut sr = 0.0;
    let mut sp = 0.0;
    for (&p, &l) in parent.iter().zip(left) {
        let r = p - l;
        sl += (l * l) as f64;
        sr += (r * r) as f64;
        sp += (p * p) as f64;
    }
    sl / nl as f64 + sr / nr as f64 - sp / n as f64
}

/// Gains at or below this are treated as no improvement.
const MIN_GAIN: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
struct Split {
    gain: f64,
    threshold: f64,
    /// Number of sorted samples going left.
    cut: usize,
}

/// Best split of `values` (sorted ascending, paired with `labels`).
fn best_split(values: &[f64], labels: &[usize], n_classes: usize) -> Option<Split> {
    let mut parent = vec![0usize; n_classes];
    for &l in labels {
        parent[l] += 1;
    }
    let mut left = vec![0usize; n_classes];
    let mut best: Option<Split> = None;
    for i in 0..values.len().saturating_sub(1) {
        left[labels[i]] += 1;
        if values[i] == values[i + 1] {
            continue;
        }
        let gain = gini_gain(&parent, &left);
        let threshold = 0.5 * (values[i] + values[i + 1]);
        // candidates arrive in increasing threshold order, so strict `>` keeps the smaller on ties
        if gain > MIN_GAIN && best.is_none_or(|b| gain > b.gain) {
            best = Some(Split { gain, threshold, cut: i + 1 });
        }
    }
    best
}

/// Grows a best-first univariate Gini tree with at most `max_leaves` leaves and
/// returns its split thresholds in increasing order.
pub fn fit_tree_bins(feature: &[f64], labels: &[usize], max_leaves: usize) -> BinEdges {
    assert_eq!(feature.len(), labels.len(), "feature/label length mismatch");
    if feature.is_empty() || max_leaves < 2 {
        return BinEdges::default();
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut order: Vec<usize> = (0..feature.len()).collect();
    order.sort_by(|&a, &b| feature[a].total_cmp(&feature[b]));
    let values: Vec<f64> = order.iter().map(|&i| feature[i]).collect();
    let sorted_labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();

    // leaves are contiguous ranges of the sorted sample
    let mut leaves: Vec<(usize, usize, Option<Split>)> = Vec::new();
    let split_of = |lo: usize, hi: usize| best_split(&values[lo..hi], &sorted_labels[lo..hi], n_classes);
    leaves.push((0, values.len(), split_of(0, values.len())));
    let mut edges = Vec::new();
    while leaves.len() < max_leaves {
        let pick = leaves
            .iter()
            .enumerate()
            .filter_map(|(i, (_, _, s))| s.map(|s| (i, s)))
            .fold(None::<(usize, Split)>, |acc, (i, s)| match acc {
                Some((_, b)) if s.gain < b.gain || (s.gain == b.gain && s.threshold >= b.threshold) => acc,
                _ => Some((i, s)),
            });
        let Some((idx, split)) = pick else { break };
        let (lo, hi, _) = leaves.swap_remove(idx);
        let mid = lo + split.cut;
        edges.push(split.threshold);
        leaves.push((lo, mid, split_of(lo, mid)));
        leaves.push((mid, hi, split_of(mid, hi)));
    }
    edges.sort_by(f64::total_cmp);
    BinEdges(edges)
}

/// Linear-interpolation quantile of a sorted sample.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Extends `edges` to exactly `neurons_per_feature` thresholds using
/// equally spaced quantiles of `feature`, skipping values already present.
/// If the feature has too few distinct quantiles, the widest remaining gap in
/// `[0,1]` is bisected. Surplus edges beyond `neurons_per_feature` are dropped
/// from the end.
pub fn pad_edges(edges: &BinEdges, feature: &[f64], neurons_per_feature: usize) -> BinEdges {
    let mut out: Vec<f64> = edges.0.iter().copied().take(neurons_per_feature).collect();
    let needed = neurons_per_feature - out.len();
    if needed > 0 && !feature.is_empty() {
        let mut sorted = feature.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut grid = needed + 1;
        // densify the probability grid until enough new values appear
        while out.len() < neurons_per_feature && grid <= 4 * (needed + 1) + 16 {
            let candidates: Vec<f64> = (1..grid).map(|i| quantile(&sorted, i as f64 / grid as f64)).collect();
            let mut fresh: Vec<f64> = Vec::new();
            for q in candidates {
                if !out.contains(&q) && !fresh.contains(&q) {
                    fresh.push(q);
                }
            }
            if fresh.len() >= neurons_per_feature - out.len() {
                // take an evenly spread subset of the fresh candidates
                let want = neurons_per_feature - out.len();
                let step = fresh.len() as f64 / want as f64;
                for k in 0..want {
                    let pick = ((k as f64 + 0.5) * step).floor() as usize;
                    out.push(fresh[pick.min(fresh.len() - 1)]);
                }
            } else {
                grid += 1;
            }
        }
    }
    while out.len() < neurons_per_feature {
        let mut points = out.clone();
        points.push(0.0);
        points.push(1.0);
        points.sort_by(f64::total_cmp);
        points.dedup();
        let (a, b) = points
            .windows(2)
            .map(|w| (w[0], w[1]))
            .fold((0.0, 0.0), |best, (a, b)| if b - a > best.1 - best.0 { (a, b) } else { best });
        out.push(0.5 * (a + b));
    }
    out.sort_by(f64::total_cmp);
    BinEdges(out)
}
