//! Ranking, correlation and clustering metrics on plain scores.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Relevance judgments of one query: doc id → graded relevance.
pub type Judgments = BTreeMap<String, u32>;

/// Document indices sorted by descending score, ties by ascending id.
pub fn rank_by_score(scores: &[f64], ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    order
}

fn gain(rel: u32) -> f64 {
    2f64.powi(rel as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// nDCG@k with gain `2^rel - 1` and discount `log2(rank + 1)`. The ideal
/// ordering is taken over every judged document, retrieved or not. `None`
/// when no judged document is relevant.
pub fn ndcg_at_k(ranked: &[&str], judged: &Judgments, k: usize) -> Option<f64> {
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&r| r > 0).collect();
    if ideal.is_empty() {
        return None;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| gain(r) / discount(i + 1))
        .sum();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, id)| gain(judged.get(*id).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    Some(dcg / idcg)
}

/// Fraction of judged-relevant documents found in the top `k`.
pub fn recall_at_k(ranked: &[&str], judged: &Judgments, k: usize) -> Option<f64> {
    let relevant = judged.values().filter(|&&r| r > 0).count();
    if relevant == 0 {
        return None;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|id| judged.get(**id).is_some_and(|&r| r > 0))
        .count();
    Some(hits as f64 / relevant as f64)
}

/// Average precision of binary `labels` ranked by `scores`.
///
/// Tied scores form one threshold, so the result does not depend on input
/// order: `AP = Σ_t (R_t - R_{t-1}) · P_t` over distinct score thresholds.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Input(
            "average precision needs a positive label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap, mut i) = (0usize, 0usize, 0.0, 0);
    while i < order.len() {
        let mut j = i;
        let mut new_tp = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            new_tp += usize::from(labels[order[j]]);
            j += 1;
        }
        tp += new_tp;
        seen += j - i;
        ap += new_tp as f64 / positives as f64 * (tp as f64 / seen as f64);
        i = j;
    }
    Ok(ap)
}

/// Best accuracy of the rule `score > t` over every distinct cut of the
/// sorted unique scores (below the minimum, midpoints, at the maximum).
/// Returns `(accuracy, threshold)`.
pub fn best_threshold_accuracy(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    check_lengths(scores.len(), labels.len())?;
    if scores.is_empty() {
        return Err(Error::Input("no scores".into()));
    }
    let mut uniq: Vec<f64> = scores.to_vec();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    let mut cuts = vec![uniq[0] - 1.0];
    cuts.extend(uniq.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    cuts.push(uniq[uniq.len() - 1]);
    let n = scores.len() as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for t in cuts {
        let correct = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &l)| (s > t) == l)
            .count();
        let acc = correct as f64 / n;
        if acc > best.0 {
            best = (acc, t);
        }
    }
    Ok(best)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Input(format!(
            "length mismatch: {a} scores, {b} labels"
        )));
    }
    Ok(())
}

/// 1-based ranks in ascending order, tied values sharing their mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mean;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::Input("correlation needs at least two points".into()));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Domain(
            "correlation undefined for constant input".into(),
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho as the Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a.len(), b.len())?;
    pearson(&average_ranks(a), &average_ranks(b))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

/// Homogeneity, completeness and their harmonic mean from the contingency
/// table of true classes against predicted clusters.
pub fn v_measure<A: Ord, B: Ord>(truth: &[A], pred: &[B]) -> Result<VMeasure> {
    check_lengths(truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::Input("v-measure of an empty labelling".into()));
    }
    let n = truth.len() as f64;
    let mut joint: BTreeMap<(&A, &B), usize> = BTreeMap::new();
    let mut classes: BTreeMap<&A, usize> = BTreeMap::new();
    let mut clusters: BTreeMap<&B, usize> = BTreeMap::new();
    for (a, b) in truth.iter().zip(pred) {
        *joint.entry((a, b)).or_default() += 1;
        *classes.entry(a).or_default() += 1;
        *clusters.entry(b).or_default() += 1;
    }
    let h_c = entropy(classes.values().copied(), n);
    let h_k = entropy(clusters.values().copied(), n);
    let h_ck: f64 = joint
        .iter()
        .map(|((_, b), &c)| {
            let nk = clusters[b] as f64;
            -(c as f64 / n) * (c as f64 / nk).ln()
        })
        .sum();
    let h_kc: f64 = joint
        .iter()
        .map(|((a, _), &c)| {
            let nc = classes[a] as f64;
            -(c as f64 / n) * (c as f64 / nc).ln()
        })
        .sum();
    let homogeneity = if h_c == 0.0 { 1.0 } else { 1.0 - h_ck / h_c };
    let completeness = if h_k == 0.0 { 1.0 } else { 1.0 - h_kc / h_k };
    let v = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    Ok(VMeasure {
        homogeneity: homogeneity.clamp(0.0, 1.0),
        completeness: completeness.clamp(0.0, 1.0),
        v_measure: v.clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn judged(pairs: &[(&str, u32)]) -> Judgments {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn perfect_ranking() {
        let j = judged(&[("a", 1)]);
        assert_eq!(ndcg_at_k(&["a", "b"], &j, 10), Some(1.0));
        assert_eq!(recall_at_k(&["a", "b"], &j, 100), Some(1.0));
    }

    #[test]
    fn unreachable_relevance() {
        let j = judged(&[("missing", 1)]);
        assert_eq!(recall_at_k(&["a", "b"], &j, 100), Some(0.0));
        assert_eq!(ndcg_at_k(&["a", "b"], &j, 10), Some(0.0));
        assert_eq!(ndcg_at_k(&["a"], &judged(&[("a", 0)]), 10), None);
    }

    #[test]
    fn ties_broken_by_id() {
        let ids: Vec<String> = ["b", "a", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(rank_by_score(&[1.0, 1.0, 2.0], &ids), [2, 1, 0]);
    }

    #[test]
    fn ap_closed_forms() {
        for r in 1..=6 {
            let mut labels = vec![false; 6];
            labels[r - 1] = true;
            let scores: Vec<f64> = (0..6).map(|i| -(i as f64)).collect();
            assert!((average_precision(&scores, &labels).unwrap() - 1.0 / r as f64).abs() < 1e-15);
        }
        let ap = average_precision(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap();
        assert_eq!(ap, 1.0);
        assert!(average_precision(&[1.0], &[false]).is_err());
    }

    #[test]
    fn threshold_accuracy_rules() {
        let (acc, _) =
            best_threshold_accuracy(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(acc, 1.0);
        let (acc, _) =
            best_threshold_accuracy(&[0.5; 5], &[true, false, false, true, false]).unwrap();
        assert_eq!(acc, 0.6);
    }

    #[test]
    fn spearman_extremes() {
        let g = [1.0, 2.5, 2.5, 4.0, 5.0];
        assert!((spearman(&g, &g).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        assert!((spearman(&g, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(spearman(&[1.0, 1.0, 1.0], &g[..3]).is_err());
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn v_measure_extremes() {
        let truth = [0, 0, 1, 1, 2, 2];
        let renamed = ["x", "x", "z", "z", "y", "y"];
        assert!((v_measure(&truth, &renamed).unwrap().v_measure - 1.0).abs() < 1e-15);
        let one = v_measure(&truth, &[7; 6]).unwrap();
        assert_eq!(one.homogeneity, 0.0);
        assert_eq!(one.v_measure, 0.0);
    }
}
