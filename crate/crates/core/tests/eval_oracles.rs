use std::collections::BTreeMap;

use gteforge::eval::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const TOL: f64 = 1e-12;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vecs(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect()
}

fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Selection sort: repeatedly take the best remaining document.
fn oracle_ranking(scores: &[f64], ids: &[String]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..scores.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for j in 1..left.len() {
            let (a, b) = (left[j], left[best]);
            if scores[a] > scores[b] || (scores[a] == scores[b] && ids[a] < ids[b]) {
                best = j;
            }
        }
        out.push(left.remove(best));
    }
    out
}

fn oracle_ndcg(ranked: &[usize], ids: &[String], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let mut dcg = 0.0;
    for (pos, &i) in ranked.iter().take(k).enumerate() {
        let rel = judged.get(&ids[i]).copied().unwrap_or(0) as f64;
        dcg += (rel.exp2() - 1.0) / (pos as f64 + 2.0).log2();
    }
    let mut rels: Vec<f64> = judged.values().map(|&r| r as f64).collect();
    rels.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg: f64 = rels
        .iter()
        .take(k)
        .enumerate()
        .map(|(pos, r)| (r.exp2() - 1.0) / (pos as f64 + 2.0).log2())
        .sum();
    dcg / idcg
}

fn oracle_recall(
    ranked: &[usize],
    ids: &[String],
    judged: &BTreeMap<String, u32>,
    k: usize,
) -> f64 {
    let rel: Vec<&String> = judged
        .iter()
        .filter(|(_, &r)| r > 0)
        .map(|(d, _)| d)
        .collect();
    let top: Vec<&String> = ranked.iter().take(k).map(|&i| &ids[i]).collect();
    rel.iter().filter(|d| top.contains(d)).count() as f64 / rel.len() as f64
}

#[test]
fn retrieval_metrics_match_brute_force() {
    for case in 0..50u64 {
        let mut r = rng(case);
        let (nd, nq) = (20, 5);
        let mut docs = random_vecs(&mut r, nd, 4);
        if case % 2 == 0 {
            // duplicate vectors force exact score ties
            docs[7] = docs[3].clone();
            docs[12] = docs[3].clone();
        }
        let queries = random_vecs(&mut r, nq, 4);
        let doc_ids: Vec<String> = (0..nd).map(|i| format!("d{:02}", (i * 7) % nd)).collect();
        let qids: Vec<String> = (0..nq).map(|i| format!("q{i}")).collect();
        let mut qrels = Qrels::new();
        for q in &qids {
            let j = qrels.entry(q.clone()).or_default();
            for d in &doc_ids {
                if r.random_bool(0.2) {
                    j.insert(d.clone(), 1);
                }
            }
            j.entry(doc_ids[r.random_range(0..nd)].clone()).or_insert(1);
            if case % 3 == 0 {
                j.insert("missing".into(), 2);
            }
        }
        let got = retrieval_metrics(&qids, &queries, &doc_ids, &docs, &qrels, &[10, 100]).unwrap();
        let (mut ndcg, mut recall) = (0.0, 0.0);
        for (q, qv) in qids.iter().zip(&queries) {
            let scores: Vec<f64> = docs.iter().map(|d| oracle_cos(qv, d)).collect();
            let ranked = oracle_ranking(&scores, &doc_ids);
            ndcg += oracle_ndcg(&ranked, &doc_ids, &qrels[q], 10);
            recall += oracle_recall(&ranked, &doc_ids, &qrels[q], 100);
        }
        let (ndcg, recall) = (ndcg / nq as f64, recall / nq as f64);
        assert!(
            (got.ndcg[&10] - ndcg).abs() < TOL,
            "case {case}: {} vs {ndcg}",
            got.ndcg[&10]
        );
        assert!((got.recall[&100] - recall).abs() < TOL, "case {case}");
        assert!((0.0..=1.0).contains(&got.ndcg[&10]));
    }
}

#[test]
fn perfect_ranking_through_embedder() {
    let e = LookupEmbedder::new([
        ("query".to_string(), vec![1.0, 0.0]),
        ("right".to_string(), vec![2.0, 0.1]),
        ("wrong".to_string(), vec![0.0, 1.0]),
    ]);
    let corpus = vec![
        TextRecord {
            id: "a".into(),
            text: "wrong".into(),
        },
        TextRecord {
            id: "b".into(),
            text: "right".into(),
        },
    ];
    let queries = vec![TextRecord {
        id: "q".into(),
        text: "query".into(),
    }];
    let qrels = parse_qrels("q\tb\t1\n", "q.tsv".as_ref()).unwrap();
    let m = eval_retrieval(&e, &corpus, &queries, &qrels, &[10, 100]).unwrap();
    assert_eq!(m.ndcg[&10], 1.0);
    assert_eq!(m.recall[&100], 1.0);
}

/// Mean over relevant items of precision at their rank; valid without ties.
fn oracle_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut hits = 0.0;
    let mut total = 0.0;
    for (rank, &i) in idx.iter().enumerate() {
        if labels[i] {
            hits += 1.0;
            total += hits / (rank + 1) as f64;
        }
    }
    total / hits
}

#[test]
fn map_and_ap_match_definition() {
    for case in 0..50u64 {
        let mut r = rng(100 + case);
        let queries: Vec<(Vec<f64>, Vec<bool>)> = (0..4)
            .map(|_| {
                let s: Vec<f64> = (0..10).map(|_| r.random::<f64>()).collect();
                let mut l: Vec<bool> = (0..10).map(|_| r.random_bool(0.3)).collect();
                l[r.random_range(0..10)] = true;
                (s, l)
            })
            .collect();
        let expect = queries.iter().map(|(s, l)| oracle_ap(s, l)).sum::<f64>() / 4.0;
        assert!((mean_average_precision(&queries).unwrap() - expect).abs() < TOL);

        let s: Vec<f64> = (0..30).map(|_| r.random::<f64>()).collect();
        let mut l: Vec<bool> = (0..30).map(|_| r.random_bool(0.5)).collect();
        l[0] = true;
        l[1] = false;
        let m = pair_classification_metrics(&s, &l).unwrap();
        assert!((m.ap - oracle_ap(&s, &l)).abs() < TOL);
        assert!((0.0..=1.0).contains(&m.accuracy));
    }
}

#[test]
fn ap_ties_are_order_independent() {
    let s = [0.5, 0.9, 0.5, 0.5, 0.1];
    let l = [true, false, false, true, true];
    let base = average_precision(&s, &l).unwrap();
    let perm = [4, 2, 0, 3, 1];
    let ps: Vec<f64> = perm.iter().map(|&i| s[i]).collect();
    let pl: Vec<bool> = perm.iter().map(|&i| l[i]).collect();
    assert_eq!(average_precision(&ps, &pl).unwrap(), base);
    // thresholds 0.9 (R=0, P=0), 0.5 (R=2/3, P=2/4), 0.1 (R=1, P=3/5)
    assert!((base - (2.0 / 3.0 * 0.5 + 1.0 / 3.0 * 0.6)).abs() < TOL);
}

#[test]
fn separable_pair_scores() {
    let m =
        pair_classification_metrics(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
    assert_eq!((m.ap, m.accuracy), (1.0, 1.0));
    assert!(pair_classification_metrics(&[0.1, 0.2], &[true, true]).is_err());
}

fn oracle_rank(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let less = x.iter().filter(|w| *w < v).count() as f64;
            let eq = x.iter().filter(|w| *w == v).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect()
}

fn oracle_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|x| x * x).sum();
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}

#[test]
fn spearman_matches_rank_then_pearson() {
    for case in 0..50u64 {
        let mut r = rng(200 + case);
        let a: Vec<f64> = (0..30)
            .map(|_| (r.random_range(0..8) as f64) * 0.5)
            .collect();
        let b: Vec<f64> = (0..30)
            .map(|_| r.random_range(1.0..5.0f64).round())
            .collect();
        let got = spearman(&a, &b).unwrap();
        let expect = oracle_pearson(&oracle_rank(&a), &oracle_rank(&b));
        assert!((got - expect).abs() < TOL, "case {case}: {got} vs {expect}");
        assert!((-1.0..=1.0).contains(&got));
    }
}

fn oracle_v(truth: &[usize], pred: &[usize]) -> f64 {
    let n = truth.len() as f64;
    let h = |xs: &[usize]| {
        let mut c: BTreeMap<usize, f64> = BTreeMap::new();
        xs.iter().for_each(|x| *c.entry(*x).or_default() += 1.0);
        c.values().map(|v| -(v / n) * (v / n).ln()).sum::<f64>()
    };
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    truth
        .iter()
        .zip(pred)
        .for_each(|(a, b)| *joint.entry((*a, *b)).or_default() += 1.0);
    let count = |xs: &[usize], v: usize| xs.iter().filter(|x| **x == v).count() as f64;
    let mi: f64 = joint
        .iter()
        .map(|(&(a, b), &c)| c / n * (n * c / (count(truth, a) * count(pred, b))).ln())
        .sum();
    let (hc, hk) = (h(truth), h(pred));
    let hom = if hc == 0.0 { 1.0 } else { mi / hc };
    let com = if hk == 0.0 { 1.0 } else { mi / hk };
    if hom + com == 0.0 {
        0.0
    } else {
        2.0 * hom * com / (hom + com)
    }
}

#[test]
fn v_measure_matches_entropy_oracle() {
    for case in 0..50u64 {
        let mut r = rng(300 + case);
        let truth: Vec<usize> = (0..50).map(|_| r.random_range(0..4)).collect();
        let pred: Vec<usize> = (0..50).map(|_| r.random_range(0..5)).collect();
        let got = v_measure(&truth, &pred).unwrap().v_measure;
        assert!((got - oracle_v(&truth, &pred)).abs() < TOL, "case {case}");
    }
}

#[test]
fn classification_probe_properties() {
    let x: Vec<Vec<f64>> = (0..30)
        .map(|i| vec![(i % 3) as f64 * 2.0 - 2.0, 0.1 * i as f64])
        .collect();
    let y: Vec<String> = (0..30).map(|i| format!("c{}", i % 3)).collect();
    let cfg = LogRegConfig::default();
    assert_eq!(classification_accuracy(&x, &y, &x, &y, &cfg).unwrap(), 1.0);

    let constant = vec![vec![0.5, -0.5]; 10];
    let labels: Vec<String> = ["a", "b", "b", "b", "a", "b", "c", "b", "b", "a"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(
        classification_accuracy(&constant, &labels, &constant, &labels, &cfg).unwrap(),
        0.6
    );

    let mut unseen = labels.clone();
    unseen[1] = "zzz".into();
    assert_eq!(
        classification_accuracy(&constant, &labels, &constant, &unseen, &cfg).unwrap(),
        0.5
    );
}

#[test]
fn gaussian_blobs_match_lda_oracle() {
    let mut r = rng(400);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let means = [[-0.6, 0.3, 0.0], [0.6, -0.3, 0.2]];
    let mut draw = |n: usize| -> (Vec<Vec<f64>>, Vec<String>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            x.push(means[c].iter().map(|m| m + normal.sample(&mut r)).collect());
            y.push(format!("k{c}"));
        }
        (x, y)
    };
    let (tx, ty) = draw(400);
    let (vx, vy) = draw(2000);
    let acc = classification_accuracy(&tx, &ty, &vx, &vy, &LogRegConfig::default()).unwrap();
    // Equal priors and identity covariance: the Bayes rule is the
    // perpendicular bisector of the true means.
    let w: Vec<f64> = (0..3).map(|j| means[1][j] - means[0][j]).collect();
    let mid: Vec<f64> = (0..3).map(|j| (means[1][j] + means[0][j]) / 2.0).collect();
    let lda = vx
        .iter()
        .zip(&vy)
        .filter(|(x, y)| {
            let s: f64 = (0..3).map(|j| w[j] * (x[j] - mid[j])).sum();
            (s > 0.0) == (y.as_str() == "k1")
        })
        .count() as f64
        / vx.len() as f64;
    assert!((acc - lda).abs() < 0.02, "logreg {acc} vs lda {lda}");
}

#[test]
fn seeded_optimisers_are_repeatable() {
    let mut r = rng(500);
    let x = random_vecs(&mut r, 60, 5);
    let y: Vec<String> = (0..60).map(|i| format!("l{}", i % 4)).collect();
    let a = clustering_v_measure(&x, &y, 3).unwrap();
    assert_eq!(a, clustering_v_measure(&x, &y, 3).unwrap());
    let cfg = LogRegConfig::default();
    assert_eq!(
        classification_accuracy(&x, &y, &x, &y, &cfg).unwrap(),
        classification_accuracy(&x, &y, &x, &y, &cfg).unwrap()
    );
    assert!(clustering_v_measure(&x[..1], &y[..1], 3).is_err());
}

#[test]
fn clustering_recovers_separated_groups() {
    let mut r = rng(600);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for c in 0..4 {
        for _ in 0..25 {
            x.push(vec![c as f64 * 20.0 + r.random::<f64>(), r.random::<f64>()]);
            y.push(format!("g{c}"));
        }
    }
    assert!((clustering_v_measure(&x, &y, 1).unwrap().v_measure - 1.0).abs() < TOL);
}

#[test]
fn summarization_max_rule_matches_table() {
    let mut r = rng(700);
    let mut pairs = Vec::new();
    let mut records = Vec::new();
    let mut expect = Vec::new();
    for i in 0..12 {
        let s = format!("s{i}");
        let sv: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        pairs.push((s.clone(), sv.clone()));
        let mut refs = Vec::new();
        let mut table = Vec::new();
        for j in 0..3 {
            let rid = format!("r{i}_{j}");
            let rv: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            table.push(oracle_cos(&sv, &rv));
            pairs.push((rid.clone(), rv));
            refs.push(rid);
        }
        expect.push(table.into_iter().fold(f64::NEG_INFINITY, f64::max));
        records.push(SummaryRecord {
            summary: s,
            references: refs,
            score: r.random_range(1.0..5.0),
        });
    }
    let e = LookupEmbedder::new(pairs);
    let q = summary_qualities(&e, &records).unwrap();
    for (a, b) in q.iter().zip(&expect) {
        assert!((a - b).abs() < TOL);
    }
    let human: Vec<f64> = records.iter().map(|r| r.score).collect();
    let rho = eval_summarization(&e, &records).unwrap();
    assert!((rho - oracle_pearson(&oracle_rank(&expect), &oracle_rank(&human))).abs() < TOL);
}

#[test]
fn single_reference_reduces_to_sts() {
    let e = LookupEmbedder::new([
        ("a".to_string(), vec![1.0, 0.0]),
        ("b".to_string(), vec![0.8, 0.6]),
        ("c".to_string(), vec![0.0, 1.0]),
        ("d".to_string(), vec![-1.0, 0.2]),
    ]);
    let recs: Vec<SummaryRecord> = [
        ("a", "b", 3.0),
        ("a", "c", 2.0),
        ("a", "d", 1.0),
        ("b", "c", 4.0),
    ]
    .iter()
    .map(|(s, r, g)| SummaryRecord {
        summary: s.to_string(),
        references: vec![r.to_string()],
        score: *g,
    })
    .collect();
    let sts: Vec<StsPair> = recs
        .iter()
        .map(|r| StsPair {
            s1: r.summary.clone(),
            s2: r.references[0].clone(),
            score: r.score,
        })
        .collect();
    assert_eq!(
        eval_summarization(&e, &recs).unwrap(),
        eval_sts(&e, &sts).unwrap()
    );
}

#[test]
fn zero_shot_two_cluster_fixture() {
    let mut r = rng(800);
    let centers = [[1.0, 0.2, -0.3], [-0.4, 1.0, 0.5]];
    let mut pairs = vec![
        ("positive".to_string(), centers[0].to_vec()),
        ("negative".to_string(), centers[1].to_vec()),
    ];
    let mut texts = Vec::new();
    let mut gold = Vec::new();
    for i in 0..40 {
        let c = i % 2;
        let v: Vec<f64> = centers[c]
            .iter()
            .map(|m| m + r.random_range(-0.1..0.1))
            .collect();
        pairs.push((format!("t{i}"), v));
        texts.push(format!("t{i}"));
        gold.push(c);
    }
    let e = LookupEmbedder::new(pairs);
    let verbal = vec!["positive".to_string(), "negative".to_string()];
    let res = zero_shot_classify(&e, &texts, &verbal, Some(&gold), false).unwrap();
    assert_eq!(res.accuracy, Some(1.0));
}

#[test]
fn metrics_ignore_common_positive_scale() {
    let mut r = rng(900);
    let docs = random_vecs(&mut r, 15, 3);
    let queries = random_vecs(&mut r, 4, 3);
    let ids: Vec<String> = (0..15).map(|i| format!("d{i}")).collect();
    let qids: Vec<String> = (0..4).map(|i| format!("q{i}")).collect();
    let mut qrels = Qrels::new();
    for (i, q) in qids.iter().enumerate() {
        qrels
            .entry(q.clone())
            .or_default()
            .insert(ids[i * 3].clone(), 1);
    }
    let scale = |v: &[Vec<f64>]| {
        v.iter()
            .map(|x| x.iter().map(|y| y * 3.7).collect())
            .collect::<Vec<Vec<f64>>>()
    };
    let a = retrieval_metrics(&qids, &queries, &ids, &docs, &qrels, &[10]).unwrap();
    let b = retrieval_metrics(&qids, &scale(&queries), &ids, &scale(&docs), &qrels, &[10]).unwrap();
    assert_eq!(a.ndcg, b.ndcg);
    let za = zero_shot_from_vectors(&docs, &queries, None, false).unwrap();
    let zb = zero_shot_from_vectors(&scale(&docs), &scale(&queries), None, false).unwrap();
    assert_eq!(za.predictions, zb.predictions);
}

#[test]
fn metrics_invariant_under_permutation() {
    let mut r = rng(1000);
    let s: Vec<f64> = (0..20).map(|_| r.random()).collect();
    let g: Vec<f64> = (0..20).map(|_| r.random()).collect();
    let l: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
    let perm: Vec<usize> = (0..20).map(|i| (i * 7) % 20).collect();
    let p = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let pl: Vec<bool> = perm.iter().map(|&i| l[i]).collect();
    assert!((spearman(&s, &g).unwrap() - spearman(&p(&s), &p(&g)).unwrap()).abs() < TOL);
    assert_eq!(
        average_precision(&s, &l).unwrap(),
        average_precision(&p(&s), &pl).unwrap()
    );
    let labels: Vec<usize> = (0..20).map(|i| i % 4).collect();
    let pred: Vec<usize> = (0..20).map(|i| (i * 3) % 5).collect();
    let pl2: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
    let pp2: Vec<usize> = perm.iter().map(|&i| pred[i]).collect();
    assert!(
        (v_measure(&labels, &pred).unwrap().v_measure - v_measure(&pl2, &pp2).unwrap().v_measure)
            .abs()
            < TOL
    );
}
