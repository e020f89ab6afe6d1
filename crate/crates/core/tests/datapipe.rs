use std::collections::HashSet;

use gteforge::datapipe::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_text(r: &mut ChaCha8Rng) -> String {
    let n = r.random_range(1..6);
    (0..n)
        .map(|_| {
            let len = r.random_range(1..7);
            (0..len)
                .map(|_| r.random_range(b'a'..=b'z') as char)
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn pairs_source(name: &str, n: usize) -> Source {
    let recs = (0..n)
        .map(|i| PairRecord::new(format!("{name} q{i}"), format!("{name} d{i}")))
        .collect();
    Source::new(
        SourceSpec {
            name: name.into(),
            path: "unused".into(),
            kind: SourceKind::Pair,
            task_family: "t".into(),
        },
        Records::Pairs(recs),
    )
    .unwrap()
}

#[test]
fn jsonl_round_trip() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let dir = tempfile::tempdir().unwrap();
    let pairs: Vec<PairRecord> = (0..100)
        .map(|i| {
            let mut p = PairRecord::new(
                random_text(&mut r),
                format!("{} \"quoted\"\tü", random_text(&mut r)),
            );
            if i % 3 == 0 {
                p.id = Some(format!("id{i}"));
            }
            p
        })
        .collect();
    let path = dir.path().join("pairs.jsonl");
    write_jsonl(&path, &pairs).unwrap();
    assert_eq!(
        load_source(&path, SourceKind::Pair).unwrap(),
        Records::Pairs(pairs)
    );

    let triples: Vec<TripleRecord> = (0..100)
        .map(|i| TripleRecord {
            query: random_text(&mut r),
            pos: random_text(&mut r),
            negs: (0..i % 4).map(|_| random_text(&mut r)).collect(),
        })
        .collect();
    let path = dir.path().join("triples.jsonl");
    write_jsonl(&path, &triples).unwrap();
    assert_eq!(
        load_source(&path, SourceKind::Triple).unwrap(),
        Records::Triples(triples)
    );
}

#[test]
fn dedup_matches_hash_set_oracle() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let mut recs: Vec<PairRecord> = (0..900)
        .map(|_| PairRecord::new(random_text(&mut r), random_text(&mut r)))
        .collect();
    for _ in 0..100 {
        let src = recs[r.random_range(0..recs.len())].clone();
        let pos = r.random_range(0..=recs.len());
        let planted = PairRecord::new(format!("  {}", src.query), format!("{}\n", src.doc));
        recs.insert(pos, if r.random_bool(0.5) { planted } else { src });
    }
    assert_eq!(recs.len(), 1000);
    let oracle: HashSet<(String, String)> = recs
        .iter()
        .map(|p| (p.query.trim().to_string(), p.doc.trim().to_string()))
        .collect();
    let out = dedup_exact(recs.clone());
    assert_eq!(out.len(), oracle.len());
    assert!(out.len() <= 900);
    let mut seen = HashSet::new();
    let first: Vec<&PairRecord> = recs
        .iter()
        .filter(|p| seen.insert((p.query.trim().to_string(), p.doc.trim().to_string())))
        .collect();
    assert_eq!(out.iter().collect::<Vec<_>>(), first);
}

proptest! {
    #[test]
    fn dedup_is_idempotent(raw in prop::collection::vec((0u8..5, 0u8..5), 0..60)) {
        let recs: Vec<PairRecord> = raw.iter().map(|(a, b)| PairRecord::new(a.to_string(), b.to_string())).collect();
        let once = dedup_exact(recs);
        prop_assert_eq!(dedup_exact(once.clone()), once);
    }
}

fn frequencies(sizes: &[usize], alpha: f64, draws: usize) -> Vec<f64> {
    let mut s = Sampler::new(sizes, alpha, 42).unwrap();
    let mut counts = vec![0usize; sizes.len()];
    for _ in 0..draws {
        counts[s.draw_source()] += 1;
    }
    counts.iter().map(|&c| c as f64 / draws as f64).collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[test]
fn monte_carlo_source_frequencies() {
    let f = frequencies(&[100, 400], 0.5, 100_000);
    assert!(l1(&f, &[1.0 / 3.0, 2.0 / 3.0]) < 0.02, "{f:?}");
    let f = frequencies(&[100, 400], 0.0, 100_000);
    assert!(l1(&f, &[0.5, 0.5]) < 0.02, "{f:?}");
}

#[test]
fn single_source_and_homogeneity() {
    let reg = Registry::from_sources(vec![pairs_source("only", 10)]).unwrap();
    let mut s = Sampler::new(&reg.sizes(), 0.5, 0).unwrap();
    for _ in 0..20 {
        assert_eq!(s.next_batch(&reg, 4).unwrap().source, "only");
    }

    let reg = Registry::from_sources(vec![
        pairs_source("a", 7),
        pairs_source("b", 30),
        pairs_source("c", 3),
    ])
    .unwrap();
    let mut s = Sampler::new(&reg.sizes(), 0.5, 0).unwrap();
    for _ in 0..200 {
        let b = s.next_batch(&reg, 5).unwrap();
        let Records::Pairs(recs) = &b.records else {
            panic!()
        };
        assert_eq!(recs.len(), 5);
        assert_eq!(b.stage, Stage::Pretrain);
        let prefix = format!("{} ", b.source);
        assert!(recs.iter().all(|r| r.query.starts_with(&prefix)));
        assert_eq!(reg.source(b.source_index).spec.name, b.source);
    }
}

#[test]
fn batch_stream_replays() {
    let reg = Registry::from_sources(vec![pairs_source("a", 9), pairs_source("b", 25)]).unwrap();
    let stream = |seed| {
        let mut s = Sampler::new(&reg.sizes(), 0.5, seed).unwrap();
        (0..50)
            .map(|_| s.next_batch(&reg, 4).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(stream(3), stream(3));
    assert_ne!(stream(3), stream(4));
}

#[test]
fn registry_loads_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let recs = vec![
        PairRecord::new("a", "b"),
        PairRecord::new("a", "b"),
        PairRecord::new("c", "d"),
    ];
    write_jsonl(&dir.path().join("p.jsonl"), &recs).unwrap();
    let spec = SourceSpec {
        name: "p".into(),
        path: "p.jsonl".into(),
        kind: SourceKind::Pair,
        task_family: String::new(),
    };
    let reg = Registry::load(std::slice::from_ref(&spec), Some(dir.path())).unwrap();
    assert_eq!(reg.sizes(), [2]);
    assert!(Registry::load(&[spec], None).is_err());
}
