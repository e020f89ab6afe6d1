//! Pre-trains and fine-tunes a toy encoder on synthetic paraphrases and
//! prints retrieval quality after each stage.

use std::time::Instant;

use gteforge::datapipe::{Records, Registry, Source, SourceKind, SourceSpec};
use gteforge::encoder::{EncoderConfig, Vocabulary};
use gteforge::eval::{eval_retrieval, ModelEmbedder};
use gteforge::synth::{SynthConfig, SynthWorld};
use gteforge::trainer::{finetune, init_model, pretrain, Checkpoint, TrainConfig};

fn spec(name: &str, kind: SourceKind) -> SourceSpec {
    SourceSpec {
        name: name.into(),
        path: "synthetic".into(),
        kind,
        task_family: "paraphrase".into(),
    }
}

fn ndcg(ck: &Checkpoint, world: &SynthWorld) -> f64 {
    let fx = world.retrieval_fixture(100, 2, 99);
    let vocab = ck.vocab().unwrap();
    let m = eval_retrieval(
        &ModelEmbedder::new(&ck.model, &vocab),
        &fx.corpus,
        &fx.queries,
        &fx.qrels,
        &[10, 100],
    )
    .unwrap();
    m.ndcg[&10]
}

fn main() {
    let steps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(500);
    let world = SynthWorld::new(SynthConfig::default());
    let pairs = world.pairs(500, 1);
    let triples = world.triples(300, 7, 2);
    let vocab = Vocabulary::build(
        pairs
            .iter()
            .flat_map(|p| [p.query.as_str(), p.doc.as_str()]),
        4096,
    )
    .unwrap();
    let registry = Registry::from_sources(vec![
        Source::new(spec("pairs", SourceKind::Pair), Records::Pairs(pairs)).unwrap(),
        Source::new(
            spec("triples", SourceKind::Triple),
            Records::Triples(triples),
        )
        .unwrap(),
    ])
    .unwrap();
    let mut enc = EncoderConfig::toy(vocab.len());
    enc.max_seq_len = 16;
    let init = Checkpoint::initial(init_model(enc.clone(), 7).unwrap(), &vocab, 7);
    println!("random init ndcg@10 {:.4}", ndcg(&init, &world));

    let mut pre = TrainConfig::pretrain(7);
    pre.total_steps = steps;
    pre.max_seq_len = 16;
    let t = Instant::now();
    let ck = pretrain(&pre, &enc, &vocab, &registry).unwrap();
    let log = &ck.meta.log;
    let first: f64 = log[..10].iter().map(|r| r.loss).sum::<f64>() / 10.0;
    let last: f64 = log[log.len() - 10..].iter().map(|r| r.loss).sum::<f64>() / 10.0;
    println!(
        "pretrain {:?}: first10 {first:.4} last10 {last:.4} ratio {:.2}",
        t.elapsed(),
        first / last
    );
    println!("pretrained ndcg@10 {:.4}", ndcg(&ck, &world));

    let mut ft = TrainConfig::finetune_from(&pre);
    ft.total_steps = steps / 5;
    ft.batch_size = 8;
    ft.max_seq_len = 16;
    let t = Instant::now();
    let ck2 = finetune(&ft, &ck, &registry).unwrap();
    println!(
        "finetune {:?}: ndcg@10 {:.4}",
        t.elapsed(),
        ndcg(&ck2, &world)
    );
}
