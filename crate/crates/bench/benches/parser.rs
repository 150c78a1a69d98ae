use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use g2g_core::model::{ModelConfig, ModelVariant};
use g2g_core::tensor::{Grads, Tape};
use g2g_core::train::step_loss;
use g2g_core::transition::{oracle_sequence, DepTree};
use g2g_core::{synth, ParserModel, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(variant: &str) -> (ParserModel, Vec<g2g_core::AnnotatedSentence>) {
    let sents = synth::toy_corpus(1, 20);
    let config = ModelConfig {
        variant: ModelVariant::preset(variant).unwrap(),
        dropout: 0.0,
        ..ModelConfig::default()
    };
    (ParserModel::new(config, Vocabulary::build(&sents, 1), 1).unwrap(), sents)
}

fn bench_oracle(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("oracle");
    for n in [10, 40] {
        let heads = synth::random_tree(&mut rng, n);
        let tree = DepTree::new(&heads, &vec![0; n]);
        group.bench_with_input(BenchmarkId::from_parameter(n), &tree, |b, t| b.iter(|| oracle_sequence(black_box(t))));
    }
    group.finish();
}

fn bench_encoder(c: &mut Criterion) {
    let (m, sents) = model("sent-tr-g2g");
    let s = &sents[0];
    let ep = m.episode(s).unwrap();
    let asm = ep.assembly();
    let enc = &m.net.encoder;
    c.bench_function("encoder forward, sentence layout", |b| {
        b.iter(|| {
            let mut tape = Tape::new(&m.params);
            let x = enc.embed(&mut tape, &asm.input, None).unwrap();
            let out = enc.encode(&mut tape, x, &asm.relations, &asm.input.mask, None).unwrap();
            black_box(tape.value(out).get(0, 0))
        })
    });
}

fn bench_parse(c: &mut Criterion) {
    let mut group = c.benchmark_group("greedy parse");
    group.sample_size(10);
    for variant in ["sent-tr", "sent-tr-g2g", "state-tr-g2g-c"] {
        let (m, sents) = model(variant);
        group.bench_function(variant, |b| b.iter(|| m.parse(black_box(&sents[0])).unwrap()));
    }
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let (m, sents) = model("state-tr-g2g-c");
    let actions = m.gold_actions(&sents[0]).unwrap();
    let mut grads = Grads::zeros_like(&m.params);
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("loss and backward, state-tr-g2g-c", |b| {
        b.iter(|| {
            grads.zero();
            step_loss(&m, &sents[0], &actions, &mut grads, None).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_oracle, bench_encoder, bench_parse, bench_train_step);
criterion_main!(benches);
