use super::*;
use crate::encoder::{RelationMatrix, REL_DEPENDENT_OF, REL_HEAD_OF, REL_NONE};
use crate::synth;
use crate::tensor::{finite_difference_check, Grads};
use crate::transition::replay;

fn tiny_config(variant: &str) -> ModelConfig {
    ModelConfig {
        variant: ModelVariant::preset(variant).unwrap(),
        layers: 1,
        heads: 2,
        model_dim: 8,
        ff_dim: 12,
        max_positions: 32,
        dropout: 0.0,
        exist_hidden: 10,
        relation_hidden: 6,
    }
}

fn corpus() -> Vec<AnnotatedSentence> {
    synth::toy_corpus(3, 12)
}

fn model(variant: &str, seed: u64) -> (ParserModel, Vec<AnnotatedSentence>) {
    let sents = corpus();
    let vocab = Vocabulary::build(&sents, 1);
    (ParserModel::new(tiny_config(variant), vocab, seed).unwrap(), sents)
}

/// Brute-force relation codes over a sequence of sources from an explicit arc list.
fn brute_force_relations(sources: &[Source], arcs: &[crate::transition::Arc]) -> RelationMatrix {
    let n = sources.len();
    let mut codes = vec![REL_NONE; n * n];
    let mut labels = vec![None; n];
    for (i, si) in sources.iter().enumerate() {
        for (j, sj) in sources.iter().enumerate() {
            if let (Source::Word(a), Source::Word(b)) = (*si, *sj) {
                for arc in arcs {
                    if arc.head == a && arc.dependent == b {
                        codes[i * n + j] = REL_HEAD_OF;
                    }
                    if arc.head == b && arc.dependent == a {
                        codes[i * n + j] = REL_DEPENDENT_OF;
                        labels[i] = Some(arc.label);
                    }
                }
            }
        }
    }
    RelationMatrix::from_parts(n, codes, labels)
}

#[test]
fn assembly_tracks_state_and_arcs_along_gold_sequences() {
    for variant in ["state-tr-g2g", "sent-tr-g2g"] {
        let (m, sents) = model(variant, 0);
        for s in &sents {
            let actions = m.gold_actions(s).unwrap();
            let mut ep = m.episode(s).unwrap();
            for &a in &actions {
                let asm = ep.assembly();
                let state = ep.state();
                assert_eq!(asm.relations, brute_force_relations(&asm.sources, &state.arcs()));
                if variant.starts_with("state") {
                    let (stack, buffer, deleted) = asm.decode();
                    assert_eq!(stack, state.stack());
                    assert_eq!(buffer, state.buffer());
                    assert_eq!(deleted, state.deleted());
                }
                ep.advance(a).unwrap();
            }
            assert_eq!(ep.state(), &replay(s.len(), &actions).unwrap());
        }
    }
}

/// Scores along a gold sequence computed on one tape, for comparison with decoding.
fn single_tape_scores(m: &ParserModel, s: &AnnotatedSentence, actions: &[Action]) -> Vec<(Tensor, Tensor)> {
    let ids = m.sentence_ids(s);
    let mut tape = Tape::new(&m.params);
    let mut trace = m.net.begin(&mut tape, &ids, None).unwrap();
    let mut out = Vec::new();
    for &a in actions {
        let sc = m.net.scores(&mut tape, &trace, &ids, None).unwrap();
        out.push((tape.value(sc.exist).clone(), tape.value(sc.relation).clone()));
        m.net.advance(&mut tape, &mut trace, a).unwrap();
    }
    out
}

#[test]
fn per_step_decoding_matches_single_tape_computation() {
    for variant in PRESETS {
        let (m, sents) = model(variant, 1);
        let s = &sents[0];
        let actions = m.gold_actions(s).unwrap();
        let expected = single_tape_scores(&m, s, &actions);
        let mut ep = m.episode(s).unwrap();
        for (&a, (e, r)) in actions.iter().zip(&expected) {
            let (ge, gr) = ep.scores().unwrap();
            assert_eq!(&ge, e, "{variant}");
            assert_eq!(&gr, r, "{variant}");
            ep.advance(a).unwrap();
        }
    }
}

#[test]
fn greedy_parses_are_trees_for_every_variant() {
    for variant in PRESETS {
        for seed in 0..3 {
            let (m, sents) = model(variant, seed);
            for s in &sents {
                let p = m.parse(s).unwrap();
                crate::treebank::validate_heads(&p.tree.heads).unwrap();
                assert!(p.actions.len() <= s.len() * (s.len() + 1));
                assert_eq!(replay(s.len(), &p.actions).unwrap().to_tree().unwrap(), p.tree);
            }
        }
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    for variant in ["state-tr-g2g-c", "state-tr-g2cls", "sent-tr-g2g", "sent-tr"] {
        let (m, sents) = model(variant, 2);
        let s = sents.iter().find(|s| s.len() <= 6).unwrap();
        let ids = m.sentence_ids(s);
        let actions = m.gold_actions(s).unwrap();
        let loss = |p: &ParamStore| {
            let mut tape = Tape::new(p);
            let l = m.net.sentence_loss(&mut tape, &ids, &actions, None).unwrap();
            tape.value(l).item()
        };
        let mut grads = Grads::zeros_like(&m.params);
        {
            let mut tape = Tape::new(&m.params);
            let l = m.net.sentence_loss(&mut tape, &ids, &actions, None).unwrap();
            tape.backward_into(l, &mut grads).unwrap();
        }
        let mut params = m.params.clone();
        let report = finite_difference_check(loss, &mut params, &grads, 1e-5, 8, 3);
        assert!(report.max_relative_error() < 1e-4, "{variant}: {:?}", report.worst);
    }
}

#[test]
fn uniform_scores_give_entropy_loss() {
    let (mut m, sents) = model("sent-tr", 0);
    for id in [m.net.exist.w2, m.net.exist.b2, m.net.relation.w2, m.net.relation.b2] {
        m.params.value_mut(id).scale_in_place(0.0);
    }
    let s = &sents[0];
    let actions = m.gold_actions(s).unwrap();
    let ids = m.sentence_ids(s);
    let mut tape = Tape::new(&m.params);
    let loss = m.net.sentence_loss(&mut tape, &ids, &actions, None).unwrap();
    let mut expected = 0.0;
    let mut state = ParserState::initial(s.len());
    for &a in &actions {
        let legal = state.legal_actions().len() as f64;
        expected += legal.ln();
        if a.kind().is_arc() {
            expected += (m.vocab.num_labels() as f64 * 2.0).ln();
        }
        state.apply_mut(a).unwrap();
    }
    assert!((tape.value(loss).item() - expected).abs() < 1e-9);
}

#[test]
fn direction_blocks_are_separate_parameters() {
    let (mut m, sents) = model("sent-tr-g2g", 4);
    let ep = m.episode(&sents[0]).unwrap();
    let (_, before) = ep.scores().unwrap();
    drop(ep);
    let l = m.vocab.num_labels();
    let w2 = m.net.relation.w2;
    for r in 0..m.params.value(w2).rows() {
        for c in 0..l {
            let v = m.params.value(w2).get(r, c);
            m.params.value_mut(w2).set(r, c, v + 1.0);
        }
    }
    let ep = m.episode(&sents[0]).unwrap();
    let (_, after) = ep.scores().unwrap();
    assert_eq!(&before.row(0)[l..], &after.row(0)[l..]);
    assert_ne!(&before.row(0)[..l], &after.row(0)[..l]);
}

#[test]
fn single_stack_element_forces_shift() {
    let (m, sents) = model("state-tr", 5);
    let ep = m.episode(&sents[0]).unwrap();
    let (e, r) = ep.scores().unwrap();
    let mut rigged = e.clone();
    rigged.set(0, ActionKind::Shift.index(), -1e9);
    let a = choose_action(&rigged, &r, &ep.state().legal_mask(), m.net.num_labels).unwrap();
    assert_eq!(a, Action::SHIFT);
}

#[test]
fn zeroed_composition_network_is_the_identity() {
    let (mut m, sents) = model("state-tr", 6);
    let cp = m.net.composition.clone().unwrap();
    for id in [cp.w1, cp.b1, cp.w2, cp.b2] {
        m.params.value_mut(id).scale_in_place(0.0);
    }
    let ids = m.sentence_ids(&sents[0]);
    let mut tape = Tape::new(&m.params);
    let mut trace = m.net.begin(&mut tape, &ids, None).unwrap();
    let before: Vec<Tensor> = trace.composition.as_ref().unwrap().c.iter().map(|&v| tape.value(v).clone()).collect();
    for a in m.gold_actions(&sents[0]).unwrap().into_iter().take(4) {
        m.net.advance(&mut tape, &mut trace, a).unwrap();
    }
    let after = &trace.composition.as_ref().unwrap().c;
    for (b, &a) in before.iter().zip(after) {
        assert_eq!(b, tape.value(a));
    }
}

#[test]
fn composition_starts_from_token_embeddings() {
    let (m, sents) = model("state-tr", 7);
    let ids = m.sentence_ids(&sents[0]);
    let mut tape = Tape::new(&m.params);
    let trace = m.net.begin(&mut tape, &ids, None).unwrap();
    let asm = assemble(&trace.state, &ids, &trace.graph, &m.net.variant);
    let rows: Vec<Option<Var>> = asm
        .sources
        .iter()
        .map(|s| match *s {
            Source::Word(w) => Some(trace.composition.as_ref().unwrap().c[w]),
            _ => None,
        })
        .collect();
    let with = m.net.encoder.embed(&mut tape, &asm.input, Some(&rows)).unwrap();
    let without = m.net.encoder.embed(&mut tape, &asm.input, None).unwrap();
    assert_eq!(tape.value(with), tape.value(without));
}

#[test]
fn history_with_zero_weights_stays_zero() {
    let (mut m, _) = model("state-tr-g2g", 8);
    let hp = m.net.history.clone().unwrap();
    for id in [hp.action, hp.label, hp.wx, hp.wh, hp.bias] {
        m.params.value_mut(id).scale_in_place(0.0);
    }
    let mut tape = Tape::new(&m.params);
    let mut h = hp.start(&mut tape);
    for a in [Action::SHIFT, Action::left_arc(1), Action::SWAP] {
        h = hp.step(&mut tape, &h, a).unwrap();
        assert!(tape.value(h.h).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn open_forget_gate_and_closed_input_gate_keep_the_cell() {
    let (mut m, _) = model("state-tr-g2g", 9);
    let hp = m.net.history.clone().unwrap();
    let d = hp.dim;
    for id in [hp.wx, hp.wh] {
        m.params.value_mut(id).scale_in_place(0.0);
    }
    let bias = m.params.value_mut(hp.bias);
    for c in 0..d {
        bias.set(0, c, -1e3); // input gate
        bias.set(0, d + c, 1e3); // forget gate
    }
    let mut tape = Tape::new(&m.params);
    let c0 = tape.constant(Tensor::filled(1, d, 0.25));
    let mut h = HistoryState { h: c0, c: c0 };
    for a in [Action::SHIFT, Action::right_arc(0)] {
        h = hp.step(&mut tape, &h, a).unwrap();
        assert!(tape.value(h.c).data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }
}

#[test]
fn variants_differ_in_registered_parameters() {
    let names = |v: &str| -> Vec<String> { model(v, 0).0.params.iter().map(|(_, n, _)| n.to_string()).collect() };
    let graph = names("sent-tr-g2g");
    let plain = names("sent-tr");
    let extra: Vec<&String> = graph.iter().filter(|n| !plain.contains(n)).collect();
    assert!(extra.iter().all(|n| n.contains("graph.wl") || n.as_str() == "embed.label"), "{extra:?}");
    assert!(plain.iter().all(|n| graph.contains(n)));
    assert!(!names("state-tr-g2cls").iter().any(|n| n == "classifier.pad"));
}

#[test]
fn bind_recovers_an_equivalent_model() {
    let (m, sents) = model("state-tr-g2g-c", 10);
    let again = ParserModel::from_parts(m.config.clone(), m.vocab.clone(), m.params.clone()).unwrap();
    assert_eq!(m.parse(&sents[1]).unwrap(), again.parse(&sents[1]).unwrap());
    let mut wrong = m.config.clone();
    wrong.variant = ModelVariant::preset("sent-tr-g2g").unwrap();
    assert!(ParserModel::from_parts(wrong, m.vocab.clone(), m.params.clone()).is_err());
}
