//! Random dependency trees and a small rule-generated treebank for tests and demos.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::treebank::{AnnotatedSentence, TokenRecord};

/// A uniformly shaped random tree over `n` words: heads for words 1..=n (0 = root).
/// Words are attached in a random order to an already attached word, so crossing
/// arcs are common.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let mut heads = vec![0; n];
    for (k, &w) in order.iter().enumerate() {
        heads[w - 1] = if k == 0 { 0 } else { order[rng.gen_range(0..k)] };
    }
    heads
}

/// A random projective tree over `n` words with a single root dependent.
pub fn random_projective_tree<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut heads = vec![0; n];
    if n > 0 {
        span(rng, 1, n, 0, &mut heads);
    }
    heads
}

/// Builds a subtree covering words `lo..=hi` and attaches its head to `parent`.
fn span<R: Rng + ?Sized>(rng: &mut R, lo: usize, hi: usize, parent: usize, heads: &mut [usize]) {
    let h = rng.gen_range(lo..=hi);
    heads[h - 1] = parent;
    for (a, b) in [(lo, h.saturating_sub(1)), (h + 1, hi)] {
        // Split the side into consecutive chunks, each its own subtree under h.
        let mut start = a;
        while start <= b {
            let end = rng.gen_range(start..=b);
            span(rng, start, end, h, heads);
            start = end + 1;
        }
    }
}

const UPOS: [&str; 6] = ["NOUN", "VERB", "ADJ", "DET", "ADP", "PUNCT"];

/// A sentence with the given heads, synthetic forms and random labels from `labels`.
pub fn sentence_from_heads<R: Rng + ?Sized>(rng: &mut R, heads: &[usize], labels: &[&str]) -> AnnotatedSentence {
    let tokens = heads
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let upos = UPOS[rng.gen_range(0..UPOS.len())];
            let deprel = if h == 0 { "root" } else { labels[rng.gen_range(0..labels.len())] };
            let mut t = TokenRecord::new(i + 1, &format!("w{}", rng.gen_range(0..30)), upos, h, deprel);
            t.is_punct = upos == "PUNCT";
            t
        })
        .collect();
    AnnotatedSentence {
        comments: Vec::new(),
        tokens,
    }
}

/// Random sentences of length `1..=max_len`, half of them restricted to projective trees.
pub fn random_sentences(seed: u64, count: usize, max_len: usize) -> Vec<AnnotatedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = ["nsubj", "obj", "det", "amod", "case", "obl", "punct"];
    (0..count)
        .map(|i| {
            let n = rng.gen_range(1..=max_len);
            let heads = if i % 2 == 0 {
                random_projective_tree(&mut rng, n)
            } else {
                random_tree(&mut rng, n)
            };
            sentence_from_heads(&mut rng, &heads, &labels)
        })
        .collect()
}

struct Builder {
    tokens: Vec<(String, &'static str, usize, &'static str)>,
}

impl Builder {
    fn push(&mut self, form: &str, upos: &'static str, deprel: &'static str) -> usize {
        self.tokens.push((form.to_string(), upos, 0, deprel));
        self.tokens.len()
    }

    fn attach(&mut self, dep: usize, head: usize) {
        self.tokens[dep - 1].2 = head;
    }

    /// `det adj* noun`, optionally followed by a prepositional modifier; returns the noun.
    fn noun_phrase<R: Rng + ?Sized>(&mut self, rng: &mut R, depth: usize) -> usize {
        const DETS: [&str; 3] = ["the", "a", "every"];
        const ADJS: [&str; 5] = ["red", "small", "old", "quick", "quiet"];
        const NOUNS: [&str; 8] = ["dog", "cat", "park", "house", "girl", "boy", "tree", "river"];
        const PREPS: [&str; 3] = ["in", "near", "with"];
        let det = self.push(DETS.choose(rng).unwrap(), "DET", "det");
        let adjs: Vec<usize> = (0..rng.gen_range(0..=2))
            .map(|_| self.push(ADJS.choose(rng).unwrap(), "ADJ", "amod"))
            .collect();
        let noun = self.push(NOUNS.choose(rng).unwrap(), "NOUN", "nsubj");
        self.attach(det, noun);
        for a in adjs {
            self.attach(a, noun);
        }
        if depth == 0 && rng.gen_bool(0.3) {
            let prep = self.push(PREPS.choose(rng).unwrap(), "ADP", "case");
            let inner = self.noun_phrase(rng, depth + 1);
            self.attach(prep, inner);
            self.attach(inner, noun);
            self.tokens[inner - 1].3 = "nmod";
        }
        noun
    }
}

/// A deterministic toy treebank: simple transitive clauses with optional adjectives,
/// prepositional modifiers and a sentence-final period. About one sentence in eight
/// has an extraposed modifier, which makes its tree non-projective.
pub fn toy_corpus(seed: u64, count: usize) -> Vec<AnnotatedSentence> {
    const VERBS: [&str; 6] = ["sees", "likes", "finds", "chases", "loves", "watches"];
    const ADVS: [&str; 3] = ["today", "again", "quickly"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut b = Builder { tokens: Vec::new() };
            let subj = b.noun_phrase(&mut rng, 1);
            let verb = b.push(VERBS.choose(&mut rng).unwrap(), "VERB", "root");
            let obj = b.noun_phrase(&mut rng, 0);
            b.attach(subj, verb);
            b.attach(obj, verb);
            b.tokens[obj - 1].3 = "obj";
            if rng.gen_bool(0.3) {
                let adv = b.push(ADVS.choose(&mut rng).unwrap(), "ADV", "advmod");
                b.attach(adv, verb);
            }
            if rng.gen_bool(0.125) {
                // Relative-clause-like modifier of the subject after the object.
                let rel = b.push("that", "PRON", "nsubj");
                let rv = b.push("barks", "VERB", "acl");
                b.attach(rel, rv);
                b.attach(rv, subj);
            }
            let punct = b.push(".", "PUNCT", "punct");
            b.attach(punct, verb);
            let tokens = b
                .tokens
                .iter()
                .enumerate()
                .map(|(k, (form, upos, head, deprel))| {
                    let mut t = TokenRecord::new(k + 1, form, upos, *head, deprel);
                    t.is_punct = *upos == "PUNCT";
                    t
                })
                .collect();
            AnnotatedSentence {
                comments: vec![format!("# sent_id = toy-{}", i + 1)],
                tokens,
            }
        })
        .collect()
}
