//! Teacher-forced training with AdamW, early stopping on dev LAS, and greedy corpus parsing.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::eval::{self, EvalError, PunctMode, Score};
use crate::model::{ModelError, ParserModel};
use crate::tensor::{Grads, ParamStore, Tape, Tensor};
use crate::transition::Action;
use crate::treebank::AnnotatedSentence;

pub use crate::eval::relative_error_reduction;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("dev set is empty")]
    EmptyDevSet,
    #[error("training diverged at epoch {epoch}, step {step}: non-finite loss or gradient")]
    Diverged { epoch: usize, step: usize },
    #[error("invalid training option: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip: f64,
    /// Fraction of all optimizer steps spent on linear warmup.
    pub warmup: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without a dev LAS improvement; `0` never stops early.
    pub patience: usize,
    pub punct: PunctMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
            clip: 1.0,
            warmup: 0.01,
            epochs: 12,
            seed: 1,
            patience: 0,
            punct: PunctMode::Include,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("eps must be positive");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 || self.clip.is_nan() || self.clip < 0.0 {
            return bad("weight_decay and clip must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.warmup) {
            return bad("warmup must lie in [0, 1]");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay: `θ ← θ − lr·(m̂/(√v̂+ε) + wd·θ)`.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> AdamW {
        let zeros = || params.iter().map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = grads.get(id).data();
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let theta = params.value_mut(id).data_mut();
            for i in 0..theta.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                theta[i] -= lr * (update + self.weight_decay * theta[i]);
            }
        }
    }
}

/// Learning rate at optimizer step `step` (0-based): linear warmup, then constant.
pub fn scheduled_lr(base: f64, step: usize, warmup_steps: usize) -> f64 {
    if step < warmup_steps {
        base * (step + 1) as f64 / warmup_steps as f64
    } else {
        base
    }
}

/// Teacher-forced loss of one sentence along its oracle sequence, with gradients
/// accumulated into `grads`. Returns the loss value.
pub fn step_loss(
    model: &ParserModel,
    sentence: &AnnotatedSentence,
    actions: &[Action],
    grads: &mut Grads,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<f64, ModelError> {
    let ids = model.sentence_ids(sentence);
    let mut tape = Tape::new(&model.params);
    let loss = model.net.sentence_loss(&mut tape, &ids, actions, rng)?;
    tape.backward_into(loss, grads).map_err(ModelError::from)?;
    Ok(tape.value(loss).item())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sentence loss.
    pub loss: f64,
    pub dev_uas: f64,
    pub dev_las: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    /// `epoch<TAB>loss<TAB>dev_uas<TAB>dev_las`, one line per epoch after a header.
    /// Wall time is left out so that reports of identical runs are identical.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tloss\tdev_uas\tdev_las\n");
        for e in &self.epochs {
            out.push_str(&format!("{}\t{:.6}\t{:.2}\t{:.2}\n", e.epoch, e.loss, e.dev_uas, e.dev_las));
        }
        out
    }
}

/// Trains `model` in place, one sentence per optimizer step in a seeded shuffled order.
/// On return `model` holds the best-dev-LAS parameters, rounded to `f32` as they would
/// be stored in a checkpoint.
pub fn train(
    model: &mut ParserModel,
    train_set: &[AnnotatedSentence],
    dev_set: &[AnnotatedSentence],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    train_with(model, train_set, dev_set, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    model: &mut ParserModel,
    train_set: &[AnnotatedSentence],
    dev_set: &[AnnotatedSentence],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if dev_set.is_empty() {
        return Err(TrainError::EmptyDevSet);
    }
    let oracle: Vec<Vec<Action>> = train_set
        .iter()
        .map(|s| model.gold_actions(s))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(&model.params, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let mut grads = Grads::zeros_like(&model.params);
    let total = cfg.epochs * train_set.len();
    let warmup_steps = (cfg.warmup * total as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut step = 0;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for &i in &order {
            grads.zero();
            let loss = step_loss(model, &train_set[i], &oracle[i], &mut grads, Some(&mut rng))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::Diverged { epoch, step: step + 1 });
            }
            if cfg.clip > 0.0 {
                let norm = grads.global_norm();
                if norm > cfg.clip {
                    grads.scale(cfg.clip / norm);
                }
            }
            opt.step(&mut model.params, &grads, scheduled_lr(cfg.lr, step, warmup_steps));
            total_loss += loss;
            step += 1;
        }
        let dev = evaluate(model, dev_set, cfg.punct)?;
        let record = EpochRecord {
            epoch,
            loss: total_loss / train_set.len() as f64,
            dev_uas: dev.uas(),
            dev_las: dev.las(),
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        if best.as_ref().is_none_or(|(las, _)| record.dev_las > *las) {
            let mut snapshot = model.params.clone();
            snapshot.round_to_f32();
            best = Some((record.dev_las, snapshot));
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        report.epochs.push(record);
        if cfg.patience > 0 && stale >= cfg.patience {
            break;
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(report)
}

/// Greedy parses of every sentence, in input order; sentences are parsed in parallel.
pub fn parse_corpus(model: &ParserModel, sentences: &[AnnotatedSentence]) -> Result<Vec<AnnotatedSentence>, ModelError> {
    sentences.par_iter().map(|s| model.annotate(s)).collect()
}

/// Parses `sentences` and scores the result against their own annotation.
pub fn evaluate(model: &ParserModel, sentences: &[AnnotatedSentence], punct: PunctMode) -> Result<Score, TrainError> {
    let pred = parse_corpus(model, sentences)?;
    Ok(eval::score(sentences, &pred, punct)?)
}

/// Percentage of oracle steps whose greedy prediction equals the gold action when the
/// parser is kept on the gold path.
pub fn teacher_forced_accuracy(model: &ParserModel, sentences: &[AnnotatedSentence]) -> Result<f64, ModelError> {
    let counts = sentences
        .par_iter()
        .map(|s| {
            let gold = model.gold_actions(s)?;
            let mut ep = model.episode(s)?;
            let mut hits = 0;
            for &a in &gold {
                hits += usize::from(ep.predict()? == a);
                ep.advance(a)?;
            }
            Ok((hits, gold.len()))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let (hits, total) = counts.iter().fold((0, 0), |(h, t), &(a, b)| (h + a, t + b));
    Ok(if total == 0 { 100.0 } else { 100.0 * hits as f64 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelVariant};
    use crate::synth;
    use crate::vocab::Vocabulary;

    fn tiny(variant: &str, sents: &[AnnotatedSentence]) -> ParserModel {
        let config = ModelConfig {
            variant: ModelVariant::preset(variant).unwrap(),
            layers: 1,
            heads: 2,
            model_dim: 16,
            ff_dim: 16,
            max_positions: 40,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        ParserModel::new(config, Vocabulary::build(sents, 1), 3).unwrap()
    }

    #[test]
    fn zero_gradient_parameter_shrinks_by_decay_only() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(vec![2.0, -4.0]));
        let grads = Grads::zeros_like(&store);
        let mut opt = AdamW::new(&store, 0.9, 0.999, 1e-6, 0.1);
        opt.step(&mut store, &grads, 0.5);
        assert_eq!(store.value(id).data(), &[2.0 - 0.5 * 0.1 * 2.0, -4.0 + 0.5 * 0.1 * 4.0]);
    }

    #[test]
    fn first_adam_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(vec![1.0, 1.0]));
        let mut probe = Tape::new(&store);
        let w = probe.param(id);
        let s = probe.scale(w, 3.0);
        let loss = probe.sum(s);
        let mut grads = Grads::zeros_like(&store);
        probe.backward_into(loss, &mut grads).unwrap();
        drop(probe);
        let mut opt = AdamW::new(&store, 0.9, 0.999, 1e-12, 0.0);
        opt.step(&mut store, &grads, 0.01);
        for &v in store.value(id).data() {
            assert!((v - 0.99).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn warmup_is_linear_then_constant() {
        assert_eq!(scheduled_lr(1.0, 0, 4), 0.25);
        assert_eq!(scheduled_lr(1.0, 3, 4), 1.0);
        assert_eq!(scheduled_lr(1.0, 10, 4), 1.0);
        assert_eq!(scheduled_lr(0.5, 0, 0), 0.5);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let sents = synth::toy_corpus(2, 6);
        let mut model = tiny("state-tr-g2g-c", &sents);
        model.params.round_to_f32();
        let before = model.params.clone();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 1,
            ..TrainConfig::default()
        };
        train(&mut model, &sents, &sents, &cfg).unwrap();
        for ((_, _, a), (_, _, b)) in before.iter().zip(model.params.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn training_is_deterministic_and_lowers_the_loss() {
        let sents = synth::toy_corpus(4, 12);
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = tiny("sent-tr-g2g", &sents);
            let r = train(&mut m, &sents, &sents, &cfg).unwrap();
            (r, m.params)
        };
        let (r1, p1) = run();
        let (r2, p2) = run();
        assert_eq!(r1.to_tsv(), r2.to_tsv());
        assert!(p1.iter().zip(p2.iter()).all(|(a, b)| a.2 == b.2));
        let losses: Vec<f64> = r1.epochs.iter().map(|e| e.loss).collect();
        let rises = losses.windows(2).filter(|w| w[1] >= w[0]).count();
        assert!(rises <= 1, "{losses:?}");
        assert!(r1.best().is_some());
    }

    #[test]
    fn best_epoch_parameters_are_restored() {
        let sents = synth::toy_corpus(5, 8);
        let mut model = tiny("sent-tr", &sents);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &sents, &sents, &cfg).unwrap();
        let best = report.best().unwrap();
        assert!(report.epochs.iter().all(|e| e.dev_las <= best.dev_las));
        let again = evaluate(&model, &sents, PunctMode::Include).unwrap();
        // The snapshot is rounded to f32, which can nudge a near-tie; allow one token.
        assert!((again.las() - best.dev_las).abs() <= 100.0 / again.scored as f64 + 1e-9);
    }

    #[test]
    fn divergence_reports_epoch_and_step() {
        let sents = synth::toy_corpus(6, 4);
        let mut model = tiny("sent-tr", &sents);
        let id = model.params.id("classifier.exist.b2").unwrap();
        model.params.value_mut(id).data_mut()[0] = f64::NAN;
        let err = train(&mut model, &sents, &sents, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, TrainError::Diverged { epoch: 1, step: 1 }), "{err}");
    }

    #[test]
    fn empty_inputs() {
        let sents = synth::toy_corpus(6, 4);
        let mut model = tiny("sent-tr", &sents);
        assert!(parse_corpus(&model, &[]).unwrap().is_empty());
        assert!(matches!(train(&mut model, &[], &sents, &TrainConfig::default()), Err(TrainError::EmptyTrainSet)));
        let bad = TrainConfig {
            warmup: 2.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&mut model, &sents, &sents, &bad), Err(TrainError::Config(_))));
    }

    #[test]
    fn parallel_parsing_matches_sequential() {
        let sents = synth::random_sentences(8, 30, 12);
        let model = tiny("state-tr-g2g-c", &sents);
        let par = parse_corpus(&model, &sents).unwrap();
        let seq: Vec<_> = sents.iter().map(|s| model.annotate(s).unwrap()).collect();
        assert_eq!(par, seq);
    }

    #[test]
    fn rer_examples() {
        assert!((relative_error_reduction(89.07, 90.16).unwrap() - 9.97).abs() < 0.01);
        assert!((relative_error_reduction(91.94, 92.88).unwrap() - 11.66).abs() < 0.01);
    }
}
