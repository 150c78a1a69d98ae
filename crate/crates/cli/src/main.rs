//! `g2gparse`: oracle dumps, training, parsing, scoring and error analysis.
//!
//! Exit codes: 0 success, 1 user error (bad flags, config or input), 2 internal or
//! runtime failure (e.g. training divergence). Errors are printed as one line on stderr.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use g2g_core::checkpoint::{self, CheckpointError};
use g2g_core::config::{ConfigError, RunConfig};
use g2g_core::eval::{self, PunctMode};
use g2g_core::train::{self, TrainError};
use g2g_core::transition::{oracle_sequence, replay, Action};
use g2g_core::treebank::{self, AnnotatedSentence, TreebankError};
use g2g_core::{ModelError, ParserModel, Vocabulary};

#[derive(Parser, Debug)]
#[command(name = "g2gparse", version, about = "Graph-conditioned transformer dependency parser")]
struct Cli {
    /// key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `model.variant` (a preset name such as `sent-tr-g2g`).
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes the static-oracle transition sequence of every sentence.
    Oracle {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Replays every sequence and checks that it rebuilds the gold arcs.
        #[arg(long)]
        verify: bool,
    },
    /// Trains a model and writes its best checkpoint and the training report.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Checkpoint path.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Report path; defaults to the checkpoint path with `.report.tsv` appended.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Parses a CoNLL-U file with a trained model.
    Parse {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Prints `UAS<TAB>LAS` of a prediction against gold.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// `include` or `exclude`; overrides `eval.punct`.
        #[arg(long)]
        punct: Option<String>,
    },
    /// Writes `report.txt` and `report.tsv` with the binned error analysis.
    Analyze {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Predictions of a baseline system, for relative error reductions per label.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        punct: Option<String>,
    },
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn user(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        user(format!("config: {e}"))
    }
}

impl From<TreebankError> for Failure {
    fn from(e: TreebankError) -> Self {
        user(e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        user(e.to_string())
    }
}

impl From<eval::EvalError> for Failure {
    fn from(e: eval::EvalError) -> Self {
        user(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NoProgress(_) => Failure {
                code: 2,
                message: e.to_string(),
            },
            _ => user(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => Failure {
                code: 2,
                message: e.to_string(),
            },
            TrainError::Model(m) => m.into(),
            other => user(other.to_string()),
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| user(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn required<'a>(flag: &'a Option<PathBuf>, fallback: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, Failure> {
    flag.as_deref()
        .or(fallback.as_deref())
        .ok_or_else(|| user(format!("missing {what} path (flag or paths.{what} in the config)")))
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string()).map_err(user)?;
    }
    if let Some(v) = &cli.variant {
        cfg.set("model.variant", v).map_err(user)?;
    }
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| user(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(user)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn punct_mode(flag: &Option<String>, cfg: &RunConfig) -> Result<PunctMode, Failure> {
    match flag {
        Some(s) => PunctMode::parse(s).ok_or_else(|| user(format!("--punct expects include or exclude, got {s:?}"))),
        None => Ok(cfg.punct),
    }
}

fn read_gold(path: &Path, cfg: &RunConfig) -> Result<Vec<AnnotatedSentence>, Failure> {
    Ok(treebank::read_conllu_with(path, &cfg.punct_rule)?)
}

fn sentence_name(s: &AnnotatedSentence, index: usize) -> String {
    s.sent_id().map(str::to_string).unwrap_or_else(|| format!("#{}", index + 1))
}

fn cmd_oracle(cfg: &RunConfig, input: &Path, output: Option<&Path>, verify: bool) -> Result<(), Failure> {
    let sents = read_gold(input, cfg)?;
    let vocab = Vocabulary::build(&sents, 1);
    let mut out = String::new();
    for (i, s) in sents.iter().enumerate() {
        let heads: Vec<usize> = s.tokens.iter().map(|t| t.head).collect();
        let labels: Vec<usize> = s
            .tokens
            .iter()
            .map(|t| vocab.label_id(&t.deprel).expect("label seen while building the vocabulary"))
            .collect();
        let tree = g2g_core::DepTree::new(&heads, &labels);
        let actions = oracle_sequence(&tree);
        if verify {
            let ok = replay(s.len(), &actions)
                .ok()
                .filter(|st| st.is_terminal())
                .and_then(|st| st.to_tree())
                .is_some_and(|t| t == tree);
            if !ok {
                return Err(Failure {
                    code: 2,
                    message: format!("oracle verification failed for sentence {}", sentence_name(s, i)),
                });
            }
        }
        writeln!(out, "# sent_id = {}", sentence_name(s, i)).unwrap();
        for a in actions {
            writeln!(out, "{}", format_action(a, &vocab)).unwrap();
        }
        out.push('\n');
    }
    write_output(output, &out)
}

fn format_action(a: Action, vocab: &Vocabulary) -> String {
    match a.label() {
        Some(l) => format!("{}({})", a.kind().name(), vocab.label(l)),
        None => a.kind().name().to_string(),
    }
}

fn cmd_train(cfg: &RunConfig, train_path: &Path, dev_path: &Path, model_path: &Path, report: Option<&Path>) -> Result<(), Failure> {
    let train_set = read_gold(train_path, cfg)?;
    let dev_set = read_gold(dev_path, cfg)?;
    let vocab = Vocabulary::build(&train_set, cfg.min_freq);
    if let Some((s, t)) = dev_set
        .iter()
        .flat_map(|s| s.tokens.iter().map(move |t| (s, t)))
        .find(|(_, t)| vocab.label_id(&t.deprel).is_none())
    {
        return Err(user(format!(
            "dev sentence {} uses label {:?} that never occurs in training",
            s.sent_id().unwrap_or("?"),
            t.deprel
        )));
    }
    let mut model = ParserModel::new(cfg.model.clone(), vocab, cfg.seed)?;
    let report_data = train::train_with(&mut model, &train_set, &dev_set, &cfg.train, |e| {
        eprintln!(
            "epoch {}\tloss {:.4}\tdev UAS {:.2}\tLAS {:.2}\t{:.1}s",
            e.epoch, e.loss, e.dev_uas, e.dev_las, e.seconds
        );
    })?;
    checkpoint::save(&model, cfg.seed, model_path)?;
    let report_path = report.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = model_path.as_os_str().to_owned();
        p.push(".report.tsv");
        PathBuf::from(p)
    });
    write_output(Some(&report_path), &report_data.to_tsv())?;
    eprintln!("best epoch {} written to {}", report_data.best_epoch, model_path.display());
    Ok(())
}

fn load_model(path: &Path, variant_flag: bool, cfg: &RunConfig) -> Result<ParserModel, Failure> {
    let (model, _) = if variant_flag {
        checkpoint::load_expecting(path, &cfg.model.variant)?
    } else {
        checkpoint::load(path)?
    };
    Ok(model)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Oracle { input, output, verify } => cmd_oracle(&cfg, input, output.as_deref(), *verify),
        Command::Train {
            train,
            dev,
            model,
            report,
            epochs,
        } => {
            if let Some(e) = epochs {
                cfg.set("train.epochs", &e.to_string()).map_err(user)?;
                cfg.validate()?;
            }
            let paths = cfg.paths.clone();
            let train_path = required(train, &paths.train, "train")?;
            let dev_path = required(dev, &paths.dev, "dev")?;
            let model_path = required(model, &paths.model, "model")?;
            cmd_train(&cfg, train_path, dev_path, model_path, report.as_deref())
        }
        Command::Parse { model, input, output } => {
            let model_path = required(model, &cfg.paths.model, "model")?;
            let input_path = required(input, &cfg.paths.test, "test")?;
            let parser = load_model(model_path, cli.variant.is_some(), &cfg)?;
            let sents = treebank::read_conllu_input(input_path)?;
            let parsed = train::parse_corpus(&parser, &sents)?;
            let out = output.as_deref().or(cfg.paths.output.as_deref());
            write_output(out, &treebank::to_conllu_string(&parsed))
        }
        Command::Eval { gold, pred, punct } => {
            let mode = punct_mode(punct, &cfg)?;
            let g = read_gold(gold, &cfg)?;
            let p = read_gold(pred, &cfg)?;
            let s = eval::score(&g, &p, mode)?;
            println!("{:.2}\t{:.2}", s.uas(), s.las());
            Ok(())
        }
        Command::Analyze {
            gold,
            pred,
            baseline,
            output,
            punct,
        } => {
            let mode = punct_mode(punct, &cfg)?;
            let g = read_gold(gold, &cfg)?;
            let p = read_gold(pred, &cfg)?;
            let report = eval::analyze(&g, &p, mode)?;
            let base = match baseline {
                Some(b) => Some(eval::analyze(&g, &read_gold(b, &cfg)?, mode)?),
                None => None,
            };
            fs::create_dir_all(output).map_err(|e| user(format!("{}: {e}", output.display())))?;
            write_output(Some(&output.join("report.txt")), &report.to_text(base.as_ref()))?;
            write_output(Some(&output.join("report.tsv")), &report.to_tsv())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: {line}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}
