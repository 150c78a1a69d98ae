use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use g2g_core::synth;
use g2g_core::treebank::write_conllu;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SMALL: [&str; 10] = [
    "--set", "model.dim=8", "--set", "model.heads=2", "--set", "model.layers=1", "--set", "model.ff_dim=8", "--set",
    "model.max_positions=64",
];

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_g2gparse")).args(args).output().expect("spawn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn train_small(variant: &str, model: &Path) -> Output {
    let mut args = vec!["--variant", variant, "--seed", "3"];
    args.extend(SMALL);
    let train = data("toy/train.conllu");
    let dev = data("toy/dev.conllu");
    args.extend(["train", "--train", p(&train), "--dev", p(&dev), "--model", p(model), "--epochs", "2"]);
    run(&args)
}

fn tensor_names(ckpt: &Path) -> Vec<String> {
    let bytes = fs::read(ckpt).unwrap();
    let text = String::from_utf8_lossy(&bytes);
    let tensors = text.split("[tensors]\n").nth(1).unwrap().split("[vocab]").next().unwrap();
    tensors.lines().map(|l| l.split('\t').next().unwrap().to_string()).collect()
}

#[test]
fn eval_of_gold_against_itself_is_perfect() {
    let gold = data("toy/test.conllu");
    let out = run(&["eval", "--gold", p(&gold), "--pred", p(&gold)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), "100.00\t100.00\n");
}

#[test]
fn oracle_verifies_and_dumps_no_swaps_for_projective_input() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sents: Vec<_> = (0..30)
        .map(|i| {
            let heads = synth::random_projective_tree(&mut rng, 3 + i % 10);
            synth::sentence_from_heads(&mut rng, &heads, &["nsubj", "obj", "det"])
        })
        .collect();
    let input = dir.path().join("proj.conllu");
    write_conllu(&sents, &input).unwrap();
    let out = run(&["oracle", "--input", p(&input), "--verify"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let dump = stdout(&out);
    assert_eq!(dump.matches("# sent_id").count(), 30);
    assert!(!dump.contains("SWAP"));

    let sample = data("sample.conllu");
    let out = run(&["oracle", "--input", p(&sample), "--verify"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("SWAP"));
}

#[test]
fn oracle_of_an_empty_treebank_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.conllu");
    fs::write(&input, "").unwrap();
    let dump = dir.path().join("dump.txt");
    let out = run(&["oracle", "--input", p(&input), "--output", p(&dump), "--verify"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(dump).unwrap(), "");
}

#[test]
fn graph_input_decides_whether_graph_tensors_are_saved() {
    let dir = tempfile::tempdir().unwrap();
    let with = dir.path().join("g2g.ckpt");
    let without = dir.path().join("plain.ckpt");
    assert!(train_small("sent-tr-g2g", &with).status.success());
    assert!(train_small("sent-tr", &without).status.success());
    let names = tensor_names(&with);
    assert!(names.iter().any(|n| n.ends_with("graph.wl1")) && names.iter().any(|n| n.ends_with("graph.wl2")));
    assert!(!tensor_names(&without).iter().any(|n| n.contains("graph.")));
    let report = fs::read_to_string(dir.path().join("g2g.ckpt.report.tsv")).unwrap();
    assert!(report.starts_with("epoch\tloss\tdev_uas\tdev_las\n"));
    assert_eq!(report.lines().count(), 3);
}

#[test]
fn invalid_variant_combination_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.ckpt");
    let train = data("toy/train.conllu");
    let out = run(&[
        "--variant", "sent-tr", "--set", "variant.composition=true", "train", "--train", p(&train), "--dev", p(&train), "--model",
        p(&model),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!model.exists());
    assert_eq!(stderr(&out).lines().count(), 1, "{}", stderr(&out));
}

#[test]
fn train_parse_eval_analyze_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.ckpt");
    assert!(train_small("state-tr-g2g-c", &model).status.success());
    let test = data("toy/test.conllu");
    let pred = dir.path().join("pred.conllu");
    let out = run(&["parse", "--model", p(&model), "--input", p(&test), "--output", p(&pred)]);
    assert!(out.status.success(), "{}", stderr(&out));

    let out = run(&["eval", "--gold", p(&test), "--pred", p(&pred), "--punct", "exclude"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stdout(&out);
    let nums: Vec<f64> = line.trim().split('\t').map(|v| v.parse().unwrap()).collect();
    assert_eq!(nums.len(), 2);
    assert!(nums[1] <= nums[0]);

    let report_dir = dir.path().join("analysis");
    let out = run(&["analyze", "--gold", p(&test), "--pred", p(&pred), "--baseline", p(&test), "--output", p(&report_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(fs::read_to_string(report_dir.join("report.txt")).unwrap().contains("dependency length"));
    let tsv = fs::read_to_string(report_dir.join("report.tsv")).unwrap();
    let tokens: usize = fs::read_to_string(&test)
        .unwrap()
        .lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .count();
    for scheme in ["dependency_length", "root_distance"] {
        let (gold, predicted) = tsv
            .lines()
            .filter(|l| l.starts_with(&format!("{scheme}\t")))
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                (f[2].parse::<usize>().unwrap(), f[3].parse::<usize>().unwrap())
            })
            .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        assert_eq!((gold, predicted), (tokens, tokens), "{scheme}");
    }
}

#[test]
fn parse_accepts_raw_input_without_heads() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.ckpt");
    assert!(train_small("sent-tr", &model).status.success());
    let raw = dir.path().join("raw.conllu");
    fs::write(&raw, "1\tthe\t_\tDET\t_\t_\t_\t_\t_\t_\n2\tdog\t_\tNOUN\t_\t_\t_\t_\t_\t_\n3\tbarks\t_\tVERB\t_\t_\t_\t_\t_\t_\n\n").unwrap();
    let out = run(&["parse", "--model", p(&model), "--input", p(&raw)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let parsed = stdout(&out);
    assert_eq!(parsed.lines().filter(|l| !l.is_empty()).count(), 3);
    assert_eq!(parsed.lines().filter(|l| l.split('\t').nth(6) == Some("0")).count(), 1);
}

#[test]
fn checkpoint_variant_mismatch_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.ckpt");
    assert!(train_small("sent-tr-g2g", &model).status.success());
    let test = data("toy/test.conllu");
    let out = run(&["--variant", "sent-tr", "parse", "--model", p(&model), "--input", p(&test)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("variant"));
    let ok = run(&["--variant", "sent-tr-g2g", "parse", "--model", p(&model), "--input", p(&test)]);
    assert!(ok.status.success());
}

#[test]
fn errors_are_one_line_with_user_exit_code() {
    let cases: [&[&str]; 5] = [
        &["eval", "--gold", "/nonexistent/a.conllu", "--pred", "/nonexistent/b.conllu"],
        &["frobnicate"],
        &["--variant", "no-such-variant", "eval", "--gold", "x", "--pred", "y"],
        &["parse", "--input", "x.conllu"],
        &["--set", "model.colour=red", "oracle", "--input", "x"],
    ];
    for args in cases {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = stderr(&out);
        assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error: "), "{err}");
    }
}

#[test]
fn config_file_supplies_paths_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let model = dir.path().join("m.ckpt");
    fs::write(
        &cfg,
        format!(
            "seed=5\n[paths]\ntrain={}\ndev={}\nmodel={}\n[model]\nvariant=state-tr\ndim=8\nheads=2\nlayers=1\nff_dim=8\n[train]\nepochs=1\n",
            p(&data("toy/train.conllu")),
            p(&data("toy/dev.conllu")),
            p(&model)
        ),
    )
    .unwrap();
    let out = run(&["--config", p(&cfg), "--variant", "sent-tr", "train"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let names = tensor_names(&model);
    assert!(!names.iter().any(|n| n.starts_with("comp.")), "flag should override the file's variant");
    let text = String::from_utf8_lossy(&fs::read(&model).unwrap()).into_owned();
    assert!(text.contains("\nseed=5\n"));
}

#[test]
fn identical_runs_produce_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let test = data("toy/test.conllu");
    let mut outputs = Vec::new();
    for k in 0..2 {
        let model = dir.path().join(format!("m{k}.ckpt"));
        assert!(train_small("state-tr-g2g-c", &model).status.success());
        let pred = dir.path().join(format!("p{k}.conllu"));
        assert!(run(&["parse", "--model", p(&model), "--input", p(&test), "--output", p(&pred)]).status.success());
        let report_dir = dir.path().join(format!("a{k}"));
        assert!(run(&["analyze", "--gold", p(&test), "--pred", p(&pred), "--output", p(&report_dir)]).status.success());
        let mut report = PathBuf::from(&model);
        report.set_extension("ckpt.report.tsv");
        outputs.push([
            fs::read(&model).unwrap(),
            fs::read(report).unwrap(),
            fs::read(pred).unwrap(),
            fs::read(report_dir.join("report.txt")).unwrap(),
            fs::read(report_dir.join("report.tsv")).unwrap(),
        ]);
    }
    assert!(outputs[0] == outputs[1]);
}
