use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use javagen::corpus::{load_split, Split};
use javagen::tokenizer::Vocabulary;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn javagen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_javagen")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = javagen(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_MODEL: &str = "[model]\nnum_layers = 1\nd_model = 16\nnum_heads = 2\nd_ff = 32\nvocab_size = 400\nnum_rel_buckets = 8\nmax_rel_distance = 16\n";

#[test]
fn evaluate_gold_against_itself_scores_100() {
    let dir = tempfile::tempdir().unwrap();
    let refs = fixtures().join("concode_100.jsonl");
    let pred = dir.path().join("p.txt");
    let codes: Vec<String> = load_split(&refs, Split::Test).unwrap().into_iter().map(|s| s.code).collect();
    std::fs::write(&pred, codes.join("\n") + "\n").unwrap();
    let json = dir.path().join("r.json");
    let table = ok(&["evaluate", "--pred", s(&pred), "--ref", s(&refs), "--out", s(&json)]);
    assert!(table.contains("| 100.00 | 100.00 | 100.00 |"), "{table}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["n_samples"], 100);
}

#[test]
fn seq_lengths_matches_direct_encoding() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("three.jsonl");
    let recs = [("add one", "int f ( int x ) { return x + 1 ; }"), ("noop", "void g ( ) { }"), ("a much longer description of nothing", "int h ( ) { return 0 ; }")];
    let lines: Vec<String> = recs.iter().map(|(nl, code)| serde_json::json!({ "nl": nl, "code": code }).to_string()).collect();
    std::fs::write(&data, lines.join("\n") + "\n").unwrap();
    let vocab = dir.path().join("v.txt");
    ok(&["tokenizer-train", "--input", s(&data), "--vocab-size", "380", "--out", s(&vocab)]);
    assert!(dir.path().join("v.txt.manifest.json").exists());
    let out = ok(&["seq-lengths", "--vocab", s(&vocab), "--data", s(&data)]);
    let v = Vocabulary::load(&vocab).unwrap();
    let max_in = recs.iter().map(|(nl, _)| v.encode(nl).len() + 1).max().unwrap();
    let max_tgt = recs.iter().map(|(_, code)| v.encode(code).len() + 1).max().unwrap();
    assert!(out.contains(&format!("max_input_len {max_in}\n")), "{out}");
    assert!(out.contains(&format!("max_target_len {max_tgt}\n")), "{out}");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = javagen(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_input_is_a_data_error_with_one_json_line() {
    let out = javagen(&["corpus-stats", "--train", "/nonexistent/train.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!((v["error"].as_str(), v["code"].as_u64()), (Some("data"), Some(3)));
}

#[test]
fn invalid_config_is_reported_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "steps = 1\nbatch_size = 0\ninput_len = 8\ntarget_len = 8\nseed = 0\n").unwrap();
    let out = javagen(&["finetune", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size must be at least 1"));
}

#[test]
fn clean_and_stats_on_scaled_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixtures().join("cleaning");
    let (tr, va, te) = (c.join("train.jsonl"), c.join("valid.jsonl"), c.join("test.jsonl"));
    let stats: serde_json::Value = serde_json::from_str(&ok(&["corpus-stats", "--train", s(&tr), "--valid", s(&va), "--test", s(&te)])).unwrap();
    assert_eq!(stats["total"], 903);
    let out = dir.path().join("clean");
    let report: serde_json::Value = serde_json::from_str(&ok(&["clean", "--train", s(&tr), "--valid", s(&va), "--test", s(&te), "--out-dir", s(&out)])).unwrap();
    assert_eq!(report["retained_total"], 900);
    assert_eq!(load_split(&out.join("train.jsonl"), Split::Train).unwrap().len(), 809);
    assert_eq!(javagen::corpus::load_code_lines(&out.join("pretrain_pool.jsonl")).unwrap().len(), 900);
    assert!(out.join("manifest.json").exists() && out.join("cleaning_report.json").exists());
}

#[test]
fn debug_ast_dumps_all_three_views() {
    let out = ok(&["debug-ast", "--code", "int f ( int a ) { int b = a + 1 ; return b ; }"]);
    for section in ["tokens:", "ast:", "subtrees:", "edges:"] {
        assert!(out.contains(section), "{out}");
    }
    assert!(out.contains("v1 <- v0 ComputedFrom"), "{out}");
}

#[test]
fn report_compare_appends_reports_after_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let refs = fixtures().join("pairs_32.jsonl");
    let pred = dir.path().join("p.txt");
    std::fs::write(&pred, "\n".repeat(32)).unwrap();
    let json = dir.path().join("r.json");
    ok(&["evaluate", "--pred", s(&pred), "--ref", s(&refs), "--out", s(&json)]);
    let table = ok(&["report-compare", "--report", &format!("ours={}", s(&json))]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2 + 7 + 1);
    assert!(lines.last().unwrap().starts_with("| ours"));
    let bare = ok(&["report-compare", "--no-baselines", "--report", &format!("ours={}", s(&json))]);
    assert_eq!(bare.lines().count(), 3);
}

#[test]
fn pipeline_runs_end_to_end_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pairs = fixtures().join("pairs_32.jsonl");
    let docs = fixtures().join("code_docs_64.txt");
    let vocab = d.join("vocab.txt");
    ok(&["tokenizer-train", "--input", s(&pairs), "--input", s(&docs), "--vocab-size", "400", "--out", s(&vocab)]);
    let shard = d.join("pre.jgsh");
    ok(&["make-pretrain-shards", "--vocab", s(&vocab), "--code", s(&docs), "--out", s(&shard), "--input-len", "32", "--target-len", "16", "--seed", "4"]);

    let pre_cfg = d.join("pre.toml");
    std::fs::write(&pre_cfg, format!("steps = 6\nbatch_size = 4\ninput_len = 32\ntarget_len = 16\nseed = 3\n{TINY_MODEL}")).unwrap();
    let pre_out = d.join("pre");
    ok(&["pretrain", "--config", s(&pre_cfg), "--vocab", s(&vocab), "--shards", s(&shard), "--output-dir", s(&pre_out)]);
    assert!(pre_out.join("manifest.json").exists());

    let ft_cfg = d.join("ft.toml");
    std::fs::write(&ft_cfg, format!("steps = 5\nbatch_size = 4\ninput_len = 12\ntarget_len = 24\nseed = 9\n{TINY_MODEL}")).unwrap();
    let init = pre_out.join("final.ckpt");
    let run = |name: &str| {
        let out = d.join(name);
        ok(&["--sequential", "finetune", "--config", s(&ft_cfg), "--vocab", s(&vocab), "--train", s(&pairs), "--init-checkpoint", s(&init), "--output-dir", s(&out)]);
        out
    };
    let (a, b) = (run("ft_a"), run("ft_b"));
    assert_eq!(std::fs::read(a.join("final.ckpt")).unwrap(), std::fs::read(b.join("final.ckpt")).unwrap());
    assert_eq!(std::fs::read_to_string(a.join("metrics.jsonl")).unwrap().lines().count(), 5);

    let preds = d.join("preds.txt");
    ok(&["generate", "--checkpoint", s(&a.join("final.ckpt")), "--vocab", s(&vocab), "--input", s(&pairs), "--out", s(&preds), "--input-len", "12", "--max-len", "24"]);
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), 32);
    let table = ok(&["evaluate", "--pred", s(&preds), "--ref", s(&pairs)]);
    assert!(table.starts_with("| BLEU | EM | CodeBLEU |"));

    let other_vocab = d.join("other.txt");
    ok(&["tokenizer-train", "--input", s(&pairs), "--vocab-size", "400", "--out", s(&other_vocab)]);
    let out = javagen(&["generate", "--checkpoint", s(&a.join("final.ckpt")), "--vocab", s(&other_vocab), "--input", s(&pairs), "--out", s(&d.join("x.txt"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn grid_renders_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pairs = fixtures().join("pairs_32.jsonl");
    let vocab = d.join("vocab.txt");
    ok(&["tokenizer-train", "--input", s(&pairs), "--vocab-size", "400", "--out", s(&vocab)]);
    let grid = d.join("grid.toml");
    let text = format!(
        "batch_size = 4\nseed = 1\neval = \"{p}\"\n[data]\nvocab = \"{v}\"\ntrain = \"{p}\"\n{TINY_MODEL}\n[[cells]]\ninput_len = 8\ntarget_len = 4\nsteps = 2\n\n[[cells]]\ninput_len = 8\ntarget_len = 24\nsteps = 3\n",
        p = s(&pairs),
        v = s(&vocab)
    );
    std::fs::write(&grid, text).unwrap();
    let out = ok(&["grid", "--config", s(&grid), "--out-dir", s(&d.join("g"))]);
    assert_eq!(out.lines().count(), 4, "{out}");
    assert!(out.lines().nth(2).unwrap().starts_with("| 8 | 4 | 2 |"));
    assert!(d.join("g/grid_report.json").exists() && d.join("g/manifest.json").exists());
}
