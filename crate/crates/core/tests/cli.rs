//! End-to-end tests of the `tagforge` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use regex::Regex;
use tagforge::bench::BenchResult;
use tagforge::features::{load_embedding_file, save_embedding_file};
use tagforge::tensor::Tensor;

fn tagforge(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tagforge"));
    cmd.args(args).env_remove("TAGFORGE_CACHE");
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SYNTHETIC: &str = r#"
archs = ["gcn", "graph_transformer", "mlp"]
workers = 2

[dataset]
kind = "synthetic"
nodes = 60
classes = 3
p_in = 0.3
p_out = 0.02
dim = 8
sep = 3.0
seed = 4

[model]
layers = 2
hidden = 16

[train]
seeds = [0, 1]
"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("bench.toml");
    fs::write(&path, body).unwrap();
    path
}

/// Five-node planetoid fixture with raw texts.
fn planetoid_fixture(dir: &Path) {
    fs::write(dir.join("tiny.labels"), "0\n0\n1\n1\n1\n").unwrap();
    fs::write(dir.join("tiny.edges"), "0 1\n1 2\n3 4\n2 3\n").unwrap();
    fs::write(
        dir.join("tiny.texts"),
        "graph neural networks\nneural message passing\ntext embeddings for nodes\nlarge language models\nlanguage model embeddings\n",
    )
    .unwrap();
}

#[test]
fn prepare_writes_once_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    planetoid_fixture(dir.path());
    let cfg = write_config(
        dir.path(),
        r#"
archs = ["gcn"]
[dataset]
kind = "planetoid"
dir = "."
name = "tiny"

[[encoders]]
name = "tfidf"
kind = "tfidf"
vocab_size = 8
"#,
    );
    let out = tagforge(&["prepare"], Some(&cfg));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("wrote"));
    let emb = dir.path().join("out/features/tfidf.emb");
    let m = load_embedding_file(&emb).unwrap();
    assert_eq!(m.shape(), (5, 8));
    let stamp = fs::metadata(&emb).unwrap().modified().unwrap();

    let again = tagforge(&["prepare"], Some(&cfg));
    assert!(again.status.success());
    assert!(stdout(&again).contains("exists"));
    assert_eq!(fs::metadata(&emb).unwrap().modified().unwrap(), stamp);

    let forced = tagforge(&["prepare", "--force"], Some(&cfg));
    assert!(stdout(&forced).contains("wrote"));
}

#[test]
fn dead_remote_endpoint_fails_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    planetoid_fixture(dir.path());
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"
archs = ["gcn"]
[dataset]
kind = "planetoid"
dir = "."
name = "tiny"

[[encoders]]
name = "svc"
kind = "remote"
endpoint = "{endpoint}"
model = "m"
backoff_ms = 1
"#
        ),
    );
    let out = tagforge(&["prepare"], Some(&cfg));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains(&endpoint), "{}", stderr(&out));
}

#[test]
fn train_is_repeatable_and_fast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SYNTHETIC}\n[[encoders]]\nname = \"tfidf\"\nkind = \"tfidf\"\nvocab_size = 64\n"),
    );
    let start = std::time::Instant::now();
    let a = tagforge(&["train", "--encoder", "tfidf", "--arch", "gt", "--seed", "3"], Some(&cfg));
    assert!(start.elapsed().as_secs() < 60);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = tagforge(&["train", "--encoder", "tfidf", "--arch", "gt", "--seed", "3"], Some(&cfg));
    assert_eq!(stdout(&a), stdout(&b));
    let line = stdout(&a);
    let re = Regex::new(r"val_acc=\d\.\d{4} test_acc=\d\.\d{4} best_epoch=\d+ epochs_ran=\d+").unwrap();
    assert!(re.is_match(&line), "{line}");
    assert!(dir.path().join("out/logs/tfidf_graph_transformer_seed3.jsonl").is_file());
}

#[test]
fn bad_feature_files_fail_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "{SYNTHETIC}\n[[encoders]]\nname = \"broken\"\nkind = \"file\"\npath = \"broken.emb\"\n\n\
             [[encoders]]\nname = \"short\"\nkind = \"file\"\npath = \"short.emb\"\n"
        ),
    );
    fs::write(dir.path().join("broken.emb"), b"NOPE and some bytes").unwrap();
    save_embedding_file(&dir.path().join("short.emb"), &Tensor::zeros(59, 4)).unwrap();

    let out = tagforge(&["train", "--encoder", "broken"], Some(&cfg));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("format error"), "{}", stderr(&out));

    let out = tagforge(&["train", "--encoder", "short"], Some(&cfg));
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("short.emb") && err.contains("59 rows") && err.contains("60 nodes"), "{err}");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = tagforge(&["train"], Some(&dir.path().join("nope.toml")));
    assert_eq!(missing.status.code(), Some(2));

    let cfg = write_config(dir.path(), &format!("mystery_key = 1\n{SYNTHETIC}\nencoders = []\n"));
    assert_eq!(tagforge(&["bench"], Some(&cfg)).status.code(), Some(2));

    let cfg = write_config(dir.path(), &format!("encoders = []\n{SYNTHETIC}"));
    let out = tagforge(&["bench"], Some(&cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("encoder"));

    let bad_flag = tagforge(&["bench", "--format", "html"], Some(&cfg));
    assert_eq!(bad_flag.status.code(), Some(2));
}

#[test]
fn bench_emits_full_grid_in_every_format() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{SYNTHETIC}\n[[encoders]]\nname = \"tfidf\"\nkind = \"tfidf\"\nvocab_size = 64\n\n\
         [[encoders]]\nname = \"word\"\nkind = \"word\"\nvocab_size = 64\n"
    );
    let cfg = write_config(dir.path(), &body);
    let out = tagforge(&["bench", "--format", "md"], Some(&cfg));
    assert!(out.status.success(), "{}", stderr(&out));
    let md = stdout(&out);
    let cell = Regex::new(r"\d+\.\d{2} ± \d+\.\d{2}").unwrap();
    assert_eq!(cell.find_iter(&md).count(), 6, "{md}");
    // each row marks its best mean
    for row in md.lines().skip(2) {
        assert!(row.contains("**"), "{row}");
    }

    // the CSV holds the same numbers as the table
    let csv = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    let parsed = BenchResult::from_csv(&csv).unwrap();
    assert_eq!(parsed.cells.len(), 6);
    assert_eq!(parsed.to_markdown(), md);

    let tex_path = dir.path().join("table.tex");
    let out = tagforge(
        &["bench", "--seeds", "2", "--format", "tex", "--out", tex_path.to_str().unwrap()],
        Some(&cfg),
    );
    assert!(out.status.success());
    let tex = fs::read_to_string(&tex_path).unwrap();
    assert!(tex.contains("\\textbf{") && tex.contains("$\\pm$"));

    let out = tagforge(&["bench", "--format", "csv"], Some(&cfg));
    assert_eq!(stdout(&out), csv);

    let out = tagforge(&["bench", "--seeds", "1"], Some(&cfg));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_with_failing_cell_exits_nonzero_but_emits_table() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{SYNTHETIC}\n[[encoders]]\nname = \"tfidf\"\nkind = \"tfidf\"\nvocab_size = 32\n\n\
         [[encoders]]\nname = \"short\"\nkind = \"file\"\npath = \"short.emb\"\n"
    );
    save_embedding_file(&dir.path().join("short.emb"), &Tensor::zeros(10, 4)).unwrap();
    let cfg = write_config(dir.path(), &body);
    let out = tagforge(&["bench"], Some(&cfg));
    assert_eq!(out.status.code(), Some(1));
    let md = stdout(&out);
    assert!(md.contains("| short | failed | failed | failed |"), "{md}");
    assert!(md.lines().any(|l| l.starts_with("| tfidf |") && l.contains("**")));
    assert!(stderr(&out).contains("failed short"));
}

#[test]
fn gradcheck_reports_each_op_once() {
    let out = tagforge(&["gradcheck"], None);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    let ops: Vec<&str> = text
        .lines()
        .filter(|l| l.contains("max_rel_err="))
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    let mut unique = ops.clone();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), ops.len());
    for op in ["matmul", "relu", "dropout", "row_softmax", "spmm", "gcn_layer", "graph_transformer_layer", "mlp_layer"] {
        assert!(ops.contains(&op), "{op} missing");
    }
    assert!(text.contains("all passed"));
}
