use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const STAMP: &str = "00000000T000000Z";

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn stonediag(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stonediag"))
        .arg("--config")
        .arg(data("config.toml"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn assert_ok(output: &Output) {
    assert!(
        output.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        output.status.code(),
        text(&output.stdout),
        text(&output.stderr)
    );
}

fn path_arg(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

#[test]
fn kb_ingest_reproduces_the_committed_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("kb.store");
    let docs: Vec<String> = ["environment.txt", "lithology.txt", "patterns.txt"]
        .iter()
        .map(|d| path_arg(&data(&format!("kb/{d}"))))
        .collect();
    let mut args = vec!["--kb", store.to_str().unwrap(), "kb-ingest"];
    args.extend(docs.iter().map(String::as_str));
    let output = stonediag(dir.path(), &args);
    assert_ok(&output);
    assert!(text(&output.stdout).contains("from 3 documents"));
    assert_eq!(
        std::fs::read(&store).unwrap(),
        std::fs::read(data("kb/kb.store")).unwrap()
    );
}

#[test]
fn kb_ingest_names_an_unreadable_document() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("kb.store");
    let missing = dir.path().join("nowhere.txt");
    let output = stonediag(
        dir.path(),
        &[
            "--kb",
            store.to_str().unwrap(),
            "kb-ingest",
            missing.to_str().unwrap(),
        ],
    );
    assert_eq!(output.status.code(), Some(2));
    assert!(text(&output.stderr).contains("nowhere.txt"));
    assert!(!store.exists());
}

#[test]
fn diagnose_corpus_matches_committed_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path_arg(&data("fixtures/corpus.jsonl"));
    let output = stonediag(dir.path(), &["diagnose", "--corpus", &corpus]);
    assert_ok(&output);
    let stdout = text(&output.stdout);
    assert!(
        stdout.contains("total: 101400 prompt + 33750 completion tokens, $0.26"),
        "{stdout}"
    );
    for case in ["case01", "case02", "case03"] {
        let run = dir.path().join(format!("{case}-{STAMP}"));
        for artifact in [
            "log.jsonl",
            "diagnosis.json",
            "predictions.json",
            "usage.json",
        ] {
            assert!(run.join(artifact).is_file(), "{case} lacks {artifact}");
        }
        assert_eq!(
            std::fs::read(run.join("predictions.json")).unwrap(),
            std::fs::read(data(&format!("fixtures/predictions/agentic/{case}.json"))).unwrap()
        );
        let log = std::fs::read_to_string(run.join("log.jsonl")).unwrap();
        assert_eq!(log.lines().filter(|l| l.contains("\"seq\"")).count(), 9);
    }
}

#[test]
fn diagnose_is_byte_stable() {
    let image = path_arg(&data("fixtures/images/case03.jpg"));
    let mut seen = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let output = stonediag(dir.path(), &["diagnose", &image]);
        assert_ok(&output);
        let run = dir.path().join(format!("case03-{STAMP}"));
        let files: Vec<Vec<u8>> = [
            "log.jsonl",
            "diagnosis.json",
            "predictions.json",
            "usage.json",
        ]
        .iter()
        .map(|f| std::fs::read(run.join(f)).unwrap())
        .collect();
        let stdout = text(&output.stdout).replace(dir.path().to_str().unwrap(), "<out>");
        seen.push((files, stdout));
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn diagnose_missing_image_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = stonediag(dir.path(), &["diagnose", "no-such-image.png"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(text(&output.stderr).contains("no-such-image.png"));
}

#[test]
fn diagnose_with_unknown_speaker_order_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let image = path_arg(&data("fixtures/images/case01.png"));
    let output = stonediag(
        dir.path(),
        &["--order", "lithologist,nobody", "diagnose", &image],
    );
    assert_eq!(output.status.code(), Some(2), "{}", text(&output.stderr));
}

#[test]
fn baseline_corpus_matches_committed_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path_arg(&data("fixtures/corpus.jsonl"));
    let output = stonediag(dir.path(), &["baseline", "--corpus", &corpus]);
    assert_ok(&output);
    for case in ["case01", "case02", "case03"] {
        let run = dir.path().join("baseline").join(format!("{case}-{STAMP}"));
        assert_eq!(
            std::fs::read(run.join("predictions.json")).unwrap(),
            std::fs::read(data(&format!("fixtures/predictions/baseline/{case}.json"))).unwrap()
        );
        assert!(run.join("analysis.json").is_file());
    }
}

#[test]
fn malformed_reply_after_retry_exits_with_run_failure() {
    let dir = tempfile::tempdir().unwrap();
    let source = std::fs::read_to_string(data("fixtures/transcript.jsonl")).unwrap();
    let broken: String = source
        .lines()
        .map(|line| {
            let mut record: serde_json::Value = serde_json::from_str(line).unwrap();
            if record["case_id"] == "case01" && record["phase"] == "baseline" {
                record["reply_text"] = "no fenced block here".into();
            }
            format!("{record}\n")
        })
        .collect();
    let transcript = dir.path().join("broken.jsonl");
    std::fs::write(&transcript, broken).unwrap();
    let image = path_arg(&data("fixtures/images/case01.png"));
    let output = stonediag(
        dir.path(),
        &[
            "--mock-transcript",
            transcript.to_str().unwrap(),
            "baseline",
            &image,
        ],
    );
    assert_eq!(output.status.code(), Some(3));
    assert!(text(&output.stderr).contains("case01"));
    assert!(!dir
        .path()
        .join("baseline")
        .join(format!("case01-{STAMP}"))
        .join("predictions.json")
        .exists());
}

#[test]
fn eval_reports_committed_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path_arg(&data("fixtures/corpus.jsonl"));
    let baseline = format!(
        "baseline={}",
        path_arg(&data("fixtures/predictions/baseline"))
    );
    let agentic = format!(
        "agentic={}",
        path_arg(&data("fixtures/predictions/agentic"))
    );
    let output = stonediag(
        dir.path(),
        &[
            "eval",
            "--corpus",
            &corpus,
            "--predictions",
            &baseline,
            "--predictions",
            &agentic,
        ],
    );
    assert_ok(&output);
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(
        csv,
        "System,TP,FP,FN,Precision,Recall,F1-score\n\
         baseline,3,3,10,50.0%,23.1%,31.6%\n\
         agentic,11,3,2,78.6%,84.6%,81.5%\n"
    );
    let table = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert_eq!(text(&output.stdout), table);
    assert!(table.contains("baseline: recall >= 50% in 0 of 3 images"));
    assert!(table.contains("agentic: recall >= 50% in 3 of 3 images"));
    let per_image = std::fs::read_to_string(dir.path().join("per_image.csv")).unwrap();
    assert_eq!(per_image.lines().count(), 7);
}

#[test]
fn eval_lists_cases_without_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let partial = dir.path().join("partial");
    std::fs::create_dir_all(&partial).unwrap();
    std::fs::copy(
        data("fixtures/predictions/agentic/case02.json"),
        partial.join("case02.json"),
    )
    .unwrap();
    let corpus = path_arg(&data("fixtures/corpus.jsonl"));
    let spec = format!("partial={}", path_arg(&partial));
    let output = stonediag(
        dir.path(),
        &["eval", "--corpus", &corpus, "--predictions", &spec],
    );
    assert_eq!(output.status.code(), Some(2));
    let stderr = text(&output.stderr);
    assert!(stderr.contains("case01, case03"), "{stderr}");
    assert!(!dir.path().join("report.csv").exists());
}

#[test]
fn config_with_inline_credential_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let original = std::fs::read_to_string(data("config.toml")).unwrap();
    let config = dir.path().join("config.toml");
    let data_dir = path_arg(&data(""));
    let patched = original
        .replace(
            "api_key_env = \"OPENAI_API_KEY\"",
            "api_key = \"sk-inline\"",
        )
        .replace(
            "= \"taxonomy.jsonl\"",
            &format!("= \"{data_dir}/taxonomy.jsonl\""),
        );
    std::fs::write(&config, patched).unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_stonediag"))
        .arg("--config")
        .arg(&config)
        .args(["diagnose", "x.png"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(text(&output.stderr).contains("api_key"));
}
