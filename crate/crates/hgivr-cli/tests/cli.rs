//! End-to-end checks of the `hgivr` binary: validate, run with the scripted
//! backend, and compare two reports.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hgivr"))
}

fn write_fixtures(dir: &Path) {
    let manifest = concat!(
        r#"{"id":"q1","question":"Which material is this path made of?","image":"img1.png","choices":["plastic","brick"],"gold":["brick"],"tags":{"subject":"science"}}"#,
        "\n",
        r#"{"id":"q2","question":"What toy is this?","image":"img2.jpg","gold":["teddy bear"],"tags":{"subject":"vqa"}}"#,
        "\n"
    );
    std::fs::write(dir.join("manifest.jsonl"), manifest).unwrap();
    let config = r#"
backend = "scripted"

[scripted]
descriptions = ["A red brick path.", "A teddy bear in a backpack."]
default_answers = ["The answer is B.", "The answer is B."]

[scripted.answers_by_id]
q2 = ["The answer is teddy.", "The answer is teddy bear.", "The answer is teddy bear."]
"#;
    std::fs::write(dir.join("run.toml"), config).unwrap();
}

#[test]
fn validate_accepts_well_formed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_fixtures(dir.path());
    let out = bin()
        .args(["validate"])
        .arg(dir.path().join("manifest.jsonl"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok: 2 questions"));
}

#[test]
fn validate_rejects_duplicate_ids() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = concat!(
        r#"{"id":"q1","question":"a?","image":"i.png","gold":["x"]}"#,
        "\n",
        r#"{"id":"q1","question":"b?","image":"i.png","gold":["y"]}"#,
        "\n"
    );
    std::fs::write(dir.path().join("manifest.jsonl"), manifest).unwrap();
    let out = bin()
        .args(["validate"])
        .arg(dir.path().join("manifest.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    write_fixtures(dir.path());
    let manifest = dir.path().join("manifest.jsonl");
    let config = dir.path().join("run.toml");

    for (strategy, out_dir) in [("hgivr", "out-hgivr"), ("standard", "out-std")] {
        let out = bin()
            .args(["run", "--strategy", strategy, "--config"])
            .arg(&config)
            .arg("--manifest")
            .arg(&manifest)
            .arg("--out")
            .arg(dir.path().join(out_dir))
            .args(["--group-by", "subject"])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{strategy}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let out_path = dir.path().join(out_dir);
        for file in ["transcripts.jsonl", "report.json", "report.csv"] {
            assert!(out_path.join(file).exists(), "{strategy}: missing {file}");
        }
    }

    let transcripts = std::fs::File::open(dir.path().join("out-hgivr/transcripts.jsonl")).unwrap();
    let transcripts =
        hgivr::model::read_transcripts(std::io::BufReader::new(transcripts)).unwrap();
    assert_eq!(transcripts.len(), 2);
    assert_eq!(transcripts[0].answer_call_count, 2); // B, B -> confirmed
    assert_eq!(transcripts[1].answer_call_count, 3); // teddy, teddy bear, teddy bear

    let csv = std::fs::read_to_string(dir.path().join("out-hgivr/report.csv")).unwrap();
    assert!(csv.starts_with("strategy,dataset,group,n,accuracy,avg_answer_calls,avg_total_calls"));

    let out = bin()
        .args(["compare"])
        .arg(dir.path().join("out-std/report.json"))
        .arg(dir.path().join("out-hgivr/report.json"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("standard"));
    assert!(stdout.contains("hgivr"));
}

#[test]
fn simulate_oracle_agreement() {
    let out = bin()
        .args([
            "simulate", "--m", "2", "--episodes", "2000", "--seed", "7", "--oracle",
            "--parallelism", "4",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("exact_expected_answer_calls=2.500000"), "{stdout}");
}
