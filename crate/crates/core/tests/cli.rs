use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_author-repr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn synth(dir: &Path, users: &str) {
    let o = bin(
        &[
            "synth",
            "--users",
            users,
            "--docs-per-user",
            "4",
            "--waves",
            "2",
            "--seed",
            "5",
            "-o",
            "corpus.jsonl",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn config(model_lines: &str) -> String {
    format!(
        "seed = 3\ncorpus_path = \"corpus.jsonl\"\noutput_dir = \"out\"\nlevels = [\"user\"]\noutcomes = [\"valence\"]\n\
         repr_specs = [{{ model_tag = \"ar\", pooler = \"AT\", level = \"user\" }}]\n\
         [cv]\nk = 3\n[[models]]\ntag = \"ar\"\nfamily = \"Autoregressive\"\nd_model = 8\nd_ff = 16\ntrain_steps = 5\n{model_lines}"
    )
}

#[test]
fn run_compare_and_embedding_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "12");
    std::fs::write(d.join("exp.toml"), config("")).unwrap();
    let o = bin(&["run", "exp.toml"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("user:valence"));
    for f in [
        "report.csv",
        "report.json",
        "report.txt",
        "significance.csv",
        "manifest.json",
        "tokenizer.json",
    ] {
        assert!(d.join("out").join(f).exists(), "{f}");
    }

    let cell = "ar/AT/user/valence";
    let o = bin(&["compare", "--report", "out/report.json", cell, cell], d);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("p = 1.0000"));
    let o = bin(
        &[
            "compare",
            "--report",
            "out/report.json",
            cell,
            "ar/LT/user/valence",
        ],
        d,
    );
    assert_eq!(code(&o), 2);

    let o = bin(
        &[
            "export-embeddings",
            "--checkpoint",
            "out/checkpoints/ar.json",
            "--tokenizer",
            "out/tokenizer.json",
            "--corpus",
            "corpus.jsonl",
            "--pooler",
            "AT",
            "--level",
            "user",
            "-o",
            "ext.jsonl",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let exported = std::fs::read(d.join("ext.jsonl")).unwrap();
    assert_eq!(
        exported,
        std::fs::read(d.join("out/embeddings/ar_AT_SL_user.jsonl")).unwrap()
    );

    let o = bin(
        &[
            "import-embeddings",
            "--embeddings",
            "ext.jsonl",
            "--corpus",
            "corpus.jsonl",
            "--outcome",
            "valence",
            "--k",
            "3",
            "--seed",
            "1",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("mean r = "));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "6");
    std::fs::write(
        d.join("cls.toml"),
        config("").replace("pooler = \"AT\"", "pooler = \"CLS\""),
    )
    .unwrap();
    std::fs::write(d.join("noseed.toml"), config("").replace("seed = 3\n", "")).unwrap();
    for args in [
        vec!["run", "cls.toml"],
        vec!["run", "noseed.toml"],
        vec!["run", "missing.toml"],
        vec!["synth", "--users", "0", "--seed", "1", "-o", "x.jsonl"],
        vec!["frobnicate"],
    ] {
        assert_eq!(code(&bin(&args, d)), 2, "{args:?}");
    }
    assert!(
        !d.join("out").exists(),
        "validation must precede any compute"
    );
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("exp.toml"), config("")).unwrap();
    std::fs::write(d.join("corpus.jsonl"), "{\"doc_id\": 1}\n").unwrap();
    let o = bin(&["run", "exp.toml"], d);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("corpus.jsonl:1"));
    let manifest = std::fs::read_to_string(d.join("out/manifest.json")).unwrap();
    assert!(manifest.contains("\"partial\""));
    assert!(manifest.contains("load"));

    std::fs::write(d.join("bad.jsonl"), "{\"id\": \"u1\"}\n").unwrap();
    synth(d, "6");
    let o = bin(
        &[
            "import-embeddings",
            "--embeddings",
            "bad.jsonl",
            "--corpus",
            "corpus.jsonl",
            "--outcome",
            "valence",
            "--seed",
            "1",
        ],
        d,
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn diverging_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "6");
    std::fs::write(d.join("exp.toml"), config("learning_rate = 1e300\n")).unwrap();
    let o = bin(&["run", "exp.toml"], d);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train"));
}
