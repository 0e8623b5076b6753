use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use capformer::fixtures::Fixture;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_capformer"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Setup {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Setup {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let o = run(&["fixture", "--out", root.join("fx").to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        Self { _dir: dir, root }
    }

    fn p(&self, rel: &str) -> String {
        self.root.join(rel).to_str().unwrap().to_owned()
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            "train".to_owned(),
            "--config".into(),
            self.p("fx/fixture.conf"),
            "--captions".into(),
            self.p("fx/captions.txt"),
            "--features".into(),
            self.p("fx/features"),
            "--vocab".into(),
            self.p("fx/vocab.txt"),
            "--out".into(),
            self.p(out),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        bin().args(&args).output().unwrap()
    }

    fn evaluate(&self, ckpt: &str, report: &str, vocab: &str) -> Output {
        run(&[
            "evaluate",
            "--checkpoint",
            &self.p(ckpt),
            "--captions",
            &self.p("fx/captions.txt"),
            "--features",
            &self.p("fx/features"),
            "--vocab",
            vocab,
            "--report",
            &self.p(report),
        ])
    }
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn bleu4_line(out: &str) -> f64 {
    let line = out.lines().find(|l| l.starts_with("BLEU-4")).expect("BLEU-4 printed");
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn selftest_passes_and_names_suites() {
    let o = run(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    for suite in ["gradcheck", "causality", "bleu"] {
        assert!(text.contains(&format!("PASS {suite}")), "{text}");
    }
    assert_eq!(run(&["selftest", "--suite", "nope"]).status.code(), Some(2));
}

#[test]
fn build_vocab_files() {
    let s = Setup::new();
    let caps = s.p("fx/captions.txt");
    let o = run(&["build-vocab", "--captions", &caps, "--out", &s.p("v.txt")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("coverage: 100.00%"));
    let text = String::from_utf8(read(s.p("v.txt"))).unwrap();
    assert_eq!(text.lines().take(4).collect::<Vec<_>>(), ["<pad>", "<start>", "<end>", "<unk>"]);
    run(&["build-vocab", "--captions", &caps, "--out", &s.p("v2.txt")]);
    assert_eq!(read(s.p("v.txt")), read(s.p("v2.txt")));
    run(&["build-vocab", "--captions", &caps, "--out", &s.p("v5.txt"), "--max-size", "5"]);
    assert_eq!(String::from_utf8(read(s.p("v5.txt"))).unwrap().lines().count(), 5);
    std::fs::write(s.p("bad.txt"), "a.jpg|x|two words\n").unwrap();
    let o = run(&["build-vocab", "--captions", &s.p("bad.txt"), "--out", &s.p("v6.txt")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.txt"));
}

#[test]
fn overfit_training_then_evaluate_and_caption() {
    let s = Setup::new();
    let o = s.train("run", &["--max-epochs", "500"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = String::from_utf8(read(s.p("run/metrics.csv"))).unwrap();
    assert_eq!(metrics.lines().count(), 501);
    let last: Vec<&str> = metrics.lines().last().unwrap().split(',').collect();
    let loss: f64 = last[1].parse().unwrap();
    assert!(loss < 0.05, "final loss {loss}");

    let vocab = s.p("fx/vocab.txt");
    let o = s.evaluate("run/best.ckpt", "report.csv", &vocab);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(bleu4_line(&stdout(&o)) >= 0.99);
    let report = String::from_utf8(read(s.p("report.csv"))).unwrap();
    assert_eq!(report.lines().count(), 1 + 8 + 1);
    assert!(report.lines().last().unwrap().starts_with("#CORPUS,,"));

    let fx = Fixture::new(0).unwrap();
    for (id, caption) in fx.captions() {
        let feature = s.p(&format!("fx/features/{id}.capf"));
        let args = ["caption", "--checkpoint", &s.p("run/best.ckpt"), "--feature", &feature, "--vocab", &vocab];
        let a = run(&args);
        assert!(a.status.success(), "{}", stderr(&a));
        assert_eq!(stdout(&a).trim_end(), caption);
        assert_eq!(stdout(&run(&args)), stdout(&a));
    }
}

#[test]
fn seeded_runs_are_byte_identical() {
    let s = Setup::new();
    for out in ["a", "b"] {
        let o = s.train(out, &["--max-epochs", "4", "--seed", "7"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["metrics.csv", "best.ckpt", "last.ckpt", "test_captions.txt"] {
        assert_eq!(read(s.p(&format!("a/{f}"))), read(s.p(&format!("b/{f}"))), "{f}");
    }
    s.train("c", &["--max-epochs", "4", "--seed", "8"]);
    assert_ne!(read(s.p("a/last.ckpt")), read(s.p("c/last.ckpt")));
}

#[test]
fn resume_continues_the_same_run() {
    let s = Setup::new();
    assert!(s.train("full", &["--max-epochs", "6"]).status.success());
    assert!(s.train("part", &["--max-epochs", "3"]).status.success());
    let o = s.train("part", &["--max-epochs", "6", "--resume"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(s.p("full/metrics.csv")), read(s.p("part/metrics.csv")));
    assert_eq!(read(s.p("full/last.ckpt")), read(s.p("part/last.ckpt")));
}

#[test]
fn untrained_checkpoint_scores_near_zero() {
    let s = Setup::new();
    let o = s.train("zero", &["--max-epochs", "1", "--set", "learning_rate=0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = s.evaluate("zero/last.ckpt", "r.csv", &s.p("fx/vocab.txt"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(bleu4_line(&stdout(&o)) < 0.05);
}

#[test]
fn input_errors_exit_with_2() {
    let s = Setup::new();
    std::fs::remove_file(s.p("fx/features/10002456.jpg.capf")).unwrap();
    let o = s.train("x", &["--max-epochs", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("10002456.jpg"), "{}", stderr(&o));

    let o = run(&["train", "--captions", &s.p("fx/captions.txt")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("features"));

    let o = s.train("x", &["--set", "d_model=7"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn checkpoint_vocabulary_mismatch_and_bad_features_exit_with_2() {
    let s = Setup::new();
    assert!(s.train("r", &["--max-epochs", "1"]).status.success());
    run(&["build-vocab", "--captions", &s.p("fx/captions.txt"), "--out", &s.p("small.txt"), "--max-size", "10"]);
    let o = s.evaluate("r/last.ckpt", "r.csv", &s.p("small.txt"));
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(s.p("junk.capf"), b"CAPF1\0\x02\0\0\0").unwrap();
    let o = run(&[
        "caption", "--checkpoint", &s.p("r/last.ckpt"), "--feature", &s.p("junk.capf"), "--vocab", &s.p("fx/vocab.txt"),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exploding_training_exits_with_3() {
    let s = Setup::new();
    let o = s.train("boom", &["--max-epochs", "5", "--set", "learning_rate=1e30"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
}
