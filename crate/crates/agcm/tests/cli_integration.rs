//! End-to-end checks through the compiled binary: exit codes, artifact
//! layout, flag shadowing, and output-root resolution.

use std::path::{Path, PathBuf};
use std::process::Output;

use agcm::synthdata::{load_csv, SplitKind};

fn agcm_env(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_agcm"));
    cmd.args(args);
    cmd.env_remove("AGCM_OUT_ROOT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn agcm(args: &[&str]) -> Output {
    agcm_env(args, &[])
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process was signalled")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL_CFG: &str = "\
# desk-sized protocol, small enough for end-to-end checks
dataset.dim = 12
dataset.n_base = 3
dataset.n_novel = 2
dataset.samples_per_class = 40
dataset.eval_per_class = 30
dataset.confusable = none
base.epochs = 30
base.batch_size = 32
adapt.epochs = 20
adapt.batch_size = 8
adapt.k = 5
seeds = 1,2
jobs = 1
";

fn write_cfg(dir: &Path) -> PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, SMALL_CFG).unwrap();
    path
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn run_writes_the_expected_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path());
    let out = tmp.path().join("out");
    let r = agcm(&["run", "--config", &s(&cfg), "--out", &s(&out)]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    assert!(out.join("summary.csv").is_file());
    assert!(out.join("config.effective.txt").is_file());
    for seed in [1, 2] {
        let dir = out.join(format!("seed_{seed}"));
        for name in [
            "base_log.csv",
            "adapt_log.csv",
            "head_base.bin",
            "head_adapted.bin",
            "eval.csv",
            "confusion.csv",
            "metrics.txt",
        ] {
            assert!(dir.join(name).is_file(), "missing {name} for seed {seed}");
        }
    }
    let table = stdout(&r);
    assert!(table.contains("mean"), "summary table not printed:\n{table}");
}

#[test]
fn flags_shadow_config_file_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path());
    let out = tmp.path().join("out");
    let r = agcm(&[
        "run",
        "--config",
        &s(&cfg),
        "--out",
        &s(&out),
        "--seed",
        "3",
        "--alpha",
        "1.0",
        "--margin",
        "0.0",
    ]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let echoed = std::fs::read_to_string(out.join("config.effective.txt")).unwrap();
    assert!(echoed.contains("adapt.alpha = 1\n"));
    assert!(echoed.contains("adapt.margin = 0\n"));
    assert!(echoed.contains("seeds = 3\n"));
    assert!(out.join("seed_3").is_dir());
    assert!(!out.join("seed_1").exists());
}

#[test]
fn effective_config_reloads_and_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path());
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    assert_eq!(code(&agcm(&["run", "--config", &s(&cfg), "--out", &s(&first)])), 0);
    let echoed = first.join("config.effective.txt");
    let r = agcm(&["run", "--config", &s(&echoed), "--out", &s(&second)]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    assert_eq!(
        std::fs::read(first.join("summary.csv")).unwrap(),
        std::fs::read(second.join("summary.csv")).unwrap(),
        "a reloaded effective config changed the results"
    );
}

#[test]
fn config_problems_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();

    let missing = tmp.path().join("nope.cfg");
    let r = agcm(&["run", "--config", &s(&missing)]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("nope.cfg"), "stderr: {}", stderr(&r));

    let bad = tmp.path().join("bad.cfg");
    std::fs::write(&bad, "adapt.alpha = high\n").unwrap();
    let r = agcm(&["run", "--config", &s(&bad)]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("adapt.alpha"), "stderr: {}", stderr(&r));

    let unknown = tmp.path().join("unknown.cfg");
    std::fs::write(&unknown, "frobs = 2\n").unwrap();
    let r = agcm(&["run", "--config", &s(&unknown)]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("frobs"), "stderr: {}", stderr(&r));

    // value out of range survives parsing but fails validation
    let invalid = tmp.path().join("invalid.cfg");
    std::fs::write(&invalid, "adapt.alpha = 0.2\n").unwrap();
    let r = agcm(&["run", "--config", &s(&invalid)]);
    assert_eq!(code(&r), 1);
}

#[test]
fn gradcheck_exit_codes() {
    let r = agcm(&["gradcheck", "--seed", "3", "--count", "4"]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let text = stdout(&r);
    for name in ["primitives", "fusion", "margin-loss", "head"] {
        assert!(text.contains(name), "suite {name} missing from:\n{text}");
    }
    assert_eq!(text.matches("PASS").count(), 4, "output:\n{text}");

    let r = agcm(&["gradcheck", "--count", "3", "--corrupt-suite", "fusion"]);
    assert_eq!(code(&r), 3, "a damaged gradient must exit 3");
    let text = stdout(&r);
    assert!(text.contains("FAIL"), "output:\n{text}");
    assert!(text.contains("coordinate"), "worst offender not reported:\n{text}");

    assert_eq!(code(&agcm(&["gradcheck", "--count", "0"])), 1);
    assert_eq!(code(&agcm(&["gradcheck", "--corrupt-suite", "bogus"])), 1);
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&agcm(&["frobnicate"])), 1);
    assert_eq!(code(&agcm(&["run", "--bogus"])), 1);
    assert_eq!(code(&agcm(&[])), 1);

    let r = agcm(&["--help"]);
    assert_eq!(code(&r), 0);
    let text = stdout(&r);
    for name in ["run", "sweep", "gradcheck", "datagen", "report"] {
        assert!(text.contains(name), "help omits {name}:\n{text}");
    }
    assert_eq!(code(&agcm(&["--version"])), 0);
}

#[test]
fn datagen_emits_loadable_splits() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path());
    let out = tmp.path().join("data");
    let r = agcm(&["datagen", "--config", &s(&cfg), "--seed", "9", "--out", &s(&out)]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    // base training never sees the novel classes, so its class count is smaller
    for (name, split, classes) in [
        ("base_train.csv", SplitKind::BaseTrain, 3),
        ("support_pool.csv", SplitKind::SupportPool, 5),
        ("eval.csv", SplitKind::Eval, 5),
    ] {
        let ds = load_csv(&out.join(name), split).unwrap();
        assert!(!ds.is_empty(), "{name} is empty");
        assert_eq!(ds.dim(), 12);
        assert_eq!(ds.n_real_classes, classes, "wrong class count in {name}");
    }
}

#[test]
fn report_recomputes_saved_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path());
    let out = tmp.path().join("out");
    assert_eq!(code(&agcm(&["run", "--config", &s(&cfg), "--out", &s(&out)])), 0);

    let r = agcm(&["report", "--out", &s(&out)]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let text = stdout(&r);
    assert!(text.contains("aggregate"), "no aggregate block:\n{text}");
    for seed in [1, 2] {
        let stored = std::fs::read_to_string(out.join(format!("seed_{seed}/metrics.txt"))).unwrap();
        assert!(text.contains(&stored), "report disagrees with stored metrics for seed {seed}");
    }

    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&agcm(&["report", "--out", &s(&empty)])), 2);
}

#[test]
fn output_root_env_var_roots_relative_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path());
    let root = tmp.path().join("artifacts");
    let r = agcm_env(
        &["run", "--config", &s(&cfg), "--out", "exp_rel"],
        &[("AGCM_OUT_ROOT", &s(&root))],
    );
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    assert!(root.join("exp_rel/summary.csv").is_file());

    // an absolute --out wins over the root
    let abs = tmp.path().join("abs_out");
    let r = agcm_env(
        &["run", "--config", &s(&cfg), "--out", &s(&abs)],
        &[("AGCM_OUT_ROOT", &s(&root))],
    );
    assert_eq!(code(&r), 0);
    assert!(abs.join("summary.csv").is_file());
    assert!(!root.join("abs_out").exists());
}

#[test]
fn sweep_runs_a_small_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path());
    let out = tmp.path().join("sweep");
    let r = agcm(&[
        "sweep",
        "--config",
        &s(&cfg),
        "--out",
        &s(&out),
        "--alphas",
        "0.8",
        "--metrics",
        "none",
        "--margins",
        "0,0.2",
    ]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 4, "expected header plus three cells:\n{sweep}");
    for cell in ["alpha_0.8", "margin_0", "margin_0.2"] {
        assert!(out.join("cells").join(cell).join("summary.csv").is_file(), "missing {cell}");
    }

    let r = agcm(&[
        "sweep",
        "--out",
        &s(&tmp.path().join("none")),
        "--alphas",
        "none",
        "--metrics",
        "none",
        "--margins",
        "none",
    ]);
    assert_eq!(code(&r), 1, "an empty grid is a usage error");
    assert!(stderr(&r).contains("empty"), "stderr: {}", stderr(&r));
}
