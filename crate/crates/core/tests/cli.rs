use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use metaaug::harness::{RunSummary, PLOT_DIR};

fn metaaug(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metaaug"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn tiny_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let run = dir.join("run");
    let text = format!(
        r#"
learner = "maml"
task = "sinusoid"
seeds = [0, 1]
total_steps = 10
eval_every = 1
eval_episodes = 2
test_episodes = 2
out_dir = "{}"

[model]
hidden = [8]
{extra}
"#,
        run.display()
    );
    let path = dir.join("cfg.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn gradcheck_exit_codes() {
    let ok = metaaug(&["gradcheck", "--op", "matmul"]);
    assert_eq!(code(&ok), 0);
    assert!(String::from_utf8_lossy(&ok.stdout).contains("PASS"));
    assert_eq!(code(&metaaug(&["gradcheck", "--op", "no_such_op"])), 2);
}

#[test]
fn verify_entropy_on_a_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    fs::write(
        &good,
        r#"
x = ["a", "b"]
y = ["0", "1"]
p = [[0.25, 0.25], [0.4, 0.1]]
eps = ["0", "1"]
p_eps = [0.5, 0.5]
g = [["0", "1"], ["2", "3"]]
"#,
    )
    .unwrap();
    let out = metaaug(&["verify-entropy", "--spec", good.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));

    let collapsed = dir.path().join("collapsed.toml");
    fs::write(
        &collapsed,
        fs::read_to_string(&good)
            .unwrap()
            .replace(r#"["2", "3"]"#, r#"["1", "0"]"#),
    )
    .unwrap();
    let out = metaaug(&["verify-entropy", "--spec", collapsed.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("NOT-APPLICABLE"));

    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        fs::read_to_string(&good)
            .unwrap()
            .replace("0.4, 0.1", "0.4, 0.4"),
    )
    .unwrap();
    assert_eq!(
        code(&metaaug(&[
            "verify-entropy",
            "--spec",
            bad.to_str().unwrap()
        ])),
        2
    );
    assert_eq!(
        code(&metaaug(&["verify-entropy", "--spec", "/nonexistent.toml"])),
        2
    );
}

#[test]
fn train_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = metaaug(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed-override",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    let summary = RunSummary::load(&run).unwrap();
    assert_eq!(summary.seeds.len(), 1);
    assert_eq!(summary.seeds[0].seed, 3);

    let rep = metaaug(&["report", run.to_str().unwrap()]);
    assert_eq!(code(&rep), 0, "{}", String::from_utf8_lossy(&rep.stderr));
    let text = String::from_utf8_lossy(&rep.stdout);
    assert!(text.contains("seed 3:"), "{text}");
    assert!(run.join(PLOT_DIR).join("learning_curve.csv").is_file());

    // Too few evaluation points for a diagnosis under a stricter minimum.
    let strict = metaaug(&["report", run.to_str().unwrap(), "--min-eval-points", "50"]);
    assert_eq!(code(&strict), 1);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = tiny_config(dir.path(), "bogus_key = 1");
    assert_eq!(
        code(&metaaug(&["train", "--config", unknown.to_str().unwrap()])),
        2
    );
    let uneven = dir.path().join("uneven.toml");
    fs::write(
        &uneven,
        "learner = \"maml\"\ntask = \"sinusoid\"\nseeds = [0]\ntotal_steps = 10\neval_every = 3\n",
    )
    .unwrap();
    assert_eq!(
        code(&metaaug(&["train", "--config", uneven.to_str().unwrap()])),
        2
    );
    assert_eq!(
        code(&metaaug(&["train", "--config", "/nonexistent.toml"])),
        2
    );
    assert_eq!(code(&metaaug(&["report", "/nonexistent-run"])), 2);
}

#[test]
fn diverging_training_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "\n[maml]\ninner_lr = 1e200\ninner_steps = 1\ninner_steps_eval = 2\nouter_lr = 1e-3\nmeta_batch = 2\n");
    let out = metaaug(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAILED"));
}
