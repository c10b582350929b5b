//! A small config-driven run: train, diagnose, and write plot data.

use metaaug::harness::{
    emit_plot_data, memorization_report, read_metrics, run_experiment_in, ExperimentConfig,
    ReportThresholds, METRICS,
};

const CONFIG: &str = r#"
name = "example"
learner = "maml"
task = "synthetic_cls"
mode = "non_mutually_exclusive"
seeds = [0]
total_steps = 300
eval_every = 30
eval_episodes = 10
test_episodes = 20
maml.inner_lr = 0.1
maml.inner_steps = 5
maml.inner_steps_eval = 5
maml.outer_lr = 0.001
maml.meta_batch = 4
"#;

fn main() -> metaaug::Result<()> {
    let cfg = ExperimentConfig::parse(CONFIG)?;
    let dir = std::env::temp_dir().join("metaaug-example-run");
    let out = run_experiment_in(&cfg, &dir)?;
    let acc = out.summary.test_post_acc.expect("classification");
    println!(
        "test accuracy {:.3} (best step {})",
        acc.mean, out.summary.seeds[0].best_step
    );
    let rows = read_metrics(&dir.join(METRICS))?;
    println!(
        "{}",
        memorization_report(&rows, &ReportThresholds::default())?
    );
    let plots = emit_plot_data(&dir)?;
    println!(
        "wrote {} and {}",
        plots.learning_path.display(),
        plots.adaptation_path.display()
    );
    Ok(())
}
