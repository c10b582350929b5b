use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use metaaug::harness::{
    emit_plot_data, read_metrics, report_by_seed, run_experiment, ExperimentConfig,
    ReportThresholds, RunSummary, SeedStatus, METRICS,
};
use metaaug::infotheory::{random_instance, EntropySpecFile, Verdict, ENTROPY_TOL};
use metaaug::{gradcheck, Error};

const FAILED: u8 = 1;
const CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "metaaug",
    version,
    about = "Meta-augmentation experiments and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config and write its run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Check the entropy identity on a spec file or on random instances.
    VerifyEntropy {
        #[arg(long, conflicts_with = "random", required_unless_present = "random")]
        spec: Option<PathBuf>,
        /// Number of random injective and of random non-injective instances.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        /// A primitive name or `maml_second_order`; all checks when absent.
        #[arg(long)]
        op: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write plot CSVs for a run and diagnose overfitting per seed.
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        gap: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        min_eval_points: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Train {
            config,
            seed_override,
        } => train(&config, seed_override),
        Command::VerifyEntropy { spec, random, seed } => match (spec, random) {
            (Some(path), _) => verify_spec(&path),
            (None, Some(n)) => verify_random(n, seed),
            (None, None) => CONFIG,
        },
        Command::Gradcheck { op, seed } => run_gradcheck(op.as_deref(), seed),
        Command::Report {
            run_dir,
            delta,
            gap,
            window,
            min_eval_points,
        } => {
            let d = ReportThresholds::default();
            let th = ReportThresholds {
                delta: delta.unwrap_or(d.delta),
                gap: gap.unwrap_or(d.gap),
                window: window.unwrap_or(d.window),
                min_eval_points: min_eval_points.unwrap_or(d.min_eval_points),
            };
            report(&run_dir, &th)
        }
    };
    ExitCode::from(code)
}

fn fail(e: &Error) -> u8 {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) | Error::InvalidSpec(_) => CONFIG,
        _ => FAILED,
    }
}

fn train(path: &Path, seed_override: Option<u64>) -> u8 {
    let mut cfg = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(s) = seed_override {
        cfg.seeds = vec![s];
    }
    let start = Instant::now();
    let out = match run_experiment(&cfg) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    print_summary(&out.summary);
    println!(
        "run directory: {} ({:.1?})",
        out.dir.display(),
        start.elapsed()
    );
    if out.summary.failed_seeds > 0 {
        FAILED
    } else {
        0
    }
}

fn print_summary(s: &RunSummary) {
    for seed in &s.seeds {
        match (seed.status, seed.test_post) {
            (SeedStatus::Ok, Some(t)) => {
                let acc = t.acc.map(|a| format!(" acc {a:.4}")).unwrap_or_default();
                println!(
                    "seed {}: best step {} test loss {:.6}{acc}",
                    seed.seed, seed.best_step, t.loss
                );
            }
            _ => println!(
                "seed {}: FAILED {}",
                seed.seed,
                seed.error.as_deref().unwrap_or("")
            ),
        }
    }
    if let Some(m) = s.test_post_loss {
        println!("test loss {:.6} +- {:.6} over {} seeds", m.mean, m.std, m.n);
    }
    if let Some(m) = s.test_post_acc {
        println!("test acc  {:.4} +- {:.4} over {} seeds", m.mean, m.std, m.n);
    }
}

fn verify_spec(path: &Path) -> u8 {
    let report = EntropySpecFile::load(path)
        .and_then(|f| f.instance())
        .and_then(|inst| inst.verify());
    match report {
        Ok(r) => {
            println!("{r}");
            if r.verdict == Verdict::Fail {
                FAILED
            } else {
                0
            }
        }
        Err(e) => fail(&e),
    }
}

fn verify_random(n: usize, seed: u64) -> u8 {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    let mut worst_gap = 0.0f64;
    let mut min_slack = f64::INFINITY;
    for injective in [true, false] {
        for i in 0..n {
            let r = match random_instance(injective, &mut rng).verify() {
                Ok(r) => r,
                Err(e) => return fail(&e),
            };
            let ok = if injective {
                worst_gap = worst_gap.max(r.gap.abs());
                r.verdict == Verdict::Pass && r.gap.abs() < ENTROPY_TOL
            } else {
                min_slack = min_slack.min(r.h_eps - r.increase);
                r.verdict == Verdict::NotApplicable && r.increase < r.h_eps
            };
            if !ok {
                bad += 1;
                eprintln!("instance {i} (injective = {injective}) failed:\n{r}");
            }
        }
    }
    println!("injective:     {n} instances, max |H(Y'|X) - H(Y|X) - H(eps)| = {worst_gap:.3e}");
    println!("non-injective: {n} instances, min H(eps) - increase = {min_slack:.3e}");
    println!(
        "{} in {:.2?}",
        if bad == 0 {
            "PASS".to_string()
        } else {
            format!("FAIL ({bad} instances)")
        },
        start.elapsed()
    );
    if bad == 0 {
        0
    } else {
        FAILED
    }
}

fn run_gradcheck(op: Option<&str>, seed: u64) -> u8 {
    if let Some(name) = op {
        if name != gradcheck::MAML_CHECK && !gradcheck::PRIMITIVES.contains(&name) {
            eprintln!(
                "error: unknown op {name}; expected one of {} or {}",
                gradcheck::PRIMITIVES.join(", "),
                gradcheck::MAML_CHECK
            );
            return CONFIG;
        }
    }
    let results = match gradcheck::run(op, seed) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let mut failed = 0;
    for r in &results {
        println!(
            "{:<32} rel err {:.3e} (tol {:.0e}) {}",
            r.name,
            r.max_rel_err,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
        failed += usize::from(!r.passed);
    }
    if failed == 0 {
        0
    } else {
        FAILED
    }
}

fn report(run_dir: &Path, th: &ReportThresholds) -> u8 {
    if !run_dir.is_dir() {
        eprintln!("error: {} is not a directory", run_dir.display());
        return CONFIG;
    }
    let mut code = 0;
    match RunSummary::load(run_dir) {
        Ok(s) => print_summary(&s),
        Err(e) => code = fail(&e),
    }
    match emit_plot_data(run_dir) {
        Ok(p) => {
            println!("wrote {}", p.learning_path.display());
            println!("wrote {}", p.adaptation_path.display());
        }
        Err(e) => code = fail(&e),
    }
    let rows = match read_metrics(&run_dir.join(METRICS)) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    for (seed, r) in report_by_seed(&rows, th) {
        match r {
            Ok(r) => println!("seed {seed}: {r}"),
            Err(e) => {
                println!("seed {seed}: no diagnosis ({e})");
                code = FAILED;
            }
        }
    }
    code
}
