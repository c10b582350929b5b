//! Finite-difference checks of every primitive and of the MAML meta-gradient.

use metaaug::gradcheck;

fn main() -> metaaug::Result<()> {
    for r in gradcheck::run(None, 0)? {
        println!(
            "{:<32} max rel err {:.2e}  {}",
            r.name,
            r.max_rel_err,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
