//! Best test error per ranking weight alpha for a WLS config.
//!
//! ```text
//! cargo run --release --example alpha_sweep -- configs/smoke.toml 0.2,0.4,1.0
//! ```
//!
//! Each alpha runs in `<output>/alpha_<a>/`; completed runs with the same
//! configuration are reused rather than retrained.

use screenprune::harness::cli::alpha_sweep;
use screenprune::harness::config::{ExperimentConfig, Overrides};
use screenprune::harness::reports::text_table;

fn main() -> screenprune::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args.next().unwrap_or_else(|| "configs/smoke.toml".into());
    let alphas: Vec<f64> = args
        .next()
        .unwrap_or_else(|| "0.2,0.4,0.6,0.8,1.0".into())
        .split(',')
        .map(|a| a.trim().parse().expect("alpha values are numbers"))
        .collect();
    let base = ExperimentConfig::load(&config, &Overrides::default())?;
    let rows: Vec<Vec<String>> = alpha_sweep(&base, &alphas)?
        .iter()
        .map(|s| vec![s.alpha.to_string(), format!("{:.2}", s.best_error), format!("{:.2}", 100.0 * s.sparsity)])
        .collect();
    print!("{}", text_table(&["alpha", "best_error", "sparsity_percent"], &rows));
    Ok(())
}
