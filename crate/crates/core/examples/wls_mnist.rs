//! Weight-level screening pruning of LeNet-300-100 on MNIST through the library API.
//!
//! ```text
//! scripts/fetch_datasets.sh            # once; puts MNIST under data/mnist
//! cargo run --release --example wls_mnist -- [epochs]
//! ```
//!
//! Uses the 40-epoch desk profile; passing a smaller epoch count shortens the
//! schedule proportionally. Set SCREENPRUNE_DATA to read MNIST from elsewhere.

use screenprune::harness::config::ExperimentConfig;
use screenprune::harness::reports::{compression_cells, layer_compression, text_table};
use screenprune::pruning::{wls_train_prune, EpochMetrics, RunObserver, RunState};

struct Progress;

impl RunObserver for Progress {
    fn on_epoch(&mut self, m: &EpochMetrics, _state: &RunState) -> screenprune::Result<()> {
        println!("epoch {:>3}  loss {:.4}  test error {:5.2}%  sparsity {:5.1}%", m.epoch, m.train_loss, m.test_error, 100.0 * m.sparsity);
        Ok(())
    }
}

fn main() -> screenprune::Result<()> {
    let mut config = ExperimentConfig::profile("lenet_mnist_desk")?;
    if let Some(epochs) = std::env::args().nth(1).and_then(|a| a.parse::<usize>().ok()) {
        let full = config.train.epochs;
        config.train.epochs = epochs;
        config.prune.horizon = config.prune.horizon.map(|h| (h * epochs).div_ceil(full).max(2));
        config.prune.warmup = (config.prune.warmup * epochs / full).max(1);
    }
    config.validate()?;

    let data = config.load_data()?;
    let schedule = config.schedule()?.expect("the profile prunes");
    let (network, outcome) = wls_train_prune(
        config.build_network()?,
        &data,
        &schedule,
        &config.ranking,
        &config.train_options(),
        &mut Progress,
    )?;

    println!("\nbest error {:.2}% at epoch {} (final {:.2}%)", outcome.best_error, outcome.best_epoch, outcome.final_error);
    let (header, rows) = compression_cells(&layer_compression(&network));
    print!("{}", text_table(&header, &rows));
    Ok(())
}
