//! Channel-level screening on CIFAR-10: train `small_bn_cnn`, prune half of all
//! batch-norm channels in one global event, fine-tune, then compact.
//!
//! ```text
//! scripts/fetch_datasets.sh            # once; puts CIFAR-10 under data/
//! cargo run --release --example cls_cifar -- [train_images]
//! ```
//!
//! The default uses the 10K-image desk profile (roughly ten minutes on one core).

use screenprune::harness::config::ExperimentConfig;
use screenprune::harness::reports::{channel_cells, channels_per_layer, text_table};
use screenprune::pruning::{cls_train_prune, compact, evaluate, EpochMetrics, PruneEvent, RunObserver, RunState};

struct Progress;

impl RunObserver for Progress {
    fn on_epoch(&mut self, m: &EpochMetrics, _state: &RunState) -> screenprune::Result<()> {
        println!("epoch {:>3}  loss {:.4}  test error {:5.2}%  lr {}", m.epoch, m.train_loss, m.test_error, m.lr);
        Ok(())
    }

    fn on_prune(&mut self, e: &PruneEvent) -> screenprune::Result<()> {
        println!("  pruned {} of {} channels ({} group)", e.pruned.len(), e.members_before, e.group_id);
        Ok(())
    }
}

fn main() -> screenprune::Result<()> {
    let mut config = ExperimentConfig::profile("cifar_cls_desk")?;
    if let Some(n) = std::env::args().nth(1).and_then(|a| a.parse::<usize>().ok()) {
        config.dataset.train_subset = n;
    }
    config.validate()?;
    let data = config.load_data()?;
    let schedule = config.schedule()?.expect("the profile prunes");
    let (network, outcome) = cls_train_prune(
        config.build_network()?,
        &data,
        &schedule,
        &config.ranking,
        &config.train_options(),
        &mut Progress,
    )?;
    println!("\nbest error after pruning {:.2}% (epoch {})", outcome.best_error, outcome.best_epoch);

    let (header, rows) = channel_cells(&channels_per_layer(&network)?);
    print!("{}", text_table(&header, &rows));

    let (small, report) = compact(&network)?;
    let check = evaluate(&small, &data.test, config.train.eval_batch_size)?;
    println!(
        "compacted: {} -> {} parameters, test error {:.2}% (masked network {:.2}%)",
        report.parameters_before, report.parameters_after, check.error_percent, outcome.final_error
    );
    Ok(())
}
