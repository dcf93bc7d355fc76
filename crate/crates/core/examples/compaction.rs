//! Prune a small MLP on synthetic data, remove its dead units, and confirm the
//! smaller network computes the same function.
//!
//! ```text
//! cargo run --example compaction
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use screenprune::data::{Augmentation, Dataset, Split};
use screenprune::harness::reports::layer_compression;
use screenprune::nn::{LayerSpec, LrSchedule, Network, SgdConfig};
use screenprune::pruning::{compact, wls_train_prune, KeepRatio, PruneSchedule, RankingConfig, TrainData, TrainOptions};
use screenprune::Tensor;

/// Four classes whose label depends on the signs of the first two of 20 inputs.
fn quadrants(n: usize, rng: &mut ChaCha8Rng, split: Split) -> Dataset {
    let mut data = Vec::with_capacity(n * 20);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f32> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        labels.push(usize::from(x[0] > 0.0) * 2 + usize::from(x[1] > 0.0));
        data.extend(x);
    }
    Dataset { images: Tensor::from_vec(&[n, 20], data).unwrap(), labels, split, class_count: 4 }
}

fn main() -> screenprune::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = TrainData {
        train: quadrants(2000, &mut rng, Split::Train),
        test: quadrants(500, &mut rng, Split::Test),
        validation: None,
    };
    let specs = [LayerSpec::Dense { out: 64 }, LayerSpec::Relu, LayerSpec::Dense { out: 32 }, LayerSpec::Relu, LayerSpec::Dense { out: 4 }];
    let network = Network::from_specs(&[20], &specs, &mut rng)?;
    let opts = TrainOptions {
        epochs: 12,
        batch_size: 32,
        eval_batch_size: 500,
        seed: 1,
        augmentation: Augmentation::None,
        sgd: SgdConfig { learning_rate: 0.05, ..SgdConfig::default() },
        lr: LrSchedule::Constant { initial_lr: 0.05 },
        fine_tune_lr: None,
    };
    let schedule = PruneSchedule::iterative(KeepRatio::PerGroup(vec![0.05, 0.1, 0.5]), 4.0, 10, 2)?;
    let (pruned, outcome) = wls_train_prune(network, &data, &schedule, &RankingConfig::default(), &opts, &mut ())?;
    println!("pruned network: test error {:.2}%", outcome.final_error);

    let (small, report) = compact(&pruned)?;
    for r in &report.removed {
        println!("{}: removed {} {}", r.layer, r.count, r.kind);
    }
    let kept = layer_compression(&pruned).last().map_or(0, |r| r.kept);
    let kept_after = layer_compression(&small).last().map_or(0, |r| r.kept);
    println!(
        "kept weights {kept} -> {kept_after} ({} fed only dead units); parameters {} -> {}",
        report.removed_connections, report.parameters_before, report.parameters_after
    );

    let x = Tensor::from_vec(&[100, 20], (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let (a, b) = (pruned.infer(&x)?, small.infer(&x)?);
    let worst = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f32::max);
    println!("largest output difference over 100 inputs: {worst:e}");
    Ok(())
}
