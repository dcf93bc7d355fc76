//! Epoch loops: plain training, weight-level (WLS) and channel-level (CLS)
//! screening pruning, fine-tuning and evaluation.

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::channels::{channel_links, propagate_channel_masks};
use super::events::PruneEvent;
use super::group::{prune_group, GroupKind, Member, PruneGroup};
use super::ranking::{ranking_metric_channels, ranking_metric_weights, RankingConfig};
use super::schedule::PruneSchedule;
use crate::data::{augment, batches, Augmentation, Dataset};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_loss, sgd_step, ForwardCache, Layer, LrSchedule, Network, SgdConfig, SgdState};
use crate::screening::{channel_features, ScreeningAccumulator};

/// Training split, the split reported as `test_error`, and an optional held-out split.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Dataset,
    pub test: Dataset,
    pub validation: Option<Dataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Last epoch to run (epochs count from 1).
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    pub augmentation: Augmentation,
    pub sgd: SgdConfig,
    pub lr: LrSchedule,
    /// Constant rate once fine-tuning starts; `None` keeps following `lr`.
    pub fine_tune_lr: Option<f32>,
}

impl TrainOptions {
    fn lr_for(&self, epoch: usize, fine_tune_after: Option<usize>) -> f32 {
        match (fine_tune_after, self.fine_tune_lr) {
            (Some(after), Some(lr)) if epoch > after => lr,
            _ => self.lr.lr_at(epoch - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percent misclassified on the test split.
    pub test_error: f64,
    pub validation_error: Option<f64>,
    /// Fraction of prunable members removed (weights for WLS, channels for CLS).
    pub sparsity: f64,
    /// Kept members per prune group.
    pub kept: Vec<usize>,
    pub lr: f32,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub error_percent: f64,
    pub loss: f64,
}

/// Eval-mode error rate and mean loss over a dataset.
pub fn evaluate(network: &Network, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let mut wrong = 0usize;
    let mut loss = 0f64;
    let n = data.len();
    for start in (0..n).step_by(batch_size.max(1)) {
        let idx: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let x = data.images.gather_rows(&idx);
        let labels = &data.labels[start..start + idx.len()];
        let logits = network.infer(&x)?;
        for (i, &y) in labels.iter().enumerate() {
            if argmax(logits.row(i)) != y {
                wrong += 1;
            }
        }
        let (l, _) = cross_entropy_loss(&logits, labels)?;
        loss += l as f64 * idx.len() as f64;
    }
    Ok(Evaluation {
        error_percent: 100.0 * wrong as f64 / n as f64,
        loss: loss / n as f64,
    })
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Receives per-epoch metrics and prune events as they happen.
pub trait RunObserver {
    /// Called after every epoch with the state as of its end.
    fn on_epoch(&mut self, _metrics: &EpochMetrics, _state: &RunState) -> Result<()> {
        Ok(())
    }

    fn on_prune(&mut self, _event: &PruneEvent) -> Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

/// Collects screening statistics during an epoch and prunes at its end.
pub trait Pruner {
    fn groups(&self) -> &[PruneGroup];

    /// Called for every training batch of an epoch that ends in a prune event.
    fn observe(&mut self, network: &Network, cache: &ForwardCache, labels: &[usize]) -> Result<()>;

    fn prune(&mut self, network: &mut Network, epoch: usize, schedule: &PruneSchedule) -> Result<Vec<PruneEvent>>;

    fn sparsity(&self) -> f64 {
        let total: usize = self.groups().iter().map(|g| g.len()).sum();
        let kept: usize = self.groups().iter().map(|g| g.kept()).sum();
        if total == 0 {
            0.0
        } else {
            1.0 - kept as f64 / total as f64
        }
    }
}

/// Ranks the kept members of `group` and prunes it to `keep`, scoring only the
/// survivors so that min-max normalization ignores already-removed members.
fn rank_and_prune(
    group: &mut PruneGroup,
    scores: &[f64],
    magnitudes: &[f64],
    keep: usize,
    weights: bool,
    alpha: f64,
) -> Result<Vec<usize>> {
    let kept = group.kept_positions();
    if kept.is_empty() {
        return Ok(Vec::new());
    }
    let f: Vec<f64> = kept.iter().map(|&p| scores[p]).collect();
    let m: Vec<f64> = kept.iter().map(|&p| magnitudes[p]).collect();
    let metric_kept = if weights {
        ranking_metric_weights(&f, &m, alpha)?
    } else {
        ranking_metric_channels(&f, &m, alpha)?
    };
    let mut metric = vec![0.0; group.len()];
    for (&p, &v) in kept.iter().zip(&metric_kept) {
        metric[p] = v;
    }
    group.scores = metric.clone();
    group.magnitudes = magnitudes.to_vec();
    prune_group(group, &metric, keep.min(kept.len()))
}

fn event(group: &PruneGroup, gi: usize, epoch: usize, before: usize, pruned: Vec<usize>, alpha: f64, schedule: &PruneSchedule) -> Result<PruneEvent> {
    Ok(PruneEvent {
        epoch,
        group_id: group.id.clone(),
        kind: group.kind,
        members_before: before,
        members_after: group.kept(),
        alpha,
        mode: schedule.mode,
        ratio: schedule.ratio.for_group(gi)?,
        decay_rate: schedule.decay_rate,
        total_epochs: schedule.total_epochs,
        pruned,
    })
}

/// Weight-level screening: one group and one accumulator per dense layer.
pub struct WlsPruner {
    layers: Vec<usize>,
    groups: Vec<PruneGroup>,
    accumulators: Vec<ScreeningAccumulator>,
    alpha: f64,
}

impl WlsPruner {
    pub fn new(network: &Network, class_count: usize, ranking: &RankingConfig) -> Result<Self> {
        ranking.validate().map_err(Error::invalid)?;
        let layers = network.dense_indices();
        if layers.is_empty() {
            return Err(Error::invalid("weight-level pruning needs at least one dense layer"));
        }
        let names = network.layer_names();
        let mut groups = Vec::new();
        let mut accumulators = Vec::new();
        for &j in &layers {
            let Layer::Dense(d) = &network.layers()[j] else { unreachable!() };
            let n = d.weights.len();
            let members = (0..n).map(|index| Member { layer: j, index }).collect();
            let mut group = PruneGroup::new(names[j].clone(), GroupKind::Weights, members);
            group.mask = d.weight_mask.data().iter().map(|&m| m != 0.0).collect();
            groups.push(group);
            accumulators.push(ScreeningAccumulator::new(class_count, n)?);
        }
        Ok(WlsPruner { layers, groups, accumulators, alpha: ranking.alpha })
    }
}

impl Pruner for WlsPruner {
    fn groups(&self) -> &[PruneGroup] {
        &self.groups
    }

    fn observe(&mut self, network: &Network, cache: &ForwardCache, labels: &[usize]) -> Result<()> {
        for (acc, &j) in self.accumulators.iter_mut().zip(&self.layers) {
            let Layer::Dense(d) = &network.layers()[j] else { unreachable!() };
            acc.update_dense_connections(d, cache.layer_input(j), labels)?;
        }
        Ok(())
    }

    fn prune(&mut self, network: &mut Network, epoch: usize, schedule: &PruneSchedule) -> Result<Vec<PruneEvent>> {
        let mut events = Vec::new();
        for (gi, &j) in self.layers.iter().enumerate() {
            let fs = self.accumulators[gi].finalize()?;
            self.accumulators[gi].reset();
            let group = &mut self.groups[gi];
            let Layer::Dense(d) = &mut network.layers_mut()[j] else { unreachable!() };
            let magnitudes: Vec<f64> = d.weights.data().iter().map(|w| w.abs() as f64).collect();
            let keep = schedule.target(epoch, gi, group.len())?;
            let before = group.kept();
            let pruned = rank_and_prune(group, &fs.values, &magnitudes, keep, true, self.alpha)?;
            for &p in &pruned {
                d.weight_mask.data_mut()[p] = 0.0;
            }
            events.push(event(group, gi, epoch, before, pruned, self.alpha, schedule)?);
        }
        network.apply_masks();
        Ok(events)
    }
}

/// Channel-level screening over batch-norm channels, either one global group
/// or one group per batch-norm layer.
pub struct ClsPruner {
    bn_layers: Vec<usize>,
    groups: Vec<PruneGroup>,
    accumulators: Vec<ScreeningAccumulator>,
    alpha: f64,
}

impl ClsPruner {
    pub fn new(network: &Network, class_count: usize, ranking: &RankingConfig, global: bool) -> Result<Self> {
        ranking.validate().map_err(Error::invalid)?;
        let bn_layers = network.batch_norm_indices();
        if bn_layers.is_empty() {
            return Err(Error::invalid("channel-level pruning needs batch-norm layers"));
        }
        channel_links(network)?;
        let names = network.layer_names();
        let mut per_layer = Vec::new();
        let mut accumulators = Vec::new();
        for &b in &bn_layers {
            let Layer::BatchNorm2d(bn) = &network.layers()[b] else { unreachable!() };
            let members: Vec<Member> = (0..bn.channels()).map(|index| Member { layer: b, index }).collect();
            let mask: Vec<bool> = bn.channel_mask.data().iter().map(|&m| m != 0.0).collect();
            per_layer.push((names[b].clone(), members, mask));
            accumulators.push(ScreeningAccumulator::new(class_count, bn.channels())?);
        }
        let groups = if global {
            let mut group = PruneGroup::new(
                "global",
                GroupKind::Channels,
                per_layer.iter().flat_map(|(_, m, _)| m.clone()).collect(),
            );
            group.mask = per_layer.iter().flat_map(|(_, _, k)| k.clone()).collect();
            vec![group]
        } else {
            per_layer
                .into_iter()
                .map(|(name, members, mask)| {
                    let mut g = PruneGroup::new(name, GroupKind::Channels, members);
                    g.mask = mask;
                    g
                })
                .collect()
        };
        Ok(ClsPruner { bn_layers, groups, accumulators, alpha: ranking.alpha })
    }
}

impl Pruner for ClsPruner {
    fn groups(&self) -> &[PruneGroup] {
        &self.groups
    }

    fn observe(&mut self, _network: &Network, cache: &ForwardCache, labels: &[usize]) -> Result<()> {
        for (acc, &b) in self.accumulators.iter_mut().zip(&self.bn_layers) {
            acc.update(&channel_features(cache.layer_output(b))?, labels)?;
        }
        Ok(())
    }

    fn prune(&mut self, network: &mut Network, epoch: usize, schedule: &PruneSchedule) -> Result<Vec<PruneEvent>> {
        let mut scores = Vec::new();
        for acc in &mut self.accumulators {
            scores.push(acc.finalize()?.values);
            acc.reset();
        }
        let mut events = Vec::new();
        for (gi, group) in self.groups.iter_mut().enumerate() {
            let (mut f, mut mags) = (Vec::new(), Vec::new());
            for m in &group.members {
                let pos = self.bn_layers.iter().position(|&b| b == m.layer).expect("member of a known layer");
                let Layer::BatchNorm2d(bn) = &network.layers()[m.layer] else { unreachable!() };
                f.push(scores[pos][m.index]);
                mags.push(bn.gamma.data()[m.index].abs() as f64);
            }
            let keep = schedule.target(epoch, gi, group.len())?;
            let before = group.kept();
            let pruned = rank_and_prune(group, &f, &mags, keep, false, self.alpha)?;
            for &p in &pruned {
                let m = group.members[p];
                if let Layer::BatchNorm2d(bn) = &mut network.layers_mut()[m.layer] {
                    bn.channel_mask.data_mut()[m.index] = 0.0;
                }
            }
            events.push(event(group, gi, epoch, before, pruned, self.alpha, schedule)?);
        }
        propagate_channel_masks(network)?;
        Ok(events)
    }
}

/// Network, optimizer state and the number of completed epochs.
#[derive(Debug, Clone)]
pub struct RunState {
    pub network: Network,
    pub optimizer: SgdState,
    pub epoch: usize,
}

impl RunState {
    pub fn new(network: Network) -> Self {
        RunState { network, optimizer: SgdState::default(), epoch: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub events: Vec<PruneEvent>,
    /// Lowest test error over epochs from the final prune event on (all epochs without pruning).
    pub best_error: f64,
    pub best_epoch: usize,
    pub best_network: Network,
    pub final_error: f64,
}

/// Seed for the augmentation of one batch, mixed from `(seed, epoch, batch)`.
fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (batch as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs epochs `state.epoch + 1 ..= opts.epochs`.
///
/// With a pruner, statistics are collected during each epoch the schedule
/// fires at and the network is pruned at the end of it, before evaluation.
/// Epochs after `fine_tune_after` use `opts.fine_tune_lr` when set.
pub fn run_epochs(
    state: &mut RunState,
    data: &TrainData,
    opts: &TrainOptions,
    mut pruning: Option<(&mut dyn Pruner, &PruneSchedule)>,
    fine_tune_after: Option<usize>,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome> {
    if opts.batch_size == 0 || opts.eval_batch_size == 0 {
        return Err(Error::invalid("batch sizes must be at least 1"));
    }
    opts.sgd.validate().map_err(Error::invalid)?;
    opts.lr.validate().map_err(Error::invalid)?;
    if let Some((_, schedule)) = &pruning {
        schedule.validate()?;
    }
    let best_from = pruning.as_ref().map_or(0, |(_, s)| s.last_prune_epoch());
    let has_bn = state.network.has_batch_norm();
    let mut outcome = RunOutcome {
        metrics: Vec::new(),
        events: Vec::new(),
        best_error: f64::INFINITY,
        best_epoch: 0,
        best_network: state.network.clone(),
        final_error: f64::NAN,
    };

    for epoch in state.epoch + 1..=opts.epochs {
        let started = Instant::now();
        let lr = opts.lr_for(epoch, fine_tune_after);
        let screening = pruning.as_ref().is_some_and(|(_, s)| s.fires_at(epoch));
        let (mut loss_sum, mut seen) = (0f64, 0usize);
        for (b, (x, labels)) in batches(&data.train, opts.batch_size, opts.seed, epoch as u64).enumerate() {
            if has_bn && labels.len() < 2 {
                continue;
            }
            let x = augment(&x, opts.augmentation, batch_seed(opts.seed, epoch, b));
            let (_, cache) = state.network.forward(&x, true)?;
            if screening {
                if let Some((pruner, _)) = pruning.as_mut() {
                    pruner.observe(&state.network, &cache, &labels)?;
                }
            }
            let grads = state.network.backward(&cache, &labels)?;
            if !grads.loss.is_finite() {
                return Err(Error::invalid(format!("training diverged at epoch {epoch} (loss {})", grads.loss)));
            }
            loss_sum += grads.loss as f64 * labels.len() as f64;
            seen += labels.len();
            sgd_step(&mut state.network, &grads, &opts.sgd, lr, &mut state.optimizer)?;
        }
        if screening {
            if let Some((pruner, schedule)) = pruning.as_mut() {
                for ev in pruner.prune(&mut state.network, epoch, schedule)? {
                    info!(
                        "epoch {epoch}: pruned {} of {} to {} kept",
                        ev.pruned.len(),
                        ev.group_id,
                        ev.members_after
                    );
                    observer.on_prune(&ev)?;
                    outcome.events.push(ev);
                }
            }
        }
        state.epoch = epoch;

        let test = evaluate(&state.network, &data.test, opts.eval_batch_size)?;
        let validation_error = match &data.validation {
            Some(v) => Some(evaluate(&state.network, v, opts.eval_batch_size)?.error_percent),
            None => None,
        };
        let (sparsity, kept) = match &pruning {
            Some((p, _)) => (p.sparsity(), p.groups().iter().map(|g| g.kept()).collect()),
            None => (dense_sparsity(&state.network), Vec::new()),
        };
        let metrics = EpochMetrics {
            epoch,
            train_loss: if seen > 0 { loss_sum / seen as f64 } else { f64::NAN },
            test_error: test.error_percent,
            validation_error,
            sparsity,
            kept,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: loss {:.4} test error {:.2}% sparsity {:.4} lr {lr} ({:.1}s)",
            metrics.train_loss, metrics.test_error, metrics.sparsity, metrics.seconds
        );
        if epoch >= best_from && metrics.test_error < outcome.best_error {
            outcome.best_error = metrics.test_error;
            outcome.best_epoch = epoch;
            outcome.best_network = state.network.clone();
        }
        outcome.final_error = metrics.test_error;
        observer.on_epoch(&metrics, state)?;
        outcome.metrics.push(metrics);
    }
    Ok(outcome)
}

/// Fraction of masked weights over all dense layers.
pub fn dense_sparsity(network: &Network) -> f64 {
    let (mut total, mut kept) = (0usize, 0usize);
    for layer in network.layers() {
        if let Layer::Dense(d) = layer {
            total += d.weights.len();
            kept += d.kept_weights();
        }
    }
    if total == 0 {
        0.0
    } else {
        1.0 - kept as f64 / total as f64
    }
}

/// Plain training without pruning.
pub fn train(network: Network, data: &TrainData, opts: &TrainOptions, observer: &mut dyn RunObserver) -> Result<(Network, RunOutcome)> {
    let mut state = RunState::new(network);
    let outcome = run_epochs(&mut state, data, opts, None, None, observer)?;
    Ok((state.network, outcome))
}

/// Weight-level screening pruning over every dense layer, interleaved with training.
pub fn wls_train_prune(
    network: Network,
    data: &TrainData,
    schedule: &PruneSchedule,
    ranking: &RankingConfig,
    opts: &TrainOptions,
    observer: &mut dyn RunObserver,
) -> Result<(Network, RunOutcome)> {
    let mut pruner = WlsPruner::new(&network, data.train.class_count, ranking)?;
    let mut state = RunState::new(network);
    let after = Some(schedule.last_prune_epoch());
    let outcome = run_epochs(&mut state, data, opts, Some((&mut pruner, schedule)), after, observer)?;
    Ok((state.network, outcome))
}

/// Channel-level screening pruning; a one-shot schedule ranks all channels in one global group.
pub fn cls_train_prune(
    network: Network,
    data: &TrainData,
    schedule: &PruneSchedule,
    ranking: &RankingConfig,
    opts: &TrainOptions,
    observer: &mut dyn RunObserver,
) -> Result<(Network, RunOutcome)> {
    let global = schedule.mode == super::schedule::PruneMode::OneShot;
    let mut pruner = ClsPruner::new(&network, data.train.class_count, ranking, global)?;
    let mut state = RunState::new(network);
    let after = Some(schedule.last_prune_epoch());
    let outcome = run_epochs(&mut state, data, opts, Some((&mut pruner, schedule)), after, observer)?;
    Ok((state.network, outcome))
}

/// Masked training for `epochs` epochs at the fine-tune rate; masks never change.
pub fn fine_tune(
    network: Network,
    data: &TrainData,
    epochs: usize,
    opts: &TrainOptions,
    observer: &mut dyn RunObserver,
) -> Result<(Network, RunOutcome)> {
    let opts = TrainOptions { epochs, ..opts.clone() };
    let mut state = RunState::new(network);
    let outcome = run_epochs(&mut state, data, &opts, None, Some(0), observer)?;
    Ok((state.network, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::nn::{LayerSpec, LrSchedule};
    use crate::pruning::{replay_events, KeepRatio};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Three Gaussian blobs in `dims` dimensions; the first two coordinates carry the class.
    fn blobs(n: usize, dims: usize, seed: u64, split: Split) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * dims);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 3;
            for d in 0..dims {
                let centre = if d < 2 { [-2.0, 0.0, 2.0][c] * if d == 0 { 1.0 } else { -1.0 } } else { 0.0 };
                data.push(centre + rng.random_range(-1.0..1.0));
            }
            labels.push(c);
        }
        Dataset { images: Tensor::from_vec(&[n, dims], data).unwrap(), labels, split, class_count: 3 }
    }

    fn options(epochs: usize) -> TrainOptions {
        TrainOptions {
            epochs,
            batch_size: 16,
            eval_batch_size: 64,
            seed: 3,
            augmentation: Augmentation::None,
            sgd: SgdConfig { learning_rate: 0.05, ..SgdConfig::default() },
            lr: LrSchedule::Constant { initial_lr: 0.05 },
            fine_tune_lr: None,
        }
    }

    fn data() -> TrainData {
        TrainData { train: blobs(300, 8, 1, Split::Train), test: blobs(150, 8, 2, Split::Test), validation: None }
    }

    fn mlp() -> Network {
        let specs = [LayerSpec::Dense { out: 16 }, LayerSpec::Relu, LayerSpec::Dense { out: 3 }];
        Network::from_specs(&[8], &specs, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    #[test]
    fn wls_reaches_target_and_keeps_masks_consistent() {
        let schedule = PruneSchedule::iterative(KeepRatio::Global(0.25), 4.0, 6, 1).unwrap();
        let (net, outcome) =
            wls_train_prune(mlp(), &data(), &schedule, &RankingConfig::default(), &options(8), &mut ()).unwrap();
        let pruned = replay_events(&outcome.events).unwrap();
        assert_eq!(pruned["fc1"].len(), 128 - 32);
        assert_eq!(pruned["fc2"].len(), 48 - 12);
        for (j, name) in [(0, "fc1"), (2, "fc2")] {
            let Layer::Dense(d) = &net.layers()[j] else { panic!() };
            let off: Vec<usize> = (0..d.weights.len()).filter(|&i| d.weight_mask.data()[i] == 0.0).collect();
            assert_eq!(off, pruned[name].iter().copied().collect::<Vec<_>>());
            assert!(d.weights.data().iter().zip(d.weight_mask.data()).all(|(w, m)| *m != 0.0 || *w == 0.0));
        }
        assert!(outcome.best_epoch >= 6);
        assert!(outcome.best_error < 10.0, "error {}", outcome.best_error);
        assert_eq!(outcome.metrics.len(), 8);
        assert!((outcome.metrics[7].sparsity - 0.75).abs() < 1e-9);
    }

    #[test]
    fn runs_are_deterministic() {
        let schedule = PruneSchedule::iterative(KeepRatio::Global(0.5), 4.0, 3, 1).unwrap();
        let run = || wls_train_prune(mlp(), &data(), &schedule, &RankingConfig::default(), &options(4), &mut ()).unwrap();
        let (a, oa) = run();
        let (b, ob) = run();
        assert_eq!(a, b);
        assert_eq!(oa.events, ob.events);
        let strip = |m: &[EpochMetrics]| m.iter().map(|e| (e.epoch, e.train_loss, e.test_error)).collect::<Vec<_>>();
        assert_eq!(strip(&oa.metrics), strip(&ob.metrics));
    }

    #[test]
    fn resuming_matches_an_uninterrupted_run() {
        let schedule = PruneSchedule::iterative(KeepRatio::Global(0.5), 4.0, 3, 1).unwrap();
        let d = data();
        let opts = options(5);
        let mut whole = RunState::new(mlp());
        let mut p = WlsPruner::new(&whole.network, 3, &RankingConfig::default()).unwrap();
        run_epochs(&mut whole, &d, &opts, Some((&mut p, &schedule)), Some(3), &mut ()).unwrap();

        let mut split = RunState::new(mlp());
        let mut p = WlsPruner::new(&split.network, 3, &RankingConfig::default()).unwrap();
        run_epochs(&mut split, &d, &TrainOptions { epochs: 2, ..opts.clone() }, Some((&mut p, &schedule)), Some(3), &mut ()).unwrap();
        let mut p = WlsPruner::new(&split.network, 3, &RankingConfig::default()).unwrap();
        run_epochs(&mut split, &d, &opts, Some((&mut p, &schedule)), Some(3), &mut ()).unwrap();
        assert_eq!(whole.network, split.network);
        assert_eq!(whole.optimizer, split.optimizer);
    }

    #[test]
    fn cls_one_shot_prunes_global_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 60;
        let images = Tensor::from_vec(&[n, 1, 6, 6], (0..n * 36).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let train = Dataset { images, labels, split: Split::Train, class_count: 3 };
        let d = TrainData { test: Dataset { split: Split::Test, ..train.clone() }, train, validation: None };
        let conv = |out| LayerSpec::Conv2d { out, kernel: 3, stride: 1, padding: 1 };
        let specs = [
            conv(4),
            LayerSpec::BatchNorm2d,
            LayerSpec::Relu,
            conv(6),
            LayerSpec::BatchNorm2d,
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { out: 3 },
        ];
        let net = Network::from_specs(&[1, 6, 6], &specs, &mut rng).unwrap();
        let schedule = PruneSchedule::one_shot(KeepRatio::Global(0.5), 2).unwrap();
        let (net, outcome) = cls_train_prune(net, &d, &schedule, &RankingConfig::default(), &options(3), &mut ()).unwrap();
        assert_eq!(outcome.events.len(), 1);
        assert_eq!(outcome.events[0].group_id, "global");
        assert_eq!(outcome.events[0].members_after, 5);
        let kept: usize = net
            .layers()
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm2d(bn) => Some(bn.kept_channels()),
                _ => None,
            })
            .sum();
        assert_eq!(kept, 5);
        let Layer::Conv2d(c) = &net.layers()[3] else { panic!() };
        let Layer::BatchNorm2d(bn) = &net.layers()[1] else { panic!() };
        assert_eq!(c.in_channel_mask, bn.channel_mask);
    }

    #[test]
    fn evaluation_counts_errors_and_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        let specs = [LayerSpec::Dense { out: 3 }];
        let mut net = Network::from_specs(&[2], &specs, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        if let Layer::Dense(d) = &mut net.layers_mut()[0] {
            d.weights.data_mut().fill(0.0);
            d.bias.data_mut().fill(0.0);
        }
        let ds = Dataset {
            images: Tensor::zeros(&[4, 2]),
            labels: vec![0, 1, 0, 2],
            split: Split::Test,
            class_count: 3,
        };
        let e = evaluate(&net, &ds, 3).unwrap();
        assert_eq!(e.error_percent, 50.0);
        assert!((e.loss - 3f64.ln()).abs() < 1e-6);
    }
}
