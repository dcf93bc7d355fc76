//! Ranking, schedules, masks, the train-and-prune loops and compaction.

pub mod channels;
pub mod compact;
pub mod events;
pub mod group;
pub mod ranking;
pub mod schedule;
pub mod train;

pub use channels::{channel_links, propagate_channel_masks, ChannelLink, Consumer};
pub use compact::{compact, CompactionReport, RemovedMembers};
pub use events::{read_events, replay_events, write_event, PruneEvent};
pub use group::{prune_group, GroupKind, Member, PruneGroup};
pub use ranking::{normalize_scores, ranking_metric_channels, ranking_metric_weights, RankingConfig};
pub use schedule::{keep_count, logistic_progress, KeepRatio, PruneMode, PruneSchedule};
pub use train::{
    cls_train_prune, dense_sparsity, evaluate, fine_tune, run_epochs, train, wls_train_prune, ClsPruner,
    EpochMetrics, Evaluation, Pruner, RunObserver, RunOutcome, RunState, TrainData, TrainOptions, WlsPruner,
};
