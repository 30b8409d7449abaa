//! Anchor-based distillation of the paired teachers into a student
//! translator.

mod losses;
mod schedule;
mod train;

pub use losses::{
    combined_adv_loss, combined_per_loss, lsgan_d_loss, lsgan_g_loss, perceptual_from_features, perceptual_loss,
    perceptual_value, total_loss, BatchSource, LabelConvention, LossWeights, RoutedTerm,
};
pub use schedule::{schedule_next, SamplingSchedule, ScheduleCursor, ScheduleMode};
pub use train::{
    run, train, train_step, write_train_log, AnchorSet, DistillConfig, DistillMode, LogRow, TrainState, Trainer,
    UpdateCounters,
};
