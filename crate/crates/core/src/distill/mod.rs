mod context;
mod plan;
mod pretrain;
mod run;

pub use context::{EpochLosses, Objective, TeacherHeadMode, TrainConfig, TrainContext};
pub use plan::{make_stage_plan, Stage, StagePlan};
pub use pretrain::{pretrain, pretrain_student, pretrain_teacher};
pub use run::{run_baseline, run_plan, train_customkd, Baseline, Method};
