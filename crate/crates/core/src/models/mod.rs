mod checkpoint;
mod fit;
mod layers;
mod probe;

pub use checkpoint::Checkpoint;
pub use fit::{fit_classifier, FitConfig};
pub use layers::{
    BatchNorm, Encoder, HeadClassifier, Linear, Model, ModelSpec, Module, ProjectionHead, BN_EPS,
    BN_MOMENTUM,
};
pub use probe::{linear_probe, linear_probe_features, share_student_head, TeacherPipeline};
