//! Teacher-side wiring: linear probing of a frozen encoder, and the
//! customization pipeline that reads the teacher's projected feature
//! through the student's head.

use super::fit::{fit_classifier, FitConfig};
use super::layers::{Encoder, HeadClassifier, Module, ProjectionHead};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::numeric::{FreezeMask, Graph, Param, Tensor, Var};

/// Trains a linear head on top of `encoder` with the encoder frozen.
/// The features are computed once; the encoder is never written.
pub fn linear_probe(
    encoder: &Encoder,
    data: &LabeledSet,
    classes: usize,
    cfg: &FitConfig,
    name: &str,
) -> Result<HeadClassifier> {
    if data.is_empty() {
        return Err(Error::EmptyData("linear probe: no labeled samples".into()));
    }
    let features = encoder.embed(&data.features()?)?;
    linear_probe_features(&features, &data.y, classes, cfg, name)
}

/// Linear probe on precomputed features.
pub fn linear_probe_features(
    features: &Tensor,
    labels: &[usize],
    classes: usize,
    cfg: &FitConfig,
    name: &str,
) -> Result<HeadClassifier> {
    if labels.is_empty() {
        return Err(Error::EmptyData("linear probe: no labeled samples".into()));
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::DegenerateLabels(format!(
            "linear probe needs at least two classes, all samples have label {}",
            labels[0]
        )));
    }
    let head = HeadClassifier::new(name, features.cols(), classes, cfg.seed)?;
    let set = LabeledSet {
        dim: features.cols(),
        x: features.values().to_vec(),
        y: labels.to_vec(),
    };
    let params = head.params();
    fit_classifier(&params, &set, classes, cfg, &format!("{name}/probe"), |g, x| {
        head.forward(g, x)
    })?;
    Ok(head)
}

/// `head ∘ projector ∘ encoder` for the customization stage. Only the
/// projector (and, for a teacher-owned head, the head) is trainable.
#[derive(Clone, Debug)]
pub struct TeacherPipeline {
    pub encoder: Encoder,
    pub projector: ProjectionHead,
    pub head: HeadClassifier,
    head_trainable: bool,
}

/// Wires `student_head` behind the teacher projector. The head shares
/// storage with the student's, so later student updates are visible here.
pub fn share_student_head(
    encoder: &Encoder,
    projector: &ProjectionHead,
    student_head: &HeadClassifier,
) -> Result<TeacherPipeline> {
    let mut p = TeacherPipeline {
        encoder: encoder.clone(),
        projector: projector.clone(),
        head: student_head.share(),
        head_trainable: false,
    };
    p.check_dims()?;
    p.reshare(student_head)?;
    Ok(p)
}

impl TeacherPipeline {
    /// Pipeline with its own, trainable head.
    pub fn with_own_head(
        encoder: &Encoder,
        projector: &ProjectionHead,
        head: HeadClassifier,
    ) -> Result<Self> {
        let p = TeacherPipeline {
            encoder: encoder.clone(),
            projector: projector.clone(),
            head,
            head_trainable: true,
        };
        p.check_dims()?;
        Ok(p)
    }

    fn check_dims(&self) -> Result<()> {
        if self.projector.d_in() != self.encoder.output_dim() {
            return Err(Error::shape(
                "teacher projector input",
                &[self.encoder.output_dim()],
                &[self.projector.d_in()],
            ));
        }
        if self.head.embed_dim() != self.projector.d_out() {
            return Err(Error::shape(
                "shared head input",
                &[self.projector.d_out()],
                &[self.head.embed_dim()],
            ));
        }
        Ok(())
    }

    /// Points the pipeline at the student's current head.
    pub fn reshare(&mut self, student_head: &HeadClassifier) -> Result<()> {
        if self.head_trainable {
            return Err(Error::Contract("pipeline owns its head; nothing to share".into()));
        }
        if student_head.embed_dim() != self.projector.d_out() {
            return Err(Error::shape(
                "shared head input",
                &[self.projector.d_out()],
                &[student_head.embed_dim()],
            ));
        }
        self.head = student_head.share();
        Ok(())
    }

    pub fn head_is_shared_with(&self, student_head: &HeadClassifier) -> bool {
        self.head.linear.weight.shares_storage(&student_head.linear.weight)
            && self.head.linear.bias.shares_storage(&student_head.linear.bias)
    }

    /// Parameters updated by a customization step.
    pub fn trainable(&self) -> Vec<Param> {
        let mut p = self.projector.params();
        if self.head_trainable {
            p.extend(self.head.params());
        }
        p
    }

    pub fn mask(&self) -> FreezeMask {
        FreezeMask::only(&self.trainable())
    }

    /// Logits from raw inputs; the encoder output is detached.
    pub fn forward(&self, g: &mut Graph, x: Var, training: bool) -> Result<Var> {
        let f = self.encoder.forward(g, x)?;
        let f = g.detach(f);
        self.forward_features(g, f, training)
    }

    /// Logits from an already computed teacher feature `f_t`.
    pub fn forward_features(&self, g: &mut Graph, f_t: Var, training: bool) -> Result<Var> {
        let ft = self.projector.forward(g, f_t, training)?;
        self.head.forward(g, ft)
    }
}
