use serde::{Deserialize, Serialize};

use crate::batching::{epoch_batches, paired_batches};
use crate::data::DataBundle;
use crate::error::{Error, Result};
use crate::losses::{
    composite_loss, cross_entropy, entropy_min, feature_mse, logit_mse_loss, soft_target_loss,
    LossParts, LossVars, LossWeights,
};
use crate::metrics::{accuracy, accuracy_from_logits, linear_cka, CKA_MAX_ROWS};
use crate::models::{
    share_student_head, Encoder, HeadClassifier, Model, Module, ProjectionHead, TeacherPipeline,
};
use crate::numeric::{FreezeMask, Graph, Param, Sgd, Tensor};
use crate::rng::derive_seed;
use crate::runlog::LogRow;

/// Which head reads the customized teacher feature during customization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherHeadMode {
    /// The student's current head, frozen and shared.
    #[default]
    Shared,
    /// A separately initialized head, trained together with the projector.
    Random,
}

/// The student objective of a distillation epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// `L_L + λ_U·L_U + λ_ft·L_ft + λ_f̃t·L_f̃t`.
    Feature,
    /// `L_L + λ_pred·KL` against temperature-softened probe logits.
    SoftTarget { temperature: f64 },
    /// `L_L + λ_pred·MSE` against probe logits.
    Logits,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub lr_student: f64,
    pub lr_proj_t: f64,
    /// θ^h_s has its own optimizer so it can track f_t faster than the
    /// student moves.
    pub lr_proj_s: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub teacher_head: TeacherHeadMode,
    /// Fresh θ^h_t at every customization stage instead of warm start.
    pub reinit_projector: bool,
    pub use_bn: bool,
    /// Evaluate every n-th distillation epoch (and always the last).
    pub eval_every: usize,
    pub cka: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            lr_student: 5e-4,
            lr_proj_t: 0.05,
            lr_proj_s: 0.05,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
            teacher_head: TeacherHeadMode::Shared,
            reinit_projector: false,
            use_bn: true,
            eval_every: 1,
            cka: true,
        }
    }
}

/// Component means of one distillation epoch; skipped terms are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochLosses {
    pub parts: LossParts,
    pub total: f64,
}

struct TeacherCache {
    labeled: Tensor,
    unlabeled: Tensor,
    eval: Tensor,
}

/// Everything a distillation run mutates or reads.
pub struct TrainContext {
    pub student: Model,
    pub teacher_encoder: Encoder,
    pub proj_t: ProjectionHead,
    pub proj_s: ProjectionHead,
    /// Own head of the customization pipeline in [`TeacherHeadMode::Random`].
    pub teacher_head: Option<HeadClassifier>,
    /// Linear-probed teacher head for prediction-level objectives.
    pub probe_head: Option<HeadClassifier>,
    pub data: DataBundle,
    pub cfg: TrainConfig,
    f_t: TeacherCache,
    student_opt: Sgd,
    proj_s_opt: Sgd,
    fc_count: usize,
    kd_count: usize,
}

fn frozen_forward<F>(x: &Tensor, f: F) -> Result<Tensor>
where
    F: FnOnce(&mut Graph, crate::numeric::Var) -> Result<crate::numeric::Var>,
{
    let mut g = Graph::inference();
    let xv = g.constant(x.clone());
    let out = f(&mut g, xv)?;
    Ok(g.value(out).clone())
}

fn row_prefix(t: &Tensor, n: usize) -> Tensor {
    if t.rows() <= n {
        return t.clone();
    }
    let idx: Vec<usize> = (0..n).collect();
    t.gather_rows(&idx)
}

fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    let mut v = a.values().to_vec();
    v.extend_from_slice(b.values());
    Tensor::matrix(a.rows() + b.rows(), a.cols(), v).expect("matching widths")
}

impl TrainContext {
    /// Builds projectors between the two embedding spaces and caches the
    /// frozen teacher's features of every split.
    pub fn new(student: Model, teacher_encoder: Encoder, data: DataBundle, cfg: TrainConfig) -> Result<Self> {
        cfg.weights.validate()?;
        if cfg.batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch size must be at least 2, got {}",
                cfg.batch_size
            )));
        }
        if cfg.eval_every == 0 {
            return Err(Error::InvalidArgument("eval_every must be at least 1".into()));
        }
        data.validate_for_training()?;
        if student.encoder.input_dim() != data.meta.dim || teacher_encoder.input_dim() != data.meta.dim {
            return Err(Error::shape(
                "train context inputs",
                &[student.encoder.input_dim(), teacher_encoder.input_dim()],
                &[data.meta.dim],
            ));
        }
        if student.classes() != data.meta.classes {
            return Err(Error::shape("student classes", &[student.classes()], &[data.meta.classes]));
        }
        let (ds, dt) = (student.embed_dim(), teacher_encoder.output_dim());
        let proj_t = ProjectionHead::new("proj_t", dt, ds, cfg.use_bn, cfg.seed)?;
        let proj_s = ProjectionHead::new("proj_s", ds, dt, cfg.use_bn, cfg.seed)?;
        let teacher_head = match cfg.teacher_head {
            TeacherHeadMode::Shared => None,
            TeacherHeadMode::Random => Some(HeadClassifier::new(
                "teacher.fc_head",
                ds,
                data.meta.classes,
                cfg.seed,
            )?),
        };
        let f_t = TeacherCache {
            labeled: teacher_encoder.embed(&data.labeled.features()?)?,
            unlabeled: teacher_encoder.embed(&data.unlabeled.features()?)?,
            eval: teacher_encoder.embed(&data.eval.features()?)?,
        };
        let student_opt = Sgd::new(cfg.lr_student, cfg.momentum)?;
        let proj_s_opt = Sgd::new(cfg.lr_proj_s, cfg.momentum)?;
        Ok(TrainContext {
            student,
            teacher_encoder,
            proj_t,
            proj_s,
            teacher_head,
            probe_head: None,
            data,
            cfg,
            f_t,
            student_opt,
            proj_s_opt,
            fc_count: 0,
            kd_count: 0,
        })
    }

    pub fn with_probe_head(mut self, head: HeadClassifier) -> Result<Self> {
        if head.embed_dim() != self.teacher_encoder.output_dim() || head.classes() != self.data.meta.classes {
            return Err(Error::shape(
                "probe head",
                &[head.embed_dim(), head.classes()],
                &[self.teacher_encoder.output_dim(), self.data.meta.classes],
            ));
        }
        self.probe_head = Some(head);
        Ok(self)
    }

    pub fn kd_epochs_done(&self) -> usize {
        self.kd_count
    }

    pub fn fc_epochs_done(&self) -> usize {
        self.fc_count
    }

    /// Cached teacher features `f_t` of the evaluation split.
    pub fn teacher_eval_features(&self) -> &Tensor {
        &self.f_t.eval
    }

    /// The customization pipeline wired to the student's current head.
    pub fn customization_pipeline(&self) -> Result<TeacherPipeline> {
        match &self.teacher_head {
            None => share_student_head(&self.teacher_encoder, &self.proj_t, &self.student.head),
            Some(h) => TeacherPipeline::with_own_head(&self.teacher_encoder, &self.proj_t, h.share()),
        }
    }

    /// Parameters the distillation stage may update: the student plus θ^h_s.
    pub fn student_side(&self) -> Vec<Param> {
        let mut p = self.student.params();
        p.extend(self.proj_s.params());
        p
    }

    /// One pass over D_L training only θ^h_t (and an own head if present),
    /// with the teacher encoder and any shared head frozen. Returns the
    /// mean cross-entropy.
    pub fn feature_customization_epoch(&mut self) -> Result<f64> {
        if self.data.labeled.is_empty() {
            return Err(Error::EmptyData("customization needs D_L".into()));
        }
        if self.cfg.reinit_projector && self.fc_count > 0 {
            self.proj_t = ProjectionHead::new(
                "proj_t",
                self.proj_t.d_in(),
                self.proj_t.d_out(),
                self.cfg.use_bn,
                derive_seed(self.cfg.seed, &format!("proj_t/reinit/{}", self.fc_count)),
            )?;
        }
        let pipeline = self.customization_pipeline()?;
        let trainable = pipeline.trainable();
        let mut opt = Sgd::new(self.cfg.lr_proj_t, self.cfg.momentum)?;
        let n = self.data.labeled.len();
        let batches = epoch_batches(n, self.cfg.batch_size, self.cfg.seed, &format!("fc/{}", self.fc_count));
        let mut total = 0.0;
        for idx in &batches {
            let mut g = Graph::new(pipeline.mask());
            let ft = g.constant(self.f_t.labeled.gather_rows(idx));
            let logits = pipeline.forward_features(&mut g, ft, true)?;
            let y: Vec<usize> = idx.iter().map(|&i| self.data.labeled.y[i]).collect();
            let loss = cross_entropy(&mut g, logits, &y)?;
            let v = g.value(loss).item();
            if !v.is_finite() {
                return Err(Error::NonFinite("customization loss".into()));
            }
            total += v;
            g.backward(loss)?;
            opt.step(&trainable)?;
        }
        self.fc_count += 1;
        Ok(total / batches.len() as f64)
    }

    fn customized_teacher(&self, f_t: &Tensor) -> Result<Tensor> {
        frozen_forward(f_t, |g, x| self.proj_t.forward(g, x, false))
    }

    fn probe_logits(&self, f_t: &Tensor) -> Result<Tensor> {
        let head = self
            .probe_head
            .as_ref()
            .ok_or_else(|| Error::Contract("prediction-level distillation needs a probed teacher head".into()))?;
        frozen_forward(f_t, |g, x| head.forward(g, x))
    }

    /// One pass of paired labeled/unlabeled minibatches updating the
    /// student and θ^h_s. Terms with zero weight are not computed.
    pub fn knowledge_distillation_epoch(&mut self, objective: Objective, weights: &LossWeights) -> Result<EpochLosses> {
        weights.validate()?;
        if self.data.labeled.is_empty() || self.data.unlabeled.is_empty() {
            return Err(Error::EmptyData("distillation needs D_L and D_U".into()));
        }
        let feature = objective == Objective::Feature;
        let use_u = feature && weights.lambda_u > 0.0;
        let use_ft = feature && weights.lambda_ft > 0.0;
        let use_ftilde = feature && weights.lambda_ftilde > 0.0;
        let use_pred = !feature && weights.lambda_pred > 0.0;

        let ftilde = if use_ftilde {
            Some((
                self.customized_teacher(&self.f_t.labeled)?,
                self.customized_teacher(&self.f_t.unlabeled)?,
            ))
        } else {
            None
        };
        let teacher_logits = if use_pred {
            Some((
                self.probe_logits(&self.f_t.labeled)?,
                self.probe_logits(&self.f_t.unlabeled)?,
            ))
        } else {
            None
        };

        let student_params = self.student.params();
        let proj_params = if use_ft { self.proj_s.params() } else { Vec::new() };
        let mut trainable = student_params.clone();
        trainable.extend(proj_params.iter().cloned());
        let mask = FreezeMask::only(&trainable);
        let pairs = paired_batches(
            self.data.labeled.len(),
            self.data.unlabeled.len(),
            self.cfg.batch_size,
            self.cfg.seed,
            &format!("kd/{}", self.kd_count),
        );
        let mut sum = EpochLosses::default();
        for (li, ui) in &pairs {
            let (xl, yl) = self.data.labeled.batch(li);
            let xu = self.data.unlabeled.batch(ui);
            let mut g = Graph::new(mask.clone());
            let xl = g.constant(xl);
            let xu = g.constant(xu);
            let fs_l = self.student.encoder.forward(&mut g, xl)?;
            let fs_u = self.student.encoder.forward(&mut g, xu)?;
            let logits_l = self.student.head.forward(&mut g, fs_l)?;
            let mut vars = LossVars::labeled_only(cross_entropy(&mut g, logits_l, &yl)?);
            let mut logits_u = None;
            if use_u || use_pred {
                logits_u = Some(self.student.head.forward(&mut g, fs_u)?);
            }
            if use_u {
                vars.l_u = Some(entropy_min(&mut g, logits_u.expect("computed above"))?);
            }
            if use_ft || use_ftilde {
                let fs = g.concat_rows(&[fs_l, fs_u])?;
                if use_ft {
                    let ft = concat(&self.f_t.labeled.gather_rows(li), &self.f_t.unlabeled.gather_rows(ui));
                    let ft = g.constant(ft);
                    let fs_proj = self.proj_s.forward(&mut g, fs, true)?;
                    vars.l_ft = Some(feature_mse(&mut g, fs_proj, ft)?);
                }
                if let Some((tl, tu)) = &ftilde {
                    let target = g.constant(concat(&tl.gather_rows(li), &tu.gather_rows(ui)));
                    vars.l_ftilde = Some(feature_mse(&mut g, fs, target)?);
                }
            }
            if let Some((tl, tu)) = &teacher_logits {
                let student = g.concat_rows(&[logits_l, logits_u.expect("computed above")])?;
                let teacher = concat(&tl.gather_rows(li), &tu.gather_rows(ui));
                vars.l_pred = Some(match objective {
                    Objective::SoftTarget { temperature } => {
                        soft_target_loss(&mut g, student, &teacher, temperature)?
                    }
                    Objective::Logits => logit_mse_loss(&mut g, student, &teacher)?,
                    Objective::Feature => unreachable!("feature objective has no prediction term"),
                });
            }
            let total = composite_loss(&mut g, &vars, weights)?;
            let parts = vars.values(&g);
            let t = g.value(total).item();
            if !t.is_finite() {
                return Err(Error::NonFinite("distillation loss".into()));
            }
            sum.parts.l_l += parts.l_l;
            sum.parts.l_u += parts.l_u;
            sum.parts.l_ft += parts.l_ft;
            sum.parts.l_ftilde += parts.l_ftilde;
            sum.parts.l_pred += parts.l_pred;
            g.backward(total)?;
            self.student_opt.step(&student_params)?;
            self.proj_s_opt.step(&proj_params)?;
        }
        self.kd_count += 1;
        let n = pairs.len() as f64;
        let parts = LossParts {
            l_l: sum.parts.l_l / n,
            l_u: sum.parts.l_u / n,
            l_ft: sum.parts.l_ft / n,
            l_ftilde: sum.parts.l_ftilde / n,
            l_pred: sum.parts.l_pred / n,
        };
        Ok(EpochLosses {
            parts,
            total: weights.combine(&parts)?,
        })
    }

    /// Student accuracy on D_L and the evaluation split.
    pub fn accuracies(&self) -> Result<(f64, f64)> {
        Ok((accuracy(&self.student, &self.data.labeled)?, accuracy(&self.student, &self.data.eval)?))
    }

    /// `(CKA(f_s, f_t), CKA(f_s, f̃_t))` on the evaluation split, `None`
    /// where a side is constant.
    pub fn cka_probes(&self) -> Result<(Option<f64>, Option<f64>)> {
        let x = row_prefix(&self.data.eval.features()?, CKA_MAX_ROWS);
        let ft = row_prefix(&self.f_t.eval, CKA_MAX_ROWS);
        let fs = self.student.encoder.embed(&x)?;
        let ftilde = self.customized_teacher(&ft)?;
        let soft = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::DegenerateInput(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok((soft(linear_cka(&fs, &ft))?, soft(linear_cka(&fs, &ftilde))?))
    }

    /// Accuracy of the probed teacher on the evaluation split.
    pub fn teacher_probe_accuracy(&self) -> Result<Option<f64>> {
        match &self.probe_head {
            None => Ok(None),
            Some(_) => Ok(Some(accuracy_from_logits(
                &self.probe_logits(&self.f_t.eval)?,
                &self.data.eval.y,
            )?)),
        }
    }

    pub(crate) fn fill_eval(&self, row: &mut LogRow) -> Result<()> {
        let (tr, ev) = self.accuracies()?;
        row.train_acc = Some(tr);
        row.eval_acc = Some(ev);
        if self.cfg.cka {
            let (a, b) = self.cka_probes()?;
            row.cka_fs_ft = a;
            row.cka_fs_ftilde = b;
        }
        Ok(())
    }
}
