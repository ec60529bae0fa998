use serde::{Deserialize, Serialize};
use std::fmt;

use super::context::{Objective, TrainContext};
use super::plan::{Stage, StagePlan};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::runlog::{LogRow, MetricsLog, StageTag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Customkd,
    Fitnet,
    SoftTarget,
    Logits,
    None,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Customkd,
        Method::Fitnet,
        Method::SoftTarget,
        Method::Logits,
        Method::None,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Customkd => "customkd",
            Method::Fitnet => "fitnet",
            Method::SoftTarget => "soft_target",
            Method::Logits => "logits",
            Method::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }

    pub fn needs_probe(&self) -> bool {
        matches!(self, Method::SoftTarget | Method::Logits)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Comparison methods run without customization stages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Baseline {
    /// Raw-feature imitation through θ^h_s (`λ_f̃t = 0`).
    Fitnet,
    SoftTarget { temperature: f64 },
    Logits,
    /// `L_L + λ_U·L_U` only.
    None,
}

impl Baseline {
    /// Objective and effective weights derived from the run's weights.
    pub fn objective(&self, w: &LossWeights) -> (Objective, LossWeights) {
        match *self {
            Baseline::Fitnet => (
                Objective::Feature,
                LossWeights {
                    lambda_ftilde: 0.0,
                    lambda_pred: 0.0,
                    ..*w
                },
            ),
            Baseline::None => (
                Objective::Feature,
                LossWeights {
                    lambda_ft: 0.0,
                    lambda_ftilde: 0.0,
                    lambda_pred: 0.0,
                    ..*w
                },
            ),
            Baseline::SoftTarget { temperature } => (Objective::SoftTarget { temperature }, prediction_weights(w)),
            Baseline::Logits => (Objective::Logits, prediction_weights(w)),
        }
    }
}

fn prediction_weights(w: &LossWeights) -> LossWeights {
    LossWeights {
        lambda_u: 0.0,
        lambda_ft: 0.0,
        lambda_ftilde: 0.0,
        lambda_pred: w.lambda_pred,
    }
}

/// Executes `plan`, logging one row per stage epoch. The customization
/// pipeline is rebuilt from the student's current head at every
/// customization stage.
pub fn run_plan(ctx: &mut TrainContext, plan: &StagePlan, objective: Objective, weights: &LossWeights) -> Result<MetricsLog> {
    let mut log = MetricsLog::default();
    let total_kd = plan.kd_epochs();
    let mut kd_seen = 0;
    for stage in plan.stages() {
        match stage {
            Stage::Customize => {
                let loss = ctx
                    .feature_customization_epoch()
                    .map_err(|e| e.in_stage("feature customization"))?;
                let mut row = LogRow::new(kd_seen + 1, StageTag::Customize);
                row.total = Some(loss);
                log.push(row);
            }
            Stage::Distill => {
                let losses = ctx
                    .knowledge_distillation_epoch(objective, weights)
                    .map_err(|e| e.in_stage("knowledge distillation"))?;
                kd_seen += 1;
                let mut row = LogRow::new(kd_seen, StageTag::Distill);
                row.l_l = Some(losses.parts.l_l);
                row.l_u = Some(losses.parts.l_u);
                row.l_ft = Some(losses.parts.l_ft);
                row.l_ftilde = Some(losses.parts.l_ftilde);
                row.l_pred = Some(losses.parts.l_pred);
                row.total = Some(losses.total);
                if kd_seen % ctx.cfg.eval_every == 0 || kd_seen == total_kd {
                    ctx.fill_eval(&mut row).map_err(|e| e.in_stage("evaluation"))?;
                }
                log.push(row);
            }
        }
    }
    Ok(log)
}

/// Alternating customization and distillation with the context's weights.
pub fn train_customkd(ctx: &mut TrainContext, plan: &StagePlan) -> Result<MetricsLog> {
    let w = ctx.cfg.weights;
    run_plan(ctx, plan, Objective::Feature, &w)
}

pub fn run_baseline(kind: Baseline, ctx: &mut TrainContext, kd_epochs: usize) -> Result<MetricsLog> {
    let (objective, w) = kind.objective(&ctx.cfg.weights);
    if objective != Objective::Feature && ctx.probe_head.is_none() {
        return Err(Error::Contract(
            "prediction-level baselines need a linear-probed teacher head".into(),
        ));
    }
    run_plan(ctx, &StagePlan::distill_only(kd_epochs), objective, &w)
}
