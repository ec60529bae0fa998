//! Training objectives: supervised cross-entropy, entropy minimization, the
//! two feature-imitation terms, their weighted combination, and the
//! prediction-level distillation losses used by baselines.
//!
//! Every loss reduces by the mean over the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Graph, Tensor, Var};

/// Weights of the combined student objective
/// `L_L + λ_U·L_U + λ_ft·L_ft + λ_f̃t·L_f̃t (+ λ_pred·L_pred)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_u: f64,
    pub lambda_ft: f64,
    pub lambda_ftilde: f64,
    /// Prediction-level distillation weight; only baselines set it.
    pub lambda_pred: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_u: 0.1,
            lambda_ft: 10.0,
            lambda_ftilde: 10.0,
            lambda_pred: 0.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_u: f64, lambda_ft: f64, lambda_ftilde: f64) -> Result<Self> {
        let w = LossWeights {
            lambda_u,
            lambda_ft,
            lambda_ftilde,
            lambda_pred: 0.0,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_u", self.lambda_u),
            ("lambda_ft", self.lambda_ft),
            ("lambda_ftilde", self.lambda_ftilde),
            ("lambda_pred", self.lambda_pred),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Scalar form of [`composite_loss`], summed in the same order.
    pub fn combine(&self, parts: &LossParts) -> Result<f64> {
        for (name, v) in parts.named() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("loss component {name}")));
            }
        }
        Ok(parts.l_l
            + self.lambda_u * parts.l_u
            + self.lambda_ft * parts.l_ft
            + self.lambda_ftilde * parts.l_ftilde
            + self.lambda_pred * parts.l_pred)
    }
}

/// Scalar values of each loss component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub l_l: f64,
    pub l_u: f64,
    pub l_ft: f64,
    pub l_ftilde: f64,
    pub l_pred: f64,
}

impl LossParts {
    fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("L_L", self.l_l),
            ("L_U", self.l_u),
            ("L_ft", self.l_ft),
            ("L_ftilde", self.l_ftilde),
            ("L_pred", self.l_pred),
        ]
    }
}

/// Graph nodes of each component; absent terms are skipped.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l_l: Var,
    pub l_u: Option<Var>,
    pub l_ft: Option<Var>,
    pub l_ftilde: Option<Var>,
    pub l_pred: Option<Var>,
}

impl LossVars {
    pub fn labeled_only(l_l: Var) -> Self {
        LossVars {
            l_l,
            l_u: None,
            l_ft: None,
            l_ftilde: None,
            l_pred: None,
        }
    }

    /// Current values, with absent terms as zero.
    pub fn values(&self, g: &Graph) -> LossParts {
        let get = |v: Option<Var>| v.map(|v| g.value(v).item()).unwrap_or(0.0);
        LossParts {
            l_l: g.value(self.l_l).item(),
            l_u: get(self.l_u),
            l_ft: get(self.l_ft),
            l_ftilde: get(self.l_ftilde),
            l_pred: get(self.l_pred),
        }
    }
}

fn check_scalar(g: &Graph, v: Var, name: &str) -> Result<()> {
    let t = g.value(v);
    if !t.is_scalar() {
        return Err(Error::Contract(format!("{name} must be scalar")));
    }
    if !t.item().is_finite() {
        return Err(Error::NonFinite(format!("loss component {name}")));
    }
    Ok(())
}

/// Weighted sum of the present components.
pub fn composite_loss(g: &mut Graph, parts: &LossVars, w: &LossWeights) -> Result<Var> {
    w.validate()?;
    check_scalar(g, parts.l_l, "L_L")?;
    let mut total = parts.l_l;
    for (name, term, weight) in [
        ("L_U", parts.l_u, w.lambda_u),
        ("L_ft", parts.l_ft, w.lambda_ft),
        ("L_ftilde", parts.l_ftilde, w.lambda_ftilde),
        ("L_pred", parts.l_pred, w.lambda_pred),
    ] {
        if let Some(v) = term {
            check_scalar(g, v, name)?;
            let scaled = g.scale(v, weight);
            total = g.add(total, scaled)?;
        }
    }
    Ok(total)
}

fn batch_rows(g: &Graph, v: Var) -> Result<usize> {
    let t = g.value(v);
    if t.shape().len() != 2 {
        return Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: "expected a batch×d matrix".into(),
        });
    }
    Ok(t.rows())
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let n = batch_rows(g, logits)?;
    if labels.len() != n {
        return Err(Error::shape("cross_entropy", g.value(logits).shape(), &[labels.len()]));
    }
    let lp = g.log_softmax(logits)?;
    let picked = g.pick(lp, labels)?;
    let m = g.mean(picked);
    Ok(g.scale(m, -1.0))
}

/// Mean over the batch of the per-sample squared Euclidean distance.
///
/// Wrap one side in [`Graph::detach`] to stop gradient flowing into it.
pub fn feature_mse(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let n = batch_rows(g, a)?;
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::shape("feature_mse", g.value(a).shape(), g.value(b).shape()));
    }
    let d = g.sub(a, b)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / n as f64))
}

/// Mean over the batch of the Shannon entropy `−Σ p ln p` of `softmax(logits)`.
pub fn entropy_min(g: &mut Graph, logits: Var) -> Result<Var> {
    let n = batch_rows(g, logits)?;
    let p = g.softmax(logits)?;
    let lp = g.log_softmax(logits)?;
    let plp = g.mul(p, lp)?;
    let s = g.sum(plp);
    Ok(g.scale(s, -1.0 / n as f64))
}

/// `T² ·` mean-batch `KL(softmax(teacher/T) ‖ softmax(student/T))`.
///
/// The teacher logits are plain values, so no gradient reaches them.
pub fn soft_target_loss(
    g: &mut Graph,
    student_logits: Var,
    teacher_logits: &Tensor,
    temperature: f64,
) -> Result<Var> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let n = batch_rows(g, student_logits)?;
    if g.value(student_logits).shape() != teacher_logits.shape() {
        return Err(Error::shape(
            "soft_target_loss",
            g.value(student_logits).shape(),
            teacher_logits.shape(),
        ));
    }
    let inv_t = 1.0 / temperature;
    let scaled_t: Vec<f64> = teacher_logits.values().iter().map(|&x| x * inv_t).collect();
    let scaled_t = Tensor::new(teacher_logits.shape().to_vec(), scaled_t)?;
    let t_node = g.constant(scaled_t);
    let log_pt_var = g.log_softmax(t_node)?;
    let log_pt = g.value(log_pt_var).clone();
    let pt = Tensor::new(
        log_pt.shape().to_vec(),
        log_pt.values().iter().map(|v| v.exp()).collect(),
    )?;
    let log_pt = g.constant(log_pt);
    let pt = g.constant(pt);

    let s_scaled = g.scale(student_logits, inv_t);
    let log_ps = g.log_softmax(s_scaled)?;
    let diff = g.sub(log_pt, log_ps)?;
    let weighted = g.mul(pt, diff)?;
    let s = g.sum(weighted);
    Ok(g.scale(s, temperature * temperature / n as f64))
}

/// Mean over batch and classes of the squared logit difference.
pub fn logit_mse_loss(g: &mut Graph, student_logits: Var, teacher_logits: &Tensor) -> Result<Var> {
    batch_rows(g, student_logits)?;
    if g.value(student_logits).shape() != teacher_logits.shape() {
        return Err(Error::shape(
            "logit_mse_loss",
            g.value(student_logits).shape(),
            teacher_logits.shape(),
        ));
    }
    let t = g.constant(teacher_logits.clone());
    let d = g.sub(student_logits, t)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::FreezeMask;

    fn rows(r: &[&[f64]]) -> Tensor {
        Tensor::from_rows(r).unwrap()
    }

    fn eval<F>(f: F) -> f64
    where
        F: FnOnce(&mut Graph) -> Result<Var>,
    {
        let mut g = Graph::new(FreezeMask::all());
        let v = f(&mut g).unwrap();
        g.value(v).item()
    }

    #[test]
    fn cross_entropy_cases() {
        let ln4 = 4f64.ln();
        let v = eval(|g| {
            let l = g.constant(rows(&[&[0.0; 4], &[2.0; 4]]));
            cross_entropy(g, l, &[1, 3])
        });
        assert!((v - ln4).abs() < 1e-12);

        // −ln(e/(1+e)) = ln(1 + e⁻¹)
        let v = eval(|g| {
            let l = g.constant(rows(&[&[1.0, 0.0]]));
            cross_entropy(g, l, &[0])
        });
        assert!((v - (1.0 + (-1f64).exp()).ln()).abs() < 1e-14);
        assert!((v - 0.3133).abs() < 1e-4);

        let v = eval(|g| {
            let l = g.constant(rows(&[&[30.0, 0.0, 0.0]]));
            cross_entropy(g, l, &[0])
        });
        assert!(v < 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut g = Graph::inference();
        let l = g.constant(rows(&[&[0.0, 0.0]]));
        assert!(matches!(
            cross_entropy(&mut g, l, &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn feature_mse_cases() {
        let v = eval(|g| {
            let a = g.constant(rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
            feature_mse(g, a, a)
        });
        assert_eq!(v, 0.0);
        let v = eval(|g| {
            let a = g.constant(rows(&[&[1.0, 2.0]]));
            let b = g.constant(rows(&[&[0.0, 0.0]]));
            feature_mse(g, a, b)
        });
        assert_eq!(v, 5.0);
        let mut g = Graph::inference();
        let a = g.constant(rows(&[&[1.0, 2.0]]));
        let b = g.constant(rows(&[&[1.0, 2.0, 3.0]]));
        assert!(feature_mse(&mut g, a, b).is_err());
    }

    #[test]
    fn feature_mse_stop_gradient_side_gets_nothing() {
        let mut g = Graph::new(FreezeMask::all());
        let a = g.variable(rows(&[&[1.0, 2.0]]));
        let b = g.variable(rows(&[&[0.5, -1.0]]));
        let b_stop = g.detach(b);
        let l = feature_mse(&mut g, a, b_stop).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0, 6.0]);
        assert!(g.grad(b).is_none());
    }

    #[test]
    fn entropy_cases() {
        let v = eval(|g| {
            let l = g.constant(rows(&[&[0.0; 4]]));
            entropy_min(g, l)
        });
        assert!((v - 4f64.ln()).abs() < 1e-12);
        let v = eval(|g| {
            let l = g.constant(rows(&[&[30.0, 0.0, 0.0]]));
            entropy_min(g, l)
        });
        assert!((0.0..1e-9).contains(&v));
        let v = eval(|g| {
            let l = g.constant(rows(&[&[0.3, 0.3]]));
            entropy_min(g, l)
        });
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn soft_target_cases() {
        let t = rows(&[&[0.5, -1.0, 2.0]]);
        let v = eval(|g| {
            let s = g.constant(t.clone());
            soft_target_loss(g, s, &t, 4.0)
        });
        assert_eq!(v, 0.0);

        // teacher [2,0], student [0,0], T=1: KL(p‖u) = Σ p ln(2p).
        let v = eval(|g| {
            let s = g.constant(rows(&[&[0.0, 0.0]]));
            soft_target_loss(g, s, &rows(&[&[2.0, 0.0]]), 1.0)
        });
        let p0 = 1.0 / (1.0 + (-2f64).exp());
        let p1 = 1.0 - p0;
        let oracle = p0 * (2.0 * p0).ln() + p1 * (2.0 * p1).ln();
        assert!((v - oracle).abs() < 1e-14, "{v} vs {oracle}");

        let mut g = Graph::inference();
        let s = g.constant(rows(&[&[0.0, 0.0]]));
        assert!(soft_target_loss(&mut g, s, &rows(&[&[0.0, 0.0]]), 0.0).is_err());
    }

    #[test]
    fn logit_mse_cases() {
        let v = eval(|g| {
            let s = g.constant(rows(&[&[1.0, 2.0]]));
            logit_mse_loss(g, s, &rows(&[&[0.0, 0.0]]))
        });
        assert_eq!(v, 2.5);
        let v = eval(|g| {
            let s = g.constant(rows(&[&[1.0, 2.0]]));
            logit_mse_loss(g, s, &rows(&[&[1.0, 2.0]]))
        });
        assert_eq!(v, 0.0);
        let shifted = eval(|g| {
            let s = g.constant(rows(&[&[6.0, 7.0]]));
            logit_mse_loss(g, s, &rows(&[&[5.0, 5.0]]))
        });
        assert_eq!(shifted, 2.5);
    }

    #[test]
    fn composite_cases() {
        let w = LossWeights::default();
        assert_eq!((w.lambda_u, w.lambda_ft, w.lambda_ftilde), (0.1, 10.0, 10.0));
        let parts = LossParts {
            l_l: 1.0,
            l_u: 2.0,
            l_ft: 3.0,
            l_ftilde: 4.0,
            l_pred: 0.0,
        };
        assert_eq!(w.combine(&parts).unwrap(), 71.2);
        let zero = LossWeights::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(zero.combine(&parts).unwrap(), 1.0);

        let mut g = Graph::inference();
        let vars: Vec<Var> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&v| g.constant(Tensor::scalar(v)))
            .collect();
        let lv = LossVars {
            l_l: vars[0],
            l_u: Some(vars[1]),
            l_ft: Some(vars[2]),
            l_ftilde: Some(vars[3]),
            l_pred: None,
        };
        let total = composite_loss(&mut g, &lv, &w).unwrap();
        assert_eq!(g.value(total).item(), 71.2);

        let nan = g.constant(Tensor::scalar(f64::NAN));
        let bad = LossVars {
            l_u: Some(nan),
            ..lv
        };
        assert!(matches!(
            composite_loss(&mut g, &bad, &w),
            Err(Error::NonFinite(_))
        ));
        assert!(LossWeights::new(-1.0, 0.0, 0.0).is_err());
    }
}
