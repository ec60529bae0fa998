//! Accuracy, feature extraction, and linear CKA.

use std::fmt;
use std::io::Write;

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::numeric::{Graph, Tensor, Var};

/// Rows used for CKA probes during training.
pub const CKA_MAX_ROWS: usize = 2048;

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy_from_logits(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyData("accuracy on an empty set".into()));
    }
    if logits.rows() != labels.len() {
        return Err(Error::shape("accuracy", logits.shape(), &[labels.len()]));
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(logits.row(i)) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

pub fn accuracy(model: &Model, data: &LabeledSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData("accuracy on an empty set".into()));
    }
    accuracy_from_logits(&model.logits(&data.features()?)?, &data.y)
}

pub fn error_rate(model: &Model, data: &LabeledSet) -> Result<f64> {
    Ok(1.0 - accuracy(model, data)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureTag {
    Fs,
    Ft,
    FtildeT,
    FtildeS,
}

impl fmt::Display for FeatureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureTag::Fs => "f_s",
            FeatureTag::Ft => "f_t",
            FeatureTag::FtildeT => "f~_t",
            FeatureTag::FtildeS => "f~_s",
        })
    }
}

/// Feature rows in dataset order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub tag: FeatureTag,
    pub values: Tensor,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    /// CSV with header `dim_0,…,dim_{p−1}`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record((0..self.cols()).map(|i| format!("dim_{i}")))?;
        for r in 0..self.rows() {
            wr.write_record(self.values.row(r).iter().map(|v| format!("{v:.16e}")))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Runs `pipeline` on `x` in a frozen graph. Callers pass `training =
/// false` to any batch-norm layer inside.
pub fn extract_features<F>(x: &Tensor, tag: FeatureTag, pipeline: F) -> Result<FeatureMatrix>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::inference();
    let xv = g.constant(x.clone());
    let out = pipeline(&mut g, xv)?;
    let values = g.value(out).clone();
    if !values.all_finite() {
        return Err(Error::NonFinite(format!("{tag} features")));
    }
    Ok(FeatureMatrix { tag, values })
}

fn centered(m: &Tensor) -> Tensor {
    let (n, p) = (m.rows(), m.cols());
    let mut means = vec![0.0; p];
    for r in 0..n {
        for (acc, v) in means.iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    for v in &mut means {
        *v /= n as f64;
    }
    let mut out = m.values().to_vec();
    for r in 0..n {
        for (c, mean) in means.iter().enumerate() {
            out[r * p + c] -= mean;
        }
    }
    Tensor::matrix(n, p, out).expect("same shape")
}

fn frobenius_sq(m: &Tensor) -> f64 {
    m.values().iter().map(|v| v * v).sum()
}

/// Linear CKA `‖YcᵀXc‖²_F / (‖XcᵀXc‖_F ‖YcᵀYc‖_F)` with column-centered
/// `Xc`, `Yc`.
pub fn linear_cka(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape().len() != 2 || y.shape().len() != 2 || x.rows() != y.rows() {
        return Err(Error::shape("linear_cka", x.shape(), y.shape()));
    }
    if x.rows() < 2 {
        return Err(Error::DegenerateInput("CKA needs at least two rows".into()));
    }
    let (xc, yc) = (centered(x), centered(y));
    let xt = xc.transpose();
    let yt = yc.transpose();
    let xx = frobenius_sq(&xt.matmul(&xc)?).sqrt();
    let yy = frobenius_sq(&yt.matmul(&yc)?).sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::DegenerateInput(
            "CKA of a constant matrix (zero centered norm)".into(),
        ));
    }
    let cross = frobenius_sq(&yt.matmul(&xc)?);
    let v = cross / (xx * yy);
    if !v.is_finite() {
        return Err(Error::NonFinite("linear CKA".into()));
    }
    Ok(v)
}

pub fn feature_cka(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<f64> {
    linear_cka(&a.values, &b.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Encoder, HeadClassifier, Linear};
    use crate::numeric::Param;

    fn constant_model(classes: usize, favored: usize) -> Model {
        let enc = Encoder::from_layers(vec![Linear::from_params(
            Param::new("e.w", Tensor::zeros(&[2, 2])),
            Param::new("e.b", Tensor::zeros(&[2])),
        )
        .unwrap()])
        .unwrap();
        let mut bias = vec![0.0; classes];
        bias[favored] = 1.0;
        let head = HeadClassifier {
            linear: Linear::from_params(
                Param::new("h.w", Tensor::zeros(&[2, classes])),
                Param::new("h.b", Tensor::vector(bias)),
            )
            .unwrap(),
        };
        Model::from_parts(enc, head).unwrap()
    }

    #[test]
    fn constant_predictor_accuracy() {
        let m = constant_model(2, 1);
        let mut one = LabeledSet::new(2);
        let mut balanced = LabeledSet::new(2);
        for i in 0..6 {
            one.push(&[i as f64, 1.0], 1);
            balanced.push(&[i as f64, -1.0], i % 2);
        }
        assert_eq!(accuracy(&m, &one).unwrap(), 1.0);
        assert_eq!(accuracy(&m, &balanced).unwrap(), 0.5);
        let a = accuracy(&m, &balanced).unwrap();
        assert_eq!(a + error_rate(&m, &balanced).unwrap(), 1.0);
        assert!(accuracy(&m, &LabeledSet::new(2)).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn cka_identity_and_degenerate() {
        let x = Tensor::from_rows(&[[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]]).unwrap();
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let c = Tensor::full(&[3, 2], 4.0);
        assert!(matches!(linear_cka(&x, &c), Err(Error::DegenerateInput(_))));
        let short = Tensor::zeros(&[2, 2]);
        assert!(linear_cka(&x, &short).is_err());
    }

    #[test]
    fn features_csv_header() {
        let fm = FeatureMatrix {
            tag: FeatureTag::Fs,
            values: Tensor::from_rows(&[[1.0, 2.0]]).unwrap(),
        };
        let mut buf = Vec::new();
        fm.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("dim_0,dim_1\n"));
    }
}
