//! CKA between a saved student and the teacher it was distilled from.

use crate::data::DataBundle;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, linear_cka, CKA_MAX_ROWS};
use crate::models::Checkpoint;
use crate::numeric::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub rows: usize,
    pub student_acc: Option<f64>,
    pub cka_fs_ft: f64,
    /// Absent when the checkpoint carries no customization projector.
    pub cka_fs_ftilde: Option<f64>,
}

fn row_prefix(x: &Tensor, n: usize) -> Result<Tensor> {
    let n = n.min(x.rows());
    Tensor::matrix(n, x.cols(), x.values()[..n * x.cols()].to_vec())
}

/// Uses the evaluation rows of `data`, or its labeled rows when it has
/// none. Needs `student.*` and `teacher.encoder.*` in the checkpoint;
/// `proj_t.*` is optional.
pub fn probe_cka(ck: &Checkpoint, data: &DataBundle) -> Result<ProbeReport> {
    let student = ck.model("student")?;
    if !ck.has_prefix("teacher.encoder") {
        return Err(Error::Checkpoint(
            "no `teacher.encoder` parameters; pass a pipeline checkpoint".into(),
        ));
    }
    let teacher = ck.encoder("teacher.encoder")?;
    let set = if data.eval.is_empty() { &data.labeled } else { &data.eval };
    if set.is_empty() {
        return Err(Error::EmptyData("no labeled or evaluation rows to probe".into()));
    }
    if set.dim != student.encoder.input_dim() || set.dim != teacher.input_dim() {
        return Err(Error::shape("probe-cka input", &[set.dim], &[student.encoder.input_dim()]));
    }
    let x = row_prefix(&set.features()?, CKA_MAX_ROWS)?;
    let fs = student.encoder.embed(&x)?;
    let ft = teacher.embed(&x)?;
    let cka_fs_ftilde = if ck.has_prefix("proj_t") {
        let proj = ck.projector("proj_t")?;
        let mut g = Graph::inference();
        let v = g.constant(ft.clone());
        let out = proj.forward(&mut g, v, false)?;
        Some(linear_cka(&fs, g.value(out))?)
    } else {
        None
    };
    let student_acc = if set.y.iter().all(|&y| y < student.classes()) {
        Some(accuracy(&student, set)?)
    } else {
        None
    };
    Ok(ProbeReport {
        rows: x.rows(),
        student_acc,
        cka_fs_ft: linear_cka(&fs, &ft)?,
        cka_fs_ftilde,
    })
}
