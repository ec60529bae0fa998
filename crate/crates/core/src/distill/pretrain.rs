use crate::data::{DataBundle, LabeledSet};
use crate::error::{Error, Result};
use crate::models::{fit_classifier, FitConfig, Model, ModelSpec, Module};

/// Supervised training from initialization. Returns the model and its
/// per-epoch mean loss.
pub fn pretrain(prefix: &str, spec: &ModelSpec, data: &LabeledSet, cfg: &FitConfig) -> Result<(Model, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::EmptyData(format!("{prefix} pretraining set")));
    }
    if data.dim != spec.input_dim {
        return Err(Error::shape("pretrain", &[data.dim], &[spec.input_dim]));
    }
    let model = Model::init(prefix, spec)?;
    let params = model.params();
    let history = fit_classifier(&params, data, spec.classes, cfg, &format!("{prefix}/pretrain"), |g, x| {
        model.forward(g, x)
    })?;
    Ok((model, history))
}

/// Teacher pretraining on the bundle's pool, falling back to D_L when the
/// bundle carries no pool.
pub fn pretrain_teacher(spec: &ModelSpec, bundle: &DataBundle, cfg: &FitConfig) -> Result<(Model, Vec<f64>)> {
    let data = bundle.pool.as_ref().unwrap_or(&bundle.labeled);
    pretrain("teacher", spec, data, cfg)
}

/// Student pretraining on D_L only.
pub fn pretrain_student(spec: &ModelSpec, bundle: &DataBundle, cfg: &FitConfig) -> Result<(Model, Vec<f64>)> {
    pretrain("student", spec, &bundle.labeled, cfg)
}
