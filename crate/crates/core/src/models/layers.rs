use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numeric::{Graph, Param, Tensor, Var};
use crate::rng::rng_for;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Anything that owns parameters.
pub trait Module {
    /// Trainable parameters, in a fixed order.
    fn params(&self) -> Vec<Param>;

    /// Non-trainable state such as running statistics.
    fn buffers(&self) -> Vec<Param> {
        Vec::new()
    }

    /// Parameters followed by buffers.
    fn state(&self) -> Vec<Param> {
        let mut all = self.params();
        all.extend(self.buffers());
        all
    }
}

/// Affine map `x·W + b` with `W: d_in×d_out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// He-normal weights (variance 2/fan_in) and zero bias.
    pub fn new(name: &str, d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::InvalidArgument(format!(
                "{name}: layer dimensions must be positive, got {d_in}×{d_out}"
            )));
        }
        let mut rng = rng_for(seed, name);
        let normal = Normal::new(0.0, (2.0 / d_in as f64).sqrt()).expect("positive std");
        let w: Vec<f64> = (0..d_in * d_out).map(|_| normal.sample(&mut rng)).collect();
        Ok(Linear {
            weight: Param::new(format!("{name}.weight"), Tensor::matrix(d_in, d_out, w)?),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[d_out])),
        })
    }

    pub fn from_params(weight: Param, bias: Param) -> Result<Self> {
        let (ws, bs) = (weight.shape(), bias.shape());
        if ws.len() != 2 || bs != [ws[1]] {
            return Err(Error::shape("linear", &ws, &bs));
        }
        Ok(Linear { weight, bias })
    }

    /// Copy with independent storage and the same names.
    pub fn deep_clone(&self) -> Linear {
        Linear {
            weight: self.weight.deep_copy(self.weight.name()),
            bias: self.bias.deep_copy(self.bias.name()),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let cols = g.value(x).cols();
        if cols != self.d_in() {
            return Err(Error::shape(
                "linear",
                g.value(x).shape(),
                &self.weight.shape(),
            ));
        }
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<Param> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

/// Stack of linear layers, each followed by ReLU.
#[derive(Clone, Debug)]
pub struct Encoder {
    layers: Vec<Linear>,
}

impl Encoder {
    /// `dims = [d_in, h_1, …, embed]`.
    pub fn new(prefix: &str, dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "{prefix}: an encoder needs an input and at least one layer width"
            )));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{prefix}.layer{i}"), w[0], w[1], seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoder { layers })
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("encoder without layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::shape(
                    "encoder",
                    &pair[0].weight.shape(),
                    &pair[1].weight.shape(),
                ));
            }
        }
        Ok(Encoder { layers })
    }

    pub fn deep_clone(&self) -> Encoder {
        Encoder {
            layers: self.layers.iter().map(Linear::deep_clone).collect(),
        }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").d_out()
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            let z = layer.forward(g, h)?;
            h = g.relu(z);
        }
        Ok(h)
    }

    /// Features for a batch outside any training graph.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let f = self.forward(&mut g, xv)?;
        Ok(g.value(f).clone())
    }
}

impl Module for Encoder {
    fn params(&self) -> Vec<Param> {
        self.layers.iter().flat_map(Linear::params).collect()
    }
}

/// Linear map from embeddings to class logits.
#[derive(Clone, Debug)]
pub struct HeadClassifier {
    pub linear: Linear,
}

impl HeadClassifier {
    pub fn new(name: &str, embed_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        Ok(HeadClassifier {
            linear: Linear::new(name, embed_dim, classes, seed)?,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.linear.d_in()
    }

    pub fn classes(&self) -> usize {
        self.linear.d_out()
    }

    pub fn forward(&self, g: &mut Graph, f: Var) -> Result<Var> {
        self.linear.forward(g, f)
    }

    /// Handle sharing storage with `self`.
    pub fn share(&self) -> HeadClassifier {
        self.clone()
    }

    /// Independent copy under a new name prefix.
    pub fn deep_copy(&self, name: &str) -> HeadClassifier {
        HeadClassifier {
            linear: Linear {
                weight: self.linear.weight.deep_copy(format!("{name}.weight")),
                bias: self.linear.bias.deep_copy(format!("{name}.bias")),
            },
        }
    }
}

impl Module for HeadClassifier {
    fn params(&self) -> Vec<Param> {
        self.linear.params()
    }
}

/// Batch-norm affine parameters plus running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        BatchNorm {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[dim], 1.0)),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[dim])),
            running_mean: Param::buffer(format!("{name}.running_mean"), Tensor::zeros(&[dim])),
            running_var: Param::buffer(format!("{name}.running_var"), Tensor::full(&[dim], 1.0)),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    /// Training mode normalizes with batch statistics and folds them into
    /// the running estimates (unbiased variance); eval mode uses the
    /// running estimates and leaves them untouched.
    pub fn forward(&self, g: &mut Graph, x: Var, training: bool) -> Result<Var> {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        if training {
            let (y, stats) = g.batch_norm(x, gamma, beta, None, self.eps)?;
            let stats = stats.expect("training mode returns stats");
            let n = stats.count as f64;
            let m = self.momentum;
            {
                let mut rm = self.running_mean.get_mut();
                for (r, &b) in rm.values_mut().iter_mut().zip(&stats.mean) {
                    *r = (1.0 - m) * *r + m * b;
                }
            }
            {
                let mut rv = self.running_var.get_mut();
                for (r, &b) in rv.values_mut().iter_mut().zip(&stats.var) {
                    *r = (1.0 - m) * *r + m * b * n / (n - 1.0);
                }
            }
            Ok(y)
        } else {
            let rm = self.running_mean.value();
            let rv = self.running_var.value();
            let (y, _) = g.batch_norm(x, gamma, beta, Some((rm.values(), rv.values())), self.eps)?;
            Ok(y)
        }
    }
}

impl Module for BatchNorm {
    fn params(&self) -> Vec<Param> {
        vec![self.gamma.clone(), self.beta.clone()]
    }

    fn buffers(&self) -> Vec<Param> {
        vec![self.running_mean.clone(), self.running_var.clone()]
    }
}

/// Adapter between embedding spaces: `ReLU(BN(x·W + b))`, or
/// `ReLU(x·W + b)` without batch norm.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub linear: Linear,
    pub bn: Option<BatchNorm>,
}

impl ProjectionHead {
    pub fn new(name: &str, d_in: usize, d_out: usize, use_bn: bool, seed: u64) -> Result<Self> {
        Ok(ProjectionHead {
            linear: Linear::new(&format!("{name}.linear"), d_in, d_out, seed)?,
            bn: use_bn.then(|| BatchNorm::new(&format!("{name}.bn"), d_out)),
        })
    }

    pub fn d_in(&self) -> usize {
        self.linear.d_in()
    }

    pub fn d_out(&self) -> usize {
        self.linear.d_out()
    }

    pub fn uses_bn(&self) -> bool {
        self.bn.is_some()
    }

    pub fn forward(&self, g: &mut Graph, f: Var, training: bool) -> Result<Var> {
        let z = self.linear.forward(g, f)?;
        let z = match &self.bn {
            Some(bn) => bn.forward(g, z, training)?,
            None => z,
        };
        Ok(g.relu(z))
    }
}

impl Module for ProjectionHead {
    fn params(&self) -> Vec<Param> {
        let mut p = self.linear.params();
        if let Some(bn) = &self.bn {
            p.extend(bn.params());
        }
        p
    }

    fn buffers(&self) -> Vec<Param> {
        self.bn.as_ref().map(|bn| bn.buffers()).unwrap_or_default()
    }
}

/// Encoder plus head classifier; the inference path is `head ∘ encoder`.
#[derive(Clone, Debug)]
pub struct Model {
    pub encoder: Encoder,
    pub head: HeadClassifier,
}

/// Layer widths and seed for [`Model::init`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub seed: u64,
}

impl Model {
    /// `prefix` names the role, e.g. `student` or `teacher`.
    pub fn init(prefix: &str, spec: &ModelSpec) -> Result<Self> {
        if spec.hidden.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{prefix}: at least one hidden layer is required"
            )));
        }
        if spec.classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "{prefix}: need at least 2 classes, got {}",
                spec.classes
            )));
        }
        let mut dims = vec![spec.input_dim];
        dims.extend(&spec.hidden);
        let encoder = Encoder::new(&format!("{prefix}.encoder"), &dims, spec.seed)?;
        let head = HeadClassifier::new(
            &format!("{prefix}.head"),
            encoder.output_dim(),
            spec.classes,
            spec.seed,
        )?;
        Ok(Model { encoder, head })
    }

    pub fn from_parts(encoder: Encoder, head: HeadClassifier) -> Result<Self> {
        if encoder.output_dim() != head.embed_dim() {
            return Err(Error::shape(
                "model",
                &[encoder.output_dim()],
                &[head.embed_dim()],
            ));
        }
        Ok(Model { encoder, head })
    }

    /// Copy with independent storage and the same names.
    pub fn deep_clone(&self) -> Model {
        Model {
            encoder: self.encoder.deep_clone(),
            head: HeadClassifier {
                linear: self.head.linear.deep_clone(),
            },
        }
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let f = self.encoder.forward(g, x)?;
        self.head.forward(g, f)
    }

    /// Logits for a batch with every parameter frozen.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, xv)?;
        Ok(g.value(out).clone())
    }

    /// Operation names recorded by one inference pass.
    pub fn inference_trace(&self, x: &Tensor) -> Result<Vec<&'static str>> {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        self.forward(&mut g, xv)?;
        Ok(g.op_trace())
    }
}

impl Module for Model {
    fn params(&self) -> Vec<Param> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }
}
