//! Synthetic benchmarks and the CSV sample format.
//!
//! Both generators place one Gaussian cluster per class on a circle in the
//! first two input dimensions; any further dimensions carry pure noise.
//! The domain-adaptation generator moves the target domain by a rigid
//! rotation plus translation of that plane.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::rng::{rng_for, Rng};

/// Labeled samples stored row-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledSet {
    pub dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

/// Unlabeled samples stored row-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UnlabeledSet {
    pub dim: usize,
    pub x: Vec<f64>,
}

fn rows_tensor(dim: usize, x: &[f64], what: &str) -> Result<Tensor> {
    if x.is_empty() {
        return Err(Error::EmptyData(what.to_string()));
    }
    Tensor::matrix(x.len() / dim, dim, x.to_vec())
}

fn gather(dim: usize, x: &[f64], idx: &[usize]) -> Tensor {
    let mut out = Vec::with_capacity(idx.len() * dim);
    for &i in idx {
        out.extend_from_slice(&x[i * dim..(i + 1) * dim]);
    }
    Tensor::matrix(idx.len(), dim, out).expect("non-empty batch")
}

impl LabeledSet {
    pub fn new(dim: usize) -> Self {
        LabeledSet {
            dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn push(&mut self, x: &[f64], y: usize) {
        debug_assert_eq!(x.len(), self.dim);
        self.x.extend_from_slice(x);
        self.y.push(y);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// All samples as an `n×d` matrix.
    pub fn features(&self) -> Result<Tensor> {
        rows_tensor(self.dim, &self.x, "labeled set")
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        (
            gather(self.dim, &self.x, idx),
            idx.iter().map(|&i| self.y[i]).collect(),
        )
    }

    /// First `n` samples (or all of them).
    pub fn prefix(&self, n: usize) -> LabeledSet {
        let n = n.min(self.len());
        LabeledSet {
            dim: self.dim,
            x: self.x[..n * self.dim].to_vec(),
            y: self.y[..n].to_vec(),
        }
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut c = vec![0; classes];
        for &y in &self.y {
            c[y] += 1;
        }
        c
    }

    pub fn without_labels(&self) -> UnlabeledSet {
        UnlabeledSet {
            dim: self.dim,
            x: self.x.clone(),
        }
    }
}

impl UnlabeledSet {
    pub fn new(dim: usize) -> Self {
        UnlabeledSet {
            dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> Result<Tensor> {
        rows_tensor(self.dim, &self.x, "unlabeled set")
    }

    pub fn batch(&self, idx: &[usize]) -> Tensor {
        gather(self.dim, &self.x, idx)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BundleMeta {
    pub dim: usize,
    pub classes: usize,
    pub seed: u64,
    /// Free-form description of where each partition came from.
    pub domains: String,
}

/// D_L, D_U, the held-out evaluation set drawn like D_U, and the optional
/// teacher pretraining pool.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataBundle {
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledSet,
    pub eval: LabeledSet,
    pub pool: Option<LabeledSet>,
    /// Held-out labeled samples from the labeled data's own distribution;
    /// only the domain-shift generator fills it.
    pub source_eval: Option<LabeledSet>,
    pub meta: BundleMeta,
}

impl DataBundle {
    /// Checks the invariants needed by a distillation run.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.labeled.is_empty() {
            return Err(Error::EmptyData("labeled set D_L".into()));
        }
        if self.unlabeled.is_empty() {
            return Err(Error::EmptyData("unlabeled set D_U".into()));
        }
        if self.eval.is_empty() {
            return Err(Error::EmptyData("evaluation set".into()));
        }
        let sets = [&self.labeled, &self.eval];
        for s in sets.into_iter().chain(self.pool.as_ref()) {
            if s.dim != self.meta.dim {
                return Err(Error::Schema(format!(
                    "feature dim {} differs from bundle dim {}",
                    s.dim, self.meta.dim
                )));
            }
            if let Some(&y) = s.y.iter().find(|&&y| y >= self.meta.classes) {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: self.meta.classes,
                });
            }
        }
        Ok(())
    }
}

/// Domain-shift benchmark parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UdaSpec {
    pub classes: usize,
    pub dim: usize,
    /// Labeled source samples per class (D_L).
    pub labeled_per_class: usize,
    /// Unlabeled target samples per class (D_U).
    pub unlabeled_per_class: usize,
    /// Held-out target samples per class.
    pub eval_per_class: usize,
    /// Pool samples per class and per domain.
    pub pool_per_class: usize,
    pub radius: f64,
    pub sigma: f64,
    /// Target noise; `None` reuses `sigma`.
    pub target_sigma: Option<f64>,
    /// Rotation of the first two coordinates, in degrees.
    pub angle_deg: f64,
    /// Offset added after rotation; shorter than `dim` means zero-padded.
    pub translation: Vec<f64>,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for UdaSpec {
    fn default() -> Self {
        UdaSpec {
            classes: 8,
            dim: 6,
            labeled_per_class: 20,
            unlabeled_per_class: 40,
            eval_per_class: 40,
            pool_per_class: 60,
            radius: 1.0,
            sigma: 0.183,
            target_sigma: None,
            angle_deg: 20.0,
            translation: vec![0.0, 0.0, 1.33, -1.33, 1.33, -1.33],
            seed: 0,
        }
    }
}

/// Single-domain semi-supervised benchmark parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslSpec {
    pub classes: usize,
    pub dim: usize,
    pub labels_per_class: usize,
    pub unlabeled: usize,
    pub eval_per_class: usize,
    pub pool_per_class: usize,
    pub radius: f64,
    pub sigma: f64,
    /// Clusters per class, on concentric rings. A handful of labels per
    /// class rarely covers them all; the teacher pool does.
    pub modes_per_class: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SslSpec {
    fn default() -> Self {
        SslSpec {
            classes: 10,
            dim: 6,
            labels_per_class: 4,
            unlabeled: 400,
            eval_per_class: 30,
            pool_per_class: 60,
            radius: 1.0,
            sigma: 0.167,
            modes_per_class: 3,
            seed: 0,
        }
    }
}

/// Rotation of the first two coordinates followed by a translation.
#[derive(Clone, Copy, Debug)]
struct Shift<'a> {
    cos: f64,
    sin: f64,
    offset: &'a [f64],
}

impl Shift<'_> {
    const NONE: Shift<'static> = Shift {
        cos: 1.0,
        sin: 0.0,
        offset: &[],
    };

    fn apply(&self, x: &mut [f64]) {
        let (a, b) = (x[0], x[1]);
        x[0] = self.cos * a - self.sin * b;
        x[1] = self.sin * a + self.cos * b;
        for (v, t) in x.iter_mut().zip(self.offset) {
            *v += t;
        }
    }
}

/// Class `c`, mode `j` sits on the ring of radius `radius·(1+j)` at angle
/// `2π(c + j/2)/classes`, so neighbouring rings interleave.
struct Clusters {
    classes: usize,
    dim: usize,
    radius: f64,
    modes: usize,
}

impl Clusters {
    fn sample(&self, class: usize, sigma: f64, shift: Shift, rng: &mut Rng) -> Vec<f64> {
        let mode = if self.modes > 1 {
            rand::Rng::random_range(rng, 0..self.modes)
        } else {
            0
        };
        let t = 2.0 * PI * (class as f64 + 0.5 * mode as f64) / self.classes as f64;
        let r = self.radius * (1 + mode) as f64;
        let mut x: Vec<f64> = (0..self.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            })
            .collect();
        x[0] += r * t.cos();
        x[1] += r * t.sin();
        shift.apply(&mut x);
        x
    }

    /// `per_class` samples of every class, shuffled.
    fn stratified(&self, per_class: usize, sigma: f64, shift: Shift, rng: &mut Rng) -> LabeledSet {
        let mut labels: Vec<usize> = (0..self.classes)
            .flat_map(|c| std::iter::repeat_n(c, per_class))
            .collect();
        labels.shuffle(rng);
        let mut set = LabeledSet::new(self.dim);
        for y in labels {
            let x = self.sample(y, sigma, shift, rng);
            set.push(&x, y);
        }
        set
    }
}

fn check_common(classes: usize, dim: usize, radius: f64, sigma: f64) -> Result<()> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
    }
    if dim < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 dimensions, got {dim}")));
    }
    if !(radius.is_finite() && radius > 0.0 && sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive and sigma non-negative, got {radius} and {sigma}"
        )));
    }
    Ok(())
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
    }
    Ok(())
}

fn concat_shuffled(parts: &[LabeledSet], rng: &mut Rng) -> LabeledSet {
    let dim = parts[0].dim;
    let mut order: Vec<(usize, usize)> = parts
        .iter()
        .enumerate()
        .flat_map(|(p, s)| (0..s.len()).map(move |i| (p, i)))
        .collect();
    order.shuffle(rng);
    let mut out = LabeledSet::new(dim);
    for (p, i) in order {
        out.push(parts[p].row(i), parts[p].y[i]);
    }
    out
}

pub fn gen_uda_benchmark(spec: &UdaSpec) -> Result<DataBundle> {
    check_common(spec.classes, spec.dim, spec.radius, spec.sigma)?;
    positive("labeled_per_class", spec.labeled_per_class)?;
    positive("unlabeled_per_class", spec.unlabeled_per_class)?;
    positive("eval_per_class", spec.eval_per_class)?;
    let target_sigma = spec.target_sigma.unwrap_or(spec.sigma);
    if !(target_sigma.is_finite() && target_sigma >= 0.0)
        || !spec.angle_deg.is_finite()
        || !spec.translation.iter().all(|t| t.is_finite())
    {
        return Err(Error::InvalidArgument("shift parameters must be finite".into()));
    }
    if spec.translation.len() > spec.dim {
        return Err(Error::InvalidArgument(format!(
            "translation has {} entries for {} dimensions",
            spec.translation.len(),
            spec.dim
        )));
    }
    let clusters = Clusters {
        classes: spec.classes,
        dim: spec.dim,
        radius: spec.radius,
        modes: 1,
    };
    let a = spec.angle_deg.to_radians();
    let target = Shift {
        cos: a.cos(),
        sin: a.sin(),
        offset: &spec.translation,
    };
    let rng = |tag: &str| rng_for(spec.seed, tag);
    let (sg, tsg) = (spec.sigma, target_sigma);
    let labeled = clusters.stratified(spec.labeled_per_class, sg, Shift::NONE, &mut rng("uda/labeled"));
    let unlabeled = clusters
        .stratified(spec.unlabeled_per_class, tsg, target, &mut rng("uda/unlabeled"))
        .without_labels();
    let eval = clusters.stratified(spec.eval_per_class, tsg, target, &mut rng("uda/eval"));
    let source_eval = clusters.stratified(spec.eval_per_class, sg, Shift::NONE, &mut rng("uda/source_eval"));
    let pool = (spec.pool_per_class > 0).then(|| {
        let s = clusters.stratified(spec.pool_per_class, sg, Shift::NONE, &mut rng("uda/pool_source"));
        let t = clusters.stratified(spec.pool_per_class, tsg, target, &mut rng("uda/pool_target"));
        concat_shuffled(&[s, t], &mut rng("uda/pool_mix"))
    });
    Ok(DataBundle {
        labeled,
        unlabeled,
        eval,
        pool,
        source_eval: Some(source_eval),
        meta: BundleMeta {
            dim: spec.dim,
            classes: spec.classes,
            seed: spec.seed,
            domains: format!(
                "labeled=source unlabeled=target eval=target pool=source+target; \
                 rotation {}deg translation {:?}",
                spec.angle_deg, spec.translation
            ),
        },
    })
}

pub fn gen_ssl_benchmark(spec: &SslSpec) -> Result<DataBundle> {
    check_common(spec.classes, spec.dim, spec.radius, spec.sigma)?;
    positive("labels_per_class", spec.labels_per_class)?;
    positive("unlabeled", spec.unlabeled)?;
    positive("eval_per_class", spec.eval_per_class)?;
    positive("modes_per_class", spec.modes_per_class)?;
    let clusters = Clusters {
        classes: spec.classes,
        dim: spec.dim,
        radius: spec.radius,
        modes: spec.modes_per_class,
    };
    let rng = |tag: &str| rng_for(spec.seed, tag);
    let labeled = clusters.stratified(spec.labels_per_class, spec.sigma, Shift::NONE, &mut rng("ssl/labeled"));
    let mut urng = rng("ssl/unlabeled");
    let mut unlabeled = UnlabeledSet::new(spec.dim);
    for _ in 0..spec.unlabeled {
        let y = rand::Rng::random_range(&mut urng, 0..spec.classes);
        unlabeled.x.extend(clusters.sample(y, spec.sigma, Shift::NONE, &mut urng));
    }
    let eval = clusters.stratified(spec.eval_per_class, spec.sigma, Shift::NONE, &mut rng("ssl/eval"));
    let pool = (spec.pool_per_class > 0)
        .then(|| clusters.stratified(spec.pool_per_class, spec.sigma, Shift::NONE, &mut rng("ssl/pool")));
    Ok(DataBundle {
        labeled,
        unlabeled,
        eval,
        pool,
        source_eval: None,
        meta: BundleMeta {
            dim: spec.dim,
            classes: spec.classes,
            seed: spec.seed,
            domains: "single domain".into(),
        },
    })
}

const LABEL_UNLABELED: i64 = -1;

/// Writes every partition with its domain tag. Values use 17 significant
/// digits so that reading them back is exact.
pub fn save_csv(bundle: &DataBundle, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    write_csv(bundle, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn write_csv(bundle: &DataBundle, w: impl Write) -> Result<()> {
    let d = bundle.meta.dim;
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..d).map(|i| format!("feature_{i}")).collect();
    header.push("label".into());
    header.push("domain".into());
    wr.write_record(&header)?;
    let mut emit = |x: &[f64], label: i64, domain: &str| -> Result<()> {
        let mut rec: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
        rec.push(label.to_string());
        rec.push(domain.to_string());
        wr.write_record(&rec)?;
        Ok(())
    };
    for i in 0..bundle.labeled.len() {
        emit(bundle.labeled.row(i), bundle.labeled.y[i] as i64, "source")?;
    }
    for i in 0..bundle.unlabeled.len() {
        emit(bundle.unlabeled.row(i), LABEL_UNLABELED, "target")?;
    }
    for i in 0..bundle.eval.len() {
        emit(bundle.eval.row(i), bundle.eval.y[i] as i64, "eval")?;
    }
    if let Some(pool) = &bundle.pool {
        for i in 0..pool.len() {
            emit(pool.row(i), pool.y[i] as i64, "pool")?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads a sample file. Rows labeled −1 go to the unlabeled set whatever
/// their domain; labeled rows go to `eval`, `pool`, or D_L by domain.
/// The class count is inferred as one past the largest label (at least 2).
pub fn load_csv(path: impl AsRef<Path>) -> Result<DataBundle> {
    let path = path.as_ref();
    let f = File::open(path)?;
    read_csv(f, &path.display().to_string())
}

pub fn read_csv(r: impl std::io::Read, source: &str) -> Result<DataBundle> {
    let mut rd = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let header = rd.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let n = header.len();
    if n < 3 || &header[n - 2] != "label" || &header[n - 1] != "domain" {
        return Err(Error::Schema(format!(
            "{source}: header must be feature_0,...,feature_{{d-1}},label,domain"
        )));
    }
    let d = n - 2;
    for (i, h) in header.iter().take(d).enumerate() {
        if h != format!("feature_{i}") {
            return Err(Error::Schema(format!(
                "{source}: column {i} is `{h}`, expected `feature_{i}`"
            )));
        }
    }
    let mut b = DataBundle {
        labeled: LabeledSet::new(d),
        unlabeled: UnlabeledSet::new(d),
        eval: LabeledSet::new(d),
        pool: None,
        source_eval: None,
        meta: BundleMeta {
            dim: d,
            classes: 2,
            seed: 0,
            domains: format!("loaded from {source}"),
        },
    };
    let mut pool = LabeledSet::new(d);
    let mut max_label = 0usize;
    for rec in rd.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != n {
            return Err(Error::Schema(format!(
                "{source}:{line}: expected {n} fields, found {}",
                rec.len()
            )));
        }
        let mut x = Vec::with_capacity(d);
        for (i, field) in rec.iter().take(d).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("feature_{i}: `{field}` is not a number")))?;
            x.push(v);
        }
        let label: i64 = rec[d]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("label: `{}` is not an integer", &rec[d])))?;
        let domain = rec[d + 1].trim();
        if !matches!(domain, "source" | "target" | "pool" | "eval") {
            return Err(parse_err(line, format!("unknown domain `{domain}`")));
        }
        if label == LABEL_UNLABELED {
            b.unlabeled.x.extend(x);
            continue;
        }
        let y = usize::try_from(label)
            .map_err(|_| parse_err(line, format!("label {label} is negative but not -1")))?;
        max_label = max_label.max(y);
        match domain {
            "eval" => b.eval.push(&x, y),
            "pool" => pool.push(&x, y),
            _ => b.labeled.push(&x, y),
        }
    }
    b.meta.classes = (max_label + 1).max(2);
    if !pool.is_empty() {
        b.pool = Some(pool);
    }
    Ok(b)
}
