//! Helpers shared by the integration tests: central finite differences
//! against the tape, and a tiny network with every training loss wired up.
#![allow(dead_code)]

use customkd::losses::{composite_loss, cross_entropy, entropy_min, feature_mse, LossVars, LossWeights};
use customkd::models::{HeadClassifier, Model, ModelSpec, Module, ProjectionHead};
use customkd::numeric::{FreezeMask, Graph, Param, Tensor, Var};
use customkd::rng::rng_for;
use customkd::Result;
use rand::Rng;

pub const STEP: f64 = 1e-5;
/// Denominator floor so that near-zero gradients compare on an absolute
/// scale instead of amplifying round-off.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64, tag: &str) -> Tensor {
    let mut rng = rng_for(seed, tag);
    let v = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, v).unwrap()
}

/// Fixed weights that turn a non-scalar output into a scalar, so the check
/// covers every output coordinate.
fn reduce(g: &mut Graph, out: Var) -> Var {
    if g.value(out).is_scalar() {
        return out;
    }
    let shape = g.value(out).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| ((i as f64) * 0.7 + 0.3).sin()).collect()).unwrap();
    let w = g.constant(w);
    let p = g.mul(out, w).unwrap();
    g.sum(p)
}

fn eval_inputs<F>(inputs: &[Tensor], f: &F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    let s = reduce(&mut g, out);
    g.value(s).item()
}

/// Largest relative error between tape gradients and central differences
/// over every coordinate of every input.
pub fn check_inputs<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    let s = reduce(&mut g, out);
    g.backward(s).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].values_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].values_mut()[j] -= STEP;
            let numeric = (eval_inputs(&plus, &f) - eval_inputs(&minus, &f)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    worst
}

/// Same check over parameter storage. Every parameter in `params` must be
/// reached by `f`.
pub fn check_params<F>(params: &[Param], f: F) -> f64
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(FreezeMask::only(params));
    let loss = f(&mut g).unwrap();
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| {
            let grad = p.get().grad().expect("parameter reached by the loss").to_vec();
            p.get_mut().clear_grad();
            grad
        })
        .collect();
    let value = |f: &F| {
        let mut g = Graph::inference();
        let v = f(&mut g).unwrap();
        g.value(v).item()
    };
    let mut worst = 0.0f64;
    for (p, grad) in params.iter().zip(&analytic) {
        for j in 0..grad.len() {
            let orig = p.get().values()[j];
            p.get_mut().values_mut()[j] = orig + STEP;
            let up = value(&f);
            p.get_mut().values_mut()[j] = orig - STEP;
            let down = value(&f);
            p.get_mut().values_mut()[j] = orig;
            worst = worst.max(rel_err(grad[j], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

/// Small student, both projectors and cached teacher features.
pub struct LossFixture {
    pub student: Model,
    pub proj_s: ProjectionHead,
    pub proj_t: ProjectionHead,
    pub teacher_head: HeadClassifier,
    pub x_l: Tensor,
    pub y_l: Vec<usize>,
    pub x_u: Tensor,
    /// Teacher features of the labeled rows then the unlabeled rows.
    pub f_t: Tensor,
    pub f_t_l: Tensor,
    pub ftilde: Tensor,
    pub weights: LossWeights,
}

impl LossFixture {
    pub fn new(seed: u64) -> Self {
        let (d, ds, dt, c, n) = (3, 4, 5, 3, 4);
        let student = Model::init(
            "student",
            &ModelSpec {
                input_dim: d,
                hidden: vec![ds],
                classes: c,
                seed,
            },
        )
        .unwrap();
        let f_t = uniform(2 * n, dt, 0.0, 2.0, seed, "ft");
        LossFixture {
            proj_s: ProjectionHead::new("proj_s", ds, dt, true, seed).unwrap(),
            proj_t: ProjectionHead::new("proj_t", dt, ds, true, seed).unwrap(),
            teacher_head: HeadClassifier::new("teacher.fc_head", ds, c, seed).unwrap(),
            x_l: uniform(n, d, -2.0, 2.0, seed, "xl"),
            y_l: (0..n).map(|i| i % c).collect(),
            x_u: uniform(n, d, -2.0, 2.0, seed, "xu"),
            f_t_l: Tensor::matrix(n, dt, f_t.values()[..n * dt].to_vec()).unwrap(),
            f_t,
            ftilde: uniform(2 * n, ds, 0.0, 2.0, seed, "ftilde"),
            student,
            weights: LossWeights::default(),
        }
    }

    pub fn student_params(&self) -> Vec<Param> {
        self.student.params()
    }

    fn features(&self, g: &mut Graph) -> Result<(Var, Var, Var)> {
        let xl = g.constant(self.x_l.clone());
        let xu = g.constant(self.x_u.clone());
        let fl = self.student.encoder.forward(g, xl)?;
        let fu = self.student.encoder.forward(g, xu)?;
        let fs = g.concat_rows(&[fl, fu])?;
        Ok((fl, fu, fs))
    }

    /// Customization cross-entropy through θ^h_t and the student head.
    pub fn customization(&self, g: &mut Graph) -> Result<Var> {
        let ft = g.constant(self.f_t_l.clone());
        let z = self.proj_t.forward(g, ft, true)?;
        let logits = self.student.head.forward(g, z)?;
        cross_entropy(g, logits, &self.y_l)
    }

    /// Same with a teacher-owned head.
    pub fn customization_own_head(&self, g: &mut Graph) -> Result<Var> {
        let ft = g.constant(self.f_t_l.clone());
        let z = self.proj_t.forward(g, ft, true)?;
        let logits = self.teacher_head.forward(g, z)?;
        cross_entropy(g, logits, &self.y_l)
    }

    pub fn task_general(&self, g: &mut Graph) -> Result<Var> {
        let (_, _, fs) = self.features(g)?;
        let proj = self.proj_s.forward(g, fs, true)?;
        let ft = g.constant(self.f_t.clone());
        feature_mse(g, proj, ft)
    }

    pub fn task_specific(&self, g: &mut Graph) -> Result<Var> {
        let (_, _, fs) = self.features(g)?;
        let target = g.constant(self.ftilde.clone());
        feature_mse(g, fs, target)
    }

    pub fn labeled(&self, g: &mut Graph) -> Result<Var> {
        let (fl, _, _) = self.features(g)?;
        let logits = self.student.head.forward(g, fl)?;
        cross_entropy(g, logits, &self.y_l)
    }

    pub fn unlabeled(&self, g: &mut Graph) -> Result<Var> {
        let (_, fu, _) = self.features(g)?;
        let logits = self.student.head.forward(g, fu)?;
        entropy_min(g, logits)
    }

    pub fn composite(&self, g: &mut Graph) -> Result<Var> {
        let (fl, fu, fs) = self.features(g)?;
        let ll = self.student.head.forward(g, fl)?;
        let lu = self.student.head.forward(g, fu)?;
        let l_l = cross_entropy(g, ll, &self.y_l)?;
        let l_u = entropy_min(g, lu)?;
        let proj = self.proj_s.forward(g, fs, true)?;
        let ft = g.constant(self.f_t.clone());
        let l_ft = feature_mse(g, proj, ft)?;
        let target = g.constant(self.ftilde.clone());
        let l_ftilde = feature_mse(g, fs, target)?;
        let vars = LossVars {
            l_l,
            l_u: Some(l_u),
            l_ft: Some(l_ft),
            l_ftilde: Some(l_ftilde),
            l_pred: None,
        };
        composite_loss(g, &vars, &self.weights)
    }
}

/// Worst error of each full training loss, by name.
pub fn full_loss_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let fx = LossFixture::new(seed);
    let student = fx.student_params();
    let encoder = fx.student.encoder.params();
    let mut enc_proj = encoder.clone();
    enc_proj.extend(fx.proj_s.params());
    let mut with_proj = student.clone();
    with_proj.extend(fx.proj_s.params());
    let mut own = fx.proj_t.params();
    own.extend(fx.teacher_head.params());
    vec![
        ("customization", check_params(&fx.proj_t.params(), |g| fx.customization(g))),
        ("customization_own_head", check_params(&own, |g| fx.customization_own_head(g))),
        ("task_general", check_params(&enc_proj, |g| fx.task_general(g))),
        ("task_specific", check_params(&encoder, |g| fx.task_specific(g))),
        ("labeled_ce", check_params(&student, |g| fx.labeled(g))),
        ("entropy", check_params(&student, |g| fx.unlabeled(g))),
        ("composite", check_params(&with_proj, |g| fx.composite(g))),
    ]
}

/// Nudges values off the ReLU kink so a step of `STEP` never crosses it.
fn off_kink(mut t: Tensor) -> Tensor {
    for v in t.values_mut() {
        if v.abs() < 1e-2 {
            *v = if *v < 0.0 { -1e-2 } else { 1e-2 };
        }
    }
    t
}

/// Worst error of every differentiable graph op on inputs drawn from
/// [−2, 2] (log gets a positive range). Names match `Graph::op_trace`.
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let m = |r, c, tag: &str| uniform(r, c, -2.0, 2.0, seed, tag);
    let a = m(3, 4, "a");
    let b = m(3, 4, "b");
    let k = m(4, 2, "k");
    let row = Tensor::vector(m(1, 4, "row").into_values());
    let labels = [2usize, 0, 3];
    let mut out = vec![
        ("matmul", check_inputs(&[a.clone(), k], |g, v| g.matmul(v[0], v[1]))),
        ("add", check_inputs(&[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]))),
        ("sub", check_inputs(&[a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]))),
        ("mul", check_inputs(&[a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]))),
        ("relu", check_inputs(&[off_kink(a.clone())], |g, v| Ok(g.relu(v[0])))),
        ("log", check_inputs(&[uniform(3, 4, 0.2, 2.0, seed, "pos")], |g, v| g.log(v[0]))),
        ("exp", check_inputs(std::slice::from_ref(&a), |g, v| Ok(g.exp(v[0])))),
        ("square", check_inputs(std::slice::from_ref(&a), |g, v| Ok(g.square(v[0])))),
        ("scale", check_inputs(std::slice::from_ref(&a), |g, v| Ok(g.scale(v[0], -1.7)))),
        ("sum", check_inputs(std::slice::from_ref(&a), |g, v| Ok(g.sum(v[0])))),
        ("mean", check_inputs(std::slice::from_ref(&a), |g, v| Ok(g.mean(v[0])))),
        ("softmax", check_inputs(std::slice::from_ref(&a), |g, v| g.softmax(v[0]))),
        ("log_softmax", check_inputs(std::slice::from_ref(&a), |g, v| g.log_softmax(v[0]))),
        ("pick", check_inputs(std::slice::from_ref(&a), |g, v| g.pick(v[0], &labels))),
        ("concat_rows", check_inputs(&[a.clone(), m(2, 4, "c")], |g, v| g.concat_rows(&[v[0], v[1]]))),
    ];
    // Broadcast forms: a length-d vector over every row.
    for (name, which) in [("add", 0), ("sub", 1), ("mul", 2)] {
        let e = check_inputs(&[a.clone(), row.clone()], |g, v| match which {
            0 => g.add(v[0], v[1]),
            1 => g.sub(v[0], v[1]),
            _ => g.mul(v[0], v[1]),
        });
        out.push((name, e));
    }
    let x = m(5, 4, "bn");
    let gamma = Tensor::vector(uniform(1, 4, 0.5, 2.0, seed, "gamma").into_values());
    let beta = row.clone();
    out.push((
        "batch_norm",
        check_inputs(&[x.clone(), gamma.clone(), beta.clone()], |g, v| {
            Ok(g.batch_norm(v[0], v[1], v[2], None, 1e-5)?.0)
        }),
    ));
    let rm = m(1, 4, "rm").into_values();
    let rv = uniform(1, 4, 0.5, 2.0, seed, "rv").into_values();
    out.push((
        "batch_norm",
        check_inputs(&[x, gamma, beta], |g, v| {
            Ok(g.batch_norm(v[0], v[1], v[2], Some((&rm, &rv)), 1e-5)?.0)
        }),
    ));
    out
}

/// Every op name the graph can record besides leaves.
pub const DIFFERENTIABLE_OPS: [&str; 16] = [
    "matmul", "add", "sub", "mul", "relu", "log", "exp", "square", "scale", "sum", "mean", "softmax",
    "log_softmax", "pick", "concat_rows", "batch_norm",
];

use customkd::distill::{Objective, Stage, StagePlan, TrainContext};
use customkd::harness::ExperimentConfig;
use customkd::numeric::Snapshot;

/// Default benchmark with short pretraining, for tests that check
/// structure rather than accuracy.
pub fn quick_cfg(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default_uda();
    cfg.seed = seed;
    cfg.teacher.epochs = 8;
    cfg.student.epochs = 8;
    cfg.probe.epochs = 5;
    cfg.schedule.kd_epochs = 6;
    cfg
}

struct Groups {
    teacher: Snapshot,
    proj_t: Snapshot,
    own_head: Snapshot,
    student: Snapshot,
    proj_s: Snapshot,
}

fn groups(ctx: &TrainContext) -> Groups {
    Groups {
        teacher: Snapshot::take(&ctx.teacher_encoder.state()),
        proj_t: Snapshot::take(&ctx.proj_t.state()),
        own_head: Snapshot::take(&ctx.teacher_head.as_ref().map(|h| h.state()).unwrap_or_default()),
        student: Snapshot::take(&ctx.student.state()),
        proj_s: Snapshot::take(&ctx.proj_s.state()),
    }
}

/// Runs `plan` one stage at a time and reports every parameter group that
/// changed when it should not have, or stayed put when it should have
/// moved. The teacher encoder is also compared against its state before
/// the first stage.
pub fn partition_violations(ctx: &mut TrainContext, plan: &StagePlan) -> Vec<String> {
    let start = Snapshot::take(&ctx.teacher_encoder.state());
    let weights = ctx.cfg.weights;
    let mut bad = Vec::new();
    for (i, stage) in plan.stages().iter().enumerate() {
        let before = groups(ctx);
        match stage {
            Stage::Customize => {
                ctx.feature_customization_epoch().unwrap();
            }
            Stage::Distill => {
                ctx.knowledge_distillation_epoch(Objective::Feature, &weights).unwrap();
            }
        }
        let after = groups(ctx);
        let moved = |name: &str, a: &Snapshot, b: &Snapshot| (name.to_string(), !a.changed(b).is_empty());
        let status = [
            moved("teacher_encoder", &before.teacher, &after.teacher),
            moved("proj_t", &before.proj_t, &after.proj_t),
            moved("teacher_head", &before.own_head, &after.own_head),
            moved("student", &before.student, &after.student),
            moved("proj_s", &before.proj_s, &after.proj_s),
        ];
        let has_own_head = ctx.teacher_head.is_some();
        for (name, changed) in status {
            let expected = match (stage, name.as_str()) {
                (_, "teacher_encoder") => false,
                (Stage::Customize, "proj_t") => true,
                (Stage::Customize, "teacher_head") => has_own_head,
                (Stage::Customize, _) => false,
                (Stage::Distill, "student") | (Stage::Distill, "proj_s") => true,
                (Stage::Distill, _) => false,
            };
            if changed != expected {
                bad.push(format!("stage {i} ({stage}): {name} changed={changed}"));
            }
        }
    }
    if !start.changed(&Snapshot::take(&ctx.teacher_encoder.state())).is_empty() {
        bad.push("teacher encoder differs from its initial bits".into());
    }
    bad
}

pub fn random(n: usize, p: usize, seed: u64, tag: &str) -> Tensor {
    let mut rng = rng_for(seed, tag);
    Tensor::matrix(n, p, (0..n * p).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// HSIC from its definition: tr(K H L H) with Gram matrices K = XXᵀ,
/// L = YYᵀ and the centering matrix H = I − 11ᵀ/n, all by explicit loops.
pub fn hsic(x: &Tensor, y: &Tensor) -> f64 {
    let n = x.rows();
    let gram = |m: &Tensor| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| m.row(i).iter().zip(m.row(j)).map(|(a, b)| a * b).sum()).collect())
            .collect()
    };
    let h = |i: usize, j: usize| if i == j { 1.0 - 1.0 / n as f64 } else { -1.0 / n as f64 };
    let prod = |a: &Vec<Vec<f64>>, b: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b(k, j)).sum()).collect())
            .collect()
    };
    let (k, l) = (gram(x), gram(y));
    let kh = prod(&k, &h);
    let lh = prod(&l, &h);
    let mut tr = 0.0;
    for i in 0..n {
        for j in 0..n {
            tr += kh[i][j] * lh[j][i];
        }
    }
    tr
}

pub fn brute_cka(x: &Tensor, y: &Tensor) -> f64 {
    hsic(x, y) / (hsic(x, x) * hsic(y, y)).sqrt()
}

/// Orthogonal q×q matrix by Gram–Schmidt on a random square.
pub fn orthogonal(q: usize, seed: u64) -> Tensor {
    let a = random(q, q, seed, "orth");
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..q {
        let mut v: Vec<f64> = (0..q).map(|i| a.row(i)[j]).collect();
        for u in &cols {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        cols.push(v.into_iter().map(|x| x / norm).collect());
    }
    Tensor::matrix(q, q, (0..q * q).map(|k| cols[k % q][k / q]).collect()).unwrap()
}
