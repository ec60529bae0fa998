mod common;

use common::{check_inputs, full_loss_errors, op_errors, uniform, DIFFERENTIABLE_OPS};
use customkd::numeric::{Graph, Tensor};
use proptest::prelude::*;

const TOL: f64 = 1e-5;

#[test]
fn every_op_has_a_check() {
    let names: Vec<&str> = op_errors(0).into_iter().map(|(n, _)| n).collect();
    for op in DIFFERENTIABLE_OPS {
        assert!(names.contains(&op), "{op} is never checked");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ops_match_finite_differences(seed in any::<u64>()) {
        for (name, err) in op_errors(seed) {
            prop_assert!(err < TOL, "{name}: {err:e}");
        }
    }

    #[test]
    fn training_losses_match_finite_differences(seed in any::<u64>()) {
        for (name, err) in full_loss_errors(seed) {
            prop_assert!(err < TOL, "{name}: {err:e}");
        }
    }

    // A chain mixing several ops, with shapes drawn as well.
    #[test]
    fn op_chain_matches(seed in any::<u64>(), n in 2usize..6, d in 2usize..5, c in 2usize..5) {
        let x = uniform(n, d, -2.0, 2.0, seed, "x");
        let w = uniform(d, c, -2.0, 2.0, seed, "w");
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let err = check_inputs(&[x, w], |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let e = g.exp(h);
            let s = g.scale(e, 0.25);
            let z = g.sub(h, s)?;
            let lp = g.log_softmax(z)?;
            let p = g.pick(lp, &labels)?;
            Ok(g.mean(p))
        });
        prop_assert!(err < TOL, "{err:e}");
    }

    #[test]
    fn detach_blocks_the_gradient(seed in any::<u64>()) {
        let x = uniform(3, 3, -2.0, 2.0, seed, "x");
        let mut g = Graph::inference();
        let v = g.variable(x.clone());
        let sq = g.square(v);
        let stopped = g.detach(sq);
        let prod = g.mul(stopped, v).unwrap();
        let loss = g.sum(prod);
        g.backward(loss).unwrap();
        // Only the direct path survives: d/dx Σ c·x = c with c = x².
        let grad = g.grad(v).unwrap();
        for (gi, xi) in grad.iter().zip(x.values()) {
            prop_assert_eq!(gi.to_bits(), (xi * xi).to_bits());
        }
        prop_assert!(g.grad(stopped).is_none());
    }
}

#[test]
fn square_gradient_hand_value() {
    let mut g = Graph::inference();
    let w = g.variable(Tensor::vector(vec![1.0, -2.0]));
    let s = g.square(w);
    let l = g.sum(s);
    g.backward(l).unwrap();
    assert_eq!(g.grad(w).unwrap(), &[2.0, -4.0]);
}
