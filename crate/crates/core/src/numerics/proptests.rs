use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn matrix(max: usize) -> impl Strategy<Value = Tensor<f64>> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| tensor(vec![r, c]))
}

/// Contracts a node to a scalar with a fixed non-uniform probe so every
/// output coordinate carries a distinct upstream gradient.
fn probe(g: &mut Graph<f64>, v: Var) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0 + 0.05).collect())?;
    let w = g.constant(w);
    let m = g.mul(v, w)?;
    g.sum(m, None)
}

const TOL: f64 = 1e-6;
// Central-difference noise on O(1) losses is ~1e-11; zero gradients can only
// be checked in absolute terms.
const ATOL: f64 = 1e-9;

fn check(f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>, inputs: &[Tensor<f64>]) -> GradCheckReport {
    let r = grad_check(|g, v| {
        let out = f(g, v)?;
        probe(g, out)
    }, inputs, 1e-5)
    .unwrap();
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_gradients((a, b, ta, tb) in (1usize..5, 1usize..5, 1usize..5, any::<bool>(), any::<bool>())
        .prop_flat_map(|(m, k, n, ta, tb)| {
            let sa = if ta { vec![k, m] } else { vec![m, k] };
            let sb = if tb { vec![n, k] } else { vec![k, n] };
            (tensor(sa), tensor(sb), Just(ta), Just(tb))
        })) {
        let r = check(|g, v| g.matmul_t(v[0], v[1], ta, tb), &[a, b]);
        prop_assert!(r.passes(TOL, ATOL), "{r:?}");
    }

    #[test]
    fn elementwise_gradients((a, b) in matrix(5).prop_flat_map(|t| {
        let s = t.shape().to_vec();
        (Just(t), tensor(s))
    })) {
        for op in 0..5 {
            let r = check(|g, v| match op {
                0 => g.add(v[0], v[1]),
                1 => g.mul(v[0], v[1]),
                2 => Ok(g.sigmoid(v[0])),
                3 => Ok(g.tanh(v[0])),
                _ => Ok(g.scale(v[1], -1.5)),
            }, &[a.clone(), b.clone()]);
            prop_assert!(r.passes(TOL, ATOL), "op {op}: {r:?}");
        }
    }

    #[test]
    fn bias_gradients((x, b) in matrix(5).prop_flat_map(|t| {
        let c = t.shape()[1];
        (Just(t), tensor(vec![c]))
    })) {
        let r = check(|g, v| g.add_bias(v[0], v[1]), &[x, b]);
        prop_assert!(r.passes(TOL, ATOL), "{r:?}");
    }

    #[test]
    fn reduction_gradients(x in matrix(5), axis in 0usize..2) {
        for op in 0..4 {
            let r = check(|g, v| match op {
                0 => g.softmax(v[0], axis),
                1 => g.log_sum_exp(v[0], axis),
                2 => g.sum(v[0], Some(axis)),
                _ => g.mean(v[0], Some(axis)),
            }, &[x.clone()]);
            prop_assert!(r.passes(TOL, ATOL), "op {op}: {r:?}");
        }
    }

    #[test]
    fn structural_gradients(x in (2usize..6, 1usize..5).prop_flat_map(|(r, c)| tensor(vec![r, c])),
                            rows in prop::collection::vec(0usize..2, 1..6)) {
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let r1 = check(|g, v| {
            let top = g.slice(v[0], 0, 0, 1)?;
            let rest = g.slice(v[0], 0, 1, r)?;
            let t = g.tanh(top);
            g.concat(&[rest, t], 0)
        }, &[x.clone()]);
        prop_assert!(r1.passes(TOL, ATOL), "{r1:?}");
        let r2 = check(|g, v| g.reshape(v[0], &[c, r]), &[x.clone()]);
        prop_assert!(r2.passes(TOL, ATOL), "{r2:?}");
        let r3 = check(|g, v| g.gather_rows(v[0], &rows), &[x.clone()]);
        prop_assert!(r3.passes(TOL, ATOL), "{r3:?}");
    }

    #[test]
    fn fan_out_accumulates(x in matrix(4)) {
        // y = x * x + tanh(x): x is consumed three times.
        let r = check(|g, v| {
            let sq = g.mul(v[0], v[0])?;
            let t = g.tanh(v[0]);
            g.add(sq, t)
        }, &[x]);
        prop_assert!(r.passes(TOL, ATOL), "{r:?}");
    }

    #[test]
    fn sru_kernel_gradients((batch, steps, d) in (1usize..3, 1usize..4, 1usize..4),
                            seed in any::<u64>()) {
        let rows = batch * steps;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs: Vec<Tensor<f64>> = (0..4).map(|_| uniform(&mut rng, vec![rows, d])).collect();
        inputs.extend((0..4).map(|_| uniform(&mut rng, vec![d])));
        inputs.push(uniform(&mut rng, vec![batch, d]));
        let r = check(|g, v| {
            let inp = SruInputs {
                candidate: v[0], forget: v[1], reset: v[2], highway: v[3],
                v_f: v[4], v_r: v[5], b_f: v[6], b_r: v[7], c0: Some(v[8]),
            };
            Ok(g.sru(inp, batch, steps)?.0)
        }, &inputs);
        prop_assert!(r.passes(TOL, ATOL), "{r:?}");
    }

    #[test]
    fn lstm_kernel_gradients((batch, steps, d) in (1usize..3, 1usize..4, 1usize..4),
                             seed in any::<u64>()) {
        let rows = batch * steps;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |shape: Vec<usize>| uniform(&mut rng, shape);
        let inputs = vec![draw(vec![rows, 4 * d]), draw(vec![4 * d, d]), draw(vec![batch, d]), draw(vec![batch, d])];
        let r = check(|g, v| {
            let inp = LstmInputs { projected: v[0], w_hh: v[1], h0: Some(v[2]), c0: Some(v[3]) };
            Ok(g.lstm(inp, batch, steps)?.0)
        }, &inputs);
        prop_assert!(r.passes(TOL, ATOL), "{r:?}");
    }

    #[test]
    fn softmax_rows_sum_to_one(x in matrix(6).prop_map(|t| t.map(|v| v * 40.0))) {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let s = g.softmax(v, 1).unwrap();
        let (r, c) = x.dims2().unwrap();
        for i in 0..r {
            let row = &g.value(s).data()[i * c..(i + 1) * c];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn log_sum_exp_is_shift_equivariant(x in matrix(6), shift in -500.0f64..500.0) {
        let mut g = Graph::new();
        let a = g.constant(x.clone());
        let b = g.constant(x.map(|v| v + shift));
        let la = g.log_sum_exp(a, 1).unwrap();
        let lb = g.log_sum_exp(b, 1).unwrap();
        for (p, q) in g.value(la).data().iter().zip(g.value(lb).data()) {
            prop_assert!((q - p - shift).abs() < 1e-9 * (1.0 + shift.abs()));
        }
        let (r, c) = x.dims2().unwrap();
        for i in 0..r {
            let row = &x.data()[i * c..(i + 1) * c];
            let direct = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            prop_assert!((g.value(la).data()[i] - direct).abs() < 1e-12);
        }
    }
}

/// Kernel inputs stay in [-1, 1] so gates do not saturate into gradients
/// below the roundoff floor of the central difference.
fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}
