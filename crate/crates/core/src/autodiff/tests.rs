use ndarray::{array, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::{Result, SsrError};

fn t(a: ndarray::ArrayD<f64>) -> Tensor {
    a
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
}

fn store(entries: &[(&str, Tensor)]) -> ParamStore {
    let mut p = ParamStore::new();
    for (k, v) in entries {
        p.insert(*k, v.clone());
    }
    p
}

fn check(params: &ParamStore, program: impl Fn(&mut Tape, &ParamStore) -> Result<Var>) -> GradCheckReport {
    let report = grad_check(params, program, &GradCheckConfig::default()).unwrap();
    assert!(report.pass, "{report:#?}");
    report
}

#[test]
fn identity_matmul_records_one_node() {
    let x = array![[1.0], [2.0], [3.0]].into_dyn();
    let params = store(&[("w", ndarray::Array2::<f64>::eye(3).into_dyn())]);
    let (y, tape, _) = forward_record(&params, |tape, p| {
        let w = tape.param_from(p, "w")?;
        let x = tape.constant(x.clone());
        tape.matmul(w, x)
    })
    .unwrap();
    assert_eq!(y, x);
    assert_eq!(tape.operations(), vec![Primitive::MatMul]);
}

#[test]
fn nested_composition_order() {
    let params = store(&[("w", t(array![[0.5, -1.0]].into_dyn())), ("b", t(array![0.1].into_dyn()))]);
    let (_, tape, _) = forward_record(&params, |tape, p| {
        let w = tape.param_from(p, "w")?;
        let b = tape.param_from(p, "b")?;
        let x = tape.constant(array![[2.0], [1.0]].into_dyn());
        let wx = tape.matmul(w, x)?;
        let s = tape.add(wx, b)?;
        Ok(tape.sigmoid(s))
    })
    .unwrap();
    assert_eq!(
        tape.operations(),
        vec![Primitive::MatMul, Primitive::Add, Primitive::Sigmoid]
    );
}

#[test]
fn shape_errors_name_the_primitive() {
    let mut tape = Tape::new();
    let a = tape.constant(ArrayD::zeros(IxDyn(&[2, 3])));
    let b = tape.constant(ArrayD::zeros(IxDyn(&[2, 3])));
    match tape.matmul(a, b) {
        Err(SsrError::Shape { context, .. }) => assert_eq!(context, "matmul"),
        other => panic!("unexpected {:?}", other.map(|_| ())),
    }
    let c = tape.constant(ArrayD::zeros(IxDyn(&[4])));
    assert!(tape.add(a, c).is_err());
}

#[test]
fn squared_norm_gradient_is_twice_input() {
    let x = array![1.0, -2.0, 0.5].into_dyn();
    let params = store(&[("x", x.clone())]);
    let (_, tape, out) = forward_record(&params, |tape, p| {
        let x = tape.param_from(p, "x")?;
        tape.squared_norm(x)
    })
    .unwrap();
    let g = tape.backward_scalar(out).unwrap();
    assert_eq!(g.get("x").unwrap(), &(x * 2.0));
}

#[test]
fn sigmoid_gradient_at_zero_weights() {
    let x = array![[0.3], [-1.2], [2.0]].into_dyn();
    let params = store(&[("w", ArrayD::zeros(IxDyn(&[1, 3])))]);
    let (_, tape, out) = forward_record(&params, |tape, p| {
        let w = tape.param_from(p, "w")?;
        let xv = tape.constant(x.clone());
        let s = tape.matmul(w, xv)?;
        let y = tape.sigmoid(s);
        tape.sum(y, None)
    })
    .unwrap();
    let g = tape.backward_scalar(out).unwrap();
    let expected = x.t().mapv(|v| 0.25 * v);
    assert_eq!(g.get("w").unwrap(), &expected);
}

#[test]
fn seed_shape_mismatch_rejected() {
    let params = store(&[("x", array![1.0, 2.0].into_dyn())]);
    let (_, tape, out) = forward_record(&params, |tape, p| tape.param_from(p, "x")).unwrap();
    assert!(tape.backward(out, ArrayD::zeros(IxDyn(&[3]))).is_err());
    assert!(tape.backward_scalar(out).is_err());
}

#[test]
fn inference_tape_matches_recorded_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = store(&[("w", random(&mut rng, &[4, 3])), ("x", random(&mut rng, &[3, 2]))]);
    let program = |tape: &mut Tape, p: &ParamStore| {
        let w = tape.param_from(p, "w")?;
        let x = tape.param_from(p, "x")?;
        let y = tape.matmul(w, x)?;
        let y = tape.softmax(y)?;
        tape.logsumexp(y)
    };
    let (recorded, tape, _) = forward_record(&params, program).unwrap();
    let plain = forward_plain(&params, program).unwrap();
    assert_eq!(recorded, plain);
    assert_eq!(tape.operations().len(), 3);
    let mut inf = Tape::inference();
    program(&mut inf, &params).unwrap();
    assert!(inf.operations().is_empty());
}

// One grad check per primitive.

#[test]
fn quadratic_is_exact_to_rounding() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = store(&[("x", random(&mut rng, &[5, 4]))]);
    let r = check(&params, |tape, p| {
        let x = tape.param_from(p, "x")?;
        let s = tape.squared_norm(x)?;
        tape.sum(s, None)
    });
    assert!(r.tensors[0].max_rel_error <= 1e-7);
}

#[test]
fn gradcheck_matmul_add_mul_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = store(&[
        ("a", random(&mut rng, &[3, 4])),
        ("b", random(&mut rng, &[4, 2])),
        ("bias", random(&mut rng, &[2])),
        ("col", random(&mut rng, &[3, 1])),
    ]);
    check(&params, |tape, p| {
        let a = tape.param_from(p, "a")?;
        let b = tape.param_from(p, "b")?;
        let bias = tape.param_from(p, "bias")?;
        let col = tape.param_from(p, "col")?;
        let y = tape.matmul(a, b)?;
        let y = tape.add(y, bias)?;
        let y = tape.mul(y, col)?;
        let y = tape.mul(y, y)?;
        let y = tape.scale(y, -0.7);
        tape.sum(y, None)
    });
}

#[test]
fn gradcheck_nonlinearities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = store(&[("x", random(&mut rng, &[4, 5])), ("w", random(&mut rng, &[4, 5]))]);
    check(&params, |tape, p| {
        let x = tape.param_from(p, "x")?;
        let w = tape.param_from(p, "w")?;
        let s = tape.sigmoid(x);
        let sm = tape.softmax(x)?;
        let lr = tape.leaky_relu(x, 0.01);
        let lse = tape.logsumexp(x)?;
        let a = tape.mul(s, w)?;
        let b = tape.mul(sm, w)?;
        let c = tape.mul(lr, w)?;
        let parts = [tape.sum(a, None)?, tape.sum(b, None)?, tape.sum(c, None)?, tape.sum(lse, None)?];
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = tape.add(acc, p)?;
        }
        Ok(acc)
    });
}

#[test]
fn gradcheck_structural_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = store(&[
        ("x", random(&mut rng, &[4, 3])),
        ("y", random(&mut rng, &[2, 3])),
        ("w", random(&mut rng, &[3, 6])),
    ]);
    check(&params, |tape, p| {
        let x = tape.param_from(p, "x")?;
        let y = tape.param_from(p, "y")?;
        let w = tape.param_from(p, "w")?;
        let c = tape.concat(&[x, y], 0)?; // 6 x 3
        let g = tape.gather(c, &[5, 0, 0, 2])?;
        let r = tape.reshape(g, &[2, 6])?;
        let n = tape.l2_normalize(r)?;
        let wr = tape.reshape(w, &[3, 6])?;
        let h = tape.concat(&[n, wr], 0)?; // 5 x 6
        let s = tape.sum(h, Some(1))?;
        let s = tape.mul(s, s)?;
        tape.sum(s, None)
    });
}

#[test]
fn gradcheck_band_contractions() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = store(&[
        ("x", random(&mut rng, &[5, 3, 4])),
        ("wk", random(&mut rng, &[3, 2])),
        ("wq", random(&mut rng, &[3, 2])),
        ("v", random(&mut rng, &[2, 4, 4])),
    ]);
    check(&params, |tape, p| {
        let x = tape.param_from(p, "x")?;
        let wk = tape.param_from(p, "wk")?;
        let wq = tape.param_from(p, "wq")?;
        let v = tape.param_from(p, "v")?;
        let q = tape.contract(x, wk, ContractSpec::ModeProduct { transpose_w: false })?;
        let c = tape.contract(v, q, ContractSpec::CoreApply)?;
        let z = tape.contract(c, wq, ContractSpec::ModeProduct { transpose_w: true })?;
        let z = tape.mul(z, z)?;
        tape.sum(z, None)
    });
}

#[test]
fn zero_rows_normalize_to_zero_with_zero_gradient() {
    let params = store(&[("x", array![[0.0, 0.0], [3.0, 4.0]].into_dyn())]);
    let (y, tape, out) = forward_record(&params, |tape, p| {
        let x = tape.param_from(p, "x")?;
        tape.l2_normalize(x)
    })
    .unwrap();
    assert_eq!(y, array![[0.0, 0.0], [0.6, 0.8]].into_dyn());
    let g = tape.backward(out, ArrayD::ones(IxDyn(&[2, 2]))).unwrap();
    assert_eq!(g.get("x").unwrap().row_slice(0), vec![0.0, 0.0]);
}

trait RowSlice {
    fn row_slice(&self, i: usize) -> Vec<f64>;
}

impl RowSlice for Tensor {
    fn row_slice(&self, i: usize) -> Vec<f64> {
        self.index_axis(ndarray::Axis(0), i).iter().copied().collect()
    }
}

#[test]
fn corrupted_backward_rule_is_caught() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = store(&[("x", random(&mut rng, &[6]))]);
    let program = |tape: &mut Tape, p: &ParamStore| {
        tape.inject_backward_fault(Primitive::Sigmoid, 1.05);
        let x = tape.param_from(p, "x")?;
        let s = tape.sigmoid(x);
        tape.sum(s, None)
    };
    let report = grad_check(&params, program, &GradCheckConfig::default()).unwrap();
    assert!(!report.pass);
}

#[test]
fn non_finite_loss_reports_coordinate() {
    let params = store(&[("x", array![1e-4].into_dyn())]);
    let err = grad_check(
        &params,
        |tape, p| {
            let x = tape.param_from(p, "x")?;
            let v = tape.value(x)[[0]];
            // explodes once the probe pushes x to zero or below
            let c = tape.constant(ArrayD::from_elem(IxDyn(&[]), if v <= 0.0 { f64::NAN } else { 0.0 }));
            let s = tape.sum(x, None)?;
            tape.add(s, c)
        },
        &GradCheckConfig::default(),
    )
    .unwrap_err();
    match err {
        SsrError::NonFinite(msg) => assert!(msg.contains("x[0]"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

fn random_program(
    seed: u64,
) -> impl Fn(&mut Tape, &ParamStore) -> Result<Var> + Copy {
    move |tape: &mut Tape, p: &ParamStore| {
        let w = tape.param_from(p, "w")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = tape.constant(random(&mut rng, &[3, 4]));
        let h = tape.matmul(x, w)?;
        let h = tape.sigmoid(h);
        let s = tape.squared_norm(h)?;
        tape.sum(s, None)
    }
}

#[test]
fn gradients_are_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..10 {
        let params = store(&[("w", random(&mut rng, &[4, 2]))]);
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (l1, l2) = (random_program(100 + trial), random_program(200 + trial));
        let grad_of = |f: &dyn Fn(&mut Tape, &ParamStore) -> Result<Var>| {
            let (_, tape, out) = forward_record(&params, f).unwrap();
            tape.backward_scalar(out).unwrap().get("w").unwrap().clone()
        };
        let combined = grad_of(&|tape: &mut Tape, p: &ParamStore| {
            let x = l1(tape, p)?;
            let y = l2(tape, p)?;
            let x = tape.scale(x, a);
            let y = tape.scale(y, b);
            tape.add(x, y)
        });
        let separate = grad_of(&l1) * a + grad_of(&l2) * b;
        let diff = (&combined - &separate).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
        assert!(diff < 1e-12, "trial {trial}: {diff}");
    }
}

#[test]
fn batch_sum_gradient_is_sum_of_element_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let params = store(&[("w", random(&mut rng, &[3, 1]))]);
    let xs = random(&mut rng, &[5, 3]);
    let per_row = |rows: Vec<usize>| {
        let xs = xs.clone();
        move |tape: &mut Tape, p: &ParamStore| {
            let w = tape.param_from(p, "w")?;
            let x = tape.constant(xs.clone());
            let x = tape.gather(x, &rows)?;
            let s = tape.matmul(x, w)?;
            let s = tape.sigmoid(s);
            tape.sum(s, None)
        }
    };
    let grad = |f: &dyn Fn(&mut Tape, &ParamStore) -> Result<Var>| {
        let (_, tape, out) = forward_record(&params, f).unwrap();
        tape.backward_scalar(out).unwrap().get("w").unwrap().clone()
    };
    let whole = grad(&per_row((0..5).collect()));
    let mut parts = ArrayD::zeros(IxDyn(&[3, 1]));
    for i in 0..5 {
        parts += &grad(&per_row(vec![i]));
    }
    assert!((&whole - &parts).iter().all(|v| v.abs() < 1e-14));
}

#[test]
fn backward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = store(&[("w", random(&mut rng, &[4, 2]))]);
    let (_, tape, out) = forward_record(&params, random_program(5)).unwrap();
    let a = tape.backward_scalar(out).unwrap();
    let b = tape.backward_scalar(out).unwrap();
    assert_eq!(a, b);
}
