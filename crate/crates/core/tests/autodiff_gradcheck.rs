//! Every tape primitive against central finite differences.

use std::sync::Arc;

use dwnet::autodiff::{gradient_check, AutodiffError, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds `inputs` as parameters, applies `build`, reduces the result with a
/// fixed random projection (so every output entry matters) and checks all
/// input coordinates.
fn check(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>) -> f64 {
    let shapes: Vec<(usize, usize)> = inputs.iter().map(Tensor::shape).collect();
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.as_slice().iter().copied()).collect();
    let mut proj_rng = ChaCha8Rng::seed_from_u64(99);
    let mut projection: Option<Tensor> = None;
    let f = |theta: &[f64]| -> Result<(f64, Vec<f64>), AutodiffError> {
        let mut tape = Tape::new();
        let mut at = 0;
        let vars: Vec<Var> = shapes
            .iter()
            .map(|&(r, c)| {
                let t = Tensor::new(r, c, theta[at..at + r * c].to_vec()).unwrap();
                at += r * c;
                tape.param(&t)
            })
            .collect();
        let out = build(&mut tape, &vars)?;
        let (r, c) = tape.shape(out);
        let w = projection.get_or_insert_with(|| random(r, c, &mut proj_rng)).clone();
        let w = tape.constant(w);
        let weighted = tape.mul(out, w)?;
        let loss = tape.sum(weighted);
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?.param_grads(&tape);
        Ok((value, grads.iter().flat_map(|g| g.as_slice().iter().copied()).collect()))
    };
    let coords: Vec<usize> = (0..flat.len()).collect();
    gradient_check(f, &flat, EPS, &coords).unwrap().max_rel_error
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn matmul() {
    let mut r = rng();
    let e = check(&[random(3, 4, &mut r), random(4, 2, &mut r)], |t, v| t.matmul(v[0], v[1]));
    assert!(e < TOL, "{e}");
}

#[test]
fn matmul_with_itself() {
    let mut r = rng();
    let e = check(&[random(3, 3, &mut r)], |t, v| t.matmul(v[0], v[0]));
    assert!(e < TOL, "{e}");
}

#[test]
fn elementwise_binary() {
    let mut r = rng();
    let inputs = [random(3, 2, &mut r), random(3, 2, &mut r)];
    assert!(check(&inputs, |t, v| t.add(v[0], v[1])) < TOL);
    assert!(check(&inputs, |t, v| t.sub(v[0], v[1])) < TOL);
    assert!(check(&inputs, |t, v| t.mul(v[0], v[1])) < TOL);
    assert!(check(&inputs[..1], |t, v| t.mul(v[0], v[0])) < TOL);
}

#[test]
fn add_row_and_scale() {
    let mut r = rng();
    let e = check(&[random(4, 3, &mut r), random(1, 3, &mut r)], |t, v| t.add_row(v[0], v[1]));
    assert!(e < TOL, "{e}");
    let e = check(&[random(2, 3, &mut r)], |t, v| Ok(t.scale(v[0], -2.5)));
    assert!(e < TOL, "{e}");
}

#[test]
fn activations() {
    let mut r = rng();
    let x = [random(4, 5, &mut r)];
    assert!(check(&x, |t, v| Ok(t.sigmoid(v[0]))) < TOL);
    assert!(check(&x, |t, v| Ok(t.tanh(v[0]))) < TOL);
    assert!(check(&x, |t, v| Ok(t.selu(v[0]))) < TOL);
}

#[test]
fn sqrt_and_reductions() {
    let mut r = rng();
    let positive = Tensor::new(2, 2, vec![0.5, 1.5, 2.0, 0.1]).unwrap();
    assert!(check(&[positive], |t, v| Ok(t.sqrt(v[0]))) < TOL);
    let x = [random(3, 4, &mut r)];
    assert!(check(&x, |t, v| Ok(t.sum_squares(v[0]))) < TOL);
    assert!(check(&x, |t, v| Ok(t.sum(v[0]))) < TOL);
    let pair = [random(3, 1, &mut r), random(3, 1, &mut r)];
    assert!(check(&pair, |t, v| t.mse_reduce(v[0], v[1])) < TOL);
}

#[test]
fn concatenation() {
    let mut r = rng();
    let e = check(&[random(3, 2, &mut r), random(3, 4, &mut r)], |t, v| t.concat_cols(v[0], v[1]));
    assert!(e < TOL, "{e}");
    let e = check(&[random(1, 3, &mut r), random(4, 3, &mut r)], |t, v| t.concat_rows(&[v[0], v[1], v[0]]));
    assert!(e < TOL, "{e}");
}

#[test]
fn gather_with_repeats() {
    let mut r = rng();
    let rows: Arc<[usize]> = vec![2, 0, 2, 3, 2].into();
    let e = check(&[random(4, 3, &mut r)], |t, v| t.gather_rows(v[0], rows.clone()));
    assert!(e < TOL, "{e}");
}

#[test]
fn set_rows_into_base() {
    let mut r = rng();
    let rows: Arc<[usize]> = vec![3, 1].into();
    let e = check(&[random(4, 3, &mut r), random(2, 3, &mut r)], |t, v| t.set_rows(v[0], rows.clone(), v[1]));
    assert!(e < TOL, "{e}");
}

#[test]
fn set_rows_when_base_has_other_consumers() {
    let mut r = rng();
    let rows: Arc<[usize]> = vec![0, 2].into();
    let e = check(&[random(3, 2, &mut r), random(2, 2, &mut r)], |t, v| {
        let base = t.tanh(v[0]);
        let replaced = t.set_rows(base, rows.clone(), v[1])?;
        // `base` is consumed again after the replacement.
        let again = t.scale(base, 3.0);
        t.add(replaced, again)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn group_aggregation() {
    let mut r = rng();
    let groups: Arc<[usize]> = vec![1, 0, 1, 1, 3].into();
    let x = [random(5, 2, &mut r)];
    assert!(check(&x, |t, v| t.sum_rows_by_group(v[0], groups.clone(), 4)) < TOL);
    assert!(check(&x, |t, v| t.mean_rows_by_group(v[0], groups.clone(), 4)) < TOL);
}

#[test]
fn dropout_with_fixed_mask() {
    let mut r = rng();
    let e = check(&[random(6, 4, &mut r)], |t, v| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(3);
        t.dropout(v[0], 0.5, true, &mut mask_rng)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn composed_gru_like_expression() {
    let mut r = rng();
    let inputs = [random(5, 3, &mut r), random(3, 3, &mut r), random(1, 3, &mut r)];
    let e = check(&inputs, |t, v| {
        let a = t.matmul(v[0], v[1])?;
        let a = t.add_row(a, v[2])?;
        let z = t.sigmoid(a);
        let h = t.tanh(a);
        let diff = t.sub(h, v[0])?;
        let step = t.mul(z, diff)?;
        t.add(v[0], step)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn dropout_statistics() {
    let mut tape = Tape::new();
    let n = 100_000;
    let x = tape.constant(Tensor::filled(n, 1, 1.0));
    let mut mask_rng = ChaCha8Rng::seed_from_u64(11);
    let y = tape.dropout(x, 0.5, true, &mut mask_rng).unwrap();
    let values = tape.value(y).as_slice();
    let kept = values.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
    assert!((kept - 0.5).abs() < 0.01, "kept fraction {kept}");
    assert!(values.iter().all(|&v| v == 0.0 || v == 2.0));
    let mean = values.iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    let eval = tape.dropout(x, 0.5, false, &mut mask_rng).unwrap();
    assert_eq!(eval, x);
}

#[test]
fn group_sums_are_permutation_invariant_within_groups() {
    let mut r = rng();
    let x = random(6, 3, &mut r);
    let groups = [0usize, 1, 0, 2, 1, 0];
    let order = [5usize, 3, 0, 4, 2, 1];
    let permuted_rows: Vec<Vec<f64>> = order.iter().map(|&i| x.row(i).to_vec()).collect();
    let permuted_groups: Vec<usize> = order.iter().map(|&i| groups[i]).collect();
    let mut tape = Tape::new();
    let a = tape.constant(x.clone());
    let b = tape.constant(Tensor::from_rows(&permuted_rows).unwrap());
    let sa = tape.mean_rows_by_group(a, groups.to_vec().into(), 3).unwrap();
    let sb = tape.mean_rows_by_group(b, permuted_groups.into(), 3).unwrap();
    for (p, q) in tape.value(sa).as_slice().iter().zip(tape.value(sb).as_slice()) {
        assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
    }
}
