use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensorcore::{grad_check, Tape, Tensor, TensorError, Var};

/// Worst relative error accepted for an operation.
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-5;
const EPS: f64 = 1e-6;

/// Grad-check outcome of one operation over many random instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpCheck {
    pub op: String,
    pub instances: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values at least 0.1 away from zero, so no relu kink lies within `EPS`.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random::<bool>() { m } else { -m }
    })
}

/// Distinct values spaced 0.05 apart, so window maxima are unambiguous.
fn spaced(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 0.5).collect();
    values.shuffle(rng);
    Tensor::new(shape, values).expect("sized from shape")
}

/// `Σ out ⊙ r` for a fixed random `r`, turning any output into a scalar
/// whose gradient exercises every output coordinate.
fn project(tape: &mut Tape<f64>, out: Var, r: &Tensor<f64>) -> Result<Var, TensorError> {
    let rv = tape.constant(r.clone());
    let prod = tape.mul(out, rv)?;
    Ok(tape.sum(prod))
}

struct Case {
    inputs: Vec<Tensor<f64>>,
    weights: Option<Tensor<f64>>,
    params: Vec<usize>,
}

fn check<F>(op: &str, instances: usize, tolerance: f64, rng: &mut ChaCha8Rng, mut make: impl FnMut(&mut ChaCha8Rng) -> Case, f: F) -> Result<OpCheck, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var], &[usize]) -> Result<Var, TensorError>,
{
    let mut result = OpCheck { op: op.into(), instances, coordinates: 0, max_rel_error: 0.0, tolerance };
    for _ in 0..instances {
        let case = make(rng);
        let r = grad_check(
            |tape, vars| {
                let out = f(tape, vars, &case.params)?;
                match &case.weights {
                    Some(r) => project(tape, out, r),
                    None => Ok(out),
                }
            },
            &case.inputs,
            EPS,
        )?;
        result.coordinates += r.coordinates;
        result.max_rel_error = result.max_rel_error.max(r.max_rel_error);
    }
    Ok(result)
}

fn scalar_case(inputs: Vec<Tensor<f64>>, params: Vec<usize>) -> Case {
    Case { inputs, weights: None, params }
}

/// Grad-checks every differentiable operation at 64-bit precision on
/// `instances` random problems each, plus a composed small network.
pub fn grad_check_suite(instances: usize, seed: u64) -> Result<Vec<OpCheck>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut out = Vec::new();

    out.push(check(
        "conv2d",
        instances,
        GRAD_TOLERANCE,
        rng,
        |rng| {
            let (n, cin, cout) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
            let (stride, pad, k) = (rng.random_range(1..=2), rng.random_range(0..=1), rng.random_range(1..=3));
            let (h, w) = (rng.random_range(k.max(3)..=6), rng.random_range(k.max(3)..=6));
            let oh = (h + 2 * pad - k) / stride + 1;
            let ow = (w + 2 * pad - k) / stride + 1;
            Case {
                inputs: vec![uniform(&[n, cin, h, w], rng), uniform(&[cout, cin, k, k], rng), uniform(&[cout], rng)],
                weights: Some(uniform(&[n, cout, oh, ow], rng)),
                params: vec![stride, pad],
            }
        },
        |t, v, p| t.conv2d(v[0], v[1], v[2], p[0], p[1]),
    )?);

    out.push(check(
        "maxpool2d",
        instances,
        GRAD_TOLERANCE,
        rng,
        |rng| {
            let (n, c, k, m) = (rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(2..=3), rng.random_range(1..=3));
            Case { inputs: vec![spaced(&[n, c, k * m, k * m], rng)], weights: Some(uniform(&[n, c, m, m], rng)), params: vec![k] }
        },
        |t, v, p| t.maxpool2d(v[0], p[0]),
    )?);

    out.push(check(
        "relu",
        instances,
        GRAD_TOLERANCE,
        rng,
        |rng| {
            let shape = [rng.random_range(1..=3), rng.random_range(1..=7)];
            Case { inputs: vec![off_zero(&shape, rng)], weights: Some(uniform(&shape, rng)), params: vec![] }
        },
        |t, v, _| Ok(t.relu(v[0])),
    )?);

    out.push(check(
        "linear",
        instances,
        GRAD_TOLERANCE,
        rng,
        |rng| {
            let (n, din, dout) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=6));
            Case {
                inputs: vec![uniform(&[n, din], rng), uniform(&[dout, din], rng), uniform(&[dout], rng)],
                weights: Some(uniform(&[n, dout], rng)),
                params: vec![],
            }
        },
        |t, v, _| t.linear(v[0], v[1], v[2]),
    )?);

    out.push(check(
        "flatten",
        instances,
        GRAD_TOLERANCE,
        rng,
        |rng| {
            let shape = [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)];
            Case { inputs: vec![uniform(&shape, rng)], weights: Some(uniform(&[shape[0], shape[1] * shape[2] * shape[3]], rng)), params: vec![] }
        },
        |t, v, _| Ok(t.flatten(v[0])),
    )?);

    out.push(check(
        "softmax_cross_entropy",
        instances,
        GRAD_TOLERANCE,
        rng,
        |rng| {
            let (n, k) = (rng.random_range(1..=4), rng.random_range(2..=6));
            let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
            let logits = Tensor::from_fn(&[n, k], |_| rng.random_range(-3.0..3.0));
            scalar_case(vec![logits], labels)
        },
        |t, v, labels| t.softmax_cross_entropy(v[0], labels),
    )?);

    out.push(check(
        "orthogonality_penalty",
        instances,
        ORTHOGONALITY_TOLERANCE,
        rng,
        |rng| {
            let d = rng.random_range(1..=6);
            scalar_case(vec![uniform(&[d, d], rng)], vec![])
        },
        |t, v, _| t.orthogonality_penalty(v[0]),
    )?);

    out.push(check(
        "add",
        instances,
        GRAD_TOLERANCE,
        rng,
        |rng| {
            let shape = [rng.random_range(1..=3), rng.random_range(1..=5)];
            Case { inputs: vec![uniform(&shape, rng), uniform(&shape, rng)], weights: Some(uniform(&shape, rng)), params: vec![] }
        },
        |t, v, _| t.add(v[0], v[1]),
    )?);

    out.push(check(
        "mul",
        instances,
        GRAD_TOLERANCE,
        rng,
        |rng| {
            let shape = [rng.random_range(1..=3), rng.random_range(1..=5)];
            Case { inputs: vec![uniform(&shape, rng), uniform(&shape, rng)], weights: Some(uniform(&shape, rng)), params: vec![] }
        },
        |t, v, _| t.mul(v[0], v[1]),
    )?);

    out.push(check(
        "scale",
        instances,
        GRAD_TOLERANCE,
        rng,
        |rng| {
            let shape = [rng.random_range(1..=3), rng.random_range(1..=5)];
            Case { inputs: vec![uniform(&shape, rng)], weights: Some(uniform(&shape, rng)), params: vec![rng.random_range(1..=9)] }
        },
        |t, v, p| Ok(t.scale(v[0], p[0] as f64 * 0.37)),
    )?);

    out.push(check(
        "sum",
        instances,
        GRAD_TOLERANCE,
        rng,
        |rng| {
            let shape = [rng.random_range(1..=3), rng.random_range(1..=5)];
            scalar_case(vec![uniform(&shape, rng)], vec![])
        },
        |t, v, _| Ok(t.sum(v[0])),
    )?);

    out.push(check(
        "gather_cols",
        instances,
        GRAD_TOLERANCE,
        rng,
        |rng| {
            let (n, k) = (rng.random_range(1..=3), rng.random_range(2..=6));
            let mut cols: Vec<usize> = (0..k).collect();
            cols.shuffle(rng);
            cols.truncate(rng.random_range(1..=k));
            Case { inputs: vec![uniform(&[n, k], rng)], weights: Some(uniform(&[n, cols.len()], rng)), params: cols }
        },
        |t, v, cols| t.gather_cols(v[0], cols),
    )?);

    out.push(check(
        "concat_cols",
        instances,
        GRAD_TOLERANCE,
        rng,
        |rng| {
            let (n, a, b) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4));
            Case { inputs: vec![uniform(&[n, a], rng), uniform(&[n, b], rng)], weights: Some(uniform(&[n, a + b], rng)), params: vec![] }
        },
        |t, v, _| t.concat_cols(v[0], v[1]),
    )?);

    out.push(check("composed_network", instances, GRAD_TOLERANCE, rng, composed_case, composed_forward)?);
    Ok(out)
}

/// Conv backbone with pooling, conv adjustment, three-layer classifier,
/// cross-entropy on a 2-sample batch.
fn composed_case(rng: &mut ChaCha8Rng) -> Case {
    let he = |fan_in: usize, shape: &[usize], rng: &mut ChaCha8Rng| {
        let bound = (6.0 / fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
    };
    let inputs = vec![
        Tensor::from_fn(&[2, 1, 6, 6], |_| rng.random_range(0.0..1.0)),
        he(9, &[2, 1, 3, 3], rng),
        uniform(&[2], rng).map_scaled(0.1),
        he(18, &[2, 2, 3, 3], rng),
        uniform(&[2], rng).map_scaled(0.1),
        he(18, &[8, 18], rng),
        uniform(&[8], rng).map_scaled(0.1),
        he(8, &[6, 8], rng),
        uniform(&[6], rng).map_scaled(0.1),
        he(6, &[3, 6], rng),
        uniform(&[3], rng).map_scaled(0.1),
    ];
    let labels = vec![rng.random_range(0..3), rng.random_range(0..3)];
    scalar_case(inputs, labels)
}

fn composed_forward(t: &mut Tape<f64>, v: &[Var], labels: &[usize]) -> Result<Var, TensorError> {
    let h = t.conv2d(v[0], v[1], v[2], 1, 1)?;
    let h = t.relu(h);
    let h = t.maxpool2d(h, 2)?;
    let h = t.conv2d(h, v[3], v[4], 1, 1)?;
    let h = t.relu(h);
    let h = t.flatten(h);
    let h = t.linear(h, v[5], v[6])?;
    let h = t.relu(h);
    let h = t.linear(h, v[7], v[8])?;
    let h = t.relu(h);
    let logits = t.linear(h, v[9], v[10])?;
    t.softmax_cross_entropy(logits, labels)
}

trait Scaled {
    fn map_scaled(self, factor: f64) -> Self;
}

impl Scaled for Tensor<f64> {
    fn map_scaled(mut self, factor: f64) -> Self {
        self.data_mut().iter_mut().for_each(|x| *x *= factor);
        self
    }
}
