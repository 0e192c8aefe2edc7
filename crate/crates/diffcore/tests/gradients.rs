//! Finite-difference checks of every differentiable tape operation.

use std::sync::Arc;

use diffcore::gradcheck::check;
use diffcore::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-4;
const POINTS: u64 = 10;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Reduces an arbitrary tensor to a scalar through a fixed random weighting,
/// so every output entry carries a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = tape.constant(random(&mut rng, &shape, -1.0, 1.0));
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

fn assert_op<F>(name: &str, shapes: &[&[usize]], range: (f64, f64), f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    for point in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(point * 7919 + name.len() as u64);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s, range.0, range.1)).collect();
        let report = check(&inputs, STEP, |tape, vars| {
            let y = f(tape, vars)?;
            weighted_sum(tape, y, point)
        })
        .unwrap();
        let err = report.max_relative_error();
        assert!(err < TOL, "{name} point {point}: relative error {err:e}");
    }
}

pub fn elementwise_binary() {
    assert_op("add", &[&[3, 2], &[3, 2]], (-2.0, 2.0), |t, v| t.add(v[0], v[1]));
    assert_op("sub", &[&[3, 2], &[3, 2]], (-2.0, 2.0), |t, v| t.sub(v[0], v[1]));
    assert_op("mul", &[&[3, 2], &[3, 2]], (-2.0, 2.0), |t, v| t.mul(v[0], v[1]));
    assert_op("div", &[&[3, 2], &[3, 2]], (0.5, 2.0), |t, v| t.div(v[0], v[1]));
}

pub fn broadcasting() {
    assert_op("add_row", &[&[4, 3], &[1, 3]], (-2.0, 2.0), |t, v| t.add_row(v[0], v[1]));
    assert_op("mul_col", &[&[4, 3], &[4, 1]], (-2.0, 2.0), |t, v| t.mul_col(v[0], v[1]));
}

pub fn unary() {
    assert_op("scale", &[&[5]], (-2.0, 2.0), |t, v| Ok(t.scale(v[0], -1.7)));
    assert_op("add_scalar", &[&[5]], (-2.0, 2.0), |t, v| Ok(t.add_scalar(v[0], 0.3)));
    assert_op("exp", &[&[5]], (-2.0, 2.0), |t, v| Ok(t.exp(v[0])));
    assert_op("sin", &[&[5]], (-3.0, 3.0), |t, v| Ok(t.sin(v[0])));
    assert_op("cos", &[&[5]], (-3.0, 3.0), |t, v| Ok(t.cos(v[0])));
    assert_op("sigmoid", &[&[5]], (-4.0, 4.0), |t, v| Ok(t.sigmoid(v[0])));
    assert_op("softplus", &[&[5]], (-4.0, 4.0), |t, v| Ok(t.softplus(v[0])));
    assert_op("square", &[&[5]], (-2.0, 2.0), |t, v| Ok(t.square(v[0])));
    // Kept away from the kink at zero.
    assert_op("relu", &[&[5]], (0.05, 2.0), |t, v| Ok(t.relu(v[0])));
    assert_op("relu_neg", &[&[5]], (-2.0, -0.05), |t, v| {
        let r = t.relu(v[0]);
        let s = t.add(r, v[0])?;
        Ok(s)
    });
}

pub fn linear_algebra() {
    assert_op("matmul", &[&[3, 4], &[4, 2]], (-1.0, 1.0), |t, v| t.matmul(v[0], v[1]));
    assert_op("transpose", &[&[3, 4]], (-1.0, 1.0), |t, v| t.transpose(v[0]));
    assert_op("softmax", &[&[3, 5]], (-3.0, 3.0), |t, v| t.softmax_rows(v[0]));
}

pub fn structural() {
    assert_op("concat_cols", &[&[3, 2], &[3, 1]], (-1.0, 1.0), |t, v| t.concat_cols(&[v[0], v[1]]));
    assert_op("concat_rows", &[&[1, 3], &[2, 3]], (-1.0, 1.0), |t, v| t.concat_rows(&[v[0], v[1]]));
    assert_op("slice_cols", &[&[3, 5]], (-1.0, 1.0), |t, v| t.slice_cols(v[0], 1, 3));
    assert_op("gather", &[&[6]], (-1.0, 1.0), |t, v| t.gather(v[0], Arc::new(vec![5, 0, 0, 3]), vec![2, 2]));
    assert_op("gather_rows", &[&[4, 2]], (-1.0, 1.0), |t, v| t.gather_rows(v[0], &[3, 1, 3]));
    assert_op("reshape", &[&[2, 3]], (-1.0, 1.0), |t, v| t.reshape(v[0], vec![3, 2]));
    assert_op("sum", &[&[2, 3]], (-1.0, 1.0), |t, v| {
        let s = t.sum(v[0]);
        Ok(t.square(s))
    });
    assert_op("mean", &[&[2, 3]], (-1.0, 1.0), |t, v| {
        let s = t.mean(v[0]);
        Ok(t.exp(s))
    });
}

pub fn composite_graph() {
    // A small two-layer network with a softmax head.
    assert_op("mlp", &[&[4, 3], &[3, 5], &[1, 5], &[5, 2]], (-1.0, 1.0), |t, v| {
        let h = t.matmul(v[0], v[1])?;
        let h = t.add_row(h, v[2])?;
        let h = t.softplus(h);
        let o = t.matmul(h, v[3])?;
        let s = t.softmax_rows(o)?;
        let e = t.sin(o);
        t.mul(s, e)
    });
}

pub fn stop_gradient_edges_carry_exactly_zero() {
    for point in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(point);
        let x = random(&mut rng, &[2, 3], -1.0, 1.0);
        let mut tape = Tape::new();
        let vx = tape.param(x);
        let frozen = tape.stop_gradient(vx);
        let e = tape.exp(frozen);
        let l = weighted_sum(&mut tape, e, point).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(vx).is_none());
    }
}

mod tests {
    #[test]
    fn elementwise_binary() {
        super::elementwise_binary()
    }

    #[test]
    fn broadcasting() {
        super::broadcasting()
    }

    #[test]
    fn unary() {
        super::unary()
    }

    #[test]
    fn linear_algebra() {
        super::linear_algebra()
    }

    #[test]
    fn structural() {
        super::structural()
    }

    #[test]
    fn composite_graph() {
        super::composite_graph()
    }

    #[test]
    fn stop_gradient_edges_carry_exactly_zero() {
        super::stop_gradient_edges_carry_exactly_zero()
    }
}
