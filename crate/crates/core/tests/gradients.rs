//! Central-difference checks of every differentiable operation the NTM
//! uses, each at 100 random points.

use rand::Rng;

use ntm::diff::grad_check_many;
use ntm::ntm::addressing::{content_address, interpolate, read, sharpen, shift, write, COSINE_EPS};
use ntm::rng::{seeded, TaskRng};
use ntm::{Result, Tape, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const POINTS: u64 = 100;

fn uniform(rng: &mut TaskRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Collapses any tensor to a scalar with fixed random weights, so every
/// output entry contributes a distinct gradient.
fn project(tape: &mut Tape, x: Var, salt: u64) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let w = uniform(&mut seeded(salt), &shape, -1.0, 1.0);
    let wv = tape.constant(w);
    let prod = tape.mul(x, wv)?;
    Ok(tape.sum(prod))
}

fn check<G, F>(name: &str, gen: G, f: F)
where
    G: Fn(&mut TaskRng) -> Vec<Tensor>,
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = seeded(name.len() as u64 * 7919);
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        let inputs = gen(&mut rng);
        let err = grad_check_many(
            |t, v| {
                let out = f(t, v)?;
                project(t, out, p)
            },
            &inputs,
            H,
        )
        .unwrap();
        worst = worst.max(err);
    }
    assert!(worst < TOL, "{name}: max relative error {worst:e}");
}

fn distribution(rng: &mut TaskRng, n: usize) -> Tensor {
    let raw = uniform(rng, &[n], 0.05, 1.0);
    let s = raw.sum();
    Tensor::vector(raw.data().iter().map(|v| v / s).collect())
}

#[test]
fn matmul() {
    check(
        "matmul",
        |r| {
            vec![
                uniform(r, &[3, 4], -1.0, 1.0),
                uniform(r, &[4, 2], -1.0, 1.0),
            ]
        },
        |t, v| t.matmul(v[0], v[1]),
    );
    check(
        "matvec",
        |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)],
        |t, v| t.matmul(v[0], v[1]),
    );
    check(
        "vecmat",
        |r| vec![uniform(r, &[5], -1.0, 1.0), uniform(r, &[5, 3], -1.0, 1.0)],
        |t, v| t.matmul(v[0], v[1]),
    );
}

#[test]
fn binary_elementwise() {
    let pair = |r: &mut TaskRng| vec![uniform(r, &[6], -2.0, 2.0), uniform(r, &[6], -2.0, 2.0)];
    check("add", pair, |t, v| t.add(v[0], v[1]));
    check("sub", pair, |t, v| t.sub(v[0], v[1]));
    check("mul", pair, |t, v| t.mul(v[0], v[1]));
    check(
        "mul_scalar",
        |r| vec![uniform(r, &[6], -2.0, 2.0), uniform(r, &[], -2.0, 2.0)],
        |t, v| t.mul_scalar(v[0], v[1]),
    );
}

#[test]
fn unary_elementwise() {
    let one = |r: &mut TaskRng| vec![uniform(r, &[7], -3.0, 3.0)];
    check("sigmoid", one, |t, v| Ok(t.sigmoid(v[0])));
    check("tanh", one, |t, v| Ok(t.tanh(v[0])));
    check("softplus", one, |t, v| Ok(t.softplus(v[0])));
    check("oneplus", one, |t, v| Ok(t.oneplus(v[0])));
    check("exp", one, |t, v| Ok(t.exp(v[0])));
    check("affine", one, |t, v| Ok(t.affine(v[0], -1.5, 0.25)));
    check("softmax", one, |t, v| Ok(t.softmax(v[0])));
    check("sum", one, |t, v| Ok(t.sum(v[0])));
    check(
        "log",
        |r| vec![uniform(r, &[7], 0.1, 3.0)],
        |t, v| t.log(v[0]),
    );
    check(
        "normalize",
        |r| vec![uniform(r, &[7], 0.1, 3.0)],
        |t, v| t.normalize(v[0]),
    );
}

#[test]
fn pow_scalar() {
    check(
        "pow_scalar",
        |r| vec![uniform(r, &[6], 0.05, 1.0), uniform(r, &[], 1.0, 6.0)],
        |t, v| t.pow_scalar(v[0], v[1]),
    );
}

#[test]
fn similarity() {
    check(
        "cosine_rows",
        |r| vec![uniform(r, &[5, 3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
        |t, v| t.cosine_rows(v[0], v[1], COSINE_EPS),
    );
    check(
        "cosine_similarity",
        |r| vec![uniform(r, &[4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)],
        |t, v| t.cosine_similarity(v[0], v[1], COSINE_EPS),
    );
}

#[test]
fn structural() {
    check(
        "circular_convolve",
        |r| vec![uniform(r, &[7], 0.0, 1.0), uniform(r, &[3], 0.0, 1.0)],
        |t, v| t.circular_convolve(v[0], v[1]),
    );
    check(
        "outer",
        |r| vec![uniform(r, &[4], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
        |t, v| t.outer(v[0], v[1]),
    );
    check(
        "concat",
        |r| vec![uniform(r, &[3], -1.0, 1.0), uniform(r, &[2], -1.0, 1.0)],
        |t, v| t.concat(&[v[0], v[1], v[0]]),
    );
    check(
        "slice",
        |r| vec![uniform(r, &[8], -1.0, 1.0)],
        |t, v| t.slice(v[0], 2, 4),
    );
    check(
        "reshape",
        |r| vec![uniform(r, &[6], -1.0, 1.0)],
        |t, v| t.reshape(v[0], vec![2, 3]),
    );
    check(
        "stack",
        |r| vec![uniform(r, &[3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
        |t, v| t.stack(&[v[0], v[1], v[0]]),
    );
}

#[test]
fn cross_entropy() {
    let target = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    let mask = [false, true, true];
    check(
        "binary_cross_entropy",
        |r| vec![uniform(r, &[3, 2], 0.05, 0.95)],
        |t, v| t.binary_cross_entropy(v[0], &target, &mask),
    );
}

#[test]
fn addressing_stages() {
    // Strengths kept moderate: a near one-hot focus drives some gradients
    // to ~1e-8, where central differences are dominated by round-off.
    check(
        "content_address",
        |r| {
            vec![
                uniform(r, &[6, 3], -1.0, 1.0),
                uniform(r, &[3], -1.0, 1.0),
                uniform(r, &[], 0.0, 5.0),
            ]
        },
        |t, v| content_address(t, v[0], v[1], v[2]),
    );
    check(
        "interpolate",
        |r| {
            vec![
                distribution(r, 6),
                distribution(r, 6),
                uniform(r, &[], 0.0, 1.0),
            ]
        },
        |t, v| interpolate(t, v[0], v[1], v[2]),
    );
    check(
        "shift",
        |r| vec![distribution(r, 6), distribution(r, 3)],
        |t, v| shift(t, v[0], v[1]),
    );
    check(
        "sharpen",
        |r| vec![distribution(r, 6), uniform(r, &[], 1.0, 5.0)],
        |t, v| sharpen(t, v[0], v[1]),
    );
    check(
        "read",
        |r| vec![uniform(r, &[5, 3], -1.0, 1.0), distribution(r, 5)],
        |t, v| read(t, v[0], v[1]),
    );
    check(
        "write",
        |r| {
            vec![
                uniform(r, &[5, 3], -1.0, 1.0),
                distribution(r, 5),
                uniform(r, &[3], 0.0, 1.0),
                uniform(r, &[3], -1.0, 1.0),
            ]
        },
        |t, v| write(t, v[0], v[1], v[2], v[3]),
    );
}
