//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use hatecast::numcore::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Worst disagreement between tape gradients and central differences.
#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub failures: usize,
    pub worst_rel: f64,
    pub worst_abs: f64,
}

impl GradCheck {
    pub fn ok(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;

/// Compares tape gradients of a scalar with central differences in every
/// scalar of `params`.
///
/// `build` must create one leaf per tensor (returned in order) and the scalar
/// output.
pub fn check_gradients(
    params: &[Tensor],
    build: impl Fn(&Graph, &[Tensor]) -> (Var, Vec<Var>),
) -> GradCheck {
    let g = Graph::new();
    let (out, leaves) = build(&g, params);
    assert_eq!(leaves.len(), params.len(), "one leaf per parameter tensor");
    let analytic = g.grad(out, &leaves).unwrap();
    let eval = |ps: &[Tensor]| {
        let g = Graph::new();
        let (out, _) = build(&g, ps);
        let value = g.value(out).item();
        value
    };
    let mut report = GradCheck::default();
    let mut work = params.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..work[t].len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + FD_STEP;
            let up = eval(&work);
            work[t].data_mut()[i] = orig - FD_STEP;
            let down = eval(&work);
            work[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grad.data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
            report.checked += 1;
            if abs > ABS_FLOOR && rel > REL_TOL {
                report.failures += 1;
            }
            if abs > ABS_FLOOR {
                report.worst_rel = report.worst_rel.max(rel);
            }
            report.worst_abs = report.worst_abs.max(abs);
        }
    }
    report
}

const ROWS: usize = 3;
const COLS: usize = 4;

/// Parameters of [`random_program`]: four `[3,4]` inputs, a `[4,4]` matrix,
/// a bias, a row scale, a conv kernel and a readout.
pub fn program_params(seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed ^ 0xabcd);
    let mut ps: Vec<Tensor> = (0..4)
        .map(|_| random_tensor(&mut r, &[ROWS, COLS], 1.0))
        .collect();
    ps.push(random_tensor(&mut r, &[COLS, COLS], 0.7));
    ps.push(random_tensor(&mut r, &[COLS], 0.5));
    ps.push(random_tensor(&mut r, &[ROWS], 1.0));
    ps.push(random_tensor(&mut r, &[3, COLS, COLS], 0.5));
    ps.push(random_tensor(&mut r, &[ROWS, COLS], 1.0));
    ps
}

/// A seeded random composition of tape operations with at most 50 nodes.
///
/// The op choices depend only on `seed`, so rebuilding with perturbed
/// parameters replays the same composition.
pub fn random_program(g: &Graph, params: &[Tensor], seed: u64) -> (Var, Vec<Var>) {
    let leaves: Vec<Var> = params.iter().map(|t| g.leaf(t.clone())).collect();
    let (m, bias, s, kernel, readout) = (leaves[4], leaves[5], leaves[6], leaves[7], leaves[8]);
    let mut pool: Vec<Var> = leaves[..4].to_vec();
    let mut r = rng(seed);
    while g.len() < 40 {
        let a = pool[r.gen_range(0..pool.len())];
        let b = pool[r.gen_range(0..pool.len())];
        let v = match r.gen_range(0..19) {
            0 => g.add(a, b),
            1 => g.sub(a, b),
            2 => g.mul(a, b),
            3 => g.affine(a, 0.7, 0.1),
            4 => g.scale(a, -1.3),
            5 => g.one_minus(a),
            6 => g.relu(a),
            7 => g.sigmoid(a),
            8 => g.tanh(a),
            9 => g.softmax(a),
            10 => g.log_softmax(a),
            11 => g.matmul(a, m),
            12 => g.add_bias(a, bias),
            13 => g.scale_rows(a, s),
            14 => g.conv1d_same(a, kernel),
            15 => g.slice(g.concat(&[a, b]), 2, 2 + COLS),
            16 => g.gather(g.stack_rows(&[a, b]), &[0, 4, 2]),
            17 => {
                let mr = g.mean_rows(a);
                g.gather(g.stack_rows(&[mr, b, mr]), &[0, 1, 4])
            }
            _ => g.reshape(g.reshape(a, &[ROWS * COLS]), &[ROWS, COLS]),
        };
        pool.push(v);
    }
    let last = *pool.last().unwrap();
    let other = pool[r.gen_range(0..pool.len())];
    let out = g.add(g.sum(g.mul(last, readout)), g.mean(g.mul(other, other)));
    (out, leaves)
}

/// Brute-force "same" convolution: `x` is `[len, c_in]`, `w` is `[k, c_in, c_out]`.
pub fn conv_oracle(x: &Tensor, w: &Tensor) -> Vec<f64> {
    let (len, c_in) = (x.shape()[0], x.shape()[1]);
    let (k, c_out) = (w.shape()[0], w.shape()[2]);
    let pad = (k - 1) / 2;
    let mut out = vec![0.0; len * c_out];
    for t in 0..len {
        for o in 0..c_out {
            let mut acc = 0.0;
            for tap in 0..k {
                let src = t as isize + tap as isize - pad as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                for c in 0..c_in {
                    acc +=
                        x.data()[src as usize * c_in + c] * w.data()[(tap * c_in + c) * c_out + o];
                }
            }
            out[t * c_out + o] = acc;
        }
    }
    out
}

/// Random tree of `m` nodes as a raw symmetric 0/1 adjacency; node `i > 0`
/// hangs off a uniformly chosen earlier node.
pub fn random_tree(r: &mut ChaCha8Rng, m: usize) -> Tensor {
    let mut a = Tensor::zeros(&[m, m]);
    for i in 1..m {
        let p = r.gen_range(0..i);
        a.data_mut()[i * m + p] = 1.0;
        a.data_mut()[p * m + i] = 1.0;
    }
    a
}

/// Dense reference of the two-layer propagation and mean pooling.
pub fn tree_oracle(adj: &Tensor, nodes: &[Vec<f64>], w0: &Tensor, w1: &Tensor) -> Vec<f64> {
    let m = adj.rows();
    let mut a = vec![vec![0.0; m]; m];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = adj.data()[i * m + j] + if i == j { 1.0 } else { 0.0 };
        }
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    for i in 0..m {
        for j in 0..m {
            a[i][j] /= (deg[i] * deg[j]).sqrt();
        }
    }
    let mat = |x: &[Vec<f64>], w: &Tensor| -> Vec<Vec<f64>> {
        let (din, dout) = (w.rows(), w.cols());
        x.iter()
            .map(|row| {
                (0..dout)
                    .map(|o| (0..din).map(|i| row[i] * w.data()[i * dout + o]).sum())
                    .collect()
            })
            .collect()
    };
    let prop = |x: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..m)
            .map(|i| {
                (0..x[0].len())
                    .map(|c| (0..m).map(|j| a[i][j] * x[j][c]).sum())
                    .collect()
            })
            .collect()
    };
    let relu = |x: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        x.into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect()
    };
    let h = relu(mat(&prop(nodes), w0));
    let h = relu(mat(&prop(&h), w1));
    (0..h[0].len())
        .map(|c| h.iter().map(|r| r[c]).sum::<f64>() / m as f64)
        .collect()
}
