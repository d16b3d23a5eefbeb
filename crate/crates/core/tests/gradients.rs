//! Tape gradients against central finite differences.

mod common;

use common::*;
use hatecast::intensity::IntensityProfile;
use hatecast::numcore::{Conv1d, Dense, Graph, GruCell, ParamStore, Tensor, Var};
use hatecast::seqae::{AeConfig, AutoencoderModel, ProfileBatch};

fn assert_ok(name: &str, report: GradCheck) {
    assert!(report.ok(), "{name}: {report:?}");
}

/// Checks a unary or binary op applied to random `[3,4]` inputs, read out
/// through a fixed random weighting.
fn check_op(name: &str, arity: usize, op: impl Fn(&Graph, &[Var]) -> Var) {
    let mut r = rng(name.len() as u64 * 31);
    let mut params: Vec<Tensor> = (0..arity)
        .map(|_| random_tensor(&mut r, &[3, 4], 1.5))
        .collect();
    let out_shape = {
        let g = Graph::new();
        let leaves: Vec<Var> = params.iter().map(|t| g.leaf(t.clone())).collect();
        g.shape(op(&g, &leaves))
    };
    params.push(random_tensor(&mut r, &out_shape, 1.0));
    assert_ok(
        name,
        check_gradients(&params, |g, ps| {
            let leaves: Vec<Var> = ps.iter().map(|t| g.leaf(t.clone())).collect();
            let y = op(g, &leaves[..arity]);
            (g.sum(g.mul(y, leaves[arity])), leaves)
        }),
    );
}

#[test]
fn elementwise_ops() {
    check_op("add", 2, |g, v| g.add(v[0], v[1]));
    check_op("sub", 2, |g, v| g.sub(v[0], v[1]));
    check_op("mul", 2, |g, v| g.mul(v[0], v[1]));
    check_op("affine", 1, |g, v| g.affine(v[0], -0.4, 2.0));
    check_op("scale", 1, |g, v| g.scale(v[0], 3.0));
    check_op("one_minus", 1, |g, v| g.one_minus(v[0]));
    check_op("relu", 1, |g, v| g.relu(v[0]));
    check_op("sigmoid", 1, |g, v| g.sigmoid(v[0]));
    check_op("tanh", 1, |g, v| g.tanh(v[0]));
}

#[test]
fn reductions_and_softmax() {
    check_op("sum", 1, |g, v| g.sum(g.mul(v[0], v[0])));
    check_op("mean", 1, |g, v| g.mean(g.mul(v[0], v[0])));
    check_op("mean_rows", 1, |g, v| g.mean_rows(v[0]));
    check_op("softmax", 1, |g, v| g.softmax(v[0]));
    check_op("log_softmax", 1, |g, v| g.log_softmax(v[0]));
}

#[test]
fn structural_ops() {
    check_op("matmul", 2, |g, v| g.matmul(v[0], g.reshape(v[1], &[4, 3])));
    check_op("reshape", 1, |g, v| g.reshape(v[0], &[2, 6]));
    check_op("concat", 2, |g, v| g.concat(&[v[0], v[1]]));
    check_op("stack_rows", 2, |g, v| g.stack_rows(&[v[0], v[1]]));
    check_op("slice", 1, |g, v| g.slice(v[0], 1, 3));
    check_op("gather", 1, |g, v| g.gather(v[0], &[2, 0, 2, 1]));
    check_op("add_bias", 2, |g, v| g.add_bias(v[0], g.mean_rows(v[1])));
    check_op("scale_rows", 2, |g, v| {
        g.scale_rows(v[0], g.slice(v[1], 0, 1))
    });
    check_op("conv1d_same", 2, |g, v| {
        let kernel = g.reshape(g.concat(&[v[1], v[1], v[1], v[1]]), &[3, 4, 4]);
        g.conv1d_same(v[0], kernel)
    });
}

#[test]
fn two_layer_perceptron_with_ten_parameters() {
    let mut r = rng(49);
    let params = vec![
        random_tensor(&mut r, &[3, 2], 1.0),
        random_tensor(&mut r, &[2], 1.0),
        random_tensor(&mut r, &[2, 1], 1.0),
    ];
    assert_eq!(params.iter().map(Tensor::len).sum::<usize>(), 10);
    let x = random_tensor(&mut r, &[5, 3], 1.0);
    let y = random_tensor(&mut r, &[5, 1], 1.0);
    assert_ok(
        "perceptron",
        check_gradients(&params, |g, ps| {
            let l: Vec<Var> = ps.iter().map(|t| g.leaf(t.clone())).collect();
            let h = g.tanh(g.add_bias(g.matmul(g.leaf(x.clone()), l[0]), l[1]));
            let d = g.sub(g.matmul(h, l[2]), g.leaf(y.clone()));
            (g.mean(g.mul(d, d)), l)
        }),
    );
}

#[test]
fn random_compositions() {
    for seed in 10..20 {
        let params = program_params(seed);
        assert_ok(
            &format!("program {seed}"),
            check_gradients(&params, |g, ps| random_program(g, ps, seed)),
        );
    }
}

/// Gradient check over every tensor of a layer's parameter store.
fn check_store(
    name: &str,
    store: &ParamStore,
    loss: impl Fn(&Graph, &ParamStore) -> (Var, Vec<Var>),
) {
    let params = store.tensors().to_vec();
    assert_ok(
        name,
        check_gradients(&params, |g, ps| {
            let mut s = store.clone();
            s.tensors_mut().clone_from_slice(ps);
            loss(g, &s)
        }),
    );
}

#[test]
fn layers() {
    let mut r = rng(7);
    let mut store = ParamStore::new();
    let dense = Dense::new(&mut store, "d", 4, 3, &mut r);
    let conv = Conv1d::new(&mut store, "c", 5, 3, 2, &mut r);
    let gru = GruCell::new(&mut store, "g", 2, 3, &mut r);
    let x = random_tensor(&mut r, &[6, 4], 1.0);
    check_store("dense+conv+gru", &store, |g, s| {
        let p = s.bind(g);
        let h = g.tanh(dense.forward(g, &p, g.leaf(x.clone())));
        let c = conv.forward(g, &p, g.reshape(h, &[1, 6, 3]));
        let c = g.reshape(c, &[6, 2]);
        let mut state = g.leaf(Tensor::zeros(&[1, 3]));
        for t in 0..3 {
            state = gru.step(g, &p, g.gather(c, &[t]), state);
        }
        (g.sum(g.mul(state, state)), p.vars().to_vec())
    });
}

#[test]
fn autoencoder_loss() {
    let profiles: Vec<IntensityProfile> = (0..3)
        .map(|i| IntensityProfile {
            thread_id: format!("t{i}"),
            delta: 2,
            windows: (0..12 + i)
                .map(|k| ((k * (i + 1)) % 5) as f64 / 3.0)
                .collect(),
            too_short: false,
        })
        .collect();
    let batch = ProfileBatch::from_profiles(&profiles, 14, 4).unwrap();
    let model = AutoencoderModel::new(AeConfig::new(14, 4, 2.0), 3).unwrap();
    let base = model.masked_loss(&batch).unwrap();
    assert!(base.is_finite() && base > 0.0);
    // The full autoencoder has ~60k scalars; probe a deterministic sample of
    // them instead of the whole store.
    let mut r = rng(8);
    let mut worst: f64 = 0.0;
    let grads = model.loss_gradients(&batch).unwrap();
    for _ in 0..60 {
        let t = rand::Rng::gen_range(&mut r, 0..grads.len());
        let i = rand::Rng::gen_range(&mut r, 0..grads[t].len());
        let bump = |delta: f64| {
            let mut m = model.clone();
            m.params_mut().tensors_mut()[t].data_mut()[i] += delta;
            m.masked_loss(&batch).unwrap()
        };
        let numeric = (bump(FD_STEP) - bump(-FD_STEP)) / (2.0 * FD_STEP);
        let a = grads[t].data()[i];
        let abs = (a - numeric).abs();
        if abs > ABS_FLOOR {
            worst = worst.max(abs / a.abs().max(numeric.abs()));
        }
    }
    assert!(worst <= REL_TOL, "worst relative error {worst:e}");
}

#[test]
fn checker_flags_a_detached_path() {
    // The second use of the parameter bypasses the tape, so the analytic
    // gradient misses half of the true slope.
    let params = vec![random_tensor(&mut rng(3), &[2, 2], 1.0)];
    let report = check_gradients(&params, |g, ps| {
        let x = g.leaf(ps[0].clone());
        let detached = g.leaf(ps[0].clone());
        (g.sum(g.mul(x, detached)), vec![x])
    });
    assert_eq!(report.failures, 4, "{report:?}");
}
