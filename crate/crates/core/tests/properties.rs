//! Randomized invariants.

mod common;

use std::sync::Arc;

use common::{random_tree, rng, tree_oracle};
use hatecast::evalcli::metrics::{mfe, pcc, rmse};
use hatecast::intensity::{
    blend, cosine, hate_intensity, reference_embedder, reference_scorer, windowed_profile,
    TextEmbedder, WindowMode,
};
use hatecast::numcore::{softmax, Graph, Tensor};
use hatecast::strata::fit_gmm;
use hatecast::threadstore::synthetic_lexicon;
use hatecast::treenc::TreeEncoderModel;
use proptest::prelude::*;

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, len)
}

proptest! {
    #[test]
    fn softmax_is_on_the_simplex(v in finite_vec(1..20)) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        let g = Graph::new();
        let rows = g.softmax(g.leaf(Tensor::matrix(1, v.len(), v.clone())));
        prop_assert!((g.value(rows).data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn windows_are_bounded_and_definitional(
        scores in prop::collection::vec(0.0f64..=1.0, 0..80),
        delta in 1usize..25,
    ) {
        let p = windowed_profile("t", &scores, delta, WindowMode::Sum).unwrap();
        prop_assert_eq!(p.len(), scores.len().saturating_sub(delta));
        prop_assert_eq!(p.too_short, p.is_empty());
        for (k, v) in p.windows.iter().enumerate() {
            prop_assert!((0.0..=delta as f64).contains(v));
            let mut acc = 0.0;
            for s in &scores[k..k + delta] {
                acc += s;
            }
            prop_assert_eq!(*v, acc);
        }
        let m = windowed_profile("t", &scores, delta, WindowMode::Mean).unwrap();
        prop_assert!(m.windows.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn hate_intensity_is_a_probability(
        words in prop::collection::vec(0usize..400, 0..15),
        w in 0.0f64..=1.0,
    ) {
        let lexicon = Arc::new(synthetic_lexicon());
        let vocab: Vec<String> = lexicon.entries().iter().map(|(w, _)| w.to_string()).collect();
        let tokens: Vec<String> =
            words.iter().map(|&i| vocab.get(i).cloned().unwrap_or_else(|| format!("filler{i}"))).collect();
        let h = hate_intensity(&tokens, w, &reference_scorer(lexicon.clone()), &lexicon).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!((0.0..=1.0).contains(&blend(0.9, 0.1, w).unwrap()));
    }

    #[test]
    fn metrics_are_symmetric_and_match_oracles(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..40),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert_eq!(rmse(&a, &b).unwrap(), rmse(&b, &a).unwrap());
        prop_assert_eq!(mfe(&a, &b).unwrap(), mfe(&b, &a).unwrap());
        let n = a.len() as f64;
        let sq: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        prop_assert!((rmse(&a, &b).unwrap() - (sq / n).sqrt()).abs() < 1e-12);
        match (pcc(&a, &b).unwrap(), pcc(&b, &a).unwrap()) {
            (Some(p), Some(q)) => {
                prop_assert!((p - q).abs() < 1e-12 && (-1.0..=1.0).contains(&p));
                let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
                let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
                let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
                let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
                prop_assert!((p - cov / (va.sqrt() * vb.sqrt())).abs() < 1e-9);
            }
            (None, None) => {}
            other => prop_assert!(false, "asymmetric absence {:?}", other),
        }
        prop_assert_eq!(pcc(&a, &a).unwrap().map(|p| (p - 1.0).abs() < 1e-12), pcc(&a, &a).unwrap().map(|_| true));
    }

    #[test]
    fn cosine_is_bounded(a in finite_vec(3..4), b in finite_vec(3..4)) {
        let c = cosine(&a, &b);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_log_likelihood_never_decreases(
        seed in 0u64..1000,
        j in 1usize..5,
        n in 30usize..90,
    ) {
        let mut r = rng(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = (i % 3) as f64 * 3.0;
                (0..2).map(|_| c + rand::Rng::gen_range(&mut r, -1.0..1.0)).collect()
            })
            .collect();
        let gmm = fit_gmm(&x, j, seed, 1e-9, 100).unwrap();
        for w in gmm.trace.windows(2) {
            prop_assert!(w[1] - w[0] >= -1e-9, "{} -> {}", w[0], w[1]);
        }
        let m = gmm.membership(&x[0]).unwrap();
        prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prior_knowledge_is_linear_in_the_weights(
        seed in 0u64..1000,
        raw_a in prop::collection::vec(0.01f64..1.0, 3),
        raw_b in prop::collection::vec(0.01f64..1.0, 3),
        t in 0.0f64..=1.0,
    ) {
        let mut r = rng(seed);
        let x: Vec<Vec<f64>> =
            (0..60).map(|i| vec![(i % 3) as f64 * 4.0 + rand::Rng::gen_range(&mut r, -1.0..1.0), rand::Rng::gen_range(&mut r, -1.0..1.0)]).collect();
        let gmm = fit_gmm(&x, 3, seed, 1e-6, 50).unwrap();
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
        let (a, b) = (norm(&raw_a), norm(&raw_b));
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let (pa, pb, pm) =
            (gmm.prior_knowledge(&a).unwrap(), gmm.prior_knowledge(&b).unwrap(), gmm.prior_knowledge(&mix).unwrap());
        for d in 0..2 {
            prop_assert!((pm[d] - (t * pa[d] + (1.0 - t) * pb[d])).abs() < 1e-9);
        }
        let uniform = gmm.prior_knowledge(&[1.0 / 3.0; 3]).unwrap();
        let centres = gmm.centres();
        for (d, u) in uniform.iter().enumerate() {
            let mean = centres.iter().map(|c| c[d]).sum::<f64>() / 3.0;
            prop_assert!((u - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn tree_pooling_is_permutation_invariant(seed in 0u64..10_000, m in 1usize..12) {
        let mut r = rng(seed);
        let model = TreeEncoderModel::new(seed);
        let adj = random_tree(&mut r, m);
        let nodes: Vec<Vec<f64>> = (0..m).map(|_| (0..64).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect()).collect();
        let t = model.embed_dense(&adj, &nodes).unwrap();
        let mut perm: Vec<usize> = (0..m).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let mut adj_p = Tensor::zeros(&[m, m]);
        let mut nodes_p = vec![Vec::new(); m];
        for i in 0..m {
            nodes_p[perm[i]] = nodes[i].clone();
            for j in 0..m {
                adj_p.data_mut()[perm[i] * m + perm[j]] = adj.data()[i * m + j];
            }
        }
        let tp = model.embed_dense(&adj_p, &nodes_p).unwrap();
        let (w0, w1) = model.weights();
        let oracle = tree_oracle(&adj, &nodes, w0, w1);
        for k in 0..t.len() {
            prop_assert!((t[k] - tp[k]).abs() < 1e-9);
            prop_assert!((t[k] - oracle[k]).abs() < 1e-9);
        }
    }
}

#[test]
fn disjoint_texts_embed_nearly_orthogonally() {
    let e = reference_embedder(64, 5).unwrap();
    let text = |prefix: &str| -> Vec<String> { (0..50).map(|i| format!("{prefix}{i}")).collect() };
    for k in 0..20 {
        let c = cosine(
            &e.embed(&text(&format!("a{k}_"))),
            &e.embed(&text(&format!("b{k}_"))),
        );
        assert!(c.abs() < 0.3, "cosine {c}");
    }
}
