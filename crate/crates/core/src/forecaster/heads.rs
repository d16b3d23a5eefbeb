use crate::checkpoint::Container;
use crate::error::{contract, Result};
use crate::numcore::{stream_rng, Bound, Dense, Graph, ParamStore, Tensor, Var};
use crate::seqae::{FUTURE_DIM, HISTORY_DIM};
use crate::treenc::TREE_DIM;

pub const PRIOR_HIDDEN: usize = 64;

/// Maps `[x_h ⊕ sentiment ⊕ tree]` to cluster membership logits.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorModel {
    store: ParamStore,
    hidden: Dense,
    out: Dense,
    pub sentiment_len: usize,
    pub clusters: usize,
    pub seed: u64,
    pub loss_history: Vec<f64>,
}

impl PriorModel {
    pub fn new(sentiment_len: usize, clusters: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, "prior-init");
        let mut store = ParamStore::new();
        let inputs = HISTORY_DIM + sentiment_len + TREE_DIM;
        let hidden = Dense::new(&mut store, "fc1", inputs, PRIOR_HIDDEN, &mut rng);
        let out = Dense::new(&mut store, "fc2", PRIOR_HIDDEN, clusters, &mut rng);
        Self {
            store,
            hidden,
            out,
            sentiment_len,
            clusters,
            seed,
            loss_history: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        HISTORY_DIM + self.sentiment_len + TREE_DIM
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// `[b, input_dim]` -> logits `[b, clusters]`.
    pub fn logits(&self, g: &Graph, p: &Bound, input: Var) -> Var {
        self.out
            .forward(g, p, g.relu(self.hidden.forward(g, p, input)))
    }

    /// Membership simplex for one thread.
    pub fn predict(&self, x_h: &[f64], sentiment: &[f64], tree: &[f64]) -> Result<Vec<f64>> {
        if x_h.len() != HISTORY_DIM
            || sentiment.len() != self.sentiment_len
            || tree.len() != TREE_DIM
        {
            return Err(contract(format!(
                "prior inputs must have dims {HISTORY_DIM}/{}/{TREE_DIM}, got {}/{}/{}",
                self.sentiment_len,
                x_h.len(),
                sentiment.len(),
                tree.len()
            )));
        }
        let g = Graph::new();
        let p = self.store.bind(&g);
        let input = g.leaf(Tensor::row([x_h, sentiment, tree].concat()));
        let probs = g.softmax(self.logits(&g, &p, input));
        let v = g.value(probs).data().to_vec();
        Ok(v)
    }

    pub fn save(&self, prefix: &str, out: &mut Container) {
        out.put_meta(&format!("{prefix}.sentiment_len"), self.sentiment_len);
        out.put_meta(&format!("{prefix}.clusters"), self.clusters);
        out.put_meta(&format!("{prefix}.seed"), self.seed);
        out.put_tensor(
            &format!("{prefix}.loss_history"),
            &Tensor::vector(self.loss_history.clone()),
        );
        self.store.save(prefix, out);
    }

    pub fn load(prefix: &str, src: &Container) -> Result<Self> {
        let mut m = Self::new(
            src.meta_parse(&format!("{prefix}.sentiment_len"))?,
            src.meta_parse(&format!("{prefix}.clusters"))?,
            src.meta_parse(&format!("{prefix}.seed"))?,
        );
        m.store.load(prefix, src)?;
        m.loss_history = src.tensor(&format!("{prefix}.loss_history"))?.into_data();
        Ok(m)
    }
}

/// Difference branch plus the deep map from `[x_h ⊕ x_d ⊕ x_f^c]` to the
/// future latent.
#[derive(Clone, Debug, PartialEq)]
pub struct FuturePredictor {
    store: ParamStore,
    diff: Dense,
    hidden: Dense,
    out: Dense,
    pub seed: u64,
    pub loss_history: Vec<f64>,
}

const JOINT_DIM: usize = HISTORY_DIM + HISTORY_DIM + FUTURE_DIM;

impl FuturePredictor {
    pub fn new(seed: u64) -> Self {
        let mut rng = stream_rng(seed, "predictor-init");
        let mut store = ParamStore::new();
        let diff = Dense::new(&mut store, "fp_d", HISTORY_DIM, HISTORY_DIM, &mut rng);
        let hidden = Dense::new(&mut store, "fp_p.fc1", JOINT_DIM, JOINT_DIM, &mut rng);
        let out = Dense::new(&mut store, "fp_p.fc2", JOINT_DIM, FUTURE_DIM, &mut rng);
        Self {
            store,
            diff,
            hidden,
            out,
            seed,
            loss_history: Vec::new(),
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// `x_h` is `[b, 32]`, `prior` (the weighted centre) is `[b, 160]`.
    pub fn forward(&self, g: &Graph, p: &Bound, x_h: Var, prior: Var) -> Var {
        let pseudo_history = g.slice(prior, 0, HISTORY_DIM);
        let pseudo_future = g.slice(prior, HISTORY_DIM, HISTORY_DIM + FUTURE_DIM);
        let x_d = self.diff.forward(g, p, g.sub(x_h, pseudo_history));
        let joint = g.concat(&[x_h, x_d, pseudo_future]);
        self.out
            .forward(g, p, g.relu(self.hidden.forward(g, p, joint)))
    }

    /// The intermediate difference features `x_d` for one thread.
    pub fn difference(&self, x_h: &[f64], prior: &[f64]) -> Result<Vec<f64>> {
        self.check(x_h, prior)?;
        let g = Graph::new();
        let p = self.store.bind(&g);
        let xs: Vec<f64> = x_h.iter().zip(prior).map(|(a, b)| a - b).collect();
        let out = self.diff.forward(&g, &p, g.leaf(Tensor::row(xs)));
        let v = g.value(out).data().to_vec();
        Ok(v)
    }

    fn check(&self, x_h: &[f64], prior: &[f64]) -> Result<()> {
        if x_h.len() != HISTORY_DIM || prior.len() != HISTORY_DIM + FUTURE_DIM {
            return Err(contract(format!(
                "predictor inputs must have dims {HISTORY_DIM}/{}, got {}/{}",
                HISTORY_DIM + FUTURE_DIM,
                x_h.len(),
                prior.len()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, x_h: &[f64], prior: &[f64]) -> Result<Vec<f64>> {
        self.check(x_h, prior)?;
        let g = Graph::new();
        let p = self.store.bind(&g);
        let out = self.forward(
            &g,
            &p,
            g.leaf(Tensor::row(x_h.to_vec())),
            g.leaf(Tensor::row(prior.to_vec())),
        );
        let v = g.value(out).data().to_vec();
        Ok(v)
    }

    pub fn save(&self, prefix: &str, out: &mut Container) {
        out.put_meta(&format!("{prefix}.seed"), self.seed);
        out.put_tensor(
            &format!("{prefix}.loss_history"),
            &Tensor::vector(self.loss_history.clone()),
        );
        self.store.save(prefix, out);
    }

    pub fn load(prefix: &str, src: &Container) -> Result<Self> {
        let mut m = Self::new(src.meta_parse(&format!("{prefix}.seed"))?);
        m.store.load(prefix, src)?;
        m.loss_history = src.tensor(&format!("{prefix}.loss_history"))?.into_data();
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_outputs_simplex() {
        let m = PriorModel::new(15, 4, 1);
        let p = m.predict(&[0.3; 32], &[0.1; 15], &[0.2; 32]).unwrap();
        assert_eq!(p.len(), 4);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(m.predict(&[0.3; 31], &[0.1; 15], &[0.2; 32]).is_err());
        assert_eq!(
            PriorModel::new(15, 1, 1)
                .predict(&[9.0; 32], &[0.0; 15], &[1.0; 32])
                .unwrap(),
            vec![1.0]
        );
    }

    #[test]
    fn zero_difference_leaves_only_bias() {
        let m = FuturePredictor::new(2);
        let mut prior = vec![0.0; 160];
        let x_h: Vec<f64> = (0..32).map(|i| i as f64 * 0.1).collect();
        prior[..32].copy_from_slice(&x_h);
        let x_d = m.difference(&x_h, &prior).unwrap();
        let bias = m.params().get(m.diff.bias).data().to_vec();
        assert_eq!(x_d, bias);
        assert_eq!(m.predict(&x_h, &prior).unwrap().len(), 128);
        assert!(m.predict(&x_h, &prior[..100]).is_err());
    }
}
