//! Reply-tree encoding.
//!
//! A supervised recurrent model learns a 64-dim embedding per tweet by
//! predicting its hate score; two graph-convolution layers then mix node
//! embeddings over the reply tree and mean pooling yields one thread vector.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;

use crate::checkpoint::Container;
use crate::error::{contract, Error, Result};
use crate::numcore::{
    adam_step, stream_rng, AdamState, Bound, Dense, Graph, GruCell, ParamId, ParamStore, Tensor,
    Var,
};
use crate::threadstore::{thread_adjacency, ConversationThread};

pub const WORD_DIM: usize = 32;
pub const RNN_HIDDEN: usize = 32;
pub const NODE_DIM: usize = 2 * RNN_HIDDEN;
pub const ATTENTION_DIM: usize = 32;
pub const TREE_HIDDEN: usize = 64;
pub const TREE_DIM: usize = 32;

const UNKNOWN: usize = 0;
const EMBED_BATCH: usize = 32;

/// Token to row index of the embedding table; row 0 is the unknown token.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut seen = BTreeMap::new();
        for text in texts {
            for tok in text {
                *seen.entry(tok.clone()).or_insert(0usize) += 1;
            }
        }
        Self::from_tokens(seen.into_keys().collect())
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let mut all = vec!["<unk>".to_string()];
        all.extend(tokens);
        let index = all
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens: all, index }
    }

    /// Table rows, including the unknown row.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNKNOWN)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t)).collect()
    }
}

/// One scored training tweet.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredText {
    pub tokens: Vec<String>,
    pub score: f64,
}

#[derive(Clone, Debug)]
struct BiLayer {
    forward: GruCell,
    backward: GruCell,
}

impl BiLayer {
    fn run(&self, g: &Graph, p: &Bound, xs: &[Var], batch: usize) -> Vec<Var> {
        let zero = || g.leaf(Tensor::zeros(&[batch, RNN_HIDDEN]));
        let mut fwd = Vec::with_capacity(xs.len());
        let mut h = zero();
        for &x in xs {
            h = self.forward.step(g, p, x, h);
            fwd.push(h);
        }
        let mut bwd = vec![fwd[0]; xs.len()];
        let mut h = zero();
        for (t, &x) in xs.iter().enumerate().rev() {
            h = self.backward.step(g, p, x, h);
            bwd[t] = h;
        }
        fwd.iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct NodeEmbedderModel {
    pub vocab: Vocab,
    store: ParamStore,
    table: ParamId,
    layers: Vec<BiLayer>,
    attn_proj: Dense,
    attn_context: ParamId,
    head_hidden: Dense,
    head_out: Dense,
    pub lambda: f64,
    pub seed: u64,
    pub loss_history: Vec<f64>,
}

impl PartialEq for NodeEmbedderModel {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab
            && self.store == other.store
            && self.lambda == other.lambda
            && self.seed == other.seed
    }
}

struct Encoded {
    pooled: Var,
    attention: Var,
}

impl NodeEmbedderModel {
    pub fn new(vocab: Vocab, lambda: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, "node-embedder-init");
        let mut store = ParamStore::new();
        let table = store.add_glorot(
            "embed",
            &[vocab.len(), WORD_DIM],
            WORD_DIM,
            WORD_DIM,
            &mut rng,
        );
        let layers = (0..2)
            .map(|l| {
                let inputs = if l == 0 { WORD_DIM } else { NODE_DIM };
                BiLayer {
                    forward: GruCell::new(
                        &mut store,
                        &format!("gru{l}.fwd"),
                        inputs,
                        RNN_HIDDEN,
                        &mut rng,
                    ),
                    backward: GruCell::new(
                        &mut store,
                        &format!("gru{l}.bwd"),
                        inputs,
                        RNN_HIDDEN,
                        &mut rng,
                    ),
                }
            })
            .collect();
        let attn_proj = Dense::new(&mut store, "attn.proj", NODE_DIM, ATTENTION_DIM, &mut rng);
        let attn_context = store.add_glorot(
            "attn.context",
            &[ATTENTION_DIM, 1],
            ATTENTION_DIM,
            1,
            &mut rng,
        );
        let head_hidden = Dense::new(&mut store, "head.fc1", NODE_DIM, 32, &mut rng);
        let head_out = Dense::new(&mut store, "head.fc2", 32, 1, &mut rng);
        Self {
            vocab,
            store,
            table,
            layers,
            attn_proj,
            attn_context,
            head_hidden,
            head_out,
            lambda,
            seed,
            loss_history: Vec::new(),
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Encodes equal-length, non-empty token index rows.
    fn encode(&self, g: &Graph, p: &Bound, rows: &[Vec<usize>]) -> Encoded {
        let (batch, len) = (rows.len(), rows[0].len());
        let mut xs: Vec<Var> = (0..len)
            .map(|t| {
                g.gather(
                    p[self.table],
                    &rows.iter().map(|r| r[t]).collect::<Vec<_>>(),
                )
            })
            .collect();
        for layer in &self.layers {
            xs = layer.run(g, p, &xs, batch);
        }
        let scores: Vec<Var> = xs
            .iter()
            .map(|&h| {
                g.matmul(
                    g.tanh(self.attn_proj.forward(g, p, h)),
                    p[self.attn_context],
                )
            })
            .collect();
        let attention = g.softmax(g.concat(&scores));
        let mut pooled = None;
        for (t, &h) in xs.iter().enumerate() {
            let term = g.scale_rows(h, g.slice(attention, t, t + 1));
            pooled = Some(match pooled {
                None => term,
                Some(acc) => g.add(acc, term),
            });
        }
        Encoded {
            pooled: pooled.expect("non-empty"),
            attention,
        }
    }

    fn head(&self, g: &Graph, p: &Bound, pooled: Var) -> Var {
        g.sigmoid(
            self.head_out
                .forward(g, p, g.relu(self.head_hidden.forward(g, p, pooled))),
        )
    }

    fn grouped(&self, texts: &[&[String]]) -> BTreeMap<usize, Vec<usize>> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, t) in texts.iter().enumerate() {
            groups.entry(t.len()).or_default().push(i);
        }
        groups
    }

    /// Runs `f` over equal-length minibatches of non-empty texts.
    fn for_batches(
        &self,
        texts: &[&[String]],
        mut f: impl FnMut(&[usize], &Graph, &Bound, &Encoded),
    ) {
        for (len, members) in self.grouped(texts) {
            if len == 0 {
                continue;
            }
            for chunk in members.chunks(EMBED_BATCH) {
                let rows: Vec<Vec<usize>> =
                    chunk.iter().map(|&i| self.vocab.encode(texts[i])).collect();
                let g = Graph::new();
                let p = self.store.bind(&g);
                let enc = self.encode(&g, &p, &rows);
                f(chunk, &g, &p, &enc);
            }
        }
    }

    /// Node embeddings for many texts; empty texts map to zero vectors.
    pub fn embed_many(&self, texts: &[&[String]]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; NODE_DIM]; texts.len()];
        self.for_batches(texts, |chunk, g, _, enc| {
            let v = g.value(enc.pooled);
            for (k, &i) in chunk.iter().enumerate() {
                out[i] = v.data()[k * NODE_DIM..(k + 1) * NODE_DIM].to_vec();
            }
        });
        out
    }

    pub fn embed_tweet(&self, tokens: &[String]) -> Vec<f64> {
        self.embed_many(&[tokens]).pop().expect("one text")
    }

    /// Attention weights over token positions (empty for empty input).
    pub fn attention_weights(&self, tokens: &[String]) -> Vec<f64> {
        let mut out = Vec::new();
        self.for_batches(&[tokens], |_, g, _, enc| {
            out = g.value(enc.attention).data().to_vec()
        });
        out
    }

    /// Predicted hate scores; empty texts score as a zero embedding.
    pub fn predict_many(&self, texts: &[&[String]]) -> Vec<f64> {
        let mut out = vec![0.0; texts.len()];
        let zero_score = {
            let g = Graph::new();
            let p = self.store.bind(&g);
            let s = self.head(&g, &p, g.leaf(Tensor::zeros(&[1, NODE_DIM])));
            let v = g.value(s).item();
            v
        };
        out.iter_mut()
            .zip(texts)
            .filter(|(_, t)| t.is_empty())
            .for_each(|(o, _)| *o = zero_score);
        self.for_batches(texts, |chunk, g, p, enc| {
            let s = self.head(g, p, enc.pooled);
            let v = g.value(s);
            for (k, &i) in chunk.iter().enumerate() {
                out[i] = v.data()[k];
            }
        });
        out
    }

    /// Continues training on `data` for `epochs`; loss is mean squared error
    /// plus `lambda` times the squared parameter norm.
    pub fn fit(&mut self, data: &[ScoredText], epochs: usize, lr: f64, batch: usize) -> Result<()> {
        let usable: Vec<&ScoredText> = data.iter().filter(|d| !d.tokens.is_empty()).collect();
        if usable.len() < 2 {
            return Err(Error::Config(
                "node embedder needs at least 2 non-empty scored tweets".into(),
            ));
        }
        if usable.iter().any(|d| !(0.0..=1.0).contains(&d.score)) {
            return Err(contract("tweet scores must lie in [0, 1]"));
        }
        let mut rng = stream_rng(self.seed, "node-embedder-shuffle");
        let mut adam = AdamState::new(self.store.tensors());
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, d) in usable.iter().enumerate() {
            groups.entry(d.tokens.len()).or_default().push(i);
        }
        for _ in 0..epochs {
            let mut batches: Vec<Vec<usize>> = Vec::new();
            for members in groups.values() {
                let mut m = members.clone();
                m.shuffle(&mut rng);
                batches.extend(m.chunks(batch.max(1)).map(<[usize]>::to_vec));
            }
            batches.shuffle(&mut rng);
            let (mut total, mut count) = (0.0, 0.0);
            for chunk in &batches {
                let rows: Vec<Vec<usize>> = chunk
                    .iter()
                    .map(|&i| self.vocab.encode(&usable[i].tokens))
                    .collect();
                let target = Tensor::matrix(
                    chunk.len(),
                    1,
                    chunk.iter().map(|&i| usable[i].score).collect(),
                );
                let g = Graph::new();
                let p = self.store.bind(&g);
                let enc = self.encode(&g, &p, &rows);
                let pred = self.head(&g, &p, enc.pooled);
                let diff = g.sub(pred, g.leaf(target));
                let loss = g.mean(g.mul(diff, diff));
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Stage {
                        stage: "node-embedder",
                        cause: "loss became non-finite".into(),
                    });
                }
                let mut grads = g.grad(loss, p.vars())?;
                if self.lambda > 0.0 {
                    for (gr, t) in grads.iter_mut().zip(self.store.tensors()) {
                        for (gv, tv) in gr.data_mut().iter_mut().zip(t.data()) {
                            *gv += 2.0 * self.lambda * tv;
                        }
                    }
                }
                let reg = self.lambda * self.store.squared_norm();
                adam_step(self.store.tensors_mut(), &grads, &mut adam, lr)?;
                total += (value + reg) * chunk.len() as f64;
                count += chunk.len() as f64;
            }
            self.loss_history.push(total / count);
        }
        Ok(())
    }

    pub fn save(&self, prefix: &str, out: &mut Container) {
        out.put_meta(
            &format!("{prefix}.vocab"),
            self.vocab.tokens[1..].join("\n"),
        );
        out.put_meta(&format!("{prefix}.lambda"), self.lambda);
        out.put_meta(&format!("{prefix}.seed"), self.seed);
        out.put_tensor(
            &format!("{prefix}.loss_history"),
            &Tensor::vector(self.loss_history.clone()),
        );
        self.store.save(prefix, out);
    }

    pub fn load(prefix: &str, src: &Container) -> Result<Self> {
        let raw = src.meta(&format!("{prefix}.vocab"))?;
        let tokens = if raw.is_empty() {
            Vec::new()
        } else {
            raw.split('\n').map(str::to_string).collect()
        };
        let mut model = Self::new(
            Vocab::from_tokens(tokens),
            src.meta_parse(&format!("{prefix}.lambda"))?,
            src.meta_parse(&format!("{prefix}.seed"))?,
        );
        model.store.load(prefix, src)?;
        model.loss_history = src.tensor(&format!("{prefix}.loss_history"))?.into_data();
        Ok(model)
    }
}

/// Builds a vocabulary from `data` and trains a fresh node embedder.
pub fn train_node_embedder(
    data: &[ScoredText],
    epochs: usize,
    lr: f64,
    lambda: f64,
    seed: u64,
) -> Result<NodeEmbedderModel> {
    if data.is_empty() {
        return Err(Error::Config("node embedder training set is empty".into()));
    }
    let vocab = Vocab::build(data.iter().map(|d| d.tokens.as_slice()));
    let mut model = NodeEmbedderModel::new(vocab, lambda, seed);
    model.fit(data, epochs, lr, 32)?;
    Ok(model)
}

/// `D^{-1/2} (A + I) D^{-1/2}` for a symmetric 0/1 adjacency.
pub fn normalized_adjacency(adj: &Tensor) -> Result<Tensor> {
    let m = adj.rows();
    if adj.rank() != 2 || adj.cols() != m {
        return Err(contract(format!(
            "adjacency must be square, got {:?}",
            adj.shape()
        )));
    }
    let mut a = adj.data().to_vec();
    for i in 0..m {
        a[i * m + i] += 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..m)
        .map(|i| 1.0 / a[i * m..(i + 1) * m].iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..m {
        for j in 0..m {
            a[i * m + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(Tensor::matrix(m, m, a))
}

/// Two graph-convolution layers (64 -> 64 -> 32) without biases.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeEncoderModel {
    store: ParamStore,
    w0: ParamId,
    w1: ParamId,
    pub seed: u64,
}

impl TreeEncoderModel {
    pub fn new(seed: u64) -> Self {
        let mut rng = stream_rng(seed, "tree-encoder-init");
        let mut store = ParamStore::new();
        let w0 = store.add_glorot(
            "w0",
            &[NODE_DIM, TREE_HIDDEN],
            NODE_DIM,
            TREE_HIDDEN,
            &mut rng,
        );
        let w1 = store.add_glorot(
            "w1",
            &[TREE_HIDDEN, TREE_DIM],
            TREE_HIDDEN,
            TREE_DIM,
            &mut rng,
        );
        Self {
            store,
            w0,
            w1,
            seed,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn weights(&self) -> (&Tensor, &Tensor) {
        (self.store.get(self.w0), self.store.get(self.w1))
    }

    /// `mean_rows(relu(Â relu(Â P W0) W1))` as a `[1, 32]` node.
    pub fn forward(&self, g: &Graph, p: &Bound, adj_norm: Var, nodes: Var) -> Var {
        let h = g.relu(g.matmul(g.matmul(adj_norm, nodes), p[self.w0]));
        let h = g.relu(g.matmul(g.matmul(adj_norm, h), p[self.w1]));
        g.mean_rows(h)
    }

    /// Thread vector from a raw symmetric adjacency and node rows.
    pub fn embed_dense(&self, adj: &Tensor, nodes: &[Vec<f64>]) -> Result<Vec<f64>> {
        if nodes.len() != adj.rows() {
            return Err(contract(format!(
                "{} node embeddings for {} nodes",
                nodes.len(),
                adj.rows()
            )));
        }
        if nodes.iter().any(|n| n.len() != NODE_DIM) {
            return Err(contract(format!(
                "node embeddings must have {NODE_DIM} entries"
            )));
        }
        let g = Graph::new();
        let p = self.store.bind(&g);
        let adj = g.leaf(normalized_adjacency(adj)?);
        let x = g.leaf(Tensor::matrix(nodes.len(), NODE_DIM, nodes.concat()));
        let out = self.forward(&g, &p, adj, x);
        let v = g.value(out).data().to_vec();
        Ok(v)
    }

    /// Thread vector from an already normalized adjacency and `[m, 64]` nodes.
    pub fn embed_normalized(&self, adj_norm: &Tensor, nodes: &Tensor) -> Vec<f64> {
        let g = Graph::new();
        let p = self.store.bind(&g);
        let out = self.forward(&g, &p, g.leaf(adj_norm.clone()), g.leaf(nodes.clone()));
        let v = g.value(out).data().to_vec();
        v
    }

    pub fn save(&self, prefix: &str, out: &mut Container) {
        out.put_meta(&format!("{prefix}.seed"), self.seed);
        self.store.save(prefix, out);
    }

    pub fn load(prefix: &str, src: &Container) -> Result<Self> {
        let mut model = Self::new(src.meta_parse(&format!("{prefix}.seed"))?);
        model.store.load(prefix, src)?;
        Ok(model)
    }
}

/// Pooled thread embedding; `node_embeddings` are ordered root first, then
/// replies chronologically.
pub fn tree_embedding(
    model: &TreeEncoderModel,
    thread: &ConversationThread,
    node_embeddings: &[Vec<f64>],
) -> Result<Vec<f64>> {
    model.embed_dense(&thread_adjacency(thread), node_embeddings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::threadstore::tokenize;

    fn texts() -> Vec<ScoredText> {
        vec![
            ScoredText {
                tokens: tokenize("bad bad words here"),
                score: 0.9,
            },
            ScoredText {
                tokens: tokenize("kind words here"),
                score: 0.1,
            },
            ScoredText {
                tokens: tokenize("bad kind"),
                score: 0.5,
            },
            ScoredText {
                tokens: tokenize("words"),
                score: 0.2,
            },
        ]
    }

    #[test]
    fn vocab_maps_unknown_to_zero() {
        let v = Vocab::build(texts().iter().map(|t| t.tokens.as_slice()));
        assert_eq!(v.lookup("nope"), 0);
        assert!(v.lookup("bad") > 0);
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn embedding_conventions() {
        let m = NodeEmbedderModel::new(
            Vocab::build(texts().iter().map(|t| t.tokens.as_slice())),
            0.0,
            1,
        );
        assert_eq!(m.embed_tweet(&[]), vec![0.0; NODE_DIM]);
        let toks = tokenize("bad words here again");
        let e = m.embed_tweet(&toks);
        assert_eq!(e.len(), NODE_DIM);
        assert_eq!(e, m.embed_tweet(&toks));
        let w = m.attention_weights(&toks);
        assert_eq!(w.len(), 4);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let many = m.embed_many(&[&toks, &tokenize("kind"), &[]]);
        assert_eq!(many[0], e);
        assert_eq!(many[2], vec![0.0; NODE_DIM]);
    }

    #[test]
    fn overfits_a_single_tweet() {
        let one = ScoredText {
            tokens: tokenize("bad words"),
            score: 0.8,
        };
        let m = train_node_embedder(&[one.clone(), one.clone()], 150, 0.01, 0.0, 3).unwrap();
        let y = m.predict_many(&[&one.tokens])[0];
        assert!((y - 0.8).abs() < 0.05, "{y}");
        let again = train_node_embedder(&[one.clone(), one], 150, 0.01, 0.0, 3).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn training_errors() {
        assert!(train_node_embedder(&[], 1, 0.01, 0.0, 0).is_err());
        let t = texts();
        assert!(train_node_embedder(&t[..1], 1, 0.01, 0.0, 0).is_err());
    }

    #[test]
    fn single_node_uses_identity_adjacency() {
        let m = TreeEncoderModel::new(2);
        let p: Vec<f64> = (0..NODE_DIM).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = m
            .embed_dense(&Tensor::zeros(&[1, 1]), &[p.clone()])
            .unwrap();
        let (w0, w1) = m.weights();
        let h: Vec<f64> = (0..TREE_HIDDEN)
            .map(|c| {
                (0..NODE_DIM)
                    .map(|r| p[r] * w0.data()[r * TREE_HIDDEN + c])
                    .sum::<f64>()
                    .max(0.0)
            })
            .collect();
        for c in 0..TREE_DIM {
            let want = (0..TREE_HIDDEN)
                .map(|r| h[r] * w1.data()[r * TREE_DIM + c])
                .sum::<f64>()
                .max(0.0);
            assert!((out[c] - want).abs() < 1e-12);
        }
        assert!(m.embed_dense(&Tensor::zeros(&[2, 2]), &[p]).is_err());
    }

    #[test]
    fn round_trips() {
        let m = train_node_embedder(&texts(), 2, 0.01, 1e-4, 4).unwrap();
        let mut c = Container::new();
        m.save("node", &mut c);
        let t = TreeEncoderModel::new(5);
        t.save("tree", &mut c);
        let c = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(NodeEmbedderModel::load("node", &c).unwrap(), m);
        assert_eq!(TreeEncoderModel::load("tree", &c).unwrap(), t);
    }
}
