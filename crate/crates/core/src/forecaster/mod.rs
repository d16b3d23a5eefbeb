//! Stage-wise training and inference of the full forecasting pipeline.
//!
//! Stages run in a fixed order: node embedder, per-thread features,
//! autoencoder, mixture clustering, prior model (jointly fine-tuning the tree
//! encoder), then the future-latent predictor. [`PipelineBuilder`] exposes
//! each stage so callers can reuse upstream stages, e.g. when sweeping `j`.

mod heads;
mod hyper;

use std::sync::Arc;

use log::info;
use rand::seq::SliceRandom;

pub use heads::{FuturePredictor, PriorModel, PRIOR_HIDDEN};
pub use hyper::Hyperparams;

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::intensity::{
    hate_intensity, reference_embedder, reference_scorer_named, reply_scores, sentiment_series,
    windowed_profile, HateLexicon, ReferenceEmbedder, ReferenceScorer,
};
use crate::numcore::{adam_step, derive_seed, stream_rng, AdamState, Graph, Tensor};
use crate::par::par_map;
use crate::seqae::{AeConfig, AutoencoderModel, LatentPair, ProfileBatch, FUTURE_DIM, HISTORY_DIM};
use crate::strata::{fit_gmm, FuzzyClustering};
use crate::threadstore::{thread_adjacency, ConversationThread, Corpus};
use crate::treenc::{
    normalized_adjacency, NodeEmbedderModel, ScoredText, TreeEncoderModel, Vocab, NODE_DIM,
    TREE_DIM,
};

pub const PIPELINE_VERSION: u32 = 1;
/// Seed of the fixed sentiment embedder shared by all pipelines.
pub const SENTIMENT_SEED: u64 = 0x5e47;

pub const STAGE_NODE: &str = "node-embedder";
pub const STAGE_FEATURES: &str = "features";
pub const STAGE_AUTOENCODER: &str = "autoencoder";
pub const STAGE_CLUSTERING: &str = "clustering";
pub const STAGE_PRIOR: &str = "prior";
pub const STAGE_PREDICTOR: &str = "predictor";

/// Lexicon, classifier stand-in and sentiment embedder used for features.
#[derive(Clone, Debug)]
pub struct TextModels {
    pub lexicon: Arc<HateLexicon>,
    pub scorer: ReferenceScorer,
    pub embedder: ReferenceEmbedder,
}

impl TextModels {
    pub fn new(lexicon: Arc<HateLexicon>, hp: &Hyperparams) -> Result<Self> {
        Ok(Self {
            scorer: reference_scorer_named(&hp.scorer, lexicon.clone())?,
            embedder: reference_embedder(hp.sentiment_dim, SENTIMENT_SEED)?,
            lexicon,
        })
    }
}

/// Everything the pipeline derives from one thread before any latent model.
#[derive(Clone, Debug, PartialEq)]
pub struct ThreadFeatures {
    pub thread_id: String,
    /// Window profile of the first `n` replies.
    pub windows: Vec<f64>,
    /// Sentiment history over the observed replies (`t_h − δ` values).
    pub sentiment: Vec<f64>,
    /// Normalized adjacency of the observed reply tree.
    pub adjacency: Tensor,
    /// `[m, 64]` node embeddings of the observed tweets, root first.
    pub nodes: Tensor,
}

fn require<'a, T>(slot: &'a Option<T>, needed: &str, running: &'static str) -> Result<&'a T> {
    slot.as_ref().ok_or_else(|| Error::Stage {
        stage: running,
        cause: format!("requires the {needed} stage to run first"),
    })
}

fn check_length(thread: &ConversationThread, hp: &Hyperparams) -> Result<()> {
    if thread.len() < hp.t_h {
        return Err(Error::Thread {
            thread: thread.id().into(),
            msg: format!(
                "has {} replies, forecasting needs at least t_h = {}",
                thread.len(),
                hp.t_h
            ),
        });
    }
    Ok(())
}

fn window_profile(
    thread: &ConversationThread,
    hp: &Hyperparams,
    text: &TextModels,
) -> Result<Vec<f64>> {
    let capped = thread.prefix(hp.n);
    let scores = reply_scores(&capped, hp.w, &text.scorer, &text.lexicon)?;
    Ok(windowed_profile(thread.id(), &scores, hp.delta, hp.window_mode)?.windows)
}

fn thread_features(
    thread: &ConversationThread,
    hp: &Hyperparams,
    text: &TextModels,
    node: &NodeEmbedderModel,
) -> Result<ThreadFeatures> {
    check_length(thread, hp)?;
    let observed = thread.prefix(hp.t_h);
    let sentiment = sentiment_series(&observed, &text.embedder, hp.delta)?.values;
    let texts: Vec<&[String]> = observed.nodes().map(|t| t.tokens.as_slice()).collect();
    let nodes = node.embed_many(&texts);
    Ok(ThreadFeatures {
        thread_id: thread.id().into(),
        windows: window_profile(thread, hp, text)?,
        sentiment,
        adjacency: normalized_adjacency(&thread_adjacency(&observed))?,
        nodes: Tensor::matrix(nodes.len(), NODE_DIM, nodes.concat()),
    })
}

/// Staged trainer; each method fills one slot and checks its prerequisites.
#[derive(Clone, Debug)]
pub struct PipelineBuilder {
    pub hp: Hyperparams,
    pub seed: u64,
    pub text: TextModels,
    train: Vec<ConversationThread>,
    node: Option<NodeEmbedderModel>,
    features: Option<Vec<ThreadFeatures>>,
    ae: Option<AutoencoderModel>,
    latents: Option<Vec<LatentPair>>,
    gmm: Option<FuzzyClustering>,
    tree: Option<TreeEncoderModel>,
    prior: Option<PriorModel>,
    predictor: Option<FuturePredictor>,
}

impl PipelineBuilder {
    /// Keeps the threads with at least `t_h` replies.
    pub fn new(
        corpus: &Corpus,
        hp: Hyperparams,
        lexicon: Arc<HateLexicon>,
        seed: u64,
    ) -> Result<Self> {
        hp.validate()?;
        let train: Vec<ConversationThread> = corpus
            .threads()
            .iter()
            .filter(|t| t.len() >= hp.t_h)
            .cloned()
            .collect();
        if train.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 training threads with >= {} replies, found {}",
                hp.t_h,
                train.len()
            )));
        }
        let text = TextModels::new(lexicon, &hp)?;
        Ok(Self {
            hp,
            seed,
            text,
            train,
            node: None,
            features: None,
            ae: None,
            latents: None,
            gmm: None,
            tree: None,
            prior: None,
            predictor: None,
        })
    }

    pub fn train_threads(&self) -> &[ConversationThread] {
        &self.train
    }

    fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    /// Scored tweets (root + observed replies) used to fit the node embedder.
    pub fn node_training_set(&self) -> Result<Vec<ScoredText>> {
        let mut out = Vec::new();
        for thread in &self.train {
            for t in thread.prefix(self.hp.t_h).nodes() {
                let score =
                    hate_intensity(&t.tokens, self.hp.w, &self.text.scorer, &self.text.lexicon)?;
                out.push(ScoredText {
                    tokens: t.tokens.clone(),
                    score,
                });
            }
        }
        if out.len() > self.hp.node_max_tweets {
            out.shuffle(&mut stream_rng(self.seed, "node-sample"));
            out.truncate(self.hp.node_max_tweets);
        }
        Ok(out)
    }

    pub fn train_node_embedder(&mut self) -> Result<&mut Self> {
        let data = self
            .node_training_set()
            .map_err(Error::in_stage(STAGE_NODE))?;
        let vocab = Vocab::build(data.iter().map(|d| d.tokens.as_slice()));
        let mut model = NodeEmbedderModel::new(vocab, self.hp.lambda, self.stage_seed(STAGE_NODE));
        model
            .fit(&data, self.hp.node_epochs, self.hp.node_lr, 32)
            .map_err(Error::in_stage(STAGE_NODE))?;
        info!(
            "{STAGE_NODE}: {} tweets, loss {:?}",
            data.len(),
            model.loss_history.last()
        );
        self.node = Some(model);
        self.features = None;
        Ok(self)
    }

    pub fn extract_features(&mut self) -> Result<&mut Self> {
        let node = require(&self.node, STAGE_NODE, STAGE_FEATURES)?;
        let (hp, text) = (&self.hp, &self.text);
        let feats: Result<Vec<ThreadFeatures>> =
            par_map(&self.train, |t| thread_features(t, hp, text, node))
                .into_iter()
                .collect();
        self.features = Some(feats.map_err(Error::in_stage(STAGE_FEATURES))?);
        Ok(self)
    }

    fn profile_batch(&self, feats: &[ThreadFeatures]) -> Result<ProfileBatch> {
        let profiles: Vec<_> = feats
            .iter()
            .map(|f| crate::intensity::IntensityProfile {
                thread_id: f.thread_id.clone(),
                delta: self.hp.delta,
                windows: f.windows.clone(),
                too_short: f.windows.is_empty(),
            })
            .collect();
        ProfileBatch::from_profiles(&profiles, self.hp.canvas(), self.hp.history_windows())
    }

    pub fn train_autoencoder(&mut self) -> Result<&mut Self> {
        let feats = require(&self.features, STAGE_FEATURES, STAGE_AUTOENCODER)?;
        let batch = self
            .profile_batch(feats)
            .map_err(Error::in_stage(STAGE_AUTOENCODER))?;
        let config = AeConfig::new(
            self.hp.canvas(),
            self.hp.history_windows(),
            self.hp.window_mode.upper_bound(self.hp.delta),
        );
        let mut model = AutoencoderModel::new(config, self.stage_seed(STAGE_AUTOENCODER))
            .map_err(Error::in_stage(STAGE_AUTOENCODER))?;
        model
            .fit(&batch, self.hp.ae_epochs, self.hp.lr)
            .map_err(Error::in_stage(STAGE_AUTOENCODER))?;
        info!(
            "{STAGE_AUTOENCODER}: loss {:?} -> {:?}, rmse {:.4}",
            model.loss_history.first(),
            model.loss_history.last(),
            model.masked_rmse(&batch).unwrap_or(f64::NAN)
        );
        self.latents = Some(
            model
                .encode_batch(&batch)
                .map_err(Error::in_stage(STAGE_AUTOENCODER))?,
        );
        self.ae = Some(model);
        Ok(self)
    }

    pub fn fit_clustering(&mut self) -> Result<&mut Self> {
        let latents = require(&self.latents, STAGE_AUTOENCODER, STAGE_CLUSTERING)?;
        let joint: Vec<Vec<f64>> = latents.iter().map(LatentPair::joint).collect();
        let gmm = fit_gmm(
            &joint,
            self.hp.j,
            self.stage_seed(STAGE_CLUSTERING),
            self.hp.gmm_tol,
            self.hp.gmm_max_iter,
        )
        .map_err(Error::in_stage(STAGE_CLUSTERING))?;
        info!(
            "{STAGE_CLUSTERING}: j = {}, log-likelihood {:?}, reseeds {}",
            self.hp.j,
            gmm.final_log_likelihood(),
            gmm.reseeds
        );
        self.gmm = Some(gmm);
        self.prior = None;
        self.predictor = None;
        Ok(self)
    }

    fn prior_inputs(&self, feats: &ThreadFeatures, latent: &LatentPair) -> (Vec<f64>, Vec<f64>) {
        let sentiment = if self.hp.use_sentiment {
            feats.sentiment.clone()
        } else {
            vec![0.0; feats.sentiment.len()]
        };
        (latent.history.clone(), sentiment)
    }

    /// Fits the prior model against mixture memberships of the training
    /// latents, updating the tree encoder too when `fine_tune` is set.
    pub fn train_prior(&mut self) -> Result<&mut Self> {
        let feats = require(&self.features, STAGE_FEATURES, STAGE_PRIOR)?;
        let latents = require(&self.latents, STAGE_AUTOENCODER, STAGE_PRIOR)?;
        let gmm = require(&self.gmm, STAGE_CLUSTERING, STAGE_PRIOR)?;
        let targets: Vec<Vec<f64>> = latents
            .iter()
            .map(|l| gmm.membership(&l.joint()))
            .collect::<Result<_>>()
            .map_err(Error::in_stage(STAGE_PRIOR))?;
        let mut tree = TreeEncoderModel::new(self.stage_seed("tree-encoder"));
        let mut prior = PriorModel::new(
            self.hp.history_windows(),
            self.hp.j,
            self.stage_seed(STAGE_PRIOR),
        );
        let inputs: Vec<(Vec<f64>, Vec<f64>)> = feats
            .iter()
            .zip(latents)
            .map(|(f, l)| self.prior_inputs(f, l))
            .collect();

        let mut rng = stream_rng(self.seed, "prior-shuffle");
        let mut prior_adam = AdamState::new(prior.params().tensors());
        let mut tree_adam = AdamState::new(tree.params().tensors());
        let order: Vec<usize> = (0..feats.len()).collect();
        for _ in 0..self.hp.prior_epochs {
            let mut shuffled = order.clone();
            shuffled.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in shuffled.chunks(self.hp.batch_size) {
                let g = Graph::new();
                let pp = prior.params().bind(&g);
                let tp = tree.params().bind(&g);
                let b = chunk.len();
                let tree_rows = if self.hp.use_tree {
                    let rows: Vec<_> = chunk
                        .iter()
                        .map(|&i| {
                            tree.forward(
                                &g,
                                &tp,
                                g.leaf(feats[i].adjacency.clone()),
                                g.leaf(feats[i].nodes.clone()),
                            )
                        })
                        .collect();
                    g.stack_rows(&rows)
                } else {
                    g.leaf(Tensor::zeros(&[b, TREE_DIM]))
                };
                let xh = g.leaf(Tensor::matrix(
                    b,
                    HISTORY_DIM,
                    chunk.iter().flat_map(|&i| inputs[i].0.clone()).collect(),
                ));
                let sl = prior.sentiment_len;
                let s = g.leaf(Tensor::matrix(
                    b,
                    sl,
                    chunk.iter().flat_map(|&i| inputs[i].1.clone()).collect(),
                ));
                let logp = g.log_softmax(prior.logits(&g, &pp, g.concat(&[xh, s, tree_rows])));
                let target = g.leaf(Tensor::matrix(
                    b,
                    self.hp.j,
                    chunk.iter().flat_map(|&i| targets[i].clone()).collect(),
                ));
                let loss = g.scale(g.sum(g.mul(logp, target)), -1.0 / b as f64);
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Stage {
                        stage: STAGE_PRIOR,
                        cause: "loss became non-finite".into(),
                    });
                }
                let vars: Vec<_> = pp.vars().iter().chain(tp.vars()).copied().collect();
                let mut grads = g.grad(loss, &vars)?;
                let tree_grads = grads.split_off(pp.vars().len());
                adam_step(
                    prior.params_mut().tensors_mut(),
                    &grads,
                    &mut prior_adam,
                    self.hp.lr,
                )?;
                if self.hp.fine_tune && self.hp.use_tree {
                    adam_step(
                        tree.params_mut().tensors_mut(),
                        &tree_grads,
                        &mut tree_adam,
                        self.hp.lr,
                    )?;
                }
                total += value * b as f64;
            }
            prior.loss_history.push(total / feats.len() as f64);
        }
        info!(
            "{STAGE_PRIOR}: loss {:?} -> {:?}",
            prior.loss_history.first(),
            prior.loss_history.last()
        );
        self.tree = Some(tree);
        self.prior = Some(prior);
        self.predictor = None;
        Ok(self)
    }

    pub fn train_future_predictor(&mut self) -> Result<&mut Self> {
        let feats = require(&self.features, STAGE_FEATURES, STAGE_PREDICTOR)?;
        let latents = require(&self.latents, STAGE_AUTOENCODER, STAGE_PREDICTOR)?;
        let gmm = require(&self.gmm, STAGE_CLUSTERING, STAGE_PREDICTOR)?;
        let prior = require(&self.prior, STAGE_PRIOR, STAGE_PREDICTOR)?;
        let tree = require(&self.tree, STAGE_PRIOR, STAGE_PREDICTOR)?;
        let centres: Vec<Vec<f64>> = feats
            .iter()
            .zip(latents)
            .map(|(f, l)| {
                let (xh, s) = self.prior_inputs(f, l);
                let t = tree_vector(&self.hp, tree, f);
                gmm.prior_knowledge(&prior.predict(&xh, &s, &t)?)
            })
            .collect::<Result<_>>()
            .map_err(Error::in_stage(STAGE_PREDICTOR))?;

        let mut model = FuturePredictor::new(self.stage_seed(STAGE_PREDICTOR));
        let mut adam = AdamState::new(model.params().tensors());
        let mut rng = stream_rng(self.seed, "predictor-shuffle");
        let order: Vec<usize> = (0..feats.len()).collect();
        for _ in 0..self.hp.predictor_epochs {
            let mut shuffled = order.clone();
            shuffled.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in shuffled.chunks(self.hp.batch_size) {
                let b = chunk.len();
                let g = Graph::new();
                let p = model.params().bind(&g);
                let xh = g.leaf(Tensor::matrix(
                    b,
                    HISTORY_DIM,
                    chunk
                        .iter()
                        .flat_map(|&i| latents[i].history.clone())
                        .collect(),
                ));
                let xc = g.leaf(Tensor::matrix(
                    b,
                    HISTORY_DIM + FUTURE_DIM,
                    chunk.iter().flat_map(|&i| centres[i].clone()).collect(),
                ));
                let target = g.leaf(Tensor::matrix(
                    b,
                    FUTURE_DIM,
                    chunk
                        .iter()
                        .flat_map(|&i| latents[i].future.clone())
                        .collect(),
                ));
                let diff = g.sub(model.forward(&g, &p, xh, xc), target);
                let loss = g.mean(g.mul(diff, diff));
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Stage {
                        stage: STAGE_PREDICTOR,
                        cause: "loss became non-finite".into(),
                    });
                }
                let grads = g.grad(loss, p.vars())?;
                adam_step(
                    model.params_mut().tensors_mut(),
                    &grads,
                    &mut adam,
                    self.hp.lr,
                )?;
                total += value * b as f64;
            }
            model.loss_history.push(total / feats.len() as f64);
        }
        info!(
            "{STAGE_PREDICTOR}: loss {:?} -> {:?}",
            model.loss_history.first(),
            model.loss_history.last()
        );
        self.predictor = Some(model);
        Ok(self)
    }

    /// Training latents (after the autoencoder stage).
    pub fn latents(&self) -> Option<&[LatentPair]> {
        self.latents.as_deref()
    }

    pub fn features(&self) -> Option<&[ThreadFeatures]> {
        self.features.as_deref()
    }

    /// Re-targets the clustering and downstream stages at a new `j`.
    pub fn with_clusters(&self, j: usize) -> Result<Self> {
        let mut next = self.clone();
        next.hp.j = j;
        next.hp.validate()?;
        next.gmm = None;
        next.prior = None;
        next.tree = None;
        next.predictor = None;
        Ok(next)
    }

    /// Runs every stage that has not run yet, then assembles the model.
    pub fn run_all(&mut self) -> Result<PipelineModel> {
        if self.node.is_none() {
            self.train_node_embedder()?;
        }
        if self.features.is_none() {
            self.extract_features()?;
        }
        if self.ae.is_none() {
            self.train_autoencoder()?;
        }
        if self.gmm.is_none() {
            self.fit_clustering()?;
        }
        if self.prior.is_none() {
            self.train_prior()?;
        }
        if self.predictor.is_none() {
            self.train_future_predictor()?;
        }
        self.finish()
    }

    pub fn finish(&self) -> Result<PipelineModel> {
        const DONE: &str = "assembly";
        Ok(PipelineModel {
            hp: self.hp.clone(),
            seed: self.seed,
            text: self.text.clone(),
            node: require(&self.node, STAGE_NODE, DONE)?.clone(),
            ae: require(&self.ae, STAGE_AUTOENCODER, DONE)?.clone(),
            gmm: require(&self.gmm, STAGE_CLUSTERING, DONE)?.clone(),
            tree: require(&self.tree, STAGE_PRIOR, DONE)?.clone(),
            prior: require(&self.prior, STAGE_PRIOR, DONE)?.clone(),
            predictor: require(&self.predictor, STAGE_PREDICTOR, DONE)?.clone(),
        })
    }
}

fn tree_vector(hp: &Hyperparams, tree: &TreeEncoderModel, f: &ThreadFeatures) -> Vec<f64> {
    if hp.use_tree {
        tree.embed_normalized(&f.adjacency, &f.nodes)
    } else {
        vec![0.0; TREE_DIM]
    }
}

/// Trains every stage on `corpus` (all threads are training threads).
pub fn train_pipeline(
    corpus: &Corpus,
    hp: Hyperparams,
    lexicon: Arc<HateLexicon>,
    seed: u64,
) -> Result<PipelineModel> {
    PipelineBuilder::new(corpus, hp, lexicon, seed)?.run_all()
}

/// Forecast for one thread.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub thread_id: String,
    /// Observed history windows.
    pub history: Vec<f64>,
    /// Predicted future windows (`n − t_h` values).
    pub predicted: Vec<f64>,
    /// Actual future windows available in the thread (may be shorter).
    pub actual: Vec<f64>,
    pub membership: Vec<f64>,
    /// Decoder output over the history segment (diagnostic only).
    pub decoded_history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PipelineModel {
    pub hp: Hyperparams,
    pub seed: u64,
    pub text: TextModels,
    pub node: NodeEmbedderModel,
    pub tree: TreeEncoderModel,
    pub ae: AutoencoderModel,
    pub gmm: FuzzyClustering,
    pub prior: PriorModel,
    pub predictor: FuturePredictor,
}

impl PipelineModel {
    pub fn features(&self, thread: &ConversationThread) -> Result<ThreadFeatures> {
        thread_features(thread, &self.hp, &self.text, &self.node)
    }

    /// Window profile of the first `n` replies of `thread`.
    pub fn windows(&self, thread: &ConversationThread) -> Result<Vec<f64>> {
        window_profile(thread, &self.hp, &self.text)
    }

    pub fn history_latent(&self, f: &ThreadFeatures) -> Result<Vec<f64>> {
        let h = self.hp.history_windows();
        self.ae.encode_history(&f.windows[..h.min(f.windows.len())])
    }

    /// Latent pair of a thread whose future is known (for diagnostics).
    pub fn true_latents(&self, f: &ThreadFeatures) -> Result<LatentPair> {
        let h = self.hp.history_windows();
        Ok(LatentPair {
            thread_id: f.thread_id.clone(),
            history: self.history_latent(f)?,
            future: self
                .ae
                .encode_future(&f.windows[h.min(f.windows.len())..])?,
        })
    }

    pub fn tree_vector(&self, f: &ThreadFeatures) -> Vec<f64> {
        tree_vector(&self.hp, &self.tree, f)
    }

    pub fn predict_membership(
        &self,
        x_h: &[f64],
        sentiment: &[f64],
        tree: &[f64],
    ) -> Result<Vec<f64>> {
        let zeros;
        let sentiment = if self.hp.use_sentiment {
            sentiment
        } else {
            zeros = vec![0.0; sentiment.len()];
            &zeros
        };
        self.prior.predict(x_h, sentiment, tree)
    }

    pub fn predict_future_latent(&self, x_h: &[f64], membership: &[f64]) -> Result<Vec<f64>> {
        let centre = self.gmm.prior_knowledge(membership)?;
        self.predictor.predict(x_h, &centre)
    }

    pub fn forecast_features(&self, f: &ThreadFeatures) -> Result<Forecast> {
        let h = self.hp.history_windows();
        let x_h = self.history_latent(f)?;
        let membership = self.predict_membership(&x_h, &f.sentiment, &self.tree_vector(f))?;
        let x_f = self.predict_future_latent(&x_h, &membership)?;
        let decoded = self.ae.decode(&[x_h, x_f].concat())?;
        let canvas = self.hp.canvas();
        let real = f.windows.len().min(canvas);
        Ok(Forecast {
            thread_id: f.thread_id.clone(),
            history: f.windows[..h.min(real)].to_vec(),
            predicted: decoded[h..].to_vec(),
            actual: if real > h {
                f.windows[h..real].to_vec()
            } else {
                Vec::new()
            },
            membership,
            decoded_history: decoded[..h].to_vec(),
        })
    }

    pub fn forecast_profile(&self, thread: &ConversationThread) -> Result<Forecast> {
        self.forecast_features(&self.features(thread)?)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.put_meta("pipeline.version", PIPELINE_VERSION);
        c.put_meta("pipeline.seed", self.seed);
        c.put_meta("text.lexicon", self.text.lexicon.to_tsv());
        c.put_meta("text.sentiment_seed", self.text.embedder.seed());
        self.hp.save("hp", &mut c);
        self.node.save("node", &mut c);
        self.tree.save("tree", &mut c);
        self.ae.save("ae", &mut c);
        self.gmm.save("gmm", &mut c);
        self.prior.save("prior", &mut c);
        self.predictor.save("predictor", &mut c);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let version: u32 = c.meta_parse("pipeline.version")?;
        if version > PIPELINE_VERSION {
            return Err(Error::Checkpoint(format!(
                "pipeline version {version} is newer than supported"
            )));
        }
        let hp = Hyperparams::load("hp", c)?;
        let lexicon = Arc::new(HateLexicon::read(c.meta("text.lexicon")?.as_bytes())?);
        let mut text = TextModels::new(lexicon, &hp)?;
        text.embedder = reference_embedder(hp.sentiment_dim, c.meta_parse("text.sentiment_seed")?)?;
        let model = Self {
            seed: c.meta_parse("pipeline.seed")?,
            node: NodeEmbedderModel::load("node", c)?,
            tree: TreeEncoderModel::load("tree", c)?,
            ae: AutoencoderModel::load("ae", c)?,
            gmm: FuzzyClustering::load("gmm", c)?,
            prior: PriorModel::load("prior", c)?,
            predictor: FuturePredictor::load("predictor", c)?,
            text,
            hp,
        };
        model.check_consistency()?;
        Ok(model)
    }

    fn check_consistency(&self) -> Result<()> {
        let hp = &self.hp;
        let ok = self.ae.config.canvas == hp.canvas()
            && self.ae.config.h_len == hp.history_windows()
            && self.gmm.clusters() == hp.j
            && self.gmm.dim() == HISTORY_DIM + FUTURE_DIM
            && self.prior.clusters == hp.j
            && self.prior.sentiment_len == hp.history_windows();
        if ok {
            Ok(())
        } else {
            Err(Error::Checkpoint(
                "sub-model shapes disagree with the stored hyperparameters".into(),
            ))
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
