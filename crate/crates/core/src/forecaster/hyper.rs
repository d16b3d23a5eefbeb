use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::intensity::{WindowMode, SCORER_NAMES};

/// Global and per-stage settings of a pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    /// Window size δ.
    pub delta: usize,
    /// Classifier weight in the per-reply intensity blend.
    pub w: f64,
    /// Observed replies.
    pub t_h: usize,
    /// Forecast horizon in windows; always `n - t_h`.
    pub t_f: usize,
    /// Replies per thread considered (longer threads are truncated).
    pub n: usize,
    /// Mixture components.
    pub j: usize,
    pub lr: f64,
    /// Train fraction of the train/test split.
    pub split: f64,
    pub window_mode: WindowMode,
    pub scorer: String,
    pub sentiment_dim: usize,
    pub node_epochs: usize,
    pub node_max_tweets: usize,
    pub node_lr: f64,
    pub lambda: f64,
    pub ae_epochs: usize,
    pub prior_epochs: usize,
    pub predictor_epochs: usize,
    pub batch_size: usize,
    pub gmm_tol: f64,
    pub gmm_max_iter: usize,
    /// Feed the tree embedding to the prior model.
    pub use_tree: bool,
    /// Feed the sentiment history to the prior model.
    pub use_sentiment: bool,
    /// Update tree-encoder weights while training the prior model.
    pub fine_tune: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            delta: 10,
            w: 0.6,
            t_h: 25,
            t_f: 275,
            n: 300,
            j: 15,
            lr: 0.001,
            split: 0.8,
            window_mode: WindowMode::Sum,
            scorer: "calibrated".into(),
            sentiment_dim: 32,
            node_epochs: 8,
            node_max_tweets: 3000,
            node_lr: 0.003,
            lambda: 1e-6,
            ae_epochs: 200,
            prior_epochs: 200,
            predictor_epochs: 300,
            batch_size: 16,
            gmm_tol: 1e-6,
            gmm_max_iter: 200,
            use_tree: true,
            use_sentiment: true,
            fine_tune: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

impl Hyperparams {
    /// History windows (`t_h − δ`).
    pub fn history_windows(&self) -> usize {
        self.t_h - self.delta
    }

    /// Window canvas length (`n − δ`).
    pub fn canvas(&self) -> usize {
        self.n - self.delta
    }

    /// Forecast windows per thread (`n − t_h`).
    pub fn forecast_windows(&self) -> usize {
        self.n - self.t_h
    }

    /// Applies one `key=value` setting. Changing `n` or `t_h` keeps `t_f`
    /// consistent unless `t_f` is set explicitly afterwards.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "delta" => self.delta = parse(key, value)?,
            "w" => self.w = parse(key, value)?,
            "t_h" => {
                self.t_h = parse(key, value)?;
                self.t_f = self.n.saturating_sub(self.t_h);
            }
            "t_f" => self.t_f = parse(key, value)?,
            "n" => {
                self.n = parse(key, value)?;
                self.t_f = self.n.saturating_sub(self.t_h);
            }
            "j" => self.j = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "split" => self.split = parse(key, value)?,
            "window_mode" => self.window_mode = WindowMode::parse(value.trim())?,
            "scorer" => self.scorer = value.trim().to_string(),
            "sentiment_dim" => self.sentiment_dim = parse(key, value)?,
            "node_epochs" => self.node_epochs = parse(key, value)?,
            "node_max_tweets" => self.node_max_tweets = parse(key, value)?,
            "node_lr" => self.node_lr = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "ae_epochs" => self.ae_epochs = parse(key, value)?,
            "prior_epochs" => self.prior_epochs = parse(key, value)?,
            "predictor_epochs" => self.predictor_epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "gmm_tol" => self.gmm_tol = parse(key, value)?,
            "gmm_max_iter" => self.gmm_max_iter = parse(key, value)?,
            "use_tree" => self.use_tree = parse(key, value)?,
            "use_sentiment" => self.use_sentiment = parse(key, value)?,
            "fine_tune" => self.fine_tune = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown hyperparameter '{other}'"))),
        }
        Ok(())
    }

    /// Every setting as `(key, value)` text, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("delta", self.delta.to_string()),
            ("w", self.w.to_string()),
            ("t_h", self.t_h.to_string()),
            ("t_f", self.t_f.to_string()),
            ("n", self.n.to_string()),
            ("j", self.j.to_string()),
            ("lr", self.lr.to_string()),
            ("split", self.split.to_string()),
            ("window_mode", self.window_mode.as_str().to_string()),
            ("scorer", self.scorer.clone()),
            ("sentiment_dim", self.sentiment_dim.to_string()),
            ("node_epochs", self.node_epochs.to_string()),
            ("node_max_tweets", self.node_max_tweets.to_string()),
            ("node_lr", self.node_lr.to_string()),
            ("lambda", self.lambda.to_string()),
            ("ae_epochs", self.ae_epochs.to_string()),
            ("prior_epochs", self.prior_epochs.to_string()),
            ("predictor_epochs", self.predictor_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("gmm_tol", self.gmm_tol.to_string()),
            ("gmm_max_iter", self.gmm_max_iter.to_string()),
            ("use_tree", self.use_tree.to_string()),
            ("use_sentiment", self.use_sentiment.to_string()),
            ("fine_tune", self.fine_tune.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.delta == 0 || self.delta >= self.n {
            return bad(format!(
                "delta must lie in 1..n (n = {}), got {}",
                self.n, self.delta
            ));
        }
        if self.t_h <= self.delta || self.t_h >= self.n {
            return bad(format!(
                "t_h must lie in (delta, n) = ({}, {}), got {}",
                self.delta, self.n, self.t_h
            ));
        }
        if self.t_f != self.n - self.t_h {
            return bad(format!(
                "t_f must equal n - t_h = {}, got {}",
                self.n - self.t_h,
                self.t_f
            ));
        }
        if self.j == 0 {
            return bad("j must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.w) {
            return bad(format!("w must lie in [0, 1], got {}", self.w));
        }
        if !(self.lr > 0.0 && self.node_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad(format!("split must lie in (0, 1), got {}", self.split));
        }
        if !SCORER_NAMES.contains(&self.scorer.as_str()) {
            return bad(format!(
                "unknown scorer '{}' (known: {SCORER_NAMES:?})",
                self.scorer
            ));
        }
        if self.sentiment_dim < 2 || self.batch_size == 0 {
            return bad("sentiment_dim must be >= 2 and batch_size >= 1".into());
        }
        if self.lambda < 0.0 || self.gmm_tol < 0.0 {
            return bad("lambda and gmm_tol must be non-negative".into());
        }
        Ok(())
    }

    pub fn save(&self, prefix: &str, out: &mut Container) {
        for (k, v) in self.entries() {
            out.put_meta(&format!("{prefix}.{k}"), v);
        }
    }

    pub fn load(prefix: &str, src: &Container) -> Result<Self> {
        let mut hp = Self::default();
        for (k, _) in Self::default().entries() {
            let v = src.meta(&format!("{prefix}.{k}"))?;
            hp.set(k, v).map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        hp.validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(hp)
    }
}
