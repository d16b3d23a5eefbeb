//! Per-reply hate scores, window intensity profiles, and sentiment series.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{contract, Error, Result};
use crate::numcore::fnv1a;
use crate::threadstore::ConversationThread;

/// Word → score table with scores in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HateLexicon {
    scores: HashMap<String, f64>,
}

impl HateLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, score: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&score) {
            return Err(contract(format!(
                "lexicon score for '{word}' outside [0, 1]: {score}"
            )));
        }
        if self.scores.insert(word.to_lowercase(), score).is_some() {
            log::warn!("duplicate lexicon word '{word}', keeping the last score");
        }
        Ok(())
    }

    /// Absent words score 0.
    pub fn score(&self, word: &str) -> f64 {
        self.scores.get(word).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.scores.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Entries sorted by word.
    pub fn entries(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<_> = self.scores.iter().map(|(k, &s)| (k.as_str(), s)).collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    /// Tab-separated `word<TAB>score` lines.
    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut lex = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (word, score) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected word<TAB>score".into(),
            })?;
            let score: f64 = score.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad score '{score}'"),
            })?;
            lex.insert(word.trim(), score).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn to_tsv(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(w, s)| format!("{w}\t{s}\n"))
            .collect()
    }
}

/// Mean lexicon score over all tokens; empty text scores 0.
pub fn lexicon_score(tokens: &[String], lexicon: &HateLexicon) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    tokens.iter().map(|t| lexicon.score(t)).sum::<f64>() / tokens.len() as f64
}

/// Probability that a text is hateful.
pub trait HateScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, tokens: &[String]) -> f64;
}

/// Fixed-dimension text embedding.
pub trait TextEmbedder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, tokens: &[String]) -> Vec<f64>;
}

/// Logistic curve rescaled so that 0 → 0, 0.5 → 0.5 and 1 → 1.
pub fn logistic_calibration(x: f64, slope: f64) -> f64 {
    if slope <= 0.0 {
        return x.clamp(0.0, 1.0);
    }
    let s = |v: f64| crate::numcore::sigmoid(slope * (v - 0.5));
    ((s(x) - s(0.0)) / (s(1.0) - s(0.0))).clamp(0.0, 1.0)
}

/// Inverse of [`logistic_calibration`] on `[0, 1]`.
pub fn logistic_calibration_inverse(y: f64, slope: f64) -> f64 {
    if slope <= 0.0 {
        return y.clamp(0.0, 1.0);
    }
    let s = |v: f64| crate::numcore::sigmoid(slope * (v - 0.5));
    let p = y.clamp(0.0, 1.0) * (s(1.0) - s(0.0)) + s(0.0);
    (0.5 + (p / (1.0 - p)).ln() / slope).clamp(0.0, 1.0)
}

/// Deterministic classifier stand-in: calibrated lexicon mean.
#[derive(Clone, Debug)]
pub struct ReferenceScorer {
    name: String,
    lexicon: Arc<HateLexicon>,
    slope: f64,
}

/// Scorer names accepted by [`reference_scorer_named`].
pub const SCORER_NAMES: [&str; 3] = ["calibrated", "steep", "linear"];

pub const DEFAULT_CALIBRATION_SLOPE: f64 = 4.0;

impl ReferenceScorer {
    pub fn slope(&self) -> f64 {
        self.slope
    }
}

impl HateScorer for ReferenceScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, tokens: &[String]) -> f64 {
        if tokens.is_empty() {
            return 0.0;
        }
        logistic_calibration(lexicon_score(tokens, &self.lexicon), self.slope)
    }
}

/// The default reference scorer.
pub fn reference_scorer(lexicon: Arc<HateLexicon>) -> ReferenceScorer {
    ReferenceScorer {
        name: "calibrated".into(),
        lexicon,
        slope: DEFAULT_CALIBRATION_SLOPE,
    }
}

/// One of the interchangeable reference scorers, by name.
pub fn reference_scorer_named(name: &str, lexicon: Arc<HateLexicon>) -> Result<ReferenceScorer> {
    let slope = match name {
        "calibrated" => DEFAULT_CALIBRATION_SLOPE,
        "steep" => 10.0,
        "linear" => 0.0,
        other => {
            return Err(Error::Config(format!(
                "unknown scorer '{other}' (known: {SCORER_NAMES:?})"
            )))
        }
    };
    Ok(ReferenceScorer {
        name: name.into(),
        lexicon,
        slope,
    })
}

/// Hashes each token to a seeded unit vector and averages them.
#[derive(Clone, Debug)]
pub struct ReferenceEmbedder {
    dim: usize,
    seed: u64,
}

pub fn reference_embedder(dim: usize, seed: u64) -> Result<ReferenceEmbedder> {
    if dim < 2 {
        return Err(contract(format!(
            "embedder dimension must be >= 2, got {dim}"
        )));
    }
    Ok(ReferenceEmbedder { dim, seed })
}

impl ReferenceEmbedder {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(token.as_bytes()));
        let mut v: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl TextEmbedder for ReferenceEmbedder {
    fn name(&self) -> &str {
        "hashed-mean"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if tokens.is_empty() {
            return out;
        }
        for t in tokens {
            for (o, x) in out.iter_mut().zip(self.token_vector(t)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= tokens.len() as f64);
        out
    }
}

/// `w * classifier + (1 - w) * lexicon`.
pub fn blend(classifier: f64, lexicon: f64, w: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&w) {
        return Err(contract(format!(
            "intensity weight w must lie in [0, 1], got {w}"
        )));
    }
    Ok(w * classifier + (1.0 - w) * lexicon)
}

/// Hate intensity of one text.
pub fn hate_intensity(
    tokens: &[String],
    w: f64,
    scorer: &dyn HateScorer,
    lexicon: &HateLexicon,
) -> Result<f64> {
    blend(scorer.score(tokens), lexicon_score(tokens, lexicon), w)
}

/// Per-reply intensities of a thread (root excluded).
pub fn reply_scores(
    thread: &ConversationThread,
    w: f64,
    scorer: &dyn HateScorer,
    lexicon: &HateLexicon,
) -> Result<Vec<f64>> {
    thread
        .replies()
        .iter()
        .map(|r| hate_intensity(&r.tokens, w, scorer, lexicon))
        .collect()
}

/// How replies inside a window are aggregated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WindowMode {
    /// Sum of `δ` consecutive scores, range `[0, δ]`.
    #[default]
    Sum,
    /// Mean of `δ` consecutive scores, range `[0, 1]`.
    Mean,
}

impl WindowMode {
    pub fn upper_bound(self, delta: usize) -> f64 {
        match self {
            WindowMode::Sum => delta as f64,
            WindowMode::Mean => 1.0,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            other => Err(Error::Config(format!(
                "unknown window mode '{other}' (sum|mean)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WindowMode::Sum => "sum",
            WindowMode::Mean => "mean",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntensityProfile {
    pub thread_id: String,
    pub delta: usize,
    /// Window `k` aggregates replies `k..k+δ-1`, for `k = 1..q-δ`.
    pub windows: Vec<f64>,
    /// Set when `q <= δ`, i.e. no window fits.
    pub too_short: bool,
}

impl IntensityProfile {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

fn window_count(q: usize, delta: usize) -> usize {
    q.saturating_sub(delta)
}

/// Sliding-window aggregation of per-reply scores.
pub fn windowed_profile(
    thread_id: &str,
    scores: &[f64],
    delta: usize,
    mode: WindowMode,
) -> Result<IntensityProfile> {
    if delta == 0 {
        return Err(contract("window size must be >= 1"));
    }
    let count = window_count(scores.len(), delta);
    let mut windows = Vec::with_capacity(count);
    for k in 0..count {
        let sum: f64 = scores[k..k + delta].iter().sum();
        windows.push(match mode {
            WindowMode::Sum => sum,
            WindowMode::Mean => sum / delta as f64,
        });
    }
    Ok(IntensityProfile {
        thread_id: thread_id.into(),
        delta,
        windows,
        too_short: count == 0,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentimentSeries {
    pub thread_id: String,
    /// Window means of reply-to-root cosine similarity, aligned with the profile.
    pub values: Vec<f64>,
    pub too_short: bool,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Rolling mean of reply/root embedding similarity.
pub fn sentiment_series(
    thread: &ConversationThread,
    embedder: &dyn TextEmbedder,
    delta: usize,
) -> Result<SentimentSeries> {
    if delta == 0 {
        return Err(contract("window size must be >= 1"));
    }
    let count = window_count(thread.len(), delta);
    if count == 0 {
        return Ok(SentimentSeries {
            thread_id: thread.id().into(),
            values: Vec::new(),
            too_short: true,
        });
    }
    let root = embedder.embed(&thread.root().tokens);
    let sims: Vec<f64> = thread.replies()[..count + delta - 1]
        .iter()
        .map(|r| cosine(&embedder.embed(&r.tokens), &root))
        .collect();
    let values = (0..count)
        .map(|k| sims[k..k + delta].iter().sum::<f64>() / delta as f64)
        .collect();
    Ok(SentimentSeries {
        thread_id: thread.id().into(),
        values,
        too_short: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn lexicon_mean_examples() {
        let mut lex = HateLexicon::new();
        lex.insert("bad", 0.8).unwrap();
        lex.insert("worst", 1.0).unwrap();
        assert_eq!(lexicon_score(&[], &lex), 0.0);
        assert!((lexicon_score(&toks("bad fine"), &lex) - 0.4).abs() < 1e-15);
        assert_eq!(lexicon_score(&toks("worst worst"), &lex), 1.0);
        assert!(lex.insert("x", 1.5).is_err());
    }

    #[test]
    fn lexicon_tsv_last_duplicate_wins() {
        let lex = HateLexicon::read("a\t0.2\nb\t0.5\na\t0.9\n".as_bytes()).unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.score("a"), 0.9);
        assert!(HateLexicon::read("a 0.2\n".as_bytes()).is_err());
    }

    #[test]
    fn blend_examples() {
        assert!((blend(0.5, 0.3, 0.6).unwrap() - 0.42).abs() < 1e-12);
        assert_eq!(blend(0.7, 0.1, 1.0).unwrap(), 0.7);
        assert_eq!(blend(0.7, 0.1, 0.0).unwrap(), 0.1);
        assert!(blend(0.5, 0.5, 1.2).is_err());
    }

    #[test]
    fn calibration_inverts() {
        for slope in [0.0, 4.0, 10.0] {
            for i in 0..=20 {
                let y = i as f64 / 20.0;
                let x = logistic_calibration_inverse(y, slope);
                assert!((logistic_calibration(x, slope) - y).abs() < 1e-9);
            }
        }
        assert_eq!(logistic_calibration(0.0, 4.0), 0.0);
        assert!((logistic_calibration(1.0, 4.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn profile_examples() {
        let p = windowed_profile("t", &[0.1; 30], 10, WindowMode::Sum).unwrap();
        assert_eq!(p.len(), 20);
        assert!(p.windows.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let z = windowed_profile("t", &[0.0; 15], 5, WindowMode::Sum).unwrap();
        assert!(z.windows.iter().all(|&v| v == 0.0));
        let short = windowed_profile("t", &[0.5; 10], 10, WindowMode::Sum).unwrap();
        assert!(short.is_empty() && short.too_short);
        let mean = windowed_profile("t", &[0.1; 30], 10, WindowMode::Mean).unwrap();
        assert!(mean.windows.iter().all(|v| (v - 0.1).abs() < 1e-12));
    }

    #[test]
    fn scorer_and_embedder_basics() {
        let lex = Arc::new(HateLexicon::new());
        assert_eq!(reference_scorer(lex.clone()).score(&[]), 0.0);
        assert!(reference_scorer_named("nope", lex).is_err());
        let e = reference_embedder(16, 3).unwrap();
        assert_eq!(e.embed(&toks("a b c")), e.embed(&toks("a b c")));
        assert!(e.embed(&[]).iter().all(|&v| v == 0.0));
        assert!(reference_embedder(1, 0).is_err());
    }
}
