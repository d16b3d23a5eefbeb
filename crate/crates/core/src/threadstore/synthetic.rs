//! Synthetic corpora with known per-reply hate scores.
//!
//! Every reply's text is assembled from a synthetic lexicon so that the
//! reference scorer returns (within lexicon granularity) the target score
//! drawn from the thread's archetype template.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ConversationThread, Corpus, Provenance, ThreadTruth, Tweet};
use crate::error::{Error, Result};
use crate::intensity::{logistic_calibration_inverse, HateLexicon, DEFAULT_CALIBRATION_SLOPE};
use crate::numcore::stream_rng;

const HATE_WORDS: usize = 24;
const GRADE_STEPS: usize = 100;

/// Template shape over the reply index.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    /// Linear ramp from `from` to `to` (falling when `to < from`).
    Ramp {
        from: f64,
        to: f64,
    },
    /// `base` with a Gaussian bump of height `peak - base` at fraction `center`.
    Spike {
        base: f64,
        peak: f64,
        center: f64,
        width: f64,
    },
    Flat {
        level: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archetype {
    pub name: String,
    pub shape: Shape,
    /// Probability that a filler slot in a reply copies a root topic word.
    pub echo: f64,
}

impl Archetype {
    pub fn rising(from: f64, to: f64) -> Self {
        Self {
            name: "rising".into(),
            shape: Shape::Ramp { from, to },
            echo: 0.5,
        }
    }

    pub fn falling(from: f64, to: f64) -> Self {
        Self {
            name: "falling".into(),
            shape: Shape::Ramp { from, to },
            echo: 0.1,
        }
    }

    pub fn mid_spike(base: f64, peak: f64) -> Self {
        Self {
            name: "mid-spike".into(),
            shape: Shape::Spike {
                base,
                peak,
                center: 0.5,
                width: 0.08,
            },
            echo: 0.3,
        }
    }

    pub fn flat(level: f64) -> Self {
        Self {
            name: "flat".into(),
            shape: Shape::Flat { level },
            echo: 0.2,
        }
    }

    /// Template value at reply `i` (0-based) of an `n`-reply canvas.
    pub fn template(&self, i: usize, n: usize) -> f64 {
        shape_value(&self.shape, i, n)
    }

    fn jittered(&self, jitter: f64, rng: &mut ChaCha8Rng) -> Shape {
        let mut j = |v: f64| {
            if jitter > 0.0 {
                v + rng.gen_range(-jitter..=jitter)
            } else {
                v
            }
        };
        match self.shape {
            Shape::Ramp { from, to } => Shape::Ramp {
                from: j(from),
                to: j(to),
            },
            Shape::Spike {
                base,
                peak,
                center,
                width,
            } => Shape::Spike {
                base: j(base),
                peak: j(peak),
                center: j(center),
                width,
            },
            Shape::Flat { level } => Shape::Flat { level: j(level) },
        }
    }
}

fn shape_value(shape: &Shape, i: usize, n: usize) -> f64 {
    let u = if n > 1 {
        i as f64 / (n - 1) as f64
    } else {
        0.0
    };
    let v = match *shape {
        Shape::Ramp { from, to } => from + (to - from) * u,
        Shape::Spike {
            base,
            peak,
            center,
            width,
        } => {
            let z = (u - center) / width;
            base + (peak - base) * (-0.5 * z * z).exp()
        }
        Shape::Flat { level } => level,
    };
    v.clamp(0.0, 1.0)
}

/// Reply-tree shape: each reply answers the root with `root_prob`,
/// otherwise one of the `recency` most recent replies.
#[derive(Clone, Debug, PartialEq)]
pub struct Branching {
    pub root_prob: f64,
    pub recency: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextShape {
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub filler_vocab: usize,
    pub topic_vocab: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub archetypes: Vec<Archetype>,
    pub threads_per_archetype: usize,
    /// Replies per thread `n` (upper bound when `min_replies < replies`).
    pub replies: usize,
    pub min_replies: usize,
    pub noise_sd: f64,
    /// Half-width of the uniform per-thread perturbation of template parameters.
    pub jitter: f64,
    pub branching: Branching,
    pub text: TextShape,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    /// Four archetypes x 50 threads x 300 replies, `σ = 0.02`.
    fn default() -> Self {
        Self {
            archetypes: vec![
                Archetype::rising(0.1, 0.9),
                Archetype::falling(0.9, 0.1),
                Archetype::mid_spike(0.3, 0.95),
                Archetype::flat(0.6),
            ],
            threads_per_archetype: 50,
            replies: 300,
            min_replies: 300,
            noise_sd: 0.02,
            jitter: 0.04,
            branching: Branching {
                root_prob: 0.3,
                recency: 12,
            },
            text: TextShape {
                min_tokens: 6,
                max_tokens: 10,
                filler_vocab: 300,
                topic_vocab: 60,
            },
            seed: 42,
        }
    }
}

/// Mean of `clamp(N(mu, sd²), 0, 1)`.
fn clamped_normal_mean(mu: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mu.clamp(0.0, 1.0);
    }
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = |z: f64| 0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2));
    let (a, b) = (-mu / sd, (1.0 - mu) / sd);
    mu * (cdf(b) - cdf(a)) + sd * (phi(a) - phi(b)) + (1.0 - cdf(b))
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.archetypes.is_empty() {
            return bad("at least one archetype is required".into());
        }
        if !(self.noise_sd >= 0.0) {
            return bad(format!("noise sd must be >= 0, got {}", self.noise_sd));
        }
        if self.replies == 0 || self.min_replies > self.replies {
            return bad(format!(
                "reply bounds {}..={} are invalid",
                self.min_replies, self.replies
            ));
        }
        if self.text.min_tokens == 0 || self.text.min_tokens > self.text.max_tokens {
            return bad("token bounds are invalid".into());
        }
        if self.text.filler_vocab == 0 || self.text.topic_vocab == 0 {
            return bad("vocabulary sizes must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.branching.root_prob) || self.branching.recency == 0 {
            return bad("branching parameters are invalid".into());
        }
        for a in &self.archetypes {
            if !(0.0..=1.0).contains(&a.echo) {
                return bad(format!("archetype {} echo outside [0, 1]", a.name));
            }
            let raw = match a.shape {
                Shape::Ramp { from, to } => vec![from, to],
                Shape::Spike { base, peak, .. } => vec![base, peak],
                Shape::Flat { level } => vec![level],
            };
            if raw.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad(format!("archetype {} template leaves [0, 1]", a.name));
            }
            for i in 0..self.replies {
                let t = a.template(i, self.replies);
                let distortion = (clamped_normal_mean(t, self.noise_sd) - t).abs();
                if distortion > 0.05 {
                    return bad(format!(
                        "archetype {}: clamping shifts the mean by {distortion:.3} at reply {} (σ too large)",
                        a.name,
                        i + 1
                    ));
                }
            }
        }
        Ok(())
    }

    /// Lowest number of replies any generated thread can have.
    pub fn shortest_thread(&self) -> usize {
        self.min_replies
    }
}

/// Lexicon used by synthetic texts: `hatewNN` score 1, `gradeNNN` score NNN/100.
pub fn synthetic_lexicon() -> HateLexicon {
    let mut lex = HateLexicon::new();
    for i in 0..HATE_WORDS {
        lex.insert(&hate_word(i), 1.0).expect("valid score");
    }
    for g in 1..GRADE_STEPS {
        lex.insert(&grade_word(g), g as f64 / GRADE_STEPS as f64)
            .expect("valid score");
    }
    lex
}

fn hate_word(i: usize) -> String {
    format!("hatew{i:02}")
}

fn grade_word(g: usize) -> String {
    format!("grade{g:03}")
}

struct TextGen<'a> {
    shape: &'a TextShape,
}

impl TextGen<'_> {
    /// Tokens whose lexicon mean is `lexicon_mean` up to 1/(100 L).
    fn compose(
        &self,
        lexicon_mean: f64,
        filler: &mut dyn FnMut(&mut ChaCha8Rng) -> String,
        rng: &mut ChaCha8Rng,
    ) -> Vec<String> {
        let len = rng.gen_range(self.shape.min_tokens..=self.shape.max_tokens);
        let total = lexicon_mean.clamp(0.0, 1.0) * len as f64;
        let mut whole = total.floor() as usize;
        let mut grade = ((total - whole as f64) * GRADE_STEPS as f64).round() as usize;
        if grade == GRADE_STEPS {
            whole += 1;
            grade = 0;
        }
        let whole = whole.min(len);
        let mut tokens: Vec<String> = (0..whole)
            .map(|_| hate_word(rng.gen_range(0..HATE_WORDS)))
            .collect();
        if grade > 0 && tokens.len() < len {
            tokens.push(grade_word(grade));
        }
        while tokens.len() < len {
            tokens.push(filler(rng));
        }
        tokens.shuffle(rng);
        tokens
    }
}

/// Generates a corpus plus its ground-truth sidecar.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, "synthetic");
    let noise = Normal::new(0.0, config.noise_sd.max(f64::MIN_POSITIVE)).expect("finite sd");
    let text = TextGen {
        shape: &config.text,
    };
    let slope = DEFAULT_CALIBRATION_SLOPE;
    let mut threads = Vec::new();
    let mut truth = BTreeMap::new();
    let total = config.archetypes.len() * config.threads_per_archetype;

    for idx in 0..total {
        // Interleave archetypes so any prefix of the corpus stays balanced.
        let arch = &config.archetypes[idx % config.archetypes.len()];
        let shape = arch.jittered(config.jitter, &mut rng);
        let q = rng.gen_range(config.min_replies..=config.replies);
        let thread_id = format!("syn{idx:05}");
        let base_ts = idx as i64 * 1_000_000_000;

        let topic: Vec<String> = (0..4)
            .map(|_| format!("topic{}", rng.gen_range(0..config.text.topic_vocab)))
            .collect();
        let root_target = shape_value(&shape, 0, config.replies);
        let root_tokens = {
            let topic = topic.clone();
            let mut f = |r: &mut ChaCha8Rng| topic[r.gen_range(0..topic.len())].clone();
            text.compose(
                logistic_calibration_inverse(root_target, slope),
                &mut f,
                &mut rng,
            )
        };
        let root = Tweet {
            id: thread_id.clone(),
            parent_id: None,
            timestamp: base_ts,
            tokens: root_tokens,
            author_id: format!("u{}", rng.gen_range(0..10_000)),
        };

        let mut replies: Vec<Tweet> = Vec::with_capacity(q);
        let mut scores = Vec::with_capacity(q);
        let mut ts = base_ts;
        for i in 0..q {
            let mut h = shape_value(&shape, i, config.replies);
            if config.noise_sd > 0.0 {
                h += noise.sample(&mut rng);
            }
            let h = h.clamp(0.0, 1.0);
            let echo = arch.echo;
            let filler_vocab = config.text.filler_vocab;
            let mut f = |r: &mut ChaCha8Rng| {
                if r.gen_bool(echo) {
                    topic[r.gen_range(0..topic.len())].clone()
                } else {
                    format!("word{}", r.gen_range(0..filler_vocab))
                }
            };
            let tokens = text.compose(logistic_calibration_inverse(h, slope), &mut f, &mut rng);
            let parent = if i == 0 || rng.gen_bool(config.branching.root_prob) {
                thread_id.clone()
            } else {
                let lo = i.saturating_sub(config.branching.recency);
                replies[rng.gen_range(lo..i)].id.clone()
            };
            ts += rng.gen_range(1..=60_000);
            replies.push(Tweet {
                id: format!("{thread_id}-r{:04}", i + 1),
                parent_id: Some(parent),
                timestamp: ts,
                tokens,
                author_id: format!("u{}", rng.gen_range(0..10_000)),
            });
            scores.push(h);
        }
        threads.push(ConversationThread::new(root, replies)?);
        truth.insert(
            thread_id,
            ThreadTruth {
                archetype: arch.name.clone(),
                scores,
            },
        );
    }

    Ok(Corpus::new(threads, Provenance::Synthetic)?.with_sidecar(truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::{reference_scorer, HateScorer};
    use std::sync::Arc;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            threads_per_archetype: 3,
            replies: 40,
            min_replies: 40,
            ..Default::default()
        }
    }

    #[test]
    fn counting_and_balance() {
        let c = generate_synthetic(&SyntheticConfig {
            replies: 30,
            min_replies: 30,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(c.len(), 200);
        let mut counts = BTreeMap::new();
        for t in c.sidecar().unwrap().values() {
            *counts.entry(t.archetype.clone()).or_insert(0) += 1;
        }
        assert!(counts.values().all(|&n| n == 50), "{counts:?}");
    }

    #[test]
    fn flat_noise_free_round_trip() {
        let cfg = SyntheticConfig {
            archetypes: vec![Archetype::flat(0.3)],
            noise_sd: 0.0,
            jitter: 0.0,
            ..small()
        };
        let c = generate_synthetic(&cfg).unwrap();
        let scorer = reference_scorer(Arc::new(synthetic_lexicon()));
        for t in c.threads() {
            for r in t.replies() {
                assert!((scorer.score(&r.tokens) - 0.3).abs() < 0.02);
            }
        }
    }

    #[test]
    fn infeasible_noise_is_rejected() {
        let cfg = SyntheticConfig {
            archetypes: vec![Archetype::flat(0.02)],
            noise_sd: 0.3,
            ..small()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn clamped_mean_matches_sampling() {
        let mut rng = stream_rng(5, "clamp");
        let d = Normal::<f64>::new(0.05, 0.1).unwrap();
        let n = 200_000;
        let mc: f64 = (0..n)
            .map(|_| d.sample(&mut rng).clamp(0.0, 1.0))
            .sum::<f64>()
            / n as f64;
        assert!((clamped_normal_mean(0.05, 0.1) - mc).abs() < 2e-3);
    }
}
