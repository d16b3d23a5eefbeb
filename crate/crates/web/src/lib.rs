//! Browser bindings for a few interactive pieces of `hatecast`.
//!
//! Every export returns a JSON string so the page can stay plain JavaScript.
//! The `*_json` functions hold the logic and are usable natively as well.

use std::sync::Arc;

use hatecast::intensity::{
    hate_intensity, reference_scorer, reply_scores, windowed_profile, HateLexicon, ReferenceScorer,
    WindowMode,
};
use hatecast::strata::fit_gmm;
use hatecast::threadstore::{
    generate_synthetic, synthetic_lexicon, tokenize, Archetype, SyntheticConfig,
};
use hatecast::Error;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Weight of the classifier score against the lexicon score.
pub const DEFAULT_W: f64 = 0.6;

fn scoring() -> (Arc<HateLexicon>, ReferenceScorer) {
    let lexicon = Arc::new(synthetic_lexicon());
    let scorer = reference_scorer(lexicon.clone());
    (lexicon, scorer)
}

fn archetype(name: &str) -> Result<Archetype, Error> {
    match name {
        "rising" => Ok(Archetype::rising(0.1, 0.9)),
        "falling" => Ok(Archetype::falling(0.9, 0.1)),
        "mid-spike" => Ok(Archetype::mid_spike(0.3, 0.95)),
        "flat" => Ok(Archetype::flat(0.6)),
        other => Err(Error::Config(format!("unknown archetype `{other}`"))),
    }
}

/// Intensity of free text, with the tokens that hit the lexicon.
pub fn score_text_json(text: &str, w: f64) -> Result<String, Error> {
    let (lexicon, scorer) = scoring();
    let tokens = tokenize(text);
    let intensity = hate_intensity(&tokens, w, &scorer, &lexicon)?;
    let hits: Vec<_> = tokens
        .iter()
        .filter(|t| lexicon.contains(t))
        .map(|t| json!({ "token": t, "score": lexicon.score(t) }))
        .collect();
    Ok(json!({ "tokens": tokens.len(), "intensity": intensity, "hits": hits }).to_string())
}

/// One synthetic thread of the given archetype: per-reply scores, its
/// template and the windowed profile.
pub fn synthetic_profile_json(
    name: &str,
    seed: u64,
    delta: usize,
    replies: usize,
) -> Result<String, Error> {
    let arch = archetype(name)?;
    let template: Vec<f64> = (0..replies).map(|i| arch.template(i, replies)).collect();
    let config = SyntheticConfig {
        archetypes: vec![arch],
        threads_per_archetype: 1,
        replies,
        min_replies: replies,
        seed,
        ..SyntheticConfig::default()
    };
    let corpus = generate_synthetic(&config)?;
    let thread = &corpus.threads()[0];
    let (lexicon, scorer) = scoring();
    let scores = reply_scores(thread, DEFAULT_W, &scorer, &lexicon)?;
    let profile = windowed_profile(thread.id(), &scores, delta, WindowMode::Sum)?;
    let sample: Vec<String> = thread
        .replies()
        .iter()
        .take(5)
        .map(|r| r.tokens.join(" "))
        .collect();
    Ok(json!({
        "thread": thread.id(),
        "delta": delta,
        "template": template,
        "scores": scores,
        "windows": profile.windows,
        "sample": sample,
    })
    .to_string())
}

/// Fits a `j`-component mixture to `[[x, y], ...]` and returns centres,
/// weights and per-point membership.
pub fn cluster_points_json(points: &str, j: usize, seed: u64) -> Result<String, Error> {
    let x: Vec<Vec<f64>> = serde_json::from_str(points)
        .map_err(|e| Error::Config(format!("points must be [[x, y], ...]: {e}")))?;
    let gmm = fit_gmm(&x, j, seed, 1e-6, 200)?;
    let membership = x
        .iter()
        .map(|p| gmm.membership(p))
        .collect::<Result<Vec<_>, _>>()?;
    let covariances: Vec<Vec<f64>> = (0..gmm.clusters()).map(|k| gmm.covariance(k)).collect();
    Ok(json!({
        "centres": gmm.centres(),
        "covariances": covariances,
        "weights": gmm.weights(),
        "membership": membership,
        "log_likelihood": gmm.final_log_likelihood(),
    })
    .to_string())
}

fn js(result: Result<String, Error>) -> Result<String, JsError> {
    result.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn score_text(text: &str, w: f64) -> Result<String, JsError> {
    js(score_text_json(text, w))
}

#[wasm_bindgen]
pub fn synthetic_profile(
    archetype: &str,
    seed: u32,
    delta: usize,
    replies: usize,
) -> Result<String, JsError> {
    js(synthetic_profile_json(
        archetype,
        seed.into(),
        delta,
        replies,
    ))
}

#[wasm_bindgen]
pub fn cluster_points(points: &str, j: usize, seed: u32) -> Result<String, JsError> {
    js(cluster_points_json(points, j, seed.into()))
}
