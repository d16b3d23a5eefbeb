//! Forecast metrics, corpus evaluation against simple baselines, the
//! hyperparameter sweep harness and CSV/SVG report files.

pub mod config;
pub mod metrics;
pub mod report;
pub mod svg;
pub mod sweep;

use crate::error::{Error, Result};
use crate::forecaster::{Forecast, PipelineModel};
use crate::par::par_map;
use crate::threadstore::{ConversationThread, Corpus};

pub use metrics::{metrics, mfe, pcc, rmse, MetricTriple};

#[derive(Clone, Debug, PartialEq)]
pub struct ThreadReport {
    pub thread_id: String,
    pub metrics: MetricTriple,
    /// Number of real future windows compared.
    pub true_len: usize,
}

/// Corpus-level means; PCC is a macro average over threads where it exists.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanMetrics {
    pub pcc: Option<f64>,
    pub rmse: f64,
    pub mfe: f64,
    pub pcc_excluded: usize,
    pub threads: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForecastReport {
    pub rows: Vec<ThreadReport>,
    pub forecasts: Vec<Forecast>,
}

impl ForecastReport {
    fn from_forecasts(forecasts: Vec<Forecast>) -> Result<Self> {
        let rows = forecasts
            .iter()
            .map(|f| {
                let len = f.actual.len();
                Ok(ThreadReport {
                    thread_id: f.thread_id.clone(),
                    metrics: metrics(&f.predicted[..len], &f.actual)?,
                    true_len: len,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows, forecasts })
    }

    pub fn mean(&self) -> MeanMetrics {
        mean_of(&self.rows)
    }

    /// Share of threads where this report's PCC beats `other`'s; an absent
    /// PCC counts as 0. Rows are matched by position.
    pub fn pcc_win_rate(&self, other: &ForecastReport) -> f64 {
        let wins = self
            .rows
            .iter()
            .zip(&other.rows)
            .filter(|(a, b)| a.metrics.pcc.unwrap_or(0.0) > b.metrics.pcc.unwrap_or(0.0))
            .count();
        wins as f64 / self.rows.len().max(1) as f64
    }
}

pub fn mean_of(rows: &[ThreadReport]) -> MeanMetrics {
    let n = rows.len().max(1) as f64;
    let present: Vec<f64> = rows.iter().filter_map(|r| r.metrics.pcc).collect();
    MeanMetrics {
        pcc: (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64),
        rmse: rows.iter().map(|r| r.metrics.rmse).sum::<f64>() / n,
        mfe: rows.iter().map(|r| r.metrics.mfe).sum::<f64>() / n,
        pcc_excluded: rows.len() - present.len(),
        threads: rows.len(),
    }
}

/// Threads with at least one window beyond the observed history.
pub fn eligible_threads<'a>(
    pipeline: &PipelineModel,
    test: &'a Corpus,
) -> Result<Vec<&'a ConversationThread>> {
    let eligible: Vec<&ConversationThread> = test
        .threads()
        .iter()
        .filter(|t| t.len() > pipeline.hp.t_h)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Config(format!(
            "no test thread has more than t_h = {} replies; nothing to evaluate",
            pipeline.hp.t_h
        )));
    }
    Ok(eligible)
}

/// Forecasts every eligible test thread and scores the future windows.
pub fn evaluate(pipeline: &PipelineModel, test: &Corpus) -> Result<ForecastReport> {
    let eligible = eligible_threads(pipeline, test)?;
    let forecasts: Result<Vec<Forecast>> = par_map(&eligible, |t| pipeline.forecast_profile(t))
        .into_iter()
        .collect();
    ForecastReport::from_forecasts(forecasts?)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Baseline {
    /// Repeat the last observed history window.
    Persistence,
    /// Per-position mean of the training futures.
    MeanProfile(Vec<f64>),
}

/// Masked per-position mean of training future windows.
pub fn mean_future_profile(pipeline: &PipelineModel, train: &Corpus) -> Result<Vec<f64>> {
    let h = pipeline.hp.history_windows();
    let len = pipeline.hp.forecast_windows();
    let (mut sum, mut count) = (vec![0.0; len], vec![0usize; len]);
    for t in train.threads() {
        let w = pipeline.windows(t)?;
        for (k, v) in w.iter().skip(h).take(len).enumerate() {
            sum[k] += v;
            count[k] += 1;
        }
    }
    let mut out = Vec::with_capacity(len);
    let mut last = 0.0;
    for (s, c) in sum.iter().zip(&count) {
        if *c > 0 {
            last = s / *c as f64;
        }
        out.push(last);
    }
    Ok(out)
}

pub fn evaluate_baseline(
    pipeline: &PipelineModel,
    test: &Corpus,
    baseline: &Baseline,
) -> Result<ForecastReport> {
    let eligible = eligible_threads(pipeline, test)?;
    let h = pipeline.hp.history_windows();
    let len = pipeline.hp.forecast_windows();
    let forecasts = eligible
        .iter()
        .map(|t| {
            let w = pipeline.windows(t)?;
            let real = w.len().min(pipeline.hp.canvas());
            let predicted = match baseline {
                Baseline::Persistence => vec![w[h - 1]; len],
                Baseline::MeanProfile(p) => p.clone(),
            };
            Ok(Forecast {
                thread_id: t.id().into(),
                history: w[..h].to_vec(),
                predicted,
                actual: w[h..real].to_vec(),
                membership: Vec::new(),
                decoded_history: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ForecastReport::from_forecasts(forecasts)
}
