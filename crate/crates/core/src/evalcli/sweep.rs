//! One-parameter sweeps: retrain the affected stages per value and seed and
//! record the held-out mean metrics.

use std::sync::Arc;

use log::info;

use super::evaluate;
use super::report::SweepRow;
use crate::error::{Error, Result};
use crate::forecaster::{Hyperparams, PipelineBuilder};
use crate::intensity::HateLexicon;
use crate::par::par_map;
use crate::threadstore::{split_train_test, Corpus};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Delta,
    HistoryLength,
    Clusters,
    Weight,
    Scorer,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "delta" | "δ" => Self::Delta,
            "t_h" => Self::HistoryLength,
            "j" => Self::Clusters,
            "w" => Self::Weight,
            "scorer" => Self::Scorer,
            other => {
                return Err(Error::Config(format!(
                    "cannot sweep '{other}' (delta, t_h, j, w, scorer)"
                )))
            }
        })
    }

    /// Hyperparameter key the value is written to.
    pub fn key(self) -> &'static str {
        match self {
            Self::Delta => "delta",
            Self::HistoryLength => "t_h",
            Self::Clusters => "j",
            Self::Weight => "w",
            Self::Scorer => "scorer",
        }
    }

    /// True when only clustering and later stages depend on the value.
    fn reuses_representation(self) -> bool {
        self == Self::Clusters
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    pub base: Hyperparams,
    /// Run independent cells concurrently.
    pub parallel: bool,
}

impl SweepSpec {
    /// Hyperparameters of every value, or the first illegal one.
    pub fn settings(&self) -> Result<Vec<Hyperparams>> {
        if self.values.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "a sweep needs at least one value and one seed".into(),
            ));
        }
        self.values
            .iter()
            .map(|v| {
                let mut hp = self.base.clone();
                hp.set(self.param.key(), v)?;
                hp.validate().map_err(|e| {
                    Error::Config(format!("sweep value {}={v}: {e}", self.param.key()))
                })?;
                Ok(hp)
            })
            .collect()
    }
}

/// One row per (value, seed), values in spec order within each seed.
pub fn run_sweep(
    spec: &SweepSpec,
    corpus: &Corpus,
    lexicon: Arc<HateLexicon>,
) -> Result<Vec<SweepRow>> {
    let settings = spec.settings()?;
    let splits: Vec<(u64, Corpus, Corpus)> = spec
        .seeds
        .iter()
        .map(|&seed| split_train_test(corpus, spec.base.split, seed).map(|(tr, te)| (seed, tr, te)))
        .collect::<Result<_>>()?;

    // Stages upstream of clustering are shared across j values.
    let shared: Vec<Option<PipelineBuilder>> = if spec.param.reuses_representation() {
        let build = |(seed, train, _): &(u64, Corpus, Corpus)| -> Result<Option<PipelineBuilder>> {
            let mut b = PipelineBuilder::new(train, spec.base.clone(), lexicon.clone(), *seed)?;
            b.train_node_embedder()?
                .extract_features()?
                .train_autoencoder()?;
            Ok(Some(b))
        };
        let built = if spec.parallel {
            par_map(&splits, build)
        } else {
            splits.iter().map(build).collect()
        };
        built.into_iter().collect::<Result<_>>()?
    } else {
        splits.iter().map(|_| None).collect()
    };

    let cells: Vec<(usize, usize)> = (0..splits.len())
        .flat_map(|s| (0..settings.len()).map(move |v| (s, v)))
        .collect();
    let run = |&(s, v): &(usize, usize)| -> Result<SweepRow> {
        let (seed, train, test) = &splits[s];
        let hp = settings[v].clone();
        let model = match &shared[s] {
            Some(b) => b.with_clusters(hp.j)?.run_all()?,
            None => PipelineBuilder::new(train, hp, lexicon.clone(), *seed)?.run_all()?,
        };
        let mean = evaluate(&model, test)?.mean();
        info!(
            "sweep {}={} seed {seed}: rmse {:.4}",
            spec.param.key(),
            spec.values[v],
            mean.rmse
        );
        Ok(SweepRow {
            param: spec.param.key().into(),
            value: spec.values[v].clone(),
            seed: *seed,
            pcc: mean.pcc,
            rmse: mean.rmse,
            mfe: mean.mfe,
        })
    };
    let rows = if spec.parallel {
        par_map(&cells, run)
    } else {
        cells.iter().map(run).collect()
    };
    rows.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(param: &str, values: &[&str], seeds: &[u64]) -> SweepSpec {
        SweepSpec {
            param: SweepParam::parse(param).unwrap(),
            values: values.iter().map(|v| v.to_string()).collect(),
            seeds: seeds.to_vec(),
            base: Hyperparams::default(),
            parallel: false,
        }
    }

    #[test]
    fn illegal_values_fail_before_training() {
        assert!(spec("delta", &["10", "300"], &[1]).settings().is_err());
        assert!(spec("j", &["0"], &[1]).settings().is_err());
        assert!(spec("scorer", &["oracle"], &[1]).settings().is_err());
        assert!(spec("j", &[], &[1]).settings().is_err());
        assert!(SweepParam::parse("lr").is_err());
        let s = spec("t_h", &["40"], &[1]).settings().unwrap();
        assert_eq!((s[0].t_h, s[0].t_f), (40, 260));
    }

    #[test]
    fn settings_per_value() {
        assert_eq!(
            spec("j", &["5", "10", "15", "20"], &[1, 2])
                .settings()
                .unwrap()
                .len(),
            4
        );
        assert_eq!(
            spec("w", &["0.45", "0.6", "0.75"], &[1])
                .settings()
                .unwrap()[0]
                .w,
            0.45
        );
    }
}
