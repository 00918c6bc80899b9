//! Runs a scenario over every leave-one-subject-out fold.

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    add_misc_class, build_scenario, load_frame_tensor, loso_splits, sample_digest, Cohort, DatasetManifest, Sample,
    Scenario, ScenarioSets,
};
use crate::experiments::metrics::{compute_metrics, ConfusionCounts};
use crate::experiments::report::{FoldResult, RunFingerprint, ScenarioReport};
use crate::experiments::ExperimentError;
use crate::model::{build_paper_network, fine_tune, predict, train, Network, TrainConfig, TrainSample};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Add the test child's smiling and mouth-opening frames as negatives.
    pub misc_class: bool,
}

/// Decoded frames keyed by path, so shared samples load once per run.
#[derive(Default)]
pub struct FrameCache {
    frames: HashMap<PathBuf, Tensor<f32>>,
}

impl FrameCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, sample: &Sample) -> Result<&Tensor<f32>, ExperimentError> {
        if !self.frames.contains_key(&sample.path) {
            let t = load_frame_tensor(&sample.path)?;
            self.frames.insert(sample.path.clone(), t);
        }
        Ok(&self.frames[&sample.path])
    }

    pub fn training_samples(&mut self, samples: &[Sample]) -> Result<Vec<TrainSample<f32>>, ExperimentError> {
        samples
            .iter()
            .map(|s| {
                Ok(TrainSample { input: self.get(s)?.clone(), label: s.label(), group: s.participant_id.clone() })
            })
            .collect()
    }
}

/// Confusion counts of `net` on `samples`.
pub fn evaluate_samples(
    net: &Network<f32>,
    samples: &[Sample],
    cache: &mut FrameCache,
) -> Result<ConfusionCounts, ExperimentError> {
    let mut predictions = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let inputs = chunk.iter().map(|s| cache.get(s).cloned()).collect::<Result<Vec<_>, _>>()?;
        let batch = Tensor::stack(&inputs)?;
        predictions.extend(predict(net, &batch)?.0);
    }
    let labels: Vec<usize> = samples.iter().map(Sample::label).collect();
    Ok(ConfusionCounts::tally(&predictions, &labels))
}

fn fit(
    samples: &[Sample],
    config: &TrainConfig,
    seed: u64,
    cache: &mut FrameCache,
    start: Option<&Network<f32>>,
) -> Result<Network<f32>, ExperimentError> {
    let data = cache.training_samples(samples)?;
    let cfg = TrainConfig { seed, ..config.clone() };
    let (net, log) = match start {
        Some(pre) => fine_tune(pre, &data, &cfg)?,
        None => train(build_paper_network(cfg.class_count, seed)?, &data, &cfg)?,
    };
    log::info!(
        "trained on {} samples: best epoch {} (validation loss {:?})",
        log.train_size,
        log.best_epoch,
        log.best_val_loss
    );
    Ok(net)
}

/// Runs `scenario` over every child fold with a fresh session.
pub fn run_scenario(
    scenario: Scenario,
    adults: &DatasetManifest,
    children: &DatasetManifest,
    config: &ExperimentConfig,
) -> Result<ScenarioReport, ExperimentError> {
    ExperimentSession::new().run(scenario, adults, children, config)
}

/// Frame cache plus the adult-only model, reused across scenarios run in the
/// same session. Scenarios 1 and 4 both start from a model trained on all
/// adults with the base seed, so running both trains it once.
#[derive(Default)]
pub struct ExperimentSession {
    cache: FrameCache,
    adult_model: Option<(u32, TrainConfig, Network<f32>)>,
}

impl ExperimentSession {
    pub fn new() -> Self {
        Self::default()
    }

    fn adult_model(&mut self, samples: &[Sample], config: &TrainConfig) -> Result<Network<f32>, ExperimentError> {
        let key = sample_digest(samples);
        if let Some((k, c, net)) = &self.adult_model {
            if *k == key && c == config {
                log::info!("reusing the adult model");
                return Ok(net.clone());
            }
        }
        log::info!("training the adult model on {} samples", samples.len());
        let net = fit(samples, config, config.seed, &mut self.cache, None)?;
        self.adult_model = Some((key, config.clone(), net.clone()));
        Ok(net)
    }

    /// Runs `scenario` over every child fold. Fold `k` trains with seed
    /// `base + k`; the adult model of scenarios 1 and 4 uses the base seed
    /// since its training set does not depend on the fold.
    pub fn run(
        &mut self,
        scenario: Scenario,
        adults: &DatasetManifest,
        children: &DatasetManifest,
        config: &ExperimentConfig,
    ) -> Result<ScenarioReport, ExperimentError> {
        config.train.validate()?;
        let base = config.train.seed;
        let folds = loso_splits(children, Cohort::Child)?;
        let mut sets: Vec<ScenarioSets> = Vec::with_capacity(folds.len());
        let mut digest = crc32fast::Hasher::new();
        for fold in &folds {
            let mut s = build_scenario(scenario, fold, adults, children)?;
            if config.misc_class {
                s.test = add_misc_class(&s.test, children);
            }
            for part in [&s.pretrain, &s.train, &s.test] {
                digest.update(&sample_digest(part).to_le_bytes());
            }
            sets.push(s);
        }
        let fingerprint = RunFingerprint {
            base_seed: base,
            config: config.train.clone(),
            misc_class: config.misc_class,
            data_digest: digest.finalize(),
        };

        let shared = match scenario {
            Scenario::AdultsOnly => Some(self.adult_model(&sets[0].train, &config.train)?),
            Scenario::Transfer => Some(self.adult_model(&sets[0].pretrain, &config.train)?),
            _ => None,
        };

        let cache = &mut self.cache;
        let mut results = Vec::with_capacity(sets.len());
        for (fold, s) in folds.iter().zip(&sets) {
            let mut run = || -> Result<FoldResult, ExperimentError> {
                let seed = base.wrapping_add(fold.fold_id as u64);
                let (net, seed) = match (scenario, &shared) {
                    (Scenario::AdultsOnly, Some(net)) => (net.clone(), base),
                    (Scenario::Transfer, Some(pre)) => (fit(&s.train, &config.train, seed, cache, Some(pre))?, seed),
                    _ => (fit(&s.train, &config.train, seed, cache, None)?, seed),
                };
                let counts = evaluate_samples(&net, &s.test, cache)?;
                let metrics = compute_metrics::<f64>(&counts)?;
                log::info!("fold {} ({}): {counts:?}", fold.fold_id, fold.test.join(","));
                Ok(FoldResult {
                    fold_id: fold.fold_id,
                    participant: fold.test.join(","),
                    seed,
                    train_size: s.train.len(),
                    counts,
                    metrics,
                })
            };
            results.push(run().map_err(|e| ExperimentError::Fold { fold_id: fold.fold_id, source: Box::new(e) })?);
        }
        Ok(ScenarioReport::new(scenario, results, fingerprint))
    }
}
