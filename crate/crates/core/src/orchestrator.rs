//! Communication rounds for FedAvg, FedProx and the two-stage FedDRL
//! aggregator, plus the metrics each round leaves behind.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::env::{
    evaluate, proportional_weights, weighted_aggregate, BandWarning, Federation, LocalTrainOpts,
    WorldConfig,
};
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::seed::{derive_seed, stream};
use crate::stage1::{SelectionAgent, SelectionEnv, Stage1Config};
use crate::stage2::{Stage2Config, WeightAgent, WeightEnv};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedDrlConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    /// Keep the selection agent between rounds. Weight agents follow
    /// `stage2.warm_start`.
    pub warm_start: bool,
    /// Stage-1 central rounds in the first communication round; later
    /// rounds use `stage1.rounds`.
    pub stage1_initial_rounds: Option<usize>,
    /// Stage-2 learner iterations the first time a trusted set is seen;
    /// later rounds use `stage2.iterations`.
    pub stage2_initial_iterations: Option<usize>,
}

impl Default for FedDrlConfig {
    fn default() -> Self {
        Self {
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            warm_start: true,
            stage1_initial_rounds: None,
            stage2_initial_iterations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Strategy {
    FedAvg,
    FedProx { mu: f64 },
    FedDrl(Box<FedDrlConfig>),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedProx { .. } => "fedprox",
            Strategy::FedDrl(_) => "feddrl",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::FedAvg => Ok(()),
            Strategy::FedProx { mu } if *mu >= 0.0 && mu.is_finite() => Ok(()),
            Strategy::FedProx { mu } => Err(Error::InvalidConfig(format!("fedprox mu {mu} must be >= 0"))),
            Strategy::FedDrl(c) => {
                c.stage1.validate()?;
                c.stage2.validate()?;
                if c.stage1_initial_rounds == Some(0) || c.stage2_initial_iterations == Some(0) {
                    return Err(Error::InvalidConfig("initial training budgets must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub rounds: usize,
    pub local: LocalTrainOpts,
    pub seed: u64,
    pub strategy: Strategy,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be at least 1".into()));
        }
        if self.local.epochs == 0 || self.local.batch_size == 0 || !(self.local.lr > 0.0) {
            return Err(Error::InvalidConfig(
                "local epochs, batch size and lr must be positive".into(),
            ));
        }
        self.strategy.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Test-split accuracy of the fused global model.
    pub global_acc: f64,
    /// Test-split accuracy of every uploaded model.
    pub client_accs: Vec<f64>,
    pub selected_mask: Vec<bool>,
    /// Fusion weights over all clients, zero off the mask.
    pub fusion_weights: Vec<f64>,
    pub stage2_mean_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLog {
    pub config: ExperimentConfig,
    pub sample_counts: Vec<usize>,
    pub rounds: Vec<RoundRecord>,
    /// Mean per-step stage-1 reward for every central round, in order.
    pub stage1_rewards: Vec<f64>,
    /// Mean sampler reward for every stage-2 learner iteration, in order.
    pub stage2_rewards: Vec<f64>,
    pub warnings: Vec<BandWarning>,
}

impl ExperimentLog {
    pub fn strategy(&self) -> &'static str {
        self.config.strategy.name()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.global_acc)
    }
}

/// Everything one round produced besides the new global model.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    pub record: RoundRecord,
    pub stage1_rewards: Vec<f64>,
    pub stage2_rewards: Vec<f64>,
    pub warnings: Vec<BandWarning>,
}

fn mask_key(mask: &[bool]) -> u64 {
    mask.iter()
        .enumerate()
        .fold(0u64, |acc, (i, &m)| if m { acc | 1 << (i % 64) } else { acc })
}

/// Runs rounds for one strategy on one federation, carrying agent state.
pub struct Runner<'f> {
    fed: &'f Federation,
    strategy: Strategy,
    opts: LocalTrainOpts,
    selection: Option<SelectionAgent>,
    weighting: HashMap<Vec<bool>, WeightAgent>,
}

impl<'f> Runner<'f> {
    pub fn new(fed: &'f Federation, strategy: Strategy, local: LocalTrainOpts) -> Result<Self> {
        strategy.validate()?;
        let opts = match &strategy {
            Strategy::FedProx { mu } => LocalTrainOpts { prox_mu: *mu, ..local },
            _ => LocalTrainOpts { prox_mu: 0.0, ..local },
        };
        Ok(Self {
            fed,
            strategy,
            opts,
            selection: None,
            weighting: HashMap::new(),
        })
    }

    /// Local training, optional two-stage selection and weighting, fusion.
    pub fn run_round(&mut self, global: &ModelParams, round: usize) -> Result<(ModelParams, RoundOutput)> {
        let fed = self.fed;
        let uploads = fed.client_round(global, &self.opts, round)?;
        let warnings: Vec<BandWarning> = uploads.iter().filter_map(|u| u.warning.clone()).collect();
        let models: Vec<ModelParams> = uploads.into_iter().map(|u| u.params).collect();
        let counts = fed.sample_counts();
        let n = models.len();

        let mut stage1_rewards = Vec::new();
        let mut stage2_rewards = Vec::new();
        let (mask, fusion_weights) = match &self.strategy {
            Strategy::FedAvg | Strategy::FedProx { .. } => (vec![true; n], proportional_weights(&counts)?),
            Strategy::FedDrl(cfg) => {
                let cfg = cfg.as_ref().clone();
                let mask = if n == 1 {
                    vec![true]
                } else {
                    let (mask, rewards) = self.select(&cfg, &models, &counts, round)?;
                    stage1_rewards = rewards;
                    mask
                };
                let trusted_idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
                let trusted: Vec<ModelParams> = trusted_idx.iter().map(|&i| models[i].clone()).collect();
                let trusted_counts: Vec<usize> = trusted_idx.iter().map(|&i| counts[i]).collect();
                let local = if trusted.len() == 1 {
                    vec![1.0]
                } else {
                    let (w, rewards) = self.weigh(&cfg, &mask, &trusted, &trusted_counts, round)?;
                    stage2_rewards = rewards;
                    w
                };
                let mut full = vec![0.0; n];
                for (&i, w) in trusted_idx.iter().zip(local) {
                    full[i] = w;
                }
                (mask, full)
            }
        };

        let new_global = weighted_aggregate(&models, &fusion_weights)?;
        let record = RoundRecord {
            round,
            global_acc: evaluate(&new_global, &fed.test)?,
            client_accs: models
                .iter()
                .map(|m| evaluate(m, &fed.test))
                .collect::<Result<_>>()?,
            selected_mask: mask,
            fusion_weights,
            stage2_mean_reward: (!stage2_rewards.is_empty())
                .then(|| stage2_rewards.iter().sum::<f64>() / stage2_rewards.len() as f64),
        };
        Ok((
            new_global,
            RoundOutput {
                record,
                stage1_rewards,
                stage2_rewards,
                warnings,
            },
        ))
    }

    fn select(
        &mut self,
        cfg: &FedDrlConfig,
        models: &[ModelParams],
        counts: &[usize],
        round: usize,
    ) -> Result<(Vec<bool>, Vec<f64>)> {
        let fed = self.fed;
        let env = SelectionEnv::new(models, counts, &fed.holdout, cfg.stage1.coeffs, cfg.stage1.episode_len)?;
        let fresh = !cfg.warm_start || self.selection.is_none();
        if fresh {
            let seed = if cfg.warm_start {
                derive_seed(&[fed.seed(), stream::STAGE1])
            } else {
                derive_seed(&[fed.seed(), stream::STAGE1, round as u64])
            };
            self.selection = Some(SelectionAgent::new(models.len(), cfg.stage1.clone(), seed)?);
        }
        let agent = self.selection.as_mut().expect("agent created above");
        agent.reset_episodes();
        let budget = match (fresh, cfg.stage1_initial_rounds) {
            (true, Some(r)) => r,
            _ => cfg.stage1.rounds,
        };
        let trace = agent.train(&env, budget)?;
        Ok((agent.greedy(&env)?, trace.rewards))
    }

    fn weigh(
        &mut self,
        cfg: &FedDrlConfig,
        mask: &[bool],
        trusted: &[ModelParams],
        counts: &[usize],
        round: usize,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let fed = self.fed;
        let env = WeightEnv::new(trusted, counts, &fed.holdout, cfg.stage2.factors)?;
        let warm = cfg.stage2.warm_start;
        let fresh = !warm || !self.weighting.contains_key(mask);
        if fresh {
            let mut parts = vec![fed.seed(), stream::STAGE2, mask_key(mask)];
            if !warm {
                parts.push(round as u64);
            }
            let agent = WeightAgent::new(trusted.len(), cfg.stage2.clone(), derive_seed(&parts))?;
            self.weighting.insert(mask.to_vec(), agent);
        }
        let agent = self.weighting.get_mut(mask).expect("agent inserted above");
        let budget = match (fresh, cfg.stage2_initial_iterations) {
            (true, Some(i)) => i,
            _ => cfg.stage2.iterations,
        };
        let trace = agent.train(&env, budget)?;
        Ok((agent.greedy(&env)?.into_weights(), trace.rewards))
    }
}

/// Builds the federation and runs all configured rounds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentLog> {
    cfg.validate()?;
    let fed = Federation::build(&cfg.world, cfg.seed)?;
    run_on(&fed, cfg)
}

/// Runs `cfg` on an already built federation; `cfg.world` and `cfg.seed`
/// are recorded but must describe `fed`.
pub fn run_on(fed: &Federation, cfg: &ExperimentConfig) -> Result<ExperimentLog> {
    cfg.validate()?;
    let mut runner = Runner::new(fed, cfg.strategy.clone(), cfg.local)?;
    let mut global = fed.initial_global()?;
    let mut log = ExperimentLog {
        config: cfg.clone(),
        sample_counts: fed.sample_counts(),
        rounds: Vec::with_capacity(cfg.rounds),
        stage1_rewards: Vec::new(),
        stage2_rewards: Vec::new(),
        warnings: Vec::new(),
    };
    for round in 1..=cfg.rounds {
        let (next, out) = runner.run_round(&global, round)?;
        log::info!(
            "{} round {round}: global acc {:.4}",
            cfg.strategy.name(),
            out.record.global_acc
        );
        global = next;
        log.rounds.push(out.record);
        log.stage1_rewards.extend(out.stage1_rewards);
        log.stage2_rewards.extend(out.stage2_rewards);
        log.warnings.extend(out.warnings);
    }
    Ok(log)
}

/// Element `t` is the mean of the last `min(t + 1, window)` rewards.
pub fn sliding_avg_reward(rewards: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    Ok((0..rewards.len())
        .map(|t| {
            let start = (t + 1).saturating_sub(window);
            let slice = &rewards[start..=t];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

/// First index from which the sliding average stays within `rel_tol` of
/// its final value. `None` for an empty trace.
pub fn iterations_to_stable(rewards: &[f64], window: usize, rel_tol: f64) -> Result<Option<usize>> {
    let avg = sliding_avg_reward(rewards, window)?;
    let Some(&last) = avg.last() else {
        return Ok(None);
    };
    let band = rel_tol * last.abs();
    let first_stable = avg
        .iter()
        .rposition(|v| (v - last).abs() > band)
        .map_or(0, |i| i + 1);
    Ok(Some(first_stable))
}
