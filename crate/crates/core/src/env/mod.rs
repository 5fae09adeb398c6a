//! The federated world: data, clients, local training and fusion.

pub mod aggregate;
pub mod client;
pub mod data;
pub mod partition;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use aggregate::{check_simplex, proportional_weights, uniform_weights, weighted_aggregate};
pub use client::{
    apply_behavior, local_train, BandWarning, Behavior, ClientProfile, LocalTrainOpts, Upload,
};
pub use data::{evaluate, gen_blobs, Dataset};
pub use partition::dirichlet_partition;

use crate::error::{Error, Result};
use crate::nn::{init_net, ModelParams, NetSpec, OutputHead};
use crate::seed::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    pub spread: f64,
    /// Share of the generated data reserved on the server. Half of it is the
    /// holdout the agents are rewarded on, half is the test set metrics are
    /// reported on.
    pub holdout_fraction: f64,
    pub n_clients: usize,
    pub alpha: f64,
    /// Overrides the partition seed derived from the experiment seed.
    pub partition_seed: Option<u64>,
    pub task_hidden: Vec<usize>,
    /// `(1-based client id, behavior)`; unlisted clients are honest.
    pub behaviors: Vec<(usize, Behavior)>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_per_class: 500,
            dim: 2,
            spread: 0.35,
            holdout_fraction: 0.2,
            n_clients: 5,
            alpha: 1.0,
            partition_seed: None,
            task_hidden: vec![16],
            behaviors: Vec::new(),
        }
    }
}

/// Everything a run needs that does not depend on the aggregation strategy.
#[derive(Debug, Clone)]
pub struct Federation {
    pub pool: Dataset,
    pub holdout: Dataset,
    pub test: Dataset,
    pub foreign: Dataset,
    pub clients: Vec<ClientProfile>,
    pub task_spec: NetSpec,
    seed: u64,
}

impl Federation {
    pub fn build(cfg: &WorldConfig, experiment_seed: u64) -> Result<Self> {
        if !(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "holdout_fraction must be in (0, 1), got {}",
                cfg.holdout_fraction
            )));
        }
        for (id, b) in &cfg.behaviors {
            if *id == 0 || *id > cfg.n_clients {
                return Err(Error::InvalidConfig(format!(
                    "client id {id} out of range 1..={}",
                    cfg.n_clients
                )));
            }
            b.validate()?;
        }
        let data_seed = derive_seed(&[experiment_seed, stream::DATASET]);
        let all = gen_blobs(cfg.n_classes, cfg.n_per_class, cfg.dim, cfg.spread, data_seed)?;
        let (pool_idx, server_idx) = partition::stratified_split(
            all.labels(),
            cfg.holdout_fraction,
            derive_seed(&[experiment_seed, stream::HOLDOUT]),
        )?;
        let server = all.subset(&server_idx)?;
        let (holdout_idx, test_idx) = partition::stratified_split(
            server.labels(),
            0.5,
            derive_seed(&[experiment_seed, stream::HOLDOUT, 1]),
        )?;
        let holdout = server.subset(&holdout_idx)?;
        let test = server.subset(&test_idx)?;
        if holdout.is_empty() || test.is_empty() {
            return Err(Error::InvalidConfig("server holdout is empty".into()));
        }
        let pool = all.subset(&pool_idx)?;

        let foreign = data::gen_foreign(
            cfg.n_classes,
            cfg.n_classes,
            cfg.n_classes * cfg.n_per_class,
            cfg.dim,
            cfg.spread,
            data_seed,
            derive_seed(&[experiment_seed, stream::FOREIGN]),
        )?;

        let partition_seed = cfg
            .partition_seed
            .unwrap_or_else(|| derive_seed(&[experiment_seed, stream::PARTITION]));
        let parts = dirichlet_partition(pool.labels(), cfg.n_clients, cfg.alpha, partition_seed)?;
        let clients = parts
            .into_iter()
            .enumerate()
            .map(|(i, part)| {
                let id = i + 1;
                let behavior = cfg
                    .behaviors
                    .iter()
                    .rev()
                    .find(|(bid, _)| *bid == id)
                    .map_or(Behavior::Honest, |(_, b)| b.clone());
                ClientProfile::new(
                    id,
                    part,
                    behavior,
                    derive_seed(&[experiment_seed, stream::BEHAVIOR, id as u64]),
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let task_spec = NetSpec::mlp(cfg.dim, &cfg.task_hidden, cfg.n_classes, OutputHead::Softmax)?;
        Ok(Self {
            pool,
            holdout,
            test,
            foreign,
            clients,
            task_spec,
            seed: experiment_seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.clients.iter().map(|c| c.sample_count).collect()
    }

    pub fn initial_global(&self) -> Result<ModelParams> {
        init_net(&self.task_spec, derive_seed(&[self.seed, stream::GLOBAL_INIT]))
    }

    /// Local training plus behavior for every client in one round.
    ///
    /// Clients run in parallel; each uses a seed derived from
    /// `(experiment seed, client id, round)`, so the result does not depend
    /// on scheduling.
    pub fn client_round(
        &self,
        global: &ModelParams,
        opts: &LocalTrainOpts,
        round: usize,
    ) -> Result<Vec<Upload>> {
        self.clients
            .par_iter()
            .map(|c| {
                let trained = if matches!(c.behavior.active(round), Behavior::InitUpload) {
                    // the upload is replaced wholesale; skip the wasted training
                    global.clone()
                } else {
                    let s = derive_seed(&[self.seed, stream::LOCAL_TRAIN, c.id as u64, round as u64]);
                    local_train(c, global, &self.pool, Some(&self.foreign), opts, round, s)?
                };
                apply_behavior(c, trained, round, c.behavior_seed, &self.holdout)
            })
            .collect()
    }
}
