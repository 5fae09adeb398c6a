//! Client behaviors and local training.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::{evaluate, Dataset};
use crate::error::{Error, Result};
use crate::nn::{init_net, loss_and_grad, sgd_step_in_place, ModelParams};
use crate::seed;

/// Width of the accepted accuracy band below a low-quality client's cap
/// when no explicit floor is configured.
pub const DEFAULT_LOW_QUALITY_BAND: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Behavior {
    Honest,
    /// Attack type 1: uploads the initialized model every round.
    InitUpload,
    /// Attack type 2: trains on data where `foreign_ratio` of the samples
    /// come from foreign clusters with random labels.
    PoisonedData { foreign_ratio: f64 },
    /// Attack type 3: runs `payload` on odd-phase rounds, honest otherwise.
    Alternating { period: usize, payload: Box<Behavior> },
    /// Honest participant whose model is degraded by permuting the labels of
    /// a `label_permute_ratio` share of the classes and capping local epochs
    /// at one. Measured accuracy should land in `[accuracy_floor, accuracy_cap]`.
    LowQuality {
        accuracy_cap: f64,
        label_permute_ratio: f64,
        #[serde(default)]
        accuracy_floor: Option<f64>,
    },
}

static HONEST: Behavior = Behavior::Honest;

impl Behavior {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        match self {
            Behavior::Honest | Behavior::InitUpload => Ok(()),
            Behavior::PoisonedData { foreign_ratio } => in_unit("foreign_ratio", *foreign_ratio),
            Behavior::Alternating { period, payload } => {
                if *period == 0 {
                    return Err(Error::InvalidConfig("alternating period must be positive".into()));
                }
                match payload.as_ref() {
                    Behavior::InitUpload | Behavior::PoisonedData { .. } => payload.validate(),
                    other => Err(Error::InvalidConfig(format!(
                        "alternating payload must be an attack behavior, got {other:?}"
                    ))),
                }
            }
            Behavior::LowQuality {
                accuracy_cap,
                label_permute_ratio,
                accuracy_floor,
            } => {
                if !(*accuracy_cap > 0.0 && *accuracy_cap < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "accuracy_cap must be in (0, 1), got {accuracy_cap}"
                    )));
                }
                in_unit("label_permute_ratio", *label_permute_ratio)?;
                if let Some(floor) = accuracy_floor {
                    in_unit("accuracy_floor", *floor)?;
                    if floor > accuracy_cap {
                        return Err(Error::InvalidConfig(format!(
                            "accuracy_floor {floor} exceeds accuracy_cap {accuracy_cap}"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// The behavior in effect for a 1-based communication round.
    pub fn active(&self, round: usize) -> &Behavior {
        match self {
            Behavior::Alternating { period, payload } => {
                if (round % period) % 2 == 1 {
                    payload
                } else {
                    &HONEST
                }
            }
            other => other,
        }
    }

    pub fn is_honest(&self) -> bool {
        matches!(self, Behavior::Honest)
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            Behavior::Honest => "honest",
            Behavior::InitUpload => "type1",
            Behavior::PoisonedData { .. } => "type2",
            Behavior::Alternating { .. } => "type3",
            Behavior::LowQuality { .. } => "lowq",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientProfile {
    /// 1-based client id.
    pub id: usize,
    pub partition: Vec<usize>,
    pub sample_count: usize,
    pub behavior: Behavior,
    /// Fixed per client; drives the initialized upload and label permutation.
    pub behavior_seed: u64,
}

impl ClientProfile {
    pub fn new(id: usize, partition: Vec<usize>, behavior: Behavior, behavior_seed: u64) -> Result<Self> {
        if partition.is_empty() {
            return Err(Error::Empty("client partition"));
        }
        behavior.validate()?;
        Ok(Self {
            id,
            sample_count: partition.len(),
            partition,
            behavior,
            behavior_seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainOpts {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub prox_mu: f64,
}

impl Default for LocalTrainOpts {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 16,
            lr: 0.05,
            prox_mu: 0.0,
        }
    }
}

/// Class relabelling applied by a low-quality client: a seeded subset of
/// `round(ratio * n_classes)` classes is rotated by one position.
pub fn label_permutation(n_classes: usize, ratio: f64, seed: u64) -> Vec<usize> {
    let mut map: Vec<usize> = (0..n_classes).collect();
    let m = (ratio * n_classes as f64).round() as usize;
    if m < 2 {
        return map;
    }
    let mut classes: Vec<usize> = (0..n_classes).collect();
    classes.shuffle(&mut seed::rng(seed));
    let chosen = &classes[..m];
    for (i, &c) in chosen.iter().enumerate() {
        map[c] = chosen[(i + 1) % m];
    }
    map
}

/// The rows a client actually trains on this round.
fn training_rows(
    profile: &ClientProfile,
    behavior: &Behavior,
    data: &Dataset,
    foreign: Option<&Dataset>,
    rng: &mut seed::SimRng,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(profile.partition.len());
    let mut ys = Vec::with_capacity(profile.partition.len());
    for &i in &profile.partition {
        if i >= data.len() {
            return Err(Error::InvalidArgument(format!(
                "client {} partition index {i} out of range",
                profile.id
            )));
        }
        xs.push(data.row(i).to_vec());
        ys.push(data.labels()[i]);
    }
    match behavior {
        Behavior::PoisonedData { foreign_ratio } => {
            let pool = foreign.ok_or_else(|| {
                Error::InvalidArgument(format!("client {} poisons data but no foreign pool", profile.id))
            })?;
            let n_replace = (xs.len() as f64 * foreign_ratio).round() as usize;
            let mut slots: Vec<usize> = (0..xs.len()).collect();
            slots.shuffle(rng);
            for &slot in &slots[..n_replace] {
                let j = rng.random_range(0..pool.len());
                xs[slot] = pool.row(j).to_vec();
                ys[slot] = rng.random_range(0..data.n_classes());
            }
        }
        Behavior::LowQuality {
            label_permute_ratio, ..
        } => {
            let map = label_permutation(data.n_classes(), *label_permute_ratio, profile.behavior_seed);
            ys.iter_mut().for_each(|y| *y = map[*y]);
        }
        _ => {}
    }
    Ok((xs, ys))
}

/// Minibatch SGD on the client's partition starting from `global`.
///
/// With `prox_mu > 0` each gradient gains `prox_mu * (theta - global)`.
/// Poisoning and low-quality degradation for the active behavior of
/// `round` are applied to the training rows here.
pub fn local_train(
    profile: &ClientProfile,
    global: &ModelParams,
    data: &Dataset,
    foreign: Option<&Dataset>,
    opts: &LocalTrainOpts,
    round: usize,
    seed: u64,
) -> Result<ModelParams> {
    if profile.partition.is_empty() {
        return Err(Error::Empty("client partition"));
    }
    if opts.batch_size == 0 || !(opts.lr.is_finite() && opts.lr >= 0.0) || opts.prox_mu < 0.0 {
        return Err(Error::InvalidArgument(format!("bad local training options {opts:?}")));
    }
    let behavior = profile.behavior.active(round);
    let mut rng = seed::rng(seed);
    let (xs, ys) = training_rows(profile, behavior, data, foreign, &mut rng)?;
    let epochs = match behavior {
        Behavior::LowQuality { .. } => opts.epochs.min(1),
        _ => opts.epochs,
    };

    let mut params = global.clone();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(opts.batch_size) {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<usize> = batch.iter().map(|&i| ys[i]).collect();
            let (_, mut grads) = loss_and_grad(&params, &bx, &by)?;
            if opts.prox_mu > 0.0 {
                grads
                    .values
                    .iter_mut()
                    .zip(params.values.iter().zip(&global.values))
                    .for_each(|(g, (p, g0))| *g += opts.prox_mu * (p - g0));
            }
            sgd_step_in_place(&mut params, &grads, opts.lr).map_err(|e| {
                Error::NonFinite(format!(
                    "client {} local training diverged in epoch {epoch} of round {round}: {e}",
                    profile.id
                ))
            })?;
        }
    }
    Ok(params)
}

/// Emitted when a low-quality client's measured accuracy leaves its band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandWarning {
    pub client_id: usize,
    pub round: usize,
    pub accuracy: f64,
    pub floor: f64,
    pub cap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Upload {
    pub params: ModelParams,
    pub warning: Option<BandWarning>,
}

/// Turns a locally trained model into the model the client uploads.
pub fn apply_behavior(
    profile: &ClientProfile,
    trained: ModelParams,
    round: usize,
    rng_seed: u64,
    holdout: &Dataset,
) -> Result<Upload> {
    match profile.behavior.active(round) {
        Behavior::Honest | Behavior::PoisonedData { .. } => Ok(Upload {
            params: trained,
            warning: None,
        }),
        Behavior::InitUpload => Ok(Upload {
            params: init_net(&trained.spec, rng_seed)?,
            warning: None,
        }),
        Behavior::LowQuality {
            accuracy_cap,
            accuracy_floor,
            ..
        } => {
            let accuracy = evaluate(&trained, holdout)?;
            let floor = accuracy_floor.unwrap_or((accuracy_cap - DEFAULT_LOW_QUALITY_BAND).max(0.0));
            let warning = (accuracy > *accuracy_cap || accuracy < floor).then(|| {
                log::warn!(
                    "client {} round {round}: low-quality accuracy {accuracy:.4} outside [{floor:.2}, {accuracy_cap:.2}]",
                    profile.id
                );
                BandWarning {
                    client_id: profile.id,
                    round,
                    accuracy,
                    floor,
                    cap: *accuracy_cap,
                }
            });
            Ok(Upload {
                params: trained,
                warning,
            })
        }
        Behavior::Alternating { .. } => unreachable!("active() resolves alternation"),
    }
}
