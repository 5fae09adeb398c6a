//! Built-in scenarios: attack layouts for 5, 10 and 15 clients, low-quality
//! layouts, hybrid layouts and a 5-client hybrid sized for a laptop.
//!
//! All presets share the desk world: near-IID partitions (`alpha = 100`),
//! 40% of the data on the server and local lr 0.03.

use feddrl::orchestrator::FedDrlConfig;
use feddrl::stage1::Stage1Config;

use crate::config::{
    BehaviorKind, ClientEntry, DatasetSection, OutputSection, PartitionSection, RunSection, ScenarioConfig,
    StrategyEntry, StrategyKind, DEFAULT_FEDPROX_MU,
};

pub const DESK_ALPHA: f64 = 100.0;
pub const DESK_HOLDOUT: f64 = 0.4;
pub const DESK_LOCAL_LR: f64 = 0.03;

/// FedDRL settings used by every preset.
pub fn desk_feddrl() -> FedDrlConfig {
    let mut cfg = FedDrlConfig {
        stage1: Stage1Config {
            lr_actor: 3e-4,
            rounds: 100,
            ..Stage1Config::default()
        },
        stage1_initial_rounds: Some(600),
        stage2_initial_iterations: Some(1000),
        ..FedDrlConfig::default()
    };
    cfg.stage2.iterations = 200;
    cfg
}

/// Base scenario shared by the presets, with no behavior overrides.
pub fn desk_scenario(n_clients: usize) -> ScenarioConfig {
    ScenarioConfig {
        dataset: DatasetSection {
            holdout_fraction: DESK_HOLDOUT,
            ..DatasetSection::default()
        },
        partition: PartitionSection {
            n_clients,
            alpha: DESK_ALPHA,
            seed: None,
        },
        run: RunSection {
            rounds: 30,
            lr: DESK_LOCAL_LR,
            ..RunSection::default()
        },
        output: OutputSection::default(),
        clients: Vec::new(),
        strategy: vec![
            StrategyEntry::new(StrategyKind::Fedavg),
            StrategyEntry::fedprox(DEFAULT_FEDPROX_MU),
            StrategyEntry::feddrl(&desk_feddrl()),
        ],
    }
}

fn lowq(id: usize, floor: Option<f64>) -> ClientEntry {
    ClientEntry {
        floor,
        ..ClientEntry::new(id, BehaviorKind::Lowq)
    }
}

fn attack_ids(n: usize) -> &'static [usize] {
    match n {
        5 => &[1],
        10 => &[1, 6],
        _ => &[1, 6, 11],
    }
}

fn lowq_ids(n: usize) -> &'static [usize] {
    match n {
        5 => &[1],
        10 => &[1, 5],
        _ => &[1, 5, 10],
    }
}

pub struct Preset {
    pub name: String,
    pub description: String,
    pub config: ScenarioConfig,
}

pub fn all() -> Vec<Preset> {
    let mut out = Vec::new();
    for n in [5, 10, 15] {
        for kind in [BehaviorKind::Type1, BehaviorKind::Type2, BehaviorKind::Type3] {
            let tag = match kind {
                BehaviorKind::Type1 => "type1",
                BehaviorKind::Type2 => "type2",
                _ => "type3",
            };
            let ids = attack_ids(n);
            let mut config = desk_scenario(n);
            config.clients = ids.iter().map(|&id| ClientEntry::new(id, kind)).collect();
            out.push(Preset {
                name: format!("table1-c{n}-{tag}"),
                description: format!("{n} clients, attack {tag} on clients {ids:?}"),
                config,
            });
        }
    }
    for n in [5, 10, 15] {
        let ids = lowq_ids(n);
        let mut config = desk_scenario(n);
        config.clients = ids.iter().map(|&id| lowq(id, None)).collect();
        out.push(Preset {
            name: format!("table3-c{n}-lowq"),
            description: format!("{n} clients, low-quality models on clients {ids:?}"),
            config,
        });
    }
    for (n, type3) in [(10, 10), (15, 11)] {
        let mut config = desk_scenario(n);
        config.clients = vec![
            ClientEntry::new(1, BehaviorKind::Type1),
            lowq(6, Some(0.45)),
            ClientEntry::new(type3, BehaviorKind::Type3),
        ];
        out.push(Preset {
            name: format!("table4-c{n}-hybrid"),
            description: format!("{n} clients: type1 on 1, low quality on 6, type3 on {type3}"),
            config,
        });
    }
    let mut config = desk_scenario(5);
    config.clients = vec![
        ClientEntry::new(1, BehaviorKind::Type1),
        lowq(3, None),
        ClientEntry::new(5, BehaviorKind::Type3),
    ];
    out.push(Preset {
        name: "hybrid-c5".into(),
        description: "5 clients: type1 on 1, low quality on 3, type3 on 5".into(),
        config,
    });
    out.push(Preset {
        name: "honest-c5".into(),
        description: "5 honest clients; accuracy ceiling for the 5-client presets".into(),
        config: desk_scenario(5),
    });
    out
}

pub fn names() -> Vec<String> {
    all().into_iter().map(|p| p.name).collect()
}

pub fn get(name: &str) -> Option<ScenarioConfig> {
    all().into_iter().find(|p| p.name == name).map(|p| p.config)
}
