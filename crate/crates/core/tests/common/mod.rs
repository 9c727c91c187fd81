#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use procgate_core::audit::AuditLog;
use procgate_core::perception::{ingest, Telemetry};
use procgate_core::replay::{DriverStatus, ReplayDriver};
use procgate_core::runtime::{Mode, Runtime};
use procgate_core::scenario::{Scenario, ScenarioConfig};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn shutdown_dir() -> PathBuf {
    fixtures().join("shutdown")
}

pub fn scenario_config() -> ScenarioConfig {
    toml::from_str(&fs::read_to_string(shutdown_dir().join("scenario.toml")).unwrap()).unwrap()
}

pub fn scenario() -> Arc<Scenario> {
    Arc::new(Scenario::from_config(scenario_config(), &shutdown_dir()).unwrap())
}

pub fn telemetry(rel: &str) -> Telemetry {
    ingest(&fs::read_to_string(fixtures().join(rel)).unwrap()).unwrap()
}

pub fn stream() -> Telemetry {
    telemetry("shutdown/generator_disconnect.csv")
}

/// Runtime fed until the shutdown procedure is active.
pub fn active_runtime(scenario: Arc<Scenario>) -> Runtime {
    let mut driver = ReplayDriver::new(&scenario, &stream()).unwrap();
    let mut rt = Runtime::new(scenario, AuditLog::new());
    while rt.state().mode == Mode::Idle {
        assert_eq!(driver.pump(&mut rt).unwrap(), DriverStatus::Progressed);
    }
    rt
}

/// Published operational paths, transcribed row by row: (label, coords).
/// "Parameter Tuning" rows carry no coordinates in the table.
pub type PublishedPath = (&'static str, &'static [(&'static str, Option<(f64, f64)>)]);

pub const PUBLISHED_PATHS: [PublishedPath; 10] = [
    (
        "FE1",
        &[
            ("Procedure", Some((198.0, 95.0))),
            ("Coordination Control", Some((217.0, 226.0))),
            ("Thermal Power Setpoint", Some((393.0, 561.0))),
            ("Parameter Tuning", None),
            ("Parameter Tuning End", None),
        ],
    ),
    (
        "FE2",
        &[
            ("Procedure", Some((198.0, 95.0))),
            ("Reactor Power Control", Some((217.0, 180.0))),
            ("Rod Insertion", Some((1576.0, 511.0))),
        ],
    ),
    (
        "FE3",
        &[
            ("Procedure", Some((198.0, 95.0))),
            ("Reactor Overview", Some((209.0, 155.0))),
            ("Steam Temperature", Some((1661.0, 631.0))),
            ("Steam Pressure", Some((1839.0, 525.0))),
            ("Feedwater Flow", Some((1321.0, 506.0))),
        ],
    ),
    (
        "SN1",
        &[
            ("Screen Lookup", Some((1390.0, 87.0))),
            ("Reactor", Some((1393.0, 126.0))),
            ("Conventional Island", Some((1341.0, 237.0))),
            ("I#2# Startup/Shutdown System", Some((363.0, 347.0))),
            ("LBH0AA101", Some((484.0, 333.0))),
            ("LBH0AA201", Some((574.0, 327.0))),
            ("LBH0AA102", Some((761.0, 326.0))),
            ("LBH20AA101", Some((1383.0, 324.0))),
            ("LBH0AA103", Some((1025.0, 234.0))),
            ("LBH20AA101", Some((1157.0, 570.0))),
            ("LBH30AA201", Some((1273.0, 371.0))),
            ("LBH50AA101", Some((1508.0, 577.0))),
        ],
    ),
    (
        "SN2",
        &[
            ("Screen Lookup", Some((1390.0, 87.0))),
            ("Reactor", Some((1393.0, 126.0))),
            ("Conventional Island", Some((1341.0, 237.0))),
            ("I#2# Main Steam System", Some((1214.0, 302.0))),
            ("LBF20AA201", Some((1190.0, 304.0))),
            ("LBF20AA101", Some((1183.0, 310.0))),
            ("LBA20AA101", Some((1398.0, 131.0))),
            ("LBA20AA102", Some((1331.0, 236.0))),
        ],
    ),
    (
        "SN3",
        &[
            ("Screen Lookup", Some((1390.0, 87.0))),
            ("Reactor", Some((1393.0, 126.0))),
            ("Conventional Island", Some((1341.0, 237.0))),
            ("I#2# Startup/Shutdown System", Some((363.0, 347.0))),
            ("LBH07AA101", Some((490.0, 957.0))),
            ("LBH07AA102", Some((582.0, 950.0))),
            ("LBH08AA101", Some((378.0, 442.0))),
            ("LBH08AA102", Some((1383.0, 439.0))),
        ],
    ),
    (
        "SN4",
        &[
            ("Screen Lookup", Some((1390.0, 87.0))),
            ("Reactor", Some((1393.0, 126.0))),
            ("Conventional Island", Some((1341.0, 237.0))),
            ("I#2# Main Steam System", Some((1214.0, 302.0))),
            ("LBF20AA201", Some((1190.0, 304.0))),
        ],
    ),
    (
        "SN5",
        &[
            ("Screen Lookup", Some((1390.0, 87.0))),
            ("Reactor", Some((1393.0, 126.0))),
            ("Conventional Island", Some((1341.0, 237.0))),
            ("I#2# Reactor Main Steam System", Some((1214.0, 302.0))),
            ("LBA20AA101", Some((1398.0, 131.0))),
            ("LBA20AA102", Some((1331.0, 236.0))),
            ("LBF20AA101", Some((1190.0, 304.0))),
            ("LBF20AA202", Some((647.0, 458.0))),
        ],
    ),
    (
        "TL1",
        &[
            ("Top-Left Toggle", Some((143.0, 37.0))),
            ("I#3# Startup/Shutdown System", Some((363.0, 347.0))),
            ("LBH0AA101", Some((484.0, 333.0))),
            ("LBH10AA201", Some((574.0, 327.0))),
            ("LBH09AA101", Some((1025.0, 234.0))),
            ("LBH20AA102", Some((761.0, 326.0))),
            ("LBH20AA201", Some((1383.0, 324.0))),
        ],
    ),
    (
        "TL2",
        &[
            ("Top-Left Toggle", Some((143.0, 37.0))),
            ("I#2# Reactor Main Steam System", Some((1214.0, 302.0))),
            ("LBF20AA102", Some((1199.0, 599.0))),
            ("LBF20AA202", Some((647.0, 458.0))),
        ],
    ),
];

use procgate_core::bayes::{NetworkConfig, NodeConfig};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use std::collections::BTreeMap;

/// Random DAG of 2..=6 nodes with 2 or 3 states each and strictly positive
/// CPT entries. Nodes are listed in shuffled order.
pub fn random_network(seed: u64) -> NetworkConfig {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = rng.random_range(2..=6);
    let cards: Vec<usize> = (0..n).map(|_| rng.random_range(2..=3)).collect();
    let mut nodes = Vec::new();
    for i in 0..n {
        let mut parents: Vec<usize> = (0..i).filter(|_| rng.random_bool(0.5)).collect();
        parents.truncate(3);
        let rows: usize = parents.iter().map(|&p| cards[p]).product();
        let cpt = (0..rows)
            .map(|_| {
                let raw: Vec<f64> = (0..cards[i]).map(|_| rng.random_range(0.05..1.0)).collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|x| x / total).collect()
            })
            .collect();
        nodes.push(NodeConfig {
            name: format!("N{i}"),
            states: (0..cards[i]).map(|s| format!("s{s}")).collect(),
            parents: parents.iter().map(|p| format!("N{p}")).collect(),
            cpt,
            noisy_or: None,
        });
    }
    nodes.shuffle(&mut rng);
    NetworkConfig { nodes }
}

/// Random query over a network: (node, state, evidence on other nodes).
pub fn random_query(config: &NetworkConfig, seed: u64) -> (String, String, BTreeMap<String, String>) {
    let mut rng = StdRng::seed_from_u64(seed ^ 0x9e37_79b9);
    let q = &config.nodes[rng.random_range(0..config.nodes.len())];
    let state = q.states[rng.random_range(0..q.states.len())].clone();
    let mut evidence = BTreeMap::new();
    for n in config.nodes.iter().filter(|n| n.name != q.name) {
        if rng.random_bool(0.4) {
            evidence.insert(n.name.clone(), n.states[rng.random_range(0..n.states.len())].clone());
        }
    }
    (q.name.clone(), state, evidence)
}

/// Posterior by walking every joint assignment in config order and
/// multiplying CPT entries looked up straight from the config rows.
pub fn brute_force_posterior(
    config: &NetworkConfig,
    node: &str,
    state: &str,
    evidence: &BTreeMap<String, String>,
) -> f64 {
    let idx = |name: &str| config.nodes.iter().position(|n| n.name == name).unwrap();
    let cards: Vec<usize> = config.nodes.iter().map(|n| n.states.len()).collect();
    let total: usize = cards.iter().product();
    let (mut num, mut den) = (0.0, 0.0);
    let mut a = vec![0usize; cards.len()];
    for code in 0..total {
        let mut c = code;
        for (i, k) in cards.iter().enumerate() {
            a[i] = c % k;
            c /= k;
        }
        if evidence
            .iter()
            .any(|(n, s)| config.nodes[idx(n)].states[a[idx(n)]] != *s)
        {
            continue;
        }
        let mut p = 1.0;
        for (i, n) in config.nodes.iter().enumerate() {
            let mut row = 0;
            for par in &n.parents {
                let j = idx(par);
                row = row * cards[j] + a[j];
            }
            p *= n.cpt[row][a[i]];
        }
        den += p;
        let q = idx(node);
        if config.nodes[q].states[a[q]] == state {
            num += p;
        }
    }
    num / den
}
