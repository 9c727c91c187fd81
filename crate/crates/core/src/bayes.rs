//! Small discrete Bayesian networks with exact inference by enumeration
//! of the full joint distribution.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const ROW_TOLERANCE: f64 = 1e-9;
pub const MAX_NODES: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum BayesError {
    #[error("cyclic topology through node `{0}`")]
    CyclicTopology(String),
    #[error("node `{node}`: CPT row {row} sums to {sum}")]
    UnnormalizedCpt { node: String, row: usize, sum: f64 },
    #[error("node `{node}`: {reason}")]
    BadShape { node: String, reason: String },
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` has no state `{state}`")]
    UnknownState { node: String, state: String },
    #[error("evidence has zero probability")]
    ImpossibleEvidence,
    #[error("network has {0} nodes; enumeration supports at most {MAX_NODES}")]
    TooLarge(usize),
    #[error("invalid network config: {0}")]
    Config(String),
}

/// Noisy-OR description of a binary child: each parent state carries the
/// probability that it alone activates the child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyOr {
    pub leak: f64,
    pub weights: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub name: String,
    pub states: Vec<String>,
    #[serde(default)]
    pub parents: Vec<String>,
    /// One row per parent-state combination, first parent varying slowest.
    #[serde(default)]
    pub cpt: Vec<Vec<f64>>,
    #[serde(default)]
    pub noisy_or: Option<NoisyOr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub nodes: Vec<NodeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BayesNode {
    pub name: String,
    pub states: Vec<String>,
    pub parents: Vec<String>,
    pub cpt: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct BayesNet {
    /// Nodes in topological order.
    nodes: Vec<BayesNode>,
    index: HashMap<String, usize>,
    // parent indices and row strides for each node
    parent_ix: Vec<Vec<usize>>,
    strides: Vec<Vec<usize>>,
}

fn expand_noisy_or(
    node: &NodeConfig,
    params: &NoisyOr,
    cards: &HashMap<&str, usize>,
) -> Result<Vec<Vec<f64>>, BayesError> {
    let bad = |reason: String| BayesError::BadShape {
        node: node.name.clone(),
        reason,
    };
    if node.states.len() != 2 {
        return Err(bad("noisy-or requires a binary node".into()));
    }
    let mut weights = Vec::with_capacity(node.parents.len());
    for p in &node.parents {
        let card = *cards
            .get(p.as_str())
            .ok_or_else(|| BayesError::UnknownNode(p.clone()))?;
        let w = params
            .weights
            .get(p)
            .ok_or_else(|| bad(format!("noisy-or has no weights for parent `{p}`")))?;
        if w.len() != card {
            return Err(bad(format!("noisy-or weights for `{p}` need {card} entries")));
        }
        if w.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(bad(format!("noisy-or weights for `{p}` must lie in [0, 1]")));
        }
        weights.push(w);
    }
    if let Some(extra) = params.weights.keys().find(|k| !node.parents.contains(k)) {
        return Err(bad(format!("noisy-or weight for non-parent `{extra}`")));
    }
    let rows: usize = weights.iter().map(|w| w.len()).product();
    let mut cpt = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut rem = r;
        let mut off = 1.0 - params.leak;
        for w in weights.iter().rev() {
            off *= 1.0 - w[rem % w.len()];
            rem /= w.len();
        }
        cpt.push(vec![off, 1.0 - off]);
    }
    Ok(cpt)
}

impl BayesNet {
    pub fn build(config: &NetworkConfig) -> Result<Self, BayesError> {
        if config.nodes.len() > MAX_NODES {
            return Err(BayesError::TooLarge(config.nodes.len()));
        }
        let mut by_name: HashMap<&str, &NodeConfig> = HashMap::new();
        for n in &config.nodes {
            if by_name.insert(n.name.as_str(), n).is_some() {
                return Err(BayesError::DuplicateNode(n.name.clone()));
            }
            if n.states.is_empty() {
                return Err(BayesError::BadShape {
                    node: n.name.clone(),
                    reason: "no states".into(),
                });
            }
        }
        for n in &config.nodes {
            for p in &n.parents {
                if !by_name.contains_key(p.as_str()) {
                    return Err(BayesError::UnknownNode(p.clone()));
                }
            }
        }

        // Kahn's algorithm, ties resolved by declaration order.
        let mut indegree: Vec<usize> = config.nodes.iter().map(|n| n.parents.len()).collect();
        let mut order = Vec::with_capacity(config.nodes.len());
        let mut placed = vec![false; config.nodes.len()];
        while order.len() < config.nodes.len() {
            let Some(next) = (0..config.nodes.len()).find(|&i| !placed[i] && indegree[i] == 0) else {
                let stuck = (0..config.nodes.len()).find(|&i| !placed[i]).unwrap();
                return Err(BayesError::CyclicTopology(config.nodes[stuck].name.clone()));
            };
            placed[next] = true;
            order.push(next);
            let name = &config.nodes[next].name;
            for (i, n) in config.nodes.iter().enumerate() {
                indegree[i] -= n.parents.iter().filter(|p| *p == name).count();
            }
        }

        let cards: HashMap<&str, usize> = config.nodes.iter().map(|n| (n.name.as_str(), n.states.len())).collect();
        let mut nodes = Vec::with_capacity(order.len());
        for &i in &order {
            let n = &config.nodes[i];
            let cpt = match &n.noisy_or {
                Some(params) if n.cpt.is_empty() => expand_noisy_or(n, params, &cards)?,
                Some(_) => {
                    return Err(BayesError::BadShape {
                        node: n.name.clone(),
                        reason: "give either cpt rows or noisy_or, not both".into(),
                    })
                }
                None => n.cpt.clone(),
            };
            let rows: usize = n.parents.iter().map(|p| cards[p.as_str()]).product();
            if cpt.len() != rows {
                return Err(BayesError::BadShape {
                    node: n.name.clone(),
                    reason: format!("expected {rows} CPT rows, found {}", cpt.len()),
                });
            }
            for (r, row) in cpt.iter().enumerate() {
                if row.len() != n.states.len() {
                    return Err(BayesError::BadShape {
                        node: n.name.clone(),
                        reason: format!("row {r} has {} entries for {} states", row.len(), n.states.len()),
                    });
                }
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > ROW_TOLERANCE {
                    return Err(BayesError::UnnormalizedCpt {
                        node: n.name.clone(),
                        row: r,
                        sum,
                    });
                }
            }
            nodes.push(BayesNode {
                name: n.name.clone(),
                states: n.states.clone(),
                parents: n.parents.clone(),
                cpt,
            });
        }

        let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, n)| (n.name.clone(), i)).collect();
        let parent_ix: Vec<Vec<usize>> = nodes
            .iter()
            .map(|n| n.parents.iter().map(|p| index[p]).collect())
            .collect();
        let strides = parent_ix
            .iter()
            .map(|ps| {
                let mut s = vec![1; ps.len()];
                for k in (0..ps.len().saturating_sub(1)).rev() {
                    s[k] = s[k + 1] * nodes[ps[k + 1]].states.len();
                }
                s
            })
            .collect();
        Ok(Self {
            nodes,
            index,
            parent_ix,
            strides,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, BayesError> {
        let cfg: NetworkConfig = toml::from_str(text).map_err(|e| BayesError::Config(e.to_string()))?;
        Self::build(&cfg)
    }

    pub fn nodes(&self) -> &[BayesNode] {
        &self.nodes
    }

    pub fn node(&self, name: &str) -> Option<&BayesNode> {
        self.index.get(name).map(|&i| &self.nodes[i])
    }

    pub fn roots(&self) -> impl Iterator<Item = &BayesNode> {
        self.nodes.iter().filter(|n| n.parents.is_empty())
    }

    pub fn state_index(&self, node: &str, state: &str) -> Result<(usize, usize), BayesError> {
        let &ni = self
            .index
            .get(node)
            .ok_or_else(|| BayesError::UnknownNode(node.to_string()))?;
        let si = self.nodes[ni]
            .states
            .iter()
            .position(|s| s == state)
            .ok_or_else(|| BayesError::UnknownState {
                node: node.to_string(),
                state: state.to_string(),
            })?;
        Ok((ni, si))
    }

    fn resolve_evidence(&self, evidence: &BTreeMap<String, String>) -> Result<Vec<Option<usize>>, BayesError> {
        let mut fixed = vec![None; self.nodes.len()];
        for (node, state) in evidence {
            let (ni, si) = self.state_index(node, state)?;
            fixed[ni] = Some(si);
        }
        Ok(fixed)
    }

    /// `P(node = state | evidence)`.
    pub fn posterior(&self, node: &str, state: &str, evidence: &BTreeMap<String, String>) -> Result<f64, BayesError> {
        let (qn, qs) = self.state_index(node, state)?;
        let fixed = self.resolve_evidence(evidence)?;
        let mut assignment = vec![0usize; self.nodes.len()];
        let (mut joint_q, mut joint_e) = (0.0, 0.0);
        self.enumerate(0, 1.0, &fixed, &mut assignment, &mut |w, a| {
            joint_e += w;
            if a[qn] == qs {
                joint_q += w;
            }
        });
        if joint_e <= 0.0 {
            return Err(BayesError::ImpossibleEvidence);
        }
        Ok((joint_q / joint_e).clamp(0.0, 1.0))
    }

    fn enumerate(
        &self,
        depth: usize,
        weight: f64,
        fixed: &[Option<usize>],
        assignment: &mut [usize],
        visit: &mut dyn FnMut(f64, &[usize]),
    ) {
        if depth == self.nodes.len() {
            visit(weight, assignment);
            return;
        }
        if weight == 0.0 {
            return;
        }
        let row = self.parent_ix[depth]
            .iter()
            .zip(&self.strides[depth])
            .map(|(&p, &s)| assignment[p] * s)
            .sum::<usize>();
        let probs = &self.nodes[depth].cpt[row];
        match fixed[depth] {
            Some(s) => {
                assignment[depth] = s;
                self.enumerate(depth + 1, weight * probs[s], fixed, assignment, visit);
            }
            None => {
                for (s, &p) in probs.iter().enumerate() {
                    assignment[depth] = s;
                    self.enumerate(depth + 1, weight * p, fixed, assignment, visit);
                }
            }
        }
    }
}
