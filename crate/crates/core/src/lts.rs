//! Interleaving semantics of an elaborated system and breadth-first
//! construction of its reachable labeled transition system.

use std::ops::Range;

use indexmap::IndexSet;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::*;

pub const DEFAULT_MAX_CONFIGS: usize = 1_000_000;

/// Number of configurations whose successors are computed in one batch.
const BATCH: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct TransitionLabel {
    pub agent: AgentId,
    pub server: ServerId,
    pub action: ActionId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub source: usize,
    pub label: TransitionLabel,
    pub target: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExplorationLimits {
    pub max_configs: Option<usize>,
    pub max_edges: Option<usize>,
}

impl Default for ExplorationLimits {
    fn default() -> Self {
        Self { max_configs: Some(DEFAULT_MAX_CONFIGS), max_edges: None }
    }
}

impl ExplorationLimits {
    pub fn unlimited() -> Self {
        Self { max_configs: None, max_edges: None }
    }

    pub fn configs(max: usize) -> Self {
        assert!(max > 0, "exploration limits must be positive");
        Self { max_configs: Some(max), max_edges: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("action {0} is not enabled in this configuration")]
    NotEnabled(RuleId),
}

/// Reachable configurations (index 0 is initial, indices follow BFS
/// discovery order) and the transitions between them.
#[derive(Debug, Clone)]
pub struct Lts {
    configs: IndexSet<Configuration>,
    edges: Vec<Edge>,
    complete: bool,
    /// Configurations `0..expanded` have all their successors recorded.
    expanded: usize,
    out_ranges: Vec<Range<usize>>,
    /// Edge through which each configuration was first discovered.
    parent: Vec<Option<usize>>,
}

impl Lts {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn config(&self, index: usize) -> &Configuration {
        &self.configs[index]
    }

    pub fn configs(&self) -> impl ExactSizeIterator<Item = &Configuration> {
        self.configs.iter()
    }

    pub fn index_of(&self, cfg: &Configuration) -> Option<usize> {
        self.configs.get_index_of(cfg)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn out_edges(&self, source: usize) -> &[Edge] {
        &self.edges[self.out_ranges[source].clone()]
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    /// Shortest path from the initial configuration, as (source, label) steps.
    pub fn path_to(&self, target: usize) -> Vec<(usize, TransitionLabel)> {
        let mut steps = Vec::new();
        let mut cur = target;
        while let Some(e) = self.parent[cur] {
            let edge = &self.edges[e];
            steps.push((edge.source, edge.label));
            cur = edge.source;
        }
        steps.reverse();
        steps
    }

    pub fn stats(&self) -> LtsStats {
        stats(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LtsStats {
    pub configs: usize,
    pub edges: usize,
    /// Fully explored configurations with no enabled action.
    pub terminal: usize,
    pub complete: bool,
}

pub fn stats(lts: &Lts) -> LtsStats {
    let terminal = (0..lts.expanded).filter(|&c| lts.out_ranges[c].is_empty()).count();
    LtsStats { configs: lts.len(), edges: lts.edges.len(), terminal, complete: lts.complete }
}

/// Ground actions enabled at `cfg`, in canonical order (server, rule, agent).
pub fn enabled_actions(cfg: &Configuration, sys: &ElaboratedSystem) -> Vec<ActionId> {
    let mut out = Vec::new();
    for (a, slot) in cfg.agent_slots.iter().enumerate() {
        let AgentSlot::Pending(msg) = slot else { continue };
        let state = cfg.server_states[msg.server.index()];
        out.extend(
            sys.acceptors(msg.server, AgentId::from(a), msg.service)
                .iter()
                .copied()
                .filter(|&id| sys.action(id).in_state == state),
        );
    }
    out.sort_unstable();
    out
}

/// Fires `action` at `cfg`: the owning server takes the output state and the
/// consumed agent carries the output message (or terminates).
pub fn step(cfg: &Configuration, action: &GroundAction) -> Result<Configuration, StepError> {
    let enabled = cfg.server_states[action.server.index()] == action.in_state
        && cfg.agent_slots[action.agent.index()]
            == AgentSlot::Pending(Message { server: action.server, service: action.service });
    if !enabled {
        return Err(StepError::NotEnabled(action.id.clone()));
    }
    let mut next = cfg.clone();
    next.server_states[action.server.index()] = action.out_state;
    next.agent_slots[action.agent.index()] = match action.out_message {
        Some(m) => AgentSlot::Pending(m),
        None => AgentSlot::Terminated,
    };
    Ok(next)
}

fn successors(cfg: &Configuration, sys: &ElaboratedSystem) -> Vec<(TransitionLabel, Configuration)> {
    enabled_actions(cfg, sys)
        .into_iter()
        .map(|id| {
            let a = sys.action(id);
            let next = step(cfg, a).expect("enabled action fires");
            (TransitionLabel { agent: a.agent, server: a.server, action: id }, next)
        })
        .collect()
}

/// Sequential breadth-first exploration.
pub fn explore(sys: &ElaboratedSystem, limits: ExplorationLimits) -> Lts {
    explore_with_jobs(sys, limits, 1)
}

/// Breadth-first exploration computing successors on up to `jobs` worker
/// threads. The result is identical for every `jobs` value.
pub fn explore_with_jobs(sys: &ElaboratedSystem, limits: ExplorationLimits, jobs: usize) -> Lts {
    let pool = (jobs > 1).then(|| rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool"));
    let mut configs = IndexSet::new();
    configs.insert(sys.initial.clone());
    let mut parent = vec![None];
    let mut edges: Vec<Edge> = Vec::new();
    let mut complete = true;
    let mut expanded = 0usize;

    'explore: while expanded < configs.len() {
        let batch_end = configs.len().min(expanded + BATCH);
        let batch: Vec<&Configuration> = (expanded..batch_end).map(|i| &configs[i]).collect();
        let succs: Vec<Vec<(TransitionLabel, Configuration)>> = match &pool {
            Some(pool) => pool.install(|| batch.par_iter().map(|c| successors(c, sys)).collect()),
            None => batch.iter().map(|c| successors(c, sys)).collect(),
        };
        for (offset, list) in succs.into_iter().enumerate() {
            let source = expanded + offset;
            for (label, next) in list {
                if limits.max_edges.is_some_and(|m| edges.len() >= m) {
                    complete = false;
                    expanded = source;
                    break 'explore;
                }
                let target = match configs.get_index_of(&next) {
                    Some(t) => t,
                    None => {
                        if limits.max_configs.is_some_and(|m| configs.len() >= m) {
                            complete = false;
                            expanded = source;
                            break 'explore;
                        }
                        parent.push(Some(edges.len()));
                        configs.insert_full(next).0
                    }
                };
                edges.push(Edge { source, label, target });
            }
        }
        expanded = batch_end;
    }

    let mut out_ranges = vec![0..0; configs.len()];
    let mut i = 0;
    for (c, range) in out_ranges.iter_mut().enumerate() {
        let start = i;
        while i < edges.len() && edges[i].source == c {
            i += 1;
        }
        *range = start..i;
    }
    Lts { configs, edges, complete, expanded, out_ranges, parent }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse;

    const MINIMAL: &str = "server: s(agents A[1]; servers), services {go}, states {a,b}, actions { {A[1].s.go, s.a} -> {s.b}, } servers s; agents A[1]; init -> { s(A[1]).a, A[1].s.go, }.";

    fn sys(src: &str) -> ElaboratedSystem {
        elaborate(&parse(src).unwrap().decl).unwrap().system
    }

    #[test]
    fn minimal_system_explores_to_two_configs() {
        let s = sys(MINIMAL);
        assert_eq!(enabled_actions(&s.initial, &s).len(), 1);
        let lts = explore(&s, ExplorationLimits::default());
        assert_eq!(lts.stats(), LtsStats { configs: 2, edges: 1, terminal: 1, complete: true });
        let after = lts.config(1);
        assert_eq!(s.state_name(ServerId(0), after.server_states[0]), "b");
        assert_eq!(after.agent_slots[0], AgentSlot::Terminated);
    }

    #[test]
    fn empty_agent_model() {
        let s = sys(
            "server: s(agents; servers), services {}, states {a}, actions {} servers s; agents; init -> { s().a, }.",
        );
        let lts = explore(&s, ExplorationLimits::default());
        assert_eq!(lts.stats(), LtsStats { configs: 1, edges: 0, terminal: 1, complete: true });
    }

    #[test]
    fn step_rejects_disabled_action() {
        let s = sys(MINIMAL);
        let done = step(&s.initial, &s.actions[0]).unwrap();
        assert!(step(&done, &s.actions[0]).is_err());
        assert!(enabled_actions(&done, &s).is_empty());
    }

    #[test]
    fn truncation_keeps_limit_and_flags_incomplete() {
        let s = sys(MINIMAL);
        let lts = explore(&s, ExplorationLimits::configs(1));
        assert!(!lts.is_complete());
        assert_eq!(lts.len(), 1);
        let full = explore(&s, ExplorationLimits::configs(2));
        assert!(full.is_complete());
    }
}
