//! Semantic deadlock detection over a complete LTS.
//!
//! An agent is dead in a configuration when it has not terminated and no
//! path from there ever fires one of its transitions. A server is dead when
//! it holds at least one pending message and no path from there ever fires
//! one of its actions. Waiting is not a fault by itself; only permanent
//! waiting is.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::lts::{Lts, TransitionLabel};
use crate::model::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("state space exploration was truncated; deadlock analysis needs the complete LTS")]
    Truncated,
}

/// For each agent and each server, the configurations from which some path
/// fires a transition of that agent (resp. at that server).
#[derive(Debug, Clone)]
pub struct ProgressSets {
    agents: Vec<Vec<bool>>,
    servers: Vec<Vec<bool>>,
}

impl ProgressSets {
    pub fn agent_can_progress(&self, agent: AgentId, config: usize) -> bool {
        self.agents[agent.index()][config]
    }

    pub fn server_can_progress(&self, server: ServerId, config: usize) -> bool {
        self.servers[server.index()][config]
    }

    /// Configuration indices in the agent's progress set.
    pub fn agent_set(&self, agent: AgentId) -> Vec<usize> {
        members(&self.agents[agent.index()])
    }

    pub fn server_set(&self, server: ServerId) -> Vec<usize> {
        members(&self.servers[server.index()])
    }
}

fn members(bits: &[bool]) -> Vec<usize> {
    bits.iter().enumerate().filter_map(|(i, b)| b.then_some(i)).collect()
}

/// Backward closure from the sources of edges whose label satisfies `pick`.
fn backward_closure(lts: &Lts, preds: &[Vec<usize>], pick: impl Fn(&TransitionLabel) -> bool) -> Vec<bool> {
    let mut mark = vec![false; lts.len()];
    let mut queue = VecDeque::new();
    for e in lts.edges() {
        if pick(&e.label) && !mark[e.source] {
            mark[e.source] = true;
            queue.push_back(e.source);
        }
    }
    while let Some(c) = queue.pop_front() {
        for &p in &preds[c] {
            if !mark[p] {
                mark[p] = true;
                queue.push_back(p);
            }
        }
    }
    mark
}

pub fn progress_sets(lts: &Lts, sys: &ElaboratedSystem) -> Result<ProgressSets, AnalysisError> {
    if !lts.is_complete() {
        return Err(AnalysisError::Truncated);
    }
    let mut preds = vec![Vec::new(); lts.len()];
    for e in lts.edges() {
        preds[e.target].push(e.source);
    }
    let agents = (0..sys.agents.len()).map(|a| backward_closure(lts, &preds, |l| l.agent.index() == a)).collect();
    let servers = (0..sys.servers.len()).map(|s| backward_closure(lts, &preds, |l| l.server.index() == s)).collect();
    Ok(ProgressSets { agents, servers })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeadSets {
    pub agents: Vec<AgentId>,
    pub servers: Vec<ServerId>,
}

impl DeadSets {
    pub fn is_empty(&self) -> bool {
        self.agents.is_empty() && self.servers.is_empty()
    }

    fn subsumed_by(&self, other: &DeadSets) -> bool {
        self != other
            && self.agents.iter().all(|a| other.agents.contains(a))
            && self.servers.iter().all(|s| other.servers.contains(s))
    }
}

pub fn dead_sets(config: usize, lts: &Lts, ps: &ProgressSets) -> DeadSets {
    let cfg = lts.config(config);
    let agents = cfg
        .agent_slots
        .iter()
        .enumerate()
        .filter(|(a, slot)| slot.pending().is_some() && !ps.agents[*a][config])
        .map(|(a, _)| AgentId::from(a))
        .collect();
    let servers = (0..cfg.server_states.len())
        .map(ServerId::from)
        .filter(|&s| !ps.servers[s.index()][config] && cfg.agents_at(s).next().is_some())
        .collect();
    DeadSets { agents, servers }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DeadlockKind {
    /// Waiting for a server state that never occurs.
    Resource,
    /// Waiting for a message nobody will ever accept.
    Communication,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DeadlockScope {
    Partial,
    Total,
}

/// Agent-view classification: an agent is a resource-deadlock victim when
/// its pending message has some accepting action at the target server (it
/// waits for a state that never comes), a communication-deadlock victim
/// when no action accepts it at all.
pub fn classify(dead: &DeadSets, cfg: &Configuration, sys: &ElaboratedSystem) -> Vec<(AgentId, DeadlockKind)> {
    dead.agents
        .iter()
        .map(|&a| {
            let msg = cfg.agent_slots[a.index()].pending().expect("dead agents have a pending message");
            let kind = if sys.acceptors(msg.server, a, msg.service).is_empty() {
                DeadlockKind::Communication
            } else {
                DeadlockKind::Resource
            };
            (a, kind)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WitnessPath {
    /// (source configuration, transition) pairs from configuration 0.
    pub steps: Vec<(usize, TransitionLabel)>,
    pub end: usize,
}

impl WitnessPath {
    pub fn empty() -> Self {
        Self { steps: Vec::new(), end: 0 }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn to(lts: &Lts, end: usize) -> Self {
        Self { steps: lts.path_to(end), end }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeadAgent {
    pub agent: AgentId,
    pub kind: DeadlockKind,
    pub waiting: Message,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeadlockReport {
    /// `communication` when some server is dead (server view), otherwise
    /// `resource`.
    pub kind: DeadlockKind,
    /// Agent view: total iff every non-terminated agent is dead.
    pub scope: DeadlockScope,
    /// Server view: total iff every server is dead.
    pub server_scope: DeadlockScope,
    pub dead_agents: Vec<DeadAgent>,
    pub dead_servers: Vec<ServerId>,
    /// BFS-earliest configuration with this dead-set signature.
    pub config: usize,
    pub witness: WitnessPath,
}

/// One report per maximal dead-set signature, ordered by witness length.
pub fn find_deadlocks(lts: &Lts, sys: &ElaboratedSystem) -> Result<Vec<DeadlockReport>, AnalysisError> {
    let ps = progress_sets(lts, sys)?;
    let mut first: HashMap<DeadSets, usize> = HashMap::new();
    let mut order = Vec::new();
    for c in 0..lts.len() {
        let ds = dead_sets(c, lts, &ps);
        if ds.is_empty() {
            continue;
        }
        if !first.contains_key(&ds) {
            first.insert(ds.clone(), c);
            order.push(ds);
        }
    }
    let maximal: Vec<&DeadSets> = order.iter().filter(|s| !order.iter().any(|t| s.subsumed_by(t))).collect();

    let mut reports: Vec<DeadlockReport> = maximal
        .into_iter()
        .map(|ds| {
            let config = first[ds];
            let cfg = lts.config(config);
            let dead_agents = classify(ds, cfg, sys)
                .into_iter()
                .map(|(agent, kind)| DeadAgent {
                    agent,
                    kind,
                    waiting: cfg.agent_slots[agent.index()].pending().expect("pending"),
                })
                .collect::<Vec<_>>();
            let live_agents = cfg.agent_slots.iter().filter(|s| s.pending().is_some()).count();
            let scope = if !ds.agents.is_empty() && ds.agents.len() == live_agents {
                DeadlockScope::Total
            } else {
                DeadlockScope::Partial
            };
            let server_scope =
                if ds.servers.len() == sys.servers.len() { DeadlockScope::Total } else { DeadlockScope::Partial };
            let kind = if ds.servers.is_empty() { DeadlockKind::Resource } else { DeadlockKind::Communication };
            DeadlockReport {
                kind,
                scope,
                server_scope,
                dead_agents,
                dead_servers: ds.servers.clone(),
                config,
                witness: WitnessPath::to(lts, config),
            }
        })
        .collect();
    reports.sort_by_key(|r| (r.witness.len(), r.config));
    Ok(reports)
}

/// Configurations in which every agent has terminated.
pub fn detect_termination(lts: &Lts) -> Vec<usize> {
    (0..lts.len()).filter(|&c| lts.config(c).all_terminated()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lts::{explore, ExplorationLimits};
    use crate::syntax::parse;

    fn load(src: &str) -> (ElaboratedSystem, Lts) {
        let sys = elaborate(&parse(src).unwrap().decl).unwrap().system;
        let lts = explore(&sys, ExplorationLimits::default());
        (sys, lts)
    }

    const MINIMAL: &str = "server: s(agents A[1]; servers), services {go}, states {a,b}, actions { {A[1].s.go, s.a} -> {s.b}, } servers s; agents A[1]; init -> { s(A[1]).a, A[1].s.go, }.";

    #[test]
    fn minimal_progress_sets() {
        let (sys, lts) = load(MINIMAL);
        let ps = progress_sets(&lts, &sys).unwrap();
        assert_eq!(ps.agent_set(AgentId(0)), vec![0]);
        assert_eq!(ps.server_set(ServerId(0)), vec![0]);
        assert!(find_deadlocks(&lts, &sys).unwrap().is_empty());
        assert_eq!(detect_termination(&lts), vec![1]);
        assert_eq!(dead_sets(1, &lts, &ps), DeadSets::default());
    }

    #[test]
    fn unaccepted_message_is_communication_deadlock() {
        // The agent's message has no acceptor at all.
        let (sys, lts) = load(
            "server: s(agents A; servers), services {go, stop}, states {a}, actions { {A.s.go, s.a} -> {A.s.stop, s.a}, } \
             servers s; agents A; init -> { s(A).a, A.s.go, }.",
        );
        let reports = find_deadlocks(&lts, &sys).unwrap();
        assert_eq!(reports.len(), 1);
        let r = &reports[0];
        assert_eq!(r.dead_agents[0].kind, DeadlockKind::Communication);
        assert_eq!(r.kind, DeadlockKind::Communication);
        assert_eq!(r.scope, DeadlockScope::Total);
        assert_eq!(r.server_scope, DeadlockScope::Total);
        assert_eq!(r.witness.len(), 1);
    }

    #[test]
    fn never_firing_rule_leaves_agent_dead_with_resource_kind() {
        // `go` is accepted only in state b, which never occurs.
        let (sys, lts) = load(
            "server: s(agents A; servers), services {go}, states {a, b}, actions { {A.s.go, s.b} -> {s.a}, } \
             servers s; agents A; init -> { s(A).a, A.s.go, }.",
        );
        let ps = progress_sets(&lts, &sys).unwrap();
        assert!(ps.agent_set(AgentId(0)).is_empty());
        let reports = find_deadlocks(&lts, &sys).unwrap();
        assert_eq!(reports[0].dead_agents[0].kind, DeadlockKind::Resource);
        assert!(reports[0].witness.is_empty());
    }

    #[test]
    fn truncated_lts_is_refused() {
        let sys = elaborate(&parse(MINIMAL).unwrap().decl).unwrap().system;
        let lts = explore(&sys, ExplorationLimits::configs(1));
        assert_eq!(find_deadlocks(&lts, &sys).unwrap_err(), AnalysisError::Truncated);
        assert!(progress_sets(&lts, &sys).is_err());
    }
}
