//! Fixture loading and a deliberately naive reference implementation of the
//! semantics, used to cross-check the explorer and the dead predicates.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::PathBuf;

use imds::model::*;
use imds::scenario::{generate, parse_graph};
use imds::syntax::parse;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Declaration of a fixture; `.amg` scenarios are generated.
pub fn fixture_decl(name: &str) -> SystemDecl {
    let text = read_fixture(name);
    if name.ends_with(".amg") {
        let sc = parse_graph(&text).unwrap();
        generate(&sc.graph, &sc.itineraries, sc.options).unwrap().decl
    } else {
        parse(&text).unwrap().decl
    }
}

pub fn is_verbatim(name: &str) -> bool {
    name == "two_amp_listing.imds"
}

pub fn options_for(name: &str) -> ElaborateOptions {
    if is_verbatim(name) {
        ElaborateOptions::lenient()
    } else {
        ElaborateOptions::default()
    }
}

pub fn load(name: &str) -> ElaboratedSystem {
    elaborate_with(&fixture_decl(name), options_for(name)).unwrap().system
}

pub const FIXTURES: [&str; 7] = [
    "minimal.imds",
    "two_amp.imds",
    "two_amp_listing.imds",
    "road_no_avoidance.amg",
    "road_avoidance.amg",
    "single_amp.amg",
    "corridor.amg",
];

/// Brute-force reachable graph: configurations in BFS order and edges as
/// (source, action index, target). Enabledness scans every ground action.
pub struct OracleLts {
    pub configs: Vec<Configuration>,
    pub edges: Vec<(usize, usize, usize)>,
}

pub fn oracle_successors(sys: &ElaboratedSystem, cfg: &Configuration) -> Vec<(usize, Configuration)> {
    let mut out = Vec::new();
    for (i, act) in sys.actions.iter().enumerate() {
        let waiting = match &cfg.agent_slots[act.agent.index()] {
            AgentSlot::Pending(m) => m.server == act.server && m.service == act.service,
            AgentSlot::Terminated => false,
        };
        if !waiting || cfg.server_states[act.server.index()] != act.in_state {
            continue;
        }
        let mut next = cfg.clone();
        next.server_states[act.server.index()] = act.out_state;
        next.agent_slots[act.agent.index()] = match act.out_message {
            Some(m) => AgentSlot::Pending(m),
            None => AgentSlot::Terminated,
        };
        out.push((i, next));
    }
    out
}

pub fn oracle_explore(sys: &ElaboratedSystem, cap: usize) -> Option<OracleLts> {
    let mut index: HashMap<Configuration, usize> = HashMap::new();
    let mut configs = vec![sys.initial.clone()];
    index.insert(sys.initial.clone(), 0);
    let mut edges = Vec::new();
    let mut next = 0;
    while next < configs.len() {
        let cfg = configs[next].clone();
        for (act, succ) in oracle_successors(sys, &cfg) {
            let target = match index.get(&succ) {
                Some(&t) => t,
                None => {
                    if configs.len() >= cap {
                        return None;
                    }
                    index.insert(succ.clone(), configs.len());
                    configs.push(succ);
                    configs.len() - 1
                }
            };
            edges.push((next, act, target));
        }
        next += 1;
    }
    Some(OracleLts { configs, edges })
}

/// Forward search from `start`: does any reachable transition satisfy `hit`?
pub fn oracle_reaches(sys: &ElaboratedSystem, start: &Configuration, hit: impl Fn(&GroundAction) -> bool) -> bool {
    let mut seen = HashSet::new();
    let mut queue = VecDeque::from([start.clone()]);
    seen.insert(start.clone());
    while let Some(cfg) = queue.pop_front() {
        for (act, succ) in oracle_successors(sys, &cfg) {
            if hit(&sys.actions[act]) {
                return true;
            }
            if seen.insert(succ.clone()) {
                queue.push_back(succ);
            }
        }
    }
    false
}

pub fn oracle_agent_dead(sys: &ElaboratedSystem, cfg: &Configuration, agent: AgentId) -> bool {
    cfg.agent_slots[agent.index()].pending().is_some() && !oracle_reaches(sys, cfg, |a| a.agent == agent)
}

pub fn oracle_server_dead(sys: &ElaboratedSystem, cfg: &Configuration, server: ServerId) -> bool {
    let targeted = cfg.agent_slots.iter().any(|s| s.pending().is_some_and(|m| m.server == server));
    targeted && !oracle_reaches(sys, cfg, |a| a.server == server)
}

/// BFS distance from the initial configuration for every oracle config.
pub fn oracle_depths(o: &OracleLts) -> Vec<usize> {
    let mut depth = vec![usize::MAX; o.configs.len()];
    depth[0] = 0;
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); o.configs.len()];
    for &(s, _, t) in &o.edges {
        out[s].push(t);
    }
    let mut queue = VecDeque::from([0]);
    while let Some(c) = queue.pop_front() {
        for &t in &out[c] {
            if depth[t] == usize::MAX {
                depth[t] = depth[c] + 1;
                queue.push_back(t);
            }
        }
    }
    depth
}

/// Shortest path from the initial configuration as a list of oracle action
/// indices, or `None` if `target` is unreachable.
pub fn oracle_path(o: &OracleLts, target: usize) -> Option<Vec<usize>> {
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; o.configs.len()];
    let mut seen = vec![false; o.configs.len()];
    seen[0] = true;
    let mut queue = VecDeque::from([0]);
    while let Some(c) = queue.pop_front() {
        for &(s, a, t) in o.edges.iter().filter(|e| e.0 == c) {
            if !seen[t] {
                seen[t] = true;
                parent[t] = Some((s, a));
                queue.push_back(t);
            }
        }
    }
    if !seen[target] {
        return None;
    }
    let mut path = Vec::new();
    let mut c = target;
    while let Some((s, a)) = parent[c] {
        path.push(a);
        c = s;
    }
    path.reverse();
    Some(path)
}
