//! The two dual renderings of a witness path: the server view groups
//! transitions by server (a communication graph), the agent view follows
//! messages across server lifelines (a sequence diagram).

use std::collections::HashSet;
use std::fmt::Write;

use serde::Serialize;

use crate::deadlock::{DeadlockReport, WitnessPath};
use crate::model::*;

/// Display names for agents: `X[1]` is shown as `X`, `X[k]` as `X__{k-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamingMap {
    names: Vec<String>,
}

impl NamingMap {
    pub fn display(&self, agent: AgentId) -> &str {
        &self.names[agent.index()]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

pub fn rename_agents(sys: &ElaboratedSystem) -> NamingMap {
    // Scalar agents keep their names; an array element whose preferred name
    // is already taken falls back to its bracketed ground name.
    let mut taken: HashSet<String> = sys.agents.iter().filter(|a| a.index.is_none()).map(|a| a.name.clone()).collect();
    let names = sys
        .agents
        .iter()
        .map(|agent| match agent.index {
            None => agent.name.clone(),
            Some(k) => {
                let preferred = if k == 1 { agent.base.clone() } else { format!("{}__{}", agent.base, k - 1) };
                if taken.insert(preferred.clone()) {
                    preferred
                } else {
                    agent.name.clone()
                }
            }
        })
        .collect();
    NamingMap { names }
}

fn label(sys: &ElaboratedSystem, names: &NamingMap, agent: AgentId, msg: Message) -> String {
    format!("{}.{}", names.display(agent), sys.service_name(msg.server, msg.service))
}

/// Servers touched by a path, in first-appearance order: holders of the
/// initial messages first, then executing servers and message targets.
fn touched_servers(path: &WitnessPath, sys: &ElaboratedSystem) -> Vec<ServerId> {
    let mut seen = HashSet::new();
    let mut order = Vec::new();
    let mut visit = |s: ServerId| {
        if seen.insert(s) {
            order.push(s);
        }
    };
    for slot in &sys.initial.agent_slots {
        if let Some(m) = slot.pending() {
            visit(m.server);
        }
    }
    for (_, l) in &path.steps {
        let a = sys.action(l.action);
        visit(a.server);
        if let Some(m) = a.out_message {
            visit(m.server);
        }
    }
    order
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommNode {
    pub server: ServerId,
    pub name: String,
    pub dead: bool,
    /// Path steps (0-based) executed at this server.
    pub steps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommEdge {
    pub from: ServerId,
    pub to: ServerId,
    pub agent: AgentId,
    pub service: ServiceId,
    pub label: String,
    /// Path steps whose output message this edge carries.
    pub steps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommGraph {
    pub nodes: Vec<CommNode>,
    pub edges: Vec<CommEdge>,
}

impl CommGraph {
    pub fn highlight(&mut self, dead: &[ServerId]) {
        for n in &mut self.nodes {
            n.dead = dead.contains(&n.server);
        }
    }

    pub fn dead_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.dead).count()
    }
}

pub fn server_view(path: &WitnessPath, sys: &ElaboratedSystem) -> CommGraph {
    let names = rename_agents(sys);
    let mut nodes: Vec<CommNode> = touched_servers(path, sys)
        .into_iter()
        .map(|s| CommNode { server: s, name: sys.server(s).name.clone(), dead: false, steps: Vec::new() })
        .collect();
    let mut edges: Vec<CommEdge> = Vec::new();
    for (i, (_, l)) in path.steps.iter().enumerate() {
        let a = sys.action(l.action);
        if let Some(n) = nodes.iter_mut().find(|n| n.server == a.server) {
            n.steps.push(i);
        }
        let Some(m) = a.out_message else { continue };
        match edges
            .iter_mut()
            .find(|e| e.from == a.server && e.to == m.server && e.agent == a.agent && e.service == m.service)
        {
            Some(e) => e.steps.push(i),
            None => edges.push(CommEdge {
                from: a.server,
                to: m.server,
                agent: a.agent,
                service: m.service,
                label: label(sys, &names, a.agent, m),
                steps: vec![i],
            }),
        }
    }
    CommGraph { nodes, edges }
}

/// Server view of a report's witness with its dead servers highlighted.
pub fn report_server_view(report: &DeadlockReport, sys: &ElaboratedSystem) -> CommGraph {
    let mut g = server_view(&report.witness, sys);
    g.highlight(&report.dead_servers);
    g
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn to_dot(graph: &CommGraph) -> String {
    let mut out = String::from("digraph comm {\n  node [shape=box];\n");
    for n in &graph.nodes {
        if n.dead {
            writeln!(out, "  {} [color=red, penwidth=2];", dot_id(&n.name)).unwrap();
        } else {
            writeln!(out, "  {};", dot_id(&n.name)).unwrap();
        }
    }
    let name_of = |s: ServerId| graph.nodes.iter().find(|n| n.server == s).map(|n| n.name.as_str()).unwrap_or("?");
    for e in &graph.edges {
        let steps: Vec<String> = e.steps.iter().map(|s| (s + 1).to_string()).collect();
        writeln!(
            out,
            "  {} -> {} [label={}];",
            dot_id(name_of(e.from)),
            dot_id(name_of(e.to)),
            dot_id(&format!("{} ({})", e.label, steps.join(",")))
        )
        .unwrap();
    }
    out.push_str("}\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SeqEvent {
    /// The executing server consumes the agent's message.
    Receive {
        step: usize,
        lifeline: usize,
        label: String,
    },
    Arrow {
        step: usize,
        from: usize,
        to: usize,
        label: String,
    },
    StateChange {
        step: usize,
        lifeline: usize,
        state: String,
    },
    Terminate {
        step: usize,
        lifeline: usize,
        agent: String,
    },
}

impl SeqEvent {
    pub fn step(&self) -> usize {
        match self {
            SeqEvent::Receive { step, .. }
            | SeqEvent::Arrow { step, .. }
            | SeqEvent::StateChange { step, .. }
            | SeqEvent::Terminate { step, .. } => *step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SequenceDiagram {
    pub lifelines: Vec<String>,
    pub events: Vec<SeqEvent>,
}

pub fn agent_view(path: &WitnessPath, sys: &ElaboratedSystem) -> SequenceDiagram {
    let names = rename_agents(sys);
    let servers = touched_servers(path, sys);
    let lane = |s: ServerId| servers.iter().position(|&x| x == s).expect("touched server");
    let mut states = sys.initial.server_states.clone();
    let mut events = Vec::new();
    for (i, (_, l)) in path.steps.iter().enumerate() {
        let a = sys.action(l.action);
        let here = lane(a.server);
        let input = Message { server: a.server, service: a.service };
        events.push(SeqEvent::Receive { step: i, lifeline: here, label: label(sys, &names, a.agent, input) });
        match a.out_message {
            Some(m) => events.push(SeqEvent::Arrow {
                step: i,
                from: here,
                to: lane(m.server),
                label: label(sys, &names, a.agent, m),
            }),
            None => {
                events.push(SeqEvent::Terminate { step: i, lifeline: here, agent: names.display(a.agent).to_string() })
            }
        }
        if states[a.server.index()] != a.out_state {
            states[a.server.index()] = a.out_state;
            events.push(SeqEvent::StateChange {
                step: i,
                lifeline: here,
                state: sys.state_name(a.server, a.out_state).to_string(),
            });
        }
    }
    SequenceDiagram { lifelines: servers.iter().map(|&s| sys.server(s).name.clone()).collect(), events }
}

impl SequenceDiagram {
    /// One event per line: step number, event kind, then the event text.
    pub fn render(&self) -> String {
        let mut out = String::from("step  event  ");
        out.push_str(&self.lifelines.join("  "));
        out.push('\n');
        for e in &self.events {
            let (kind, text) = match e {
                SeqEvent::Receive { lifeline, label, .. } => {
                    ("recv", format!("{} <-({})", self.lifelines[*lifeline], label))
                }
                SeqEvent::Arrow { from, to, label, .. } => {
                    ("send", format!("{} ->({}) {}", self.lifelines[*from], label, self.lifelines[*to]))
                }
                SeqEvent::StateChange { lifeline, state, .. } => {
                    ("state", format!("{} := {}", self.lifelines[*lifeline], state))
                }
                SeqEvent::Terminate { lifeline, agent, .. } => {
                    ("term", format!("{} ends {}", self.lifelines[*lifeline], agent))
                }
            };
            writeln!(out, "{:>4}  {:<5}  {}", e.step() + 1, kind, text).unwrap();
        }
        out
    }

    pub fn arrow_count(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, SeqEvent::Arrow { .. })).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lts::{explore, ExplorationLimits};
    use crate::syntax::parse;

    fn sys(src: &str) -> ElaboratedSystem {
        elaborate(&parse(src).unwrap().decl).unwrap().system
    }

    const MINIMAL: &str = "server: s(agents A[1]; servers), services {go}, states {a,b}, actions { {A[1].s.go, s.a} -> {s.b}, } servers s; agents A[1]; init -> { s(A[1]).a, A[1].s.go, }.";

    #[test]
    fn renaming_follows_index() {
        let s = sys("server: s(agents AMP[3], B; servers), services {go}, states {a}, actions {} \
                     servers s; agents AMP[3], B; init -> { s(AMP[1..3], B).a, <i=1..3> AMP[i].s.go, B.s.go, }.");
        assert_eq!(rename_agents(&s).names(), ["AMP", "AMP__1", "AMP__2", "B"]);
    }

    #[test]
    fn renaming_falls_back_on_clash() {
        let s = sys("server: s(agents X[2], X__1; servers), services {go}, states {a}, actions {} \
                     servers s; agents X[2], X__1; init -> { s(X[1..2], X__1).a, X[1].s.go, X[2].s.go, X__1.s.go, }.");
        assert_eq!(rename_agents(&s).names(), ["X", "X[2]", "X__1"]);
    }

    #[test]
    fn minimal_full_path_views() {
        let s = sys(MINIMAL);
        let lts = explore(&s, ExplorationLimits::default());
        let path = WitnessPath::to(&lts, 1);
        let g = server_view(&path, &s);
        assert_eq!(g.nodes.len(), 1);
        assert!(g.edges.is_empty());
        let d = agent_view(&path, &s);
        assert_eq!(d.arrow_count(), 0);
        assert_eq!(d.render(), "step  event  s\n   1  recv   s <-(A.go)\n   1  term   s ends A\n   1  state  s := b\n");
        assert_eq!(to_dot(&g), "digraph comm {\n  node [shape=box];\n  \"s\";\n}\n");
    }

    #[test]
    fn empty_path_shows_initial_holders_only() {
        let s = sys(MINIMAL);
        let g = server_view(&WitnessPath::empty(), &s);
        assert_eq!(g.nodes.len(), 1);
        assert!(g.edges.is_empty());
        let d = agent_view(&WitnessPath::empty(), &s);
        assert_eq!(d.lifelines, ["s"]);
        assert!(d.events.is_empty());
    }

    #[test]
    fn empty_graph_is_valid_dot() {
        let g = CommGraph { nodes: Vec::new(), edges: Vec::new() };
        assert_eq!(to_dot(&g), "digraph comm {\n  node [shape=box];\n}\n");
    }
}
