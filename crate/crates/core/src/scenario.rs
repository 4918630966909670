//! Environmental resource graphs (`.amg` files) and their translation into
//! IMDS declarations.
//!
//! ```text
//! node <name> lot|marker
//! edge <name> <name>
//! parking <marker> <lot>
//! itinerary <agent>: <name> -> <name> -> ... -> <name>
//! option avoidance on|off
//! ```

use std::collections::{HashMap, HashSet};

use indexmap::{IndexMap, IndexSet};
use thiserror::Error;

use crate::model::*;
use crate::syntax::is_keyword;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Lot,
    Marker,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResourceGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<(String, String)>,
    /// marker -> lot usable for diversion.
    pub parking: Vec<(String, String)>,
}

impl ResourceGraph {
    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn adjacent(&self, a: &str, b: &str) -> bool {
        self.edges.iter().any(|(x, y)| (x == a && y == b) || (x == b && y == a))
    }

    /// Neighbors in edge declaration order.
    pub fn neighbors(&self, name: &str) -> Vec<&str> {
        let mut out = Vec::new();
        for (x, y) in &self.edges {
            let other = if x == name {
                y
            } else if y == name {
                x
            } else {
                continue;
            };
            if !out.contains(&other.as_str()) {
                out.push(other.as_str());
            }
        }
        out
    }

    pub fn parking_of(&self, marker: &str) -> Option<&str> {
        self.parking.iter().find(|(m, _)| m == marker).map(|(_, l)| l.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Itinerary {
    pub agent: String,
    pub path: Vec<String>,
    /// Source line, 0 when built programmatically.
    pub line: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenOptions {
    pub avoidance: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ScenarioError {
    fn at(line: usize, column: usize, message: impl Into<String>) -> Self {
        Self { line, column, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub graph: ResourceGraph,
    pub itineraries: Vec<Itinerary>,
    pub options: GenOptions,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !is_keyword(s)
}

/// Splits `AMP[2]` into (`AMP`, Some(2)) and `B` into (`B`, None).
fn agent_name(s: &str) -> Option<(String, Option<i64>)> {
    match s.find('[') {
        None => is_ident(s).then(|| (s.to_string(), None)),
        Some(open) => {
            let base = &s[..open];
            let idx = s[open + 1..].strip_suffix(']')?.trim().parse::<i64>().ok()?;
            (is_ident(base) && idx >= 1).then(|| (base.to_string(), Some(idx)))
        }
    }
}

pub fn parse_graph(text: &str) -> Result<Scenario, ScenarioError> {
    let mut graph = ResourceGraph::default();
    let mut itineraries = Vec::new();
    let mut avoidance: Option<bool> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("");
        let col = |needle: &str| raw.find(needle).map_or(1, |p| p + 1);
        let words: Vec<&str> = line.split_whitespace().collect();
        let Some(&keyword) = words.first() else { continue };
        let node_ref = |name: &str, graph: &ResourceGraph| -> Result<(), ScenarioError> {
            if graph.node(name).is_none() {
                return Err(ScenarioError::at(line_no, col(name), format!("unknown node '{name}'")));
            }
            Ok(())
        };
        match keyword {
            "node" => {
                let [_, name, kind] = words[..] else {
                    return Err(ScenarioError::at(line_no, 1, "expected 'node <name> lot|marker'"));
                };
                if !is_ident(name) {
                    return Err(ScenarioError::at(line_no, col(name), format!("invalid node name '{name}'")));
                }
                if graph.node(name).is_some() {
                    return Err(ScenarioError::at(line_no, col(name), format!("duplicate node '{name}'")));
                }
                let kind = match kind {
                    "lot" => NodeKind::Lot,
                    "marker" => NodeKind::Marker,
                    other => {
                        return Err(ScenarioError::at(
                            line_no,
                            col(other),
                            format!("expected 'lot' or 'marker', found '{other}'"),
                        ))
                    }
                };
                graph.nodes.push(Node { name: name.to_string(), kind });
            }
            "edge" => {
                let [_, a, b] = words[..] else {
                    return Err(ScenarioError::at(line_no, 1, "expected 'edge <name> <name>'"));
                };
                node_ref(a, &graph)?;
                node_ref(b, &graph)?;
                if a == b {
                    return Err(ScenarioError::at(line_no, col(b), "self-loop edge"));
                }
                if !graph.adjacent(a, b) {
                    graph.edges.push((a.to_string(), b.to_string()));
                }
            }
            "parking" => {
                let [_, marker, lot] = words[..] else {
                    return Err(ScenarioError::at(line_no, 1, "expected 'parking <marker> <lot>'"));
                };
                node_ref(marker, &graph)?;
                node_ref(lot, &graph)?;
                if graph.node(marker).unwrap().kind != NodeKind::Marker {
                    return Err(ScenarioError::at(line_no, col(marker), format!("'{marker}' is not a marker")));
                }
                if graph.node(lot).unwrap().kind != NodeKind::Lot {
                    return Err(ScenarioError::at(line_no, col(lot), format!("'{lot}' is not a lot")));
                }
                if !graph.adjacent(marker, lot) {
                    return Err(ScenarioError::at(
                        line_no,
                        col(lot),
                        format!("parking lot '{lot}' is not adjacent to '{marker}'"),
                    ));
                }
                if graph.parking_of(marker).is_some() {
                    return Err(ScenarioError::at(
                        line_no,
                        col(marker),
                        format!("'{marker}' already has a parking lot"),
                    ));
                }
                graph.parking.push((marker.to_string(), lot.to_string()));
            }
            "itinerary" => {
                let rest = line.trim_start()["itinerary".len()..].trim();
                let Some((agent, path)) = rest.split_once(':') else {
                    return Err(ScenarioError::at(line_no, 1, "expected 'itinerary <agent>: <node> -> <node> ...'"));
                };
                let agent = agent.trim();
                if agent_name(agent).is_none() {
                    return Err(ScenarioError::at(line_no, col(agent), format!("invalid agent name '{agent}'")));
                }
                let mut nodes = Vec::new();
                for step in path.split("->") {
                    let step = step.trim();
                    if step.is_empty() {
                        return Err(ScenarioError::at(line_no, col("->"), "empty itinerary step"));
                    }
                    node_ref(step, &graph)?;
                    nodes.push(step.to_string());
                }
                itineraries.push(Itinerary { agent: agent.to_string(), path: nodes, line: line_no });
            }
            "option" => {
                let [_, "avoidance", value] = words[..] else {
                    return Err(ScenarioError::at(line_no, 1, "expected 'option avoidance on|off'"));
                };
                avoidance = Some(match value {
                    "on" => true,
                    "off" => false,
                    other => {
                        return Err(ScenarioError::at(
                            line_no,
                            col(other),
                            format!("expected 'on' or 'off', found '{other}'"),
                        ))
                    }
                });
            }
            other => {
                return Err(ScenarioError::at(line_no, col(other), format!("unknown directive '{other}'")));
            }
        }
    }
    let scenario = Scenario { graph, itineraries, options: GenOptions { avoidance: avoidance.unwrap_or(false) } };
    check(&scenario.graph, &scenario.itineraries)?;
    Ok(scenario)
}

/// Structural checks shared by parsing and generation.
fn check(graph: &ResourceGraph, itineraries: &[Itinerary]) -> Result<(), ScenarioError> {
    let mut agents = HashSet::new();
    let mut starts = HashMap::new();
    let bases: HashSet<String> = itineraries.iter().filter_map(|it| agent_name(&it.agent)).map(|(b, _)| b).collect();
    for n in &graph.nodes {
        if bases.contains(&n.name) {
            return Err(ScenarioError::at(0, 0, format!("node '{}' has the same name as an agent", n.name)));
        }
    }
    for it in itineraries {
        let err = |m: String| ScenarioError::at(it.line, 1, m);
        if agent_name(&it.agent).is_none() {
            return Err(err(format!("invalid agent name '{}'", it.agent)));
        }
        if !agents.insert(it.agent.as_str()) {
            return Err(err(format!("agent '{}' has two itineraries", it.agent)));
        }
        if it.path.len() < 2 {
            return Err(err(format!("itinerary of '{}' needs at least two nodes", it.agent)));
        }
        for name in &it.path {
            if graph.node(name).is_none() {
                return Err(err(format!("unknown node '{name}'")));
            }
        }
        if graph.node(&it.path[0]).unwrap().kind != NodeKind::Lot {
            return Err(err(format!("itinerary of '{}' must start at a lot", it.agent)));
        }
        for w in it.path.windows(2) {
            if !graph.adjacent(&w[0], &w[1]) {
                return Err(err(format!("'{}' and '{}' are not adjacent", w[0], w[1])));
            }
        }
        let mut seen = HashSet::new();
        for name in &it.path {
            if !seen.insert(name) {
                return Err(err(format!("itinerary of '{}' visits '{name}' twice", it.agent)));
            }
        }
        if let Some(other) = starts.insert(it.path[0].as_str(), it.agent.as_str()) {
            return Err(err(format!("'{}' and '{other}' both start at '{}'", it.agent, it.path[0])));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub decl: SystemDecl,
    pub warnings: Vec<String>,
}

/// Rules, services and states collected for one node.
#[derive(Default)]
struct NodeSpec {
    services: IndexSet<String>,
    states: IndexSet<String>,
    rules: Vec<ActionRule>,
    init_state: Option<String>,
}

struct Builder<'g> {
    graph: &'g ResourceGraph,
    nodes: IndexMap<String, NodeSpec>,
}

fn agent_ref(agent: &str) -> Ref {
    match agent_name(agent).expect("checked agent name") {
        (base, None) => Ref::plain(base),
        (base, Some(k)) => Ref::indexed(base, Expr::int(k)),
    }
}

fn occ(next: Option<&str>) -> String {
    next.map_or("occ".to_string(), |n| format!("occ_{n}"))
}

fn res(next: Option<&str>) -> String {
    next.map_or("res".to_string(), |n| format!("res_{n}"))
}

impl Builder<'_> {
    /// `{a.at.service, at.state} -> {a.to.out_service, at.out_state}`
    fn rule(
        &mut self,
        agent: &str,
        at: &str,
        service: String,
        state: String,
        out: Option<(&str, String)>,
        out_state: String,
    ) {
        let spec = self.nodes.get_mut(at).expect("node");
        spec.services.insert(service.clone());
        spec.states.insert(state.clone());
        spec.states.insert(out_state.clone());
        let output_message = out.map(|(to, svc)| MessagePattern {
            agent: agent_ref(agent),
            server: Ref::plain(to),
            service: Ref::plain(svc),
        });
        spec.rules.push(ActionRule {
            replicators: Vec::new(),
            input_message: MessagePattern {
                agent: agent_ref(agent),
                server: Ref::plain(at),
                service: Ref::plain(service),
            },
            input_state: StatePattern { server: Ref::plain(at), state: Ref::plain(state) },
            output_message,
            output_state: StatePattern { server: Ref::plain(at), state: Ref::plain(out_state) },
            span: Default::default(),
        });
    }

    /// Services a node receives are declared by the receiver; mentioning
    /// them here keeps declaration order tied to first use.
    fn declare_service(&mut self, at: &str, service: &str) {
        self.nodes.get_mut(at).expect("node").services.insert(service.to_string());
    }

    /// The three-message hop of `agent` from `x` (held in state `x_held`)
    /// into `y`, followed by the try sent from `y` to `z`, or termination
    /// when `y` is the last node.
    fn hop(&mut self, agent: &str, x: &str, x_held: String, y: &str, z: Option<&str>) {
        // y: try from x while free -> ok back to x, reserved towards z
        self.declare_service(x, &format!("ok_{y}"));
        self.rule(agent, y, format!("try_{x}"), "free".into(), Some((x, format!("ok_{y}"))), res(z));
        // x: ok from y while occupied towards y -> take to y, release x
        self.declare_service(y, &format!("take_{x}"));
        self.rule(agent, x, format!("ok_{y}"), x_held, Some((y, format!("take_{x}"))), "free".into());
        // y: take from x -> occupied, continue or stop
        let out = z.map(|z| (z, format!("try_{y}")));
        if let Some(z) = z {
            self.declare_service(z, &format!("try_{y}"));
        }
        self.rule(agent, y, format!("take_{x}"), res(z), out, occ(z));
    }

    /// Diversion of `agent`, holding marker `x` towards `y`, through parking
    /// lot `p` when `y` is held by traffic coming the other way.
    fn divert(&mut self, agent: &str, x: &str, y: &str, p: &str) {
        let not = format!("not_{y}");
        self.declare_service(x, &not);
        for held in [res(Some(x)), occ(Some(x))] {
            self.rule(agent, y, format!("try_{x}"), held.clone(), Some((x, not.clone())), held);
        }
        self.declare_service(p, &format!("try_{x}"));
        self.rule(agent, x, not, occ(Some(y)), Some((p, format!("try_{x}"))), occ(Some(y)));
        // Into the parking lot and back out again, both with the usual hop.
        self.hop(agent, x, occ(Some(y)), p, Some(x));
        self.hop(agent, p, occ(Some(x)), x, Some(y));
    }
}

/// Agent declarations grouped by base name: `AMP[1]`, `AMP[2]` become
/// `AMP[2]`. Array elements must be numbered 1..n without gaps.
fn agent_decls(itineraries: &[Itinerary]) -> Result<(Vec<SizedName>, Vec<Ref>), ScenarioError> {
    let mut groups: IndexMap<String, (Vec<i64>, usize)> = IndexMap::new();
    for it in itineraries {
        let (base, idx) = agent_name(&it.agent).expect("checked agent name");
        let entry = groups.entry(base.clone()).or_insert_with(|| (Vec::new(), it.line));
        match idx {
            Some(k) => entry.0.push(k),
            None => entry.0.push(0),
        }
    }
    let mut decls = Vec::new();
    let mut actuals = Vec::new();
    for (base, (mut indices, line)) in groups {
        indices.sort_unstable();
        if indices == [0] {
            decls.push(SizedName::scalar(base.clone()));
            actuals.push(Ref::plain(base));
            continue;
        }
        let n = indices.len() as i64;
        if indices.contains(&0) || indices != (1..=n).collect::<Vec<_>>() {
            return Err(ScenarioError::at(
                line,
                1,
                format!("agents '{base}[..]' must be numbered 1..{n} without gaps"),
            ));
        }
        decls.push(SizedName::array(base.clone(), Expr::int(n)));
        actuals.push(Ref {
            name: base,
            indices: vec![IndexItem::Range(Expr::int(1), Expr::int(n))],
            span: Default::default(),
        });
    }
    Ok((decls, actuals))
}

/// Builds the IMDS declaration for a scenario: one server per node, one
/// agent per itinerary, and the try / ok / take hop protocol along every
/// itinerary. With avoidance on, a marker with a parking lot lets its
/// holder step aside when the next node is held by oncoming traffic.
pub fn generate(
    graph: &ResourceGraph,
    itineraries: &[Itinerary],
    options: GenOptions,
) -> Result<Generated, ScenarioError> {
    check(graph, itineraries)?;
    let (agent_decls, agent_actuals) = agent_decls(itineraries)?;
    let mut warnings = Vec::new();
    let mut b = Builder { graph, nodes: graph.nodes.iter().map(|n| (n.name.clone(), NodeSpec::default())).collect() };
    for spec in b.nodes.values_mut() {
        spec.states.insert("free".into());
    }

    let mut init_messages = Vec::new();
    for it in itineraries {
        let a = it.agent.as_str();
        let p = &it.path;
        let start = p[0].as_str();
        b.nodes[start].init_state = Some(occ(Some(&p[1])));
        b.declare_service(p[1].as_str(), &format!("try_{start}"));
        b.rule(a, start, "start".into(), occ(Some(&p[1])), Some((&p[1], format!("try_{start}"))), occ(Some(&p[1])));
        init_messages.push(MessagePattern {
            agent: agent_ref(a),
            server: Ref::plain(start),
            service: Ref::plain("start"),
        });
        for i in 0..p.len() - 1 {
            let (x, y) = (p[i].as_str(), p[i + 1].as_str());
            let z = p.get(i + 2).map(String::as_str);
            b.hop(a, x, occ(Some(y)), y, z);
            if !options.avoidance || b.graph.node(x).unwrap().kind != NodeKind::Marker {
                continue;
            }
            let Some(park) = b.graph.parking_of(x) else { continue };
            if park == y || p.iter().any(|n| n == park) {
                continue;
            }
            let park = park.to_string();
            b.divert(a, x, y, &park);
        }
    }

    if options.avoidance {
        let opposing = opposing_markers(itineraries);
        if !opposing.is_empty() && opposing.iter().all(|(m, _)| graph.parking_of(m).is_none()) {
            let names: Vec<String> = opposing.iter().map(|(m, a)| format!("'{m}' ({})", a.join(", "))).collect();
            warnings.push(format!(
                "avoidance is on but no marker crossed in opposite directions has a parking lot: {}",
                names.join(", ")
            ));
        }
    }

    let neighbors: HashMap<&str, Vec<&str>> =
        graph.nodes.iter().map(|n| (n.name.as_str(), graph.neighbors(&n.name))).collect();
    let mut server_types = Vec::new();
    let mut init = Vec::new();
    for (name, spec) in b.nodes {
        let nbrs = &neighbors[name.as_str()];
        let state = spec.init_state.clone().unwrap_or_else(|| "free".into());
        let mut actuals = agent_actuals.clone();
        actuals.extend(nbrs.iter().map(|n| Ref::plain(*n)));
        init.push(InitItem {
            replicators: Vec::new(),
            kind: InitKind::Server { target: Ref::plain(name.clone()), actuals, state: Ref::plain(state) },
            span: Default::default(),
        });
        server_types.push(ServerType {
            name: name.clone(),
            formal_agents: agent_decls.clone(),
            formal_servers: nbrs.iter().map(|n| SizedName::scalar(*n)).collect(),
            services: spec.services.into_iter().map(SizedName::scalar).collect(),
            states: spec.states.into_iter().map(SizedName::scalar).collect(),
            rules: spec.rules,
            span: Default::default(),
        });
    }
    init.extend(init_messages.into_iter().map(|m| InitItem {
        replicators: Vec::new(),
        kind: InitKind::Message(m),
        span: Default::default(),
    }));
    let decl = SystemDecl {
        constants: Vec::new(),
        server_instances: graph.nodes.iter().map(|n| SizedName::scalar(n.name.clone())).collect(),
        agent_instances: agent_decls,
        server_types,
        init,
    };
    Ok(Generated { decl, warnings })
}

/// Markers crossed by two itineraries in opposite directions.
fn opposing_markers(itineraries: &[Itinerary]) -> Vec<(String, Vec<String>)> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for (i, a) in itineraries.iter().enumerate() {
        for b in &itineraries[i + 1..] {
            for w in a.path.windows(3) {
                let (prev, mid, next) = (&w[0], &w[1], &w[2]);
                let crosses = b.path.windows(3).any(|v| &v[1] == mid && &v[0] == next && &v[2] == prev);
                if crosses && !out.iter().any(|(m, _)| m == mid) {
                    out.push((mid.clone(), vec![a.agent.clone(), b.agent.clone()]));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse, pretty_print};

    const CORRIDOR: &str = "node lotA lot\nnode mA marker\nedge lotA mA\nitinerary B: lotA -> mA\n";

    #[test]
    fn corridor_parses_and_generates() {
        let sc = parse_graph(CORRIDOR).unwrap();
        assert_eq!(sc.graph.nodes.len(), 2);
        assert!(!sc.options.avoidance);
        let g = generate(&sc.graph, &sc.itineraries, sc.options).unwrap();
        let text = pretty_print(&g.decl);
        assert!(text.contains("{B.lotA.start, lotA.occ_mA} -> {B.mA.try_lotA, lotA.occ_mA},"), "{text}");
        assert!(text.contains("{B.mA.take_lotA, mA.res} -> {mA.occ},"), "{text}");
        let sys = elaborate(&parse(&text).unwrap().decl).unwrap().system;
        assert_eq!(sys.servers.len(), 2);
        assert_eq!(sys.actions.len(), 4);
    }

    #[test]
    fn non_adjacent_step_is_located() {
        let err = parse_graph("node a lot\nnode b marker\nnode c lot\nedge a b\nedge b c\nitinerary X: a -> c\n")
            .unwrap_err();
        assert_eq!(err.line, 6);
        assert!(err.message.contains("not adjacent"), "{err}");
    }

    #[test]
    fn unknown_node_and_bad_kind() {
        let err = parse_graph("node a lot\nedge a zz\n").unwrap_err();
        assert_eq!((err.line, err.column), (2, 8));
        assert!(err.message.contains("unknown node 'zz'"));
        let err = parse_graph("node a road\n").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn parking_must_be_adjacent_lot() {
        let err = parse_graph("node m marker\nnode l lot\nnode k lot\nedge m l\nparking m k\n").unwrap_err();
        assert!(err.message.contains("not adjacent"), "{err}");
        let err = parse_graph("node m marker\nnode n marker\nedge m n\nparking m n\n").unwrap_err();
        assert!(err.message.contains("is not a lot"), "{err}");
    }

    #[test]
    fn itinerary_constraints() {
        let base = "node l lot\nnode m marker\nnode k lot\nedge l m\nedge m k\n";
        assert!(parse_graph(&format!("{base}itinerary A: m -> k\n")).unwrap_err().message.contains("start at a lot"));
        assert!(parse_graph(&format!("{base}itinerary A: l\n")).unwrap_err().message.contains("at least two"));
        assert!(parse_graph(&format!("{base}itinerary A: l -> m -> l\n")).unwrap_err().message.contains("twice"));
        assert!(parse_graph(&format!("{base}itinerary A[1]: l -> m\nitinerary A[3]: k -> m\n")).is_ok());
        let sc = parse_graph(&format!("{base}itinerary A[1]: l -> m\nitinerary A[3]: k -> m\n")).unwrap();
        assert!(generate(&sc.graph, &sc.itineraries, sc.options).unwrap_err().message.contains("without gaps"));
    }

    #[test]
    fn missing_parking_is_warned_under_avoidance() {
        let src = "node l lot\nnode m marker\nnode k lot\nedge l m\nedge m k\n\
                   itinerary A[1]: l -> m -> k\nitinerary A[2]: k -> m -> l\noption avoidance on\n";
        let sc = parse_graph(src).unwrap();
        let g = generate(&sc.graph, &sc.itineraries, sc.options).unwrap();
        assert_eq!(g.warnings.len(), 1);
        assert!(g.warnings[0].contains("'m'"));
    }
}
