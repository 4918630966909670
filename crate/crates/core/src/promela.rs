//! Translation of an elaborated system into Promela.
//!
//! Each server becomes a process looping over its ground actions, each
//! action one atomic alternative guarded by the server state and a poll of
//! the server's channel for the agent's message. Pending messages sit in the
//! target server's channel. When every agent has terminated the processes
//! leave their loops, so only stuck configurations with pending messages
//! show up as invalid end states.

use std::collections::HashSet;
use std::fmt::Write;

use serde::Serialize;

use crate::model::*;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServerEntry {
    pub server: String,
    pub process: String,
    pub channel: String,
    pub state_var: String,
    /// (state name, constant)
    pub states: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MessageEntry {
    /// `agent.server.service`
    pub message: String,
    pub constant: String,
    pub value: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleEntry {
    pub rule: String,
    pub action: String,
    pub process: String,
    /// 1-based position among the process's alternatives.
    pub alternative: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub servers: Vec<ServerEntry>,
    pub agents: Vec<(String, String)>,
    pub messages: Vec<MessageEntry>,
    pub rules: Vec<RuleEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromelaModel {
    pub text: String,
    pub manifest: Manifest,
}

/// Injective mapping of arbitrary names onto Promela identifiers.
#[derive(Default)]
struct Names {
    used: HashSet<String>,
}

impl Names {
    fn fresh(&mut self, prefix: &str, raw: &str) -> String {
        let mut base = String::from(prefix);
        for c in raw.chars() {
            base.push(if c.is_ascii_alphanumeric() { c } else { '_' });
        }
        while base.len() > prefix.len() + 1 && base.ends_with('_') {
            base.pop();
        }
        let mut name = base.clone();
        let mut n = 2;
        while !self.used.insert(name.clone()) {
            name = format!("{base}_{n}");
            n += 1;
        }
        name
    }
}

pub fn export(sys: &ElaboratedSystem) -> PromelaModel {
    let mut names = Names::default();
    names.used.extend(["NAGENTS", "nterm"].map(String::from));

    // Message constants for every (agent, server, service) that can occur.
    let mut pairs: Vec<(AgentId, Message)> = Vec::new();
    for a in &sys.actions {
        pairs.push((a.agent, Message { server: a.server, service: a.service }));
        if let Some(m) = a.out_message {
            pairs.push((a.agent, m));
        }
    }
    for (a, slot) in sys.initial.agent_slots.iter().enumerate() {
        if let Some(m) = slot.pending() {
            pairs.push((AgentId::from(a), m));
        }
    }
    pairs.sort_by_key(|(a, m)| (m.server, m.service, *a));
    pairs.dedup();
    let messages: Vec<MessageEntry> = pairs
        .iter()
        .enumerate()
        .map(|(i, (a, m))| {
            let text = sys.describe_message(*a, *m);
            MessageEntry { constant: names.fresh("M_", &text), message: text, value: i + 1 }
        })
        .collect();
    let msg_const = |a: AgentId, m: Message| -> &str {
        let i =
            pairs.binary_search_by_key(&(m.server, m.service, a), |(a, m)| (m.server, m.service, *a)).expect("message");
        &messages[i].constant
    };

    let servers: Vec<ServerEntry> = sys
        .servers
        .iter()
        .map(|s| ServerEntry {
            server: s.name.clone(),
            process: names.fresh("p_", &s.name),
            channel: names.fresh("ch_", &s.name),
            state_var: names.fresh("st_", &s.name),
            states: s.states.iter().map(|st| (st.clone(), names.fresh("S_", &format!("{}_{st}", s.name)))).collect(),
        })
        .collect();
    let agents: Vec<(String, String)> =
        sys.agents.iter().map(|a| (a.name.clone(), names.fresh("A_", &a.name))).collect();

    let payload = if messages.len() < 256 { "byte" } else { "int" };
    let capacity = sys.agents.len().max(1);
    let mut out = String::new();
    writeln!(out, "/* generated from an IMDS model: {} servers, {} agents */", sys.servers.len(), sys.agents.len())
        .unwrap();
    writeln!(out, "#define NAGENTS {}", sys.agents.len()).unwrap();
    out.push('\n');
    for m in &messages {
        writeln!(out, "#define {} {}\t/* {} */", m.constant, m.value, m.message).unwrap();
    }
    for s in &servers {
        for (i, (_, c)) in s.states.iter().enumerate() {
            writeln!(out, "#define {c} {i}").unwrap();
        }
    }
    out.push('\n');
    for s in &servers {
        writeln!(out, "chan {} = [{capacity}] of {{ {payload} }};", s.channel).unwrap();
    }
    for s in &servers {
        writeln!(out, "byte {};", s.state_var).unwrap();
    }
    out.push_str("byte nterm;\n");

    let mut rules = Vec::new();
    for (sid, s) in servers.iter().enumerate() {
        let sid = ServerId::from(sid);
        writeln!(out, "\nproctype {}() {{\n  do", s.process).unwrap();
        let own = sys.actions.iter().enumerate().filter(|(_, a)| a.server == sid);
        for (k, (id, a)) in own.enumerate() {
            let input = msg_const(a.agent, Message { server: a.server, service: a.service });
            let mut body = format!(
                "{st} == {ins} && {ch} ?? [{input}] -> {ch} ?? {input}; {st} = {outs}; ",
                st = s.state_var,
                ins = s.states[a.in_state.index()].1,
                ch = s.channel,
                outs = s.states[a.out_state.index()].1,
            );
            match a.out_message {
                Some(m) => write!(body, "{} ! {}", servers[m.server.index()].channel, msg_const(a.agent, m)).unwrap(),
                None => body.push_str("nterm++"),
            }
            writeln!(out, "  :: atomic {{ {body} }}").unwrap();
            rules.push(RuleEntry {
                rule: a.id.to_string(),
                action: sys.describe_action(ActionId::from(id)),
                process: s.process.clone(),
                alternative: k + 1,
            });
        }
        out.push_str("  :: nterm == NAGENTS -> break\n  od\n}\n");
    }

    out.push_str("\ninit {\n  atomic {\n");
    for (sid, s) in servers.iter().enumerate() {
        let st = sys.initial.server_states[sid];
        writeln!(out, "    {} = {};", s.state_var, s.states[st.index()].1).unwrap();
    }
    for (a, slot) in sys.initial.agent_slots.iter().enumerate() {
        match slot.pending() {
            Some(m) => writeln!(out, "    {} ! {};", servers[m.server.index()].channel, msg_const(AgentId::from(a), m))
                .unwrap(),
            None => out.push_str("    nterm++;\n"),
        }
    }
    for s in &servers {
        writeln!(out, "    run {}();", s.process).unwrap();
    }
    out.push_str("  }\n}\n");

    PromelaModel { text: out, manifest: Manifest { servers, agents, messages, rules } }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse;

    fn sys(src: &str) -> ElaboratedSystem {
        elaborate(&parse(src).unwrap().decl).unwrap().system
    }

    #[test]
    fn minimal_model_shape() {
        let s = sys("server: s(agents A[1]; servers), services {go}, states {a,b}, actions { {A[1].s.go, s.a} -> {s.b}, } servers s; agents A[1]; init -> { s(A[1]).a, A[1].s.go, }.");
        let pml = export(&s).text;
        assert_eq!(pml.matches("\nchan ").count(), 1);
        assert_eq!(pml.matches("proctype ").count(), 1);
        assert_eq!(pml.matches(":: atomic").count(), 1);
        assert!(
            pml.contains(
                ":: atomic { st_s == S_s_a && ch_s ?? [M_A_1__s_go] -> ch_s ?? M_A_1__s_go; st_s = S_s_b; nterm++ }"
            ),
            "{pml}"
        );
        assert!(pml.contains("chan ch_s = [1] of { byte };"));
    }

    #[test]
    fn zero_agents_get_capacity_one() {
        let s = sys(
            "server: s(agents; servers), services {}, states {a}, actions {} servers s; agents; init -> { s().a, }.",
        );
        let m = export(&s);
        assert!(m.text.contains("chan ch_s = [1] of { byte };"));
        assert!(m.text.contains("#define NAGENTS 0"));
        assert!(m.manifest.messages.is_empty());
    }

    #[test]
    fn sanitized_names_stay_unique() {
        let mut n = Names::default();
        assert_eq!(n.fresh("p_", "markerE[1]"), "p_markerE_1");
        assert_eq!(n.fresh("p_", "markerE_1"), "p_markerE_1_2");
        assert_eq!(n.fresh("M_", "AMP[1].lotE[2].try"), "M_AMP_1__lotE_2__try");
    }
}
