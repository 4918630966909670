//! Ground (elaborated) IMDS system: every replicator expanded, every formal
//! bound, every reference resolved to an index.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use serde::Serialize;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl From<usize> for $name {
            fn from(v: usize) -> Self {
                $name(v as u32)
            }
        }
    };
}

id_newtype!(
    /// Position of a server instance in declaration order.
    ServerId
);
id_newtype!(
    /// Position of an agent in declaration order.
    AgentId
);
id_newtype!(
    /// Index into the owning server's ground state list.
    StateId
);
id_newtype!(
    /// Index into the target server's ground service list.
    ServiceId
);
id_newtype!(
    /// Index into [`ElaboratedSystem::actions`].
    ActionId
);

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServerInstance {
    /// Flat display name, e.g. `markerE[1]`.
    pub name: String,
    pub base: String,
    pub index: Option<i64>,
    pub type_name: String,
    pub states: Vec<String>,
    pub services: Vec<String>,
    /// Actual agents bound to the type's formal agent list, flattened.
    pub agents: Vec<AgentId>,
    /// Actual servers bound to the type's formal server list, flattened.
    pub peers: Vec<ServerId>,
}

impl ServerInstance {
    pub fn state_id(&self, name: &str) -> Option<StateId> {
        self.states.iter().position(|s| s == name).map(StateId::from)
    }

    pub fn service_id(&self, name: &str) -> Option<ServiceId> {
        self.services.iter().position(|s| s == name).map(ServiceId::from)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AgentInstance {
    /// Flat display name, e.g. `AMP[2]`.
    pub name: String,
    pub base: String,
    pub index: Option<i64>,
}

/// A message waiting at `server`; the carrying agent is implied by the slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Message {
    pub server: ServerId,
    pub service: ServiceId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum AgentSlot {
    Pending(Message),
    Terminated,
}

impl AgentSlot {
    pub fn pending(&self) -> Option<Message> {
        match self {
            AgentSlot::Pending(m) => Some(*m),
            AgentSlot::Terminated => None,
        }
    }
}

/// Global snapshot: one state per server, one slot per agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Configuration {
    pub server_states: Vec<StateId>,
    pub agent_slots: Vec<AgentSlot>,
}

impl Configuration {
    pub fn all_terminated(&self) -> bool {
        self.agent_slots.iter().all(|s| matches!(s, AgentSlot::Terminated))
    }

    /// Agents whose pending message waits at `server`.
    pub fn agents_at(&self, server: ServerId) -> impl Iterator<Item = AgentId> + '_ {
        self.agent_slots.iter().enumerate().filter_map(move |(a, slot)| match slot {
            AgentSlot::Pending(m) if m.server == server => Some(AgentId::from(a)),
            _ => None,
        })
    }
}

/// Stable identity of a ground action: owning server, ordinal of the rule in
/// its server type, and the replicator valuation that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct RuleId {
    pub server: ServerId,
    pub rule: usize,
    pub valuation: Vec<(String, i64)>,
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}r{}", self.server.0, self.rule)?;
        if !self.valuation.is_empty() {
            let vals: Vec<String> = self.valuation.iter().map(|(k, v)| format!("{k}={v}")).collect();
            write!(f, "{{{}}}", vals.join(","))?;
        }
        Ok(())
    }
}

/// One concrete instance of an action rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroundAction {
    pub id: RuleId,
    pub server: ServerId,
    pub agent: AgentId,
    pub service: ServiceId,
    pub in_state: StateId,
    /// `None` terminates the agent. The message always belongs to `agent`.
    pub out_message: Option<Message>,
    pub out_state: StateId,
}

impl GroundAction {
    /// The part of the action that matters semantically (everything but the id).
    pub fn signature(&self) -> (ServerId, AgentId, ServiceId, StateId, Option<Message>, StateId) {
        (self.server, self.agent, self.service, self.in_state, self.out_message, self.out_state)
    }
}

#[derive(Debug, Clone)]
pub struct ElaboratedSystem {
    pub servers: Vec<ServerInstance>,
    pub agents: Vec<AgentInstance>,
    /// All ground actions in canonical order: by server, then rule ordinal,
    /// then agent, then replicator valuation.
    pub actions: Vec<GroundAction>,
    pub initial: Configuration,
    server_ranges: Vec<Range<usize>>,
    acceptors: HashMap<(ServerId, AgentId, ServiceId), Vec<ActionId>>,
}

impl ElaboratedSystem {
    pub(crate) fn new(
        servers: Vec<ServerInstance>,
        agents: Vec<AgentInstance>,
        actions: Vec<GroundAction>,
        initial: Configuration,
    ) -> Self {
        let mut server_ranges = vec![0..0; servers.len()];
        let mut start = 0;
        for (s, range) in server_ranges.iter_mut().enumerate() {
            let end = start + actions[start..].iter().take_while(|a| a.server.index() == s).count();
            *range = start..end;
            start = end;
        }
        debug_assert_eq!(start, actions.len(), "actions must be grouped by server");
        let mut acceptors: HashMap<_, Vec<ActionId>> = HashMap::new();
        for (i, a) in actions.iter().enumerate() {
            acceptors.entry((a.server, a.agent, a.service)).or_default().push(ActionId::from(i));
        }
        Self { servers, agents, actions, initial, server_ranges, acceptors }
    }

    pub fn server(&self, id: ServerId) -> &ServerInstance {
        &self.servers[id.index()]
    }

    pub fn agent(&self, id: AgentId) -> &AgentInstance {
        &self.agents[id.index()]
    }

    pub fn action(&self, id: ActionId) -> &GroundAction {
        &self.actions[id.index()]
    }

    /// Ground actions owned by `server`, in canonical order.
    pub fn actions_of(&self, server: ServerId) -> &[GroundAction] {
        &self.actions[self.server_ranges[server.index()].clone()]
    }

    /// Actions of `server` that consume `service` from `agent`, in canonical order.
    pub fn acceptors(&self, server: ServerId, agent: AgentId, service: ServiceId) -> &[ActionId] {
        self.acceptors.get(&(server, agent, service)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn server_by_name(&self, name: &str) -> Option<ServerId> {
        self.servers.iter().position(|s| s.name == name).map(ServerId::from)
    }

    pub fn agent_by_name(&self, name: &str) -> Option<AgentId> {
        self.agents.iter().position(|a| a.name == name).map(AgentId::from)
    }

    pub fn state_name(&self, server: ServerId, state: StateId) -> &str {
        &self.server(server).states[state.index()]
    }

    pub fn service_name(&self, server: ServerId, service: ServiceId) -> &str {
        &self.server(server).services[service.index()]
    }

    /// `agent.server.service` using flat names.
    pub fn describe_message(&self, agent: AgentId, msg: Message) -> String {
        format!(
            "{}.{}.{}",
            self.agent(agent).name,
            self.server(msg.server).name,
            self.service_name(msg.server, msg.service)
        )
    }

    pub fn describe_action(&self, id: ActionId) -> String {
        let a = self.action(id);
        let input = format!(
            "{{{}, {}.{}}}",
            self.describe_message(a.agent, Message { server: a.server, service: a.service }),
            self.server(a.server).name,
            self.state_name(a.server, a.in_state)
        );
        let out_state = format!("{}.{}", self.server(a.server).name, self.state_name(a.server, a.out_state));
        match a.out_message {
            Some(m) => format!("{input} -> {{{}, {out_state}}}", self.describe_message(a.agent, m)),
            None => format!("{input} -> {{{out_state}}}"),
        }
    }

    pub fn describe_configuration(&self, cfg: &Configuration) -> String {
        let servers: Vec<String> = cfg
            .server_states
            .iter()
            .enumerate()
            .map(|(s, st)| {
                let s = ServerId::from(s);
                format!("{}={}", self.server(s).name, self.state_name(s, *st))
            })
            .collect();
        let agents: Vec<String> = cfg
            .agent_slots
            .iter()
            .enumerate()
            .map(|(a, slot)| {
                let agent = &self.agents[a].name;
                match slot {
                    AgentSlot::Pending(m) => {
                        format!("{agent}@{}.{}", self.server(m.server).name, self.service_name(m.server, m.service))
                    }
                    AgentSlot::Terminated => format!("{agent}:done"),
                }
            })
            .collect();
        format!("[{}] [{}]", servers.join(" "), agents.join(" "))
    }

    /// Same servers, agents, bindings, initial configuration and ground
    /// action multiset per server; rule ids and action order are ignored.
    pub fn isomorphic(&self, other: &ElaboratedSystem) -> bool {
        if self.servers != other.servers || self.agents != other.agents || self.initial != other.initial {
            return false;
        }
        let key = |sys: &ElaboratedSystem| {
            let mut sigs: Vec<_> = sys.actions.iter().map(GroundAction::signature).collect();
            sigs.sort();
            sigs
        };
        key(self) == key(other)
    }
}
