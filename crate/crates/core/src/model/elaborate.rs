//! Turns a [`SystemDecl`] into a ground [`ElaboratedSystem`].

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::decl::*;
use super::system::*;
use crate::diag::{Diagnostic, SourceSpan};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ElaborateOptions {
    /// Accept an input message whose server component does not name the
    /// owning server type (downgraded to a warning). The input message of a
    /// rule is always received by the owning server, so the reference is
    /// redundant; the verbatim listing misspells it once.
    pub lenient_input_server: bool,
}

impl ElaborateOptions {
    pub fn lenient() -> Self {
        Self { lenient_input_server: true }
    }
}

#[derive(Debug, Clone)]
pub struct Elaboration {
    pub system: ElaboratedSystem,
    pub warnings: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Error)]
#[error("elaboration failed with {} error(s); first: {}", .diagnostics.iter().filter(|d| d.is_error()).count(), .diagnostics.iter().find(|d| d.is_error()).map(ToString::to_string).unwrap_or_default())]
pub struct ElaborationError {
    pub diagnostics: Vec<Diagnostic>,
}

pub fn elaborate(decl: &SystemDecl) -> Result<Elaboration, ElaborationError> {
    elaborate_with(decl, ElaborateOptions::default())
}

pub fn elaborate_with(decl: &SystemDecl, opts: ElaborateOptions) -> Result<Elaboration, ElaborationError> {
    let (system, diagnostics) = Elaborator::new(decl, opts).run();
    match system {
        Some(system) if !diagnostics.iter().any(Diagnostic::is_error) => {
            Ok(Elaboration { system, warnings: diagnostics })
        }
        _ => Err(ElaborationError { diagnostics }),
    }
}

/// All diagnostics for `decl`; no error-severity entry iff it elaborates.
pub fn validate(decl: &SystemDecl) -> Vec<Diagnostic> {
    validate_with(decl, ElaborateOptions::default())
}

pub fn validate_with(decl: &SystemDecl, opts: ElaborateOptions) -> Vec<Diagnostic> {
    Elaborator::new(decl, opts).run().1
}

/// Sized name after evaluation: `None` for scalars.
#[derive(Debug, Clone)]
struct Sized {
    name: String,
    size: Option<i64>,
}

#[derive(Debug)]
struct TypeInfo<'d> {
    decl: &'d ServerType,
    services: Vec<Sized>,
    states: Vec<Sized>,
    formal_agents: Vec<Sized>,
    formal_servers: Vec<Sized>,
}

#[derive(Debug, Clone)]
struct Binding {
    /// Per formal agent, the bound actuals.
    agents: Vec<Vec<AgentId>>,
    servers: Vec<Vec<ServerId>>,
    state: StateId,
}

type NameIndex = HashMap<(String, Option<i64>), u32>;

/// Ground names of a sized declaration list, in order, with lookup by
/// (name, index).
fn flatten(items: &[Sized]) -> (Vec<String>, NameIndex) {
    let mut names = Vec::new();
    let mut lookup = HashMap::new();
    for item in items {
        match item.size {
            None => {
                lookup.insert((item.name.clone(), None), names.len() as u32);
                names.push(item.name.clone());
            }
            Some(n) => {
                for k in 1..=n {
                    lookup.insert((item.name.clone(), Some(k)), names.len() as u32);
                    names.push(format!("{}[{k}]", item.name));
                }
            }
        }
    }
    (names, lookup)
}

fn ground_name(base: &str, index: Option<i64>) -> String {
    match index {
        Some(k) => format!("{base}[{k}]"),
        None => base.to_string(),
    }
}

struct Elaborator<'d> {
    decl: &'d SystemDecl,
    opts: ElaborateOptions,
    diags: Vec<Diagnostic>,
    seen: HashSet<(SourceSpan, String)>,
    consts: HashMap<String, i64>,
}

type Env = HashMap<String, i64>;

impl<'d> Elaborator<'d> {
    fn new(decl: &'d SystemDecl, opts: ElaborateOptions) -> Self {
        Self { decl, opts, diags: Vec::new(), seen: HashSet::new(), consts: HashMap::new() }
    }

    fn error(&mut self, span: SourceSpan, msg: impl Into<String>) {
        let msg = msg.into();
        if self.seen.insert((span, msg.clone())) {
            self.diags.push(Diagnostic::error(span, msg));
        }
    }

    fn warning(&mut self, span: SourceSpan, msg: impl Into<String>) {
        let msg = msg.into();
        if self.seen.insert((span, msg.clone())) {
            self.diags.push(Diagnostic::warning(span, msg));
        }
    }

    fn eval(&mut self, e: &Expr, env: &Env) -> Option<i64> {
        match e.eval(|n| env.get(n).copied()) {
            Ok(v) => Some(v),
            Err(EvalError::Unbound(n)) => {
                self.error(e.span, format!("unbound identifier '{n}'"));
                None
            }
            Err(EvalError::Overflow) => {
                self.error(e.span, "integer overflow in index expression");
                None
            }
        }
    }

    fn eval_size(&mut self, item: &SizedName, what: &str) -> Option<Sized> {
        let size = match &item.size {
            None => None,
            Some(e) => {
                let consts = self.consts.clone();
                let v = self.eval(e, &consts)?;
                if v < 1 {
                    self.error(e.span, format!("array size of {what} '{}' must be at least 1, got {v}", item.name));
                    return None;
                }
                Some(v)
            }
        };
        Some(Sized { name: item.name.clone(), size })
    }

    fn eval_sized_list(&mut self, items: &[SizedName], what: &str) -> Vec<Sized> {
        let mut out = Vec::new();
        let mut names = HashSet::new();
        for item in items {
            if !names.insert(item.name.clone()) {
                self.error(item.span, format!("duplicate {what} '{}'", item.name));
                continue;
            }
            if let Some(s) = self.eval_size(item, what) {
                out.push(s);
            }
        }
        out
    }

    /// Every valuation of the replicators, in lexicographic order with the
    /// first replicator outermost.
    fn valuations(&mut self, reps: &[Replicator]) -> Option<Vec<Vec<(String, i64)>>> {
        let mut ranges = Vec::new();
        let mut vars = HashSet::new();
        for r in reps {
            if !vars.insert(r.var.clone()) {
                self.error(r.span, format!("replicator index '{}' declared twice", r.var));
                return None;
            }
            if self.consts.contains_key(&r.var) {
                self.error(r.span, format!("replicator index '{}' shadows a constant", r.var));
                return None;
            }
            for e in [&r.lower, &r.upper] {
                if let Some(v) = e.idents().find(|v| reps.iter().any(|o| o.var == *v)) {
                    self.error(e.span, format!("replicator range may not depend on index '{v}'"));
                    return None;
                }
            }
            let consts = self.consts.clone();
            let lo = self.eval(&r.lower, &consts)?;
            let hi = self.eval(&r.upper, &consts)?;
            if lo > hi {
                self.warning(r.span, format!("empty replicator range {lo}..{hi} for '{}'", r.var));
            }
            ranges.push((r.var.clone(), lo, hi));
        }
        let mut out: Vec<Vec<(String, i64)>> = vec![Vec::new()];
        for (var, lo, hi) in ranges {
            let mut next = Vec::new();
            for prefix in &out {
                for v in lo..=hi {
                    let mut p = prefix.clone();
                    p.push((var.clone(), v));
                    next.push(p);
                }
            }
            out = next;
        }
        Some(out)
    }

    fn env_for(&self, valuation: &[(String, i64)]) -> Env {
        let mut env = self.consts.clone();
        env.extend(valuation.iter().cloned());
        env
    }

    /// Resolves the single optional index of `r` against a declaration of
    /// the given size.
    fn index_of(&mut self, r: &Ref, size: Option<i64>, env: &Env, what: &str) -> Option<Option<i64>> {
        match (size, r.indices.as_slice()) {
            (None, []) => Some(None),
            (None, _) => {
                self.error(r.span, format!("{what} '{}' is not an array and cannot be indexed", r.name));
                None
            }
            (Some(_), []) => {
                self.error(r.span, format!("{what} '{}' is an array and needs an index", r.name));
                None
            }
            (Some(n), [IndexItem::Single(e)]) => {
                let k = self.eval(e, env)?;
                if k < 1 || k > n {
                    self.error(e.span, format!("index {k} out of range 1..{n} for {what} '{}'", r.name));
                    return None;
                }
                Some(Some(k))
            }
            (Some(_), _) => {
                self.error(r.span, format!("{what} '{}' takes exactly one index here", r.name));
                None
            }
        }
    }

    fn run(mut self) -> (Option<ElaboratedSystem>, Vec<Diagnostic>) {
        let sys = self.build();
        let mut diags = self.diags;
        diags.sort_by_key(|d| (d.span.offset, d.span.line == 0));
        (sys, diags)
    }

    fn build(&mut self) -> Option<ElaboratedSystem> {
        let decl = self.decl;

        for c in &decl.constants {
            if c.value < 0 {
                self.error(c.span, format!("constant '{}' must be non-negative", c.name));
            }
            if self.consts.insert(c.name.clone(), c.value).is_some() {
                self.error(c.span, format!("duplicate constant '{}'", c.name));
            }
        }

        // Server types.
        let mut types: HashMap<&str, TypeInfo> = HashMap::new();
        for t in &decl.server_types {
            if types.contains_key(t.name.as_str()) {
                self.error(t.span, format!("duplicate server type '{}'", t.name));
                continue;
            }
            let services = self.eval_sized_list(&t.services, "service");
            let states = self.eval_sized_list(&t.states, "state");
            if t.states.is_empty() {
                self.error(t.span, format!("server type '{}' declares no states", t.name));
            }
            let formal_agents = self.eval_sized_list(&t.formal_agents, "formal agent");
            let formal_servers = self.eval_sized_list(&t.formal_servers, "formal server");
            let mut formal_names = HashSet::new();
            for f in t.formal_agents.iter().chain(&t.formal_servers) {
                if !formal_names.insert(f.name.as_str()) {
                    self.error(f.span, format!("formal '{}' declared twice in '{}'", f.name, t.name));
                }
                if f.name == t.name {
                    self.error(f.span, format!("formal '{}' has the same name as its server type", f.name));
                }
            }
            types.insert(&t.name, TypeInfo { decl: t, services, states, formal_agents, formal_servers });
        }

        // Server instances: instance names coincide with their type names.
        let mut servers: Vec<ServerInstance> = Vec::new();
        let mut server_lookup: HashMap<(String, Option<i64>), ServerId> = HashMap::new();
        let mut server_sizes: HashMap<String, (Option<i64>, SourceSpan)> = HashMap::new();
        for inst in &decl.server_instances {
            let Some(info) = types.get(inst.name.as_str()) else {
                self.error(inst.span, format!("no server type named '{}'", inst.name));
                continue;
            };
            if server_sizes.contains_key(&inst.name) {
                self.error(inst.span, format!("server instance '{}' declared twice", inst.name));
                continue;
            }
            let Some(sized) = self.eval_size(inst, "server instance") else { continue };
            server_sizes.insert(inst.name.clone(), (sized.size, inst.span));
            let (states, _) = flatten(&info.states);
            let (services, _) = flatten(&info.services);
            let indices: Vec<Option<i64>> = match sized.size {
                None => vec![None],
                Some(n) => (1..=n).map(Some).collect(),
            };
            for index in indices {
                server_lookup.insert((inst.name.clone(), index), ServerId::from(servers.len()));
                servers.push(ServerInstance {
                    name: ground_name(&inst.name, index),
                    base: inst.name.clone(),
                    index,
                    type_name: inst.name.clone(),
                    states: states.clone(),
                    services: services.clone(),
                    agents: Vec::new(),
                    peers: Vec::new(),
                });
            }
        }

        let mut agents: Vec<AgentInstance> = Vec::new();
        let mut agent_lookup: HashMap<(String, Option<i64>), AgentId> = HashMap::new();
        let mut agent_sizes: HashMap<String, Option<i64>> = HashMap::new();
        for inst in &decl.agent_instances {
            if agent_sizes.contains_key(&inst.name) {
                self.error(inst.span, format!("agent '{}' declared twice", inst.name));
                continue;
            }
            if server_sizes.contains_key(&inst.name) {
                self.error(inst.span, format!("'{}' is declared both as a server and as an agent", inst.name));
                continue;
            }
            let Some(sized) = self.eval_size(inst, "agent") else { continue };
            agent_sizes.insert(inst.name.clone(), sized.size);
            let indices: Vec<Option<i64>> = match sized.size {
                None => vec![None],
                Some(n) => (1..=n).map(Some).collect(),
            };
            for index in indices {
                agent_lookup.insert((inst.name.clone(), index), AgentId::from(agents.len()));
                agents.push(AgentInstance { name: ground_name(&inst.name, index), base: inst.name.clone(), index });
            }
        }

        // Init block.
        let mut bindings: Vec<Option<Binding>> = vec![None; servers.len()];
        let mut initial_msgs: Vec<Option<(Message, SourceSpan)>> = vec![None; agents.len()];
        for item in &decl.init {
            let Some(vals) = self.valuations(&item.replicators) else { continue };
            for val in vals {
                let env = self.env_for(&val);
                match &item.kind {
                    InitKind::Server { target, actuals, state } => {
                        let Some(sid) = self.global_server(target, &server_sizes, &server_lookup, &env) else {
                            continue;
                        };
                        if let Some(prev) = &bindings[sid.index()] {
                            let _ = prev;
                            self.error(
                                item.span,
                                format!("server '{}' is bound more than once", servers[sid.index()].name),
                            );
                            continue;
                        }
                        let info = &types[servers[sid.index()].type_name.as_str()];
                        let mut agent_actuals = Vec::new();
                        let mut server_actuals = Vec::new();
                        let mut ok = true;
                        for a in actuals {
                            if let Some(size) = agent_sizes.get(&a.name) {
                                match self.expand_actual(a, *size, &env) {
                                    Some(idx) => agent_actuals
                                        .extend(idx.into_iter().map(|i| agent_lookup[&(a.name.clone(), i)])),
                                    None => ok = false,
                                }
                            } else if let Some((size, _)) = server_sizes.get(&a.name) {
                                match self.expand_actual(a, *size, &env) {
                                    Some(idx) => server_actuals
                                        .extend(idx.into_iter().map(|i| server_lookup[&(a.name.clone(), i)])),
                                    None => ok = false,
                                }
                            } else {
                                self.error(a.span, format!("unbound identifier '{}' in actual parameters", a.name));
                                ok = false;
                            }
                        }
                        if !ok {
                            continue;
                        }
                        let want_agents: i64 = info.formal_agents.iter().map(|f| f.size.unwrap_or(1)).sum();
                        let want_servers: i64 = info.formal_servers.iter().map(|f| f.size.unwrap_or(1)).sum();
                        if want_agents != agent_actuals.len() as i64 || want_servers != server_actuals.len() as i64 {
                            self.error(
                                item.span,
                                format!(
                                    "arity mismatch binding '{}': type expects {want_agents} agent(s) and {want_servers} server(s), got {} and {}",
                                    servers[sid.index()].name,
                                    agent_actuals.len(),
                                    server_actuals.len()
                                ),
                            );
                            continue;
                        }
                        let split = |sizes: &[Sized], flat: &[u32]| -> Vec<Vec<u32>> {
                            let mut out = Vec::new();
                            let mut pos = 0usize;
                            for f in sizes {
                                let n = f.size.unwrap_or(1) as usize;
                                out.push(flat[pos..pos + n].to_vec());
                                pos += n;
                            }
                            out
                        };
                        let flat_agents: Vec<u32> = agent_actuals.iter().map(|a| a.0).collect();
                        let flat_servers: Vec<u32> = server_actuals.iter().map(|s| s.0).collect();
                        let agent_groups = split(&info.formal_agents, &flat_agents)
                            .into_iter()
                            .map(|g| g.into_iter().map(AgentId).collect())
                            .collect();
                        let server_groups = split(&info.formal_servers, &flat_servers)
                            .into_iter()
                            .map(|g| g.into_iter().map(ServerId).collect())
                            .collect();
                        let (_, state_lookup) = flatten(&info.states);
                        let state_sizes = info.states.clone();
                        let Some(st) = self.lookup_sized(state, &state_sizes, &state_lookup, &env, "state") else {
                            continue;
                        };
                        let inst = &mut servers[sid.index()];
                        inst.agents = agent_actuals;
                        inst.peers = server_actuals;
                        bindings[sid.index()] =
                            Some(Binding { agents: agent_groups, servers: server_groups, state: StateId(st) });
                    }
                    InitKind::Message(m) => {
                        let Some(aid) = self.global_agent(&m.agent, &agent_sizes, &agent_lookup, &env) else {
                            continue;
                        };
                        let Some(sid) = self.global_server(&m.server, &server_sizes, &server_lookup, &env) else {
                            continue;
                        };
                        let info = &types[servers[sid.index()].type_name.as_str()];
                        let (_, svc_lookup) = flatten(&info.services);
                        let svc_sizes = info.services.clone();
                        let Some(svc) = self.lookup_sized(&m.service, &svc_sizes, &svc_lookup, &env, "service") else {
                            continue;
                        };
                        if initial_msgs[aid.index()].is_some() {
                            self.error(
                                item.span,
                                format!("agent '{}' has more than one initial message", agents[aid.index()].name),
                            );
                            continue;
                        }
                        initial_msgs[aid.index()] = Some((Message { server: sid, service: ServiceId(svc) }, item.span));
                    }
                }
            }
        }

        for (s, b) in bindings.iter().enumerate() {
            if b.is_none() {
                let span = server_sizes.get(&servers[s].base).map(|(_, sp)| *sp).unwrap_or_default();
                self.error(span, format!("server '{}' has no binding in the init block", servers[s].name));
            }
        }
        for (a, m) in initial_msgs.iter().enumerate() {
            match m {
                None => {
                    let span = decl
                        .agent_instances
                        .iter()
                        .find(|d| d.name == agents[a].base)
                        .map(|d| d.span)
                        .unwrap_or_default();
                    self.error(span, format!("agent '{}' has no initial message", agents[a].name));
                }
                Some((msg, span)) => {
                    if !servers[msg.server.index()].agents.contains(&AgentId::from(a))
                        && bindings[msg.server.index()].is_some()
                    {
                        self.error(
                            *span,
                            format!(
                                "agent '{}' is not among the agents bound to server '{}'",
                                agents[a].name,
                                servers[msg.server.index()].name
                            ),
                        );
                    }
                }
            }
        }
        if self.diags.iter().any(Diagnostic::is_error) {
            return None;
        }

        // Ground actions.
        let mut actions: Vec<GroundAction> = Vec::new();
        for (s, inst) in servers.iter().enumerate() {
            let sid = ServerId::from(s);
            let info = &types[inst.type_name.as_str()];
            let binding = bindings[s].clone().expect("checked above");
            let mut own: Vec<(usize, usize, GroundAction)> = Vec::new();
            for (r, rule) in info.decl.rules.iter().enumerate() {
                let Some(vals) = self.valuations(&rule.replicators) else { continue };
                for (v, val) in vals.into_iter().enumerate() {
                    let env = self.env_for(&val);
                    if let Some(ga) = self.ground_rule(sid, info, &binding, rule, &env, &servers, &types) {
                        own.push((r, v, GroundAction { id: RuleId { server: sid, rule: r, valuation: val }, ..ga }));
                    }
                }
            }
            own.sort_by_key(|(r, v, ga)| (*r, ga.agent, *v));
            let mut seen = HashSet::new();
            for (r, _, ga) in own {
                if seen.insert(ga.signature()) {
                    actions.push(ga);
                } else {
                    let span = info.decl.rules[r].span;
                    self.warning(span, format!("duplicate ground action collapsed in server '{}'", inst.name));
                }
            }
        }
        if self.diags.iter().any(Diagnostic::is_error) {
            return None;
        }

        let initial = Configuration {
            server_states: bindings.iter().map(|b| b.as_ref().expect("bound").state).collect(),
            agent_slots: initial_msgs.iter().map(|m| AgentSlot::Pending(m.expect("checked above").0)).collect(),
        };
        Some(ElaboratedSystem::new(servers, agents, actions, initial))
    }

    fn lookup_sized(&mut self, r: &Ref, sizes: &[Sized], lookup: &NameIndex, env: &Env, what: &str) -> Option<u32> {
        let Some(decl) = sizes.iter().find(|s| s.name == r.name) else {
            self.error(r.span, format!("undeclared {what} '{}'", r.name));
            return None;
        };
        let idx = self.index_of(r, decl.size, env, what)?;
        lookup.get(&(r.name.clone(), idx)).copied()
    }

    fn expand_actual(&mut self, r: &Ref, size: Option<i64>, env: &Env) -> Option<Vec<Option<i64>>> {
        let Some(n) = size else {
            if !r.indices.is_empty() {
                self.error(r.span, format!("'{}' is not an array and cannot be indexed", r.name));
                return None;
            }
            return Some(vec![None]);
        };
        if r.indices.is_empty() {
            return Some((1..=n).map(Some).collect());
        }
        let mut out = Vec::new();
        for item in &r.indices {
            let (lo, hi, span) = match item {
                IndexItem::Single(e) => {
                    let v = self.eval(e, env)?;
                    (v, v, e.span)
                }
                IndexItem::Range(a, b) => (self.eval(a, env)?, self.eval(b, env)?, a.span.to(b.span)),
            };
            for k in lo..=hi {
                if k < 1 || k > n {
                    self.error(span, format!("index {k} out of range 1..{n} for '{}'", r.name));
                    return None;
                }
                out.push(Some(k));
            }
        }
        Some(out)
    }

    fn global_server(
        &mut self,
        r: &Ref,
        sizes: &HashMap<String, (Option<i64>, SourceSpan)>,
        lookup: &HashMap<(String, Option<i64>), ServerId>,
        env: &Env,
    ) -> Option<ServerId> {
        let Some((size, _)) = sizes.get(&r.name) else {
            self.error(r.span, format!("unknown server instance '{}'", r.name));
            return None;
        };
        let idx = self.index_of(r, *size, env, "server")?;
        lookup.get(&(r.name.clone(), idx)).copied()
    }

    fn global_agent(
        &mut self,
        r: &Ref,
        sizes: &HashMap<String, Option<i64>>,
        lookup: &HashMap<(String, Option<i64>), AgentId>,
        env: &Env,
    ) -> Option<AgentId> {
        let Some(size) = sizes.get(&r.name) else {
            self.error(r.span, format!("unknown agent '{}'", r.name));
            return None;
        };
        let idx = self.index_of(r, *size, env, "agent")?;
        lookup.get(&(r.name.clone(), idx)).copied()
    }

    fn formal_agent(&mut self, info: &TypeInfo, binding: &Binding, r: &Ref, env: &Env) -> Option<AgentId> {
        let Some(pos) = info.formal_agents.iter().position(|f| f.name == r.name) else {
            self.error(r.span, format!("'{}' is not a formal agent of server type '{}'", r.name, info.decl.name));
            return None;
        };
        let idx = self.index_of(r, info.formal_agents[pos].size, env, "formal agent")?;
        Some(binding.agents[pos][idx.map_or(0, |k| (k - 1) as usize)])
    }

    /// `Some(None)` means the owning server itself.
    fn formal_server(&mut self, info: &TypeInfo, binding: &Binding, r: &Ref, env: &Env) -> Option<Option<ServerId>> {
        if r.name == info.decl.name {
            if !r.indices.is_empty() {
                self.error(r.span, format!("self reference '{}' cannot be indexed", r.name));
                return None;
            }
            return Some(None);
        }
        let Some(pos) = info.formal_servers.iter().position(|f| f.name == r.name) else {
            self.error(
                r.span,
                format!("'{}' is neither server type '{}' nor one of its formal servers", r.name, info.decl.name),
            );
            return None;
        };
        let idx = self.index_of(r, info.formal_servers[pos].size, env, "formal server")?;
        Some(Some(binding.servers[pos][idx.map_or(0, |k| (k - 1) as usize)]))
    }

    #[allow(clippy::too_many_arguments)]
    fn ground_rule(
        &mut self,
        sid: ServerId,
        info: &TypeInfo,
        binding: &Binding,
        rule: &ActionRule,
        env: &Env,
        servers: &[ServerInstance],
        types: &HashMap<&str, TypeInfo>,
    ) -> Option<GroundAction> {
        let (_, svc_lookup) = flatten(&info.services);
        let (_, st_lookup) = flatten(&info.states);
        let inm = &rule.input_message;

        let agent = self.formal_agent(info, binding, &inm.agent, env);
        if inm.server.name != info.decl.name || !inm.server.indices.is_empty() {
            let msg = format!(
                "input message server '{}' does not name the owning server type '{}'",
                inm.server.name, info.decl.name
            );
            if self.opts.lenient_input_server {
                self.warning(inm.server.span, format!("{msg}; treated as '{}'", info.decl.name));
            } else {
                self.error(inm.server.span, msg);
            }
        }
        let service = self.lookup_sized(&inm.service, &info.services, &svc_lookup, env, "service");
        let in_state = self.state_of(info, &st_lookup, &rule.input_state, env);
        let out_state = self.state_of(info, &st_lookup, &rule.output_state, env);

        let out_message = match &rule.output_message {
            None => Some(None),
            Some(m) => {
                let out_agent = self.formal_agent(info, binding, &m.agent, env);
                let target = self.formal_server(info, binding, &m.server, env).map(|t| t.unwrap_or(sid));
                match (out_agent, target, agent) {
                    (Some(oa), Some(t), Some(ia)) => {
                        if oa != ia {
                            self.error(m.agent.span, "output message must carry the same agent as the input message");
                            None
                        } else {
                            let tinfo = &types[servers[t.index()].type_name.as_str()];
                            let (_, tl) = flatten(&tinfo.services);
                            let tsizes = tinfo.services.clone();
                            let svc = self.lookup_sized(&m.service, &tsizes, &tl, env, "service");
                            if !servers[t.index()].agents.contains(&oa) {
                                self.error(
                                    m.agent.span,
                                    format!(
                                        "agent '{}' is not bound to target server '{}'",
                                        m.agent.name,
                                        servers[t.index()].name
                                    ),
                                );
                                None
                            } else {
                                svc.map(|svc| Some(Message { server: t, service: ServiceId(svc) }))
                            }
                        }
                    }
                    _ => None,
                }
            }
        };

        Some(GroundAction {
            id: RuleId { server: sid, rule: 0, valuation: Vec::new() },
            server: sid,
            agent: agent?,
            service: ServiceId(service?),
            in_state: StateId(in_state?),
            out_message: out_message?,
            out_state: StateId(out_state?),
        })
    }

    fn state_of(&mut self, info: &TypeInfo, lookup: &NameIndex, p: &StatePattern, env: &Env) -> Option<u32> {
        if p.server.name != info.decl.name || !p.server.indices.is_empty() {
            self.error(
                p.server.span,
                format!(
                    "state pattern must refer to the owning server type '{}', found '{}'",
                    info.decl.name, p.server.name
                ),
            );
            return None;
        }
        self.lookup_sized(&p.state, &info.states, lookup, env, "state")
    }
}

/// Substitutes constants and expands every replicator, producing an
/// equivalent declaration with literal indices only.
pub fn ground_decl(decl: &SystemDecl) -> Result<SystemDecl, ElaborationError> {
    let consts: Env = decl.constants.iter().map(|c| (c.name.clone(), c.value)).collect();
    let mut errors = Vec::new();
    let mut range_errors = Vec::new();
    let mut ev = |e: &Expr, env: &Env| -> Expr {
        match e.eval(|n| env.get(n).copied()) {
            Ok(v) => Expr { span: e.span, ..Expr::int(v) },
            Err(_) => {
                errors.push(Diagnostic::error(e.span, "cannot evaluate expression"));
                e.clone()
            }
        }
    };
    fn map_ref(r: &Ref, env: &Env, ev: &mut dyn FnMut(&Expr, &Env) -> Expr) -> Ref {
        Ref {
            name: r.name.clone(),
            indices: r
                .indices
                .iter()
                .map(|i| match i {
                    IndexItem::Single(e) => IndexItem::Single(ev(e, env)),
                    IndexItem::Range(a, b) => IndexItem::Range(ev(a, env), ev(b, env)),
                })
                .collect(),
            span: r.span,
        }
    }
    fn map_msg(m: &MessagePattern, env: &Env, ev: &mut dyn FnMut(&Expr, &Env) -> Expr) -> MessagePattern {
        MessagePattern {
            agent: map_ref(&m.agent, env, ev),
            server: map_ref(&m.server, env, ev),
            service: map_ref(&m.service, env, ev),
        }
    }
    fn map_state(p: &StatePattern, env: &Env, ev: &mut dyn FnMut(&Expr, &Env) -> Expr) -> StatePattern {
        StatePattern { server: map_ref(&p.server, env, ev), state: map_ref(&p.state, env, ev) }
    }
    fn valuations(reps: &[Replicator], consts: &Env) -> Option<Vec<Env>> {
        let mut out = vec![consts.clone()];
        for r in reps {
            let lo = r.lower.eval(|n| consts.get(n).copied()).ok()?;
            let hi = r.upper.eval(|n| consts.get(n).copied()).ok()?;
            out = out
                .into_iter()
                .flat_map(|env| {
                    (lo..=hi).map(move |v| {
                        let mut e = env.clone();
                        e.insert(r.var.clone(), v);
                        e
                    })
                })
                .collect();
        }
        Some(out)
    }
    let sized = |items: &[SizedName], ev: &mut dyn FnMut(&Expr, &Env) -> Expr| -> Vec<SizedName> {
        items
            .iter()
            .map(|s| SizedName { name: s.name.clone(), size: s.size.as_ref().map(|e| ev(e, &consts)), span: s.span })
            .collect()
    };

    let mut server_types = Vec::new();
    for t in &decl.server_types {
        let mut rules = Vec::new();
        for rule in &t.rules {
            let Some(envs) = valuations(&rule.replicators, &consts) else {
                range_errors.push(Diagnostic::error(rule.span, "cannot evaluate replicator range"));
                continue;
            };
            for env in envs {
                rules.push(ActionRule {
                    replicators: Vec::new(),
                    input_message: map_msg(&rule.input_message, &env, &mut ev),
                    input_state: map_state(&rule.input_state, &env, &mut ev),
                    output_message: rule.output_message.as_ref().map(|m| map_msg(m, &env, &mut ev)),
                    output_state: map_state(&rule.output_state, &env, &mut ev),
                    span: rule.span,
                });
            }
        }
        server_types.push(ServerType {
            name: t.name.clone(),
            formal_agents: sized(&t.formal_agents, &mut ev),
            formal_servers: sized(&t.formal_servers, &mut ev),
            services: sized(&t.services, &mut ev),
            states: sized(&t.states, &mut ev),
            rules,
            span: t.span,
        });
    }
    let server_instances = sized(&decl.server_instances, &mut ev);
    let agent_instances = sized(&decl.agent_instances, &mut ev);
    let mut init = Vec::new();
    for item in &decl.init {
        let Some(envs) = valuations(&item.replicators, &consts) else {
            range_errors.push(Diagnostic::error(item.span, "cannot evaluate replicator range"));
            continue;
        };
        for env in envs {
            let kind = match &item.kind {
                InitKind::Server { target, actuals, state } => InitKind::Server {
                    target: map_ref(target, &env, &mut ev),
                    actuals: actuals.iter().map(|a| map_ref(a, &env, &mut ev)).collect(),
                    state: map_ref(state, &env, &mut ev),
                },
                InitKind::Message(m) => InitKind::Message(map_msg(m, &env, &mut ev)),
            };
            init.push(InitItem { replicators: Vec::new(), kind, span: item.span });
        }
    }
    errors.extend(range_errors);
    if !errors.is_empty() {
        return Err(ElaborationError { diagnostics: errors });
    }
    Ok(SystemDecl { constants: Vec::new(), server_types, server_instances, agent_instances, init })
}
