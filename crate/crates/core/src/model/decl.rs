//! Declaration-level (source-shaped) representation of an IMDS model.

use crate::diag::SourceSpan;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemDecl {
    pub constants: Vec<ConstBinding>,
    pub server_types: Vec<ServerType>,
    pub server_instances: Vec<SizedName>,
    pub agent_instances: Vec<SizedName>,
    pub init: Vec<InitItem>,
}

/// `#DEFINE NAME value`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstBinding {
    pub name: String,
    pub value: i64,
    pub span: SourceSpan,
}

/// A name with an optional array size: formals, services, states and
/// instance declarations all share this shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizedName {
    pub name: String,
    pub size: Option<Expr>,
    pub span: SourceSpan,
}

impl SizedName {
    pub fn scalar(name: impl Into<String>) -> Self {
        Self { name: name.into(), size: None, span: SourceSpan::default() }
    }

    pub fn array(name: impl Into<String>, size: Expr) -> Self {
        Self { name: name.into(), size: Some(size), span: SourceSpan::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerType {
    pub name: String,
    pub formal_agents: Vec<SizedName>,
    pub formal_servers: Vec<SizedName>,
    pub services: Vec<SizedName>,
    pub states: Vec<SizedName>,
    pub rules: Vec<ActionRule>,
    pub span: SourceSpan,
}

/// `<i = lo .. hi>`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replicator {
    pub var: String,
    pub lower: Expr,
    pub upper: Expr,
    pub span: SourceSpan,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionRule {
    pub replicators: Vec<Replicator>,
    pub input_message: MessagePattern,
    pub input_state: StatePattern,
    /// `None` terminates the agent.
    pub output_message: Option<MessagePattern>,
    pub output_state: StatePattern,
    pub span: SourceSpan,
}

/// `agent.server.service`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessagePattern {
    pub agent: Ref,
    pub server: Ref,
    pub service: Ref,
}

/// `server.state`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePattern {
    pub server: Ref,
    pub state: Ref,
}

/// An identifier with an optional bracketed index list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ref {
    pub name: String,
    pub indices: Vec<IndexItem>,
    pub span: SourceSpan,
}

impl Ref {
    pub fn plain(name: impl Into<String>) -> Self {
        Self { name: name.into(), indices: Vec::new(), span: SourceSpan::default() }
    }

    pub fn indexed(name: impl Into<String>, index: Expr) -> Self {
        Self { name: name.into(), indices: vec![IndexItem::Single(index)], span: SourceSpan::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexItem {
    Single(Expr),
    /// `lo .. hi`, only meaningful in actual parameter lists.
    Range(Expr, Expr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitItem {
    pub replicators: Vec<Replicator>,
    pub kind: InitKind,
    pub span: SourceSpan,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitKind {
    /// `server(actuals).state`
    Server { target: Ref, actuals: Vec<Ref>, state: Ref },
    /// `agent.server.service`
    Message(MessagePattern),
}

/// Left-associative sum of terms: `t0 (+|-) t1 (+|-) t2 ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expr {
    pub first: Term,
    pub rest: Vec<(AddOp, Term)>,
    pub span: SourceSpan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddOp {
    Add,
    Sub,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Int(i64),
    Ident(String),
}

impl Expr {
    pub fn int(value: i64) -> Self {
        Self { first: Term::Int(value), rest: Vec::new(), span: SourceSpan::default() }
    }

    pub fn ident(name: impl Into<String>) -> Self {
        Self { first: Term::Ident(name.into()), rest: Vec::new(), span: SourceSpan::default() }
    }

    /// Evaluates with `lookup` resolving identifiers. Returns the first
    /// unresolved identifier on failure.
    pub fn eval<F>(&self, lookup: F) -> Result<i64, EvalError>
    where
        F: Fn(&str) -> Option<i64>,
    {
        let term = |t: &Term| -> Result<i64, EvalError> {
            match t {
                Term::Int(v) => Ok(*v),
                Term::Ident(name) => lookup(name).ok_or_else(|| EvalError::Unbound(name.clone())),
            }
        };
        let mut acc = term(&self.first)?;
        for (op, t) in &self.rest {
            let v = term(t)?;
            acc = match op {
                AddOp::Add => acc.checked_add(v),
                AddOp::Sub => acc.checked_sub(v),
            }
            .ok_or(EvalError::Overflow)?;
        }
        Ok(acc)
    }

    /// Identifiers mentioned by the expression, in order.
    pub fn idents(&self) -> impl Iterator<Item = &str> {
        std::iter::once(&self.first).chain(self.rest.iter().map(|(_, t)| t)).filter_map(|t| match t {
            Term::Ident(s) => Some(s.as_str()),
            Term::Int(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    Unbound(String),
    Overflow,
}
