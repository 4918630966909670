use std::fmt::Write;

use crate::model::*;

/// Canonical textual form of a declaration. Reparsing the output yields a
/// declaration that elaborates to an isomorphic system.
pub fn pretty_print(decl: &SystemDecl) -> String {
    let mut out = String::new();
    for c in &decl.constants {
        writeln!(out, "#DEFINE {} {}", c.name, c.value).unwrap();
    }
    if !decl.constants.is_empty() {
        out.push('\n');
    }
    for t in &decl.server_types {
        server_type(&mut out, t);
        out.push('\n');
    }
    writeln!(out, "servers {};", sized_list(&decl.server_instances)).unwrap();
    writeln!(out, "agents {};", sized_list(&decl.agent_instances)).unwrap();
    out.push('\n');
    out.push_str("init -> {\n");
    for item in &decl.init {
        out.push_str("  ");
        replicators(&mut out, &item.replicators);
        match &item.kind {
            InitKind::Server { target, actuals, state } => {
                let acts: Vec<String> = actuals.iter().map(reference).collect();
                write!(out, "{}({}).{}", reference(target), acts.join(", "), reference(state)).unwrap();
            }
            InitKind::Message(m) => out.push_str(&message(m)),
        }
        out.push_str(",\n");
    }
    out.push_str("}.\n");
    out
}

fn server_type(out: &mut String, t: &ServerType) {
    writeln!(
        out,
        "server: {}(agents {}; servers {}),",
        t.name,
        sized_list(&t.formal_agents),
        sized_list(&t.formal_servers)
    )
    .unwrap();
    writeln!(out, "services {{{}}},", sized_list(&t.services)).unwrap();
    writeln!(out, "states {{{}}},", sized_list(&t.states)).unwrap();
    out.push_str("actions {\n");
    for r in &t.rules {
        out.push_str("  ");
        replicators(out, &r.replicators);
        write!(out, "{{{}, {}}} -> {{", message(&r.input_message), state(&r.input_state)).unwrap();
        if let Some(m) = &r.output_message {
            write!(out, "{}, ", message(m)).unwrap();
        }
        writeln!(out, "{}}},", state(&r.output_state)).unwrap();
    }
    out.push_str("}\n");
}

fn replicators(out: &mut String, reps: &[Replicator]) {
    for r in reps {
        write!(out, "<{}={}..{}> ", r.var, expr(&r.lower), expr(&r.upper)).unwrap();
    }
}

fn sized_list(items: &[SizedName]) -> String {
    items
        .iter()
        .map(|s| match &s.size {
            Some(e) => format!("{}[{}]", s.name, expr(e)),
            None => s.name.clone(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn message(m: &MessagePattern) -> String {
    format!("{}.{}.{}", reference(&m.agent), reference(&m.server), reference(&m.service))
}

fn state(p: &StatePattern) -> String {
    format!("{}.{}", reference(&p.server), reference(&p.state))
}

fn reference(r: &Ref) -> String {
    if r.indices.is_empty() {
        return r.name.clone();
    }
    let items: Vec<String> = r
        .indices
        .iter()
        .map(|i| match i {
            IndexItem::Single(e) => expr(e),
            IndexItem::Range(a, b) => format!("{}..{}", expr(a), expr(b)),
        })
        .collect();
    format!("{}[{}]", r.name, items.join(","))
}

fn term(t: &Term) -> String {
    match t {
        Term::Int(v) => v.to_string(),
        Term::Ident(s) => s.clone(),
    }
}

fn expr(e: &Expr) -> String {
    let mut s = term(&e.first);
    for (op, t) in &e.rest {
        s.push(match op {
            AddOp::Add => '+',
            AddOp::Sub => '-',
        });
        s.push_str(&term(t));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse;

    #[test]
    fn replicator_prefixes_keep_declaration_order() {
        let src = "#DEFINE N 2 server: t(agents A[N]; servers), services {s[2]}, states {a}, \
                   actions { <i=1..N> <j=1..2> {A[i].t.s[j], t.a} -> {A[i].t.s[3-j], t.a}, } \
                   servers t; agents A[N]; init -> { t(A[1..N]).a, <i=1..N> A[i].t.s[1], }.";
        let printed = pretty_print(&parse(src).unwrap().decl);
        let rule_line = printed.lines().find(|l| l.contains("->") && l.contains("A[i]")).unwrap();
        assert!(rule_line.trim_start().starts_with("<i=1..N> <j=1..2> {"), "{rule_line}");
        // The reparsed declaration carries the same replicators in the same order.
        let reparsed = parse(&printed).unwrap().decl;
        let vars: Vec<&str> = reparsed.server_types[0].rules[0].replicators.iter().map(|r| r.var.as_str()).collect();
        assert_eq!(vars, ["i", "j"]);
    }
}
