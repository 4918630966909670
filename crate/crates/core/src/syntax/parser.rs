use crate::diag::{Diagnostic, SourceSpan};
use crate::model::*;

use super::lexer::{tokenize, Kind, Token};
use super::ParseError;

#[derive(Debug, Clone)]
pub struct ParseResult {
    pub decl: SystemDecl,
    pub warnings: Vec<Diagnostic>,
}

pub fn parse(text: &str) -> Result<ParseResult, ParseError> {
    parse_bytes(text.as_bytes())
}

pub fn parse_bytes(input: &[u8]) -> Result<ParseResult, ParseError> {
    let toks = tokenize(input)?;
    let mut p = Parser { toks, pos: 0, warnings: Vec::new() };
    let decl = p.system()?;
    Ok(ParseResult { decl, warnings: p.warnings })
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    warnings: Vec<Diagnostic>,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_kind(&self) -> Kind {
        self.toks[self.pos].kind
    }

    fn at(&self, k: Kind) -> bool {
        self.peek_kind() == k
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if t.kind != Kind::Eof {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, k: Kind) -> bool {
        if self.at(k) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn unexpected(&self, expected: &[Kind]) -> ParseError {
        let t = self.peek();
        let found = if t.kind == Kind::Eof { "end of input".to_string() } else { format!("'{}'", t.text) };
        ParseError::syntax(t.span, found, expected.iter().map(ToString::to_string).collect())
    }

    fn expect(&mut self, k: Kind) -> Result<Token, ParseError> {
        if self.at(k) {
            Ok(self.bump())
        } else {
            Err(self.unexpected(&[k]))
        }
    }

    fn ident(&mut self) -> Result<Token, ParseError> {
        self.expect(Kind::Ident)
    }

    fn system(&mut self) -> Result<SystemDecl, ParseError> {
        let mut constants = Vec::new();
        while self.at(Kind::Define) {
            let kw = self.bump();
            let name = self.ident()?;
            let value = self.expect(Kind::Int)?;
            constants.push(ConstBinding {
                name: name.text,
                value: value.text.parse().expect("lexer checked"),
                span: kw.span.to(value.span),
            });
        }
        let mut server_types = Vec::new();
        while self.at(Kind::Server) {
            server_types.push(self.server_type()?);
        }
        if !self.at(Kind::Servers) {
            return Err(self.unexpected(&[Kind::Server, Kind::Servers, Kind::Define]));
        }
        self.bump();
        let server_instances = self.sized_list(Kind::Semi)?;
        self.expect(Kind::Semi)?;
        self.expect(Kind::Agents)?;
        let agent_instances = self.sized_list(Kind::Semi)?;
        self.expect(Kind::Semi)?;
        let init = self.init_block()?;
        if !self.at(Kind::Eof) {
            return Err(self.unexpected(&[Kind::Eof]));
        }
        Ok(SystemDecl { constants, server_types, server_instances, agent_instances, init })
    }

    fn server_type(&mut self) -> Result<ServerType, ParseError> {
        let kw = self.expect(Kind::Server)?;
        self.expect(Kind::Colon)?;
        let name = self.ident()?;
        self.expect(Kind::LParen)?;
        self.expect(Kind::Agents)?;
        let formal_agents = self.sized_list(Kind::Semi)?;
        self.expect(Kind::Semi)?;
        self.expect(Kind::Servers)?;
        let formal_servers = self.sized_list(Kind::RParen)?;
        self.expect(Kind::RParen)?;
        self.eat(Kind::Comma);
        self.expect(Kind::Services)?;
        self.expect(Kind::LBrace)?;
        let services = self.sized_list(Kind::RBrace)?;
        self.expect(Kind::RBrace)?;
        self.eat(Kind::Comma);
        self.expect(Kind::States)?;
        self.expect(Kind::LBrace)?;
        let states = self.sized_list(Kind::RBrace)?;
        self.expect(Kind::RBrace)?;
        self.eat(Kind::Comma);
        self.expect(Kind::Actions)?;
        self.expect(Kind::LBrace)?;
        let mut rules = Vec::new();
        while !self.at(Kind::RBrace) {
            if !self.at(Kind::Lt) && !self.at(Kind::LBrace) {
                return Err(self.unexpected(&[Kind::Lt, Kind::LBrace, Kind::RBrace]));
            }
            rules.push(self.rule()?);
        }
        let close = self.expect(Kind::RBrace)?;
        self.eat(Kind::Comma);
        Ok(ServerType {
            name: name.text,
            formal_agents,
            formal_servers,
            services,
            states,
            rules,
            span: kw.span.to(close.span),
        })
    }

    /// `IDENT ["[" expr "]"] {"," ...} [","]`, possibly empty, ended by `end`.
    fn sized_list(&mut self, end: Kind) -> Result<Vec<SizedName>, ParseError> {
        let mut out = Vec::new();
        while self.at(Kind::Ident) {
            let name = self.bump();
            let mut span = name.span;
            let size = if self.eat(Kind::LBracket) {
                let e = self.expr()?;
                let close = self.expect(Kind::RBracket)?;
                span = span.to(close.span);
                Some(e)
            } else {
                None
            };
            out.push(SizedName { name: name.text, size, span });
            if !self.eat(Kind::Comma) {
                break;
            }
        }
        if !self.at(end) {
            return Err(self.unexpected(&[Kind::Ident, Kind::Comma, end]));
        }
        Ok(out)
    }

    fn replicators(&mut self) -> Result<Vec<Replicator>, ParseError> {
        let mut out = Vec::new();
        while self.at(Kind::Lt) {
            let open = self.bump();
            let var = self.ident()?;
            self.expect(Kind::Eq)?;
            let lower = self.expr()?;
            self.expect(Kind::DotDot)?;
            let upper = self.expr()?;
            let close = self.expect(Kind::Gt)?;
            out.push(Replicator { var: var.text, lower, upper, span: open.span.to(close.span) });
        }
        Ok(out)
    }

    fn rule(&mut self) -> Result<ActionRule, ParseError> {
        let start = self.peek().span;
        let replicators = self.replicators()?;
        self.expect(Kind::LBrace)?;
        let input_message = self.msg_ref()?;
        self.expect(Kind::Comma)?;
        let input_state = self.state_ref()?;
        self.expect(Kind::RBrace)?;
        self.expect(Kind::Arrow)?;
        self.expect(Kind::LBrace)?;
        let first = self.reference()?;
        self.expect(Kind::Dot)?;
        let second = self.reference()?;
        let (output_message, output_state) = if self.eat(Kind::Dot) {
            let third = self.reference()?;
            self.expect(Kind::Comma)?;
            let st = self.state_ref()?;
            (Some(MessagePattern { agent: first, server: second, service: third }), st)
        } else {
            (None, StatePattern { server: first, state: second })
        };
        let close = self.expect(Kind::RBrace)?;
        self.eat(Kind::Comma);
        Ok(ActionRule {
            replicators,
            input_message,
            input_state,
            output_message,
            output_state,
            span: start.to(close.span),
        })
    }

    fn msg_ref(&mut self) -> Result<MessagePattern, ParseError> {
        let agent = self.reference()?;
        self.expect(Kind::Dot)?;
        let server = self.reference()?;
        self.expect(Kind::Dot)?;
        let service = self.reference()?;
        Ok(MessagePattern { agent, server, service })
    }

    fn state_ref(&mut self) -> Result<StatePattern, ParseError> {
        let server = self.reference()?;
        self.expect(Kind::Dot)?;
        let state = self.reference()?;
        Ok(StatePattern { server, state })
    }

    fn reference(&mut self) -> Result<Ref, ParseError> {
        let name = self.ident()?;
        let mut span = name.span;
        let mut indices = Vec::new();
        if self.eat(Kind::LBracket) {
            loop {
                let lo = self.expr()?;
                if self.eat(Kind::DotDot) {
                    let hi = self.expr()?;
                    indices.push(IndexItem::Range(lo, hi));
                } else {
                    indices.push(IndexItem::Single(lo));
                }
                if !self.eat(Kind::Comma) {
                    break;
                }
            }
            let close = self.expect(Kind::RBracket)?;
            span = span.to(close.span);
        }
        Ok(Ref { name: name.text, indices, span })
    }

    fn term(&mut self) -> Result<(Term, SourceSpan), ParseError> {
        match self.peek_kind() {
            Kind::Int => {
                let t = self.bump();
                Ok((Term::Int(t.text.parse().expect("lexer checked")), t.span))
            }
            Kind::Ident => {
                let t = self.bump();
                Ok((Term::Ident(t.text), t.span))
            }
            _ => Err(self.unexpected(&[Kind::Int, Kind::Ident])),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let (first, mut span) = self.term()?;
        let mut rest = Vec::new();
        loop {
            let op = match self.peek_kind() {
                Kind::Plus => AddOp::Add,
                Kind::Minus => AddOp::Sub,
                _ => break,
            };
            self.bump();
            let (t, sp) = self.term()?;
            span = span.to(sp);
            rest.push((op, t));
        }
        Ok(Expr { first, rest, span })
    }

    fn init_block(&mut self) -> Result<Vec<InitItem>, ParseError> {
        self.expect(Kind::Init)?;
        self.expect(Kind::Arrow)?;
        self.expect(Kind::LBrace)?;
        let mut items = Vec::new();
        while !self.at(Kind::RBrace) {
            if !self.at(Kind::Lt) && !self.at(Kind::Ident) {
                return Err(self.unexpected(&[Kind::Lt, Kind::Ident, Kind::RBrace]));
            }
            let start = self.peek().span;
            let replicators = self.replicators()?;
            let head = self.reference()?;
            let kind = if self.eat(Kind::LParen) {
                let mut actuals = Vec::new();
                while self.at(Kind::Ident) {
                    actuals.push(self.reference()?);
                    if !self.eat(Kind::Comma) {
                        break;
                    }
                }
                self.expect(Kind::RParen)?;
                self.expect(Kind::Dot)?;
                let state = self.reference()?;
                InitKind::Server { target: head, actuals, state }
            } else if self.at(Kind::Dot) {
                self.bump();
                let server = self.reference()?;
                self.expect(Kind::Dot)?;
                let service = self.reference()?;
                InitKind::Message(MessagePattern { agent: head, server, service })
            } else {
                return Err(self.unexpected(&[Kind::LParen, Kind::Dot]));
            };
            let end = self.toks[self.pos.saturating_sub(1)].span;
            items.push(InitItem { replicators, kind, span: start.to(end) });
            if !self.eat(Kind::Comma) {
                break;
            }
        }
        self.expect(Kind::RBrace)?;
        self.expect(Kind::Dot)?;
        Ok(items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "server: s(agents A[1]; servers), services {go}, states {a,b}, actions { {A[1].s.go, s.a} -> {s.b}, } servers s; agents A[1]; init -> { s(A[1]).a, A[1].s.go, }.";

    #[test]
    fn minimal_system() {
        let r = parse(MINIMAL).unwrap();
        let d = r.decl;
        assert_eq!(d.server_types.len(), 1);
        let t = &d.server_types[0];
        assert_eq!(t.name, "s");
        assert!(t.formal_servers.is_empty());
        assert_eq!(t.rules.len(), 1);
        assert!(t.rules[0].output_message.is_none());
        assert_eq!(d.init.len(), 2);
    }

    #[test]
    fn unclosed_actions_reports_end_of_input() {
        let src = "server: s(agents A; servers), services {go}, states {a}, actions { {A.s.go, s.a} -> {s.a},";
        let err = parse(src).unwrap_err();
        assert_eq!(err.span.offset, src.len());
        assert!(err.message.contains("end of input"), "{}", err.message);
        assert!(!err.expected.is_empty());
    }

    #[test]
    fn multi_index_actuals_and_ranges() {
        let src = "server: t(agents X[2]; servers), services {go}, states {a}, actions {} \
                   servers t; agents X[2]; init -> { t(X[1..2]).a, <j=1..2> X[j].t.go, }.";
        let d = parse(src).unwrap().decl;
        let InitKind::Server { actuals, .. } = &d.init[0].kind else { panic!() };
        assert!(matches!(actuals[0].indices[0], IndexItem::Range(..)));
        assert_eq!(d.init[1].replicators.len(), 1);
    }

    #[test]
    fn keyword_as_identifier_is_rejected() {
        let src = "server: init(agents; servers), services {}, states {a}, actions {} servers; agents; init -> {}.";
        assert!(parse(src).is_err());
    }

    #[test]
    fn subtraction_in_index() {
        let src = "#DEFINE N 2 server: t(agents A; servers), services {sw[2]}, states {a}, \
                   actions { <j=1..N> {A.t.sw[j], t.a} -> {A.t.sw[3-j], t.a}, } \
                   servers t; agents A; init -> { t(A).a, A.t.sw[1], }.";
        let d = parse(src).unwrap().decl;
        let out = d.server_types[0].rules[0].output_message.as_ref().unwrap();
        let IndexItem::Single(e) = &out.service.indices[0] else { panic!() };
        assert_eq!(e.eval(|n| (n == "j").then_some(1)), Ok(2));
    }
}
