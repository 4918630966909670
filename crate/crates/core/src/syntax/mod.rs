//! Lexer, parser and pretty-printer for the `.imds` specification language.
//!
//! ```text
//! system     := {define} {serverType} "servers" instList ";" "agents" instList ";" initBlock
//! define     := "#DEFINE" IDENT INT
//! serverType := "server" ":" IDENT "(" "agents" formals ";" "servers" formals ")" [","]
//!               "services" "{" declList "}" [","] "states" "{" declList "}" [","]
//!               "actions" "{" {rule} "}" [","]
//! rule       := {replicator} "{" msgRef "," stRef "}" "->" "{" [msgRef ","] stRef "}" [","]
//! replicator := "<" IDENT "=" expr ".." expr ">"
//! initBlock  := "init" "->" "{" {initItem} "}" "."
//! initItem   := {replicator} ( ref "(" actuals ")" "." ref | msgRef ) [","]
//! ref        := IDENT ["[" index {"," index} "]"]      index := expr [".." expr]
//! expr       := term {("+"|"-") term}                  term  := INT | IDENT
//! ```
//!
//! Lists accept trailing commas and may be empty. `//` starts a comment.

mod lexer;
mod parser;
mod printer;

use std::fmt;

use thiserror::Error;

use crate::diag::SourceSpan;

pub use lexer::is_keyword;
pub use parser::{parse, parse_bytes, ParseResult};
pub use printer::pretty_print;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Lexical,
    Syntax,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseErrorKind::Lexical => "lexical error",
            ParseErrorKind::Syntax => "syntax error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{span}: {kind}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub span: SourceSpan,
    pub message: String,
    /// Tokens that would have been accepted at `span` (syntax errors only).
    pub expected: Vec<String>,
}

impl ParseError {
    fn lexical(span: SourceSpan, message: impl Into<String>) -> Self {
        Self { kind: ParseErrorKind::Lexical, span, message: message.into(), expected: Vec::new() }
    }

    fn syntax(span: SourceSpan, found: String, expected: Vec<String>) -> Self {
        let message = format!("expected {}, found {found}", expected.join(" or "));
        Self { kind: ParseErrorKind::Syntax, span, message, expected }
    }
}
