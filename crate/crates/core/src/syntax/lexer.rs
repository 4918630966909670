use std::fmt;

use crate::diag::SourceSpan;

use super::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Ident,
    Int,
    Define,
    Server,
    Agents,
    Servers,
    Services,
    States,
    Actions,
    Init,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Lt,
    Gt,
    Comma,
    Semi,
    Dot,
    DotDot,
    Colon,
    Eq,
    Plus,
    Minus,
    Arrow,
    Eof,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Kind::Ident => "identifier",
            Kind::Int => "integer",
            Kind::Define => "'#DEFINE'",
            Kind::Server => "'server'",
            Kind::Agents => "'agents'",
            Kind::Servers => "'servers'",
            Kind::Services => "'services'",
            Kind::States => "'states'",
            Kind::Actions => "'actions'",
            Kind::Init => "'init'",
            Kind::LParen => "'('",
            Kind::RParen => "')'",
            Kind::LBrace => "'{'",
            Kind::RBrace => "'}'",
            Kind::LBracket => "'['",
            Kind::RBracket => "']'",
            Kind::Lt => "'<'",
            Kind::Gt => "'>'",
            Kind::Comma => "','",
            Kind::Semi => "';'",
            Kind::Dot => "'.'",
            Kind::DotDot => "'..'",
            Kind::Colon => "':'",
            Kind::Eq => "'='",
            Kind::Plus => "'+'",
            Kind::Minus => "'-'",
            Kind::Arrow => "'->'",
            Kind::Eof => "end of input",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: Kind,
    pub text: String,
    pub span: SourceSpan,
}

fn keyword(word: &str) -> Option<Kind> {
    Some(match word {
        "server" => Kind::Server,
        "agents" => Kind::Agents,
        "servers" => Kind::Servers,
        "services" => Kind::Services,
        "states" => Kind::States,
        "actions" => Kind::Actions,
        "init" => Kind::Init,
        _ => return None,
    })
}

pub fn is_keyword(word: &str) -> bool {
    keyword(word).is_some() || word == "DEFINE"
}

pub fn tokenize(input: &[u8]) -> Result<Vec<Token>, ParseError> {
    let mut toks = Vec::new();
    let mut pos = 0usize;
    let mut line = 1u32;
    let mut col = 1u32;

    macro_rules! advance {
        ($n:expr) => {{
            for _ in 0..$n {
                if input[pos] == b'\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                pos += 1;
            }
        }};
    }

    while pos < input.len() {
        let c = input[pos];
        let start = SourceSpan::new(pos, line, col, 1);
        let peek = input.get(pos + 1).copied();
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => advance!(1),
            b'/' if peek == Some(b'/') => {
                while pos < input.len() && input[pos] != b'\n' {
                    advance!(1);
                }
            }
            b'#' => {
                let word = b"#DEFINE";
                if input[pos..].starts_with(word)
                    && !input.get(pos + word.len()).is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_')
                {
                    toks.push(Token {
                        kind: Kind::Define,
                        text: "#DEFINE".into(),
                        span: SourceSpan { len: word.len(), ..start },
                    });
                    advance!(word.len());
                } else {
                    return Err(ParseError::lexical(start, "unknown directive; only '#DEFINE' is supported"));
                }
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut end = pos;
                while end < input.len() && (input[end].is_ascii_alphanumeric() || input[end] == b'_') {
                    end += 1;
                }
                let text = std::str::from_utf8(&input[pos..end]).expect("ascii").to_string();
                let kind = keyword(&text).unwrap_or(Kind::Ident);
                let len = end - pos;
                toks.push(Token { kind, text, span: SourceSpan { len, ..start } });
                advance!(len);
            }
            c if c.is_ascii_digit() => {
                let mut end = pos;
                while end < input.len() && input[end].is_ascii_digit() {
                    end += 1;
                }
                let text = std::str::from_utf8(&input[pos..end]).expect("ascii").to_string();
                let len = end - pos;
                if text.parse::<i64>().is_err() {
                    return Err(ParseError::lexical(SourceSpan { len, ..start }, "integer literal too large"));
                }
                toks.push(Token { kind: Kind::Int, text, span: SourceSpan { len, ..start } });
                advance!(len);
            }
            _ => {
                let (kind, len) = match (c, peek) {
                    (b'-', Some(b'>')) => (Kind::Arrow, 2),
                    (b'.', Some(b'.')) => (Kind::DotDot, 2),
                    (b'(', _) => (Kind::LParen, 1),
                    (b')', _) => (Kind::RParen, 1),
                    (b'{', _) => (Kind::LBrace, 1),
                    (b'}', _) => (Kind::RBrace, 1),
                    (b'[', _) => (Kind::LBracket, 1),
                    (b']', _) => (Kind::RBracket, 1),
                    (b'<', _) => (Kind::Lt, 1),
                    (b'>', _) => (Kind::Gt, 1),
                    (b',', _) => (Kind::Comma, 1),
                    (b';', _) => (Kind::Semi, 1),
                    (b'.', _) => (Kind::Dot, 1),
                    (b':', _) => (Kind::Colon, 1),
                    (b'=', _) => (Kind::Eq, 1),
                    (b'+', _) => (Kind::Plus, 1),
                    (b'-', _) => (Kind::Minus, 1),
                    _ => {
                        let shown =
                            if c.is_ascii_graphic() { format!("'{}'", c as char) } else { format!("byte 0x{c:02x}") };
                        return Err(ParseError::lexical(start, format!("unexpected character {shown}")));
                    }
                };
                let text = std::str::from_utf8(&input[pos..pos + len]).expect("ascii").to_string();
                toks.push(Token { kind, text, span: SourceSpan { len, ..start } });
                advance!(len);
            }
        }
    }
    toks.push(Token { kind: Kind::Eof, text: String::new(), span: SourceSpan::new(pos, line, col, 0) });
    Ok(toks)
}
