//! S-expression wire format.
//!
//! ```text
//! query := "(" "e" name ")"
//!        | "(" "p" relation query ")"
//!        | "(" "i" query query+ ")"
//!        | "(" "u" query query+ ")"
//!        | "(" "n" query ")"
//! ```
//!
//! Names are bare atoms, or double-quoted with `\"` and `\\` escapes when
//! they contain whitespace, parentheses, quotes or backslashes. A relation
//! name ending in `^-1` denotes the inverse relation.

use super::{NodeId, Query, QueryBuilder, QueryNode};
use crate::error::{Error, Result};
use crate::kg::NameMaps;

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open,
    Close,
    Atom(String),
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::QueryParse {
        offset,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                tokens.push((Token::Open, i));
                i += 1;
            }
            b')' => {
                tokens.push((Token::Close, i));
                i += 1;
            }
            b if b.is_ascii_whitespace() => i += 1,
            b'"' => {
                let start = i;
                let mut s = String::new();
                let mut chars = text[i + 1..].char_indices();
                loop {
                    match chars.next() {
                        None => return Err(parse_err(start, "unterminated string")),
                        Some((k, '"')) => {
                            i = i + 1 + k + 1;
                            break;
                        }
                        Some((k, '\\')) => match chars.next() {
                            Some((_, c @ ('"' | '\\'))) => s.push(c),
                            _ => return Err(parse_err(i + 1 + k, "invalid escape")),
                        },
                        Some((_, c)) => s.push(c),
                    }
                }
                tokens.push((Token::Atom(s), start));
            }
            _ => {
                let start = i;
                while i < bytes.len() && !matches!(bytes[i], b'(' | b')' | b'"') && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                tokens.push((Token::Atom(text[start..i].to_owned()), start));
            }
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    end: usize,
    names: &'a NameMaps,
    builder: QueryBuilder,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&(Token, usize)> {
        self.tokens.get(self.pos)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.1)
    }

    fn atom(&mut self, what: &str) -> Result<(String, usize)> {
        match self.tokens.get(self.pos) {
            Some((Token::Atom(s), off)) => {
                self.pos += 1;
                Ok((s.clone(), *off))
            }
            _ => Err(parse_err(self.offset(), format!("expected {what}"))),
        }
    }

    fn expr(&mut self) -> Result<NodeId> {
        let open = match self.peek() {
            Some((Token::Open, off)) => *off,
            Some((_, off)) => return Err(parse_err(*off, "expected `(`")),
            None => return Err(parse_err(self.end, "unexpected end of input")),
        };
        self.pos += 1;
        let (op, op_off) = self.atom("operator")?;
        let id = match op.as_str() {
            "e" => {
                let (name, off) = self.atom("entity name")?;
                let e = self.names.entity(&name).map_err(|e| parse_err(off, e.to_string()))?;
                self.builder.anchor(e)
            }
            "p" => {
                let (name, off) = self.atom("relation name")?;
                let r = self.names.relation(&name).map_err(|e| parse_err(off, e.to_string()))?;
                let child = self.expr()?;
                self.builder.project(r, child)
            }
            "n" => {
                let child = self.expr()?;
                self.builder.negate(child)
            }
            "i" | "u" => {
                let mut children = Vec::new();
                while matches!(self.peek(), Some((Token::Open, _))) {
                    children.push(self.expr()?);
                }
                if children.len() < 2 {
                    return Err(parse_err(open, format!("`{op}` needs at least two operands")));
                }
                if op == "i" {
                    self.builder.intersect(children)
                } else {
                    self.builder.union(children)
                }
            }
            _ => return Err(parse_err(op_off, format!("unknown operator `{op}`"))),
        };
        match self.peek() {
            Some((Token::Close, _)) => {
                self.pos += 1;
                Ok(id)
            }
            Some((_, off)) => Err(parse_err(*off, format!("too many operands for `{op}`"))),
            None => Err(parse_err(self.end, format!("unbalanced parentheses: `(` at byte {open} is never closed"))),
        }
    }
}

/// Parses and resolves a query against the graph dictionaries.
pub fn parse_query(text: &str, names: &NameMaps) -> Result<Query> {
    let mut p = Parser {
        tokens: tokenize(text)?,
        pos: 0,
        end: text.len(),
        names,
        builder: QueryBuilder::new(),
    };
    let root = p.expr()?;
    if let Some((tok, off)) = p.peek() {
        let msg = if *tok == Token::Close {
            "unbalanced parentheses: unexpected `)`"
        } else {
            "trailing input after query"
        };
        return Err(parse_err(*off, msg));
    }
    p.builder.finish(root)
}

fn push_atom(out: &mut String, name: &str) {
    let needs_quotes = name.is_empty()
        || name
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '(' | ')' | '"' | '\\'));
    if !needs_quotes {
        out.push_str(name);
        return;
    }
    out.push('"');
    for c in name.chars() {
        if matches!(c, '"' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
}

fn write_node(q: &Query, id: NodeId, names: &NameMaps, out: &mut String) {
    match q.node(id) {
        QueryNode::Anchor(e) => {
            out.push_str("(e ");
            push_atom(out, names.entity_name(*e));
        }
        QueryNode::Projection { rel, child } => {
            out.push_str("(p ");
            push_atom(out, &names.relation_name(*rel));
            out.push(' ');
            write_node(q, *child, names, out);
        }
        QueryNode::Negation(child) => {
            out.push_str("(n ");
            write_node(q, *child, names, out);
        }
        QueryNode::Intersection(cs) | QueryNode::Union(cs) => {
            out.push_str(if matches!(q.node(id), QueryNode::Intersection(_)) {
                "(i"
            } else {
                "(u"
            });
            for &c in cs {
                out.push(' ');
                write_node(q, c, names, out);
            }
        }
    }
    out.push(')');
}

/// Canonical single-spaced rendering; children keep their stored order.
pub fn serialize_query(q: &Query, names: &NameMaps) -> String {
    let mut out = String::new();
    write_node(q, q.root(), names, &mut out);
    out
}
