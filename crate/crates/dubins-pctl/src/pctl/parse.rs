//! Plain-text formula parser.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! formula  := 'Pmax=?' '[' path ']'
//! path     := 'X' state | state 'U' state
//! state    := and ( '->' state )?
//! and      := unary ( '&' unary )*
//! unary    := '!' unary | primary
//! primary  := 'pi_p' | 'pi_d' | 'pi_u' | '(' state ')'
//!           | 'P' cmp number '[' path ']'
//! cmp      := '>=' | '>' | '<=' | '<'
//! ```

use super::{Cmp, Formula, PathFormula, StateFormula};
use crate::geometry::Prop;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("formula parse error at byte {pos}: {message}")]
pub struct ParseError {
    pub pos: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Bang,
    Amp,
    Arrow,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Until,
    Next,
    Atom(Prop),
    PmaxQuery,
    Prob,
    Cmp(Cmp),
    Number(f64),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Bang => write!(f, "'!'"),
            Token::Amp => write!(f, "'&'"),
            Token::Arrow => write!(f, "'->'"),
            Token::LParen => write!(f, "'('"),
            Token::RParen => write!(f, "')'"),
            Token::LBracket => write!(f, "'['"),
            Token::RBracket => write!(f, "']'"),
            Token::Until => write!(f, "'U'"),
            Token::Next => write!(f, "'X'"),
            Token::Atom(_) => write!(f, "proposition"),
            Token::PmaxQuery => write!(f, "'Pmax=?'"),
            Token::Prob => write!(f, "'P'"),
            Token::Cmp(c) => write!(f, "'{c}'"),
            Token::Number(n) => write!(f, "number {n}"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(usize, Token)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '!' => {
                out.push((i, Token::Bang));
                i += 1;
            }
            '&' => {
                out.push((i, Token::Amp));
                i += 1;
            }
            '(' => {
                out.push((i, Token::LParen));
                i += 1;
            }
            ')' => {
                out.push((i, Token::RParen));
                i += 1;
            }
            '[' => {
                out.push((i, Token::LBracket));
                i += 1;
            }
            ']' => {
                out.push((i, Token::RBracket));
                i += 1;
            }
            '-' => {
                if bytes.get(i + 1) == Some(&b'>') {
                    out.push((i, Token::Arrow));
                    i += 2;
                } else {
                    return Err(ParseError { pos: i, message: "expected '->'".into() });
                }
            }
            '>' | '<' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push((i, Token::Cmp(if c == '>' { Cmp::Ge } else { Cmp::Le })));
                    i += 2;
                } else {
                    out.push((i, Token::Cmp(if c == '>' { Cmp::Gt } else { Cmp::Lt })));
                    i += 1;
                }
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit() || bytes[i] == b'.' || bytes[i] == b'e'
                        || bytes[i] == b'E'
                        || ((bytes[i] == b'+' || bytes[i] == b'-')
                            && i > start
                            && (bytes[i - 1] == b'e' || bytes[i - 1] == b'E')))
                {
                    i += 1;
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError {
                    pos: start,
                    message: format!("invalid number '{text}'"),
                })?;
                out.push((start, Token::Number(value)));
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                match &src[start..i] {
                    "pi_p" => out.push((start, Token::Atom(Prop::Pickup))),
                    "pi_d" => out.push((start, Token::Atom(Prop::Dropoff))),
                    "pi_u" => out.push((start, Token::Atom(Prop::Unsafe))),
                    "U" => out.push((start, Token::Until)),
                    "X" => out.push((start, Token::Next)),
                    "P" => out.push((start, Token::Prob)),
                    "Pmax" => {
                        if bytes.get(i) == Some(&b'=') && bytes.get(i + 1) == Some(&b'?') {
                            i += 2;
                            out.push((start, Token::PmaxQuery));
                        } else {
                            return Err(ParseError {
                                pos: start,
                                message: "expected 'Pmax=?'".into(),
                            });
                        }
                    }
                    other => {
                        return Err(ParseError {
                            pos: start,
                            message: format!("unknown identifier '{other}'"),
                        })
                    }
                }
            }
            other => {
                return Err(ParseError { pos: i, message: format!("unexpected character '{other}'") })
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn advance(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Token) -> Result<(), ParseError> {
        match self.advance() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(ParseError {
                pos: self.tokens[self.pos - 1].0,
                message: format!("expected {want}, found {t}"),
            }),
            None => {
                Err(ParseError { pos: self.end, message: format!("expected {want}, found end") })
            }
        }
    }

    fn path(&mut self) -> Result<PathFormula, ParseError> {
        if self.peek() == Some(&Token::Next) {
            self.advance();
            return Ok(PathFormula::Next(self.state()?));
        }
        let left = self.state()?;
        self.expect(Token::Until)?;
        let right = self.state()?;
        Ok(PathFormula::Until(left, right))
    }

    fn state(&mut self) -> Result<StateFormula, ParseError> {
        let left = self.and_chain()?;
        if self.peek() == Some(&Token::Arrow) {
            self.advance();
            let right = self.state()?;
            return Ok(StateFormula::Implies(Box::new(left), Box::new(right)));
        }
        Ok(left)
    }

    fn and_chain(&mut self) -> Result<StateFormula, ParseError> {
        let mut acc = self.unary()?;
        while self.peek() == Some(&Token::Amp) {
            self.advance();
            let rhs = self.unary()?;
            acc = StateFormula::And(Box::new(acc), Box::new(rhs));
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<StateFormula, ParseError> {
        if self.peek() == Some(&Token::Bang) {
            self.advance();
            return Ok(StateFormula::Not(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<StateFormula, ParseError> {
        let pos = self.here();
        match self.advance() {
            Some(Token::Atom(p)) => Ok(StateFormula::Atom(p)),
            Some(Token::LParen) => {
                let inner = self.state()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Some(Token::Prob) => {
                let cmp = match self.advance() {
                    Some(Token::Cmp(c)) => c,
                    _ => {
                        return Err(ParseError {
                            pos,
                            message: "expected comparison after 'P'".into(),
                        })
                    }
                };
                let bound = match self.advance() {
                    Some(Token::Number(n)) if (0.0..=1.0).contains(&n) => n,
                    Some(Token::Number(n)) => {
                        return Err(ParseError {
                            pos,
                            message: format!("probability bound {n} outside [0, 1]"),
                        })
                    }
                    _ => {
                        return Err(ParseError { pos, message: "expected probability bound".into() })
                    }
                };
                self.expect(Token::LBracket)?;
                let path = self.path()?;
                self.expect(Token::RBracket)?;
                Ok(StateFormula::Prob { cmp, bound, path: Box::new(path) })
            }
            Some(t) => {
                Err(ParseError { pos, message: format!("expected a state formula, found {t}") })
            }
            None => Err(ParseError { pos, message: "expected a state formula, found end".into() }),
        }
    }
}

/// Parse a top-level `Pmax=?[ ... ]` query.
pub fn parse_formula(src: &str) -> Result<Formula, ParseError> {
    let tokens = lex(src)?;
    let mut p = Parser { tokens, pos: 0, end: src.len() };
    p.expect(Token::PmaxQuery)?;
    p.expect(Token::LBracket)?;
    let path = p.path()?;
    p.expect(Token::RBracket)?;
    if let Some(t) = p.peek() {
        return Err(ParseError { pos: p.here(), message: format!("trailing input: {t}") });
    }
    Ok(Formula { path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pctl::pickup_dropoff_formula;

    #[test]
    fn parses_preset_text() {
        let f = parse_formula(
            "Pmax=?[ !pi_u U (!pi_u & pi_p & P>0[ !pi_u U (!pi_u & pi_d) ]) ]",
        )
        .unwrap();
        assert_eq!(f, pickup_dropoff_formula());
    }

    #[test]
    fn parses_operators() {
        let f = parse_formula("Pmax=?[ X (pi_p -> pi_d) ]").unwrap();
        assert_eq!(f.to_string(), "Pmax=?[X (pi_p -> pi_d)]");
        let f = parse_formula("Pmax=?[ (pi_p & !pi_d) U P>=0.5[ pi_p U pi_d ] ]").unwrap();
        assert_eq!(f.to_string(), "Pmax=?[(pi_p & !pi_d) U P>=0.5[pi_p U pi_d]]");
    }

    #[test]
    fn display_round_trips() {
        for text in [
            "Pmax=?[ !pi_u U pi_d ]",
            "Pmax=?[ X !(pi_p & pi_d) ]",
            "Pmax=?[ pi_p U (pi_d & P<0.25[ X pi_u ]) ]",
        ] {
            let f = parse_formula(text).unwrap();
            assert_eq!(parse_formula(&f.to_string()).unwrap(), f);
        }
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_formula("Pmax=?[ pi_p ]").is_err()); // no path operator
        assert!(parse_formula("pi_p U pi_d").is_err()); // missing Pmax=?
        assert!(parse_formula("Pmax=?[ pi_p U pi_q ]").is_err()); // unknown atom
        assert!(parse_formula("Pmax=?[ pi_p U pi_d ] extra").is_err());
        assert!(parse_formula("Pmax=?[ P>1.5[ pi_p U pi_d ] U pi_d ]").is_err()); // bad bound
        assert!(parse_formula("Pmax=?[ pi_p U ]").is_err());
    }
}
