//! Textual grammar for formulas.
//!
//! ```text
//! formula := or_expr
//! or_expr := and_expr ("or" and_expr)*
//! and_expr := unary ("and" unary)*
//! unary := "always[" int "," int "]" unary
//!        | "eventually[" int "," int "]" unary
//!        | atom
//! atom := "(" or_expr ")" | pred
//! pred := linear_expr ("<" | ">") number
//! linear_expr := term ("+" term)*          term := number "*" var | var
//! var := "x" | "y" | "x0" | "x1" | ...     ("x" is x0; "y" is x1)
//! ```
//!
//! Comparisons are normalized at parse time: `expr < c` is stored as the
//! negated `>` predicate, so the AST only ever carries `a . s - b > 0`.

use std::fmt::Write as _;

use super::{Formula, TimeInterval};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at byte {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

impl ParseError {
    pub fn new(pos: usize, msg: impl Into<String>) -> Self {
        ParseError {
            pos,
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Plus,
    Star,
    Lt,
    Gt,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '(' => {
                toks.push((i, Tok::LParen));
                i += 1;
            }
            ')' => {
                toks.push((i, Tok::RParen));
                i += 1;
            }
            '[' => {
                toks.push((i, Tok::LBracket));
                i += 1;
            }
            ']' => {
                toks.push((i, Tok::RBracket));
                i += 1;
            }
            ',' => {
                toks.push((i, Tok::Comma));
                i += 1;
            }
            '+' => {
                toks.push((i, Tok::Plus));
                i += 1;
            }
            '*' => {
                toks.push((i, Tok::Star));
                i += 1;
            }
            '<' => {
                toks.push((i, Tok::Lt));
                i += 1;
            }
            '>' => {
                toks.push((i, Tok::Gt));
                i += 1;
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push((start, Tok::Ident(text[start..i].to_string())));
            }
            '-' | '.' | '0'..='9' => {
                let start = i;
                if c == '-' {
                    i += 1;
                    if i >= bytes.len() || !(bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                        return Err(ParseError::new(start, "dangling '-'"));
                    }
                }
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == b'.'
                        || bytes[i] == b'e'
                        || bytes[i] == b'E'
                        || ((bytes[i] == b'+' || bytes[i] == b'-')
                            && matches!(bytes[i - 1], b'e' | b'E')))
                {
                    i += 1;
                }
                let v: f64 = text[start..i].parse().map_err(|_| {
                    ParseError::new(start, format!("bad number '{}'", &text[start..i]))
                })?;
                toks.push((start, Tok::Num(v)));
            }
            _ => return Err(ParseError::new(i, format!("unexpected character '{c}'"))),
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    idx: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.idx).map_or(self.end, |(p, _)| *p)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|(_, t)| t.clone());
        self.idx += 1;
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        let pos = self.pos();
        match self.bump() {
            Some(t) if t == tok => Ok(()),
            _ => Err(ParseError::new(pos, format!("expected {what}"))),
        }
    }

    fn or_expr(&mut self) -> Result<Formula, ParseError> {
        let first = self.and_expr()?;
        let mut children = vec![first];
        while matches!(self.peek(), Some(Tok::Ident(s)) if s == "or") {
            self.bump();
            children.push(self.and_expr()?);
        }
        Ok(if children.len() == 1 {
            children.pop().unwrap()
        } else {
            Formula::Or(children)
        })
    }

    fn and_expr(&mut self) -> Result<Formula, ParseError> {
        let first = self.unary()?;
        let mut children = vec![first];
        while matches!(self.peek(), Some(Tok::Ident(s)) if s == "and") {
            self.bump();
            children.push(self.unary()?);
        }
        Ok(if children.len() == 1 {
            children.pop().unwrap()
        } else {
            Formula::And(children)
        })
    }

    fn interval(&mut self) -> Result<TimeInterval, ParseError> {
        self.expect(Tok::LBracket, "'['")?;
        let t1 = self.int()?;
        self.expect(Tok::Comma, "','")?;
        let t2 = self.int()?;
        let rpos = self.pos();
        self.expect(Tok::RBracket, "']'")?;
        TimeInterval::new(t1, t2).map_err(|e| ParseError::new(rpos, e.msg))
    }

    fn int(&mut self) -> Result<usize, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Num(v)) if v >= 0.0 && v.fract() == 0.0 => Ok(v as usize),
            _ => Err(ParseError::new(pos, "expected a non-negative integer")),
        }
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        if let Some(Tok::Ident(s)) = self.peek() {
            match s.as_str() {
                "always" => {
                    self.bump();
                    let iv = self.interval()?;
                    return Ok(Formula::Always(iv, Box::new(self.unary()?)));
                }
                "eventually" => {
                    self.bump();
                    let iv = self.interval()?;
                    return Ok(Formula::Eventually(iv, Box::new(self.unary()?)));
                }
                _ => {}
            }
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Formula, ParseError> {
        if matches!(self.peek(), Some(Tok::LParen)) {
            self.bump();
            let f = self.or_expr()?;
            self.expect(Tok::RParen, "')'")?;
            return Ok(f);
        }
        self.pred()
    }

    fn var_index(&mut self) -> Result<usize, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Ident(name)) => match name.as_str() {
                "x" => Ok(0),
                "y" => Ok(1),
                _ if name.starts_with('x') && name[1..].chars().all(|c| c.is_ascii_digit()) => name
                    [1..]
                    .parse()
                    .map_err(|_| ParseError::new(pos, format!("bad variable '{name}'"))),
                _ => Err(ParseError::new(pos, format!("unknown variable '{name}'"))),
            },
            _ => Err(ParseError::new(pos, "expected a variable")),
        }
    }

    fn pred(&mut self) -> Result<Formula, ParseError> {
        let start = self.pos();
        let mut terms: Vec<(f64, usize)> = Vec::new();
        loop {
            match self.peek() {
                Some(Tok::Num(_)) => {
                    let coef = match self.bump() {
                        Some(Tok::Num(v)) => v,
                        _ => unreachable!(),
                    };
                    self.expect(Tok::Star, "'*' after coefficient")?;
                    let var = self.var_index()?;
                    terms.push((coef, var));
                }
                Some(Tok::Ident(_)) => {
                    let var = self.var_index()?;
                    terms.push((1.0, var));
                }
                _ => return Err(ParseError::new(self.pos(), "expected a predicate term")),
            }
            if matches!(self.peek(), Some(Tok::Plus)) {
                self.bump();
            } else {
                break;
            }
        }
        let cmp_pos = self.pos();
        let flip = match self.bump() {
            Some(Tok::Gt) => false,
            Some(Tok::Lt) => true,
            _ => return Err(ParseError::new(cmp_pos, "expected '<' or '>'")),
        };
        let rhs_pos = self.pos();
        let rhs = match self.bump() {
            Some(Tok::Num(v)) => v,
            _ => return Err(ParseError::new(rhs_pos, "expected a number")),
        };
        let dim = 1 + terms.iter().map(|&(_, v)| v).max().unwrap();
        let mut a = vec![0.0; dim];
        for (coef, var) in terms {
            a[var] += coef;
        }
        let mut b = rhs;
        if flip {
            for c in &mut a {
                *c = -*c;
            }
            b = -b;
        }
        if a.iter().all(|&v| v == 0.0) {
            return Err(ParseError::new(
                start,
                "predicate has all-zero coefficients",
            ));
        }
        Ok(Formula::Predicate { a, b })
    }
}

/// Parse a formula from the grammar above.
pub fn parse_formula(text: &str) -> Result<Formula, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        idx: 0,
        end: text.len(),
    };
    let f = p.or_expr()?;
    if p.idx != p.toks.len() {
        return Err(ParseError::new(p.pos(), "trailing input"));
    }
    Ok(f)
}

fn fmt_num(v: f64, prec: usize) -> String {
    let mut s = format!("{v:.prec$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

fn var_name(idx: usize, dim: usize) -> String {
    match (dim, idx) {
        (1, 0) | (2, 0) => "x".to_string(),
        (2, 1) => "y".to_string(),
        _ => format!("x{idx}"),
    }
}

fn pred_str(a: &[f64], b: f64, prec: usize) -> String {
    let nonzero: Vec<usize> = (0..a.len()).filter(|&j| a[j] != 0.0).collect();
    if let [j] = nonzero[..] {
        if a[j] == 1.0 {
            return format!("{} > {}", var_name(j, a.len()), fmt_num(b, prec));
        }
        if a[j] == -1.0 {
            return format!("{} < {}", var_name(j, a.len()), fmt_num(-b, prec));
        }
    }
    let mut s = String::new();
    for (k, &j) in nonzero.iter().enumerate() {
        if k > 0 {
            s.push_str(" + ");
        }
        let _ = write!(s, "{}*{}", fmt_num(a[j], prec), var_name(j, a.len()));
    }
    let _ = write!(s, " > {}", fmt_num(b, prec));
    s
}

fn fmt_rec(phi: &Formula, prec: usize, out: &mut String) {
    match phi {
        Formula::Predicate { a, b } => {
            let _ = write!(out, "({})", pred_str(a, *b, prec));
        }
        Formula::And(cs) | Formula::Or(cs) => {
            if cs.len() == 1 {
                // 1-ary and/or has no textual form; print the child.
                fmt_rec(&cs[0], prec, out);
                return;
            }
            let sep = if matches!(phi, Formula::And(_)) {
                " and "
            } else {
                " or "
            };
            for (k, c) in cs.iter().enumerate() {
                if k > 0 {
                    out.push_str(sep);
                }
                let wrap = matches!(c, Formula::And(_) | Formula::Or(_));
                if wrap {
                    out.push('(');
                }
                fmt_rec(c, prec, out);
                if wrap {
                    out.push(')');
                }
            }
        }
        Formula::Always(iv, c) | Formula::Eventually(iv, c) => {
            let name = if matches!(phi, Formula::Always(..)) {
                "always"
            } else {
                "eventually"
            };
            let _ = write!(out, "{name}[{},{}] ", iv.t1, iv.t2);
            let wrap = matches!(**c, Formula::And(_) | Formula::Or(_));
            if wrap {
                out.push('(');
            }
            fmt_rec(c, prec, out);
            if wrap {
                out.push(')');
            }
        }
    }
}

/// Render with the given number of decimals (trailing zeros trimmed).
pub fn format_formula_prec(phi: &Formula, prec: usize) -> String {
    let mut s = String::new();
    fmt_rec(phi, prec, &mut s);
    s
}

/// Render with the default 2-decimal precision.
pub fn format_formula(phi: &Formula) -> String {
    format_formula_prec(phi, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_nested_temporal() {
        let f = parse_formula("always[0,10] eventually[3,7] (x < -0.7)").unwrap();
        let expected = Formula::Always(
            TimeInterval { t1: 0, t2: 10 },
            Box::new(Formula::Eventually(
                TimeInterval { t1: 3, t2: 7 },
                Box::new(Formula::Predicate {
                    a: vec![-1.0],
                    b: 0.7,
                }),
            )),
        );
        assert_eq!(f, expected);
        assert_eq!(
            format_formula(&f),
            "always[0,10] eventually[3,7] (x < -0.7)"
        );
    }

    #[test]
    fn canonical_round_trips() {
        for text in [
            "(x > 0.9)",
            "(x < -0.7)",
            "always[0,10] eventually[3,7] (x < -0.7)",
            "eventually[55,59] (x < 25.89) and always[0,16] (y > 23.77)",
            "(x > 1) and (y > 2) and (2*x + -0.5*y > 0.25)",
            "((x > 1) and (y > 2)) or (x < 3)",
            "always[2,2] ((x > 0) or (y < 1))",
            "(1.5*x0 + -2*x2 > 0.75)",
        ] {
            let f = parse_formula(text).unwrap();
            assert_eq!(format_formula(&f), text, "canonical text should round trip");
        }
    }

    #[test]
    fn and_or_precedence() {
        let f = parse_formula("(x > 1) and (x < 2) or (x > 5)").unwrap();
        match f {
            Formula::Or(cs) => {
                assert_eq!(cs.len(), 2);
                assert!(matches!(cs[0], Formula::And(_)));
            }
            other => panic!("expected or at top, got {other:?}"),
        }
    }

    #[test]
    fn flat_chains_become_nary() {
        let f = parse_formula("(x > 1) and (x > 2) and (x > 3)").unwrap();
        assert!(matches!(f, Formula::And(ref cs) if cs.len() == 3));
    }

    #[test]
    fn reports_error_position() {
        let err = parse_formula("always[3,1] (x > 0)").unwrap_err();
        assert!(err.msg.contains("t1 > t2"), "{err}");
        let err = parse_formula("(x >< 1)").unwrap_err();
        assert_eq!(err.pos, 4);
        let err = parse_formula("(z > 1)").unwrap_err();
        assert!(err.msg.contains("unknown variable"), "{err}");
    }

    #[test]
    fn scientific_notation() {
        let f = parse_formula("(x > 1e9)").unwrap();
        assert_eq!(
            f,
            Formula::Predicate {
                a: vec![1.0],
                b: 1e9
            }
        );
    }

    // Random formulas with 2-decimal constants survive parse(format(.)).
    fn arb_formula() -> impl Strategy<Value = Formula> {
        let coef = (-400i32..=400).prop_map(|v| v as f64 / 100.0);
        let pred = (coef.clone(), coef, 0usize..3, prop::bool::weighted(0.5)).prop_map(
            |(c, b, var, unit)| {
                let mut a = vec![0.0; var + 1];
                a[var] = if unit {
                    1.0
                } else if c == 0.0 {
                    0.25
                } else {
                    c
                };
                Formula::Predicate { a, b }
            },
        );
        pred.prop_recursive(3, 24, 3, |inner| {
            prop_oneof![
                (prop::collection::vec(inner.clone(), 2..4)).prop_map(Formula::And),
                (prop::collection::vec(inner.clone(), 2..4)).prop_map(Formula::Or),
                (0usize..5, 0usize..5, inner.clone()).prop_map(|(t1, dt, c)| {
                    Formula::Always(TimeInterval { t1, t2: t1 + dt }, Box::new(c))
                }),
                (0usize..5, 0usize..5, inner).prop_map(|(t1, dt, c)| {
                    Formula::Eventually(TimeInterval { t1, t2: t1 + dt }, Box::new(c))
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn fuzzed_round_trip(f in arb_formula()) {
            let text = format_formula(&f);
            let parsed = parse_formula(&text).unwrap();
            prop_assert_eq!(parsed, f);
        }
    }
}
