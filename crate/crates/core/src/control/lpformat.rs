//! Reader for the subset of the CPLEX LP format written by [`export_lp`](super::export_lp).

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{QrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowOp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpConstraint {
    pub name: String,
    pub terms: Vec<(String, f64)>,
    pub op: RowOp,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpProblem {
    pub sense: Sense,
    pub objective: Vec<(String, f64)>,
    pub constraints: Vec<LpConstraint>,
    /// Lower and upper bound per variable; variables not listed are in `[0, ∞)`.
    pub bounds: BTreeMap<String, (f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    End,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sign(f64),
    Op(RowOp),
    Colon,
}

fn err(line: usize, msg: impl std::fmt::Display) -> QrError {
    QrError::Parse(format!("line {line}: {msg}"))
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || "_!\"#$%&()/,;?@`'{}|~".contains(c)
}

fn is_ident_char(c: char) -> bool {
    is_ident_start(c) || c.is_ascii_digit() || c == '.'
}

fn tokenize(text: &str, line: usize) -> Result<Vec<Tok>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == ':' {
            out.push(Tok::Colon);
            i += 1;
        } else if c == '+' || c == '-' {
            out.push(Tok::Sign(if c == '+' { 1.0 } else { -1.0 }));
            i += 1;
        } else if c == '<' || c == '>' || c == '=' {
            let mut j = i + 1;
            if j < chars.len() && (chars[j] == '=' || chars[j] == '<' || chars[j] == '>') {
                j += 1;
            }
            let op: String = chars[i..j].iter().collect();
            out.push(Tok::Op(match op.as_str() {
                "<" | "<=" | "=<" => RowOp::Le,
                ">" | ">=" | "=>" => RowOp::Ge,
                "=" | "==" => RowOp::Eq,
                _ => return Err(err(line, format!("bad operator {op:?}"))),
            }));
            i = j;
        } else if c.is_ascii_digit() || c == '.' {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                j += 1;
            }
            if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                let mut k = j + 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    while k < chars.len() && chars[k].is_ascii_digit() {
                        k += 1;
                    }
                    j = k;
                }
            }
            let s: String = chars[i..j].iter().collect();
            let v: f64 = s.parse().map_err(|_| err(line, format!("bad number {s:?}")))?;
            out.push(Tok::Num(v));
            i = j;
        } else if is_ident_start(c) {
            let mut j = i;
            while j < chars.len() && is_ident_char(chars[j]) {
                j += 1;
            }
            let s: String = chars[i..j].iter().collect();
            let lower = s.to_ascii_lowercase();
            if lower == "inf" || lower == "infinity" {
                out.push(Tok::Num(f64::INFINITY));
            } else {
                out.push(Tok::Ident(s));
            }
            i = j;
        } else {
            return Err(err(line, format!("unexpected character {c:?}")));
        }
    }
    Ok(out)
}

/// Parses `[name:] expr` into a name and terms; returns the remaining tokens.
fn parse_expr(toks: &[Tok], line: usize) -> Result<(Option<String>, Vec<(String, f64)>, usize)> {
    let mut pos = 0;
    let mut name = None;
    if let (Some(Tok::Ident(n)), Some(Tok::Colon)) = (toks.first(), toks.get(1)) {
        name = Some(n.clone());
        pos = 2;
    }
    let mut terms: Vec<(String, f64)> = Vec::new();
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    while pos < toks.len() {
        match &toks[pos] {
            Tok::Sign(s) => {
                if coef.is_some() {
                    return Err(err(line, "coefficient without variable"));
                }
                sign *= s;
            }
            Tok::Num(v) => {
                if coef.is_some() {
                    return Err(err(line, "two coefficients in a row"));
                }
                coef = Some(*v);
            }
            Tok::Ident(v) => {
                let c = sign * coef.unwrap_or(1.0);
                if !c.is_finite() {
                    return Err(err(line, "infinite coefficient"));
                }
                match terms.iter_mut().find(|(n, _)| n == v) {
                    Some(t) => t.1 += c,
                    None => terms.push((v.clone(), c)),
                }
                sign = 1.0;
                coef = None;
            }
            Tok::Op(_) => break,
            Tok::Colon => return Err(err(line, "unexpected ':'")),
        }
        pos += 1;
    }
    if coef.is_some() && pos == toks.len() {
        // a trailing constant is not part of a linear expression
        return Err(err(line, "constant term in expression"));
    }
    if coef.is_some() || sign != 1.0 {
        return Err(err(line, "dangling sign or coefficient"));
    }
    Ok((name, terms, pos))
}

fn parse_signed_number(toks: &[Tok], line: usize) -> Result<(f64, usize)> {
    match toks {
        [Tok::Sign(s), Tok::Num(v), ..] => Ok((s * v, 2)),
        [Tok::Num(v), ..] => Ok((*v, 1)),
        _ => Err(err(line, "expected a number")),
    }
}

fn parse_bound(toks: &[Tok], line: usize, bounds: &mut BTreeMap<String, (f64, f64)>) -> Result<()> {
    let entry = |bounds: &mut BTreeMap<String, (f64, f64)>, v: &str| *bounds.entry(v.to_string()).or_insert((0.0, f64::INFINITY));
    match toks {
        [Tok::Ident(v), Tok::Ident(free)] if free.eq_ignore_ascii_case("free") => {
            bounds.insert(v.clone(), (f64::NEG_INFINITY, f64::INFINITY));
        }
        [Tok::Ident(v), Tok::Op(op), rest @ ..] => {
            let (x, used) = parse_signed_number(rest, line)?;
            if used != rest.len() {
                return Err(err(line, "trailing tokens in bound"));
            }
            let (lo, hi) = entry(bounds, v);
            let b = match op {
                RowOp::Le => (lo, x),
                RowOp::Ge => (x, hi),
                RowOp::Eq => (x, x),
            };
            bounds.insert(v.clone(), b);
        }
        _ => {
            let (x, used) = parse_signed_number(toks, line)?;
            let rest = &toks[used..];
            let (op1, v) = match rest {
                [Tok::Op(op), Tok::Ident(v), ..] => (*op, v.clone()),
                _ => return Err(err(line, "malformed bound")),
            };
            let (mut lo, mut hi) = entry(bounds, &v);
            match op1 {
                RowOp::Le => lo = x,
                RowOp::Ge => hi = x,
                RowOp::Eq => (lo, hi) = (x, x),
            }
            match &rest[2..] {
                [] => {}
                [Tok::Op(op2), tail @ ..] => {
                    let (y, used) = parse_signed_number(tail, line)?;
                    if used != tail.len() || *op2 != op1 || op1 == RowOp::Eq {
                        return Err(err(line, "malformed double bound"));
                    }
                    match op2 {
                        RowOp::Le => hi = y,
                        _ => lo = y,
                    }
                }
                _ => return Err(err(line, "trailing tokens in bound")),
            }
            bounds.insert(v, (lo, hi));
        }
    }
    Ok(())
}

impl LpProblem {
    pub fn parse(text: &str) -> Result<Self> {
        let mut section = Section::None;
        let mut sense = None;
        let mut objective: Vec<Tok> = Vec::new();
        let mut rows: Vec<(usize, Vec<Tok>)> = Vec::new();
        let mut pending: Vec<Tok> = Vec::new();
        let mut pending_line = 0;
        let mut bounds = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('\\').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let lower = body.to_ascii_lowercase();
            let keyword = match lower.as_str() {
                "maximize" | "maximise" | "maximum" | "max" => Some((Section::Objective, Some(Sense::Maximize))),
                "minimize" | "minimise" | "minimum" | "min" => Some((Section::Objective, Some(Sense::Minimize))),
                "subject to" | "such that" | "st" | "s.t." => Some((Section::Constraints, None)),
                "bounds" | "bound" => Some((Section::Bounds, None)),
                "end" => Some((Section::End, None)),
                _ => None,
            };
            if let Some((next, s)) = keyword {
                if !pending.is_empty() {
                    return Err(err(pending_line, "constraint without right-hand side"));
                }
                if let Some(s) = s {
                    if sense.is_some() {
                        return Err(err(line, "second objective section"));
                    }
                    sense = Some(s);
                } else if next == Section::Constraints && section != Section::Objective {
                    return Err(err(line, "constraints must follow the objective"));
                }
                section = next;
                continue;
            }
            let toks = tokenize(body, line)?;
            match section {
                Section::None => return Err(err(line, "content before the objective section")),
                Section::End => return Err(err(line, "content after End")),
                Section::Objective => objective.extend(toks),
                Section::Constraints => {
                    if pending.is_empty() {
                        pending_line = line;
                    }
                    pending.extend(toks);
                    // a row is complete once an operator is followed by its number
                    if let Some(k) = pending.iter().position(|t| matches!(t, Tok::Op(_))) {
                        let tail = &pending[k + 1..];
                        if parse_signed_number(tail, line).is_ok() {
                            rows.push((pending_line, std::mem::take(&mut pending)));
                        }
                    }
                }
                Section::Bounds => parse_bound(&toks, line, &mut bounds)?,
            }
        }
        if !pending.is_empty() {
            return Err(err(pending_line, "constraint without right-hand side"));
        }
        if section != Section::End {
            return Err(QrError::Parse("missing End".into()));
        }
        let sense = sense.ok_or_else(|| QrError::Parse("missing objective section".into()))?;
        let (_, objective, used) = parse_expr(&objective, 0)?;
        if used != 0 && objective.is_empty() {
            return Err(QrError::Parse("empty objective".into()));
        }
        let mut constraints = Vec::with_capacity(rows.len());
        for (k, (line, toks)) in rows.into_iter().enumerate() {
            let (name, terms, pos) = parse_expr(&toks, line)?;
            let op = match toks.get(pos) {
                Some(Tok::Op(op)) => *op,
                _ => return Err(err(line, "expected a comparison")),
            };
            let (rhs, used) = parse_signed_number(&toks[pos + 1..], line)?;
            if pos + 1 + used != toks.len() {
                return Err(err(line, "trailing tokens after right-hand side"));
            }
            if !rhs.is_finite() {
                return Err(err(line, "infinite right-hand side"));
            }
            constraints.push(LpConstraint { name: name.unwrap_or_else(|| format!("r{}", k + 1)), terms, op, rhs });
        }
        Ok(LpProblem { sense, objective, constraints, bounds })
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.objective.iter().map(|(v, _)| v.clone()).collect();
        for c in &self.constraints {
            out.extend(c.terms.iter().map(|(v, _)| v.clone()));
        }
        out.extend(self.bounds.keys().cloned());
        out
    }

    pub fn constraint(&self, name: &str) -> Option<&LpConstraint> {
        self.constraints.iter().find(|c| c.name == name)
    }

    fn value(values: &BTreeMap<String, f64>, v: &str) -> f64 {
        values.get(v).copied().unwrap_or(0.0)
    }

    pub fn objective_value(&self, values: &BTreeMap<String, f64>) -> f64 {
        self.objective.iter().map(|(v, c)| c * Self::value(values, v)).sum()
    }

    /// Largest violation of any row or bound at `values`; missing variables read as zero.
    pub fn max_violation(&self, values: &BTreeMap<String, f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|(v, a)| a * Self::value(values, v)).sum();
            let gap = match c.op {
                RowOp::Le => lhs - c.rhs,
                RowOp::Ge => c.rhs - lhs,
                RowOp::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        for v in self.variables() {
            let (lo, hi) = self.bounds.get(&v).copied().unwrap_or((0.0, f64::INFINITY));
            let x = Self::value(values, &v);
            worst = worst.max(lo - x).max(x - hi);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_program() {
        let text = "\\ demo\nMaximize\n obj: 2 x + 3 y\nSubject To\n c1: x + y <= 4\n c2: x\n - y >= -1\nBounds\n 0 <= x <= 3\n y free\nEnd\n";
        let lp = LpProblem::parse(text).unwrap();
        assert_eq!(lp.sense, Sense::Maximize);
        assert_eq!(lp.objective, vec![("x".into(), 2.0), ("y".into(), 3.0)]);
        assert_eq!(lp.constraints.len(), 2);
        assert_eq!(lp.constraints[1].terms, vec![("x".into(), 1.0), ("y".into(), -1.0)]);
        assert_eq!(lp.constraints[1].rhs, -1.0);
        assert_eq!(lp.bounds["x"], (0.0, 3.0));
        assert_eq!(lp.bounds["y"], (f64::NEG_INFINITY, f64::INFINITY));
        let point: BTreeMap<String, f64> = [("x".to_string(), 1.5), ("y".to_string(), 2.5)].into();
        assert_eq!(lp.objective_value(&point), 10.5);
        assert_eq!(lp.max_violation(&point), 0.0);
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["", "Maximize\n obj: x\n", "Subject To\n x <= 1\nEnd", "Maximize\n obj: x\nSubject To\n x <=\nEnd", "Maximize\n 3 x 4\nEnd"] {
            assert!(LpProblem::parse(bad).is_err(), "{bad:?}");
        }
    }
}
