//! The line-oriented model format and report serialization.
//!
//! ```text
//! pmc walk dimension 1
//! state q
//! rule q -> q delta [1] zero {} weight 2
//! pvass rule q -> q delta [-1] weight 1 label "down"
//! ```

use std::collections::HashMap;
use std::fmt;

use crate::error::Result;
use crate::model::{Kind, Pmc, Rule};
use crate::report::{value_to_json_text, AnalysisReport};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub expected: Option<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)?;
        if let Some(e) = &self.expected {
            write!(f, " (expected {e})")?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i128),
    Str(String),
    Arrow,
    Punct(char),
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(i) => format!("`{i}`"),
            Tok::Str(s) => format!("{s:?}"),
            Tok::Arrow => "`->`".into(),
            Tok::Punct(c) => format!("`{c}`"),
        }
    }
}

struct Spanned {
    tok: Tok,
    col: usize,
}

fn err(line: usize, column: usize, message: impl Into<String>, expected: Option<&str>) -> ParseError {
    ParseError { line, column, message: message.into(), expected: expected.map(str::to_string) }
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '.' || c == '\''
}

fn lex_line(line: usize, text: &str) -> std::result::Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut k = 0;
    while k < chars.len() {
        let c = chars[k];
        let col = k + 1;
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            k += 1;
            continue;
        }
        if c == '-' && chars.get(k + 1) == Some(&'>') {
            out.push(Spanned { tok: Tok::Arrow, col });
            k += 2;
        } else if c.is_ascii_digit() || (c == '-' || c == '+') && chars.get(k + 1).is_some_and(|d| d.is_ascii_digit()) {
            let start = k;
            k += 1;
            while k < chars.len() && chars[k].is_ascii_digit() {
                k += 1;
            }
            let s: String = chars[start..k].iter().collect();
            let v = s
                .parse::<i128>()
                .map_err(|_| err(line, col, format!("integer `{s}` out of range"), None))?;
            out.push(Spanned { tok: Tok::Int(v), col });
        } else if c.is_alphabetic() || c == '_' {
            let start = k;
            while k < chars.len() && is_ident_char(chars[k]) {
                k += 1;
            }
            out.push(Spanned { tok: Tok::Ident(chars[start..k].iter().collect()), col });
        } else if c == '"' {
            let mut s = String::new();
            k += 1;
            loop {
                match chars.get(k) {
                    None => return Err(err(line, col, "unterminated string", Some("`\"`"))),
                    Some('"') => {
                        k += 1;
                        break;
                    }
                    Some('\\') => {
                        let e = chars.get(k + 1).copied();
                        s.push(match e {
                            Some('"') => '"',
                            Some('\\') => '\\',
                            Some('n') => '\n',
                            Some('t') => '\t',
                            _ => return Err(err(line, k + 1, "invalid escape", Some("one of \\\" \\\\ \\n \\t"))),
                        });
                        k += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        k += 1;
                    }
                }
            }
            out.push(Spanned { tok: Tok::Str(s), col });
        } else if "[]{},".contains(c) {
            out.push(Spanned { tok: Tok::Punct(c), col });
            k += 1;
        } else {
            return Err(err(line, col, format!("unexpected character `{c}`"), None));
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    line: usize,
    toks: &'a [Spanned],
    pos: usize,
    end_col: usize,
}

impl Cursor<'_> {
    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn fail<T>(&self, expected: &str) -> std::result::Result<T, ParseError> {
        let found = self.toks.get(self.pos).map_or("end of line".to_string(), |t| t.tok.describe());
        Err(err(self.line, self.col(), format!("unexpected {found}"), Some(expected)))
    }

    fn next(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.pos).map(|s| &s.tok);
        self.pos += 1;
        t
    }

    fn keyword(&mut self, kw: &str) -> std::result::Result<(), ParseError> {
        match self.toks.get(self.pos) {
            Some(Spanned { tok: Tok::Ident(s), .. }) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => self.fail(&format!("`{kw}`")),
        }
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.toks.get(self.pos), Some(Spanned { tok: Tok::Ident(s), .. }) if s == kw)
    }

    fn ident(&mut self) -> std::result::Result<(String, usize), ParseError> {
        let col = self.col();
        match self.toks.get(self.pos) {
            Some(Spanned { tok: Tok::Ident(s), .. }) => {
                let s = s.clone();
                self.pos += 1;
                Ok((s, col))
            }
            _ => self.fail("identifier"),
        }
    }

    fn int(&mut self) -> std::result::Result<(i128, usize), ParseError> {
        let col = self.col();
        match self.toks.get(self.pos) {
            Some(Spanned { tok: Tok::Int(v), .. }) => {
                let v = *v;
                self.pos += 1;
                Ok((v, col))
            }
            _ => self.fail("integer"),
        }
    }

    fn punct(&mut self, c: char) -> std::result::Result<(), ParseError> {
        match self.toks.get(self.pos) {
            Some(Spanned { tok, .. }) if *tok == Tok::Punct(c) || (c == '>' && *tok == Tok::Arrow) => {
                self.pos += 1;
                Ok(())
            }
            _ => self.fail(&format!("`{}`", if c == '>' { "->".to_string() } else { c.to_string() })),
        }
    }

    /// Comma-separated integers between `open` and `close`, with columns.
    fn int_list(&mut self, open: char, close: char, allow_empty: bool) -> std::result::Result<Vec<(i128, usize)>, ParseError> {
        self.punct(open)?;
        let mut out = Vec::new();
        if allow_empty && self.toks.get(self.pos).is_some_and(|t| t.tok == Tok::Punct(close)) {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(self.int()?);
            match self.next() {
                Some(Tok::Punct(c)) if *c == close => return Ok(out),
                Some(Tok::Punct(',')) => {}
                _ => {
                    self.pos -= 1;
                    return self.fail(&format!("`,` or `{close}`"));
                }
            }
        }
    }

    fn finish(&self) -> std::result::Result<(), ParseError> {
        if self.pos < self.toks.len() {
            self.fail("end of line")
        } else {
            Ok(())
        }
    }
}

struct RawRule {
    line: usize,
    src: (String, usize),
    dst: (String, usize),
    delta: Vec<i8>,
    zero_test: Option<u64>,
    weight: u64,
    label: Option<String>,
}

/// Parses a model. `pvass rule` lines expand to every zero-test variant;
/// the result has kind [`Kind::Pvass`] iff all rule lines are `pvass rule`s
/// and there is at least one.
pub fn parse_pmc(text: &str) -> Result<Pmc> {
    let mut header: Option<(Option<String>, usize)> = None;
    let mut states: Vec<String> = Vec::new();
    let mut state_index: HashMap<String, usize> = HashMap::new();
    let mut raw: Vec<RawRule> = Vec::new();
    let mut last_line = 0;

    for (ln, line_text) in text.lines().enumerate() {
        let line = ln + 1;
        last_line = line;
        let toks = lex_line(line, line_text)?;
        if toks.is_empty() {
            continue;
        }
        let mut cur = Cursor { line, toks: &toks, pos: 0, end_col: line_text.chars().count() + 1 };
        let Some(d) = header.as_ref().map(|h| h.1) else {
            cur.keyword("pmc")?;
            let name = if cur.peek_keyword("dimension") { None } else { Some(cur.ident()?.0) };
            cur.keyword("dimension")?;
            let (d, col) = cur.int()?;
            if d < 1 || d > crate::model::MAX_DIMENSION as i128 {
                return Err(err(line, col, format!("dimension {d} out of range"), Some(&format!("1..={}", crate::model::MAX_DIMENSION))).into());
            }
            cur.finish()?;
            header = Some((name, d as usize));
            continue;
        };
        let (kw, kw_col) = cur.ident()?;
        match kw.as_str() {
            "state" => {
                let (s, col) = cur.ident()?;
                cur.finish()?;
                if state_index.contains_key(&s) {
                    return Err(err(line, col, format!("duplicate state `{s}`"), None).into());
                }
                state_index.insert(s.clone(), states.len());
                states.push(s);
            }
            "rule" | "pvass" => {
                let pvass = kw == "pvass";
                if pvass {
                    cur.keyword("rule")?;
                }
                let src = cur.ident()?;
                cur.punct('>')?;
                let dst = cur.ident()?;
                cur.keyword("delta")?;
                let vec_col = cur.col();
                let entries = cur.int_list('[', ']', false)?;
                let mut delta = Vec::with_capacity(entries.len());
                for (v, col) in &entries {
                    if !(-1..=1).contains(v) {
                        return Err(err(line, *col, format!("delta entry {v} outside {{-1,0,1}}"), Some("-1, 0 or 1")).into());
                    }
                    delta.push(*v as i8);
                }
                if delta.len() != d {
                    return Err(err(line, vec_col, format!("delta has {} entries but dimension is {d}", delta.len()), None).into());
                }
                let zero_test = if pvass {
                    None
                } else {
                    cur.keyword("zero")?;
                    let mut mask = 0u64;
                    for (v, col) in cur.int_list('{', '}', true)? {
                        if v < 1 || v > d as i128 {
                            return Err(err(line, col, format!("zero-test index {v} out of range"), Some(&format!("1..={d}"))).into());
                        }
                        mask |= 1 << (v - 1);
                    }
                    Some(mask)
                };
                cur.keyword("weight")?;
                let (w, wcol) = cur.int()?;
                if w <= 0 || w > u64::MAX as i128 {
                    return Err(err(line, wcol, format!("weight {w} is not a positive 64-bit integer"), Some("positive integer")).into());
                }
                let label = if cur.peek_keyword("label") {
                    cur.pos += 1;
                    match cur.next() {
                        Some(Tok::Str(s)) => Some(s.clone()),
                        _ => {
                            cur.pos -= 1;
                            cur.fail("string")?
                        }
                    }
                } else {
                    None
                };
                cur.finish()?;
                raw.push(RawRule { line, src, dst, delta, zero_test, weight: w as u64, label });
            }
            _ => {
                return Err(err(line, kw_col, format!("unknown directive `{kw}`"), Some("`state`, `rule` or `pvass rule`")).into());
            }
        }
    }

    let Some((name, d)) = header else {
        return Err(err(last_line.max(1), 1, "missing header", Some("`pmc [name] dimension N`")).into());
    };
    let resolve = |(s, col): &(String, usize), line: usize| {
        state_index
            .get(s)
            .copied()
            .ok_or_else(|| err(line, *col, format!("unknown state `{s}`"), Some("a declared state")))
    };
    let all_pvass = !raw.is_empty() && raw.iter().all(|r| r.zero_test.is_none());
    let mut rules = Vec::new();
    for r in &raw {
        let src = resolve(&r.src, r.line)?;
        let dst = resolve(&r.dst, r.line)?;
        let base = Rule { src, delta: r.delta.clone(), zero_test: 0, label: r.label.clone(), dst, weight: r.weight };
        match r.zero_test {
            Some(mask) => rules.push(Rule { zero_test: mask, ..base }),
            None => {
                for mask in 0..(1u64 << d) {
                    rules.push(Rule { zero_test: mask, ..base.clone() });
                }
            }
        }
    }
    let kind = if all_pvass { Kind::Pvass } else { Kind::General };
    Pmc::new(name, d, states, rules, kind)
}

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn delta_text(delta: &[i8]) -> String {
    let parts: Vec<String> = delta.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

fn rule_tail(r: &Rule) -> String {
    match &r.label {
        Some(l) => format!("weight {} label {}", r.weight, quote(l)),
        None => format!("weight {}", r.weight),
    }
}

/// Canonical text of a model: header, states, then rules in model order.
pub fn serialize_pmc(pmc: &Pmc) -> String {
    let mut out = String::new();
    match pmc.name() {
        Some(n) => out.push_str(&format!("pmc {n} dimension {}\n", pmc.dimension())),
        None => out.push_str(&format!("pmc dimension {}\n", pmc.dimension())),
    }
    for s in pmc.states() {
        out.push_str(&format!("state {s}\n"));
    }
    let name = |q: usize| pmc.state_name(q);
    match pmc.kind() {
        Kind::Pvass => {
            for r in pmc.pvass_representatives() {
                out.push_str(&format!(
                    "pvass rule {} -> {} delta {} {}\n",
                    name(r.src),
                    name(r.dst),
                    delta_text(&r.delta),
                    rule_tail(r)
                ));
            }
        }
        Kind::General => {
            for r in pmc.rules() {
                let zs: Vec<String> = crate::model::mask_indices(r.zero_test).iter().map(|i| i.to_string()).collect();
                out.push_str(&format!(
                    "rule {} -> {} delta {} zero {{{}}} {}\n",
                    name(r.src),
                    name(r.dst),
                    delta_text(&r.delta),
                    zs.join(", "),
                    rule_tail(r)
                ));
            }
        }
    }
    out
}

pub fn write_report(report: &AnalysisReport) -> String {
    value_to_json_text(&report.to_value())
}
