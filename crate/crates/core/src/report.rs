//! Machine-readable analysis reports.

use serde::{Deserialize, Serialize};

use crate::model::{Configuration, Pmc};
use crate::rational::{self, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    AlmostSure,
    NotAlmostSure,
    Unknown,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::AlmostSure => "almost_sure",
            Verdict::NotAlmostSure => "not_almost_sure",
            Verdict::Unknown => "unknown",
        }
    }
}

/// JSON-like value that keeps floats and rationals apart so the writer can
/// format them exactly.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i128),
    Float(f64),
    Rational(Rational),
    Str(String),
    List(Vec<Value>),
    Map(Vec<(String, Value)>),
}

impl Value {
    pub fn map() -> Value {
        Value::Map(Vec::new())
    }

    /// Appends a key to a map value; no-op on other variants.
    pub fn with(mut self, key: &str, v: impl Into<Value>) -> Value {
        if let Value::Map(m) = &mut self {
            m.push((key.to_string(), v.into()));
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        match self {
            Value::Map(m) => m.iter().find(|(k, _)| k == key).map(|(_, v)| v),
            _ => None,
        }
    }

    /// Lossy conversion for callers that want to inspect a report;
    /// floats become JSON numbers and rationals `{"num","den"}` objects.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::from_str(&value_to_json_text(self)).expect("writer emits valid JSON")
    }

    fn write(&self, out: &mut String, indent: usize) {
        match self {
            Value::Null => out.push_str("null"),
            Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Value::Int(i) => out.push_str(&i.to_string()),
            Value::Float(f) => write_float(out, *f),
            Value::Rational(r) => {
                let (n, d) = rational::parts(r);
                out.push_str(&format!("{{\"num\": \"{n}\", \"den\": \"{d}\"}}"));
            }
            Value::Str(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
            Value::List(l) if l.is_empty() => out.push_str("[]"),
            Value::List(l) => {
                out.push('[');
                for (k, v) in l.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    newline(out, indent + 1);
                    v.write(out, indent + 1);
                }
                newline(out, indent);
                out.push(']');
            }
            Value::Map(m) if m.is_empty() => out.push_str("{}"),
            Value::Map(m) => {
                out.push('{');
                for (k, (key, v)) in m.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    newline(out, indent + 1);
                    out.push_str(&serde_json::to_string(key).expect("strings serialize"));
                    out.push_str(": ");
                    v.write(out, indent + 1);
                }
                newline(out, indent);
                out.push('}');
            }
        }
    }
}

fn newline(out: &mut String, indent: usize) {
    out.push('\n');
    for _ in 0..indent {
        out.push_str("  ");
    }
}

// Non-finite floats have no JSON number form and are written as strings.
fn write_float(out: &mut String, f: f64) {
    if f.is_nan() {
        out.push_str("\"nan\"");
    } else if f.is_infinite() {
        out.push_str(if f > 0.0 { "\"inf\"" } else { "\"-inf\"" });
    } else {
        out.push_str(&format!("{f:.16e}"));
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Value {
        Value::Bool(b)
    }
}
impl From<f64> for Value {
    fn from(f: f64) -> Value {
        Value::Float(f)
    }
}
impl From<usize> for Value {
    fn from(x: usize) -> Value {
        Value::Int(x as i128)
    }
}
impl From<u64> for Value {
    fn from(x: u64) -> Value {
        Value::Int(x as i128)
    }
}
impl From<i64> for Value {
    fn from(x: i64) -> Value {
        Value::Int(x as i128)
    }
}
impl From<Rational> for Value {
    fn from(r: Rational) -> Value {
        Value::Rational(r)
    }
}
impl From<&Rational> for Value {
    fn from(r: &Rational) -> Value {
        Value::Rational(r.clone())
    }
}
impl From<&str> for Value {
    fn from(s: &str) -> Value {
        Value::Str(s.to_string())
    }
}
impl From<String> for Value {
    fn from(s: String) -> Value {
        Value::Str(s)
    }
}
impl<T: Into<Value>> From<Vec<T>> for Value {
    fn from(v: Vec<T>) -> Value {
        Value::List(v.into_iter().map(Into::into).collect())
    }
}
impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(v: Option<T>) -> Value {
        v.map_or(Value::Null, Into::into)
    }
}

pub fn config_value(pmc: &Pmc, cfg: &Configuration) -> Value {
    Value::map()
        .with("state", pmc.state_name(cfg.state))
        .with("counters", cfg.counters.clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisReport {
    pub query: String,
    /// Content hash of the model file, if known.
    pub model: Option<String>,
    pub initial: Option<Value>,
    pub result: Value,
    pub witnesses: Vec<Value>,
    pub constants: Vec<(String, Value)>,
    pub diagnostics: Vec<String>,
    pub version: String,
}

impl AnalysisReport {
    pub fn new(query: &str) -> AnalysisReport {
        AnalysisReport {
            query: query.to_string(),
            model: None,
            initial: None,
            result: Value::map(),
            witnesses: Vec::new(),
            constants: Vec::new(),
            diagnostics: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn verdict(query: &str, v: Verdict) -> AnalysisReport {
        let mut r = AnalysisReport::new(query);
        r.result = Value::map().with("verdict", v.as_str());
        if v == Verdict::Unknown {
            r.result = r.result.with("bound_exhausted", true);
        }
        r
    }

    pub fn approximation(query: &str, nu: f64, eps: f64) -> AnalysisReport {
        let mut r = AnalysisReport::new(query);
        r.result = Value::map().with("nu", nu).with("eps", eps);
        r
    }

    pub fn constant(&mut self, key: &str, v: impl Into<Value>) {
        self.constants.push((key.to_string(), v.into()));
    }

    pub fn to_value(&self) -> Value {
        Value::map()
            .with("query", self.query.as_str())
            .with("model", self.model.clone())
            .with("initial", self.initial.clone().unwrap_or(Value::Null))
            .with("result", self.result.clone())
            .with("witnesses", Value::List(self.witnesses.clone()))
            .with("constants", Value::Map(self.constants.clone()))
            .with("diagnostics", self.diagnostics.clone())
            .with("version", self.version.as_str())
    }
}

/// Serializes a value, writing floats with 17 significant digits.
pub fn value_to_json_text(v: &Value) -> String {
    let mut out = String::new();
    v.write(&mut out, 0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits_and_parse() {
        let v = Value::map().with("x", 0.1f64).with("y", Value::List(vec![Value::Float(1.0)]));
        let s = value_to_json_text(&v);
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["x"].as_f64(), Some(0.1));
        assert_eq!(back["y"][0].as_f64(), Some(1.0));
    }

    #[test]
    fn rationals_are_num_den_strings() {
        let v = Value::from(rational::ratio(-3, 6));
        let s = value_to_json_text(&v);
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["num"], "-1");
        assert_eq!(back["den"], "2");
    }

    #[test]
    fn unknown_verdict_flags_exhausted_bound() {
        let r = AnalysisReport::verdict("case2-qual", Verdict::Unknown);
        let s = value_to_json_text(&r.to_value());
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["result"]["verdict"], "unknown");
        assert_eq!(back["result"]["bound_exhausted"], true);
        for k in ["query", "model", "initial", "result", "witnesses", "constants", "diagnostics", "version"] {
            assert!(back.get(k).is_some(), "missing {k}");
        }
    }
}
