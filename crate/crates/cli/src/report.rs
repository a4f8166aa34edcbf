//! Reports and their JSON and text renderings.

use serde::Serialize;
use serde_json::{Map, Value};

use crate::options::EffectiveOptions;

pub const SIGNIFICANT_DIGITS: usize = 9;

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    #[serde(flatten)]
    pub fields: Map<String, Value>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub problem_kind: String,
    pub digest: String,
    pub verdict: String,
    pub exit_code: i32,
    pub results: Value,
    pub certificates: Value,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
    pub options: EffectiveOptions,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("reports serialize");
        let mut out = String::new();
        render(&value, 0, &mut out);
        out
    }
}

/// `%g`-style formatting with a fixed number of significant digits.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let sci = format!("{:.*e}", digits - 1, x);
    // rounding may bump the exponent, so read it back
    let (mantissa, e) = sci.split_once('e').expect("exponent");
    let e: i32 = e.parse().expect("exponent");
    if (-5..digits as i32).contains(&e.max(exp)) {
        let decimals = (digits as i32 - 1 - e).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{e}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some("null".into()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.to_string(),
            (_, Some(u)) => u.to_string(),
            _ => fmt_sig(n.as_f64().unwrap_or(f64::NAN), SIGNIFICANT_DIGITS),
        }),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

/// Arrays of numbers go on one line; strings get a line each.
fn inline(items: &[Value]) -> Option<String> {
    if items.iter().any(Value::is_string) {
        return None;
    }
    let parts: Option<Vec<String>> = items.iter().map(scalar).collect();
    parts.map(|p| format!("[{}]", p.join(", ")))
}

fn render(v: &Value, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match v {
        Value::Object(map) => {
            for (k, item) in map {
                render_entry(&format!("{pad}{k}:"), item, indent, out);
            }
        }
        other => {
            out.push_str(&pad);
            out.push_str(&scalar(other).unwrap_or_default());
            out.push('\n');
        }
    }
}

fn render_entry(label: &str, item: &Value, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent + 1);
    match item {
        Value::Object(map) if map.is_empty() => out.push_str(&format!("{label} {{}}\n")),
        Value::Object(_) => {
            out.push_str(label);
            out.push('\n');
            render(item, indent + 1, out);
        }
        Value::Array(items) => {
            if let Some(line) = inline(items) {
                out.push_str(&format!("{label} {line}\n"));
            } else {
                out.push_str(label);
                out.push('\n');
                for it in items {
                    match it {
                        Value::Array(row) if inline(row).is_some() => {
                            out.push_str(&format!("{pad}{}\n", inline(row).unwrap_or_default()));
                        }
                        _ => render_entry(&format!("{pad}-"), it, indent + 1, out),
                    }
                }
            }
        }
        other => out.push_str(&format!("{label} {}\n", scalar(other).unwrap_or_default())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(1.0, 9), "1");
        assert_eq!(fmt_sig(0.1 + 0.2, 9), "0.3");
        assert_eq!(fmt_sig(std::f64::consts::PI, 9), "3.14159265");
        assert_eq!(fmt_sig(-1234.5678901234, 9), "-1234.56789");
        assert_eq!(fmt_sig(1.5e-7, 9), "1.5e-7");
        assert_eq!(fmt_sig(6.02214076e23, 9), "6.02214076e23");
        assert_eq!(fmt_sig(999999999.7, 9), "1e9");
        assert_eq!(fmt_sig(0.000123456789123, 9), "0.000123456789");
    }

    #[test]
    fn nested_values_render_as_indented_lines() {
        let v = serde_json::json!({
            "a": 1, "b": {"c": [1.5, 2], "m": [[1, 0], [0, 1]]}, "l": [{"x": true}], "w": ["one", "two"]
        });
        let mut out = String::new();
        render(&v, 0, &mut out);
        assert_eq!(
            out,
            "a: 1\nb:\n  c: [1.5, 2]\n  m:\n    [1, 0]\n    [0, 1]\nl:\n  -\n    x: true\nw:\n  - one\n  - two\n"
        );
    }
}
