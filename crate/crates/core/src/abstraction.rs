//! Surface-literal abstraction shared by pattern lifting, consistency
//! scoring and hypothesis signatures.

use std::sync::LazyLock;

use regex::Regex;
use serde_json::{Map, Value};

use crate::canonical::{ContentHash, SerializationError};

pub const ADDR: &str = "⟨ADDR⟩";
pub const PATH: &str = "⟨PATH⟩";
pub const NUM: &str = "⟨NUM⟩";
pub const STR: &str = "⟨STR⟩";

/// Longest quoted literal (in bytes, quotes excluded) kept verbatim.
pub const MAX_QUOTED: usize = 16;

/// Fields that vary between otherwise identical observations or proposals.
pub const VOLATILE_FIELDS: &[&str] = &["id", "output_hash", "elapsed_ms", "matched_patterns"];

static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#""[^"]*"|\S+"#).expect("token regex"));
static HEX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^0[xX][0-9a-fA-F]+$").expect("hex regex"));
static ABS_PATH: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"^/[^\s"/][^\s"]*$"#).expect("path regex"));
static DECIMAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[0-9]{4,}$").expect("decimal regex"));

#[derive(Clone, PartialEq, Debug)]
pub struct Abstracted {
    pub template: Value,
    pub key: ContentHash,
}

fn rewrite_core(core: &str) -> Option<&'static str> {
    if core.len() >= 2 && core.starts_with('"') && core.ends_with('"') {
        return (core.len() - 2 > MAX_QUOTED).then_some(STR);
    }
    if HEX.is_match(core) {
        Some(ADDR)
    } else if ABS_PATH.is_match(core) {
        Some(PATH)
    } else if DECIMAL.is_match(core) {
        Some(NUM)
    } else {
        None
    }
}

fn rewrite_token(tok: &str, out: &mut String) {
    let quoted = tok.len() >= 2 && tok.starts_with('"') && tok.ends_with('"');
    let (lead, rest) = if quoted {
        ("", tok)
    } else {
        let n = tok.len() - tok.trim_start_matches(['(', '[', '{', '\'', '*', '@']).len();
        tok.split_at(n)
    };
    let (core, trail) = if quoted {
        (rest, "")
    } else {
        let n = rest.trim_end_matches([',', ';', ':', ')', ']', '}', '.', '\'']).len();
        rest.split_at(n)
    };
    match rewrite_core(core) {
        // quotes are kept so re-tokenizing the output finds the same tokens
        Some(STR) => {
            out.push_str(lead);
            out.push('"');
            out.push_str(STR);
            out.push('"');
            out.push_str(trail);
        }
        Some(p) => {
            out.push_str(lead);
            out.push_str(p);
            out.push_str(trail);
        }
        None => out.push_str(tok),
    }
}

/// Rewrites literal tokens in free text, preserving all whitespace.
pub fn abstract_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut last = 0;
    for m in TOKEN.find_iter(s) {
        out.push_str(&s[last..m.start()]);
        rewrite_token(m.as_str(), &mut out);
        last = m.end();
    }
    out.push_str(&s[last..]);
    out
}

/// Recursively abstracts string leaves and large integers.
pub fn abstract_value(v: &Value) -> Value {
    match v {
        Value::String(s) => Value::String(abstract_text(s)),
        Value::Number(n) => {
            let big = n.as_u64().map(|u| u >= 1000).or_else(|| n.as_i64().map(|i| i <= -1000));
            if big == Some(true) {
                Value::String(NUM.into())
            } else {
                v.clone()
            }
        }
        Value::Array(xs) => Value::Array(xs.iter().map(abstract_value).collect()),
        Value::Object(m) => Value::Object(m.iter().map(|(k, x)| (k.clone(), abstract_value(x))).collect()),
        other => other.clone(),
    }
}

/// Drops [`VOLATILE_FIELDS`] at every depth.
pub fn pattern_view(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.iter()
                .filter(|(k, _)| !VOLATILE_FIELDS.contains(&k.as_str()))
                .map(|(k, x)| (k.clone(), pattern_view(x)))
                .collect::<Map<_, _>>(),
        ),
        Value::Array(xs) => Value::Array(xs.iter().map(pattern_view).collect()),
        other => other.clone(),
    }
}

/// Abstracts a payload and keys it by the canonical hash of the template.
pub fn abstract_payload(content: &Value) -> Result<Abstracted, SerializationError> {
    let template = abstract_value(content);
    let key = ContentHash::of(&template)?;
    Ok(Abstracted { template, key })
}

/// Pattern template and key for an artifact's content.
pub fn pattern_of(content: &Value) -> Result<Abstracted, SerializationError> {
    abstract_payload(&pattern_view(content))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn rule_application() {
        assert_eq!(abstract_text("jmp 0x401000"), "jmp ⟨ADDR⟩");
        assert_eq!(
            abstract_text("main entry point at 0x40197c in /tmp/x.elf."),
            "main entry point at ⟨ADDR⟩ in ⟨PATH⟩."
        );
        assert_eq!(abstract_text("read 4096 bytes, 512 left"), "read ⟨NUM⟩ bytes, 512 left");
        assert_eq!(abstract_text(r#"say "short" "a much longer quoted literal""#), r#"say "short" "⟨STR⟩""#);
        assert_eq!(abstract_text("call (0x10),"), "call (⟨ADDR⟩),");
        assert_eq!(abstract_text("  two\tspaces\n"), "  two\tspaces\n");
    }

    #[test]
    fn literal_free_payload_is_unchanged() {
        let v = json!({"cmd": "strings target", "exit": 0});
        let a = abstract_payload(&v).unwrap();
        assert_eq!(a.template, v);
        assert_eq!(a.key, ContentHash::of(&v).unwrap());
    }

    #[test]
    fn address_variants_share_a_key() {
        let a = abstract_payload(&json!({"s": "break at 0x40197c"})).unwrap();
        let b = abstract_payload(&json!({"s": "break at 0x401a00"})).unwrap();
        assert_eq!(a.key, b.key);
        let q = abstract_payload(&json!({"s": "gdb -ex 'break *0x40197c'"})).unwrap();
        let r = abstract_payload(&json!({"s": "gdb -ex 'break *0x401a00'"})).unwrap();
        assert_eq!(q.key, r.key);
        let c = abstract_payload(&json!({"s": "break at main"})).unwrap();
        assert_ne!(a.key, c.key);
    }

    #[test]
    fn json_integers() {
        assert_eq!(abstract_value(&json!([999, 1000, -2048, 1.5])), json!([999, NUM, NUM, 1.5]));
    }

    #[test]
    fn pattern_view_strips_volatile_fields() {
        let v = json!({"id": "h1", "nodes": [{"matched_patterns": ["k-1"], "operator": "disasm"}], "output_hash": "ab"});
        assert_eq!(pattern_view(&v), json!({"nodes": [{"operator": "disasm"}]}));
    }

    proptest! {
        #[test]
        fn abstraction_is_idempotent(s in r#"[ a-z0-9xA-F/"().,:\[\]{}\t'*@]{0,60}"#) {
            let once = abstract_text(&s);
            prop_assert_eq!(abstract_text(&once), once);
        }

        #[test]
        fn value_abstraction_is_idempotent(n in any::<i64>(), s in r#"[ 0-9a-fx/"]{0,30}"#) {
            let v = json!({"n": n, "s": s, "l": [n, s.clone()]});
            let once = abstract_value(&v);
            prop_assert_eq!(abstract_value(&once), once);
        }
    }
}
