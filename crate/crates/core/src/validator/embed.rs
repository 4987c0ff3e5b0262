//! Feature-hashed bag-of-tokens embedding.

use serde_json::Value;

pub const DIM: usize = 256;

pub type Embedding = [f64; DIM];

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn leaf_tokens(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::String(s) => out.extend(s.split_whitespace().map(str::to_owned)),
        Value::Number(n) => out.push(n.to_string()),
        Value::Bool(b) => out.push(b.to_string()),
        Value::Array(xs) => xs.iter().for_each(|x| leaf_tokens(x, out)),
        Value::Object(m) => m.values().for_each(|x| leaf_tokens(x, out)),
        Value::Null => {}
    }
}

/// Value tokens only; object keys are schema, not content.
pub fn tokens(v: &Value) -> Vec<String> {
    let mut out = Vec::new();
    leaf_tokens(v, &mut out);
    out
}

/// L2-normalized token counts; the zero vector for token-free payloads.
pub fn embed(v: &Value) -> Embedding {
    let mut e = [0.0; DIM];
    for t in tokens(v) {
        e[(fnv1a(t.as_bytes()) % DIM as u64) as usize] += 1.0;
    }
    let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        e.iter_mut().for_each(|x| *x /= norm);
    }
    e
}

pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn bucket(token: &str) -> usize {
    (fnv1a(token.as_bytes()) % DIM as u64) as usize
}
