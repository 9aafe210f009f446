//! Canonical JSON used for transaction ids, block hashes and signed bytes.
//!
//! Objects are written with keys in ascending byte order, no whitespace
//! anywhere. Strings use JSON escaping with the short forms `\"`, `\\`,
//! `\b`, `\f`, `\n`, `\r`, `\t`; every other control character below 0x20
//! becomes `\u00xx` with lowercase hex. `/` and all non-ASCII characters are
//! written as raw UTF-8. Integers are plain decimal; other finite numbers use
//! the shortest representation that round-trips (`0.5`, `1.0`, `1e+20`).
//! NaN and infinities cannot be represented and are refused at the point
//! they would enter a document (see [`finite_number`]).

use serde::Serialize;
use serde_json::{Map, Number, Value};

use super::LedgerError;
use crate::crypto::{hash_digest, Digest};

pub fn canonical_encode(value: &Value) -> Vec<u8> {
    let mut out = Vec::with_capacity(256);
    write_value(value, &mut out);
    out
}

pub fn canonical_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, LedgerError> {
    let v = serde_json::to_value(value).map_err(|e| LedgerError::Encoding(e.to_string()))?;
    Ok(canonical_encode(&v))
}

/// Hash of the canonical encoding of a transaction body that has no `id`.
pub fn compute_tx_id(body: &Value) -> Digest {
    hash_digest(&canonical_encode(body))
}

pub fn finite_number(x: f64) -> Result<Value, LedgerError> {
    Number::from_f64(x)
        .map(Value::Number)
        .ok_or(LedgerError::NonFinite(x))
}

/// Builds a map from pairs; handy for asset data and metadata literals.
pub fn map_of<I, K>(pairs: I) -> Map<String, Value>
where
    I: IntoIterator<Item = (K, Value)>,
    K: Into<String>,
{
    pairs.into_iter().map(|(k, v)| (k.into(), v)).collect()
}

fn write_value(v: &Value, out: &mut Vec<u8>) {
    match v {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => out.extend_from_slice(n.to_string().as_bytes()),
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out);
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort_unstable_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
            out.push(b'{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(k, out);
                out.push(b':');
                write_value(&map[k], out);
            }
            out.push(b'}');
        }
    }
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    out.push(b'"');
    for ch in s.chars() {
        match ch {
            '"' => out.extend_from_slice(b"\\\""),
            '\\' => out.extend_from_slice(b"\\\\"),
            '\u{08}' => out.extend_from_slice(b"\\b"),
            '\u{0c}' => out.extend_from_slice(b"\\f"),
            '\n' => out.extend_from_slice(b"\\n"),
            '\r' => out.extend_from_slice(b"\\r"),
            '\t' => out.extend_from_slice(b"\\t"),
            c if (c as u32) < 0x20 => {
                out.extend_from_slice(format!("\\u{:04x}", c as u32).as_bytes())
            }
            c => {
                let mut buf = [0u8; 4];
                out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
        }
    }
    out.push(b'"');
}
