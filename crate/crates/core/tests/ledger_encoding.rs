//! Transaction ids checked against encoders that share no code with the
//! ledger: ids frozen from Python's `json.dumps(sort_keys=True,
//! separators=(",", ":"), ensure_ascii=False)` plus SHA-256, and a second
//! Rust encoder written from the documented format.

use ehrchain_core::crypto::SigningKeyPair;
use ehrchain_core::ledger::{build_create_tx, build_transfer_tx, canonical_encode, map_of};
use proptest::prelude::*;
use serde_json::{json, Value};

fn reference_encode(v: &Value) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        Value::String(s) => {
            let mut o = String::from("\"");
            for c in s.chars() {
                let esc = match c {
                    '"' => "\\\"".to_string(),
                    '\\' => "\\\\".to_string(),
                    '\n' => "\\n".to_string(),
                    '\r' => "\\r".to_string(),
                    '\t' => "\\t".to_string(),
                    '\u{8}' => "\\b".to_string(),
                    '\u{c}' => "\\f".to_string(),
                    c if u32::from(c) < 32 => format!("\\u{:04x}", u32::from(c)),
                    c => c.to_string(),
                };
                o.push_str(&esc);
            }
            o + "\""
        }
        Value::Array(a) => format!(
            "[{}]",
            a.iter().map(reference_encode).collect::<Vec<_>>().join(",")
        ),
        Value::Object(m) => {
            let mut pairs: Vec<(&String, &Value)> = m.iter().collect();
            pairs.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            let body: Vec<String> = pairs
                .into_iter()
                .map(|(k, v)| {
                    format!(
                        "{}:{}",
                        reference_encode(&Value::String(k.clone())),
                        reference_encode(v)
                    )
                })
                .collect();
            format!("{{{}}}", body.join(","))
        }
    }
}

#[test]
fn ids_match_frozen_python_oracle() {
    let p = SigningKeyPair::from_seed(&[7u8; 32]).unwrap();
    let d = SigningKeyPair::from_seed(&[8u8; 32]).unwrap();
    let c = build_create_tx(
        &p,
        map_of([
            ("type", json!("ehr-record")),
            ("kind", json!("LAB")),
            ("note", json!("Zoë \"x\"\n\u{1}/")),
        ]),
        Some(map_of([("n", json!(3)), ("w", json!(0.5))])),
    );
    assert_eq!(
        c.id.to_hex(),
        "af34a20d11482a28fd9461945a457d3081587dada663ab80037ff66b0d224d4d"
    );
    let t = build_transfer_tx(&p, c.output_ref(0), c.id, d.public(), None);
    assert_eq!(
        t.id.to_hex(),
        "c07441b536ebd3efa87094f14afdd03aad794f4aa20cf818692c44e7e02106c7"
    );
    assert_eq!(
        String::from_utf8(canonical_encode(&c.body_value(true))).unwrap(),
        reference_encode(&c.body_value(true))
    );
}

fn json_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(|i| json!(i)),
        any::<u64>().prop_map(|u| json!(u)),
        (-1e6f64..1e6).prop_map(|f| json!(f)),
        "\\PC{0,12}".prop_map(Value::String),
        proptest::collection::vec(0u32..0x80, 0..6)
            .prop_map(|cs| Value::String(cs.into_iter().filter_map(char::from_u32).collect())),
    ];
    leaf.prop_recursive(3, 24, 5, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 0..5).prop_map(Value::Array),
            proptest::collection::btree_map("\\PC{0,6}", inner, 0..5)
                .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

proptest! {
    #[test]
    fn canonical_encoding_matches_reference_encoder(v in json_value()) {
        prop_assert_eq!(String::from_utf8(canonical_encode(&v)).unwrap(), reference_encode(&v));
    }

    #[test]
    fn canonical_encoding_reparses_to_the_same_value(v in json_value()) {
        let back: Value = serde_json::from_slice(&canonical_encode(&v)).unwrap();
        prop_assert_eq!(back, v);
    }
}
