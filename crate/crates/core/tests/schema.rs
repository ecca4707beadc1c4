//! The shipped JSON schema must describe the same document the loader reads.

use std::collections::BTreeSet;

use mm_arch::demos;
use serde_json::Value;

fn schema() -> Value {
    serde_json::from_str(include_str!("../../../book/src/model.schema.json")).unwrap()
}

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

#[test]
fn top_level_keys_match_the_canonical_model() {
    let s = schema();
    let model: Value = serde_json::from_str(&demos::FORMATION.model().unwrap().to_json()).unwrap();
    assert_eq!(keys(&s["properties"]), keys(&model));
    for section in ["codebook", "clock", "memory", "learning", "context"] {
        assert_eq!(
            keys(&s["properties"][section]["properties"]),
            keys(&model[section]),
            "{section}"
        );
    }
}

#[test]
fn schema_defaults_match_loader_defaults() {
    let s = schema();
    let model: Value =
        serde_json::from_str(&mm_arch::model::Model::parse(r#"{"name": "empty"}"#).unwrap().to_json()).unwrap();
    for section in ["codebook", "clock", "memory", "learning", "context"] {
        for (key, field) in s["properties"][section]["properties"].as_object().unwrap() {
            let want = &field["default"];
            let got = &model[section][key];
            let same = match (want.as_f64(), got.as_f64()) {
                (Some(a), Some(b)) => a == b,
                _ => want == got,
            };
            assert!(same, "{section}.{key}: schema {want}, loader {got}");
        }
    }
}
