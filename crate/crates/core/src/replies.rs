//! Builders for model answers in the shapes the engine expects. Used to
//! write mock scripts and test fixtures.

use serde_json::{json, Map, Value};

use crate::catalog::ControlKind;
use crate::dataset::Aspect;

/// A reasoning answer. Each aspect lists `(control name, reasoning)` pairs in
/// ranking order.
pub fn reasoning_reply(
    task: &str,
    relevant: &str,
    aspects: &[(Aspect, &[(&str, &str)])],
) -> String {
    let mut doc = Map::new();
    doc.insert("user task".into(), json!(task));
    let names: Vec<&str> = aspects.iter().map(|(a, _)| a.id()).collect();
    doc.insert("user preference aspect".into(), json!(names.join(", ")));
    if !relevant.is_empty() {
        doc.insert("relevant tasks from the dataset".into(), json!(relevant));
    }
    for (aspect, picks) in aspects {
        let mut m = Map::new();
        for (name, why) in *picks {
            m.insert((*name).to_string(), json!(why));
        }
        doc.insert(format!("{}_reasoning", aspect.id()), Value::Object(m));
    }
    serde_json::to_string_pretty(&Value::Object(doc)).expect("reply serializes")
}

/// A code generation answer with `control_code` as a single program.
pub fn codegen_reply(task: &str, kinds: &[ControlKind], code: &str) -> String {
    let names: Vec<&str> = kinds.iter().map(|k| k.canonical_name()).collect();
    let doc = json!({
        "task": task,
        "control_type": names.join(", "),
        "control_code": code,
    });
    serde_json::to_string_pretty(&doc).expect("reply serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::extract_json;

    #[test]
    fn replies_are_json() {
        let r = reasoning_reply("t", "x", &[(Aspect::Efficiency, &[("Slider", "fast")])]);
        let v = extract_json(&r).unwrap();
        assert_eq!(v["efficiency_reasoning"]["Slider"], "fast");
        let c = codegen_reply(
            "t",
            &[ControlKind::Slider, ControlKind::ColorWheel],
            "print(1)",
        );
        let v = extract_json(&c).unwrap();
        assert_eq!(v["control_type"], "Slider, Color Wheel");
    }
}
