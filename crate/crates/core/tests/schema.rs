//! The published config schema accepts every built-in config and rejects what
//! the strict parser rejects.

use edgelab::bench::ExperimentConfig;
use serde_json::{json, Value};

type Edit = (&'static str, Box<dyn Fn(&mut Value)>);

fn validator() -> jsonschema::Validator {
    let schema: Value = serde_json::from_str(include_str!("../../../docs/experiment.schema.json")).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

#[test]
fn built_in_configs_conform() {
    let v = validator();
    for cmd in ["gen", "evict", "spec", "quant", "lora-demo"] {
        let cfg = serde_json::to_value(ExperimentConfig::default_for(cmd).unwrap()).unwrap();
        let errors: Vec<String> = v.iter_errors(&cfg).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{cmd}: {errors:?}");
    }
}

#[test]
fn schema_and_parser_agree_on_edits() {
    let v = validator();
    let base = serde_json::to_value(ExperimentConfig::default_for("evict").unwrap()).unwrap();
    let edits: Vec<Edit> = vec![
        ("minimal", Box::new(|c| *c = json!({"task": c["task"].clone(), "method": c["method"].clone()}))),
        ("typo at top level", Box::new(|c| c["trails"] = json!(3))),
        ("typo in model", Box::new(|c| c["model"]["dmodel"] = json!(8))),
        ("typo in policy", Box::new(|c| c["method"]["policies"][0]["sink"] = json!(1))),
        ("unknown policy", Box::new(|c| c["method"]["policies"][0] = json!({"kind": "lru"}))),
        ("even pool kernel", Box::new(|c| c["method"]["policies"][2]["pool_kernel"] = json!(4))),
        ("ratio of one", Box::new(|c| c["method"]["eviction_ratios"] = json!([1.0]))),
        ("zero trials", Box::new(|c| c["trials"] = json!(0))),
        ("no policies", Box::new(|c| c["method"]["policies"] = json!([]))),
        ("bad format", Box::new(|c| c["output"]["format"] = json!("xml"))),
        (
            "missing task",
            Box::new(|c| {
                c.as_object_mut().unwrap().remove("task");
            }),
        ),
    ];
    for (name, edit) in edits {
        let mut c = base.clone();
        edit(&mut c);
        let schema_ok = v.is_valid(&c);
        let parser_ok = ExperimentConfig::from_json(&c.to_string()).is_ok();
        assert_eq!(schema_ok, parser_ok, "{name}");
        assert_eq!(schema_ok, name == "minimal", "{name}");
    }
}
