#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use rand::rngs::StdRng;
use rand::Rng;
use serde_json::{json, Value};

use qbaf_engine::condition::{Condition, PropertyConstraint};
use qbaf_engine::llm::{MockResponse, MockRule, MockScript, Stage};
use qbaf_engine::{ArgumentId, CaseParameters, ParamValue, Polarity, Qbaf, ValueType};

pub const VIGNETTE: &str = "A 62-year-old woman with a methylated glioblastoma, KPS 40.";
pub const VIGNETTE_FIT: &str = "A 58-year-old man, unmethylated tumour, fully active with KPS 90.";

pub fn corpus() -> String {
    [
        json!({"chunk_id": "c1", "doc_id": "d1", "ordinal": 0,
               "text": "Treatment options for glioblastoma include surgery, radiotherapy and chemotherapy."}),
        json!({"chunk_id": "c2", "doc_id": "d2", "ordinal": 0,
               "text": "Surgery is followed by radiotherapy; temozolomide chemotherapy is added for methylated tumours."}),
        json!({"chunk_id": "c3", "doc_id": "d3", "ordinal": 0,
               "text": "Frail or elderly patients may receive short-course radiotherapy, surgery or chemotherapy alone."}),
    ]
    .iter()
    .map(|v| format!("{v}\n"))
    .collect()
}

fn entities(names: &[&str]) -> Value {
    Value::Array(names.iter().map(|n| json!({"name": n})).collect())
}

pub fn ontology_replies() -> Vec<MockResponse> {
    vec![
        MockResponse::json(json!({
            "entities": entities(&["Treatment", "Surgery", "Radiotherapy", "Chemotherapy"]),
            "hierarchy": [
                {"parent": "Treatment", "child": "Surgery"},
                {"parent": "Treatment", "child": "Radiotherapy"},
                {"parent": "Treatment", "child": "Chemotherapy"}
            ]
        })),
        MockResponse::json(
            json!({"entities": entities(&["Surgery", "Radiotherapy", "Chemotherapy"]), "hierarchy": []}),
        ),
        MockResponse::json(
            json!({"entities": entities(&["Radiotherapy", "Surgery", "Chemotherapy"]), "hierarchy": []}),
        ),
    ]
}

fn mined(s: (&str, &str), a: (&str, &str)) -> MockResponse {
    MockResponse::json(json!({
        "supporters": [{"argument": s.0, "condition": s.1}],
        "attackers": [{"argument": a.0, "condition": a.1}],
    }))
}

/// Options in selection order: Chemotherapy, Radiotherapy, Surgery. Per
/// option: one mining call, then score and formalise for the supporter and
/// for the attacker.
pub fn construction_replies() -> Vec<MockResponse> {
    vec![
        mined(
            ("Temozolomide prolongs survival in methylated tumours.", "MGMT promoter is methylated"),
            ("Frail patients tolerate chemotherapy poorly.", "KPS below 50"),
        ),
        MockResponse::text("0.7"),
        MockResponse::json(json!({
            "condition": {"properties": {"mgmt_status": {"type": "string", "const": "methylated"}}},
            "parameters": {"mgmt_status": {"type": "string", "description": "MGMT promoter methylation status",
                                           "enum": ["methylated", "unmethylated", "unknown"]}}
        })),
        MockResponse::json(json!({"score": 0.6})),
        MockResponse::json(json!({
            "condition": {"properties": {"kps": {"type": "integer", "maximum": 49}}},
            "parameters": {"kps": {"type": "integer", "description": "Karnofsky performance status", "minimum": 0, "maximum": 100}}
        })),
        mined(
            ("Radiotherapy after resection prolongs survival.", "KPS of at least 50"),
            ("Older patients gain little from long-course radiotherapy.", "age 70 or older"),
        ),
        MockResponse::text("0.8"),
        MockResponse::json(
            json!({"condition": {"properties": {"kps": {"type": "integer", "minimum": 50}}}, "parameters": {}}),
        ),
        MockResponse::text("0.5"),
        MockResponse::json(json!({
            "condition": {"properties": {"age": {"type": "integer", "minimum": 70}}},
            "parameters": {"age": {"type": "integer", "description": "Patient age in years", "minimum": 0}}
        })),
        mined(
            ("Maximal safe resection improves outcomes.", "always applicable"),
            ("Poor performance status makes surgery unsafe.", "KPS below 50"),
        ),
        MockResponse::text("0.6"),
        MockResponse::json(json!({"condition": {}})),
        MockResponse::text("0.9"),
        MockResponse::json(json!({"properties": {"kps": {"type": "integer", "maximum": 49}}})),
    ]
}

pub fn extraction_rules() -> Vec<MockRule> {
    vec![
        MockRule {
            stage: Some(Stage::Inference),
            contains: vec![VIGNETTE.into()],
            excludes: vec![],
            response: MockResponse::json(json!({"age": 62, "kps": 40, "mgmt_status": "methylated"})),
        },
        MockRule {
            stage: Some(Stage::Inference),
            contains: vec![VIGNETTE_FIT.into()],
            excludes: vec![],
            response: MockResponse::json(json!({"age": 58, "kps": 90, "mgmt_status": "unmethylated"})),
        },
    ]
}

pub fn script() -> MockScript {
    let mut script = MockScript { rules: extraction_rules(), ..Default::default() };
    script.sequences.insert(Stage::Ontology, ontology_replies());
    script.sequences.insert(Stage::QbafConstruction, construction_replies());
    script
}

pub fn write_script(path: &Path, script: &MockScript) {
    std::fs::write(path, serde_json::to_string_pretty(script).unwrap()).unwrap();
}

/// DF-QuAD written out directly from its definition, recursing over the tree.
pub fn naive_strength(qbaf: &Qbaf, id: &ArgumentId) -> f64 {
    let base = qbaf.arguments.iter().find(|a| &a.id == id).unwrap().base_score;
    let mut att_prod = 1.0;
    let mut att_any = false;
    for (src, dst) in &qbaf.attacks {
        if dst == id {
            att_any = true;
            att_prod *= 1.0 - naive_strength(qbaf, src);
        }
    }
    let mut sup_prod = 1.0;
    let mut sup_any = false;
    for (src, dst) in &qbaf.supports {
        if dst == id {
            sup_any = true;
            sup_prod *= 1.0 - naive_strength(qbaf, src);
        }
    }
    let va = if att_any { 1.0 - att_prod } else { 0.0 };
    let vs = if sup_any { 1.0 - sup_prod } else { 0.0 };
    if va == vs {
        base
    } else if va > vs {
        base - base * (va - vs)
    } else {
        base + (1.0 - base) * (vs - va)
    }
}

/// Random tree with `n` nodes and base scores on the 0.1 grid.
pub fn random_tree(rng: &mut StdRng, n: usize) -> Qbaf {
    let grid = |rng: &mut StdRng| rng.gen_range(0..=10) as f64 / 10.0;
    let mut qbaf = Qbaf::root_only(qbaf_engine::Argument::new("n0", "root", grid(rng)));
    for i in 1..n {
        let id = format!("n{i}");
        qbaf.arguments.push(qbaf_engine::Argument::new(id.as_str(), "arg", grid(rng)));
        let parent = format!("n{}", rng.gen_range(0..i));
        let polarity = if rng.gen_bool(0.5) { Polarity::Attack } else { Polarity::Support };
        qbaf.add_relation(ArgumentId::new(id), ArgumentId::new(parent), polarity);
    }
    qbaf
}

/// Parameters the random conditions range over, with their types.
pub const ORACLE_PARAMS: [(&str, ValueType); 5] = [
    ("kps", ValueType::Integer),
    ("age", ValueType::Integer),
    ("weight", ValueType::Number),
    ("mgmt_status", ValueType::String),
    ("eloquent", ValueType::Boolean),
];

const STATUSES: [&str; 3] = ["methylated", "unmethylated", "unknown"];

fn random_value(rng: &mut StdRng, ty: ValueType) -> ParamValue {
    match ty {
        ValueType::Integer => ParamValue::Integer(rng.gen_range(0..=100)),
        ValueType::Number => {
            if rng.gen_bool(0.2) {
                ParamValue::Integer(rng.gen_range(40..=120))
            } else {
                ParamValue::Number(rng.gen_range(40..=1200) as f64 / 10.0)
            }
        }
        ValueType::String => ParamValue::String(STATUSES[rng.gen_range(0..3)].to_owned()),
        ValueType::Boolean => ParamValue::Bool(rng.gen_bool(0.5)),
    }
}

fn number(v: ParamValue) -> Option<serde_json::Number> {
    match v {
        ParamValue::Integer(i) => Some(i.into()),
        ParamValue::Number(f) => serde_json::Number::from_f64(f),
        _ => None,
    }
}

fn random_constraint(rng: &mut StdRng) -> PropertyConstraint {
    let (name, ty) = ORACLE_PARAMS[rng.gen_range(0..ORACLE_PARAMS.len())];
    let mut c = PropertyConstraint::new(name);
    if rng.gen_bool(0.7) {
        c = c.typed(ty);
    }
    let numeric = matches!(ty, ValueType::Integer | ValueType::Number);
    let keywords = rng.gen_range(1..=3);
    for _ in 0..keywords {
        match rng.gen_range(0..if numeric { 6 } else { 2 }) {
            0 => c.constant = Some(random_value(rng, ty)),
            1 => {
                let n = rng.gen_range(1..=3);
                c.allowed = Some((0..n).map(|_| random_value(rng, ty)).collect());
            }
            2 => c.minimum = number(random_value(rng, ty)),
            3 => c.maximum = number(random_value(rng, ty)),
            4 => c.exclusive_minimum = number(random_value(rng, ty)),
            _ => c.exclusive_maximum = number(random_value(rng, ty)),
        }
    }
    c
}

pub fn random_condition(rng: &mut StdRng, depth: u32) -> Condition {
    let leaf = depth == 0 || rng.gen_bool(0.4);
    if leaf {
        return match rng.gen_range(0..10) {
            0 => Condition::True,
            1 => {
                let first = rng.gen_range(0..5);
                let mut names = vec![ORACLE_PARAMS[first].0.to_owned()];
                if rng.gen_bool(0.5) {
                    names.push(ORACLE_PARAMS[(first + rng.gen_range(1..5)) % 5].0.to_owned());
                }
                Condition::Required(names)
            }
            _ => Condition::Property(random_constraint(rng)),
        };
    }
    match rng.gen_range(0..3) {
        0 => Condition::AnyOf((0..rng.gen_range(1..=3)).map(|_| random_condition(rng, depth - 1)).collect()),
        1 => Condition::AllOf((0..rng.gen_range(1..=3)).map(|_| random_condition(rng, depth - 1)).collect()),
        _ => Condition::Not(Box::new(random_condition(rng, depth - 1))),
    }
}

/// Each parameter is absent, unknown or a value of its declared type.
pub fn random_params(rng: &mut StdRng) -> CaseParameters {
    let mut params = CaseParameters::new();
    for (name, ty) in ORACLE_PARAMS {
        match rng.gen_range(0..5) {
            0 => {}
            1 => params.mark_unknown(name),
            _ => params.insert(name, random_value(rng, ty)),
        }
    }
    params
}

pub fn oracle_agrees(cond: &Condition, params: &CaseParameters) -> Result<(), String> {
    let document = cond.to_document();
    let validator = jsonschema::draft202012::new(&document).map_err(|e| format!("oracle rejected {document}: {e}"))?;
    let expected = validator.is_valid(&params.to_instance());
    let got = cond.eval(params).map_err(|e| format!("{document} on {}: {e}", params.to_instance()))?;
    if got == expected {
        Ok(())
    } else {
        Err(format!("{document} on {}: engine {got}, oracle {expected}", params.to_instance()))
    }
}

/// Relative paths to file bytes under `dir`.
pub fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Ontology, frameworks and schema built from the scripted scenario.
pub fn built_artifacts() -> qbaf_engine::contest::Artifacts {
    use qbaf_engine::ontology::{
        construct_ontology, documents_from_chunks, select_options, LlmOntologyMiner, OntologyFile,
    };
    use qbaf_engine::pipeline::{build_general_qbafs, MiningConfig};

    let generator =
        qbaf_engine::llm::Generator::new(std::sync::Arc::new(qbaf_engine::llm::ScriptedBackend::new(script())));
    let chunks = corpus().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let docs = documents_from_chunks(chunks).unwrap();
    let ontology = construct_ontology(&docs, &mut LlmOntologyMiner::new(&generator)).unwrap().ontology;
    let options = select_options(&ontology, Default::default());
    let built = build_general_qbafs(&generator, &ontology, &options, &MiningConfig::default()).unwrap();
    qbaf_engine::contest::Artifacts {
        ontology: OntologyFile { ontology, options: options.into_iter().map(|e| e.id).collect() },
        schema: built.schema,
        generals: built.generals.into_iter().map(|g| (g.option().clone(), g)).collect(),
        case_overrides: Default::default(),
    }
}

/// Backend answering only the extraction rules.
pub fn inference_generator() -> qbaf_engine::llm::Generator {
    let script = MockScript { rules: extraction_rules(), ..Default::default() };
    qbaf_engine::llm::Generator::new(std::sync::Arc::new(qbaf_engine::llm::ScriptedBackend::new(script)))
}
