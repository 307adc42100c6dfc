mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

use qbaf_engine::condition::{parse_condition, PropertyConstraint};
use qbaf_engine::contest::{Artifacts, CaseInput, ContestEdit};
use qbaf_engine::eval::{
    evaluate_run, gbm_grid_values, generate_grid, infer_dataset, label_match, ndcg_case, Gains, Label, LabelRecord,
    LabelledCase, LabelledDataset,
};
use qbaf_engine::llm::{Generator, MockResponse, MockRule, MockScript, ScriptedBackend, Stage, TokenUsage};
use qbaf_engine::ontology::{
    construct_ontology, documents_from_chunks, select_options, Entity, LlmOntologyMiner, Ontology, OntologyFile,
};
use qbaf_engine::pipeline::{
    build_general_qbafs, infer_case, infer_with_params, instantiate, GeneralQbaf, MiningConfig, RemovalCause,
};
use qbaf_engine::qbaf::{df_quad_combine, evaluate, root_strength};
use qbaf_engine::store::{write_artifacts, ArtifactStore};
use qbaf_engine::{
    Argument, ArgumentId, CaseParameters, Condition, EntityId, ParamDef, ParameterSchema, Polarity, Qbaf, Semantics,
    ValueType,
};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if let false = $cond {
            return Err(format!($($msg)*));
        }
    };
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn id(s: &str) -> ArgumentId {
    ArgumentId::new(s)
}

fn general(name: &str, root: f64, args: &[(&str, Polarity, f64, Condition)]) -> GeneralQbaf {
    let entity = Entity { id: EntityId::new(name.to_lowercase()), name: name.to_owned(), description: None };
    let mut qbaf =
        Qbaf::root_only(Argument::new("root", format!("{name} is recommended for the considered case."), root));
    let mut formal = BTreeMap::new();
    let mut nl = BTreeMap::new();
    for (arg, polarity, score, cond) in args {
        qbaf.arguments.push(Argument::new(*arg, format!("argument {arg}"), *score));
        let parent = &arg[..arg.rfind('.').unwrap()];
        qbaf.add_relation(id(arg), id(parent), *polarity);
        formal.insert(id(arg), cond.clone());
        nl.insert(id(arg), format!("condition of {arg}"));
    }
    GeneralQbaf { entity, qbaf, nl_conditions: nl, formal_conditions: formal }
}

fn artifacts(schema: ParameterSchema, generals: Vec<GeneralQbaf>) -> Artifacts {
    let mut ontology = Ontology::default();
    for g in &generals {
        ontology.add_entity(&g.entity.name, None).unwrap();
    }
    Artifacts {
        ontology: OntologyFile { ontology, options: generals.iter().map(|g| g.option().clone()).collect() },
        schema,
        generals: generals.into_iter().map(|g| (g.option().clone(), g)).collect(),
        case_overrides: BTreeMap::new(),
    }
}

fn int(name: &str) -> PropertyConstraint {
    PropertyConstraint::new(name).typed(ValueType::Integer)
}

fn dfquad_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let q = common::random_tree(&mut rng, n);
        let strengths = evaluate(&q).map_err(err)?;
        for a in &q.arguments {
            worst = worst.max((strengths.get(&a.id).unwrap() - common::naive_strength(&q, &a.id)).abs());
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst <= 1e-12, "max deviation from recursive oracle {worst:e} > 1e-12");
    for ((v0, va, vs), want) in
        [((0.5, 0.3, 0.3), 0.5f64), ((0.5, 0.8, 0.0), 0.5 - 0.5 * 0.8), ((0.5, 0.0, 0.8), 0.5 + 0.5 * 0.8)]
    {
        let got = df_quad_combine(v0, va, vs).map_err(err)?;
        ensure!(got.to_bits() == want.to_bits(), "C({v0}, {va}, {vs}) = {got}, expected {want}");
    }
    ensure!((df_quad_combine(0.5, 0.8, 0.0).map_err(err)? - 0.1).abs() <= 1e-12, "(0.5, 0.8, 0) is not 0.1");
    let mut chain = Qbaf::root_only(Argument::new("root", "r", 0.5));
    chain.arguments.push(Argument::new("root.a1", "a", 0.8));
    chain.arguments.push(Argument::new("root.a1.a1", "b", 1.0));
    chain.add_relation(id("root.a1"), id("root"), Polarity::Attack);
    chain.add_relation(id("root.a1.a1"), id("root.a1"), Polarity::Attack);
    let s = evaluate(&chain).map_err(err)?;
    ensure!(s.get(&id("root.a1")) == Some(0.0) && s.get(&id("root")) == Some(0.5), "attacked attacker fixture: {s:?}");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("1000 trees, max |diff| {worst:e} (tol 1e-12), fixtures exact, {} ms (limit 5000)", elapsed.as_millis()))
}

const LISTING: &str = r#"{"$schema": "https://json-schema.org/draft/2020-12/schema", "type": "object",
 "anyOf": [{"properties": {"eloquent_structure_involvement": {"type": "boolean", "const": true}}},
           {"properties": {"kps": {"type": "integer", "maximum": 49}}}]}"#;

fn condition_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(202_012);
    let mut checked = 0;
    for _ in 0..500 {
        let cond = common::random_condition(&mut rng, 3);
        for _ in 0..20 {
            common::oracle_agrees(&cond, &common::random_params(&mut rng))?;
            checked += 1;
        }
    }
    let cond = parse_condition(LISTING).map_err(err)?;
    let case = |e: bool, k: i64| CaseParameters::new().with("eloquent_structure_involvement", e).with("kps", k);
    let got: Vec<bool> =
        [case(true, 70), case(false, 40), case(false, 70)].iter().map(|p| cond.eval(p).unwrap()).collect();
    ensure!(got == [true, true, false], "eloquence fixture gave {got:?}");
    Ok(format!("{checked}/{checked} assignments agree (500 schemas x 20); fixture true/true/false"))
}

fn trace_fidelity() -> Outcome {
    let run = || {
        let backend = Arc::new(ScriptedBackend::new(common::script()));
        let generator = Generator::new(backend.clone());
        let chunks = common::corpus().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        let docs = documents_from_chunks(chunks).unwrap();
        let ontology = construct_ontology(&docs, &mut LlmOntologyMiner::new(&generator)).unwrap().ontology;
        let options = select_options(&ontology, Default::default());
        let built = build_general_qbafs(&generator, &ontology, &options, &MiningConfig::default()).unwrap();
        let inference =
            infer_case(&generator, &built.generals, &built.schema, common::VIGNETTE, Semantics::DfQuad).unwrap();
        let calls = [Stage::Ontology, Stage::QbafConstruction, Stage::Inference].map(|s| backend.calls(s));
        let rendered = serde_json::to_string(&(&ontology, &built.generals, &built.schema, &inference)).unwrap();
        (ontology, built, inference, calls, rendered)
    };
    let (ontology, built, inference, calls, first) = run();
    let (.., second) = run();
    ensure!(first == second, "two runs differ");
    let names: Vec<&str> = ontology.entities.iter().map(|e| e.name.as_str()).collect();
    ensure!(names == ["Treatment", "Surgery", "Radiotherapy", "Chemotherapy"], "entities {names:?}");
    ensure!(ontology.hierarchy.len() == 3, "hierarchy {:?}", ontology.hierarchy);
    ensure!(calls == [3, 15, 1], "calls per stage {calls:?}");
    let bases: Vec<Vec<f64>> =
        built.generals.iter().map(|g| g.qbaf.arguments.iter().map(|a| a.base_score).collect()).collect();
    ensure!(bases == [vec![0.5, 0.7, 0.6], vec![0.5, 0.8, 0.5], vec![0.5, 0.6, 0.9]], "base scores {bases:?}");
    let names: Vec<&str> = built.schema.defs().map(|d| d.name.as_str()).collect();
    ensure!(names.len() == 3 && ["age", "kps", "mgmt_status"].iter().all(|n| names.contains(n)), "schema {names:?}");
    ensure!(
        built.generals[0].condition(&id("root.a1")) == &Condition::Property(int("kps").maximum(49)),
        "chemotherapy attacker condition"
    );
    let ranked: Vec<(&str, f64)> = inference.ranked().iter().map(|r| (r.option.as_str(), r.score)).collect();
    let want = [("chemotherapy", 0.5 + 0.5 * (0.7 - 0.6)), ("radiotherapy", 0.5), ("surgery", 0.5 - 0.5 * (0.9 - 0.6))];
    ensure!(ranked == want, "ranking {ranked:?}");
    Ok(format!(
        "3 ontology / 15 construction / 1 inference calls, outputs match traces, {} bytes identical",
        first.len()
    ))
}

fn instantiation_pruning() -> Outcome {
    let eloquent = PropertyConstraint::new("eloquent_structure_involvement").typed(ValueType::Boolean).constant(true);
    let g = general(
        "Surgery",
        0.5,
        &[
            ("root.s1", Polarity::Support, 0.7, Condition::True),
            ("root.a1", Polarity::Attack, 0.4, Condition::Property(int("age").minimum(70))),
            ("root.a2", Polarity::Attack, 0.8, Condition::Property(eloquent)),
            ("root.a2.s1", Polarity::Support, 0.6, Condition::True),
            ("root.a2.a1", Polarity::Attack, 0.3, Condition::Property(int("kps").maximum(49))),
        ],
    );
    let params = CaseParameters::new().with("age", 75).with("kps", 90).with("eloquent_structure_involvement", false);
    let inst = instantiate(&g, &params).map_err(err)?;
    let kept: BTreeSet<&str> = inst.qbaf.arguments.iter().map(|a| a.id.as_str()).collect();
    ensure!(kept == BTreeSet::from(["root", "root.s1", "root.a1"]), "kept {kept:?}");
    let removed: Vec<(&str, bool)> =
        inst.removed.iter().map(|r| (r.id.as_str(), matches!(r.cause, RemovalCause::ConditionFailed { .. }))).collect();
    let mut sorted = removed.clone();
    sorted.sort();
    ensure!(sorted == [("root.a2", true), ("root.a2.a1", false), ("root.a2.s1", false)], "removed {removed:?}");
    ensure!(inst.qbaf.relations().count() == 2, "dangling relations in {:?}", inst.qbaf);

    let inference = infer_with_params(std::slice::from_ref(&g), &params, Semantics::DfQuad);
    let result = &inference.results[0];
    let stored: Qbaf = serde_json::from_str(&serde_json::to_string(&result.qbaf).map_err(err)?).map_err(err)?;
    let recomputed = root_strength(&stored).map_err(err)?;
    ensure!(
        recomputed.to_bits() == result.score.to_bits(),
        "stored framework gives {recomputed}, reported {}",
        result.score
    );
    let hand = 0.5 + 0.5 * (0.7 - 0.4);
    ensure!(result.score == hand, "score {} != {hand}", result.score);
    Ok(format!("removed root.a2 and its 2 descendants, score {} bit-equal on reload", result.score))
}

fn grid_dataset() -> Result<(LabelledDataset, BTreeMap<String, qbaf_engine::pipeline::CaseInference>), String> {
    let grid = generate_grid(&gbm_grid_values()).map_err(err)?;
    let generals: Vec<GeneralQbaf> = (0..9)
        .map(|i| {
            general(
                &format!("Option{i}"),
                0.5,
                &[
                    (
                        "root.s1",
                        Polarity::Support,
                        0.1 * (i + 1) as f64,
                        Condition::Property(int("kps").minimum(10 * i)),
                    ),
                    ("root.a1", Polarity::Attack, 0.5, Condition::Property(int("age").minimum(60 + 5 * i))),
                ],
            )
        })
        .collect();
    let mut cases = Vec::new();
    let mut records = Vec::new();
    let mut results = BTreeMap::new();
    for (n, params) in grid.into_iter().enumerate() {
        let case_id = format!("case{n:03}");
        let inference = infer_with_params(&generals, &params, Semantics::DfQuad);
        for r in &inference.results {
            let label = if r.score >= 0.5 { Label::Recommended } else { Label::NotRecommended };
            records.push(LabelRecord { case_id: case_id.clone(), option_id: r.option.clone(), label });
        }
        cases.push(LabelledCase { case_id: case_id.clone(), params, vignette: None });
        results.insert(case_id, inference);
    }
    Ok((LabelledDataset::new(cases, records).map_err(err)?, results))
}

fn grid_arithmetic() -> Outcome {
    let values = gbm_grid_values();
    let sizes: Vec<usize> = values.iter().map(|(_, v)| v.len()).collect();
    ensure!(sizes == [4, 3, 5, 3, 2], "value list sizes {sizes:?}");
    let grid = generate_grid(&values).map_err(err)?;
    let distinct: BTreeSet<String> = grid.iter().map(|p| serde_json::to_string(p).unwrap()).collect();
    ensure!(grid.len() == 360 && distinct.len() == 360, "{} sets, {} distinct", grid.len(), distinct.len());
    let (dataset, results) = grid_dataset()?;
    let report = evaluate_run(&results, &dataset, &Gains::default(), None).map_err(err)?;
    ensure!(dataset.pairs() == 3240 && report.pairs == 3240, "{} pairs", report.pairs);
    Ok("360 distinct parameter sets, 3240 (case, option) pairs".into())
}

fn dcg_oracle(items: &[(EntityId, f64, Label)], gains: &Gains) -> f64 {
    let dcg = |order: &[usize]| -> f64 {
        order.iter().enumerate().map(|(i, &k)| gains.gain(items[k].2) / ((i + 2) as f64).log2()).sum()
    };
    let mut predicted: Vec<usize> = (0..items.len()).collect();
    predicted.sort_by(|&a, &b| items[b].1.total_cmp(&items[a].1).then_with(|| items[a].0.cmp(&items[b].0)));
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let ideal = perms.iter().map(|p| dcg(p)).fold(0.0, f64::max);
    if ideal == 0.0 {
        1.0
    } else {
        dcg(&predicted) / ideal
    }
}

fn metric_fixtures() -> Outcome {
    let (dataset, results) = grid_dataset()?;
    let report = evaluate_run(&results, &dataset, &Gains::default(), None).map_err(err)?;
    ensure!(
        report.lmr == 1.0 && report.mean_ndcg == 1.0,
        "perfect oracle: LMR {} NDCG {}",
        report.lmr,
        report.mean_ndcg
    );

    let m = |s, l| label_match(s, l).unwrap();
    ensure!(m(0.5, Label::Recommended) && m(0.5, Label::NotRecommended), "0.5 boundary");
    ensure!(m(0.25, Label::MaybeRecommended) && m(0.75, Label::MaybeRecommended), "0.25/0.75 boundaries");
    ensure!(!m(0.2499, Label::MaybeRecommended) && !m(0.7501, Label::MaybeRecommended), "maybe interval too wide");
    ensure!(!m(0.4999, Label::Recommended) && !m(0.5001, Label::NotRecommended), "0.5 is not the only overlap");
    ensure!(
        label_match(1.01, Label::Recommended).is_err() && label_match(f64::NAN, Label::Recommended).is_err(),
        "domain"
    );

    let gains = Gains::default();
    let scores = [0.0, 0.25, 0.5, 0.75, 1.0];
    let labels = [Label::NotRecommended, Label::MaybeRecommended, Label::Recommended];
    let options = ["a", "b", "c"].map(EntityId::new);
    let mut fixtures = 0;
    let mut worst = 0.0f64;
    for s in 0..125 {
        for l in 0..27 {
            let items: Vec<(EntityId, f64, Label)> = (0..3)
                .map(|k| {
                    (options[k].clone(), scores[s / 5usize.pow(k as u32) % 5], labels[l / 3usize.pow(k as u32) % 3])
                })
                .collect();
            worst = worst.max((ndcg_case(&items, &gains) - dcg_oracle(&items, &gains)).abs());
            fixtures += 1;
        }
    }
    ensure!(worst <= 1e-12, "ndcg deviates from permutation oracle by {worst:e}");
    Ok(format!(
        "perfect oracle 1.0/1.0; interval boundaries hold; {fixtures} 3-option fixtures within {worst:e} (tol 1e-12)"
    ))
}

const TRIGGER_PARAMS: [(&str, i64); 2] = [("kps", 60), ("age", 50)];
const REFERRAL: &str = "Referral letter: man, 57 on the transcribed form, born in 1950, KPS 80.";
const AGE_DESCRIPTION: &str = "Patient age in years, computed from the date of birth";

fn fig3_store(dir: &std::path::Path) -> Result<ArtifactStore, String> {
    let t = Condition::True;
    let chemo = general(
        "Chemotherapy",
        0.5,
        &[
            ("root.s1", Polarity::Support, 0.7, t.clone()),
            ("root.s2", Polarity::Support, 0.6, t.clone()),
            ("root.s3", Polarity::Support, 0.5, t.clone()),
            ("root.s4", Polarity::Support, 0.4, t.clone()),
            ("root.a1", Polarity::Attack, 0.8, t.clone()),
            ("root.a2", Polarity::Attack, 0.6, t.clone()),
        ],
    );
    let radio = general(
        "Radiotherapy",
        0.5,
        &[
            ("root.s1", Polarity::Support, 0.8, Condition::Property(int("kps").minimum(50))),
            ("root.a1", Polarity::Attack, 0.5, Condition::Property(int("age").minimum(70))),
        ],
    );
    let schema = ParameterSchema::from_defs([
        ParamDef::new("kps", ValueType::Integer, "Karnofsky performance status"),
        ParamDef::new("age", ValueType::Integer, "Patient age in years"),
    ]);
    ArtifactStore::init(dir, artifacts(schema, vec![chemo, radio]), None).map_err(err)
}

fn fig3_generator() -> Generator {
    let rule = |contains: Vec<&str>, age: i64| MockRule {
        stage: Some(Stage::Inference),
        contains: contains.into_iter().map(String::from).collect(),
        excludes: vec![],
        response: MockResponse::json(json!({"age": age, "kps": 80})),
    };
    let script = MockScript {
        rules: vec![rule(vec![AGE_DESCRIPTION, REFERRAL], 75), rule(vec![REFERRAL], 57)],
        ..Default::default()
    };
    Generator::new(Arc::new(ScriptedBackend::new(script)))
}

fn fig3_dataset() -> Result<LabelledDataset, String> {
    let mut trigger = CaseParameters::new();
    for (k, v) in TRIGGER_PARAMS {
        trigger.insert(k, v);
    }
    let cases = vec![
        LabelledCase { case_id: "trigger".into(), params: trigger, vignette: None },
        LabelledCase { case_id: "referral".into(), params: CaseParameters::new(), vignette: Some(REFERRAL.into()) },
    ];
    let record = |c: &str, o: &str, label| LabelRecord { case_id: c.into(), option_id: EntityId::new(o), label };
    let records = vec![
        record("trigger", "chemotherapy", Label::NotRecommended),
        record("trigger", "radiotherapy", Label::Recommended),
        record("referral", "chemotherapy", Label::MaybeRecommended),
        record("referral", "radiotherapy", Label::MaybeRecommended),
    ];
    LabelledDataset::new(cases, records).map_err(err)
}

fn global_contestability() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut store = fig3_store(&tmp.path().join("store"))?;
    let generator = fig3_generator();
    let dataset = fig3_dataset()?;
    let run = |artifacts: &Artifacts| infer_dataset(Some(&generator), artifacts, &dataset, Semantics::DfQuad);
    let before = run(&store.snapshot().artifacts).map_err(err)?;
    let lmr_before = evaluate_run(&before, &dataset, &Gains::default(), None).map_err(err)?.lmr;

    let chemo = EntityId::new("chemotherapy");
    let edits =
        [("root.s1", 0.6), ("root.s2", 0.5), ("root.s3", 0.4), ("root.s4", 0.3), ("root.a1", 0.9), ("root.a2", 0.7)];
    for (arg, score) in edits {
        let edit = ContestEdit::SetBaseScore { option: chemo.clone(), argument: id(arg), base_score: score };
        store.apply(edit, "clinician review of chemotherapy evidence").map_err(err)?;
    }
    let edit = ContestEdit::EditParameterDescription { name: "age".into(), description: AGE_DESCRIPTION.into() };
    store.apply(edit, "age was read from transcription errors").map_err(err)?;
    let after = run(&store.snapshot().artifacts).map_err(err)?;
    let lmr_after = evaluate_run(&after, &dataset, &Gains::default(), None).map_err(err)?.lmr;

    let hand_before = 0.5 + 0.5 * ((1.0 - 0.3 * 0.4 * 0.5 * 0.6) - (1.0 - 0.2 * 0.4));
    let hand_after = 0.5 - 0.5 * ((1.0 - 0.1 * 0.3) - (1.0 - 0.4 * 0.5 * 0.6 * 0.7));
    let s_before = before["trigger"].score_of(&chemo).unwrap();
    let s_after = after["trigger"].score_of(&chemo).unwrap();
    ensure!(
        (s_before - hand_before).abs() <= 1e-12 && (s_after - hand_after).abs() <= 1e-12,
        "{s_before} -> {s_after}"
    );
    ensure!(s_before > 0.5 && s_after < 0.5, "trigger score {s_before} -> {s_after} does not cross 0.5");

    let radio = EntityId::new("radiotherapy");
    let (r_before, r_after) =
        (before["referral"].score_of(&radio).unwrap(), after["referral"].score_of(&radio).unwrap());
    ensure!(before["referral"].params != after["referral"].params, "description edit did not change extraction");
    ensure!(r_before != r_after, "other case unchanged: {r_before}");

    let replayed = store.replay_to(store.revision()).map_err(err)?;
    write_artifacts(&tmp.path().join("replayed"), &replayed.artifacts).map_err(err)?;
    let current = common::read_tree(&tmp.path().join("store/current"));
    ensure!(common::read_tree(&tmp.path().join("replayed")) == current, "replay differs from current store");
    let reopened = ArtifactStore::open(&tmp.path().join("store")).map_err(err)?;
    ensure!(reopened.snapshot().artifacts == store.snapshot().artifacts, "reopened store differs");
    ensure!(lmr_after > lmr_before, "LMR {lmr_before} -> {lmr_after}");
    Ok(format!(
        "trigger {s_before:.3} -> {s_after:.3}; other case {r_before:.3} -> {r_after:.3}; replay of {} edits byte-identical; LMR {lmr_before} -> {lmr_after}",
        store.log().len()
    ))
}

fn token_accounting() -> Outcome {
    let mut script = common::script();
    script.default_usage = TokenUsage::new(11, 7);
    let construction = script.sequences.get_mut(&Stage::QbafConstruction).unwrap();
    for k in [0, 5, 10] {
        construction[k] = construction[k].clone().with_usage(100, 40);
    }
    let generator = Generator::new(Arc::new(ScriptedBackend::new(script)));
    let chunks = common::corpus().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let docs = documents_from_chunks(chunks).map_err(err)?;
    let ontology = construct_ontology(&docs, &mut LlmOntologyMiner::new(&generator)).map_err(err)?.ontology;
    let options = select_options(&ontology, Default::default());
    let built = build_general_qbafs(&generator, &ontology, &options, &MiningConfig::default()).map_err(err)?;
    let arts = Artifacts {
        ontology: OntologyFile { ontology, options: options.into_iter().map(|e| e.id).collect() },
        schema: built.schema,
        generals: built.generals.into_iter().map(|g| (g.option().clone(), g)).collect(),
        case_overrides: BTreeMap::new(),
    };
    let input = CaseInput { case_id: None, case_text: Some(common::VIGNETTE.into()), params: None };
    arts.infer(Some(&generator), &input, Semantics::DfQuad).map_err(err)?;

    let ontology_hand = TokenUsage::new(3 * 11, 3 * 7);
    let construction_hand = TokenUsage::new(3 * 100 + 12 * 11, 3 * 40 + 12 * 7);
    let inference_hand = TokenUsage::new(11, 7);
    let usage = generator.usage();
    ensure!(usage.stage(Stage::Ontology) == ontology_hand, "ontology {:?}", usage.stage(Stage::Ontology));
    ensure!(
        usage.stage(Stage::QbafConstruction) == construction_hand,
        "construction {:?}",
        usage.stage(Stage::QbafConstruction)
    );
    ensure!(usage.stage(Stage::Inference) == inference_hand, "inference {:?}", usage.stage(Stage::Inference));
    let full = generator.usage_report(false);
    ensure!(full.total == ontology_hand + construction_hand + inference_hand, "full total {:?}", full.total);
    let report = generator.usage_report(true);
    ensure!(!report.stages.contains_key(&Stage::Ontology), "report lists the ontology stage");
    ensure!(report.total == construction_hand + inference_hand, "report total {:?}", report.total);
    let metrics = qbaf_engine::eval::MetricsReport { usage: Some(report.clone()), ..Default::default() };
    ensure!(metrics.table("m").contains(&report.total.total().to_string()), "table tokens");
    Ok(format!(
        "ontology {} / construction {} / inference {}; report total {} excludes ontology",
        ontology_hand.total(),
        construction_hand.total(),
        inference_hand.total(),
        report.total.total()
    ))
}

fn no_secondary_component() -> Outcome {
    let manifest = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../Cargo.toml")).map_err(err)?;
    ensure!(!manifest.contains("contest-ui"), "workspace builds the UI");
    Ok("all checks above ran in-process against the library; the workspace builds no UI".into())
}

fn main() -> ExitCode {
    let checks: [Check; 9] = [
        ("dfquad-correctness", dfquad_correctness),
        ("condition-oracle-equivalence", condition_oracle),
        ("pipeline-trace-fidelity", trace_fidelity),
        ("instantiation-pruning", instantiation_pruning),
        ("grid-and-label-arithmetic", grid_arithmetic),
        ("metric-fixtures", metric_fixtures),
        ("global-contestability", global_contestability),
        ("token-accounting", token_accounting),
        ("no-secondary-component", no_secondary_component),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
