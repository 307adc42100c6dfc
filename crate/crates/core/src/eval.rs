//! Label match rate and NDCG over option scores, plus the parameter grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::{CaseParameters, ParamValue};
use crate::contest::{Artifacts, CaseInput};
use crate::llm::{Generator, UsageReport};
use crate::ontology::EntityId;
use crate::pipeline::{CaseInference, PipelineError};
use crate::qbaf::Semantics;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{path}: {reason}")]
    Dataset { path: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    #[serde(alias = "not recommended")]
    NotRecommended,
    #[serde(alias = "maybe recommended")]
    MaybeRecommended,
    Recommended,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Recommended, Label::MaybeRecommended, Label::NotRecommended];

    /// Closed score interval the label admits.
    pub fn interval(self) -> (f64, f64) {
        match self {
            Label::Recommended => (0.5, 1.0),
            Label::MaybeRecommended => (0.25, 0.75),
            Label::NotRecommended => (0.0, 0.5),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub recommended: f64,
    pub maybe_recommended: f64,
    pub not_recommended: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Gains { recommended: 2.0, maybe_recommended: 1.0, not_recommended: 0.0 }
    }
}

impl Gains {
    pub fn gain(&self, label: Label) -> f64 {
        match label {
            Label::Recommended => self.recommended,
            Label::MaybeRecommended => self.maybe_recommended,
            Label::NotRecommended => self.not_recommended,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if [self.recommended, self.maybe_recommended, self.not_recommended].iter().any(|g| !g.is_finite() || *g < 0.0) {
            out.push("gains must be finite and non-negative".to_owned());
        }
        if !(self.recommended >= self.maybe_recommended && self.maybe_recommended >= self.not_recommended) {
            out.push("gains must be monotone in label order".to_owned());
        }
        out
    }
}

pub fn label_match(score: f64, label: Label) -> Result<bool, EvalError> {
    if !(0.0..=1.0).contains(&score) {
        return Err(EvalError::Domain(format!("score {score} outside [0, 1]")));
    }
    let (lo, hi) = label.interval();
    Ok(lo <= score && score <= hi)
}

/// Cartesian product of the value lists. The first parameter varies slowest.
pub fn generate_grid(values: &[(String, Vec<ParamValue>)]) -> Result<Vec<CaseParameters>, EvalError> {
    if let Some((name, _)) = values.iter().find(|(_, v)| v.is_empty()) {
        return Err(EvalError::Domain(format!("no values given for {name}")));
    }
    let mut grid = vec![CaseParameters::new()];
    for (name, options) in values {
        grid =
            grid.into_iter().flat_map(|base| options.iter().map(move |v| base.clone().with(name, v.clone()))).collect();
    }
    Ok(grid)
}

/// Age, MGMT status, KPS, tumour location and sex lists of the glioblastoma
/// evaluation grid.
pub fn gbm_grid_values() -> Vec<(String, Vec<ParamValue>)> {
    let strings = |xs: &[&str]| xs.iter().map(|s| ParamValue::from(*s)).collect::<Vec<_>>();
    vec![
        ("age".into(), [50i64, 60, 75, 85].into_iter().map(ParamValue::from).collect()),
        ("mgmt_status".into(), strings(&["methylated", "unknown", "unmethylated"])),
        ("kps".into(), [10i64, 30, 50, 70, 90].into_iter().map(ParamValue::from).collect()),
        ("tumour_location".into(), strings(&["non-dominant frontal lobe", "thalamus", "brainstem"])),
        ("sex".into(), strings(&["male", "female"])),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelledCase {
    pub case_id: String,
    #[serde(default)]
    pub params: CaseParameters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vignette: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub case_id: String,
    pub option_id: EntityId,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelledDataset {
    pub cases: Vec<LabelledCase>,
    pub options: Vec<EntityId>,
    pub labels: BTreeMap<(String, EntityId), Label>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let err = |reason: String| EvalError::Dataset { path: path.display().to_string(), reason };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| err(format!("line {}: {e}", i + 1))))
        .collect()
}

impl LabelledDataset {
    /// Build from records; options are the distinct labelled option ids.
    pub fn new(cases: Vec<LabelledCase>, records: Vec<LabelRecord>) -> Result<Self, EvalError> {
        let mut labels = BTreeMap::new();
        let mut options = BTreeSet::new();
        for r in records {
            options.insert(r.option_id.clone());
            if labels.insert((r.case_id.clone(), r.option_id.clone()), r.label).is_some() {
                return Err(EvalError::Domain(format!("duplicate label for ({}, {})", r.case_id, r.option_id)));
            }
        }
        let dataset = LabelledDataset { cases, options: options.into_iter().collect(), labels };
        let problems = dataset.problems();
        if problems.is_empty() {
            Ok(dataset)
        } else {
            Err(EvalError::Domain(problems.join("; ")))
        }
    }

    /// Reads `cases.jsonl` and `labels.jsonl` from `dir`.
    pub fn load(dir: &Path) -> Result<Self, EvalError> {
        let cases = read_jsonl(&dir.join("cases.jsonl"))?;
        let records = read_jsonl(&dir.join("labels.jsonl"))?;
        Self::new(cases, records)
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut cases = String::new();
        for c in &self.cases {
            cases.push_str(&crate::canonical::to_canonical_line(c)?);
            cases.push('\n');
        }
        let mut labels = String::new();
        for ((case_id, option_id), label) in &self.labels {
            let r = LabelRecord { case_id: case_id.clone(), option_id: option_id.clone(), label: *label };
            labels.push_str(&crate::canonical::to_canonical_line(&r)?);
            labels.push('\n');
        }
        fs::write(dir.join("cases.jsonl"), cases)?;
        fs::write(dir.join("labels.jsonl"), labels)
    }

    /// Label map must be total over cases x options.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for c in &self.cases {
            if !seen.insert(c.case_id.as_str()) {
                out.push(format!("duplicate case {}", c.case_id));
            }
            for o in &self.options {
                if !self.labels.contains_key(&(c.case_id.clone(), o.clone())) {
                    out.push(format!("no label for ({}, {o})", c.case_id));
                }
            }
        }
        for (case_id, _) in self.labels.keys() {
            if !seen.contains(case_id.as_str()) {
                out.push(format!("label for unknown case {case_id}"));
            }
        }
        out.dedup();
        out
    }

    pub fn pairs(&self) -> usize {
        self.labels.len()
    }

    pub fn labels_for(&self, case_id: &str) -> BTreeMap<EntityId, Label> {
        self.options
            .iter()
            .filter_map(|o| self.labels.get(&(case_id.to_owned(), o.clone())).map(|l| (o.clone(), *l)))
            .collect()
    }
}

pub type Predictions = BTreeMap<(String, EntityId), f64>;

fn count_matches(predictions: &Predictions, dataset: &LabelledDataset) -> Result<usize, EvalError> {
    let mut matched = 0;
    for (key, label) in &dataset.labels {
        let score = predictions
            .get(key)
            .ok_or_else(|| EvalError::Domain(format!("no prediction for ({}, {})", key.0, key.1)))?;
        if label_match(*score, *label)? {
            matched += 1;
        }
    }
    Ok(matched)
}

/// Share of labelled (case, option) pairs whose score lies in the label's interval.
pub fn lmr(predictions: &Predictions, dataset: &LabelledDataset) -> Result<f64, EvalError> {
    if dataset.labels.is_empty() {
        return Err(EvalError::Domain("dataset has no labels".into()));
    }
    Ok(count_matches(predictions, dataset)? as f64 / dataset.labels.len() as f64)
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains.enumerate().map(|(i, g)| g / ((i + 2) as f64).log2()).sum()
}

/// NDCG of one case. Options are ranked by descending score, ties by id.
pub fn ndcg_case(items: &[(EntityId, f64, Label)], gains: &Gains) -> f64 {
    let mut predicted: Vec<&(EntityId, f64, Label)> = items.iter().collect();
    predicted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut ideal: Vec<f64> = items.iter().map(|(_, _, l)| gains.gain(*l)).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let ideal = dcg(ideal.into_iter());
    if ideal == 0.0 {
        return 1.0;
    }
    dcg(predicted.iter().map(|(_, _, l)| gains.gain(*l))) / ideal
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub lmr: f64,
    pub mean_ndcg: f64,
    pub per_case_ndcg: BTreeMap<String, f64>,
    pub cases: usize,
    pub pairs: usize,
    pub matched: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<UsageReport>,
}

impl MetricsReport {
    pub fn table(&self, method: &str) -> String {
        let tokens = self.usage.as_ref().map_or("-".to_owned(), |u| u.total.total().to_string());
        let width = method.len().max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>12}", "Method", "LMR", "NDCG", "Tokens");
        let _ = writeln!(out, "{:<width$}  {:>6.4}  {:>6.4}  {:>12}", method, self.lmr, self.mean_ndcg, tokens);
        let _ = writeln!(out, "({} cases, {} pairs, {} matched)", self.cases, self.pairs, self.matched);
        out
    }
}

/// Per-pair scores from inference results keyed by case id.
pub fn predictions(results: &BTreeMap<String, CaseInference>) -> Predictions {
    results
        .iter()
        .flat_map(|(case_id, inf)| inf.results.iter().map(move |r| ((case_id.clone(), r.option.clone()), r.score)))
        .collect()
}

/// Infer every dataset case against `artifacts`. Cases with parameters use
/// them directly; the rest have parameters extracted from their vignette.
pub fn infer_dataset(
    generator: Option<&Generator>,
    artifacts: &Artifacts,
    dataset: &LabelledDataset,
    semantics: Semantics,
) -> Result<BTreeMap<String, CaseInference>, PipelineError> {
    let mut out = BTreeMap::new();
    for case in &dataset.cases {
        let input = CaseInput {
            case_id: Some(case.case_id.clone()),
            case_text: case.vignette.clone(),
            params: (!case.params.is_empty()).then(|| case.params.clone()),
        };
        out.insert(case.case_id.clone(), artifacts.infer(generator, &input, semantics)?);
    }
    Ok(out)
}

pub fn evaluate_run(
    results: &BTreeMap<String, CaseInference>,
    dataset: &LabelledDataset,
    gains: &Gains,
    usage: Option<UsageReport>,
) -> Result<MetricsReport, EvalError> {
    let problems = gains.problems();
    if !problems.is_empty() {
        return Err(EvalError::Domain(problems.join("; ")));
    }
    let missing: Vec<&str> =
        dataset.cases.iter().map(|c| c.case_id.as_str()).filter(|id| !results.contains_key(*id)).collect();
    if !missing.is_empty() {
        return Err(EvalError::Domain(format!("no results for cases: {}", missing.join(", "))));
    }
    let predictions = predictions(results);
    let matched = count_matches(&predictions, dataset)?;
    let mut per_case_ndcg = BTreeMap::new();
    for case in &dataset.cases {
        let items: Vec<(EntityId, f64, Label)> = dataset
            .labels_for(&case.case_id)
            .into_iter()
            .map(|(o, l)| {
                let score = predictions[&(case.case_id.clone(), o.clone())];
                (o, score, l)
            })
            .collect();
        per_case_ndcg.insert(case.case_id.clone(), ndcg_case(&items, gains));
    }
    let cases = dataset.cases.len();
    let pairs = dataset.pairs();
    let mean_ndcg = if cases == 0 { 1.0 } else { per_case_ndcg.values().sum::<f64>() / cases as f64 };
    Ok(MetricsReport {
        lmr: if pairs == 0 { 0.0 } else { matched as f64 / pairs as f64 },
        mean_ndcg,
        per_case_ndcg,
        cases,
        pairs,
        matched,
        usage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn o(s: &str) -> EntityId {
        EntityId::new(s)
    }

    #[test]
    fn interval_boundaries_are_closed() {
        assert!(label_match(0.6, Label::Recommended).unwrap());
        assert!(label_match(0.5, Label::NotRecommended).unwrap());
        assert!(label_match(0.5, Label::Recommended).unwrap());
        assert!(label_match(0.25, Label::MaybeRecommended).unwrap());
        assert!(label_match(0.75, Label::MaybeRecommended).unwrap());
        assert!(!label_match(0.2, Label::MaybeRecommended).unwrap());
        assert!(label_match(1.01, Label::Recommended).is_err());
        assert!(label_match(f64::NAN, Label::Recommended).is_err());
    }

    #[test]
    fn grid_order_and_size() {
        let grid =
            generate_grid(&[("a".into(), vec![1i64.into(), 2i64.into()]), ("b".into(), vec!["x".into(), "y".into()])])
                .unwrap();
        let got: Vec<String> = grid.iter().map(|p| serde_json::to_string(p).unwrap()).collect();
        assert_eq!(got, [r#"{"a":1,"b":"x"}"#, r#"{"a":1,"b":"y"}"#, r#"{"a":2,"b":"x"}"#, r#"{"a":2,"b":"y"}"#]);
        assert_eq!(generate_grid(&gbm_grid_values()).unwrap().len(), 360);
        assert!(generate_grid(&[("a".into(), vec![])]).is_err());
    }

    #[test]
    fn ndcg_fixtures() {
        let g = Gains::default();
        let ideal = [
            (o("a"), 0.9, Label::Recommended),
            (o("b"), 0.5, Label::MaybeRecommended),
            (o("c"), 0.1, Label::NotRecommended),
        ];
        assert_eq!(ndcg_case(&ideal, &g), 1.0);
        let zero = [(o("a"), 0.9, Label::NotRecommended), (o("b"), 0.1, Label::NotRecommended)];
        assert_eq!(ndcg_case(&zero, &g), 1.0);
        let reversed = [
            (o("a"), 0.1, Label::Recommended),
            (o("b"), 0.5, Label::MaybeRecommended),
            (o("c"), 0.9, Label::NotRecommended),
        ];
        let expected = (0.0 + 1.0 / 3f64.log2() + 2.0 / 2.0) / (2.0 + 1.0 / 3f64.log2());
        assert!((ndcg_case(&reversed, &g) - expected).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_option_id() {
        let g = Gains::default();
        let items = [(o("b"), 0.5, Label::Recommended), (o("a"), 0.5, Label::NotRecommended)];
        assert!(ndcg_case(&items, &g) < 1.0);
    }

    #[test]
    fn missing_labels_are_rejected() {
        let cases = vec![LabelledCase { case_id: "c1".into(), params: CaseParameters::new(), vignette: None }];
        let records = vec![LabelRecord { case_id: "c2".into(), option_id: o("x"), label: Label::Recommended }];
        assert!(LabelledDataset::new(cases, records).is_err());
    }

    #[test]
    fn label_spellings() {
        let l: Label = serde_json::from_str("\"maybe_recommended\"").unwrap();
        assert_eq!(l, Label::MaybeRecommended);
        let l: Label = serde_json::from_str("\"not recommended\"").unwrap();
        assert_eq!(l, Label::NotRecommended);
    }

    fn label() -> impl Strategy<Value = Label> {
        prop_oneof![Just(Label::Recommended), Just(Label::MaybeRecommended), Just(Label::NotRecommended)]
    }

    proptest! {
        #[test]
        fn ndcg_is_bounded_and_rank_invariant(
            entries in prop::collection::vec((0.0f64..=1.0, label()), 1..8),
        ) {
            let g = Gains::default();
            let items: Vec<_> = entries.iter().enumerate().map(|(i, (s, l))| (o(&format!("o{i}")), *s, *l)).collect();
            let v = ndcg_case(&items, &g);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            let warped: Vec<_> = items.iter().map(|(id, s, l)| (id.clone(), s.powi(3) * 7.0 + 1.0, *l)).collect();
            prop_assert!((ndcg_case(&warped, &g) - v).abs() < 1e-12);
        }
    }
}
