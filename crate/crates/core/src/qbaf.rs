//! Tree-shaped quantitative bipolar argumentation frameworks and DF-QuAD
//! gradual semantics.
//!
//! A [`Qbaf`] holds arguments with base scores plus separate attack and
//! support relations. Every non-root argument has exactly one outgoing
//! relation (to its parent) and the root has none, so the relation graph is a
//! tree oriented toward the root. Depth and breadth are not bounded here.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArgumentId(String);

impl ArgumentId {
    pub fn new(id: impl Into<String>) -> Self {
        ArgumentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ArgumentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ArgumentId {
    fn from(s: &str) -> Self {
        ArgumentId(s.to_owned())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Argument {
    pub id: ArgumentId,
    pub text: String,
    pub base_score: f64,
}

impl Argument {
    pub fn new(id: impl Into<ArgumentId>, text: impl Into<String>, base_score: f64) -> Self {
        Argument { id: id.into(), text: text.into(), base_score }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Attack,
    Support,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarity::Attack => f.write_str("attack"),
            Polarity::Support => f.write_str("support"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relation {
    pub source: ArgumentId,
    pub target: ArgumentId,
    pub polarity: Polarity,
}

/// A framework ⟨arguments, attacks, supports, base scores⟩ with a designated
/// root. Relations are `(source, target)` pairs: `source` attacks or supports
/// `target`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Qbaf {
    pub root: ArgumentId,
    pub arguments: Vec<Argument>,
    #[serde(default)]
    pub attacks: Vec<(ArgumentId, ArgumentId)>,
    #[serde(default)]
    pub supports: Vec<(ArgumentId, ArgumentId)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyArgumentId,
    DuplicateArgument { id: ArgumentId },
    EmptyText { id: ArgumentId },
    BaseScoreOutOfRange { id: ArgumentId, value: String },
    MissingRoot { id: ArgumentId },
    UnknownArgument { id: ArgumentId, source: ArgumentId, target: ArgumentId },
    SelfRelation { id: ArgumentId },
    ConflictingPolarity { source: ArgumentId, target: ArgumentId },
    DuplicateRelation { source: ArgumentId, target: ArgumentId },
    RootHasParent { id: ArgumentId },
    MultipleParents { id: ArgumentId },
    Disconnected { id: ArgumentId },
    Cycle { id: ArgumentId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyArgumentId => write!(f, "empty argument id"),
            Violation::DuplicateArgument { id } => write!(f, "duplicate argument {id}"),
            Violation::EmptyText { id } => write!(f, "argument {id} has empty text"),
            Violation::BaseScoreOutOfRange { id, value } => {
                write!(f, "argument {id} has base score {value} outside [0,1]")
            }
            Violation::MissingRoot { id } => write!(f, "root {id} is not an argument"),
            Violation::UnknownArgument { id, source, target } => {
                write!(f, "relation ({source}, {target}) references unknown argument {id}")
            }
            Violation::SelfRelation { id } => write!(f, "argument {id} relates to itself"),
            Violation::ConflictingPolarity { source, target } => {
                write!(f, "conflicting polarity: ({source}, {target}) is both an attack and a support")
            }
            Violation::DuplicateRelation { source, target } => {
                write!(f, "duplicate relation ({source}, {target})")
            }
            Violation::RootHasParent { id } => write!(f, "root {id} has an outgoing relation"),
            Violation::MultipleParents { id } => {
                write!(f, "argument {id} has more than one outgoing relation")
            }
            Violation::Disconnected { id } => {
                write!(f, "argument {id} has no outgoing relation and is not the root")
            }
            Violation::Cycle { id } => write!(f, "argument {id} lies on a cycle"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("ok");
        }
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QbafError {
    #[error("value {0} is outside [0,1]")]
    Domain(f64),
    #[error("invalid framework: {0}")]
    Structure(ValidationReport),
}

impl Qbaf {
    pub fn root_only(root: Argument) -> Self {
        Qbaf { root: root.id.clone(), arguments: vec![root], attacks: Vec::new(), supports: Vec::new() }
    }

    pub fn argument(&self, id: &ArgumentId) -> Option<&Argument> {
        self.arguments.iter().find(|a| &a.id == id)
    }

    pub fn argument_mut(&mut self, id: &ArgumentId) -> Option<&mut Argument> {
        self.arguments.iter_mut().find(|a| &a.id == id)
    }

    pub fn contains(&self, id: &ArgumentId) -> bool {
        self.argument(id).is_some()
    }

    /// Attacks followed by supports, in stored order.
    pub fn relations(&self) -> impl Iterator<Item = Relation> + '_ {
        let attacks = self.attacks.iter().map(|(s, t)| Relation {
            source: s.clone(),
            target: t.clone(),
            polarity: Polarity::Attack,
        });
        let supports = self.supports.iter().map(|(s, t)| Relation {
            source: s.clone(),
            target: t.clone(),
            polarity: Polarity::Support,
        });
        attacks.chain(supports)
    }

    pub fn add_relation(&mut self, source: ArgumentId, target: ArgumentId, polarity: Polarity) {
        match polarity {
            Polarity::Attack => self.attacks.push((source, target)),
            Polarity::Support => self.supports.push((source, target)),
        }
    }

    /// The argument `id` attacks or supports, with the relation's polarity.
    pub fn parent_of(&self, id: &ArgumentId) -> Option<(&ArgumentId, Polarity)> {
        self.attacks
            .iter()
            .find(|(s, _)| s == id)
            .map(|(_, t)| (t, Polarity::Attack))
            .or_else(|| self.supports.iter().find(|(s, _)| s == id).map(|(_, t)| (t, Polarity::Support)))
    }

    /// Direct attackers and supporters of `id`, attackers first.
    pub fn children_of(&self, id: &ArgumentId) -> Vec<(&ArgumentId, Polarity)> {
        let mut out: Vec<(&ArgumentId, Polarity)> =
            self.attacks.iter().filter(|(_, t)| t == id).map(|(s, _)| (s, Polarity::Attack)).collect();
        out.extend(self.supports.iter().filter(|(_, t)| t == id).map(|(s, _)| (s, Polarity::Support)));
        out
    }

    /// All arguments below `id` in the tree (not including `id`).
    pub fn descendants(&self, id: &ArgumentId) -> BTreeSet<ArgumentId> {
        let mut found = BTreeSet::new();
        let mut stack = vec![id.clone()];
        while let Some(current) = stack.pop() {
            for (child, _) in self.children_of(&current) {
                if found.insert(child.clone()) {
                    stack.push(child.clone());
                }
            }
        }
        found
    }

    /// Pre-order walk from the root (parents before children). Only reaches
    /// arguments connected to the root.
    pub fn preorder(&self) -> Vec<ArgumentId> {
        let mut order = Vec::with_capacity(self.arguments.len());
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.root.clone()];
        while let Some(current) = stack.pop() {
            if !seen.insert(current.clone()) {
                continue;
            }
            let children = self.children_of(&current);
            order.push(current);
            for (child, _) in children.into_iter().rev() {
                stack.push(child.clone());
            }
        }
        order
    }

    /// Length of the longest root-to-leaf path; 0 for a root-only framework.
    pub fn height(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(self.root.clone(), 0usize)];
        let mut seen = BTreeSet::new();
        while let Some((current, depth)) = stack.pop() {
            if !seen.insert(current.clone()) {
                continue;
            }
            best = best.max(depth);
            for (child, _) in self.children_of(&current) {
                stack.push((child.clone(), depth + 1));
            }
        }
        best
    }

    /// Remove `ids` and every relation touching them.
    pub fn remove_arguments(&mut self, ids: &BTreeSet<ArgumentId>) {
        self.arguments.retain(|a| !ids.contains(&a.id));
        self.attacks.retain(|(s, t)| !ids.contains(s) && !ids.contains(t));
        self.supports.retain(|(s, t)| !ids.contains(s) && !ids.contains(t));
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }
}

/// Check every framework invariant and report each violation found.
pub fn validate(qbaf: &Qbaf) -> ValidationReport {
    let mut violations = Vec::new();
    let mut ids = BTreeSet::new();
    for arg in &qbaf.arguments {
        if arg.id.as_str().is_empty() {
            violations.push(Violation::EmptyArgumentId);
        }
        if !ids.insert(arg.id.clone()) {
            violations.push(Violation::DuplicateArgument { id: arg.id.clone() });
        }
        if arg.text.trim().is_empty() {
            violations.push(Violation::EmptyText { id: arg.id.clone() });
        }
        if !(0.0..=1.0).contains(&arg.base_score) {
            violations.push(Violation::BaseScoreOutOfRange { id: arg.id.clone(), value: arg.base_score.to_string() });
        }
    }
    if !ids.contains(&qbaf.root) {
        violations.push(Violation::MissingRoot { id: qbaf.root.clone() });
    }

    let attack_set: BTreeSet<_> = qbaf.attacks.iter().cloned().collect();
    let mut seen_pairs = BTreeSet::new();
    let mut parents: BTreeMap<ArgumentId, Vec<ArgumentId>> = BTreeMap::new();
    for rel in qbaf.relations() {
        let pair = (rel.source.clone(), rel.target.clone());
        for end in [&rel.source, &rel.target] {
            if !ids.contains(end) {
                violations.push(Violation::UnknownArgument {
                    id: end.clone(),
                    source: rel.source.clone(),
                    target: rel.target.clone(),
                });
            }
        }
        if rel.source == rel.target {
            violations.push(Violation::SelfRelation { id: rel.source.clone() });
        }
        if rel.polarity == Polarity::Support && attack_set.contains(&pair) {
            violations.push(Violation::ConflictingPolarity { source: pair.0.clone(), target: pair.1.clone() });
        } else if !seen_pairs.insert((pair.clone(), rel.polarity)) {
            violations.push(Violation::DuplicateRelation { source: pair.0.clone(), target: pair.1.clone() });
        }
        parents.entry(rel.source.clone()).or_default().push(rel.target.clone());
    }

    for id in &ids {
        let outgoing = parents.get(id).map_or(0, Vec::len);
        if id == &qbaf.root {
            if outgoing > 0 {
                violations.push(Violation::RootHasParent { id: id.clone() });
            }
        } else if outgoing == 0 {
            violations.push(Violation::Disconnected { id: id.clone() });
        } else if outgoing > 1
            && !violations.iter().any(|v| matches!(v, Violation::ConflictingPolarity { source, .. } if source == id))
        {
            violations.push(Violation::MultipleParents { id: id.clone() });
        }
    }

    // Follow parent pointers; anything that cannot reach the root lies on a cycle.
    for id in &ids {
        if id == &qbaf.root || parents.get(id).map_or(0, Vec::len) != 1 {
            continue;
        }
        let mut visited = BTreeSet::new();
        let mut current = id.clone();
        loop {
            if current == qbaf.root {
                break;
            }
            if !visited.insert(current.clone()) {
                violations.push(Violation::Cycle { id: id.clone() });
                break;
            }
            match parents.get(&current) {
                Some(next) if next.len() == 1 => current = next[0].clone(),
                _ => break,
            }
        }
    }
    ValidationReport { violations }
}

fn check_unit(v: f64) -> Result<f64, QbafError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(QbafError::Domain(v))
    }
}

/// DF-QuAD aggregation: 0 for no inputs, otherwise 1 − ∏(1 − vᵢ).
pub fn df_quad_aggregate(strengths: &[f64]) -> Result<f64, QbafError> {
    if strengths.is_empty() {
        return Ok(0.0);
    }
    let mut product = 1.0;
    for &v in strengths {
        product *= (1.0 - check_unit(v)?).abs();
    }
    Ok(1.0 - product)
}

/// DF-QuAD combination of a base score with aggregated attack and support.
pub fn df_quad_combine(base: f64, attack: f64, support: f64) -> Result<f64, QbafError> {
    let (base, attack, support) = (check_unit(base)?, check_unit(attack)?, check_unit(support)?);
    let diff = (support - attack).abs();
    Ok(if attack == support {
        base
    } else if attack > support {
        base - base * diff
    } else {
        base + (1.0 - base) * diff
    })
}

/// Final strength σ(α) for every argument of a framework.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrengthMap(BTreeMap<ArgumentId, f64>);

impl StrengthMap {
    pub fn get(&self, id: &ArgumentId) -> Option<f64> {
        self.0.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ArgumentId, f64)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Gradual semantics available to [`evaluate_with`]. Only DF-QuAD ships.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Semantics {
    #[default]
    DfQuad,
}

impl Semantics {
    fn aggregate(self, strengths: &[f64]) -> Result<f64, QbafError> {
        match self {
            Semantics::DfQuad => df_quad_aggregate(strengths),
        }
    }

    fn combine(self, base: f64, attack: f64, support: f64) -> Result<f64, QbafError> {
        match self {
            Semantics::DfQuad => df_quad_combine(base, attack, support),
        }
    }
}

pub fn evaluate(qbaf: &Qbaf) -> Result<StrengthMap, QbafError> {
    evaluate_with(qbaf, Semantics::DfQuad)
}

/// Bottom-up evaluation: children are always finished before their parent.
pub fn evaluate_with(qbaf: &Qbaf, semantics: Semantics) -> Result<StrengthMap, QbafError> {
    let report = validate(qbaf);
    if !report.is_ok() {
        return Err(QbafError::Structure(report));
    }
    let index: HashMap<&ArgumentId, usize> = qbaf.arguments.iter().enumerate().map(|(i, a)| (&a.id, i)).collect();
    let n = qbaf.arguments.len();
    let mut attackers: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut supporters: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (s, t) in &qbaf.attacks {
        attackers[index[t]].push(index[s]);
    }
    for (s, t) in &qbaf.supports {
        supporters[index[t]].push(index[s]);
    }

    let mut strength: Vec<Option<f64>> = vec![None; n];
    let mut stack = vec![(index[&qbaf.root], false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            let att: Vec<f64> = attackers[node].iter().map(|&c| strength[c].expect("child evaluated")).collect();
            let sup: Vec<f64> = supporters[node].iter().map(|&c| strength[c].expect("child evaluated")).collect();
            let va = semantics.aggregate(&att)?;
            let vs = semantics.aggregate(&sup)?;
            strength[node] = Some(semantics.combine(qbaf.arguments[node].base_score, va, vs)?);
        } else {
            stack.push((node, true));
            for &child in attackers[node].iter().chain(&supporters[node]) {
                stack.push((child, false));
            }
        }
    }

    let map = qbaf
        .arguments
        .iter()
        .zip(strength)
        .map(|(a, s)| (a.id.clone(), s.expect("validated tree reaches every argument")))
        .collect();
    Ok(StrengthMap(map))
}

pub fn root_strength(qbaf: &Qbaf) -> Result<f64, QbafError> {
    root_strength_with(qbaf, Semantics::DfQuad)
}

pub fn root_strength_with(qbaf: &Qbaf, semantics: Semantics) -> Result<f64, QbafError> {
    let strengths = evaluate_with(qbaf, semantics)?;
    Ok(strengths.get(&qbaf.root).expect("root is validated"))
}
