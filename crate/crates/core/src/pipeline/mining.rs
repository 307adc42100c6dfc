//! Bipolar argumentation framework mining.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::debug;

use super::{MiningConfig, PipelineError, ROOT_ID};
use crate::llm::{GenerationRequest, Generator, LlmError, Stage};
use crate::ontology::{name_key, Chunk, Entity};
use crate::qbaf::{Argument, ArgumentId, Polarity, Qbaf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonNode {
    pub id: ArgumentId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<(ArgumentId, Polarity)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nl_condition: Option<String>,
    pub depth: u32,
}

/// A mined framework without base scores. Nodes are in breadth-first order,
/// root first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BafSkeleton {
    pub nodes: Vec<SkeletonNode>,
}

impl BafSkeleton {
    pub fn root(&self) -> &SkeletonNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: &ArgumentId) -> Option<&SkeletonNode> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    pub fn nl_conditions(&self) -> BTreeMap<ArgumentId, String> {
        self.nodes.iter().filter_map(|n| Some((n.id.clone(), n.nl_condition.clone()?))).collect()
    }

    /// Attach base scores. Arguments without a score get 0.5.
    pub fn to_qbaf(&self, base_scores: &BTreeMap<ArgumentId, f64>) -> Qbaf {
        let mut qbaf =
            Qbaf { root: self.root().id.clone(), arguments: Vec::new(), attacks: Vec::new(), supports: Vec::new() };
        for n in &self.nodes {
            let score = base_scores.get(&n.id).copied().unwrap_or(0.5);
            qbaf.arguments.push(Argument::new(n.id.clone(), n.text.clone(), score));
            if let Some((parent, polarity)) = &n.parent {
                qbaf.add_relation(n.id.clone(), parent.clone(), *polarity);
            }
        }
        qbaf
    }
}

pub fn root_text(entity: &Entity) -> String {
    format!("{} is recommended for the considered case.", entity.name)
}

pub(super) fn render_sources(chunks: &[&Chunk]) -> String {
    chunks.iter().map(|c| format!("[{} #{}]\n{}", c.doc_id, c.ordinal, c.text)).collect::<Vec<_>>().join("\n\n")
}

const MINE_SYSTEM: &str = "You mine arguments about a decision option from policy documents. \
For the argument under consideration, list the arguments from the source text that directly support it \
and those that directly attack it. Each argument is one self-contained statement and comes with the \
condition on the case under which it applies, stated in plain language. Reply with JSON only.";

#[derive(Deserialize)]
struct MinedReply {
    supporters: Vec<MinedArgument>,
    attackers: Vec<MinedArgument>,
}

#[derive(Clone, Deserialize)]
struct MinedArgument {
    argument: String,
    condition: String,
}

fn reply_schema() -> Value {
    let item = json!({
        "type": "object",
        "properties": {
            "argument": {"type": "string", "minLength": 1},
            "condition": {"type": "string", "minLength": 1}
        },
        "required": ["argument", "condition"]
    });
    json!({
        "type": "object",
        "properties": {
            "supporters": {"type": "array", "items": item},
            "attackers": {"type": "array", "items": item}
        },
        "required": ["supporters", "attackers"]
    })
}

/// Structural problems with a reply. These are protocol violations rather
/// than malformed JSON.
fn reply_problems(reply: &MinedReply) -> Vec<String> {
    let mut out = Vec::new();
    let mut seen: BTreeMap<String, Polarity> = BTreeMap::new();
    let all = reply
        .supporters
        .iter()
        .map(|a| (a, Polarity::Support))
        .chain(reply.attackers.iter().map(|a| (a, Polarity::Attack)));
    for (arg, polarity) in all {
        if arg.argument.trim().is_empty() || arg.condition.trim().is_empty() {
            out.push("argument and condition texts must be non-empty".to_owned());
            continue;
        }
        match seen.insert(name_key(&arg.argument), polarity) {
            Some(prev) if prev != polarity => {
                out.push(format!("argument {:?} is listed both as supporter and as attacker", arg.argument))
            }
            Some(_) => out.push(format!("argument {:?} is listed twice", arg.argument)),
            None => {}
        }
    }
    out
}

fn mining_prompt(
    entity: &Entity,
    sources: &str,
    node: &SkeletonNode,
    path: &[&str],
    config: &MiningConfig,
) -> GenerationRequest {
    let mut user = format!("Decision option: {}\n", entity.name);
    if let Some(d) = &entity.description {
        user.push_str(&format!("Option description: {d}\n"));
    }
    if path.len() > 1 {
        user.push_str("Chain of arguments from the option down to the argument under consideration:\n");
        for (i, p) in path.iter().enumerate() {
            user.push_str(&format!("{}. {p}\n", i + 1));
        }
    }
    user.push_str(&format!("Argument under consideration: {}\n\nSource text:\n{sources}\n\n", node.text));
    if let Some(scheme) = &config.scheme {
        user.push_str(&format!("Generate arguments according to this argument scheme:\n{}\n", scheme.render()));
    }
    user.push_str(
        "Reply as {\"supporters\": [{\"argument\": ..., \"condition\": ...}], \"attackers\": [...]}. \
         Use empty lists when the text gives no such arguments.",
    );
    GenerationRequest::new(MINE_SYSTEM, user).with_schema(reply_schema())
}

/// Mine a framework for `entity` down to `config.depth`, one model call per
/// argument above the depth limit.
pub fn mine_baf(
    generator: &Generator,
    entity: &Entity,
    chunks: &[&Chunk],
    config: &MiningConfig,
) -> Result<BafSkeleton, PipelineError> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(PipelineError::Invalid(problems.join("; ")));
    }
    if chunks.is_empty() {
        return Err(PipelineError::NoChunks { option: entity.id.clone() });
    }
    if entity.name.trim().is_empty() {
        return Err(PipelineError::Protocol { context: format!("mining {}", entity.id), reason: "empty root".into() });
    }
    let generator = generator.with_max_attempts(config.max_attempts);
    let sources = render_sources(chunks);
    let mut nodes = vec![SkeletonNode {
        id: ArgumentId::new(ROOT_ID),
        text: root_text(entity),
        parent: None,
        nl_condition: None,
        depth: 0,
    }];
    let mut queue = VecDeque::from([0usize]);
    while let Some(index) = queue.pop_front() {
        let node = nodes[index].clone();
        if node.depth >= config.depth {
            continue;
        }
        let path = ancestry(&nodes, index);
        let request = mining_prompt(entity, &sources, &node, &path, config);
        let mut protocol_failure = None;
        let reply = generator.generate_with(Stage::QbafConstruction, &request, |_, json| {
            protocol_failure = None;
            let reply: MinedReply =
                serde_json::from_value(json.cloned().unwrap_or(Value::Null)).map_err(|e| e.to_string())?;
            let problems = reply_problems(&reply);
            if problems.is_empty() {
                Ok(reply)
            } else {
                let reason = problems.join("; ");
                protocol_failure = Some(reason.clone());
                Err(reason)
            }
        });
        let reply = match reply {
            Ok(r) => r,
            Err(LlmError::Exhausted { .. }) if protocol_failure.is_some() => {
                return Err(PipelineError::Protocol {
                    context: format!("mining {} at {}", entity.id, node.id),
                    reason: protocol_failure.unwrap_or_default(),
                })
            }
            Err(source) => return Err(PipelineError::Mining { option: entity.id.clone(), source }),
        };
        let cap = config.max_breadth.unwrap_or(usize::MAX);
        let children = reply
            .supporters
            .iter()
            .take(cap)
            .enumerate()
            .map(|(i, a)| (format!("{}.s{}", node.id, i + 1), a, Polarity::Support))
            .chain(
                reply
                    .attackers
                    .iter()
                    .take(cap)
                    .enumerate()
                    .map(|(i, a)| (format!("{}.a{}", node.id, i + 1), a, Polarity::Attack)),
            );
        for (id, arg, polarity) in children {
            nodes.push(SkeletonNode {
                id: ArgumentId::new(id),
                text: arg.argument.trim().to_owned(),
                parent: Some((node.id.clone(), polarity)),
                nl_condition: Some(arg.condition.trim().to_owned()),
                depth: node.depth + 1,
            });
            queue.push_back(nodes.len() - 1);
        }
    }
    debug!(option = %entity.id, arguments = nodes.len(), "mined framework");
    let ids: BTreeSet<&ArgumentId> = nodes.iter().map(|n| &n.id).collect();
    debug_assert_eq!(ids.len(), nodes.len());
    Ok(BafSkeleton { nodes })
}

fn ancestry(nodes: &[SkeletonNode], index: usize) -> Vec<&str> {
    let mut path = vec![nodes[index].text.as_str()];
    let mut current = &nodes[index];
    while let Some((parent, _)) = &current.parent {
        current = nodes.iter().find(|n| &n.id == parent).expect("parent precedes child");
        path.push(current.text.as_str());
    }
    path.reverse();
    path
}
