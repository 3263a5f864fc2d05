//! Linearized proof format.
//!
//! A proof is a sequence of steps such as
//! `sent1 & sent2 -> int1: some conclusion; int1 & sent3 -> hypothesis;`.
//! Leaves are `sent<k>` identifiers into the context, generated conclusions
//! are `int<k>`, and the root is `hypothesis`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown premise `{0}`")]
    UnknownPremise(NodeId),
    #[error("`{0}` is concluded more than once")]
    DuplicateConclusion(NodeId),
    #[error("proof has no steps")]
    EmptyProof,
}

/// Identifier of a node in a linearized proof.
///
/// The derived ordering puts every `Sent` before every `Int`, each ascending
/// by index, which is the canonical premise order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Sent(u32),
    Int(u32),
    Hypothesis,
}

impl NodeId {
    pub fn is_sent(&self) -> bool {
        matches!(self, NodeId::Sent(_))
    }

    pub fn is_int(&self) -> bool {
        matches!(self, NodeId::Int(_))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Sent(k) => write!(f, "sent{k}"),
            NodeId::Int(k) => write!(f, "int{k}"),
            NodeId::Hypothesis => f.write_str("hypothesis"),
        }
    }
}

impl FromStr for NodeId {
    type Err = DslError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "hypothesis" {
            return Ok(NodeId::Hypothesis);
        }
        let (ctor, digits): (fn(u32) -> NodeId, &str) = if let Some(rest) = s.strip_prefix("sent") {
            (NodeId::Sent, rest)
        } else if let Some(rest) = s.strip_prefix("int") {
            (NodeId::Int, rest)
        } else {
            return Err(DslError::Syntax(format!("bad identifier `{s}`")));
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(DslError::Syntax(format!("bad identifier `{s}`")));
        }
        match digits.parse::<u32>() {
            Ok(k) if k >= 1 => Ok(ctor(k)),
            _ => Err(DslError::Syntax(format!("bad index in `{s}`"))),
        }
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One step of a linearized proof.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepText {
    pub premises: Vec<NodeId>,
    pub conclusion: NodeId,
    /// Sentence of an `int` conclusion; always `None` for the hypothesis.
    #[serde(rename = "text")]
    pub conclusion_text: Option<String>,
}

impl StepText {
    pub fn new(premises: Vec<NodeId>, conclusion: NodeId, conclusion_text: Option<String>) -> Self {
        Self { premises, conclusion, conclusion_text }
    }

    /// Checks the shape invariants that do not depend on context.
    fn check_shape(&self) -> Result<(), DslError> {
        if self.premises.is_empty() {
            return Err(DslError::Syntax("step without premises".into()));
        }
        let mut seen = HashSet::new();
        for p in &self.premises {
            if *p == NodeId::Hypothesis {
                return Err(DslError::Syntax("hypothesis used as premise".into()));
            }
            if !seen.insert(*p) {
                return Err(DslError::Syntax(format!("duplicate premise `{p}`")));
            }
        }
        match (self.conclusion, &self.conclusion_text) {
            (NodeId::Sent(_), _) => Err(DslError::Syntax(format!(
                "`{}` cannot be a conclusion",
                self.conclusion
            ))),
            (NodeId::Int(_), None) => Err(DslError::Syntax(format!(
                "`{}` needs a conclusion sentence",
                self.conclusion
            ))),
            (NodeId::Int(_), Some(t)) if t.trim().is_empty() => Err(DslError::Syntax(format!(
                "`{}` has an empty conclusion sentence",
                self.conclusion
            ))),
            (NodeId::Hypothesis, Some(_)) => {
                Err(DslError::Syntax("hypothesis conclusion carries no sentence".into()))
            }
            _ => Ok(()),
        }
    }

    fn render_into(&self, out: &mut String) {
        let mut premises = self.premises.clone();
        premises.sort();
        for (i, p) in premises.iter().enumerate() {
            if i > 0 {
                out.push_str(" & ");
            }
            out.push_str(&p.to_string());
        }
        out.push_str(" -> ");
        out.push_str(&self.conclusion.to_string());
        if let Some(text) = &self.conclusion_text {
            out.push_str(": ");
            // `;` terminates steps and cannot appear inside a sentence.
            out.push_str(&text.trim().replace(';', ","));
        }
        out.push(';');
    }
}

impl fmt::Display for StepText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.render_into(&mut s);
        f.write_str(&s)
    }
}

/// An ordered list of proof steps in post-order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearProof {
    pub steps: Vec<StepText>,
}

impl LinearProof {
    pub fn new(steps: Vec<StepText>) -> Self {
        Self { steps }
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    /// Checks post-order and single-conclusion invariants against a context
    /// of `context_size` sentences. An empty proof is accepted here.
    pub fn check(&self, context_size: usize) -> Result<(), DslError> {
        let mut defined: HashSet<NodeId> = HashSet::new();
        for step in &self.steps {
            step.check_shape()?;
            for p in &step.premises {
                match p {
                    NodeId::Sent(k) if (*k as usize) <= context_size => {}
                    NodeId::Int(_) if defined.contains(p) => {}
                    _ => return Err(DslError::UnknownPremise(*p)),
                }
            }
            if !defined.insert(step.conclusion) {
                return Err(DslError::DuplicateConclusion(step.conclusion));
            }
        }
        Ok(())
    }

    /// Sorted premises and `int` indices relabeled `1..k` in step order.
    pub fn canonical(&self) -> LinearProof {
        let mut relabel: HashMap<u32, u32> = HashMap::new();
        for step in &self.steps {
            if let NodeId::Int(k) = step.conclusion {
                let next = relabel.len() as u32 + 1;
                relabel.entry(k).or_insert(next);
            }
        }
        let map = |id: NodeId| match id {
            NodeId::Int(k) => NodeId::Int(*relabel.get(&k).unwrap_or(&k)),
            other => other,
        };
        let steps = self
            .steps
            .iter()
            .map(|s| {
                let mut premises: Vec<NodeId> = s.premises.iter().copied().map(map).collect();
                premises.sort();
                StepText {
                    premises,
                    conclusion: map(s.conclusion),
                    conclusion_text: s.conclusion_text.as_ref().map(|t| t.trim().to_string()),
                }
            })
            .collect();
        LinearProof { steps }
    }

    /// Renders the steps as they are, without relabeling. An empty proof
    /// renders as the empty string.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, step) in self.steps.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            step.render_into(&mut out);
        }
        out
    }

    /// Sentence of each `int` concluded in this proof.
    pub fn intermediate_texts(&self) -> HashMap<NodeId, &str> {
        self.steps
            .iter()
            .filter_map(|s| match (&s.conclusion, &s.conclusion_text) {
                (id @ NodeId::Int(_), Some(t)) => Some((*id, t.as_str())),
                _ => None,
            })
            .collect()
    }
}

impl fmt::Display for LinearProof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Parses one step without checking it against any context. A trailing `;`
/// is optional.
pub fn parse_step(text: &str) -> Result<StepText, DslError> {
    let body = text.trim();
    let body = body.strip_suffix(';').unwrap_or(body);
    if body.contains(';') {
        return Err(DslError::Syntax("more than one step".into()));
    }
    let (lhs, rhs) = body
        .split_once("->")
        .ok_or_else(|| DslError::Syntax(format!("missing `->` in `{body}`")))?;
    let premises = lhs
        .split('&')
        .map(str::parse::<NodeId>)
        .collect::<Result<Vec<_>, _>>()?;
    let (id, text) = match rhs.split_once(':') {
        Some((id, text)) => (id, Some(text.trim().to_string())),
        None => (rhs, None),
    };
    let step = StepText { premises, conclusion: id.parse()?, conclusion_text: text };
    step.check_shape()?;
    Ok(step)
}

/// Parses a full proof and checks it against a context of `context_size`
/// sentences. Whitespace is insignificant around tokens.
pub fn parse_proof(text: &str, context_size: usize) -> Result<LinearProof, DslError> {
    let steps = text
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_step)
        .collect::<Result<Vec<_>, _>>()?;
    if steps.is_empty() {
        return Err(DslError::EmptyProof);
    }
    let proof = LinearProof { steps };
    proof.check(context_size)?;
    Ok(proof)
}

/// Canonical text form: premises sorted, `int`s numbered in step order.
pub fn serialize_proof(proof: &LinearProof) -> Result<String, DslError> {
    if proof.is_empty() {
        return Err(DslError::EmptyProof);
    }
    Ok(proof.canonical().render())
}

/// True iff `step` is executable given the `available` identifiers.
pub fn validate_step(step: &StepText, available: &HashSet<NodeId>) -> bool {
    if step.check_shape().is_err() {
        return false;
    }
    if step.premises.contains(&step.conclusion) {
        return false;
    }
    if !step.premises.iter().all(|p| available.contains(p)) {
        return false;
    }
    match step.conclusion {
        NodeId::Int(_) => !available.contains(&step.conclusion),
        NodeId::Hypothesis => true,
        NodeId::Sent(_) => false,
    }
}

/// Identity key for sentences: trimmed, whitespace collapsed, lowercased,
/// one trailing period removed.
pub fn normalize_sentence(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    match collapsed.strip_suffix('.') {
        Some(rest) => rest.trim_end().to_string(),
        None => collapsed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[NodeId]) -> HashSet<NodeId> {
        v.iter().copied().collect()
    }

    #[test]
    fn minimal_proof() {
        let p = parse_proof("sent1 & sent2 -> hypothesis;", 2).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.steps[0].premises, vec![NodeId::Sent(1), NodeId::Sent(2)]);
        assert_eq!(p.steps[0].conclusion, NodeId::Hypothesis);
    }

    #[test]
    fn three_step_round_trip() {
        let text = "sent2 & sent4 -> int1: solar is a kind of renewable energy; \
                    int1 & sent3 -> int2: solar can be used for heating; \
                    int2 & sent1 -> hypothesis;";
        let p = parse_proof(text, 4).unwrap();
        assert_eq!(p.len(), 3);
        let s = serialize_proof(&p).unwrap();
        assert_eq!(parse_proof(&s, 4).unwrap(), p.canonical());
        assert!(s.starts_with("sent2 & sent4 -> int1: solar is"));
        assert!(s.contains("sent3 & int1 -> int2:"));
    }

    #[test]
    fn undefined_int_premise() {
        let err = parse_proof("sent1 -> int1: x; int1 & int2 -> hypothesis;", 1).unwrap_err();
        assert_eq!(err, DslError::UnknownPremise(NodeId::Int(2)));
    }

    #[test]
    fn sent_out_of_range() {
        let err = parse_proof("sent3 -> hypothesis;", 2).unwrap_err();
        assert_eq!(err, DslError::UnknownPremise(NodeId::Sent(3)));
    }

    #[test]
    fn duplicate_conclusion() {
        let err = parse_proof("sent1 -> hypothesis; sent2 -> hypothesis;", 2).unwrap_err();
        assert_eq!(err, DslError::DuplicateConclusion(NodeId::Hypothesis));
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(parse_proof("", 3).unwrap_err(), DslError::EmptyProof);
        assert_eq!(parse_proof("  ;  ; ", 3).unwrap_err(), DslError::EmptyProof);
        assert_eq!(serialize_proof(&LinearProof::default()).unwrap_err(), DslError::EmptyProof);
    }

    #[test]
    fn syntax_errors() {
        for bad in [
            "sent1 sent2 -> hypothesis;",
            "sent1 -> int1;",
            "sent0 -> hypothesis;",
            "sent1 & sent1 -> hypothesis;",
            "sent1 -> sent2;",
            "sent1 -> hypothesis: text;",
            "sent1 & -> hypothesis;",
            "sentx -> hypothesis;",
            "hypothesis -> int1: a;",
            "sent99999999999 -> hypothesis;",
        ] {
            assert!(matches!(parse_proof(bad, 5), Err(DslError::Syntax(_))), "{bad}");
        }
    }

    #[test]
    fn whitespace_tolerant() {
        let p = parse_proof("  sent2&sent1->int1 :  a b  ;int1->hypothesis", 2).unwrap();
        assert_eq!(p.steps[0].conclusion_text.as_deref(), Some("a b"));
        assert_eq!(serialize_proof(&p).unwrap(), "sent1 & sent2 -> int1: a b; int1 -> hypothesis;");
    }

    #[test]
    fn serialization_sorts_premises() {
        let p = LinearProof::new(vec![StepText::new(
            vec![NodeId::Sent(2), NodeId::Sent(1)],
            NodeId::Hypothesis,
            None,
        )]);
        assert_eq!(serialize_proof(&p).unwrap(), "sent1 & sent2 -> hypothesis;");
    }

    #[test]
    fn canonical_relabels_ints() {
        let p = parse_proof("sent1 -> int3: a; int3 & sent2 -> int1: b; int1 -> hypothesis;", 2)
            .unwrap();
        assert_eq!(
            serialize_proof(&p).unwrap(),
            "sent1 -> int1: a; sent2 & int1 -> int2: b; int2 -> hypothesis;"
        );
    }

    #[test]
    fn single_premise_steps_accepted() {
        assert!(parse_proof("sent4 -> hypothesis;", 4).is_ok());
    }

    #[test]
    fn validate_step_cases() {
        let ok = parse_step("sent1 & sent2 -> int1: x").unwrap();
        assert!(validate_step(&ok, &ids(&[NodeId::Sent(1), NodeId::Sent(2)])));

        let missing = parse_step("sent1 & int2 -> hypothesis").unwrap();
        assert!(!validate_step(&missing, &ids(&[NodeId::Sent(1)])));

        let to_sent = StepText::new(vec![NodeId::Sent(1)], NodeId::Sent(2), None);
        assert!(!validate_step(&to_sent, &ids(&[NodeId::Sent(1), NodeId::Sent(2)])));

        let reused = parse_step("sent1 -> int1: x").unwrap();
        assert!(!validate_step(&reused, &ids(&[NodeId::Sent(1), NodeId::Int(1)])));

        let self_loop = StepText::new(vec![NodeId::Int(1)], NodeId::Int(1), Some("x".into()));
        assert!(!validate_step(&self_loop, &ids(&[NodeId::Int(1)])));
    }

    #[test]
    fn json_form() {
        let p = parse_proof("sent1 -> int1: a; int1 -> hypothesis;", 1).unwrap();
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"steps": [
                {"premises": ["sent1"], "conclusion": "int1", "text": "a"},
                {"premises": ["int1"], "conclusion": "hypothesis", "text": null},
            ]})
        );
        let back: LinearProof = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn sentence_normalization() {
        assert_eq!(normalize_sentence("  The  Cat\tis nice. "), "the cat is nice");
        assert_eq!(normalize_sentence("a.."), "a.");
        assert_eq!(normalize_sentence("x"), "x");
    }
}
