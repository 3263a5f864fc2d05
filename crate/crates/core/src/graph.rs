//! Scored proof graph.
//!
//! Sentence nodes are the context facts, generated intermediates and the
//! hypothesis. Each non-fact node has at most one inbound step; its score is
//! the minimum of that step's score and its premises' scores, facts score
//! 1.0 and nodes without an inbound step score 0.0. Executing a step either
//! does nothing, creates a node, or replaces a node's inbound step with a
//! better one and pushes the gain through every successor.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{normalize_sentence, LinearProof, NodeId, StepText};
use crate::tree::ProofTree;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("score {0} is outside [0, 1]")]
    Domain(f64),
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("the hypothesis has no proof")]
    NoProof,
}

/// Combined score of a node concluded by a step.
pub fn node_score(step_score: f64, child_scores: &[f64]) -> Result<f64, GraphError> {
    if child_scores.is_empty() {
        return Err(GraphError::InvalidStep("step without premises".into()));
    }
    let mut best = check_unit(step_score)?;
    for &c in child_scores {
        best = best.min(check_unit(c)?);
    }
    Ok(best)
}

fn check_unit(x: f64) -> Result<f64, GraphError> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(GraphError::Domain(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    /// Context sentence, 1-based.
    Fact(u32),
    Intermediate,
    Hypothesis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepNode {
    pub premises: Vec<NodeRef>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub kind: NodeKind,
    pub sentence: String,
    pub score: f64,
    pub inbound: Option<StepNode>,
}

/// Where a step's conclusion goes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Hypothesis,
    /// Looked up by normalized sentence; created when absent.
    Sentence(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecutionOutcome {
    NoOp,
    Created(NodeRef),
    Improved(NodeRef),
}

impl ExecutionOutcome {
    pub fn changed(&self) -> bool {
        !matches!(self, ExecutionOutcome::NoOp)
    }

    pub fn label(&self) -> &'static str {
        match self {
            ExecutionOutcome::NoOp => "noop",
            ExecutionOutcome::Created(_) => "created",
            ExecutionOutcome::Improved(_) => "improved",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fingerprint(pub Vec<String>);

/// A predecessor-closed set of intermediates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialProof {
    pub included: BTreeSet<NodeRef>,
    pub fingerprint: Fingerprint,
}

/// A partial proof rendered for a prover, with `int<k>` resolving to
/// `int_refs[k - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialView {
    pub proof: LinearProof,
    pub int_refs: Vec<NodeRef>,
}

impl PartialView {
    pub fn available(&self, context_size: usize) -> HashSet<NodeId> {
        (1..=context_size as u32)
            .map(NodeId::Sent)
            .chain((1..=self.int_refs.len() as u32).map(NodeId::Int))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphDump {
    pub nodes: Vec<DumpNode>,
    pub steps: Vec<DumpStep>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DumpNode {
    pub id: String,
    pub sentence: String,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DumpStep {
    pub premises: Vec<String>,
    pub conclusion: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProofGraph {
    nodes: Vec<GraphNode>,
    keys: HashMap<String, NodeRef>,
    hypothesis: NodeRef,
    num_facts: usize,
    cycle_rejections: usize,
}

impl ProofGraph {
    /// Graph holding only the context and the hypothesis.
    ///
    /// A hypothesis that is itself a context sentence is concluded from that
    /// sentence by a step of score 1.0.
    pub fn new(hypothesis: &str, context: &[String]) -> Self {
        let mut nodes = Vec::with_capacity(context.len() + 1);
        let mut keys = HashMap::new();
        for (i, s) in context.iter().enumerate() {
            let r = NodeRef(nodes.len());
            nodes.push(GraphNode {
                kind: NodeKind::Fact(i as u32 + 1),
                sentence: s.clone(),
                score: 1.0,
                inbound: None,
            });
            keys.entry(normalize_sentence(s)).or_insert(r);
        }
        let h = NodeRef(nodes.len());
        let given = keys.get(&normalize_sentence(hypothesis)).copied();
        nodes.push(GraphNode {
            kind: NodeKind::Hypothesis,
            sentence: hypothesis.to_string(),
            score: if given.is_some() { 1.0 } else { 0.0 },
            inbound: given.map(|f| StepNode { premises: vec![f], score: 1.0 }),
        });
        if given.is_none() {
            keys.insert(normalize_sentence(hypothesis), h);
        }
        Self { nodes, keys, hypothesis: h, num_facts: context.len(), cycle_rejections: 0 }
    }

    pub fn hypothesis(&self) -> NodeRef {
        self.hypothesis
    }

    pub fn hypothesis_score(&self) -> f64 {
        self.nodes[self.hypothesis.0].score
    }

    pub fn node(&self, r: NodeRef) -> &GraphNode {
        &self.nodes[r.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeRef, &GraphNode)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeRef(i), n))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_facts(&self) -> usize {
        self.num_facts
    }

    pub fn fact(&self, k: u32) -> Option<NodeRef> {
        (k >= 1 && (k as usize) <= self.num_facts).then(|| NodeRef(k as usize - 1))
    }

    pub fn intermediates(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.nodes()
            .filter(|(_, n)| n.kind == NodeKind::Intermediate)
            .map(|(r, _)| r)
    }

    pub fn lookup(&self, sentence: &str) -> Option<NodeRef> {
        self.keys.get(&normalize_sentence(sentence)).copied()
    }

    /// Steps rejected by the cycle guard; stays 0 while scores obey the
    /// min-aggregation.
    pub fn cycle_rejections(&self) -> usize {
        self.cycle_rejections
    }

    /// Executes a step given as a premise list and a conclusion target.
    pub fn execute(
        &mut self,
        premises: &[NodeRef],
        target: &Target,
        step_score: f64,
    ) -> Result<ExecutionOutcome, GraphError> {
        check_unit(step_score)?;
        if premises.is_empty() {
            return Err(GraphError::InvalidStep("step without premises".into()));
        }
        let mut premises = premises.to_vec();
        premises.sort();
        premises.dedup();
        for p in &premises {
            match self.nodes.get(p.0) {
                None => return Err(GraphError::InvalidStep(format!("unknown node {}", p.0))),
                Some(n) if n.kind == NodeKind::Hypothesis => {
                    return Err(GraphError::InvalidStep("hypothesis used as premise".into()))
                }
                Some(_) => {}
            }
        }
        let existing = match target {
            Target::Hypothesis => Some(self.hypothesis),
            Target::Sentence(s) => {
                let key = normalize_sentence(s);
                if key.is_empty() {
                    return Err(GraphError::InvalidStep("empty conclusion".into()));
                }
                self.keys.get(&key).copied()
            }
        };
        if let Some(u) = existing {
            if let NodeKind::Fact(_) = self.nodes[u.0].kind {
                return Err(GraphError::InvalidStep("conclusion is a context sentence".into()));
            }
        }
        let child_scores: Vec<f64> = premises.iter().map(|p| self.nodes[p.0].score).collect();
        let tentative = node_score(step_score, &child_scores)?;

        match existing {
            Some(u) => {
                if self.nodes[u.0].score >= tentative {
                    return Ok(ExecutionOutcome::NoOp);
                }
                if premises.iter().any(|&p| p == u || self.is_predecessor(u, p)) {
                    self.cycle_rejections += 1;
                    return Ok(ExecutionOutcome::NoOp);
                }
                let node = &mut self.nodes[u.0];
                node.inbound = Some(StepNode { premises, score: step_score });
                node.score = tentative;
                self.propagate_from(u);
                Ok(ExecutionOutcome::Improved(u))
            }
            None => {
                // An absent node behaves as a node of score 0.
                if tentative <= 0.0 {
                    return Ok(ExecutionOutcome::NoOp);
                }
                let Target::Sentence(sentence) = target else { unreachable!() };
                let r = NodeRef(self.nodes.len());
                self.nodes.push(GraphNode {
                    kind: NodeKind::Intermediate,
                    sentence: sentence.trim().to_string(),
                    score: tentative,
                    inbound: Some(StepNode { premises, score: step_score }),
                });
                self.keys.insert(normalize_sentence(sentence), r);
                Ok(ExecutionOutcome::Created(r))
            }
        }
    }

    /// Executes a DSL step whose identifiers refer to `view`.
    pub fn execute_text(
        &mut self,
        step: &StepText,
        view: &PartialView,
        step_score: f64,
    ) -> Result<ExecutionOutcome, GraphError> {
        let premises = self.resolve_premises(step, view)?;
        let target = match (step.conclusion, &step.conclusion_text) {
            (NodeId::Hypothesis, _) => Target::Hypothesis,
            (NodeId::Int(_), Some(t)) => Target::Sentence(t.clone()),
            _ => return Err(GraphError::InvalidStep(format!("bad conclusion in `{step}`"))),
        };
        self.execute(&premises, &target, step_score)
    }

    pub fn resolve_premises(&self, step: &StepText, view: &PartialView) -> Result<Vec<NodeRef>, GraphError> {
        step.premises
            .iter()
            .map(|p| match p {
                NodeId::Sent(k) => self
                    .fact(*k)
                    .ok_or_else(|| GraphError::InvalidStep(format!("unknown premise {p}"))),
                NodeId::Int(k) => view
                    .int_refs
                    .get(*k as usize - 1)
                    .copied()
                    .ok_or_else(|| GraphError::InvalidStep(format!("unknown premise {p}"))),
                NodeId::Hypothesis => Err(GraphError::InvalidStep("hypothesis used as premise".into())),
            })
            .collect()
    }

    /// Sentence a DSL identifier refers to under `view`.
    pub fn sentence_of(&self, id: NodeId, view: &PartialView) -> Option<&str> {
        match id {
            NodeId::Sent(k) => self.fact(k).map(|r| self.nodes[r.0].sentence.as_str()),
            NodeId::Int(k) => view
                .int_refs
                .get((k as usize).checked_sub(1)?)
                .map(|r| self.nodes[r.0].sentence.as_str()),
            NodeId::Hypothesis => Some(&self.nodes[self.hypothesis.0].sentence),
        }
    }

    fn successors(&self) -> Vec<Vec<NodeRef>> {
        let mut succ = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(step) = &n.inbound {
                for p in &step.premises {
                    succ[p.0].push(NodeRef(i));
                }
            }
        }
        succ
    }

    /// Recomputes every descendant of `u` in topological order.
    fn propagate_from(&mut self, u: NodeRef) {
        let succ = self.successors();
        let mut descendants = HashSet::new();
        let mut queue = VecDeque::from([u]);
        while let Some(x) = queue.pop_front() {
            for &y in &succ[x.0] {
                if descendants.insert(y) {
                    queue.push_back(y);
                }
            }
        }
        if descendants.is_empty() {
            return;
        }
        // Kahn's algorithm restricted to u and its descendants.
        let mut indegree: HashMap<NodeRef, usize> = descendants.iter().map(|&d| (d, 0)).collect();
        for &d in &descendants {
            if let Some(step) = &self.nodes[d.0].inbound {
                for p in &step.premises {
                    if descendants.contains(p) {
                        *indegree.get_mut(&d).unwrap() += 1;
                    }
                }
            }
        }
        let mut ready: BTreeSet<NodeRef> =
            indegree.iter().filter(|(_, &k)| k == 0).map(|(&d, _)| d).collect();
        while let Some(x) = ready.pop_first() {
            self.nodes[x.0].score = self.recompute_one(x);
            for &y in &succ[x.0] {
                if let Some(k) = indegree.get_mut(&y) {
                    *k -= 1;
                    if *k == 0 {
                        ready.insert(y);
                    }
                }
            }
        }
    }

    fn recompute_one(&self, x: NodeRef) -> f64 {
        let node = &self.nodes[x.0];
        match (&node.kind, &node.inbound) {
            (NodeKind::Fact(_), _) => 1.0,
            (_, None) => 0.0,
            (_, Some(step)) => step
                .premises
                .iter()
                .map(|p| self.nodes[p.0].score)
                .fold(step.score, f64::min),
        }
    }

    /// True iff `v` is a (strict) predecessor of `u`.
    pub fn is_predecessor(&self, v: NodeRef, u: NodeRef) -> bool {
        self.predecessors(u).contains(&v)
    }

    /// Strict predecessors of `u` (facts included).
    pub fn predecessors(&self, u: NodeRef) -> BTreeSet<NodeRef> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![u];
        while let Some(x) = stack.pop() {
            if let Some(step) = &self.nodes[x.0].inbound {
                for &p in &step.premises {
                    if seen.insert(p) {
                        stack.push(p);
                    }
                }
            }
        }
        seen
    }

    /// Scores recomputed from scratch, facts upward.
    pub fn recompute_scores(&self) -> Vec<f64> {
        fn go(g: &ProofGraph, x: NodeRef, memo: &mut Vec<Option<f64>>, depth: usize) -> f64 {
            if let Some(s) = memo[x.0] {
                return s;
            }
            // A cycle would recurse forever; the node count bounds any path.
            assert!(depth <= g.nodes.len(), "proof graph contains a cycle");
            let node = &g.nodes[x.0];
            let s = match (&node.kind, &node.inbound) {
                (NodeKind::Fact(_), _) => 1.0,
                (_, None) => 0.0,
                (_, Some(step)) => step
                    .premises
                    .iter()
                    .map(|p| go(g, *p, memo, depth + 1))
                    .fold(step.score, f64::min),
            };
            memo[x.0] = Some(s);
            s
        }
        let mut memo = vec![None; self.nodes.len()];
        (0..self.nodes.len()).map(|i| go(self, NodeRef(i), &mut memo, 0)).collect()
    }

    pub fn is_consistent(&self) -> bool {
        self.is_acyclic()
            && self
                .recompute_scores()
                .iter()
                .zip(&self.nodes)
                .all(|(a, n)| *a == n.score)
    }

    pub fn is_acyclic(&self) -> bool {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; self.nodes.len()];
        for start in 0..self.nodes.len() {
            if state[start] != 0 {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
            state[start] = 1;
            while let Some(&mut (x, ref mut next)) = stack.last_mut() {
                let premises = self.nodes[x].inbound.as_ref().map(|s| s.premises.as_slice()).unwrap_or(&[]);
                if *next < premises.len() {
                    let p = premises[*next].0;
                    *next += 1;
                    match state[p] {
                        0 => {
                            state[p] = 1;
                            stack.push((p, 0));
                        }
                        1 => return false,
                        _ => {}
                    }
                } else {
                    state[x] = 2;
                    stack.pop();
                }
            }
        }
        true
    }

    /// All nodes, every node after its predecessors.
    pub fn topological_order(&self) -> Vec<NodeRef> {
        let mut done = vec![false; self.nodes.len()];
        let mut order = Vec::with_capacity(self.nodes.len());
        for start in 0..self.nodes.len() {
            self.post_order(NodeRef(start), &mut done, &mut order);
        }
        order
    }

    fn post_order(&self, start: NodeRef, done: &mut [bool], order: &mut Vec<NodeRef>) {
        if done[start.0] {
            return;
        }
        let mut stack = vec![(start, 0usize)];
        done[start.0] = true;
        while let Some(&mut (x, ref mut next)) = stack.last_mut() {
            let premises = self.nodes[x.0].inbound.as_ref().map(|s| s.premises.as_slice()).unwrap_or(&[]);
            if *next < premises.len() {
                let p = premises[*next];
                *next += 1;
                if !done[p.0] {
                    done[p.0] = true;
                    stack.push((p, 0));
                }
            } else {
                order.push(x);
                stack.pop();
            }
        }
    }

    pub fn fingerprint(&self, included: &BTreeSet<NodeRef>) -> Fingerprint {
        let mut keys: Vec<String> = included
            .iter()
            .map(|r| normalize_sentence(&self.nodes[r.0].sentence))
            .collect();
        keys.sort();
        Fingerprint(keys)
    }

    /// One random predecessor-closed set of intermediates.
    ///
    /// Intermediates are visited successors first; an unvisited node joins
    /// with probability 0.5 and drags in all of its intermediate
    /// predecessors, which then count as visited.
    pub fn draw_partial_proof<R: Rng + ?Sized>(&self, rng: &mut R) -> PartialProof {
        let mut order: Vec<NodeRef> = self
            .topological_order()
            .into_iter()
            .filter(|r| self.nodes[r.0].kind == NodeKind::Intermediate)
            .collect();
        order.reverse();
        let mut included = BTreeSet::new();
        for r in order {
            if included.contains(&r) {
                continue;
            }
            if rng.random_bool(0.5) {
                included.insert(r);
                for p in self.predecessors(r) {
                    if self.nodes[p.0].kind == NodeKind::Intermediate {
                        included.insert(p);
                    }
                }
            }
        }
        let fingerprint = self.fingerprint(&included);
        PartialProof { included, fingerprint }
    }

    /// Draws until a partial proof not in `explored` appears, giving up
    /// after `max_retries` draws.
    pub fn sample_partial_proof<R: Rng + ?Sized>(
        &self,
        explored: &HashSet<Fingerprint>,
        rng: &mut R,
        max_retries: usize,
    ) -> Option<PartialProof> {
        for _ in 0..max_retries.max(1) {
            let p = self.draw_partial_proof(rng);
            if !explored.contains(&p.fingerprint) {
                return Some(p);
            }
        }
        None
    }

    /// Renders a partial proof as a linear proof over the context.
    pub fn linearize(&self, partial: &PartialProof) -> PartialView {
        let order: Vec<NodeRef> = self
            .topological_order()
            .into_iter()
            .filter(|r| partial.included.contains(r))
            .collect();
        self.linearize_nodes(&order, None)
    }

    fn linearize_nodes(&self, order: &[NodeRef], root: Option<NodeRef>) -> PartialView {
        let mut ids: HashMap<NodeRef, NodeId> = HashMap::new();
        let mut int_refs = Vec::new();
        let mut steps = Vec::new();
        for &r in order {
            let node = &self.nodes[r.0];
            let Some(inbound) = &node.inbound else { continue };
            let conclusion = if Some(r) == root {
                NodeId::Hypothesis
            } else {
                int_refs.push(r);
                NodeId::Int(int_refs.len() as u32)
            };
            let mut premises: Vec<NodeId> = inbound
                .premises
                .iter()
                .map(|p| match self.nodes[p.0].kind {
                    NodeKind::Fact(k) => NodeId::Sent(k),
                    _ => ids[p],
                })
                .collect();
            premises.sort();
            let text = (conclusion != NodeId::Hypothesis).then(|| node.sentence.clone());
            steps.push(StepText::new(premises, conclusion, text));
            ids.insert(r, conclusion);
        }
        PartialView { proof: LinearProof::new(steps), int_refs }
    }

    /// The predecessors of the hypothesis as a proof.
    pub fn extract_proof(&self) -> Result<ProofTree, GraphError> {
        let h = self.hypothesis;
        if self.nodes[h.0].inbound.is_none() || self.nodes[h.0].score <= 0.0 {
            return Err(GraphError::NoProof);
        }
        let mut done = vec![false; self.nodes.len()];
        let mut order = Vec::new();
        self.post_order(h, &mut done, &mut order);
        let view = self.linearize_nodes(&order, Some(h));
        ProofTree::new(self.nodes[h.0].sentence.clone(), view.proof)
            .map_err(|e| GraphError::InvalidStep(e.to_string()))
    }

    pub fn dump(&self) -> GraphDump {
        let mut names = Vec::with_capacity(self.nodes.len());
        let mut ints = 0;
        for n in &self.nodes {
            names.push(match n.kind {
                NodeKind::Fact(k) => NodeId::Sent(k).to_string(),
                NodeKind::Hypothesis => NodeId::Hypothesis.to_string(),
                NodeKind::Intermediate => {
                    ints += 1;
                    NodeId::Int(ints).to_string()
                }
            });
        }
        let nodes = self
            .nodes
            .iter()
            .zip(&names)
            .map(|(n, id)| DumpNode { id: id.clone(), sentence: n.sentence.clone(), score: n.score })
            .collect();
        let steps = self
            .nodes
            .iter()
            .zip(&names)
            .filter_map(|(n, id)| {
                n.inbound.as_ref().map(|s| DumpStep {
                    premises: s.premises.iter().map(|p| names[p.0].clone()).collect(),
                    conclusion: id.clone(),
                    score: s.score,
                })
            })
            .collect();
        GraphDump { nodes, steps }
    }
}
