//! Synthetic rule worlds and task instances with known proofs.
//!
//! Every entity owns a few base facts and a set of rules over its own
//! attributes. Attributes are ordered per entity and rules only point
//! forward in that order, so the rule graph is acyclic and no negative
//! statement is ever derivable.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{LinearProof, NodeId, StepText};
use crate::lang::{Literal, Rule};
use crate::tree::ProofTree;
use crate::util::derive_seed;

pub use crate::lang::{negate, strip_negation};

const ENTITIES: &[&str] = &[
    "anne", "bob", "charlie", "dave", "erin", "fiona", "gary", "harry", "ivy", "jack", "kate", "liam",
    "mona", "nate", "olga", "paul", "quinn", "rosa", "sam", "tina", "uma", "victor", "wendy", "xena",
];

const ATTRIBUTES: &[&str] = &[
    "big", "blue", "cold", "furry", "green", "kind", "nice", "red", "rough", "round", "smart", "white",
    "young", "quiet", "tall", "quick", "calm", "brave", "sharp", "soft", "shiny", "loud", "heavy", "wise",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("config error: {0}")]
    Config(String),
    #[error("world has no chain of depth {0}")]
    DepthUnreachable(u8),
    #[error("need {needed} distractors but only {available} are available")]
    NotEnoughDistractors { needed: usize, available: usize },
    #[error("instance {id}: {source}")]
    Instance { id: String, source: Box<SynthError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_entities: usize,
    pub n_attributes: usize,
    /// Rules per entity.
    pub n_rules: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { n_entities: 8, n_attributes: 8, n_rules: 6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct World {
    pub facts: Vec<Literal>,
    pub rules: Vec<Rule>,
    pub seed: u64,
}

impl World {
    pub fn entities(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.facts.iter().map(|f| &f.entity).collect();
        set.into_iter().cloned().collect()
    }

    /// Forward closure of `facts` under `rules`, with the number of chained
    /// rule applications needed for each literal.
    pub fn closure<'a>(facts: impl IntoIterator<Item = &'a Literal>, rules: &[&Rule]) -> HashMap<Literal, usize> {
        let mut known: HashMap<Literal, usize> = facts.into_iter().map(|f| (f.clone(), 0)).collect();
        loop {
            let mut added = false;
            for r in rules {
                if known.contains_key(&r.consequent) {
                    continue;
                }
                if let Some(d) = r.antecedents.iter().map(|a| known.get(a).copied()).collect::<Option<Vec<_>>>() {
                    known.insert(r.consequent.clone(), 1 + d.into_iter().max().unwrap_or(0));
                    added = true;
                }
            }
            if !added {
                return known;
            }
        }
    }

    fn entity_facts(&self, e: &str) -> Vec<&Literal> {
        self.facts.iter().filter(|f| f.entity == e).collect()
    }

    fn entity_rules(&self, e: &str) -> Vec<&Rule> {
        self.rules.iter().filter(|r| r.consequent.entity == e).collect()
    }

    fn entity_sentences(&self, e: &str) -> Vec<String> {
        self.entity_facts(e)
            .into_iter()
            .map(Literal::to_string)
            .chain(self.entity_rules(e).into_iter().map(Rule::to_string))
            .collect()
    }
}

fn facts_per_entity(n_attributes: usize) -> usize {
    (n_attributes / 4).max(1)
}

pub fn generate_world(config: &WorldConfig) -> Result<World, SynthError> {
    let WorldConfig { n_entities, n_attributes, n_rules, seed } = *config;
    if n_entities == 0 || n_attributes == 0 || n_rules == 0 {
        return Err(SynthError::Config("counts must be at least 1".into()));
    }
    if n_entities > ENTITIES.len() {
        return Err(SynthError::Config(format!("at most {} entities", ENTITIES.len())));
    }
    if n_attributes > ATTRIBUTES.len() {
        return Err(SynthError::Config(format!("at most {} attributes", ATTRIBUTES.len())));
    }
    let n_facts = facts_per_entity(n_attributes);
    let pairs: Vec<(usize, usize)> = (n_facts..n_attributes).flat_map(|j| (0..j).map(move |i| (i, j))).collect();
    if n_rules > pairs.len() {
        return Err(SynthError::Config(format!(
            "{n_rules} rules per entity but only {} attribute pairs",
            pairs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut facts = Vec::new();
    let mut rules = Vec::new();
    for entity in &ENTITIES[..n_entities] {
        let mut attrs: Vec<&str> = ATTRIBUTES[..n_attributes].to_vec();
        attrs.shuffle(&mut rng);
        let lit = |i: usize| Literal::new(entity, attrs[i], true);
        facts.extend((0..n_facts).map(lit));
        let mut pairs = pairs.clone();
        pairs.shuffle(&mut rng);
        for &(i, j) in &pairs[..n_rules] {
            let mut antecedents = vec![lit(i)];
            // Occasionally require a second base fact.
            let extra: Vec<usize> = (0..n_facts.min(j)).filter(|&k| k != i).collect();
            if !extra.is_empty() && rng.random_bool(0.25) {
                antecedents.push(lit(*extra.choose(&mut rng).unwrap()));
            }
            rules.push(Rule { antecedents, consequent: lit(j) });
        }
    }
    Ok(World { facts, rules, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Proved,
    Disproved,
    Unknown,
}

impl Answer {
    pub const ALL: [Answer; 3] = [Answer::Proved, Answer::Disproved, Answer::Unknown];

    pub fn as_str(&self) -> &'static str {
        match self {
            Answer::Proved => "proved",
            Answer::Disproved => "disproved",
            Answer::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskInstance {
    pub id: String,
    pub hypothesis: String,
    pub context: Vec<String>,
    /// For disproved instances this proves `negate(hypothesis)`.
    pub gold_proof: Option<LinearProof>,
    pub answer: Option<Answer>,
    pub depth: Option<u8>,
}

impl TaskInstance {
    /// Sentence the gold proof concludes.
    pub fn proof_target(&self) -> Option<String> {
        match self.answer {
            Some(Answer::Disproved) => Some(negate(&self.hypothesis)),
            Some(Answer::Unknown) => None,
            _ => Some(self.hypothesis.clone()),
        }
    }

    pub fn gold_tree(&self) -> Option<ProofTree> {
        let proof = self.gold_proof.clone()?;
        ProofTree::new(self.proof_target()?, proof).ok()
    }
}

/// Rule chains of exactly `depth` applications for `entity`, each rule
/// consuming the previous conclusion plus base facts.
fn chains<'w>(world: &'w World, entity: &str, depth: usize) -> Vec<Vec<&'w Rule>> {
    let facts: HashSet<&Literal> = world.entity_facts(entity).into_iter().collect();
    let rules = world.entity_rules(entity);
    let mut out = Vec::new();
    let mut stack: Vec<Vec<&Rule>> = rules
        .iter()
        .filter(|r| r.antecedents.iter().all(|a| facts.contains(a)))
        .map(|r| vec![*r])
        .collect();
    while let Some(chain) = stack.pop() {
        if chain.len() == depth {
            out.push(chain);
            continue;
        }
        let prev = &chain.last().unwrap().consequent;
        for r in &rules {
            let uses_prev = r.antecedents.iter().filter(|a| *a == prev).count() == 1;
            let rest_facts = r.antecedents.iter().all(|a| a == prev || facts.contains(a));
            if uses_prev && rest_facts {
                let mut next = chain.clone();
                next.push(r);
                stack.push(next);
            }
        }
    }
    out
}

fn distractor_pool(world: &World, entity: &str) -> Vec<String> {
    world
        .entities()
        .into_iter()
        .filter(|e| e != entity)
        .flat_map(|e| world.entity_sentences(&e))
        .collect()
}

/// Builds one instance over `world`.
///
/// Proved instances ask for the last conclusion of a rule chain of
/// `target_depth` applications (a base fact when the depth is 0),
/// disproved instances ask for its negation, and unknown instances ask for
/// an attribute the entity can never reach.
pub fn make_instance<R: Rng + ?Sized>(
    world: &World,
    target_depth: u8,
    answer: Answer,
    n_distractors: usize,
    rng: &mut R,
) -> Result<TaskInstance, SynthError> {
    build_instance(world, target_depth, answer, Distractors::Count(n_distractors), rng)
}

/// Like [`make_instance`] but pads with distractors until the context holds
/// exactly `context_size` sentences.
pub fn make_instance_sized<R: Rng + ?Sized>(
    world: &World,
    target_depth: u8,
    answer: Answer,
    context_size: usize,
    rng: &mut R,
) -> Result<TaskInstance, SynthError> {
    build_instance(world, target_depth, answer, Distractors::FillTo(context_size), rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distractors {
    Count(usize),
    FillTo(usize),
}

fn pick_distractors<R: Rng + ?Sized>(
    pool: &[String],
    own: usize,
    mode: Distractors,
    rng: &mut R,
) -> Result<Vec<String>, SynthError> {
    let needed = match mode {
        Distractors::Count(n) => n,
        Distractors::FillTo(n) => n.checked_sub(own).ok_or_else(|| {
            SynthError::Config(format!("context size {n} is smaller than the {own} gold sentences"))
        })?,
    };
    if pool.len() < needed {
        return Err(SynthError::NotEnoughDistractors { needed, available: pool.len() });
    }
    Ok(pool.choose_multiple(rng, needed).cloned().collect())
}

fn build_instance<R: Rng + ?Sized>(
    world: &World,
    target_depth: u8,
    answer: Answer,
    distractors: Distractors,
    rng: &mut R,
) -> Result<TaskInstance, SynthError> {
    if target_depth > 3 {
        return Err(SynthError::Config("depth must be within 0..=3".into()));
    }
    let mut entities = world.entities();
    entities.shuffle(rng);
    let depth = target_depth as usize;

    for entity in &entities {
        let pool = distractor_pool(world, entity);

        if answer == Answer::Unknown {
            let facts = world.entity_facts(entity);
            let closure = World::closure(facts.iter().copied(), &world.entity_rules(entity));
            let unreachable: Vec<&str> = ATTRIBUTES
                .iter()
                .copied()
                .filter(|a| !closure.contains_key(&Literal::new(entity, a, true)))
                .filter(|a| world.facts.iter().chain(world.rules.iter().map(|r| &r.consequent)).any(|l| l.attribute == *a))
                .collect();
            let Some(attr) = unreachable.choose(rng) else { continue };
            let mut own = world.entity_sentences(entity);
            own.shuffle(rng);
            own.truncate(depth + 1);
            let distractors = pick_distractors(&pool, own.len(), distractors, rng)?;
            let mut context: Vec<String> = own.into_iter().chain(distractors).collect();
            context.shuffle(rng);
            return Ok(TaskInstance {
                id: String::new(),
                hypothesis: Literal::new(entity, attr, true).to_string(),
                context,
                gold_proof: None,
                answer: Some(Answer::Unknown),
                depth: Some(target_depth),
            });
        }

        let (target, leaves, chain): (Literal, Vec<String>, Vec<&Rule>) = if depth == 0 {
            let fact = (*world.entity_facts(entity).choose(rng).expect("entity has facts")).clone();
            (fact.clone(), vec![fact.to_string()], Vec::new())
        } else {
            let all = chains(world, entity, depth);
            let Some(chain) = all.choose(rng) else { continue };
            let mut leaves: Vec<String> = Vec::new();
            for r in chain {
                leaves.push(r.to_string());
                for a in &r.antecedents {
                    let s = a.to_string();
                    if world.facts.contains(a) && !leaves.contains(&s) {
                        leaves.push(s);
                    }
                }
            }
            (chain.last().unwrap().consequent.clone(), leaves, chain.clone())
        };

        let distractors = pick_distractors(&pool, leaves.len(), distractors, rng)?;
        let mut context: Vec<String> = leaves.iter().cloned().chain(distractors).collect();
        context.shuffle(rng);
        let sent = |s: &str| NodeId::Sent(context.iter().position(|c| c == s).unwrap() as u32 + 1);

        let steps = if chain.is_empty() {
            vec![StepText::new(vec![sent(&target.to_string())], NodeId::Hypothesis, None)]
        } else {
            let mut steps = Vec::new();
            for (t, r) in chain.iter().enumerate() {
                let mut premises = vec![sent(&r.to_string())];
                for a in &r.antecedents {
                    if t > 0 && *a == chain[t - 1].consequent {
                        premises.push(NodeId::Int(t as u32));
                    } else {
                        premises.push(sent(&a.to_string()));
                    }
                }
                premises.sort();
                let last = t + 1 == chain.len();
                let (conclusion, text) = if last {
                    (NodeId::Hypothesis, None)
                } else {
                    (NodeId::Int(t as u32 + 1), Some(r.consequent.to_string()))
                };
                steps.push(StepText::new(premises, conclusion, text));
            }
            steps
        };
        let hypothesis = match answer {
            Answer::Proved => target.to_string(),
            _ => target.flipped().to_string(),
        };
        return Ok(TaskInstance {
            id: String::new(),
            hypothesis,
            context,
            gold_proof: Some(LinearProof::new(steps)),
            answer: Some(answer),
            depth: Some(target_depth),
        });
    }
    Err(SynthError::DepthUnreachable(target_depth))
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    id: String,
    hypothesis: String,
    context: ContextRecord,
    proof: Option<String>,
    answer: Option<Answer>,
    depth: Option<u8>,
}

/// Contexts are written as `{"sent1": ..., "sent2": ...}`; plain lists are
/// accepted on input.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ContextRecord {
    Map(serde_json::Map<String, serde_json::Value>),
    List(Vec<String>),
}

impl ContextRecord {
    fn from_sentences(context: &[String]) -> Self {
        ContextRecord::Map(
            context
                .iter()
                .enumerate()
                .map(|(i, s)| (NodeId::Sent(i as u32 + 1).to_string(), serde_json::Value::String(s.clone())))
                .collect(),
        )
    }

    fn into_sentences(self) -> Result<Vec<String>, String> {
        let map = match self {
            ContextRecord::List(list) => return Ok(list),
            ContextRecord::Map(map) => map,
        };
        let mut keyed = Vec::with_capacity(map.len());
        for (k, v) in map {
            let Ok(NodeId::Sent(i)) = k.parse::<NodeId>() else {
                return Err(format!("bad context key `{k}`"));
            };
            let serde_json::Value::String(s) = v else {
                return Err(format!("context value for `{k}` is not a string"));
            };
            keyed.push((i, s));
        }
        keyed.sort();
        for (pos, (i, _)) in keyed.iter().enumerate() {
            if *i as usize != pos + 1 {
                return Err(format!("context keys are not sent1..sent{}", keyed.len()));
            }
        }
        Ok(keyed.into_iter().map(|(_, s)| s).collect())
    }
}

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TaskInstance {
    /// One JSON object, proofs in DSL form.
    pub fn to_json(&self) -> String {
        let rec = InstanceRecord {
            id: self.id.clone(),
            hypothesis: self.hypothesis.clone(),
            context: ContextRecord::from_sentences(&self.context),
            proof: self.gold_proof.as_ref().map(LinearProof::render),
            answer: self.answer,
            depth: self.depth,
        };
        serde_json::to_string(&rec).expect("instance serializes")
    }

    pub fn from_json(line: &str) -> Result<Self, String> {
        let rec: InstanceRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let context = rec.context.into_sentences().map_err(|e| format!("{}: {e}", rec.id))?;
        let gold_proof = match rec.proof.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(text) => Some(crate::dsl::parse_proof(text, context.len()).map_err(|e| format!("{}: {e}", rec.id))?),
        };
        Ok(Self {
            id: rec.id,
            hypothesis: rec.hypothesis,
            context,
            gold_proof,
            answer: rec.answer,
            depth: rec.depth,
        })
    }
}

pub fn write_jsonl<W: std::io::Write>(mut out: W, instances: &[TaskInstance]) -> std::io::Result<()> {
    for inst in instances {
        writeln!(out, "{}", inst.to_json())?;
    }
    Ok(())
}

pub fn read_jsonl<R: std::io::BufRead>(input: R) -> Result<Vec<TaskInstance>, DatasetIoError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(TaskInstance::from_json(&line).map_err(|message| DatasetIoError::Parse { line: i + 1, message })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_entities: usize,
    pub n_attributes: usize,
    pub n_rules: usize,
    pub n_instances: usize,
    pub depths: Vec<u8>,
    pub distractors: Distractors,
    /// Relative weights of proved, disproved and unknown instances.
    pub answer_weights: [u32; 3],
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_entities: 8,
            n_attributes: 8,
            n_rules: 6,
            n_instances: 100,
            depths: vec![0, 1, 2, 3],
            distractors: Distractors::Count(20),
            answer_weights: [1, 1, 1],
            seed: 0,
        }
    }
}

/// Splits `n` by `weights` with the largest-remainder method.
pub fn apportion(n: usize, weights: &[u32]) -> Vec<usize> {
    let total: u64 = weights.iter().map(|&w| w as u64).sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<(usize, u64)> = weights
        .iter()
        .map(|&w| ((n as u64 * w as u64 / total) as usize, n as u64 * w as u64 % total))
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.0).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| exact[b].1.cmp(&exact[a].1).then(a.cmp(&b)));
    for i in order {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

const MAX_ATTEMPTS: u64 = 200;

/// Generates a dataset whose answer counts follow `answer_weights` exactly.
/// Each instance draws its own world from a seed derived from the dataset
/// seed and its id.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Vec<TaskInstance>, SynthError> {
    if config.depths.is_empty() || config.depths.iter().any(|&d| d > 3) {
        return Err(SynthError::Config("depths must be a nonempty subset of 0..=3".into()));
    }
    let counts = apportion(config.n_instances, &config.answer_weights);
    let mut plan: Vec<(Answer, u8)> = Vec::with_capacity(config.n_instances);
    for (answer, count) in Answer::ALL.into_iter().zip(counts) {
        for i in 0..count {
            plan.push((answer, config.depths[i % config.depths.len()]));
        }
    }
    plan.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));

    let mut out = Vec::with_capacity(plan.len());
    for (i, (answer, depth)) in plan.into_iter().enumerate() {
        let id = format!("synth-{:05}", i);
        let mut last_err = SynthError::DepthUnreachable(depth);
        let mut made = None;
        for attempt in 0..MAX_ATTEMPTS {
            let seed = derive_seed(config.seed, &format!("{id}/{attempt}"));
            let world = generate_world(&WorldConfig {
                n_entities: config.n_entities,
                n_attributes: config.n_attributes,
                n_rules: config.n_rules,
                seed,
            })
            .map_err(|e| SynthError::Instance { id: id.clone(), source: Box::new(e) })?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match build_instance(&world, depth, answer, config.distractors, &mut rng) {
                Ok(inst) => {
                    made = Some(inst);
                    break;
                }
                Err(e @ SynthError::DepthUnreachable(_)) => last_err = e,
                Err(e) => return Err(SynthError::Instance { id, source: Box::new(e) }),
            }
        }
        let mut inst = made.ok_or_else(|| SynthError::Instance { id: id.clone(), source: Box::new(last_err) })?;
        inst.id = id;
        out.push(inst);
    }
    Ok(out)
}
