//! The templated rule language of synthetic worlds.
//!
//! Facts read `Bob is big.` or `Bob is not big.`, rules read
//! `If Bob is red and Bob is big then Bob is cold.`, and any sentence may be
//! wrapped in `I don't think ...`, which flips its polarity.

use std::fmt;

use crate::dsl::normalize_sentence;

pub const NEGATION_PREFIX: &str = "I don't think ";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub entity: String,
    pub attribute: String,
    pub positive: bool,
}

impl Literal {
    pub fn new(entity: &str, attribute: &str, positive: bool) -> Self {
        Self { entity: entity.to_lowercase(), attribute: attribute.to_lowercase(), positive }
    }

    pub fn flipped(&self) -> Self {
        Self { positive: !self.positive, ..self.clone() }
    }

    fn clause(&self) -> String {
        let not = if self.positive { "" } else { "not " };
        format!("{} is {not}{}", capitalize(&self.entity), self.attribute)
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.", self.clause())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub antecedents: Vec<Literal>,
    pub consequent: Literal,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let conds: Vec<String> = self.antecedents.iter().map(Literal::clause).collect();
        write!(f, "If {} then {}.", conds.join(" and "), self.consequent.clause())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sentence {
    Fact(Literal),
    Rule(Rule),
}

pub fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn lowercase_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// `The cat is nice.` becomes `I don't think the cat is nice.`
pub fn negate(sentence: &str) -> String {
    format!("{NEGATION_PREFIX}{}", lowercase_first(sentence.trim()))
}

/// Inverse of [`negate`] on sentences that start with a capital letter.
pub fn strip_negation(sentence: &str) -> Option<String> {
    sentence.trim().strip_prefix(NEGATION_PREFIX).map(capitalize)
}

fn is_word(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '-' || c == '\'')
}

fn parse_clause(s: &str) -> Option<Literal> {
    let words: Vec<&str> = s.split_whitespace().collect();
    match words.as_slice() {
        [e, "is", "not", a] if is_word(e) && is_word(a) => Some(Literal::new(e, a, false)),
        [e, "is", a] if is_word(e) && is_word(a) && *a != "not" => Some(Literal::new(e, a, true)),
        _ => None,
    }
}

pub fn parse_sentence(s: &str) -> Option<Sentence> {
    let mut body = normalize_sentence(s);
    let prefix = normalize_sentence(NEGATION_PREFIX);
    let mut flips = 0;
    while let Some(rest) = body.strip_prefix(&prefix) {
        body = rest.trim_start().to_string();
        flips += 1;
    }
    if let Some(rest) = body.strip_prefix("if ") {
        if flips > 0 {
            return None;
        }
        let (conds, cons) = rest.split_once(" then ")?;
        let antecedents = conds.split(" and ").map(parse_clause).collect::<Option<Vec<_>>>()?;
        let consequent = parse_clause(cons)?;
        return Some(Sentence::Rule(Rule { antecedents, consequent }));
    }
    let lit = parse_clause(&body)?;
    Some(Sentence::Fact(if flips % 2 == 1 { lit.flipped() } else { lit }))
}

pub fn parse_literal(s: &str) -> Option<Literal> {
    match parse_sentence(s)? {
        Sentence::Fact(l) => Some(l),
        Sentence::Rule(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negation_prefix() {
        assert_eq!(negate("The cat is nice."), "I don't think the cat is nice.");
        assert_eq!(strip_negation("I don't think bob is big."), Some("Bob is big.".into()));
        assert_eq!(strip_negation("Bob is big."), None);
    }

    #[test]
    fn parses_facts_and_rules() {
        assert_eq!(parse_literal("Bob is big."), Some(Literal::new("bob", "big", true)));
        assert_eq!(parse_literal("Bob is not big."), Some(Literal::new("bob", "big", false)));
        assert_eq!(parse_literal("I don't think Bob is not big."), Some(Literal::new("bob", "big", true)));
        assert_eq!(parse_literal("I don't think bob is big"), Some(Literal::new("bob", "big", false)));
        let r = Rule {
            antecedents: vec![Literal::new("bob", "red", true), Literal::new("bob", "big", true)],
            consequent: Literal::new("bob", "cold", true),
        };
        assert_eq!(r.to_string(), "If Bob is red and Bob is big then Bob is cold.");
        assert_eq!(parse_sentence(&r.to_string()), Some(Sentence::Rule(r)));
        assert_eq!(parse_sentence("the sky is very blue"), None);
        assert_eq!(parse_sentence("I don't think if a is b then a is c."), None);
    }

    #[test]
    fn render_round_trip() {
        let l = Literal::new("Fiona", "round", false);
        assert_eq!(l.to_string(), "Fiona is not round.");
        assert_eq!(parse_literal(&l.to_string()), Some(l));
    }
}
