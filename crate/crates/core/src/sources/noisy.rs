use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsl::{LinearProof, NodeId, StepText};
use crate::util::{fnv1a, splitmix64};

use super::{Candidate, ExactProver, SourceError, StepSource};

/// An [`ExactProver`] that forgets steps and invents unsupported ones.
///
/// Each call draws its noise from a seed derived from the configured seed,
/// the hypothesis and the partial proof, so equal requests get equal
/// answers.
#[derive(Debug, Clone, Copy)]
pub struct NoisyProver {
    pub drop: f64,
    pub inject: f64,
    pub seed: u64,
}

impl NoisyProver {
    pub fn new(drop: f64, inject: f64, seed: u64) -> Self {
        Self { drop: drop.clamp(0.0, 1.0), inject: inject.clamp(0.0, 1.0), seed }
    }

    fn rng(&self, hypothesis: &str, partial: &LinearProof) -> ChaCha8Rng {
        let key = format!("{hypothesis}\u{0}{}", partial.render());
        ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ fnv1a(key.as_bytes())))
    }
}

impl StepSource for NoisyProver {
    fn generate(
        &self,
        hypothesis: &str,
        context: &[String],
        partial: &LinearProof,
        n: usize,
    ) -> Result<Vec<Candidate>, SourceError> {
        let mut rng = self.rng(hypothesis, partial);
        let mut out = Vec::new();
        if rng.random_bool(self.inject) {
            let mut pool: Vec<NodeId> = (1..=context.len() as u32).map(NodeId::Sent).collect();
            pool.extend(partial.steps.iter().map(|s| s.conclusion).filter(NodeId::is_int));
            let k = rng.random_range(1..=2).min(pool.len());
            if k > 0 {
                let premises: Vec<NodeId> = pool.choose_multiple(&mut rng, k).copied().collect();
                let step = StepText::new(premises, NodeId::Hypothesis, None);
                out.push(Candidate::new(step.to_string(), rng.random_range(0.5..=1.0)));
            }
        }
        for step in ExactProver.steps(hypothesis, context, partial) {
            if !rng.random_bool(self.drop) {
                out.push(Candidate::new(step.to_string(), 1.0));
            }
        }
        out.truncate(n);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> Vec<String> {
        ["Bob is red.", "If Bob is red then Bob is big.", "If Bob is red then Bob is cold.", "Anne is nice."]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn noiseless_matches_exact() {
        let p = LinearProof::default();
        let noisy = NoisyProver::new(0.0, 0.0, 9).generate("Bob is big.", &ctx(), &p, 10).unwrap();
        let exact = ExactProver.generate("Bob is big.", &ctx(), &p, 10).unwrap();
        assert_eq!(noisy, exact);
    }

    #[test]
    fn full_drop_keeps_no_real_step() {
        for seed in 0..50 {
            let out = NoisyProver::new(1.0, 0.0, seed).generate("Bob is big.", &ctx(), &LinearProof::default(), 10).unwrap();
            assert!(out.is_empty());
        }
    }

    #[test]
    fn reproducible_and_injects() {
        let p = NoisyProver::new(0.3, 0.5, 4);
        let mut injected = 0;
        for i in 0..100 {
            let h = format!("Bob is big{i}.");
            let a = p.generate(&h, &ctx(), &LinearProof::default(), 10).unwrap();
            assert_eq!(a, p.generate(&h, &ctx(), &LinearProof::default(), 10).unwrap());
            assert!(a.iter().all(|c| (0.5..=1.0).contains(&c.score)));
            if a.first().is_some_and(|c| c.score < 1.0) {
                injected += 1;
            }
        }
        assert!(injected > 30 && injected < 70, "{injected}");
    }
}
