use rand::Rng;

use crate::corpus::Sample;
use crate::dqn::agent::uniform_valid;
use crate::env::{EpisodeTrace, EvasionEnv};
use crate::error::Result;

/// Inserts at a uniformly random valid slot every step.
pub fn random_agent<R: Rng + ?Sized>(env: &EvasionEnv, sample: &Sample, rng: &mut R) -> Result<EpisodeTrace> {
    env.run_episode(sample, |s| uniform_valid(&s.insert_mask, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Classifier, ClassifierConfig};
    use crate::rng;

    #[test]
    fn valid_and_reproducible() {
        let cfg = ClassifierConfig {
            filters: 5,
            ..ClassifierConfig::default()
        };
        let c = Classifier::new(8, 3, &cfg, 0).unwrap();
        let env = EvasionEnv::new(&c, 10).unwrap();
        let toks: Vec<u32> = (0..30).map(|i| 2 + (i * 7 % 6) as u32).collect();
        let fam = c.predict(&toks).unwrap();
        let mut s = Sample::new("s", fam, toks).unwrap();
        for i in (0..s.insert_mask.len()).step_by(2) {
            s.insert_mask[i] = false;
        }
        let a = random_agent(&env, &s, &mut rng::stream(3, "random", 0)).unwrap();
        let b = random_agent(&env, &s, &mut rng::stream(3, "random", 0)).unwrap();
        assert_eq!(a, b);
        // odd original slots only; replay the mask to check each action
        let mut mask = s.insert_mask.clone();
        for &act in &a.actions {
            assert!(mask[act]);
            let (_, m) = crate::env::insert_nop(&vec![0; mask.len() - 1], &mask, act);
            mask = m;
        }
    }
}
