use serde::{Deserialize, Serialize};

/// Linear decay from `start` to `end` over `horizon` environment steps, then
/// constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub horizon: u64,
}

impl EpsilonSchedule {
    /// Horizon of half the expected step budget, `episodes·max_turn/2`.
    pub fn for_budget(start: f64, end: f64, episodes: usize, max_turn: usize) -> Self {
        EpsilonSchedule {
            start,
            end,
            horizon: (episodes as u64 * max_turn as u64) / 2,
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        if step >= self.horizon {
            return self.end;
        }
        let frac = step as f64 / self.horizon as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints() {
        let s = EpsilonSchedule::for_budget(1.0, 0.5, 1000, 50);
        assert_eq!(s.horizon, 25_000);
        assert_eq!(s.value(0), 1.0);
        assert_eq!(s.value(25_000), 0.5);
        assert_eq!(s.value(1_000_000), 0.5);
        assert!((s.value(12_500) - 0.75).abs() < 1e-15);
        assert_eq!(EpsilonSchedule::for_budget(1.0, 0.5, 0, 50).value(0), 0.5);
    }

    proptest! {
        #[test]
        fn non_increasing(a in 0u64..60_000, b in 0u64..60_000) {
            let s = EpsilonSchedule::for_budget(1.0, 0.5, 1000, 50);
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(s.value(hi) <= s.value(lo));
        }
    }
}
