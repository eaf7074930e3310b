use rand::RngExt;
use rand_chacha::ChaCha8Rng;

/// Uniform draw from `[base_ms, base_ms + jitter_ms]`. A zero jitter returns
/// the base without consuming randomness.
pub fn next_delay(base_ms: u64, jitter_ms: u64, rng: &mut ChaCha8Rng) -> u64 {
    if jitter_ms == 0 {
        return base_ms;
    }
    rng.random_range(base_ms..=base_ms.saturating_add(jitter_ms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::SeedableRng;

    #[test]
    fn degenerate_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(next_delay(100, 0, &mut rng), 100);
        assert_eq!(next_delay(7000, 0, &mut rng), 7000);
    }

    #[test]
    fn seeded_sequences_repeat() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..32).map(|_| next_delay(100, 50, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert!(draw(42).iter().all(|d| (100..=150).contains(d)));
        assert_ne!(draw(42), draw(43));
    }
}
