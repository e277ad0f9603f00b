//! Named seed derivation so every sub-experiment has its own stream.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a component name and integer path into `base`.
pub fn derive_seed(base: u64, component: &str, path: &[u64]) -> u64 {
    let mut h = splitmix64(base);
    for b in component.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    for &p in path {
        h = splitmix64(h ^ p);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_paths_distinct_seeds() {
        let a = derive_seed(7, "fold", &[0]);
        assert_eq!(a, derive_seed(7, "fold", &[0]));
        assert_ne!(a, derive_seed(7, "fold", &[1]));
        assert_ne!(a, derive_seed(7, "fit", &[0]));
        assert_ne!(a, derive_seed(8, "fold", &[0]));
    }
}
