/// Orders used when none are configured.
pub const DEFAULT_NGRAM_ORDERS: [usize; 2] = [2, 3];
pub const DEFAULT_NUM_BUCKETS: usize = 1 << 20;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes. Platform independent.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// One bucket id per contiguous n-gram, lower orders first. The n-gram key
/// is its tokens joined by single spaces.
pub fn extract_ngrams<S: AsRef<str>>(tokens: &[S], orders: &[usize], num_buckets: usize) -> Vec<u32> {
    assert!(num_buckets >= 1, "num_buckets must be positive");
    assert!(num_buckets <= u32::MAX as usize + 1, "num_buckets exceeds id range");
    let mut orders = orders.to_vec();
    orders.sort_unstable();
    orders.dedup();
    let mut ids = Vec::new();
    let mut key = String::new();
    for order in orders.into_iter().filter(|&o| o >= 1) {
        for window in tokens.windows(order) {
            key.clear();
            for (i, t) in window.iter().enumerate() {
                if i > 0 {
                    key.push(' ');
                }
                key.push_str(t.as_ref());
            }
            ids.push((stable_hash(&key) % num_buckets as u64) as u32);
        }
    }
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::hash::Hasher;

    fn fnv_reference(s: &str) -> u64 {
        let mut h = fnv::FnvHasher::default();
        h.write(s.as_bytes());
        h.finish()
    }

    #[test]
    fn hash_matches_reference_implementation() {
        for s in ["", "a", "a b", "cold weather", "天 气", "b c"] {
            assert_eq!(stable_hash(s), fnv_reference(s), "{s:?}");
        }
        // FNV-1a 64 test vector
        assert_eq!(stable_hash("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn single_token_has_no_ngrams() {
        assert!(extract_ngrams(&["a"], &[2, 3], 1024).is_empty());
    }

    #[test]
    fn bigrams_only() {
        let ids = extract_ngrams(&["a", "b", "c"], &[2], 1 << 20);
        let want: Vec<u32> = ["a b", "b c"]
            .iter()
            .map(|k| (fnv_reference(k) % (1 << 20)) as u32)
            .collect();
        assert_eq!(ids, want);
    }

    #[test]
    fn bigrams_then_trigrams() {
        let ids = extract_ngrams(&["a", "b", "c"], &[3, 2], 1 << 20);
        let want: Vec<u32> = ["a b", "b c", "a b c"]
            .iter()
            .map(|k| (fnv_reference(k) % (1 << 20)) as u32)
            .collect();
        assert_eq!(ids, want);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn output_length(tokens in prop::collection::vec("[a-z]{1,4}", 0..12),
                             use2 in any::<bool>(), use3 in any::<bool>(),
                             buckets in 1usize..5000) {
                let mut orders = vec![];
                if use2 { orders.push(2) }
                if use3 { orders.push(3) }
                let ids = extract_ngrams(&tokens, &orders, buckets);
                let n = tokens.len();
                let want: usize = orders.iter().map(|&o| (n + 1).saturating_sub(o)).sum();
                prop_assert_eq!(ids.len(), want);
                prop_assert!(ids.iter().all(|&i| (i as usize) < buckets));
            }
        }
    }
}
