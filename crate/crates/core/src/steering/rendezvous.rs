//! Weighted rendezvous (highest-random-weight) hashing.
//!
//! Each candidate gets a score `-weight / ln(u)` where `u` is a keyed hash of
//! (candidate id, key) mapped into the open interval (0, 1); the largest
//! score wins. `-ln(u) / weight` is exponentially distributed with rate
//! `weight`, so candidate `i` wins with probability `w_i / sum(w)`.
//! Removing a candidate only moves the keys it was winning.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::Xxh3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error("no candidates to select from")]
    Empty,
    #[error("candidate {index} has invalid weight {weight}")]
    BadWeight { index: usize, weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weighted<T> {
    pub id: T,
    pub weight: f64,
}

impl<T> Weighted<T> {
    pub fn new(id: T, weight: f64) -> Self {
        Self { id, weight }
    }
}

/// Keyed hash of (candidate, key) mapped to (0, 1).
pub fn unit_hash(id: &[u8], key: &[u8]) -> f64 {
    let mut h = Xxh3::new();
    // length prefix keeps (id, key) splits unambiguous
    h.update(&(id.len() as u32).to_be_bytes());
    h.update(id);
    h.update(key);
    let bits = h.digest() >> 11;
    (bits as f64 + 0.5) / (1u64 << 53) as f64
}

pub fn score(id: &[u8], key: &[u8], weight: f64) -> f64 {
    -weight / unit_hash(id, key).ln()
}

/// Index of the winning candidate. Ties (practically impossible) go to the
/// larger id so the result does not depend on candidate order.
pub fn select_index<'a, I>(key: &[u8], candidates: I) -> Result<usize, SelectError>
where
    I: IntoIterator<Item = (&'a [u8], f64)>,
{
    let mut best: Option<(usize, f64, &[u8])> = None;
    for (index, (id, weight)) in candidates.into_iter().enumerate() {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(SelectError::BadWeight { index, weight });
        }
        let s = score(id, key, weight);
        let better = match best {
            None => true,
            Some((_, bs, bid)) => s > bs || (s == bs && id > bid),
        };
        if better {
            best = Some((index, s, id));
        }
    }
    best.map(|(i, _, _)| i).ok_or(SelectError::Empty)
}

pub fn rendezvous_select<'a, T: AsRef<[u8]>>(key: &[u8], candidates: &'a [Weighted<T>]) -> Result<&'a T, SelectError> {
    let idx = select_index(key, candidates.iter().map(|c| (c.id.as_ref(), c.weight)))?;
    Ok(&candidates[idx].id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pool(weights: &[f64]) -> Vec<Weighted<[u8; 1]>> {
        weights.iter().enumerate().map(|(i, &w)| Weighted::new([i as u8], w)).collect()
    }

    #[test]
    fn single_candidate() {
        let c = [Weighted::new("only", 3.0)];
        assert_eq!(*rendezvous_select(b"k", &c).unwrap(), "only");
    }

    #[test]
    fn empty_and_bad_weights() {
        let none: [Weighted<&str>; 0] = [];
        assert_eq!(rendezvous_select(b"k", &none), Err(SelectError::Empty));
        for w in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            let c = [Weighted::new("a", 1.0), Weighted::new("b", w)];
            assert!(matches!(rendezvous_select(b"k", &c), Err(SelectError::BadWeight { index: 1, .. })));
        }
    }

    #[test]
    fn unit_hash_in_open_interval() {
        for i in 0u32..10_000 {
            let u = unit_hash(b"x", &i.to_be_bytes());
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fwd = pool(&[1.0, 2.0, 3.0, 4.0]);
        let mut rev = fwd.clone();
        rev.reverse();
        for _ in 0..1000 {
            let key: [u8; 8] = rng.gen();
            assert_eq!(rendezvous_select(&key, &fwd).unwrap(), rendezvous_select(&key, &rev).unwrap());
        }
    }

    #[test]
    fn removing_unselected_candidate_keeps_selection() {
        let full = pool(&[1.0, 1.0, 2.0, 2.0]);
        for k in 0u32..2000 {
            let key = k.to_be_bytes();
            let winner = *rendezvous_select(&key, &full).unwrap();
            for drop in 0..full.len() {
                if full[drop].id == winner {
                    continue;
                }
                let mut less = full.clone();
                less.remove(drop);
                assert_eq!(*rendezvous_select(&key, &less).unwrap(), winner);
            }
        }
    }
}
