// SPDX-License-Identifier: MIT OR Apache-2.0

//! Circular block permutations and the edge-count curve.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{CbpError, Result};
use crate::simgraph::SimilarityGraph;

/// One circular block permutation of positions `0..n`.
///
/// The sequence is cut into `m = n / block` consecutive blocks starting at
/// position `offset` (wrapping around), and block `order[s]` is placed in
/// slot `s`. `pi[v]` is the new position of original position `v`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CbpAssignment {
    pub offset: usize,
    pub order: Vec<usize>,
    pub pi: Vec<usize>,
}

fn check_geometry(n: usize, block: usize) -> Result<usize> {
    if block == 0 || !n.is_multiple_of(block) {
        return Err(CbpError::InvalidArgument(format!(
            "block size {block} does not divide n={n}"
        )));
    }
    let m = n / block;
    if m < 2 {
        return Err(CbpError::TooFewBlocks {
            block,
            blocks: m,
            required: 2,
        });
    }
    Ok(m)
}

impl CbpAssignment {
    pub fn from_parts(n: usize, block: usize, offset: usize, order: Vec<usize>) -> Result<Self> {
        let m = check_geometry(n, block)?;
        if offset >= block {
            return Err(CbpError::InvalidArgument(format!(
                "offset {offset} >= block {block}"
            )));
        }
        let mut slot = vec![usize::MAX; m];
        if order.len() != m {
            return Err(CbpError::InvalidArgument(format!(
                "order has {} entries, expected {m}",
                order.len()
            )));
        }
        for (s, &b) in order.iter().enumerate() {
            if b >= m || slot[b] != usize::MAX {
                return Err(CbpError::InvalidArgument(
                    "order is not a permutation".into(),
                ));
            }
            slot[b] = s;
        }
        let pi = (0..n)
            .map(|v| {
                let r = (v + n - offset) % n;
                slot[r / block] * block + r % block
            })
            .collect();
        Ok(Self { offset, order, pi })
    }

    pub fn n(&self) -> usize {
        self.pi.len()
    }
}

/// Draws an offset uniformly from `0..block` and a uniform block order.
pub fn sample_cbp<R: Rng + ?Sized>(n: usize, block: usize, rng: &mut R) -> Result<CbpAssignment> {
    let m = check_geometry(n, block)?;
    let offset = rng.random_range(0..block);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    CbpAssignment::from_parts(n, block, offset, order)
}

/// Default cap on `block * m!` for exhaustive enumeration.
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 10_000_000;

/// Number of assignments in the full CBP group, `block * m!`, saturating.
pub fn cbp_group_size(n: usize, block: usize) -> Result<u128> {
    let m = check_geometry(n, block)?;
    let mut size = block as u128;
    for k in 2..=m as u128 {
        size = size.saturating_mul(k);
    }
    Ok(size)
}

/// Iterator over every `(offset, order)` pair, offsets outermost and block
/// orders in lexicographic order.
pub struct CbpEnumeration {
    n: usize,
    block: usize,
    offset: usize,
    order: Vec<usize>,
    done: bool,
}

pub fn enumerate_cbp(n: usize, block: usize, budget: u128) -> Result<CbpEnumeration> {
    let m = check_geometry(n, block)?;
    let size = cbp_group_size(n, block)?;
    if size > budget {
        return Err(CbpError::BudgetExceeded {
            requested: size,
            budget,
        });
    }
    Ok(CbpEnumeration {
        n,
        block,
        offset: 0,
        order: (0..m).collect(),
        done: false,
    })
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        p.reverse();
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

impl Iterator for CbpEnumeration {
    type Item = CbpAssignment;

    fn next(&mut self) -> Option<CbpAssignment> {
        if self.done {
            return None;
        }
        let item = CbpAssignment::from_parts(self.n, self.block, self.offset, self.order.clone())
            .expect("enumeration state is always valid");
        if !next_permutation(&mut self.order) {
            self.offset += 1;
            if self.offset == self.block {
                self.done = true;
            }
        }
        Some(item)
    }
}

/// Edge-count curve `R(t)` for `t = 0..=n` after relabelling by `pi`.
/// `R(t)` counts edges with one end among the first `t` new positions and
/// the other end after them; `R(0) = R(n) = 0`.
pub fn r_curve(g: &SimilarityGraph, pi: &[usize]) -> Vec<u32> {
    let n = g.n();
    assert_eq!(pi.len(), n, "permutation length must match the graph");
    let mut diff = vec![0i64; n + 2];
    for &(i, j) in g.edges() {
        let (p, q) = (pi[i].min(pi[j]), pi[i].max(pi[j]));
        diff[p + 1] += 1;
        diff[q + 1] -= 1;
    }
    let mut out = vec![0u32; n + 1];
    let mut acc = 0i64;
    for t in 1..n {
        acc += diff[t];
        out[t] = acc as u32;
    }
    out
}

/// `R(t)` in the original order.
pub fn r_curve_identity(g: &SimilarityGraph) -> Vec<u32> {
    let id: Vec<usize> = (0..g.n()).collect();
    r_curve(g, &id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn naive_r(g: &SimilarityGraph, pi: &[usize], t: usize) -> u32 {
        g.edges()
            .iter()
            .filter(|&&(i, j)| (pi[i] < t) != (pi[j] < t))
            .count() as u32
    }

    #[test]
    fn worked_example_positions() {
        // n=6, L=2, offset 1 (first block starts at position 2), order (1,3,2).
        let a = CbpAssignment::from_parts(6, 2, 1, vec![0, 2, 1]).unwrap();
        // Original 1-based (2,3,4,5,6,1) -> blocks {2,3},{4,5},{6,1}; new sequence 2,3,6,1,4,5.
        let new_seq: Vec<usize> = {
            let mut inv = vec![0; 6];
            for (v, &p) in a.pi.iter().enumerate() {
                inv[p] = v + 1;
            }
            inv
        };
        assert_eq!(new_seq, vec![2, 3, 6, 1, 4, 5]);
    }

    #[test]
    fn identity_when_offset_zero_and_order_sorted() {
        let a = CbpAssignment::from_parts(8, 2, 0, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(a.pi, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn block_one_gives_plain_permutations() {
        let all: HashSet<Vec<usize>> = enumerate_cbp(4, 1, DEFAULT_ENUMERATION_BUDGET)
            .unwrap()
            .map(|a| a.pi)
            .collect();
        assert_eq!(all.len(), 24);
    }

    #[test]
    fn enumeration_size_and_budget() {
        assert_eq!(enumerate_cbp(6, 2, 1000).unwrap().count(), 12);
        assert_eq!(cbp_group_size(8, 2).unwrap(), 48);
        assert!(matches!(
            enumerate_cbp(8, 2, 47),
            Err(CbpError::BudgetExceeded {
                requested: 48,
                budget: 47
            })
        ));
        assert!(matches!(
            enumerate_cbp(4, 4, 10),
            Err(CbpError::TooFewBlocks { .. })
        ));
    }

    #[test]
    fn sampler_rejects_single_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_cbp(4, 4, &mut rng).is_err());
        assert!(sample_cbp(5, 2, &mut rng).is_err());
    }

    #[test]
    fn sampler_reproducible() {
        let a = sample_cbp(30, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_cbp(30, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampler_covers_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seen: HashSet<Vec<usize>> = (0..2000)
            .map(|_| sample_cbp(6, 2, &mut rng).unwrap().pi)
            .collect();
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn r_curve_hand_example() {
        let g = SimilarityGraph::new(4, [(0, 3)]).unwrap();
        assert_eq!(r_curve_identity(&g), vec![0, 1, 1, 1, 0]);
        let g = SimilarityGraph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(r_curve_identity(&g), vec![0, 1, 1, 1, 0]);
    }

    proptest! {
        #[test]
        fn cbp_is_bijection(m in 2usize..7, block in 1usize..5, seed in any::<u64>()) {
            let n = m * block;
            let a = sample_cbp(n, block, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut sorted = a.pi.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            // Blocks stay contiguous: consecutive positions in a block stay consecutive.
            for v in 0..n {
                let r = (v + n - a.offset) % n;
                if r % block != block - 1 {
                    prop_assert_eq!(a.pi[(v + 1) % n], a.pi[v] + 1);
                }
            }
        }

        #[test]
        fn r_curve_matches_naive(
            m in 2usize..8,
            block in 1usize..4,
            raw in proptest::collection::vec((0usize..100, 0usize..100), 0..25),
            seed in any::<u64>(),
        ) {
            let n = m * block;
            let pairs: HashSet<(usize, usize)> = raw.into_iter()
                .map(|(a, b)| (a % n, b % n))
                .filter(|(a, b)| a != b)
                .map(|(a, b)| (a.min(b), a.max(b)))
                .collect();
            let g = SimilarityGraph::new(n, pairs).unwrap();
            let a = sample_cbp(n, block, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let r = r_curve(&g, &a.pi);
            prop_assert_eq!(r[0], 0);
            prop_assert_eq!(r[n], 0);
            for t in 0..=n {
                prop_assert_eq!(r[t], naive_r(&g, &a.pi, t));
            }
        }
    }
}
