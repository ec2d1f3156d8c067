//! Seen/unseen bucket assignment.
//!
//! | id | name    | rule                              |
//! |----|---------|-----------------------------------|
//! | 1  | Overall | every pair                        |
//! | 2  | Seen    | pair appeared in training         |
//! | 3  | Unseen  | pair did not                      |
//! | 4  | q+, p+  | unseen pair, seen query, seen product |
//! | 5  | q+, p-  | unseen pair, seen query only      |
//! | 6  | q-, p+  | unseen pair, seen product only    |
//! | 7  | q-, p-  | neither seen                      |

use std::collections::HashSet;
use std::fmt;

use super::judgments::{Judgments, VisibilityManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BucketId {
    Overall = 1,
    Seen = 2,
    Unseen = 3,
    QSeenPSeen = 4,
    QSeenPUnseen = 5,
    QUnseenPSeen = 6,
    QUnseenPUnseen = 7,
}

impl BucketId {
    pub const ALL: [BucketId; 7] = [
        BucketId::Overall,
        BucketId::Seen,
        BucketId::Unseen,
        BucketId::QSeenPSeen,
        BucketId::QSeenPUnseen,
        BucketId::QUnseenPSeen,
        BucketId::QUnseenPUnseen,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<BucketId> {
        Self::ALL.get(i.wrapping_sub(1)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BucketId::Overall => "Overall",
            BucketId::Seen => "Seen",
            BucketId::Unseen => "Unseen",
            BucketId::QSeenPSeen => "q+, p+",
            BucketId::QSeenPUnseen => "q+, p-",
            BucketId::QUnseenPSeen => "q-, p+",
            BucketId::QUnseenPUnseen => "q-, p-",
        }
    }
}

impl fmt::Display for BucketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// A set of bucket ids as a bitmask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct BucketSet(u8);

impl BucketSet {
    pub fn contains(self, b: BucketId) -> bool {
        self.0 & (1 << b.index()) != 0
    }

    pub fn insert(&mut self, b: BucketId) {
        self.0 |= 1 << b.index();
    }

    pub fn iter(self) -> impl Iterator<Item = BucketId> {
        BucketId::ALL.into_iter().filter(move |&b| self.contains(b))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn of<I: IntoIterator<Item = BucketId>>(ids: I) -> Self {
        let mut s = BucketSet::default();
        for b in ids {
            s.insert(b);
        }
        s
    }
}

/// Buckets for one pair from its visibility flags.
pub fn classify(pair_seen: bool, query_seen: bool, product_seen: bool) -> BucketSet {
    let mut s = BucketSet::default();
    s.insert(BucketId::Overall);
    if pair_seen {
        s.insert(BucketId::Seen);
        return s;
    }
    s.insert(BucketId::Unseen);
    s.insert(match (query_seen, product_seen) {
        (true, true) => BucketId::QSeenPSeen,
        (true, false) => BucketId::QSeenPUnseen,
        (false, true) => BucketId::QUnseenPSeen,
        (false, false) => BucketId::QUnseenPUnseen,
    });
    s
}

/// Visibility of each judged query and product, resolved to judgment ids.
#[derive(Debug, Clone)]
pub struct BucketAssignment {
    query_seen: Vec<bool>,
    product_seen: Vec<bool>,
    seen_pairs: HashSet<(u32, u32)>,
}

impl BucketAssignment {
    pub fn buckets(&self, q: u32, p: u32) -> BucketSet {
        classify(
            self.seen_pairs.contains(&(q, p)),
            self.query_seen[q as usize],
            self.product_seen[p as usize],
        )
    }

    pub fn query_seen(&self, q: u32) -> bool {
        self.query_seen[q as usize]
    }

    pub fn product_seen(&self, p: u32) -> bool {
        self.product_seen[p as usize]
    }

    /// Pair count per bucket, indexed by `BucketId::index() - 1`.
    pub fn counts(&self, j: &Judgments) -> [u64; 7] {
        let mut counts = [0u64; 7];
        if j.is_exhaustive() {
            // Closed form: avoids walking |Q|·|P| pairs.
            let nq_seen = self.query_seen.iter().filter(|&&s| s).count() as u64;
            let np_seen = self.product_seen.iter().filter(|&&s| s).count() as u64;
            let nq = self.query_seen.len() as u64;
            let np = self.product_seen.len() as u64;
            let seen = self.seen_pairs.len() as u64;
            counts[0] = nq * np;
            counts[1] = seen;
            counts[2] = nq * np - seen;
            counts[3] = nq_seen * np_seen - seen;
            counts[4] = nq_seen * (np - np_seen);
            counts[5] = (nq - nq_seen) * np_seen;
            counts[6] = (nq - nq_seen) * (np - np_seen);
            return counts;
        }
        for (q, p, _) in j.pairs() {
            for b in self.buckets(q, p).iter() {
                counts[b.index() - 1] += 1;
            }
        }
        counts
    }
}

/// Resolves the manifest against the judgment set's ids.
pub fn assign_buckets(j: &Judgments, v: &VisibilityManifest) -> BucketAssignment {
    let query_seen = j.queries().iter().map(|q| v.seen_queries.contains(q)).collect();
    let product_seen = j.products().iter().map(|p| v.seen_products.contains(p)).collect();
    let seen_pairs = v
        .seen_pairs
        .iter()
        .filter_map(|(q, p)| Some((j.query_id(q)?, j.product_id(p)?)))
        .collect();
    BucketAssignment {
        query_seen,
        product_seen,
        seen_pairs,
    }
}

/// Percent of the overall bucket held by each bucket.
pub fn ratios(counts: &[u64; 7]) -> [f64; 7] {
    let total = counts[0] as f64;
    let mut r = [0.0; 7];
    if total > 0.0 {
        for (ri, &c) in r.iter_mut().zip(counts) {
            *ri = 100.0 * c as f64 / total;
        }
    }
    r
}
