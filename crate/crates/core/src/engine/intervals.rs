//! Interval table: fixed-width slices of outer tuples claimed with a
//! test-and-set on a shared bitmap.
//!
//! Interval `i` is statically assigned to block `(i mod n_w) mod num_blocks`.
//! A block walks its own intervals window by window; once they are all gone
//! it may scan the bitmap for any unclaimed interval.

use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug)]
pub struct IntervalTable {
    n_tuples: usize,
    n_t: usize,
    n_w: usize,
    num_blocks: usize,
    claimed: Vec<AtomicU64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Claim {
    pub interval: usize,
    pub stolen: bool,
}

/// Per-block walk over its statically assigned intervals.
#[derive(Debug, Clone, Default)]
pub struct BlockCursor {
    window: usize,
    /// Next offset inside the window, stepping by `num_blocks`.
    offset: Option<usize>,
    /// Window of the last own claim, for counting index jumps.
    last_window: Option<usize>,
    pub window_jumps: usize,
    steal_scan: usize,
}

impl IntervalTable {
    pub fn new(n_tuples: usize, n_t: usize, n_w: usize, num_blocks: usize) -> Self {
        assert!(n_t > 0 && n_w > 0 && num_blocks > 0);
        let n = n_tuples.div_ceil(n_t);
        IntervalTable {
            n_tuples,
            n_t,
            n_w,
            num_blocks,
            claimed: (0..n.div_ceil(64)).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.n_tuples.div_ceil(self.n_t)
    }

    pub fn is_empty(&self) -> bool {
        self.n_tuples == 0
    }

    /// Outer positions `[start, end)` of interval `i`.
    pub fn bounds(&self, i: usize) -> (usize, usize) {
        let start = i * self.n_t;
        (start, (start + self.n_t).min(self.n_tuples))
    }

    pub fn owner(&self, i: usize) -> usize {
        (i % self.n_w) % self.num_blocks
    }

    /// Intervals statically assigned to `block`, in claim order.
    pub fn assigned(&self, block: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.owner(i) == block).collect()
    }

    /// Test-and-set; true if this call claimed `i`.
    pub fn try_claim(&self, i: usize) -> bool {
        let bit = 1u64 << (i % 64);
        self.claimed[i / 64].fetch_or(bit, Ordering::AcqRel) & bit == 0
    }

    pub fn is_claimed(&self, i: usize) -> bool {
        self.claimed[i / 64].load(Ordering::Acquire) & (1u64 << (i % 64)) != 0
    }

    /// Next own unclaimed interval, else (if `steal`) any unclaimed interval.
    pub fn claim_interval(&self, block: usize, cursor: &mut BlockCursor, steal: bool) -> Option<Claim> {
        let total = self.len();
        loop {
            let off = *cursor.offset.get_or_insert(block);
            if off >= self.n_w || block >= self.n_w {
                cursor.window += 1;
                cursor.offset = Some(block);
                if cursor.window * self.n_w >= total {
                    break;
                }
                continue;
            }
            let i = cursor.window * self.n_w + off;
            if i >= total {
                break;
            }
            cursor.offset = Some(off + self.num_blocks);
            if self.try_claim(i) {
                if cursor.last_window != Some(cursor.window) {
                    cursor.window_jumps += 1;
                    cursor.last_window = Some(cursor.window);
                }
                return Some(Claim { interval: i, stolen: false });
            }
        }
        if !steal {
            return None;
        }
        while cursor.steal_scan < total {
            let i = cursor.steal_scan;
            cursor.steal_scan += 1;
            if !self.is_claimed(i) && self.try_claim(i) {
                return Some(Claim { interval: i, stolen: true });
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_assignment() {
        // 9 intervals, windows of 3, 3 blocks.
        let t = IntervalTable::new(9 * 4, 4, 3, 3);
        assert_eq!(t.assigned(1), vec![1, 4, 7]);
        assert_eq!(t.assigned(0), vec![0, 3, 6]);
    }

    #[test]
    fn more_blocks_than_window() {
        let t = IntervalTable::new(100, 10, 2, 4);
        assert!(t.assigned(3).is_empty());
        let mut c = BlockCursor::default();
        assert_eq!(t.claim_interval(3, &mut c, false), None);
        assert_eq!(t.claim_interval(3, &mut c, true), Some(Claim { interval: 0, stolen: true }));
    }

    #[test]
    fn own_then_steal() {
        let t = IntervalTable::new(50, 10, 4, 2);
        let mut c0 = BlockCursor::default();
        let own: Vec<usize> = std::iter::from_fn(|| t.claim_interval(0, &mut c0, false))
            .map(|c| c.interval)
            .collect();
        assert_eq!(own, vec![0, 2, 4]);
        assert_eq!(c0.window_jumps, 2);
        let mut c0b = c0.clone();
        assert_eq!(t.claim_interval(0, &mut c0b, true), Some(Claim { interval: 1, stolen: true }));
        let mut c1 = BlockCursor::default();
        assert_eq!(t.claim_interval(1, &mut c1, false), Some(Claim { interval: 3, stolen: false }));
        assert_eq!(t.claim_interval(1, &mut c1, false), None);
    }

    #[test]
    fn concurrent_claims_are_exclusive() {
        let t = IntervalTable::new(100_000, 7, 16, 4);
        let got: Vec<Vec<usize>> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..4)
                .map(|b| {
                    let t = &t;
                    s.spawn(move || {
                        let mut c = BlockCursor::default();
                        std::iter::from_fn(|| t.claim_interval(b, &mut c, true))
                            .map(|c| c.interval)
                            .collect()
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let mut all: Vec<usize> = got.into_iter().flatten().collect();
        all.sort();
        assert_eq!(all, (0..t.len()).collect::<Vec<_>>());
    }
}
