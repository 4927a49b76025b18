//! Lane ranges packed into one atomic word so an owner's claim and a thief's
//! split are each a single compare-and-swap.
//!
//! Layout (low to high): `start` (21 bits), `stop` (21 bits, exclusive),
//! `pos` (21 bits). `pos == IDLE_POS` marks an unused slot.

use std::sync::atomic::{AtomicU64, Ordering};

const BITS: u32 = 21;
const MASK: u64 = (1 << BITS) - 1;
pub(crate) const IDLE_POS: usize = MASK as usize;

/// Largest number of tuples on either side of a workload.
pub const MAX_WORKLOAD_TUPLES: usize = IDLE_POS - 1;

/// Remaining comparisons of one lane, inclusive on both ends; empty when
/// `start == end + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaneRange {
    pub start: usize,
    pub end: usize,
}

impl LaneRange {
    pub fn remaining(&self) -> usize {
        (self.end + 1).saturating_sub(self.start)
    }
}

/// Splits at `mid = floor((start + end) / 2)`: the victim keeps
/// `[start, mid]`, the thief gets `[mid + 1, end]`. `None` below two
/// remaining comparisons.
pub fn split_range(victim: LaneRange) -> Option<(LaneRange, LaneRange)> {
    if victim.remaining() < 2 {
        return None;
    }
    let mid = (victim.start + victim.end) / 2;
    Some((
        LaneRange {
            start: victim.start,
            end: mid,
        },
        LaneRange {
            start: mid + 1,
            end: victim.end,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Packed {
    pub pos: usize,
    pub start: usize,
    pub stop: usize,
}

impl Packed {
    pub const IDLE: Packed = Packed {
        pos: IDLE_POS,
        start: 0,
        stop: 0,
    };

    #[inline]
    fn encode(self) -> u64 {
        debug_assert!(self.start as u64 <= MASK && self.stop as u64 <= MASK && self.pos as u64 <= MASK);
        self.start as u64 | (self.stop as u64) << BITS | (self.pos as u64) << (2 * BITS)
    }

    #[inline]
    fn decode(w: u64) -> Self {
        Packed {
            start: (w & MASK) as usize,
            stop: ((w >> BITS) & MASK) as usize,
            pos: ((w >> (2 * BITS)) & MASK) as usize,
        }
    }

    #[inline]
    pub fn remaining(self) -> usize {
        self.stop.saturating_sub(self.start)
    }
}

#[derive(Debug)]
pub(crate) struct LaneSlot(AtomicU64);

impl LaneSlot {
    pub fn idle() -> Self {
        LaneSlot(AtomicU64::new(Packed::IDLE.encode()))
    }

    #[inline]
    pub fn load(&self) -> Packed {
        Packed::decode(self.0.load(Ordering::Acquire))
    }

    /// Only the owning block stores, and only into a drained slot.
    pub fn install(&self, p: Packed) {
        self.0.store(p.encode(), Ordering::Release);
    }

    /// Owner side: takes up to `max` comparisons from the front.
    #[inline]
    pub fn claim_front(&self, max: usize) -> Option<(usize, usize, usize)> {
        let mut cur = self.0.load(Ordering::Acquire);
        loop {
            let p = Packed::decode(cur);
            if p.pos == IDLE_POS || p.start >= p.stop {
                return None;
            }
            let take = max.min(p.stop - p.start);
            let next = Packed {
                start: p.start + take,
                ..p
            };
            match self
                .0
                .compare_exchange_weak(cur, next.encode(), Ordering::AcqRel, Ordering::Acquire)
            {
                Ok(_) => return Some((p.pos, p.start, p.start + take)),
                Err(actual) => cur = actual,
            }
        }
    }

    /// Thief side: removes the upper half of the remaining range.
    pub fn steal_half(&self) -> Option<Packed> {
        let mut cur = self.0.load(Ordering::Acquire);
        loop {
            let p = Packed::decode(cur);
            if p.pos == IDLE_POS {
                return None;
            }
            let (kept, stolen) = split_range(LaneRange {
                start: p.start,
                end: p.stop.checked_sub(1)?,
            })?;
            let next = Packed {
                stop: kept.end + 1,
                ..p
            };
            match self
                .0
                .compare_exchange_weak(cur, next.encode(), Ordering::AcqRel, Ordering::Acquire)
            {
                Ok(_) => {
                    return Some(Packed {
                        pos: p.pos,
                        start: stolen.start,
                        stop: stolen.end + 1,
                    })
                }
                Err(actual) => cur = actual,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    #[test]
    fn split_examples() {
        let r = |start, end| LaneRange { start, end };
        assert_eq!(split_range(r(0, 100)), Some((r(0, 50), r(51, 100))));
        assert_eq!(split_range(r(99, 100)), Some((r(99, 99), r(100, 100))));
        assert_eq!(split_range(r(5, 5)), None);
        assert_eq!(split_range(r(6, 5)), None);
    }

    #[test]
    fn pack_round_trip() {
        let p = Packed {
            pos: 1234,
            start: MAX_WORKLOAD_TUPLES,
            stop: 7,
        };
        assert_eq!(Packed::decode(p.encode()), p);
    }

    #[test]
    fn concurrent_claims_and_steals_cover_each_index_once() {
        const N: usize = 200_000;
        let slot = Arc::new(LaneSlot::idle());
        slot.install(Packed { pos: 3, start: 0, stop: N });
        let seen: Arc<Vec<AtomicUsize>> = Arc::new((0..N).map(|_| AtomicUsize::new(0)).collect());
        std::thread::scope(|s| {
            let (slot2, seen2) = (slot.clone(), seen.clone());
            s.spawn(move || {
                while let Some((_, a, b)) = slot2.claim_front(3) {
                    for i in a..b {
                        seen2[i].fetch_add(1, Ordering::Relaxed);
                    }
                }
            });
            for _ in 0..3 {
                let (slot3, seen3) = (slot.clone(), seen.clone());
                s.spawn(move || {
                    while let Some(p) = slot3.steal_half() {
                        let own = LaneSlot::idle();
                        own.install(p);
                        while let Some((_, a, b)) = own.claim_front(5) {
                            for i in a..b {
                                seen3[i].fetch_add(1, Ordering::Relaxed);
                            }
                        }
                    }
                });
            }
        });
        assert!(seen.iter().all(|c| c.load(Ordering::Relaxed) == 1));
    }
}
