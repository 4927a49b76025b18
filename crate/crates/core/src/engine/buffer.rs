//! Result buffering: each block fills one half of a two-half local buffer
//! while the other half is flushed into a shared sink. A flush reserves its
//! region with a single `fetch_add` on the sink's write offset.

use std::sync::atomic::{AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::OnceLock;

/// One emitted candidate: global tids and the witness rule index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CandidatePair {
    pub t: usize,
    pub s: usize,
    pub rule: usize,
}

const FIRST_BUCKET: usize = 1024;
const BUCKETS: usize = 40;

#[derive(Debug)]
struct Cell {
    pair: AtomicU64,
    rule: AtomicU32,
}

/// Append-only concurrent sink in geometrically growing segments, so
/// reservations never move existing entries.
#[derive(Debug)]
pub struct ResultSink {
    next: AtomicUsize,
    buckets: Vec<OnceLock<Box<[Cell]>>>,
}

impl Default for ResultSink {
    fn default() -> Self {
        ResultSink {
            next: AtomicUsize::new(0),
            buckets: (0..BUCKETS).map(|_| OnceLock::new()).collect(),
        }
    }
}

fn locate(idx: usize) -> (usize, usize) {
    let q = idx / FIRST_BUCKET + 1;
    let b = (usize::BITS - 1 - q.leading_zeros()) as usize;
    (b, idx - FIRST_BUCKET * ((1 << b) - 1))
}

impl ResultSink {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reserves `n` consecutive cells and returns the first index.
    pub fn reserve(&self, n: usize) -> usize {
        self.next.fetch_add(n, Ordering::Relaxed)
    }

    fn cell(&self, idx: usize) -> &Cell {
        let (b, off) = locate(idx);
        let bucket = self.buckets[b].get_or_init(|| {
            (0..FIRST_BUCKET << b)
                .map(|_| Cell {
                    pair: AtomicU64::new(0),
                    rule: AtomicU32::new(0),
                })
                .collect()
        });
        &bucket[off]
    }

    pub fn write(&self, idx: usize, c: CandidatePair) {
        let cell = self.cell(idx);
        cell.pair.store((c.t as u64) << 32 | c.s as u64, Ordering::Relaxed);
        cell.rule.store(c.rule as u32, Ordering::Relaxed);
    }

    pub fn len(&self) -> usize {
        self.next.load(Ordering::Acquire)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Collects all entries; call after every writer has finished.
    pub fn into_vec(self) -> Vec<CandidatePair> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let cell = self.cell(i);
                let p = cell.pair.load(Ordering::Relaxed);
                CandidatePair {
                    t: (p >> 32) as usize,
                    s: (p & 0xffff_ffff) as usize,
                    rule: cell.rule.load(Ordering::Relaxed) as usize,
                }
            })
            .collect()
    }
}

/// Two-half block-local buffer.
#[derive(Debug)]
pub struct BlockBuffer {
    halves: [Vec<CandidatePair>; 2],
    active: usize,
    half_capacity: usize,
    pub flushes: usize,
}

impl BlockBuffer {
    pub fn new(half_capacity: usize) -> Self {
        let half_capacity = half_capacity.max(1);
        BlockBuffer {
            halves: [Vec::with_capacity(half_capacity), Vec::with_capacity(half_capacity)],
            active: 0,
            half_capacity,
            flushes: 0,
        }
    }

    #[inline]
    pub fn push(&mut self, c: CandidatePair, sink: &ResultSink) {
        self.halves[self.active].push(c);
        if self.halves[self.active].len() == self.half_capacity {
            let full = self.active;
            self.active ^= 1;
            self.flush_half(full, sink);
        }
    }

    fn flush_half(&mut self, half: usize, sink: &ResultSink) {
        let buf = &mut self.halves[half];
        if buf.is_empty() {
            return;
        }
        let base = sink.reserve(buf.len());
        for (k, c) in buf.drain(..).enumerate() {
            sink.write(base + k, c);
        }
        self.flushes += 1;
    }

    /// Flushes whatever remains in both halves.
    pub fn finish(&mut self, sink: &ResultSink) {
        let other = self.active ^ 1;
        self.flush_half(other, sink);
        self.flush_half(self.active, sink);
    }
}

/// Writes `results` into `sink` as one reservation; nothing is reserved for
/// an empty batch.
pub fn flush_results(results: &[CandidatePair], sink: &ResultSink) -> Option<usize> {
    if results.is_empty() {
        return None;
    }
    let base = sink.reserve(results.len());
    for (k, c) in results.iter().enumerate() {
        sink.write(base + k, *c);
    }
    Some(base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locate_is_contiguous() {
        assert_eq!(locate(0), (0, 0));
        assert_eq!(locate(1023), (0, 1023));
        assert_eq!(locate(1024), (1, 0));
        assert_eq!(locate(3071), (1, 2047));
        assert_eq!(locate(3072), (2, 0));
    }

    #[test]
    fn empty_flush_reserves_nothing() {
        let sink = ResultSink::new();
        assert_eq!(flush_results(&[], &sink), None);
        let mut b = BlockBuffer::new(4);
        b.finish(&sink);
        assert_eq!(b.flushes, 0);
        assert!(sink.is_empty());
    }

    #[test]
    fn concurrent_flushes_keep_every_result() {
        let sink = ResultSink::new();
        const PER: usize = 50_000;
        std::thread::scope(|s| {
            for b in 0..8usize {
                let sink = &sink;
                s.spawn(move || {
                    let mut buf = BlockBuffer::new(37);
                    for i in 0..PER {
                        buf.push(CandidatePair { t: b, s: i, rule: i % 5 }, sink);
                    }
                    buf.finish(sink);
                });
            }
        });
        let mut v = sink.into_vec();
        assert_eq!(v.len(), 8 * PER);
        v.sort();
        v.dedup();
        assert_eq!(v.len(), 8 * PER);
        assert!(v.iter().all(|c| c.rule == c.s % 5));
    }
}
