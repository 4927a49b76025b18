//! Consistent hashing with bounded loads.
//!
//! Devices sit at several pseudo-random points on a unit ring; a task hashes
//! to a point and walks clockwise to the first device whose load is below
//! its capacity. Capacity is either fixed or `ceil(load_factor * total /
//! devices)`, with `total` the work assigned so far including this task.
//! When every device is full the least-loaded one takes the task.

use crate::epg::selectivity::mix64;

const VIRTUAL_NODES: usize = 16;

fn unit(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    ring: Vec<(f64, usize)>,
    loads: Vec<u64>,
    total: u64,
    capacity: Option<u64>,
    load_factor: f64,
    seed: u64,
    pub overflows: usize,
}

impl Scheduler {
    pub fn new(devices: usize, capacity: Option<u64>, load_factor: f64, seed: u64) -> Self {
        assert!(devices > 0, "at least one device");
        let mut ring: Vec<(f64, usize)> = (0..devices)
            .flat_map(|d| {
                (0..VIRTUAL_NODES).map(move |v| (unit(mix64(seed ^ mix64(((d as u64) << 32) | v as u64))), d))
            })
            .collect();
        ring.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Scheduler {
            ring,
            loads: vec![0; devices],
            total: 0,
            capacity,
            load_factor: load_factor.max(1.0),
            seed,
            overflows: 0,
        }
    }

    pub fn loads(&self) -> &[u64] {
        &self.loads
    }

    /// Ring position of a task key.
    pub fn position(&self, key: u64) -> f64 {
        unit(mix64(self.seed ^ mix64(key ^ 0x7061_7274)))
    }

    /// Assigns a task of weight `work` keyed by `key`.
    pub fn assign(&mut self, key: u64, work: u64) -> usize {
        let d = self.loads.len() as u64;
        self.total += work;
        let cap = self
            .capacity
            .unwrap_or_else(|| ((self.load_factor * self.total as f64) / d as f64).ceil() as u64);
        let pos = self.position(key);
        let start = self.ring.partition_point(|&(p, _)| p < pos);
        let n = self.ring.len();
        let chosen = (0..n)
            .map(|k| self.ring[(start + k) % n].1)
            .find(|&dev| self.loads[dev] < cap)
            .unwrap_or_else(|| {
                self.overflows += 1;
                let least = (0..self.loads.len()).min_by_key(|&i| (self.loads[i], i)).expect("devices");
                log::warn!("no device under capacity {cap} for task {key}; using least loaded device {least}");
                least
            });
        self.loads[chosen] += work;
        chosen
    }

    /// Adds work to a device outside the ring walk (pulls follow their owner).
    pub fn charge(&mut self, device: usize, work: u64) {
        self.total += work;
        self.loads[device] += work;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    /// Device per task.
    pub device: Vec<usize>,
    pub loads: Vec<u64>,
}

/// Batch form: tasks `(key, work)` assigned in the given order.
pub fn schedule(tasks: &[(u64, u64)], devices: usize, capacity: Option<u64>, load_factor: f64, seed: u64) -> Schedule {
    let mut s = Scheduler::new(devices, capacity, load_factor, seed);
    let device = tasks.iter().map(|&(k, w)| s.assign(k, w)).collect();
    Schedule {
        device,
        loads: s.loads().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic_for_seed() {
        let tasks: Vec<(u64, u64)> = (0..200).map(|i| (i, 1 + i % 7)).collect();
        assert_eq!(schedule(&tasks, 4, None, 1.25, 9), schedule(&tasks, 4, None, 1.25, 9));
    }

    #[test]
    fn single_device_takes_everything() {
        let s = schedule(&[(1, 5), (2, 3)], 1, None, 1.25, 0);
        assert_eq!(s.device, vec![0, 0]);
        assert_eq!(s.loads, vec![8]);
    }

    #[test]
    fn full_device_is_skipped_clockwise() {
        let mut s = Scheduler::new(3, Some(10), 1.0, 4);
        let key = 77;
        let pos = s.position(key);
        let start = s.ring.partition_point(|&(p, _)| p < pos);
        let n = s.ring.len();
        let nearest = s.ring[start % n].1;
        let next = (0..n).map(|k| s.ring[(start + k) % n].1).find(|&d| d != nearest).unwrap();
        s.loads[nearest] = 10;
        assert_eq!(s.assign(key, 1), next);
        assert_eq!(s.overflows, 0);
    }

    #[test]
    fn all_full_falls_back_to_least_loaded() {
        let mut s = Scheduler::new(3, Some(5), 1.0, 4);
        s.loads = vec![7, 5, 9];
        assert_eq!(s.assign(1, 2), 1);
        assert_eq!(s.overflows, 1);
    }

    proptest! {
        #[test]
        fn loads_respect_the_bound(
            works in proptest::collection::vec(1u64..10, 1..300),
            devices in 1usize..9,
            seed in any::<u64>(),
        ) {
            let tasks: Vec<(u64, u64)> = works.iter().enumerate().map(|(i, &w)| (i as u64, w)).collect();
            let s = schedule(&tasks, devices, None, 1.25, seed);
            let total: u64 = works.iter().sum();
            let max_w = *works.iter().max().unwrap();
            let cap = (1.25 * total as f64 / devices as f64).ceil() as u64;
            for &l in &s.loads {
                prop_assert!(l <= cap + max_w);
            }
            prop_assert_eq!(s.loads.iter().sum::<u64>(), total);
        }
    }
}
