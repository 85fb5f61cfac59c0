//! Ring collectives over in-process simulated devices.
//!
//! Each call moves data step by step exactly as the ring algorithm does and
//! meters the bytes every member sends and receives. Values are `f64`; bytes
//! are accounted at a configurable element size so the meters can model FP16
//! traffic while the arithmetic stays in double precision.
//!
//! Tensors are split with the contiguous shard rule of [`shard_ranges`]. When
//! `N` divides the length every member sends exactly `(N−1)/N·|T|` per ring
//! pass; otherwise individual members differ by at most one element per pass
//! and the group mean is still exact.

use std::ops::Range;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::CollectiveError;

/// Contiguous shards of `len` elements over `n` parts: the first `len % n`
/// parts get `⌈len/n⌉` elements, the rest `⌊len/n⌋`.
pub fn shard_ranges(len: usize, n: usize) -> Vec<Range<usize>> {
    assert!(n > 0, "cannot shard over zero devices");
    let base = len / n;
    let extra = len % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let size = base + usize::from(i < extra);
        out.push(start..start + size);
        start += size;
    }
    out
}

/// Range of shard `i` of `n`.
pub fn shard_range(len: usize, n: usize, i: usize) -> Range<usize> {
    shard_ranges(len, n).swap_remove(i)
}

/// A tensor held by one member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Buffer {
    pub elements: Vec<f64>,
    /// Bytes per element for accounting only.
    pub element_size: u64,
}

impl Buffer {
    pub fn new(elements: Vec<f64>, element_size: u64) -> Self {
        Buffer {
            elements,
            element_size,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn byte_len(&self) -> u64 {
        self.elements.len() as u64 * self.element_size
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counter {
    pub sent_bytes: u64,
    pub received_bytes: u64,
}

/// An ordered set of devices forming a ring, with per-member byte meters.
///
/// Member `k` sends to member `(k + 1) % N`.
#[derive(Clone, Debug)]
pub struct DeviceGroup {
    members: Vec<usize>,
    counters: Vec<Counter>,
}

impl DeviceGroup {
    pub fn new(members: Vec<usize>) -> Result<Self, CollectiveError> {
        let mut sorted = members.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if members.is_empty() || sorted.len() != members.len() {
            return Err(CollectiveError::InvalidGroup(members));
        }
        let counters = vec![Counter::default(); members.len()];
        Ok(DeviceGroup { members, counters })
    }

    /// Devices `0..n`.
    pub fn contiguous(n: usize) -> Self {
        DeviceGroup::new((0..n).collect()).expect("0..n is a valid group")
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn counters(&self) -> &[Counter] {
        &self.counters
    }

    pub fn sent_bytes(&self) -> Vec<u64> {
        self.counters.iter().map(|c| c.sent_bytes).collect()
    }

    /// Mean sent bytes per member, exactly.
    pub fn mean_sent_bytes(&self) -> Ratio<i128> {
        let total: u64 = self.counters.iter().map(|c| c.sent_bytes).sum();
        Ratio::new(total as i128, self.size() as i128)
    }

    pub fn reset_counters(&mut self) {
        self.counters.iter_mut().for_each(|c| *c = Counter::default());
    }

    fn check_members(&self, got: usize) -> Result<(), CollectiveError> {
        if got != self.size() {
            return Err(CollectiveError::MemberCount {
                expected: self.size(),
                got,
            });
        }
        Ok(())
    }

    fn common_element_size(buffers: &[Buffer]) -> Result<u64, CollectiveError> {
        let sizes: Vec<u64> = buffers.iter().map(|b| b.element_size).collect();
        if sizes.windows(2).any(|w| w[0] != w[1]) {
            return Err(CollectiveError::ElementSizeMismatch(sizes));
        }
        Ok(sizes[0])
    }

    fn record(&mut self, from: usize, elements: usize, element_size: u64) {
        let n = self.size();
        let bytes = elements as u64 * element_size;
        self.counters[from].sent_bytes += bytes;
        self.counters[(from + 1) % n].received_bytes += bytes;
    }

    /// Sum of all buffers, left on every member.
    ///
    /// Ring reduce-scatter followed by ring all-gather. The reduced chunk `c`
    /// accumulates in ring order starting at member `c + 1`, so the result
    /// is bitwise identical on every member and across runs.
    pub fn all_reduce(&mut self, buffers: &mut [Buffer]) -> Result<(), CollectiveError> {
        self.check_members(buffers.len())?;
        let len = buffers[0].len();
        if buffers.iter().any(|b| b.len() != len) {
            return Err(CollectiveError::LengthMismatch(
                buffers.iter().map(Buffer::len).collect(),
            ));
        }
        let element_size = Self::common_element_size(buffers)?;
        let n = self.size();
        if n == 1 {
            return Ok(());
        }
        let chunks = shard_ranges(len, n);
        let mut work: Vec<Vec<f64>> = buffers.iter().map(|b| b.elements.clone()).collect();
        self.ring_reduce_scatter(&mut work, &chunks, element_size);
        let shards: Vec<Vec<f64>> = (0..n).map(|i| work[i][chunks[i].clone()].to_vec()).collect();
        let full = self.ring_all_gather(&shards, element_size);
        for (buf, out) in buffers.iter_mut().zip(full) {
            buf.elements = out;
        }
        Ok(())
    }

    /// Shard `i` of the sum on member `i`.
    pub fn reduce_scatter(&mut self, buffers: &[Buffer]) -> Result<Vec<Buffer>, CollectiveError> {
        self.check_members(buffers.len())?;
        let len = buffers[0].len();
        if buffers.iter().any(|b| b.len() != len) {
            return Err(CollectiveError::LengthMismatch(
                buffers.iter().map(Buffer::len).collect(),
            ));
        }
        let element_size = Self::common_element_size(buffers)?;
        let n = self.size();
        let chunks = shard_ranges(len, n);
        let mut work: Vec<Vec<f64>> = buffers.iter().map(|b| b.elements.clone()).collect();
        if n > 1 {
            self.ring_reduce_scatter(&mut work, &chunks, element_size);
        }
        Ok((0..n)
            .map(|i| Buffer::new(work[i][chunks[i].clone()].to_vec(), element_size))
            .collect())
    }

    /// Concatenation of all shards, in member order, on every member.
    ///
    /// Shard lengths must follow [`shard_ranges`] for their total length.
    pub fn all_gather(&mut self, shards: &[Buffer]) -> Result<Vec<Buffer>, CollectiveError> {
        self.check_members(shards.len())?;
        let element_size = Self::common_element_size(shards)?;
        let got: Vec<usize> = shards.iter().map(Buffer::len).collect();
        let total: usize = got.iter().sum();
        let expected: Vec<usize> = shard_ranges(total, self.size()).iter().map(|r| r.len()).collect();
        if got != expected {
            return Err(CollectiveError::ShardShapeMismatch { expected, got });
        }
        let parts: Vec<Vec<f64>> = shards.iter().map(|s| s.elements.clone()).collect();
        let full = if self.size() == 1 {
            parts
        } else {
            self.ring_all_gather(&parts, element_size)
        };
        Ok(full.into_iter().map(|e| Buffer::new(e, element_size)).collect())
    }

    /// After `N−1` steps member `i` holds the reduced chunk `i`.
    ///
    /// At step `s`, member `i` forwards its partial of chunk `(i − s − 1) mod N`
    /// to member `i + 1`, which adds its own contribution.
    fn ring_reduce_scatter(&mut self, work: &mut [Vec<f64>], chunks: &[Range<usize>], element_size: u64) {
        let n = self.size();
        for step in 0..n - 1 {
            let sends: Vec<(usize, usize, Vec<f64>)> = (0..n)
                .map(|i| {
                    let c = (i + 2 * n - step - 1) % n;
                    (i, c, work[i][chunks[c].clone()].to_vec())
                })
                .collect();
            for (from, c, payload) in sends {
                self.record(from, payload.len(), element_size);
                let to = (from + 1) % n;
                let dst = &mut work[to][chunks[c].clone()];
                for (d, p) in dst.iter_mut().zip(payload) {
                    *d = p + *d;
                }
            }
        }
    }

    /// At step `s`, member `i` forwards shard `(i − s) mod N` to member `i + 1`.
    fn ring_all_gather(&mut self, shards: &[Vec<f64>], element_size: u64) -> Vec<Vec<f64>> {
        let n = self.size();
        let mut have: Vec<Vec<Option<Vec<f64>>>> = (0..n)
            .map(|i| {
                let mut v = vec![None; n];
                v[i] = Some(shards[i].clone());
                v
            })
            .collect();
        for step in 0..n - 1 {
            let sends: Vec<(usize, usize, Vec<f64>)> = (0..n)
                .map(|i| {
                    let c = (i + n - step) % n;
                    let payload = have[i][c].clone().expect("ring invariant: shard arrived last step");
                    (i, c, payload)
                })
                .collect();
            for (from, c, payload) in sends {
                self.record(from, payload.len(), element_size);
                have[(from + 1) % n][c] = Some(payload);
            }
        }
        have.into_iter()
            .map(|parts| parts.into_iter().flat_map(|p| p.expect("all shards gathered")).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bufs(data: &[&[f64]], es: u64) -> Vec<Buffer> {
        data.iter().map(|d| Buffer::new(d.to_vec(), es)).collect()
    }

    #[test]
    fn shard_rule() {
        let r = shard_ranges(10, 4);
        assert_eq!(r, vec![0..3, 3..6, 6..8, 8..10]);
        assert_eq!(shard_ranges(2, 4).iter().map(|r| r.len()).collect::<Vec<_>>(), vec![1, 1, 0, 0]);
        assert_eq!(shard_range(10, 4, 2), 6..8);
    }

    #[test]
    fn all_reduce_two_members() {
        let mut g = DeviceGroup::contiguous(2);
        let mut b = bufs(&[&[1.0, 2.0], &[3.0, 4.0]], 8);
        g.all_reduce(&mut b).unwrap();
        assert_eq!(b[0].elements, vec![4.0, 6.0]);
        assert_eq!(b[1].elements, vec![4.0, 6.0]);
    }

    #[test]
    fn all_reduce_bytes_n4() {
        // 512 FP16 elements = 1024 bytes; 2·(3/4)·1024 = 1536
        let mut g = DeviceGroup::contiguous(4);
        let mut b: Vec<Buffer> = (0..4).map(|i| Buffer::new(vec![i as f64; 512], 2)).collect();
        g.all_reduce(&mut b).unwrap();
        assert!(g.sent_bytes().iter().all(|&s| s == 1536));
        assert!(g.counters().iter().all(|c| c.received_bytes == 1536));
    }

    #[test]
    fn single_member_is_noop() {
        let mut g = DeviceGroup::contiguous(1);
        let mut b = bufs(&[&[1.5, -2.0]], 4);
        g.all_reduce(&mut b).unwrap();
        assert_eq!(b[0].elements, vec![1.5, -2.0]);
        assert_eq!(g.sent_bytes(), vec![0]);
        let rs = g.reduce_scatter(&b).unwrap();
        assert_eq!(rs[0].elements, vec![1.5, -2.0]);
        assert_eq!(g.sent_bytes(), vec![0]);
    }

    #[test]
    fn reduce_scatter_and_gather() {
        let mut g = DeviceGroup::contiguous(2);
        let rs = g.reduce_scatter(&bufs(&[&[1.0, 2.0], &[3.0, 4.0]], 8)).unwrap();
        assert_eq!(rs[0].elements, vec![4.0]);
        assert_eq!(rs[1].elements, vec![6.0]);

        let mut g = DeviceGroup::contiguous(2);
        let ag = g.all_gather(&bufs(&[&[1.0], &[2.0]], 8)).unwrap();
        assert!(ag.iter().all(|b| b.elements == vec![1.0, 2.0]));

        let mut g = DeviceGroup::contiguous(4);
        let b: Vec<Buffer> = (0..4).map(|_| Buffer::new(vec![1.0; 512], 2)).collect();
        g.reduce_scatter(&b).unwrap();
        assert!(g.sent_bytes().iter().all(|&s| s == 768));
    }

    #[test]
    fn errors() {
        let mut g = DeviceGroup::contiguous(2);
        let mut b = bufs(&[&[1.0, 2.0], &[3.0]], 8);
        assert!(matches!(g.all_reduce(&mut b), Err(CollectiveError::LengthMismatch(_))));
        let b = bufs(&[&[1.0], &[3.0, 4.0]], 8);
        assert!(matches!(g.all_gather(&b), Err(CollectiveError::ShardShapeMismatch { .. })));
        let b = bufs(&[&[1.0]], 8);
        assert!(matches!(g.all_gather(&b), Err(CollectiveError::MemberCount { .. })));
        let mut b = vec![Buffer::new(vec![1.0], 2), Buffer::new(vec![1.0], 4)];
        assert!(matches!(g.all_reduce(&mut b), Err(CollectiveError::ElementSizeMismatch(_))));
        assert!(DeviceGroup::new(vec![0, 0]).is_err());
        assert!(DeviceGroup::new(vec![]).is_err());
    }

    #[test]
    fn byte_meters_exhaustive_small_sweep() {
        for n in 1..=16usize {
            for len in 1..=64usize {
                let es = 2u64;
                let t = (len as u64 * es) as i128;
                let ring = Ratio::new(n as i128 - 1, n as i128);
                let inputs: Vec<Buffer> = (0..n).map(|i| Buffer::new(vec![i as f64; len], es)).collect();

                let mut g = DeviceGroup::contiguous(n);
                g.all_reduce(&mut inputs.clone()).unwrap();
                assert_eq!(g.mean_sent_bytes(), ring * 2 * t, "AR n={n} len={len}");
                if len % n == 0 {
                    let want = (ring * 2 * t).to_integer() as u64;
                    assert!(g.sent_bytes().iter().all(|&s| s == want));
                }

                let mut g = DeviceGroup::contiguous(n);
                let rs = g.reduce_scatter(&inputs).unwrap();
                assert_eq!(g.mean_sent_bytes(), ring * t, "RS n={n} len={len}");

                let mut g = DeviceGroup::contiguous(n);
                g.all_gather(&rs).unwrap();
                assert_eq!(g.mean_sent_bytes(), ring * t, "AG n={n} len={len}");
                if len % n == 0 {
                    let want = (ring * t).to_integer() as u64;
                    assert!(g.sent_bytes().iter().all(|&s| s == want));
                }
                // every sent byte is received by the next member
                let sent: u64 = g.counters().iter().map(|c| c.sent_bytes).sum();
                let recv: u64 = g.counters().iter().map(|c| c.received_bytes).sum();
                assert_eq!(sent, recv);
            }
        }
    }

    fn brute_sum(inputs: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; inputs[0].len()];
        for v in inputs {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        out
    }

    proptest! {
        #[test]
        fn reduce_scatter_then_gather_equals_all_reduce(
            n in 1usize..9,
            len in 1usize..40,
            seed in proptest::collection::vec(-100.0f64..100.0, 360)
        ) {
            let inputs: Vec<Buffer> = (0..n)
                .map(|i| Buffer::new(seed[i * len..(i + 1) * len].to_vec(), 4))
                .collect();
            let mut g = DeviceGroup::contiguous(n);
            let mut ar = inputs.clone();
            g.all_reduce(&mut ar).unwrap();
            let shards = g.reduce_scatter(&inputs).unwrap();
            let gathered = g.all_gather(&shards).unwrap();
            let brute = brute_sum(&inputs.iter().map(|b| b.elements.clone()).collect::<Vec<_>>());
            for (a, b) in ar.iter().zip(&gathered) {
                prop_assert_eq!(&a.elements, &b.elements);
                for (x, y) in a.elements.iter().zip(&brute) {
                    prop_assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
                }
            }
            // every member holds the bitwise-same result
            for b in &ar {
                prop_assert_eq!(&b.elements, &ar[0].elements);
            }
        }

        #[test]
        fn all_reduce_is_linear(
            n in 1usize..9,
            len in 1usize..20,
            a in proptest::collection::vec(-1.0f64..1.0, 160),
            b in proptest::collection::vec(-1.0f64..1.0, 160)
        ) {
            let mk = |src: &Vec<f64>| -> Vec<Buffer> {
                (0..n).map(|i| Buffer::new(src[i * len..(i + 1) * len].to_vec(), 8)).collect()
            };
            let mut ba = mk(&a);
            let mut bb = mk(&b);
            let mut sum: Vec<Buffer> = ba.iter().zip(&bb).map(|(x, y)| {
                Buffer::new(x.elements.iter().zip(&y.elements).map(|(p, q)| p + q).collect(), 8)
            }).collect();
            let mut g = DeviceGroup::contiguous(n);
            g.all_reduce(&mut ba).unwrap();
            g.all_reduce(&mut bb).unwrap();
            g.all_reduce(&mut sum).unwrap();
            for ((x, y), s) in ba[0].elements.iter().zip(&bb[0].elements).zip(&sum[0].elements) {
                prop_assert!((x + y - s).abs() < 1e-12);
            }
        }

        #[test]
        fn deterministic_across_runs(n in 1usize..9, v in proptest::collection::vec(-1e3f64..1e3, 64)) {
            let inputs: Vec<Buffer> = (0..n).map(|i| Buffer::new(v.iter().map(|x| x * (i as f64 + 0.1)).collect(), 2)).collect();
            let mut a = inputs.clone();
            let mut b = inputs.clone();
            DeviceGroup::contiguous(n).all_reduce(&mut a).unwrap();
            DeviceGroup::contiguous(n).all_reduce(&mut b).unwrap();
            for (x, y) in a.iter().zip(&b) {
                let xb: Vec<u64> = x.elements.iter().map(|f| f.to_bits()).collect();
                let yb: Vec<u64> = y.elements.iter().map(|f| f.to_bits()).collect();
                prop_assert_eq!(xb, yb);
            }
        }
    }
}
