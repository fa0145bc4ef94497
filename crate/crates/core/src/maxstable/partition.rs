//! Set partitions in restricted-growth-string order.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Largest ground set for which partitions are enumerated.
pub const PARTITION_CAP: usize = 12;

/// Bell numbers `B(0..=PARTITION_CAP)`.
pub fn bell(d: usize) -> u64 {
    // Bell triangle
    let mut row = vec![1u64];
    for _ in 0..d {
        let mut next = vec![*row.last().unwrap()];
        for &v in &row {
            next.push(next.last().unwrap() + v);
        }
        row = next;
    }
    row[0]
}

/// Streaming enumeration of the partitions of `{0, …, d-1}`. Each item lists
/// the blocks, ordered by their smallest element.
#[derive(Debug, Clone)]
pub struct SetPartitionIter {
    rgs: Vec<usize>,
    done: bool,
}

pub fn set_partitions(d: usize) -> Result<SetPartitionIter> {
    if d == 0 {
        return Err(Error::invalid("set partitions need a non-empty ground set"));
    }
    if d > PARTITION_CAP {
        return Err(Error::PartitionCapacity { d, cap: PARTITION_CAP });
    }
    Ok(SetPartitionIter { rgs: vec![0; d], done: false })
}

impl SetPartitionIter {
    /// Block labels of the current partition, or `None` when exhausted.
    fn advance(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let current = self.rgs.clone();
        let d = self.rgs.len();
        let mut i = d;
        loop {
            if i <= 1 {
                self.done = true;
                break;
            }
            i -= 1;
            let prefix_max = *self.rgs[..i].iter().max().unwrap();
            if self.rgs[i] <= prefix_max {
                self.rgs[i] += 1;
                self.rgs[i + 1..].iter_mut().for_each(|v| *v = 0);
                break;
            }
        }
        Some(current)
    }

    /// Next partition as bit masks, one per block.
    pub fn next_masks(&mut self) -> Option<Vec<u32>> {
        self.advance().map(|labels| {
            let blocks = labels.iter().max().unwrap() + 1;
            let mut masks = vec![0u32; blocks];
            for (i, &b) in labels.iter().enumerate() {
                masks[b] |= 1 << i;
            }
            masks
        })
    }
}

impl Iterator for SetPartitionIter {
    type Item = Vec<Vec<usize>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.advance().map(|labels| {
            let blocks = labels.iter().max().unwrap() + 1;
            let mut out = vec![Vec::new(); blocks];
            for (i, &b) in labels.iter().enumerate() {
                out[b].push(i);
            }
            out
        })
    }
}

const CACHED: usize = 8;

/// All partitions of `{0, …, d-1}` as block masks, memoised for small `d`.
pub(crate) fn cached_masks(d: usize) -> Option<&'static [Vec<u32>]> {
    static CACHE: OnceLock<Vec<Vec<Vec<u32>>>> = OnceLock::new();
    if d == 0 || d > CACHED {
        return None;
    }
    let all = CACHE.get_or_init(|| {
        (1..=CACHED)
            .map(|k| {
                let mut it = set_partitions(k).expect("within cap");
                std::iter::from_fn(|| it.next_masks()).collect()
            })
            .collect()
    });
    Some(&all[d - 1])
}
