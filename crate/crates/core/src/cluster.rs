//! Channel clustering: rank channels by nonzero count and run channels of
//! similar density together, so the per-step maximum that blocks the array
//! stays close to every member's own load.

use serde::{Deserialize, Serialize};

use crate::codec::CompressedBlock;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelRanking {
    /// Channel indices, densest first; ties keep ascending original index.
    pub order: Vec<usize>,
    /// N_NZE per original channel index.
    pub nze_counts: Vec<usize>,
    pub group_size: usize,
}

/// Whether CONV input channels are ranked across the whole layer or inside
/// each consecutive batch of `group_size` channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingScope {
    #[default]
    Global,
    PerBatch,
    /// Keep the original order (clustering disabled).
    Off,
}

pub fn rank_channels(blocks: &[CompressedBlock], group_size: usize) -> ChannelRanking {
    let counts: Vec<usize> = blocks.iter().map(CompressedBlock::data_length).collect();
    rank_counts(&counts, group_size)
}

pub fn rank_counts(counts: &[usize], group_size: usize) -> ChannelRanking {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // slice::sort_by is a stable merge sort
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]));
    ChannelRanking {
        order,
        nze_counts: counts.to_vec(),
        group_size: group_size.max(1),
    }
}

pub fn rank_with_scope(counts: &[usize], group_size: usize, scope: RankingScope) -> ChannelRanking {
    let group_size = group_size.max(1);
    match scope {
        RankingScope::Global => rank_counts(counts, group_size),
        RankingScope::Off => ChannelRanking {
            order: (0..counts.len()).collect(),
            nze_counts: counts.to_vec(),
            group_size,
        },
        RankingScope::PerBatch => {
            let mut order = Vec::with_capacity(counts.len());
            for start in (0..counts.len()).step_by(group_size) {
                let end = (start + group_size).min(counts.len());
                let local = rank_counts(&counts[start..end], group_size);
                order.extend(local.order.into_iter().map(|i| i + start));
            }
            ChannelRanking {
                order,
                nze_counts: counts.to_vec(),
                group_size,
            }
        }
    }
}

/// Consecutive runs of `group_size` channels from the ranking order; the last
/// group may be short.
pub fn make_groups(ranking: &ChannelRanking) -> Vec<Vec<usize>> {
    ranking
        .order
        .chunks(ranking.group_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Sum over groups of the group's largest count: the blocking cost of a
/// grouping when every member costs its own count.
pub fn sum_of_group_maxima(groups: &[Vec<usize>], counts: &[usize]) -> usize {
    groups
        .iter()
        .map(|g| g.iter().map(|&c| counts[c]).max().unwrap_or(0))
        .sum()
}

/// Channels stored in ranking order together with the map back to the
/// original channel identity.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutedLayout<T> {
    pub store: Vec<T>,
    /// `inverse[original] = physical position`.
    pub inverse: Vec<usize>,
}

impl<T: Clone> PermutedLayout<T> {
    pub fn restore(&self) -> Vec<T> {
        self.inverse.iter().map(|&p| self.store[p].clone()).collect()
    }
}

pub fn apply_layout<T: Clone>(channels: &[T], ranking: &ChannelRanking) -> PermutedLayout<T> {
    assert_eq!(channels.len(), ranking.order.len(), "ranking does not match channel count");
    let store = ranking.order.iter().map(|&c| channels[c].clone()).collect();
    let mut inverse = vec![0; channels.len()];
    for (pos, &c) in ranking.order.iter().enumerate() {
        inverse[c] = pos;
    }
    PermutedLayout { store, inverse }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::compress;

    #[test]
    fn four_channel_example() {
        let r = rank_counts(&[8, 4, 8, 3], 2);
        assert_eq!(r.order, vec![0, 2, 1, 3]);
        let groups = make_groups(&r);
        assert_eq!(groups, vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(sum_of_group_maxima(&groups, &r.nze_counts), 12);
        let unclustered = vec![vec![0, 1], vec![2, 3]];
        assert_eq!(sum_of_group_maxima(&unclustered, &r.nze_counts), 16);
    }

    #[test]
    fn ranks_from_blocks() {
        let blocks: Vec<_> = [vec![1, 0, 0, 0], vec![1, 1, 1, 0], vec![1, 1, 0, 0]]
            .iter()
            .map(|d| compress(d, 2, 2))
            .collect();
        assert_eq!(rank_channels(&blocks, 2).order, vec![1, 2, 0]);
    }

    #[test]
    fn ties_and_trivial_cases() {
        assert_eq!(rank_counts(&[5, 5, 5, 5], 2).order, vec![0, 1, 2, 3]);
        assert_eq!(rank_counts(&[3], 4).order, vec![0]);
        let r = rank_counts(&[1, 2, 3, 4, 5], 2);
        let g = make_groups(&r);
        assert_eq!(g.len(), 3);
        assert_eq!(g[2].len(), 1);
        assert_eq!(make_groups(&rank_counts(&[1, 2, 3], 8)).len(), 1);
    }

    #[test]
    fn group_max_is_first_member() {
        let r = rank_counts(&[3, 9, 1, 7, 7, 2, 8], 3);
        for g in make_groups(&r) {
            let first = r.nze_counts[g[0]];
            assert!(g.iter().all(|&c| r.nze_counts[c] <= first));
        }
    }

    #[test]
    fn per_batch_scope() {
        let r = rank_with_scope(&[1, 5, 9, 2], 2, RankingScope::PerBatch);
        assert_eq!(r.order, vec![1, 0, 2, 3]);
        let r = rank_with_scope(&[1, 5, 9, 2], 2, RankingScope::Off);
        assert_eq!(r.order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn layout_round_trip() {
        let r = ChannelRanking {
            order: vec![1, 0],
            nze_counts: vec![0, 0],
            group_size: 2,
        };
        let l = apply_layout(&["A", "B"], &r);
        assert_eq!(l.store, vec!["B", "A"]);
        assert_eq!(l.restore(), vec!["A", "B"]);
    }
}
