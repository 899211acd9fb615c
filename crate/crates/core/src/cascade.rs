//! Independent-cascade diffusion, realized once per news item.
//!
//! A trajectory stores every activated user in activation order together with
//! cumulative per-round counts, so the exposure at any epoch is a prefix of
//! `order` and `|π∞| - |π^t|` is a subtraction.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{SocialGraph, UserId};

pub const DEFAULT_MAX_ROUNDS: u32 = 600;
pub const DEFAULT_ROUNDS_PER_EPOCH: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeTrajectory {
    source: UserId,
    infection_prob: f64,
    max_rounds: u32,
    /// Activated users, grouped by round, source first.
    order: Vec<UserId>,
    /// `round_ends[r]` = number of users activated at rounds `0..=r`.
    round_ends: Vec<u32>,
}

/// Size of a news item's exposure at one epoch cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExposureView {
    pub news: u32,
    pub round_cutoff: u32,
    pub exposed: usize,
}

/// Runs an independent cascade from `source`. Each newly activated user gets
/// one attempt per still-inactive neighbor in the following round. Neighbors
/// are visited in sorted order, so the outcome is a function of the rng alone.
pub fn simulate_cascade<R: Rng + ?Sized>(
    g: &SocialGraph,
    source: UserId,
    p: f64,
    max_rounds: u32,
    rng: &mut R,
) -> Result<CascadeTrajectory> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Contract(format!("infection probability {p} outside [0, 1]")));
    }
    if max_rounds == 0 {
        return Err(Error::Contract("max_rounds must be at least 1".into()));
    }
    if source.index() >= g.node_count() {
        return Err(Error::UserOutOfRange { user: source.index(), node_count: g.node_count() });
    }

    let mut active = vec![false; g.node_count()];
    active[source.index()] = true;
    let mut order = vec![source];
    let mut round_ends = vec![1u32];
    let mut frontier_start = 0;

    for _round in 1..=max_rounds {
        let frontier_end = order.len();
        for i in frontier_start..frontier_end {
            let u = order[i];
            for &v in g.adj(u) {
                if !active[v.index()] && rng.random::<f64>() < p {
                    active[v.index()] = true;
                    order.push(v);
                }
            }
        }
        if order.len() == frontier_end {
            break;
        }
        round_ends.push(order.len() as u32);
        frontier_start = frontier_end;
    }

    Ok(CascadeTrajectory { source, infection_prob: p, max_rounds, order, round_ends })
}

impl CascadeTrajectory {
    pub fn source(&self) -> UserId {
        self.source
    }

    pub fn infection_prob(&self) -> f64 {
        self.infection_prob
    }

    pub fn max_rounds(&self) -> u32 {
        self.max_rounds
    }

    /// Last round in which someone was activated.
    pub fn last_round(&self) -> u32 {
        (self.round_ends.len() - 1) as u32
    }

    /// Round at which `u` was activated, if ever. Linear in the cascade size.
    pub fn activation_round(&self, u: UserId) -> Option<u32> {
        let pos = self.order.iter().position(|&w| w == u)? as u32;
        Some(self.round_ends.partition_point(|&end| end <= pos) as u32)
    }

    /// `(user, round)` pairs in activation order.
    pub fn activations(&self) -> impl Iterator<Item = (UserId, u32)> + '_ {
        self.round_ends.iter().enumerate().flat_map(move |(r, &end)| {
            let start = if r == 0 { 0 } else { self.round_ends[r - 1] };
            self.order[start as usize..end as usize].iter().map(move |&u| (u, r as u32))
        })
    }

    /// Number of users activated at rounds `<= cutoff`.
    pub fn exposed_by_round(&self, cutoff: u32) -> usize {
        let idx = (cutoff as usize).min(self.round_ends.len() - 1);
        self.round_ends[idx] as usize
    }

    /// Users activated by the end of `epoch` (counted from the seeding epoch),
    /// in activation order. Epoch 0 is the source alone.
    pub fn exposure_at(&self, epoch: u32, rounds_per_epoch: u32) -> &[UserId] {
        &self.order[..self.exposed_by_round(epoch.saturating_mul(rounds_per_epoch))]
    }

    pub fn eventual_exposure(&self) -> &[UserId] {
        &self.order
    }

    /// Users saved if the news is blocked at the end of `epoch`.
    pub fn remaining_value(&self, epoch: u32, rounds_per_epoch: u32) -> u64 {
        (self.order.len() - self.exposure_at(epoch, rounds_per_epoch).len()) as u64
    }

    /// First epoch at which the exposure equals the eventual exposure.
    pub fn exhaustion_epoch(&self, rounds_per_epoch: u32) -> u32 {
        self.last_round().div_ceil(rounds_per_epoch)
    }

    pub fn exposure_view(&self, news: u32, epoch: u32, rounds_per_epoch: u32) -> ExposureView {
        let round_cutoff = epoch.saturating_mul(rounds_per_epoch);
        ExposureView { news, round_cutoff, exposed: self.exposed_by_round(round_cutoff) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{synthetic_graph, SyntheticKind};
    use crate::rng::{substream, Stream};
    use proptest::prelude::*;

    fn rng(seed: u64) -> crate::rng::SimRng {
        substream(seed, Stream::Cascade, 0)
    }

    fn path4() -> SocialGraph {
        synthetic_graph(SyntheticKind::Path, 4, 0.0, 0).unwrap()
    }

    #[test]
    fn star_with_certain_infection() {
        let g = synthetic_graph(SyntheticKind::Star, 6, 0.0, 0).unwrap();
        let t = simulate_cascade(&g, UserId(0), 1.0, 600, &mut rng(1)).unwrap();
        assert_eq!(t.eventual_exposure().len(), 6);
        for leaf in 1..6 {
            assert_eq!(t.activation_round(UserId(leaf)), Some(1));
        }
    }

    #[test]
    fn zero_probability_keeps_only_the_source() {
        let g = synthetic_graph(SyntheticKind::Complete, 8, 0.0, 0).unwrap();
        let t = simulate_cascade(&g, UserId(3), 0.0, 600, &mut rng(2)).unwrap();
        assert_eq!(t.eventual_exposure(), &[UserId(3)]);
        assert_eq!(t.remaining_value(0, 2), 0);
    }

    #[test]
    fn path_trace() {
        // Hand trace: with p = 1 the front moves one hop per round.
        let t = simulate_cascade(&path4(), UserId(0), 1.0, 600, &mut rng(3)).unwrap();
        let rounds: Vec<_> = (0..4).map(|u| t.activation_round(UserId(u)).unwrap()).collect();
        assert_eq!(rounds, vec![0, 1, 2, 3]);

        assert_eq!(t.exposure_at(0, 2), &[UserId(0)]);
        assert_eq!(t.exposure_at(1, 2), &[UserId(0), UserId(1), UserId(2)]);
        assert_eq!(t.remaining_value(1, 2), 1);
        assert_eq!(t.exhaustion_epoch(2), 2);
        assert_eq!(t.exposure_at(2, 2), t.eventual_exposure());
        assert_eq!(t.remaining_value(2, 2), 0);
        assert_eq!(t.remaining_value(50, 2), 0);
        assert_eq!(t.exposure_view(9, 1, 2), ExposureView { news: 9, round_cutoff: 2, exposed: 3 });
    }

    #[test]
    fn max_rounds_caps_the_spread() {
        let t = simulate_cascade(&path4(), UserId(0), 1.0, 2, &mut rng(3)).unwrap();
        assert_eq!(t.eventual_exposure().len(), 3);
        assert_eq!(t.last_round(), 2);
    }

    #[test]
    fn precondition_violations() {
        let g = path4();
        assert!(simulate_cascade(&g, UserId(0), 1.5, 10, &mut rng(0)).is_err());
        assert!(simulate_cascade(&g, UserId(0), 0.5, 0, &mut rng(0)).is_err());
        assert!(simulate_cascade(&g, UserId(4), 0.5, 10, &mut rng(0)).is_err());
    }

    #[test]
    fn connected_graph_with_certain_infection_reaches_everyone() {
        let g = synthetic_graph(SyntheticKind::ErdosRenyi, 50, 0.3, 4).unwrap();
        // reachability from 0 by BFS
        let mut seen = vec![false; 50];
        let mut queue = vec![UserId(0)];
        seen[0] = true;
        while let Some(u) = queue.pop() {
            for &v in g.adj(u) {
                if !seen[v.index()] {
                    seen[v.index()] = true;
                    queue.push(v);
                }
            }
        }
        let reachable = seen.iter().filter(|&&s| s).count();
        let t = simulate_cascade(&g, UserId(0), 1.0, 600, &mut rng(5)).unwrap();
        assert_eq!(t.eventual_exposure().len(), reachable);
    }

    #[test]
    fn two_node_activation_frequency() {
        let g = SocialGraph::from_edges(2, [(0, 1)]).unwrap();
        let mut r = rng(6);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| simulate_cascade(&g, UserId(0), 0.3, 600, &mut r).unwrap().eventual_exposure().len() == 2)
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.3).abs() <= 0.02, "frequency {freq}");
    }

    proptest! {
        #[test]
        fn trajectory_invariants(seed in any::<u64>(), p in 0.0f64..1.0, n in 2usize..40, src in 0usize..40, rpe in 1u32..4) {
            let g = synthetic_graph(SyntheticKind::ErdosRenyi, n, 0.15, seed).unwrap();
            let source = UserId((src % n) as u32);
            let t = simulate_cascade(&g, source, p, 600, &mut rng(seed)).unwrap();

            prop_assert_eq!(t.activation_round(source), Some(0));
            // frontier validity
            for (u, r) in t.activations() {
                prop_assert!(r <= t.max_rounds());
                if r > 0 {
                    let ok = g.adj(u).iter().any(|&v| t.activation_round(v) == Some(r - 1));
                    prop_assert!(ok, "user {} at round {} has no parent", u, r);
                }
            }
            // monotone exposure, value differences
            let horizon = t.exhaustion_epoch(rpe) + 2;
            for e in 0..horizon {
                let now = t.exposure_at(e, rpe);
                let next = t.exposure_at(e + 1, rpe);
                prop_assert!(next.starts_with(now));
                prop_assert_eq!(
                    t.remaining_value(e, rpe) - t.remaining_value(e + 1, rpe),
                    (next.len() - now.len()) as u64
                );
            }
            prop_assert_eq!(t.exposure_at(t.exhaustion_epoch(rpe), rpe), t.eventual_exposure());
            prop_assert_eq!(t.remaining_value(t.exhaustion_epoch(rpe), rpe), 0);
        }
    }
}
