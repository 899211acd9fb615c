//! Greedy top-`k` selection and the policies that feed it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UserId;
use crate::inference::{mean_params, sample_params, BeliefState, LogLikelihoods};
use crate::protocol::NewsId;
use crate::usermodel::{FlaggingParams, Label};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub news: NewsId,
    pub prob_fake: f64,
    pub value: u64,
}

impl Candidate {
    pub fn score(&self) -> f64 {
        self.prob_fake * self.value as f64
    }
}

/// Sorts by descending key with uniformly random order among equal keys.
fn rank_by<T, R: Rng + ?Sized>(items: &[T], key: impl Fn(&T) -> f64, rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, u64, usize)> = items.iter().enumerate().map(|(i, it)| (key(it), rng.random(), i)).collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

/// The `min(k, n)` candidates with the largest `prob_fake * value`.
/// The objective is modular, so sorting is exact.
pub fn topx<R: Rng + ?Sized>(candidates: &[Candidate], k: usize, rng: &mut R) -> Vec<NewsId> {
    rank_by(candidates, Candidate::score, rng).into_iter().take(k).map(|i| candidates[i].news).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Detective,
    Opt,
    Oracle,
    FixedCm,
    NoLearn,
    Random,
    PointEstimate,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Detective,
        PolicyKind::Opt,
        PolicyKind::Oracle,
        PolicyKind::FixedCm,
        PolicyKind::NoLearn,
        PolicyKind::Random,
        PolicyKind::PointEstimate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Detective => "detective",
            PolicyKind::Opt => "opt",
            PolicyKind::Oracle => "oracle",
            PolicyKind::FixedCm => "fixed_cm",
            PolicyKind::NoLearn => "no_learn",
            PolicyKind::Random => "random",
            PolicyKind::PointEstimate => "point_estimate",
        }
    }

    pub fn reads_belief(self) -> bool {
        matches!(self, PolicyKind::Detective | PolicyKind::PointEstimate)
    }

    pub fn reads_true_params(self) -> bool {
        self == PolicyKind::Opt
    }

    pub fn reads_labels(self) -> bool {
        self == PolicyKind::Oracle
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

/// One active news item as a policy sees it.
#[derive(Debug, Clone, Copy)]
pub struct NewsView<'a> {
    pub news: NewsId,
    pub source: UserId,
    /// Remaining reach as reported to the policy.
    pub value: u64,
    /// Exposed users (source included), aligned with `flags`.
    pub exposed: &'a [UserId],
    pub flags: &'a [bool],
}

#[derive(Debug, Clone, Default)]
pub struct EpochView<'a> {
    pub news: Vec<NewsView<'a>>,
}

/// The privileged inputs a policy is handed. Construction checks that each
/// policy gets exactly what it is allowed to read.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInputs<'a> {
    kind: PolicyKind,
    belief: Option<&'a BeliefState>,
    true_params: Option<&'a [FlaggingParams]>,
    labels: Option<&'a [Label]>,
}

impl<'a> PolicyInputs<'a> {
    /// `labels` must be aligned with the epoch view's news list.
    pub fn new(
        kind: PolicyKind,
        belief: Option<&'a BeliefState>,
        true_params: Option<&'a [FlaggingParams]>,
        labels: Option<&'a [Label]>,
    ) -> Result<Self> {
        let policy = kind.name();
        for (needed, given, input) in [
            (kind.reads_belief(), belief.is_some(), "the belief state"),
            (kind.reads_true_params(), true_params.is_some(), "true user parameters"),
            (kind.reads_labels(), labels.is_some(), "true labels"),
        ] {
            match (needed, given) {
                (false, true) => return Err(Error::Access { policy, input }),
                (true, false) => return Err(Error::MissingInput { policy, input }),
                _ => {}
            }
        }
        Ok(PolicyInputs { kind, belief, true_params, labels })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub omega: f64,
    pub k: usize,
    pub fixed_cm_theta: f64,
}

/// `P(fake) * value` candidates under a given parameter vector. News with no
/// remaining value score zero whatever their posterior, so it is skipped.
pub fn candidates_under(params: &[FlaggingParams], view: &EpochView<'_>, omega: f64) -> Vec<Candidate> {
    let table = LogLikelihoods::new(params);
    view.news
        .iter()
        .map(|n| {
            let prob_fake = if n.value == 0 {
                omega
            } else {
                table.posterior(omega, n.source, n.exposed.iter().copied().zip(n.flags.iter().copied()))
            };
            Candidate { news: n.news, prob_fake, value: n.value }
        })
        .collect()
}

/// Runs one policy on one epoch. Returns at most `k` news ids, best first.
pub fn select<R: Rng + ?Sized>(
    inputs: &PolicyInputs<'_>,
    view: &EpochView<'_>,
    cfg: &SelectionConfig,
    users: usize,
    rng: &mut R,
) -> Result<Vec<NewsId>> {
    let k = cfg.k;
    let by_params = |params: &[FlaggingParams], rng: &mut R| topx(&candidates_under(params, view, cfg.omega), k, rng);

    let picked = match inputs.kind {
        PolicyKind::Detective => {
            let params = sample_params(inputs.belief.expect("checked at construction"), rng);
            by_params(&params, rng)
        }
        PolicyKind::PointEstimate => {
            let params = mean_params(inputs.belief.expect("checked at construction"));
            by_params(&params, rng)
        }
        PolicyKind::Opt => by_params(inputs.true_params.expect("checked at construction"), rng),
        PolicyKind::FixedCm => {
            let theta = cfg.fixed_cm_theta;
            by_params(&vec![FlaggingParams::new(theta, theta); users], rng)
        }
        PolicyKind::Oracle => {
            let labels = inputs.labels.expect("checked at construction");
            if labels.len() != view.news.len() {
                return Err(Error::Contract("labels are not aligned with the epoch view".into()));
            }
            let fakes: Vec<&NewsView<'_>> = view.news.iter().zip(labels).filter(|(_, l)| l.is_fake()).map(|(n, _)| n).collect();
            rank_by(&fakes, |n| n.value as f64, rng).into_iter().take(k).map(|i| fakes[i].news).collect()
        }
        PolicyKind::NoLearn => {
            rank_by(&view.news, |n| n.value as f64, rng).into_iter().take(k).map(|i| view.news[i].news).collect()
        }
        PolicyKind::Random => {
            let n = view.news.len();
            rand::seq::index::sample(rng, n, k.min(n)).into_iter().map(|i| view.news[i].news).collect()
        }
    };
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{BetaPrior, UserHistory};
    use crate::rng::{substream, Stream};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn rng(seed: u64) -> crate::rng::SimRng {
        substream(seed, Stream::Policy, 0)
    }

    fn cand(id: u32, prob: f64, value: u64) -> Candidate {
        Candidate { news: NewsId(id), prob_fake: prob, value }
    }

    /// Best objective over all subsets of size at most k.
    fn exhaustive_best(c: &[Candidate], k: usize) -> f64 {
        let n = c.len();
        (0u32..1 << n)
            .filter(|m| m.count_ones() as usize <= k)
            .map(|m| (0..n).filter(|i| m >> i & 1 == 1).map(|i| c[i].score()).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn objective(c: &[Candidate], picked: &[NewsId]) -> f64 {
        c.iter().filter(|x| picked.contains(&x.news)).map(Candidate::score).sum()
    }

    #[test]
    fn picks_the_two_best_scores() {
        let c = [cand(0, 1.0, 9), cand(1, 1.0, 4), cand(2, 1.0, 20)];
        let got: HashSet<_> = topx(&c, 2, &mut rng(0)).into_iter().collect();
        assert_eq!(got, HashSet::from([NewsId(0), NewsId(2)]));
        assert_eq!(objective(&c, &[NewsId(0), NewsId(2)]), exhaustive_best(&c, 2));
    }

    #[test]
    fn large_budget_returns_everything() {
        let c = [cand(0, 0.1, 1), cand(1, 0.5, 0), cand(2, 0.9, 3)];
        assert_eq!(topx(&c, 10, &mut rng(1)).len(), 3);
    }

    #[test]
    fn ties_are_broken_uniformly() {
        let c: Vec<_> = (0..5).map(|i| cand(i, 0.5, 10)).collect();
        let mut r = rng(2);
        let mut counts = [0usize; 5];
        let trials = 10_000;
        for _ in 0..trials {
            counts[topx(&c, 1, &mut r)[0].0 as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 0.2).abs() <= 0.02, "frequency {f}");
        }
    }

    fn view_fixture<'a>(exposed: &'a [UserId], flags: &'a [Vec<bool>], values: &[u64]) -> EpochView<'a> {
        EpochView {
            news: values
                .iter()
                .enumerate()
                .map(|(i, &value)| NewsView { news: NewsId(i as u32), source: exposed[0], value, exposed, flags: &flags[i] })
                .collect(),
        }
    }

    #[test]
    fn oracle_does_not_pad_with_true_news() {
        let exposed = [UserId(0)];
        let flags = vec![vec![false]; 10];
        let values: Vec<u64> = (1..=10).collect();
        let view = view_fixture(&exposed, &flags, &values);
        let mut labels = vec![Label::NotFake; 10];
        labels[3] = Label::Fake;
        labels[7] = Label::Fake;
        let inputs = PolicyInputs::new(PolicyKind::Oracle, None, None, Some(&labels)).unwrap();
        let cfg = SelectionConfig { omega: 0.2, k: 5, fixed_cm_theta: 0.6 };
        let picked: HashSet<_> = select(&inputs, &view, &cfg, 1, &mut rng(3)).unwrap().into_iter().collect();
        assert_eq!(picked, HashSet::from([NewsId(3), NewsId(7)]));
    }

    #[test]
    fn no_learn_takes_the_largest_value() {
        let exposed = [UserId(0)];
        let flags = vec![vec![false]; 3];
        let view = view_fixture(&exposed, &flags, &[5, 3, 9]);
        let inputs = PolicyInputs::new(PolicyKind::NoLearn, None, None, None).unwrap();
        let cfg = SelectionConfig { omega: 0.2, k: 1, fixed_cm_theta: 0.6 };
        assert_eq!(select(&inputs, &view, &cfg, 1, &mut rng(4)).unwrap(), vec![NewsId(2)]);
    }

    #[test]
    fn random_returns_k_distinct_ids() {
        let exposed = [UserId(0)];
        let flags = vec![vec![false]; 8];
        let view = view_fixture(&exposed, &flags, &[1; 8]);
        let inputs = PolicyInputs::new(PolicyKind::Random, None, None, None).unwrap();
        let cfg = SelectionConfig { omega: 0.2, k: 3, fixed_cm_theta: 0.6 };
        let picked = select(&inputs, &view, &cfg, 1, &mut rng(5)).unwrap();
        assert_eq!(picked.iter().collect::<HashSet<_>>().len(), 3);
    }

    #[test]
    fn access_rules() {
        let belief = BeliefState::new(3, BetaPrior::UNIFORM, BetaPrior::UNIFORM);
        let params = vec![FlaggingParams::new(0.9, 0.9); 3];
        let labels = vec![Label::Fake];
        for kind in [PolicyKind::Detective, PolicyKind::PointEstimate] {
            assert!(PolicyInputs::new(kind, Some(&belief), None, None).is_ok());
            assert!(matches!(PolicyInputs::new(kind, Some(&belief), Some(&params), None), Err(Error::Access { .. })));
            assert!(matches!(PolicyInputs::new(kind, Some(&belief), None, Some(&labels)), Err(Error::Access { .. })));
            assert!(matches!(PolicyInputs::new(kind, None, None, None), Err(Error::MissingInput { .. })));
        }
        for kind in [PolicyKind::FixedCm, PolicyKind::NoLearn, PolicyKind::Random] {
            assert!(PolicyInputs::new(kind, None, None, None).is_ok());
            assert!(PolicyInputs::new(kind, Some(&belief), None, None).is_err());
            assert!(PolicyInputs::new(kind, None, Some(&params), None).is_err());
            assert!(PolicyInputs::new(kind, None, None, Some(&labels)).is_err());
        }
        assert!(PolicyInputs::new(PolicyKind::Opt, None, Some(&params), None).is_ok());
        assert!(PolicyInputs::new(PolicyKind::Opt, Some(&belief), Some(&params), None).is_err());
        assert!(PolicyInputs::new(PolicyKind::Oracle, None, None, Some(&labels)).is_ok());
        assert!(PolicyInputs::new(PolicyKind::Oracle, None, Some(&params), Some(&labels)).is_err());
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        assert!("thompson".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn concentrated_detective_agrees_with_opt() {
        // 12 users with mixed true params; 6 news with varied flag patterns.
        let truth: Vec<FlaggingParams> = (0..12)
            .map(|u| match u % 3 {
                0 => FlaggingParams::new(0.9, 0.9),
                1 => FlaggingParams::new(0.1, 0.1),
                _ => FlaggingParams::new(0.5, 0.5),
            })
            .collect();
        let strength = 10_000.0;
        let belief = BeliefState {
            // Beta(1e4 * theta, 1e4 * (1 - theta)) written as prior 1/1 plus counts
            histories: truth
                .iter()
                .map(|p| UserHistory {
                    notfake_given_notfake: (strength * p.theta_notfake) as u64 - 1,
                    fake_given_notfake: (strength * (1.0 - p.theta_notfake)) as u64 - 1,
                    fake_given_fake: (strength * p.theta_fake) as u64 - 1,
                    notfake_given_fake: (strength * (1.0 - p.theta_fake)) as u64 - 1,
                })
                .collect(),
            prior_notfake: BetaPrior::UNIFORM,
            prior_fake: BetaPrior::UNIFORM,
        };
        let exposed: Vec<UserId> = (0..12).map(UserId).collect();
        let flags: Vec<Vec<bool>> = (0..6u32)
            .map(|i| (0..12u32).map(|u| u > 0 && (u * 7 + i * 5) % (i + 2) == 0).collect())
            .collect();
        let view = view_fixture(&exposed, &flags, &[40, 35, 30, 50, 20, 45]);
        let cfg = SelectionConfig { omega: 0.2, k: 2, fixed_cm_theta: 0.6 };

        let opt_inputs = PolicyInputs::new(PolicyKind::Opt, None, Some(&truth), None).unwrap();
        let opt: HashSet<_> = select(&opt_inputs, &view, &cfg, 12, &mut rng(6)).unwrap().into_iter().collect();
        let det_inputs = PolicyInputs::new(PolicyKind::Detective, Some(&belief), None, None).unwrap();
        let mut r = rng(7);
        let agree = (0..200)
            .filter(|_| select(&det_inputs, &view, &cfg, 12, &mut r).unwrap().into_iter().collect::<HashSet<_>>() == opt)
            .count();
        assert!(agree >= 190, "agreement {agree}/200");
    }

    proptest! {
        #[test]
        fn topx_matches_exhaustive_search(
            raw in prop::collection::vec((0.0f64..1.0, 0u64..50), 1..=8),
            k in 1usize..=3,
            seed in any::<u64>(),
        ) {
            let c: Vec<_> = raw.iter().enumerate().map(|(i, &(p, v))| cand(i as u32, p, v)).collect();
            let picked = topx(&c, k, &mut rng(seed));
            prop_assert_eq!(picked.len(), k.min(c.len()));
            prop_assert_eq!(objective(&c, &picked), exhaustive_best(&c, k));
        }

        #[test]
        fn topx_is_scale_invariant(
            raw in prop::collection::vec((0.0f64..1.0, 1u64..50), 1..=8),
            k in 1usize..=3,
            scale in 2u64..100,
            seed in any::<u64>(),
        ) {
            let c: Vec<_> = raw.iter().enumerate().map(|(i, &(p, v))| cand(i as u32, p, v)).collect();
            let scaled: Vec<_> = c.iter().map(|x| Candidate { value: x.value * scale, ..*x }).collect();
            let a = topx(&c, k, &mut rng(seed));
            let b = topx(&scaled, k, &mut rng(seed));
            prop_assert_eq!(a, b);
        }
    }
}
