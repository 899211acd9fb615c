//! Bayesian core: news-label posterior given flags, and Beta-conjugate
//! learning of user reliabilities from expert-verified history.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UserId;
use crate::usermodel::{FlaggingParams, Label};

/// Probabilities are clamped to `[THETA_EPS, 1 - THETA_EPS]` before logs.
pub const THETA_EPS: f64 = 1e-9;

#[inline]
fn clamp_theta(theta: f64) -> f64 {
    theta.clamp(THETA_EPS, 1.0 - THETA_EPS)
}

/// Expert-verified counts for one user. `x_given_y` counts news the user
/// labeled `x` (flag = fake, no flag = not fake) whose expert verdict was `y`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub notfake_given_notfake: u64,
    pub notfake_given_fake: u64,
    pub fake_given_notfake: u64,
    pub fake_given_fake: u64,
}

impl UserHistory {
    pub fn total(&self) -> u64 {
        self.notfake_given_notfake + self.notfake_given_fake + self.fake_given_notfake + self.fake_given_fake
    }

    pub fn record(&mut self, flagged: bool, verdict: Label) {
        let slot = match (flagged, verdict) {
            (false, Label::NotFake) => &mut self.notfake_given_notfake,
            (false, Label::Fake) => &mut self.notfake_given_fake,
            (true, Label::NotFake) => &mut self.fake_given_notfake,
            (true, Label::Fake) => &mut self.fake_given_fake,
        };
        *slot += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl BetaPrior {
    pub const UNIFORM: BetaPrior = BetaPrior { a: 1.0, b: 1.0 };

    pub fn new(a: f64, b: f64) -> Result<Self> {
        let p = BetaPrior { a, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.b > 0.0 && self.a.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("Beta({}, {}) needs positive finite parameters", self.a, self.b)))
        }
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }
}

impl Default for BetaPrior {
    fn default() -> Self {
        BetaPrior::UNIFORM
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    /// `theta_notfake`
    NotFake,
    /// `theta_fake`
    Fake,
}

/// Conjugate update of a Beta prior with one user's counts.
pub fn beta_posterior(prior: BetaPrior, h: &UserHistory, which: Which) -> BetaPrior {
    match which {
        Which::NotFake => BetaPrior {
            a: prior.a + h.notfake_given_notfake as f64,
            b: prior.b + h.fake_given_notfake as f64,
        },
        Which::Fake => BetaPrior {
            a: prior.a + h.fake_given_fake as f64,
            b: prior.b + h.notfake_given_fake as f64,
        },
    }
}

/// Everything a learning policy knows: per-user histories and the shared priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub histories: Vec<UserHistory>,
    pub prior_notfake: BetaPrior,
    pub prior_fake: BetaPrior,
}

impl BeliefState {
    pub fn new(users: usize, prior_notfake: BetaPrior, prior_fake: BetaPrior) -> Self {
        BeliefState { histories: vec![UserHistory::default(); users], prior_notfake, prior_fake }
    }

    pub fn posterior(&self, u: UserId, which: Which) -> BetaPrior {
        let prior = match which {
            Which::NotFake => self.prior_notfake,
            Which::Fake => self.prior_fake,
        };
        beta_posterior(prior, &self.histories[u.index()], which)
    }

    pub fn total_counts(&self) -> u64 {
        self.histories.iter().map(UserHistory::total).sum()
    }
}

/// Pseudo-counts that pin a user's posterior near `params`; used to model
/// users the system already knows well.
pub fn pinned_history(params: FlaggingParams, strength: u64) -> UserHistory {
    let n = strength as f64;
    let nf_nf = (params.theta_notfake * n).round() as u64;
    let f_f = (params.theta_fake * n).round() as u64;
    UserHistory {
        notfake_given_notfake: nf_nf,
        fake_given_notfake: strength - nf_nf,
        fake_given_fake: f_f,
        notfake_given_fake: strength - f_f,
    }
}

/// Draws every user's `(theta_notfake, theta_fake)` from their posteriors.
/// Two draws per user in user order (not-fake first), clamped away from 0 and 1.
pub fn sample_params<R: Rng + ?Sized>(belief: &BeliefState, rng: &mut R) -> Vec<FlaggingParams> {
    let draw = |post: BetaPrior, rng: &mut R| -> f64 {
        let dist = Beta::new(post.a, post.b).expect("posterior parameters are positive");
        clamp_theta(dist.sample(rng))
    };
    belief
        .histories
        .iter()
        .map(|h| {
            let theta_notfake = draw(beta_posterior(belief.prior_notfake, h, Which::NotFake), rng);
            let theta_fake = draw(beta_posterior(belief.prior_fake, h, Which::Fake), rng);
            FlaggingParams { theta_notfake, theta_fake }
        })
        .collect()
}

/// Posterior means, the fully Bayesian point estimate.
pub fn mean_params(belief: &BeliefState) -> Vec<FlaggingParams> {
    belief
        .histories
        .iter()
        .map(|h| FlaggingParams {
            theta_notfake: beta_posterior(belief.prior_notfake, h, Which::NotFake).mean(),
            theta_fake: beta_posterior(belief.prior_fake, h, Which::Fake).mean(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewsPosterior {
    pub prob_fake: f64,
}

/// Per-user log-likelihood terms for one parameter vector, computed once and
/// reused across every news item in an epoch.
#[derive(Debug, Clone)]
pub struct LogLikelihoods {
    // [flag | fake, no flag | fake, flag | not fake, no flag | not fake]
    terms: Vec<[f64; 4]>,
}

impl LogLikelihoods {
    pub fn new(params: &[FlaggingParams]) -> Self {
        let terms = params
            .iter()
            .map(|p| {
                let tf = clamp_theta(p.theta_fake);
                let tn = clamp_theta(p.theta_notfake);
                [tf.ln(), (1.0 - tf).ln(), (1.0 - tn).ln(), tn.ln()]
            })
            .collect();
        LogLikelihoods { terms }
    }

    /// `P(fake | observations)`; `observations` yields `(user, flagged)` for
    /// every exposed user. The source is skipped.
    pub fn posterior(&self, omega: f64, source: UserId, observations: impl IntoIterator<Item = (UserId, bool)>) -> f64 {
        let mut log_fake = omega.ln();
        let mut log_notfake = (1.0 - omega).ln();
        for (u, flagged) in observations {
            if u == source {
                continue;
            }
            let t = &self.terms[u.index()];
            if flagged {
                log_fake += t[0];
                log_notfake += t[2];
            } else {
                log_fake += t[1];
                log_notfake += t[3];
            }
        }
        // logistic of the log-odds, stable in both tails
        let log_odds = log_fake - log_notfake;
        if log_odds >= 0.0 {
            1.0 / (1.0 + (-log_odds).exp())
        } else {
            let e = log_odds.exp();
            e / (1.0 + e)
        }
    }
}

/// `P(fake)` of one news item given who saw it and who flagged it.
pub fn news_fake_posterior(
    omega: f64,
    params: &[FlaggingParams],
    exposed: &[UserId],
    flaggers: &[UserId],
    source: UserId,
) -> Result<NewsPosterior> {
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::Contract(format!("news prior {omega} outside (0, 1)")));
    }
    let flagged = subset_of(flaggers, exposed)?;
    for &u in exposed {
        if u.index() >= params.len() {
            return Err(Error::UserOutOfRange { user: u.index(), node_count: params.len() });
        }
    }
    let table = LogLikelihoods::new(params);
    let prob_fake = table.posterior(omega, source, exposed.iter().map(|&u| (u, flagged.contains(&u))));
    Ok(NewsPosterior { prob_fake })
}

fn subset_of(flaggers: &[UserId], exposed: &[UserId]) -> Result<HashSet<UserId>> {
    let exposed_set: HashSet<UserId> = exposed.iter().copied().collect();
    if let Some(u) = flaggers.iter().find(|u| !exposed_set.contains(u)) {
        return Err(Error::Contract(format!("flagger {u} is not among the exposed users")));
    }
    Ok(flaggers.iter().copied().collect())
}

/// Adds one count per exposed non-source user: row by their flag, column by the verdict.
pub fn record_observations(
    histories: &mut [UserHistory],
    verdict: Label,
    source: UserId,
    observations: impl IntoIterator<Item = (UserId, bool)>,
) {
    for (u, flagged) in observations {
        if u != source {
            histories[u.index()].record(flagged, verdict);
        }
    }
}

/// Updates histories after an expert verdict on a news item.
pub fn record_expert_feedback(
    histories: &mut [UserHistory],
    verdict: Label,
    exposed: &[UserId],
    flaggers: &[UserId],
    source: UserId,
) -> Result<()> {
    let flagged = subset_of(flaggers, exposed)?;
    let mut seen = HashSet::new();
    record_observations(
        histories,
        verdict,
        source,
        exposed.iter().filter(|u| seen.insert(**u)).map(|&u| (u, flagged.contains(&u))),
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use proptest::prelude::*;

    fn rng(seed: u64) -> crate::rng::SimRng {
        substream(seed, Stream::Policy, 0)
    }

    fn uid(v: &[u32]) -> Vec<UserId> {
        v.iter().map(|&u| UserId(u)).collect()
    }

    /// Direct product of the likelihood terms, no logs.
    fn direct_posterior(omega: f64, params: &[FlaggingParams], exposed: &[UserId], flaggers: &[UserId], source: UserId) -> f64 {
        let mut fake = omega;
        let mut notfake = 1.0 - omega;
        for &u in exposed.iter().filter(|&&u| u != source) {
            let p = params[u.index()];
            if flaggers.contains(&u) {
                fake *= p.theta_fake;
                notfake *= 1.0 - p.theta_notfake;
            } else {
                fake *= 1.0 - p.theta_fake;
                notfake *= p.theta_notfake;
            }
        }
        fake / (fake + notfake)
    }

    #[test]
    fn no_evidence_leaves_the_prior() {
        let params = vec![FlaggingParams::new(0.9, 0.9); 3];
        let post = news_fake_posterior(0.2, &params, &uid(&[1]), &[], UserId(1)).unwrap();
        assert!((post.prob_fake - 0.2).abs() < 1e-15);
    }

    #[test]
    fn two_good_users_one_flag() {
        // fake: 0.2 * 0.9 * 0.1 = 0.018 ; not fake: 0.8 * 0.1 * 0.9 = 0.072
        let params = vec![FlaggingParams::new(0.9, 0.9); 3];
        let post = news_fake_posterior(0.2, &params, &uid(&[0, 1, 2]), &uid(&[1]), UserId(0)).unwrap();
        assert!((post.prob_fake - 0.018 / (0.018 + 0.072)).abs() < 1e-12);
    }

    #[test]
    fn spammer_flag_points_to_not_fake() {
        // fake: 0.2 * 0.1 = 0.02 ; not fake: 0.8 * 0.9 = 0.72
        let params = vec![FlaggingParams::new(0.1, 0.1); 2];
        let post = news_fake_posterior(0.2, &params, &uid(&[0, 1]), &uid(&[1]), UserId(0)).unwrap();
        assert!((post.prob_fake - 0.02 / 0.74).abs() < 1e-12);
        assert!((post.prob_fake - 0.027).abs() < 1e-3);
    }

    #[test]
    fn flagger_outside_exposure_is_rejected() {
        let params = vec![FlaggingParams::new(0.9, 0.9); 3];
        let err = news_fake_posterior(0.2, &params, &uid(&[0, 1]), &uid(&[2]), UserId(0));
        assert!(matches!(err, Err(Error::Contract(_))));
        assert!(news_fake_posterior(0.0, &params, &uid(&[0]), &[], UserId(0)).is_err());
        assert!(news_fake_posterior(1.0, &params, &uid(&[0]), &[], UserId(0)).is_err());
    }

    #[test]
    fn large_exposure_does_not_underflow() {
        let params = vec![FlaggingParams::new(0.9, 0.9); 5000];
        let exposed: Vec<UserId> = (0..5000).map(UserId).collect();
        let flaggers: Vec<UserId> = (1..2600).map(UserId).collect();
        let p = news_fake_posterior(0.2, &params, &exposed, &flaggers, UserId(0)).unwrap().prob_fake;
        assert!(p.is_finite() && p > 0.99);
    }

    #[test]
    fn feedback_updates() {
        let mut h = vec![UserHistory::default(); 4];
        record_expert_feedback(&mut h, Label::NotFake, &uid(&[2]), &[], UserId(0)).unwrap();
        assert_eq!(h[2].notfake_given_notfake, 1);
        assert_eq!(h[2].total(), 1);

        record_expert_feedback(&mut h, Label::Fake, &uid(&[0, 1, 3]), &uid(&[3]), UserId(0)).unwrap();
        assert_eq!(h[1].notfake_given_fake, 1);
        assert_eq!(h[3].fake_given_fake, 1);
        assert_eq!(h[0].total(), 0);

        let before = h.clone();
        record_expert_feedback(&mut h, Label::Fake, &uid(&[0]), &[], UserId(0)).unwrap();
        assert_eq!(h, before);

        assert!(record_expert_feedback(&mut h, Label::Fake, &uid(&[1]), &uid(&[2]), UserId(0)).is_err());
    }

    #[test]
    fn conjugate_arithmetic() {
        let h = UserHistory { notfake_given_notfake: 3, fake_given_notfake: 1, ..Default::default() };
        let post = beta_posterior(BetaPrior::UNIFORM, &h, Which::NotFake);
        assert_eq!(post, BetaPrior { a: 4.0, b: 2.0 });
        assert!((post.mean() - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(beta_posterior(BetaPrior::UNIFORM, &UserHistory::default(), Which::Fake), BetaPrior::UNIFORM);

        let h = UserHistory { fake_given_fake: 5, notfake_given_fake: 2, ..Default::default() };
        assert_eq!(beta_posterior(BetaPrior { a: 2.0, b: 3.0 }, &h, Which::Fake), BetaPrior { a: 7.0, b: 5.0 });
    }

    #[test]
    fn mean_params_examples() {
        let belief = BeliefState::new(2, BetaPrior::UNIFORM, BetaPrior::UNIFORM);
        assert_eq!(mean_params(&belief), vec![FlaggingParams::new(0.5, 0.5); 2]);

        let mut belief = belief;
        belief.histories[1] = UserHistory { notfake_given_notfake: 3, fake_given_notfake: 1, ..Default::default() };
        assert!((mean_params(&belief)[1].theta_notfake - 4.0 / 6.0).abs() < 1e-15);

        // 9:1 ratio, growing counts -> 0.9
        let mut last = 0.0;
        for n in [10u64, 1_000, 1_000_000] {
            belief.histories[0] = UserHistory { fake_given_fake: 9 * n, notfake_given_fake: n, ..Default::default() };
            last = mean_params(&belief)[0].theta_fake;
        }
        assert!((last - 0.9).abs() < 1e-6);
    }

    #[test]
    fn concentrated_posterior_samples_near_one() {
        let belief = BeliefState::new(1, BetaPrior { a: 1e9, b: 1.0 }, BetaPrior { a: 1e9, b: 1.0 });
        let mut r = rng(1);
        for _ in 0..1000 {
            let p = sample_params(&belief, &mut r)[0];
            assert!(p.theta_notfake > 0.99 && p.theta_fake > 0.99);
            assert!(p.theta_notfake < 1.0 && p.theta_fake < 1.0);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut belief = BeliefState::new(20, BetaPrior::UNIFORM, BetaPrior { a: 2.0, b: 5.0 });
        belief.histories[4].fake_given_fake = 7;
        assert_eq!(sample_params(&belief, &mut rng(9)), sample_params(&belief, &mut rng(9)));
        assert_ne!(sample_params(&belief, &mut rng(9)), sample_params(&belief, &mut rng(10)));
    }

    #[test]
    fn sample_mean_matches_beta_mean() {
        let mut belief = BeliefState::new(1, BetaPrior::UNIFORM, BetaPrior::UNIFORM);
        belief.histories[0] = UserHistory { notfake_given_notfake: 3, fake_given_notfake: 1, ..Default::default() };
        let mut r = rng(2);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_params(&belief, &mut r)[0].theta_notfake).sum::<f64>() / n as f64;
        assert!((mean - 4.0 / 6.0).abs() <= 0.01, "mean {mean}");
    }

    #[test]
    fn pinned_history_centers_the_posterior() {
        let h = pinned_history(FlaggingParams::new(0.55, 0.55), 1_000_000);
        let belief = BeliefState { histories: vec![h], prior_notfake: BetaPrior::UNIFORM, prior_fake: BetaPrior::UNIFORM };
        let m = mean_params(&belief)[0];
        assert!((m.theta_notfake - 0.55).abs() < 1e-5 && (m.theta_fake - 0.55).abs() < 1e-5);
    }

    fn grid_params() -> impl Strategy<Value = FlaggingParams> {
        (1u32..10, 1u32..10).prop_map(|(a, b)| FlaggingParams::new(a as f64 / 10.0, b as f64 / 10.0))
    }

    proptest! {
        #[test]
        fn log_space_matches_direct_product(
            params in prop::collection::vec(grid_params(), 2..20),
            mask in any::<u32>(),
            omega in 0.05f64..0.95,
        ) {
            let n = params.len() as u32;
            let exposed: Vec<UserId> = (0..n).map(UserId).collect();
            let flaggers: Vec<UserId> = (1..n).filter(|i| mask >> i & 1 == 1).map(UserId).collect();
            let got = news_fake_posterior(omega, &params, &exposed, &flaggers, UserId(0)).unwrap().prob_fake;
            let want = direct_posterior(omega, &params, &exposed, &flaggers, UserId(0));
            prop_assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
        }

        #[test]
        fn posterior_is_permutation_invariant(
            params in prop::collection::vec(grid_params(), 3..12),
            mask in any::<u32>(),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let n = params.len() as u32;
            let mut exposed: Vec<UserId> = (0..n).map(UserId).collect();
            let mut flaggers: Vec<UserId> = (1..n).filter(|i| mask >> i & 1 == 1).map(UserId).collect();
            let a = news_fake_posterior(0.3, &params, &exposed, &flaggers, UserId(0)).unwrap().prob_fake;
            exposed.shuffle(&mut rng(seed));
            flaggers.shuffle(&mut rng(seed ^ 1));
            let b = news_fake_posterior(0.3, &params, &exposed, &flaggers, UserId(0)).unwrap().prob_fake;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn flag_direction_follows_informativeness(
            others in prop::collection::vec(grid_params(), 1..6),
            mask in any::<u32>(),
            target in grid_params(),
        ) {
            let mut params = others.clone();
            params.push(target);
            let n = params.len() as u32;
            let u = UserId(n - 1);
            let exposed: Vec<UserId> = (0..n).map(UserId).collect();
            let mut flaggers: Vec<UserId> = (1..n - 1).filter(|i| mask >> i & 1 == 1).map(UserId).collect();
            let without = news_fake_posterior(0.2, &params, &exposed, &flaggers, UserId(0)).unwrap().prob_fake;
            flaggers.push(u);
            let with = news_fake_posterior(0.2, &params, &exposed, &flaggers, UserId(0)).unwrap().prob_fake;
            let informativeness = target.theta_fake + target.theta_notfake - 1.0;
            if informativeness > 1e-9 {
                prop_assert!(with > without);
            } else if informativeness < -1e-9 {
                prop_assert!(with < without);
            } else {
                prop_assert!((with - without).abs() < 1e-12);
            }
        }

        #[test]
        fn feedback_adds_one_count_per_exposed_non_source(
            exposed in prop::collection::btree_set(0u32..30, 1..20),
            mask in any::<u32>(),
            fake in any::<bool>(),
        ) {
            let exposed: Vec<UserId> = exposed.into_iter().map(UserId).collect();
            let source = exposed[0];
            let flaggers: Vec<UserId> = exposed.iter().copied().enumerate()
                .filter(|(i, u)| *u != source && mask >> (i % 32) & 1 == 1).map(|(_, u)| u).collect();
            let mut h = vec![UserHistory::default(); 30];
            let verdict = if fake { Label::Fake } else { Label::NotFake };
            record_expert_feedback(&mut h, verdict, &exposed, &flaggers, source).unwrap();
            prop_assert_eq!(h.iter().map(UserHistory::total).sum::<u64>(), exposed.len() as u64 - 1);
            prop_assert!(h.iter().all(|x| x.total() <= 1));
            prop_assert_eq!(h[source.index()].total(), 0);
        }
    }
}
