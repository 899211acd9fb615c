//! Ground-truth user behavior: abstention, review accuracy and flag sampling.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UserId;

/// True label of a news item, or an expert verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Fake,
    NotFake,
}

impl Label {
    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }
}

/// `alpha`: keeps quiet on true news when reviewing. `beta`: flags fake news
/// when reviewing. `gamma`: probability of not reviewing at all (never flags).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserProfile {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl UserProfile {
    pub const GOOD: UserProfile = UserProfile { alpha: 0.9, beta: 0.9, gamma: 0.0 };
    pub const SPAMMER: UserProfile = UserProfile { alpha: 0.1, beta: 0.1, gamma: 0.0 };
    pub const INDIFFERENT: UserProfile = UserProfile { alpha: 0.5, beta: 0.5, gamma: 0.0 };
    pub const EXPERT: UserProfile = UserProfile { alpha: 1.0, beta: 1.0, gamma: 0.0 };

    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let p = UserProfile { alpha, beta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        UserProfile { gamma, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Observed-behavior parameters: `theta_notfake = P(no flag | not fake)`,
/// `theta_fake = P(flag | fake)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlaggingParams {
    pub theta_notfake: f64,
    pub theta_fake: f64,
}

impl FlaggingParams {
    pub const fn new(theta_notfake: f64, theta_fake: f64) -> Self {
        FlaggingParams { theta_notfake, theta_fake }
    }

    /// Probability of a flag given the true label.
    pub fn flag_prob(&self, label: Label) -> f64 {
        match label {
            Label::Fake => self.theta_fake,
            Label::NotFake => 1.0 - self.theta_notfake,
        }
    }
}

/// Mixes abstention into review accuracy:
/// `theta_notfake = gamma + (1 - gamma) * alpha`, `theta_fake = (1 - gamma) * beta`.
pub fn flagging_params(p: &UserProfile) -> FlaggingParams {
    FlaggingParams {
        theta_notfake: p.gamma + (1.0 - p.gamma) * p.alpha,
        theta_fake: (1.0 - p.gamma) * p.beta,
    }
}

/// One flag decision per newly exposed user, aligned with `newly_exposed`.
/// The source never flags and consumes no randomness; every other user
/// consumes exactly one uniform draw.
pub fn sample_flag_outcomes<R: Rng + ?Sized>(
    label: Label,
    newly_exposed: &[UserId],
    source: UserId,
    params: &[FlaggingParams],
    rng: &mut R,
) -> Vec<bool> {
    newly_exposed
        .iter()
        .map(|&u| {
            if u == source {
                false
            } else {
                rng.random::<f64>() < params[u.index()].flag_prob(label)
            }
        })
        .collect()
}

/// The users among `newly_exposed` who flag the news.
pub fn sample_flags<R: Rng + ?Sized>(
    label: Label,
    newly_exposed: &[UserId],
    source: UserId,
    params: &[FlaggingParams],
    rng: &mut R,
) -> Vec<UserId> {
    sample_flag_outcomes(label, newly_exposed, source, params, rng)
        .into_iter()
        .zip(newly_exposed)
        .filter_map(|(flag, &u)| flag.then_some(u))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationEntry {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub fraction: f64,
}

impl PopulationEntry {
    pub fn profile(&self) -> UserProfile {
        UserProfile { alpha: self.alpha, beta: self.beta, gamma: self.gamma }
    }
}

/// User types and the share of the population each makes up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PopulationSpec {
    pub entries: Vec<PopulationEntry>,
}

impl PopulationSpec {
    pub fn new(entries: impl IntoIterator<Item = (UserProfile, f64)>) -> Self {
        PopulationSpec {
            entries: entries
                .into_iter()
                .map(|(p, fraction)| PopulationEntry { alpha: p.alpha, beta: p.beta, gamma: p.gamma, fraction })
                .collect(),
        }
    }

    /// Good users, spammers and indifferent users in equal thirds.
    pub fn equal_thirds(gamma: f64) -> Self {
        let third = 1.0 / 3.0;
        Self::new([
            (UserProfile::GOOD.with_gamma(gamma), third),
            (UserProfile::SPAMMER.with_gamma(gamma), third),
            (UserProfile::INDIFFERENT.with_gamma(gamma), third),
        ])
    }

    pub fn good_vs_spammers(good_fraction: f64, gamma: f64) -> Self {
        Self::new([
            (UserProfile::GOOD.with_gamma(gamma), good_fraction),
            (UserProfile::SPAMMER.with_gamma(gamma), 1.0 - good_fraction),
        ])
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Config("population spec is empty".into()));
        }
        for e in &self.entries {
            e.profile().validate()?;
        }
        validate_fractions(self.entries.iter().map(|e| e.fraction), "population")
    }
}

pub(crate) fn validate_fractions(fractions: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for f in fractions {
        if !(f >= 0.0) {
            return Err(Error::Config(format!("{what} fraction {f} is negative or NaN")));
        }
        sum += f;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{what} fractions sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Splits `n` into integer counts proportional to `fractions`. Floors first,
/// then the leftover units go to the largest fractional remainders; equal
/// remainders favor the earlier entry.
pub fn largest_remainder(fractions: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    // stable sort keeps spec order among equal remainders
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-user entry indices: exact largest-remainder counts, randomly permuted.
pub(crate) fn assign_classes<R: Rng + ?Sized>(fractions: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let counts = largest_remainder(fractions, n);
    let mut classes: Vec<usize> = counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c)).collect();
    classes.shuffle(rng);
    classes
}

/// Gives each of `n` users a profile from `spec`, with realized type counts
/// equal to the largest-remainder rounding of the fractions.
pub fn assign_population<R: Rng + ?Sized>(spec: &PopulationSpec, n: usize, rng: &mut R) -> Result<Vec<UserProfile>> {
    spec.validate()?;
    let fractions: Vec<f64> = spec.entries.iter().map(|e| e.fraction).collect();
    Ok(assign_classes(&fractions, n, rng).into_iter().map(|i| spec.entries[i].profile()).collect())
}
