//! The epoch loop: seeding, spread, flagging, selection, expert review,
//! blocking, history updates and utility accounting.
//!
//! Everything random about the world (sources, labels, cascades, flags) is
//! drawn from substreams keyed by the master seed and a news or epoch index,
//! never from a stream a policy touches. Two policies run on the same seed
//! therefore see identical news until their selections diverge.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::{simulate_cascade, CascadeTrajectory, DEFAULT_MAX_ROUNDS, DEFAULT_ROUNDS_PER_EPOCH};
use crate::error::{Error, Result};
use crate::graph::{SocialGraph, UserId};
use crate::inference::{pinned_history, record_observations, BeliefState, BetaPrior, UserHistory};
use crate::rng::{substream, SimRng, Stream};
use crate::selection::{select, EpochView, NewsView, PolicyInputs, PolicyKind, SelectionConfig};
use crate::usermodel::{
    assign_classes, assign_population, flagging_params, sample_flag_outcomes, validate_fractions, FlaggingParams, Label,
    PopulationSpec, UserProfile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NewsId(pub u32);

impl fmt::Display for NewsId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// When expert-verified flag data enters the users' histories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryUpdate {
    /// Only at the moment a news item is reviewed.
    AtLabel,
    /// Also from later exposures of news cleared as not fake.
    Continuous,
}

/// Share of users whose news is fake with probability `prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FakeClass {
    pub fraction: f64,
    pub prob: f64,
}

/// Overrides the population draw for one user. The profile is picked
/// uniformly from `alternatives` at world build. A `known` user starts with
/// pinned history so learners already hold its true parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserOverride {
    pub user: u32,
    pub alternatives: Vec<UserProfile>,
    #[serde(default)]
    pub known: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub epochs: u32,
    pub budget: usize,
    pub sources_per_epoch: usize,
    /// Prior probability that a news item is fake, as used by the policies.
    pub news_prior: f64,
    pub rounds_per_epoch: u32,
    pub max_rounds: u32,
    /// Per-news infection probability is `base + Uniform[0, spread]`.
    pub infection_prob_base: f64,
    pub infection_prob_spread: f64,
    pub fake_classes: Vec<FakeClass>,
    /// `|U_n| / |U|`: share of frequent spreaders.
    pub frequent_fraction: f64,
    /// Chance that a source draw goes to the frequent spreaders.
    pub frequent_pick_prob: f64,
    /// When non-empty, exactly these users seed one news each every epoch.
    pub fixed_sources: Vec<u32>,
    pub population: PopulationSpec,
    pub user_overrides: Vec<UserOverride>,
    pub known_user_strength: u64,
    pub prior_notfake: BetaPrior,
    pub prior_fake: BetaPrior,
    pub history_update: HistoryUpdate,
    pub fixed_cm_theta: f64,
    /// Multiplicative noise on the values reported to policies:
    /// `value * (1 + noise * Uniform[-1, 1])`. Zero means exact.
    pub value_noise: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            epochs: 100,
            budget: 5,
            sources_per_epoch: 25,
            news_prior: 0.2,
            rounds_per_epoch: DEFAULT_ROUNDS_PER_EPOCH,
            max_rounds: DEFAULT_MAX_ROUNDS,
            infection_prob_base: 0.1,
            infection_prob_spread: 0.1,
            fake_classes: vec![
                FakeClass { fraction: 0.2, prob: 0.6 },
                FakeClass { fraction: 0.4, prob: 0.2 },
                FakeClass { fraction: 0.4, prob: 0.01 },
            ],
            frequent_fraction: 0.1,
            frequent_pick_prob: 0.5,
            fixed_sources: Vec::new(),
            population: PopulationSpec::equal_thirds(0.0),
            user_overrides: Vec::new(),
            known_user_strength: 1_000_000,
            prior_notfake: BetaPrior::UNIFORM,
            prior_fake: BetaPrior::UNIFORM,
            history_update: HistoryUpdate::Continuous,
            fixed_cm_theta: 0.6,
            value_noise: 0.0,
        }
    }
}

fn in_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} outside [0, 1]")))
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        if self.sources_per_epoch == 0 {
            return Err(Error::Config("sources_per_epoch must be at least 1".into()));
        }
        if !(self.news_prior > 0.0 && self.news_prior < 1.0) {
            return Err(Error::Config(format!("news_prior = {} outside (0, 1)", self.news_prior)));
        }
        if self.rounds_per_epoch == 0 || self.max_rounds == 0 {
            return Err(Error::Config("rounds_per_epoch and max_rounds must be at least 1".into()));
        }
        in_unit("infection_prob_base", self.infection_prob_base)?;
        if self.infection_prob_spread < 0.0 || self.infection_prob_base + self.infection_prob_spread > 1.0 {
            return Err(Error::Config("infection probability range must lie within [0, 1]".into()));
        }
        if self.fake_classes.is_empty() {
            return Err(Error::Config("fake_classes is empty".into()));
        }
        for c in &self.fake_classes {
            in_unit("fake class prob", c.prob)?;
        }
        validate_fractions(self.fake_classes.iter().map(|c| c.fraction), "fake class")?;
        in_unit("frequent_fraction", self.frequent_fraction)?;
        in_unit("frequent_pick_prob", self.frequent_pick_prob)?;
        in_unit("fixed_cm_theta", self.fixed_cm_theta)?;
        if !(self.value_noise >= 0.0) {
            return Err(Error::Config("value_noise must be non-negative".into()));
        }
        if !self.fixed_sources.is_empty() && self.fixed_sources.len() != self.sources_per_epoch {
            return Err(Error::Config(format!(
                "fixed_sources lists {} users but sources_per_epoch is {}",
                self.fixed_sources.len(),
                self.sources_per_epoch
            )));
        }
        for o in &self.user_overrides {
            if o.alternatives.is_empty() {
                return Err(Error::Config(format!("user override {} has no alternatives", o.user)));
            }
            for p in &o.alternatives {
                p.validate()?;
            }
        }
        self.population.validate()?;
        self.prior_notfake.validate()?;
        self.prior_fake.validate()
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig { omega: self.news_prior, k: self.budget, fixed_cm_theta: self.fixed_cm_theta }
    }
}

/// Ground truth of one simulated world: who seeds what, who flags how.
#[derive(Debug, Clone)]
pub struct World {
    pub graph: Arc<SocialGraph>,
    pub cfg: WorldConfig,
    pub seed: u64,
    pub profiles: Vec<UserProfile>,
    pub true_params: Vec<FlaggingParams>,
    /// Probability that news seeded by each user is fake.
    pub fake_prob: Vec<f64>,
    pub frequent: Vec<UserId>,
    pub regular: Vec<UserId>,
    /// Users learners start out knowing, with their pinned histories.
    pub known: Vec<(UserId, UserHistory)>,
}

/// Assigns source classes, profiles and the frequent-spreader partition.
/// Each assignment uses its own substream.
pub fn build_world(graph: Arc<SocialGraph>, cfg: &WorldConfig, seed: u64) -> Result<World> {
    cfg.validate()?;
    let n = graph.node_count();
    if cfg.fixed_sources.is_empty() && cfg.sources_per_epoch > n {
        return Err(Error::Config(format!("sources_per_epoch {} exceeds {n} users", cfg.sources_per_epoch)));
    }
    for &u in cfg.fixed_sources.iter().chain(cfg.user_overrides.iter().map(|o| &o.user)) {
        if u as usize >= n {
            return Err(Error::UserOutOfRange { user: u as usize, node_count: n });
        }
    }

    let class_fractions: Vec<f64> = cfg.fake_classes.iter().map(|c| c.fraction).collect();
    let fake_prob = assign_classes(&class_fractions, n, &mut substream(seed, Stream::SourceClasses, 0))
        .into_iter()
        .map(|c| cfg.fake_classes[c].prob)
        .collect();

    let mut pop_rng = substream(seed, Stream::Population, 0);
    let mut profiles = assign_population(&cfg.population, n, &mut pop_rng)?;
    let mut known = Vec::new();
    for o in &cfg.user_overrides {
        let pick = pop_rng.random_range(0..o.alternatives.len());
        profiles[o.user as usize] = o.alternatives[pick];
        if o.known {
            let params = flagging_params(&o.alternatives[pick]);
            known.push((UserId(o.user), pinned_history(params, cfg.known_user_strength)));
        }
    }
    let true_params = profiles.iter().map(flagging_params).collect();

    let membership = assign_classes(
        &[cfg.frequent_fraction, 1.0 - cfg.frequent_fraction],
        n,
        &mut substream(seed, Stream::Partition, 0),
    );
    let (mut frequent, mut regular) = (Vec::new(), Vec::new());
    for (u, class) in membership.into_iter().enumerate() {
        if class == 0 { &mut frequent } else { &mut regular }.push(UserId(u as u32));
    }

    Ok(World { graph, cfg: cfg.clone(), seed, profiles, true_params, fake_prob, frequent, regular, known })
}

impl World {
    pub fn user_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Fresh belief for a learner: shared priors plus any pinned users.
    pub fn initial_belief(&self) -> BeliefState {
        let mut belief = BeliefState::new(self.user_count(), self.cfg.prior_notfake, self.cfg.prior_fake);
        for &(u, h) in &self.known {
            belief.histories[u.index()] = h;
        }
        belief
    }
}

/// A news item as generated at the start of its epoch, before anyone reacts.
#[derive(Debug, Clone)]
pub struct SeededNews {
    pub id: NewsId,
    pub source: UserId,
    pub label: Label,
    pub seeded_epoch: u32,
    pub trajectory: CascadeTrajectory,
}

fn draw_source(world: &World, rng: &mut SimRng) -> UserId {
    let pool = if world.regular.is_empty()
        || (!world.frequent.is_empty() && rng.random::<f64>() < world.cfg.frequent_pick_prob)
    {
        &world.frequent
    } else {
        &world.regular
    };
    pool[rng.random_range(0..pool.len())]
}

/// Generates epoch `epoch`'s news with ids starting at `first_id`.
pub fn seed_news(world: &World, epoch: u32, first_id: u32) -> Result<Vec<SeededNews>> {
    if epoch == 0 {
        return Err(Error::Contract("epochs are numbered from 1".into()));
    }
    let cfg = &world.cfg;
    let mut rng = substream(world.seed, Stream::Seeding, epoch as u64);
    let sources: Vec<UserId> = if cfg.fixed_sources.is_empty() {
        if cfg.sources_per_epoch > world.user_count() {
            return Err(Error::Config("more sources per epoch than users".into()));
        }
        let mut chosen = Vec::with_capacity(cfg.sources_per_epoch);
        let mut taken = HashSet::new();
        while chosen.len() < cfg.sources_per_epoch {
            let u = draw_source(world, &mut rng);
            if taken.insert(u) {
                chosen.push(u);
            }
        }
        chosen
    } else {
        cfg.fixed_sources.iter().map(|&u| UserId(u)).collect()
    };

    sources
        .into_iter()
        .enumerate()
        .map(|(i, source)| {
            let id = NewsId(first_id + i as u32);
            let label = if rng.random::<f64>() < world.fake_prob[source.index()] { Label::Fake } else { Label::NotFake };
            let p = cfg.infection_prob_base + cfg.infection_prob_spread * rng.random::<f64>();
            let mut cascade_rng = substream(world.seed, Stream::Cascade, id.0 as u64);
            let trajectory = simulate_cascade(&world.graph, source, p, cfg.max_rounds, &mut cascade_rng)?;
            Ok(SeededNews { id, source, label, seeded_epoch: epoch, trajectory })
        })
        .collect()
}

/// Every epoch's news, realized up front. It depends only on the graph,
/// the seed and the seeding/spread settings, so all policies (and every
/// population variant) on one seed can share it.
#[derive(Debug, Clone)]
pub struct NewsSchedule {
    news: Vec<SeededNews>,
    /// `epoch_ends[t - 1]` = number of news seeded in epochs `1..=t`.
    epoch_ends: Vec<usize>,
}

impl NewsSchedule {
    pub fn generate(world: &World) -> Result<Self> {
        let mut news = Vec::new();
        let mut epoch_ends = Vec::with_capacity(world.cfg.epochs as usize);
        for epoch in 1..=world.cfg.epochs {
            news.extend(seed_news(world, epoch, news.len() as u32)?);
            epoch_ends.push(news.len());
        }
        Ok(NewsSchedule { news, epoch_ends })
    }

    pub fn epochs(&self) -> u32 {
        self.epoch_ends.len() as u32
    }

    pub fn epoch(&self, epoch: u32) -> &[SeededNews] {
        let t = epoch as usize;
        let start = if t <= 1 { 0 } else { self.epoch_ends[t - 2] };
        &self.news[start..self.epoch_ends[t - 1]]
    }

    pub fn news(&self, id: NewsId) -> &SeededNews {
        &self.news[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.news.len()
    }

    pub fn is_empty(&self) -> bool {
        self.news.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewsStatus {
    Active,
    Blocked,
    Cleared,
}

struct NewsState {
    status: NewsStatus,
    /// Length of the visible exposure prefix of the trajectory.
    visible: usize,
    /// Flag outcomes aligned with the visible prefix.
    flags: Vec<bool>,
    /// Start of this epoch's newly exposed users.
    fresh_from: usize,
    flag_rng: SimRng,
}

/// Read-only snapshot of one news item's protocol state.
#[derive(Debug, Clone)]
pub struct NewsItem<'a> {
    pub id: NewsId,
    pub source: UserId,
    pub true_label: Label,
    pub seeded_epoch: u32,
    pub status: NewsStatus,
    pub trajectory: &'a CascadeTrajectory,
    pub exposed: &'a [UserId],
    pub flaggers: Vec<UserId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub seeded: Vec<NewsId>,
    pub selected: Vec<NewsId>,
    pub verdicts: Vec<Label>,
    /// `val^t` of each selected news at selection time.
    pub values: Vec<u64>,
    pub utility: u64,
    pub cumulative_utility: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTrace {
    pub policy: PolicyKind,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub final_histories: Vec<UserHistory>,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TraceLine<'a> {
    Config { policy: PolicyKind, seed: u64, config: &'a serde_json::Value },
    Epoch(&'a EpochRecord),
    Histories { final_histories: &'a [UserHistory] },
}

impl RunTrace {
    pub fn cumulative(&self) -> Vec<u64> {
        self.epochs.iter().map(|e| e.cumulative_utility).collect()
    }

    pub fn final_utility(&self) -> u64 {
        self.epochs.last().map_or(0, |e| e.cumulative_utility)
    }

    /// One JSON record per line: a config header, one line per epoch, then
    /// the final histories.
    pub fn write_jsonl<W: Write>(&self, mut out: W, config: &serde_json::Value) -> Result<()> {
        let mut line = |rec: &TraceLine<'_>| -> Result<()> {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n").map_err(|e| Error::io("<trace>", e))
        };
        line(&TraceLine::Config { policy: self.policy, seed: self.seed, config })?;
        for e in &self.epochs {
            line(&TraceLine::Epoch(e))?;
        }
        line(&TraceLine::Histories { final_histories: &self.final_histories })
    }
}

/// One policy playing one world.
pub struct Simulation<'w> {
    world: &'w World,
    schedule: &'w NewsSchedule,
    policy: PolicyKind,
    belief: BeliefState,
    states: Vec<NewsState>,
    active: Vec<NewsId>,
    cleared: Vec<NewsId>,
    epoch: u32,
    cumulative: u64,
    policy_rng: SimRng,
    records: Vec<EpochRecord>,
    pending_seeded: Vec<NewsId>,
}

/// Active news and their remaining values, ready for a policy.
pub struct PreparedEpoch {
    pub epoch: u32,
    pub active: Vec<NewsId>,
    /// True remaining value per active news.
    pub values: Vec<u64>,
    /// Values as reported to the policy (equal to `values` unless noisy).
    pub reported: Vec<u64>,
}

impl<'w> Simulation<'w> {
    pub fn new(world: &'w World, schedule: &'w NewsSchedule, policy: PolicyKind) -> Self {
        Simulation {
            world,
            schedule,
            policy,
            belief: world.initial_belief(),
            states: Vec::with_capacity(schedule.len()),
            active: Vec::new(),
            cleared: Vec::new(),
            epoch: 0,
            cumulative: 0,
            policy_rng: substream(world.seed, Stream::Policy, 0),
            records: Vec::new(),
            pending_seeded: Vec::new(),
        }
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn cumulative_utility(&self) -> u64 {
        self.cumulative
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn active(&self) -> &[NewsId] {
        &self.active
    }

    pub fn news_item(&self, id: NewsId) -> Option<NewsItem<'_>> {
        let state = self.states.get(id.0 as usize)?;
        let seeded = self.schedule.news(id);
        let exposed = &seeded.trajectory.eventual_exposure()[..state.visible];
        Some(NewsItem {
            id,
            source: seeded.source,
            true_label: seeded.label,
            seeded_epoch: seeded.seeded_epoch,
            status: state.status,
            trajectory: &seeded.trajectory,
            exposed,
            flaggers: exposed.iter().zip(&state.flags).filter_map(|(&u, &f)| f.then_some(u)).collect(),
        })
    }

    /// Steps 1 and 2: seed this epoch's news, then spread every active and
    /// cleared news by one epoch and sample flags of the newly exposed.
    pub fn prepare(&mut self) -> Result<PreparedEpoch> {
        if self.epoch >= self.schedule.epochs() {
            return Err(Error::Protocol(format!("run already has {} epochs", self.epoch)));
        }
        self.epoch += 1;
        let epoch = self.epoch;
        let rpe = self.world.cfg.rounds_per_epoch;

        self.pending_seeded.clear();
        for news in self.schedule.epoch(epoch) {
            debug_assert_eq!(news.id.0 as usize, self.states.len());
            self.states.push(NewsState {
                status: NewsStatus::Active,
                visible: 0,
                flags: Vec::new(),
                fresh_from: 0,
                flag_rng: substream(self.world.seed, Stream::Flags, news.id.0 as u64),
            });
            self.active.push(news.id);
            self.pending_seeded.push(news.id);
        }

        for &id in self.active.iter().chain(&self.cleared) {
            let news = self.schedule.news(id);
            let state = &mut self.states[id.0 as usize];
            let now = news.trajectory.exposure_at(epoch - news.seeded_epoch + 1, rpe);
            let fresh = &now[state.visible..];
            state.fresh_from = state.visible;
            if !fresh.is_empty() {
                let flags =
                    sample_flag_outcomes(news.label, fresh, news.source, &self.world.true_params, &mut state.flag_rng);
                state.flags.extend(flags);
                state.visible = now.len();
            }
        }

        let values: Vec<u64> = self
            .active
            .iter()
            .map(|&id| (self.schedule.news(id).trajectory.eventual_exposure().len() - self.states[id.0 as usize].visible) as u64)
            .collect();
        let reported = if self.world.cfg.value_noise > 0.0 {
            let noise = self.world.cfg.value_noise;
            let mut rng = substream(self.world.seed, Stream::ValueNoise, epoch as u64);
            values
                .iter()
                .map(|&v| (v as f64 * (1.0 + noise * rng.random_range(-1.0..=1.0))).round().max(0.0) as u64)
                .collect()
        } else {
            values.clone()
        };
        Ok(PreparedEpoch { epoch, active: self.active.clone(), values, reported })
    }

    /// The policy-facing view of the active news.
    pub fn view<'s>(&'s self, prepared: &PreparedEpoch) -> EpochView<'s> {
        EpochView {
            news: prepared
                .active
                .iter()
                .zip(&prepared.reported)
                .map(|(&id, &value)| {
                    let news = self.schedule.news(id);
                    let state = &self.states[id.0 as usize];
                    NewsView {
                        news: id,
                        source: news.source,
                        value,
                        exposed: &news.trajectory.eventual_exposure()[..state.visible],
                        flags: &state.flags,
                    }
                })
                .collect(),
        }
    }

    /// True labels aligned with the active list; only the oracle receives these.
    pub fn labels(&self, prepared: &PreparedEpoch) -> Vec<Label> {
        prepared.active.iter().map(|&id| self.schedule.news(id).label).collect()
    }

    /// Step 3: ask the configured policy for `S^t`.
    pub fn choose(&mut self, prepared: &PreparedEpoch) -> Result<Vec<NewsId>> {
        let kind = self.policy;
        let labels = kind.reads_labels().then(|| self.labels(prepared));
        let view = self.view(prepared);
        let inputs = PolicyInputs::new(
            kind,
            kind.reads_belief().then_some(&self.belief),
            kind.reads_true_params().then_some(self.world.true_params.as_slice()),
            labels.as_deref(),
        )?;
        let selection = self.world.cfg.selection();
        let mut rng = self.policy_rng.clone();
        let picked = select(&inputs, &view, &selection, self.world.user_count(), &mut rng)?;
        self.policy_rng = rng;
        Ok(picked)
    }

    /// Steps 4 to 6: expert verdicts, blocking, history updates and utility.
    pub fn resolve(&mut self, prepared: &PreparedEpoch, selected: &[NewsId]) -> Result<&EpochRecord> {
        if prepared.epoch != self.epoch {
            return Err(Error::Protocol("resolve called for a stale epoch".into()));
        }
        if selected.len() > self.world.cfg.budget {
            return Err(Error::Protocol(format!("{} selections exceed budget {}", selected.len(), self.world.cfg.budget)));
        }
        let mut seen = HashSet::new();
        let mut positions = Vec::with_capacity(selected.len());
        for id in selected {
            let pos = prepared
                .active
                .iter()
                .position(|a| a == id)
                .ok_or_else(|| Error::Protocol(format!("news {id} is not active")))?;
            if !seen.insert(*id) {
                return Err(Error::Protocol(format!("news {id} selected twice")));
            }
            positions.push(pos);
        }

        // later exposures of previously cleared news
        if self.world.cfg.history_update == HistoryUpdate::Continuous {
            for &id in &self.cleared {
                let news = self.schedule.news(id);
                let state = &self.states[id.0 as usize];
                let exposed = &news.trajectory.eventual_exposure()[state.fresh_from..state.visible];
                let flags = &state.flags[state.fresh_from..state.visible];
                record_observations(
                    &mut self.belief.histories,
                    Label::NotFake,
                    news.source,
                    exposed.iter().copied().zip(flags.iter().copied()),
                );
            }
        }

        let mut verdicts = Vec::with_capacity(selected.len());
        let mut values = Vec::with_capacity(selected.len());
        let mut utility = 0;
        for (&id, &pos) in selected.iter().zip(&positions) {
            let news = self.schedule.news(id);
            let state = &mut self.states[id.0 as usize];
            let verdict = news.label;
            let exposed = &news.trajectory.eventual_exposure()[..state.visible];
            record_observations(
                &mut self.belief.histories,
                verdict,
                news.source,
                exposed.iter().copied().zip(state.flags.iter().copied()),
            );
            state.status = match verdict {
                Label::Fake => NewsStatus::Blocked,
                Label::NotFake => NewsStatus::Cleared,
            };
            let value = prepared.values[pos];
            if verdict.is_fake() {
                utility += value;
            } else {
                self.cleared.push(id);
            }
            verdicts.push(verdict);
            values.push(value);
        }
        self.active.retain(|id| !seen.contains(id));
        self.cleared.sort_unstable();
        self.cumulative += utility;

        self.records.push(EpochRecord {
            epoch: self.epoch,
            seeded: std::mem::take(&mut self.pending_seeded),
            selected: selected.to_vec(),
            verdicts,
            values,
            utility,
            cumulative_utility: self.cumulative,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    /// One full epoch with the configured policy.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let prepared = self.prepare()?;
        let selected = self.choose(&prepared)?;
        self.resolve(&prepared, &selected)
    }

    pub fn into_trace(self) -> RunTrace {
        RunTrace {
            policy: self.policy,
            seed: self.world.seed,
            epochs: self.records,
            final_histories: self.belief.histories,
        }
    }
}

/// Runs every epoch of a pre-built world.
pub fn run_with_schedule(world: &World, schedule: &NewsSchedule, policy: PolicyKind) -> Result<RunTrace> {
    let mut sim = Simulation::new(world, schedule, policy);
    for _ in 0..schedule.epochs() {
        sim.run_epoch()?;
    }
    Ok(sim.into_trace())
}

/// Builds the world for `seed`, realizes its news and plays `policy` on it.
pub fn run_simulation(graph: Arc<SocialGraph>, cfg: &WorldConfig, policy: PolicyKind, seed: u64) -> Result<RunTrace> {
    let world = build_world(graph, cfg, seed)?;
    let schedule = NewsSchedule::generate(&world)?;
    run_with_schedule(&world, &schedule, policy)
}

/// `Util(t, Opt) - Util(t, Algo)` for every epoch `t`.
pub fn regret(opt_trace: &RunTrace, algo_trace: &RunTrace) -> Result<Vec<f64>> {
    if opt_trace.epochs.len() != algo_trace.epochs.len() {
        return Err(Error::Contract(format!(
            "traces cover {} and {} epochs",
            opt_trace.epochs.len(),
            algo_trace.epochs.len()
        )));
    }
    Ok(opt_trace
        .epochs
        .iter()
        .zip(&algo_trace.epochs)
        .map(|(o, a)| o.cumulative_utility as f64 - a.cumulative_utility as f64)
        .collect())
}

/// World where point estimates get stuck. User 0 is known to flag with
/// accuracy `0.5 + epsilon`; user 1 is either an expert or a spammer and
/// starts unknown. Users `2..2+m` seed news only user 0 sees first, users
/// `2+m..2+2m` news only user 1 sees first. Cascades are certain and one
/// round per epoch, so a news item's value is `m - 1` at its seeding epoch
/// and zero afterwards.
pub fn regret_demo_world(sources_per_side: usize, epsilon: f64, epochs: u32) -> Result<(SocialGraph, WorldConfig)> {
    let m = sources_per_side;
    if m < 2 {
        return Err(Error::Config("regret demo needs at least two sources per side".into()));
    }
    let known = 0usize;
    let unknown = 1usize;
    let edges = (0..m).map(|i| (known, 2 + i)).chain((0..m).map(|i| (unknown, 2 + m + i)));
    let graph = SocialGraph::from_edges(2 + 2 * m, edges)?;

    let accuracy = 0.5 + epsilon;
    let cfg = WorldConfig {
        epochs,
        budget: 1,
        sources_per_epoch: 2 * m,
        news_prior: 0.5,
        rounds_per_epoch: 1,
        max_rounds: DEFAULT_MAX_ROUNDS,
        infection_prob_base: 1.0,
        infection_prob_spread: 0.0,
        fake_classes: vec![FakeClass { fraction: 1.0, prob: 0.5 }],
        frequent_fraction: 0.0,
        frequent_pick_prob: 0.5,
        fixed_sources: (2..2 + 2 * m as u32).collect(),
        // sources never flag
        population: PopulationSpec::new([(UserProfile { alpha: 0.5, beta: 0.5, gamma: 1.0 }, 1.0)]),
        user_overrides: vec![
            UserOverride {
                user: known as u32,
                alternatives: vec![UserProfile { alpha: accuracy, beta: accuracy, gamma: 0.0 }],
                known: true,
            },
            UserOverride {
                user: unknown as u32,
                alternatives: vec![UserProfile::EXPERT, UserProfile { alpha: 0.0, beta: 0.0, gamma: 0.0 }],
                known: false,
            },
        ],
        history_update: HistoryUpdate::AtLabel,
        ..WorldConfig::default()
    };
    Ok((graph, cfg))
}
