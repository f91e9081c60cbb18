//! Idiotypic immune network over rating profiles.
//!
//! The active user is the antigen; other persons in the store are candidate
//! antibodies. Each antibody `i` carries a concentration `x_i` that evolves as
//!
//! ```text
//! dx_i/dt = k1 * m_i * x_i * y  -  (k2 / n) * sum_{j != i} max(0, m_ij) * x_i * x_j  -  k3 * x_i
//! ```
//!
//! where `m_i` is the antibody's affinity to the antigen, `m_ij` the affinity
//! between two antibodies, `y` the antigen concentration and `n` the current
//! pool size. The system is integrated with explicit Euler steps; antibodies
//! falling below `x_death` are removed and replaced by fresh draws from the
//! store until no eligible person remains.

use std::ops::Deref;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::AffinityMeasure;
use crate::error::NetworkError;
use crate::ratings::{common_count, PersonId, Profile, RatingsStore};

/// Tunable constants of the network dynamics and the stopping rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AisParams {
    pub pool_size: usize,
    /// Stimulation rate from antigen matching.
    pub k1: f64,
    /// Suppression rate from antibody-antibody matching.
    pub k2: f64,
    /// Natural death rate.
    pub k3: f64,
    pub dt: f64,
    pub antigen_concentration: f64,
    pub x_init: f64,
    pub x_death: f64,
    pub x_max: f64,
    pub max_steps: usize,
    pub stable_window: usize,
    pub stable_tol: f64,
    pub seed: u64,
}

impl Default for AisParams {
    fn default() -> Self {
        AisParams {
            pool_size: 100,
            k1: 1.0,
            k2: 0.5,
            k3: 0.1,
            dt: 0.1,
            antigen_concentration: 1.0,
            x_init: 1.0,
            x_death: 0.05,
            x_max: 10.0,
            max_steps: 1000,
            stable_window: 50,
            stable_tol: 1e-3,
            seed: 0,
        }
    }
}

impl AisParams {
    /// Reads a flat `key = value` file; absent keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, NetworkError> {
        let params: AisParams =
            toml::from_str(text).map_err(|e| NetworkError::InvalidParams(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let fail = |msg: &str| Err(NetworkError::InvalidParams(msg.to_string()));
        let finite = [
            self.k1,
            self.k2,
            self.k3,
            self.dt,
            self.antigen_concentration,
            self.x_init,
            self.x_death,
            self.x_max,
            self.stable_tol,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("parameters must be finite");
        }
        if self.pool_size == 0 || self.max_steps == 0 || self.stable_window == 0 {
            return fail("pool_size, max_steps and stable_window must be positive");
        }
        if self.k1 < 0.0 || self.k2 < 0.0 || self.k3 < 0.0 {
            return fail("rates must be non-negative");
        }
        if self.dt <= 0.0 || self.antigen_concentration <= 0.0 || self.stable_tol <= 0.0 {
            return fail("dt, antigen_concentration and stable_tol must be positive");
        }
        if !(self.x_death > 0.0 && self.x_death < self.x_init && self.x_init <= self.x_max) {
            return fail("need 0 < x_death < x_init <= x_max");
        }
        if self.dt * self.k3 >= 1.0 {
            return fail("dt * k3 must be below 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Antibody {
    pub person_id: PersonId,
    pub concentration: f64,
    /// Affinity to the antigen.
    pub affinity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// No deaths and only small concentration changes over the stability window.
    Stable,
    /// The candidate supply ran out and the pool stopped changing, or emptied.
    Exhausted,
    MaxSteps,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Stable => "stable",
            StopReason::Exhausted => "exhausted",
            StopReason::MaxSteps => "max_steps",
        }
    }
}

/// A live network for one antigen. `S` is any handle to the ratings store
/// (`&RatingsStore`, `Arc<RatingsStore>`).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState<S> {
    store: S,
    antigen: Profile,
    measure: AffinityMeasure,
    params: AisParams,
    pool: Vec<Antibody>,
    /// Symmetric antibody-antibody affinities aligned with `pool`; zero where undefined.
    pairwise: Vec<Vec<f64>>,
    /// Eligible persons not yet drawn, in seeded shuffled order, consumed from the back.
    reservoir: Vec<PersonId>,
    exhausted: bool,
    steps_taken: usize,
    deletions: usize,
    unreplaced_deaths: usize,
    steps_since_deletion: usize,
    stable_streak: usize,
    last_max_change: f64,
    stop_reason: Option<StopReason>,
}

impl<S: Deref<Target = RatingsStore>> NetworkState<S> {
    /// Fills a pool of up to `params.pool_size` persons drawn uniformly without
    /// replacement from those sharing at least `min_common` movies with the antigen.
    pub fn init(
        antigen: Profile,
        store: S,
        measure: AffinityMeasure,
        params: AisParams,
    ) -> Result<Self, NetworkError> {
        params.validate()?;
        if antigen.len() < measure.min_common {
            return Err(NetworkError::IneligibleAntigen {
                votes: antigen.len(),
                min_common: measure.min_common,
            });
        }
        let mut reservoir: Vec<PersonId> = store
            .profiles()
            .filter(|p| {
                p.person_id != antigen.person_id && common_count(&antigen, p) >= measure.min_common
            })
            .map(|p| p.person_id)
            .collect();
        if reservoir.is_empty() {
            return Err(NetworkError::NoEligibleCandidates);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        reservoir.shuffle(&mut rng);

        let mut state = NetworkState {
            store,
            antigen,
            measure,
            params,
            pool: Vec::new(),
            pairwise: Vec::new(),
            reservoir,
            exhausted: false,
            steps_taken: 0,
            deletions: 0,
            unreplaced_deaths: 0,
            steps_since_deletion: 0,
            stable_streak: 0,
            last_max_change: f64::INFINITY,
            stop_reason: None,
        };
        let wanted = state.params.pool_size;
        let filled = state.recruit(wanted);
        state.exhausted = filled < wanted;
        Ok(state)
    }

    /// Draws up to `count` new antibodies, returning how many were added.
    fn recruit(&mut self, count: usize) -> usize {
        let mut added = 0;
        while added < count {
            let Some(person) = self.reservoir.pop() else {
                break;
            };
            let profile = self
                .store
                .profile(person)
                .expect("reservoir holds store members");
            let affinity = self
                .measure
                .affinity(&self.antigen, profile)
                .expect("reservoir members share min_common movies with the antigen");
            let row: Vec<f64> = self
                .pool
                .iter()
                .map(|other| {
                    let other_profile = self
                        .store
                        .profile(other.person_id)
                        .expect("pool holds store members");
                    self.measure.affinity(profile, other_profile).unwrap_or(0.0)
                })
                .collect();
            for (existing, &m) in self.pairwise.iter_mut().zip(&row) {
                existing.push(m);
            }
            let mut own = row;
            own.push(0.0);
            self.pairwise.push(own);
            self.pool.push(Antibody {
                person_id: person,
                concentration: self.params.x_init,
                affinity,
            });
            added += 1;
        }
        added
    }

    /// One synchronous explicit-Euler update of every concentration.
    pub fn step(&mut self) {
        let n = self.pool.len();
        let p = &self.params;
        let before: Vec<f64> = self.pool.iter().map(|a| a.concentration).collect();
        let mut max_change = 0.0f64;
        for (i, antibody) in self.pool.iter_mut().enumerate() {
            let x = before[i];
            let suppression: f64 = self.pairwise[i]
                .iter()
                .zip(&before)
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, (&m, &xj))| m.max(0.0) * xj)
                .sum();
            let rate = p.k1 * antibody.affinity * x * p.antigen_concentration
                - (p.k2 / n as f64) * suppression * x
                - p.k3 * x;
            let next = (x + p.dt * rate).clamp(0.0, p.x_max);
            let change = if x > 0.0 {
                (next - x).abs() / x
            } else if next == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            max_change = max_change.max(change);
            antibody.concentration = next;
        }
        self.steps_taken += 1;
        self.last_max_change = max_change;
    }

    /// Removes antibodies below `x_death` and recruits replacements. Returns
    /// the number removed.
    pub fn replace_dead(&mut self) -> usize {
        let threshold = self.params.x_death;
        let keep: Vec<bool> = self
            .pool
            .iter()
            .map(|a| a.concentration >= threshold)
            .collect();
        let dead = keep.iter().filter(|&&k| !k).count();
        if dead == 0 {
            return 0;
        }
        let mut flags = keep.iter();
        self.pool.retain(|_| *flags.next().unwrap());
        let mut flags = keep.iter();
        self.pairwise.retain(|_| *flags.next().unwrap());
        for row in &mut self.pairwise {
            let mut flags = keep.iter();
            row.retain(|_| *flags.next().unwrap());
        }
        self.deletions += dead;
        let added = self.recruit(dead);
        if added < dead {
            self.exhausted = true;
            self.unreplaced_deaths += dead - added;
        }
        dead
    }

    /// Alternates [`step`](Self::step) and [`replace_dead`](Self::replace_dead)
    /// until the pool is stable, the supply is exhausted, or `max_steps` is hit.
    pub fn run_to_convergence(&mut self) -> StopReason {
        self.run_to_convergence_with(|_| {})
    }

    /// As [`run_to_convergence`](Self::run_to_convergence), calling `observe`
    /// after every step, before dead antibodies are removed.
    pub fn run_to_convergence_with(&mut self, mut observe: impl FnMut(&Self)) -> StopReason {
        if let Some(reason) = self.stop_reason {
            return reason;
        }
        let window = self.params.stable_window;
        let reason = loop {
            if self.pool.is_empty() {
                break StopReason::Exhausted;
            }
            self.step();
            observe(self);
            if self.replace_dead() > 0 {
                self.steps_since_deletion = 0;
            } else {
                self.steps_since_deletion += 1;
            }
            if self.last_max_change < self.params.stable_tol {
                self.stable_streak += 1;
            } else {
                self.stable_streak = 0;
            }

            if self.pool.is_empty() {
                break StopReason::Exhausted;
            }
            let quiet = self.steps_since_deletion >= window;
            // a shrunken pool may still hold antibodies decaying towards death, so an
            // exhausted reservoir only changes the reported reason, not the stop test
            if quiet && self.stable_streak >= window {
                break if self.exhausted && self.unreplaced_deaths > 0 {
                    StopReason::Exhausted
                } else {
                    StopReason::Stable
                };
            }
            if self.steps_taken >= self.params.max_steps {
                break StopReason::MaxSteps;
            }
        };
        self.stop_reason = Some(reason);
        reason
    }

    pub fn antigen(&self) -> &Profile {
        &self.antigen
    }

    pub fn store(&self) -> &RatingsStore {
        &self.store
    }

    pub fn measure(&self) -> AffinityMeasure {
        self.measure
    }

    pub fn params(&self) -> &AisParams {
        &self.params
    }

    pub fn pool(&self) -> &[Antibody] {
        &self.pool
    }

    /// Profile of the `index`-th antibody.
    pub fn antibody_profile(&self, index: usize) -> &Profile {
        self.store
            .profile(self.pool[index].person_id)
            .expect("pool holds store members")
    }

    /// Affinity between antibodies `i` and `j` of the current pool.
    pub fn pairwise_affinity(&self, i: usize, j: usize) -> f64 {
        self.pairwise[i][j]
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn deletions(&self) -> usize {
        self.deletions
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop_reason
    }

    /// Eligible persons not yet drawn into the pool.
    pub fn reservoir_len(&self) -> usize {
        self.reservoir.len()
    }

    #[doc(hidden)]
    pub fn set_concentrations(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.pool.len());
        for (a, &x) in self.pool.iter_mut().zip(values) {
            a.concentration = x;
        }
    }

    #[doc(hidden)]
    pub fn set_affinities(&mut self, antigen: &[f64], pairwise: &[Vec<f64>]) {
        assert_eq!(antigen.len(), self.pool.len());
        assert_eq!(pairwise.len(), self.pool.len());
        for (a, &m) in self.pool.iter_mut().zip(antigen) {
            a.affinity = m;
        }
        self.pairwise = pairwise.to_vec();
    }
}
