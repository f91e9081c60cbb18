//! Hidden-vote accuracy evaluation and the cross-measure experiment.
//!
//! For each sampled user, one vote at a time is masked from the profile, a
//! network is trained for the reduced profile against the full store, and the
//! masked movie is predicted. Trial accuracy is `1 - |prediction - actual|`
//! on the unit scale, so a one-category miss scores 0.8.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::AffinityMeasure;
use crate::error::{DataError, EvalError, NetworkError};
use crate::network::{AisParams, NetworkState};
use crate::ratings::{MovieId, PersonId, Profile, RatingsStore};
use crate::recommender::predict;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub user_count: usize,
    /// Minimum number of votes a person needs to be sampled.
    pub min_votes: usize,
    pub hides_per_user: usize,
    pub measure: AffinityMeasure,
    pub ais: AisParams,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            user_count: 30,
            min_votes: 21,
            hides_per_user: 10,
            measure: AffinityMeasure::kappa(),
            ais: AisParams::default(),
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.user_count == 0 || self.hides_per_user == 0 {
            return Err(EvalError::InvalidConfig(
                "user_count and hides_per_user must be positive".into(),
            ));
        }
        if self.min_votes < 2 {
            return Err(EvalError::InvalidConfig(
                "min_votes must be at least 2".into(),
            ));
        }
        self.ais.validate()?;
        Ok(())
    }
}

/// Outcome of hiding one vote.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trial {
    pub person_id: PersonId,
    pub movie_id: MovieId,
    pub actual: f64,
    /// `None` when no prediction could be made.
    pub predicted: Option<f64>,
}

impl Trial {
    pub fn accuracy(&self) -> Option<f64> {
        self.predicted.map(|p| 1.0 - (p - self.actual).abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserAccuracy {
    pub person_id: PersonId,
    /// Mean trial accuracy; `None` when no trial produced a prediction.
    pub accuracy: Option<f64>,
    pub predictions_made: usize,
    pub no_support_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub per_user: Vec<UserAccuracy>,
    /// Unweighted mean over users with at least one prediction.
    pub mean_accuracy: Option<f64>,
    /// Successful predictions over attempted trials.
    pub coverage: f64,
    pub trials: Vec<Trial>,
}

impl EvaluationReport {
    pub fn from_trials(trials: Vec<Trial>) -> Self {
        let mut per_user: Vec<UserAccuracy> = Vec::new();
        for trial in &trials {
            if per_user.last().map(|u| u.person_id) != Some(trial.person_id) {
                per_user.push(UserAccuracy {
                    person_id: trial.person_id,
                    accuracy: None,
                    predictions_made: 0,
                    no_support_count: 0,
                });
            }
            let user = per_user.last_mut().unwrap();
            match trial.accuracy() {
                Some(acc) => {
                    user.accuracy = Some(user.accuracy.unwrap_or(0.0) + acc);
                    user.predictions_made += 1;
                }
                None => user.no_support_count += 1,
            }
        }
        for user in &mut per_user {
            user.accuracy = user.accuracy.map(|sum| sum / user.predictions_made as f64);
        }
        let scored: Vec<f64> = per_user.iter().filter_map(|u| u.accuracy).collect();
        let mean_accuracy =
            (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
        let made: usize = per_user.iter().map(|u| u.predictions_made).sum();
        let coverage = if trials.is_empty() {
            0.0
        } else {
            made as f64 / trials.len() as f64
        };
        EvaluationReport {
            per_user,
            mean_accuracy,
            coverage,
            trials,
        }
    }

    /// CSV `person_id,accuracy,predictions_made,no_support`.
    pub fn write_per_user_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv_writer(out);
        w.write_record(["person_id", "accuracy", "predictions_made", "no_support"])?;
        for u in &self.per_user {
            w.write_record([
                u.person_id.to_string(),
                u.accuracy
                    .map_or_else(|| "n/a".to_string(), |a| a.to_string()),
                u.predictions_made.to_string(),
                u.no_support_count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

struct PlannedTrial<'a> {
    profile: &'a Profile,
    movie: MovieId,
    seed: u64,
}

/// Runs the hidden-vote protocol. The store is never modified; each trial
/// works on a masked copy of the user's profile.
pub fn evaluate(store: &RatingsStore, config: &EvalConfig) -> Result<EvaluationReport, EvalError> {
    config.validate()?;
    let qualifying: Vec<&Profile> = store
        .profiles()
        .filter(|p| p.len() >= config.min_votes)
        .collect();
    if qualifying.len() < config.user_count {
        return Err(EvalError::InsufficientUsers {
            needed: config.user_count,
            found: qualifying.len(),
            min_votes: config.min_votes,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut users: Vec<&Profile> = sample(&mut rng, qualifying.len(), config.user_count)
        .into_iter()
        .map(|k| qualifying[k])
        .collect();
    users.sort_by_key(|p| p.person_id);

    let mut plan = Vec::new();
    for profile in users {
        let movies: Vec<MovieId> = profile.votes().map(|(m, _)| m).collect();
        let hides = config.hides_per_user.min(movies.len());
        let mut chosen: Vec<MovieId> = sample(&mut rng, movies.len(), hides)
            .into_iter()
            .map(|k| movies[k])
            .collect();
        chosen.sort_unstable();
        for movie in chosen {
            plan.push(PlannedTrial {
                profile,
                movie,
                seed: rng.gen(),
            });
        }
    }

    let trials: Vec<Trial> = plan
        .par_iter()
        .map(|t| run_trial(store, config, t))
        .collect();
    Ok(EvaluationReport::from_trials(trials))
}

fn run_trial(store: &RatingsStore, config: &EvalConfig, planned: &PlannedTrial<'_>) -> Trial {
    let actual = planned
        .profile
        .get(planned.movie)
        .expect("hidden movie comes from the profile");
    let antigen = planned.profile.without(planned.movie);
    let params = AisParams {
        seed: planned.seed,
        ..config.ais.clone()
    };
    let predicted = NetworkState::init(antigen, store, config.measure, params)
        .ok()
        .and_then(|mut state| {
            state.run_to_convergence();
            predict(&state, planned.movie).ok().map(|p| p.score)
        });
    Trial {
        person_id: planned.profile.person_id,
        movie_id: planned.movie,
        actual: actual.value(),
        predicted,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossRow {
    pub person_id: PersonId,
    pub selected: f64,
    /// `None` when the comparison measure is undefined for the pair.
    pub compared: Option<f64>,
}

/// Trains a network with `select` and scores each surviving antibody against
/// the antigen with both measures, ordered by descending selected affinity.
pub fn cross_affinity_experiment(
    store: &RatingsStore,
    antigen: &Profile,
    select: AffinityMeasure,
    compare: AffinityMeasure,
    ais: &AisParams,
) -> Result<Vec<CrossRow>, NetworkError> {
    let mut state = NetworkState::init(antigen.clone(), store, select, ais.clone())?;
    state.run_to_convergence();
    let mut rows: Vec<CrossRow> = state
        .pool()
        .iter()
        .enumerate()
        .map(|(i, a)| CrossRow {
            person_id: a.person_id,
            selected: a.affinity,
            compared: compare.affinity(antigen, state.antibody_profile(i)).ok(),
        })
        .collect();
    rows.sort_by(|a, b| {
        b.selected
            .total_cmp(&a.selected)
            .then(a.person_id.cmp(&b.person_id))
    });
    Ok(rows)
}

/// CSV `person_id,selected,compared`; undefined comparisons read `insufficient`.
pub fn write_cross_csv<W: Write>(rows: &[CrossRow], out: W) -> Result<(), DataError> {
    let mut w = csv_writer(out);
    w.write_record(["person_id", "selected", "compared"])?;
    for r in rows {
        w.write_record([
            r.person_id.to_string(),
            r.selected.to_string(),
            r.compared
                .map_or_else(|| "insufficient".to_string(), |c| c.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.05;
const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mean_accuracy: Option<f64>,
    pub coverage: f64,
    pub users: usize,
    /// Non-empty bins of per-user accuracy, ascending.
    pub histogram: Vec<HistogramBin>,
}

impl Summary {
    pub fn text(&self) -> String {
        let mut s = String::new();
        let mean = self
            .mean_accuracy
            .map_or_else(|| "n/a".to_string(), |m| format!("{m:.6}"));
        writeln!(s, "users: {}", self.users).unwrap();
        writeln!(s, "mean_accuracy: {mean}").unwrap();
        writeln!(s, "coverage: {:.6}", self.coverage).unwrap();
        s
    }

    /// CSV `bin_low,bin_high,count`.
    pub fn write_histogram_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv_writer(out);
        w.write_record(["bin_low", "bin_high", "count"])?;
        for bin in &self.histogram {
            w.write_record([
                format!("{:.2}", bin.low),
                format!("{:.2}", bin.high),
                bin.count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn summarize(report: &EvaluationReport) -> Summary {
    let mut counts = [0usize; HISTOGRAM_BINS];
    for acc in report.per_user.iter().filter_map(|u| u.accuracy) {
        let bin = ((acc * HISTOGRAM_BINS as f64) + 1e-9)
            .floor()
            .clamp(0.0, (HISTOGRAM_BINS - 1) as f64) as usize;
        counts[bin] += 1;
    }
    let histogram = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &count)| HistogramBin {
            low: k as f64 * HISTOGRAM_BIN_WIDTH,
            high: (k + 1) as f64 * HISTOGRAM_BIN_WIDTH,
            count,
        })
        .collect();
    Summary {
        mean_accuracy: report.mean_accuracy,
        coverage: report.coverage,
        users: report.per_user.len(),
        histogram,
    }
}
