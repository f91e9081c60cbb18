//! Concentration-weighted rating prediction over a trained network.
//!
//! The prediction for a movie is the mean of the votes cast by pool members,
//! each weighted by its concentration. Members that did not vote the movie,
//! or whose concentration is zero, carry no weight.

use std::collections::BTreeSet;
use std::io::Write;
use std::ops::Deref;

use serde::Serialize;
use thiserror::Error;

use crate::error::DataError;
use crate::network::NetworkState;
use crate::ratings::{format_unit_value, MovieId, RatingsStore, VoteCategory};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub movie_id: MovieId,
    pub score: f64,
    pub rounded: VoteCategory,
    /// Number of pool members with positive concentration that voted the movie.
    pub support: usize,
    /// Sum of the supporting concentrations.
    pub weight_mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no antibody in the pool voted movie {0}")]
pub struct NoSupport(pub MovieId);

pub fn predict<S: Deref<Target = RatingsStore>>(
    state: &NetworkState<S>,
    movie: MovieId,
) -> Result<Prediction, NoSupport> {
    let supporters: Vec<(f64, f64)> = state
        .pool()
        .iter()
        .enumerate()
        .filter(|(_, a)| a.concentration > 0.0)
        .filter_map(|(i, a)| {
            state
                .antibody_profile(i)
                .get(movie)
                .map(|v| (a.concentration, v.value()))
        })
        .collect();
    if supporters.is_empty() {
        return Err(NoSupport(movie));
    }
    let weight_mass: f64 = supporters.iter().map(|&(x, _)| x).sum();
    let lo = supporters
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    let hi = supporters
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    // Offsetting by the lowest vote keeps a unanimous vote exact.
    let offset: f64 = supporters.iter().map(|&(x, v)| x * (v - lo)).sum();
    let score = (lo + offset / weight_mass).clamp(lo, hi);
    Ok(Prediction {
        movie_id: movie,
        score,
        rounded: VoteCategory::nearest(score),
        support: supporters.len(),
        weight_mass,
    })
}

/// Best `n` predictions over every movie voted by the pool, by descending
/// score, then descending support, then ascending movie id.
pub fn recommend_top_n<S: Deref<Target = RatingsStore>>(
    state: &NetworkState<S>,
    n: usize,
    exclude_seen: bool,
) -> Vec<Prediction> {
    let candidates: BTreeSet<MovieId> = (0..state.pool().len())
        .flat_map(|i| state.antibody_profile(i).votes().map(|(m, _)| m))
        .filter(|&m| !(exclude_seen && state.antigen().has_seen(m)))
        .collect();
    let mut predictions: Vec<Prediction> = candidates
        .into_iter()
        .filter_map(|m| predict(state, m).ok())
        .collect();
    predictions.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.support.cmp(&a.support))
            .then(a.movie_id.cmp(&b.movie_id))
    });
    predictions.truncate(n);
    predictions
}

/// CSV `movie_id,score,rounded,support,weight_mass`.
pub fn write_predictions_csv<W: Write>(
    predictions: &[Prediction],
    out: W,
) -> Result<(), DataError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["movie_id", "score", "rounded", "support", "weight_mass"])?;
    for p in predictions {
        w.write_record([
            p.movie_id.to_string(),
            p.score.to_string(),
            format_unit_value(p.rounded).to_string(),
            p.support.to_string(),
            p.weight_mass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
