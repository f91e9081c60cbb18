#![allow(dead_code)]

use std::collections::HashMap;

use immunorec::ratings::{
    parse_ratings_csv, MovieId, PersonId, Profile, RatingsStore, VoteCategory, VoteScale,
};
use rand::Rng;

/// Two persons, ids 50 and 70, sharing six movies; used as ingestion input.
pub const REFERENCE_PAIR_CSV: &str = "person_id,movie_id,vote
50,2,1
50,4,1
50,19,0.6
50,21,0.2
50,24,0.8
50,27,1
50,31,1
50,32,0.8
50,62,1
50,65,0.8
50,76,1
50,93,0.6
50,94,0.8
70,1,0.8
70,2,0.6
70,5,0.6
70,8,0.4
70,13,0.2
70,15,0
70,19,0.2
70,24,0.6
70,25,0.4
70,32,0.8
70,34,0.8
70,52,0.6
70,62,0.8
70,65,0
70,70,0.6
70,86,0.4
70,87,0.2
70,95,0.8
70,107,0.6
";

pub fn reference_pair_store() -> RatingsStore {
    parse_ratings_csv(REFERENCE_PAIR_CSV.as_bytes(), VoteScale::UnitInterval)
        .expect("reference pair parses")
}

pub fn reference_pair() -> (Profile, Profile) {
    let store = reference_pair_store();
    (
        store.profile(PersonId(50)).unwrap().clone(),
        store.profile(PersonId(70)).unwrap().clone(),
    )
}

/// Expected kappa weights as literals, rows i = 1..6, columns j = 1..6.
pub const EXPECTED_WEIGHTS: [[f64; 6]; 6] = [
    [1.0, 0.8, 0.6, 0.4, 0.2, 0.0],
    [0.8, 1.0, 0.8, 0.6, 0.4, 0.2],
    [0.6, 0.8, 1.0, 0.8, 0.6, 0.4],
    [0.4, 0.6, 0.8, 1.0, 0.8, 0.6],
    [0.2, 0.4, 0.6, 0.8, 1.0, 0.8],
    [0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
];

fn value_map(p: &Profile) -> HashMap<u32, f64> {
    p.votes().map(|(m, v)| (m.0, v.value())).collect()
}

fn category_of(value: f64) -> usize {
    (value * 5.0).round() as usize
}

/// Brute-force kappa: loop over shared movies, summing literal-table lookups.
pub fn oracle_kappa(a: &Profile, b: &Profile) -> Option<f64> {
    let (va, vb) = (value_map(a), value_map(b));
    let mut n = 0usize;
    let mut sum = 0.0;
    for (movie, x) in &va {
        if let Some(y) = vb.get(movie) {
            n += 1;
            sum += EXPECTED_WEIGHTS[category_of(*x)][category_of(*y)];
        }
    }
    (n >= 2).then(|| sum / n as f64)
}

/// Brute-force tau on vote values: (C, D, ignored, tau).
pub fn oracle_tau(a: &Profile, b: &Profile) -> Option<(u64, u64, u64, f64)> {
    let (va, vb) = (value_map(a), value_map(b));
    let shared: Vec<(f64, f64)> = va
        .iter()
        .filter_map(|(m, x)| vb.get(m).map(|y| (*x, *y)))
        .collect();
    let n = shared.len();
    if n < 2 {
        return None;
    }
    let (mut c, mut d, mut ignored) = (0, 0, 0);
    for i in 0..n {
        for j in 0..n {
            if i >= j {
                continue;
            }
            let dx = shared[j].0 - shared[i].0;
            let dy = shared[j].1 - shared[i].1;
            if dx == 0.0 && dy == 0.0 {
                c += 1;
            } else if dx == 0.0 || dy == 0.0 {
                ignored += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                c += 1;
            } else {
                d += 1;
            }
        }
    }
    let tau = 2.0 * (c as f64 - d as f64) / (n * (n - 1)) as f64;
    Some((c, d, ignored, tau))
}

/// Random profile with 2 to `max_votes` draws over movies `1..=movie_range`.
pub fn random_profile(
    rng: &mut impl Rng,
    person: u32,
    max_votes: usize,
    movie_range: u32,
) -> Profile {
    let count = rng.gen_range(2..=max_votes);
    let mut profile = Profile::new(PersonId(person));
    for _ in 0..count {
        let movie = MovieId(rng.gen_range(1..=movie_range));
        let vote = VoteCategory::from_index(rng.gen_range(1..=6)).unwrap();
        profile.set(movie, vote);
    }
    profile
}
