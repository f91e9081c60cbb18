//! Affinity between two rating profiles.
//!
//! Two measures are provided:
//!
//! * Weighted Kappa with linear category weights `1 - |i - j| / 5` and chance
//!   agreement fixed at zero, so kappa is the mean weight over common movies.
//! * Kendall tau over pairs of common movies. A pair where exactly one person's
//!   vote difference is zero is ignored (neither concordant nor discordant) but
//!   still counts in the `n(n-1)/2` denominator; a pair where both differences
//!   are zero counts as concordant.
//!
//! Differences are taken on category indices, which have the same sign as the
//! differences of the unit-scale values.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, EvalError, Insufficient};
use crate::ratings::{
    common_count, common_movies, PersonId, Profile, RatingsStore, CATEGORY_COUNT,
};

const G: usize = CATEGORY_COUNT as usize;

/// Weight for rating category `i` against category `j` (both 1-based).
///
/// Panics if either index is outside `1..=6`.
pub fn kappa_weight(i: u8, j: u8) -> f64 {
    assert!(
        (1..=CATEGORY_COUNT).contains(&i) && (1..=CATEGORY_COUNT).contains(&j),
        "category index out of range: ({i}, {j})"
    );
    f64::from(weight_fifths(i, j)) / 5.0
}

/// The weight scaled by `g - 1 = 5`, as an exact integer.
fn weight_fifths(i: u8, j: u8) -> u32 {
    u32::from(CATEGORY_COUNT - 1 - i.abs_diff(j))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaResult {
    pub kappa: f64,
    pub n_common: usize,
    /// Sum of weights times agreement counts, before dividing by `n_common`.
    pub weight_sum: f64,
    /// Agreement counts; row is the first profile's category, column the second's.
    pub agreement: [[u32; G]; G],
}

impl KappaResult {
    /// Count for row category `i`, column category `j` (1-based).
    pub fn cell(&self, i: u8, j: u8) -> u32 {
        self.agreement[usize::from(i) - 1][usize::from(j) - 1]
    }
}

pub fn weighted_kappa(
    a: &Profile,
    b: &Profile,
    min_common: usize,
) -> Result<KappaResult, Insufficient> {
    let common = common_movies(a, b);
    let n_common = common.len();
    if n_common < min_common.max(1) {
        return Err(Insufficient {
            n_common,
            min_common,
        });
    }
    let mut agreement = [[0u32; G]; G];
    let mut fifths = 0u64;
    for c in &common {
        let (i, j) = (c.vote_a.index(), c.vote_b.index());
        agreement[usize::from(i) - 1][usize::from(j) - 1] += 1;
        fifths += u64::from(weight_fifths(i, j));
    }
    Ok(KappaResult {
        kappa: fifths as f64 / (5 * n_common) as f64,
        n_common,
        weight_sum: fifths as f64 / 5.0,
        agreement,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauResult {
    pub tau: f64,
    pub concordant: u64,
    pub discordant: u64,
    pub ignored: u64,
    pub n_common: usize,
    /// Kendall S, `concordant - discordant`.
    pub s: i64,
}

impl TauResult {
    pub fn total_pairs(&self) -> u64 {
        pair_count(self.n_common)
    }

    pub fn ignored_fraction(&self) -> f64 {
        self.ignored as f64 / self.total_pairs() as f64
    }
}

fn pair_count(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

pub fn kendall_tau(a: &Profile, b: &Profile, min_common: usize) -> Result<TauResult, Insufficient> {
    let common = common_movies(a, b);
    let n_common = common.len();
    if n_common < min_common.max(2) {
        return Err(Insufficient {
            n_common,
            min_common,
        });
    }
    let (mut concordant, mut discordant, mut ignored) = (0u64, 0u64, 0u64);
    for (k, first) in common.iter().enumerate() {
        for second in &common[k + 1..] {
            let da = second.vote_a.cmp(&first.vote_a);
            let db = second.vote_b.cmp(&first.vote_b);
            match (da, db) {
                (Ordering::Equal, Ordering::Equal) => concordant += 1,
                (Ordering::Equal, _) | (_, Ordering::Equal) => ignored += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let s = concordant as i64 - discordant as i64;
    Ok(TauResult {
        tau: (2 * s) as f64 / (n_common * (n_common - 1)) as f64,
        concordant,
        discordant,
        ignored,
        n_common,
        s,
    })
}

/// Ratio of concordance to discordance probability, `(1 + tau) / (1 - tau)`.
/// `None` when every pair is concordant.
pub fn concordance_ratio(tau: f64) -> Option<f64> {
    (tau < 1.0).then(|| (1.0 + tau) / (1.0 - tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    WeightedKappa,
    KendallTau,
}

impl MeasureKind {
    pub fn short_name(self) -> &'static str {
        match self {
            MeasureKind::WeightedKappa => "kappa",
            MeasureKind::KendallTau => "tau",
        }
    }
}

impl std::str::FromStr for MeasureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kappa" | "weighted_kappa" => Ok(MeasureKind::WeightedKappa),
            "tau" | "kendall_tau" => Ok(MeasureKind::KendallTau),
            other => Err(format!("unknown measure {other:?}, expected kappa or tau")),
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Which affinity to use and how many common movies it needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffinityMeasure {
    pub kind: MeasureKind,
    pub min_common: usize,
}

impl AffinityMeasure {
    pub const DEFAULT_MIN_COMMON: usize = 2;

    pub fn new(kind: MeasureKind) -> Self {
        AffinityMeasure {
            kind,
            min_common: Self::DEFAULT_MIN_COMMON,
        }
    }

    pub fn kappa() -> Self {
        Self::new(MeasureKind::WeightedKappa)
    }

    pub fn tau() -> Self {
        Self::new(MeasureKind::KendallTau)
    }

    pub fn with_min_common(mut self, min_common: usize) -> Self {
        self.min_common = min_common.max(Self::DEFAULT_MIN_COMMON);
        self
    }

    pub fn affinity(&self, a: &Profile, b: &Profile) -> Result<f64, Insufficient> {
        match self.kind {
            MeasureKind::WeightedKappa => weighted_kappa(a, b, self.min_common).map(|r| r.kappa),
            MeasureKind::KendallTau => kendall_tau(a, b, self.min_common).map(|r| r.tau),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementStrength {
    Poor,
    Fair,
    Moderate,
    Good,
    VeryGood,
}

impl AgreementStrength {
    pub fn label(self) -> &'static str {
        match self {
            AgreementStrength::Poor => "poor",
            AgreementStrength::Fair => "fair",
            AgreementStrength::Moderate => "moderate",
            AgreementStrength::Good => "good",
            AgreementStrength::VeryGood => "very_good",
        }
    }
}

impl fmt::Display for AgreementStrength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Agreement band of an affinity value.
///
/// Kappa bands are half-open `(lower, upper]`, with the first band taking
/// everything up to 0.20. Tau bands are closed and checked in the order
/// listed below; the fair band (-0.6..-0.2) lies inside the poor band, so tau
/// never classifies as fair.
pub fn agreement_strength(value: f64, kind: MeasureKind) -> AgreementStrength {
    use AgreementStrength::*;
    match kind {
        MeasureKind::WeightedKappa => {
            if value <= 0.20 {
                Poor
            } else if value <= 0.40 {
                Fair
            } else if value <= 0.60 {
                Moderate
            } else if value <= 0.80 {
                Good
            } else {
                VeryGood
            }
        }
        MeasureKind::KendallTau => {
            const BANDS: [(f64, f64, AgreementStrength); 5] = [
                (-1.0, -0.2, Poor),
                (-0.6, -0.2, Fair),
                (-0.2, 0.2, Moderate),
                (0.2, 0.6, Good),
                (0.6, 1.0, VeryGood),
            ];
            BANDS
                .iter()
                .find(|(lo, hi, _)| (*lo..=*hi).contains(&value))
                .map(|&(_, _, band)| band)
                .unwrap_or(if value < -1.0 { Poor } else { VeryGood })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IgnoredPair {
    pub pair_index: usize,
    pub person_a: PersonId,
    pub person_b: PersonId,
    pub n_common: usize,
    pub ignored_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IgnoredStats {
    pub pairs: Vec<IgnoredPair>,
    pub mean: f64,
}

impl IgnoredStats {
    /// CSV with one row per pair and a trailing `mean` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record([
            "pair_index",
            "person_a",
            "person_b",
            "n_common",
            "ignored_fraction",
        ])?;
        for p in &self.pairs {
            w.write_record([
                p.pair_index.to_string(),
                p.person_a.to_string(),
                p.person_b.to_string(),
                p.n_common.to_string(),
                p.ignored_fraction.to_string(),
            ])?;
        }
        w.write_record(["mean", "", "", "", &self.mean.to_string()])?;
        w.flush()?;
        Ok(())
    }
}

/// Above this many candidate pairs, pairs are drawn by rejection sampling
/// instead of enumerating every eligible pair.
const ENUMERATION_LIMIT: u64 = 2_000_000;

/// Samples `pair_count` distinct person pairs sharing at least `min_common`
/// movies and reports the fraction of Kendall pairs each one ignores.
pub fn ignored_fraction_stats(
    store: &RatingsStore,
    pair_count_requested: usize,
    min_common: usize,
    seed: u64,
) -> Result<IgnoredStats, EvalError> {
    let min_common = min_common.max(2);
    let profiles: Vec<&Profile> = store.profiles().filter(|p| p.len() >= min_common).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let chosen: Vec<(usize, usize)> = if pair_count(profiles.len()) <= ENUMERATION_LIMIT {
        let eligible: Vec<(usize, usize)> = (0..profiles.len())
            .flat_map(|i| (i + 1..profiles.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| common_count(profiles[i], profiles[j]) >= min_common)
            .collect();
        if eligible.len() < pair_count_requested {
            return Err(EvalError::NotEnoughPairs {
                requested: pair_count_requested,
                available: eligible.len(),
            });
        }
        sample(&mut rng, eligible.len(), pair_count_requested)
            .into_iter()
            .map(|k| eligible[k])
            .collect()
    } else {
        let max_attempts = pair_count_requested.saturating_mul(1000).max(10_000);
        let mut seen = HashSet::new();
        let mut chosen = Vec::with_capacity(pair_count_requested);
        for _ in 0..max_attempts {
            if chosen.len() == pair_count_requested {
                break;
            }
            let i = rng.gen_range(0..profiles.len());
            let j = rng.gen_range(0..profiles.len());
            let key = (i.min(j), i.max(j));
            if i == j || seen.contains(&key) {
                continue;
            }
            seen.insert(key);
            if common_count(profiles[key.0], profiles[key.1]) >= min_common {
                chosen.push(key);
            }
        }
        if chosen.len() < pair_count_requested {
            return Err(EvalError::NotEnoughPairs {
                requested: pair_count_requested,
                available: chosen.len(),
            });
        }
        chosen
    };

    let pairs: Vec<IgnoredPair> = chosen
        .into_iter()
        .enumerate()
        .map(|(pair_index, (i, j))| {
            let tau = kendall_tau(profiles[i], profiles[j], min_common)
                .expect("pair checked for min_common");
            IgnoredPair {
                pair_index,
                person_a: profiles[i].person_id,
                person_b: profiles[j].person_id,
                n_common: tau.n_common,
                ignored_fraction: tau.ignored_fraction(),
            }
        })
        .collect();
    let mean = if pairs.is_empty() {
        f64::NAN
    } else {
        pairs.iter().map(|p| p.ignored_fraction).sum::<f64>() / pairs.len() as f64
    };
    Ok(IgnoredStats { pairs, mean })
}
