//! Ordinal movie ratings: the six-step vote scale, per-person profiles,
//! the ratings store, ingestion and synthetic data generation.
//!
//! Votes are kept as a category index `1..=6`; the rational value
//! `(index - 1) / 5` is derived only at the boundary.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Number of vote categories.
pub const CATEGORY_COUNT: u8 = 6;

const FLOAT_SCALE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PersonId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MovieId(pub u32);

impl fmt::Display for PersonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for MovieId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One of the six ordered vote categories 0, 0.2, 0.4, 0.6, 0.8, 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct VoteCategory(u8);

impl VoteCategory {
    pub const MIN: VoteCategory = VoteCategory(1);
    pub const MAX: VoteCategory = VoteCategory(CATEGORY_COUNT);

    /// Builds a category from its 1-based index.
    pub fn from_index(index: u8) -> Option<Self> {
        (1..=CATEGORY_COUNT)
            .contains(&index)
            .then_some(VoteCategory(index))
    }

    /// All six categories in ascending order.
    pub fn all() -> impl Iterator<Item = VoteCategory> {
        (1..=CATEGORY_COUNT).map(VoteCategory)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// The vote value on the unit scale.
    pub fn value(self) -> f64 {
        f64::from(self.0 - 1) / 5.0
    }

    /// Nearest category to a unit-scale score; exact midpoints round up.
    pub fn nearest(score: f64) -> Self {
        let steps = (score.clamp(0.0, 1.0) * 5.0 + 0.5 + FLOAT_SCALE_TOLERANCE).floor() as u8;
        VoteCategory(steps.min(CATEGORY_COUNT - 1) + 1)
    }
}

impl TryFrom<u8> for VoteCategory {
    type Error = String;

    fn try_from(index: u8) -> Result<Self, Self::Error> {
        VoteCategory::from_index(index)
            .ok_or_else(|| format!("vote category {index} outside 1..=6"))
    }
}

impl From<VoteCategory> for u8 {
    fn from(v: VoteCategory) -> u8 {
        v.0
    }
}

impl fmt::Display for VoteCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", format_unit_value(*self))
    }
}

/// Canonical unit-scale text for a category: `0`, `0.2`, ..., `1`.
pub fn format_unit_value(v: VoteCategory) -> &'static str {
    ["0", "0.2", "0.4", "0.6", "0.8", "1"][usize::from(v.0 - 1)]
}

/// Raw vote scales accepted at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteScale {
    /// Integers 0..=5, mapped k -> category k + 1.
    ZeroToFive,
    /// Floats within 1e-9 of one of 0, 0.2, ..., 1.
    UnitInterval,
}

pub fn normalize_vote(raw: f64, scale: VoteScale) -> Result<VoteCategory, DataError> {
    let out_of_scale = || DataError::OutOfScale { raw, line: None };
    if !raw.is_finite() {
        return Err(out_of_scale());
    }
    match scale {
        VoteScale::ZeroToFive => {
            if raw.fract() != 0.0 || !(0.0..=5.0).contains(&raw) {
                return Err(out_of_scale());
            }
            Ok(VoteCategory(raw as u8 + 1))
        }
        VoteScale::UnitInterval => VoteCategory::all()
            .find(|c| (c.value() - raw).abs() <= FLOAT_SCALE_TOLERANCE)
            .ok_or_else(out_of_scale),
    }
}

/// The votes of one person.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub person_id: PersonId,
    votes: BTreeMap<MovieId, VoteCategory>,
}

impl Profile {
    pub fn new(person_id: PersonId) -> Self {
        Profile {
            person_id,
            votes: BTreeMap::new(),
        }
    }

    /// Builds a profile from `(movie, vote)` pairs, rejecting repeated movies.
    pub fn from_votes(
        person_id: PersonId,
        votes: impl IntoIterator<Item = (MovieId, VoteCategory)>,
    ) -> Result<Self, DataError> {
        let mut profile = Profile::new(person_id);
        for (movie, vote) in votes {
            profile.insert(movie, vote)?;
        }
        Ok(profile)
    }

    /// Adds a vote; a second vote for the same movie is an error.
    pub fn insert(&mut self, movie: MovieId, vote: VoteCategory) -> Result<(), DataError> {
        if self.votes.contains_key(&movie) {
            return Err(DataError::DuplicateVote {
                person: self.person_id,
                movie,
                line: None,
            });
        }
        self.votes.insert(movie, vote);
        Ok(())
    }

    /// Sets a vote, replacing any earlier one. Returns the previous vote.
    pub fn set(&mut self, movie: MovieId, vote: VoteCategory) -> Option<VoteCategory> {
        self.votes.insert(movie, vote)
    }

    pub fn get(&self, movie: MovieId) -> Option<VoteCategory> {
        self.votes.get(&movie).copied()
    }

    pub fn has_seen(&self, movie: MovieId) -> bool {
        self.votes.contains_key(&movie)
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    /// Votes in ascending movie order.
    pub fn votes(&self) -> impl Iterator<Item = (MovieId, VoteCategory)> + '_ {
        self.votes.iter().map(|(&m, &v)| (m, v))
    }

    /// A copy of this profile with one movie masked out.
    pub fn without(&self, movie: MovieId) -> Profile {
        let mut masked = self.clone();
        masked.votes.remove(&movie);
        masked
    }
}

/// A movie both persons voted on, with each person's vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommonVote {
    pub movie: MovieId,
    pub vote_a: VoteCategory,
    pub vote_b: VoteCategory,
}

/// Intersection of two profiles, ascending by movie id.
pub fn common_movies(a: &Profile, b: &Profile) -> Vec<CommonVote> {
    let mut out = Vec::new();
    let mut left = a.votes.iter().peekable();
    let mut right = b.votes.iter().peekable();
    while let (Some(&(&ma, &va)), Some(&(&mb, &vb))) = (left.peek(), right.peek()) {
        match ma.cmp(&mb) {
            std::cmp::Ordering::Less => {
                left.next();
            }
            std::cmp::Ordering::Greater => {
                right.next();
            }
            std::cmp::Ordering::Equal => {
                out.push(CommonVote {
                    movie: ma,
                    vote_a: va,
                    vote_b: vb,
                });
                left.next();
                right.next();
            }
        }
    }
    out
}

/// Number of movies both persons voted on, without materializing them.
pub fn common_count(a: &Profile, b: &Profile) -> usize {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .votes
        .keys()
        .filter(|m| large.votes.contains_key(m))
        .count()
}

/// The population of profiles plus optional movie titles.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingsStore {
    profiles: BTreeMap<PersonId, Profile>,
    movies: BTreeMap<MovieId, String>,
}

impl RatingsStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_profile(&mut self, profile: Profile) -> Result<(), DataError> {
        if self.profiles.contains_key(&profile.person_id) {
            return Err(DataError::DuplicatePerson(profile.person_id));
        }
        self.profiles.insert(profile.person_id, profile);
        Ok(())
    }

    pub fn profile(&self, person: PersonId) -> Option<&Profile> {
        self.profiles.get(&person)
    }

    /// Profiles in ascending person order.
    pub fn profiles(&self) -> impl Iterator<Item = &Profile> + '_ {
        self.profiles.values()
    }

    pub fn person_count(&self) -> usize {
        self.profiles.len()
    }

    pub fn vote_count(&self) -> usize {
        self.profiles.values().map(Profile::len).sum()
    }

    pub fn title(&self, movie: MovieId) -> Option<&str> {
        self.movies.get(&movie).map(String::as_str)
    }

    pub fn movie_titles(&self) -> impl Iterator<Item = (MovieId, &str)> + '_ {
        self.movies.iter().map(|(&m, t)| (m, t.as_str()))
    }

    pub fn has_metadata(&self) -> bool {
        !self.movies.is_empty()
    }

    /// Every movie id that has a title or at least one vote, ascending.
    pub fn known_movies(&self) -> Vec<MovieId> {
        let mut ids: Vec<MovieId> = self.movies.keys().copied().collect();
        ids.extend(self.profiles.values().flat_map(|p| p.votes.keys().copied()));
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn knows_movie(&self, movie: MovieId) -> bool {
        self.movies.contains_key(&movie) || self.profiles.values().any(|p| p.has_seen(movie))
    }

    /// Attaches titles; every voted movie must then have one.
    pub fn attach_movies(&mut self, movies: BTreeMap<MovieId, String>) -> Result<(), DataError> {
        for profile in self.profiles.values() {
            if let Some(missing) = profile.votes.keys().find(|m| !movies.contains_key(m)) {
                return Err(DataError::UnknownMovie(*missing));
            }
        }
        self.movies = movies;
        Ok(())
    }

    /// Writes the canonical unit-scale CSV `person_id,movie_id,vote`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        writer.write_record(["person_id", "movie_id", "vote"])?;
        for profile in self.profiles.values() {
            for (movie, vote) in profile.votes() {
                writer.write_record([
                    profile.person_id.to_string(),
                    movie.to_string(),
                    format_unit_value(vote).to_string(),
                ])?;
            }
        }
        writer.flush()?;
        Ok(())
    }

    /// Writes the movie metadata CSV `movie_id,title`.
    pub fn write_movies_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        writer.write_record(["movie_id", "title"])?;
        for (movie, title) in &self.movies {
            writer.write_record([movie.to_string(), title.clone()])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Serializes the store as a single JSON document.
    pub fn save<W: Write>(&self, out: W) -> Result<(), DataError> {
        let file = StoreFile {
            format: STORE_FORMAT.into(),
            version: STORE_VERSION,
            profiles: self.profiles.values().cloned().collect(),
            movies: self.movies.iter().map(|(&m, t)| (m, t.clone())).collect(),
        };
        serde_json::to_writer(out, &file).map_err(|e| DataError::Store(e.to_string()))
    }

    pub fn load<R: Read>(input: R) -> Result<Self, DataError> {
        let file: StoreFile =
            serde_json::from_reader(input).map_err(|e| DataError::Store(e.to_string()))?;
        if file.format != STORE_FORMAT || file.version != STORE_VERSION {
            return Err(DataError::Store(format!(
                "unsupported store container {} v{}",
                file.format, file.version
            )));
        }
        let mut store = RatingsStore::new();
        for profile in file.profiles {
            store.insert_profile(profile)?;
        }
        if !file.movies.is_empty() {
            store.attach_movies(file.movies.into_iter().collect())?;
        }
        Ok(store)
    }
}

const STORE_FORMAT: &str = "immunorec-store";
const STORE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoreFile {
    format: String,
    version: u32,
    profiles: Vec<Profile>,
    movies: Vec<(MovieId, String)>,
}

/// Layout of a ratings file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingsFormat {
    /// Comma-separated with header `person_id,movie_id,vote`.
    Csv,
    /// Tab-separated `person_id<TAB>movie_id<TAB>score`, no header.
    EachMovie,
}

/// Parses a ratings file into a store. Duplicate (person, movie) rows are rejected.
pub fn parse_ratings<R: Read>(
    mut input: R,
    format: RatingsFormat,
    scale: VoteScale,
) -> Result<RatingsStore, DataError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    // Record offsets may point at the tail of the previous CRLF terminator.
    let line_at = |offset: u64| {
        let start = bytes[offset as usize..]
            .iter()
            .position(|&b| b != b'\r' && b != b'\n')
            .map_or(bytes.len(), |k| offset as usize + k);
        1 + bytes[..start].iter().filter(|&&b| b == b'\n').count() as u64
    };
    let (delimiter, has_header) = match format {
        RatingsFormat::Csv => (b',', true),
        RatingsFormat::EachMovie => (b'\t', false),
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(bytes.as_slice());

    if has_header {
        let header = reader.headers()?.clone();
        let names: Vec<&str> = header.iter().collect();
        if names != ["person_id", "movie_id", "vote"] {
            return Err(DataError::Parse {
                line: 1,
                message: format!(
                    "expected header person_id,movie_id,vote, found {}",
                    names.join(",")
                ),
            });
        }
    }

    let mut profiles: BTreeMap<PersonId, Profile> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| line_at(p.byte()));
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 3 {
            return Err(DataError::Parse {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let person = PersonId(parse_field(&record[0], "person_id", line)?);
        let movie = MovieId(parse_field(&record[1], "movie_id", line)?);
        let raw: f64 = parse_field(&record[2], "vote", line)?;
        let vote = normalize_vote(raw, scale).map_err(|e| e.at_line(line))?;
        profiles
            .entry(person)
            .or_insert_with(|| Profile::new(person))
            .insert(movie, vote)
            .map_err(|e| e.at_line(line))?;
    }
    Ok(RatingsStore {
        profiles,
        movies: BTreeMap::new(),
    })
}

/// Generic CSV shorthand for [`parse_ratings`].
pub fn parse_ratings_csv<R: Read>(input: R, scale: VoteScale) -> Result<RatingsStore, DataError> {
    parse_ratings(input, RatingsFormat::Csv, scale)
}

/// Parses `movie_id,title` metadata.
pub fn parse_movies_csv<R: Read>(input: R) -> Result<BTreeMap<MovieId, String>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::Fields)
        .from_reader(input);
    let mut movies = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(DataError::Parse {
                line,
                message: format!("expected movie_id,title, found {} fields", record.len()),
            });
        }
        let movie = MovieId(parse_field(&record[0], "movie_id", line)?);
        movies.insert(movie, record[1].to_string());
    }
    Ok(movies)
}

fn parse_field<T: std::str::FromStr>(text: &str, name: &str, line: u64) -> Result<T, DataError> {
    text.parse().map_err(|_| DataError::Parse {
        line,
        message: format!("invalid {name} {text:?}"),
    })
}

/// Parameters for clustered synthetic ratings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub cluster_count: usize,
    pub users_per_cluster: usize,
    pub movies: usize,
    pub votes_per_user: usize,
    /// Maximum category-index perturbation applied to each vote.
    pub noise_categories: u8,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: &str| Err(DataError::InvalidConfig(msg.to_string()));
        if self.cluster_count == 0
            || self.users_per_cluster == 0
            || self.movies == 0
            || self.votes_per_user == 0
        {
            return bad("cluster, user, movie and vote counts must be positive");
        }
        if self.votes_per_user > self.movies {
            return bad("votes_per_user must not exceed movies");
        }
        if self.noise_categories > CATEGORY_COUNT - 1 {
            return bad("noise_categories must be at most 5");
        }
        Ok(())
    }
}

/// Generates a clustered store. Person ids run `1..` cluster by cluster;
/// movie ids run `1..=movies`. Deterministic in `config.seed`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<RatingsStore, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = i16::from(config.noise_categories);
    let mut store = RatingsStore::new();
    let mut next_person = 1u32;

    for _ in 0..config.cluster_count {
        let preferences: Vec<u8> = (0..config.movies)
            .map(|_| rng.gen_range(1..=CATEGORY_COUNT))
            .collect();
        for _ in 0..config.users_per_cluster {
            let mut profile = Profile::new(PersonId(next_person));
            next_person += 1;
            let mut picked = sample(&mut rng, config.movies, config.votes_per_user).into_vec();
            picked.sort_unstable();
            for slot in picked {
                let shift = if noise > 0 {
                    rng.gen_range(-noise..=noise)
                } else {
                    0
                };
                let index = (i16::from(preferences[slot]) + shift)
                    .clamp(1, i16::from(CATEGORY_COUNT)) as u8;
                profile.set(MovieId(slot as u32 + 1), VoteCategory(index));
            }
            store.insert_profile(profile)?;
        }
    }

    let titles = (1..=config.movies as u32)
        .map(|m| (MovieId(m), format!("Synthetic movie {m}")))
        .collect();
    store.attach_movies(titles)?;
    Ok(store)
}
