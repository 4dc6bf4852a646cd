//! MovieLens ingestion (`ratings.csv` / `movies.csv` of the ml-latest-small
//! distribution), primary-genre topics, random halves and user-activity
//! quintiles.
//!
//! Users and items are re-indexed densely in ascending order of their raw
//! ids. Splits keep the index space of the dataset they came from, so a
//! user or item index means the same thing in every split.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub const NO_GENRES: &str = "(no genres listed)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rating {
    /// Dense user index.
    pub user: u32,
    /// Dense item index.
    pub item: u32,
    pub rating: f64,
    pub timestamp: i64,
}

/// Explicit ratings with dense user and item indices.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsDataset {
    ratings: Vec<Rating>,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
}

/// Raw rating row as it appears in `ratings.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRating {
    pub user_id: u64,
    pub movie_id: u64,
    pub rating: f64,
    pub timestamp: i64,
}

impl RatingsDataset {
    /// Indexes raw ratings, rejecting duplicates and out-of-range values.
    pub fn from_raw(raw: &[RawRating]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Size("no ratings".into()));
        }
        let mut user_ids: Vec<u64> = raw.iter().map(|r| r.user_id).collect();
        let mut item_ids: Vec<u64> = raw.iter().map(|r| r.movie_id).collect();
        user_ids.sort_unstable();
        user_ids.dedup();
        item_ids.sort_unstable();
        item_ids.dedup();
        let user_index: HashMap<u64, u32> = user_ids.iter().enumerate().map(|(i, &u)| (u, i as u32)).collect();
        let item_index: HashMap<u64, u32> = item_ids.iter().enumerate().map(|(i, &a)| (a, i as u32)).collect();

        let mut seen = HashSet::with_capacity(raw.len());
        let mut ratings = Vec::with_capacity(raw.len());
        for r in raw {
            if !(0.5..=5.0).contains(&r.rating) {
                return Err(Error::Validation(format!(
                    "rating {} by user {} on movie {} is outside [0.5, 5.0]",
                    r.rating, r.user_id, r.movie_id
                )));
            }
            if !seen.insert((r.user_id, r.movie_id)) {
                return Err(Error::Validation(format!(
                    "user {} rated movie {} more than once",
                    r.user_id, r.movie_id
                )));
            }
            ratings.push(Rating {
                user: user_index[&r.user_id],
                item: item_index[&r.movie_id],
                rating: r.rating,
                timestamp: r.timestamp,
            });
        }
        Ok(Self {
            ratings,
            user_ids,
            item_ids,
        })
    }

    /// A subset of this dataset's ratings in the same index space.
    pub fn subset(&self, ratings: Vec<Rating>) -> Self {
        Self {
            ratings,
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
        }
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Raw user id of a dense user index.
    pub fn user_id(&self, user: u32) -> u64 {
        self.user_ids[user as usize]
    }

    /// Raw movie id of a dense item index.
    pub fn item_id(&self, item: u32) -> u64 {
        self.item_ids[item as usize]
    }

    pub fn user_index(&self, raw: u64) -> Option<u32> {
        self.user_ids.binary_search(&raw).ok().map(|i| i as u32)
    }

    pub fn item_index(&self, raw: u64) -> Option<u32> {
        self.item_ids.binary_search(&raw).ok().map(|i| i as u32)
    }

    pub fn to_raw(&self) -> Vec<RawRating> {
        self.ratings
            .iter()
            .map(|r| RawRating {
                user_id: self.user_id(r.user),
                movie_id: self.item_id(r.item),
                rating: r.rating,
                timestamp: r.timestamp,
            })
            .collect()
    }

    /// Number of ratings per dense user index.
    pub fn user_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_users()];
        for r in &self.ratings {
            counts[r.user as usize] += 1;
        }
        counts
    }

    /// Sum of ratings per dense item index.
    pub fn item_rating_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_items()];
        for r in &self.ratings {
            sums[r.item as usize] += r.rating;
        }
        sums
    }

    pub fn mean_rating(&self) -> f64 {
        self.ratings.iter().map(|r| r.rating).sum::<f64>() / self.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MovieRecord {
    pub movie_id: u64,
    pub title: String,
    pub genres: Vec<String>,
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
    source_name: &str,
    line: u64,
) -> Result<T> {
    let raw = record.get(idx).ok_or_else(|| Error::Parse {
        source_name: source_name.into(),
        line,
        message: format!("missing column `{name}`"),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        source_name: source_name.into(),
        line,
        message: format!("cannot parse `{raw}` as {name}"),
    })
}

fn csv_error(source_name: &str, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        kind => Error::Parse {
            source_name: source_name.into(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn expect_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str], source_name: &str) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_error(source_name, e))?.clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(Error::Parse {
            source_name: source_name.into(),
            line: 1,
            message: "empty file (missing header)".into(),
        });
    }
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            source_name: source_name.into(),
            line: 1,
            message: format!("expected header {expected:?}, found {got:?}"),
        });
    }
    Ok(())
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(input)
}

/// Parses `userId,movieId,rating,timestamp` rows.
pub fn read_ratings<R: Read>(input: R, source_name: &str) -> Result<Vec<RawRating>> {
    let mut rdr = reader(input);
    expect_header(&mut rdr, &["userId", "movieId", "rating", "timestamp"], source_name)?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(source_name, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        out.push(RawRating {
            user_id: parse_field(&record, 0, "userId", source_name, line)?,
            movie_id: parse_field(&record, 1, "movieId", source_name, line)?,
            rating: parse_field(&record, 2, "rating", source_name, line)?,
            timestamp: parse_field(&record, 3, "timestamp", source_name, line)?,
        });
    }
    Ok(out)
}

/// Parses `movieId,title,genres` rows; genres are pipe-separated.
pub fn read_movies<R: Read>(input: R, source_name: &str) -> Result<Vec<MovieRecord>> {
    let mut rdr = reader(input);
    expect_header(&mut rdr, &["movieId", "title", "genres"], source_name)?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(source_name, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let movie_id = parse_field(&record, 0, "movieId", source_name, line)?;
        let genres: Vec<String> = record[2]
            .split('|')
            .map(|g| g.trim().to_string())
            .filter(|g| !g.is_empty())
            .collect();
        if genres.is_empty() {
            return Err(Error::Parse {
                source_name: source_name.into(),
                line,
                message: format!("movie {movie_id} has no genre token"),
            });
        }
        out.push(MovieRecord {
            movie_id,
            title: record[1].to_string(),
            genres,
        });
    }
    Ok(out)
}

/// Loads and validates `ratings.csv` and `movies.csv`. Every rated movie must
/// have a movie record.
pub fn load_movielens(ratings_path: &Path, movies_path: &Path) -> Result<(RatingsDataset, Vec<MovieRecord>)> {
    let raw = read_ratings(File::open(ratings_path)?, &ratings_path.display().to_string())?;
    let movies = read_movies(File::open(movies_path)?, &movies_path.display().to_string())?;
    if raw.is_empty() {
        return Err(Error::Parse {
            source_name: ratings_path.display().to_string(),
            line: 2,
            message: "no rating rows".into(),
        });
    }
    let data = RatingsDataset::from_raw(&raw)?;
    check_movies(&data, &movies)?;
    Ok((data, movies))
}

pub(crate) fn check_movies(data: &RatingsDataset, movies: &[MovieRecord]) -> Result<()> {
    let mut ids = HashSet::with_capacity(movies.len());
    for m in movies {
        if !ids.insert(m.movie_id) {
            return Err(Error::Validation(format!("movie {} listed twice", m.movie_id)));
        }
    }
    if let Some(missing) = data.item_ids.iter().find(|id| !ids.contains(id)) {
        return Err(Error::Validation(format!("rated movie {missing} has no movie record")));
    }
    Ok(())
}

/// Writes ratings in the `ratings.csv` schema.
pub fn write_ratings<W: Write>(out: W, data: &RatingsDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| csv_error("ratings output", e);
    w.write_record(["userId", "movieId", "rating", "timestamp"]).map_err(io)?;
    for r in data.to_raw() {
        w.write_record([
            r.user_id.to_string(),
            r.movie_id.to_string(),
            r.rating.to_string(),
            r.timestamp.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes movies in the `movies.csv` schema.
pub fn write_movies<W: Write>(out: W, movies: &[MovieRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| csv_error("movies output", e);
    w.write_record(["movieId", "title", "genres"]).map_err(io)?;
    for m in movies {
        w.write_record([m.movie_id.to_string(), m.title.clone(), m.genres.join("|")])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Topic (genre) of every item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TopicAssignment {
    /// Topic names, sorted; a topic id is an index into this list.
    pub topics: Vec<String>,
    /// Topic id per dense item index.
    pub item_topic: Vec<u32>,
}

impl TopicAssignment {
    pub fn n_topics(&self) -> usize {
        self.topics.len()
    }

    /// Topic names that are actually used by at least one item.
    pub fn used_topics(&self) -> usize {
        let used: HashSet<u32> = self.item_topic.iter().copied().collect();
        used.len()
    }
}

/// Gives each rated movie one genre: among its listed genres, the one whose
/// movies received the most ratings overall (ties by genre name).
/// `(no genres listed)` is kept as its own topic.
pub fn assign_primary_genre(movies: &[MovieRecord], data: &RatingsDataset) -> Result<TopicAssignment> {
    check_movies(data, movies)?;
    let by_id: HashMap<u64, &MovieRecord> = movies.iter().map(|m| (m.movie_id, m)).collect();
    let mut ratings_per_item = vec![0usize; data.n_items()];
    for r in data.ratings() {
        ratings_per_item[r.item as usize] += 1;
    }
    let mut popularity: BTreeMap<&str, usize> = BTreeMap::new();
    for item in 0..data.n_items() {
        let movie = by_id[&data.item_id(item as u32)];
        for g in &movie.genres {
            *popularity.entry(g.as_str()).or_default() += ratings_per_item[item];
        }
    }
    let topics: Vec<String> = popularity.keys().map(|g| g.to_string()).collect();
    let item_topic = (0..data.n_items())
        .map(|item| {
            let movie = by_id[&data.item_id(item as u32)];
            let best = movie
                .genres
                .iter()
                .map(String::as_str)
                .min_by(|a, b| popularity[b].cmp(&popularity[a]).then(a.cmp(b)))
                .expect("movie records have at least one genre");
            topics.binary_search_by(|t| t.as_str().cmp(best)).expect("genre is indexed") as u32
        })
        .collect();
    Ok(TopicAssignment { topics, item_topic })
}

#[derive(Debug, Clone)]
pub struct SplitAssignment {
    pub train: RatingsDataset,
    pub test: RatingsDataset,
    pub seed: u64,
}

/// Uniformly random halves: the first `ceil(n / 2)` ratings of a seeded
/// permutation go to training.
pub fn split_half(data: &RatingsDataset, seed: u64) -> Result<SplitAssignment> {
    if data.len() < 2 {
        return Err(Error::Size("need at least two ratings to split".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = data.len().div_ceil(2);
    let pick = |idx: &[usize]| idx.iter().map(|&i| data.ratings[i]).collect::<Vec<_>>();
    Ok(SplitAssignment {
        train: data.subset(pick(&order[..cut])),
        test: data.subset(pick(&order[cut..])),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UserGroup {
    VeryLow,
    Low,
    Medium,
    High,
    VeryHigh,
}

impl UserGroup {
    pub const ALL: [UserGroup; 5] = [
        UserGroup::VeryLow,
        UserGroup::Low,
        UserGroup::Medium,
        UserGroup::High,
        UserGroup::VeryHigh,
    ];

    pub fn label(self) -> &'static str {
        match self {
            UserGroup::VeryLow => "very low",
            UserGroup::Low => "low",
            UserGroup::Medium => "medium",
            UserGroup::High => "high",
            UserGroup::VeryHigh => "very high",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Activity group per dense user index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserGroups {
    groups: Vec<UserGroup>,
}

impl UserGroups {
    pub fn group(&self, user: u32) -> UserGroup {
        self.groups[user as usize]
    }

    pub fn as_slice(&self) -> &[UserGroup] {
        &self.groups
    }

    pub fn sizes(&self) -> [usize; 5] {
        let mut sizes = [0; 5];
        for g in &self.groups {
            sizes[g.index()] += 1;
        }
        sizes
    }
}

/// Five near-equal groups of users ordered by rating count (ties by user
/// index). When the count does not divide by five, the lower groups get the
/// extra user.
pub fn quintile_groups(data: &RatingsDataset) -> Result<UserGroups> {
    let n = data.n_users();
    if n < 5 {
        return Err(Error::Size(format!("need at least 5 users for quintiles, got {n}")));
    }
    let counts = data.user_counts();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&u| (counts[u], u));
    let (base, extra) = (n / 5, n % 5);
    let mut groups = vec![UserGroup::VeryLow; n];
    let mut start = 0;
    for (g, group) in UserGroup::ALL.into_iter().enumerate() {
        let size = base + usize::from(g < extra);
        for &u in &order[start..start + size] {
            groups[u] = group;
        }
        start += size;
    }
    Ok(UserGroups { groups })
}
