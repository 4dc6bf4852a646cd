//! Synthetic stand-in for the MovieLens small dataset.
//!
//! Matches its shape (610 users, 9742 movies, roughly 100k half-star
//! ratings, at least 20 ratings per user, a heavy-tailed activity
//! distribution, Zipf-like item popularity and the published genre
//! frequencies) without copying any of its content. Ratings come from a
//! latent score `3.5 + user bias + item bias + genre affinity + taste + noise`
//! rounded to the nearest half star, where `taste` is a low-rank user-item
//! interaction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{MovieRecord, RawRating, RatingsDataset, NO_GENRES};
use crate::error::{Error, Result};

/// Genre names with the number of movies listing each one.
pub const GENRE_FREQUENCIES: [(&str, usize); 19] = [
    ("Drama", 4361),
    ("Comedy", 3756),
    ("Thriller", 1894),
    ("Action", 1828),
    ("Romance", 1596),
    ("Adventure", 1263),
    ("Crime", 1199),
    ("Sci-Fi", 980),
    ("Horror", 978),
    ("Fantasy", 779),
    ("Children", 664),
    ("Animation", 611),
    ("Mystery", 573),
    ("Documentary", 440),
    ("War", 382),
    ("Musical", 334),
    ("Western", 167),
    ("IMAX", 158),
    ("Film-Noir", 87),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSpec {
    pub seed: u64,
    pub n_users: usize,
    pub n_movies: usize,
    /// Movies listing no genre.
    pub n_without_genre: usize,
    pub min_ratings_per_user: usize,
    /// Median of the extra ratings per user beyond the minimum.
    pub activity_median: f64,
    /// Log-scale spread of per-user activity.
    pub activity_sigma: f64,
    /// Exponent of the item popularity power law.
    pub zipf_exponent: f64,
    pub user_bias_sd: f64,
    pub item_bias_sd: f64,
    pub genre_affinity_sd: f64,
    /// Rank and standard deviation of the user-item interaction term.
    pub taste_dim: usize,
    pub taste_sd: f64,
    pub noise_sd: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_users: 610,
            n_movies: 9742,
            n_without_genre: 34,
            min_ratings_per_user: 20,
            activity_median: 70.0,
            activity_sigma: 1.25,
            zipf_exponent: 0.9,
            user_bias_sd: 0.4,
            item_bias_sd: 0.45,
            genre_affinity_sd: 0.3,
            taste_dim: 8,
            taste_sd: 0.5,
            noise_sd: 0.7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateData {
    pub ratings: Vec<RawRating>,
    pub movies: Vec<MovieRecord>,
}

impl SurrogateData {
    pub fn dataset(&self) -> Result<RatingsDataset> {
        RatingsDataset::from_raw(&self.ratings)
    }
}

fn movie_genres(spec: &SurrogateSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let listed = spec.n_movies - spec.n_without_genre;
    let reference_listed = 9742.0 - 34.0;
    let total: usize = GENRE_FREQUENCIES.iter().map(|g| g.1).sum();
    let mut genres: Vec<Vec<usize>> = (0..listed)
        .map(|_| {
            let mut own: Vec<usize> = GENRE_FREQUENCIES
                .iter()
                .enumerate()
                .filter(|(_, g)| rng.random::<f64>() < g.1 as f64 / reference_listed)
                .map(|(k, _)| k)
                .collect();
            if own.is_empty() {
                let mut pick = rng.random_range(0..total);
                for (k, g) in GENRE_FREQUENCIES.iter().enumerate() {
                    if pick < g.1 {
                        own.push(k);
                        break;
                    }
                    pick -= g.1;
                }
            }
            own
        })
        .collect();
    genres.extend(std::iter::repeat_with(Vec::new).take(spec.n_without_genre));
    genres.shuffle(rng);
    genres
}

/// Generates ratings and movie records. Deterministic for a fixed spec.
pub fn generate(spec: &SurrogateSpec) -> Result<SurrogateData> {
    if spec.n_users == 0 || spec.n_movies <= spec.n_without_genre {
        return Err(Error::Invalid("surrogate needs users and movies with genres".into()));
    }
    if spec.taste_dim == 0 {
        return Err(Error::Invalid("taste dimension must be at least 1".into()));
    }
    if spec.min_ratings_per_user > spec.n_movies {
        return Err(Error::Invalid("minimum ratings per user exceeds the movie count".into()));
    }
    let normal = |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::Invalid(format!("standard deviation {sd}: {e}")));
    let activity = LogNormal::new(spec.activity_median.ln(), spec.activity_sigma)
        .map_err(|e| Error::Invalid(format!("activity distribution: {e}")))?;
    let (user_bias, item_bias, affinity, noise) = (
        normal(spec.user_bias_sd)?,
        normal(spec.item_bias_sd)?,
        normal(spec.genre_affinity_sd)?,
        normal(spec.noise_sd)?,
    );
    // u.v with u ~ N(0, s^2 / dim), v ~ N(0, 1) has standard deviation s.
    let (taste_user, unit) = (normal(spec.taste_sd / (spec.taste_dim as f64).sqrt())?, normal(1.0)?);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let genres = movie_genres(spec, &mut rng);
    let movies: Vec<MovieRecord> = genres
        .iter()
        .enumerate()
        .map(|(k, g)| MovieRecord {
            movie_id: k as u64 + 1,
            title: format!("Movie {} ({})", k + 1, 1930 + (k * 7919) % 89),
            genres: if g.is_empty() {
                vec![NO_GENRES.to_string()]
            } else {
                g.iter().map(|&i| GENRE_FREQUENCIES[i].0.to_string()).collect()
            },
        })
        .collect();

    // Popularity rank is a random permutation; more popular movies lean a
    // little higher in quality.
    let mut rank: Vec<usize> = (0..spec.n_movies).collect();
    rank.shuffle(&mut rng);
    let weight: Vec<f64> = rank.iter().map(|&r| ((r + 1) as f64).powf(-spec.zipf_exponent)).collect();
    let quality: Vec<f64> = rank
        .iter()
        .map(|&r| {
            let z = 1.0 - 2.0 * (r as f64 / spec.n_movies as f64);
            0.25 * z + item_bias.sample(&mut rng)
        })
        .collect();
    let item_taste: Vec<f64> = (0..spec.n_movies * spec.taste_dim).map(|_| unit.sample(&mut rng)).collect();

    let mut ratings = Vec::new();
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(spec.n_movies);
    for user in 0..spec.n_users {
        let extra = activity.sample(&mut rng).round() as usize;
        let count = (spec.min_ratings_per_user + extra).min(spec.n_movies);
        let bias = user_bias.sample(&mut rng);
        let genre_taste: Vec<f64> = (0..GENRE_FREQUENCIES.len()).map(|_| affinity.sample(&mut rng)).collect();
        let user_taste: Vec<f64> = (0..spec.taste_dim).map(|_| taste_user.sample(&mut rng)).collect();
        // Weighted sampling without replacement: the `count` smallest
        // exponential keys scaled by 1 / weight.
        keyed.clear();
        keyed.extend(weight.iter().enumerate().map(|(a, w)| {
            let e = -(1.0 - rng.random::<f64>()).ln();
            (e / w, a)
        }));
        keyed.select_nth_unstable_by(count - 1, |x, y| x.0.total_cmp(&y.0));
        let mut chosen: Vec<usize> = keyed[..count].iter().map(|k| k.1).collect();
        chosen.sort_unstable();
        let start = 1_000_000_000 + rng.random_range(0..400_000_000i64);
        for a in chosen {
            let g = &genres[a];
            let like = if g.is_empty() {
                0.0
            } else {
                g.iter().map(|&k| genre_taste[k]).sum::<f64>() / g.len() as f64
            };
            let item = &item_taste[a * spec.taste_dim..(a + 1) * spec.taste_dim];
            let taste: f64 = user_taste.iter().zip(item).map(|(x, y)| x * y).sum();
            let latent = 3.5 + bias + quality[a] + like + taste + noise.sample(&mut rng);
            let rating = ((latent * 2.0).round() / 2.0).clamp(0.5, 5.0);
            ratings.push(RawRating {
                user_id: user as u64 + 1,
                movie_id: a as u64 + 1,
                rating,
                timestamp: start + rng.random_range(0..50_000_000i64),
            });
        }
    }
    Ok(SurrogateData { ratings, movies })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::assign_primary_genre;

    #[test]
    fn shape_resembles_movielens_small() {
        let data = generate(&SurrogateSpec::default()).unwrap();
        assert_eq!(data.movies.len(), 9742);
        let ds = data.dataset().unwrap();
        assert_eq!(ds.n_users(), 610);
        assert!((80_000..130_000).contains(&ds.len()), "{} ratings", ds.len());
        assert!(ds.n_items() > 5000, "{} rated items", ds.n_items());
        let counts = ds.user_counts();
        assert!(counts.iter().all(|&c| c >= 20));
        let mut sorted = counts.clone();
        sorted.sort_unstable();
        let median = sorted[sorted.len() / 2];
        let mean = ds.len() / ds.n_users();
        assert!(mean > median, "activity should be right-skewed");
        let mean_rating = ds.mean_rating();
        assert!((3.2..3.8).contains(&mean_rating), "{mean_rating}");
        assert!(ds.ratings().iter().all(|r| (r.rating * 2.0).fract() == 0.0));

        let no_genre = data.movies.iter().filter(|m| m.genres == [NO_GENRES]).count();
        assert_eq!(no_genre, 34);
        let drama = data.movies.iter().filter(|m| m.genres.iter().any(|g| g == "Drama")).count();
        assert!((4100..4700).contains(&drama), "{drama}");
        let topics = assign_primary_genre(&data.movies, &ds).unwrap();
        assert!(topics.n_topics() >= 19);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SurrogateSpec {
            n_users: 30,
            n_movies: 400,
            n_without_genre: 3,
            ..SurrogateSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.ratings, b.ratings);
        assert_eq!(a.movies, b.movies);
        let c = generate(&SurrogateSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.ratings, c.ratings);
    }

    #[test]
    fn rejects_degenerate_specs() {
        let spec = SurrogateSpec {
            n_movies: 10,
            n_without_genre: 10,
            ..SurrogateSpec::default()
        };
        assert!(generate(&spec).is_err());
        let spec = SurrogateSpec {
            n_movies: 50,
            n_without_genre: 0,
            min_ratings_per_user: 60,
            ..SurrogateSpec::default()
        };
        assert!(generate(&spec).is_err());
    }
}
