//! Biased matrix factorization trained by SGD, the softmax transform from
//! ratings to attraction probabilities, and the non-personalized baselines.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::RatingsDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfHyper {
    /// Latent dimension.
    pub d: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    /// Standard deviation of the Gaussian factor initialization.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for MfHyper {
    fn default() -> Self {
        Self {
            d: 32,
            epochs: 20,
            learning_rate: 0.005,
            regularization: 0.02,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

/// `predict(u, a) = global_mean + user_bias[u] + item_bias[a] + <p_u, q_a>`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    d: usize,
    seed: u64,
    n_users: usize,
    n_items: usize,
    global_mean: f64,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
    /// Row-major `n_users x d`.
    user_factors: Vec<f64>,
    /// Row-major `n_items x d`.
    item_factors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// RMSE on the training ratings before the first epoch and after each one.
    pub rmse: Vec<f64>,
}

impl TrainReport {
    pub fn final_rmse(&self) -> f64 {
        *self.rmse.last().expect("rmse has the initial entry")
    }
}

impl FactorModel {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    fn user_vec(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.d..(u + 1) * self.d]
    }

    fn item_vec(&self, a: usize) -> &[f64] {
        &self.item_factors[a * self.d..(a + 1) * self.d]
    }

    #[inline]
    pub fn predict(&self, user: u32, item: u32) -> f64 {
        let (u, a) = (user as usize, item as usize);
        let dot: f64 = self.user_vec(u).iter().zip(self.item_vec(a)).map(|(x, y)| x * y).sum();
        self.global_mean + self.user_bias[u] + self.item_bias[a] + dot
    }

    /// Predicted ratings of one user for every item.
    pub fn predict_user(&self, user: u32) -> Vec<f64> {
        (0..self.n_items as u32).map(|a| self.predict(user, a)).collect()
    }

    /// Mean and population standard deviation of the predictions over every
    /// `(user, item)` pair.
    pub fn prediction_stats(&self) -> (f64, f64) {
        let (sum, sum_sq) = (0..self.n_users as u32)
            .into_par_iter()
            .map(|u| {
                let row = self.predict_user(u);
                (row.iter().sum::<f64>(), row.iter().map(|r| r * r).sum::<f64>())
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let n = (self.n_users * self.n_items) as f64;
        let mean = sum / n;
        (mean, (sum_sq / n - mean * mean).max(0.0).sqrt())
    }

    fn rmse(&self, data: &RatingsDataset) -> f64 {
        let se: f64 = data
            .ratings()
            .iter()
            .map(|r| (r.rating - self.predict(r.user, r.item)).powi(2))
            .sum();
        (se / data.len() as f64).sqrt()
    }

    const MAGIC: &'static str = "cclab-factor-model";
    const VERSION: u32 = 1;

    /// Plain-text checkpoint:
    ///
    /// ```text
    /// cclab-factor-model 1
    /// d <d> seed <seed> users <n_users> items <n_items>
    /// mean <global_mean>
    /// u <bias> <f_1> ... <f_d>      (one line per user)
    /// i <bias> <f_1> ... <f_d>      (one line per item)
    /// ```
    ///
    /// Floats use Rust's shortest round-trip formatting, so a reload is exact.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", Self::MAGIC, Self::VERSION)?;
        writeln!(
            out,
            "d {} seed {} users {} items {}",
            self.d, self.seed, self.n_users, self.n_items
        )?;
        writeln!(out, "mean {}", self.global_mean)?;
        let mut line = String::new();
        let mut emit = |tag: &str, bias: f64, factors: &[f64], out: &mut W| -> Result<()> {
            use std::fmt::Write as _;
            line.clear();
            write!(line, "{tag} {bias}").expect("writing to a String");
            for f in factors {
                write!(line, " {f}").expect("writing to a String");
            }
            writeln!(out, "{line}")?;
            Ok(())
        };
        for u in 0..self.n_users {
            emit("u", self.user_bias[u], self.user_vec(u), &mut out)?;
        }
        for a in 0..self.n_items {
            emit("i", self.item_bias[a], self.item_vec(a), &mut out)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        let bad = |line: u64, message: String| Error::Parse {
            source_name: "factor model checkpoint".into(),
            line,
            message,
        };
        let mut lines = input.lines();
        let mut next = |n: u64| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad(n, "unexpected end of file".into()))?
                .map_err(Error::from)
        };
        let header = next(1)?;
        if header != format!("{} {}", Self::MAGIC, Self::VERSION) {
            return Err(bad(1, format!("unsupported checkpoint header `{header}`")));
        }
        let dims = next(2)?;
        let fields: Vec<&str> = dims.split_whitespace().collect();
        let num = |key: &str| -> Result<u64> {
            let pos = fields
                .iter()
                .position(|f| *f == key)
                .ok_or_else(|| bad(2, format!("missing `{key}`")))?;
            fields
                .get(pos + 1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(2, format!("bad value for `{key}`")))
        };
        let (d, seed, n_users, n_items) = (
            num("d")? as usize,
            num("seed")?,
            num("users")? as usize,
            num("items")? as usize,
        );
        let mean_line = next(3)?;
        let global_mean = mean_line
            .strip_prefix("mean ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad(3, "bad `mean` line".into()))?;

        let mut read_block = |tag: &str, count: usize, first_line: u64| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut bias = Vec::with_capacity(count);
            let mut factors = Vec::with_capacity(count * d);
            for k in 0..count {
                let n = first_line + k as u64;
                let line = next(n)?;
                let mut parts = line.split_whitespace();
                if parts.next() != Some(tag) {
                    return Err(bad(n, format!("expected a `{tag}` row")));
                }
                let values: Vec<f64> = parts
                    .map(|v| v.parse().map_err(|_| bad(n, format!("cannot parse `{v}`"))))
                    .collect::<Result<_>>()?;
                if values.len() != d + 1 || values.iter().any(|v| !v.is_finite()) {
                    return Err(bad(n, format!("expected {} finite values", d + 1)));
                }
                bias.push(values[0]);
                factors.extend_from_slice(&values[1..]);
            }
            Ok((bias, factors))
        };
        let (user_bias, user_factors) = read_block("u", n_users, 4)?;
        let (item_bias, item_factors) = read_block("i", n_items, 4 + n_users as u64)?;
        Ok(Self {
            d,
            seed,
            n_users,
            n_items,
            global_mean,
            user_bias,
            item_bias,
            user_factors,
            item_factors,
        })
    }
}

/// Fits a biased factor model by SGD on squared error with L2
/// regularization, visiting ratings in a fresh seeded order each epoch.
///
/// Users or items without training ratings keep zero bias and zero factors,
/// so they predict the global mean plus whatever bias is available.
pub fn train_mf(data: &RatingsDataset, hyper: &MfHyper) -> Result<(FactorModel, TrainReport)> {
    if data.is_empty() {
        return Err(Error::Size("cannot train on an empty dataset".into()));
    }
    if hyper.d == 0 {
        return Err(Error::Invalid("latent dimension must be at least 1".into()));
    }
    let (n_users, n_items, d) = (data.n_users(), data.n_items(), hyper.d);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let init = Normal::new(0.0, hyper.init_scale)
        .map_err(|e| Error::Invalid(format!("factor init scale: {e}")))?;
    let mut model = FactorModel {
        d,
        seed: hyper.seed,
        n_users,
        n_items,
        global_mean: data.mean_rating(),
        user_bias: vec![0.0; n_users],
        item_bias: vec![0.0; n_items],
        user_factors: (0..n_users * d).map(|_| init.sample(&mut rng)).collect(),
        item_factors: (0..n_items * d).map(|_| init.sample(&mut rng)).collect(),
    };
    let mut user_seen = vec![false; n_users];
    let mut item_seen = vec![false; n_items];
    for r in data.ratings() {
        user_seen[r.user as usize] = true;
        item_seen[r.item as usize] = true;
    }
    let zero_unseen = |factors: &mut [f64], seen: &[bool]| {
        for (chunk, &s) in factors.chunks_mut(d).zip(seen) {
            if !s {
                chunk.fill(0.0);
            }
        }
    };
    zero_unseen(&mut model.user_factors, &user_seen);
    zero_unseen(&mut model.item_factors, &item_seen);

    let (lr, reg) = (hyper.learning_rate, hyper.regularization);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rmse = vec![model.rmse(data)];
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let r = data.ratings()[idx];
            let (u, a) = (r.user as usize, r.item as usize);
            let err = r.rating - model.predict(r.user, r.item);
            model.user_bias[u] += lr * (err - reg * model.user_bias[u]);
            model.item_bias[a] += lr * (err - reg * model.item_bias[a]);
            let (pu, qa) = (
                &mut model.user_factors[u * d..(u + 1) * d],
                &mut model.item_factors[a * d..(a + 1) * d],
            );
            for (p, q) in pu.iter_mut().zip(qa.iter_mut()) {
                let (p0, q0) = (*p, *q);
                *p += lr * (err * q0 - reg * p0);
                *q += lr * (err * p0 - reg * q0);
            }
        }
        rmse.push(model.rmse(data));
    }
    Ok((model, TrainReport { rmse }))
}

/// Softmax of one rating vector, shifted by its maximum for stability.
pub fn softmax(ratings: &[f64]) -> Vec<f64> {
    let max = ratings.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = ratings.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Per-user attraction probabilities over all items.
#[derive(Debug, Clone, PartialEq)]
pub struct AttractionTable {
    n_items: usize,
    probs: Vec<f64>,
}

impl AttractionTable {
    /// Softmax of each row of `ratings` (row-major, `n_items` per user).
    pub fn from_ratings(ratings: &[f64], n_items: usize) -> Result<Self> {
        if n_items == 0 || !ratings.len().is_multiple_of(n_items) {
            return Err(Error::Shape(format!(
                "{} ratings do not split into rows of {n_items}",
                ratings.len()
            )));
        }
        let probs = ratings.par_chunks(n_items).flat_map_iter(softmax).collect();
        Ok(Self { n_items, probs })
    }

    pub fn n_users(&self) -> usize {
        self.probs.len() / self.n_items
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn user(&self, user: u32) -> &[f64] {
        let u = user as usize;
        &self.probs[u * self.n_items..(u + 1) * self.n_items]
    }
}

/// Predicted ratings of every user for every item, row-major.
pub fn predicted_ratings(model: &FactorModel) -> Vec<f64> {
    (0..model.n_users() as u32)
        .into_par_iter()
        .flat_map_iter(|u| model.predict_user(u))
        .collect()
}

pub fn softmax_attractions(model: &FactorModel) -> AttractionTable {
    AttractionTable::from_ratings(&predicted_ratings(model), model.n_items())
        .expect("prediction matrix has n_items columns")
}

/// Mean predicted rating of each item over all users.
pub fn popular_ratings(model: &FactorModel) -> Vec<f64> {
    let mut sums = vec![0.0; model.n_items()];
    for u in 0..model.n_users() as u32 {
        for (s, r) in sums.iter_mut().zip(model.predict_user(u)) {
            *s += r;
        }
    }
    let n = model.n_users() as f64;
    sums.into_iter().map(|s| s / n).collect()
}

/// Independent uniform ratings on `[1, 5]`.
pub fn random_ratings(n_items: usize, seed: u64) -> Result<Vec<f64>> {
    if n_items == 0 {
        return Err(Error::Size("need at least one item".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_items).map(|_| rng.random_range(1.0..=5.0)).collect())
}
