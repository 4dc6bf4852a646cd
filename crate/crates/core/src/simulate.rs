//! Monte-Carlo session simulation and the exhaustive-enumeration oracle.
//!
//! A session follows the generative story of each model:
//!
//! * CM: scan the list, click the first attractive item.
//! * TCM: as CM, but after every examined unattractive item the user leaves
//!   with the termination probability of that column.
//! * CCM: scan carousels top-down. An unattractive carousel (no attractive
//!   item) is skipped, followed by a carousel-level termination draw. The
//!   first attractive carousel is entered and scanned like a TCM list.
//!
//! No termination draw follows a click.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{AttractionMatrix, ClickModel, ClickProbMatrix, TerminationProfile};

/// Upper bound on the number of Bernoulli indicators `enumerate_exact` will
/// sum over.
pub const MAX_ENUMERATION_INDICATORS: usize = 24;

const SESSIONS_PER_TASK: u64 = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SessionOutcome {
    /// `(row, column)` of the click, if any.
    pub clicked: Option<(usize, usize)>,
    /// The session ended on a termination draw.
    pub terminated_early: bool,
    /// Item positions examined. Skipped carousels contribute nothing.
    pub examined_count: usize,
}

/// Click counts per position over a batch of simulated sessions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmpiricalClicks {
    counts: Vec<Vec<u64>>,
    sessions: u64,
}

impl EmpiricalClicks {
    pub fn new(counts: Vec<Vec<u64>>, sessions: u64) -> Result<Self> {
        let clicks: u64 = counts.iter().flatten().sum();
        if clicks > sessions {
            return Err(Error::Validation(format!(
                "{clicks} clicks recorded over only {sessions} sessions"
            )));
        }
        Ok(Self { counts, sessions })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn sessions(&self) -> u64 {
        self.sessions
    }

    pub fn total_clicks(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.sessions += other.sessions;
        self
    }
}

/// Generator for session `index` of a run seeded with `seed`. Each session
/// owns an independent ChaCha stream, so results do not depend on how
/// sessions are scheduled across threads.
pub fn session_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn check_shape(mat: &AttractionMatrix, model: ClickModel) -> Result<()> {
    if model != ClickModel::Ccm && mat.n_rows() != 1 {
        return Err(Error::Shape(format!(
            "{} sessions need a single ranked list, got {} rows",
            model.name(),
            mat.n_rows()
        )));
    }
    Ok(())
}

/// Samples one session.
pub fn simulate_session<R: Rng + ?Sized>(
    mat: &AttractionMatrix,
    term: &TerminationProfile,
    model: ClickModel,
    rng: &mut R,
) -> Result<SessionOutcome> {
    check_shape(mat, model)?;
    Ok(sample(mat, term, model, rng, &mut Vec::new()))
}

fn sample<R: Rng + ?Sized>(
    mat: &AttractionMatrix,
    term: &TerminationProfile,
    model: ClickModel,
    rng: &mut R,
    attractive: &mut Vec<bool>,
) -> SessionOutcome {
    let bernoulli = |rng: &mut R, p: f64| rng.random::<f64>() < p;
    match model {
        ClickModel::Cm | ClickModel::Tcm => {
            let row = mat.rows()[0].probs();
            for (k, &p) in row.iter().enumerate() {
                if bernoulli(rng, p) {
                    return SessionOutcome {
                        clicked: Some((0, k)),
                        terminated_early: false,
                        examined_count: k + 1,
                    };
                }
                if model == ClickModel::Tcm && k + 1 < row.len() && bernoulli(rng, term.at_column(k)) {
                    return SessionOutcome {
                        clicked: None,
                        terminated_early: true,
                        examined_count: k + 1,
                    };
                }
            }
            SessionOutcome {
                clicked: None,
                terminated_early: false,
                examined_count: row.len(),
            }
        }
        ClickModel::Ccm => {
            let n_rows = mat.n_rows();
            for (i, row) in mat.rows().iter().enumerate() {
                let row = row.probs();
                attractive.clear();
                attractive.extend(row.iter().map(|&p| bernoulli(rng, p)));
                if let Some(first) = attractive.iter().position(|&y| y) {
                    // Inside an attractive carousel: cascade with termination.
                    for j in 0..first {
                        if bernoulli(rng, term.at_column(j)) {
                            return SessionOutcome {
                                clicked: None,
                                terminated_early: true,
                                examined_count: j + 1,
                            };
                        }
                    }
                    return SessionOutcome {
                        clicked: Some((i, first)),
                        terminated_early: false,
                        examined_count: first + 1,
                    };
                }
                if i + 1 < n_rows && bernoulli(rng, term.carousel()) {
                    return SessionOutcome {
                        clicked: None,
                        terminated_early: true,
                        examined_count: 0,
                    };
                }
            }
            SessionOutcome {
                clicked: None,
                terminated_early: false,
                examined_count: 0,
            }
        }
    }
}

/// Aggregates `n_sessions` independently simulated sessions.
pub fn empirical_click_matrix(
    mat: &AttractionMatrix,
    term: &TerminationProfile,
    model: ClickModel,
    n_sessions: u64,
    seed: u64,
) -> Result<EmpiricalClicks> {
    check_shape(mat, model)?;
    term.validate()?;
    if n_sessions == 0 {
        return Err(Error::Size("need at least one session".into()));
    }
    let lengths = mat.row_lengths();
    let empty = || EmpiricalClicks {
        counts: lengths.iter().map(|&n| vec![0; n]).collect(),
        sessions: 0,
    };
    let n_tasks = n_sessions.div_ceil(SESSIONS_PER_TASK);
    let total = (0..n_tasks)
        .into_par_iter()
        .map(|task| {
            let mut acc = empty();
            let mut scratch = Vec::new();
            let start = task * SESSIONS_PER_TASK;
            let end = (start + SESSIONS_PER_TASK).min(n_sessions);
            for index in start..end {
                let mut rng = session_rng(seed, index);
                let outcome = sample(mat, term, model, &mut rng, &mut scratch);
                if let Some((i, j)) = outcome.clicked {
                    acc.counts[i][j] += 1;
                }
            }
            acc.sessions = end - start;
            acc
        })
        .reduce(empty, EmpiricalClicks::merge);
    Ok(total)
}

/// Bernoulli indicators of one model instance, in a fixed order.
struct Indicators {
    probs: Vec<f64>,
    /// Offset of the carousel-level termination indicators (CCM only).
    carousel_q: usize,
    /// Offset of the item-level termination indicators (TCM and CCM).
    item_q: usize,
}

fn indicators(mat: &AttractionMatrix, term: &TerminationProfile, model: ClickModel) -> Indicators {
    let mut probs: Vec<f64> = mat.rows().iter().flat_map(|r| r.probs().iter().copied()).collect();
    let carousel_q = probs.len();
    if model == ClickModel::Ccm {
        probs.extend(std::iter::repeat_n(term.carousel(), mat.n_rows()));
    }
    let item_q = probs.len();
    if model != ClickModel::Cm {
        for row in mat.rows() {
            probs.extend((0..row.len()).map(|j| term.at_column(j)));
        }
    }
    Indicators {
        probs,
        carousel_q,
        item_q,
    }
}

/// Deterministic outcome of a fully specified indicator assignment.
fn outcome(mat: &AttractionMatrix, model: ClickModel, ind: &Indicators, bits: &[bool]) -> Option<(usize, usize)> {
    let mut offset = 0;
    for (i, row) in mat.rows().iter().enumerate() {
        let len = row.len();
        let y = &bits[offset..offset + len];
        let q = &bits[ind.item_q + offset..];
        match model {
            ClickModel::Cm => return y.iter().position(|&b| b).map(|j| (0, j)),
            ClickModel::Tcm => {
                for j in 0..len {
                    if y[j] {
                        return Some((0, j));
                    }
                    if q[j] {
                        return None;
                    }
                }
                return None;
            }
            ClickModel::Ccm => {
                if y.iter().any(|&b| b) {
                    for j in 0..len {
                        if y[j] {
                            return Some((i, j));
                        }
                        if q[j] {
                            return None;
                        }
                    }
                    unreachable!("attractive carousel without an attractive item");
                }
                if bits[ind.carousel_q + i] {
                    return None;
                }
            }
        }
        offset += len;
    }
    None
}

/// Exact click probability of every position, computed by summing the
/// session outcome over every assignment of the attraction and termination
/// indicators, weighted by its probability. Zero-probability branches are
/// skipped since they contribute nothing. Up to 2^24 leaves land in one cell,
/// so the sums are compensated.
pub fn enumerate_exact(mat: &AttractionMatrix, term: &TerminationProfile, model: ClickModel) -> Result<ClickProbMatrix> {
    check_shape(mat, model)?;
    let ind = indicators(mat, term, model);
    let n = ind.probs.len();
    if n > MAX_ENUMERATION_INDICATORS {
        return Err(Error::Capacity {
            indicators: n,
            limit: MAX_ENUMERATION_INDICATORS,
        });
    }

    let lengths = mat.row_lengths();
    let mut acc: Vec<Vec<Neumaier>> = lengths.iter().map(|&l| vec![Neumaier::default(); l]).collect();
    let mut bits = vec![false; n];

    fn walk(
        depth: usize,
        weight: f64,
        bits: &mut [bool],
        ind: &Indicators,
        mat: &AttractionMatrix,
        model: ClickModel,
        acc: &mut [Vec<Neumaier>],
    ) {
        if weight == 0.0 {
            return;
        }
        if depth == bits.len() {
            if let Some((i, j)) = outcome(mat, model, ind, bits) {
                acc[i][j].add(weight);
            }
            return;
        }
        let p = ind.probs[depth];
        bits[depth] = true;
        walk(depth + 1, weight * p, bits, ind, mat, model, acc);
        bits[depth] = false;
        walk(depth + 1, weight * (1.0 - p), bits, ind, mat, model, acc);
    }

    walk(0, 1.0, &mut bits, &ind, mat, model, &mut acc);
    let rows = acc.into_iter().map(|r| r.into_iter().map(Neumaier::value).collect()).collect();
    Ok(ClickProbMatrix::from_rows_unchecked(rows))
}

#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    carry: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ccm_click_matrix, click_matrix};
    use approx::assert_abs_diff_eq;

    fn uni(pq: f64) -> TerminationProfile {
        TerminationProfile::uniform(pq).unwrap()
    }

    #[test]
    fn certain_attraction_clicks_first_position() {
        let mat = AttractionMatrix::new(vec![vec![1.0, 1.0], vec![1.0]]).unwrap();
        let mut rng = session_rng(7, 0);
        for _ in 0..100 {
            let out = simulate_session(&mat, &uni(0.3), ClickModel::Ccm, &mut rng).unwrap();
            assert_eq!(out.clicked, Some((0, 0)));
            assert!(!out.terminated_early);
        }
    }

    #[test]
    fn zero_attraction_full_termination_stops_after_first_look() {
        let list = AttractionMatrix::single_row(vec![0.0; 4]).unwrap();
        let mut rng = session_rng(1, 0);
        let out = simulate_session(&list, &uni(1.0), ClickModel::Tcm, &mut rng).unwrap();
        assert_eq!(
            out,
            SessionOutcome {
                clicked: None,
                terminated_early: true,
                examined_count: 1
            }
        );
        let grid = AttractionMatrix::new(vec![vec![0.0; 2], vec![0.0; 2]]).unwrap();
        let out = simulate_session(&grid, &uni(1.0), ClickModel::Ccm, &mut rng).unwrap();
        assert_eq!(out.clicked, None);
        assert!(out.terminated_early);
    }

    #[test]
    fn shape_mismatch() {
        let grid = AttractionMatrix::new(vec![vec![0.5], vec![0.5]]).unwrap();
        let mut rng = session_rng(1, 0);
        assert!(matches!(
            simulate_session(&grid, &uni(0.1), ClickModel::Cm, &mut rng),
            Err(Error::Shape(_))
        ));
        assert!(enumerate_exact(&grid, &uni(0.1), ClickModel::Tcm).is_err());
    }

    #[test]
    fn single_session_counts() {
        let mat = AttractionMatrix::new(vec![vec![1.0, 0.3]]).unwrap();
        let clicks = empirical_click_matrix(&mat, &uni(0.0), ClickModel::Ccm, 1, 3).unwrap();
        assert_eq!(clicks.counts(), &[vec![1, 0]]);
        assert_eq!(clicks.sessions(), 1);
        assert!(empirical_click_matrix(&mat, &uni(0.0), ClickModel::Ccm, 0, 3).is_err());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let mat = AttractionMatrix::new(vec![vec![0.2, 0.1, 0.05], vec![0.3, 0.1]]).unwrap();
        let a = empirical_click_matrix(&mat, &uni(0.1), ClickModel::Ccm, 50_000, 42).unwrap();
        let b = empirical_click_matrix(&mat, &uni(0.1), ClickModel::Ccm, 50_000, 42).unwrap();
        let c = empirical_click_matrix(&mat, &uni(0.1), ClickModel::Ccm, 50_000, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn session_streams_are_order_independent() {
        let mat = AttractionMatrix::new(vec![vec![0.2, 0.1], vec![0.3]]).unwrap();
        let forward: Vec<_> = (0..50)
            .map(|i| simulate_session(&mat, &uni(0.2), ClickModel::Ccm, &mut session_rng(9, i)).unwrap())
            .collect();
        let backward: Vec<_> = (0..50)
            .rev()
            .map(|i| simulate_session(&mat, &uni(0.2), ClickModel::Ccm, &mut session_rng(9, i)).unwrap())
            .collect();
        assert!(forward.iter().eq(backward.iter().rev()));
    }

    #[test]
    fn ccm_sessions_never_examine_past_the_click() {
        let mat = AttractionMatrix::new(vec![vec![0.1, 0.2, 0.3], vec![0.4, 0.1], vec![0.2]]).unwrap();
        let lengths = mat.row_lengths();
        for s in 0..2000 {
            let out = simulate_session(&mat, &uni(0.05), ClickModel::Ccm, &mut session_rng(5, s)).unwrap();
            if let Some((i, j)) = out.clicked {
                assert_eq!(out.examined_count, j + 1);
                assert!(j < lengths[i]);
            }
            assert!(out.examined_count <= 3);
        }
    }

    #[test]
    fn enumeration_small_cases() {
        let one = AttractionMatrix::new(vec![vec![0.4]]).unwrap();
        for model in [ClickModel::Cm, ClickModel::Tcm, ClickModel::Ccm] {
            let exact = enumerate_exact(&one, &uni(0.3), model).unwrap();
            assert_abs_diff_eq!(exact.get(0, 0).unwrap(), 0.4, epsilon = 1e-15);
        }
        let grid = AttractionMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let exact = enumerate_exact(&grid, &uni(0.0), ClickModel::Ccm).unwrap();
        assert_eq!(exact.rows(), &[vec![0.5, 0.25], vec![0.125, 0.0625]]);

        let exact = enumerate_exact(&grid, &uni(0.5), ClickModel::Ccm).unwrap();
        assert_eq!(exact.rows(), &[vec![0.5, 0.125], vec![0.0625, 0.015625]]);
        assert_eq!(exact.total(), 0.703125);
    }

    #[test]
    fn enumeration_matches_closed_form_on_ragged_layout() {
        let mat = AttractionMatrix::new(vec![vec![0.3, 0.7], vec![0.2], vec![0.6, 0.1, 0.9]]).unwrap();
        let term = TerminationProfile::per_column(1, 0.2, 0.6).unwrap();
        let exact = enumerate_exact(&mat, &term, ClickModel::Ccm).unwrap();
        let closed = ccm_click_matrix(&mat, &term);
        for (a, b) in exact.values().zip(closed.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let list = AttractionMatrix::single_row(vec![0.3, 0.7, 0.2, 0.6]).unwrap();
        for model in [ClickModel::Cm, ClickModel::Tcm] {
            let exact = enumerate_exact(&list, &term, model).unwrap();
            let closed = click_matrix(model, &list, &term).unwrap();
            for (a, b) in exact.values().zip(closed.values()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn enumeration_capacity() {
        let big = AttractionMatrix::new(vec![vec![0.1; 5]; 3]).unwrap();
        assert!(matches!(
            enumerate_exact(&big, &uni(0.1), ClickModel::Ccm),
            Err(Error::Capacity { indicators: 33, .. })
        ));
        assert!(enumerate_exact(&big, &uni(0.1), ClickModel::Cm).is_err());
    }
}
