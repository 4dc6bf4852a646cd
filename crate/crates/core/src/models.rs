//! Closed-form click probabilities for the cascade model (CM), the terminating
//! cascade model (TCM) and the carousel click model (CCM).
//!
//! All positions are 0-based. A carousel layout is an [`AttractionMatrix`]
//! whose rows may have different lengths; a ranked list is a matrix with a
//! single row.
//!
//! Everything here is evaluated in linear space with running prefix products.
//! Each evaluation is a pure function of its inputs.

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};

/// Identifier of a recommendable item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemId(pub u32);

/// Attraction probabilities of the items placed in one ranked list, in
/// presentation order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttractionVector(Vec<f64>);

impl AttractionVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Size("attraction vector must have at least one position".into()));
        }
        for (k, &p) in probs.iter().enumerate() {
            check_probability(&format!("attraction[{k}]"), p)?;
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for AttractionVector {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

/// A carousel layout: row `i` is carousel `i`, row entries are attraction
/// probabilities of the placed items. Rows may be ragged.
#[derive(Debug, Clone, PartialEq)]
pub struct AttractionMatrix {
    rows: Vec<AttractionVector>,
    item_ids: Vec<Vec<ItemId>>,
}

impl AttractionMatrix {
    /// Builds a matrix from raw probabilities, numbering items row-major from 0.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut next = 0u32;
        let ids = rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|_| {
                        let id = ItemId(next);
                        next += 1;
                        id
                    })
                    .collect()
            })
            .collect();
        Self::with_ids(rows, ids)
    }

    pub fn with_ids(rows: Vec<Vec<f64>>, item_ids: Vec<Vec<ItemId>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Size("carousel matrix must have at least one row".into()));
        }
        if rows.len() != item_ids.len()
            || rows.iter().zip(&item_ids).any(|(r, ids)| r.len() != ids.len())
        {
            return Err(Error::Shape("item ids do not match attraction rows".into()));
        }
        let mut seen: Vec<ItemId> = item_ids.iter().flatten().copied().collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("an item appears in more than one position".into()));
        }
        let rows = rows
            .into_iter()
            .map(AttractionVector::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows, item_ids })
    }

    /// A single-row matrix, i.e. a ranked list.
    pub fn single_row(probs: Vec<f64>) -> Result<Self> {
        Self::new(vec![probs])
    }

    pub fn rows(&self) -> &[AttractionVector] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> Result<&AttractionVector> {
        self.rows.get(i).ok_or(Error::Index {
            index: i,
            len: self.rows.len(),
        })
    }

    pub fn item_ids(&self) -> &[Vec<ItemId>] {
        &self.item_ids
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Number of placed items over all rows.
    pub fn n_items(&self) -> usize {
        self.rows.iter().map(AttractionVector::len).sum()
    }

    pub fn row_lengths(&self) -> Vec<usize> {
        self.rows.iter().map(AttractionVector::len).collect()
    }

    /// Same layout (same items in the same places) with attraction probabilities
    /// looked up from `attraction`.
    pub fn reprice(&self, attraction: impl Fn(ItemId) -> f64) -> Result<Self> {
        let rows = self
            .item_ids
            .iter()
            .map(|ids| ids.iter().map(|&id| attraction(id)).collect())
            .collect();
        Self::with_ids(rows, self.item_ids.clone())
    }
}

/// Probability that the user leaves unsatisfied after examining an
/// unattractive item or carousel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminationProfile {
    /// The same termination probability everywhere.
    Uniform { pq: f64 },
    /// `near` for the first `thresh` columns (list positions), `far` after
    /// them. Carousel-level termination uses `near`.
    PerColumn { thresh: usize, near: f64, far: f64 },
}

impl TerminationProfile {
    pub fn uniform(pq: f64) -> Result<Self> {
        check_probability("termination probability", pq)?;
        Ok(Self::Uniform { pq })
    }

    pub fn per_column(thresh: usize, near: f64, far: f64) -> Result<Self> {
        if thresh == 0 {
            return Err(Error::Invalid("per-column threshold must be at least 1".into()));
        }
        check_probability("near termination probability", near)?;
        check_probability("far termination probability", far)?;
        Ok(Self::PerColumn { thresh, near, far })
    }

    /// No termination; TCM and CCM then behave like the cascade model.
    pub const NONE: Self = Self::Uniform { pq: 0.0 };

    /// Termination probability after an unattractive item at 0-based column `col`.
    #[inline]
    pub fn at_column(&self, col: usize) -> f64 {
        match *self {
            Self::Uniform { pq } => pq,
            Self::PerColumn { thresh, near, far } => {
                if col < thresh {
                    near
                } else {
                    far
                }
            }
        }
    }

    /// Termination probability after an unattractive carousel.
    #[inline]
    pub fn carousel(&self) -> f64 {
        match *self {
            Self::Uniform { pq } => pq,
            Self::PerColumn { near, .. } => near,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Uniform { pq } => Self::uniform(pq).map(|_| ()),
            Self::PerColumn { thresh, near, far } => Self::per_column(thresh, near, far).map(|_| ()),
        }
    }
}

/// Click probability per position, laid out like the layout it describes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickProbMatrix {
    rows: Vec<Vec<f64>>,
}

impl ClickProbMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || rows.iter().any(Vec::is_empty) {
            return Err(Error::Size("click matrix needs at least one non-empty row".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                check_probability(&format!("click probability ({i}, {j})"), v)?;
            }
        }
        Ok(Self { rows })
    }

    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    /// Zero matrix with the given row lengths.
    pub fn zeros(row_lengths: &[usize]) -> Self {
        Self {
            rows: row_lengths.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows.get(i).and_then(|r| r.get(j)).copied()
    }

    pub fn row_lengths(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    /// `(m, K)` when every row has the same length.
    pub fn rectangular_shape(&self) -> Option<(usize, usize)> {
        let k = self.rows[0].len();
        self.rows.iter().all(|r| r.len() == k).then_some((self.rows.len(), k))
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().flatten().copied()
    }

    pub fn total(&self) -> f64 {
        self.values().sum()
    }
}

/// Which user-browsing model a computation follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClickModel {
    Cm,
    Tcm,
    Ccm,
}

impl ClickModel {
    pub fn name(self) -> &'static str {
        match self {
            ClickModel::Cm => "cm",
            ClickModel::Tcm => "tcm",
            ClickModel::Ccm => "ccm",
        }
    }
}

impl std::str::FromStr for ClickModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cm" => Ok(ClickModel::Cm),
            "tcm" => Ok(ClickModel::Tcm),
            "ccm" => Ok(ClickModel::Ccm),
            other => Err(Error::Invalid(format!("unknown click model `{other}`"))),
        }
    }
}

fn check_position(k: usize, len: usize) -> Result<()> {
    if k < len {
        Ok(())
    } else {
        Err(Error::Index { index: k, len })
    }
}

/// Probability that no item of the row is attractive.
#[inline]
fn row_survival(row: &[f64]) -> f64 {
    row.iter().fold(1.0, |acc, &p| acc * (1.0 - p))
}

/// CM: probability of a click on position `k`.
pub fn cm_position_prob(attr: &AttractionVector, k: usize) -> Result<f64> {
    let p = attr.probs();
    check_position(k, p.len())?;
    let prefix = p[..k].iter().fold(1.0, |acc, &pl| acc * (1.0 - pl));
    Ok(prefix * p[k])
}

/// CM: probability of a click anywhere in the list.
pub fn cm_list_prob(attr: &AttractionVector) -> f64 {
    cm_click_vector(attr).iter().sum()
}

pub fn cm_click_vector(attr: &AttractionVector) -> Vec<f64> {
    let mut prefix = 1.0;
    attr.probs()
        .iter()
        .map(|&p| {
            let click = prefix * p;
            prefix *= 1.0 - p;
            click
        })
        .collect()
}

/// TCM: probability of a click on position `k`.
pub fn tcm_position_prob(attr: &AttractionVector, k: usize, term: &TerminationProfile) -> Result<f64> {
    let p = attr.probs();
    check_position(k, p.len())?;
    let mut prefix = 1.0;
    for (l, &pl) in p[..k].iter().enumerate() {
        prefix *= (1.0 - term.at_column(l)) * (1.0 - pl);
    }
    Ok(prefix * p[k])
}

/// TCM: click probability of every position of the list.
pub fn tcm_click_vector(attr: &AttractionVector, term: &TerminationProfile) -> Vec<f64> {
    let mut out = Vec::with_capacity(attr.len());
    tcm_click_into(attr.probs(), term, &mut out);
    out
}

#[inline]
pub(crate) fn tcm_click_into(p: &[f64], term: &TerminationProfile, out: &mut Vec<f64>) {
    out.clear();
    let mut prefix = 1.0;
    for (k, &pk) in p.iter().enumerate() {
        out.push(prefix * pk);
        prefix *= (1.0 - term.at_column(k)) * (1.0 - pk);
    }
}

#[inline]
fn tcm_sum(p: &[f64], term: &TerminationProfile) -> f64 {
    let mut prefix = 1.0;
    let mut total = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        total += prefix * pk;
        prefix *= (1.0 - term.at_column(k)) * (1.0 - pk);
    }
    total
}

/// TCM: probability of a click anywhere in the list.
pub fn tcm_list_prob(attr: &AttractionVector, term: &TerminationProfile) -> f64 {
    tcm_sum(attr.probs(), term)
}

/// CCM: probability that carousel `i` is examined, i.e. every carousel above
/// it was unattractive and the user did not leave after any of them.
pub fn ccm_examination_prob(mat: &AttractionMatrix, i: usize, term: &TerminationProfile) -> Result<f64> {
    check_position(i, mat.n_rows())?;
    let stay = 1.0 - term.carousel();
    Ok(mat.rows()[..i]
        .iter()
        .fold(1.0, |acc, row| acc * (stay * row_survival(row.probs()))))
}

/// CCM: probability of a click on position `(i, j)`.
///
/// The examined-before set of `(i, j)` is every item of carousels `0..i` and
/// the items `(i, 0..j)`, so the result factors into the examination
/// probability of carousel `i` times the TCM click probability of position `j`
/// within that carousel.
pub fn ccm_position_prob(mat: &AttractionMatrix, i: usize, j: usize, term: &TerminationProfile) -> Result<f64> {
    let exam = ccm_examination_prob(mat, i, term)?;
    Ok(exam * tcm_position_prob(&mat.rows()[i], j, term)?)
}

/// CCM: probability of a click anywhere in the layout.
pub fn ccm_list_prob(mat: &AttractionMatrix, term: &TerminationProfile) -> f64 {
    let stay = 1.0 - term.carousel();
    let mut exam = 1.0;
    let mut total = 0.0;
    for row in mat.rows() {
        let p = row.probs();
        total += exam * tcm_sum(p, term);
        exam *= stay * row_survival(p);
    }
    total
}

/// CCM: click probability of every position of the layout.
pub fn ccm_click_matrix(mat: &AttractionMatrix, term: &TerminationProfile) -> ClickProbMatrix {
    let stay = 1.0 - term.carousel();
    let mut exam = 1.0;
    let mut buf = Vec::new();
    let rows = mat
        .rows()
        .iter()
        .map(|row| {
            let p = row.probs();
            tcm_click_into(p, term, &mut buf);
            let out = buf.iter().map(|&c| exam * c).collect();
            exam *= stay * row_survival(p);
            out
        })
        .collect();
    ClickProbMatrix::from_rows_unchecked(rows)
}

/// Per-position click probabilities under `model`. CM and TCM need a single-row
/// layout; CM ignores `term`.
pub fn click_matrix(model: ClickModel, mat: &AttractionMatrix, term: &TerminationProfile) -> Result<ClickProbMatrix> {
    match model {
        ClickModel::Ccm => Ok(ccm_click_matrix(mat, term)),
        ClickModel::Cm | ClickModel::Tcm => {
            if mat.n_rows() != 1 {
                return Err(Error::Shape(format!(
                    "{} needs a single ranked list, got {} rows",
                    model.name(),
                    mat.n_rows()
                )));
            }
            let row = &mat.rows()[0];
            let v = if model == ClickModel::Cm {
                cm_click_vector(row)
            } else {
                tcm_click_vector(row, term)
            };
            Ok(ClickProbMatrix::from_rows_unchecked(vec![v]))
        }
    }
}

/// Small-attraction approximations of the TCM and CCM click probabilities for
/// `m * k` items of identical attraction `p`, the TCM viewing them as one list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformComparison {
    pub tcm_approx: f64,
    pub ccm_approx: f64,
}

pub fn compare_tcm_ccm_uniform(p: f64, m: usize, k: usize, pq: f64) -> Result<UniformComparison> {
    check_probability("attraction", p)?;
    check_probability("termination probability", pq)?;
    if m == 0 || k == 0 {
        return Err(Error::Size("need at least one carousel and one column".into()));
    }
    let stay = 1.0 - pq;
    let tcm: f64 = (0..m * k).map(|e| stay.powi(e as i32)).sum();
    let ccm: f64 = (0..m)
        .flat_map(|i| (0..k).map(move |j| stay.powi((i + j) as i32)))
        .sum();
    Ok(UniformComparison {
        tcm_approx: p * tcm,
        ccm_approx: p * ccm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(p: &[f64]) -> AttractionVector {
        AttractionVector::new(p.to_vec()).unwrap()
    }

    fn uni(pq: f64) -> TerminationProfile {
        TerminationProfile::uniform(pq).unwrap()
    }

    #[test]
    fn cm_positions() {
        assert_eq!(cm_position_prob(&v(&[0.5]), 0).unwrap(), 0.5);
        assert_eq!(cm_position_prob(&v(&[1.0, 0.7]), 1).unwrap(), 0.0);
        assert_eq!(cm_position_prob(&v(&[0.5, 0.5]), 1).unwrap(), 0.25);
        assert!(matches!(
            cm_position_prob(&v(&[0.5, 0.5]), 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn cm_lists() {
        assert_eq!(cm_list_prob(&v(&[0.5, 0.5])), 0.75);
        assert_eq!(cm_list_prob(&v(&[0.0, 0.0, 0.0])), 0.0);
        assert_eq!(cm_list_prob(&v(&[1.0, 0.2])), 1.0);
    }

    #[test]
    fn tcm_positions_and_lists() {
        let a = v(&[0.5, 0.5]);
        assert_eq!(tcm_position_prob(&a, 1, &uni(0.0)).unwrap(), 0.25);
        assert_eq!(tcm_position_prob(&a, 1, &uni(1.0)).unwrap(), 0.0);
        assert_eq!(tcm_position_prob(&a, 1, &uni(0.5)).unwrap(), 0.125);
        assert_eq!(tcm_list_prob(&a, &uni(0.5)), 0.625);
        for pq in [0.0, 0.3, 1.0] {
            assert_eq!(tcm_list_prob(&v(&[0.37]), &uni(pq)), 0.37);
        }
        assert_abs_diff_eq!(tcm_list_prob(&v(&[0.3, 0.2, 0.1]), &uni(0.0)), 0.496, epsilon = 1e-15);
        assert!(tcm_position_prob(&a, 5, &uni(0.1)).is_err());
    }

    #[test]
    fn per_column_switches_after_threshold() {
        let t = TerminationProfile::per_column(2, 0.01, 0.1).unwrap();
        assert_eq!(t.at_column(0), 0.01);
        assert_eq!(t.at_column(1), 0.01);
        assert_eq!(t.at_column(2), 0.1);
        assert_eq!(t.carousel(), 0.01);
        let a = v(&[0.0, 0.0, 0.0, 1.0]);
        let expected = 0.99 * 0.99 * 0.9;
        assert_abs_diff_eq!(tcm_position_prob(&a, 3, &t).unwrap(), expected, epsilon = 1e-15);
        assert!(TerminationProfile::per_column(0, 0.1, 0.1).is_err());
        assert!(TerminationProfile::uniform(1.5).is_err());
    }

    #[test]
    fn ccm_examination() {
        let m = AttractionMatrix::new(vec![vec![0.3, 0.2], vec![0.9]]).unwrap();
        assert_eq!(ccm_examination_prob(&m, 0, &uni(0.7)).unwrap(), 1.0);
        let m = AttractionMatrix::new(vec![vec![1.0], vec![0.5]]).unwrap();
        assert_eq!(ccm_examination_prob(&m, 1, &uni(0.0)).unwrap(), 0.0);
        let m = AttractionMatrix::new(vec![vec![0.5, 0.5], vec![0.9]]).unwrap();
        assert_eq!(ccm_examination_prob(&m, 1, &uni(0.5)).unwrap(), 0.125);
        assert!(ccm_examination_prob(&m, 2, &uni(0.5)).is_err());
    }

    #[test]
    fn ccm_positions_and_lists() {
        let m = AttractionMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(ccm_position_prob(&m, 1, 0, &uni(0.0)).unwrap(), 0.125);
        assert_eq!(ccm_position_prob(&m, 1, 1, &uni(0.5)).unwrap(), 0.015625);
        assert_eq!(ccm_list_prob(&m, &uni(0.0)), 0.9375);
        assert_eq!(ccm_list_prob(&m, &uni(0.5)), 0.703125);
        assert!(ccm_position_prob(&m, 0, 2, &uni(0.5)).is_err());

        let grid = ccm_click_matrix(&m, &uni(0.0));
        assert_eq!(grid.rows(), &[vec![0.5, 0.25], vec![0.125, 0.0625]]);

        let one = AttractionMatrix::new(vec![vec![0.4]]).unwrap();
        assert_eq!(ccm_click_matrix(&one, &uni(0.2)).rows(), &[vec![0.4]]);

        let zero = AttractionMatrix::new(vec![vec![0.0; 3], vec![0.0; 2]]).unwrap();
        assert!(ccm_click_matrix(&zero, &uni(0.2)).values().all(|c| c == 0.0));
    }

    #[test]
    fn single_carousel_is_tcm() {
        let row = vec![0.3, 0.6, 0.1, 0.8];
        let t = uni(0.25);
        let m = AttractionMatrix::single_row(row.clone()).unwrap();
        for j in 0..row.len() {
            assert_eq!(
                ccm_position_prob(&m, 0, j, &t).unwrap(),
                tcm_position_prob(&v(&row), j, &t).unwrap()
            );
        }
        assert_eq!(ccm_list_prob(&m, &t), tcm_list_prob(&v(&row), &t));
    }

    #[test]
    fn uniform_comparison() {
        let c = compare_tcm_ccm_uniform(0.01, 2, 2, 0.5).unwrap();
        assert_abs_diff_eq!(c.tcm_approx, 0.01 * 1.875, epsilon = 1e-15);
        assert_abs_diff_eq!(c.ccm_approx, 0.01 * 2.25, epsilon = 1e-15);
        let c = compare_tcm_ccm_uniform(0.02, 3, 4, 0.0).unwrap();
        assert_abs_diff_eq!(c.tcm_approx, 0.02 * 12.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.ccm_approx, 0.02 * 12.0, epsilon = 1e-15);
        let c = compare_tcm_ccm_uniform(0.05, 1, 7, 0.3).unwrap();
        assert_eq!(c.tcm_approx, c.ccm_approx);
        assert!(compare_tcm_ccm_uniform(0.05, 0, 7, 0.3).is_err());
    }

    #[test]
    fn construction_errors() {
        assert!(AttractionVector::new(vec![]).is_err());
        assert!(AttractionVector::new(vec![0.2, 1.2]).is_err());
        assert!(AttractionMatrix::new(vec![]).is_err());
        assert!(AttractionMatrix::new(vec![vec![0.1], vec![]]).is_err());
        let dup = AttractionMatrix::with_ids(
            vec![vec![0.1], vec![0.2]],
            vec![vec![ItemId(3)], vec![ItemId(3)]],
        );
        assert!(matches!(dup, Err(Error::Validation(_))));
    }

    #[test]
    fn cm_and_tcm_need_one_row() {
        let m = AttractionMatrix::new(vec![vec![0.1], vec![0.2]]).unwrap();
        assert!(matches!(click_matrix(ClickModel::Tcm, &m, &uni(0.1)), Err(Error::Shape(_))));
        assert!(click_matrix(ClickModel::Ccm, &m, &uni(0.1)).is_ok());
    }
}
