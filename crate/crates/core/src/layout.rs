//! Layout construction: descending top-K lists, topic carousels ordered by
//! total attraction, row-major flattening and item-pool selection.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::RatingsDataset;
use crate::error::{check_probability, Error, Result};
use crate::models::{ccm_list_prob, AttractionMatrix, ItemId, TerminationProfile};

/// Largest row count accepted by [`best_carousel_order`].
pub const MAX_BRUTE_FORCE_ROWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TopicId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredItem {
    pub item_id: ItemId,
    pub topic_id: TopicId,
    pub attraction: f64,
}

impl ScoredItem {
    pub fn new(item_id: ItemId, topic_id: TopicId, attraction: f64) -> Result<Self> {
        check_probability("attraction", attraction)?;
        Ok(Self { item_id, topic_id, attraction })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemPool {
    Top100,
    Top1000,
    #[default]
    All,
}

impl ItemPool {
    pub const ALL: [ItemPool; 3] = [ItemPool::Top100, ItemPool::Top1000, ItemPool::All];

    pub fn name(self) -> &'static str {
        match self {
            ItemPool::Top100 => "top100",
            ItemPool::Top1000 => "top1000",
            ItemPool::All => "all",
        }
    }

    pub fn limit(self) -> Option<usize> {
        match self {
            ItemPool::Top100 => Some(100),
            ItemPool::Top1000 => Some(1000),
            ItemPool::All => None,
        }
    }
}

impl fmt::Display for ItemPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ItemPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "top100" => Ok(ItemPool::Top100),
            "top1000" => Ok(ItemPool::Top1000),
            "all" => Ok(ItemPool::All),
            other => Err(Error::Invalid(format!("unknown item pool `{other}`"))),
        }
    }
}

/// Shape limits for a carousel layout. `None` means unlimited.
///
/// `item_pool` is informational here; the pool is applied when choosing
/// which items to score, see [`select_item_pool`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub max_rows: Option<usize>,
    pub items_per_row: Option<usize>,
    pub item_pool: ItemPool,
}

impl LayoutSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_rows == Some(0) || self.items_per_row == Some(0) {
            return Err(Error::Invalid("layout counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// A carousel matrix together with the topic shown on each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CarouselLayout {
    pub matrix: AttractionMatrix,
    pub topics: Vec<TopicId>,
}

fn check_items(items: &[ScoredItem]) -> Result<()> {
    if items.is_empty() {
        return Err(Error::Size("no items to lay out".into()));
    }
    items.iter().try_for_each(|it| check_probability("attraction", it.attraction))
}

fn by_attraction(a: &ScoredItem, b: &ScoredItem) -> std::cmp::Ordering {
    b.attraction.total_cmp(&a.attraction).then(a.item_id.cmp(&b.item_id))
}

/// The `k` most attractive items in descending order, ties by item id.
pub fn tcm_optimal_list(items: &[ScoredItem], k: usize) -> Result<AttractionMatrix> {
    check_items(items)?;
    if k == 0 || k > items.len() {
        return Err(Error::Size(format!("list length {k} outside 1..={}", items.len())));
    }
    let mut sorted = items.to_vec();
    if k < sorted.len() {
        sorted.select_nth_unstable_by(k - 1, by_attraction);
        sorted.truncate(k);
    }
    sorted.sort_unstable_by(by_attraction);
    let (probs, ids) = sorted.iter().map(|it| (it.attraction, it.item_id)).unzip();
    AttractionMatrix::with_ids(vec![probs], vec![ids])
}

/// One carousel per topic, items descending within a carousel and carousels
/// descending by their summed attraction. Ties go to the smaller id.
pub fn ccm_optimal_layout(items: &[ScoredItem], spec: &LayoutSpec) -> Result<CarouselLayout> {
    check_items(items)?;
    spec.validate()?;
    let mut groups: BTreeMap<TopicId, Vec<ScoredItem>> = BTreeMap::new();
    for it in items {
        groups.entry(it.topic_id).or_default().push(*it);
    }
    let mut rows: Vec<(TopicId, f64, Vec<ScoredItem>)> = groups
        .into_iter()
        .map(|(topic, mut row)| {
            row.sort_unstable_by(by_attraction);
            if let Some(k) = spec.items_per_row {
                row.truncate(k);
            }
            let total = row.iter().map(|it| it.attraction).sum();
            (topic, total, row)
        })
        .collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if let Some(m) = spec.max_rows {
        rows.truncate(m);
    }
    let topics = rows.iter().map(|r| r.0).collect();
    let (probs, ids) = rows
        .iter()
        .map(|(_, _, row)| row.iter().map(|it| (it.attraction, it.item_id)).unzip())
        .unzip();
    Ok(CarouselLayout {
        matrix: AttractionMatrix::with_ids(probs, ids)?,
        topics,
    })
}

pub fn ccm_optimal_matrix(items: &[ScoredItem], spec: &LayoutSpec) -> Result<AttractionMatrix> {
    Ok(ccm_optimal_layout(items, spec)?.matrix)
}

/// Concatenates the rows of `mat` into a single list.
pub fn flatten_row_major(mat: &AttractionMatrix) -> AttractionMatrix {
    let probs = mat.rows().iter().flat_map(|r| r.probs().iter().copied()).collect();
    let ids = mat.item_ids().iter().flatten().copied().collect();
    AttractionMatrix::with_ids(vec![probs], vec![ids]).expect("rows of a valid matrix")
}

/// Dense item indices with the largest rating sums in `data`, ties by the
/// smaller raw movie id. `All` returns every rated item.
pub fn select_item_pool(data: &RatingsDataset, pool: ItemPool) -> Result<Vec<u32>> {
    if data.is_empty() {
        return Err(Error::Size("cannot rank items of an empty dataset".into()));
    }
    let sums = data.item_rating_sums();
    let mut rated = vec![false; data.n_items()];
    for r in data.ratings() {
        rated[r.item as usize] = true;
    }
    let mut items: Vec<u32> = (0..data.n_items() as u32).filter(|&a| rated[a as usize]).collect();
    items.sort_by(|&a, &b| {
        sums[b as usize]
            .total_cmp(&sums[a as usize])
            .then(data.item_id(a).cmp(&data.item_id(b)))
    });
    if let Some(n) = pool.limit() {
        items.truncate(n);
    }
    Ok(items)
}

fn next_permutation(perm: &mut [usize]) -> bool {
    let Some(i) = perm.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = perm.iter().rposition(|&x| x > perm[i]).expect("a larger element exists");
    perm.swap(i, j);
    perm[i + 1..].reverse();
    true
}

/// Exhaustive search over row orders of `mat` for the highest CCM list
/// probability. Returns the winning order (first in lexicographic order on
/// ties) and its value.
pub fn best_carousel_order(mat: &AttractionMatrix, term: &TerminationProfile) -> Result<(Vec<usize>, f64)> {
    term.validate()?;
    let m = mat.n_rows();
    if m > MAX_BRUTE_FORCE_ROWS {
        return Err(Error::Capacity {
            indicators: m,
            limit: MAX_BRUTE_FORCE_ROWS,
        });
    }
    let rows: Vec<Vec<f64>> = mat.rows().iter().map(|r| r.probs().to_vec()).collect();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = (perm.clone(), f64::NEG_INFINITY);
    loop {
        let candidate = AttractionMatrix::new(perm.iter().map(|&i| rows[i].clone()).collect())?;
        let value = ccm_list_prob(&candidate, term);
        if value > best.1 {
            best = (perm.clone(), value);
        }
        if !next_permutation(&mut perm) {
            return Ok(best);
        }
    }
}
