use cclab::fitting::total_variation;
use cclab::layout::{
    ccm_optimal_layout, flatten_row_major, tcm_optimal_list, ItemPool, LayoutSpec, ScoredItem, TopicId,
};
use cclab::models::{
    ccm_click_matrix, ccm_examination_prob, ccm_list_prob, ccm_position_prob, click_matrix, cm_click_vector,
    cm_list_prob, compare_tcm_ccm_uniform, tcm_click_vector, tcm_list_prob, AttractionMatrix, AttractionVector,
    ClickModel, ClickProbMatrix, ItemId, TerminationProfile,
};
use cclab::recsys::softmax;
use cclab::simulate::{empirical_click_matrix, enumerate_exact};
use proptest::prelude::*;

fn prob() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0]
}

fn row(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prob(), 1..=max)
}

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = AttractionMatrix> {
    prop::collection::vec(row(max_cols), 1..=max_rows).prop_map(|rows| AttractionMatrix::new(rows).unwrap())
}

fn profile() -> impl Strategy<Value = TerminationProfile> {
    prop_oneof![
        prob().prop_map(|pq| TerminationProfile::uniform(pq).unwrap()),
        (1usize..4, prob(), prob()).prop_map(|(t, near, far)| TerminationProfile::per_column(t, near, far).unwrap()),
    ]
}

fn single(p: &[f64]) -> AttractionMatrix {
    AttractionMatrix::single_row(p.to_vec()).unwrap()
}

fn close(a: &ClickProbMatrix, b: &ClickProbMatrix, tol: f64) -> bool {
    a.row_lengths() == b.row_lengths() && a.values().zip(b.values()).all(|(x, y)| (x - y).abs() <= tol)
}

fn items(attr: &[f64], topics: &[u32]) -> Vec<ScoredItem> {
    attr.iter()
        .zip(topics)
        .enumerate()
        .map(|(k, (&a, &t))| ScoredItem::new(ItemId(k as u32), TopicId(t), a).unwrap())
        .collect()
}

proptest! {
    #[test]
    fn closed_forms_match_enumeration(mat in matrix(3, 3), term in profile()) {
        let ccm = ccm_click_matrix(&mat, &term);
        prop_assert!(close(&ccm, &enumerate_exact(&mat, &term, ClickModel::Ccm).unwrap(), 1e-12));

        let list = flatten_row_major(&mat);
        for model in [ClickModel::Cm, ClickModel::Tcm] {
            let closed = click_matrix(model, &list, &term).unwrap();
            prop_assert!(close(&closed, &enumerate_exact(&list, &term, model).unwrap(), 1e-12));
        }
    }

    #[test]
    fn click_probabilities_form_a_subdistribution(mat in matrix(5, 6), term in profile()) {
        let ccm = ccm_click_matrix(&mat, &term);
        prop_assert!(ccm.values().all(|v| (0.0..=1.0).contains(&v)));
        prop_assert!(ccm.total() <= 1.0 + 1e-12);
        prop_assert!((ccm.total() - ccm_list_prob(&mat, &term)).abs() < 1e-12);

        let flat = flatten_row_major(&mat);
        let tcm = tcm_click_vector(&flat.rows()[0], &term);
        prop_assert!(tcm.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(tcm.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn ccm_factors_into_examination_and_row(mat in matrix(4, 4), term in profile()) {
        for (i, r) in mat.rows().iter().enumerate() {
            let exam = ccm_examination_prob(&mat, i, &term).unwrap();
            let within = tcm_click_vector(r, &term);
            for (j, w) in within.iter().enumerate() {
                prop_assert_eq!(ccm_position_prob(&mat, i, j, &term).unwrap(), exam * w);
            }
        }
    }

    #[test]
    fn no_termination_reduces_tcm_to_cm(p in row(12)) {
        let v = AttractionVector::new(p).unwrap();
        prop_assert_eq!(tcm_click_vector(&v, &TerminationProfile::NONE), cm_click_vector(&v));
    }

    #[test]
    fn one_carousel_reduces_ccm_to_tcm(p in row(12), term in profile()) {
        let mat = single(&p);
        prop_assert_eq!(ccm_click_matrix(&mat, &term).rows()[0].clone(), tcm_click_vector(&mat.rows()[0], &term));
    }

    #[test]
    fn equal_near_and_far_is_uniform(mat in matrix(4, 6), pq in prob(), thresh in 1usize..8) {
        let per_column = TerminationProfile::per_column(thresh, pq, pq).unwrap();
        let uniform = TerminationProfile::uniform(pq).unwrap();
        prop_assert_eq!(ccm_click_matrix(&mat, &per_column), ccm_click_matrix(&mat, &uniform));
    }

    #[test]
    fn cm_list_probability_grows_with_attraction(p in row(8), k in 0usize..8, bump in 0.0..=1.0f64) {
        let k = k % p.len();
        let mut q = p.clone();
        q[k] = q[k] + (1.0 - q[k]) * bump;
        let before = cm_list_prob(&AttractionVector::new(p).unwrap());
        let after = cm_list_prob(&AttractionVector::new(q).unwrap());
        prop_assert!(after >= before - 1e-15);
    }

    #[test]
    fn more_termination_never_adds_clicks(p in row(8), a in prob(), b in prob()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let v = AttractionVector::new(p).unwrap();
        let low = tcm_list_prob(&v, &TerminationProfile::uniform(lo).unwrap());
        let high = tcm_list_prob(&v, &TerminationProfile::uniform(hi).unwrap());
        prop_assert!(high <= low + 1e-15);
    }

    #[test]
    fn carousels_dominate_flat_lists_at_uniform_attraction(
        m in 1usize..6, k in 1usize..6, p in prob(), pq in prob()
    ) {
        let mat = AttractionMatrix::new(vec![vec![p; k]; m]).unwrap();
        let term = TerminationProfile::uniform(pq).unwrap();
        let flat = tcm_list_prob(&flatten_row_major(&mat).rows()[0], &term);
        let ccm = ccm_list_prob(&mat, &term);
        prop_assert!(flat <= ccm + 1e-15);
        let approx = compare_tcm_ccm_uniform(p, m, k, pq).unwrap();
        prop_assert!(approx.tcm_approx <= approx.ccm_approx + 1e-15);
        if m == 1 || pq == 0.0 {
            prop_assert!((flat - ccm).abs() < 1e-15);
            prop_assert!((approx.tcm_approx - approx.ccm_approx).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_a_distribution_preserving_order(x in prop::collection::vec(-50.0..50.0f64, 1..40)) {
        let s = softmax(&x);
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(s.iter().all(|&v| v > 0.0 && v <= 1.0));
        for i in 0..x.len() {
            for j in 0..x.len() {
                if x[i] < x[j] {
                    prop_assert!(s[i] <= s[j]);
                }
            }
        }
    }

    #[test]
    fn total_variation_is_a_metric(
        rows in prop::collection::vec(prop::collection::vec((0.0..=0.1f64, 0.0..=0.1f64, 0.0..=0.1f64), 3), 1..4)
    ) {
        let pick = |f: fn(&(f64, f64, f64)) -> f64| {
            ClickProbMatrix::new(rows.iter().map(|r| r.iter().map(f).collect()).collect()).unwrap()
        };
        let (a, b, c) = (pick(|t| t.0), pick(|t| t.1), pick(|t| t.2));
        let ab = total_variation(&a, &b).unwrap();
        prop_assert_eq!(total_variation(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab, total_variation(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert!(ab <= total_variation(&a, &c).unwrap() + total_variation(&c, &b).unwrap() + 1e-15);
    }

    #[test]
    fn tcm_list_is_the_sorted_prefix(attr in prop::collection::vec(prob(), 1..30), k in 1usize..30) {
        let k = 1 + (k - 1) % attr.len();
        let topics = vec![0; attr.len()];
        let list = tcm_optimal_list(&items(&attr, &topics), k).unwrap();
        let got = list.rows()[0].probs().to_vec();
        let mut want = attr.clone();
        want.sort_by(|a, b| b.total_cmp(a));
        want.truncate(k);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn carousel_layout_invariants(
        pairs in prop::collection::vec((prob(), 0u32..6), 1..40),
        max_rows in prop::option::of(1usize..6),
        per_row in prop::option::of(1usize..6),
    ) {
        let (attr, topics): (Vec<f64>, Vec<u32>) = pairs.into_iter().unzip();
        let spec = LayoutSpec { max_rows, items_per_row: per_row, item_pool: ItemPool::All };
        let layout = ccm_optimal_layout(&items(&attr, &topics), &spec).unwrap();
        let mat = &layout.matrix;
        if let Some(m) = max_rows {
            prop_assert!(mat.n_rows() <= m);
        }
        let mut seen_topics = layout.topics.clone();
        seen_topics.sort_unstable();
        seen_topics.dedup();
        prop_assert_eq!(seen_topics.len(), layout.topics.len());

        let mut totals = Vec::new();
        for ((r, ids), topic) in mat.rows().iter().zip(mat.item_ids()).zip(&layout.topics) {
            let p = r.probs();
            if let Some(k) = per_row {
                prop_assert!(p.len() <= k);
            }
            prop_assert!(p.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(ids.iter().all(|id| topics[id.0 as usize] == topic.0));
            prop_assert!(ids.iter().zip(p).all(|(id, &a)| attr[id.0 as usize] == a));
            totals.push(p.iter().sum::<f64>());
        }
        prop_assert!(totals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn tcm_ranking_ignores_termination(attr in prop::collection::vec(prob(), 2..25), a in prob(), b in prob()) {
        let topics = vec![0; attr.len()];
        let list = tcm_optimal_list(&items(&attr, &topics), attr.len()).unwrap();
        let sorted = &list.rows()[0];
        // Sorting descending is optimal under any termination probability, so
        // no adjacent swap improves the list.
        for pq in [a, b] {
            let term = TerminationProfile::uniform(pq).unwrap();
            let best = tcm_list_prob(sorted, &term);
            for k in 0..attr.len() - 1 {
                let mut p = sorted.probs().to_vec();
                p.swap(k, k + 1);
                prop_assert!(tcm_list_prob(&AttractionVector::new(p).unwrap(), &term) <= best + 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_is_reproducible_and_sane(mat in matrix(3, 3), term in profile(), seed in any::<u64>()) {
        let a = empirical_click_matrix(&mat, &term, ClickModel::Ccm, 2_000, seed).unwrap();
        let b = empirical_click_matrix(&mat, &term, ClickModel::Ccm, 2_000, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.sessions(), 2_000);
        prop_assert!(a.total_clicks() <= 2_000);
        let exact = ccm_click_matrix(&mat, &term);
        for (counts, probs) in a.counts().iter().zip(exact.rows()) {
            for (&c, &p) in counts.iter().zip(probs) {
                if p == 0.0 {
                    prop_assert_eq!(c, 0);
                }
                if p == 1.0 {
                    prop_assert_eq!(c, 2_000);
                }
            }
        }
    }
}
