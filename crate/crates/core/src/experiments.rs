//! End-to-end experiment pipelines over a ratings dataset: generalization
//! of carousel layouts, personalization baselines, click-model comparison,
//! log-probability heatmaps and synthetic fit recovery.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    assign_primary_genre, load_movielens, quintile_groups, split_half, RatingsDataset, TopicAssignment, UserGroup,
    UserGroups,
};
use crate::error::{Error, Result};
use crate::fitting::{
    ccm_surface_layout, empirical_frequencies, grid_fit, mu_ccm, mu_tcm, tcm_surface_layout, FitModel, FitResult,
    ParamTriple,
};
use crate::layout::{
    ccm_optimal_layout, flatten_row_major, select_item_pool, tcm_optimal_list, ItemPool, LayoutSpec, ScoredItem,
    TopicId,
};
use crate::models::{
    ccm_click_matrix, ccm_list_prob, tcm_click_vector, tcm_list_prob, AttractionMatrix, ClickModel, ClickProbMatrix,
    ItemId, TerminationProfile,
};
use crate::recsys::{
    popular_ratings, random_ratings, softmax, train_mf, AttractionTable, FactorModel, MfHyper,
};
use crate::simulate::empirical_click_matrix;
use crate::surrogate::{generate, SurrogateSpec};

/// Side length of the heatmap grids.
pub const HEATMAP_SIZE: usize = 10;

/// Experiment settings, read from a flat TOML file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// One split, and one pair of factor models, per seed.
    pub seeds: Vec<u64>,
    /// MovieLens `ratings.csv`; together with `movies`. Without them a
    /// synthetic dataset is generated from `surrogate_seed`.
    pub ratings: Option<PathBuf>,
    pub movies: Option<PathBuf>,
    pub surrogate_seed: u64,
    pub pool: ItemPool,
    pub max_rows: Option<usize>,
    pub items_per_row: Option<usize>,
    /// Uniform termination probability.
    pub pq: f64,
    /// Position-dependent termination: `near_pq` for the first
    /// `near_columns` columns, `far_pq` after.
    pub near_pq: f64,
    pub far_pq: f64,
    pub near_columns: usize,
    pub mf_d: usize,
    pub mf_epochs: usize,
    pub mf_learning_rate: f64,
    pub mf_regularization: f64,
    pub mf_init_scale: f64,
    pub fit_sessions: u64,
    pub fit_resolution: f64,
    pub fit_seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        let mf = MfHyper::default();
        Self {
            seeds: vec![1, 2, 3],
            ratings: None,
            movies: None,
            surrogate_seed: 0,
            pool: ItemPool::All,
            max_rows: None,
            items_per_row: None,
            pq: 0.01,
            near_pq: 0.01,
            far_pq: 0.1,
            near_columns: 10,
            mf_d: mf.d,
            mf_epochs: mf.epochs,
            mf_learning_rate: mf.learning_rate,
            mf_regularization: mf.regularization,
            mf_init_scale: mf.init_scale,
            fit_sessions: 1_000_000,
            fit_resolution: 0.01,
            fit_seed: 7,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        if self.ratings.is_some() != self.movies.is_some() {
            return Err(Error::Config("`ratings` and `movies` must be given together".into()));
        }
        self.uniform()?;
        self.per_column()?;
        self.layout_spec().validate()?;
        if self.mf_d == 0 {
            return Err(Error::Config("`mf_d` must be at least 1".into()));
        }
        if self.fit_sessions == 0 {
            return Err(Error::Config("`fit_sessions` must be at least 1".into()));
        }
        crate::fitting::grid_points(self.fit_resolution)?;
        Ok(())
    }

    pub fn uniform(&self) -> Result<TerminationProfile> {
        TerminationProfile::uniform(self.pq)
    }

    pub fn per_column(&self) -> Result<TerminationProfile> {
        TerminationProfile::per_column(self.near_columns, self.near_pq, self.far_pq)
    }

    pub fn layout_spec(&self) -> LayoutSpec {
        LayoutSpec {
            max_rows: self.max_rows,
            items_per_row: self.items_per_row,
            item_pool: self.pool,
        }
    }

    pub fn mf_hyper(&self, seed: u64) -> MfHyper {
        MfHyper {
            d: self.mf_d,
            epochs: self.mf_epochs,
            learning_rate: self.mf_learning_rate,
            regularization: self.mf_regularization,
            init_scale: self.mf_init_scale,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    Generalization,
    Personalization,
    Comparison,
    Realistic,
    Heatmaps,
    FitSynthetic,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Generalization,
        Experiment::Personalization,
        Experiment::Comparison,
        Experiment::Realistic,
        Experiment::Heatmaps,
        Experiment::FitSynthetic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Generalization => "generalization",
            Experiment::Personalization => "personalization",
            Experiment::Comparison => "comparison",
            Experiment::Realistic => "realistic",
            Experiment::Heatmaps => "heatmaps",
            Experiment::FitSynthetic => "fit-synthetic",
        }
    }

    /// Whether the experiment reads the ratings dataset.
    pub fn needs_data(self) -> bool {
        self != Experiment::FitSynthetic
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown experiment `{s}`")))
    }
}

/// The ratings, topics and user groups shared by every seed.
#[derive(Debug, Clone)]
pub struct Context {
    pub source: String,
    pub data: RatingsDataset,
    pub topics: TopicAssignment,
    pub groups: UserGroups,
}

impl Context {
    pub fn load(config: &Config) -> Result<Self> {
        let (source, data, movies) = match (&config.ratings, &config.movies) {
            (Some(r), Some(m)) => {
                let (data, movies) = load_movielens(r, m)?;
                ("movielens".to_string(), data, movies)
            }
            _ => {
                let spec = SurrogateSpec {
                    seed: config.surrogate_seed,
                    ..SurrogateSpec::default()
                };
                let generated = generate(&spec)?;
                let data = generated.dataset()?;
                ("surrogate".to_string(), data, generated.movies)
            }
        };
        let topics = assign_primary_genre(&movies, &data)?;
        let groups = quintile_groups(&data)?;
        Ok(Self {
            source,
            data,
            topics,
            groups,
        })
    }

    fn topic(&self, item: u32) -> TopicId {
        TopicId(self.topics.item_topic[item as usize])
    }

    fn scored(&self, items: &[u32], attraction: &[f64]) -> Vec<ScoredItem> {
        items
            .iter()
            .map(|&a| ScoredItem {
                item_id: ItemId(a),
                topic_id: self.topic(a),
                attraction: attraction[a as usize],
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MfSummary {
    pub seed: u64,
    pub train_rmse: f64,
    pub test_rmse: f64,
    /// Mean and standard deviation of the training model's predictions over
    /// every (user, item) pair.
    pub prediction_mean: f64,
    pub prediction_std: f64,
}

/// Factor models and attraction tables for one split.
pub struct SeedRun {
    pub seed: u64,
    pub train: RatingsDataset,
    pub train_model: FactorModel,
    pub train_attraction: AttractionTable,
    pub test_attraction: AttractionTable,
    pub mf: MfSummary,
}

impl SeedRun {
    pub fn prepare(ctx: &Context, config: &Config, seed: u64) -> Result<Self> {
        let split = split_half(&ctx.data, seed)?;
        let (train_model, train_report) = train_mf(&split.train, &config.mf_hyper(seed))?;
        let (test_model, test_report) = train_mf(&split.test, &config.mf_hyper(seed.wrapping_add(1)))?;
        let (prediction_mean, prediction_std) = train_model.prediction_stats();
        Ok(Self {
            seed,
            train_attraction: crate::recsys::softmax_attractions(&train_model),
            test_attraction: crate::recsys::softmax_attractions(&test_model),
            mf: MfSummary {
                seed,
                train_rmse: train_report.final_rmse(),
                test_rmse: test_report.final_rmse(),
                prediction_mean,
                prediction_std,
            },
            train: split.train,
            train_model,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyResult {
    pub name: String,
    /// Average click probability over all users, then over seeds.
    pub overall: f64,
    /// Same, per user group in [`UserGroup::ALL`] order.
    pub groups: Vec<f64>,
    pub per_seed: Vec<f64>,
}

/// `(base - variant) / base`, in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativeDrop {
    pub base: String,
    pub variant: String,
    pub overall_percent: f64,
    pub groups_percent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Section {
    pub name: String,
    pub pool: ItemPool,
    pub termination: TerminationProfile,
    /// Termination for single-list policies, when it differs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub list_termination: Option<TerminationProfile>,
    pub policies: Vec<PolicyResult>,
    pub drops: Vec<RelativeDrop>,
}

impl Section {
    pub fn policy(&self, name: &str) -> Option<&PolicyResult> {
        self.policies.iter().find(|p| p.name == name)
    }

    pub fn drop_of(&self, variant: &str) -> Option<&RelativeDrop> {
        self.drops.iter().find(|d| d.variant == variant)
    }
}

/// Average log click probabilities for the top-left corner of a layout.
/// `None` marks cells that no user's layout reaches.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapDump {
    pub model: String,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl HeatmapDump {
    /// Comma-separated rows, `NA` for structurally empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.cells {
            let line: Vec<String> = row
                .iter()
                .map(|c| c.map_or_else(|| "NA".to_string(), |v| v.to_string()))
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitCase {
    pub generator: FitModel,
    pub params: ParamTriple,
    /// `exact` or `simulated`.
    pub target: String,
    pub sessions: Option<u64>,
    pub shape: (usize, usize),
    pub tcm: FitResult,
    pub ccm: FitResult,
}

impl FitCase {
    pub fn fit_of(&self, model: FitModel) -> &FitResult {
        match model {
            FitModel::Tcm => &self.tcm,
            FitModel::Ccm => &self.ccm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub data_source: Option<String>,
    pub config: Config,
    pub n_users: Option<usize>,
    pub n_items: Option<usize>,
    pub n_topics: Option<usize>,
    pub group_labels: Vec<String>,
    pub group_sizes: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub mf: Vec<MfSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sections: Vec<Section>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub heatmaps: Vec<HeatmapDump>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fits: Vec<FitCase>,
}

impl ExperimentReport {
    fn new(experiment: Experiment, config: &Config, ctx: Option<&Context>) -> Self {
        Self {
            experiment: experiment.name().to_string(),
            data_source: ctx.map(|c| c.source.clone()),
            config: config.clone(),
            n_users: ctx.map(|c| c.data.n_users()),
            n_items: ctx.map(|c| c.data.n_items()),
            n_topics: ctx.map(|c| c.topics.used_topics()),
            group_labels: if ctx.is_some() {
                UserGroup::ALL.iter().map(|g| g.label().to_string()).collect()
            } else {
                Vec::new()
            },
            group_sizes: ctx.map(|c| c.groups.sizes().to_vec()).unwrap_or_default(),
            mf: Vec::new(),
            sections: Vec::new(),
            heatmaps: Vec::new(),
            fits: Vec::new(),
        }
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}

/// Overall and per-group means of one policy's per-user values.
fn group_means(values: &[f64], groups: &UserGroups) -> (f64, Vec<f64>) {
    let mut sums = [0.0; 5];
    let mut counts = [0usize; 5];
    for (u, v) in values.iter().enumerate() {
        let g = groups.group(u as u32).index();
        sums[g] += v;
        counts[g] += 1;
    }
    let overall = values.iter().sum::<f64>() / values.len() as f64;
    let per_group = sums
        .iter()
        .zip(counts)
        .map(|(s, c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    (overall, per_group)
}

fn percent_drop(base: f64, variant: f64) -> f64 {
    (base - variant) / base * 100.0
}

/// Collects per-seed, per-user values for named policies into a section.
struct SectionBuilder {
    names: Vec<&'static str>,
    /// `[policy][seed] -> (overall, groups)`
    results: Vec<Vec<(f64, Vec<f64>)>>,
}

impl SectionBuilder {
    fn new(names: &[&'static str]) -> Self {
        Self {
            names: names.to_vec(),
            results: vec![Vec::new(); names.len()],
        }
    }

    /// `per_user[u][policy]`
    fn add_seed(&mut self, per_user: &[Vec<f64>], groups: &UserGroups) {
        for p in 0..self.names.len() {
            let values: Vec<f64> = per_user.iter().map(|row| row[p]).collect();
            self.results[p].push(group_means(&values, groups));
        }
    }

    fn finish(self, name: &str, pool: ItemPool, termination: TerminationProfile) -> Section {
        self.finish_with(name, pool, termination, None)
    }

    fn finish_with(
        self,
        name: &str,
        pool: ItemPool,
        termination: TerminationProfile,
        list_termination: Option<TerminationProfile>,
    ) -> Section {
        let policies: Vec<PolicyResult> = self
            .names
            .iter()
            .zip(&self.results)
            .map(|(name, seeds)| {
                let n = seeds.len() as f64;
                let mut groups = vec![0.0; 5];
                for (_, g) in seeds {
                    for (acc, v) in groups.iter_mut().zip(g) {
                        *acc += v;
                    }
                }
                PolicyResult {
                    name: name.to_string(),
                    overall: seeds.iter().map(|s| s.0).sum::<f64>() / n,
                    groups: groups.into_iter().map(|g| g / n).collect(),
                    per_seed: seeds.iter().map(|s| s.0).collect(),
                }
            })
            .collect();
        let base = &policies[0];
        let drops = policies[1..]
            .iter()
            .map(|v| RelativeDrop {
                base: base.name.clone(),
                variant: v.name.clone(),
                overall_percent: percent_drop(base.overall, v.overall),
                groups_percent: base.groups.iter().zip(&v.groups).map(|(b, x)| percent_drop(*b, *x)).collect(),
            })
            .collect();
        Section {
            name: name.to_string(),
            pool,
            termination,
            list_termination,
            policies,
            drops,
        }
    }
}

fn per_user<F>(n_users: usize, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(u32) -> Result<Vec<f64>> + Sync + Send,
{
    (0..n_users as u32).into_par_iter().map(f).collect()
}

fn ccm_value(layout: &AttractionMatrix, attraction: &[f64], term: &TerminationProfile) -> Result<f64> {
    Ok(ccm_list_prob(&layout.reprice(|id| attraction[id.0 as usize])?, term))
}

fn tcm_value(list: &AttractionMatrix, attraction: &[f64], term: &TerminationProfile) -> Result<f64> {
    let repriced = list.reprice(|id| attraction[id.0 as usize])?;
    Ok(tcm_list_prob(&repriced.rows()[0], term))
}

fn prepare_all(ctx: &Context, config: &Config) -> Result<Vec<SeedRun>> {
    config.seeds.iter().map(|&s| SeedRun::prepare(ctx, config, s)).collect()
}

/// Carousel layouts chosen on training attractions against layouts chosen
/// on test attractions, both scored on test attractions.
pub fn exp_generalization(ctx: &Context, config: &Config) -> Result<ExperimentReport> {
    config.validate()?;
    let term = config.uniform()?;
    let spec = config.layout_spec();
    let mut report = ExperimentReport::new(Experiment::Generalization, config, Some(ctx));
    let mut builder = SectionBuilder::new(&["test_optimal", "train_optimal"]);
    for run in prepare_all(ctx, config)? {
        let pool = select_item_pool(&run.train, config.pool)?;
        let values = per_user(ctx.data.n_users(), |u| {
            let test = run.test_attraction.user(u);
            let from_train = ccm_optimal_layout(&ctx.scored(&pool, run.train_attraction.user(u)), &spec)?;
            let from_test = ccm_optimal_layout(&ctx.scored(&pool, test), &spec)?;
            Ok(vec![
                ccm_value(&from_test.matrix, test, &term)?,
                ccm_value(&from_train.matrix, test, &term)?,
            ])
        })?;
        builder.add_seed(&values, &ctx.groups);
        report.mf.push(run.mf);
    }
    report.sections.push(builder.finish("generalization", config.pool, term));
    Ok(report)
}

/// Personalized layouts against layouts built from item-mean and random
/// ratings, all scored on each user's test attractions.
pub fn exp_personalization(ctx: &Context, config: &Config) -> Result<ExperimentReport> {
    config.validate()?;
    let term = config.uniform()?;
    let spec = config.layout_spec();
    let mut report = ExperimentReport::new(Experiment::Personalization, config, Some(ctx));
    let mut builder = SectionBuilder::new(&["personalized", "popular", "random"]);
    for run in prepare_all(ctx, config)? {
        let pool = select_item_pool(&run.train, config.pool)?;
        let popular = softmax(&popular_ratings(&run.train_model));
        let random = softmax(&random_ratings(ctx.data.n_items(), run.seed)?);
        let popular_layout = ccm_optimal_layout(&ctx.scored(&pool, &popular), &spec)?.matrix;
        let random_layout = ccm_optimal_layout(&ctx.scored(&pool, &random), &spec)?.matrix;
        let values = per_user(ctx.data.n_users(), |u| {
            let test = run.test_attraction.user(u);
            let personal = ccm_optimal_layout(&ctx.scored(&pool, run.train_attraction.user(u)), &spec)?;
            Ok(vec![
                ccm_value(&personal.matrix, test, &term)?,
                ccm_value(&popular_layout, test, &term)?,
                ccm_value(&random_layout, test, &term)?,
            ])
        })?;
        builder.add_seed(&values, &ctx.groups);
        report.mf.push(run.mf);
    }
    report.sections.push(builder.finish("personalization", config.pool, term));
    Ok(report)
}

fn model_comparison(
    ctx: &Context,
    config: &Config,
    experiment: Experiment,
    term: TerminationProfile,
    list_term: TerminationProfile,
) -> Result<ExperimentReport> {
    config.validate()?;
    let spec = config.layout_spec();
    let mut report = ExperimentReport::new(experiment, config, Some(ctx));
    let mut builders: Vec<SectionBuilder> = ItemPool::ALL
        .iter()
        .map(|_| SectionBuilder::new(&["ccm", "tcm", "ccm_nl"]))
        .collect();
    for run in prepare_all(ctx, config)? {
        for (pool_kind, builder) in ItemPool::ALL.into_iter().zip(&mut builders) {
            let pool = select_item_pool(&run.train, pool_kind)?;
            let values = per_user(ctx.data.n_users(), |u| {
                let test = run.test_attraction.user(u);
                let train = ctx.scored(&pool, run.train_attraction.user(u));
                let carousel = ccm_optimal_layout(&train, &spec)?.matrix;
                let list = tcm_optimal_list(&train, pool.len())?;
                Ok(vec![
                    ccm_value(&carousel, test, &term)?,
                    tcm_value(&list, test, &list_term)?,
                    tcm_value(&flatten_row_major(&carousel), test, &list_term)?,
                ])
            })?;
            builder.add_seed(&values, &ctx.groups);
        }
        report.mf.push(run.mf);
    }
    report.sections = ItemPool::ALL
        .into_iter()
        .zip(builders)
        .map(|(pool, b)| b.finish_with(pool.name(), pool, term, (list_term != term).then_some(list_term)))
        .collect();
    Ok(report)
}

/// CCM, TCM and unlabeled CCM under uniform termination, per item pool.
pub fn exp_comparison(ctx: &Context, config: &Config) -> Result<ExperimentReport> {
    let term = config.uniform()?;
    model_comparison(ctx, config, Experiment::Comparison, term, term)
}

/// As [`exp_comparison`], with column-dependent termination inside
/// carousels. Single lists have no hidden columns and keep the near-column
/// probability throughout.
pub fn exp_realistic(ctx: &Context, config: &Config) -> Result<ExperimentReport> {
    let lists = TerminationProfile::uniform(config.near_pq)?;
    model_comparison(ctx, config, Experiment::Realistic, config.per_column()?, lists)
}

/// Adds the first `HEATMAP_SIZE x HEATMAP_SIZE` cells of `clicks` into `acc`.
fn accumulate(acc: &mut [Vec<f64>], reached: &mut [Vec<bool>], clicks: &[Vec<f64>]) {
    for (i, row) in clicks.iter().take(HEATMAP_SIZE).enumerate() {
        for (j, &c) in row.iter().take(HEATMAP_SIZE).enumerate() {
            acc[i][j] += c;
            reached[i][j] = true;
        }
    }
}

/// Average per-position click probabilities of each user's optimal layouts
/// (built and scored on test attractions) over users and seeds, reported as
/// natural logs. CCM and CCM-NL use the carousel grid; TCM's list is wrapped
/// row-major.
pub fn exp_heatmaps(ctx: &Context, config: &Config) -> Result<ExperimentReport> {
    config.validate()?;
    let term = config.uniform()?;
    let spec = config.layout_spec();
    let mut report = ExperimentReport::new(Experiment::Heatmaps, config, Some(ctx));
    let grid = || vec![vec![0.0; HEATMAP_SIZE]; HEATMAP_SIZE];
    let mut sums = [grid(), grid(), grid()];
    let mut reached = [(); 3].map(|_| vec![vec![false; HEATMAP_SIZE]; HEATMAP_SIZE]);
    let mut total_users = 0usize;
    for run in prepare_all(ctx, config)? {
        let pool = select_item_pool(&run.train, config.pool)?;
        let per_user: Vec<[Vec<Vec<f64>>; 3]> = (0..ctx.data.n_users() as u32)
            .into_par_iter()
            .map(|u| -> Result<_> {
                let scored = ctx.scored(&pool, run.test_attraction.user(u));
                let carousel = ccm_optimal_layout(&scored, &spec)?.matrix;
                let ccm = ccm_click_matrix(&carousel, &term).into_rows();
                let flat = tcm_click_vector(&flatten_row_major(&carousel).rows()[0], &term);
                let mut nl = Vec::new();
                let mut offset = 0;
                for len in carousel.row_lengths() {
                    nl.push(flat[offset..offset + len].to_vec());
                    offset += len;
                }
                let k = pool.len().min(HEATMAP_SIZE * HEATMAP_SIZE);
                let list = tcm_optimal_list(&scored, k)?;
                let tcm = tcm_click_vector(&list.rows()[0], &term)
                    .chunks(HEATMAP_SIZE)
                    .map(<[f64]>::to_vec)
                    .collect();
                Ok([ccm, nl, tcm])
            })
            .collect::<Result<_>>()?;
        for maps in &per_user {
            for (k, clicks) in maps.iter().enumerate() {
                accumulate(&mut sums[k], &mut reached[k], clicks);
            }
        }
        total_users += per_user.len();
        report.mf.push(run.mf);
    }
    for (k, label) in ["ccm", "ccm_nl", "tcm"].into_iter().enumerate() {
        let cells = sums[k]
            .iter()
            .zip(&reached[k])
            .map(|(row, seen)| {
                row.iter()
                    .zip(seen)
                    .map(|(&s, &r)| {
                        let mean = s / total_users as f64;
                        (r && mean > 0.0).then(|| mean.ln())
                    })
                    .collect()
            })
            .collect();
        report.heatmaps.push(HeatmapDump {
            model: label.to_string(),
            cells,
        });
    }
    Ok(report)
}

/// Generating parameters for the synthetic fit experiment.
pub const FIT_SHAPE: (usize, usize) = (5, 4);
pub const FIT_TCM_PARAMS: (f64, f64, f64) = (0.17, 0.92, 0.02);
pub const FIT_CCM_PARAMS: (f64, f64, f64) = (0.11, 0.84, 0.01);

/// Reshapes a single-row click matrix into rows of `k`.
fn wrap(clicks: ClickProbMatrix, k: usize) -> Result<ClickProbMatrix> {
    let values: Vec<f64> = clicks.values().collect();
    ClickProbMatrix::new(values.chunks(k).map(<[f64]>::to_vec).collect())
}

fn fit_both(target: &ClickProbMatrix, resolution: f64) -> Result<(FitResult, FitResult)> {
    Ok((
        grid_fit(target, FitModel::Tcm, resolution)?,
        grid_fit(target, FitModel::Ccm, resolution)?,
    ))
}

/// Fits both parametric surfaces to targets generated by each model, from
/// the exact surface and from simulated sessions.
pub fn exp_fit_synthetic(config: &Config) -> Result<ExperimentReport> {
    config.validate()?;
    let mut report = ExperimentReport::new(Experiment::FitSynthetic, config, None);
    let (m, k) = FIT_SHAPE;
    for (generator, (p0, gamma, pq)) in [(FitModel::Tcm, FIT_TCM_PARAMS), (FitModel::Ccm, FIT_CCM_PARAMS)] {
        let params = ParamTriple::new(p0, gamma, pq)?;
        let term = TerminationProfile::uniform(pq)?;
        let (exact, simulated) = match generator {
            FitModel::Tcm => {
                let clicks = empirical_click_matrix(
                    &tcm_surface_layout(FIT_SHAPE, p0, gamma)?,
                    &term,
                    ClickModel::Tcm,
                    config.fit_sessions,
                    config.fit_seed,
                )?;
                (mu_tcm(FIT_SHAPE, params)?, wrap(empirical_frequencies(&clicks)?, k)?)
            }
            FitModel::Ccm => {
                let clicks = empirical_click_matrix(
                    &ccm_surface_layout(FIT_SHAPE, p0, gamma)?,
                    &term,
                    ClickModel::Ccm,
                    config.fit_sessions,
                    config.fit_seed,
                )?;
                (mu_ccm(FIT_SHAPE, params)?, empirical_frequencies(&clicks)?)
            }
        };
        debug_assert_eq!(exact.rectangular_shape(), Some((m, k)));
        for (label, target, sessions) in [("exact", exact, None), ("simulated", simulated, Some(config.fit_sessions))] {
            let (tcm, ccm) = fit_both(&target, config.fit_resolution)?;
            report.fits.push(FitCase {
                generator,
                params,
                target: label.to_string(),
                sessions,
                shape: FIT_SHAPE,
                tcm,
                ccm,
            });
        }
    }
    Ok(report)
}

pub fn run(experiment: Experiment, ctx: Option<&Context>, config: &Config) -> Result<ExperimentReport> {
    let need = || ctx.ok_or_else(|| Error::Invalid(format!("experiment `{experiment}` needs a dataset")));
    match experiment {
        Experiment::Generalization => exp_generalization(need()?, config),
        Experiment::Personalization => exp_personalization(need()?, config),
        Experiment::Comparison => exp_comparison(need()?, config),
        Experiment::Realistic => exp_realistic(need()?, config),
        Experiment::Heatmaps => exp_heatmaps(need()?, config),
        Experiment::FitSynthetic => exp_fit_synthetic(config),
    }
}

/// Runs one experiment and writes `<name>.json`, heatmap CSVs where
/// applicable, and the wall-clock time to `<name>.runtime.json` (kept apart
/// so the report itself is reproducible byte for byte).
pub fn run_to_dir(experiment: Experiment, config: &Config, out_dir: &Path) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let start = Instant::now();
    let ctx = if experiment.needs_data() {
        Some(Context::load(config)?)
    } else {
        None
    };
    let report = run(experiment, ctx.as_ref(), config)?;
    let seconds = start.elapsed().as_secs_f64();

    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut write = |name: String, text: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    write(format!("{experiment}.json"), report.to_json())?;
    for dump in &report.heatmaps {
        write(format!("heatmap_{}.csv", dump.model), dump.to_csv())?;
    }
    let runtime = serde_json::json!({ "experiment": experiment.name(), "seconds": seconds });
    write(
        format!("{experiment}.runtime.json"),
        serde_json::to_string_pretty(&runtime).expect("runtime serializes") + "\n",
    )?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::RawRating;

    fn tiny_context() -> Context {
        let spec = SurrogateSpec {
            seed: 3,
            n_users: 40,
            n_movies: 300,
            n_without_genre: 2,
            activity_median: 15.0,
            ..SurrogateSpec::default()
        };
        let generated = generate(&spec).unwrap();
        let data = generated.dataset().unwrap();
        Context {
            source: "surrogate".into(),
            topics: assign_primary_genre(&generated.movies, &data).unwrap(),
            groups: quintile_groups(&data).unwrap(),
            data,
        }
    }

    fn quick_config() -> Config {
        Config {
            seeds: vec![1, 2],
            mf_d: 4,
            mf_epochs: 5,
            fit_sessions: 20_000,
            fit_resolution: 0.05,
            ..Config::default()
        }
    }

    #[test]
    fn config_parsing() {
        let c = Config::from_toml("seeds = [4]\npq = 0.02\npool = \"top100\"\nmf_epochs = 3\n").unwrap();
        assert_eq!(c.seeds, vec![4]);
        assert_eq!(c.pool, ItemPool::Top100);
        assert_eq!(c.pq, 0.02);
        assert_eq!(c.mf_hyper(9).epochs, 3);
        assert_eq!(c.mf_hyper(9).seed, 9);
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
        assert!(matches!(Config::from_toml("colour = 1"), Err(Error::Config(_))));
        assert!(Config::from_toml("seeds = []").is_err());
        assert!(Config::from_toml("pq = 1.5").is_err());
        assert!(Config::from_toml("ratings = \"r.csv\"").is_err());
        assert!(Config::from_toml("pool = \"top7\"").is_err());
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("fig3".parse::<Experiment>().is_err());
    }

    #[test]
    fn group_means_and_drops() {
        let raw: Vec<RawRating> = (1..=5u64)
            .flat_map(|u| {
                (1..=u).map(move |a| RawRating {
                    user_id: u,
                    movie_id: a,
                    rating: 3.0,
                    timestamp: 0,
                })
            })
            .collect();
        let data = RatingsDataset::from_raw(&raw).unwrap();
        let groups = quintile_groups(&data).unwrap();
        let (overall, per_group) = group_means(&[0.1, 0.2, 0.3, 0.4, 0.5], &groups);
        assert!((overall - 0.3).abs() < 1e-15);
        assert_eq!(per_group, vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(percent_drop(0.5, 0.4), (0.5 - 0.4) / 0.5 * 100.0);
    }

    #[test]
    fn generalization_on_tiny_data() {
        let ctx = tiny_context();
        let report = exp_generalization(&ctx, &quick_config()).unwrap();
        let s = report.section("generalization").unwrap();
        let (best, chosen) = (s.policy("test_optimal").unwrap(), s.policy("train_optimal").unwrap());
        assert!(best.overall >= chosen.overall);
        assert!(best.overall > 0.0 && best.overall <= 1.0);
        assert_eq!(best.per_seed.len(), 2);
        assert_eq!(report.mf.len(), 2);
        assert_eq!(s.drops[0].variant, "train_optimal");
    }

    #[test]
    fn reports_are_reproducible() {
        let ctx = tiny_context();
        let config = quick_config();
        for e in [Experiment::Personalization, Experiment::Realistic, Experiment::Heatmaps] {
            let a = run(e, Some(&ctx), &config).unwrap().to_json();
            let b = run(e, Some(&ctx), &config).unwrap().to_json();
            assert_eq!(a, b, "{e}");
        }
    }

    #[test]
    fn comparison_sections_per_pool() {
        let ctx = tiny_context();
        let report = exp_comparison(&ctx, &quick_config()).unwrap();
        let names: Vec<&str> = report.sections.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, vec!["top100", "top1000", "all"]);
        for s in &report.sections {
            for p in &s.policies {
                assert!((0.0..=1.0).contains(&p.overall), "{}", p.overall);
            }
            // The flattened carousel and the sorted list hold the same items;
            // TCM prefers the sorted order.
            assert!(s.policy("tcm").unwrap().overall >= s.policy("ccm_nl").unwrap().overall);
        }
    }

    #[test]
    fn heatmap_dumps() {
        let ctx = tiny_context();
        let report = exp_heatmaps(&ctx, &quick_config()).unwrap();
        assert_eq!(report.heatmaps.len(), 3);
        for dump in &report.heatmaps {
            assert_eq!(dump.cells.len(), HEATMAP_SIZE);
            let csv = dump.to_csv();
            assert_eq!(csv.lines().count(), HEATMAP_SIZE);
            assert!(!csv.contains("inf") && !csv.contains("NaN"));
        }
        let tcm = &report.heatmaps[2].cells;
        let flat: Vec<f64> = tcm.iter().flatten().filter_map(|c| *c).collect();
        assert!(flat.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn heatmap_sentinel_for_short_rows() {
        let dump = HeatmapDump {
            model: "ccm".into(),
            cells: vec![vec![Some(-1.5), None]],
        };
        assert_eq!(dump.to_csv(), "-1.5,NA\n");
    }

    #[test]
    fn missing_data_files_are_io_errors() {
        let config = Config {
            ratings: Some("/nonexistent/ratings.csv".into()),
            movies: Some("/nonexistent/movies.csv".into()),
            ..Config::default()
        };
        assert!(Context::load(&config).unwrap_err().is_io());
    }

    #[test]
    fn fit_synthetic_small() {
        let report = exp_fit_synthetic(&quick_config()).unwrap();
        assert_eq!(report.fits.len(), 4);
        for case in &report.fits {
            let own = case.fit_of(case.generator).delta;
            let other = case.fit_of(match case.generator {
                FitModel::Tcm => FitModel::Ccm,
                FitModel::Ccm => FitModel::Tcm,
            });
            assert!(own <= other.delta);
        }
    }
}
