use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cclab::dataio::{load_movielens, quintile_groups, split_half, write_movies, write_ratings, UserGroup};
use cclab::experiments::{run_to_dir, Config, Context, Experiment};
use cclab::fitting::{empirical_frequencies, grid_fit, FitModel};
use cclab::gridio::{read_grid, read_layout, write_grid, write_layout_cells, LayoutCell};
use cclab::layout::{ccm_optimal_layout, select_item_pool, tcm_optimal_list, ItemPool, ScoredItem, TopicId};
use cclab::models::{ClickModel, ClickProbMatrix, ItemId, TerminationProfile};
use cclab::recsys::{softmax_attractions, train_mf};
use cclab::simulate::empirical_click_matrix;
use cclab::Error;

#[derive(Parser)]
#[command(name = "cclab", version, about = "Click models for ranked lists and carousels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a MovieLens ratings/movies pair and print a summary.
    Load {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        movies: PathBuf,
        /// Also write the canonical re-serialization into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-fit a parametric click surface to a click-probability grid.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: FitModelArg,
        #[arg(long, default_value_t = 0.01)]
        resolution: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate sessions on a layout and write per-position click frequencies.
    Simulate {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        model: ClickModelArg,
        #[arg(long, default_value_t = 0.01)]
        pq: f64,
        /// With --far: termination `pq` for the first `thresh` columns, `far` after.
        #[arg(long, requires = "far")]
        thresh: Option<usize>,
        #[arg(long, requires = "thresh")]
        far: Option<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        sessions: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build one user's recommended layout from the training half.
    Layout {
        #[arg(long, default_value = "all")]
        pool: PoolArg,
        #[arg(long, default_value = "ccm")]
        model: LayoutModelArg,
        /// Experiment config naming the dataset, seeds and MF settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Raw user id; defaults to the first user.
        #[arg(long)]
        user: Option<u64>,
        /// Split seed; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment pipeline and write its report.
    Experiment {
        name: ExperimentArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FitModelArg {
    Tcm,
    Ccm,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClickModelArg {
    Cm,
    Tcm,
    Ccm,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutModelArg {
    Tcm,
    Ccm,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolArg {
    Top100,
    Top1000,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Generalization,
    Personalization,
    Comparison,
    Realistic,
    Heatmaps,
    FitSynthetic,
}

impl From<PoolArg> for ItemPool {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::Top100 => ItemPool::Top100,
            PoolArg::Top1000 => ItemPool::Top1000,
            PoolArg::All => ItemPool::All,
        }
    }
}

impl From<ExperimentArg> for Experiment {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::Generalization => Experiment::Generalization,
            ExperimentArg::Personalization => Experiment::Personalization,
            ExperimentArg::Comparison => Experiment::Comparison,
            ExperimentArg::Realistic => Experiment::Realistic,
            ExperimentArg::Heatmaps => Experiment::Heatmaps,
            ExperimentArg::FitSynthetic => Experiment::FitSynthetic,
        }
    }
}

fn create(path: &Path) -> cclab::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn load_config(path: Option<&Path>) -> cclab::Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

fn cmd_load(ratings: &Path, movies: &Path, out: Option<&Path>) -> cclab::Result<()> {
    let (data, records) = load_movielens(ratings, movies)?;
    let topics = cclab::dataio::assign_primary_genre(&records, &data)?;
    let groups = quintile_groups(&data)?;
    let summary = serde_json::json!({
        "ratings": data.len(),
        "users": data.n_users(),
        "rated_items": data.n_items(),
        "movies": records.len(),
        "topics": topics.used_topics(),
        "mean_rating": data.mean_rating(),
        "group_sizes": UserGroup::ALL
            .iter()
            .zip(groups.sizes())
            .map(|(g, n)| (g.label().to_string(), serde_json::Value::from(n)))
            .collect::<serde_json::Map<_, _>>(),
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_ratings(create(&dir.join("ratings.csv"))?, &data)?;
        write_movies(create(&dir.join("movies.csv"))?, &records)?;
    }
    Ok(())
}

fn cmd_fit(input: &Path, model: FitModelArg, resolution: f64, out: &Path) -> cclab::Result<()> {
    let rows = read_grid(File::open(input)?, &input.display().to_string())?;
    let target = ClickProbMatrix::new(rows)?;
    let model = match model {
        FitModelArg::Tcm => FitModel::Tcm,
        FitModelArg::Ccm => FitModel::Ccm,
    };
    let fit = grid_fit(&target, model, resolution)?;
    let json = serde_json::json!({
        "model": model.name(),
        "p0": fit.params.p0,
        "gamma": fit.params.gamma,
        "pq": fit.params.pq,
        "delta": fit.delta,
        "resolution": fit.grid_resolution,
    });
    let mut w = create(out)?;
    writeln!(w, "{}", serde_json::to_string_pretty(&json).expect("fit serializes"))?;
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    layout: &Path,
    model: ClickModelArg,
    pq: f64,
    thresh: Option<usize>,
    far: Option<f64>,
    sessions: u64,
    seed: u64,
    out: &Path,
) -> cclab::Result<()> {
    let mat = read_layout(File::open(layout)?, &layout.display().to_string())?;
    let term = match (thresh, far) {
        (Some(t), Some(f)) => TerminationProfile::per_column(t, pq, f)?,
        _ => TerminationProfile::uniform(pq)?,
    };
    let model = match model {
        ClickModelArg::Cm => ClickModel::Cm,
        ClickModelArg::Tcm => ClickModel::Tcm,
        ClickModelArg::Ccm => ClickModel::Ccm,
    };
    let clicks = empirical_click_matrix(&mat, &term, model, sessions, seed)?;
    let freq = empirical_frequencies(&clicks)?;
    write_grid(create(out)?, freq.rows())
}

fn cmd_layout(
    pool: ItemPool,
    model: LayoutModelArg,
    config: Option<&Path>,
    user: Option<u64>,
    seed: Option<u64>,
    out: &Path,
) -> cclab::Result<()> {
    let config = load_config(config)?;
    let ctx = Context::load(&config)?;
    let u = match user {
        Some(raw) => ctx
            .data
            .user_index(raw)
            .ok_or_else(|| Error::Validation(format!("user {raw} has no ratings")))?,
        None => 0,
    };
    let seed = seed.unwrap_or(config.seeds[0]);
    let split = split_half(&ctx.data, seed)?;
    let (model_fit, _) = train_mf(&split.train, &config.mf_hyper(seed))?;
    let attraction = softmax_attractions(&model_fit);
    let attraction = attraction.user(u);
    let items: Vec<ScoredItem> = select_item_pool(&split.train, pool)?
        .into_iter()
        .map(|a| ScoredItem {
            item_id: ItemId(a),
            topic_id: TopicId(ctx.topics.item_topic[a as usize]),
            attraction: attraction[a as usize],
        })
        .collect();
    let (matrix, topics) = match model {
        LayoutModelArg::Ccm => {
            let layout = ccm_optimal_layout(&items, &config.layout_spec())?;
            (layout.matrix, Some(layout.topics))
        }
        LayoutModelArg::Tcm => (tcm_optimal_list(&items, items.len())?, None),
    };
    let mut cells = Vec::with_capacity(matrix.n_items());
    for (i, (row, ids)) in matrix.rows().iter().zip(matrix.item_ids()).enumerate() {
        for (j, (&p, id)) in row.probs().iter().zip(ids).enumerate() {
            let topic = match &topics {
                Some(t) => ctx.topics.topics[t[i].0 as usize].clone(),
                None => ctx.topics.topics[ctx.topics.item_topic[id.0 as usize] as usize].clone(),
            };
            cells.push(LayoutCell {
                row: i,
                col: j,
                topic,
                item_id: ctx.data.item_id(id.0),
                attraction: p,
            });
        }
    }
    write_layout_cells(create(out)?, &cells)
}

fn cmd_experiment(name: Experiment, config: Option<&Path>, out: &Path) -> cclab::Result<()> {
    let config = load_config(config)?;
    for path in run_to_dir(name, &config, out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> cclab::Result<()> {
    match cli.command {
        Command::Load { ratings, movies, out } => cmd_load(&ratings, &movies, out.as_deref()),
        Command::Fit {
            input,
            model,
            resolution,
            out,
        } => cmd_fit(&input, model, resolution, &out),
        Command::Simulate {
            layout,
            model,
            pq,
            thresh,
            far,
            sessions,
            seed,
            out,
        } => cmd_simulate(&layout, model, pq, thresh, far, sessions, seed, &out),
        Command::Layout {
            pool,
            model,
            config,
            user,
            seed,
            out,
        } => cmd_layout(pool.into(), model, config.as_deref(), user, seed, &out),
        Command::Experiment { name, config, out } => cmd_experiment(name.into(), config.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
