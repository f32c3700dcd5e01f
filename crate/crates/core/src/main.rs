//! Command-line front end: dataset generation, training, evaluation,
//! ablation sweeps, per-user recommendation, and embedding export.
//!
//! Exit codes are a stable scripting contract: 0 success, 2 usage or
//! input error, 3 numerical failure (training divergence).

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use mmgnn::config::TrainConfig;
use mmgnn::dataset::{generate_synthetic, load_dataset, save_dataset, Dataset, Modality, SyntheticSpec};
use mmgnn::error::{Error, Result};
use mmgnn::eval::{evaluate, metrics_csv, MetricsReport};
use mmgnn::graph::{build_graphs, Graphs};
use mmgnn::model::{forward, load_checkpoint, save_checkpoint, score_all, ForwardState, ModelInputs, ModelParams};
use mmgnn::training::{fit, LossRecord};

#[derive(Parser)]
#[command(name = "mmgnn", version, about = "Multi-modal graph recommender for music")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planted-community dataset directory.
    Generate(GenerateArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Score a checkpoint against a dataset's held-out items.
    Evaluate(EvaluateArgs),
    /// Train and evaluate the full model and its single-component ablations.
    Ablate(AblateArgs),
    /// Print the top-N recommendations for one user.
    Recommend(RecommendArgs),
    /// Dump fused user or item embeddings as TSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(clap::Args)]
struct GenerateArgs {
    /// Output dataset directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 500)]
    songs: usize,
    #[arg(long, default_value_t = 5)]
    groups: usize,
    /// In-group interaction probability.
    #[arg(long, default_value_t = 0.5)]
    p_in: f64,
    /// Out-of-group interaction probability.
    #[arg(long, default_value_t = 0.05)]
    p_out: f64,
    /// In-group friendship probability.
    #[arg(long, default_value_t = 0.3)]
    q_in: f64,
    /// Out-of-group friendship probability.
    #[arg(long, default_value_t = 0.01)]
    q_out: f64,
    /// Feature noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.1)]
    cold_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Lyrics feature dimension.
    #[arg(long, default_value_t = 16)]
    dim_lyr: usize,
    /// Audio-frequency feature dimension.
    #[arg(long, default_value_t = 12)]
    dim_fre: usize,
    /// Visual feature dimension.
    #[arg(long, default_value_t = 10)]
    dim_vis: usize,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// `key = value` training configuration; defaults apply if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path; the loss log lands next to it as `<stem>.loss.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Drop the social-graph channel from user fusion.
    #[arg(long)]
    no_social: bool,
    /// Disable the cross-modal mutual-learning loss.
    #[arg(long)]
    no_mutual: bool,
    /// Disable the emotion-affinity score bonus.
    #[arg(long)]
    no_emotion: bool,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    /// Checkpoint path.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated ranking cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,50")]
    k: Vec<usize>,
    /// Report only the cold-start block.
    #[arg(long)]
    cold_only: bool,
    /// Metrics CSV path.
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct AblateArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// `key = value` training configuration; defaults apply if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for `ablation.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds; every variant trains once per seed.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Comma-separated ranking cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,50")]
    k: Vec<usize>,
}

#[derive(clap::Args)]
struct RecommendArgs {
    /// Checkpoint path.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Raw user id as it appears in the dataset.
    #[arg(long)]
    user: String,
    /// Number of recommendations.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    User,
    Item,
}

#[derive(clap::Args)]
struct ExportArgs {
    /// Checkpoint path.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory (supplies features, graphs, and raw ids).
    #[arg(long)]
    data: PathBuf,
    /// Output TSV path.
    #[arg(long)]
    out: PathBuf,
    /// Which fused embedding table to export.
    #[arg(long, value_enum)]
    which: Which,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::TrainingDiverged(_) => 3,
        _ => 2,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Recommend(args) => cmd_recommend(args),
        Command::ExportEmbeddings(args) => cmd_export_embeddings(args),
    }
}

fn print_warnings(ds: &Dataset) {
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
}

fn load_data(dir: &Path) -> Result<(Dataset, Graphs)> {
    let ds = load_dataset(dir)?;
    print_warnings(&ds);
    let graphs = build_graphs(&ds)?;
    Ok((ds, graphs))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_file(p),
        None => Ok(TrainConfig::default()),
    }
}

/// Forward pass of a loaded checkpoint over a dataset's graphs.
fn state_for(params: &ModelParams, ds: &Dataset, graphs: &Graphs) -> Result<ForwardState> {
    let inputs = ModelInputs {
        bipartite: &graphs.bipartite,
        social: &graphs.social,
        features: &ds.features,
        emotion: ds.emotion.as_ref(),
    };
    forward(params, &inputs)
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut feature_dims = BTreeMap::new();
    feature_dims.insert(Modality::Lyrics, args.dim_lyr);
    feature_dims.insert(Modality::Audio, args.dim_fre);
    feature_dims.insert(Modality::Visual, args.dim_vis);
    let spec = SyntheticSpec {
        n_users: args.users,
        n_songs: args.songs,
        n_groups: args.groups,
        p_in: args.p_in,
        p_out: args.p_out,
        q_in: args.q_in,
        q_out: args.q_out,
        feature_dims,
        noise_sigma: args.noise,
        cold_fraction: args.cold_fraction,
        test_fraction: args.test_fraction,
        seed: args.seed,
    };
    let ds = generate_synthetic(&spec)?;
    print_warnings(&ds);
    save_dataset(&ds, &args.out)?;
    let total = ds.train.len() + ds.test.len();
    println!(
        "wrote {} users, {} songs to {}",
        ds.n_users(),
        ds.n_songs(),
        args.out.display()
    );
    println!(
        "interactions: {} train + {} test = {} total",
        ds.train.len(),
        ds.test.len(),
        total
    );
    println!(
        "social edges: {}; cold songs: {}",
        ds.social_edges.len(),
        ds.cold_songs.len()
    );
    Ok(())
}

fn loss_log_csv(log: &[LossRecord]) -> String {
    let mut out = String::from("epoch,step,loss,bpr,mutual,l2\n");
    for r in log {
        writeln!(out, "{},{},{},{},{},{}", r.epoch, r.step, r.loss, r.bpr, r.mutual, r.l2)
            .expect("writing to a String cannot fail");
    }
    out
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (ds, graphs) = load_data(&args.data)?;
    let mut cfg = load_config(args.config.as_deref())?;
    cfg.no_social |= args.no_social;
    cfg.no_mutual |= args.no_mutual;
    cfg.no_emotion |= args.no_emotion;

    let result = fit(&ds, &graphs, &cfg)?;
    save_checkpoint(&result.params, &args.out)?;
    let log_path = args.out.with_extension("loss.csv");
    fs::write(&log_path, loss_log_csv(&result.log)).map_err(|e| Error::io(&log_path, e))?;

    println!(
        "trained {} epochs ({} steps) on {} users × {} songs",
        cfg.epochs,
        result.log.len(),
        ds.n_users(),
        ds.n_songs()
    );
    if let Some(last) = result.log.last() {
        println!(
            "final loss {:.6} (bpr {:.6}, mutual {:.6}, l2 {:.6})",
            last.loss, last.bpr, last.mutual, last.l2
        );
    }
    println!("checkpoint: {}", args.out.display());
    println!("loss log: {}", log_path.display());
    Ok(())
}

/// Console/CSV rendering that honours `--cold-only` and omits an empty
/// cold block with a note instead of printing zeros.
fn report_output(report: &MetricsReport, cold_only: bool) -> (String, String) {
    let full_csv = metrics_csv(report);
    let csv = if cold_only {
        let mut filtered: Vec<&str> = vec![full_csv.lines().next().unwrap_or_default()];
        filtered.extend(full_csv.lines().filter(|l| l.starts_with("cold,")));
        filtered.join("\n") + "\n"
    } else {
        full_csv
    };

    let mut console = String::new();
    let blocks: Vec<(&str, &mmgnn::eval::BlockMetrics)> = if cold_only {
        vec![("cold", &report.cold)]
    } else {
        vec![("all", &report.all), ("cold", &report.cold)]
    };
    for (name, block) in blocks {
        if block.n_users == 0 {
            writeln!(console, "[{name}] omitted: no users with relevant items")
                .expect("writing to a String cannot fail");
            continue;
        }
        writeln!(console, "[{name}] {} users evaluated, {} skipped", block.n_users, block.n_skipped)
            .expect("writing to a String cannot fail");
        writeln!(console, "  {:>4}  {:>10}  {:>10}  {:>10}", "K", "precision", "recall", "ndcg")
            .expect("writing to a String cannot fail");
        for row in &block.rows {
            writeln!(console, "  {:>4}  {:>10.6}  {:>10.6}  {:>10.6}", row.k, row.precision, row.recall, row.ndcg)
                .expect("writing to a String cannot fail");
        }
    }
    (csv, console)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let (ds, graphs) = load_data(&args.data)?;
    let params = load_checkpoint(&args.model)?;
    let state = state_for(&params, &ds, &graphs)?;
    let report = evaluate(&state, &ds, &args.k, params.lambda_emotion)?;
    let (csv, console) = report_output(&report, args.cold_only);
    fs::write(&args.out, csv).map_err(|e| Error::io(&args.out, e))?;
    print!("{console}");
    println!("metrics: {}", args.out.display());
    Ok(())
}

const VARIANTS: [(&str, [bool; 3]); 4] = [
    ("full", [false, false, false]),
    ("no_social", [true, false, false]),
    ("no_mutual", [false, true, false]),
    ("no_emotion", [false, false, true]),
];

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let (ds, graphs) = load_data(&args.data)?;
    let base = load_config(args.config.as_deref())?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut rows: Vec<(String, usize, Vec<(f64, f64)>)> = Vec::new();
    let mut last_failure: Option<Error> = None;
    for (name, [no_social, no_mutual, no_emotion]) in VARIANTS {
        let mut sums = vec![(0.0, 0.0); args.k.len()];
        let mut ok_seeds = 0usize;
        for &seed in &args.seeds {
            let cfg = TrainConfig { seed, no_social, no_mutual, no_emotion, ..base.clone() };
            let run = fit(&ds, &graphs, &cfg).and_then(|r| {
                let state = state_for(&r.params, &ds, &graphs)?;
                evaluate(&state, &ds, &args.k, r.params.lambda_emotion)
            });
            match run {
                Ok(report) => {
                    ok_seeds += 1;
                    for (i, row) in report.all.rows.iter().enumerate() {
                        sums[i].0 += row.recall;
                        sums[i].1 += row.ndcg;
                    }
                }
                Err(e) => {
                    eprintln!("warning: variant {name} seed {seed} failed: {e}");
                    last_failure = Some(e);
                }
            }
        }
        let means = if ok_seeds > 0 {
            sums.iter().map(|&(r, n)| (r / ok_seeds as f64, n / ok_seeds as f64)).collect()
        } else {
            Vec::new()
        };
        rows.push((name.to_string(), ok_seeds, means));
    }

    let mut csv = String::from("variant,n_seeds");
    for &k in &args.k {
        write!(csv, ",recall@{k},ndcg@{k}").expect("writing to a String cannot fail");
    }
    csv.push('\n');
    println!("{:<12} {:>7}  {}", "variant", "n_seeds",
        args.k.iter().map(|k| format!("{:>10} {:>10}", format!("recall@{k}"), format!("ndcg@{k}")))
            .collect::<Vec<_>>().join("  "));
    for (name, ok_seeds, means) in &rows {
        write!(csv, "{name},{ok_seeds}").expect("writing to a String cannot fail");
        let mut line = format!("{name:<12} {ok_seeds:>7}  ");
        if means.is_empty() {
            for _ in &args.k {
                csv.push_str(",failed,failed");
                line.push_str(&format!("{:>10} {:>10}  ", "failed", "failed"));
            }
        } else {
            for &(r, n) in means {
                write!(csv, ",{r},{n}").expect("writing to a String cannot fail");
                line.push_str(&format!("{r:>10.6} {n:>10.6}  "));
            }
        }
        csv.push('\n');
        println!("{}", line.trim_end());
    }
    let csv_path = args.out.join("ablation.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    println!("ablation table: {}", csv_path.display());

    if rows.iter().all(|(_, ok, _)| *ok == 0) {
        return Err(last_failure
            .unwrap_or_else(|| Error::TrainingDiverged("every ablation variant failed".to_string())));
    }
    Ok(())
}

fn cmd_recommend(args: RecommendArgs) -> Result<()> {
    let (ds, graphs) = load_data(&args.data)?;
    let params = load_checkpoint(&args.model)?;
    let state = state_for(&params, &ds, &graphs)?;
    let u = ds
        .user_index(&args.user)
        .ok_or_else(|| Error::UnknownUser(args.user.clone()))?;
    let exclude: HashSet<usize> = ds.train_by_user()[u].iter().copied().collect();
    for (song, score) in score_all(&state, u, &exclude, params.lambda_emotion)
        .into_iter()
        .take(args.top)
    {
        println!("{}\t{}", ds.song_ids[song], score);
    }
    Ok(())
}

fn cmd_export_embeddings(args: ExportArgs) -> Result<()> {
    let (ds, graphs) = load_data(&args.data)?;
    let params = load_checkpoint(&args.model)?;
    let state = state_for(&params, &ds, &graphs)?;
    let (ids, table) = match args.which {
        Which::User => (&ds.user_ids, &state.user_final),
        Which::Item => (&ds.song_ids, &state.item_final),
    };
    let mut out = String::new();
    for (id, row) in ids.iter().zip(table.rows()) {
        let values: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}\t{}", id, values.join(" ")).expect("writing to a String cannot fail");
    }
    fs::write(&args.out, out).map_err(|e| Error::io(&args.out, e))?;
    println!("wrote {} {} embeddings to {}", ids.len(),
        match args.which { Which::User => "user", Which::Item => "item" },
        args.out.display());
    Ok(())
}
