use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use netid::harness::{self, ExperimentConfig, Method, MethodChoice};
use netid::io::{self, FittedModel};
use netid::metrics::{score_prediction, Predictor};
use netid::{alternating, sindy, BasisLibrary, Model, NetworkKind};

#[derive(Parser)]
#[command(name = "netid", version, about = "Sparse identification of network dynamics")]
struct Cli {
    /// Worker threads for fits and grids (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output root used when --out is not given.
    #[arg(long, global = true, env = "NETID_OUT", default_value = "out")]
    out_root: PathBuf,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    cmd: Command,
}

/// Top-level config overrides shared by the experiment commands.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// asind, sindy or both.
    #[arg(long)]
    method: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a network and integrate the dynamics on it.
    Simulate {
        #[command(flatten)]
        o: Overrides,
        /// kuramoto, sis, lv or mm (overrides the config).
        #[arg(long)]
        model: Option<String>,
        /// er, ws or ba (overrides the config).
        #[arg(long)]
        network: Option<String>,
        /// Number of nodes.
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Fit a model to a trajectory CSV.
    Fit {
        /// Trajectory CSV.
        #[arg(long)]
        data: PathBuf,
        /// JSON experiment config (asind / sindy / library sections are used).
        #[arg(long)]
        config: Option<PathBuf>,
        /// asind or sindy.
        #[arg(long, default_value = "asind")]
        method: String,
        /// Basis library key listing.
        #[arg(long)]
        library: Option<PathBuf>,
        /// Model JSON to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll a fitted model forward.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Start from the last state of this trajectory.
        #[arg(long, conflicts_with = "x0")]
        data: Option<PathBuf>,
        /// Start state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a fitted model against a held-out trajectory whose first row
    /// is the start state.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// True network (dense CSV) for the Jaccard index.
        #[arg(long)]
        network: Option<PathBuf>,
        /// Binarization threshold for the Jaccard index.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Write the report JSON here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every seed of one configuration.
    Run {
        #[command(flatten)]
        o: Overrides,
    },
    /// Cross product of models × networks × methods.
    Grid {
        #[command(flatten)]
        o: Overrides,
        #[arg(long, value_delimiter = ',', default_value = "kuramoto,sis,lv,mm")]
        models: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "er,ws,ba")]
        networks: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "asind,sindy")]
        methods: Vec<String>,
    },
    /// Full grid: all models, networks and both methods.
    ReproduceTables {
        #[command(flatten)]
        o: Overrides,
    },
}

fn load_config(o: &Overrides, out_root: &Path, default_sub: &str) -> Result<ExperimentConfig> {
    let mut cfg = match &o.config {
        Some(p) => io::read_json::<ExperimentConfig>(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seeds = vec![s];
    }
    if let Some(h) = o.horizon {
        cfg.horizon = h;
    }
    if let Some(m) = &o.method {
        cfg.method = m.parse::<MethodChoice>()?;
    }
    if let Some(out) = &o.out {
        cfg.output_dir = Some(out.clone());
    } else if cfg.output_dir.is_none() {
        cfg.output_dir = Some(out_root.join(default_sub));
    }
    if cfg.output_dir.as_deref().is_some_and(|d| d.starts_with(out_root)) {
        std::fs::create_dir_all(out_root).with_context(|| format!("creating {}", out_root.display()))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(table: &harness::ResultsTable, cfg: &ExperimentConfig) {
    print!("{}", table.prediction_table());
    println!();
    print!("{}", table.jaccard_table(Method::Asind));
    if let Some(dir) = &cfg.output_dir {
        println!("\nresults written to {}", dir.display());
    }
}

fn simulate(
    cli: &Cli,
    o: &Overrides,
    model: &Option<String>,
    network: &Option<String>,
    nodes: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(o, &cli.out_root, "simulate")?;
    if let Some(m) = model {
        cfg.dynamics.model = m.parse::<Model>()?;
    }
    if let Some(k) = network {
        cfg.network.kind = k.parse::<NetworkKind>()?;
    }
    if let Some(n) = nodes {
        cfg.network.n = n;
    }
    cfg.validate()?;
    let dir = cfg.output_dir.clone().expect("output dir set");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let seed = cfg.seeds[0];
    let data = harness::simulate(&cfg, seed)?;
    let full = data.full_trajectory()?;
    let n = full.n();
    io::save_trajectory(&full, &dir.join("trajectory.csv"))?;
    io::save_trajectory(&data.train, &dir.join("train.csv"))?;
    io::save_trajectory(&data.truth, &dir.join("test.csv"))?;
    io::save_adjacency(&data.network, &dir.join("network.csv"))?;
    io::save_edge_list(&data.network, &dir.join("edges.csv"))?;
    io::write_json(&dir.join("dynamics.json"), &data.spec)?;
    println!(
        "{} on {} (N={}, seed {seed}): {} training + {} held-out samples in {}",
        cfg.dynamics.model,
        cfg.network.kind,
        n,
        data.train.len(),
        data.truth.len() - 1,
        dir.display()
    );
    Ok(())
}

fn fit(
    cli: &Cli,
    data: &Path,
    config: &Option<PathBuf>,
    method: &str,
    library: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let cfg = match config {
        Some(p) => io::read_json::<ExperimentConfig>(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    let traj = io::load_trajectory(data)?.with_derivatives()?;
    let method: Method = method.parse()?;
    let fitted = match method {
        Method::Asind => {
            let lib = match library {
                Some(p) => BasisLibrary::load(p)?,
                None => cfg.library(),
            };
            let (model, state) = alternating::fit(&traj, &lib, &cfg.asind)?;
            log::info!(
                "{} outer iterations, converged: {}, max descent violation {:.2e}",
                state.iteration,
                state.converged,
                state.max_descent_violation()
            );
            FittedModel::Asind(model)
        }
        Method::Sindy => FittedModel::Sindy(sindy::fit_sindy(&traj, &cfg.sindy)?),
    };
    let path = out.clone().unwrap_or_else(|| cli.out_root.join("model.json"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    io::save_fitted(&fitted, &path)?;
    print!("{}", fitted.equations());
    println!("model written to {}", path.display());
    Ok(())
}

fn predict(
    cli: &Cli,
    model: &Path,
    data: &Option<PathBuf>,
    x0: &Option<Vec<f64>>,
    steps: usize,
    dt: f64,
    out: &Option<PathBuf>,
) -> Result<()> {
    let fitted = io::load_fitted(model)?;
    let (x0, dt) = match (data, x0) {
        (Some(p), _) => {
            let t = io::load_trajectory(p)?;
            (t.last_state(), t.dt)
        }
        (None, Some(x)) => (x.clone(), dt),
        (None, None) => bail!("give a start state with --data or --x0"),
    };
    let pred = fitted.rollout(&x0, dt, steps)?;
    let path = out.clone().unwrap_or_else(|| cli.out_root.join("prediction.csv"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    io::save_trajectory(&pred, &path)?;
    println!("{} steps written to {}", steps, path.display());
    Ok(())
}

fn eval(model: &Path, truth: &Path, network: &Option<PathBuf>, tol: f64, out: &Option<PathBuf>) -> Result<()> {
    let fitted = io::load_fitted(model)?;
    let truth = io::load_trajectory(truth)?;
    let net = match network {
        Some(p) => io::load_adjacency(p)?,
        None => netid::AdjacencyMatrix::zeros(fitted.n()),
    };
    let r = score_prediction(&fitted, &truth, &net, tol)?;
    let mut shown = r.clone();
    shown.per_step_errors = None;
    print!("{}", io::to_json_pretty(&shown)?);
    if let Some(p) = out {
        io::write_json(p, &r)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match &cli.cmd {
        Command::Simulate {
            o,
            model,
            network,
            nodes,
        } => simulate(&cli, o, model, network, *nodes),
        Command::Fit {
            data,
            config,
            method,
            library,
            out,
        } => fit(&cli, data, config, method, library, out),
        Command::Predict {
            model,
            data,
            x0,
            steps,
            dt,
            out,
        } => predict(&cli, model, data, x0, *steps, *dt, out),
        Command::Eval {
            model,
            truth,
            network,
            tol,
            out,
        } => eval(model, truth, network, *tol, out),
        Command::Run { o } => {
            let cfg = load_config(o, &cli.out_root, "run")?;
            let table = harness::run_experiment(&cfg)?;
            report(&table, &cfg);
            Ok(())
        }
        Command::Grid {
            o,
            models,
            networks,
            methods,
        } => {
            let cfg = load_config(o, &cli.out_root, "grid")?;
            let models: Vec<Model> = harness::parse_list(models)?;
            let networks: Vec<NetworkKind> = harness::parse_list(networks)?;
            let methods: Vec<Method> = harness::parse_list(methods)?;
            let table = harness::run_grid(&cfg, &models, &networks, &methods)?;
            report(&table, &cfg);
            Ok(())
        }
        Command::ReproduceTables { o } => {
            let cfg = load_config(o, &cli.out_root, "tables")?;
            let table = harness::reproduce_tables(&cfg)?;
            report(&table, &cfg);
            Ok(())
        }
    }
}
