use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use expocd::em::{fit_observed, objective, TrainingData};
use expocd::eval::{recommend, run_cv_experiment, CvGrid, CvOptions, HeldExposure};
use expocd::seeds::derive_seed;
use expocd::synth::target_scale;
use expocd::{
    generate, load_edge_list, load_gml_subset, mean_degree, Exposure, ExposureMask, FitConfig,
    FitResult, LatentState, ObservedGraph, SynthConfig, SyntheticInstance, VariationalPosterior,
};

/// Exit status when outputs were written but some trials failed.
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "expocd",
    version,
    about = "Community detection with explicit exposure"
)]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat `key = value` file; keys are flag names without dashes.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exp,
    Noexp,
}

impl From<Mode> for Exposure {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Exp => Exposure::Exp,
            Mode::Noexp => Exposure::NoExp,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum HeldScore {
    Posterior,
    Marginal,
    Absent,
}

#[derive(Args, Debug, Clone)]
struct FitArgs {
    /// Maximum EM iterations per restart.
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-2)]
    tol: f64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-5)]
    mu_epsilon: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic instance.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Second shape parameter of the propensity prior.
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 2.0)]
        beta_a: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Off-diagonal over diagonal affinity.
        #[arg(long, default_value_t = 0.001)]
        assortative: f64,
        /// Diagonal affinity; ignored when --degree is given.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Target expected mean degree of the observed graph.
        #[arg(long)]
        degree: Option<f64>,
        #[arg(long)]
        directed: bool,
        /// No dilution: every pair is exposed.
        #[arg(long)]
        mu_one: bool,
    },
    /// Fit one model to a graph.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Mode::Exp)]
        mode: Mode,
        #[arg(long)]
        directed: bool,
        /// Edge list, or a `.gml` file.
        input: PathBuf,
    },
    /// Cross-validated comparison of both models.
    Cv {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        fit: FitArgs,
        /// Community counts, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
        /// Number of seeds, counting up from --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Evaluate only the first few folds of each partition.
        #[arg(long)]
        folds_per_seed: Option<usize>,
        #[arg(long)]
        directed: bool,
        #[arg(long, value_enum, default_value_t = HeldScore::Posterior)]
        held: HeldScore,
        /// Mask AUC over pairs without an observed edge only.
        #[arg(long)]
        mask_unobserved_only: bool,
        #[arg(long, default_value_t = 20)]
        p_at: usize,
        /// Exit 0 even when some trials failed.
        #[arg(long)]
        allow_partial: bool,
        /// Edge list, `.gml` file, or a directory written by `generate`.
        input: PathBuf,
    },
    /// Rank unobserved pairs of a fitted exposure model.
    Recommend {
        #[command(flatten)]
        common: Common,
        /// Directory written by `fit`.
        #[arg(long)]
        fit_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        directed: bool,
        /// The graph the fit was run on.
        input: PathBuf,
    },
}

const SUBCOMMANDS: [&str; 4] = ["generate", "fit", "cv", "recommend"];

/// Splices `--key value` pairs from the config file in front of the real
/// flags. Keys also given on the command line are dropped.
fn with_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let text: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let path = text.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            text.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(path) = path else {
        return Ok(args);
    };
    let Some(at) = text.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(args);
    };
    let body = std::fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let given: Vec<&str> = text[at + 1..]
        .iter()
        .filter(|a| a.starts_with("--"))
        .map(|a| a.split('=').next().unwrap_or(a))
        .collect();
    let mut extra = Vec::new();
    for (n, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{path}:{}: expected `key = value`", n + 1);
        };
        let (key, value) = (key.trim(), value.trim());
        if key == "config" {
            bail!(
                "{path}:{}: config files cannot include other config files",
                n + 1
            );
        }
        let flag = format!("--{}", key.replace('_', "-"));
        if given.contains(&flag.as_str()) {
            continue;
        }
        match value {
            "true" => extra.push(flag),
            "false" => {}
            _ => {
                extra.push(flag);
                extra.push(value.to_string());
            }
        }
    }
    let mut out = args;
    out.splice(at + 1..at + 1, extra.into_iter().map(OsString::from));
    Ok(out)
}

fn setup_threads(threads: usize) -> Result<()> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_graph(path: &Path, directed: bool) -> Result<ObservedGraph> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let g = if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gml"))
    {
        if directed {
            bail!("GML input is read as an undirected graph");
        }
        load_gml_subset(file)?
    } else {
        load_edge_list(BufReader::new(file), directed)?
    };
    Ok(g)
}

fn load_instance(dir: &Path, directed: bool) -> Result<SyntheticInstance> {
    let open = |name: &str| -> Result<BufReader<File>> {
        let p = dir.join(name);
        Ok(BufReader::new(
            File::open(&p).with_context(|| format!("opening {}", p.display()))?,
        ))
    };
    let observed = load_edge_list(open("observed.tsv")?, directed)?;
    let ground_truth = load_edge_list(open("ground_truth.tsv")?, directed)?;
    let n = observed.n_nodes();
    if ground_truth.n_nodes() != n || ground_truth.labels() != observed.labels() {
        bail!("observed and ground-truth graphs list different nodes");
    }
    let mask = ExposureMask::read_pairs(open("mask.txt")?, n, directed)?;
    let true_state = LatentState::read_text(open("true_state.txt")?)?;
    if true_state.n_nodes() != n || true_state.is_directed() != directed {
        bail!("true_state.txt does not match the graph");
    }
    Ok(SyntheticInstance {
        ground_truth,
        mask,
        observed,
        true_state,
    })
}

fn fit_config(fit: &FitArgs, k: usize, directed: bool, exposure: Exposure, seed: u64) -> FitConfig {
    FitConfig {
        k_communities: k,
        directed,
        exposure,
        n_restarts: fit.restarts,
        max_iters: fit.max_iters,
        tol: fit.tol,
        mu_epsilon: fit.mu_epsilon,
        seed,
        ..FitConfig::default()
    }
}

fn read_q(path: &Path, n: usize, directed: bool) -> Result<VariationalPosterior> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut q = VariationalPosterior::filled(n, directed, 1.0);
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let parsed = (f.len() == 3)
            .then(|| {
                Some((
                    f[0].parse::<usize>().ok()?,
                    f[1].parse::<usize>().ok()?,
                    f[2].parse::<f64>().ok()?,
                ))
            })
            .flatten();
        match parsed {
            Some((i, j, v)) if i < n && j < n && i != j && (0.0..=1.0).contains(&v) => {
                q.set(i, j, v)
            }
            _ => bail!("{}:{}: expected `i j Q`", path.display(), lineno + 1),
        }
    }
    Ok(q)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct FitMeta {
    mode: Exposure,
    k: usize,
    directed: bool,
    n_nodes: usize,
    seed: u64,
    final_bound: f64,
    restart_index: usize,
    restart_bounds: Vec<f64>,
}

fn cmd_generate(cli: Command) -> Result<u8> {
    let Command::Generate {
        common,
        n,
        k,
        beta,
        beta_a,
        alpha,
        assortative,
        scale,
        degree,
        directed,
        mu_one,
    } = cli
    else {
        unreachable!()
    };
    let mut cfg = SynthConfig {
        n_nodes: n,
        k_communities: k,
        dirichlet_alpha: alpha,
        assortative_ratio: assortative,
        w_scale: scale,
        beta_a,
        beta_b: beta,
        directed,
        full_exposure: mu_one,
        seed: derive_seed(common.seed, "synth", &[]),
    };
    if let Some(d) = degree {
        cfg.w_scale = target_scale(&cfg, d)?;
    }
    let inst = generate(&cfg)?;
    inst.export(&common.out)?;
    println!("mean degree (observed): {:.4}", mean_degree(&inst.observed));
    println!(
        "mean degree (ground truth): {:.4}",
        mean_degree(&inst.ground_truth)
    );
    println!("mask density: {:.4}", inst.mask.density());
    Ok(0)
}

fn cmd_fit(cli: Command) -> Result<u8> {
    let Command::Fit {
        common,
        fit,
        k,
        mode,
        directed,
        input,
    } = cli
    else {
        unreachable!()
    };
    let g = load_graph(&input, directed)?;
    let exposure = Exposure::from(mode);
    let seed = derive_seed(common.seed, "fit", &[k as u64]);
    let cfg = fit_config(&fit, k, directed, exposure, seed);
    std::fs::create_dir_all(&common.out)?;

    let data = TrainingData::new(&g, None);
    let partial: Mutex<BTreeMap<usize, Vec<(usize, f64)>>> = Mutex::new(BTreeMap::new());
    let every = cfg.check_every;
    let result = fit_observed(&g, &cfg, None, &|restart, it, state, q| {
        if it % every == 0 {
            if let Ok(l) = objective(&data, state, q, exposure) {
                partial
                    .lock()
                    .unwrap()
                    .entry(restart)
                    .or_default()
                    .push((it, l));
            }
        }
    });
    let res = match result {
        Ok(res) => res,
        Err(e) => {
            let mut out = create(&common.out, "trace.partial.csv")?;
            writeln!(out, "restart,iteration,L")?;
            for (r, rows) in partial.into_inner().unwrap() {
                for (it, l) in rows {
                    writeln!(out, "{r},{it},{l:e}")?;
                }
            }
            out.flush()?;
            return Err(e).context("fit failed; partial trace written to trace.partial.csv");
        }
    };
    for (r, b) in res.restart_bounds.iter().enumerate() {
        println!("restart {r}: final L = {b:.6}");
    }
    println!(
        "best restart {} with L = {:.6}",
        res.restart_index, res.final_bound
    );

    res.state.write_text(create(&common.out, "state.txt")?)?;
    let mut q = create(&common.out, "q.txt")?;
    res.write_q(&g, &mut q)?;
    q.flush()?;
    let mut trace = create(&common.out, "trace.csv")?;
    res.write_trace_csv(&mut trace)?;
    trace.flush()?;
    let meta = FitMeta {
        mode: exposure,
        k,
        directed,
        n_nodes: g.n_nodes(),
        seed: common.seed,
        final_bound: res.final_bound,
        restart_index: res.restart_index,
        restart_bounds: res.restart_bounds.clone(),
    };
    let mut m = create(&common.out, "fit.json")?;
    serde_json::to_writer_pretty(&mut m, &meta)?;
    writeln!(m)?;
    m.flush()?;
    Ok(0)
}

fn cmd_cv(cli: Command) -> Result<u8> {
    let Command::Cv {
        common,
        fit,
        k,
        seeds,
        folds,
        folds_per_seed,
        directed,
        held,
        mask_unobserved_only,
        p_at,
        allow_partial,
        input,
    } = cli
    else {
        unreachable!()
    };
    let instance = if input.is_dir() {
        Some(load_instance(&input, directed)?)
    } else {
        None
    };
    let g = match &instance {
        Some(inst) => inst.observed.clone(),
        None => load_graph(&input, directed)?,
    };
    let grid = CvGrid {
        k_values: k,
        seeds: (0..seeds).map(|s| common.seed + s).collect(),
        n_folds: folds,
        folds_per_seed,
    };
    let template = fit_config(&fit, 1, directed, Exposure::Exp, 0);
    let options = CvOptions {
        held_exposure: match held {
            HeldScore::Posterior => HeldExposure::Posterior,
            HeldScore::Marginal => HeldExposure::Marginal,
            HeldScore::Absent => HeldExposure::AssumeAbsent,
        },
        mask_auc_unobserved_only: mask_unobserved_only,
        p_at_k: p_at,
    };
    let report = run_cv_experiment(&g, &grid, &template, instance.as_ref(), &options)?;

    std::fs::create_dir_all(&common.out)?;
    let mut out = match common.format {
        Format::Csv => {
            let mut w = create(&common.out, "cv.csv")?;
            report.write_csv(&mut w)?;
            w
        }
        Format::Jsonl => {
            let mut w = create(&common.out, "cv.jsonl")?;
            report.write_jsonl(&mut w)?;
            w
        }
    };
    out.flush()?;
    for r in report.records.iter().filter(|r| r.error.is_some()) {
        log::error!(
            "K={} seed={} fold={} {}: {}",
            r.k,
            r.seed,
            r.fold,
            r.method,
            r.error.as_deref().unwrap_or_default()
        );
    }
    let summary = report.summary();
    println!("{summary}");
    std::fs::write(common.out.join("summary.txt"), format!("{summary}\n"))?;
    if report.n_failed() > 0 && !allow_partial {
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

fn cmd_recommend(cli: Command) -> Result<u8> {
    let Command::Recommend {
        common,
        fit_dir,
        top,
        directed,
        input,
    } = cli
    else {
        unreachable!()
    };
    let meta: FitMeta = serde_json::from_reader(BufReader::new(
        File::open(fit_dir.join("fit.json")).context("opening fit.json")?,
    ))
    .context("reading fit.json")?;
    if meta.mode != Exposure::Exp {
        bail!(
            "{} holds a baseline (noexp) fit, which has no exposure posterior; \
             refit with --mode exp to get recommendations",
            fit_dir.display()
        );
    }
    let g = load_graph(&input, directed)?;
    if g.n_nodes() != meta.n_nodes || directed != meta.directed {
        bail!("the graph does not match the fit in {}", fit_dir.display());
    }
    let state = LatentState::read_text(BufReader::new(
        File::open(fit_dir.join("state.txt")).context("opening state.txt")?,
    ))?;
    let posterior = read_q(&fit_dir.join("q.txt"), g.n_nodes(), directed)?;
    let result = FitResult {
        state,
        posterior,
        exposure: meta.mode,
        final_bound: meta.final_bound,
        bound_trace: Vec::new(),
        restart_index: meta.restart_index,
        restart_bounds: meta.restart_bounds,
    };
    let recs = recommend(&result, &g, top)?;
    if recs.truncated {
        eprintln!(
            "warning: only {} candidate pairs available",
            recs.rows.len()
        );
    }
    std::fs::create_dir_all(&common.out)?;
    match common.format {
        Format::Csv => {
            let mut w = create(&common.out, "recommendations.csv")?;
            recs.write_csv(&g, &mut w)?;
            w.flush()?;
        }
        Format::Jsonl => {
            let mut w = create(&common.out, "recommendations.jsonl")?;
            for (rank, r) in recs.rows.iter().enumerate() {
                let row = serde_json::json!({
                    "rank": rank + 1,
                    "node_i": g.label(r.i),
                    "node_j": g.label(r.j),
                    "lambda": r.lambda,
                    "Q": r.q,
                });
                writeln!(w, "{row}")?;
            }
            w.flush()?;
        }
    }
    Ok(0)
}

fn run() -> Result<u8> {
    let args = with_config(std::env::args_os().collect())?;
    let cli = Cli::parse_from(args);
    let common = match &cli.command {
        Command::Generate { common, .. }
        | Command::Fit { common, .. }
        | Command::Cv { common, .. }
        | Command::Recommend { common, .. } => common.clone(),
    };
    setup_threads(common.threads)?;
    match cli.command {
        c @ Command::Generate { .. } => cmd_generate(c),
        c @ Command::Fit { .. } => cmd_fit(c),
        c @ Command::Cv { .. } => cmd_cv(c),
        c @ Command::Recommend { .. } => cmd_recommend(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
