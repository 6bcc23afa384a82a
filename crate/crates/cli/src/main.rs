//! `layered-lsh`: generate planted data, run single jobs, sweep `L` or `D`,
//! and tune `D`.
//!
//! Exit codes: 0 success, 2 parameter error, 3 I/O or format error,
//! 4 integrity error.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use layered_lsh::bench::{write_metrics_csv, write_trace_csv};
use layered_lsh::{
    default_d_bracket, default_num_offsets, generate_planted, parse_outer_width, read_vectors, run_measured,
    sweep, tune_d, write_vectors, ClusterConfig, Dataset, Error, GroundTruthCache, LshParams, MappingMode,
    Objective, RunConfig, Scheme, SweepVar, Workload,
};

type Result<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(name = "layered-lsh", version, about = "Layered LSH on a simulated MapReduce cluster")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted dataset: data.lshv, queries.lshv and parents.csv.
    Gen(GenArgs),
    /// Run one job and append a metrics row.
    Run(RunArgs),
    /// Run a grid over L or D, one row per grid value and scheme.
    Sweep(SweepArgs),
    /// Search D for the Layered scheme and print the chosen value.
    TuneD(TuneArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 1_000)]
    nq: usize,
    #[arg(long, default_value_t = 100)]
    d: usize,
    #[arg(long, default_value_t = 0.3)]
    r: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Options shared by every command that runs jobs. Unset flags fall back to
/// the `--config` file, then to built-in defaults.
#[derive(Args, Default)]
struct JobArgs {
    /// key=value file; keys are flag names without the leading dashes.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    w: Option<String>,
    #[arg(long)]
    l: Option<String>,
    /// Outer width: a number or an expression like `sqrtk`, `2*sqrtk`, `sqrtk/2`.
    #[arg(long)]
    dparam: Option<String>,
    #[arg(long)]
    machines: Option<String>,
    #[arg(long)]
    mapping: Option<String>,
    /// on | off
    #[arg(long)]
    probe_self: Option<String>,
    #[arg(long)]
    r: Option<String>,
    #[arg(long)]
    c: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    threads: Option<String>,
    /// Directory for cached ground truth.
    #[arg(long)]
    gt_cache: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    job: JobArgs,
    /// Metrics CSV; the row is appended, with a header if the file is new.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of (query_id, point_id, distance).
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    job: JobArgs,
    /// L or D.
    #[arg(long)]
    var: String,
    /// Comma-separated grid; D values may use sqrtk expressions.
    #[arg(long)]
    grid: String,
    /// Comma-separated schemes.
    #[arg(long, default_value = "simple,layered")]
    schemes: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    job: JobArgs,
    /// wall_ms | weighted
    #[arg(long, default_value = "weighted")]
    objective: String,
    #[arg(long, default_value_t = 1.0)]
    shuffle_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    load_weight: f64,
    #[arg(long, default_value_t = 8)]
    iters: usize,
    /// Bracket bounds; default [sqrt(k)/4, 8 sqrt(k)].
    #[arg(long)]
    lo: Option<String>,
    #[arg(long)]
    hi: Option<String>,
    /// Trace CSV.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Command::Gen(a) => cmd_gen(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::TuneD(a) => cmd_tune_d(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter(_) | Error::DimensionMismatch { .. } | Error::Domain(_) => 2,
        Error::Io(_) | Error::Format { .. } | Error::Csv(_) => 3,
        Error::Integrity(_) => 4,
    }
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let inst = generate_planted::<f32>(a.n, a.nq, a.d, a.r, a.seed)?;
    fs::create_dir_all(&a.out)?;
    write_vectors(a.out.join("data.lshv"), &inst.data)?;
    write_vectors(a.out.join("queries.lshv"), &inst.queries)?;
    let mut w = BufWriter::new(fs::File::create(a.out.join("parents.csv"))?);
    writeln!(w, "query_id,parent_id")?;
    for (q, p) in inst.parents.iter().enumerate() {
        writeln!(w, "{q},{p}")?;
    }
    w.flush()?;
    Ok(())
}

/// Flags merged with the optional config file.
struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    fn load(job: &JobArgs) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = &job.config {
            values = parse_config(&fs::read_to_string(path)?)?;
        }
        let flags: [(&str, Option<String>); 14] = [
            ("data", job.data.as_ref().map(|p| p.display().to_string())),
            ("queries", job.queries.as_ref().map(|p| p.display().to_string())),
            ("scheme", job.scheme.clone()),
            ("k", job.k.clone()),
            ("w", job.w.clone()),
            ("l", job.l.clone()),
            ("dparam", job.dparam.clone()),
            ("machines", job.machines.clone()),
            ("mapping", job.mapping.clone()),
            ("probe-self", job.probe_self.clone()),
            ("r", job.r.clone()),
            ("c", job.c.clone()),
            ("seed", job.seed.clone()),
            ("threads", job.threads.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                values.insert(key.to_string(), v);
            }
        }
        if let Some(dir) = &job.gt_cache {
            values.insert("gt-cache".into(), dir.display().to_string());
        }
        Ok(Settings { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::param(format!("cannot parse {key} = {s:?}"))),
        }
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        self.get(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::param(format!("--{key} is required")))
    }
}

fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::param(format!("config line {}: expected key=value", lineno + 1)))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

fn parse_switch(s: &str) -> Result<bool> {
    match s {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(Error::param(format!("probe-self must be on or off, got {other:?}"))),
    }
}

struct Prepared {
    workload: Workload<f64>,
    config: RunConfig,
}

fn prepare(job: &JobArgs) -> Result<Prepared> {
    let s = Settings::load(job)?;
    let data = read_vectors::<f32>(s.path("data")?)?.cast::<f64>();
    let queries = read_vectors::<f32>(s.path("queries")?)?.cast::<f64>();
    let config = build_config(&s, &data)?;
    let cache = s.get("gt-cache").map(GroundTruthCache::new);
    let workload = Workload::prepare(&data, &queries, config.params.match_radius(), cache.as_ref())?;
    Ok(Prepared { workload, config })
}

fn build_config(s: &Settings, data: &Dataset<f64>) -> Result<RunConfig> {
    let k: usize = s.parse("k", 10)?;
    let c: f64 = s.parse("c", 2.0)?;
    let n = data.len().max(1);
    let params = LshParams {
        dim: data.dim,
        k,
        inner_width: s.parse("w", 0.5)?,
        outer_width: parse_outer_width(s.get("dparam").unwrap_or("sqrtk"), k)?,
        radius: s.parse("r", 0.3)?,
        approx_ratio: c,
        num_offsets: match s.get("l") {
            Some(_) => s.parse("l", 0)?,
            None if c > 1.0 => default_num_offsets(n, c),
            None => 1,
        },
        n,
        probe_self: parse_switch(s.get("probe-self").unwrap_or("on"))?,
    };
    params.validate()?;
    let seed: u64 = s.parse("seed", 0)?;
    let cluster = ClusterConfig {
        num_machines: s.parse("machines", 16)?,
        mapping: s.parse("mapping", MappingMode::Modulo)?,
        seed,
        workers: s.parse("threads", 0)?,
    };
    cluster.validate()?;
    Ok(RunConfig {
        scheme: s.parse("scheme", Scheme::Layered)?,
        params,
        cluster,
        seed,
    })
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let p = prepare(&a.job)?;
    let (metrics, output) = run_measured(&p.workload, &p.config)?;
    let fresh = fs::metadata(&a.out).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(&a.out)?;
    write_metrics_csv(&[metrics], file, fresh)?;
    if let Some(path) = &a.results {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "query_id,point_id,distance")?;
        for m in &output.results {
            writeln!(w, "{},{},{}", m.query_id, m.point_id, m.distance)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let p = prepare(&a.job)?;
    let var: SweepVar = a.var.parse()?;
    let grid = a
        .grid
        .split(',')
        .map(|t| match var {
            SweepVar::OuterWidth => parse_outer_width(t, p.config.params.k),
            SweepVar::Offsets => t
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::param(format!("cannot parse L value {t:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let schemes = a
        .schemes
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<Result<Vec<Scheme>>>()?;
    let rows = sweep(&p.workload, &p.config, var, &grid, &schemes)?;
    write_metrics_csv(&rows, BufWriter::new(fs::File::create(&a.out)?), true)
}

fn cmd_tune_d(a: &TuneArgs) -> Result<()> {
    let p = prepare(&a.job)?;
    let objective = match a.objective.as_str() {
        "wall_ms" => Objective::WallMs,
        "weighted" => Objective::Weighted {
            shuffle: a.shuffle_weight,
            load: a.load_weight,
        },
        other => return Err(Error::param(format!("objective must be wall_ms or weighted, got {other:?}"))),
    };
    let k = p.config.params.k;
    let (lo, hi) = default_d_bracket(k);
    let bound = |v: &Option<String>, default: f64| v.as_deref().map_or(Ok(default), |s| parse_outer_width(s, k));
    let bracket = (bound(&a.lo, lo)?, bound(&a.hi, hi)?);
    let outcome = tune_d(&p.workload, &p.config, objective, bracket, a.iters)?;
    write_trace_csv(&outcome.trace, BufWriter::new(fs::File::create(&a.out)?))?;
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "{}", outcome.best_d)?;
    Ok(())
}
