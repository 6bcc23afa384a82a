//! Measured runs, parameter sweeps and the search for the outer bin width.
//!
//! Every run reports two recall variants over the queries that have a data
//! point within `r` (per the exact oracle):
//!
//! * `recall_strict`: fraction whose output contains a point within `r`;
//! * `recall_cr`: fraction whose output contains any point (all reported
//!   points are within `c r`).
//!
//! When no query has an `r`-near point both are reported as 1.
//!
//! The CSV schema is versioned by [`CSV_SCHEMA_VERSION`]; every row repeats
//! all parameters. `evals_max` (largest per-machine count of distance
//! computations) is a simulator metric with no counterpart in the original
//! experiments.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::cluster::{load_summary, run_job, ClusterConfig, JobOutput, MappingMode};
use crate::data_io::{Dataset, GroundTruth, GroundTruthCache};
use crate::error::{Error, Result};
use crate::lsh::LshParams;
use crate::scalar::Scalar;
use crate::schemes::{DataRecord, QueryRecord, Scheme};

pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Data, queries and the exact answers at radius `c r`.
#[derive(Clone, Debug)]
pub struct Workload<T> {
    pub data: Vec<DataRecord<T>>,
    pub queries: Vec<QueryRecord<T>>,
    pub truth: GroundTruth<T>,
}

impl<T: Scalar> Workload<T> {
    pub fn prepare(
        data: &Dataset<T>,
        queries: &Dataset<T>,
        match_radius: f64,
        cache: Option<&GroundTruthCache>,
    ) -> Result<Self> {
        if data.dim != queries.dim {
            return Err(Error::DimensionMismatch {
                expected: data.dim,
                got: queries.dim,
            });
        }
        let truth = match cache {
            Some(c) => c.load_or_compute(data, queries, match_radius)?,
            None => GroundTruth::compute(data, &queries.to_queries(), match_radius)?,
        };
        Ok(Workload {
            data: data.records.clone(),
            queries: queries.to_queries(),
            truth,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub params: LshParams,
    pub cluster: ClusterConfig,
    pub seed: u64,
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub schema: u32,
    pub scheme: Scheme,
    pub n: usize,
    pub n_q: usize,
    pub d: usize,
    pub k: usize,
    pub w: f64,
    pub dparam: f64,
    pub r: f64,
    pub c: f64,
    pub l: usize,
    pub probe_self: bool,
    pub machines: usize,
    pub mapping: MappingMode,
    pub seed: u64,
    pub eligible: usize,
    pub recall_strict: f64,
    pub recall_cr: f64,
    pub results: usize,
    pub data_messages: u64,
    pub query_messages: u64,
    pub data_bytes: u64,
    pub query_bytes: u64,
    pub mean_f_q: f64,
    pub max_f_q: usize,
    pub load_avg: f64,
    pub load_max: u64,
    pub evals_max: u64,
    pub wall_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Recall {
    pub eligible: usize,
    pub strict: f64,
    pub cr: f64,
}

/// Recall of a sorted result list against the oracle.
pub fn recall<T: Scalar>(truth: &GroundTruth<T>, output: &JobOutput<T>, radius: f64) -> Recall {
    let r = T::from_f64_lossy(radius);
    let mut eligible = 0usize;
    let (mut strict, mut cr) = (0usize, 0usize);
    let mut rest = output.results.as_slice();
    for (&qid, near) in &truth.near {
        // results are sorted by query id; skip to this query's block
        let start = rest.partition_point(|m| m.query_id < qid);
        rest = &rest[start..];
        let end = rest.partition_point(|m| m.query_id <= qid);
        let mine = &rest[..end];
        if !near.iter().any(|&(_, d)| d <= r) {
            continue;
        }
        eligible += 1;
        if !mine.is_empty() {
            cr += 1;
        }
        if mine.iter().any(|m| m.distance <= r) {
            strict += 1;
        }
    }
    let frac = |x: usize| if eligible == 0 { 1.0 } else { x as f64 / eligible as f64 };
    Recall {
        eligible,
        strict: frac(strict),
        cr: frac(cr),
    }
}

/// Runs one job and measures it.
pub fn run_measured<T: Scalar>(workload: &Workload<T>, cfg: &RunConfig) -> Result<(RunMetrics, JobOutput<T>)> {
    let p = &cfg.params;
    if workload.truth.rho.to_bits() != p.match_radius().to_bits() {
        return Err(Error::param(format!(
            "ground truth radius {} differs from c*r = {}",
            workload.truth.rho,
            p.match_radius()
        )));
    }
    let start = Instant::now();
    let out = run_job(&workload.data, &workload.queries, cfg.scheme, p, &cfg.cluster, cfg.seed)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let rec = recall(&workload.truth, &out, p.radius);
    let (load_avg, load_max) = match load_summary(&out.loads) {
        Ok(s) => (s.avg, s.max),
        Err(_) => (0.0, 0),
    };
    let metrics = RunMetrics {
        schema: CSV_SCHEMA_VERSION,
        scheme: cfg.scheme,
        n: workload.data.len(),
        n_q: workload.queries.len(),
        d: p.dim,
        k: p.k,
        w: p.inner_width,
        dparam: p.outer_width,
        r: p.radius,
        c: p.approx_ratio,
        l: p.num_offsets,
        probe_self: p.probe_self,
        machines: cfg.cluster.num_machines,
        mapping: cfg.cluster.mapping,
        seed: cfg.seed,
        eligible: rec.eligible,
        recall_strict: rec.strict,
        recall_cr: rec.cr,
        results: out.results.len(),
        data_messages: out.ledger.data_messages,
        query_messages: out.ledger.query_messages,
        data_bytes: out.ledger.data_bytes,
        query_bytes: out.ledger.query_bytes,
        mean_f_q: out.ledger.mean_keys_per_query(),
        max_f_q: out.ledger.max_keys_per_query(),
        load_avg,
        load_max,
        evals_max: out.loads.iter().map(|l| l.num_distance_evals).max().unwrap_or(0),
        wall_ms,
    };
    Ok((metrics, out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepVar {
    /// Number of offsets `L`.
    Offsets,
    /// Outer bin width `D`.
    OuterWidth,
}

impl std::str::FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" | "l" => Ok(SweepVar::Offsets),
            "D" | "d" => Ok(SweepVar::OuterWidth),
            other => Err(Error::param(format!("sweep variable must be L or D, got {other:?}"))),
        }
    }
}

fn with_value(base: &LshParams, var: SweepVar, value: f64) -> Result<LshParams> {
    let mut p = base.clone();
    match var {
        SweepVar::Offsets => {
            if !(value >= 0.0 && value.fract() == 0.0) {
                return Err(Error::param(format!("L grid values must be non-negative integers, got {value}")));
            }
            p.num_offsets = value as usize;
        }
        SweepVar::OuterWidth => p.outer_width = value,
    }
    p.validate()?;
    Ok(p)
}

/// One row per (grid value, scheme), all with the base seed so rows are paired.
pub fn sweep<T: Scalar>(
    workload: &Workload<T>,
    base: &RunConfig,
    var: SweepVar,
    grid: &[f64],
    schemes: &[Scheme],
) -> Result<Vec<RunMetrics>> {
    if grid.is_empty() || schemes.is_empty() {
        return Err(Error::param("sweep needs a non-empty grid and at least one scheme"));
    }
    let mut rows = Vec::with_capacity(grid.len() * schemes.len());
    for &value in grid {
        let params = with_value(&base.params, var, value)?;
        for &scheme in schemes {
            let cfg = RunConfig {
                scheme,
                params: params.clone(),
                ..base.clone()
            };
            rows.push(run_measured(workload, &cfg)?.0);
        }
    }
    Ok(rows)
}

pub fn write_metrics_csv<W: Write>(rows: &[RunMetrics], out: W, header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// What the outer-width search minimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    WallMs,
    /// `shuffle * (data + query messages) + load * load_max`.
    Weighted { shuffle: f64, load: f64 },
}

impl Objective {
    pub fn eval(&self, m: &RunMetrics) -> f64 {
        match *self {
            Objective::WallMs => m.wall_ms,
            Objective::Weighted { shuffle, load } => {
                shuffle * (m.data_messages + m.query_messages) as f64 + load * m.load_max as f64
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    pub step: usize,
    pub dparam: f64,
    pub objective: f64,
    pub query_messages: u64,
    pub mean_f_q: f64,
    pub load_max: u64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneOutcome {
    pub best_d: f64,
    pub best_objective: f64,
    pub bracket: (f64, f64),
    pub trace: Vec<TracePoint>,
}

/// Default search interval `[sqrt(k)/4, 8 sqrt(k)]`.
pub fn default_d_bracket(k: usize) -> (f64, f64) {
    let s = (k as f64).sqrt();
    (s / 4.0, 8.0 * s)
}

/// Golden-section search for `D` in log space over `bracket`, Layered scheme.
///
/// Both endpoints are evaluated first and the best evaluated point is
/// returned, so the result is never worse than either endpoint even when the
/// objective is not unimodal.
pub fn tune_d<T: Scalar>(
    workload: &Workload<T>,
    base: &RunConfig,
    objective: Objective,
    bracket: (f64, f64),
    iterations: usize,
) -> Result<TuneOutcome> {
    let (lo, hi) = bracket;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::param(format!("invalid D bracket [{lo}, {hi}]")));
    }
    let mut trace = Vec::new();
    let mut eval = |d: f64| -> Result<f64> {
        let cfg = RunConfig {
            scheme: Scheme::Layered,
            params: with_value(&base.params, SweepVar::OuterWidth, d)?,
            ..base.clone()
        };
        let (m, _) = run_measured(workload, &cfg)?;
        let value = objective.eval(&m);
        if !value.is_finite() {
            return Err(Error::Domain(format!("objective is not finite at D = {d}")));
        }
        trace.push(TracePoint {
            step: trace.len(),
            dparam: d,
            objective: value,
            query_messages: m.query_messages,
            mean_f_q: m.mean_f_q,
            load_max: m.load_max,
            wall_ms: m.wall_ms,
        });
        Ok(value)
    };

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    eval(lo)?;
    eval(hi)?;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = eval(x1.exp())?;
    let mut f2 = eval(x2.exp())?;
    for _ in 0..iterations {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = eval(x1.exp())?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = eval(x2.exp())?;
        }
    }
    let best = trace
        .iter()
        .min_by(|p, q| p.objective.total_cmp(&q.objective))
        .expect("at least the endpoints were evaluated");
    Ok(TuneOutcome {
        best_d: best.dparam,
        best_objective: best.objective,
        bracket,
        trace,
    })
}

pub fn write_trace_csv<W: Write>(trace: &[TracePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in trace {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses an outer width: a number, `sqrtk`, `<x>*sqrtk`, `<x>sqrtk` or `sqrtk/<x>`.
pub fn parse_outer_width(s: &str, k: usize) -> Result<f64> {
    let s = s.trim();
    let root = (k as f64).sqrt();
    let num = |t: &str| -> Result<f64> {
        t.trim()
            .parse::<f64>()
            .map_err(|_| Error::param(format!("cannot parse D value {s:?}")))
    };
    let value = if let Some(rest) = s.strip_prefix("sqrtk") {
        match rest.trim() {
            "" => root,
            r if r.starts_with('/') => root / num(&r[1..])?,
            r if r.starts_with('*') => root * num(&r[1..])?,
            _ => return Err(Error::param(format!("cannot parse D value {s:?}"))),
        }
    } else if let Some(coef) = s.strip_suffix("sqrtk") {
        num(coef.trim_end_matches('*'))? * root
    } else {
        num(s)?
    };
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::param(format!("D must be finite and > 0, got {value}")));
    }
    Ok(value)
}
