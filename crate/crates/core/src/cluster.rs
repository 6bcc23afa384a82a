//! A synchronous simulation of a (key, value) cluster: one map round, one
//! shuffle, one reduce round, with every shuffled message counted.
//!
//! Map and reduce invocations run on a rayon pool of `workers` threads. All
//! counters are merged after the round and results are sorted by
//! `(query_id, point_id)`, so the outputs do not depend on the thread count.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::lsh::{BucketId, HashFamilyH, HashFunctionG, LshParams, MachineKey};
use crate::rng::mix64;
use crate::scalar::Scalar;
use crate::schemes::{
    map_data_layered, map_data_simple, map_query, reduce_layered, reduce_simple, DataRecord,
    KeyValueMessage, MatchResult, MessageKey, Payload, QueryRecord, Reduced, RunSeeds, Scheme,
};

/// How a message key picks its machine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingMode {
    /// The machine id is the key itself; inner buckets are first reduced to
    /// an integer with [`stable_hash`]. Machines are created on demand.
    Identity,
    /// `mix64(stable_hash(key) ^ seed) mod M`.
    Modulo,
}

impl fmt::Display for MappingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MappingMode::Identity => "identity",
            MappingMode::Modulo => "modulo",
        })
    }
}

impl FromStr for MappingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(MappingMode::Identity),
            "modulo" => Ok(MappingMode::Modulo),
            other => Err(Error::param(format!("unknown mapping mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterConfig {
    pub num_machines: usize,
    pub mapping: MappingMode,
    /// Salt of the modulo mapping.
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            num_machines: 16,
            mapping: MappingMode::Modulo,
            seed: 0,
            workers: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_machines == 0 {
            return Err(Error::param("num_machines must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MachineId(pub i64);

impl fmt::Display for MachineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// 64-bit FNV-1a over the canonical key bytes. Platform independent.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn assign_machine(key: &MessageKey, cfg: &ClusterConfig) -> MachineId {
    match (cfg.mapping, key) {
        (MappingMode::Identity, MessageKey::Machine(MachineKey(v))) => MachineId(*v),
        (MappingMode::Identity, MessageKey::Bucket(_)) => {
            MachineId(stable_hash(&key.canonical_bytes()) as i64)
        }
        (MappingMode::Modulo, _) => {
            // FNV-1a alone leaves the low bits weakly mixed; finalize before the modulus
            let h = mix64(stable_hash(&key.canonical_bytes()) ^ cfg.seed);
            MachineId((h % cfg.num_machines.max(1) as u64) as i64)
        }
    }
}

/// Exact account of the messages moved between map and reduce.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ShuffleLedger {
    pub data_messages: u64,
    pub query_messages: u64,
    pub data_bytes: u64,
    pub query_bytes: u64,
    /// Messages sent per query: `f_q` for Layered, distinct buckets for Simple.
    pub per_query_keys: BTreeMap<u64, usize>,
}

impl ShuffleLedger {
    fn record<T: Scalar>(&mut self, msg: &KeyValueMessage<'_, T>) {
        if msg.is_query() {
            self.query_messages += 1;
            self.query_bytes += msg.byte_size as u64;
        } else {
            self.data_messages += 1;
            self.data_bytes += msg.byte_size as u64;
        }
    }

    pub fn total_messages(&self) -> u64 {
        self.data_messages + self.query_messages
    }

    pub fn mean_keys_per_query(&self) -> f64 {
        if self.per_query_keys.is_empty() {
            return 0.0;
        }
        self.per_query_keys.values().sum::<usize>() as f64 / self.per_query_keys.len() as f64
    }

    pub fn max_keys_per_query(&self) -> usize {
        self.per_query_keys.values().copied().max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MachineLoad {
    pub machine_id: MachineId,
    pub num_points: u64,
    pub num_queries: u64,
    /// Distance computations in reduce; exposes compute skew next to storage skew.
    pub num_distance_evals: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobOutput<T> {
    /// Sorted by `(query_id, point_id)`, no duplicates.
    pub results: Vec<MatchResult<T>>,
    pub ledger: ShuffleLedger,
    /// Machines that received at least one message, sorted by id.
    pub loads: Vec<MachineLoad>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadSummary {
    pub avg: f64,
    pub max: u64,
}

/// Average and maximum stored points over machines holding a point or a query.
pub fn load_summary(loads: &[MachineLoad]) -> Result<LoadSummary> {
    let active: Vec<&MachineLoad> = loads
        .iter()
        .filter(|l| l.num_points > 0 || l.num_queries > 0)
        .collect();
    if active.is_empty() {
        return Err(Error::param("load summary of an empty machine list"));
    }
    let total: u64 = active.iter().map(|l| l.num_points).sum();
    Ok(LoadSummary {
        avg: total as f64 / active.len() as f64,
        max: active.iter().map(|l| l.num_points).max().unwrap_or(0),
    })
}

#[derive(Default)]
struct Group<'m, 'a, T> {
    data: Vec<(Option<&'m BucketId>, &'a DataRecord<T>)>,
    queries: Vec<&'a QueryRecord<T>>,
}

/// Runs one job end to end: map, shuffle, reduce.
///
/// The inner family, outer hash and offsets are all derived from `seed`
/// (see [`RunSeeds`]), so Simple and Layered runs with the same seed use the
/// same random objects.
pub fn run_job<T: Scalar>(
    data: &[DataRecord<T>],
    queries: &[QueryRecord<T>],
    scheme: Scheme,
    params: &LshParams,
    cluster: &ClusterConfig,
    seed: u64,
) -> Result<JobOutput<T>> {
    params.validate()?;
    cluster.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cluster.workers)
        .build()
        .map_err(|e| Error::param(format!("cannot build worker pool: {e}")))?;
    pool.install(|| run_rounds(data, queries, scheme, params, cluster, seed))
}

fn check_inputs<T>(data: &[DataRecord<T>], queries: &[QueryRecord<T>], dim: usize) -> Result<()> {
    let mut ids = HashSet::with_capacity(data.len());
    for rec in data {
        check_dim(dim, rec.point.len())?;
        if !ids.insert(rec.id) {
            return Err(Error::param(format!("duplicate data id {}", rec.id)));
        }
    }
    ids.clear();
    for rec in queries {
        check_dim(dim, rec.point.len())?;
        if !ids.insert(rec.id) {
            return Err(Error::param(format!("duplicate query id {}", rec.id)));
        }
    }
    Ok(())
}

fn run_rounds<T: Scalar>(
    data: &[DataRecord<T>],
    queries: &[QueryRecord<T>],
    scheme: Scheme,
    params: &LshParams,
    cluster: &ClusterConfig,
    seed: u64,
) -> Result<JobOutput<T>> {
    check_inputs(data, queries, params.dim)?;
    let seeds = RunSeeds::from_seed(seed);
    let h = HashFamilyH::<T>::sample(params, seeds.inner)?;
    let g = HashFunctionG::<T>::sample(params.k, params.outer_width, seeds.outer)?;

    // map
    let data_msgs = data
        .par_iter()
        .map(|rec| match scheme {
            Scheme::Simple => map_data_simple(rec, &h),
            Scheme::Layered => map_data_layered(rec, &h, &g),
        })
        .collect::<Result<Vec<_>>>()?;
    let query_msgs = queries
        .par_iter()
        .map(|rec| map_query(rec, scheme, &h, &g, params, seeds.offsets))
        .collect::<Result<Vec<_>>>()?;

    // shuffle
    let mut ledger = ShuffleLedger::default();
    let mut groups: BTreeMap<&MessageKey, Group<'_, '_, T>> = BTreeMap::new();
    for msg in &data_msgs {
        ledger.record(msg);
        if let Payload::Data { bucket, record } = &msg.payload {
            groups
                .entry(&msg.key)
                .or_default()
                .data
                .push((bucket.as_ref(), *record));
        }
    }
    for (rec, msgs) in queries.iter().zip(&query_msgs) {
        ledger.per_query_keys.insert(rec.id, msgs.len());
        for msg in msgs {
            ledger.record(msg);
            groups.entry(&msg.key).or_default().queries.push(rec);
        }
    }

    let mut loads: BTreeMap<MachineId, MachineLoad> = BTreeMap::new();
    let keyed: Vec<(MachineId, &MessageKey, &Group<'_, '_, T>)> = groups
        .iter()
        .map(|(key, grp)| {
            let machine = assign_machine(key, cluster);
            let load = loads.entry(machine).or_insert_with(|| MachineLoad {
                machine_id: machine,
                ..MachineLoad::default()
            });
            load.num_points += grp.data.len() as u64;
            load.num_queries += grp.queries.len() as u64;
            (machine, *key, grp)
        })
        .collect();

    // reduce
    let reduced = keyed
        .par_iter()
        .filter(|(_, _, grp)| !grp.data.is_empty() && !grp.queries.is_empty())
        .map(|&(machine, key, grp)| reduce_group(key, grp, &h, &g, params, seeds.offsets).map(|r| (machine, r)))
        .collect::<Result<Vec<_>>>()?;

    let mut results = Vec::new();
    for (machine, r) in reduced {
        if let Some(load) = loads.get_mut(&machine) {
            load.num_distance_evals += r.distance_evals;
        }
        results.extend(r.matches);
    }
    results.sort_unstable_by_key(|m| (m.query_id, m.point_id));
    if let Some(w) = results
        .windows(2)
        .find(|w| (w[0].query_id, w[0].point_id) == (w[1].query_id, w[1].point_id))
    {
        return Err(Error::Integrity(format!(
            "pair (query {}, point {}) reported by more than one reducer",
            w[0].query_id, w[0].point_id
        )));
    }

    Ok(JobOutput {
        results,
        ledger,
        loads: loads.into_values().collect(),
    })
}

fn reduce_group<T: Scalar>(
    key: &MessageKey,
    grp: &Group<'_, '_, T>,
    h: &HashFamilyH<T>,
    g: &HashFunctionG<T>,
    params: &LshParams,
    offset_seed: u64,
) -> Result<Reduced<T>> {
    match key {
        MessageKey::Bucket(bucket) => {
            let data: Vec<&DataRecord<T>> = grp.data.iter().map(|&(_, rec)| rec).collect();
            Ok(reduce_simple(bucket, &data, &grp.queries, params))
        }
        MessageKey::Machine(machine_key) => {
            let data = grp
                .data
                .iter()
                .map(|&(bucket, rec)| {
                    bucket.map(|b| (b, rec)).ok_or_else(|| {
                        Error::Integrity(format!("layered data point {} carries no inner bucket", rec.id))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            reduce_layered(*machine_key, &data, &grp.queries, h, g, params, offset_seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(dim: usize) -> LshParams {
        LshParams {
            dim,
            k: 8,
            inner_width: 0.5,
            outer_width: 8f64.sqrt(),
            radius: 0.3,
            approx_ratio: 2.0,
            num_offsets: 30,
            n: 300,
            probe_self: true,
        }
    }

    fn planted(n: usize, nq: usize, dim: usize, seed: u64) -> (Vec<DataRecord<f64>>, Vec<QueryRecord<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (dim as f64).sqrt();
        let data: Vec<DataRecord<f64>> = (0..n as u64)
            .map(|id| DataRecord {
                id,
                point: (0..dim).map(|_| s * rng::normal(&mut rng)).collect(),
            })
            .collect();
        let queries = (0..nq as u64)
            .map(|id| {
                let parent = &data[rng.random_range(0..n)];
                QueryRecord {
                    id,
                    point: parent.point.iter().map(|x| x + 0.3 * s * rng::normal(&mut rng)).collect(),
                }
            })
            .collect();
        (data, queries)
    }

    #[test]
    fn identity_and_single_machine_mapping() {
        let id = ClusterConfig {
            mapping: MappingMode::Identity,
            ..ClusterConfig::default()
        };
        assert_eq!(assign_machine(&MessageKey::Machine(MachineKey(7)), &id), MachineId(7));
        assert_eq!(assign_machine(&MessageKey::Machine(MachineKey(-3)), &id), MachineId(-3));
        let b = MessageKey::Bucket(BucketId(vec![1, -2, 3]));
        assert_eq!(assign_machine(&b, &id), assign_machine(&b.clone(), &id));
        let one = ClusterConfig {
            num_machines: 1,
            ..ClusterConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let key = MessageKey::Machine(MachineKey(rng.random()));
            assert_eq!(assign_machine(&key, &one), MachineId(0));
        }
    }

    #[test]
    fn stable_hash_reference_values() {
        assert_eq!(stable_hash(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(stable_hash(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(stable_hash(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn modulo_mapping_is_uniform() {
        // chi-square with 15 degrees of freedom; 1% critical value 30.578
        let cfg = ClusterConfig {
            num_machines: 16,
            ..ClusterConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut counts = [0u64; 16];
        let n = 10_000;
        for _ in 0..n {
            let key = MessageKey::Machine(MachineKey(rng.random_range(-1_000_000..1_000_000)));
            counts[assign_machine(&key, &cfg).0 as usize] += 1;
        }
        let e = n as f64 / 16.0;
        let chi: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi < 30.578, "chi-square {chi}");

        // consecutive small keys, as produced by the outer hash
        let mut counts = [0u64; 16];
        for v in -5_000..5_000 {
            counts[assign_machine(&MessageKey::Machine(MachineKey(v)), &cfg).0 as usize] += 1;
        }
        let chi: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi < 30.578, "chi-square {chi}");
    }

    #[test]
    fn empty_data_gives_empty_results() {
        let (_, queries) = planted(10, 5, 4, 1);
        let out = run_job::<f64>(&[], &queries, Scheme::Layered, &params(4), &ClusterConfig::default(), 3).unwrap();
        assert!(out.results.is_empty());
        assert_eq!(out.ledger.data_messages, 0);
        assert_eq!(out.ledger.query_messages as usize, out.ledger.per_query_keys.values().sum::<usize>());
    }

    #[test]
    fn schemes_agree_and_ledger_is_consistent() {
        let (data, queries) = planted(300, 60, 6, 2);
        let p = params(6);
        let cfg = ClusterConfig::default();
        let s = run_job(&data, &queries, Scheme::Simple, &p, &cfg, 11).unwrap();
        let l = run_job(&data, &queries, Scheme::Layered, &p, &cfg, 11).unwrap();
        let pairs = |o: &JobOutput<f64>| o.results.iter().map(|m| (m.query_id, m.point_id)).collect::<Vec<_>>();
        assert_eq!(pairs(&s), pairs(&l));
        assert!(!s.results.is_empty());
        assert!(s.results.iter().all(|m| m.distance <= 0.6));

        for out in [&s, &l] {
            assert_eq!(out.ledger.data_messages, 300);
            let sum: usize = out.ledger.per_query_keys.values().sum();
            assert_eq!(out.ledger.query_messages as usize, sum);
            assert_eq!(out.loads.iter().map(|m| m.num_points).sum::<u64>(), 300);
            assert_eq!(out.loads.iter().map(|m| m.num_queries).sum::<u64>(), out.ledger.query_messages);
        }
        assert_eq!(s.ledger.data_bytes, 300 * (8 * 8 + 8 + 4 * 6));
        assert_eq!(l.ledger.data_bytes, 300 * (8 + 8 * 8 + 8 + 4 * 6));
        assert!(l.ledger.query_messages <= s.ledger.query_messages);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let (data, queries) = planted(400, 50, 5, 3);
        let p = params(5);
        for scheme in [Scheme::Simple, Scheme::Layered] {
            let one = ClusterConfig { workers: 1, ..ClusterConfig::default() };
            let many = ClusterConfig { workers: 8, ..ClusterConfig::default() };
            let a = run_job(&data, &queries, scheme, &p, &one, 5).unwrap();
            let b = run_job(&data, &queries, scheme, &p, &many, 5).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn duplicate_ids_and_bad_dims_are_rejected() {
        let (mut data, queries) = planted(20, 3, 4, 4);
        data[1].id = data[0].id;
        assert!(run_job(&data, &queries, Scheme::Simple, &params(4), &ClusterConfig::default(), 0).is_err());
        let (data, queries) = planted(20, 3, 4, 4);
        assert!(matches!(
            run_job(&data, &queries, Scheme::Simple, &params(5), &ClusterConfig::default(), 0),
            Err(Error::DimensionMismatch { .. })
        ));
        let bad = ClusterConfig { num_machines: 0, ..ClusterConfig::default() };
        assert!(run_job(&data, &queries, Scheme::Simple, &params(4), &bad, 0).is_err());
    }

    #[test]
    fn load_summary_cases() {
        let mk = |id, pts| MachineLoad {
            machine_id: MachineId(id),
            num_points: pts,
            num_queries: 0,
            num_distance_evals: 0,
        };
        let even = load_summary(&[mk(0, 5), mk(1, 5), mk(2, 5)]).unwrap();
        assert_eq!(even.max as f64, even.avg);
        let skew = load_summary(&[mk(0, 100), mk(1, 0)]).unwrap();
        assert_eq!(skew.max, 100);
        assert_eq!(skew.avg, 100.0);
        assert!(load_summary(&[]).is_err());
    }
}
