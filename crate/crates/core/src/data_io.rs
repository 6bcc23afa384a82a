//! Planted datasets, the exact near-neighbor oracle, and vector files.
//!
//! # LSHV vector files
//!
//! ```text
//! offset  size     field
//! 0       4        magic "LSHV"
//! 4       4        version, u32 LE (= 1)
//! 8       4        dimension d, u32 LE (>= 1)
//! 12      8        point count n, u64 LE
//! 20      4 n d    coordinates, f32 LE, point-major
//! ```
//!
//! Point ids are implicit: the `i`-th point has id `i`.
//!
//! # Ground-truth cache
//!
//! A cached ground truth for radius `ρ` is stored as two files named
//! `gt-<sha256 prefix>-<ρ bits>`: an LSHV file with `d = 1` listing every
//! match distance, and a sidecar index `.idx`:
//!
//! ```text
//! 0   4  magic "LSGT"
//! 4   4  version, u32 LE (= 1)
//! 8   8  ρ, f64 LE
//! 16  8  query count, u64 LE
//! then per query: query id u64, match count m u64, m point ids u64
//! ```
//!
//! Entries appear in query order and, within a query, by ascending distance.
//! The key hashes the LSHV encodings of the data and query sets.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::rng::{self, Domain};
use crate::scalar::{squared_distance, Scalar};
use crate::schemes::{DataRecord, QueryRecord};

pub const LSHV_MAGIC: &[u8; 4] = b"LSHV";
pub const LSHV_VERSION: u32 = 1;
pub const LSHV_HEADER_LEN: usize = 20;
pub const GT_MAGIC: &[u8; 4] = b"LSGT";
pub const GT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub records: Vec<DataRecord<T>>,
    pub dim: usize,
    pub provenance: String,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset with ids `0..n` from raw points.
    pub fn from_points(points: Vec<Vec<T>>, dim: usize, provenance: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim must be >= 1"));
        }
        let records = points
            .into_iter()
            .enumerate()
            .map(|(i, point)| {
                check_dim(dim, point.len())?;
                Ok(DataRecord { id: i as u64, point })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            records,
            dim,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The same points as query records.
    pub fn to_queries(&self) -> Vec<QueryRecord<T>> {
        self.records
            .iter()
            .map(|r| QueryRecord {
                id: r.id,
                point: r.point.clone(),
            })
            .collect()
    }

    /// Converts coordinates, e.g. `f32` file contents to `f64`.
    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            records: self
                .records
                .iter()
                .map(|r| DataRecord {
                    id: r.id,
                    point: r.point.iter().map(|&x| U::from_f64_lossy(x.to_f64_lossless())).collect(),
                })
                .collect(),
            dim: self.dim,
            provenance: self.provenance.clone(),
        }
    }
}

/// A planted instance: data, queries, and the data point each query was derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedInstance<T> {
    pub data: Dataset<T>,
    pub queries: Dataset<T>,
    pub parents: Vec<u64>,
}

/// Data coordinates are `N(0, 1/sqrt(d))`, so points have norm close to 1.
/// Query `j` picks a parent uniformly (with replacement) and adds a
/// perturbation with coordinates `N(0, r/sqrt(d))`, so its expected squared
/// distance to the parent is `r^2`.
///
/// Point `i` is drawn from stream `(seed, PlantedData, i)`; query `j` draws
/// its parent index and then its perturbation from `(seed, PlantedQuery, j)`.
pub fn generate_planted<T: Scalar>(n: usize, n_q: usize, dim: usize, r: f64, seed: u64) -> Result<PlantedInstance<T>> {
    if n == 0 || n_q == 0 || dim == 0 {
        return Err(Error::param("n, n_q and d must all be >= 1"));
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::param(format!("r must be finite and > 0, got {r}")));
    }
    let sigma = 1.0 / (dim as f64).sqrt();
    let data_points: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, Domain::PlantedData, i);
            (0..dim).map(|_| sigma * rng::normal(&mut rng)).collect()
        })
        .collect();
    let (parents, query_points): (Vec<u64>, Vec<Vec<f64>>) = (0..n_q as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng::stream(seed, Domain::PlantedQuery, j);
            let parent = rng.random_range(0..n);
            let point = data_points[parent]
                .iter()
                .map(|&x| x + r * sigma * rng::normal(&mut rng))
                .collect();
            (parent as u64, point)
        })
        .unzip();
    let to_t = |pts: Vec<Vec<f64>>| -> Vec<Vec<T>> {
        pts.into_iter()
            .map(|p| p.into_iter().map(T::from_f64_lossy).collect())
            .collect()
    };
    let tag = format!("planted n={n} n_q={n_q} d={dim} r={r} seed={seed}");
    Ok(PlantedInstance {
        data: Dataset::from_points(to_t(data_points), dim, format!("{tag} data"))?,
        queries: Dataset::from_points(to_t(query_points), dim, format!("{tag} queries"))?,
        parents,
    })
}

/// Exact linear scan: every point within `rho`, by ascending distance (ties by id).
pub fn brute_force_near<T: Scalar>(data: &Dataset<T>, q: &[T], rho: f64) -> Result<Vec<(u64, T)>> {
    check_dim(data.dim, q.len())?;
    // same comparison as the reducers, so ties resolve identically
    let rho = T::from_f64_lossy(rho);
    let mut out: Vec<(u64, T)> = data
        .records
        .iter()
        .filter_map(|rec| {
            let d = squared_distance(&rec.point, q).sqrt();
            (d <= rho).then_some((rec.id, d))
        })
        .collect();
    out.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distances").then(a.0.cmp(&b.0)));
    Ok(out)
}

/// All data points within `rho` of each query.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<T> {
    pub rho: f64,
    pub near: BTreeMap<u64, Vec<(u64, T)>>,
}

impl<T: Scalar> GroundTruth<T> {
    pub fn compute(data: &Dataset<T>, queries: &[QueryRecord<T>], rho: f64) -> Result<Self> {
        let lists = queries
            .par_iter()
            .map(|q| brute_force_near(data, &q.point, rho).map(|l| (q.id, l)))
            .collect::<Result<Vec<_>>>()?;
        Ok(GroundTruth {
            rho,
            near: lists.into_iter().collect(),
        })
    }

    pub fn neighbors(&self, query_id: u64) -> &[(u64, T)] {
        self.near.get(&query_id).map_or(&[], Vec::as_slice)
    }
}

pub fn encode_vectors<T: Scalar>(ds: &Dataset<T>) -> Result<Vec<u8>> {
    let dim = u32::try_from(ds.dim).map_err(|_| Error::param("dimension does not fit in u32"))?;
    let mut out = Vec::with_capacity(LSHV_HEADER_LEN + 4 * ds.dim * ds.len());
    out.extend_from_slice(LSHV_MAGIC);
    out.extend_from_slice(&LSHV_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for (i, rec) in ds.records.iter().enumerate() {
        if rec.id != i as u64 {
            return Err(Error::param(format!("record {i} has id {}; LSHV ids are positional", rec.id)));
        }
        check_dim(ds.dim, rec.point.len())?;
        for x in &rec.point {
            let v = x.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

fn le_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().expect("8 bytes"))
}

pub fn decode_vectors<T: Scalar>(bytes: &[u8], provenance: impl Into<String>) -> Result<Dataset<T>> {
    if bytes.len() < LSHV_HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, "truncated header"));
    }
    if &bytes[0..4] != LSHV_MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = le_u32(&bytes[4..8]);
    if version != LSHV_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let dim = le_u32(&bytes[8..12]) as usize;
    if dim == 0 {
        return Err(Error::format(8, "dimension must be >= 1"));
    }
    let n = le_u64(&bytes[12..20]);
    let body = (n as u128) * (dim as u128) * 4;
    let expected = LSHV_HEADER_LEN as u128 + body;
    if expected > usize::MAX as u128 {
        return Err(Error::format(12, format!("dimension overflow: {n} points of dimension {dim}")));
    }
    let expected = expected as usize;
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated: expected {expected} bytes for {n} points of dimension {dim}"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(expected as u64, "trailing bytes after last point"));
    }
    let records = bytes[LSHV_HEADER_LEN..]
        .chunks_exact(4 * dim)
        .enumerate()
        .map(|(i, chunk)| DataRecord {
            id: i as u64,
            point: chunk
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))))
                .collect(),
        })
        .collect();
    Ok(Dataset {
        records,
        dim,
        provenance: provenance.into(),
    })
}

pub fn write_vectors<T: Scalar>(path: impl AsRef<Path>, ds: &Dataset<T>) -> Result<()> {
    let bytes = encode_vectors(ds)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn read_vectors<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_vectors(&bytes, path.display().to_string())
}

/// Disk cache of ground truths keyed by (data, queries, ρ).
#[derive(Clone, Debug)]
pub struct GroundTruthCache {
    dir: PathBuf,
}

impl GroundTruthCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        GroundTruthCache { dir: dir.into() }
    }

    fn stem<T: Scalar>(&self, data: &Dataset<T>, queries: &Dataset<T>, rho: f64) -> Result<PathBuf> {
        let mut hasher = Sha256::new();
        hasher.update(encode_vectors(data)?);
        hasher.update(encode_vectors(queries)?);
        let digest = hasher.finalize();
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        Ok(self.dir.join(format!("gt-{hex}-{:016x}", rho.to_bits())))
    }

    /// Loads the cached ground truth or computes and stores it. Distances are
    /// recomputed exactly from the data on load.
    pub fn load_or_compute<T: Scalar>(
        &self,
        data: &Dataset<T>,
        queries: &Dataset<T>,
        rho: f64,
    ) -> Result<GroundTruth<T>> {
        let stem = self.stem(data, queries, rho)?;
        let idx = stem.with_extension("idx");
        if idx.exists() {
            return read_ground_truth(&idx, data, queries, rho);
        }
        let gt = GroundTruth::compute(data, &queries.to_queries(), rho)?;
        fs::create_dir_all(&self.dir)?;
        write_ground_truth(&stem, &gt)?;
        Ok(gt)
    }
}

fn write_ground_truth<T: Scalar>(stem: &Path, gt: &GroundTruth<T>) -> Result<()> {
    let mut idx = Vec::new();
    idx.extend_from_slice(GT_MAGIC);
    idx.extend_from_slice(&GT_VERSION.to_le_bytes());
    idx.extend_from_slice(&gt.rho.to_le_bytes());
    idx.extend_from_slice(&(gt.near.len() as u64).to_le_bytes());
    let mut dists = Vec::new();
    for (qid, list) in &gt.near {
        idx.extend_from_slice(&qid.to_le_bytes());
        idx.extend_from_slice(&(list.len() as u64).to_le_bytes());
        for (pid, d) in list {
            idx.extend_from_slice(&pid.to_le_bytes());
            dists.push(vec![*d]);
        }
    }
    let ds = Dataset {
        records: dists
            .into_iter()
            .enumerate()
            .map(|(i, point)| DataRecord { id: i as u64, point })
            .collect(),
        dim: 1,
        provenance: String::new(),
    };
    write_vectors(stem.with_extension("lshv"), &ds)?;
    fs::write(stem.with_extension("idx"), idx)?;
    Ok(())
}

fn read_ground_truth<T: Scalar>(
    idx_path: &Path,
    data: &Dataset<T>,
    queries: &Dataset<T>,
    rho: f64,
) -> Result<GroundTruth<T>> {
    let bytes = fs::read(idx_path)?;
    let mut pos = 0usize;
    let mut take = |len: usize| -> Result<(u64, &[u8])> {
        let end = pos + len;
        if end > bytes.len() {
            return Err(Error::format(bytes.len() as u64, "truncated ground-truth index"));
        }
        let at = pos as u64;
        pos = end;
        Ok((at, &bytes[at as usize..end]))
    };
    if take(4)?.1 != GT_MAGIC {
        return Err(Error::format(0, "bad ground-truth magic"));
    }
    let version = le_u32(take(4)?.1);
    if version != GT_VERSION {
        return Err(Error::format(4, format!("unsupported ground-truth version {version}")));
    }
    let stored_rho = f64::from_le_bytes(take(8)?.1.try_into().expect("8 bytes"));
    if stored_rho.to_bits() != rho.to_bits() {
        return Err(Error::format(8, format!("cached radius {stored_rho} differs from {rho}")));
    }
    let nq = le_u64(take(8)?.1);
    let mut near = BTreeMap::new();
    for _ in 0..nq {
        let (at, raw) = take(8)?;
        let qid = le_u64(raw);
        let q = queries
            .records
            .get(qid as usize)
            .filter(|r| r.id == qid)
            .ok_or_else(|| Error::format(at, format!("cached query id {qid} not in query set")))?;
        let m = le_u64(take(8)?.1);
        let mut list = Vec::new();
        for _ in 0..m {
            let (at, raw) = take(8)?;
            let pid = le_u64(raw);
            let p = data
                .records
                .get(pid as usize)
                .filter(|r| r.id == pid)
                .ok_or_else(|| Error::format(at, format!("cached point id {pid} not in dataset")))?;
            // exact distances come from the data, not the f32 copy on disk
            list.push((pid, squared_distance(&p.point, &q.point).sqrt()));
        }
        near.insert(qid, list);
    }
    Ok(GroundTruth { rho, near })
}
