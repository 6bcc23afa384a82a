//! Map and reduce steps of the two distribution schemes.
//!
//! *Simple* keys each data point by its inner bucket `H(p)` and sends a query
//! to every distinct bucket its probes land in. *Layered* keys data by the
//! outer hash `GH(p)` and carries `H(p)` in the value, so a query only travels
//! to the distinct outer keys of its probes; the reducer regenerates the
//! offsets and searches only the inner buckets that belong to its key.
//!
//! Both schemes search exactly the buckets `{H(q + δ_i)}`, so for fixed hash
//! functions and offsets they report the same pairs.
//!
//! # Message encoding
//!
//! Byte sizes count a fixed little-endian encoding, with no framing:
//!
//! | part                    | bytes      |
//! |-------------------------|------------|
//! | outer key               | 8 (`i64`)  |
//! | inner bucket key        | `8 k`      |
//! | data value (Simple)     | `8 + 4 d`  |
//! | data value (Layered)    | `8 k + 8 + 4 d` |
//! | query value             | `8 + 4 d`  |
//!
//! Identifiers are `u64`, bucket coordinates `i64`, point coordinates `f32`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::lsh::{BucketId, HashFamilyH, HashFunctionG, LshParams, MachineKey};
use crate::probe::{ensure_probes, probe_keys_layered, probe_keys_simple, sample_offsets};
use crate::rng;
use crate::scalar::{distance, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct DataRecord<T> {
    pub id: u64,
    pub point: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryRecord<T> {
    pub id: u64,
    pub point: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Simple,
    Layered,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Simple => "simple",
            Scheme::Layered => "layered",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Scheme::Simple),
            "layered" => Ok(Scheme::Layered),
            other => Err(Error::param(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Seeds of the three random objects of one run, split from a single run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSeeds {
    pub inner: u64,
    pub outer: u64,
    pub offsets: u64,
}

impl RunSeeds {
    pub fn from_seed(seed: u64) -> Self {
        RunSeeds {
            inner: rng::derive_seed(seed, 1),
            outer: rng::derive_seed(seed, 2),
            offsets: rng::derive_seed(seed, 3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKey {
    Bucket(BucketId),
    Machine(MachineKey),
}

impl MessageKey {
    pub fn write_canonical(&self, out: &mut Vec<u8>) {
        match self {
            MessageKey::Bucket(b) => b.write_canonical(out),
            MessageKey::Machine(m) => m.write_canonical(out),
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.canonical_len());
        self.write_canonical(&mut out);
        out
    }

    pub fn canonical_len(&self) -> usize {
        match self {
            MessageKey::Bucket(b) => b.canonical_len(),
            MessageKey::Machine(_) => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload<'a, T> {
    /// A data point; `bucket` is `H(p)` and is only carried by Layered.
    Data {
        bucket: Option<BucketId>,
        record: &'a DataRecord<T>,
    },
    Query(&'a QueryRecord<T>),
}

/// One shuffled (key, value) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyValueMessage<'a, T> {
    pub key: MessageKey,
    pub payload: Payload<'a, T>,
    pub byte_size: usize,
}

impl<'a, T: Scalar> KeyValueMessage<'a, T> {
    fn new(key: MessageKey, payload: Payload<'a, T>) -> Self {
        let value_len = match &payload {
            Payload::Data { bucket, record } => {
                bucket.as_ref().map_or(0, BucketId::canonical_len) + 8 + 4 * record.point.len()
            }
            Payload::Query(q) => 8 + 4 * q.point.len(),
        };
        let byte_size = key.canonical_len() + value_len;
        KeyValueMessage {
            key,
            payload,
            byte_size,
        }
    }

    pub fn is_query(&self) -> bool {
        matches!(self.payload, Payload::Query(_))
    }

    /// The encoded bytes whose length is `byte_size`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_size);
        self.key.write_canonical(&mut out);
        let (id, point) = match &self.payload {
            Payload::Data { bucket, record } => {
                if let Some(b) = bucket {
                    b.write_canonical(&mut out);
                }
                (record.id, &record.point)
            }
            Payload::Query(q) => (q.id, &q.point),
        };
        out.extend_from_slice(&id.to_le_bytes());
        for x in point {
            out.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
        out
    }
}

/// A reported pair `(q, p)` with `||p - q|| <= c r`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult<T> {
    pub query_id: u64,
    pub point_id: u64,
    pub distance: T,
}

/// Output of one reduce invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct Reduced<T> {
    pub matches: Vec<MatchResult<T>>,
    /// Point-to-query distance computations performed.
    pub distance_evals: u64,
}

pub fn map_data_simple<'a, T: Scalar>(
    rec: &'a DataRecord<T>,
    h: &HashFamilyH<T>,
) -> Result<KeyValueMessage<'a, T>> {
    let key = h.hash(&rec.point)?;
    Ok(KeyValueMessage::new(
        MessageKey::Bucket(key),
        Payload::Data { bucket: None, record: rec },
    ))
}

pub fn map_data_layered<'a, T: Scalar>(
    rec: &'a DataRecord<T>,
    h: &HashFamilyH<T>,
    g: &HashFunctionG<T>,
) -> Result<KeyValueMessage<'a, T>> {
    check_dim(h.k(), g.k())?;
    let bucket = h.hash(&rec.point)?;
    let key = g.hash_bucket(&bucket)?;
    Ok(KeyValueMessage::new(
        MessageKey::Machine(key),
        Payload::Data {
            bucket: Some(bucket),
            record: rec,
        },
    ))
}

/// One message per distinct key probed by the query, in key order.
pub fn map_query<'a, T: Scalar>(
    rec: &'a QueryRecord<T>,
    scheme: Scheme,
    h: &HashFamilyH<T>,
    g: &HashFunctionG<T>,
    params: &LshParams,
    offset_seed: u64,
) -> Result<Vec<KeyValueMessage<'a, T>>> {
    check_dim(params.dim, rec.point.len())?;
    let offsets = sample_offsets(rec.id, params, offset_seed)?;
    ensure_probes(&offsets)?;
    let msgs = match scheme {
        Scheme::Simple => probe_keys_simple(&rec.point, &offsets, h)?
            .into_iter()
            .map(|b| KeyValueMessage::new(MessageKey::Bucket(b), Payload::Query(rec)))
            .collect(),
        Scheme::Layered => probe_keys_layered(&rec.point, &offsets, h, g)?
            .into_iter()
            .map(|m| KeyValueMessage::new(MessageKey::Machine(m), Payload::Query(rec)))
            .collect(),
    };
    Ok(msgs)
}

fn match_threshold<T: Scalar>(params: &LshParams) -> T {
    T::from_f64_lossy(params.match_radius())
}

/// Every pair of the bucket's cross product within `c r` (closed threshold).
pub fn reduce_simple<T: Scalar>(
    _key: &BucketId,
    data: &[&DataRecord<T>],
    queries: &[&QueryRecord<T>],
    params: &LshParams,
) -> Reduced<T> {
    let thr = match_threshold::<T>(params);
    let mut matches = Vec::new();
    for q in queries {
        for p in data {
            let dist = distance(&q.point, &p.point);
            if dist <= thr {
                matches.push(MatchResult {
                    query_id: q.id,
                    point_id: p.id,
                    distance: dist,
                });
            }
        }
    }
    Reduced {
        matches,
        distance_evals: (data.len() * queries.len()) as u64,
    }
}

/// Reduce step of Layered LSH for one outer key.
///
/// Data arrive as `(H(p), p)`. For each query the offsets are regenerated
/// from `offset_seed`; every probe bucket `H(q + δ_i)` with `G(H(q + δ_i)) ==
/// key` that this query has not yet searched here is scanned.
pub fn reduce_layered<T: Scalar>(
    key: MachineKey,
    data: &[(&BucketId, &DataRecord<T>)],
    queries: &[&QueryRecord<T>],
    h: &HashFamilyH<T>,
    g: &HashFunctionG<T>,
    params: &LshParams,
    offset_seed: u64,
) -> Result<Reduced<T>> {
    let mut buckets: BTreeMap<&BucketId, Vec<&DataRecord<T>>> = BTreeMap::new();
    for &(bucket, rec) in data {
        let routed = g.hash_bucket(bucket)?;
        if routed != key {
            return Err(Error::Integrity(format!(
                "point {} with bucket {bucket} has outer key {routed} but reached key {key}",
                rec.id
            )));
        }
        buckets.entry(bucket).or_default().push(rec);
    }

    let thr = match_threshold::<T>(params);
    let mut matches = Vec::new();
    let mut distance_evals = 0u64;
    for q in queries {
        let offsets = sample_offsets(q.id, params, offset_seed)?;
        let mut searched = BTreeSet::new();
        for bucket in offsets.probe_buckets(&q.point, h)? {
            if g.hash_bucket(&bucket)? != key || searched.contains(&bucket) {
                continue;
            }
            if let Some(points) = buckets.get(&bucket) {
                for p in points {
                    distance_evals += 1;
                    let dist = distance(&q.point, &p.point);
                    if dist <= thr {
                        matches.push(MatchResult {
                            query_id: q.id,
                            point_id: p.id,
                            distance: dist,
                        });
                    }
                }
            }
            searched.insert(bucket);
        }
    }
    Ok(Reduced {
        matches,
        distance_evals,
    })
}
