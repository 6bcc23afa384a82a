//! Query offsets for Entropy LSH and the key sets they probe.
//!
//! Offsets for query `q_id` come from stream `(seed, Offsets, q_id)`. Offset
//! `i` always consumes the `i`-th block of that stream, so a run with `L`
//! offsets sees a prefix of the offsets of a run with `L' > L`, and a reducer
//! can regenerate exactly what the mapper used.

use std::collections::BTreeSet;

use crate::error::{check_dim, Error, Result};
use crate::lsh::{BucketId, HashFamilyH, HashFunctionG, LshParams, MachineKey};
use crate::rng::{self, Domain};
use crate::scalar::Scalar;

/// The `L` offsets `δ_i` of one query, each of norm `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetSet<T> {
    pub query_id: u64,
    pub offsets: Vec<Vec<T>>,
    pub radius: f64,
    /// Probe `q` itself in addition to `q + δ_i`.
    pub probe_self: bool,
}

impl<T: Scalar> OffsetSet<T> {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Points whose buckets the query probes, in probe order: `q` first when
    /// self-probing, then `q + δ_1, ..., q + δ_L`.
    pub fn probe_points(&self, q: &[T]) -> Vec<Vec<T>> {
        let mut out = Vec::with_capacity(self.offsets.len() + usize::from(self.probe_self));
        if self.probe_self {
            out.push(q.to_vec());
        }
        out.extend(
            self.offsets
                .iter()
                .map(|delta| q.iter().zip(delta).map(|(&a, &b)| a + b).collect()),
        );
        out
    }

    /// Inner buckets of [`probe_points`](Self::probe_points), duplicates kept.
    pub fn probe_buckets(&self, q: &[T], h: &HashFamilyH<T>) -> Result<Vec<BucketId>> {
        check_dim(h.dim(), q.len())?;
        if let Some(delta) = self.offsets.first() {
            check_dim(h.dim(), delta.len())?;
        }
        self.probe_points(q).iter().map(|p| h.hash(p)).collect()
    }
}

/// Draws `L` directions uniformly on the sphere of radius `r` by normalizing
/// standard Gaussian vectors.
pub fn sample_offsets<T: Scalar>(query_id: u64, params: &LshParams, seed: u64) -> Result<OffsetSet<T>> {
    params.validate()?;
    let mut rng = rng::stream(seed, Domain::Offsets, query_id);
    let mut offsets = Vec::with_capacity(params.num_offsets);
    let mut buf = vec![0.0f64; params.dim];
    while offsets.len() < params.num_offsets {
        for x in buf.iter_mut() {
            *x = rng::normal(&mut rng);
        }
        let norm = buf.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let scale = params.radius / norm;
        offsets.push(buf.iter().map(|&x| T::from_f64_lossy(x * scale)).collect());
    }
    Ok(OffsetSet {
        query_id,
        offsets,
        radius: params.radius,
        probe_self: params.probe_self,
    })
}

/// Distinct inner buckets probed by a query.
pub fn probe_keys_simple<T: Scalar>(
    q: &[T],
    offsets: &OffsetSet<T>,
    h: &HashFamilyH<T>,
) -> Result<BTreeSet<BucketId>> {
    Ok(offsets.probe_buckets(q, h)?.into_iter().collect())
}

/// Distinct outer keys probed by a query; its size is `f_q`.
pub fn probe_keys_layered<T: Scalar>(
    q: &[T],
    offsets: &OffsetSet<T>,
    h: &HashFamilyH<T>,
    g: &HashFunctionG<T>,
) -> Result<BTreeSet<MachineKey>> {
    check_dim(h.k(), g.k())?;
    offsets
        .probe_buckets(q, h)?
        .iter()
        .map(|b| g.hash_bucket(b))
        .collect()
}

pub(crate) fn ensure_probes(offsets: &OffsetSet<impl Scalar>) -> Result<()> {
    if offsets.is_empty() && !offsets.probe_self {
        return Err(Error::param("a query needs at least one offset or the self probe"));
    }
    Ok(())
}
