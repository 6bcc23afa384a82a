//! p-stable hash functions for the Euclidean norm.
//!
//! The inner family `H = (h_1, ..., h_k)` maps a `d`-vector to a bucket of `k`
//! integers, `h_i(v) = floor((a_i . v + b_i) / W)`, with Gaussian rows `a_i`
//! and `b_i` uniform on `[0, W)`. Its unfloored companion `Γ` returns the
//! projections before flooring. The outer hash `G` is a one-dimensional hash of
//! the same shape over `R^k` with bin width `D`, applied to inner buckets to
//! decide which machine stores them.

use std::fmt;

use crate::error::{check_dim, Error, Result};
use crate::rng::{self, Domain};
use crate::scalar::{dot, Scalar};

/// Value of `ε` used by the load-balance threshold when none is configured.
pub const DEFAULT_EPSILON: f64 = 0.1;

/// Upper cap applied by [`default_num_offsets`].
pub const MAX_DEFAULT_OFFSETS: usize = 1000;

/// Sizing of one LSH instance and the search it serves.
#[derive(Clone, Debug, PartialEq)]
pub struct LshParams {
    /// Dimension of data and query points.
    pub dim: usize,
    /// Number of concatenated inner hashes.
    pub k: usize,
    /// Inner bin width `W`.
    pub inner_width: f64,
    /// Outer bin width `D`.
    pub outer_width: f64,
    /// Near radius `r`; also the radius of the query offset sphere.
    pub radius: f64,
    /// Approximation ratio `c > 1`; matches are reported within `c * r`.
    pub approx_ratio: f64,
    /// Number of query offsets `L`.
    pub num_offsets: usize,
    /// Dataset size.
    pub n: usize,
    /// Also probe the bucket of the query point itself.
    pub probe_self: bool,
}

impl Default for LshParams {
    fn default() -> Self {
        LshParams {
            dim: 100,
            k: 10,
            inner_width: 0.5,
            outer_width: 10f64.sqrt(),
            radius: 0.3,
            approx_ratio: 2.0,
            num_offsets: 100,
            n: 1,
            probe_self: true,
        }
    }
}

impl LshParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::param("dim must be >= 1"));
        }
        if self.k == 0 {
            return Err(Error::param("k must be >= 1"));
        }
        positive("inner width W", self.inner_width)?;
        positive("outer width D", self.outer_width)?;
        positive("radius r", self.radius)?;
        if !(self.approx_ratio.is_finite() && self.approx_ratio > 1.0) {
            return Err(Error::param(format!(
                "approximation ratio c must be > 1, got {}",
                self.approx_ratio
            )));
        }
        // an empty offset set only makes sense when the query itself is probed
        if self.num_offsets == 0 && !self.probe_self {
            return Err(Error::param("L must be >= 1 unless probe-self is enabled"));
        }
        if self.n == 0 {
            return Err(Error::param("n must be >= 1"));
        }
        Ok(())
    }

    /// Match threshold `c * r`.
    pub fn match_radius(&self) -> f64 {
        self.approx_ratio * self.radius
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be finite and > 0, got {v}")))
    }
}

/// Inner bucket: the value of `H(v)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BucketId(pub Vec<i64>);

impl BucketId {
    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Canonical encoding: each coordinate as a little-endian `i64`.
    pub fn write_canonical(&self, out: &mut Vec<u8>) {
        for c in &self.0 {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }

    pub fn canonical_len(&self) -> usize {
        8 * self.0.len()
    }

    /// Squared Euclidean distance between two buckets seen as integer vectors.
    pub fn squared_distance(&self, other: &BucketId) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| {
                let t = (a - b) as f64;
                t * t
            })
            .sum()
    }
}

impl fmt::Display for BucketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "]")
    }
}

/// Outer key: the value of `G(H(v))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MachineKey(pub i64);

impl MachineKey {
    pub fn write_canonical(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0.to_le_bytes());
    }
}

impl fmt::Display for MachineKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn floor_to_i64<T: Scalar>(x: T) -> Result<i64> {
    x.floor()
        .to_i64()
        .ok_or_else(|| Error::Domain(format!("projection {x} is not representable as a bucket coordinate")))
}

/// Draws a value uniformly on `[0, width)`, redrawing the rare case where
/// scaling and conversion round up to `width`.
fn uniform_below<T: Scalar, R: rand::Rng>(rng: &mut R, width: f64) -> T {
    let w = T::from_f64_lossy(width);
    loop {
        let b = T::from_f64_lossy(width * rng::unit_uniform(rng));
        if b < w {
            return b;
        }
    }
}

/// The inner family `H` of `k` Gaussian projections with bin width `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct HashFamilyH<T> {
    dim: usize,
    k: usize,
    /// Row-major `k x dim`.
    rows: Vec<T>,
    offsets: Vec<T>,
    width: T,
    seed: u64,
}

impl<T: Scalar> HashFamilyH<T> {
    /// Samples the family. Row `i` reads `dim` standard normals followed by one
    /// uniform for `b_i` from stream `(seed, InnerRow, i)`, so the result depends
    /// only on `(seed, dim, k, W)`.
    pub fn sample(params: &LshParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let (dim, k) = (params.dim, params.k);
        let mut rows = Vec::with_capacity(k * dim);
        let mut offsets = Vec::with_capacity(k);
        for i in 0..k {
            let mut rng = rng::stream(seed, Domain::InnerRow, i as u64);
            rows.extend((0..dim).map(|_| T::from_f64_lossy(rng::normal(&mut rng))));
            offsets.push(uniform_below(&mut rng, params.inner_width));
        }
        Ok(HashFamilyH {
            dim,
            k,
            rows,
            offsets,
            width: T::from_f64_lossy(params.inner_width),
            seed,
        })
    }

    /// Builds a family from explicit rows `a_i` and shifts `b_i`.
    pub fn from_parts(rows: Vec<Vec<T>>, offsets: Vec<T>, width: T) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::param("at least one row is required"));
        }
        check_dim(k, offsets.len())?;
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::param("rows must be non-empty"));
        }
        if !(width.is_finite() && width > T::zero()) {
            return Err(Error::param("W must be finite and > 0"));
        }
        if let Some(b) = offsets.iter().find(|&&b| !(b >= T::zero() && b < width)) {
            return Err(Error::param(format!("shift {b} outside [0, W)")));
        }
        let mut flat = Vec::with_capacity(k * dim);
        for row in &rows {
            check_dim(dim, row.len())?;
            flat.extend_from_slice(row);
        }
        Ok(HashFamilyH {
            dim,
            k,
            rows: flat,
            offsets,
            width,
            seed: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> T {
        self.width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn shifts(&self) -> &[T] {
        &self.offsets
    }

    /// `Γ(v)`: the projections `(a_i . v + b_i) / W` before flooring.
    pub fn project(&self, v: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim, v.len())?;
        Ok(self.project_unchecked(v))
    }

    fn project_unchecked(&self, v: &[T]) -> Vec<T> {
        self.rows
            .chunks_exact(self.dim)
            .zip(&self.offsets)
            .map(|(a, &b)| (dot(a, v) + b) / self.width)
            .collect()
    }

    /// `H(v)`: each coordinate floored toward negative infinity.
    pub fn hash(&self, v: &[T]) -> Result<BucketId> {
        check_dim(self.dim, v.len())?;
        self.project_unchecked(v)
            .into_iter()
            .map(floor_to_i64)
            .collect::<Result<Vec<_>>>()
            .map(BucketId)
    }
}

/// The outer one-dimensional hash `G(u) = floor((alpha . u + beta) / D)` over `R^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct HashFunctionG<T> {
    alpha: Vec<T>,
    beta: T,
    width: T,
    seed: u64,
}

impl<T: Scalar> HashFunctionG<T> {
    /// Reads `k` normals then one uniform from stream `(seed, OuterHash, 0)`.
    /// `beta` is `D` times that uniform, so hashes sampled from one seed at
    /// different `D` share `alpha` and the relative position of `beta`.
    pub fn sample(k: usize, width: f64, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("k must be >= 1"));
        }
        positive("outer width D", width)?;
        let mut rng = rng::stream(seed, Domain::OuterHash, 0);
        let alpha = (0..k).map(|_| T::from_f64_lossy(rng::normal(&mut rng))).collect();
        let beta = uniform_below(&mut rng, width);
        Ok(HashFunctionG {
            alpha,
            beta,
            width: T::from_f64_lossy(width),
            seed,
        })
    }

    pub fn from_parts(alpha: Vec<T>, beta: T, width: T) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::param("alpha must be non-empty"));
        }
        if !(width.is_finite() && width > T::zero()) {
            return Err(Error::param("D must be finite and > 0"));
        }
        if !(beta >= T::zero() && beta < width) {
            return Err(Error::param(format!("beta {beta} outside [0, D)")));
        }
        Ok(HashFunctionG {
            alpha,
            beta,
            width,
            seed: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn width(&self) -> T {
        self.width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hash(&self, u: &[T]) -> Result<MachineKey> {
        check_dim(self.alpha.len(), u.len())?;
        floor_to_i64((dot(&self.alpha, u) + self.beta) / self.width).map(MachineKey)
    }

    /// `G` applied to an inner bucket. Coordinates convert exactly while
    /// `|coord| < 2^53` (`f64`) or `2^24` (`f32`).
    pub fn hash_bucket(&self, bucket: &BucketId) -> Result<MachineKey> {
        check_dim(self.alpha.len(), bucket.len())?;
        let acc = self
            .alpha
            .iter()
            .zip(bucket.coords())
            .fold(T::zero(), |acc, (&a, &c)| {
                acc + a * T::from_i64(c).expect("i64 converts to a float")
            });
        floor_to_i64((acc + self.beta) / self.width).map(MachineKey)
    }
}

/// `GH(v) = G(H(v))`.
pub fn gh<T: Scalar>(h: &HashFamilyH<T>, g: &HashFunctionG<T>, v: &[T]) -> Result<MachineKey> {
    check_dim(h.k(), g.k())?;
    g.hash_bucket(&h.hash(v)?)
}

/// Collision probability of a one-dimensional Gaussian hash with bin width
/// `D` for two points at distance `λ`, evaluated at `z = D / (sqrt(2) λ)`:
///
/// `P(z) = erf(z) - (1 - exp(-z^2)) / (sqrt(pi) z)`
pub fn collision_p<T: Scalar>(z: T) -> Result<T> {
    if z.is_nan() || z <= T::zero() {
        return Err(Error::Domain(format!("P(z) requires z > 0, got {z}")));
    }
    if z.is_infinite() {
        return Ok(T::one());
    }
    let pi = T::from_f64_lossy(std::f64::consts::PI);
    // 1 - e^{-z^2} without cancellation for small z
    let tail = -(-(z * z)).exp_m1();
    Ok(z.erf() - tail / (pi.sqrt() * z))
}

/// The `z` with `P(z) = xi`, found by bisection.
pub fn collision_p_inverse(xi: f64) -> Result<f64> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::Domain(format!("target probability must lie in (0, 1), got {xi}")));
    }
    let p = |z: f64| collision_p(z).expect("z > 0");
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while p(hi) < xi {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if p(mid) < xi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Number of concatenated hashes `ceil(ln n / ln(1/p2))`.
pub fn suggest_k(n: u64, p2: f64) -> Result<usize> {
    if n < 2 {
        return Err(Error::param("n must be >= 2"));
    }
    if !(p2 > 0.0 && p2 < 1.0) {
        return Err(Error::param(format!("p2 must lie in (0, 1), got {p2}")));
    }
    let k = ((n as f64).ln() / (1.0 / p2).ln()).ceil();
    Ok((k as usize).max(1))
}

/// Single-row collision probabilities of the inner hash at distances `r` and `c r`.
pub fn nominal_p1_p2(params: &LshParams) -> Result<(f64, f64)> {
    params.validate()?;
    let w = params.inner_width;
    let s2 = std::f64::consts::SQRT_2;
    let p1 = collision_p(w / (s2 * params.radius))?;
    let p2 = collision_p(w / (s2 * params.approx_ratio * params.radius))?;
    Ok((p1, p2))
}

/// Distance beyond which two points share an outer key with probability at
/// most `xi` (up to a term vanishing in `n`):
///
/// `λ_ξ = W (1 + D / (z_ξ sqrt(2k))) / (1 - ε)` with `P(z_ξ) = ξ`.
pub fn lambda_xi(params: &LshParams, xi: f64, epsilon: f64) -> Result<f64> {
    params.validate()?;
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::param(format!("epsilon must lie in [0, 1), got {epsilon}")));
    }
    let z = collision_p_inverse(xi)?;
    let k = params.k as f64;
    Ok((1.0 + params.outer_width / (z * (2.0 * k).sqrt())) * params.inner_width / (1.0 - epsilon))
}

/// `min(ceil(n^{2/c}), 1000)`.
pub fn default_num_offsets(n: usize, approx_ratio: f64) -> usize {
    let l = (n.max(1) as f64).powf(2.0 / approx_ratio).ceil();
    if l.is_finite() {
        (l as usize).clamp(1, MAX_DEFAULT_OFFSETS)
    } else {
        MAX_DEFAULT_OFFSETS
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(dim: usize, k: usize, w: f64) -> LshParams {
        LshParams {
            dim,
            k,
            inner_width: w,
            ..LshParams::default()
        }
    }

    fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
        (0..dim).map(|_| scale * rng::normal(rng)).collect()
    }

    /// Random pair at exact distance `lambda`.
    fn pair_at(rng: &mut ChaCha8Rng, dim: usize, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let u = gaussian_vec(rng, dim, 1.0);
        let dir = gaussian_vec(rng, dim, 1.0);
        let n = crate::scalar::norm(&dir);
        let v = u.iter().zip(&dir).map(|(a, b)| a + lambda * b / n).collect();
        (u, v)
    }

    // Composite Simpson on the collision integral; independent of erf.
    fn collision_integral(d: f64, lambda: f64) -> f64 {
        let n = 200_000;
        let h = d / n as f64;
        let f = |l: f64| {
            (1.0 - l / d) * 2.0 / ((2.0 * std::f64::consts::PI).sqrt() * lambda)
                * (-(l * l) / (2.0 * lambda * lambda)).exp()
        };
        let mut s = f(0.0) + f(d);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = params(2, 1, 0.5);
        let a = HashFamilyH::<f64>::sample(&p, 99).unwrap();
        let b = HashFamilyH::<f64>::sample(&p, 99).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, HashFamilyH::<f64>::sample(&p, 100).unwrap());
    }

    #[test]
    fn sampled_rows_are_standard_normal() {
        // 10_000 rows x 10 dims = 1e5 draws
        let h = HashFamilyH::<f64>::sample(&params(10, 10_000, 0.5), 5).unwrap();
        let xs: Vec<f64> = (0..h.k()).flat_map(|i| h.row(i).to_vec()).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
        assert!(h.shifts().iter().all(|&b| (0.0..0.5).contains(&b)));
        let mean_b = h.shifts().iter().sum::<f64>() / h.k() as f64;
        assert!((mean_b - 0.25).abs() < 0.01, "mean shift {mean_b}");
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(HashFamilyH::<f64>::sample(&params(0, 1, 0.5), 1).is_err());
        assert!(HashFamilyH::<f64>::sample(&params(2, 0, 0.5), 1).is_err());
        assert!(HashFamilyH::<f64>::sample(&params(2, 1, 0.0), 1).is_err());
        let mut p = params(2, 1, 0.5);
        p.approx_ratio = 1.0;
        assert!(matches!(
            HashFamilyH::<f64>::sample(&p, 1),
            Err(Error::InvalidParameter(_))
        ));
        p.approx_ratio = 2.0;
        p.num_offsets = 0;
        p.probe_self = false;
        assert!(p.validate().is_err());
        p.probe_self = true;
        assert!(p.validate().is_ok());
    }

    fn unit_family(b: f64, w: f64) -> HashFamilyH<f64> {
        HashFamilyH::from_parts(vec![vec![1.0, 0.0]], vec![b], w).unwrap()
    }

    #[test]
    fn hash_h_forced_values() {
        let h = unit_family(0.2, 0.5);
        assert_eq!(h.hash(&[0.9, 7.3]).unwrap(), BucketId(vec![2]));
        assert_eq!(h.hash(&[0.9, 7.3]).unwrap(), h.hash(&[0.9, 7.3]).unwrap());
        let gamma = h.project(&[0.9, 7.3]).unwrap();
        assert!((gamma[0] - 2.2).abs() < 1e-12);
        // floor, not truncation
        let h = unit_family(0.0, 1.0);
        assert_eq!(h.hash(&[-0.5, 0.0]).unwrap(), BucketId(vec![-1]));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let h = unit_family(0.2, 0.5);
        assert!(matches!(
            h.hash(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(h.project(&[1.0, 2.0, 3.0]).is_err());
        let g = HashFunctionG::from_parts(vec![1.0, 1.0], 0.0, 2.0).unwrap();
        assert!(g.hash(&[1.0]).is_err());
        assert!(g.hash_bucket(&BucketId(vec![1, 2, 3])).is_err());
    }

    #[test]
    fn from_parts_validates_shifts() {
        assert!(HashFamilyH::from_parts(vec![vec![1.0]], vec![0.5], 0.5).is_err());
        assert!(HashFamilyH::from_parts(vec![vec![1.0]], vec![-0.1], 0.5).is_err());
        assert!(HashFunctionG::from_parts(vec![1.0], 2.0, 2.0).is_err());
    }

    #[test]
    fn non_finite_input_is_a_domain_error() {
        let h = unit_family(0.2, 0.5);
        assert!(matches!(h.hash(&[f64::NAN, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn floor_of_projection_is_hash() {
        let h = HashFamilyH::<f64>::sample(&params(8, 6, 0.5), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let v = gaussian_vec(&mut rng, 8, 3.0);
            let gamma = h.project(&v).unwrap();
            let bucket = h.hash(&v).unwrap();
            for (g, &c) in gamma.iter().zip(bucket.coords()) {
                assert_eq!(g.floor() as i64, c);
            }
        }
    }

    #[test]
    fn projection_differences_follow_two_stability() {
        // Γ_i(u) - Γ_i(v) ~ N(0, λ/W) over the draw of the family
        let (lambda, w) = (0.7, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (u, v) = pair_at(&mut rng, 6, lambda);
        let mut diffs = Vec::new();
        for seed in 0..2_000u64 {
            let h = HashFamilyH::<f64>::sample(&params(6, 10, w), seed).unwrap();
            let gu = h.project(&u).unwrap();
            let gv = h.project(&v).unwrap();
            diffs.extend(gu.iter().zip(&gv).map(|(a, b)| a - b));
        }
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((sd - lambda / w).abs() < 0.03, "sd {sd}");
    }

    #[test]
    fn hash_g_forced_value() {
        let g = HashFunctionG::from_parts(vec![1.0, 1.0], 0.0, 2.0).unwrap();
        assert_eq!(g.hash(&[1.0, 2.0]).unwrap(), MachineKey(1));
        assert_eq!(g.hash(&[1.0, 2.0]).unwrap(), g.hash(&[1.0, 2.0]).unwrap());
        assert_eq!(g.hash(&[-1.0, 0.5]).unwrap(), MachineKey(-1));
    }

    #[test]
    fn hash_g_collision_frequency_matches_formula() {
        let (k, lambda, d) = (10, 1.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let trials = 100_000;
        let mut hits = 0;
        for t in 0..trials {
            let g = HashFunctionG::<f64>::sample(k, d, t as u64).unwrap();
            let (u, v) = pair_at(&mut rng, k, lambda);
            hits += usize::from(g.hash(&u).unwrap() == g.hash(&v).unwrap());
        }
        let freq = hits as f64 / trials as f64;
        let expected = collision_p(d / (std::f64::consts::SQRT_2 * lambda)).unwrap();
        assert!((freq - expected).abs() < 0.01, "freq {freq} vs {expected}");
    }

    #[test]
    fn gh_is_the_composition() {
        let p = params(5, 4, 0.5);
        let h = HashFamilyH::<f64>::sample(&p, 8).unwrap();
        let g = HashFunctionG::<f64>::sample(4, 2.0, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let v = gaussian_vec(&mut rng, 5, 2.0);
            let bucket = h.hash(&v).unwrap();
            let as_reals: Vec<f64> = bucket.coords().iter().map(|&c| c as f64).collect();
            assert_eq!(gh(&h, &g, &v).unwrap(), g.hash(&as_reals).unwrap());
            assert_eq!(gh(&h, &g, &v).unwrap(), gh(&h, &g, &v.clone()).unwrap());
        }
    }

    #[test]
    fn collision_p_limits_and_monotonicity() {
        let tiny = collision_p(1e-6f64).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-6 * 10.0);
        assert!((tiny / 1e-6 - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-4);
        let (a, b, c) = (
            collision_p(1.0).unwrap(),
            collision_p(2.0).unwrap(),
            collision_p(4.0).unwrap(),
        );
        assert!(a < b && b < c);
        let grid: Vec<f64> = (1..=100).map(|i| collision_p(i as f64 * 0.1).unwrap()).collect();
        assert!(grid.iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(collision_p(0.0f64), Err(Error::Domain(_))));
        assert!(collision_p(-1.0f64).is_err());
        assert!(collision_p(f64::NAN).is_err());
    }

    #[test]
    fn collision_p_matches_quadrature() {
        // z = 5 with λ = 1 means D = 5 sqrt(2)
        let d = 5.0 * std::f64::consts::SQRT_2;
        let oracle = collision_integral(d, 1.0);
        assert!((collision_p(5.0).unwrap() - oracle).abs() < 1e-8);
        for &(d, lambda) in &[(1.0, 0.5), (2.0, 2.0), (0.3, 1.7)] {
            let z = d / (std::f64::consts::SQRT_2 * lambda);
            assert!((collision_p(z).unwrap() - collision_integral(d, lambda)).abs() < 1e-8);
        }
    }

    #[test]
    fn f32_collision_p_tracks_f64() {
        for i in 1..50 {
            let z = i as f64 * 0.2;
            let p64 = collision_p(z).unwrap();
            let p32 = collision_p(z as f32).unwrap();
            assert!((p64 - p32 as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn inverse_recovers_z() {
        for &xi in &[0.05, 0.3, 0.5, 0.9, 0.99] {
            let z = collision_p_inverse(xi).unwrap();
            assert!((collision_p(z).unwrap() - xi).abs() < 1e-12);
        }
        assert!(collision_p_inverse(1.0).is_err());
    }

    #[test]
    fn suggest_k_cases() {
        let n = std::f64::consts::E.powi(10).round() as u64;
        assert_eq!(suggest_k(n, 1.0 / std::f64::consts::E).unwrap(), 10);
        assert!(suggest_k(2, 0.5).unwrap() >= 1);
        assert!(suggest_k(1, 0.5).is_err());
        assert!(suggest_k(10, 1.0).is_err());
        assert!(suggest_k(10, 0.0).is_err());

        let z = 0.5 / (std::f64::consts::SQRT_2 * 2.0 * 0.3);
        let p2 = collision_p(z).unwrap();
        let p2_oracle = collision_integral(0.5, 0.6);
        let k_oracle = ((1e6f64).ln() / (1.0 / p2_oracle).ln()).ceil() as usize;
        assert_eq!(suggest_k(1_000_000, p2).unwrap(), k_oracle);
    }

    #[test]
    fn p1_exceeds_p2() {
        let p = LshParams {
            inner_width: 0.5,
            radius: 0.3,
            approx_ratio: 2.0,
            ..LshParams::default()
        };
        let (p1, p2) = nominal_p1_p2(&p).unwrap();
        assert!(p1 > p2);
        let near = LshParams { radius: 1e-9, ..p.clone() };
        assert!(nominal_p1_p2(&near).unwrap().0 > 1.0 - 1e-6);
    }

    #[test]
    fn p1_matches_single_row_collision_frequency() {
        let p = LshParams {
            dim: 4,
            k: 1,
            inner_width: 0.5,
            radius: 0.3,
            approx_ratio: 2.0,
            ..LshParams::default()
        };
        let (p1, _) = nominal_p1_p2(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let trials = 100_000;
        let mut hits = 0;
        for t in 0..trials {
            let h = HashFamilyH::<f64>::sample(&p, t as u64).unwrap();
            let (u, v) = pair_at(&mut rng, 4, 0.3);
            hits += usize::from(h.hash(&u).unwrap() == h.hash(&v).unwrap());
        }
        let freq = hits as f64 / trials as f64;
        assert!((freq - p1).abs() < 0.01, "freq {freq} vs p1 {p1}");
    }

    #[test]
    fn chi_norm_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let m = 512;
        let trials = 10_000;
        let inside = (0..trials)
            .filter(|_| {
                let n = crate::scalar::norm(&gaussian_vec(&mut rng, m, 1.0));
                let s = (m as f64).sqrt();
                (0.8 * s..=1.2 * s).contains(&n)
            })
            .count();
        assert!(inside as f64 >= 0.99 * trials as f64);
    }

    #[test]
    fn projection_onto_unit_vector_passes_ks() {
        // KS statistic of θ·v against N(0, 1), n = 1e4, 1% critical value 1.628 / sqrt(n)
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let dim = 7;
        let dir = gaussian_vec(&mut rng, dim, 1.0);
        let nv = crate::scalar::norm(&dir);
        let v: Vec<f64> = dir.iter().map(|x| x / nv).collect();
        let h = HashFamilyH::<f64>::sample(&params(dim, 10_000, 1.0), 17).unwrap();
        let mut xs: Vec<f64> = (0..h.k()).map(|i| dot(h.row(i), &v)).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let cdf = |x: f64| 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
        let stat = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(stat < 1.628 / n.sqrt(), "KS statistic {stat}");
    }

    #[test]
    fn lambda_xi_formula() {
        let p = LshParams { k: 10, outer_width: 10f64.sqrt(), inner_width: 0.5, ..LshParams::default() };
        let z = collision_p_inverse(0.5).unwrap();
        let expect = (1.0 + 10f64.sqrt() / (z * 20f64.sqrt())) * 0.5 / 0.9;
        assert!((lambda_xi(&p, 0.5, 0.1).unwrap() - expect).abs() < 1e-12);
        assert!(lambda_xi(&p, 0.5, 1.0).is_err());
    }

    #[test]
    fn default_offsets_is_capped() {
        assert_eq!(default_num_offsets(100, 2.0), 100);
        assert_eq!(default_num_offsets(10_000, 2.0), 1000);
        assert_eq!(default_num_offsets(1, 2.0), 1);
    }

    #[test]
    fn f32_family_agrees_with_f64_draws() {
        let p = params(3, 4, 0.5);
        let h64 = HashFamilyH::<f64>::sample(&p, 4).unwrap();
        let h32 = HashFamilyH::<f32>::sample(&p, 4).unwrap();
        for i in 0..4 {
            for (a, b) in h64.row(i).iter().zip(h32.row(i)) {
                assert_eq!(*a as f32, *b);
            }
        }
    }

    proptest! {
        #[test]
        fn floor_never_truncates(x in -1e6f64..1e6, b in 0.0f64..0.999, w in 0.01f64..10.0) {
            let h = HashFamilyH::from_parts(vec![vec![1.0]], vec![b * w], w).unwrap();
            let c = h.hash(&[x]).unwrap().coords()[0] as f64;
            let g = (x + b * w) / w;
            prop_assert!(c <= g && g < c + 1.0);
        }

        #[test]
        fn gamma_h_sandwich(seed in any::<u64>(), k in 1usize..16, w in 0.05f64..3.0) {
            let h = HashFamilyH::<f64>::sample(&params(6, k, w), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
            for _ in 0..20 {
                let scale = rng.random_range(0.1..5.0);
                let u = gaussian_vec(&mut rng, 6, scale);
                let v = gaussian_vec(&mut rng, 6, 1.0);
                let dg = crate::scalar::distance(&h.project(&u).unwrap(), &h.project(&v).unwrap());
                let dh = h.hash(&u).unwrap().squared_distance(&h.hash(&v).unwrap()).sqrt();
                prop_assert!((dg - dh).abs() <= (k as f64).sqrt());
            }
        }
    }
}
