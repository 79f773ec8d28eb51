//! Base-2 digital nets, area-preserving maps onto the unit sphere and onto
//! ellipsoid boundaries, and Riesz-energy scoring.
//!
//! Two constructions are exposed. For s <= 3 the generator matrices
//! {identity (van der Corput), Pascal, digit reversal} give exact
//! (0, m, s)-nets (base-2 nets with t = 0 exist only up to s = 3). For
//! larger s the dimensions come from the Joe-Kuo direction numbers, which
//! form a digital sequence: prefixes of length 2^m are (t, m, s)-nets with
//! t bounded by the sum of (degree - 1) over the primitive polynomials.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{MooError, Result};
use crate::interaction::EllipsoidConstraint;

const BITS: u32 = 32;
const SCALE: f64 = 1.0 / (1u64 << BITS) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceTag {
    UnitCube,
    UnitSphere,
    EllipsoidBoundary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    /// Digital net in base 2: quality parameter t when known, and whether
    /// prefixes of the construction are themselves nets (sequence property).
    Net { base: u32, m: u32, t: Option<u32>, nested: bool },
    Random { name: &'static str, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct PointSet {
    pub dim: usize,
    pub n: usize,
    /// row-major n x dim
    pub coords: Vec<f64>,
    pub space: SpaceTag,
    pub provenance: Provenance,
}

impl PointSet {
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Keep the first `n` points (prefix).
    pub fn prefix(&self, n: usize) -> PointSet {
        assert!(n <= self.n);
        PointSet {
            dim: self.dim,
            n,
            coords: self.coords[..n * self.dim].to_vec(),
            space: self.space,
            provenance: self.provenance.clone(),
        }
    }
}

struct DirectionTable {
    /// per table dimension (index 0 = overall dimension 3): (a, m)
    params: Vec<(u32, Vec<u32>)>,
}

fn direction_table() -> &'static DirectionTable {
    static TABLE: OnceLock<DirectionTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let jk = sobol::params::JoeKuoD6::standard();
        // file rows start at overall dimension 2 = Pascal (a = 0, m = [1]);
        // keep rows from dimension 3 on, Pascal is built in
        let params = jk
            .dim_params
            .iter()
            .skip(1)
            .map(|d| (d.a, d.m.clone()))
            .collect();
        DirectionTable { params }
    })
}

/// Largest supported dimension for the sequence construction.
pub fn max_sequence_dims() -> usize {
    2 + direction_table().params.len()
}

/// Direction values for the van der Corput dimension (identity matrix).
fn dirs_vdc() -> [u32; BITS as usize] {
    let mut v = [0u32; BITS as usize];
    for (b, spot) in v.iter_mut().enumerate() {
        *spot = 1 << (BITS as usize - 1 - b);
    }
    v
}

/// Direction values for the Pascal-matrix dimension: bit r of column b is
/// binom(b, r) mod 2, i.e. set when r & b == r.
fn dirs_pascal() -> [u32; BITS as usize] {
    let mut v = [0u32; BITS as usize];
    for b in 0..BITS as usize {
        let mut col = 0u32;
        for r in 0..=b {
            if b & r == r {
                col |= 1 << (BITS as usize - 1 - r);
            }
        }
        v[b] = col;
    }
    v
}

/// Direction values for the digit-reversal matrix at resolution m: together
/// with the identity and Pascal dimensions this completes a (0, m, 3)-net.
fn dirs_reversal(m: u32) -> [u32; BITS as usize] {
    let mut v = [0u32; BITS as usize];
    for b in 0..m as usize {
        v[b] = 1 << (BITS - m + b as u32);
    }
    v
}

/// Direction values from Joe-Kuo parameters (standard Sobol recurrence).
fn dirs_from_params(a: u32, m_init: &[u32]) -> [u32; BITS as usize] {
    let s = m_init.len();
    let mut v = [0u32; BITS as usize];
    for (i, &mi) in m_init.iter().enumerate().take(BITS as usize) {
        v[i] = mi << (BITS as usize - 1 - i);
    }
    for i in s..BITS as usize {
        let mut val = v[i - s] ^ (v[i - s] >> s);
        for k in 1..s {
            if (a >> (s - 1 - k)) & 1 == 1 {
                val ^= v[i - k];
            }
        }
        v[i] = val;
    }
    v
}

fn generate_from_dirs(dirs: &[[u32; BITS as usize]], m: u32) -> Vec<f64> {
    let n = 1usize << m;
    let s = dirs.len();
    let mut coords = vec![0.0f64; n * s];
    for i in 0..n {
        for (d, v) in dirs.iter().enumerate() {
            let mut acc = 0u32;
            let mut bits = i;
            let mut b = 0usize;
            while bits != 0 {
                if bits & 1 == 1 {
                    acc ^= v[b];
                }
                bits >>= 1;
                b += 1;
            }
            coords[i * s + d] = acc as f64 * SCALE;
        }
    }
    coords
}

/// Quality-parameter bound for the sequence construction at dimension s:
/// dimensions 1 and 2 have degree-1 polynomials, the rest add degree - 1.
fn sequence_t_bound(s: usize) -> u32 {
    let table = direction_table();
    let mut t = 0u32;
    for d in 3..=s {
        t += table.params[d - 3].1.len() as u32 - 1;
    }
    t
}

fn check_net_args(m: u32, s: usize) -> Result<()> {
    if s == 0 {
        return Err(MooError::InvalidInput("dimension must be positive".into()));
    }
    if m > 26 {
        return Err(MooError::InvalidInput(format!("m = {m} exceeds the supported 2^26 points")));
    }
    if s > max_sequence_dims() {
        return Err(MooError::DimensionTableExceeded { dim: s, max: max_sequence_dims() });
    }
    Ok(())
}

/// 2^m points of a base-2 net in [0,1)^s with the best available quality:
/// exact t = 0 for s <= 3, Joe-Kuo Sobol dimensions otherwise.
pub fn digital_net(m: u32, s: usize) -> Result<PointSet> {
    check_net_args(m, s)?;
    if s <= 3 {
        let mut dirs = vec![dirs_vdc()];
        if s >= 2 {
            dirs.push(dirs_pascal());
        }
        if s >= 3 {
            dirs.push(dirs_reversal(m.max(1)));
        }
        let coords = generate_from_dirs(&dirs, m);
        return Ok(PointSet {
            dim: s,
            n: 1 << m,
            coords,
            space: SpaceTag::UnitCube,
            // the reversal matrix depends on m, so only s <= 2 is nested
            provenance: Provenance::Net { base: 2, m, t: Some(0), nested: s <= 2 },
        });
    }
    let ps = digital_sequence_net(m, s)?;
    Ok(ps)
}

/// 2^m prefix of the base-2 digital sequence (van der Corput, Pascal, then
/// Joe-Kuo dimensions). Prefixes at powers of two are nets, which makes
/// nested refinement schedules valid for every dimension.
pub fn digital_sequence_net(m: u32, s: usize) -> Result<PointSet> {
    check_net_args(m, s)?;
    let table = direction_table();
    let mut dirs = Vec::with_capacity(s);
    dirs.push(dirs_vdc());
    if s >= 2 {
        dirs.push(dirs_pascal());
    }
    for d in 3..=s {
        let (a, minit) = &table.params[d - 3];
        dirs.push(dirs_from_params(*a, minit));
    }
    let coords = generate_from_dirs(&dirs, m);
    Ok(PointSet {
        dim: s,
        n: 1 << m,
        coords,
        space: SpaceTag::UnitCube,
        provenance: Provenance::Net { base: 2, m, t: Some(sequence_t_bound(s).min(m)), nested: true },
    })
}

/// Optional randomization: XOR every coordinate's digit expansion with a
/// per-dimension mask (a digital shift in base 2, which preserves the
/// (t, m, s)-net property). Off by default; experiments stay reproducible
/// because the shift is seeded.
pub fn digital_shift(points: &PointSet, seed: u64) -> Result<PointSet> {
    if points.space != SpaceTag::UnitCube {
        return Err(MooError::InvalidInput("digital shift expects unit-cube points".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let masks: Vec<u32> = (0..points.dim).map(|_| rng.gen::<u32>()).collect();
    let mut coords = points.coords.clone();
    for i in 0..points.n {
        for d in 0..points.dim {
            let v = &mut coords[i * points.dim + d];
            let bits = (*v * (1u64 << BITS) as f64) as u32;
            *v = (bits ^ masks[d]) as f64 * SCALE;
        }
    }
    Ok(PointSet {
        dim: points.dim,
        n: points.n,
        coords,
        space: SpaceTag::UnitCube,
        provenance: points.provenance.clone(),
    })
}

/// Seeded uniform points in [0,1)^s.
pub fn uniform_cube(n: usize, s: usize, seed: u64) -> PointSet {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let coords: Vec<f64> = (0..n * s).map(|_| rng.gen::<f64>()).collect();
    PointSet {
        dim: s,
        n,
        coords,
        space: SpaceTag::UnitCube,
        provenance: Provenance::Random { name: "uniform-cube", seed },
    }
}

/// Seeded uniform points on the unit sphere in R^dim (Gaussian direction
/// method; Box-Muller keeps the dependency surface small).
pub fn uniform_sphere(n: usize, dim: usize, seed: u64) -> PointSet {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut gauss = move || {
        let u1: f64 = loop {
            let u = rng.gen::<f64>();
            if u > 0.0 {
                break u;
            }
        };
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    };
    let mut coords = vec![0.0f64; n * dim];
    for i in 0..n {
        loop {
            let mut norm_sq = 0.0;
            for d in 0..dim {
                let g = gauss();
                coords[i * dim + d] = g;
                norm_sq += g * g;
            }
            if norm_sq > 1e-12 {
                let inv = norm_sq.sqrt().recip();
                for d in 0..dim {
                    coords[i * dim + d] *= inv;
                }
                break;
            }
        }
    }
    PointSet {
        dim,
        n,
        coords,
        space: SpaceTag::UnitSphere,
        provenance: Provenance::Random { name: "uniform-sphere", seed },
    }
}

/// Inverse-CDF table for the height coordinate on S^d: the marginal density
/// of t is proportional to (1 - t^2)^{(d-2)/2}, which the d = 2 closed form
/// 1 - 2y specializes. Tables make the map measure preserving in every
/// dimension, not just on S^2.
struct HeightTable {
    cdf: Vec<f64>,
}

const HEIGHT_NODES: usize = 32_769;

impl HeightTable {
    fn build(d: usize) -> Self {
        let expo = (d as f64 - 2.0) / 2.0;
        let m = HEIGHT_NODES;
        let mut w = vec![0.0f64; m];
        for (i, spot) in w.iter_mut().enumerate() {
            let t = -1.0 + 2.0 * i as f64 / (m - 1) as f64;
            *spot = (1.0 - t * t).max(0.0).powf(expo);
        }
        let mut cdf = vec![0.0f64; m];
        for i in 1..m {
            cdf[i] = cdf[i - 1] + 0.5 * (w[i - 1] + w[i]);
        }
        let total = cdf[m - 1];
        for v in cdf.iter_mut() {
            *v /= total;
        }
        HeightTable { cdf }
    }

    /// t with P(T <= t) = p, by binary search + linear interpolation.
    fn inverse(&self, p: f64) -> f64 {
        let m = self.cdf.len();
        if p <= 0.0 {
            return -1.0;
        }
        if p >= 1.0 {
            return 1.0;
        }
        let mut lo = 0usize;
        let mut hi = m - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf[mid] <= p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t_lo = -1.0 + 2.0 * lo as f64 / (m - 1) as f64;
        let t_hi = -1.0 + 2.0 * hi as f64 / (m - 1) as f64;
        let gap = self.cdf[hi] - self.cdf[lo];
        if gap <= 0.0 {
            return t_lo;
        }
        t_lo + (t_hi - t_lo) * (p - self.cdf[lo]) / gap
    }
}

fn height_for(d: usize, y: f64) -> f64 {
    if d == 2 {
        return 1.0 - 2.0 * y; // exact closed form on S^2
    }
    static TABLES: OnceLock<Mutex<HashMap<usize, Arc<HeightTable>>>> = OnceLock::new();
    let tables = TABLES.get_or_init(|| Mutex::new(HashMap::new()));
    let table = {
        let mut guard = tables.lock().unwrap();
        guard.entry(d).or_insert_with(|| Arc::new(HeightTable::build(d))).clone()
    };
    table.inverse(1.0 - y)
}

/// Cylindrical-coordinate map from [0,1)^s to the unit sphere in R^{s+1}:
/// the first coordinate becomes the angle 2 pi y_1, the remaining ones the
/// heights, each drawn through the measure-preserving inverse CDF of the
/// corresponding sphere's height marginal (1 - 2 y_d on S^2).
pub fn map_to_sphere(cube: &PointSet) -> Result<PointSet> {
    if cube.space != SpaceTag::UnitCube {
        return Err(MooError::InvalidInput("map_to_sphere expects unit-cube points".into()));
    }
    let s = cube.dim;
    let out_dim = s + 1;
    let mut coords = vec![0.0f64; cube.n * out_dim];
    for i in 0..cube.n {
        let y = cube.point(i);
        let phi = 2.0 * PI * y[0];
        let out = &mut coords[i * out_dim..(i + 1) * out_dim];
        out[0] = phi.cos();
        out[1] = phi.sin();
        let mut filled = 2usize;
        for d in 2..=s {
            let t = height_for(d, y[d - 1]);
            let scale = (1.0 - t * t).max(0.0).sqrt();
            for v in out.iter_mut().take(filled) {
                *v *= scale;
            }
            out[filled] = t;
            filled += 1;
        }
    }
    Ok(PointSet {
        dim: out_dim,
        n: cube.n,
        coords,
        space: SpaceTag::UnitSphere,
        provenance: cube.provenance.clone(),
    })
}

/// Affine map from the unit sphere onto the ellipsoid boundary:
/// x = sqrt(b_tilde) B^{-1/2} u + b.
pub fn map_to_ellipsoid(sphere: &PointSet, e: &EllipsoidConstraint) -> Result<PointSet> {
    if sphere.space != SpaceTag::UnitSphere {
        return Err(MooError::InvalidInput("map_to_ellipsoid expects unit-sphere points".into()));
    }
    if sphere.dim != e.dim() {
        return Err(MooError::DimensionMismatch(format!(
            "sphere points live in R^{}, ellipsoid in R^{}",
            sphere.dim,
            e.dim()
        )));
    }
    let mut coords = vec![0.0f64; sphere.n * sphere.dim];
    for i in 0..sphere.n {
        let x = e.from_unit_sphere(sphere.point(i));
        coords[i * sphere.dim..(i + 1) * sphere.dim].copy_from_slice(&x);
    }
    Ok(PointSet {
        dim: sphere.dim,
        n: sphere.n,
        coords,
        space: SpaceTag::EllipsoidBoundary,
        provenance: sphere.provenance.clone(),
    })
}

/// Pull boundary points back to the unit sphere (inverse of the affine map).
pub fn pull_back_to_sphere(points: &PointSet, e: &EllipsoidConstraint) -> Result<PointSet> {
    if points.space != SpaceTag::EllipsoidBoundary {
        return Err(MooError::InvalidInput("expected ellipsoid-boundary points".into()));
    }
    let mut coords = vec![0.0f64; points.n * points.dim];
    for i in 0..points.n {
        let u = e.to_unit_sphere(points.point(i));
        coords[i * points.dim..(i + 1) * points.dim].copy_from_slice(&u);
    }
    Ok(PointSet {
        dim: points.dim,
        n: points.n,
        coords,
        space: SpaceTag::UnitSphere,
        provenance: points.provenance.clone(),
    })
}

/// How boundary points are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundarySampler {
    /// digital net composed with the two maps (best quality at fixed N)
    Net,
    /// sequence-based net (prefix-nested; used by refinement schedules)
    NestedNet,
    UniformCube { seed: u64 },
    UniformSphere { seed: u64 },
}

/// N boundary points by the chosen sampler. For the net samplers N must be
/// a power of two; the ellipsoid dimension must be at least 2.
pub fn generate_boundary_points_with(
    e: &EllipsoidConstraint,
    n: usize,
    sampler: BoundarySampler,
) -> Result<PointSet> {
    let s = e.dim();
    if s < 2 {
        return Err(MooError::InvalidInput(format!("ellipsoid dimension {s} below 2")));
    }
    match sampler {
        BoundarySampler::Net | BoundarySampler::NestedNet => {
            if n == 0 || !n.is_power_of_two() {
                return Err(MooError::InvalidInput(format!("N = {n} is not a power of two")));
            }
            let m = n.trailing_zeros();
            let cube = if sampler == BoundarySampler::Net {
                digital_net(m, s - 1)?
            } else {
                digital_sequence_net(m, s - 1)?
            };
            map_to_ellipsoid(&map_to_sphere(&cube)?, e)
        }
        BoundarySampler::UniformCube { seed } => {
            let cube = uniform_cube(n, s - 1, seed);
            map_to_ellipsoid(&map_to_sphere(&cube)?, e)
        }
        BoundarySampler::UniformSphere { seed } => {
            map_to_ellipsoid(&uniform_sphere(n, s, seed), e)
        }
    }
}

/// Net-based boundary points (the default pipeline).
pub fn generate_boundary_points(e: &EllipsoidConstraint, n: usize) -> Result<PointSet> {
    generate_boundary_points_with(e, n, BoundarySampler::Net)
}

/// Riesz energy sum over ordered pairs: sum_{i != j} |x_i - x_j|^{-exponent}.
pub fn riesz_energy(points: &PointSet, exponent: f64) -> Result<f64> {
    if points.n < 2 {
        return Err(MooError::InvalidInput("need at least 2 points".into()));
    }
    if !(exponent > 0.0) {
        return Err(MooError::InvalidInput(format!("exponent {exponent} must be positive")));
    }
    let mut total = 0.0f64;
    for i in 0..points.n {
        let xi = points.point(i);
        for j in i + 1..points.n {
            let xj = points.point(j);
            let dist_sq: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist_sq == 0.0 {
                return Err(MooError::CoincidentPoints(i, j));
            }
            total += 2.0 * dist_sq.powf(-exponent / 2.0);
        }
    }
    Ok(total)
}

/// Default tangent-point budget at a given ambient dimension:
/// max(1024, 2^m) with m the smallest integer such that 2^m >= 10 * dim.
pub fn default_n_points(dim: usize) -> usize {
    let target = 10usize.saturating_mul(dim);
    let mut n = 1024usize;
    while n < target {
        n <<= 1;
    }
    n
}

/// Exhaustive elementary-interval check: every base-2 box of volume
/// 2^{t - m} must contain exactly 2^t points. Feasible only for small s * m.
pub fn verify_net_property(points: &PointSet, m: u32, t: u32) -> Result<bool> {
    if points.space != SpaceTag::UnitCube {
        return Err(MooError::InvalidInput("net check expects cube points".into()));
    }
    let s = points.dim;
    if t > m {
        return Err(MooError::InvalidInput(format!("t = {t} exceeds m = {m}")));
    }
    let depth = (m - t) as usize;
    // all shapes (d_1, ..., d_s) with sum = m - t
    let mut shape = vec![0usize; s];
    fn recurse(
        shape: &mut Vec<usize>,
        idx: usize,
        left: usize,
        points: &PointSet,
        expected: usize,
    ) -> bool {
        if idx + 1 == shape.len() {
            shape[idx] = left;
            return check_shape(shape, points, expected);
        }
        for d in 0..=left {
            shape[idx] = d;
            if !recurse(shape, idx + 1, left - d, points, expected) {
                return false;
            }
        }
        true
    }
    fn check_shape(shape: &[usize], points: &PointSet, expected: usize) -> bool {
        let total_cells: usize = 1 << shape.iter().sum::<usize>();
        let mut counts = vec![0usize; total_cells];
        for i in 0..points.n {
            let p = points.point(i);
            let mut cell = 0usize;
            for (d, &bits) in shape.iter().enumerate() {
                let coord = (p[d] * (1u64 << bits) as f64).floor() as usize;
                let coord = coord.min((1 << bits) - 1);
                cell = (cell << bits) | coord;
            }
            counts[cell] += 1;
        }
        counts.iter().all(|&c| c == expected)
    }
    Ok(recurse(&mut shape, 0, depth, points, 1 << t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn van_der_corput_order() {
        let net = digital_net(2, 1).unwrap();
        assert_eq!(net.coords, vec![0.0, 0.5, 0.25, 0.75]);
        assert!(matches!(net.provenance, Provenance::Net { t: Some(0), .. }));
    }

    #[test]
    fn m_zero_single_origin() {
        let net = digital_net(0, 3).unwrap();
        assert_eq!(net.n, 1);
        assert_eq!(net.coords, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn dyadic_intervals_hold_one_point_each() {
        let net = digital_net(2, 1).unwrap();
        assert!(verify_net_property(&net, 2, 0).unwrap());
    }

    #[test]
    fn two_dim_net_is_t0() {
        for m in [2u32, 4, 6] {
            let net = digital_net(m, 2).unwrap();
            assert!(verify_net_property(&net, m, 0).unwrap(), "m = {m}");
            // all points distinct
            for i in 0..net.n {
                for j in i + 1..net.n {
                    assert_ne!(net.point(i), net.point(j));
                }
            }
        }
    }

    #[test]
    fn three_dim_net_is_t0() {
        for m in [2u32, 4, 5] {
            let net = digital_net(m, 3).unwrap();
            assert!(verify_net_property(&net, m, 0).unwrap(), "m = {m}");
        }
    }

    #[test]
    fn sequence_net_passes_at_recorded_t() {
        for s in [4usize, 5] {
            let m = 6u32;
            let net = digital_sequence_net(m, s).unwrap();
            let t = match net.provenance {
                Provenance::Net { t: Some(t), .. } => t,
                _ => unreachable!(),
            };
            assert!(t <= m);
            assert!(verify_net_property(&net, m, t).unwrap(), "s = {s}, t = {t}");
        }
    }

    #[test]
    fn sequence_prefixes_are_nested() {
        let big = digital_sequence_net(6, 5).unwrap();
        let small = digital_sequence_net(4, 5).unwrap();
        assert_eq!(&big.coords[..small.coords.len()], &small.coords[..]);
    }

    #[test]
    fn dimension_table_cap_is_reported() {
        let r = digital_net(3, max_sequence_dims() + 1);
        assert!(matches!(r, Err(MooError::DimensionTableExceeded { .. })));
    }

    #[test]
    fn sphere_map_closed_form_values() {
        let mk = |coords: Vec<f64>, dim| PointSet {
            dim,
            n: coords.len() / dim,
            coords,
            space: SpaceTag::UnitCube,
            provenance: Provenance::Random { name: "fixed", seed: 0 },
        };
        let s1 = map_to_sphere(&mk(vec![0.0, 0.25], 1)).unwrap();
        assert!((s1.point(0)[0] - 1.0).abs() < 1e-15);
        assert!(s1.point(0)[1].abs() < 1e-15);
        assert!(s1.point(1)[0].abs() < 1e-15);
        assert!((s1.point(1)[1] - 1.0).abs() < 1e-15);

        let s2 = map_to_sphere(&mk(vec![0.0, 0.5], 2)).unwrap();
        assert!((s2.point(0)[0] - 1.0).abs() < 1e-15);
        assert!(s2.point(0)[1].abs() < 1e-15);
        assert!(s2.point(0)[2].abs() < 1e-15);
    }

    #[test]
    fn mapped_points_stay_on_the_sphere() {
        let net = digital_net(6, 3).unwrap();
        let sphere = map_to_sphere(&net).unwrap();
        for i in 0..sphere.n {
            let norm: f64 = sphere.point(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipsoid_map_closed_form() {
        let ball = EllipsoidConstraint::unit_ball(2, 4.0).unwrap();
        let sphere = PointSet {
            dim: 2,
            n: 1,
            coords: vec![1.0, 0.0],
            space: SpaceTag::UnitSphere,
            provenance: Provenance::Random { name: "fixed", seed: 0 },
        };
        let mapped = map_to_ellipsoid(&sphere, &ball).unwrap();
        assert_eq!(mapped.point(0), &[2.0, 0.0]);

        let e = EllipsoidConstraint::new(
            crate::interaction::SymPd::Diagonal(DVector::from_column_slice(&[4.0, 1.0])),
            DVector::zeros(2),
            1.0,
        )
        .unwrap();
        let pts = PointSet {
            dim: 2,
            n: 2,
            coords: vec![1.0, 0.0, 0.0, 1.0],
            space: SpaceTag::UnitSphere,
            provenance: Provenance::Random { name: "fixed", seed: 0 },
        };
        let mapped = map_to_ellipsoid(&pts, &e).unwrap();
        assert_eq!(mapped.point(0), &[0.5, 0.0]);
        assert_eq!(mapped.point(1), &[0.0, 1.0]);
        assert!(e.boundary_residual(mapped.point(0)) < 1e-12);
        assert!(e.boundary_residual(mapped.point(1)) < 1e-12);
    }

    #[test]
    fn shift_only_ellipsoid_translates() {
        let e = EllipsoidConstraint::new(
            crate::interaction::SymPd::Diagonal(DVector::from_element(3, 1.0)),
            DVector::from_column_slice(&[1.0, -2.0, 0.5]),
            1.0,
        )
        .unwrap();
        let sphere = uniform_sphere(20, 3, 9);
        let mapped = map_to_ellipsoid(&sphere, &e).unwrap();
        for i in 0..20 {
            for d in 0..3 {
                assert!((mapped.point(i)[d] - sphere.point(i)[d] - e.center[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn circle_net_angles() {
        let e = EllipsoidConstraint::unit_ball(2, 1.0).unwrap();
        let pts = generate_boundary_points(&e, 4).unwrap();
        let expect = [
            (1.0, 0.0),   // angle 0
            (-1.0, 0.0),  // angle 180
            (0.0, 1.0),   // angle 90
            (0.0, -1.0),  // angle 270
        ];
        for (i, (ex, ey)) in expect.iter().enumerate() {
            assert!((pts.point(i)[0] - ex).abs() < 1e-14, "point {i}: {:?}", pts.point(i));
            assert!((pts.point(i)[1] - ey).abs() < 1e-14);
        }
    }

    #[test]
    fn single_point_boundary() {
        let e = EllipsoidConstraint::unit_ball(2, 1.0).unwrap();
        let pts = generate_boundary_points(&e, 1).unwrap();
        assert_eq!(pts.n, 1);
        // psi(Phi(0)) = psi((1, 0)) = (1, 0)
        assert!((pts.point(0)[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn non_power_of_two_rejected_for_nets() {
        let e = EllipsoidConstraint::unit_ball(2, 1.0).unwrap();
        assert!(generate_boundary_points(&e, 5).is_err());
        assert!(generate_boundary_points_with(&e, 5, BoundarySampler::UniformSphere { seed: 0 }).is_ok());
    }

    #[test]
    fn riesz_two_points() {
        let pts = PointSet {
            dim: 2,
            n: 2,
            coords: vec![0.0, 0.0, 1.0, 0.0],
            space: SpaceTag::UnitCube,
            provenance: Provenance::Random { name: "fixed", seed: 0 },
        };
        assert_eq!(riesz_energy(&pts, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn riesz_fourth_roots_of_unity() {
        let pts = PointSet {
            dim: 2,
            n: 4,
            coords: vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0],
            space: SpaceTag::UnitSphere,
            provenance: Provenance::Random { name: "fixed", seed: 0 },
        };
        let e = riesz_energy(&pts, 1.0).unwrap();
        assert!((e - (4.0 * 2.0f64.sqrt() + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn riesz_coincident_points_error() {
        let pts = PointSet {
            dim: 1,
            n: 2,
            coords: vec![0.5, 0.5],
            space: SpaceTag::UnitCube,
            provenance: Provenance::Random { name: "fixed", seed: 0 },
        };
        assert!(matches!(riesz_energy(&pts, 1.0), Err(MooError::CoincidentPoints(0, 1))));
    }

    #[test]
    fn roots_of_unity_minimize_energy_against_random() {
        let n = 16usize;
        let roots = PointSet {
            dim: 2,
            n,
            coords: (0..n)
                .flat_map(|i| {
                    let a = 2.0 * PI * i as f64 / n as f64;
                    [a.cos(), a.sin()]
                })
                .collect(),
            space: SpaceTag::UnitSphere,
            provenance: Provenance::Random { name: "roots", seed: 0 },
        };
        let e_roots = riesz_energy(&roots, 1.0).unwrap();
        let mut wins = 0usize;
        for seed in 0..100u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let rand_pts = PointSet {
                dim: 2,
                n,
                coords: (0..n)
                    .flat_map(|_| {
                        let a = 2.0 * PI * rng.gen::<f64>();
                        [a.cos(), a.sin()]
                    })
                    .collect(),
                space: SpaceTag::UnitSphere,
                provenance: Provenance::Random { name: "u", seed },
            };
            if e_roots < riesz_energy(&rand_pts, 1.0).unwrap() {
                wins += 1;
            }
        }
        assert!(wins >= 99, "roots of unity won only {wins}/100 trials");
    }

    #[test]
    fn digital_shift_preserves_the_net_property() {
        let net = digital_net(4, 3).unwrap();
        let shifted = digital_shift(&net, 99).unwrap();
        assert_ne!(net.coords, shifted.coords);
        assert!(verify_net_property(&shifted, 4, 0).unwrap());
        // same seed, same shift
        let again = digital_shift(&net, 99).unwrap();
        assert_eq!(shifted.coords, again.coords);
    }

    #[test]
    fn cap_discrepancy_improves_with_refinement() {
        // statistical measure preservation: the cap-family discrepancy of the
        // mapped net does not degrade as m grows (10% slack per comparison)
        let mut rng = ChaCha12Rng::seed_from_u64(44);
        let mut g = nalgebra::DMatrix::zeros(3, 3);
        for r in 0..3 {
            for c in 0..3 {
                g[(r, c)] = rng.gen_range(-1.0..1.0);
            }
        }
        let b = &g * g.transpose() + nalgebra::DMatrix::identity(3, 3);
        let e = EllipsoidConstraint::new(
            crate::interaction::SymPd::Dense(b),
            DVector::from_column_slice(&[0.1, -0.2, 0.3]),
            1.5,
        )
        .unwrap();
        // fixed cap family
        let caps: Vec<([f64; 3], f64)> = (0..100)
            .map(|_| {
                let mut v = [0.0f64; 3];
                loop {
                    for spot in v.iter_mut() {
                        *spot = rng.gen_range(-1.0..1.0);
                    }
                    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    if n > 1e-6 {
                        v.iter_mut().for_each(|x| *x /= n);
                        break;
                    }
                }
                (v, rng.gen_range(-0.9..0.9))
            })
            .collect();
        let discrepancy = |m: u32| -> f64 {
            let pts = generate_boundary_points(&e, 1usize << m).unwrap();
            let pre = pull_back_to_sphere(&pts, &e).unwrap();
            caps.iter()
                .map(|(v, h)| {
                    let inside = (0..pre.n)
                        .filter(|&i| {
                            let u = pre.point(i);
                            u[0] * v[0] + u[1] * v[1] + u[2] * v[2] >= *h
                        })
                        .count();
                    (inside as f64 / pre.n as f64 - (1.0 - h) / 2.0).abs()
                })
                .fold(0.0f64, f64::max)
        };
        let (d6, d8, d10) = (discrepancy(6), discrepancy(8), discrepancy(10));
        assert!(d8 <= d6 * 1.1, "m=8 discrepancy {d8} vs m=6 {d6}");
        assert!(d10 <= d8 * 1.1, "m=10 discrepancy {d10} vs m=8 {d8}");
    }

    #[test]
    fn mapped_nets_beat_uniform_energy() {
        // exponent s-1 on the sphere in R^s, N = 256
        for s in [2usize, 3] {
            let net = digital_net(8, s - 1).unwrap();
            let mapped = map_to_sphere(&net).unwrap();
            assert_eq!(mapped.dim, s);
            let e_net = riesz_energy(&mapped, (s - 1) as f64).unwrap();
            let mut wins = 0usize;
            for seed in 0..100u64 {
                let uniform = uniform_sphere(256, s, seed);
                if e_net < riesz_energy(&uniform, (s - 1) as f64).unwrap() {
                    wins += 1;
                }
            }
            assert!(wins >= 90, "s = {s}: net won only {wins}/100 energy trials");
        }
    }

    #[test]
    fn default_point_budget() {
        assert_eq!(default_n_points(5), 1024);
        assert_eq!(default_n_points(102), 1024);
        assert_eq!(default_n_points(103), 2048);
        assert_eq!(default_n_points(100_000), 1 << 20);
    }
}
