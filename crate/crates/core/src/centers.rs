//! Trial-center generation, fill distance, and fixed-radius neighbor search.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{dist, dist2, linspace, BoxDomain, Points};

/// Trial centers `X` inside the center box `Sigma`.
#[derive(Debug, Clone)]
pub struct CenterSet {
    points: Points,
    sigma: BoxDomain,
    h: f64,
}

impl CenterSet {
    /// Wraps arbitrary points, checking containment and distinctness. The
    /// fill distance is estimated on the default probe grid.
    pub fn new(points: Points, sigma: BoxDomain) -> Result<Self> {
        if points.dim() != sigma.dim() {
            return Err(Error::InvalidParameter(
                "center dimension does not match the box".into(),
            ));
        }
        if let Some(p) = points.iter().find(|p| !sigma.contains(p)) {
            return Err(Error::InvalidParameter(format!(
                "center {p:?} lies outside the center box"
            )));
        }
        if points.len() > 1 && separation_distance(&points) <= 0.0 {
            return Err(Error::InvalidParameter("duplicate trial centers".into()));
        }
        let h = if points.is_empty() {
            0.0
        } else {
            let res = default_probe_resolution(points.len(), sigma.dim());
            fill_distance_of(&points, &sigma, res)?
        };
        Ok(Self { points, sigma, h })
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn sigma(&self) -> &BoxDomain {
        &self.sigma
    }

    /// Fill-distance estimate `h_X` on the default probe grid.
    pub fn fill_distance(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }
}

/// Probe points per axis used for the stored fill distance: ten probes per
/// center gap, so uniform grids are nested in the probe grid.
fn default_probe_resolution(n: usize, dim: usize) -> usize {
    let per_axis = (n as f64).powf(1.0 / dim as f64).ceil() as usize;
    10 * per_axis.saturating_sub(1).max(1) + 1
}

/// Tensor grid including the box corners, `counts[i]` points along axis `i`.
/// In 2D the first axis varies fastest.
pub fn uniform_centers(sigma: &BoxDomain, counts: &[usize]) -> Result<CenterSet> {
    if counts.len() != sigma.dim() {
        return Err(Error::InvalidParameter(format!(
            "expected {} per-axis counts, got {}",
            sigma.dim(),
            counts.len()
        )));
    }
    if counts.iter().any(|&n| n < 2) {
        return Err(Error::InvalidParameter(
            "uniform centers need at least 2 points per axis".into(),
        ));
    }
    let axes: Vec<Vec<f64>> = (0..sigma.dim())
        .map(|i| linspace(sigma.lo()[i], sigma.hi()[i], counts[i]))
        .collect();
    CenterSet::new(tensor_points(&axes), sigma.clone())
}

pub(crate) fn tensor_points(axes: &[Vec<f64>]) -> Points {
    match axes {
        [x] => Points::from_1d(x),
        [x, y] => {
            let mut pts = Points::empty(2);
            for yj in y {
                for xi in x {
                    pts.push(&[*xi, *yj]);
                }
            }
            pts
        }
        _ => unreachable!("dimension is 1 or 2"),
    }
}

/// Chebyshev-Gauss-Lobatto nodes `cos(pi i/(n-1))` mapped onto `interval`,
/// in ascending order.
pub fn chebyshev_centers(interval: &BoxDomain, n: usize) -> Result<CenterSet> {
    if interval.dim() != 1 {
        return Err(Error::InvalidParameter(
            "Chebyshev centers are one-dimensional".into(),
        ));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "Chebyshev centers need n >= 2 (got {n})"
        )));
    }
    let (a, b) = (interval.lo()[0], interval.hi()[0]);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let nm1 = (n - 1) as f64;
    // -cos(pi i/(n-1)) written as a sine so the set is exactly symmetric.
    let xs: Vec<f64> = (0..n)
        .map(|i| {
            let t = (std::f64::consts::PI * (2.0 * i as f64 - nm1) / (2.0 * nm1)).sin();
            match i {
                0 => a,
                _ if i == n - 1 => b,
                _ => mid + half * t,
            }
        })
        .collect();
    CenterSet::new(Points::from_1d(&xs), interval.clone())
}

/// Radical inverse of `i` in the given base.
pub fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    out
}

/// First `n` Halton points (indices 1..=n, bases 2 and 3) mapped into `sigma`.
pub fn halton_centers(sigma: &BoxDomain, n: usize) -> Result<CenterSet> {
    const BASES: [u64; 2] = [2, 3];
    let d = sigma.dim();
    let mut pts = Points::empty(d);
    let mut p = [0.0; 2];
    for i in 1..=n as u64 {
        for (ax, v) in p.iter_mut().enumerate().take(d) {
            let (a, b) = (sigma.lo()[ax], sigma.hi()[ax]);
            *v = a + (b - a) * radical_inverse(i, BASES[ax]);
        }
        pts.push(&p[..d]);
    }
    CenterSet::new(pts, sigma.clone())
}

/// Largest distance from a probe of a uniform `probe_resolution`-per-axis grid
/// over the center box to its nearest center.
pub fn fill_distance(centers: &CenterSet, probe_resolution: usize) -> Result<f64> {
    fill_distance_of(centers.points(), centers.sigma(), probe_resolution)
}

fn fill_distance_of(points: &Points, sigma: &BoxDomain, probe_resolution: usize) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidParameter(
            "fill distance of an empty center set".into(),
        ));
    }
    let res = probe_resolution.max(2);
    let axes: Vec<Vec<f64>> = (0..sigma.dim())
        .map(|i| linspace(sigma.lo()[i], sigma.hi()[i], res))
        .collect();
    let probes = tensor_points(&axes);
    let worst2 = (0..probes.len())
        .into_par_iter()
        .map(|i| {
            let q = probes.get(i);
            points
                .iter()
                .map(|p| dist2(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst2.sqrt())
}

/// Smallest pairwise distance between distinct points.
pub fn separation_distance(points: &Points) -> f64 {
    let n = points.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let a = points.get(i);
            ((i + 1)..n)
                .map(|j| dist2(a, points.get(j)))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min)
        .sqrt()
}

/// Uniform spatial hash with cells of edge `cell`.
#[derive(Debug, Clone)]
pub struct SpatialHash {
    dim: usize,
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl SpatialHash {
    pub fn new(points: &Points, cell: f64) -> Self {
        assert!(cell > 0.0, "hash cell must be positive");
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self {
            dim: points.dim(),
            cell,
            buckets,
        }
    }

    fn key(p: &[f64], cell: f64) -> (i64, i64) {
        let kx = (p[0] / cell).floor() as i64;
        let ky = if p.len() > 1 {
            (p[1] / cell).floor() as i64
        } else {
            0
        };
        (kx, ky)
    }

    /// Indices of stored points within `radius` (strictly) of `q`, ascending.
    /// Requires `radius <= cell`.
    pub fn query(&self, points: &Points, q: &[f64], radius: f64, out: &mut Vec<usize>) {
        debug_assert!(radius <= self.cell * (1.0 + 1e-12));
        out.clear();
        let (kx, ky) = Self::key(q, self.cell);
        let dy_range = if self.dim > 1 { -1..=1 } else { 0..=0 };
        let r2 = radius * radius;
        for dx in -1..=1 {
            for dy in dy_range.clone() {
                if let Some(b) = self.buckets.get(&(kx + dx, ky + dy)) {
                    out.extend(b.iter().copied().filter(|&j| dist2(points.get(j), q) < r2));
                }
            }
        }
        out.sort_unstable();
    }
}

/// For every `a_i`, the ascending list of `j` with `|a_i - b_j| < radius`.
pub fn neighbors_within(points_a: &Points, points_b: &Points, radius: f64) -> Vec<Vec<usize>> {
    assert!(radius > 0.0, "neighbor radius must be positive");
    let hash = SpatialHash::new(points_b, radius);
    (0..points_a.len())
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            hash.query(points_b, points_a.get(i), radius, buf);
            buf.clone()
        })
        .collect()
}

/// Brute-force counterpart of [`neighbors_within`].
pub fn neighbors_brute_force(points_a: &Points, points_b: &Points, radius: f64) -> Vec<Vec<usize>> {
    points_a
        .iter()
        .map(|a| {
            (0..points_b.len())
                .filter(|&j| dist(a, points_b.get(j)) < radius)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn iv(a: f64, b: f64) -> BoxDomain {
        BoxDomain::interval(a, b).unwrap()
    }

    #[test]
    fn uniform_examples() {
        let c = uniform_centers(&iv(-4.0, 4.0), &[3]).unwrap();
        assert_eq!(c.points().as_flat(), &[-4.0, 0.0, 4.0]);
        let sq = BoxDomain::square(-4.0, 4.0).unwrap();
        let c = uniform_centers(&sq, &[2, 2]).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.points().get(3), &[4.0, 4.0]);
        let c = uniform_centers(&iv(-4.0, 4.0), &[101]).unwrap();
        let p = c.points().as_flat();
        assert_relative_eq!(p[1] - p[0], 0.08, max_relative = 1e-12);
        assert!(uniform_centers(&iv(-4.0, 4.0), &[1]).is_err());
        assert!(uniform_centers(&iv(-4.0, 4.0), &[3, 3]).is_err());
    }

    #[test]
    fn chebyshev_examples() {
        let c = chebyshev_centers(&iv(-1.0, 1.0), 3).unwrap();
        assert_eq!(c.points().as_flat(), &[-1.0, 0.0, 1.0]);
        let c = chebyshev_centers(&iv(-1.0, 1.0), 5).unwrap();
        let p = c.points().as_flat();
        assert_relative_eq!(p[1], -std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-15);
        assert_relative_eq!(p[3], std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-15);
        let c = chebyshev_centers(&iv(-11.0, 11.0), 3).unwrap();
        assert_eq!(c.points().as_flat(), &[-11.0, 0.0, 11.0]);
        assert!(chebyshev_centers(&iv(-1.0, 1.0), 1).is_err());
        let c = chebyshev_centers(&iv(-11.0, 11.0), 100).unwrap();
        let p = c.points().as_flat();
        for i in 0..100 {
            assert_eq!(p[i], -p[99 - i]);
            let want = -11.0 * (std::f64::consts::PI * i as f64 / 99.0).cos();
            assert!((p[i] - want).abs() < 1e-13);
        }
    }

    #[test]
    fn halton_examples() {
        let c = halton_centers(&iv(0.0, 1.0), 3).unwrap();
        assert_eq!(c.points().as_flat(), &[0.5, 0.25, 0.75]);
        let sq = BoxDomain::square(0.0, 1.0).unwrap();
        let c = halton_centers(&sq, 4).unwrap();
        assert_eq!(c.points().get(0)[0], 0.5);
        assert_relative_eq!(c.points().get(0)[1], 1.0 / 3.0, max_relative = 1e-15);
        assert!(halton_centers(&iv(0.0, 1.0), 0).unwrap().is_empty());
        let a = halton_centers(&BoxDomain::square(-10.0, 10.0).unwrap(), 441).unwrap();
        let b = halton_centers(&BoxDomain::square(-10.0, 10.0).unwrap(), 441).unwrap();
        assert_eq!(a.points(), b.points());
    }

    #[test]
    fn fill_distance_examples() {
        let c = uniform_centers(&iv(-4.0, 4.0), &[3]).unwrap();
        assert_eq!(fill_distance(&c, 101).unwrap(), 2.0);
        assert_eq!(c.fill_distance(), 2.0);
        let c = uniform_centers(&iv(-4.0, 4.0), &[101]).unwrap();
        assert_relative_eq!(fill_distance(&c, 201).unwrap(), 0.04, max_relative = 1e-10);
        assert_relative_eq!(c.fill_distance(), 0.04, max_relative = 1e-10);
        let c = CenterSet::new(Points::from_1d(&[0.0]), iv(-1.0, 1.0)).unwrap();
        assert_eq!(fill_distance(&c, 7).unwrap(), 1.0);
        let empty = CenterSet::new(Points::empty(1), iv(-1.0, 1.0)).unwrap();
        assert!(fill_distance(&empty, 10).is_err());
    }

    #[test]
    fn fill_distance_grows_with_nested_probes() {
        let c = halton_centers(&BoxDomain::square(-1.0, 1.0).unwrap(), 30).unwrap();
        let mut prev = 0.0;
        for res in [3, 5, 9, 17, 33, 65] {
            let h = fill_distance(&c, res).unwrap();
            assert!(h >= prev);
            prev = h;
        }
    }

    #[test]
    fn duplicates_and_outside_points_rejected() {
        assert!(CenterSet::new(Points::from_1d(&[0.0, 0.0]), iv(-1.0, 1.0)).is_err());
        assert!(CenterSet::new(Points::from_1d(&[2.0]), iv(-1.0, 1.0)).is_err());
    }

    #[test]
    fn neighbors_extremes() {
        let a = Points::from_1d(&[0.0, 1.0, 2.0]);
        let b = Points::from_1d(&[0.5, 1.5]);
        let full = neighbors_within(&a, &b, 10.0);
        assert!(full.iter().all(|row| row == &vec![0, 1]));
        let none = neighbors_within(&a, &b, 0.4);
        assert!(none.iter().all(|row| row.is_empty()));
    }

    #[test]
    fn neighbors_match_brute_force() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for dim in [1, 2] {
            for (n, radius) in [(100, 0.3), (500, 0.07), (250, 0.5)] {
                let coords: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let a = Points::new(dim, coords);
                let coords: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let b = Points::new(dim, coords);
                assert_eq!(
                    neighbors_within(&a, &b, radius),
                    neighbors_brute_force(&a, &b, radius)
                );
                assert_eq!(
                    neighbors_within(&a, &a, radius),
                    neighbors_brute_force(&a, &a, radius)
                );
            }
        }
    }
}
