//! Sparse kernel matrices on quadrature nodes and the Gramians
//! `A = K^T W K` and `B = sum_xi (D^xi K)^T W (D^xi K)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;

use crate::centers::{neighbors_within, CenterSet};
use crate::error::{Error, Result};
use crate::geometry::Points;
use crate::kernel::Kernel;
use crate::quadrature::QuadratureRule;
use crate::sparse::CsrMatrix;

/// `[Phi(z_i - x_j)]`, storing only pairs closer than the support radius.
pub fn kernel_matrix(kernel: &Kernel, z: &Points, x: &Points) -> CsrMatrix {
    let pattern = neighbors_within(z, x, kernel.support_radius());
    let rows = pattern
        .into_par_iter()
        .enumerate()
        .map(|(i, cols)| {
            let zi = z.get(i);
            let mut disp = [0.0; 2];
            cols.into_iter()
                .map(|j| {
                    displacement(zi, x.get(j), &mut disp);
                    (j, kernel.value(&disp[..zi.len()]))
                })
                .collect()
        })
        .collect();
    CsrMatrix::from_rows(x.len(), rows)
}

/// One matrix per coordinate direction, `[d/dz_xi Phi(z_i - x_j)]`, on the
/// same sparsity pattern as [`kernel_matrix`].
pub fn grad_kernel_matrices(kernel: &Kernel, z: &Points, x: &Points) -> Vec<CsrMatrix> {
    kernel_and_grad_matrices(kernel, z, x).1
}

/// Sparse row entries `(column, value)`.
type Row = Vec<(usize, f64)>;

/// [`kernel_matrix`] and [`grad_kernel_matrices`] from a single neighbor pass.
pub fn kernel_and_grad_matrices(kernel: &Kernel, z: &Points, x: &Points) -> (CsrMatrix, Vec<CsrMatrix>) {
    let d = z.dim();
    assert_eq!(d, x.dim(), "node and center dimensions differ");
    let pattern = neighbors_within(z, x, kernel.support_radius());
    let rows: Vec<(Row, Vec<Row>)> = pattern
        .into_par_iter()
        .enumerate()
        .map(|(i, cols)| {
            let zi = z.get(i);
            let mut disp = [0.0; 2];
            let mut g = [0.0; 2];
            let mut vals = Vec::with_capacity(cols.len());
            let mut grads = vec![Vec::with_capacity(cols.len()); d];
            for j in cols {
                displacement(zi, x.get(j), &mut disp);
                let v = kernel.value_and_grad(&disp[..d], &mut g[..d]);
                vals.push((j, v));
                for (axis, gv) in grads.iter_mut().zip(&g) {
                    axis.push((j, *gv));
                }
            }
            (vals, grads)
        })
        .collect();
    let mut value_rows = Vec::with_capacity(rows.len());
    let mut grad_rows = vec![Vec::with_capacity(rows.len()); d];
    for (v, g) in rows {
        value_rows.push(v);
        for (axis, row) in grad_rows.iter_mut().zip(g) {
            axis.push(row);
        }
    }
    let k = CsrMatrix::from_rows(x.len(), value_rows);
    let kgrad = grad_rows
        .into_iter()
        .map(|r| CsrMatrix::from_rows(x.len(), r))
        .collect();
    (k, kgrad)
}

fn displacement(a: &[f64], b: &[f64], out: &mut [f64; 2]) {
    for (o, (p, q)) in out.iter_mut().zip(a.iter().zip(b)) {
        *o = p - q;
    }
}

/// `sum_m M_m^T W M_m` for matrices sharing a row space. Row `j` of the
/// result is accumulated independently in a fixed order, so the output is
/// bit-identical for any thread count and exactly symmetric.
pub fn weighted_gram(mats: &[&CsrMatrix], weights: &[f64]) -> DMatrix<f64> {
    let n = mats.first().map_or(0, |m| m.ncols());
    let columns: Vec<Vec<Vec<(usize, f64)>>> = mats.iter().map(|m| m.columns()).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut acc = vec![0.0; n];
            for (m, cols) in mats.iter().zip(&columns) {
                for &(i, vij) in &cols[j] {
                    let w = weights[i];
                    let (idx, vals) = m.row(i);
                    for (k, vik) in idx.iter().zip(vals) {
                        acc[*k] += w * (vij * vik);
                    }
                }
            }
            acc
        })
        .collect();
    DMatrix::from_fn(n, n, |r, c| rows[r][c])
}

/// Cholesky factorization of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    /// Factors `m`. If that fails and `relative_jitter > 0`, retries once with
    /// `relative_jitter * trace/N` added to the diagonal.
    pub fn new(m: &DMatrix<f64>, which: &'static str, relative_jitter: f64) -> Result<Self> {
        if let Some(chol) = Cholesky::new(m.clone()) {
            return Ok(Self { chol, jitter: 0.0 });
        }
        if relative_jitter > 0.0 {
            let shift = relative_jitter * m.trace() / m.nrows() as f64;
            let mut shifted = m.clone();
            for i in 0..m.nrows() {
                shifted[(i, i)] += shift;
            }
            if let Some(chol) = Cholesky::new(shifted) {
                log::warn!("{which} factorized with diagonal jitter {shift:.3e}");
                return Ok(Self {
                    chol,
                    jitter: shift,
                });
            }
        }
        Err(Error::NotPositiveDefinite { which })
    }

    /// Diagonal shift that was needed (zero normally).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut v = DVector::from_column_slice(rhs);
        self.chol.solve_mut(&mut v);
        v.data.into()
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let mut v = DVector::from_column_slice(rhs);
        self.chol.solve_mut(&mut v);
        rhs.copy_from_slice(v.as_slice());
    }
}

/// Solves `M x = rhs` with a stored factorization of `M`.
pub fn solve_spd(factor: &SpdFactor, rhs: &[f64]) -> Vec<f64> {
    factor.solve(rhs)
}

/// Assembly settings.
#[derive(Debug, Clone, Copy, Default)]
pub struct AssemblyOptions {
    /// Relative diagonal jitter used only if a Gramian fails to factor.
    /// Capped at `1e-12`.
    pub jitter: f64,
}

/// Everything the semi-discrete system needs: node matrices, Gramians, and
/// their factorizations, all over one fixed quadrature rule.
#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    kernel: Kernel,
    centers: CenterSet,
    rule: QuadratureRule,
    k: CsrMatrix,
    kgrad: Vec<CsrMatrix>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    chol_a: SpdFactor,
    chol_b: SpdFactor,
}

/// Largest relative jitter accepted by [`assemble`].
pub const MAX_JITTER: f64 = 1e-12;

pub fn assemble(kernel: &Kernel, centers: &CenterSet, rule: &QuadratureRule, opts: AssemblyOptions) -> Result<DiscreteSystem> {
    if centers.is_empty() || rule.is_empty() {
        return Err(Error::InvalidParameter(
            "assembly needs nonempty centers and quadrature nodes".into(),
        ));
    }
    if centers.dim() != kernel.dim() || rule.dim() != kernel.dim() {
        return Err(Error::InvalidParameter(
            "kernel, centers and quadrature dimensions differ".into(),
        ));
    }
    if !(0.0..=MAX_JITTER).contains(&opts.jitter) {
        return Err(Error::InvalidParameter(format!(
            "jitter must lie in [0, {MAX_JITTER:e}] (got {})",
            opts.jitter
        )));
    }
    let n = centers.len();
    let m = rule.len();
    if m < 4 * n {
        log::warn!("only {m} quadrature nodes for {n} centers (fewer than 4N)");
    }
    let radius = kernel.support_radius();
    let uncovered = centers
        .points()
        .iter()
        .filter(|x| rule.omega().inner_distance(x) < radius * (1.0 - 1e-12))
        .count();
    if uncovered > 0 {
        log::warn!("{uncovered} center supports extend beyond the quadrature box");
    }
    let (k, kgrad) = kernel_and_grad_matrices(kernel, rule.nodes(), centers.points());
    let a = weighted_gram(&[&k], rule.weights());
    let grads: Vec<&CsrMatrix> = kgrad.iter().collect();
    let b = weighted_gram(&grads, rule.weights());
    let chol_a = SpdFactor::new(&a, "mass Gramian A", opts.jitter)?;
    let chol_b = SpdFactor::new(&b, "stiffness Gramian B", opts.jitter)?;
    Ok(DiscreteSystem {
        kernel: kernel.clone(),
        centers: centers.clone(),
        rule: rule.clone(),
        k,
        kgrad,
        a,
        b,
        chol_a,
        chol_b,
    })
}

impl DiscreteSystem {
    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn centers(&self) -> &CenterSet {
        &self.centers
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    /// `Phi(Z, X)`.
    pub fn k(&self) -> &CsrMatrix {
        &self.k
    }

    /// `D^xi Phi(Z, X)` for each coordinate direction.
    pub fn kgrad(&self) -> &[CsrMatrix] {
        &self.kgrad
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn chol_a(&self) -> &SpdFactor {
        &self.chol_a
    }

    pub fn chol_b(&self) -> &SpdFactor {
        &self.chol_b
    }

    /// Number of trial centers `N`.
    pub fn n(&self) -> usize {
        self.centers.len()
    }

    /// Number of quadrature nodes `M`.
    pub fn m(&self) -> usize {
        self.rule.len()
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Spectral condition numbers of `A` and `B`.
    pub fn condition_numbers(&self) -> (f64, f64) {
        let cond = |m: &DMatrix<f64>| {
            let ev = SymmetricEigen::new(m.clone()).eigenvalues;
            let max = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
            max / min
        };
        (cond(&self.a), cond(&self.b))
    }
}

/// `y = M x` for a dense matrix.
pub(crate) fn dense_mul(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let v = m * DVector::from_column_slice(x);
    v.data.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centers::{halton_centers, uniform_centers};
    use crate::geometry::BoxDomain;
    use crate::quadrature::{composite_gauss_1d, tensor_uniform_2d};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn k32(d: usize) -> Kernel {
        Kernel::new(3, 2, 1.0, d).unwrap()
    }

    // Dense brute force: every (node, center) pair, no neighbor search.
    fn dense_oracle(kernel: &Kernel, z: &Points, x: &Points, w: &[f64]) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let d = z.dim();
        let (m, n) = (z.len(), x.len());
        let mut kd = DMatrix::zeros(m, n);
        let mut g = vec![DMatrix::zeros(m, n); d];
        for i in 0..m {
            for j in 0..n {
                let disp: Vec<f64> = z.get(i).iter().zip(x.get(j)).map(|(a, b)| a - b).collect();
                kd[(i, j)] = kernel.value(&disp);
                let gr = kernel.grad(&disp);
                for ax in 0..d {
                    g[ax][(i, j)] = gr[ax];
                }
            }
        }
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in 0..n {
                for i in 0..m {
                    a[(j, k)] += w[i] * kd[(i, j)] * kd[(i, k)];
                    for gx in &g {
                        b[(j, k)] += w[i] * gx[(i, j)] * gx[(i, k)];
                    }
                }
            }
        }
        (kd, a, b)
    }

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn kernel_matrix_single_point() {
        let z = Points::from_1d(&[0.0]);
        let k = kernel_matrix(&k32(1), &z, &z);
        assert_eq!(k.to_dense()[(0, 0)], 3.0);
    }

    #[test]
    fn kernel_matrix_matches_dense_and_is_sparse() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let z = Points::from_1d(&(0..10).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>());
        let x = Points::from_1d(&(0..10).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>());
        let kernel = k32(1);
        let k = kernel_matrix(&kernel, &z, &x);
        let (kd, _, _) = dense_oracle(&kernel, &z, &x, &[1.0; 10]);
        for i in 0..10 {
            for j in 0..10 {
                assert!((k.get(i, j) - kd[(i, j)]).abs() <= 1e-15);
                if (z.get(i)[0] - x.get(j)[0]).abs() >= 1.0 {
                    assert!(!k.is_stored(i, j));
                }
            }
        }
    }

    #[test]
    fn grad_matrix_examples() {
        let kernel = k32(1);
        let z = Points::from_1d(&[0.5, 0.0]);
        let x = Points::from_1d(&[0.0]);
        let g = &grad_kernel_matrices(&kernel, &z, &x)[0];
        assert_relative_eq!(g.get(0, 0), -3.0625, max_relative = 1e-14);
        assert_eq!(g.get(1, 0), 0.0);
        let g2 = &grad_kernel_matrices(&kernel, &x, &Points::from_1d(&[0.5]))[0];
        assert_eq!(g2.get(0, 0), -g.get(0, 0));
        let k = kernel_matrix(&kernel, &z, &x);
        let kg = kernel_and_grad_matrices(&kernel, &z, &x);
        assert_eq!(kg.0, k);
    }

    #[test]
    fn single_center_mass_matrix() {
        let rule = QuadratureRule::new(Points::from_1d(&[0.0]), vec![2.0], BoxDomain::interval(-1.0, 1.0).unwrap()).unwrap();
        let k = kernel_matrix(&k32(1), rule.nodes(), &Points::from_1d(&[0.0]));
        let a = weighted_gram(&[&k], rule.weights());
        assert_eq!(a[(0, 0)], 18.0);
    }

    #[test]
    fn three_centers_match_dense_quadrature() {
        let sigma = BoxDomain::interval(-1.0, 1.0).unwrap();
        let centers = uniform_centers(&sigma, &[3]).unwrap();
        let rule = composite_gauss_1d(&sigma.padded(1.0), 64, 5).unwrap();
        let sys = assemble(&k32(1), &centers, &rule, AssemblyOptions::default()).unwrap();
        let (_, a, b) = dense_oracle(&k32(1), rule.nodes(), centers.points(), rule.weights());
        assert!(rel_frob(sys.a(), &a) <= 1e-12);
        assert!(rel_frob(sys.b(), &b) <= 1e-12);
    }

    #[test]
    fn disjoint_supports_give_diagonal_gramians() {
        let sigma = BoxDomain::interval(-3.0, 3.0).unwrap();
        let centers = uniform_centers(&sigma, &[3]).unwrap();
        let rule = composite_gauss_1d(&sigma.padded(1.0), 80, 4).unwrap();
        let sys = assemble(&k32(1), &centers, &rule, AssemblyOptions::default()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(sys.a()[(i, j)], 0.0);
                    assert_eq!(sys.b()[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn two_dimensional_sparse_path_matches_dense() {
        let sigma = BoxDomain::square(-1.5, 1.5).unwrap();
        let centers = halton_centers(&sigma, 20).unwrap();
        let rule = tensor_uniform_2d(&sigma.padded(1.0), 24).unwrap();
        let kernel = k32(2);
        let sys = assemble(&kernel, &centers, &rule, AssemblyOptions::default()).unwrap();
        let (kd, a, b) = dense_oracle(&kernel, rule.nodes(), centers.points(), rule.weights());
        assert!(rel_frob(&sys.k().to_dense(), &kd) <= 1e-14);
        assert!(rel_frob(sys.a(), &a) <= 1e-12);
        assert!(rel_frob(sys.b(), &b) <= 1e-12);
        // Gramians are reproducible from the stored factors.
        let kk = sys.k().to_dense();
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(rule.weights()));
        assert!(rel_frob(sys.a(), &(kk.transpose() * &w * &kk)) <= 1e-13);
        let mut bb = DMatrix::zeros(20, 20);
        for g in sys.kgrad() {
            let gd = g.to_dense();
            bb += gd.transpose() * &w * &gd;
        }
        assert!(rel_frob(sys.b(), &bb) <= 1e-13);
        assert_eq!(sys.a(), &sys.a().transpose());
        assert_eq!(sys.b(), &sys.b().transpose());
    }

    #[test]
    fn gramians_are_positive_definite() {
        let sigma = BoxDomain::interval(-4.0, 4.0).unwrap();
        let centers = uniform_centers(&sigma, &[30]).unwrap();
        let rule = composite_gauss_1d(&sigma.padded(1.0), 200, 6).unwrap();
        let sys = assemble(&k32(1), &centers, &rule, AssemblyOptions::default()).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        for _ in 0..100 {
            let x = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
            assert!(x.dot(&(sys.a() * &x)) > 0.0);
            assert!(x.dot(&(sys.b() * &x)) > 0.0);
        }
    }

    #[test]
    fn too_few_nodes_fails_loudly() {
        let sigma = BoxDomain::interval(-4.0, 4.0).unwrap();
        let centers = uniform_centers(&sigma, &[30]).unwrap();
        let rule = composite_gauss_1d(&sigma.padded(1.0), 2, 2).unwrap();
        let err = assemble(&k32(1), &centers, &rule, AssemblyOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
        assert_eq!(err.exit_code(), 4);
        let bad = AssemblyOptions { jitter: 1e-6 };
        assert!(assemble(&k32(1), &centers, &rule, bad).is_err());
    }

    // Gaussian elimination with partial pivoting, independent of Cholesky.
    fn gauss_solve(m: &DMatrix<f64>, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut a = m.clone();
        let mut b = rhs.to_vec();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs())).unwrap();
            a.swap_rows(c, p);
            b.swap(c, p);
            for r in (c + 1)..n {
                let f = a[(r, c)] / a[(c, c)];
                for k in c..n {
                    a[(r, k)] -= f * a[(c, k)];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = ((r + 1)..n).map(|k| a[(r, k)] * x[k]).sum();
            x[r] = (b[r] - s) / a[(r, r)];
        }
        x
    }

    #[test]
    fn solve_spd_examples() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        let g = DMatrix::from_fn(50, 50, |_, _| rng.random_range(-1.0..1.0));
        let m = &g * g.transpose() + DMatrix::identity(50, 50) * 0.5;
        let f = SpdFactor::new(&m, "test", 0.0).unwrap();
        assert_eq!(solve_spd(&f, &[0.0; 50]), vec![0.0; 50]);
        let e1: Vec<f64> = (0..50).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let col: Vec<f64> = m.column(0).iter().copied().collect();
        let x = solve_spd(&f, &col);
        for (a, b) in x.iter().zip(&e1) {
            assert!((a - b).abs() <= 1e-10);
        }
        let rhs: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = solve_spd(&f, &rhs);
        let y = gauss_solve(&m, &rhs);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() <= 1e-9);
        }
        let res = dense_mul(&m, &x);
        let rmax = rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for (a, b) in res.iter().zip(&rhs) {
            assert!((a - b).abs() <= 1e-10 * rmax);
        }
    }

    #[test]
    fn jitter_rescues_semidefinite_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(SpdFactor::new(&m, "test", 0.0).is_err());
        let f = SpdFactor::new(&m, "test", 1e-12).unwrap();
        assert!(f.jitter() > 0.0);
    }
}
