//! Small dense complex linear algebra.
//!
//! Everything here targets matrices with a handful of rows (band counts up to
//! about 16). The Hermitian eigensolver is a cyclic complex Jacobi iteration,
//! which is accurate to machine precision at these sizes and fully
//! deterministic.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Tolerance used when validating Hermiticity at construction.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Dense square complex matrix, row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MatrixRepr", try_from = "MatrixRepr")]
pub struct CMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        CMatrix {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn diagonal(values: &[C64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        CMatrix { dim, data }
    }

    /// Builds a matrix from rows. Fails if the rows are ragged.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(CMatrix { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn conj(&self) -> Self {
        CMatrix {
            dim: self.dim,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        CMatrix {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    /// Largest deviation from Hermiticity, with its position.
    pub fn hermitian_violation(&self) -> (f64, usize, usize) {
        let mut worst = (0.0, 0, 0);
        for i in 0..self.dim {
            for j in i..self.dim {
                let v = (self[(i, j)] - self[(j, i)].conj()).norm();
                if v > worst.0 {
                    worst = (v, i, j);
                }
            }
        }
        worst
    }

    /// `(A + A†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.dim, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }

    /// `A B - B A`.
    pub fn commutator(&self, other: &CMatrix) -> CMatrix {
        &(self * other) - &(other * self)
    }

    /// Restriction `V† A V` where `V` has the given columns.
    pub fn compress(&self, columns: &[Vec<C64>]) -> CMatrix {
        let av: Vec<Vec<C64>> = columns.iter().map(|c| self.matvec(c)).collect();
        CMatrix::from_fn(columns.len(), |a, b| inner(&columns[a], &av[b]))
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim);
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim);
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim);
        let n = self.dim;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for l in 0..n {
                let a = self[(i, l)];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs[(l, j)];
                }
            }
        }
        out
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale_re(-1.0)
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix({}x{}) [", self.dim, self.dim)?;
        for i in 0..self.dim {
            write!(f, "  ")?;
            for j in 0..self.dim {
                let z = self[(i, j)];
                write!(f, "{:>10.6}{:+.6}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// A complex Hermitian matrix. Hermiticity is checked once, at construction.
#[derive(Clone, PartialEq, Debug)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Validates `m` to within [`HERMITIAN_TOL`] and stores its exact
    /// Hermitian part.
    pub fn new(m: CMatrix) -> Result<Self> {
        Self::with_tolerance(m, HERMITIAN_TOL)
    }

    pub fn with_tolerance(m: CMatrix, tol: f64) -> Result<Self> {
        if m.dim() == 0 {
            return Err(Error::InvalidArgument("matrix dimension must be >= 1".into()));
        }
        let (violation, row, col) = m.hermitian_violation();
        if violation > tol {
            return Err(Error::NotHermitian { row, col, violation });
        }
        Ok(HermitianMatrix(m.hermitian_part()))
    }

    /// Symmetrizes `m` without validation. For evaluators already known to
    /// produce Hermitian output up to rounding.
    pub(crate) fn hermitize(m: CMatrix) -> Self {
        HermitianMatrix(m.hermitian_part())
    }

    pub fn from_real_diagonal(values: &[f64]) -> Self {
        HermitianMatrix(CMatrix::diagonal(
            &values.iter().map(|v| C64::new(*v, 0.0)).collect::<Vec<_>>(),
        ))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn add_scaled(&self, other: &HermitianMatrix, s: f64) -> HermitianMatrix {
        HermitianMatrix(&self.0 + &other.0.scale_re(s))
    }

    pub fn scale(&self, s: f64) -> HermitianMatrix {
        HermitianMatrix(self.0.scale_re(s))
    }

    /// `U† H U` for unitary `U`.
    pub fn conjugate_by(&self, u: &CMatrix) -> HermitianMatrix {
        HermitianMatrix::hermitize(&(&u.adjoint() * &self.0) * u)
    }
}

impl Index<(usize, usize)> for HermitianMatrix {
    type Output = C64;
    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.0[idx]
    }
}

/// Eigenvalues in ascending order with the matching orthonormal eigenvectors.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    /// `vectors[i]` is the eigenvector for `values[i]`.
    pub vectors: Vec<Vec<C64>>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Smallest spacing between consecutive eigenvalues (infinite for k = 1).
    pub fn min_gap(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance from band `band` to its nearest neighbouring band.
    pub fn band_gap(&self, band: usize) -> f64 {
        let mut g = f64::INFINITY;
        if band > 0 {
            g = g.min(self.values[band] - self.values[band - 1]);
        }
        if band + 1 < self.values.len() {
            g = g.min(self.values[band + 1] - self.values[band]);
        }
        g
    }
}

/// Tuning knobs for [`eigh_with`].
#[derive(Clone, Copy, Debug)]
pub struct EighOptions {
    pub max_sweeps: usize,
    /// Convergence: off-diagonal Frobenius norm below `tol * ||H||_F`.
    pub tol: f64,
    /// Components with modulus below this are skipped when fixing phases.
    pub phase_threshold: f64,
}

impl Default for EighOptions {
    fn default() -> Self {
        EighOptions {
            max_sweeps: 64,
            tol: 1e-15,
            phase_threshold: 1e-8,
        }
    }
}

/// Hermitian eigendecomposition with ascending eigenvalues.
///
/// Each eigenvector is rephased so that its first component of modulus
/// above the phase threshold is real and positive.
pub fn eigh(h: &HermitianMatrix) -> Result<EigenDecomposition> {
    eigh_with(h, &EighOptions::default())
}

pub fn eigh_with(h: &HermitianMatrix, opts: &EighOptions) -> Result<EigenDecomposition> {
    let n = h.dim();
    let mut a = h.matrix().clone();
    let mut v = CMatrix::identity(n);
    let scale = a.norm();
    let target = opts.tol * scale.max(f64::MIN_POSITIVE);

    let off_norm = |a: &CMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)].norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&a) > target {
        if sweeps == opts.max_sweeps {
            return Err(Error::EigenNoConvergence {
                sweeps,
                residual: off_norm(&a),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                jacobi_rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(x, x)].re.total_cmp(&a[(y, y)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = order
        .iter()
        .map(|&col| {
            let mut vec: Vec<C64> = (0..n).map(|row| v[(row, col)]).collect();
            fix_phase(&mut vec, opts.phase_threshold);
            vec
        })
        .collect();
    Ok(EigenDecomposition { values, vectors })
}

/// One complex Jacobi rotation zeroing `a[p][q]`.
fn jacobi_rotate(a: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let n = a.dim();
    let phase = apq / r; // e^{i phi}
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let tau = (aqq - app) / (2.0 * r);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    // G = diag(1, e^{-i phi}) * [[c, s], [-s, c]] on the (p, q) plane.
    let g_pp = C64::new(c, 0.0);
    let g_pq = C64::new(s, 0.0);
    let g_qp = -phase.conj() * s;
    let g_qq = phase.conj() * c;

    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * g_pp + akq * g_qp;
        a[(k, q)] = akp * g_pq + akq * g_qq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = g_pp.conj() * apk + g_qp.conj() * aqk;
        a[(q, k)] = g_pq.conj() * apk + g_qq.conj() * aqk;
    }
    a[(p, q)] = ZERO;
    a[(q, p)] = ZERO;
    a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = C64::new(a[(q, q)].re, 0.0);

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * g_pp + vkq * g_qp;
        v[(k, q)] = vkp * g_pq + vkq * g_qq;
    }
}

fn fix_phase(vec: &mut [C64], threshold: f64) {
    if let Some(z) = vec.iter().find(|z| z.norm() > threshold).copied() {
        let rot = z.conj() / z.norm();
        for x in vec.iter_mut() {
            *x *= rot;
        }
    }
}

/// `⟨u, v⟩`, conjugate-linear in the first argument.
pub fn overlap(u: &[C64], v: &[C64]) -> Result<C64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    Ok(inner(u, v))
}

/// Unchecked inner product for hot loops.
#[inline]
pub(crate) fn inner(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

pub fn vector_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Tolerance on `|⟨v_i, v_j⟩ - δ_ij|` accepted by [`projector`].
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Orthogonal projector `Σ v v†` onto the span of orthonormal `vectors`.
pub fn projector(vectors: &[Vec<C64>]) -> Result<HermitianMatrix> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("projector needs at least one vector".into()))?;
    let n = first.len();
    let mut deviation: f64 = 0.0;
    for (i, u) in vectors.iter().enumerate() {
        if u.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: u.len(),
            });
        }
        for (j, w) in vectors.iter().enumerate() {
            let target = if i == j { ONE } else { ZERO };
            deviation = deviation.max((inner(u, w) - target).norm());
        }
    }
    if deviation > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal { deviation });
    }
    let p = CMatrix::from_fn(n, |r, c| vectors.iter().map(|v| v[r] * v[c].conj()).sum());
    Ok(HermitianMatrix::hermitize(p))
}

/// Serializable complex matrix, `re` and `im` stored as nested row arrays.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MatrixRepr {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl From<&CMatrix> for MatrixRepr {
    fn from(m: &CMatrix) -> Self {
        let n = m.dim();
        MatrixRepr {
            re: (0..n).map(|i| (0..n).map(|j| m[(i, j)].re).collect()).collect(),
            im: (0..n).map(|i| (0..n).map(|j| m[(i, j)].im).collect()).collect(),
        }
    }
}

impl TryFrom<&MatrixRepr> for CMatrix {
    type Error = Error;
    fn try_from(r: &MatrixRepr) -> Result<Self> {
        if r.re.len() != r.im.len() {
            return Err(Error::DimensionMismatch {
                expected: r.re.len(),
                actual: r.im.len(),
            });
        }
        let rows: Vec<Vec<C64>> =
            r.re.iter()
                .zip(&r.im)
                .map(|(a, b)| {
                    if a.len() != b.len() {
                        return Err(Error::DimensionMismatch {
                            expected: a.len(),
                            actual: b.len(),
                        });
                    }
                    Ok(a.iter().zip(b).map(|(x, y)| C64::new(*x, *y)).collect())
                })
                .collect::<Result<_>>()?;
        CMatrix::from_rows(&rows)
    }
}

impl From<CMatrix> for MatrixRepr {
    fn from(m: CMatrix) -> Self {
        MatrixRepr::from(&m)
    }
}

impl TryFrom<MatrixRepr> for CMatrix {
    type Error = Error;
    fn try_from(r: MatrixRepr) -> Result<Self> {
        CMatrix::try_from(&r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(rng: &mut impl Rng, n: usize) -> HermitianMatrix {
        let m = CMatrix::from_fn(n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        HermitianMatrix::hermitize(m)
    }

    fn random_unitary(rng: &mut impl Rng, n: usize) -> CMatrix {
        // Eigenvectors of a random Hermitian matrix form a unitary.
        let e = eigh(&random_hermitian(rng, n)).unwrap();
        CMatrix::from_fn(n, |i, j| e.vectors[j][i])
    }

    fn check_decomposition(h: &HermitianMatrix, e: &EigenDecomposition) {
        let n = h.dim();
        for w in e.values.windows(2) {
            assert!(w[0] <= w[1]);
        }
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((inner(&e.vectors[i], &e.vectors[j]) - target).norm() <= 1e-10);
            }
            let hv = h.matrix().matvec(&e.vectors[i]);
            let res: f64 = hv
                .iter()
                .zip(&e.vectors[i])
                .map(|(a, b)| (a - b * e.values[i]).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(res <= 1e-10 * (1.0 + h.matrix().norm()), "residual {res}");
        }
    }

    #[test]
    fn pauli_z() {
        let h = HermitianMatrix::from_real_diagonal(&[1.0, -1.0]);
        let e = eigh(&h).unwrap();
        assert_eq!(e.values, vec![-1.0, 1.0]);
        assert_eq!(e.vectors[0], vec![ZERO, ONE]);
    }

    #[test]
    fn unit_bloch_vector_has_unit_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x: [f64; 3] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            let (a, b, c) = (x[0] / n, x[1] / n, x[2] / n);
            let h = HermitianMatrix::new(
                CMatrix::from_rows(&[
                    vec![C64::new(c, 0.0), C64::new(a, -b)],
                    vec![C64::new(a, b), C64::new(-c, 0.0)],
                ])
                .unwrap(),
            )
            .unwrap();
            // Quadratic formula on λ² - (a² + b² + c²) = 0.
            let disc = (a * a + b * b + c * c).sqrt();
            let e = eigh(&h).unwrap();
            assert!((e.values[0] + disc).abs() < 1e-14);
            assert!((e.values[1] - disc).abs() < 1e-14);
            check_decomposition(&h, &e);
        }
    }

    #[test]
    fn gyroid_origin_spectrum() {
        let h = HermitianMatrix::new(CMatrix::from_fn(4, |i, j| if i == j { ZERO } else { ONE })).unwrap();
        let e = eigh(&h).unwrap();
        let expect = [-1.0, -1.0, -1.0, 3.0];
        for (v, x) in e.values.iter().zip(expect) {
            assert!((v - x).abs() < 1e-13);
        }
        check_decomposition(&h, &e);
    }

    #[test]
    fn phase_convention_first_nonzero_component_real_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = eigh(&random_hermitian(&mut rng, 5)).unwrap();
        for v in &e.vectors {
            let z = v.iter().find(|z| z.norm() > 1e-8).unwrap();
            assert!(z.im.abs() < 1e-15 && z.re > 0.0);
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = CMatrix::from_rows(&[vec![ZERO, ONE], vec![ZERO, ZERO]]).unwrap();
        assert!(matches!(
            HermitianMatrix::new(m),
            Err(Error::NotHermitian { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn overlap_basics() {
        let e1 = vec![ONE, ZERO];
        let e2 = vec![ZERO, ONE];
        assert_eq!(overlap(&e1, &e1).unwrap(), ONE);
        assert_eq!(overlap(&e1, &e2).unwrap(), ZERO);
        let c = C64::from_polar(1.0, 0.7);
        let u = vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let cu: Vec<C64> = u.iter().map(|z| z * c).collect();
        assert!((overlap(&u, &cu).unwrap() - c).norm() < 1e-15);
        assert!(matches!(overlap(&e1, &[ONE]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn projector_cases() {
        let e1 = vec![ONE, ZERO];
        let e2 = vec![ZERO, ONE];
        let p = projector(std::slice::from_ref(&e1)).unwrap();
        assert_eq!(p.matrix(), &CMatrix::diagonal(&[ONE, ZERO]));
        let p = projector(&[e1.clone(), e2]).unwrap();
        assert_eq!(p.matrix(), &CMatrix::identity(2));
        let bad = vec![C64::new(0.6, 0.0), C64::new(0.9, 0.0)];
        assert!(matches!(projector(&[e1, bad]), Err(Error::NotOrthonormal { .. })));
    }

    #[test]
    fn gyroid_triple_eigenspace_projector() {
        let h = HermitianMatrix::new(CMatrix::from_fn(4, |i, j| if i == j { ZERO } else { ONE })).unwrap();
        let e = eigh(&h).unwrap();
        let p = projector(&e.vectors[..3]).unwrap();
        // Oracle: explicit sum of outer products.
        let oracle = CMatrix::from_fn(4, |r, c| (0..3).map(|b| e.vectors[b][r] * e.vectors[b][c].conj()).sum());
        assert!((p.matrix() - &oracle).max_abs() < 1e-14);
        let pm = p.matrix();
        assert!((&(pm * pm) - pm).max_abs() < 1e-10);
        assert!((pm.trace().re - 3.0).abs() < 1e-10);
        assert!(h.matrix().commutator(pm).max_abs() < 1e-10);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_hermitian(&mut rng, 6);
        let opts = EighOptions {
            max_sweeps: 1,
            tol: 1e-30,
            ..Default::default()
        };
        match eigh_with(&h, &opts) {
            Err(Error::EigenNoConvergence { sweeps: 1, residual }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn reconstruction_trace_and_unitary_invariance(seed in any::<u64>(), n in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_hermitian(&mut rng, n);
            let e = eigh(&h).unwrap();
            check_decomposition(&h, &e);

            let recon = CMatrix::from_fn(n, |r, c| {
                (0..n).map(|b| e.vectors[b][r] * e.vectors[b][c].conj() * e.values[b]).sum()
            });
            prop_assert!((h.matrix() - &recon).max_abs() <= 1e-9);
            prop_assert!((h.trace() - e.values.iter().sum::<f64>()).abs() <= 1e-10);

            let u = random_unitary(&mut rng, n);
            let e2 = eigh(&h.conjugate_by(&u)).unwrap();
            for (a, b) in e.values.iter().zip(&e2.values) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
