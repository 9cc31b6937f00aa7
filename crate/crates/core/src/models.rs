//! Hamiltonian families over tori (and over coordinate charts for the spin
//! models), together with their symmetry declarations.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, CMatrix, EigenDecomposition, HermitianMatrix, MatrixRepr, C64, I, ONE, ZERO};

pub const TWO_PI: f64 = 2.0 * PI;

/// Default finite-difference step for [`derivative`].
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Tolerance for declared symmetries and Hermiticity of sampled output.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Number of random points used to verify a symmetry declaration.
pub const SYMMETRY_SAMPLES: usize = 100;

const SAMPLE_SEED: u64 = 0x6261_6e64;

/// Reduces an angle into `[0, 2π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TWO_PI);
    if r >= TWO_PI {
        0.0
    } else {
        r
    }
}

/// Reduces an angle difference into `(-π, π]`.
pub fn wrap_signed(x: f64) -> f64 {
    let r = wrap_angle(x);
    if r > PI {
        r - TWO_PI
    } else {
        r
    }
}

/// A quasi-momentum on the d-torus, normalized into `[0, 2π)^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MomentumPoint(Vec<f64>);

impl MomentumPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidArgument("momentum point needs d >= 1".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite momentum {coords:?}")));
        }
        Ok(MomentumPoint(coords.into_iter().map(wrap_angle).collect()))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn negated(&self) -> MomentumPoint {
        MomentumPoint(self.0.iter().map(|c| wrap_angle(-c)).collect())
    }

    /// Euclidean distance using the shortest periodic displacement per axis.
    pub fn distance(&self, other: &MomentumPoint) -> f64 {
        torus_distance(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f64>> for MomentumPoint {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        MomentumPoint::new(v)
    }
}

impl From<MomentumPoint> for Vec<f64> {
    fn from(p: MomentumPoint) -> Self {
        p.0
    }
}

pub fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| wrap_signed(x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Where a family lives. Torus coordinates are periodic; chart coordinates
/// are plain Euclidean and never wrapped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Torus,
    Chart,
}

impl Domain {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Domain::Torus => torus_distance(a, b),
            Domain::Chart => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
        }
    }

    /// Displacement `b - a`, taking the short way round on the torus.
    pub fn displacement(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(x, y)| match self {
                Domain::Torus => wrap_signed(y - x),
                Domain::Chart => y - x,
            })
            .collect()
    }

    pub fn canonical(&self, k: &[f64]) -> Vec<f64> {
        match self {
            Domain::Torus => k.iter().map(|c| wrap_angle(*c)).collect(),
            Domain::Chart => k.to_vec(),
        }
    }
}

/// A deterministic map from coordinates to (nominally Hermitian) matrices.
pub trait Evaluator: Send + Sync {
    fn eval(&self, k: &[f64]) -> CMatrix;

    /// Exact partial derivative along `axis`, when known in closed form.
    fn derivative(&self, _k: &[f64], _axis: usize) -> Option<CMatrix> {
        None
    }
}

impl<F> Evaluator for F
where
    F: Fn(&[f64]) -> CMatrix + Send + Sync,
{
    fn eval(&self, k: &[f64]) -> CMatrix {
        self(k)
    }
}

/// Symmetries a family may declare. Declarations are verified by sampling
/// when attached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SymmetryDeclaration {
    /// `H(-k) = conj(H(k))`: involution `k -> -k` with `Θ` complex conjugation.
    TimeReversal,
    /// `H(k + shift) = U† (-H(k)) U`.
    ShiftedNegation { shift: Vec<f64>, unitary: MatrixRepr },
}

impl SymmetryDeclaration {
    pub fn name(&self) -> &'static str {
        match self {
            SymmetryDeclaration::TimeReversal => "time_reversal",
            SymmetryDeclaration::ShiftedNegation { .. } => "shifted_negation",
        }
    }
}

/// Outcome of sampling a symmetry declaration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymmetryCheck {
    pub passed: bool,
    pub max_violation: f64,
    pub samples: usize,
}

/// A smooth map from the d-torus (or a chart of R^d) to k×k Hermitian
/// matrices. Cheap to clone; the evaluator is shared.
#[derive(Clone)]
pub struct HamiltonianFamily {
    name: String,
    dim: usize,
    bands: usize,
    domain: Domain,
    evaluator: Arc<dyn Evaluator>,
    symmetries: Vec<SymmetryDeclaration>,
}

impl fmt::Debug for HamiltonianFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianFamily")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("bands", &self.bands)
            .field("domain", &self.domain)
            .field("symmetries", &self.symmetries)
            .finish()
    }
}

impl HamiltonianFamily {
    /// Wraps an evaluator, checking output size and Hermiticity on random
    /// samples.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        bands: usize,
        domain: Domain,
        evaluator: Arc<dyn Evaluator>,
    ) -> Result<Self> {
        if dim == 0 || bands == 0 {
            return Err(Error::InvalidArgument("family needs d >= 1 and k >= 1".into()));
        }
        let family = HamiltonianFamily {
            name: name.into(),
            dim,
            bands,
            domain,
            evaluator,
            symmetries: Vec::new(),
        };
        for k in family.sample_points(SYMMETRY_SAMPLES, SAMPLE_SEED) {
            let m = family.evaluator.eval(&k);
            if m.dim() != bands {
                return Err(Error::DimensionMismatch {
                    expected: bands,
                    actual: m.dim(),
                });
            }
            let (violation, row, col) = m.hermitian_violation();
            if violation > SYMMETRY_TOL.max(1e-12 * (1.0 + m.max_abs())) {
                return Err(Error::NotHermitian { row, col, violation });
            }
        }
        Ok(family)
    }

    /// Attaches a symmetry after verifying it on random samples.
    pub fn with_symmetry(mut self, decl: SymmetryDeclaration) -> Result<Self> {
        let check = check_symmetry(&self, &decl, SYMMETRY_SAMPLES)?;
        if !check.passed {
            return Err(Error::SymmetryViolated {
                name: decl.name().into(),
                violation: check.max_violation,
            });
        }
        if !self.symmetries.contains(&decl) {
            self.symmetries.push(decl);
        }
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn symmetries(&self) -> &[SymmetryDeclaration] {
        &self.symmetries
    }

    pub fn has_time_reversal(&self) -> bool {
        self.symmetries.contains(&SymmetryDeclaration::TimeReversal)
    }

    pub fn evaluator(&self) -> &Arc<dyn Evaluator> {
        &self.evaluator
    }

    pub fn at(&self, k: &[f64]) -> HermitianMatrix {
        debug_assert_eq!(k.len(), self.dim);
        HermitianMatrix::hermitize(self.evaluator.eval(k))
    }

    pub fn spectrum(&self, k: &[f64]) -> Result<EigenDecomposition> {
        eigh(&self.at(k))
    }

    /// Smallest spacing between consecutive eigenvalues at `k`.
    pub fn gap(&self, k: &[f64]) -> f64 {
        self.spectrum(k).map(|e| e.min_gap()).unwrap_or(f64::NAN)
    }

    pub fn exact_derivative(&self, k: &[f64], axis: usize) -> Option<HermitianMatrix> {
        self.evaluator.derivative(k, axis).map(HermitianMatrix::hermitize)
    }

    pub fn has_exact_derivatives(&self) -> bool {
        let k = vec![0.1; self.dim];
        self.evaluator.derivative(&k, 0).is_some()
    }

    /// Random sample points: uniform on the torus, or in `[-1, 1]^d` on a chart.
    pub fn sample_points(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..self.dim)
                    .map(|_| match self.domain {
                        Domain::Torus => rng.gen_range(0.0..TWO_PI),
                        Domain::Chart => rng.gen_range(-1.0..1.0),
                    })
                    .collect()
            })
            .collect()
    }

    /// The family `-H`. Time reversal survives negation, shifted negation too.
    pub fn negated(&self) -> HamiltonianFamily {
        HamiltonianFamily {
            name: format!("-({})", self.name),
            dim: self.dim,
            bands: self.bands,
            domain: self.domain,
            evaluator: Arc::new(Negated(self.evaluator.clone())),
            symmetries: self.symmetries.clone(),
        }
    }

    /// Restriction to the affine plane (or line, or 3-space) `origin + Σ x_a dirs[a]`,
    /// as a chart family in the coefficients `x`.
    pub fn restrict(&self, origin: &[f64], dirs: &[Vec<f64>]) -> Result<HamiltonianFamily> {
        if origin.len() != self.dim || dirs.iter().any(|d| d.len() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: origin.len(),
            });
        }
        let eval = Restricted {
            base: self.evaluator.clone(),
            origin: origin.to_vec(),
            dirs: dirs.to_vec(),
        };
        HamiltonianFamily::new(
            format!("{}|restricted", self.name),
            dirs.len(),
            self.bands,
            Domain::Chart,
            Arc::new(eval),
        )
    }

    /// `H ⊕ diag(constants)`.
    pub fn direct_sum_constants(&self, constants: &[f64]) -> Result<HamiltonianFamily> {
        let eval = DirectSum {
            base: self.evaluator.clone(),
            base_bands: self.bands,
            constants: constants.to_vec(),
        };
        let mut family = HamiltonianFamily::new(
            format!("{}+const", self.name),
            self.dim,
            self.bands + constants.len(),
            self.domain,
            Arc::new(eval),
        )?;
        for decl in self.symmetries.clone() {
            if matches!(decl, SymmetryDeclaration::TimeReversal) {
                family = family.with_symmetry(decl)?;
            }
        }
        Ok(family)
    }
}

struct Negated(Arc<dyn Evaluator>);

impl Evaluator for Negated {
    fn eval(&self, k: &[f64]) -> CMatrix {
        -&self.0.eval(k)
    }
    fn derivative(&self, k: &[f64], axis: usize) -> Option<CMatrix> {
        self.0.derivative(k, axis).map(|m| -&m)
    }
}

struct Restricted {
    base: Arc<dyn Evaluator>,
    origin: Vec<f64>,
    dirs: Vec<Vec<f64>>,
}

impl Restricted {
    fn point(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.origin.clone();
        for (xa, dir) in x.iter().zip(&self.dirs) {
            for (pi, di) in p.iter_mut().zip(dir) {
                *pi += xa * di;
            }
        }
        p
    }
}

impl Evaluator for Restricted {
    fn eval(&self, x: &[f64]) -> CMatrix {
        self.base.eval(&self.point(x))
    }
    fn derivative(&self, x: &[f64], axis: usize) -> Option<CMatrix> {
        let p = self.point(x);
        let dir = &self.dirs[axis];
        let mut acc: Option<CMatrix> = None;
        for (beta, w) in dir.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let d = self.base.derivative(&p, beta)?.scale_re(*w);
            acc = Some(match acc {
                None => d,
                Some(a) => &a + &d,
            });
        }
        acc.or_else(|| Some(CMatrix::zeros(self.base.eval(&p).dim())))
    }
}

struct DirectSum {
    base: Arc<dyn Evaluator>,
    base_bands: usize,
    constants: Vec<f64>,
}

impl Evaluator for DirectSum {
    fn eval(&self, k: &[f64]) -> CMatrix {
        let b = self.base.eval(k);
        let n = self.base_bands + self.constants.len();
        CMatrix::from_fn(n, |i, j| {
            if i < self.base_bands && j < self.base_bands {
                b[(i, j)]
            } else if i == j {
                C64::new(self.constants[i - self.base_bands], 0.0)
            } else {
                ZERO
            }
        })
    }
    fn derivative(&self, k: &[f64], axis: usize) -> Option<CMatrix> {
        let b = self.base.derivative(k, axis)?;
        let n = self.base_bands + self.constants.len();
        Some(CMatrix::from_fn(n, |i, j| {
            if i < self.base_bands && j < self.base_bands {
                b[(i, j)]
            } else {
                ZERO
            }
        }))
    }
}

/// Samples a symmetry declaration and reports the largest violation.
pub fn check_symmetry(family: &HamiltonianFamily, decl: &SymmetryDeclaration, samples: usize) -> Result<SymmetryCheck> {
    let unitary = match decl {
        SymmetryDeclaration::TimeReversal => None,
        SymmetryDeclaration::ShiftedNegation { shift, unitary } => {
            if shift.len() != family.dim() {
                return Err(Error::DimensionMismatch {
                    expected: family.dim(),
                    actual: shift.len(),
                });
            }
            let u = CMatrix::try_from(unitary)?;
            if u.dim() != family.bands() {
                return Err(Error::DimensionMismatch {
                    expected: family.bands(),
                    actual: u.dim(),
                });
            }
            let (dev, _, _) = (&(&u.adjoint() * &u) - &CMatrix::identity(u.dim())).hermitian_violation();
            if (&(&u.adjoint() * &u) - &CMatrix::identity(u.dim())).max_abs() > SYMMETRY_TOL {
                return Err(Error::InvalidArgument(format!(
                    "shifted-negation matrix is not unitary (deviation {dev:.3e})"
                )));
            }
            Some(u)
        }
    };
    let mut worst: f64 = 0.0;
    for k in family.sample_points(samples, SAMPLE_SEED ^ 0x5a5a) {
        let h = family.evaluator.eval(&k);
        let (lhs, rhs) = match decl {
            SymmetryDeclaration::TimeReversal => {
                let minus: Vec<f64> = k.iter().map(|c| -c).collect();
                (family.evaluator.eval(&minus), h.conj())
            }
            SymmetryDeclaration::ShiftedNegation { shift, .. } => {
                let u = unitary.as_ref().expect("validated above");
                let shifted: Vec<f64> = k.iter().zip(shift).map(|(a, b)| a + b).collect();
                (family.evaluator.eval(&shifted), &(&u.adjoint() * &(-&h)) * u)
            }
        };
        worst = worst.max((&lhs - &rhs).max_abs());
    }
    Ok(SymmetryCheck {
        passed: worst <= SYMMETRY_TOL,
        max_violation: worst,
        samples,
    })
}

/// A nonnegative half-integer spin, stored as `2s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Spin(u32);

impl Spin {
    pub fn from_twice(twice: u32) -> Self {
        Spin(twice)
    }

    pub fn new(s: f64) -> Result<Self> {
        let twice = 2.0 * s;
        if !s.is_finite() || s < 0.0 || (twice - twice.round()).abs() > 1e-12 {
            return Err(Error::InvalidSpin(s));
        }
        Ok(Spin(twice.round() as u32))
    }

    /// Spin of a block with `multiplicity` = 2s + 1 degenerate bands.
    pub fn from_multiplicity(multiplicity: usize) -> Self {
        Spin(multiplicity.saturating_sub(1) as u32)
    }

    pub fn twice(&self) -> u32 {
        self.0
    }

    pub fn value(&self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub fn multiplicity(&self) -> usize {
        self.0 as usize + 1
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_multiple_of(2)
    }

    /// `2m` for m = -s, ..., s in ascending order.
    pub fn twice_m_values(&self) -> Vec<i64> {
        (0..=self.0).map(|i| 2 * i as i64 - self.0 as i64).collect()
    }
}

impl fmt::Display for Spin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_multiple_of(2) {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

impl Serialize for Spin {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Spin {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Spin::new(v).map_err(serde::de::Error::custom)
    }
}

/// Spin-s matrices in the Zeeman basis, ordered m = -s, ..., s.
/// `S_x` and `S_z` are real, `S_y` purely imaginary.
pub fn spin_matrices(spin: Spin) -> [HermitianMatrix; 3] {
    let n = spin.multiplicity();
    let s = spin.value();
    let m = |i: usize| -s + i as f64;
    // S+ |m> = sqrt(s(s+1) - m(m+1)) |m+1>
    let mut raise = CMatrix::zeros(n);
    for i in 0..n.saturating_sub(1) {
        raise[(i + 1, i)] = C64::new((s * (s + 1.0) - m(i) * (m(i) + 1.0)).sqrt(), 0.0);
    }
    let lower = raise.adjoint();
    let sx = (&raise + &lower).scale_re(0.5);
    let sy = (&raise - &lower).scale(C64::new(0.0, -0.5));
    let sz = CMatrix::diagonal(&(0..n).map(|i| C64::new(m(i), 0.0)).collect::<Vec<_>>());
    [
        HermitianMatrix::hermitize(sx),
        HermitianMatrix::hermitize(sy),
        HermitianMatrix::hermitize(sz),
    ]
}

/// `H(x) = H0 + Σ_α x_α A_α` with exact derivatives.
pub struct LinearFamily {
    pub constant: CMatrix,
    pub generators: Vec<CMatrix>,
}

impl Evaluator for LinearFamily {
    fn eval(&self, k: &[f64]) -> CMatrix {
        let mut m = self.constant.clone();
        for (x, g) in k.iter().zip(&self.generators) {
            m = &m + &g.scale_re(*x);
        }
        m
    }
    fn derivative(&self, _k: &[f64], axis: usize) -> Option<CMatrix> {
        self.generators.get(axis).cloned()
    }
}

/// The spin-s family `x·S` on a chart of R^3.
pub fn make_spin_family(spin: Spin) -> HamiltonianFamily {
    let [sx, sy, sz] = spin_matrices(spin);
    let eval = LinearFamily {
        constant: CMatrix::zeros(spin.multiplicity()),
        generators: vec![sx.into_matrix(), sy.into_matrix(), sz.into_matrix()],
    };
    HamiltonianFamily::new(
        format!("spin-{spin}"),
        3,
        spin.multiplicity(),
        Domain::Chart,
        Arc::new(eval),
    )
    .expect("spin family is Hermitian")
}

/// A constant family on the d-torus.
pub fn make_constant_family(d: usize, h: &HermitianMatrix) -> HamiltonianFamily {
    let eval = LinearFamily {
        constant: h.matrix().clone(),
        generators: vec![CMatrix::zeros(h.dim()); d],
    };
    HamiltonianFamily::new("constant", d, h.dim(), Domain::Torus, Arc::new(eval))
        .expect("constant family is Hermitian")
        .with_symmetry_if_valid(SymmetryDeclaration::TimeReversal)
}

impl HamiltonianFamily {
    fn with_symmetry_if_valid(self, decl: SymmetryDeclaration) -> Self {
        match check_symmetry(&self, &decl, SYMMETRY_SAMPLES) {
            Ok(c) if c.passed => self.with_symmetry(decl).expect("checked"),
            _ => self,
        }
    }
}

/// One entry contribution `c · e^{i n·k}` at position `(i, j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochTerm {
    pub i: usize,
    pub j: usize,
    pub re: f64,
    pub im: f64,
    pub n: Vec<i64>,
}

impl BlochTerm {
    pub fn new(i: usize, j: usize, c: C64, n: Vec<i64>) -> Self {
        BlochTerm {
            i,
            j,
            re: c.re,
            im: c.im,
            n,
        }
    }

    pub fn coefficient(&self) -> C64 {
        C64::new(self.re, self.im)
    }

    fn conjugate_partner(&self) -> BlochTerm {
        BlochTerm {
            i: self.j,
            j: self.i,
            re: self.re,
            im: -self.im,
            n: self.n.iter().map(|x| -x).collect(),
        }
    }
}

/// Tight-binding family given as a list of Fourier terms.
#[derive(Clone, Debug, PartialEq)]
pub struct BlochTermModel {
    d: usize,
    k: usize,
    terms: Vec<BlochTerm>,
}

impl BlochTermModel {
    /// Validates the term list. Every term `(i, j, c, n)` must be matched by
    /// `(j, i, conj c, -n)` after summing duplicates. With `complete`, missing
    /// partners are added; inconsistent partners are always an error.
    pub fn new(d: usize, k: usize, terms: Vec<BlochTerm>, complete: bool) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::ModelFile("d and k must be >= 1".into()));
        }
        for (idx, t) in terms.iter().enumerate() {
            if t.i >= k || t.j >= k {
                return Err(Error::ModelFile(format!(
                    "term #{idx} (i={}, j={}) is outside the {k}x{k} matrix",
                    t.i, t.j
                )));
            }
            if t.n.len() != d {
                return Err(Error::ModelFile(format!(
                    "term #{idx} has momentum vector of length {} but d = {d}",
                    t.n.len()
                )));
            }
            if !t.re.is_finite() || !t.im.is_finite() {
                return Err(Error::ModelFile(format!("term #{idx} has a non-finite coefficient")));
            }
        }

        type Key = (usize, usize, Vec<i64>);
        let mut sums: BTreeMap<Key, (C64, usize)> = BTreeMap::new();
        for (idx, t) in terms.iter().enumerate() {
            let e = sums.entry((t.i, t.j, t.n.clone())).or_insert((ZERO, idx));
            e.0 += t.coefficient();
        }
        let mut all = terms.clone();
        for ((i, j, n), (c, idx)) in &sums {
            let partner_key = (*j, *i, n.iter().map(|x| -x).collect::<Vec<_>>());
            match sums.get(&partner_key) {
                Some((pc, _)) => {
                    if (pc.conj() - c).norm() > 1e-12 * (1.0 + c.norm()) {
                        let t = &terms[*idx];
                        return Err(Error::ModelFile(format!(
                            "non-Hermitian term set: term #{idx} (i={}, j={}, c={}{:+}i, n={:?}) does not match its conjugate partner (i={}, j={}, n={:?}) with coefficient {}{:+}i",
                            t.i, t.j, c.re, c.im, t.n, partner_key.0, partner_key.1, partner_key.2, pc.re, pc.im
                        )));
                    }
                }
                None if complete => all.push(BlochTerm::new(*i, *j, *c, n.clone()).conjugate_partner()),
                None => {
                    let t = &terms[*idx];
                    return Err(Error::ModelFile(format!(
                        "non-Hermitian term set: term #{idx} (i={}, j={}, c={}{:+}i, n={:?}) has no conjugate partner (i={}, j={}, n={:?}); add it or set \"complete_conjugates\": true",
                        t.i, t.j, t.re, t.im, t.n, t.j, t.i, partner_key.2
                    )));
                }
            }
        }
        Ok(BlochTermModel { d, k, terms: all })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn terms(&self) -> &[BlochTerm] {
        &self.terms
    }

    fn phase(&self, t: &BlochTerm, k: &[f64]) -> C64 {
        let arg: f64 = t.n.iter().zip(k).map(|(n, x)| *n as f64 * x).sum();
        C64::from_polar(1.0, arg)
    }

    pub fn into_family(self, name: impl Into<String>) -> Result<HamiltonianFamily> {
        let (d, k) = (self.d, self.k);
        HamiltonianFamily::new(name, d, k, Domain::Torus, Arc::new(self))
    }
}

impl Evaluator for BlochTermModel {
    fn eval(&self, k: &[f64]) -> CMatrix {
        let mut m = CMatrix::zeros(self.k);
        for t in &self.terms {
            m[(t.i, t.j)] += t.coefficient() * self.phase(t, k);
        }
        m
    }

    fn derivative(&self, k: &[f64], axis: usize) -> Option<CMatrix> {
        let mut m = CMatrix::zeros(self.k);
        for t in &self.terms {
            let factor = I * t.n[axis] as f64;
            m[(t.i, t.j)] += t.coefficient() * factor * self.phase(t, k);
        }
        Some(m)
    }
}

/// JSON model document.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelFile {
    pub name: String,
    pub d: usize,
    pub k: usize,
    #[serde(default)]
    pub complete_conjugates: bool,
    pub terms: Vec<BlochTerm>,
    #[serde(default)]
    pub symmetries: Vec<SymmetryDeclaration>,
}

impl ModelFile {
    pub fn from_model(name: &str, model: &BlochTermModel, symmetries: &[SymmetryDeclaration]) -> Self {
        ModelFile {
            name: name.to_string(),
            d: model.d,
            k: model.k,
            complete_conjugates: false,
            terms: model.terms.clone(),
            symmetries: symmetries.to_vec(),
        }
    }

    pub fn build(&self) -> Result<HamiltonianFamily> {
        let model = BlochTermModel::new(self.d, self.k, self.terms.clone(), self.complete_conjugates)?;
        let mut family = model.into_family(self.name.clone())?;
        for decl in &self.symmetries {
            family = family.with_symmetry(decl.clone())?;
        }
        Ok(family)
    }
}

pub fn parse_model_json(text: &str) -> Result<HamiltonianFamily> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))?;
    file.build()
}

pub fn load_model_file(path: &Path) -> Result<HamiltonianFamily> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))?;
    parse_model_json(&text)
}

fn unit(d: usize, l: usize) -> Vec<i64> {
    let mut n = vec![0; d];
    n[l] = 1;
    n
}

/// Term model of the petal graph `P_n`: `Σ_l (e^{ik_l} + e^{-ik_l})`.
pub fn petal_terms(n: usize) -> Result<BlochTermModel> {
    if n == 0 {
        return Err(Error::InvalidArgument("petal graph needs n >= 1".into()));
    }
    let terms = (0..n)
        .flat_map(|l| {
            let e = unit(n, l);
            let minus: Vec<i64> = e.iter().map(|x| -x).collect();
            [BlochTerm::new(0, 0, ONE, e), BlochTerm::new(0, 0, ONE, minus)]
        })
        .collect();
    BlochTermModel::new(n, 1, terms, false)
}

/// Term model of the digraph `D_n`: off-diagonal `1 + Σ_l e^{ik_l}`.
pub fn digraph_terms(n: usize) -> Result<BlochTermModel> {
    if n == 0 {
        return Err(Error::InvalidArgument("digraph needs n >= 1".into()));
    }
    let mut terms = vec![BlochTerm::new(0, 1, ONE, vec![0; n])];
    for l in 0..n {
        terms.push(BlochTerm::new(0, 1, ONE, unit(n, l)));
    }
    BlochTermModel::new(n, 2, terms, true)
}

/// Term model of the Gyroid graph `G`.
pub fn gyroid_terms() -> BlochTermModel {
    let terms = vec![
        BlochTerm::new(0, 1, ONE, vec![0, 0, 0]),
        BlochTerm::new(0, 2, ONE, vec![0, 0, 0]),
        BlochTerm::new(0, 3, ONE, vec![0, 0, 0]),
        BlochTerm::new(1, 2, ONE, vec![1, 0, 0]),
        BlochTerm::new(1, 3, ONE, vec![0, -1, 0]),
        BlochTerm::new(2, 3, ONE, vec![0, 0, 1]),
    ];
    BlochTermModel::new(3, 4, terms, true).expect("gyroid terms are Hermitian")
}

pub fn make_petal(n: usize) -> Result<HamiltonianFamily> {
    petal_terms(n)?
        .into_family(format!("P{n}"))?
        .with_symmetry(SymmetryDeclaration::TimeReversal)
}

pub fn make_digraph(n: usize) -> Result<HamiltonianFamily> {
    digraph_terms(n)?
        .into_family(format!("D{n}"))?
        .with_symmetry(SymmetryDeclaration::TimeReversal)
}

/// Shift and unitary of the Gyroid's extra symmetry.
pub fn gyroid_shifted_negation() -> SymmetryDeclaration {
    SymmetryDeclaration::ShiftedNegation {
        shift: vec![PI, PI, PI],
        unitary: MatrixRepr::from(&CMatrix::diagonal(&[-ONE, ONE, ONE, ONE])),
    }
}

pub fn make_gyroid() -> HamiltonianFamily {
    gyroid_terms()
        .into_family("gyroid")
        .and_then(|f| f.with_symmetry(SymmetryDeclaration::TimeReversal))
        .and_then(|f| f.with_symmetry(gyroid_shifted_negation()))
        .expect("gyroid symmetries hold")
}

/// Constant perturbation changing the Gyroid's three spanning-tree weights
/// from 1 to `1 + λ δ_e`. Real, so time reversal is preserved.
pub fn gyroid_tree_perturbation(delta: [f64; 3]) -> HamiltonianFamily {
    let mut h1 = CMatrix::zeros(4);
    for (e, w) in delta.iter().enumerate() {
        h1[(0, e + 1)] = C64::new(*w, 0.0);
        h1[(e + 1, 0)] = C64::new(*w, 0.0);
    }
    let eval = LinearFamily {
        constant: h1,
        generators: vec![CMatrix::zeros(4); 3],
    };
    HamiltonianFamily::new("tree-weights", 3, 4, Domain::Torus, Arc::new(eval)).expect("real symmetric")
}

struct Deformed {
    base: Arc<dyn Evaluator>,
    perturbation: Arc<dyn Evaluator>,
    lambda: f64,
}

impl Evaluator for Deformed {
    fn eval(&self, k: &[f64]) -> CMatrix {
        &self.base.eval(k) + &self.perturbation.eval(k).scale_re(self.lambda)
    }
    fn derivative(&self, k: &[f64], axis: usize) -> Option<CMatrix> {
        let a = self.base.derivative(k, axis)?;
        let b = self.perturbation.derivative(k, axis)?;
        Some(&a + &b.scale_re(self.lambda))
    }
}

/// `H(k) + λ H₁(k)`. The base family's symmetry declarations are re-checked
/// and kept only where they still hold.
pub fn deform(base: &HamiltonianFamily, perturbation: &HamiltonianFamily, lambda: f64) -> Result<HamiltonianFamily> {
    if base.dim() != perturbation.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            actual: perturbation.dim(),
        });
    }
    if base.bands() != perturbation.bands() {
        return Err(Error::DimensionMismatch {
            expected: base.bands(),
            actual: perturbation.bands(),
        });
    }
    let eval = Deformed {
        base: base.evaluator.clone(),
        perturbation: perturbation.evaluator.clone(),
        lambda,
    };
    let mut family = HamiltonianFamily::new(
        format!("{}+{}*{}", base.name(), lambda, perturbation.name()),
        base.dim(),
        base.bands(),
        base.domain(),
        Arc::new(eval),
    )?;
    for decl in base.symmetries() {
        if check_symmetry(&family, decl, SYMMETRY_SAMPLES)?.passed {
            family = family.with_symmetry(decl.clone())?;
        }
    }
    Ok(family)
}

/// Central difference `(H(k + h e_α) - H(k - h e_α)) / 2h`, re-Hermitized.
pub fn derivative(family: &HamiltonianFamily, point: &[f64], axis: usize, h: f64) -> Result<HermitianMatrix> {
    if !(h > 0.0 && h <= 1e-3) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {h} outside (0, 1e-3]"
        )));
    }
    if axis >= family.dim() || point.len() != family.dim() {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} / point of length {} invalid for a {}-dimensional family",
            point.len(),
            family.dim()
        )));
    }
    let mut plus = point.to_vec();
    let mut minus = point.to_vec();
    plus[axis] += h;
    minus[axis] -= h;
    let diff = &family.evaluator.eval(&plus) - &family.evaluator.eval(&minus);
    Ok(HermitianMatrix::hermitize(diff.scale_re(0.5 / h)))
}

/// Exact derivative when the evaluator provides one, otherwise a central
/// difference with the default step. The flag reports which was used.
pub fn best_derivative(family: &HamiltonianFamily, point: &[f64], axis: usize) -> Result<(HermitianMatrix, bool)> {
    if axis >= family.dim() {
        return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
    }
    match family.exact_derivative(point, axis) {
        Some(d) => Ok((d, true)),
        None => Ok((derivative(family, point, axis, DEFAULT_FD_STEP)?, false)),
    }
}
