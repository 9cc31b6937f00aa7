//! Local models of isolated degeneracies: projected first-order data, the
//! spin-pattern test, chirality and local charges.

use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degeneracy::{DegeneratePoint, LocusDim};
use crate::error::{Error, Result};
use crate::linalg::{eigh, CMatrix, HermitianMatrix, C64, I};
use crate::models::{best_derivative, HamiltonianFamily, Spin};
use crate::topology::{chern_on_sphere, ChernResult, Orientation, TopologyOptions};

/// First-order data of one degenerate block: `P (∂_α H) P = a_α id + M_α`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjectedFirstOrder {
    pub block: usize,
    pub bands: Range<usize>,
    /// Trace part `a_α` per axis.
    pub trace_part: Vec<f64>,
    /// Traceless projected derivatives `M_α`.
    pub generators: Vec<CMatrix>,
    /// Whether exact derivatives were used.
    pub exact: bool,
}

impl ProjectedFirstOrder {
    /// Builds the data from arbitrary projected derivatives, splitting off
    /// their trace parts.
    pub fn from_generators(generators: Vec<CMatrix>, exact: bool) -> Result<Self> {
        let g = generators.first().map(|m| m.dim()).unwrap_or(0);
        if g == 0 || generators.iter().any(|m| m.dim() != g) {
            return Err(Error::InvalidArgument(
                "generators must be nonempty and of equal size".into(),
            ));
        }
        let mut trace_part = Vec::new();
        let mut out = Vec::new();
        for m in generators {
            let h = HermitianMatrix::new(m)?;
            let a = h.trace() / g as f64;
            trace_part.push(a);
            out.push((h.matrix() - &CMatrix::identity(g).scale_re(a)).hermitian_part());
        }
        Ok(ProjectedFirstOrder {
            block: 0,
            bands: 0..g,
            trace_part,
            generators: out,
            exact,
        })
    }

    pub fn size(&self) -> usize {
        self.bands.len()
    }

    /// `Σ_α x_α M_α`.
    pub fn along(&self, x: &[f64]) -> CMatrix {
        let g = self.size();
        self.generators
            .iter()
            .zip(x)
            .fold(CMatrix::zeros(g), |acc, (m, c)| &acc + &m.scale_re(*c))
    }

    /// `tr(-i [M_1, M_2] M_3)`, which equals `det(L) s(s+1)(2s+1)/3` when
    /// `M_α = Σ_β L_{αβ} S_β`. Needs three generators.
    pub fn triple_product(&self) -> Option<f64> {
        if self.generators.len() != 3 {
            return None;
        }
        let c = self.generators[0].commutator(&self.generators[1]);
        Some((&c.scale(-I) * &self.generators[2]).trace().re)
    }
}

/// `V† (∂_α H)(k₀) V` restricted to the bands of block `block` (counting
/// only groups of size at least two), trace removed.
pub fn projected_first_order(
    family: &HamiltonianFamily,
    point: &DegeneratePoint,
    block: usize,
) -> Result<ProjectedFirstOrder> {
    if point.locus != LocusDim::Point {
        return Err(Error::NotIsolated {
            location: point.location.clone(),
        });
    }
    let blocks = point.blocks();
    let bands = blocks.get(block).cloned().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "block {block} out of range ({} degenerate blocks)",
            blocks.len()
        ))
    })?;
    let e = family.spectrum(&point.location)?;
    let columns: Vec<Vec<C64>> = e.vectors[bands.clone()].to_vec();
    let mut raw = Vec::with_capacity(family.dim());
    let mut exact = true;
    for axis in 0..family.dim() {
        let (d, is_exact) = best_derivative(family, &point.location, axis)?;
        exact &= is_exact;
        raw.push(d.matrix().compress(&columns));
    }
    let mut pfo = ProjectedFirstOrder::from_generators(raw, exact)?;
    pfo.block = block;
    pfo.bands = bands;
    Ok(pfo)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpinTest {
    /// `None` when the block is not of spin type.
    pub spin: Option<Spin>,
    /// Largest relative deviation from the pattern `c(x) (-s, ..., s)`.
    pub residual: f64,
    /// Smallest fitted scale `c(x)` over the sampled directions.
    pub min_scale: f64,
    /// A direction where the first-order splitting (nearly) vanishes.
    pub flat_direction: Option<Vec<f64>>,
    pub samples: usize,
}

pub const DEFAULT_SPIN_SAMPLES: usize = 64;
pub const EXACT_SPIN_TOL: f64 = 1e-6;
pub const FD_SPIN_TOL: f64 = 1e-3;

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Compares the spectrum of `M(x)` with `c(x) (-s, ..., s)` over random unit
/// directions; `tol` defaults by derivative kind.
pub fn spin_pattern_test(pfo: &ProjectedFirstOrder, samples: usize, tol: Option<f64>, seed: u64) -> Result<SpinTest> {
    let g = pfo.size();
    let spin = Spin::from_multiplicity(g);
    let tol = tol.unwrap_or(if pfo.exact { EXACT_SPIN_TOL } else { FD_SPIN_TOL });
    let pattern: Vec<f64> = spin.twice_m_values().iter().map(|m| *m as f64 / 2.0).collect();
    let norm2: f64 = pattern.iter().map(|p| p * p).sum();
    let scale = pfo
        .generators
        .iter()
        .map(|m| m.max_abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = samples.max(50);
    let mut residual: f64 = 0.0;
    let mut min_scale = f64::INFINITY;
    let mut flat = None;
    for _ in 0..samples {
        let x = random_unit(&mut rng, pfo.generators.len());
        let mu = eigh(&HermitianMatrix::new(pfo.along(&x).hermitian_part())?)?.values;
        let c: f64 = mu.iter().zip(&pattern).map(|(m, p)| m * p).sum::<f64>() / norm2;
        if c < min_scale {
            min_scale = c;
            if c <= 1e-8 * scale {
                flat = Some(x.clone());
            }
        }
        let top = (c * spin.value()).abs().max(1e-300);
        let dev = mu
            .iter()
            .zip(&pattern)
            .map(|(m, p)| (m - c * p).abs())
            .fold(0.0, f64::max);
        residual = residual.max(dev / top);
    }
    // A direction along which every generator combination vanishes.
    let n = pfo.generators.len();
    let gram = CMatrix::from_fn(n, |a, b| {
        C64::new((&pfo.generators[a] * &pfo.generators[b]).trace().re, 0.0)
    });
    let ge = eigh(&HermitianMatrix::new(gram.hermitian_part())?)?;
    if ge.values[0] <= 1e-12 * ge.values[n - 1].max(1e-300) {
        flat = Some(ge.vectors[0].iter().map(|c| c.re).collect());
        min_scale = 0.0;
    }
    let is_spin = flat.is_none() && residual <= tol;
    Ok(SpinTest {
        spin: is_spin.then_some(spin),
        residual,
        min_scale,
        flat_direction: flat,
        samples,
    })
}

/// Chirality from the local charges of a spin-s block: `ε = -q_lowest / 2s`,
/// and every band of the block must carry `ε 2m`.
pub fn chirality_from_charges(charges: &[i64], spin: Spin) -> Result<i32> {
    if charges.len() != spin.multiplicity() || spin.twice() == 0 {
        return Err(Error::InvalidArgument(
            "charges do not match a spin block with s > 0".into(),
        ));
    }
    let twice_s = spin.twice() as i64;
    let lowest = charges[0];
    if lowest != twice_s && lowest != -twice_s {
        return Err(Error::InconsistentChirality(format!(
            "lowest band charge {lowest} is not ±2s = ±{twice_s}"
        )));
    }
    let eps = -lowest / twice_s;
    for (q, m2) in charges.iter().zip(spin.twice_m_values()) {
        if *q != eps * m2 {
            return Err(Error::InconsistentChirality(format!(
                "charges {charges:?} are not {eps}·2m for s = {spin}"
            )));
        }
    }
    Ok(eps as i32)
}

/// Chirality from exactly linear data via the sign of the triple product.
pub fn chirality_from_generators(pfo: &ProjectedFirstOrder) -> Option<i32> {
    let t = pfo.triple_product()?;
    let scale = pfo.generators.iter().map(|m| m.max_abs()).fold(0.0, f64::max);
    if t.abs() <= 1e-10 * scale.powi(3).max(1e-300) {
        return None;
    }
    Some(if t > 0.0 { 1 } else { -1 })
}

/// Local charges of all bands on the cube surface of half-width `r`. Fails
/// if another known degeneracy lies within `2r`.
pub fn local_charges(
    family: &HamiltonianFamily,
    point: &[f64],
    r: f64,
    known: &[Vec<f64>],
    opts: &TopologyOptions,
) -> Result<Vec<ChernResult>> {
    let domain = family.domain();
    for other in known {
        let dist = domain.distance(point, other);
        if dist > 1e-6 && dist < 2.0 * r {
            return Err(Error::MultipleComponents {
                location: point.to_vec(),
                other: other.clone(),
                radius: 2.0 * r,
            });
        }
    }
    chern_on_sphere(family, point, r, Orientation::Outward, opts)
}

#[derive(Clone, Debug)]
pub struct LocalOptions {
    pub radius: f64,
    pub samples: usize,
    pub spin_tol: Option<f64>,
    pub seed: u64,
    pub topology: TopologyOptions,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions {
            radius: 0.3,
            samples: DEFAULT_SPIN_SAMPLES,
            spin_tol: None,
            seed: 7,
            topology: TopologyOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockModel {
    pub bands: Range<usize>,
    pub spin: Option<Spin>,
    pub chirality: Option<i32>,
    pub residual: f64,
    pub trace_part: Vec<f64>,
    /// Chirality from the triple product, when derivatives are exact.
    pub generator_chirality: Option<i32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalModel {
    pub point: DegeneratePoint,
    pub blocks: Vec<BlockModel>,
    /// Per-band local charges; empty when the family is not 3-dimensional.
    pub charges: Vec<i64>,
}

impl LocalModel {
    /// Spin of every eigenvalue group, non-degenerate groups counting as 0.
    /// `None` entries mark blocks that are not of spin type.
    pub fn spin_type(&self) -> Vec<Option<Spin>> {
        self.point
            .groups()
            .into_iter()
            .map(|r| {
                if r.len() == 1 {
                    Some(Spin::from_twice(0))
                } else {
                    self.blocks.iter().find(|b| b.bands == r).and_then(|b| b.spin)
                }
            })
            .collect()
    }

    pub fn chiralities(&self) -> Vec<Option<i32>> {
        self.blocks.iter().map(|b| b.chirality).collect()
    }

    /// Human-readable spin type like `(1,0)` or `(1/2,1/2)`.
    pub fn spin_type_label(&self) -> String {
        let parts: Vec<String> = self
            .spin_type()
            .iter()
            .map(|s| s.map_or("?".into(), |s| s.to_string()))
            .collect();
        format!("({})", parts.join(","))
    }
}

/// Full classification of an isolated point. `known` lists other
/// degeneracies for the isolation pre-check of the charge computation.
pub fn classify_point(
    family: &HamiltonianFamily,
    point: &DegeneratePoint,
    known: &[Vec<f64>],
    opts: &LocalOptions,
) -> Result<LocalModel> {
    if point.locus != LocusDim::Point {
        return Err(Error::NotIsolated {
            location: point.location.clone(),
        });
    }
    let charges: Vec<i64> = if family.dim() == 3 {
        let rs = local_charges(family, &point.location, opts.radius, known, &opts.topology)?;
        rs.iter().map(|r| r.value).collect()
    } else {
        Vec::new()
    };
    if !charges.is_empty() && charges.iter().sum::<i64>() != 0 {
        return Err(Error::InconsistentChirality(format!(
            "local charges {charges:?} do not sum to zero"
        )));
    }
    let mut blocks = Vec::new();
    for (idx, bands) in point.blocks().into_iter().enumerate() {
        let pfo = projected_first_order(family, point, idx)?;
        let test = spin_pattern_test(&pfo, opts.samples, opts.spin_tol, opts.seed)?;
        let generator_chirality = if pfo.exact && test.spin.is_some() {
            chirality_from_generators(&pfo)
        } else {
            None
        };
        let chirality = match test.spin {
            Some(spin) if !charges.is_empty() => {
                let eps = chirality_from_charges(&charges[bands.clone()], spin)?;
                if let Some(g) = generator_chirality {
                    if g != eps {
                        return Err(Error::InconsistentChirality(format!(
                            "block {idx}: charges give {eps}, generators give {g}"
                        )));
                    }
                }
                Some(eps)
            }
            Some(_) if family.dim() == 2 && bands.len() == 2 => equatorial_chirality_2d(family, point).ok(),
            _ => None,
        };
        blocks.push(BlockModel {
            bands,
            spin: test.spin,
            chirality,
            residual: test.residual,
            trace_part: pfo.trace_part.clone(),
            generator_chirality,
        });
    }
    Ok(LocalModel {
        point: point.clone(),
        blocks,
        charges,
    })
}

/// Tolerance on the σ_z coefficient for the equatorial condition.
pub const EQUATORIAL_TOL: f64 = 1e-8;

/// Chirality of an equatorial Dirac point of a 2-parameter family: the sign
/// of the determinant of `(x, y) ↦ (a, b)` where the traceless first-order
/// block is `(a σ_x + b σ_y)/2` with the Pauli matrices. Two-band families
/// are read in their own basis; larger ones in the phase-fixed eigenbasis.
pub fn equatorial_chirality_2d(family: &HamiltonianFamily, point: &DegeneratePoint) -> Result<i32> {
    if family.dim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "equatorial chirality needs a 2-parameter family, got d = {}",
            family.dim()
        )));
    }
    if point.locus != LocusDim::Point {
        return Err(Error::NotIsolated {
            location: point.location.clone(),
        });
    }
    let blocks = point.blocks();
    if blocks.len() != 1 || blocks[0].len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "equatorial chirality needs a single two-band block, pattern is {:?}",
            point.pattern
        )));
    }
    let mut generators = Vec::new();
    let columns = if family.bands() == 2 {
        None
    } else {
        let e = family.spectrum(&point.location)?;
        Some(e.vectors[blocks[0].clone()].to_vec())
    };
    for axis in 0..2 {
        let (d, _) = best_derivative(family, &point.location, axis)?;
        let m = match &columns {
            None => d.into_matrix(),
            Some(cols) => d.matrix().compress(cols),
        };
        generators.push(m);
    }
    let pfo = ProjectedFirstOrder::from_generators(generators, false)?;
    let mut rows = Vec::new();
    for m in &pfo.generators {
        let sz = m[(0, 0)].re - m[(1, 1)].re;
        if sz.abs() > EQUATORIAL_TOL {
            return Err(Error::NotEquatorial {
                location: point.location.clone(),
                sz,
            });
        }
        rows.push((2.0 * m[(0, 1)].re, -2.0 * m[(0, 1)].im));
    }
    let det = rows[0].0 * rows[1].1 - rows[1].0 * rows[0].1;
    if det.abs() <= 1e-12 {
        return Err(Error::NotIsolated {
            location: point.location.clone(),
        });
    }
    Ok(if det > 0.0 { 1 } else { -1 })
}

/// Transverse two-parameter family through a point of a curve-like locus in
/// a 3-dimensional family: the plane normal to `tangent` at `point`.
pub fn transverse_family(family: &HamiltonianFamily, point: &[f64], tangent: &[f64]) -> Result<HamiltonianFamily> {
    if family.dim() != 3 || tangent.len() != 3 {
        return Err(Error::InvalidArgument("transverse families need d = 3".into()));
    }
    let n = tangent.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::InvalidArgument("tangent must be nonzero".into()));
    }
    let t: Vec<f64> = tangent.iter().map(|x| x / n).collect();
    // Pick the coordinate axis least aligned with the tangent, project it out.
    let axis = (0..3)
        .min_by(|&a, &b| t[a].abs().total_cmp(&t[b].abs()))
        .expect("three axes");
    let mut e1 = vec![0.0; 3];
    e1[axis] = 1.0;
    let dot: f64 = e1.iter().zip(&t).map(|(a, b)| a * b).sum();
    for (a, b) in e1.iter_mut().zip(&t) {
        *a -= dot * b;
    }
    let n1 = e1.iter().map(|x| x * x).sum::<f64>().sqrt();
    for a in e1.iter_mut() {
        *a /= n1;
    }
    let e2 = vec![
        t[1] * e1[2] - t[2] * e1[1],
        t[2] * e1[0] - t[0] * e1[2],
        t[0] * e1[1] - t[1] * e1[0],
    ];
    family.restrict(point, &[e1, e2])
}

/// Point record for the origin of a transverse family.
pub fn transverse_point(family2d: &HamiltonianFamily) -> Result<DegeneratePoint> {
    let values = family2d.spectrum(&[0.0, 0.0])?.values;
    let pattern =
        crate::degeneracy::classify_multiplicity(&values, crate::degeneracy::GROUP_TOL, crate::degeneracy::SPLIT_TOL)?;
    let residual = values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    Ok(DegeneratePoint {
        location: vec![0.0, 0.0],
        eigenvalues: values,
        pattern,
        residual_gap: residual,
        locus: LocusDim::Point,
    })
}
