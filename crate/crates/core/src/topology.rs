//! Berry phases along loops and Chern numbers over torus slices and small
//! cube surfaces, by the link-variable method.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inner, C64};
use crate::models::{wrap_signed, HamiltonianFamily, TWO_PI};

/// Loops need at least this many points.
pub const MIN_LOOP_POINTS: usize = 8;

#[derive(Clone, Debug)]
pub struct TopologyOptions {
    /// Initial plaquettes per side of a slice or cube face.
    pub grid: usize,
    /// Upper bound for adaptive grid doubling.
    pub max_grid: usize,
    /// A band counts as degenerate at a node when its gap is at most this.
    pub gap_tol: f64,
    /// Successive Berry phase refinements must agree to within this.
    pub berry_tol: f64,
    pub max_loop_points: usize,
    /// Rephase every eigenvector by a random unit scalar (for gauge tests).
    pub gauge_seed: Option<u64>,
}

impl Default for TopologyOptions {
    fn default() -> Self {
        TopologyOptions {
            grid: 32,
            max_grid: 256,
            gap_tol: 1e-6,
            berry_tol: 1e-6,
            max_loop_points: 1 << 16,
            gauge_seed: None,
        }
    }
}

/// Closed loop in parameter space. The last point connects back to the first.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoopPath {
    /// Straight segments between vertices; refinement subdivides each edge.
    Polygon { vertices: Vec<Vec<f64>> },
    /// `center + radius (cos θ u + sin θ v)` sampled at `points` angles.
    Circle {
        center: Vec<f64>,
        radius: f64,
        u: Vec<f64>,
        v: Vec<f64>,
        points: usize,
    },
}

impl LoopPath {
    /// Circle in the plane of coordinate axes `a` and `b`, counterclockwise
    /// when viewed with `a × b` pointing at the viewer.
    pub fn axis_circle(center: Vec<f64>, radius: f64, a: usize, b: usize, points: usize) -> Self {
        let d = center.len();
        let mut u = vec![0.0; d];
        let mut v = vec![0.0; d];
        u[a] = 1.0;
        v[b] = 1.0;
        LoopPath::Circle {
            center,
            radius,
            u,
            v,
            points,
        }
    }

    fn dim(&self) -> usize {
        match self {
            LoopPath::Polygon { vertices } => vertices.first().map_or(0, |v| v.len()),
            LoopPath::Circle { center, .. } => center.len(),
        }
    }

    fn base_len(&self) -> usize {
        match self {
            LoopPath::Polygon { vertices } => vertices.len(),
            LoopPath::Circle { points, .. } => *points,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.base_len() < MIN_LOOP_POINTS {
            return Err(Error::InvalidArgument(format!(
                "loop has {} points, at least {MIN_LOOP_POINTS} required",
                self.base_len()
            )));
        }
        let ok = match self {
            LoopPath::Polygon { vertices } => vertices.iter().all(|v| v.len() == dim),
            LoopPath::Circle {
                center, u, v, radius, ..
            } => center.len() == dim && u.len() == dim && v.len() == dim && *radius > 0.0,
        };
        if !ok || self.dim() != dim {
            return Err(Error::InvalidArgument(format!(
                "loop is not a valid closed path in R^{dim}"
            )));
        }
        Ok(())
    }

    /// Points of the loop refined `level` times (each refinement doubles them).
    pub fn points(&self, level: u32) -> Vec<Vec<f64>> {
        let factor = 1usize << level;
        match self {
            LoopPath::Polygon { vertices } => {
                let n = vertices.len();
                let mut out = Vec::with_capacity(n * factor);
                for (idx, a) in vertices.iter().enumerate() {
                    let b = &vertices[(idx + 1) % n];
                    for s in 0..factor {
                        let t = s as f64 / factor as f64;
                        out.push(a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect());
                    }
                }
                out
            }
            LoopPath::Circle {
                center,
                radius,
                u,
                v,
                points,
            } => {
                let n = points * factor;
                (0..n)
                    .map(|j| {
                        let th = TWO_PI * j as f64 / n as f64;
                        let (s, c) = th.sin_cos();
                        center
                            .iter()
                            .zip(u.iter().zip(v))
                            .map(|(x, (a, b))| x + radius * (c * a + s * b))
                            .collect()
                    })
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BerryPhaseResult {
    pub band: usize,
    /// Principal value in (-π, π].
    pub phase: f64,
    /// Sum of link phases in the canonical eigenvector gauge at the final
    /// resolution. Differs from `phase` by a multiple of 2π; the multiple
    /// depends on that gauge.
    pub unwound: f64,
    pub points: usize,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChernResult {
    pub band: usize,
    pub value: i64,
    /// Unrounded flux sum divided by 2π.
    pub raw: f64,
    pub max_plaquette_phase: f64,
    pub grid: usize,
    pub reliable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Outward,
    Inward,
}

/// Eigenvectors at a set of nodes, one entry per node, `vectors[b]` per band.
struct Frames {
    vectors: Vec<Vec<Vec<C64>>>,
    gaps: Vec<Vec<f64>>,
}

fn frames(family: &HamiltonianFamily, points: &[Vec<f64>], gauge_seed: Option<u64>) -> Result<Frames> {
    let decomps: Vec<_> = points
        .par_iter()
        .map(|k| family.spectrum(k))
        .collect::<Result<Vec<_>>>()?;
    let k = family.bands();
    let gaps = decomps
        .iter()
        .map(|e| (0..k).map(|b| e.band_gap(b)).collect())
        .collect();
    let mut vectors: Vec<Vec<Vec<C64>>> = decomps.into_iter().map(|e| e.vectors).collect();
    if let Some(seed) = gauge_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for node in vectors.iter_mut() {
            for v in node.iter_mut() {
                let phase = C64::from_polar(1.0, rng.gen_range(0.0..TWO_PI));
                for c in v.iter_mut() {
                    *c *= phase;
                }
            }
        }
    }
    Ok(Frames { vectors, gaps })
}

fn check_gaps(frames: &Frames, points: &[Vec<f64>], bands: &[usize], tol: f64, what: &'static str) -> Result<()> {
    let mut worst: Option<(usize, usize, f64)> = None;
    for (p, gaps) in frames.gaps.iter().enumerate() {
        for &b in bands {
            if gaps[b] <= tol && worst.is_none_or(|w| gaps[b] < w.2) {
                worst = Some((p, b, gaps[b]));
            }
        }
    }
    match worst {
        Some((p, band, gap)) => Err(Error::DegenerateOnSurface {
            what,
            band,
            location: points[p].clone(),
            gap,
        }),
        None => Ok(()),
    }
}

/// Normalized link variable; `None` when the overlap vanishes.
fn link(a: &[C64], b: &[C64]) -> Option<C64> {
    let z = inner(a, b);
    let n = z.norm();
    if n < 1e-12 {
        None
    } else {
        Some(z / n)
    }
}

/// Berry phase of `band` around `path`, refined until two successive
/// resolutions agree.
pub fn berry_phase(
    family: &HamiltonianFamily,
    path: &LoopPath,
    band: usize,
    opts: &TopologyOptions,
) -> Result<BerryPhaseResult> {
    path.validate(family.dim())?;
    if band >= family.bands() {
        return Err(Error::InvalidArgument(format!(
            "band {band} out of range for {} bands",
            family.bands()
        )));
    }
    let mut previous: Option<f64> = None;
    let mut level = 0;
    loop {
        let points = path.points(level);
        let n = points.len();
        if n > opts.max_loop_points {
            return Err(Error::BerryNoConvergence {
                points: n / 2,
                reason: "successive refinements still disagree".into(),
            });
        }
        let fr = frames(family, &points, opts.gauge_seed)?;
        check_gaps(&fr, &points, &[band], opts.gap_tol, "loop")?;
        let mut product = C64::new(1.0, 0.0);
        let mut vanished = false;
        for j in 0..n {
            match link(&fr.vectors[j][band], &fr.vectors[(j + 1) % n][band]) {
                Some(l) => product *= l,
                None => {
                    vanished = true;
                    break;
                }
            }
        }
        if !vanished {
            let phase = principal(-product.arg());
            if let Some(prev) = previous {
                if wrap_signed(phase - prev).abs() <= opts.berry_tol {
                    let canonical = if opts.gauge_seed.is_some() {
                        frames(family, &points, None)?
                    } else {
                        fr
                    };
                    let unwound: f64 = (0..n)
                        .map(|j| -inner(&canonical.vectors[j][band], &canonical.vectors[(j + 1) % n][band]).arg())
                        .sum();
                    let winding = ((unwound - phase) / TWO_PI).round() as i64;
                    return Ok(BerryPhaseResult {
                        band,
                        phase,
                        unwound,
                        points: n,
                        note: format!("unwound value is principal value {:+} x 2pi", winding),
                    });
                }
            }
            previous = Some(phase);
        } else {
            previous = None;
        }
        level += 1;
    }
}

/// Maps into (-π, π].
fn principal(x: f64) -> f64 {
    let w = wrap_signed(x);
    if w <= -PI {
        w + TWO_PI
    } else {
        w
    }
}

/// A rectangular grid of nodes; `periodic` closes it into a torus.
struct Patch {
    nu: usize,
    nw: usize,
    periodic: bool,
}

impl Patch {
    fn node(&self, i: usize, j: usize) -> usize {
        let (i, j) = if self.periodic {
            (i % self.nu, j % self.nw)
        } else {
            (i, j)
        };
        i * self.nw + j
    }

    fn cells(&self) -> (usize, usize) {
        if self.periodic {
            (self.nu, self.nw)
        } else {
            (self.nu - 1, self.nw - 1)
        }
    }
}

/// Sum and largest magnitude of plaquette phases for each band. Returns
/// `None` for a band whose links vanish somewhere.
fn patch_flux(patch: &Patch, vectors: &[Vec<Vec<C64>>], bands: &[usize]) -> Vec<Option<(f64, f64)>> {
    let (cu, cw) = patch.cells();
    bands
        .iter()
        .map(|&b| {
            let per_row: Vec<Option<(f64, f64)>> = (0..cu)
                .into_par_iter()
                .map(|i| {
                    let mut sum = 0.0;
                    let mut max: f64 = 0.0;
                    for j in 0..cw {
                        let n00 = &vectors[patch.node(i, j)][b];
                        let n10 = &vectors[patch.node(i + 1, j)][b];
                        let n11 = &vectors[patch.node(i + 1, j + 1)][b];
                        let n01 = &vectors[patch.node(i, j + 1)][b];
                        let p = link(n00, n10)? * link(n10, n11)? * link(n11, n01)? * link(n01, n00)?;
                        let f = p.arg();
                        sum += f;
                        max = max.max(f.abs());
                    }
                    Some((sum, max))
                })
                .collect();
            per_row
                .into_iter()
                .try_fold((0.0, 0.0f64), |acc, r| r.map(|(s, m)| (acc.0 + s, acc.1.max(m))))
        })
        .collect()
}

fn chern_from(band: usize, flux: Option<(f64, f64)>, grid: usize) -> ChernResult {
    match flux {
        Some((sum, max)) => {
            let raw = sum / TWO_PI;
            let value = raw.round() as i64;
            ChernResult {
                band,
                value,
                raw,
                max_plaquette_phase: max,
                grid,
                reliable: max < PI && (raw - value as f64).abs() <= 1e-6,
            }
        }
        None => ChernResult {
            band,
            value: 0,
            raw: f64::NAN,
            max_plaquette_phase: PI,
            grid,
            reliable: false,
        },
    }
}

/// Repeats `compute` with doubled grids while some band's largest plaquette
/// phase is at least π/2.
fn adaptive<F>(opts: &TopologyOptions, mut compute: F) -> Result<Vec<ChernResult>>
where
    F: FnMut(usize) -> Result<Vec<ChernResult>>,
{
    if opts.grid < 2 {
        return Err(Error::InvalidArgument("grid must be at least 2".into()));
    }
    let mut n = opts.grid;
    loop {
        let results = compute(n)?;
        let settled = results.iter().all(|r| r.max_plaquette_phase < PI / 2.0);
        if settled || n * 2 > opts.max_grid.max(opts.grid) {
            return Ok(results);
        }
        n *= 2;
    }
}

/// In-plane coordinate axes of the slice normal to `axis`, in the order that
/// fixes the slice orientation.
pub fn slice_axes(axis: usize) -> (usize, usize) {
    ((axis + 1) % 3, (axis + 2) % 3)
}

/// Chern numbers of all bands over the 2-torus `k[axis] = t`.
pub fn chern_on_slice(
    family: &HamiltonianFamily,
    axis: usize,
    t: f64,
    opts: &TopologyOptions,
) -> Result<Vec<ChernResult>> {
    if family.dim() != 3 {
        return Err(Error::InvalidArgument(format!(
            "slicing needs a 3-dimensional family, got d = {}",
            family.dim()
        )));
    }
    if axis >= 3 {
        return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
    }
    let (u, w) = slice_axes(axis);
    let bands: Vec<usize> = (0..family.bands()).collect();
    adaptive(opts, |n| {
        let mut points = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut k = vec![0.0; 3];
                k[axis] = t;
                k[u] = TWO_PI * i as f64 / n as f64;
                k[w] = TWO_PI * j as f64 / n as f64;
                points.push(k);
            }
        }
        let fr = frames(family, &points, opts.gauge_seed)?;
        check_gaps(&fr, &points, &bands, opts.gap_tol, "slice")?;
        let patch = Patch {
            nu: n,
            nw: n,
            periodic: true,
        };
        Ok(patch_flux(&patch, &fr.vectors, &bands)
            .into_iter()
            .zip(&bands)
            .map(|(f, &b)| chern_from(b, f, n))
            .collect())
    })
}

/// Chern numbers of all bands over the surface of the cube of half-width `r`
/// centred at `center`.
pub fn chern_on_sphere(
    family: &HamiltonianFamily,
    center: &[f64],
    r: f64,
    orientation: Orientation,
    opts: &TopologyOptions,
) -> Result<Vec<ChernResult>> {
    if family.dim() != 3 || center.len() != 3 {
        return Err(Error::InvalidArgument(
            "cube surfaces need a 3-dimensional family".into(),
        ));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("half-width {r} must be positive")));
    }
    let bands: Vec<usize> = (0..family.bands()).collect();
    let faces = cube_faces(orientation);
    adaptive(opts, |n| {
        let mut totals: Vec<Option<(f64, f64)>> = vec![Some((0.0, 0.0)); bands.len()];
        for (f_idx, &(ax, plus, u, w)) in faces.iter().enumerate() {
            let mut points = Vec::with_capacity((n + 1) * (n + 1));
            for i in 0..=n {
                for j in 0..=n {
                    let mut k = center.to_vec();
                    k[ax] = if plus { center[ax] + r } else { center[ax] - r };
                    k[u] = center[u] + (-r + 2.0 * r * i as f64 / n as f64);
                    k[w] = center[w] + (-r + 2.0 * r * j as f64 / n as f64);
                    points.push(k);
                }
            }
            let seed = opts.gauge_seed.map(|s| s.wrapping_add(f_idx as u64));
            let fr = frames(family, &points, seed)?;
            check_gaps(&fr, &points, &bands, opts.gap_tol, "cube surface")?;
            let patch = Patch {
                nu: n + 1,
                nw: n + 1,
                periodic: false,
            };
            for (tot, f) in totals.iter_mut().zip(patch_flux(&patch, &fr.vectors, &bands)) {
                *tot = match (*tot, f) {
                    (Some((s0, m0)), Some((s1, m1))) => Some((s0 + s1, m0.max(m1))),
                    _ => None,
                };
            }
        }
        Ok(totals
            .into_iter()
            .zip(&bands)
            .map(|(f, &b)| chern_from(b, f, n))
            .collect())
    })
}

/// Faces as (normal axis, positive side, first in-plane axis, second
/// in-plane axis), ordered so that the in-plane frame followed by the normal
/// is right-handed for outward orientation.
fn cube_faces(orientation: Orientation) -> Vec<(usize, bool, usize, usize)> {
    let mut faces = Vec::with_capacity(6);
    for ax in 0..3 {
        let (a, b) = slice_axes(ax);
        for plus in [true, false] {
            let outward = if plus { (a, b) } else { (b, a) };
            let (u, w) = match orientation {
                Orientation::Outward => outward,
                Orientation::Inward => (outward.1, outward.0),
            };
            faces.push((ax, plus, u, w));
        }
    }
    faces
}
