//! Locating the degenerate locus: gap scans, clustering, simplex refinement,
//! multiplicity patterns and a probe for non-isolated loci.

use std::fmt;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Domain, HamiltonianFamily, TWO_PI};
use crate::optimize::{nelder_mead, NelderMeadOptions};

/// Eigenvalues closer than this are grouped together.
pub const GROUP_TOL: f64 = 1e-6;
/// Distinct groups must be at least this far apart.
pub const SPLIT_TOL: f64 = 1e-4;
/// A refined point counts as degenerate when its grouped eigenvalues agree to this.
pub const REFINE_TOL: f64 = 1e-8;
/// Refined points closer than this are the same point.
pub const DEDUP_TOL: f64 = 1e-5;

/// `min_i (λ_{i+1} - λ_i)`; infinite for a single band.
pub fn gap(family: &HamiltonianFamily, k: &[f64]) -> f64 {
    match family.spectrum(k) {
        Ok(e) => e.min_gap(),
        Err(_) => f64::NAN,
    }
}

/// Region covered by a gap scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScanRegion {
    /// The full torus `[0, 2π)^d`, periodic.
    Torus,
    /// The closed box `[lo, hi]`, not periodic.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl ScanRegion {
    /// Whole torus for torus families, `[-1, 1]^d` for charts.
    pub fn default_for(family: &HamiltonianFamily) -> Self {
        match family.domain() {
            Domain::Torus => ScanRegion::Torus,
            Domain::Chart => ScanRegion::Box {
                lo: vec![-1.0; family.dim()],
                hi: vec![1.0; family.dim()],
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScanOptions {
    pub grid: usize,
    pub threshold: f64,
    pub region: Option<ScanRegion>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            grid: 48,
            threshold: 0.05,
            region: None,
        }
    }
}

/// A connected cluster of scan points with small gap.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DegeneracyCandidate {
    /// Grid point of smallest gap in the cluster.
    pub location: Vec<f64>,
    pub min_gap: f64,
    pub size: usize,
    /// Grid-local minima of the gap inside the cluster, smallest gap first.
    pub seeds: Vec<Vec<f64>>,
    /// Grid spacing of the scan.
    pub spacing: f64,
    /// Every grid point of the cluster.
    #[serde(skip)]
    pub members: Vec<Vec<f64>>,
}

const MAX_SEEDS: usize = 32;
const CURVE_SAMPLES: usize = 64;

struct Grid {
    n: usize,
    d: usize,
    periodic: bool,
    lo: Vec<f64>,
    step: Vec<f64>,
}

impl Grid {
    fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    fn digits(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.d];
        for slot in out.iter_mut().rev() {
            *slot = idx % self.n;
            idx /= self.n;
        }
        out
    }

    fn index(&self, digits: &[usize]) -> usize {
        digits.iter().fold(0, |acc, d| acc * self.n + d)
    }

    fn point(&self, idx: usize) -> Vec<f64> {
        self.digits(idx)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.lo[a] + self.step[a] * i as f64)
            .collect()
    }

    fn neighbors(&self, idx: usize) -> Vec<usize> {
        let base = self.digits(idx);
        let mut out = Vec::new();
        let total = 3usize.pow(self.d as u32);
        for code in 0..total {
            let mut c = code;
            let mut digits = base.clone();
            let mut ok = true;
            let mut zero = true;
            for slot in digits.iter_mut() {
                let off = (c % 3) as isize - 1;
                c /= 3;
                if off != 0 {
                    zero = false;
                }
                let v = *slot as isize + off;
                if self.periodic {
                    *slot = v.rem_euclid(self.n as isize) as usize;
                } else if v < 0 || v >= self.n as isize {
                    ok = false;
                    break;
                } else {
                    *slot = v as usize;
                }
            }
            if ok && !zero {
                let j = self.index(&digits);
                if j != idx {
                    out.push(j);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Grid points with gap below `threshold`, clustered by adjacency
/// (periodically on the torus).
pub fn scan_gaps(family: &HamiltonianFamily, opts: &ScanOptions) -> Result<Vec<DegeneracyCandidate>> {
    let d = family.dim();
    let region = opts.region.clone().unwrap_or_else(|| ScanRegion::default_for(family));
    if opts.grid < 2 {
        return Err(Error::InvalidArgument(
            "scan grid needs at least 2 points per axis".into(),
        ));
    }
    let grid = match &region {
        ScanRegion::Torus => Grid {
            n: opts.grid,
            d,
            periodic: true,
            lo: vec![0.0; d],
            step: vec![TWO_PI / opts.grid as f64; d],
        },
        ScanRegion::Box { lo, hi } => {
            if lo.len() != d || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| a >= b) {
                return Err(Error::InvalidArgument(
                    "scan box must satisfy lo < hi in every axis".into(),
                ));
            }
            Grid {
                n: opts.grid,
                d,
                periodic: false,
                lo: lo.clone(),
                step: lo
                    .iter()
                    .zip(hi)
                    .map(|(a, b)| (b - a) / (opts.grid - 1) as f64)
                    .collect(),
            }
        }
    };
    let gaps: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| gap(family, &grid.point(i)))
        .collect();

    let below: Vec<usize> = (0..grid.len()).filter(|&i| gaps[i] < opts.threshold).collect();
    let mut parent: Vec<usize> = (0..grid.len()).collect();
    for &i in &below {
        for j in grid.neighbors(i) {
            if gaps[j] < opts.threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &i in &below {
        let root = find(&mut parent, i);
        clusters.entry(root).or_default().push(i);
    }
    let spacing = grid.step.iter().cloned().fold(0.0, f64::max);
    let mut out: Vec<DegeneracyCandidate> = clusters
        .into_values()
        .map(|members| {
            let argmin = *members
                .iter()
                .min_by(|&&a, &&b| gaps[a].total_cmp(&gaps[b]))
                .expect("clusters are nonempty");
            let mut minima: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&i| grid.neighbors(i).iter().all(|&j| gaps[i] <= gaps[j]))
                .collect();
            minima.sort_by(|&a, &b| gaps[a].total_cmp(&gaps[b]));
            minima.truncate(MAX_SEEDS);
            if !minima.contains(&argmin) {
                minima.insert(0, argmin);
            }
            DegeneracyCandidate {
                location: grid.point(argmin),
                min_gap: gaps[argmin],
                size: members.len(),
                seeds: minima.into_iter().map(|i| grid.point(i)).collect(),
                spacing,
                members: members.iter().map(|&i| grid.point(i)).collect(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.location.partial_cmp(&b.location).unwrap_or(std::cmp::Ordering::Equal));
    Ok(out)
}

/// Dimension of the degenerate locus near a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocusDim {
    #[serde(rename = "0")]
    Point,
    #[serde(rename = ">=1")]
    Extended,
}

impl fmt::Display for LocusDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocusDim::Point => write!(f, "0"),
            LocusDim::Extended => write!(f, ">=1"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegeneratePoint {
    pub location: Vec<f64>,
    /// Ascending eigenvalues at `location`.
    pub eigenvalues: Vec<f64>,
    /// Group sizes ordered by eigenvalue.
    pub pattern: Vec<usize>,
    /// Largest eigenvalue spread inside a group.
    pub residual_gap: f64,
    pub locus: LocusDim,
}

impl DegeneratePoint {
    /// Band index ranges of all groups.
    pub fn groups(&self) -> Vec<Range<usize>> {
        pattern_ranges(&self.pattern)
    }

    /// Band index ranges of the groups with at least two bands.
    pub fn blocks(&self) -> Vec<Range<usize>> {
        self.groups().into_iter().filter(|r| r.len() >= 2).collect()
    }

    /// `(A_{g_1 - 1}, ..., A_{g_l - 1})`.
    pub fn a_type(&self) -> String {
        let parts: Vec<String> = self.pattern.iter().map(|g| format!("A{}", g - 1)).collect();
        format!("({})", parts.join(","))
    }
}

pub fn pattern_ranges(pattern: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    pattern
        .iter()
        .map(|&g| {
            let r = start..start + g;
            start += g;
            r
        })
        .collect()
}

/// Greedy grouping of ascending eigenvalues.
pub fn classify_multiplicity(values: &[f64], group_tol: f64, split_tol: f64) -> Result<Vec<usize>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no eigenvalues to classify".into()));
    }
    if group_tol >= split_tol {
        return Err(Error::InvalidArgument(
            "group tolerance must be below split tolerance".into(),
        ));
    }
    let mut pattern = vec![1];
    for w in values.windows(2) {
        let s = w[1] - w[0];
        if s < -group_tol || s.is_nan() {
            return Err(Error::InvalidArgument("eigenvalues must be ascending".into()));
        }
        if s <= group_tol {
            *pattern.last_mut().expect("nonempty") += 1;
        } else if s >= split_tol {
            pattern.push(1);
        } else {
            return Err(Error::AmbiguousGrouping { spacing: s });
        }
    }
    Ok(pattern)
}

fn residual(values: &[f64], pattern: &[usize]) -> f64 {
    pattern_ranges(pattern)
        .into_iter()
        .filter(|r| r.len() >= 2)
        .map(|r| values[r.end - 1] - values[r.start])
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct RefineOptions {
    pub tol: f64,
    pub group_tol: f64,
    pub split_tol: f64,
    pub probe_radius: f64,
    pub rounds: usize,
    /// Search around each isolated point for neighbours the scan merged.
    pub explore: bool,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            tol: REFINE_TOL,
            group_tol: GROUP_TOL,
            split_tol: SPLIT_TOL,
            probe_radius: 0.1,
            rounds: 8,
            explore: true,
        }
    }
}

/// Minimizes the gap from `start` and classifies the result. The locus
/// probe is not run; `locus` is set to `Point`.
pub fn refine_from(
    family: &HamiltonianFamily,
    start: &[f64],
    step: f64,
    opts: &RefineOptions,
) -> Result<DegeneratePoint> {
    let domain = family.domain();
    let nm = NelderMeadOptions::default();
    let gap2 = |x: &[f64]| {
        let g = gap(family, x);
        if g.is_finite() {
            g * g
        } else {
            f64::INFINITY
        }
    };
    let mut x = start.to_vec();
    let mut s = step.max(1e-6);
    for _ in 0..opts.rounds {
        let m = nelder_mead(gap2, &x, s, &nm);
        x = m.x;
        if m.f.sqrt() <= opts.tol * 1e-3 {
            break;
        }
        s = (s * 0.1).max(1e-9);
    }
    let near = |x: &[f64], g: f64| Error::NearDegeneracy {
        location: domain.canonical(x),
        gap: g,
    };
    let values = family.spectrum(&x)?.values;
    let pattern = classify_multiplicity(&values, opts.group_tol, opts.split_tol)?;
    if pattern.iter().all(|&g| g == 1) {
        return Err(near(&x, gap(family, &x)));
    }
    let mut res = residual(&values, &pattern);
    if res > opts.tol {
        // Pull every group together, not only the closest pair.
        let spread = |y: &[f64]| match family.spectrum(y) {
            Ok(e) => pattern_ranges(&pattern)
                .into_iter()
                .filter(|r| r.len() >= 2)
                .map(|r| (e.values[r.end - 1] - e.values[r.start]).powi(2))
                .sum(),
            Err(_) => f64::INFINITY,
        };
        let mut s = step.max(1e-6) * 0.1;
        for _ in 0..opts.rounds {
            let m = nelder_mead(spread, &x, s, &nm);
            x = m.x;
            if m.f.sqrt() <= opts.tol * 1e-3 {
                break;
            }
            s = (s * 0.1).max(1e-9);
        }
        let values = family.spectrum(&x)?.values;
        res = residual(&values, &pattern);
        if res > opts.tol {
            return Err(near(&x, res));
        }
    }
    let values = family.spectrum(&x)?.values;
    let pattern = classify_multiplicity(&values, opts.group_tol, opts.split_tol)?;
    Ok(DegeneratePoint {
        location: domain.canonical(&x),
        residual_gap: residual(&values, &pattern),
        eigenvalues: values,
        pattern,
        locus: LocusDim::Point,
    })
}

/// Refines a scan candidate from its smallest-gap grid point and probes the
/// locus dimension.
pub fn refine(
    family: &HamiltonianFamily,
    candidate: &DegeneracyCandidate,
    opts: &RefineOptions,
) -> Result<DegeneratePoint> {
    let mut p = refine_from(family, &candidate.location, candidate.spacing * 0.5, opts)?;
    p.locus = locus_dimension_probe(family, &p.location, p.residual_gap, opts.probe_radius).0;
    Ok(p)
}

/// Smallest gap on each face of the cube of half-width `r` around `point`.
/// The locus is isolated when all of them exceed `max(10 residual, 1e-6)`.
pub fn locus_dimension_probe(
    family: &HamiltonianFamily,
    point: &[f64],
    residual_gap: f64,
    r: f64,
) -> (LocusDim, Vec<f64>) {
    let d = family.dim();
    let threshold = (10.0 * residual_gap).max(1e-6);
    let faces: Vec<(usize, f64)> = (0..d).flat_map(|a| [(a, r), (a, -r)]).collect();
    let minima: Vec<f64> = faces
        .par_iter()
        .map(|&(axis, side)| face_minimum(family, point, axis, side, r))
        .collect();
    let locus = if minima.iter().all(|&m| m > threshold) {
        LocusDim::Point
    } else {
        LocusDim::Extended
    };
    (locus, minima)
}

fn face_minimum(family: &HamiltonianFamily, center: &[f64], axis: usize, side: f64, r: f64) -> f64 {
    let d = family.dim();
    let free: Vec<usize> = (0..d).filter(|&a| a != axis).collect();
    let embed = |coords: &[f64]| -> Vec<f64> {
        let mut k = center.to_vec();
        k[axis] += side;
        for (a, c) in free.iter().zip(coords) {
            k[*a] += c;
        }
        k
    };
    if free.is_empty() {
        return gap(family, &embed(&[]));
    }
    let m: usize = if free.len() <= 2 { 9 } else { 5 };
    let mut best = (f64::INFINITY, vec![0.0; free.len()]);
    let total = m.pow(free.len() as u32);
    for code in 0..total {
        let mut c = code;
        let coords: Vec<f64> = (0..free.len())
            .map(|_| {
                let i = c % m;
                c /= m;
                -r + 2.0 * r * i as f64 / (m - 1) as f64
            })
            .collect();
        let g = gap(family, &embed(&coords));
        if g < best.0 {
            best = (g, coords);
        }
    }
    // Unconstrained parameters θ with coordinate r sin θ keep the search on the face.
    let theta0: Vec<f64> = best.1.iter().map(|c| (c / r).clamp(-1.0, 1.0).asin()).collect();
    let objective = |theta: &[f64]| {
        let coords: Vec<f64> = theta.iter().map(|t| r * t.sin()).collect();
        let g = gap(family, &embed(&coords));
        g * g
    };
    let res = nelder_mead(
        objective,
        &theta0,
        0.5 / (m - 1) as f64,
        &NelderMeadOptions {
            max_iter: 2000,
            xtol: 1e-12,
            ftol: 0.0,
        },
    );
    res.f.sqrt().min(best.0)
}

/// A non-isolated component, represented by refined sample points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DegenerateCurve {
    pub samples: Vec<DegeneratePoint>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NearDegeneracy {
    pub location: Vec<f64>,
    pub gap: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub points: Vec<DegeneratePoint>,
    pub curves: Vec<DegenerateCurve>,
    pub near: Vec<NearDegeneracy>,
}

impl DegeneracyReport {
    /// Locations of every refined degeneracy, including curve samples.
    pub fn all_locations(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .map(|p| p.location.clone())
            .chain(
                self.curves
                    .iter()
                    .flat_map(|c| c.samples.iter().map(|p| p.location.clone())),
            )
            .collect()
    }
}

fn dedup(points: &mut Vec<DegeneratePoint>, domain: Domain, tol: f64) {
    points.sort_by(|a, b| a.residual_gap.total_cmp(&b.residual_gap));
    let mut kept: Vec<DegeneratePoint> = Vec::new();
    for p in points.drain(..) {
        if !kept.iter().any(|q| domain.distance(&q.location, &p.location) < tol) {
            kept.push(p);
        }
    }
    kept.sort_by(|a, b| a.location.partial_cmp(&b.location).unwrap_or(std::cmp::Ordering::Equal));
    *points = kept;
}

/// Scan, refine every cluster from its grid-local minima, and separate
/// isolated points from extended components.
pub fn find_degeneracies(
    family: &HamiltonianFamily,
    scan: &ScanOptions,
    opts: &RefineOptions,
) -> Result<DegeneracyReport> {
    let domain = family.domain();
    let candidates = scan_gaps(family, scan)?;
    let per_cluster: Vec<(Vec<DegeneratePoint>, Vec<NearDegeneracy>)> = candidates
        .par_iter()
        .map(|c| {
            let mut found = Vec::new();
            let mut near = Vec::new();
            for seed in &c.seeds {
                match refine_from(family, seed, c.spacing * 0.5, opts) {
                    Ok(p) => found.push(p),
                    Err(Error::NearDegeneracy { location, gap }) => near.push(NearDegeneracy { location, gap }),
                    Err(Error::AmbiguousGrouping { spacing }) => near.push(NearDegeneracy {
                        location: domain.canonical(seed),
                        gap: spacing,
                    }),
                    Err(e) => return Err(e),
                }
            }
            dedup(&mut found, domain, DEDUP_TOL);
            for p in found.iter_mut() {
                p.locus = locus_dimension_probe(family, &p.location, p.residual_gap, opts.probe_radius).0;
            }
            if found.iter().any(|p| p.locus == LocusDim::Extended) {
                // Sample the whole component, not only its deepest minima.
                let stride = (c.members.len() / CURVE_SAMPLES).max(1);
                for m in c.members.iter().step_by(stride) {
                    if let Ok(p) = refine_from(family, m, c.spacing * 0.5, opts) {
                        found.push(p);
                    }
                }
                dedup(&mut found, domain, DEDUP_TOL);
            } else if opts.explore {
                // Closely spaced points can share one grid minimum.
                let mut frontier = found.clone();
                for _ in 0..3 {
                    let mut fresh = Vec::new();
                    for p in &frontier {
                        for q in multistart(family, &p.location, c.spacing, opts)?.0 {
                            let known = found
                                .iter()
                                .chain(&fresh)
                                .any(|k| domain.distance(&k.location, &q.location) < DEDUP_TOL);
                            if !known && domain.distance(&p.location, &q.location) <= 2.0 * c.spacing {
                                fresh.push(q);
                            }
                        }
                    }
                    dedup(&mut fresh, domain, DEDUP_TOL);
                    if fresh.is_empty() {
                        break;
                    }
                    for q in fresh.iter_mut() {
                        q.locus = locus_dimension_probe(family, &q.location, q.residual_gap, opts.probe_radius).0;
                    }
                    found.extend(fresh.iter().cloned());
                    frontier = fresh;
                }
            }
            Ok((found, near))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = DegeneracyReport::default();
    for (found, near) in per_cluster {
        if found.is_empty() {
            // Keep the best failed attempt only.
            if let Some(best) = near.into_iter().min_by(|a, b| a.gap.total_cmp(&b.gap)) {
                report.near.push(best);
            }
            continue;
        }
        if found.iter().any(|p| p.locus == LocusDim::Extended) {
            let samples = found
                .into_iter()
                .map(|mut p| {
                    p.locus = LocusDim::Extended;
                    p
                })
                .collect();
            report.curves.push(DegenerateCurve { samples });
        } else {
            report.points.extend(found);
        }
    }
    dedup(&mut report.points, domain, DEDUP_TOL);
    Ok(report)
}

/// Result of a multistart search inside a ball.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallSearch {
    pub center: Vec<f64>,
    pub half_width: f64,
    pub points: Vec<DegeneratePoint>,
    pub starts: usize,
}

/// Multistart refinement inside the cube of half-width `half_width` around
/// `center`: starts on geometric shells along the 3^d - 1 lattice
/// directions. Degeneracies found close to the boundary are an error.
pub fn find_in_ball(
    family: &HamiltonianFamily,
    center: &[f64],
    half_width: f64,
    opts: &RefineOptions,
) -> Result<BallSearch> {
    let domain = family.domain();
    let (found, starts) = multistart(family, center, half_width, opts)?;
    let mut points = Vec::new();
    for p in found {
        let disp = domain.displacement(center, &p.location);
        let dist = disp.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if dist <= 0.9 * half_width {
            points.push(p);
        } else if dist <= 1.1 * half_width {
            return Err(Error::BallBoundaryCrossing {
                center: center.to_vec(),
                half_width,
            });
        }
    }
    dedup(&mut points, domain, DEDUP_TOL.min(half_width * 1e-3));
    Ok(BallSearch {
        center: center.to_vec(),
        half_width,
        points,
        starts,
    })
}

/// Refinements started at the center and on geometric shells along the
/// 3^d - 1 lattice directions around it. Returns the successes and the
/// number of starts.
fn multistart(
    family: &HamiltonianFamily,
    center: &[f64],
    half_width: f64,
    opts: &RefineOptions,
) -> Result<(Vec<DegeneratePoint>, usize)> {
    let d = family.dim();
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for code in 0..3usize.pow(d as u32) {
        let mut c = code;
        let v: Vec<f64> = (0..d)
            .map(|_| {
                let o = (c % 3) as f64 - 1.0;
                c /= 3;
                o
            })
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            dirs.push(v.iter().map(|x| x / n).collect());
        }
    }
    let mut starts: Vec<(Vec<f64>, f64)> = vec![(center.to_vec(), half_width * 0.25)];
    for j in 0..6 {
        let rho = 0.7 * half_width * 3f64.powi(-j);
        for dir in &dirs {
            starts.push((center.iter().zip(dir).map(|(c, u)| c + rho * u).collect(), rho * 0.5));
        }
    }
    let results: Vec<Result<DegeneratePoint>> = starts
        .par_iter()
        .map(|(x0, step)| refine_from(family, x0, *step, opts))
        .collect();
    let mut found = Vec::new();
    for r in results {
        match r {
            Ok(p) => found.push(p),
            Err(Error::NearDegeneracy { .. }) | Err(Error::AmbiguousGrouping { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((found, starts.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_digraph, make_gyroid, make_spin_family, Spin};
    use std::f64::consts::PI;

    #[test]
    fn classify_examples() {
        assert_eq!(
            classify_multiplicity(&[-1.0, -1.0, -1.0, 3.0], GROUP_TOL, SPLIT_TOL).unwrap(),
            vec![3, 1]
        );
        let s = 3f64.sqrt();
        assert_eq!(
            classify_multiplicity(&[-s, -s, s, s], GROUP_TOL, SPLIT_TOL).unwrap(),
            vec![2, 2]
        );
        assert_eq!(
            classify_multiplicity(&[1.0, 2.0, 3.0], GROUP_TOL, SPLIT_TOL).unwrap(),
            vec![1, 1, 1]
        );
        assert!(matches!(
            classify_multiplicity(&[0.0, 1e-5], GROUP_TOL, SPLIT_TOL),
            Err(Error::AmbiguousGrouping { .. })
        ));
        assert!(classify_multiplicity(&[1.0, 0.0], GROUP_TOL, SPLIT_TOL).is_err());
    }

    #[test]
    fn spin_half_scan_has_one_cluster_at_origin() {
        let f = make_spin_family(Spin::new(0.5).unwrap());
        let c = scan_gaps(&f, &ScanOptions::default()).unwrap();
        assert_eq!(c.len(), 1);
        let p = refine(&f, &c[0], &RefineOptions::default()).unwrap();
        assert!(p.location.iter().all(|x| x.abs() < 1e-6), "{p:?}");
        assert_eq!(p.pattern, vec![2]);
        assert_eq!(p.locus, LocusDim::Point);
    }

    #[test]
    fn honeycomb_dirac_points() {
        let f = make_digraph(2).unwrap();
        let report = find_degeneracies(&f, &ScanOptions::default(), &RefineOptions::default()).unwrap();
        assert_eq!(report.points.len(), 2);
        let expect = [[2.0 * PI / 3.0, 4.0 * PI / 3.0], [4.0 * PI / 3.0, 2.0 * PI / 3.0]];
        for (p, e) in report.points.iter().zip(expect) {
            assert!(Domain::Torus.distance(&p.location, &e) < 1e-6, "{p:?}");
            assert_eq!(p.pattern, vec![2]);
            assert_eq!(p.locus, LocusDim::Point);
        }
    }

    #[test]
    fn gyroid_degeneracies() {
        let g = make_gyroid();
        let c = scan_gaps(&g, &ScanOptions::default()).unwrap();
        assert_eq!(c.len(), 4);
        let report = find_degeneracies(&g, &ScanOptions::default(), &RefineOptions::default()).unwrap();
        let h = PI / 2.0;
        let expect: [([f64; 3], Vec<usize>); 4] = [
            ([0.0; 3], vec![3, 1]),
            ([h; 3], vec![2, 2]),
            ([PI; 3], vec![1, 3]),
            ([3.0 * h; 3], vec![2, 2]),
        ];
        assert_eq!(report.points.len(), 4);
        assert!(report.curves.is_empty() && report.near.is_empty());
        for (loc, pattern) in expect {
            let p = report
                .points
                .iter()
                .find(|p| Domain::Torus.distance(&p.location, &loc) < 1e-6)
                .unwrap_or_else(|| panic!("missing {loc:?}: {report:?}"));
            assert_eq!(p.pattern, pattern);
            assert!(p.residual_gap <= REFINE_TOL);
            assert_eq!(p.locus, LocusDim::Point);
        }
        // k -> -k and k -> k + (π,π,π) with reversed pattern.
        for p in &report.points {
            let minus: Vec<f64> = p.location.iter().map(|x| -x).collect();
            let q = report
                .points
                .iter()
                .find(|q| Domain::Torus.distance(&q.location, &minus) < 1e-6)
                .unwrap();
            assert_eq!(q.pattern, p.pattern);
            let shifted: Vec<f64> = p.location.iter().map(|x| x + PI).collect();
            let q = report
                .points
                .iter()
                .find(|q| Domain::Torus.distance(&q.location, &shifted) < 1e-6)
                .unwrap();
            let reversed: Vec<usize> = p.pattern.iter().rev().copied().collect();
            assert_eq!(q.pattern, reversed);
        }
    }

    #[test]
    fn diamond_locus_is_extended() {
        let f = make_digraph(3).unwrap();
        let report = find_degeneracies(&f, &ScanOptions::default(), &RefineOptions::default()).unwrap();
        assert!(report.points.is_empty(), "{:?}", report.points);
        assert!(!report.curves.is_empty());
        for c in &report.curves {
            for p in &c.samples {
                let phi = &p.location;
                // On one of the circles φ_i = π, φ_j ≡ φ_k + π.
                let on = (0..3).any(|i| {
                    let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                    Domain::Torus.distance(&[phi[i]], &[PI]) < 1e-5
                        && Domain::Torus.distance(&[phi[j]], &[phi[k] + PI]) < 1e-5
                });
                assert!(on, "{phi:?}");
            }
        }
        let (locus, _) = locus_dimension_probe(&f, &[PI, 0.3 + PI, 0.3], 0.0, 0.1);
        assert_eq!(locus, LocusDim::Extended);
    }

    #[test]
    fn ball_search_finds_single_point() {
        let g = make_gyroid();
        let ball = find_in_ball(&g, &[0.05, -0.02, 0.01], 0.3, &RefineOptions::default()).unwrap();
        assert_eq!(ball.points.len(), 1);
        assert!(ball.points[0]
            .location
            .iter()
            .all(|x| Domain::Torus.distance(&[*x], &[0.0]) < 1e-6));
    }

    #[test]
    fn grid_neighbors() {
        let g = Grid {
            n: 4,
            d: 3,
            periodic: true,
            lo: vec![0.0; 3],
            step: vec![1.0; 3],
        };
        assert_eq!(g.neighbors(0).len(), 26);
        let b = Grid { periodic: false, ..g };
        assert_eq!(b.neighbors(0).len(), 7);
    }
}
