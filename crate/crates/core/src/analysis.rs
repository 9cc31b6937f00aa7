//! Slicing step functions, the global constraint checker, deformation
//! tracking and the end-to-end pipeline.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::degeneracy::{
    find_degeneracies, find_in_ball, gap, refine_from, scan_gaps, DegeneracyReport, DegeneratePoint, RefineOptions,
    ScanOptions, ScanRegion,
};
use crate::error::{Error, Result};
use crate::localmodel::{classify_point, equatorial_chirality_2d, LocalModel, LocalOptions};
use crate::models::{deform, gyroid_tree_perturbation, wrap_angle, wrap_signed, Domain, HamiltonianFamily, TWO_PI};
use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::topology::{
    berry_phase, chern_on_slice, chern_on_sphere, BerryPhaseResult, LoopPath, Orientation, TopologyOptions,
};

/// Distinct components must project at least this far apart.
pub const GENERICITY_TOL: f64 = 1e-3;

/// Circular distance between two angles.
fn circ(a: f64, b: f64) -> f64 {
    wrap_signed(a - b).abs()
}

/// A critical value of the slicing parameter: the projection of one
/// degenerate component (a single value for points, an arc for curves).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub lo: f64,
    /// Equal to `lo` for points; may exceed 2π for arcs through the wrap.
    pub hi: f64,
    pub extended: bool,
    pub locations: Vec<Vec<f64>>,
}

impl CriticalValue {
    pub fn t(&self) -> f64 {
        self.lo
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceInterval {
    pub start: f64,
    /// May exceed 2π for the interval through the wrap.
    pub end: f64,
    /// Slices where χ was evaluated: midpoint and quarter point.
    pub samples: Vec<f64>,
    pub chi: Vec<i64>,
    /// Both samples agreed and both Chern computations were reliable.
    pub confirmed: bool,
}

impl SliceInterval {
    pub fn contains(&self, t: f64) -> bool {
        let t = wrap_angle(t);
        let rel = wrap_angle(t - self.start);
        rel > 0.0 && rel < self.end - self.start
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceProfile {
    pub axis: usize,
    pub bands: usize,
    pub critical: Vec<CriticalValue>,
    /// `intervals[j]` runs from `critical[j]` to `critical[j + 1]` (cyclically).
    pub intervals: Vec<SliceInterval>,
    /// `jumps[j] = χ(intervals[j]) - χ(intervals[j - 1])`, at `critical[j]`.
    pub jumps: Vec<Vec<i64>>,
    /// Degeneracies found while confirming intervals.
    pub recovered: Vec<DegeneratePoint>,
}

impl SliceProfile {
    pub fn critical_params(&self) -> Vec<f64> {
        self.critical.iter().map(|c| c.t()).collect()
    }

    pub fn chi_at(&self, t: f64) -> Option<&[i64]> {
        self.intervals.iter().find(|i| i.contains(t)).map(|i| i.chi.as_slice())
    }

    /// Index of the critical value at `t` (points only).
    pub fn critical_index(&self, t: f64, tol: f64) -> Option<usize> {
        self.critical.iter().position(|c| !c.extended && circ(c.lo, t) <= tol)
    }

    pub fn jump_at(&self, t: f64, tol: f64) -> Option<&[i64]> {
        self.critical_index(t, tol).map(|i| self.jumps[i].as_slice())
    }
}

#[derive(Clone, Debug)]
pub struct SliceOptions {
    pub genericity_tol: f64,
    pub topology: TopologyOptions,
    /// Grid for re-scanning a slab when an interval is inconsistent.
    pub recovery_grid: usize,
    pub refine: RefineOptions,
}

impl Default for SliceOptions {
    fn default() -> Self {
        SliceOptions {
            genericity_tol: GENERICITY_TOL,
            topology: TopologyOptions::default(),
            recovery_grid: 24,
            refine: RefineOptions::default(),
        }
    }
}

/// Smallest gap on the slice `k[axis] = t`: coarse grid then simplex polish.
pub fn slice_min_gap(family: &HamiltonianFamily, axis: usize, t: f64, grid: usize) -> (f64, Vec<f64>) {
    let (u, w) = crate::topology::slice_axes(axis);
    let embed = |a: f64, b: f64| {
        let mut k = vec![0.0; 3];
        k[axis] = t;
        k[u] = a;
        k[w] = b;
        k
    };
    let coarse: Vec<(f64, f64, f64)> = (0..grid * grid)
        .into_par_iter()
        .map(|idx| {
            let a = TWO_PI * (idx / grid) as f64 / grid as f64;
            let b = TWO_PI * (idx % grid) as f64 / grid as f64;
            (gap(family, &embed(a, b)), a, b)
        })
        .collect();
    let (g0, a0, b0) = coarse
        .into_iter()
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .unwrap_or((f64::INFINITY, 0.0, 0.0));
    let m = nelder_mead(
        |x: &[f64]| {
            let g = gap(family, &embed(x[0], x[1]));
            g * g
        },
        &[a0, b0],
        TWO_PI / grid as f64 * 0.5,
        &NelderMeadOptions::default(),
    );
    if m.f.sqrt() < g0 {
        (m.f.sqrt(), embed(wrap_angle(m.x[0]), wrap_angle(m.x[1])))
    } else {
        (g0, embed(a0, b0))
    }
}

fn critical_values(
    family: &HamiltonianFamily,
    axis: usize,
    points: &[DegeneratePoint],
    curves: &[Vec<Vec<f64>>],
) -> Result<Vec<CriticalValue>> {
    let mut out: Vec<CriticalValue> = points
        .iter()
        .map(|p| {
            let t = wrap_angle(p.location[axis]);
            CriticalValue {
                lo: t,
                hi: t,
                extended: false,
                locations: vec![p.location.clone()],
            }
        })
        .collect();
    for samples in curves {
        let mut ts: Vec<f64> = samples.iter().map(|s| wrap_angle(s[axis])).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        // Gaps between consecutive projections, cyclically; a gap is free
        // only if the slice at its midpoint avoids the locus.
        let n = ts.len();
        let mut free: Vec<(f64, f64)> = Vec::new();
        for i in 0..n {
            let a = ts[i];
            let b = if i + 1 < n { ts[i + 1] } else { ts[0] + TWO_PI };
            if b - a < 1e-6 {
                continue;
            }
            let mid = wrap_angle(0.5 * (a + b));
            if slice_min_gap(family, axis, mid, 32).0 > 1e-6 {
                free.push((a, b));
            }
        }
        let Some(&(a, b)) = free.iter().max_by(|x, y| (x.1 - x.0).total_cmp(&(y.1 - y.0))) else {
            return Err(Error::NoValidSlicing { axis });
        };
        // The component occupies the complement of its largest free gap.
        let lo = wrap_angle(b);
        let mut hi = a;
        while hi < lo {
            hi += TWO_PI;
        }
        out.push(CriticalValue {
            lo,
            hi,
            extended: true,
            locations: samples.clone(),
        });
    }
    out.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    Ok(out)
}

fn check_genericity(axis: usize, critical: &[CriticalValue], tol: f64) -> Result<()> {
    let n = critical.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&critical[i], &critical[j]);
            let overlap = if a.extended || b.extended {
                let inside = |t: f64, c: &CriticalValue| wrap_angle(t - c.lo) <= c.hi - c.lo + tol;
                inside(b.lo, a) || inside(a.lo, b)
            } else {
                circ(a.lo, b.lo) <= tol
            };
            if overlap {
                return Err(Error::NonGeneric {
                    axis,
                    a: a.lo,
                    b: b.lo,
                    tol,
                });
            }
        }
    }
    Ok(())
}

/// χ_i over the circle of slices normal to `axis`, with jumps at the
/// projections of the degenerate locus.
pub fn slice_profile(
    family: &HamiltonianFamily,
    axis: usize,
    report: &DegeneracyReport,
    opts: &SliceOptions,
) -> Result<SliceProfile> {
    if family.dim() != 3 {
        return Err(Error::InvalidArgument(format!(
            "slicing needs a 3-dimensional family, got d = {}",
            family.dim()
        )));
    }
    if axis >= 3 {
        return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
    }
    let curves: Vec<Vec<Vec<f64>>> = report
        .curves
        .iter()
        .map(|c| c.samples.iter().map(|p| p.location.clone()).collect())
        .collect();
    let mut points = report.points.clone();
    let mut recovered: Vec<DegeneratePoint> = Vec::new();
    for _attempt in 0..4 {
        let critical = critical_values(family, axis, &points, &curves)?;
        check_genericity(axis, &critical, opts.genericity_tol)?;
        let spans: Vec<(f64, f64)> = if critical.is_empty() {
            vec![(0.0, TWO_PI)]
        } else {
            (0..critical.len())
                .map(|j| {
                    let start = critical[j].hi;
                    let mut end = if j + 1 < critical.len() {
                        critical[j + 1].lo
                    } else {
                        critical[0].lo + TWO_PI
                    };
                    while end <= start {
                        end += TWO_PI;
                    }
                    (start, end)
                })
                .collect()
        };
        let evaluated: Vec<Result<SliceInterval>> = spans
            .par_iter()
            .map(|&(start, end)| {
                let len = end - start;
                let samples = vec![wrap_angle(start + 0.5 * len), wrap_angle(start + 0.25 * len)];
                let mut chis = Vec::new();
                let mut reliable = true;
                for &t in &samples {
                    let rs = chern_on_slice(family, axis, t, &opts.topology)?;
                    reliable &= rs.iter().all(|r| r.reliable);
                    chis.push(rs.iter().map(|r| r.value).collect::<Vec<i64>>());
                }
                Ok(SliceInterval {
                    start,
                    end,
                    confirmed: reliable && chis[0] == chis[1],
                    chi: chis.swap_remove(0),
                    samples,
                })
            })
            .collect();
        let mut intervals = Vec::with_capacity(evaluated.len());
        let mut slice_hit: Option<Vec<f64>> = None;
        for r in evaluated {
            match r {
                Ok(i) => intervals.push(i),
                Err(Error::DegenerateOnSurface { location, .. }) => {
                    slice_hit = Some(location);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let bad: Option<(f64, f64)> = intervals
            .iter()
            .find(|i| !i.confirmed)
            .map(|i| (i.samples[1], i.samples[0]));
        if slice_hit.is_none() && bad.is_none() {
            let jumps = if critical.is_empty() {
                Vec::new()
            } else {
                let n = intervals.len();
                (0..n)
                    .map(|j| {
                        let left = &intervals[(j + n - 1) % n].chi;
                        intervals[j].chi.iter().zip(left).map(|(r, l)| r - l).collect()
                    })
                    .collect()
            };
            return Ok(SliceProfile {
                axis,
                bands: family.bands(),
                critical,
                intervals,
                jumps,
                recovered,
            });
        }
        // Something was missed: look for it and start over.
        let found = match (slice_hit, bad) {
            (Some(loc), _) => refine_from(family, &loc, 0.05, &opts.refine).ok().into_iter().collect(),
            (None, Some((a, b))) => scan_slab(family, axis, a.min(b), a.max(b), opts)?,
            (None, None) => unreachable!(),
        };
        let fresh: Vec<DegeneratePoint> = found
            .into_iter()
            .filter(|p| {
                !points
                    .iter()
                    .any(|q| Domain::Torus.distance(&p.location, &q.location) < 1e-5)
            })
            .collect();
        if fresh.is_empty() {
            let (start, end) = bad.unwrap_or((0.0, 0.0));
            return Err(Error::MissedDegeneracy { axis, start, end });
        }
        recovered.extend(fresh.iter().cloned());
        points.extend(fresh);
    }
    Err(Error::MissedDegeneracy {
        axis,
        start: 0.0,
        end: TWO_PI,
    })
}

fn scan_slab(
    family: &HamiltonianFamily,
    axis: usize,
    a: f64,
    b: f64,
    opts: &SliceOptions,
) -> Result<Vec<DegeneratePoint>> {
    let mut lo = vec![0.0; 3];
    let mut hi = vec![TWO_PI; 3];
    lo[axis] = a;
    hi[axis] = if b > a { b } else { b + TWO_PI };
    let scan = ScanOptions {
        grid: opts.recovery_grid,
        threshold: 0.05,
        region: Some(ScanRegion::Box { lo, hi }),
    };
    let mut out = Vec::new();
    for c in scan_gaps(family, &scan)? {
        for seed in &c.seeds {
            if let Ok(p) = refine_from(family, seed, c.spacing * 0.5, &opts.refine) {
                out.push(p);
            }
        }
    }
    Ok(out)
}

/// Outcome of one constraint clause.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inapplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClauseCheck {
    pub id: String,
    pub description: String,
    pub status: Status,
    pub witness: serde_json::Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub checks: Vec<ClauseCheck>,
}

impl ConstraintReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn failed_ids(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.status == Status::Fail)
            .map(|c| c.id.as_str())
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&ClauseCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    fn push(&mut self, id: &str, description: &str, status: Status, witness: serde_json::Value) {
        self.checks.push(ClauseCheck {
            id: id.into(),
            description: description.into(),
            status,
            witness,
        });
    }
}

/// Everything the global checker looks at.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GlobalContext {
    pub profiles: Vec<SliceProfile>,
    pub local_models: Vec<LocalModel>,
    pub time_reversal: bool,
    /// Two-parameter families: equatorial chiralities per point.
    #[serde(default)]
    pub equatorial: Vec<(Vec<f64>, i32)>,
}

fn status(applicable: bool, failures: &[serde_json::Value]) -> Status {
    if !applicable {
        Status::Inapplicable
    } else if failures.is_empty() {
        Status::Pass
    } else {
        Status::Fail
    }
}

/// Expected jump across a local model's point: `ε 2m` on spin blocks, 0 on
/// non-degenerate bands. `None` if some block lacks spin or chirality.
fn expected_jump(model: &LocalModel) -> Option<Vec<i64>> {
    let mut out = vec![0; model.point.eigenvalues.len()];
    for b in &model.blocks {
        let spin = b.spin?;
        let eps = b.chirality? as i64;
        for (band, m2) in b.bands.clone().zip(spin.twice_m_values()) {
            out[band] = eps * m2;
        }
    }
    Some(out)
}

fn is_special(t: f64) -> bool {
    circ(t, 0.0) <= 1e-6 || circ(t, PI) <= 1e-6
}

/// Evaluates the slicing constraints C1-C7 and their consequences.
pub fn check_global(ctx: &GlobalContext) -> ConstraintReport {
    let mut report = ConstraintReport::default();
    let has_profiles = !ctx.profiles.is_empty();

    let mut fails = Vec::new();
    for p in &ctx.profiles {
        for (j, i) in p.intervals.iter().enumerate() {
            if !i.confirmed || i.chi.len() != p.bands {
                fails.push(json!({"axis": p.axis, "interval": j, "samples": i.samples}));
            }
        }
    }
    report.push(
        "C1",
        "chi_i are integer step functions, constant on each interval",
        status(has_profiles, &fails),
        json!({"unconfirmed": fails}),
    );

    let mut fails = Vec::new();
    for p in &ctx.profiles {
        for (j, i) in p.intervals.iter().enumerate() {
            let s: i64 = i.chi.iter().sum();
            if s != 0 {
                fails.push(json!({"axis": p.axis, "interval": j, "sum": s}));
            }
        }
    }
    report.push(
        "C2",
        "sum over bands of chi_i vanishes",
        status(has_profiles, &fails),
        json!({"violations": fails}),
    );

    let mut fails = Vec::new();
    for p in &ctx.profiles {
        for (c, j) in p.critical.iter().zip(&p.jumps) {
            let s: i64 = j.iter().sum();
            if s != 0 {
                fails.push(json!({"axis": p.axis, "t": c.t(), "jumps": j, "sum": s}));
            }
        }
    }
    report.push(
        "C3",
        "sum over bands of the jumps at each critical value vanishes",
        status(has_profiles, &fails),
        json!({"violations": fails}),
    );

    let mut fails = Vec::new();
    for p in &ctx.profiles {
        for band in 0..p.bands {
            let s: i64 = p.jumps.iter().map(|j| j[band]).sum();
            if s != 0 {
                fails.push(json!({"axis": p.axis, "band": band + 1, "sum": s}));
            }
        }
    }
    report.push(
        "C4",
        "sum of the jumps of each band around the circle vanishes",
        status(has_profiles, &fails),
        json!({"violations": fails}),
    );

    let mut fails = Vec::new();
    let mut compared = 0;
    for p in &ctx.profiles {
        for m in &ctx.local_models {
            let Some(expect) = expected_jump(m) else { continue };
            let Some(j) = p.jump_at(m.point.location[p.axis], 1e-6) else {
                continue;
            };
            compared += 1;
            if j != expect.as_slice() {
                fails.push(json!({"axis": p.axis, "point": m.point.location, "jump": j, "expected": expect}));
            }
        }
    }
    report.push(
        "C5",
        "jumps at spin-type points equal chirality times 2m",
        status(compared > 0, &fails),
        json!({"compared": compared, "violations": fails}),
    );

    let mut fails = Vec::new();
    if ctx.time_reversal {
        for p in &ctx.profiles {
            for i in &p.intervals {
                let t = i.samples[0];
                if let Some(other) = p.chi_at(-t) {
                    let bad = i.chi.iter().zip(other).any(|(a, b)| a + b != 0);
                    if bad {
                        fails.push(json!({"axis": p.axis, "t": t, "chi": i.chi, "chi_minus_t": other}));
                    }
                }
            }
        }
    }
    report.push(
        "C6",
        "chi_i(t) = -chi_i(-t) under time reversal",
        status(ctx.time_reversal && has_profiles, &fails),
        json!({"violations": fails}),
    );

    let mut fails = Vec::new();
    let mut seen = 0;
    if ctx.time_reversal {
        for p in &ctx.profiles {
            for (c, j) in p.critical.iter().zip(&p.jumps) {
                if !c.extended && is_special(c.t()) {
                    seen += 1;
                    if j.iter().any(|x| x % 2 != 0) {
                        fails.push(json!({"axis": p.axis, "t": c.t(), "jumps": j}));
                    }
                }
            }
        }
    }
    report.push(
        "C7",
        "jumps at t = 0 and t = pi are even under time reversal",
        status(ctx.time_reversal && has_profiles, &fails),
        json!({"critical_values_checked": seen, "violations": fails}),
    );

    // No Weyl point on the slices t = 0, π.
    let mut fails = Vec::new();
    if ctx.time_reversal {
        for m in &ctx.local_models {
            let weyl = m.blocks.iter().any(|b| b.bands.len() == 2);
            if !weyl {
                continue;
            }
            for axis in 0..m.point.location.len().min(3) {
                if is_special(m.point.location[axis]) {
                    fails.push(json!({"point": m.point.location, "axis": axis}));
                }
            }
        }
    }
    report.push(
        "TRS-no-weyl",
        "no Weyl point lies on a time-reversal invariant slice",
        status(ctx.time_reversal && !ctx.local_models.is_empty(), &fails),
        json!({"violations": fails}),
    );

    // j_i(t_c) = j_i(-t_c).
    let mut fails = Vec::new();
    if ctx.time_reversal {
        for p in &ctx.profiles {
            for (c, j) in p.critical.iter().zip(&p.jumps) {
                if c.extended {
                    continue;
                }
                match p.jump_at(-c.t(), 1e-6) {
                    Some(other) if other == j.as_slice() => {}
                    other => fails.push(json!({"axis": p.axis, "t": c.t(), "jumps": j, "jumps_minus_t": other})),
                }
            }
        }
    }
    report.push(
        "TRS-pairing",
        "jumps at t and -t agree under time reversal",
        status(ctx.time_reversal && has_profiles, &fails),
        json!({"violations": fails}),
    );

    // A single regular critical value cannot occur.
    let mut fails = Vec::new();
    for p in &ctx.profiles {
        for band in 0..p.bands {
            let nonzero: Vec<f64> = p
                .critical
                .iter()
                .zip(&p.jumps)
                .filter(|(_, j)| j[band] != 0)
                .map(|(c, _)| c.t())
                .collect();
            if nonzero.len() == 1 {
                fails.push(json!({"axis": p.axis, "band": band + 1, "t": nonzero[0]}));
            }
        }
    }
    report.push(
        "single-critical",
        "no band jumps at exactly one critical value",
        status(has_profiles, &fails),
        json!({"violations": fails}),
    );

    // 2d: equatorial Dirac points at k and -k have opposite chirality.
    let mut fails = Vec::new();
    let mut pairs = 0;
    if ctx.time_reversal {
        for (k, eps) in &ctx.equatorial {
            let minus: Vec<f64> = k.iter().map(|x| -x).collect();
            if let Some((_, other)) = ctx
                .equatorial
                .iter()
                .find(|(q, _)| Domain::Torus.distance(q, &minus) < 1e-5)
            {
                pairs += 1;
                if other != &-eps {
                    fails.push(json!({"point": k, "chirality": eps, "partner_chirality": other}));
                }
            } else {
                fails.push(json!({"point": k, "partner": "missing"}));
            }
        }
    }
    report.push(
        "TRS-2d",
        "equatorial Dirac points at k and -k have opposite chirality",
        status(ctx.time_reversal && !ctx.equatorial.is_empty(), &fails),
        json!({"pairs_checked": pairs, "violations": fails}),
    );

    report
}

/// Charges inside a fixed ball at one deformation parameter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallAtLambda {
    pub lambda: f64,
    pub points: Vec<DegeneratePoint>,
    pub point_charges: Vec<Vec<i64>>,
    /// Per-band charge on the ball's boundary.
    pub ball_charges: Vec<i64>,
    /// The point charges add up to the ball charges.
    pub complete: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallTrace {
    pub center: Vec<f64>,
    pub half_width: f64,
    pub steps: Vec<BallAtLambda>,
}

impl BallTrace {
    pub fn conserved(&self) -> bool {
        self.steps.windows(2).all(|w| w[0].ball_charges == w[1].ball_charges)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeformationTrace {
    pub base: String,
    pub perturbation: String,
    pub lambdas: Vec<f64>,
    pub balls: Vec<BallTrace>,
    /// Per λ: smallest gap found on the slices t = 0 and t = π of every axis.
    pub special_slice_gaps: Vec<(f64, f64)>,
    pub note: Option<String>,
}

impl DeformationTrace {
    pub fn conserved(&self) -> bool {
        self.balls.iter().all(|b| b.conserved())
    }
}

#[derive(Clone, Debug)]
pub struct DeformationOptions {
    pub half_width: f64,
    pub refine: RefineOptions,
    pub topology: TopologyOptions,
}

impl Default for DeformationOptions {
    fn default() -> Self {
        DeformationOptions {
            half_width: 0.3,
            refine: RefineOptions::default(),
            topology: TopologyOptions::default(),
        }
    }
}

/// Per-point charges inside a ball, using cubes small enough to separate
/// the points.
fn point_charges(
    family: &HamiltonianFamily,
    points: &[DegeneratePoint],
    half_width: f64,
    topo: &TopologyOptions,
) -> Result<Vec<Vec<i64>>> {
    let domain = family.domain();
    points
        .iter()
        .map(|p| {
            let nearest = points
                .iter()
                .filter(|q| !std::ptr::eq(*q, p))
                .map(|q| domain.distance(&p.location, &q.location))
                .fold(f64::INFINITY, f64::min);
            let r = (0.3 * nearest).min(0.3 * half_width);
            let rs = chern_on_sphere(family, &p.location, r, Orientation::Outward, topo)?;
            Ok(rs.iter().map(|c| c.value).collect())
        })
        .collect()
}

/// Follows the degeneracies inside fixed balls along `H + λ H₁`.
pub fn track_deformation(
    base: &HamiltonianFamily,
    perturbation: &HamiltonianFamily,
    lambdas: &[f64],
    centers: &[Vec<f64>],
    opts: &DeformationOptions,
) -> Result<DeformationTrace> {
    if lambdas.first() != Some(&0.0) {
        return Err(Error::InvalidArgument("the lambda grid must start at 0".into()));
    }
    let mut balls: Vec<BallTrace> = centers
        .iter()
        .map(|c| BallTrace {
            center: c.clone(),
            half_width: opts.half_width,
            steps: Vec::new(),
        })
        .collect();
    let mut special = Vec::new();
    for &lambda in lambdas {
        let family = deform(base, perturbation, lambda)?;
        if base.has_time_reversal() && !family.has_time_reversal() {
            return Err(Error::SymmetryViolated {
                name: "time_reversal".into(),
                violation: f64::NAN,
            });
        }
        for ball in balls.iter_mut() {
            let search = find_in_ball(&family, &ball.center, ball.half_width, &opts.refine)?;
            let ball_charges: Vec<i64> = chern_on_sphere(
                &family,
                &ball.center,
                ball.half_width,
                Orientation::Outward,
                &opts.topology,
            )?
            .iter()
            .map(|c| c.value)
            .collect();
            let charges = point_charges(&family, &search.points, ball.half_width, &opts.topology)?;
            let mut total = vec![0; family.bands()];
            for q in &charges {
                for (t, c) in total.iter_mut().zip(q) {
                    *t += c;
                }
            }
            ball.steps.push(BallAtLambda {
                lambda,
                complete: total == ball_charges,
                points: search.points,
                point_charges: charges,
                ball_charges,
            });
        }
        if family.dim() == 3 {
            let mut worst = f64::INFINITY;
            for axis in 0..3 {
                for t in [0.0, PI] {
                    worst = worst.min(slice_min_gap(&family, axis, t, 48).0);
                }
            }
            special.push((lambda, worst));
        }
    }
    Ok(DeformationTrace {
        base: base.name().into(),
        perturbation: perturbation.name().into(),
        lambdas: lambdas.to_vec(),
        balls,
        special_slice_gaps: special,
        note: None,
    })
}

/// Default spanning-tree weight changes for the Gyroid deformation study.
pub const DEFAULT_TREE_DELTA: [f64; 3] = [0.3, -0.2, 0.1];
/// Used instead when the default does not split generically.
pub const FALLBACK_TREE_DELTA: [f64; 3] = [0.25, -0.35, 0.15];

/// Deformation study of the Gyroid with balls around its four points.
/// Falls back to [`FALLBACK_TREE_DELTA`] if the default split is not
/// generic (some ball does not resolve into double crossings only).
pub fn gyroid_deformation_study(
    gyroid: &HamiltonianFamily,
    lambdas: &[f64],
    opts: &DeformationOptions,
) -> Result<DeformationTrace> {
    let h = PI / 2.0;
    let centers = vec![vec![0.0; 3], vec![h; 3], vec![PI; 3], vec![3.0 * h; 3]];
    let generic = |trace: &DeformationTrace| {
        trace.balls.iter().all(|b| {
            b.steps.iter().filter(|s| s.lambda != 0.0).all(|s| {
                s.complete
                    && s.points
                        .iter()
                        .all(|p| p.pattern.iter().filter(|g| **g > 1).all(|g| *g == 2))
            })
        })
    };
    let first = track_deformation(
        gyroid,
        &gyroid_tree_perturbation(DEFAULT_TREE_DELTA),
        lambdas,
        &centers,
        opts,
    )?;
    if generic(&first) {
        return Ok(first);
    }
    let mut second = track_deformation(
        gyroid,
        &gyroid_tree_perturbation(FALLBACK_TREE_DELTA),
        lambdas,
        &centers,
        opts,
    )?;
    second.note = Some(format!(
        "default tree weights {DEFAULT_TREE_DELTA:?} did not split generically; fallback {FALLBACK_TREE_DELTA:?} used"
    ));
    Ok(second)
}

/// End-to-end results for one family.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Analysis {
    pub degeneracies: DegeneracyReport,
    pub local_models: Vec<LocalModel>,
    /// One entry per axis for 3-dimensional families; `Err` text when the
    /// axis admits no valid slicing.
    pub profiles: Vec<ProfileOutcome>,
    pub berry: Vec<BerryPhaseResult>,
    pub equatorial: Vec<(Vec<f64>, i32)>,
    pub constraints: ConstraintReport,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ProfileOutcome {
    Ok { profile: SliceProfile },
    Refused { axis: usize, reason: String },
}

#[derive(Clone, Debug, Default)]
pub struct AnalysisOptions {
    pub scan: ScanOptions,
    pub refine: RefineOptions,
    pub local: LocalOptions,
    pub slice: SliceOptions,
    /// Radius of Berry loops around points of 2-parameter families.
    pub berry_radius: Option<f64>,
}

/// Scan, refine, classify, slice and check.
pub fn analyze(family: &HamiltonianFamily, opts: &AnalysisOptions) -> Result<Analysis> {
    let degeneracies = find_degeneracies(family, &opts.scan, &opts.refine)?;
    let known: Vec<Vec<f64>> = degeneracies.all_locations();
    let mut notes = Vec::new();
    let mut local_models = Vec::new();
    let mut equatorial = Vec::new();
    let mut berry = Vec::new();
    for p in &degeneracies.points {
        match family.dim() {
            3 => local_models.push(classify_point(family, p, &known, &opts.local)?),
            2 => {
                local_models.push(classify_point(family, p, &known, &opts.local)?);
                if let Ok(eps) = equatorial_chirality_2d(family, p) {
                    equatorial.push((p.location.clone(), eps));
                }
                let path = LoopPath::axis_circle(p.location.clone(), opts.berry_radius.unwrap_or(0.1), 0, 1, 16);
                let band = p.blocks().first().map(|b| b.start).unwrap_or(0);
                berry.push(berry_phase(family, &path, band, &opts.local.topology)?);
            }
            _ => {}
        }
    }
    if family.dim() == 2 && !degeneracies.points.is_empty() {
        notes.push("two-parameter family: local Chern charges vanish (no 2-spheres to integrate over); equatorial chiralities reported instead".into());
    }
    let mut profiles = Vec::new();
    if family.dim() == 3 && matches!(family.domain(), Domain::Chart) {
        notes.push("family defined on a chart: no slicing circle, profiles skipped".into());
    }
    if family.dim() == 3 && matches!(family.domain(), Domain::Torus) {
        for axis in 0..3 {
            match slice_profile(family, axis, &degeneracies, &opts.slice) {
                Ok(profile) => profiles.push(ProfileOutcome::Ok { profile }),
                Err(e @ Error::NoValidSlicing { .. }) => profiles.push(ProfileOutcome::Refused {
                    axis,
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    if !degeneracies.curves.is_empty() {
        notes.push(format!(
            "{} non-isolated degenerate component(s) detected; excluded from charge analysis",
            degeneracies.curves.len()
        ));
    }
    if !degeneracies.near.is_empty() {
        notes.push(format!(
            "{} near-degeneracies did not refine below tolerance; excluded",
            degeneracies.near.len()
        ));
    }
    let ctx = GlobalContext {
        profiles: profiles
            .iter()
            .filter_map(|p| match p {
                ProfileOutcome::Ok { profile } => Some(profile.clone()),
                _ => None,
            })
            .collect(),
        local_models: local_models.clone(),
        time_reversal: family.has_time_reversal(),
        equatorial: equatorial.clone(),
    };
    let constraints = check_global(&ctx);
    Ok(Analysis {
        degeneracies,
        local_models,
        profiles,
        berry,
        equatorial,
        constraints,
        notes,
    })
}

impl Analysis {
    pub fn context(&self, time_reversal: bool) -> GlobalContext {
        GlobalContext {
            profiles: self
                .profiles
                .iter()
                .filter_map(|p| match p {
                    ProfileOutcome::Ok { profile } => Some(profile.clone()),
                    _ => None,
                })
                .collect(),
            local_models: self.local_models.clone(),
            time_reversal,
            equatorial: self.equatorial.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::HermitianMatrix;
    use crate::models::{make_digraph, make_gyroid, make_petal};

    fn gyroid_report() -> DegeneracyReport {
        find_degeneracies(&make_gyroid(), &ScanOptions::default(), &RefineOptions::default()).unwrap()
    }

    #[test]
    fn gyroid_z_profile() {
        let g = make_gyroid();
        let p = slice_profile(&g, 2, &gyroid_report(), &SliceOptions::default()).unwrap();
        let crit = p.critical_params();
        for (c, e) in crit.iter().zip([0.0, PI / 2.0, PI, 1.5 * PI]) {
            assert!(circ(*c, e) < 1e-6);
        }
        let chi: Vec<Vec<i64>> = p.intervals.iter().map(|i| i.chi.clone()).collect();
        assert_eq!(
            chi,
            vec![
                vec![-1, 0, 1, 0],
                vec![0, -1, 0, 1],
                vec![0, 1, 0, -1],
                vec![1, 0, -1, 0]
            ]
        );
        assert_eq!(p.jumps[0], vec![-2, 0, 2, 0]);
        assert!(p.intervals.iter().all(|i| i.confirmed));
    }

    #[test]
    fn constant_spectrum_profile_is_empty() {
        let f = make_petal(3).unwrap().direct_sum_constants(&[10.0, 20.0]).unwrap();
        let report = find_degeneracies(
            &f,
            &ScanOptions {
                grid: 16,
                ..Default::default()
            },
            &RefineOptions::default(),
        )
        .unwrap();
        assert!(report.points.is_empty());
        let p = slice_profile(&f, 0, &report, &SliceOptions::default()).unwrap();
        assert!(p.critical.is_empty());
        assert_eq!(p.intervals.len(), 1);
        assert_eq!(p.intervals[0].chi, vec![0, 0, 0]);
    }

    #[test]
    fn missed_degeneracy_is_recovered() {
        let g = make_gyroid();
        let mut report = gyroid_report();
        report.points.retain(|p| circ(p.location[2], PI / 2.0) > 1e-3);
        let p = slice_profile(&g, 2, &report, &SliceOptions::default()).unwrap();
        assert_eq!(p.critical.len(), 4);
        assert_eq!(p.recovered.len(), 1);
    }

    #[test]
    fn non_generic_projection_is_rejected() {
        let g = make_gyroid();
        let mut report = gyroid_report();
        let mut extra = report.points[0].clone();
        extra.location = vec![1.0, 2.0, 0.5 * PI + 5e-4];
        report.points.push(extra);
        assert!(matches!(
            slice_profile(&g, 2, &report, &SliceOptions::default()),
            Err(Error::NonGeneric { .. })
        ));
    }

    #[test]
    fn diamond_has_no_slicing() {
        let d3 = make_digraph(3).unwrap();
        let report = find_degeneracies(&d3, &ScanOptions::default(), &RefineOptions::default()).unwrap();
        assert!(matches!(
            slice_profile(&d3, 2, &report, &SliceOptions::default()),
            Err(Error::NoValidSlicing { axis: 2 })
        ));
    }

    #[test]
    fn single_weyl_profile_is_flagged() {
        let profile = SliceProfile {
            axis: 2,
            bands: 2,
            critical: vec![CriticalValue {
                lo: 1.0,
                hi: 1.0,
                extended: false,
                locations: vec![vec![0.0, 0.0, 1.0]],
            }],
            intervals: vec![SliceInterval {
                start: 1.0,
                end: 1.0 + TWO_PI,
                samples: vec![1.0 + PI, 1.0 + PI / 2.0],
                chi: vec![0, 0],
                confirmed: true,
            }],
            jumps: vec![vec![-1, 1]],
            recovered: vec![],
        };
        let r = check_global(&GlobalContext {
            profiles: vec![profile],
            ..Default::default()
        });
        assert_eq!(r.failed_ids(), vec!["C4", "single-critical"]);
    }

    #[test]
    fn constant_family_passes_trivially() {
        let f = crate::models::make_constant_family(3, &HermitianMatrix::from_real_diagonal(&[0.0, 1.0]));
        let a = analyze(
            &f,
            &AnalysisOptions {
                scan: ScanOptions {
                    grid: 12,
                    ..Default::default()
                },
                ..Default::default()
            },
        )
        .unwrap();
        assert!(a.constraints.passed());
        assert!(a.degeneracies.points.is_empty());
    }
}
