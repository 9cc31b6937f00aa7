//! Machine-readable reports: the analysis JSON document, slice-profile CSV
//! tables and SVG step plots.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    analyze, check_global, Analysis, AnalysisOptions, ConstraintReport, GlobalContext, ProfileOutcome, SliceInterval,
    SliceProfile,
};
use crate::degeneracy::{DegenerateCurve, DegeneratePoint, NearDegeneracy, RefineOptions, ScanOptions};
use crate::error::{Error, Result};
use crate::localmodel::{LocalModel, LocalOptions};
use crate::models::{wrap_angle, Domain, HamiltonianFamily, SymmetryDeclaration, TWO_PI};
use crate::topology::{BerryPhaseResult, TopologyOptions};

pub const TOOL_NAME: &str = "bandtop";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
    pub schema: u32,
}

impl Default for ToolInfo {
    fn default() -> Self {
        ToolInfo {
            name: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            schema: SCHEMA_VERSION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub d: usize,
    pub k: usize,
    pub domain: Domain,
    pub symmetries: Vec<SymmetryDeclaration>,
}

impl ModelInfo {
    pub fn of(family: &HamiltonianFamily) -> Self {
        ModelInfo {
            name: family.name().into(),
            d: family.dim(),
            k: family.bands(),
            domain: family.domain(),
            symmetries: family.symmetries().to_vec(),
        }
    }

    pub fn time_reversal(&self) -> bool {
        self.symmetries.contains(&SymmetryDeclaration::TimeReversal)
    }
}

/// Knobs exposed on the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    /// Scan grid points per axis.
    pub grid: usize,
    /// Half-width of the cubes used for local charges.
    pub sphere_r: f64,
    /// Gap below which a refined point counts as degenerate.
    pub tol: f64,
    pub seed: u64,
    /// Starting plaquette grid for Chern numbers.
    pub chern_grid: usize,
    pub genericity_tol: f64,
}

impl Default for Parameters {
    fn default() -> Self {
        let scan = ScanOptions::default();
        let refine = RefineOptions::default();
        let local = LocalOptions::default();
        Parameters {
            grid: scan.grid,
            sphere_r: local.radius,
            tol: refine.tol,
            seed: local.seed,
            chern_grid: local.topology.grid,
            genericity_tol: crate::analysis::GENERICITY_TOL,
        }
    }
}

impl Parameters {
    pub fn options(&self) -> AnalysisOptions {
        let topology = TopologyOptions {
            grid: self.chern_grid,
            ..Default::default()
        };
        let refine = RefineOptions {
            tol: self.tol,
            ..Default::default()
        };
        let mut opts = AnalysisOptions {
            scan: ScanOptions {
                grid: self.grid,
                ..Default::default()
            },
            refine: refine.clone(),
            local: LocalOptions {
                radius: self.sphere_r,
                seed: self.seed,
                topology: topology.clone(),
                ..Default::default()
            },
            ..Default::default()
        };
        opts.slice.topology = topology;
        opts.slice.genericity_tol = self.genericity_tol;
        opts.slice.refine = refine;
        opts
    }
}

/// Compact per-point classification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub location: Vec<f64>,
    pub pattern: Vec<usize>,
    pub spin_type: String,
    pub chiralities: Vec<Option<i32>>,
    pub charges: Vec<i64>,
}

impl Classification {
    pub fn of(m: &LocalModel) -> Self {
        Classification {
            location: m.point.location.clone(),
            pattern: m.point.pattern.clone(),
            spin_type: m.spin_type_label(),
            chiralities: m.chiralities(),
            charges: m.charges.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tool: ToolInfo,
    pub parameters: Parameters,
    pub model: ModelInfo,
    pub points: Vec<DegeneratePoint>,
    pub curves: Vec<DegenerateCurve>,
    pub near: Vec<NearDegeneracy>,
    pub classification: Vec<Classification>,
    pub local_models: Vec<LocalModel>,
    pub profiles: Vec<ProfileOutcome>,
    pub berry: Vec<BerryPhaseResult>,
    /// Equatorial chirality per point of a 2-parameter family.
    pub equatorial: Vec<(Vec<f64>, i32)>,
    pub constraints: ConstraintReport,
    pub notes: Vec<String>,
}

impl AnalysisReport {
    pub fn new(family: &HamiltonianFamily, parameters: Parameters, analysis: Analysis) -> Self {
        AnalysisReport {
            tool: ToolInfo::default(),
            model: ModelInfo::of(family),
            parameters,
            points: analysis.degeneracies.points,
            curves: analysis.degeneracies.curves,
            near: analysis.degeneracies.near,
            classification: analysis.local_models.iter().map(Classification::of).collect(),
            local_models: analysis.local_models,
            profiles: analysis.profiles,
            berry: analysis.berry,
            equatorial: analysis.equatorial,
            constraints: analysis.constraints,
            notes: analysis.notes,
        }
    }

    /// Runs the whole pipeline.
    pub fn run(family: &HamiltonianFamily, parameters: Parameters) -> Result<Self> {
        let analysis = analyze(family, &parameters.options())?;
        Ok(Self::new(family, parameters, analysis))
    }

    pub fn context(&self) -> GlobalContext {
        GlobalContext {
            profiles: self
                .profiles
                .iter()
                .filter_map(|p| match p {
                    ProfileOutcome::Ok { profile } => Some(profile.clone()),
                    ProfileOutcome::Refused { .. } => None,
                })
                .collect(),
            local_models: self.local_models.clone(),
            time_reversal: self.model.time_reversal(),
            equatorial: self.equatorial.clone(),
        }
    }

    /// Constraint checks recomputed from the stored data.
    pub fn reaudit(&self) -> ConstraintReport {
        check_global(&self.context())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("not an analysis report: {e}")))
    }
}

fn fmt_interval(i: &SliceInterval) -> String {
    format!("{}..{}", i.start, i.end)
}

/// One row per interval: `t_interval, chi_1, ..., chi_k`, the interval
/// written as `start..end`.
pub fn profile_to_csv(profile: &SliceProfile) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t_interval".to_string()];
    header.extend((1..=profile.bands).map(|i| format!("chi_{i}")));
    w.write_record(&header).expect("in-memory write");
    for i in &profile.intervals {
        let mut row = vec![fmt_interval(i)];
        row.extend(i.chi.iter().map(|c| c.to_string()));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

/// Parses [`profile_to_csv`] output back into a profile: critical values
/// are the interval starts, jumps are recomputed.
pub fn profile_from_csv(text: &str, axis: usize) -> Result<SliceProfile> {
    let bad = |m: String| Error::InvalidArgument(format!("slice CSV: {m}"));
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.get(0) != Some("t_interval") {
        return Err(bad("first column must be t_interval".into()));
    }
    let bands = headers.len() - 1;
    let mut intervals = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let span = rec.get(0).unwrap_or_default();
        let (a, b) = span
            .split_once("..")
            .ok_or_else(|| bad(format!("interval {span:?} is not start..end")))?;
        let start: f64 = a.trim().parse().map_err(|_| bad(format!("bad start {a:?}")))?;
        let end: f64 = b.trim().parse().map_err(|_| bad(format!("bad end {b:?}")))?;
        let chi = (1..=bands)
            .map(|c| {
                let v = rec.get(c).unwrap_or_default();
                v.trim().parse::<i64>().map_err(|_| bad(format!("bad chi {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let len = end - start;
        intervals.push(SliceInterval {
            start,
            end,
            samples: vec![wrap_angle(start + 0.5 * len), wrap_angle(start + 0.25 * len)],
            chi,
            confirmed: true,
        });
    }
    if intervals.is_empty() {
        return Err(bad("no intervals".into()));
    }
    let single_full = intervals.len() == 1 && (intervals[0].end - intervals[0].start - TWO_PI).abs() < 1e-12;
    let critical = if single_full {
        Vec::new()
    } else {
        intervals
            .iter()
            .map(|i| crate::analysis::CriticalValue {
                lo: i.start,
                hi: i.start,
                extended: false,
                locations: Vec::new(),
            })
            .collect()
    };
    let n = intervals.len();
    let jumps = if critical.is_empty() {
        Vec::new()
    } else {
        (0..n)
            .map(|j| {
                let left = &intervals[(j + n - 1) % n].chi;
                intervals[j].chi.iter().zip(left).map(|(r, l)| r - l).collect()
            })
            .collect()
    };
    Ok(SliceProfile {
        axis,
        bands,
        critical,
        intervals,
        jumps,
        recovered: Vec::new(),
    })
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// SVG plot of the step functions χ_i over [0, 2π).
pub fn profile_svg(profile: &SliceProfile) -> String {
    let (w, h, margin) = (640.0, 360.0, 40.0);
    let lo = profile
        .intervals
        .iter()
        .flat_map(|i| i.chi.iter().copied())
        .min()
        .unwrap_or(0)
        .min(-1);
    let hi = profile
        .intervals
        .iter()
        .flat_map(|i| i.chi.iter().copied())
        .max()
        .unwrap_or(0)
        .max(1);
    let x = |t: f64| margin + (w - 2.0 * margin) * t / TWO_PI;
    let band_offset = |b: usize| (b as f64 - (profile.bands as f64 - 1.0) / 2.0) * 2.0;
    let y = |v: f64| h - margin - (h - 2.0 * margin) * (v - lo as f64 + 0.5) / ((hi - lo) as f64 + 1.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{y0:.2}" x2="{x1}" y2="{y0:.2}" stroke="black"/>"#,
        m = margin,
        x1 = w - margin,
        y0 = y(0.0)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{y1}" stroke="black"/>"#,
        m = margin,
        y1 = h - margin
    );
    for (label, t) in [
        ("0", 0.0),
        ("π/2", PI / 2.0),
        ("π", PI),
        ("3π/2", 1.5 * PI),
        ("2π", TWO_PI),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            x(t),
            h - margin + 16.0
        );
    }
    for v in lo..=hi {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v}</text>"#,
            margin - 6.0,
            y(v as f64) + 4.0
        );
    }
    for c in &profile.critical {
        let _ = writeln!(
            s,
            r##"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="#bbbbbb" stroke-dasharray="4 3"/>"##,
            x(c.lo),
            margin,
            h - margin
        );
    }
    for b in 0..profile.bands {
        let color = PALETTE[b % PALETTE.len()];
        let mut segs = String::new();
        for i in &profile.intervals {
            let v = i.chi[b] as f64;
            let yy = y(v) + band_offset(b);
            // Split the interval through the wrap into two pieces.
            let mut pieces = vec![(i.start, i.end.min(TWO_PI))];
            if i.end > TWO_PI {
                pieces.push((0.0, i.end - TWO_PI));
            }
            for (a, e) in pieces {
                let _ = write!(segs, "M{:.2},{yy:.2} L{:.2},{yy:.2} ", x(a), x(e));
            }
        }
        let _ = writeln!(
            s,
            r#"<path d="{}" stroke="{color}" stroke-width="2" fill="none"/>"#,
            segs.trim_end()
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">chi_{}</text>"#,
            w - margin + 4.0,
            margin + 14.0 * b as f64,
            b + 1
        );
    }
    let axis = ["x", "y", "z"].get(profile.axis).copied().unwrap_or("?");
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle">slices normal to {axis}</text>"#,
        w / 2.0
    );
    s.push_str("</svg>\n");
    s
}
