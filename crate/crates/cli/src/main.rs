mod literal;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bandtop::analysis::{
    analyze, check_global, gyroid_deformation_study, slice_profile, track_deformation, ConstraintReport,
    DeformationOptions, DeformationTrace, GlobalContext, SliceProfile,
};
use bandtop::degeneracy::{find_degeneracies, refine_from, DegeneracyReport};
use bandtop::localmodel::{classify_point, equatorial_chirality_2d, LocalModel};
use bandtop::models::{
    load_model_file, make_digraph, make_gyroid, make_petal, make_spin_family, HamiltonianFamily, Spin,
};
use bandtop::report::{
    profile_from_csv, profile_svg, profile_to_csv, AnalysisReport, Classification, ModelInfo, Parameters, ToolInfo,
};
use bandtop::topology::{berry_phase, LoopPath};
use bandtop::{Error, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "bandtop",
    version,
    about = "Degeneracies, local charges and sliced Chern numbers of band families"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: scan, refine, classify, slice, check.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Axis whose profile is plotted with --plot.
        #[arg(long, value_enum, default_value = "z")]
        axis: Axis,
    },
    /// Slice profile χ_i(t) along one axis.
    Slice {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "z")]
        axis: Axis,
    },
    /// Local models (spin type, chirality, charges) of degenerate points.
    Local {
        #[command(flatten)]
        common: Common,
        /// Only classify the point refined from this start, e.g. "pi/2,pi/2,pi/2".
        #[arg(long)]
        point: Option<String>,
    },
    /// Berry phase of one band around a closed loop.
    Berry {
        #[command(flatten)]
        common: Common,
        #[arg(long = "loop", value_enum, default_value = "circle")]
        loop_kind: LoopKind,
        /// Circle center, e.g. "2pi/3,4pi/3".
        #[arg(long)]
        center: Option<String>,
        #[arg(long, default_value_t = 0.1)]
        r: f64,
        /// Polygon vertices, e.g. "0,0;pi,0;pi,pi".
        #[arg(long)]
        vertices: Option<String>,
        /// Coordinate plane of the circle, e.g. "01" or "xz".
        #[arg(long, default_value = "xy")]
        plane: String,
        #[arg(long, default_value_t = 0)]
        band: usize,
        #[arg(long, default_value_t = 16)]
        points: usize,
    },
    /// Track degeneracies inside fixed balls along H + λ H₁.
    Deform {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        /// Number of nonzero λ steps.
        #[arg(long, default_value_t = 2)]
        steps: usize,
        /// Perturbation model file; the Gyroid has a built-in default.
        #[arg(long)]
        perturbation: Option<PathBuf>,
        /// Ball centers, e.g. "0,0,0;pi,pi,pi"; default: the λ = 0 points.
        #[arg(long)]
        centers: Option<String>,
        #[arg(long, default_value_t = 0.3)]
        half_width: f64,
    },
    /// Re-audit the constraints of a saved report (JSON) or slice table (CSV).
    Check {
        file: PathBuf,
        /// Declare time reversal when auditing a CSV table.
        #[arg(long)]
        time_reversal: bool,
        #[arg(long, value_enum, default_value = "z")]
        axis: Axis,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// gyroid, honeycomb, diamond, petal:N, digraph:N, spin, or a model JSON file.
    model: String,
    /// Spin for the `spin` model, e.g. 1/2 or 3/2.
    #[arg(long, default_value = "1/2")]
    s: String,
    /// Scan grid points per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Half-width of the cubes used for local charges.
    #[arg(long = "sphere-r")]
    sphere_r: Option<f64>,
    /// Degeneracy tolerance on the refined gap.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write an SVG plot of the slice profile.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LoopKind {
    Circle,
    Polygon,
}

impl Common {
    fn parameters(&self) -> Parameters {
        let mut p = Parameters::default();
        if let Some(g) = self.grid {
            p.grid = g;
        }
        if let Some(r) = self.sphere_r {
            p.sphere_r = r;
        }
        if let Some(t) = self.tol {
            p.tol = t;
        }
        if let Some(s) = self.seed {
            p.seed = s;
        }
        p
    }

    fn family(&self) -> Result<HamiltonianFamily, Failure> {
        resolve_model(&self.model, &self.s)
    }

    fn emit(&self, text: &str) -> Result<(), Failure> {
        write_out(self.output.as_deref(), text)
    }
}

enum Failure {
    Lib(Error),
    Usage(String),
    Constraints,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

fn resolve_model(selector: &str, s: &str) -> Result<HamiltonianFamily, Failure> {
    let numbered = |prefix: &str| -> Option<Result<usize, Failure>> {
        selector.strip_prefix(prefix).map(|n| {
            n.parse::<usize>()
                .map_err(|_| usage(format!("bad size in model selector {selector:?}")))
        })
    };
    let family = match selector {
        "gyroid" => make_gyroid(),
        "honeycomb" => make_digraph(2)?.renamed("honeycomb"),
        "diamond" => make_digraph(3)?.renamed("diamond"),
        "spin" => make_spin_family(Spin::new(literal::parse_angle(s).map_err(usage)?)?),
        _ => {
            if let Some(n) = numbered("petal:") {
                make_petal(n?)?
            } else if let Some(n) = numbered("digraph:") {
                make_digraph(n?)?
            } else if Path::new(selector).exists() {
                load_model_file(Path::new(selector))?
            } else {
                return Err(usage(format!(
                    "unknown model {selector:?}: expected gyroid, honeycomb, diamond, petal:N, digraph:N, spin or a JSON file"
                )));
            }
        }
    };
    Ok(family)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize, Deserialize)]
struct SliceReport {
    tool: ToolInfo,
    parameters: Parameters,
    model: ModelInfo,
    profile: SliceProfile,
    constraints: ConstraintReport,
}

#[derive(Serialize)]
struct LocalReport {
    tool: ToolInfo,
    parameters: Parameters,
    model: ModelInfo,
    classification: Vec<Classification>,
    local_models: Vec<LocalModel>,
    equatorial: Vec<(Vec<f64>, i32)>,
}

#[derive(Serialize)]
struct BerryReport {
    tool: ToolInfo,
    model: ModelInfo,
    path: LoopPath,
    result: bandtop::topology::BerryPhaseResult,
}

#[derive(Serialize)]
struct DeformReport {
    tool: ToolInfo,
    model: ModelInfo,
    conserved: bool,
    complete: bool,
    trace: DeformationTrace,
}

fn cmd_analyze(common: &Common, axis: Axis) -> Result<(), Failure> {
    let family = common.family()?;
    let params = common.parameters();
    let analysis = analyze(&family, &params.options())?;
    let report = AnalysisReport::new(&family, params, analysis);
    if let Some(path) = &common.plot {
        let profile = report.context().profiles.into_iter().find(|p| p.axis == axis.index());
        match profile {
            Some(p) => write_out(Some(path), &profile_svg(&p))?,
            None => eprintln!("warning: no slice profile along the requested axis; plot skipped"),
        }
    }
    match common.format {
        Format::Json => common.emit(&to_json(&report))?,
        Format::Csv => {
            let mut out = String::new();
            for p in report.context().profiles {
                out.push_str(&format!("# axis {}\n", ["x", "y", "z"][p.axis]));
                out.push_str(&profile_to_csv(&p));
            }
            common.emit(&out)?;
        }
    }
    if report.constraints.passed() {
        Ok(())
    } else {
        Err(Failure::Constraints)
    }
}

fn cmd_slice(common: &Common, axis: Axis) -> Result<(), Failure> {
    let family = common.family()?;
    let params = common.parameters();
    let opts = params.options();
    let degeneracies = find_degeneracies(&family, &opts.scan, &opts.refine)?;
    let profile = slice_profile(&family, axis.index(), &degeneracies, &opts.slice)?;
    let constraints = check_global(&GlobalContext {
        profiles: vec![profile.clone()],
        local_models: Vec::new(),
        time_reversal: family.has_time_reversal(),
        equatorial: Vec::new(),
    });
    if let Some(path) = &common.plot {
        write_out(Some(path), &profile_svg(&profile))?;
    }
    match common.format {
        Format::Csv => common.emit(&profile_to_csv(&profile))?,
        Format::Json => common.emit(&to_json(&SliceReport {
            tool: ToolInfo::default(),
            parameters: params,
            model: ModelInfo::of(&family),
            profile,
            constraints: constraints.clone(),
        }))?,
    }
    if constraints.passed() {
        Ok(())
    } else {
        Err(Failure::Constraints)
    }
}

fn cmd_local(common: &Common, point: Option<&str>) -> Result<(), Failure> {
    let family = common.family()?;
    let params = common.parameters();
    let opts = params.options();
    let degeneracies = match point {
        Some(p) => {
            let start = literal::parse_point(p).map_err(usage)?;
            if start.len() != family.dim() {
                return Err(usage(format!("--point needs {} coordinates", family.dim())));
            }
            let mut p = refine_from(&family, &start, 0.05, &opts.refine)?;
            p.locus = bandtop::degeneracy::locus_dimension_probe(
                &family,
                &p.location,
                p.residual_gap,
                opts.refine.probe_radius,
            )
            .0;
            DegeneracyReport {
                points: vec![p],
                ..Default::default()
            }
        }
        None => find_degeneracies(&family, &opts.scan, &opts.refine)?,
    };
    let known = degeneracies.all_locations();
    let mut local_models = Vec::new();
    let mut equatorial = Vec::new();
    for p in &degeneracies.points {
        local_models.push(classify_point(&family, p, &known, &opts.local)?);
        if family.dim() == 2 {
            if let Ok(eps) = equatorial_chirality_2d(&family, p) {
                equatorial.push((p.location.clone(), eps));
            }
        }
    }
    common.emit(&to_json(&LocalReport {
        tool: ToolInfo::default(),
        parameters: params,
        model: ModelInfo::of(&family),
        classification: local_models.iter().map(Classification::of).collect(),
        local_models,
        equatorial,
    }))
}

fn parse_plane(plane: &str) -> Result<(usize, usize), Failure> {
    let idx = |c: char| match c {
        'x' | '0' => Some(0),
        'y' | '1' => Some(1),
        'z' | '2' => Some(2),
        _ => None,
    };
    let cs: Vec<char> = plane.chars().collect();
    match cs.as_slice() {
        [a, b] => match (idx(*a), idx(*b)) {
            (Some(a), Some(b)) if a != b => Ok((a, b)),
            _ => Err(usage(format!("bad plane {plane:?}"))),
        },
        _ => Err(usage(format!("bad plane {plane:?}"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_berry(
    common: &Common,
    kind: LoopKind,
    center: Option<&str>,
    r: f64,
    vertices: Option<&str>,
    plane: &str,
    band: usize,
    points: usize,
) -> Result<(), Failure> {
    let family = common.family()?;
    let path = match kind {
        LoopKind::Circle => {
            let center = literal::parse_point(center.ok_or_else(|| usage("--center is required for a circle"))?)
                .map_err(usage)?;
            let (a, b) = parse_plane(plane)?;
            LoopPath::axis_circle(center, r, a, b, points)
        }
        LoopKind::Polygon => LoopPath::Polygon {
            vertices: literal::parse_points(vertices.ok_or_else(|| usage("--vertices is required for a polygon"))?)
                .map_err(usage)?,
        },
    };
    let mut topo = common.parameters().options().local.topology;
    topo.gauge_seed = common.seed;
    let result = berry_phase(&family, &path, band, &topo)?;
    common.emit(&to_json(&BerryReport {
        tool: ToolInfo::default(),
        model: ModelInfo::of(&family),
        path,
        result,
    }))
}

fn cmd_deform(
    common: &Common,
    lambda: f64,
    steps: usize,
    perturbation: Option<&Path>,
    centers: Option<&str>,
    half_width: f64,
) -> Result<(), Failure> {
    let family = common.family()?;
    let steps = steps.max(1);
    let lambdas: Vec<f64> = (0..=steps).map(|i| lambda * i as f64 / steps as f64).collect();
    let params = common.parameters();
    let analysis_opts = params.options();
    let opts = DeformationOptions {
        half_width,
        refine: analysis_opts.refine.clone(),
        topology: analysis_opts.local.topology.clone(),
    };
    let trace = match (perturbation, centers, common.model.as_str()) {
        (None, None, "gyroid") => gyroid_deformation_study(&family, &lambdas, &opts)?,
        (None, _, _) => {
            return Err(usage(
                "--perturbation is required for models without a built-in deformation",
            ))
        }
        (Some(file), centers, _) => {
            let pert = load_model_file(file)?;
            let centers = match centers {
                Some(c) => literal::parse_points(c).map_err(usage)?,
                None => find_degeneracies(&family, &analysis_opts.scan, &analysis_opts.refine)?
                    .points
                    .into_iter()
                    .map(|p| p.location)
                    .collect(),
            };
            track_deformation(&family, &pert, &lambdas, &centers, &opts)?
        }
    };
    let complete = trace.balls.iter().all(|b| b.steps.iter().all(|s| s.complete));
    let conserved = trace.conserved();
    common.emit(&to_json(&DeformReport {
        tool: ToolInfo::default(),
        model: ModelInfo::of(&family),
        conserved,
        complete,
        trace,
    }))?;
    if conserved && complete {
        Ok(())
    } else {
        Err(Failure::Constraints)
    }
}

#[derive(Serialize)]
struct CheckOutput {
    source: String,
    constraints: ConstraintReport,
    /// Whether the statuses match those stored in the input, when it has any.
    matches_stored: Option<bool>,
}

fn cmd_check(file: &Path, time_reversal: bool, axis: Axis, output: Option<&Path>) -> Result<(), Failure> {
    let text = fs::read_to_string(file).map_err(|e| usage(format!("cannot read {}: {e}", file.display())))?;
    let statuses = |r: &ConstraintReport| r.checks.iter().map(|c| (c.id.clone(), c.status)).collect::<Vec<_>>();
    let (source, constraints, stored) = if text.trim_start().starts_with('{') {
        let value: serde_json::Value = serde_json::from_str(&text).map_err(usage)?;
        if value.get("profile").is_some() {
            let r: SliceReport = serde_json::from_value(value).map_err(usage)?;
            let c = check_global(&GlobalContext {
                profiles: vec![r.profile],
                local_models: Vec::new(),
                time_reversal: r.model.time_reversal(),
                equatorial: Vec::new(),
            });
            ("slice report".to_string(), c, Some(r.constraints))
        } else {
            let r = AnalysisReport::from_json(&text)?;
            ("analysis report".to_string(), r.reaudit(), Some(r.constraints))
        }
    } else {
        let profile = profile_from_csv(&text, axis.index())?;
        let c = check_global(&GlobalContext {
            profiles: vec![profile],
            local_models: Vec::new(),
            time_reversal,
            equatorial: Vec::new(),
        });
        ("slice table".to_string(), c, None)
    };
    let matches_stored = stored.as_ref().map(|s| statuses(s) == statuses(&constraints));
    let passed = constraints.passed();
    write_out(
        output,
        &to_json(&CheckOutput {
            source,
            constraints,
            matches_stored,
        }),
    )?;
    if passed && matches_stored != Some(false) {
        Ok(())
    } else {
        Err(Failure::Constraints)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Analyze { common, axis } => cmd_analyze(common, *axis),
        Command::Slice { common, axis } => cmd_slice(common, *axis),
        Command::Local { common, point } => cmd_local(common, point.as_deref()),
        Command::Berry {
            common,
            loop_kind,
            center,
            r,
            vertices,
            plane,
            band,
            points,
        } => cmd_berry(
            common,
            *loop_kind,
            center.as_deref(),
            *r,
            vertices.as_deref(),
            plane,
            *band,
            *points,
        ),
        Command::Deform {
            common,
            lambda,
            steps,
            perturbation,
            centers,
            half_width,
        } => cmd_deform(
            common,
            *lambda,
            *steps,
            perturbation.as_deref(),
            centers.as_deref(),
            *half_width,
        ),
        Command::Check {
            file,
            time_reversal,
            axis,
            output,
        } => cmd_check(file, *time_reversal, *axis, output.as_deref()),
    }
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("BANDTOP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Constraints) => {
            eprintln!("constraint check failed");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Model => ExitCode::from(2),
                ErrorKind::Numerical => ExitCode::from(3),
            }
        }
    }
}
