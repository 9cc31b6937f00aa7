//! Acceptance suite: one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use bandtop::analysis::{
    check_global, gyroid_deformation_study, slice_profile, DeformationOptions, GlobalContext, SliceOptions,
    SliceProfile, Status,
};
use bandtop::degeneracy::{
    find_degeneracies, refine_from, scan_gaps, DegeneracyReport, DegeneratePoint, LocusDim, RefineOptions, ScanOptions,
    ScanRegion,
};
use bandtop::localmodel::{
    classify_point, equatorial_chirality_2d, transverse_family, transverse_point, LocalModel, LocalOptions,
};
use bandtop::models::{make_digraph, make_gyroid, make_spin_family, torus_distance, Spin};
use bandtop::topology::{berry_phase, chern_on_slice, chern_on_sphere, LoopPath, Orientation, TopologyOptions};
use bandtop::Error;

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: bandtop::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn gyroid_points() -> [Vec<f64>; 4] {
    let h = PI / 2.0;
    [vec![0.0; 3], vec![PI; 3], vec![h; 3], vec![3.0 * h; 3]]
}

/// 2m for m = -s, ..., s, computed directly from the multiplicity.
fn two_m(multiplicity: i64) -> Vec<i64> {
    (0..multiplicity).map(|j| 2 * j - (multiplicity - 1)).collect()
}

fn gyroid_report() -> std::result::Result<DegeneracyReport, String> {
    lib(find_degeneracies(
        &make_gyroid(),
        &ScanOptions::default(),
        &RefineOptions::default(),
    ))
}

fn point_near<'a>(points: &'a [DegeneratePoint], target: &[f64], tol: f64) -> Option<&'a DegeneratePoint> {
    points.iter().find(|p| torus_distance(&p.location, target) <= tol)
}

fn gyroid_models(report: &DegeneracyReport) -> std::result::Result<Vec<LocalModel>, String> {
    let g = make_gyroid();
    let known = report.all_locations();
    report
        .points
        .iter()
        .map(|p| lib(classify_point(&g, p, &known, &LocalOptions::default())))
        .collect()
}

fn gyroid_profiles(report: &DegeneracyReport) -> std::result::Result<Vec<SliceProfile>, String> {
    let g = make_gyroid();
    (0..3)
        .map(|axis| lib(slice_profile(&g, axis, report, &SliceOptions::default())))
        .collect()
}

fn criterion_1() -> Outcome {
    let mut checked = 0;
    for mult in 2..=6usize {
        let spin = Spin::from_multiplicity(mult);
        let family = make_spin_family(spin);
        let expected = two_m(mult as i64);
        for r in [0.2, 0.5, 1.0] {
            for n in [24, 48] {
                let opts = TopologyOptions {
                    grid: n,
                    ..Default::default()
                };
                let got: Vec<i64> = lib(chern_on_sphere(&family, &[0.0; 3], r, Orientation::Outward, &opts))?
                    .iter()
                    .map(|c| c.value)
                    .collect();
                ensure(got == expected, || {
                    format!("s = {spin}, r = {r}, N = {n}: got {got:?}, expected {expected:?}")
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (s, r, N) combinations give 2m exactly"))
}

fn criterion_2() -> Outcome {
    let report = gyroid_report()?;
    ensure(report.points.len() == 4, || {
        format!("found {} points", report.points.len())
    })?;
    ensure(report.curves.is_empty(), || "unexpected extended component".into())?;
    let patterns = [vec![3, 1], vec![1, 3], vec![2, 2], vec![2, 2]];
    let mut worst = 0.0f64;
    for (target, pattern) in gyroid_points().iter().zip(&patterns) {
        let p =
            point_near(&report.points, target, 1e-6).ok_or_else(|| format!("no point within 1e-6 of {target:?}"))?;
        worst = worst.max(torus_distance(&p.location, target));
        ensure(&p.pattern == pattern, || {
            format!("pattern at {target:?} is {:?}", p.pattern)
        })?;
    }
    Ok(format!(
        "4 points, patterns (3,1) (1,3) (2,2) (2,2), max location error {worst:.1e}"
    ))
}

fn criterion_3() -> Outcome {
    let report = gyroid_report()?;
    let models = gyroid_models(&report)?;
    let expect = [
        ("(1,0)", vec![Some(1)], Some(vec![-2, 0, 2, 0])),
        ("(0,1)", vec![Some(-1)], Some(vec![0, 2, 0, -2])),
        ("(1/2,1/2)", vec![Some(-1), Some(1)], None),
        ("(1/2,1/2)", vec![Some(-1), Some(1)], None),
    ];
    for (target, (label, chir, charges)) in gyroid_points().iter().zip(&expect) {
        let m = models
            .iter()
            .find(|m| torus_distance(&m.point.location, target) <= 1e-6)
            .ok_or_else(|| format!("no model at {target:?}"))?;
        ensure(m.spin_type_label() == *label, || {
            format!("spin type at {target:?}: {}", m.spin_type_label())
        })?;
        ensure(m.chiralities() == *chir, || {
            format!("chiralities at {target:?}: {:?}", m.chiralities())
        })?;
        if let Some(q) = charges {
            ensure(&m.charges == q, || format!("charges at {target:?}: {:?}", m.charges))?;
        }
    }
    Ok("spin types (1,0) (0,1) (1/2,1/2) (1/2,1/2), chiralities +1 -1 (-1,+1) (-1,+1), triple charges (-2,0,2,0)/(0,2,0,-2)".into())
}

/// The χ table, per band over (t1, t2, t3, t4).
const CHI_TABLE: [[i64; 4]; 4] = [[-1, 0, 0, 1], [0, -1, 1, 0], [1, 0, 0, -1], [0, 1, -1, 0]];

fn criterion_4() -> Outcome {
    let report = gyroid_report()?;
    let profiles = gyroid_profiles(&report)?;
    let z = &profiles[2];
    let crit = z.critical_params();
    let expected_crit = [0.0, PI / 2.0, PI, 1.5 * PI];
    ensure(
        crit.len() == 4 && crit.iter().zip(expected_crit).all(|(a, b)| (a - b).abs() < 1e-6),
        || format!("critical values {crit:?}"),
    )?;
    for (interval, i) in z.intervals.iter().enumerate() {
        let column: Vec<i64> = CHI_TABLE.iter().map(|band| band[interval]).collect();
        ensure(i.chi == column, || {
            format!("interval t{}: chi {:?}, expected {column:?}", interval + 1, i.chi)
        })?;
    }
    let table = |p: &SliceProfile| p.intervals.iter().map(|i| i.chi.clone()).collect::<Vec<_>>();
    for p in &profiles[..2] {
        ensure(table(p) == table(z), || {
            format!("axis {} table differs: {:?}", p.axis, table(p))
        })?;
        ensure(p.critical_params() == crit, || {
            format!("axis {} critical values differ", p.axis)
        })?;
    }
    Ok("z table matches on all 4 bands x 4 intervals; x and y profiles identical".into())
}

fn failed(ctx: &GlobalContext) -> Vec<String> {
    check_global(ctx).failed_ids().into_iter().map(String::from).collect()
}

fn recompute_jumps(p: &mut SliceProfile) {
    let n = p.intervals.len();
    p.jumps = (0..n)
        .map(|j| {
            let left = &p.intervals[(j + n - 1) % n].chi;
            p.intervals[j].chi.iter().zip(left).map(|(r, l)| r - l).collect()
        })
        .collect();
}

fn criterion_5() -> Outcome {
    let report = gyroid_report()?;
    let profiles = gyroid_profiles(&report)?;
    let models = gyroid_models(&report)?;
    let full = GlobalContext {
        profiles: profiles.clone(),
        local_models: models.clone(),
        time_reversal: true,
        equatorial: Vec::new(),
    };
    let r = check_global(&full);
    ensure(r.passed(), || format!("failures on the Gyroid: {:?}", r.failed_ids()))?;
    for id in [
        "C1",
        "C2",
        "C3",
        "C4",
        "C5",
        "C6",
        "C7",
        "TRS-no-weyl",
        "TRS-pairing",
        "single-critical",
    ] {
        let c = r.get(id).ok_or_else(|| format!("clause {id} missing"))?;
        ensure(c.status == Status::Pass, || format!("clause {id} is {:?}", c.status))?;
    }

    // Mutation 1: one +1 jump injected for band 1 at π/2.
    let mut z = profiles[2].clone();
    let idx = z.critical_index(PI / 2.0, 1e-6).ok_or("no critical value at pi/2")?;
    z.jumps[idx][0] += 1;
    let m1 = failed(&GlobalContext {
        profiles: vec![z],
        ..Default::default()
    });
    ensure(m1 == ["C3", "C4"], || format!("mutation 1 failed {m1:?}"))?;
    let c4 = check_global(&GlobalContext {
        profiles: vec![{
            let mut z = profiles[2].clone();
            z.jumps[idx][0] += 1;
            z
        }],
        ..Default::default()
    });
    let witness = c4.get("C4").map(|c| c.witness.to_string()).unwrap_or_default();
    ensure(witness.contains("\"band\":1"), || {
        format!("C4 witness does not name band 1: {witness}")
    })?;

    // Mutation 2: χ₁(t₁) = χ₁(-t₁) = 1 (χ₁ ≡ 1, band 3 compensates).
    let mut z = profiles[2].clone();
    for i in z.intervals.iter_mut() {
        let delta = 1 - i.chi[0];
        i.chi[0] += delta;
        i.chi[2] -= delta;
    }
    recompute_jumps(&mut z);
    ensure(
        z.chi_at(PI / 4.0) == Some(&[1, 0, -1, 0][..]) && z.chi_at(-PI / 4.0).map(|c| c[0]) == Some(1),
        || "mutation 2 construction".into(),
    )?;
    let m2 = failed(&GlobalContext {
        profiles: vec![z],
        time_reversal: true,
        ..Default::default()
    });
    ensure(m2 == ["C6"], || format!("mutation 2 failed {m2:?}"))?;

    // Mutation 3: chirality of the (1,0) point flipped.
    let mut ctx = full.clone();
    let m = ctx
        .local_models
        .iter_mut()
        .find(|m| m.point.pattern == [3, 1])
        .ok_or("no triple point model")?;
    m.blocks[0].chirality = m.blocks[0].chirality.map(|e| -e);
    let m3 = failed(&ctx);
    ensure(m3 == ["C5"], || format!("mutation 3 failed {m3:?}"))?;
    Ok("all clauses pass; mutations fail exactly {C3,C4}, {C6}, {C5}".into())
}

fn criterion_6() -> Outcome {
    let d2 = make_digraph(2).map_err(|e| e.to_string())?;
    let report = lib(find_degeneracies(
        &d2,
        &ScanOptions::default(),
        &RefineOptions::default(),
    ))?;
    ensure(report.points.len() == 2, || {
        format!("found {} points", report.points.len())
    })?;
    let targets = [
        vec![2.0 * PI / 3.0, 4.0 * PI / 3.0],
        vec![4.0 * PI / 3.0, 2.0 * PI / 3.0],
    ];
    let mut detail = Vec::new();
    for (target, eps) in targets.iter().zip([-1, 1]) {
        let p =
            point_near(&report.points, target, 1e-6).ok_or_else(|| format!("no point within 1e-6 of {target:?}"))?;
        let got = lib(equatorial_chirality_2d(&d2, p))?;
        ensure(got == eps, || format!("chirality at {target:?} is {got}"))?;
        let path = LoopPath::axis_circle(p.location.clone(), 0.1, 0, 1, 16);
        let gamma = lib(berry_phase(&d2, &path, 0, &TopologyOptions::default()))?.phase;
        ensure((gamma.abs() - PI).abs() < 1e-4, || {
            format!("Berry phase at {target:?} is {gamma}")
        })?;
        detail.push(format!("eps {got:+}, gamma {gamma:.6}"));
    }
    Ok(format!("two Dirac points: {}", detail.join("; ")))
}

fn on_diamond_circle(k: &[f64], tol: f64) -> bool {
    (0..3).any(|i| {
        let (j, l) = ((i + 1) % 3, (i + 2) % 3);
        torus_distance(&[k[i]], &[PI]) <= tol && torus_distance(&[k[j]], &[k[l] + PI]) <= tol
    })
}

fn criterion_7() -> Outcome {
    let d3 = make_digraph(3).map_err(|e| e.to_string())?;
    let report = lib(find_degeneracies(
        &d3,
        &ScanOptions::default(),
        &RefineOptions::default(),
    ))?;
    ensure(report.points.is_empty(), || {
        format!("{} isolated points reported", report.points.len())
    })?;
    let samples: Vec<&DegeneratePoint> = report.curves.iter().flat_map(|c| &c.samples).collect();
    ensure(samples.len() >= 10, || format!("only {} curve samples", samples.len()))?;
    for s in &samples {
        ensure(on_diamond_circle(&s.location, 1e-4), || {
            format!("sample {:?} off the circles", s.location)
        })?;
        ensure(s.locus == LocusDim::Extended, || "sample not flagged extended".into())?;
    }
    for axis in 0..3 {
        match slice_profile(&d3, axis, &report, &SliceOptions::default()) {
            Err(Error::NoValidSlicing { .. }) => {}
            other => {
                return Err(format!(
                    "axis {axis}: slicing not refused ({:?})",
                    other.map(|p| p.critical_params())
                ))
            }
        }
    }
    // Circle φ₁ = π, φ₃ = φ₂ + π with tangent (0, 1, 1); k and -k share it.
    let mut pairs = 0;
    for j in 0..10 {
        let theta = 0.3 + 0.5 * j as f64;
        let k = vec![PI, theta, theta + PI];
        let minus: Vec<f64> = k.iter().map(|x| -x).collect();
        ensure(d3.gap(&k) < 1e-12 && d3.gap(&minus) < 1e-12, || {
            format!("{k:?} is not degenerate")
        })?;
        let tangent = [0.0, 1.0, 1.0];
        let chir = |at: &[f64]| -> std::result::Result<i32, String> {
            let f2 = lib(transverse_family(&d3, at, &tangent))?;
            let p = lib(transverse_point(&f2))?;
            lib(equatorial_chirality_2d(&f2, &p))
        };
        let (a, b) = (chir(&k)?, chir(&minus)?);
        ensure(a == -b, || format!("theta {theta}: chiralities {a} and {b}"))?;
        pairs += 1;
    }
    Ok(format!(
        "{} samples on the circles, slicing refused on 3 axes, {pairs} transverse pairs opposite",
        samples.len()
    ))
}

fn criterion_8() -> Outcome {
    let g = make_gyroid();
    let report = gyroid_report()?;
    let profiles = gyroid_profiles(&report)?;
    let mut compared = 0;
    for p in &report.points {
        let charges: Vec<i64> = lib(chern_on_sphere(
            &g,
            &p.location,
            0.3,
            Orientation::Outward,
            &TopologyOptions::default(),
        ))?
        .iter()
        .map(|c| c.value)
        .collect();
        for prof in &profiles {
            let j = prof
                .jump_at(p.location[prof.axis], 1e-6)
                .ok_or_else(|| format!("no jump at {:?} on axis {}", p.location, prof.axis))?;
            ensure(j == charges.as_slice(), || {
                format!("axis {} at {:?}: jump {j:?}, charge {charges:?}", prof.axis, p.location)
            })?;
            compared += 1;
        }
    }
    Ok(format!("{compared} (point, axis) jumps equal sphere charges"))
}

/// A double crossing: exactly one pair of coinciding bands.
fn is_double_crossing(p: &DegeneratePoint) -> bool {
    p.pattern.iter().filter(|&&g| g > 1).count() == 1 && p.pattern.iter().all(|&g| g <= 2)
}

fn criterion_9() -> Outcome {
    let g = make_gyroid();
    let lambdas = [0.0, 0.005, 0.01];
    let trace = lib(gyroid_deformation_study(&g, &lambdas, &DeformationOptions::default()))?;
    let mut detail = Vec::new();
    if let Some(note) = &trace.note {
        detail.push(note.clone());
    }
    let fam = lib(bandtop::models::deform(
        &g,
        &bandtop::models::gyroid_tree_perturbation(match &trace.note {
            None => bandtop::analysis::DEFAULT_TREE_DELTA,
            Some(_) => bandtop::analysis::FALLBACK_TREE_DELTA,
        }),
        0.01,
    ))?;
    ensure(fam.has_time_reversal(), || "perturbation broke time reversal".into())?;
    for ball in &trace.balls {
        ensure(ball.conserved(), || {
            format!(
                "ball at {:?}: charges {:?}",
                ball.center,
                ball.steps.iter().map(|s| s.ball_charges.clone()).collect::<Vec<_>>()
            )
        })?;
        let last = ball.steps.last().ok_or("empty trace")?;
        ensure(last.complete, || {
            format!("ball at {:?}: point charges do not add up", ball.center)
        })?;
        let triple = ball.center[0] == 0.0 || ball.center[0] == PI;
        let want = if triple { 4 } else { 2 };
        ensure(
            last.points.len() == want && last.points.iter().all(is_double_crossing),
            || {
                format!(
                    "ball at {:?}: {} points with patterns {:?}",
                    ball.center,
                    last.points.len(),
                    last.points.iter().map(|p| &p.pattern).collect::<Vec<_>>()
                )
            },
        )?;
        for p in &last.points {
            for &x in &p.location {
                ensure(
                    torus_distance(&[x], &[0.0]) > 1e-6 && torus_distance(&[x], &[PI]) > 1e-6,
                    || format!("point {:?} lies on a t = 0 or t = pi slice", p.location),
                )?;
            }
        }
        // Rescan oracle: fine grid scan of the ball, refined independently.
        let hw = 0.03;
        let region = ScanRegion::Box {
            lo: ball.center.iter().map(|c| c - hw).collect(),
            hi: ball.center.iter().map(|c| c + hw).collect(),
        };
        let scan = ScanOptions {
            grid: 40,
            threshold: 0.02,
            region: Some(region),
        };
        let mut oracle: Vec<Vec<f64>> = Vec::new();
        for c in lib(scan_gaps(&fam, &scan))? {
            for s in &c.seeds {
                if let Ok(p) = refine_from(&fam, s, c.spacing * 0.5, &RefineOptions::default()) {
                    if !oracle.iter().any(|q| torus_distance(q, &p.location) < 1e-5) {
                        oracle.push(p.location);
                    }
                }
            }
        }
        ensure(oracle.len() == last.points.len(), || {
            format!(
                "ball at {:?}: rescan found {} points, trace {}",
                ball.center,
                oracle.len(),
                last.points.len()
            )
        })?;
        for p in &last.points {
            ensure(oracle.iter().any(|q| torus_distance(q, &p.location) < 1e-6), || {
                format!("point {:?} not confirmed by rescan", p.location)
            })?;
        }
    }
    let (_, slice_gap) = *trace.special_slice_gaps.last().ok_or("no slice gaps")?;
    ensure(slice_gap > 1e-6, || {
        format!("t = 0 / pi slices have gap {slice_gap:.3e}")
    })?;
    for axis in 0..3 {
        for t in [0.0, PI] {
            let reliable = lib(chern_on_slice(&fam, axis, t, &TopologyOptions::default()))?
                .iter()
                .all(|c| c.reliable);
            ensure(reliable, || format!("slice axis {axis} t = {t} unreliable"))?;
        }
    }
    detail.push(format!(
        "4+4 double crossings in triple balls, 2+2 in (pi/2)^3 balls, charges conserved, min t=0/pi slice gap {slice_gap:.2e}"
    ));
    Ok(detail.join("; "))
}

fn criterion_10() -> Outcome {
    let g = make_gyroid();
    let mut worst = 0.0f64;
    let base = TopologyOptions::default();
    for center in gyroid_points() {
        let out = lib(chern_on_sphere(&g, &center, 0.3, Orientation::Outward, &base))?;
        let inward = lib(chern_on_sphere(&g, &center, 0.3, Orientation::Inward, &base))?;
        for (a, b) in out.iter().zip(&inward) {
            ensure(a.value == -b.value, || {
                format!("inward charge at {center:?} is not the negation")
            })?;
        }
        for seed in [1u64, 2, 3] {
            let opts = TopologyOptions {
                gauge_seed: Some(seed),
                ..base.clone()
            };
            let re = lib(chern_on_sphere(&g, &center, 0.3, Orientation::Outward, &opts))?;
            for (a, b) in out.iter().zip(&re) {
                worst = worst.max((a.raw - b.raw).abs());
                ensure(a.value == b.value, || "rephasing changed a Chern number".into())?;
            }
        }
    }
    for axis in 0..3 {
        let a = lib(chern_on_slice(&g, axis, 0.4, &base))?;
        let b = lib(chern_on_slice(
            &g,
            axis,
            0.4,
            &TopologyOptions {
                gauge_seed: Some(9),
                ..base.clone()
            },
        ))?;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x.raw - y.raw).abs());
        }
    }
    for mult in 2..=4usize {
        let f = make_spin_family(Spin::from_multiplicity(mult));
        let out = lib(chern_on_sphere(&f, &[0.0; 3], 0.5, Orientation::Outward, &base))?;
        let inward = lib(chern_on_sphere(&f, &[0.0; 3], 0.5, Orientation::Inward, &base))?;
        for (a, b) in out.iter().zip(&inward) {
            ensure(a.value == -b.value, || {
                format!("spin multiplicity {mult}: inward not the negation")
            })?;
        }
    }
    let d2 = make_digraph(2).map_err(|e| e.to_string())?;
    let path = LoopPath::axis_circle(vec![2.0 * PI / 3.0, 4.0 * PI / 3.0], 0.1, 0, 1, 16);
    let gamma = lib(berry_phase(&d2, &path, 0, &base))?.phase;
    for seed in [4u64, 5, 6] {
        let g2 = lib(berry_phase(
            &d2,
            &path,
            0,
            &TopologyOptions {
                gauge_seed: Some(seed),
                ..base.clone()
            },
        ))?
        .phase;
        worst = worst.max(bandtop::models::wrap_signed(g2 - gamma).abs());
    }
    let sh = make_spin_family(Spin::from_multiplicity(2));
    let circle = LoopPath::axis_circle(vec![0.0, 0.0, 0.3], 0.4, 0, 1, 16);
    let gs = lib(berry_phase(&sh, &circle, 0, &base))?.phase;
    let gs2 = lib(berry_phase(
        &sh,
        &circle,
        0,
        &TopologyOptions {
            gauge_seed: Some(8),
            ..base.clone()
        },
    ))?
    .phase;
    worst = worst.max(bandtop::models::wrap_signed(gs2 - gs).abs());
    ensure(worst <= 1e-9, || format!("rephasing changed outputs by {worst:.3e}"))?;
    Ok(format!(
        "max change under random rephasing {worst:.1e}; inward charges are exact negations"
    ))
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (n, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS ({secs:.1}s) {detail}"),
            Err(reason) => {
                failures += 1;
                println!("criterion {n}: FAIL ({secs:.1}s) {reason}");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
