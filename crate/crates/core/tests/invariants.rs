use std::f64::consts::PI;

use bandtop::analysis::{check_global, GlobalContext};
use bandtop::degeneracy::{find_degeneracies, RefineOptions, ScanOptions};
use bandtop::models::{
    deform, gyroid_tree_perturbation, make_digraph, make_gyroid, make_spin_family, wrap_signed, Spin,
};
use bandtop::report::{AnalysisReport, Parameters};
use bandtop::topology::{berry_phase, chern_on_slice, chern_on_sphere, LoopPath, Orientation, TopologyOptions};
use bandtop::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn slice_chern_numbers_sum_to_zero(
        delta in prop::array::uniform3(-0.5f64..0.5),
        lambda in 0.0f64..0.05,
        axis in 0usize..3,
        t in 0.0f64..(2.0 * PI),
    ) {
        let family = deform(&make_gyroid(), &gyroid_tree_perturbation(delta), lambda).unwrap();
        prop_assert!(family.has_time_reversal());
        match chern_on_slice(&family, axis, t, &TopologyOptions::default()) {
            Ok(rs) => {
                prop_assert_eq!(rs.iter().map(|r| r.value).sum::<i64>(), 0);
                // Time reversal maps the slice at t to the one at -t with opposite Chern numbers.
                if let Ok(mirror) = chern_on_slice(&family, axis, -t, &TopologyOptions::default()) {
                    for (a, b) in rs.iter().zip(&mirror) {
                        prop_assert_eq!(a.value, -b.value);
                    }
                }
            }
            Err(Error::DegenerateOnSurface { .. }) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn inward_charges_negate_outward(
        mult in 2usize..5,
        r in 0.1f64..1.2,
        offset in prop::array::uniform3(-0.05f64..0.05),
    ) {
        let family = make_spin_family(Spin::from_multiplicity(mult));
        let opts = TopologyOptions::default();
        let out = chern_on_sphere(&family, &offset, r, Orientation::Outward, &opts).unwrap();
        let inward = chern_on_sphere(&family, &offset, r, Orientation::Inward, &opts).unwrap();
        let total: i64 = out.iter().map(|c| c.value).sum();
        prop_assert_eq!(total, 0);
        for (a, b) in out.iter().zip(&inward) {
            prop_assert_eq!(a.value, -b.value);
        }
    }

    #[test]
    fn spin_half_berry_phase_is_half_solid_angle(
        height in -1.0f64..1.0,
        radius in 0.1f64..1.0,
        seed in any::<u64>(),
    ) {
        let family = make_spin_family(Spin::from_multiplicity(2));
        let path = LoopPath::axis_circle(vec![0.0, 0.0, height], radius, 0, 1, 16);
        let opts = TopologyOptions { gauge_seed: Some(seed), ..Default::default() };
        let gamma = berry_phase(&family, &path, 0, &opts).unwrap().phase;
        let cos_theta = height / (height * height + radius * radius).sqrt();
        let expected = PI * (1.0 - cos_theta);
        prop_assert!(wrap_signed(gamma - expected).abs() < 1e-5, "gamma {} expected {}", gamma, expected);
    }

    #[test]
    fn rephasing_leaves_slice_curvature_unchanged(axis in 0usize..3, t in 0.1f64..1.4, seed in any::<u64>()) {
        let g = make_gyroid();
        let a = chern_on_slice(&g, axis, t, &TopologyOptions::default()).unwrap();
        let b = chern_on_slice(&g, axis, t, &TopologyOptions { gauge_seed: Some(seed), ..Default::default() }).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.raw - y.raw).abs() < 1e-9);
        }
    }
}

#[test]
fn report_json_round_trip() {
    let family = make_digraph(2).unwrap();
    let report = AnalysisReport::run(&family, Parameters::default()).unwrap();
    let text = report.to_json();
    let back = AnalysisReport::from_json(&text).unwrap();
    assert_eq!(back.to_json(), text);
    assert_eq!(back.reaudit(), report.constraints);
}

#[test]
fn gyroid_report_reaudits_clean() {
    let report = AnalysisReport::run(&make_gyroid(), Parameters::default()).unwrap();
    assert!(report.constraints.passed(), "{:?}", report.constraints.failed_ids());
    let back = AnalysisReport::from_json(&report.to_json()).unwrap();
    assert_eq!(back.reaudit(), report.constraints);
}

#[test]
fn jumps_follow_the_deformed_points() {
    // After a small deformation each point's local charge still equals
    // the jump of the slice profile at its projection.
    let family = deform(&make_gyroid(), &gyroid_tree_perturbation([0.3, -0.2, 0.1]), 0.05).unwrap();
    let report = find_degeneracies(&family, &ScanOptions::default(), &RefineOptions::default()).unwrap();
    assert!(report.curves.is_empty());
    let profile = bandtop::analysis::slice_profile(&family, 2, &report, &Default::default()).unwrap();
    for p in &report.points {
        let q: Vec<i64> = chern_on_sphere(
            &family,
            &p.location,
            0.002,
            Orientation::Outward,
            &TopologyOptions::default(),
        )
        .unwrap()
        .iter()
        .map(|c| c.value)
        .collect();
        assert_eq!(
            profile.jump_at(p.location[2], 1e-9).unwrap(),
            q.as_slice(),
            "at {:?}",
            p.location
        );
    }
    let r = check_global(&GlobalContext {
        profiles: vec![profile],
        time_reversal: true,
        ..Default::default()
    });
    assert!(r.passed(), "{:?}", r.failed_ids());
}
