//! Reference values computed independently (closed forms, adaptive quadrature
//! or a 30-digit computation) and frozen here.

use nlphase::energy::{total_energy, QuadratureConfig, SelfPairPolicy, TailPolicy};
use nlphase::error::Error;
use nlphase::experiments::{
    line_angle_between, perturbation_experiment, scaling_experiment, symmetry_diagnostic, tail_integral,
    PerturbationSetup, ScalingSetup,
};
use nlphase::grid::{sample_profile, unit_direction, Domain, FarField, GridFunction, Profile, Profile1d, Shape};
use nlphase::kernels::KernelParams;
use nlphase::minimize::{minimize, ordered_data_comparison, MinimizeConfig, Status};
use nlphase::potentials::Potential;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn pl(n: usize, s: f64, p: f64) -> KernelParams {
    KernelParams::p_laplacian(n, s, p).unwrap()
}

/// Interior energy of clip(x) on (-2, 2), s = 1/2, p = 2, to 30 digits.
const RAMP_ENERGY: f64 = 4.273_907_565_289_314;

#[test]
fn kernel_values() {
    assert_eq!(pl(1, 0.5, 2.0).eval_f(0.5, &[1.0]).unwrap(), 0.125);
    let v = pl(2, 0.25, 3.0).eval_f(2.0, &[3.0, 4.0]).unwrap();
    assert!(rel(v, 8.0 / (3.0 * 5f64.powf(2.75))) < 1e-14);
    let mc1 = KernelParams::mean_curvature(1, 0.5).unwrap();
    assert!(rel(mc1.eval_f(0.7, &[0.4]).unwrap(), 1.697_014_430_407_635_5) < 1e-12);
    assert!(rel(mc1.constants().c_upper, 1.198_140_234_735_592_2) < 1e-12);
    let mc2 = KernelParams::mean_curvature(2, 0.3).unwrap();
    assert!(rel(mc2.eval_f(-2.5, &[1.0, -0.5]).unwrap(), 1.206_696_626_280_196_7) < 1e-12);
}

#[test]
fn ramp_energy_converges_to_reference() {
    let k = pl(1, 0.5, 2.0);
    let q = QuadratureConfig {
        self_pair: SelfPairPolicy::MidpointCorrection,
        tail: TailPolicy::None,
        ..Default::default()
    };
    let mut last = f64::INFINITY;
    for div in [16.0, 32.0, 64.0, 128.0] {
        let dom = Domain::with_default_box(1, 2.0, 2.0 / div).unwrap();
        let u = sample_profile(&dom, &Profile::ramp([1.0, 0.0])).unwrap();
        let e = total_energy(&u, &k, &Potential::Zero, &q).unwrap().interior_interior;
        let err = rel(e, RAMP_ENERGY);
        assert!(err < last);
        last = err;
    }
    assert!(last < 1e-4, "{last}");
}

#[test]
fn brute_force_double_sum() {
    let dom = Domain::new(1, 1.0, 2.0, 0.25).unwrap();
    let k = pl(1, 0.4, 1.5);
    let vals: Vec<f64> = (0..16).map(|i| (0.9 * i as f64).sin()).collect();
    let u = GridFunction::new(dom, vals.clone(), FarField::Constant(0.0)).unwrap();
    let q = QuadratureConfig::with_tail(TailPolicy::None);
    let e = total_energy(&u, &k, &Potential::DoubleWell, &q).unwrap();
    let x: Vec<f64> = (0..16).map(|i| -1.875 + 0.25 * i as f64).collect();
    let f = |t: f64, r: f64| t.abs().powf(1.5) / (1.5 * r.abs().powf(1.0 + 0.4 * 1.5));
    let inside = |i: usize| x[i].abs() < 1.0;
    let (mut ii, mut ie, mut w) = (0.0, 0.0, 0.0);
    for i in (0..16).filter(|&i| inside(i)) {
        w += 0.25 * (vals[i] * vals[i] - 1.0).powi(2) / 4.0;
        for j in (0..16).filter(|&j| j != i) {
            let term = 0.0625 * f(vals[i] - vals[j], x[i] - x[j]);
            if inside(j) {
                ii += term;
            } else {
                ie += 2.0 * term;
            }
        }
    }
    assert!(rel(e.interior_interior, ii) < 1e-13);
    assert!(rel(e.interior_exterior, ie) < 1e-13);
    assert!(rel(e.potential, w) < 1e-13);
}

/// Tail of a constant far field c on the line: the exterior integral is
/// |u - c|^p / p * [(Rb - x)^-sp + (Rb + x)^-sp] / sp.
#[test]
fn line_tail_matches_closed_form() {
    let dom = Domain::new(1, 1.0, 2.0, 0.125).unwrap();
    let (s, p, c) = (0.4, 2.5, 0.3);
    let k = pl(1, s, p);
    let sp = s * p;
    let vals: Vec<f64> = (0..dom.len()).map(|i| (0.37 * i as f64).sin()).collect();
    let u = GridFunction::new(dom.clone(), vals.clone(), FarField::Constant(c)).unwrap();
    let mut expected = 0.0;
    for i in dom.interior_indices() {
        let x = dom.point(i)[0];
        let t = (vals[i] - c).abs().powf(p) / p;
        expected += 2.0 * dom.h() * t * ((2.0 - x).powf(-sp) + (2.0 + x).powf(-sp)) / sp;
    }
    let quad = total_energy(&u, &k, &Potential::Zero, &QuadratureConfig::with_tail(TailPolicy::Quadrature1d)).unwrap();
    assert!(rel(quad.tail, expected) < 1e-10, "{} vs {expected}", quad.tail);
    assert!(!quad.tail_is_envelope);
    let env = total_energy(&u, &k, &Potential::Zero, &QuadratureConfig::default()).unwrap();
    assert!(env.tail_is_envelope);
    assert!(env.tail >= expected);
}

/// Same in the plane, against nested adaptive quadrature in polar coordinates.
#[test]
fn plane_tail_matches_adaptive_quadrature() {
    let dom = Domain::new(2, 1.0, 2.0, 0.25).unwrap();
    let (s, p, c) = (0.6, 2.0, -0.4);
    let sp = s * p;
    let k = pl(2, s, p);
    let vals: Vec<f64> = (0..dom.len()).map(|i| (0.11 * i as f64).cos()).collect();
    let u = GridFunction::new(dom.clone(), vals.clone(), FarField::Constant(c)).unwrap();
    let rb = dom.r_box();
    let mut expected = 0.0;
    for i in dom.interior_indices() {
        let [x0, x1] = dom.point(i);
        // y = (rb / w) (cos a, sin a), w in (0, 1]
        let radial = |a: f64| {
            let f = |w: f64| {
                if w == 0.0 {
                    return 0.0;
                }
                let rho = rb / w;
                let d = (rho * a.cos() - x0).hypot(rho * a.sin() - x1);
                d.powf(-(2.0 + sp)) * rho * rb / (w * w)
            };
            quadrature::integrate(f, 0.0, 1.0, 1e-13).integral
        };
        let angular: f64 = (0..8)
            .map(|q| {
                let a = q as f64 * std::f64::consts::FRAC_PI_4;
                quadrature::integrate(radial, a, a + std::f64::consts::FRAC_PI_4, 1e-12).integral
            })
            .sum();
        expected += 2.0 * dom.cell_volume() * (vals[i] - c).abs().powf(p) / p * angular;
    }
    let got = total_energy(&u, &k, &Potential::Zero, &QuadratureConfig::with_tail(TailPolicy::Quadrature1d)).unwrap();
    assert!(rel(got.tail, expected) < 1e-9, "{} vs {expected}", got.tail);
}

#[test]
fn tail_integral_closed_forms() {
    // 2 [ ((R+1)^(1-sp) - 1) / (1 - sp) + 2 ] on the line, log form at sp = 1
    for (sp, r) in [(0.5, 8.0), (1.5, 16.0), (1.0, 32.0)] {
        let exact = if sp == 1.0 {
            2.0 * ((r + 1.0f64).ln() + 2.0)
        } else {
            2.0 * (((r + 1.0f64).powf(1.0 - sp) - 1.0) / (1.0 - sp) + 2.0)
        };
        let got = tail_integral(1, sp, r, 0.125).unwrap();
        assert!(rel(got, exact) < 1e-3, "sp {sp}: {got} vs {exact}");
    }
    // plane, sp = 1/2: 2 pi [ int_0^R r (R+1-r)^-1/2 dr + ((R+2)^2 - R^2) / 2 ]
    let r = 8.0f64;
    let a = r + 1.0;
    let radial = 2.0 * a * (a.sqrt() - 1.0) - (2.0 / 3.0) * (a.powf(1.5) - 1.0);
    let exact = 2.0 * std::f64::consts::PI * (radial + ((r + 2.0).powi(2) - r * r) / 2.0);
    let got = tail_integral(2, 0.5, r, 0.125).unwrap();
    assert!(rel(got, exact) < 1e-2, "{got} vs {exact}");
}

#[test]
fn constant_datum_is_reproduced_without_potential() {
    let dom = Domain::with_default_box(1, 1.0, 0.125).unwrap();
    let c = 0.4;
    let mut vals = vec![c; dom.len()];
    for i in dom.interior_indices() {
        vals[i] = (1.7 * i as f64).sin() * 0.9;
    }
    let u0 = GridFunction::new(dom, vals, FarField::Constant(c)).unwrap();
    let res =
        minimize(&u0, &pl(1, 0.5, 2.0), &Potential::Zero, &QuadratureConfig::default(), &MinimizeConfig::default())
            .unwrap();
    assert_eq!(res.status, Status::Converged);
    assert!(res.u.values.iter().all(|v| (v - c).abs() < 1e-6));
    assert!(res.energy() < 1e-10);
}

#[test]
fn unit_datum_pulls_minimizer_to_one() {
    let dom = Domain::with_default_box(1, 2.0, 0.125).unwrap();
    let mut vals = vec![1.0; dom.len()];
    for i in dom.interior_indices() {
        vals[i] = 0.0;
    }
    let u0 = GridFunction::new(dom.clone(), vals, FarField::Constant(1.0)).unwrap();
    let res = minimize(
        &u0,
        &pl(1, 0.5, 2.0),
        &Potential::DoubleWell,
        &QuadratureConfig::default(),
        &MinimizeConfig::default(),
    )
    .unwrap();
    assert_eq!(res.status, Status::Converged);
    for i in dom.interior_indices() {
        assert!((res.u.values[i] - 1.0).abs() < 1e-3, "{}", res.u.values[i]);
    }
}

#[test]
fn ordered_data_give_ordered_minimizers() {
    let dom = Domain::with_default_box(1, 1.5, 0.125).unwrap();
    let k = pl(1, 0.5, 2.0);
    let q = QuadratureConfig::with_tail(TailPolicy::Quadrature1d);
    let lower = sample_profile(&dom, &Profile::ramp([1.0, 0.0])).unwrap();
    let shifted = Profile::LayerTanh { direction: [1.0, 0.0], width: 1.0, shift: -0.5 };
    let layer = sample_profile(&dom, &shifted).unwrap();
    // max of the two data sits above the ramp everywhere
    let upper_vals: Vec<f64> = lower.values.iter().zip(&layer.values).map(|(a, b)| a.max(*b)).collect();
    let ff = FarField::Max(Box::new(lower.farfield.clone()), Box::new(layer.farfield.clone()));
    let upper = GridFunction::new(dom, upper_vals, ff).unwrap();
    let rep =
        ordered_data_comparison(&upper, &lower, &k, &Potential::DoubleWell, &q, &MinimizeConfig::default()).unwrap();
    assert!(rep.min_difference >= -rep.tolerance, "{}", rep.min_difference);
    assert_eq!(rep.violation_measure, 0.0);
    let err = ordered_data_comparison(&lower, &upper, &k, &Potential::DoubleWell, &q, &MinimizeConfig::default());
    assert!(matches!(err, Err(Error::Precondition(_))));
}

#[test]
fn midpoint_correction_is_rejected_by_the_minimizer() {
    let dom = Domain::with_default_box(1, 1.0, 0.25).unwrap();
    let u = sample_profile(&dom, &Profile::Constant(0.0)).unwrap();
    let q = QuadratureConfig { self_pair: SelfPairPolicy::MidpointCorrection, ..Default::default() };
    let r = minimize(&u, &pl(1, 0.5, 2.0), &Potential::DoubleWell, &q, &MinimizeConfig::default());
    assert!(matches!(r, Err(Error::Usage(_))));
}

#[test]
fn zero_perturbation_has_zero_second_difference() {
    let setup = PerturbationSetup { amplitude: 0.0, ..Default::default() };
    let rep =
        perturbation_experiment(&pl(1, 0.75, 2.0), &Potential::DoubleWell, &[8.0, 10.0, 12.0, 14.0], &setup).unwrap();
    assert!(rep.records.iter().all(|r| r.delta == 0.0));
}

#[test]
fn planar_linear_function_is_one_dimensional() {
    let dom = Domain::with_default_box(2, 2.0, 0.125).unwrap();
    let angle = 30f64.to_radians();
    let dir = unit_direction(angle);
    let u =
        sample_profile(&dom, &Profile::Custom(std::sync::Arc::new(move |x| dir[0] * x[0] + dir[1] * x[1]))).unwrap();
    let rep = symmetry_diagnostic(&u).unwrap();
    assert!(rep.residual < 1e-12, "{}", rep.residual);
    assert!(line_angle_between(rep.angle, angle) < 1e-4);
}

#[test]
fn scaling_needs_four_radii() {
    let err =
        scaling_experiment(&pl(1, 0.25, 2.0), &Potential::DoubleWell, &[4.0, 8.0, 16.0], &ScalingSetup::default())
            .unwrap_err();
    assert!(err.to_string().contains("fit requires >= 4 radii"));
}

#[test]
fn layer_far_field_round_trips_through_text() {
    let dom = Domain::with_default_box(2, 1.0, 0.25).unwrap();
    let ff = FarField::Profile1d(Profile1d::new(unit_direction(0.3), 0.1, Shape::Ramp { slope: 0.5 }).unwrap());
    let u = GridFunction::new(dom.clone(), vec![0.25; dom.len()], ff).unwrap();
    assert_eq!(GridFunction::from_text(&u.to_text()).unwrap(), u);
}
