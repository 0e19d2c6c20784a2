//! Acceptance gate: one PASS/FAIL line per criterion, then a nonzero exit if
//! any criterion failed.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nlphase::energy::{total_energy, QuadratureConfig, SelfPairPolicy, TailPolicy};
use nlphase::experiments::{
    appendix_inequality_suite, gradient_check, line_angle_between, perturbation_experiment, ramp_minimizer_symmetry,
    scaling_experiment, submodularity_suite, symmetry_diagnostic, tail_estimate_check, PerturbationSetup,
    RampMinimizerSetup, ScalingSetup,
};
use nlphase::grid::{sample_profile, Domain, Profile};
use nlphase::kernels::{audit_assumptions, KernelParams};
use nlphase::potentials::Potential;

/// Name, runtime budget in seconds, check.
type Criterion = (&'static str, f64, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn pl(n: usize, s: f64, p: f64) -> KernelParams {
    KernelParams::p_laplacian(n, s, p).unwrap()
}

fn mc(n: usize, s: f64) -> KernelParams {
    KernelParams::mean_curvature(n, s).unwrap()
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn audit() -> Outcome {
    let kernels = [pl(1, 0.5, 2.0), pl(2, 0.25, 3.0), pl(2, 0.75, 1.5), mc(1, 0.5), mc(2, 0.3)];
    let mut ok = true;
    let mut parts = Vec::new();
    for k in &kernels {
        let rep = audit_assumptions(k, 10_000, 7);
        let (pass, total) = rep.assumption_counts();
        let conv = rep.convexity.passed;
        ok &= rep.all_passed() && conv;
        parts.push(format!("{} {pass}/{total}{}", k.label(), if conv { "+convexity" } else { " convexity FAILED" }));
    }
    Outcome { passed: ok, detail: parts.join("; ") }
}

fn tail_estimate() -> Outcome {
    let radii = [8.0, 16.0, 32.0, 64.0];
    let cases = [(1, 0.25), (2, 0.75), (1, 0.75), (2, 0.25), (1, 0.5), (2, 0.5)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (n, s) in cases {
        let rep = tail_estimate_check(n, s, 2.0, &radii, 0.25).unwrap();
        ok &= rep.passed;
        match rep.log_model {
            Some(c) => parts.push(format!("n={n} sp=1 log model cuts residual {:.0}%", 100.0 * c.reduction())),
            None => parts.push(format!("n={n} sp={} {:.3} vs {}", 2.0 * s, rep.fit.slope, rep.predicted_exponent)),
        }
    }
    Outcome { passed: ok, detail: parts.join("; ") }
}

fn scaling() -> Outcome {
    let setup = ScalingSetup::default();
    let one = scaling_experiment(&pl(1, 0.25, 2.0), &Potential::DoubleWell, &[4.0, 8.0, 16.0, 32.0], &setup).unwrap();
    // the fit uses the three largest radii, 4, 8 and 16
    let two = scaling_experiment(&pl(2, 0.75, 2.0), &Potential::DoubleWell, &[2.0, 4.0, 8.0, 16.0], &setup).unwrap();
    Outcome {
        passed: one.passed && two.passed,
        detail: format!(
            "n=1 exponent {:.3} (0.5), n=2 exponent {:.3} (1.0), tolerance 0.15{}",
            one.fit.slope,
            two.fit.slope,
            if one.complete && two.complete { "" } else { ", incomplete" }
        ),
    }
}

fn perturbation() -> Outcome {
    let rep = perturbation_experiment(
        &pl(1, 0.75, 2.0),
        &Potential::DoubleWell,
        &[8.0, 16.0, 32.0, 64.0],
        &PerturbationSetup::default(),
    )
    .unwrap();
    let min_delta = rep.records.iter().map(|r| r.delta / r.energy_base).fold(f64::INFINITY, f64::min);
    Outcome {
        passed: rep.passed,
        detail: format!("slope {:.3} in [-2.3, -1.7], min delta/E {:.3e}", rep.fit.slope, min_delta),
    }
}

fn submodularity() -> Outcome {
    let kernels = [pl(1, 0.5, 1.5), pl(1, 0.5, 2.0), pl(1, 0.5, 3.0), mc(1, 0.5)];
    let rep = submodularity_suite(&kernels, 100, 11).unwrap();
    let worst = rep.items.iter().map(|i| i.worst_margin).fold(f64::INFINITY, f64::min);
    let samples: usize = rep.items.iter().map(|i| i.samples).sum();
    Outcome { passed: rep.passed(), detail: format!("{samples} pairs, smallest slack margin {worst:.3e}") }
}

fn first_variation() -> Outcome {
    let kernels = [pl(1, 0.5, 2.0), pl(2, 0.5, 2.0), mc(1, 0.5), mc(2, 0.5)];
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for (i, k) in kernels.iter().enumerate() {
        let rep = gradient_check(k, 20, 100 + i as u64).unwrap();
        ok &= rep.passed();
        worst = worst.max(1e-5 - rep.items[0].worst_margin);
    }
    Outcome { passed: ok, detail: format!("largest relative error {worst:.2e} (< 1e-5)") }
}

fn appendix() -> Outcome {
    let rep = appendix_inequality_suite(50, 5);
    let d: Vec<String> =
        rep.items.iter().map(|i| format!("{} {}/{}", i.id, i.samples - i.failures, i.samples)).collect();
    Outcome { passed: rep.passed(), detail: d.join(", ") }
}

fn symmetry() -> Outcome {
    let k = pl(2, 0.5, 2.0);
    let setup = RampMinimizerSetup::default();
    let (res, diag) = ramp_minimizer_symmetry(&k, &Potential::DoubleWell, &setup).unwrap();
    let off = line_angle_between(diag.angle, setup.angle).to_degrees();
    let dom = Domain::with_default_box(2, 4.0, 0.125).unwrap();
    let radial = sample_profile(&dom, &Profile::RadialBump { radius: 4.0 }).unwrap();
    let rad = symmetry_diagnostic(&radial).unwrap();
    Outcome {
        passed: diag.residual < 0.02 && off < 2.0 && rad.residual > 0.05,
        detail: format!(
            "minimizer ({}) residual {:.4} (< 0.02), direction off by {:.3} deg (< 2), radial residual {:.4} (> 0.05)",
            res.status.label(),
            diag.residual,
            off,
            rad.residual
        ),
    }
}

/// Interior-interior energy of clip(x) on (-2, 2) with s = 1/2, p = 2, by
/// nested adaptive quadrature. Written through the stable difference quotient
/// |[y, x] n [-1, 1]| / (x - y).
fn ramp_oracle() -> f64 {
    let (r, tol) = (2.0, 1e-11);
    let inner = |x: f64| {
        let f = |z: f64| {
            let (lo, hi) = if z > 0.0 { (x - z, x) } else { (x, x - z) };
            let len = (hi.min(1.0) - lo.max(-1.0)).max(0.0);
            0.5 * (len / z).powi(2)
        };
        // y = x - z in (-R, R); split at z = 0 and at the kinks y = +-1
        let mut cuts = vec![x - r, x - 1.0, x + 1.0, x + r, 0.0];
        cuts.retain(|c| *c >= x - r && *c <= x + r);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.windows(2).map(|w| quadrature::integrate(f, w[0], w[1], tol).integral).sum::<f64>()
    };
    [(-2.0, -1.0), (-1.0, 0.0), (0.0, 1.0), (1.0, 2.0)]
        .iter()
        .map(|&(a, b)| quadrature::integrate(inner, a, b, tol).integral)
        .sum()
}

fn quadrature_convergence() -> Outcome {
    let oracle = ramp_oracle();
    let k = pl(1, 0.5, 2.0);
    let q = QuadratureConfig {
        self_pair: SelfPairPolicy::MidpointCorrection,
        tail: TailPolicy::None,
        ..Default::default()
    };
    let mut errs = Vec::new();
    for div in [16.0, 32.0, 64.0] {
        let dom = Domain::with_default_box(1, 2.0, 2.0 / div).unwrap();
        let u = sample_profile(&dom, &Profile::ramp([1.0, 0.0])).unwrap();
        let e = total_energy(&u, &k, &Potential::DoubleWell, &q).unwrap().interior_interior;
        errs.push((e - oracle).abs() / oracle);
    }
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        passed: errs[2] < 0.02 && monotone,
        detail: format!(
            "oracle {oracle:.10}, relative errors {:.2e} {:.2e} {:.2e} at h = R/16, R/32, R/64",
            errs[0], errs[1], errs[2]
        ),
    }
}

fn main() -> ExitCode {
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let criteria: [Criterion; 9] = [
        ("kernel assumption audit", 5.0, audit),
        ("tail-estimate exponents", 60.0, tail_estimate),
        ("minimizer energy scaling", 1800.0, scaling),
        ("second-order perturbation", 600.0, perturbation),
        ("submodularity", 120.0, submodularity),
        ("first variation", 60.0, first_variation),
        ("appendix inequalities", 120.0, appendix),
        ("one-dimensionality diagnostic", 1200.0, symmetry),
        ("quadrature convergence", f64::INFINITY, quadrature_convergence),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let t = Instant::now();
        let out = run();
        let dt = t.elapsed();
        let timely = within(dt, *limit);
        let ok = out.passed && timely;
        if !ok {
            failed += 1;
        }
        let budget = if limit.is_finite() { format!(", budget {limit:.0}s") } else { String::new() };
        println!(
            "criterion {}: {} {name}: {} [{:.1}s{budget}{}]",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            out.detail,
            dt.as_secs_f64(),
            if timely { "" } else { ", over budget" }
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all criteria passed");
        ExitCode::SUCCESS
    }
}
