use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nlphase::energy::{fmt17, total_energy, EnergyBreakdown, QuadratureConfig, SelfPairPolicy, Summation, TailPolicy};
use nlphase::experiments::{
    appendix_inequality_suite, convexity_suite, gradient_check, line_angle_between, perturbation_experiment,
    ramp_minimizer_symmetry, scaling_experiment, submodularity_suite, symmetry_diagnostic, tail_estimate_check,
    DataRule, PerturbationSetup, RampMinimizerSetup, ScalingSetup,
};
use nlphase::grid::{sample_profile, unit_direction, Domain, FarField, GridFunction, Profile};
use nlphase::kernels::{audit_with, AuditConfig, KernelParams};
use nlphase::minimize::{minimize, MinimizeConfig, Status};
use nlphase::potentials::Potential;

use crate::config::{ConfigError, Settings};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Lib(nlphase::Error),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<nlphase::Error> for CliError {
    fn from(e: nlphase::Error) -> Self {
        CliError::Lib(e)
    }
}

type Res<T> = Result<T, CliError>;

pub struct Verdict {
    pub passed: bool,
    pub summary: String,
}

pub fn dispatch(command: &str, st: &Settings) -> Res<Verdict> {
    match command {
        "audit" => audit(st),
        "energy" => energy(st),
        "minimize" => run_minimize(st),
        "scaling" => scaling(st),
        "perturb" => perturb(st),
        "symmetry" => symmetry(st),
        "checks" => checks(st),
        other => unreachable!("unknown command {other}"),
    }
}

// ---------------------------------------------------------------------------
// Building blocks

fn kernel(st: &Settings) -> Res<KernelParams> {
    let n = st.get::<usize>("kernel", "n", "1 or 2")?.unwrap_or(1);
    let s = st.num("kernel", "s", 0.5)?;
    let p = st.num("kernel", "p", 2.0)?;
    let fam = st.text("kernel", "family", "pLaplacian");
    let built = match fam.as_str() {
        "pLaplacian" | "p_laplacian" => KernelParams::p_laplacian(n, s, p),
        "meanCurvature" | "mean_curvature" => KernelParams::mean_curvature(n, s),
        _ => return Err(st.invalid("kernel", "family", "expected pLaplacian or meanCurvature").into()),
    };
    built.map_err(|e| CliError::Config(ConfigError(format!("[kernel]: {e}"))))
}

fn potential(st: &Settings) -> Res<Potential> {
    let name = st.text("potential", "name", "doubleWell");
    Potential::from_name(&name).map_err(|_| st.invalid("potential", "name", "expected doubleWell or zero").into())
}

fn quadrature(st: &Settings, ff: &FarField, default_tail: Option<TailPolicy>) -> Res<QuadratureConfig> {
    let self_pair = match st.text("quadrature", "self_pair", "exclude").as_str() {
        "exclude" => SelfPairPolicy::Exclude,
        "midpoint" | "midpoint_correction" => SelfPairPolicy::MidpointCorrection,
        _ => return Err(st.invalid("quadrature", "self_pair", "expected exclude or midpoint").into()),
    };
    let tail = match st.raw("quadrature", "tail").map(|(v, _)| v) {
        None => default_tail.unwrap_or_else(|| TailPolicy::auto(ff)),
        Some("auto") => TailPolicy::auto(ff),
        Some("analytic_constant") => TailPolicy::AnalyticConstant,
        Some("quadrature_1d") => TailPolicy::Quadrature1d,
        Some("none") => TailPolicy::None,
        Some(_) => {
            return Err(st
                .invalid("quadrature", "tail", "expected auto, analytic_constant, quadrature_1d or none")
                .into())
        }
    };
    let summation = match st.text("quadrature", "summation", "compensated").as_str() {
        "compensated" => Summation::Compensated,
        "fixed_order" => Summation::FixedOrder,
        _ => return Err(st.invalid("quadrature", "summation", "expected compensated or fixed_order").into()),
    };
    Ok(QuadratureConfig { self_pair, tail, summation })
}

fn solver(st: &Settings) -> Res<MinimizeConfig> {
    let d = MinimizeConfig::default();
    let box_bounds = match st.raw("solver", "box") {
        None => d.box_bounds,
        Some(("none", _)) => None,
        Some(_) => match st.list("solver", "box", &[])?.as_slice() {
            [lo, hi] => Some([*lo, *hi]),
            _ => return Err(st.invalid("solver", "box", "expected 'lo, hi' or 'none'").into()),
        },
    };
    let cfg = MinimizeConfig {
        max_iters: st.int("solver", "max_iters", d.max_iters as u64)? as usize,
        grad_tol: st.opt_num("solver", "grad_tol")?,
        step0: st.opt_num("solver", "step0")?,
        backtrack_factor: st.num("solver", "backtrack_factor", d.backtrack_factor)?,
        armijo_c: st.num("solver", "armijo_c", d.armijo_c)?,
        box_bounds,
    };
    cfg.validate().map_err(|e| CliError::Config(ConfigError(format!("[solver]: {e}"))))?;
    Ok(cfg)
}

fn domain(st: &Settings, n: usize, default_r: f64) -> Res<Domain> {
    let r = st.num("domain", "R", default_r)?;
    let h = match st.opt_num("domain", "h")? {
        Some(h) => h,
        None => r / st.num("domain", "h_divisor", 32.0)?,
    };
    let built = match st.opt_num("domain", "R_box")? {
        Some(rb) => Domain::new(n, r, rb, h),
        None => Domain::with_default_box(n, r, h),
    };
    built.map_err(|e| CliError::Config(ConfigError(format!("[domain]: {e}"))))
}

fn read_grid(st: &Settings, n: usize) -> Res<Option<GridFunction>> {
    let Some((path, _)) = st.raw("data", "file") else {
        return Ok(None);
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {path}: {e}")))?;
    let g = GridFunction::from_text(&text)?;
    if g.domain.n() != n {
        return Err(st.invalid("data", "file", "grid dimension differs from [kernel] n").into());
    }
    Ok(Some(g))
}

/// Data for `energy` and `minimize`: a grid file or a named profile.
fn data(st: &Settings, n: usize) -> Res<GridFunction> {
    if let Some(g) = read_grid(st, n)? {
        return Ok(g);
    }
    let dom = domain(st, n, 4.0)?;
    let dir = if n == 1 { [1.0, 0.0] } else { unit_direction(st.num("data", "angle", 0.0)?.to_radians()) };
    let profile = match st.text("data", "rule", "ramp").as_str() {
        "ramp" => Profile::Ramp { direction: dir, slope: st.num("data", "slope", 1.0)? },
        "layer" => Profile::LayerTanh {
            direction: dir,
            width: st.num("data", "width", 1.0)?,
            shift: st.num("data", "shift", 0.0)?,
        },
        "constant" => Profile::Constant(st.num("data", "value", 1.0)?),
        "psi" => {
            if dom.r() <= 2.0 {
                return Err(st.invalid("domain", "R", "psi data needs R > 2").into());
            }
            Profile::PsiAux { r: dom.r() - 2.0 }
        }
        _ => return Err(st.invalid("data", "rule", "expected ramp, layer, constant or psi").into()),
    };
    Ok(sample_profile(&dom, &profile)?)
}

fn out_dir(st: &Settings) -> Res<PathBuf> {
    let dir = PathBuf::from(st.text("output", "dir", "nlphase-out"));
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, content: &str) -> Res<()> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn breakdown_csv(b: &EnergyBreakdown, dom: &Domain) -> String {
    format!("{}\n{}\n", EnergyBreakdown::csv_header(), b.to_csv_row(dom.r(), dom.h()))
}

fn pass_fail(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

// ---------------------------------------------------------------------------
// Commands

fn audit(st: &Settings) -> Res<Verdict> {
    let k = kernel(st)?;
    let cfg = AuditConfig {
        sample_count: st.int("experiment", "sample_count", 10_000)? as usize,
        seed: st.int("experiment", "seed", 0)?,
        ..Default::default()
    };
    let dir = out_dir(st)?;
    let rep = audit_with(&k, &cfg);
    write(&dir, "audit.txt", &rep.to_text())?;
    write(&dir, "audit.kv", &rep.to_kv())?;
    let (pass, total) = rep.assumption_counts();
    Ok(Verdict {
        passed: rep.all_passed(),
        summary: format!(
            "audit {}: {pass}/{total} assumption items pass, convexity {}: {}",
            k.label(),
            if rep.convexity.passed { "pass" } else { "fail" },
            pass_fail(rep.all_passed())
        ),
    })
}

fn energy(st: &Settings) -> Res<Verdict> {
    let k = kernel(st)?;
    let pot = potential(st)?;
    let u = data(st, k.n)?;
    let q = quadrature(st, &u.farfield, None)?;
    let dir = out_dir(st)?;
    let b = total_energy(&u, &k, &pot, &q)?;
    write(&dir, "energy.csv", &breakdown_csv(&b, &u.domain))?;
    Ok(Verdict {
        passed: true,
        summary: format!(
            "energy {}: total {} (interior {}, exterior {}, potential {}{})",
            k.label(),
            fmt17(b.total),
            fmt17(b.interior_interior),
            fmt17(b.interior_exterior),
            fmt17(b.potential),
            if b.tail_is_envelope { ", tail is an upper envelope" } else { "" }
        ),
    })
}

fn run_minimize(st: &Settings) -> Res<Verdict> {
    let k = kernel(st)?;
    let pot = potential(st)?;
    let u0 = data(st, k.n)?;
    let q = quadrature(st, &u0.farfield, None)?;
    let cfg = solver(st)?;
    let dir = out_dir(st)?;
    let res = minimize(&u0, &k, &pot, &q, &cfg)?;
    write(&dir, "trace.csv", &res.trace_csv())?;
    write(&dir, "minimizer.grid", &res.u.to_text())?;
    write(&dir, "energy.csv", &breakdown_csv(&res.breakdown, &res.u.domain))?;
    Ok(Verdict {
        passed: res.status == Status::Converged,
        summary: format!(
            "minimize {}: {} after {} iterations, energy {}",
            k.label(),
            res.status.label(),
            res.iterations(),
            fmt17(res.energy())
        ),
    })
}

fn scaling(st: &Settings) -> Res<Verdict> {
    let k = kernel(st)?;
    let pot = potential(st)?;
    let r_list = st.list("experiment", "R_list", &[4.0, 8.0, 16.0, 32.0])?;
    if r_list.len() < 4 {
        return Err(st.invalid("experiment", "R_list", "fit requires >= 4 radii").into());
    }
    let data = match st.text("data", "rule", "ramp").as_str() {
        "ramp" => {
            DataRule::Ramp { angle: st.num("data", "angle", 0.0)?.to_radians(), slope: st.num("data", "slope", 1.0)? }
        }
        "psi" => DataRule::Psi,
        "psi_bound" => DataRule::PsiBound,
        _ => return Err(st.invalid("data", "rule", "expected ramp, psi or psi_bound").into()),
    };
    let tail = match st.raw("quadrature", "tail") {
        None | Some(("auto", _)) => None,
        Some(_) => Some(quadrature(st, &FarField::None, None)?.tail),
    };
    let setup = ScalingSetup {
        data,
        h_divisor: st.num("domain", "h_divisor", 32.0)?,
        tail,
        solver: solver(st)?,
        summation: quadrature(st, &FarField::None, Some(TailPolicy::None))?.summation,
    };
    let dir = out_dir(st)?;
    let rep = scaling_experiment(&k, &pot, &r_list, &setup)?;
    write(&dir, "scaling.csv", &rep.to_csv())?;
    write(&dir, "scaling_verdict.txt", &rep.verdict_text())?;
    write(&dir, "scaling.dat", &rep.gnuplot())?;
    Ok(Verdict {
        passed: rep.passed,
        summary: format!(
            "scaling {}: fitted exponent {:.4} +- {:.4}, predicted {}{}: {}",
            k.label(),
            rep.fit.slope,
            rep.fit.stderr,
            rep.predicted_exponent,
            if rep.complete { "" } else { " (incomplete)" },
            pass_fail(rep.passed)
        ),
    })
}

fn perturb(st: &Settings) -> Res<Verdict> {
    let k = kernel(st)?;
    let pot = potential(st)?;
    let r_list = st.list("experiment", "R_list", &[8.0, 16.0, 32.0, 64.0])?;
    let d = PerturbationSetup::default();
    let setup = PerturbationSetup {
        width: st.num("experiment", "width", d.width)?,
        center_fraction: st.num("experiment", "center_fraction", d.center_fraction)?,
        h: st.num("experiment", "h", d.h)?,
        amplitude: st.num("experiment", "amplitude", d.amplitude)?,
        tail: quadrature(st, &FarField::None, Some(d.tail))?.tail,
    };
    let dir = out_dir(st)?;
    let rep = perturbation_experiment(&k, &pot, &r_list, &setup)?;
    write(&dir, "perturbation.csv", &rep.to_csv())?;
    write(&dir, "perturbation_verdict.txt", &rep.verdict_text())?;
    write(&dir, "perturbation.dat", &rep.gnuplot())?;
    Ok(Verdict {
        passed: rep.passed,
        summary: format!(
            "perturb {}: slope {:.4} +- {:.4} (expected -2): {}",
            k.label(),
            rep.fit.slope,
            rep.fit.stderr,
            pass_fail(rep.passed)
        ),
    })
}

fn symmetry(st: &Settings) -> Res<Verdict> {
    let threshold = st.num("experiment", "residual_threshold", 0.02)?;
    let dir = out_dir(st)?;
    let (diag, offset) = match read_grid(st, 2)? {
        Some(g) => (symmetry_diagnostic(&g)?, None),
        None => {
            let k = kernel(st)?;
            if k.n != 2 {
                return Err(st.invalid("kernel", "n", "the symmetry command needs n = 2").into());
            }
            let pot = potential(st)?;
            let d = RampMinimizerSetup::default();
            let setup = RampMinimizerSetup {
                r: st.num("domain", "R", d.r)?,
                h: st.num("domain", "h", d.h)?,
                angle: st.num("data", "angle", d.angle.to_degrees())?.to_radians(),
                length: st.num("data", "length", d.length)?,
                solver: solver(st)?,
            };
            let (res, diag) = ramp_minimizer_symmetry(&k, &pot, &setup)?;
            write(&dir, "minimizer.grid", &res.u.to_text())?;
            write(&dir, "trace.csv", &res.trace_csv())?;
            let off = line_angle_between(diag.angle, setup.angle).to_degrees();
            (diag, Some(off))
        }
    };
    let passed = diag.residual < threshold && offset.map_or(true, |o| o < 2.0);
    let mut text = diag.verdict_text();
    text.push_str(&format!("residual_threshold = {threshold}\n"));
    if let Some(o) = offset {
        text.push_str(&format!("direction_offset_deg = {}\n", fmt17(o)));
    }
    text.push_str(&format!("verdict = {}\n", pass_fail(passed)));
    write(&dir, "symmetry.txt", &text)?;
    write(&dir, "symmetry_profile.csv", &diag.profile_csv())?;
    Ok(Verdict {
        passed,
        summary: format!(
            "symmetry: residual {:.5} at {:.3} deg{}: {}",
            diag.residual,
            diag.angle.to_degrees(),
            offset.map_or(String::new(), |o| format!(", {o:.3} deg from the data direction")),
            pass_fail(passed)
        ),
    })
}

fn checks(st: &Settings) -> Res<Verdict> {
    let seed = st.int("experiment", "seed", 0)?;
    let samples = st.int("experiment", "sample_count", 10_000)? as usize;
    let pairs = st.int("experiment", "pairs", 100)? as usize;
    let n = st.get::<usize>("kernel", "n", "1 or 2")?.unwrap_or(1);
    let s = st.num("kernel", "s", 0.5)?;
    let lib = |e: nlphase::Error| CliError::Config(ConfigError(format!("[kernel]: {e}")));
    let pl = |p: f64| KernelParams::p_laplacian(n, s, p).map_err(lib);
    let mc = KernelParams::mean_curvature(n, s).map_err(lib)?;
    let dir = out_dir(st)?;

    let mut reports = Vec::new();
    for k in [pl(2.0)?, mc.clone()] {
        reports.push(convexity_suite(&k, samples, seed)?);
    }
    reports.push(appendix_inequality_suite(50, seed));
    reports.push(submodularity_suite(&[pl(1.5)?, pl(2.0)?, pl(3.0)?, mc.clone()], pairs, seed)?);
    for k in [pl(2.0)?, mc] {
        reports.push(gradient_check(&k, 20, seed)?);
    }
    let radii = [8.0, 16.0, 32.0, 64.0];
    let mut tails = Vec::new();
    for (nn, ss) in [(1, 0.25), (1, 0.5), (1, 0.75), (2, 0.25), (2, 0.5), (2, 0.75)] {
        tails.push(tail_estimate_check(nn, ss, 2.0, &radii, 0.25)?);
    }
    let mut text = String::new();
    for r in &reports {
        text.push_str(&r.to_text());
        text.push('\n');
    }
    let mut csv = String::from("n,sp,predicted,fitted,stderr,passed\n");
    for t in &tails {
        text.push_str(&t.verdict_text());
        text.push('\n');
        let n = &t.params[0].1;
        let sp: f64 = t.params[1].1.parse::<f64>().unwrap() * 2.0;
        csv.push_str(&format!(
            "{n},{},{},{},{},{}\n",
            fmt17(sp),
            fmt17(t.predicted_exponent),
            fmt17(t.fit.slope),
            fmt17(t.fit.stderr),
            t.passed
        ));
    }
    let passed = reports.iter().all(|r| r.passed()) && tails.iter().all(|t| t.passed);
    text.push_str(&format!("overall = {}\n", pass_fail(passed)));
    write(&dir, "checks.txt", &text)?;
    write(&dir, "tail_estimate.csv", &csv)?;
    let suites_ok = reports.iter().filter(|r| r.passed()).count();
    let tails_ok = tails.iter().filter(|t| t.passed).count();
    Ok(Verdict {
        passed,
        summary: format!(
            "checks: {suites_ok}/{} property suites and {tails_ok}/{} tail fits pass: {}",
            reports.len(),
            tails.len(),
            pass_fail(passed)
        ),
    })
}
