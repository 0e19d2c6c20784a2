//! Interaction functions F(t, x) for the nonlocal kinetic term.
//!
//! `t` is a difference of values u(x) - u(y) and `x` the displacement x - y.
//! Two families are built in: the fractional p-Laplacian interaction
//! `|t|^p / (p |x|^(n+sp))` and the nonlocal mean-curvature interaction
//! `|x|^-(n+s-1) * Gcal(t/|x|)`, where `Gcal'' = g = (1+r^2)^(-(n+s+1)/2)`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::beta::{beta, beta_reg};

use crate::error::{usage, Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// User supplied interaction. The auditor is the only check on its claims.
#[derive(Clone)]
pub struct CustomKernel {
    pub name: String,
    pub f: ScalarFn,
    pub df_dt: ScalarFn,
}

impl fmt::Debug for CustomKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomKernel").field("name", &self.name).finish()
    }
}

#[derive(Clone, Debug)]
pub enum Family {
    PLaplacian,
    MeanCurvature,
    Custom(CustomKernel),
}

/// Declared structural constants of a kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constants {
    pub c_star: f64,
    pub c_upper: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Helper {
    /// g(r) = (1 + r^2)^(-a)
    Weight,
    /// G(t) = int_0^t g
    Primitive,
    /// Gcal(t) = int_0^t G = int_0^t (t - r) g(r) dr
    SecondPrimitive,
}

/// Closed-form machinery for the mean-curvature profile functions.
#[derive(Clone, Copy, Debug)]
pub(crate) struct CurvatureProfile {
    a: f64,
    half_beta: f64,
}

const SERIES_CUTOFF: f64 = 0.25;

impl CurvatureProfile {
    fn new(n: usize, s: f64) -> Self {
        let a = (n as f64 + s + 1.0) / 2.0;
        CurvatureProfile { a, half_beta: 0.5 * beta(0.5, a - 0.5) }
    }

    #[inline]
    pub(crate) fn g(&self, r: f64) -> f64 {
        (1.0 + r * r).powf(-self.a)
    }

    /// G(inf)
    pub(crate) fn limit(&self) -> f64 {
        self.half_beta
    }

    // Binomial series of g integrated once (k = 1) or twice (k = 2); used near
    // zero where the closed forms cancel.
    fn series(&self, t: f64, twice: bool) -> f64 {
        let t2 = t * t;
        let mut coef = 1.0;
        let mut pow = if twice { t2 } else { t };
        let mut sum = 0.0;
        for k in 0..200 {
            let kf = k as f64;
            let denom = if twice { (2.0 * kf + 1.0) * (2.0 * kf + 2.0) } else { 2.0 * kf + 1.0 };
            let term = coef * pow / denom;
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
            coef *= (-self.a - kf) / (kf + 1.0);
            pow *= t2;
        }
        sum
    }

    pub(crate) fn primitive(&self, tau: f64) -> f64 {
        let m = tau.abs();
        if m == 0.0 {
            return 0.0;
        }
        let v = if m < SERIES_CUTOFF {
            self.series(m, false)
        } else {
            let u = m * m / (1.0 + m * m);
            beta_reg(0.5, self.a - 0.5, u) * self.half_beta
        };
        v.copysign(tau)
    }

    pub(crate) fn second_primitive(&self, t: f64) -> f64 {
        let m = t.abs();
        if m < SERIES_CUTOFF {
            return self.series(m, true);
        }
        let b = 1.0 - self.a;
        // ((1+m^2)^b - 1) / (2b), stable as b -> 0
        let tail = (b * (m * m).ln_1p()).exp_m1() / (2.0 * b);
        m * self.primitive(m) - tail
    }
}

#[derive(Clone, Debug)]
pub struct KernelParams {
    pub family: Family,
    pub n: usize,
    pub s: f64,
    pub p: f64,
    pub c_star: f64,
    pub c_upper: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub(crate) curvature: Option<CurvatureProfile>,
}

fn check_ns(n: usize, s: f64) -> Result<()> {
    if n != 1 && n != 2 {
        return usage(format!("dimension n = {n} not supported (1 or 2)"));
    }
    if !(s > 0.0 && s < 1.0) {
        return usage(format!("s = {s} must lie in (0, 1)"));
    }
    Ok(())
}

impl KernelParams {
    pub fn p_laplacian(n: usize, s: f64, p: f64) -> Result<Self> {
        check_ns(n, s)?;
        if !(p >= 1.0 && p.is_finite()) {
            return usage(format!("p = {p} must be >= 1"));
        }
        let m = n as f64 + s * p;
        Ok(KernelParams {
            family: Family::PLaplacian,
            n,
            s,
            p,
            c_star: 1.0 / p,
            c_upper: 1.0 / p,
            c1: m,
            c2: m * (m + 1.0),
            c3: 1.0,
            curvature: None,
        })
    }

    pub fn mean_curvature(n: usize, s: f64) -> Result<Self> {
        check_ns(n, s)?;
        let prof = CurvatureProfile::new(n, s);
        // inf of g over [0, 1], sampled as documented
        let c_star = (0..1000).map(|i| prof.g(i as f64 / 999.0)).fold(f64::INFINITY, f64::min);
        let ns = n as f64 + s;
        Ok(KernelParams {
            family: Family::MeanCurvature,
            n,
            s,
            p: 1.0,
            c_star,
            c_upper: prof.limit(),
            c1: ns + 1.0,
            c2: ns * (ns + 3.0) + 2.0,
            c3: prof.limit(),
            curvature: Some(prof),
        })
    }

    pub fn custom(kernel: CustomKernel, n: usize, s: f64, p: f64, c: Constants) -> Result<Self> {
        check_ns(n, s)?;
        if !(p >= 1.0) {
            return usage(format!("p = {p} must be >= 1"));
        }
        let k = KernelParams {
            family: Family::Custom(kernel),
            n,
            s,
            p,
            c_star: c.c_star,
            c_upper: c.c_upper,
            c1: c.c1,
            c2: c.c2,
            c3: c.c3,
            curvature: None,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        check_ns(self.n, self.s)?;
        if !(self.p >= 1.0) {
            return usage("p must be >= 1");
        }
        if matches!(self.family, Family::MeanCurvature) && self.p != 1.0 {
            return usage("mean-curvature kernel requires p = 1");
        }
        let cs = [self.c_star, self.c_upper, self.c1, self.c2, self.c3];
        if cs.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return usage("kernel constants must be positive and finite");
        }
        if self.c_star > self.c_upper {
            return usage("c_star must not exceed c_upper");
        }
        Ok(())
    }

    pub fn constants(&self) -> Constants {
        Constants { c_star: self.c_star, c_upper: self.c_upper, c1: self.c1, c2: self.c2, c3: self.c3 }
    }

    pub fn label(&self) -> String {
        match &self.family {
            Family::PLaplacian => format!("pLaplacian(n={}, s={}, p={})", self.n, self.s, self.p),
            Family::MeanCurvature => format!("meanCurvature(n={}, s={})", self.n, self.s),
            Family::Custom(c) => format!("custom:{}(n={}, s={}, p={})", c.name, self.n, self.s, self.p),
        }
    }

    /// n + s p, the homogeneity of the singular part.
    pub fn order(&self) -> f64 {
        self.n as f64 + self.s * self.p
    }

    pub fn is_builtin(&self) -> bool {
        !matches!(self.family, Family::Custom(_))
    }

    /// `Some(p)` when F(t, x) = (|t|^p / p) |x|^-(n+sp), so pair weights can be tabulated.
    pub fn separable_power(&self) -> Option<f64> {
        match self.family {
            Family::PLaplacian => Some(self.p),
            _ => None,
        }
    }

    fn checked_norm(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n {
            return usage(format!("displacement has {} components, expected {}", x.len(), self.n));
        }
        let r = norm(x);
        if !(r > 0.0) {
            return Err(Error::Domain("F is defined on R x (R^n \\ {0}); got x = 0".into()));
        }
        Ok(r)
    }

    pub fn eval_f(&self, t: f64, x: &[f64]) -> Result<f64> {
        let r = self.checked_norm(x)?;
        Ok(self.f_at(t, x, r))
    }

    pub fn eval_df_dt(&self, t: f64, x: &[f64]) -> Result<f64> {
        let r = self.checked_norm(x)?;
        Ok(self.df_at(t, x, r))
    }

    /// F with |x| = r already known and nonzero.
    #[inline]
    pub(crate) fn f_at(&self, t: f64, x: &[f64], r: f64) -> f64 {
        match &self.family {
            Family::PLaplacian => t_power(t, self.p) * r.powf(-self.order()),
            Family::MeanCurvature => {
                let prof = self.curvature.as_ref().unwrap();
                prof.second_primitive(t / r) * r.powf(-(self.n as f64 + self.s - 1.0))
            }
            Family::Custom(c) => (c.f)(t, x),
        }
    }

    #[inline]
    pub(crate) fn df_at(&self, t: f64, x: &[f64], r: f64) -> f64 {
        match &self.family {
            Family::PLaplacian => t_power_deriv(t, self.p) * r.powf(-self.order()),
            Family::MeanCurvature => {
                let prof = self.curvature.as_ref().unwrap();
                prof.primitive(t / r) * r.powf(-(self.n as f64 + self.s))
            }
            Family::Custom(c) => (c.df_dt)(t, x),
        }
    }

    /// Analytic d/dx_i F and d^2/dx_i^2 F for the built-in families.
    pub fn eval_dx(&self, t: f64, x: &[f64]) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let r = self.checked_norm(x)?;
        let f = self.f_at(t, x, r);
        let (dr, drr) = match &self.family {
            Family::PLaplacian => {
                let m = self.order();
                (-m * f / r, m * (m + 1.0) * f / (r * r))
            }
            Family::MeanCurvature => {
                let prof = self.curvature.as_ref().unwrap();
                let k = self.n as f64 + self.s - 1.0;
                let tau = t / r;
                let gc = prof.second_primitive(tau);
                let tg = tau * prof.primitive(tau);
                let ttg = tau * tau * prof.g(tau);
                let rk = r.powf(-k);
                (-rk / r * (k * gc + tg), rk / (r * r) * ((k + 1.0) * k * gc + (2.0 * k + 2.0) * tg + ttg))
            }
            Family::Custom(_) => return Ok(None),
        };
        let mut first = Vec::with_capacity(self.n);
        let mut second = Vec::with_capacity(self.n);
        for &xi in x {
            let c = xi / r;
            first.push(dr * c);
            second.push(drr * c * c + dr * (1.0 - c * c) / r);
        }
        Ok(Some((first, second)))
    }

    /// The mean-curvature profile functions by adaptive quadrature (absolute
    /// tolerance 1e-10). Independent of the closed forms used in `eval_f`.
    pub fn eval_helpers(&self, value: f64, which: Helper) -> Result<f64> {
        let prof = match (&self.family, &self.curvature) {
            (Family::MeanCurvature, Some(p)) => *p,
            _ => return usage("profile helpers exist only for the mean-curvature kernel"),
        };
        let g = move |r: f64| prof.g(r);
        Ok(match which {
            Helper::Weight => g(value),
            Helper::Primitive => quadrature::integrate(g, 0.0, value, 1e-10).integral,
            Helper::SecondPrimitive => {
                let m = value.abs();
                quadrature::integrate(|r| (m - r) * g(r), 0.0, m, 1e-10).integral
            }
        })
    }

    /// Closed-form (incomplete beta) evaluation of the same helpers.
    pub fn helper_closed_form(&self, value: f64, which: Helper) -> Result<f64> {
        let prof = match (&self.family, &self.curvature) {
            (Family::MeanCurvature, Some(p)) => p,
            _ => return usage("profile helpers exist only for the mean-curvature kernel"),
        };
        Ok(match which {
            Helper::Weight => prof.g(value),
            Helper::Primitive => prof.primitive(value),
            Helper::SecondPrimitive => prof.second_primitive(value),
        })
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    match x.len() {
        1 => x[0].abs(),
        2 => x[0].hypot(x[1]),
        _ => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// |t|^p / p
#[inline]
pub(crate) fn t_power(t: f64, p: f64) -> f64 {
    if p == 2.0 {
        0.5 * t * t
    } else {
        t.abs().powf(p) / p
    }
}

/// |t|^(p-2) t, with the principal-value convention 0 at t = 0.
#[inline]
pub(crate) fn t_power_deriv(t: f64, p: f64) -> f64 {
    if p == 2.0 {
        t
    } else if t == 0.0 {
        0.0
    } else {
        t.abs().powf(p - 1.0).copysign(t)
    }
}

// ---------------------------------------------------------------------------
// Auditor

/// Sampling ranges and tolerances for `audit_with`.
#[derive(Clone, Debug)]
pub struct AuditConfig {
    pub sample_count: usize,
    pub seed: u64,
    pub t_max: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub rel_tol: f64,
    pub fd_step: f64,
    pub fd_tol: f64,
    /// Smallest |t| used in the t-derivative consistency check.
    pub t_floor: f64,
    /// Smallest gap T - tau in the strict monotonicity check.
    pub strict_gap: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            sample_count: 10_000,
            seed: 0,
            t_max: 4.0,
            r_min: 0.1,
            r_max: 10.0,
            rel_tol: 1e-9,
            fd_step: 1e-5,
            fd_tol: 1e-6,
            t_floor: 0.05,
            strict_gap: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AuditItem {
    pub id: &'static str,
    pub description: &'static str,
    pub passed: bool,
    pub samples: usize,
    /// Smallest slack seen (relative); negative beyond tolerance means violated.
    pub worst_margin: f64,
    pub worst_sample: String,
}

#[derive(Clone, Debug)]
pub struct AuditReport {
    pub kernel: String,
    pub items: Vec<AuditItem>,
    pub convexity: AuditItem,
}

impl AuditReport {
    pub fn assumption_counts(&self) -> (usize, usize) {
        (self.items.iter().filter(|i| i.passed).count(), self.items.len())
    }

    pub fn all_passed(&self) -> bool {
        self.items.iter().all(|i| i.passed) && self.convexity.passed
    }

    pub fn item(&self, id: &str) -> Option<&AuditItem> {
        self.items.iter().chain(std::iter::once(&self.convexity)).find(|i| i.id == id)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("kernel: {}\n", self.kernel);
        for it in self.items.iter().chain(std::iter::once(&self.convexity)) {
            out.push_str(&format!(
                "({}) {:<44} {} worst_margin={:.6e} samples={}{}\n",
                it.id,
                it.description,
                if it.passed { "PASS" } else { "FAIL" },
                it.worst_margin,
                it.samples,
                if it.passed { String::new() } else { format!(" at {}", it.worst_sample) }
            ));
        }
        let (ok, total) = self.assumption_counts();
        out.push_str(&format!(
            "assumption items: {ok}/{total} pass; convexity: {}\n",
            if self.convexity.passed { "pass" } else { "fail" }
        ));
        out
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for it in self.items.iter().chain(std::iter::once(&self.convexity)) {
            out.push_str(&format!(
                "item={} pass={} worst_margin={:.17e} worst_sample=\"{}\"\n",
                it.id, it.passed, it.worst_margin, it.worst_sample
            ));
        }
        out
    }
}

/// Audit with the documented default ranges.
pub fn audit_assumptions(k: &KernelParams, sample_count: usize, seed: u64) -> AuditReport {
    audit_with(k, &AuditConfig { sample_count: sample_count.max(1), seed, ..AuditConfig::default() })
}

struct Tracker {
    id: &'static str,
    description: &'static str,
    pass_threshold: f64,
    samples: usize,
    worst: f64,
    worst_sample: String,
}

impl Tracker {
    fn new(id: &'static str, description: &'static str, pass_threshold: f64) -> Self {
        Tracker { id, description, pass_threshold, samples: 0, worst: f64::INFINITY, worst_sample: String::new() }
    }

    fn record(&mut self, margin: f64, sample: impl FnOnce() -> String) {
        self.samples += 1;
        let m = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        if m < self.worst {
            self.worst = m;
            self.worst_sample = sample();
        }
    }

    fn finish(self) -> AuditItem {
        AuditItem {
            id: self.id,
            description: self.description,
            passed: self.worst >= self.pass_threshold,
            samples: self.samples,
            worst_margin: self.worst,
            worst_sample: self.worst_sample,
        }
    }
}

/// Relative slack of `lhs <= rhs`.
fn slack(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else {
        (rhs - lhs) / scale
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    n: usize,
    cfg: AuditConfig,
}

impl Sampler {
    fn t(&mut self) -> f64 {
        self.rng.random_range(-self.cfg.t_max..=self.cfg.t_max)
    }

    fn radius(&mut self) -> f64 {
        let (a, b) = (self.cfg.r_min.ln(), self.cfg.r_max.ln());
        self.rng.random_range(a..=b).exp()
    }

    fn x_with_radius(&mut self, r: f64) -> Vec<f64> {
        if self.n == 1 {
            vec![if self.rng.random::<bool>() { r } else { -r }]
        } else {
            let th = self.rng.random_range(0.0..std::f64::consts::TAU);
            vec![r * th.cos(), r * th.sin()]
        }
    }

    fn x(&mut self) -> Vec<f64> {
        let r = self.radius();
        self.x_with_radius(r)
    }
}

/// x-derivatives, analytic for built-ins and by central differences otherwise.
fn x_derivatives(k: &KernelParams, t: f64, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    if let Ok(Some(d)) = k.eval_dx(t, x) {
        return d;
    }
    let r = norm(x);
    let d = 1e-4 * r;
    let mut first = vec![0.0; x.len()];
    let mut second = vec![0.0; x.len()];
    let f0 = k.f_at(t, x, r);
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += d;
        xm[i] -= d;
        let fp = k.f_at(t, &xp, norm(&xp));
        let fm = k.f_at(t, &xm, norm(&xm));
        first[i] = (fp - fm) / (2.0 * d);
        second[i] = (fp - 2.0 * f0 + fm) / (d * d);
    }
    (first, second)
}

pub fn audit_with(k: &KernelParams, cfg: &AuditConfig) -> AuditReport {
    let n = k.n;
    let p = k.p;
    let m = k.order();
    let tol = -cfg.rel_tol;
    let mut smp = Sampler { rng: ChaCha8Rng::seed_from_u64(cfg.seed), n, cfg: cfg.clone() };
    let f = |t: f64, x: &[f64]| k.f_at(t, x, norm(x));
    let df = |t: f64, x: &[f64]| k.df_at(t, x, norm(x));
    let count = cfg.sample_count;

    let mut items = Vec::with_capacity(11);

    let mut tr = Tracker::new("2.1", "symmetry F(t,x)=F(-t,x)=F(-t,-x)", 0.0);
    for _ in 0..count {
        let (t, x) = (smp.t(), smp.x());
        let xm: Vec<f64> = x.iter().map(|v| -v).collect();
        let (a, b, c) = (f(t, &x), f(-t, &x), f(-t, &xm));
        let exact = a.to_bits() == b.to_bits() && b.to_bits() == c.to_bits();
        let margin = if exact { 0.0 } else { -slack(a.max(b).max(c), a.min(b).min(c)).abs().max(f64::MIN_POSITIVE) };
        tr.record(margin, || format!("t={t:e} x={x:?}"));
    }
    items.push(tr.finish());

    let mut tr = Tracker::new("2.2", "monotone in |t|", tol);
    for _ in 0..count {
        let (mut t1, mut t2, x) = (smp.t(), smp.t(), smp.x());
        if t1.abs() > t2.abs() {
            std::mem::swap(&mut t1, &mut t2);
        }
        tr.record(slack(f(t1, &x), f(t2, &x)), || format!("t1={t1:e} t2={t2:e} x={x:?}"));
    }
    items.push(tr.finish());

    let mut tr = Tracker::new("2.3", "nonincreasing in |x|", tol);
    for _ in 0..count {
        let t = smp.t();
        let (mut r1, mut r2) = (smp.radius(), smp.radius());
        if r1 < r2 {
            std::mem::swap(&mut r1, &mut r2);
        }
        let (x1, x2) = (smp.x_with_radius(r1), smp.x_with_radius(r2));
        tr.record(slack(f(t, &x1), f(t, &x2)), || format!("t={t:e} x1={x1:?} x2={x2:?}"));
    }
    items.push(tr.finish());

    let mut tr = Tracker::new("2.4", "F(t,ax) <= a^(-n-sp-1) F(t,x)", tol);
    for _ in 0..count {
        let (t, x) = (smp.t(), smp.x());
        let alpha = 1.0 - smp.rng.random::<f64>();
        let xa: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        tr.record(slack(f(t, &xa), alpha.powf(-m - 1.0) * f(t, &x)), || format!("t={t:e} x={x:?} alpha={alpha:e}"));
    }
    items.push(tr.finish());

    let mut tr = Tracker::new("2.5", "two-sided power bounds", tol);
    for _ in 0..count {
        let (t, x) = (smp.t(), smp.x());
        let r = norm(&x);
        let v = f(t, &x);
        let pow = t.abs().powf(p) / r.powf(m);
        let lower = k.c_star * (pow - r.powf(-(m - p)));
        let upper = k.c_upper * pow;
        tr.record(slack(lower, v).min(slack(v, upper)), || format!("t={t:e} x={x:?}"));
    }
    items.push(tr.finish());

    // C^2 in x: analytic derivatives agree with differences of F and of dF
    let mut tr = Tracker::new("2.6", "C^2 in x (difference consistency)", 0.0);
    for _ in 0..count {
        let (t, x) = (smp.t(), smp.x());
        let r = norm(&x);
        let v = f(t, &x);
        let d = cfg.fd_step * r;
        let (first, second) = x_derivatives(k, t, &x);
        // built-ins: analytic vs difference, within fd_tol; custom: the second
        // difference must be stable under halving the step, within 1e-4
        let mut margin = f64::INFINITY;
        for i in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += d;
            xm[i] -= d;
            let s1 = first[i].abs().max(v / r);
            let s2 = second[i].abs().max(v / (r * r));
            if v == 0.0 {
                continue;
            }
            if k.is_builtin() {
                let fd1 = (f(t, &xp) - f(t, &xm)) / (2.0 * d);
                let (dp, _) = x_derivatives(k, t, &xp);
                let (dm, _) = x_derivatives(k, t, &xm);
                let fd2 = (dp[i] - dm[i]) / (2.0 * d);
                let err = ((fd1 - first[i]) / s1).abs().max(((fd2 - second[i]) / s2).abs());
                margin = margin.min(cfg.fd_tol - err);
            } else {
                let half = 0.5e-4 * r;
                let mut xph = x.clone();
                let mut xmh = x.clone();
                xph[i] += half;
                xmh[i] -= half;
                let fd2h = (f(t, &xph) - 2.0 * v + f(t, &xmh)) / (half * half);
                margin = margin.min(1e-4 - ((fd2h - second[i]) / s2).abs());
            }
        }
        tr.record(margin.min(1.0), || format!("t={t:e} x={x:?}"));
    }
    items.push(tr.finish());

    let mut tr = Tracker::new("2.7", "|dF/dx_i| <= c1 F/|x|", tol);
    let mut tr8 = Tracker::new("2.8", "|d2F/dx_i2| <= c2 F/|x|^2", tol);
    for _ in 0..count {
        let (t, x) = (smp.t(), smp.x());
        let r = norm(&x);
        let v = f(t, &x);
        let (first, second) = x_derivatives(k, t, &x);
        let m7 = first.iter().map(|d| slack(d.abs(), k.c1 * v / r)).fold(f64::INFINITY, f64::min);
        let m8 = second.iter().map(|d| slack(d.abs(), k.c2 * v / (r * r))).fold(f64::INFINITY, f64::min);
        tr.record(m7, || format!("t={t:e} x={x:?}"));
        tr8.record(m8, || format!("t={t:e} x={x:?}"));
    }
    items.push(tr.finish());
    items.push(tr8.finish());

    let mut tr = Tracker::new("2.9", "C^1 in t (difference consistency)", 0.0);
    for _ in 0..count {
        let mag = smp.rng.random_range(cfg.t_floor..=cfg.t_max);
        let t = if smp.rng.random::<bool>() { mag } else { -mag };
        let x = smp.x();
        let d = cfg.fd_step;
        let a = df(t, &x);
        let fd = (f(t + d, &x) - f(t - d, &x)) / (2.0 * d);
        let err = if a == 0.0 && fd == 0.0 { 0.0 } else { ((fd - a) / a.abs().max(fd.abs())).abs() };
        tr.record(cfg.fd_tol - err, || format!("t={t:e} x={x:?} err={err:e}"));
    }
    items.push(tr.finish());

    let mut tr = Tracker::new("2.10", "|dF/dt| <= c3 |t|^(p-1)/|x|^(n+sp)", tol);
    for _ in 0..count {
        let (t, x) = (smp.t(), smp.x());
        let r = norm(&x);
        let bound = k.c3 * t.abs().powf(p - 1.0) / r.powf(m);
        tr.record(slack(df(t, &x).abs(), bound), || format!("t={t:e} x={x:?}"));
    }
    items.push(tr.finish());

    // strict: the margin must be positive, no tolerance
    let mut tr = Tracker::new("2.11", "dF/dt strictly increasing in t", f64::MIN_POSITIVE);
    for i in 0..count {
        let tau = smp.t();
        let gap = if i % 2 == 0 {
            smp.rng.random_range(cfg.strict_gap.ln()..=(2.0 * cfg.t_max).ln()).exp()
        } else {
            smp.rng.random_range(cfg.strict_gap..=2.0 * cfg.t_max)
        };
        let big_t = tau + gap;
        let x = smp.x();
        let (a, b) = (df(big_t, &x), df(tau, &x));
        let margin = if a > b { slack(b, a).max(f64::MIN_POSITIVE) } else { slack(b, a).min(0.0) };
        tr.record(margin, || format!("T={big_t:e} tau={tau:e} x={x:?}"));
    }
    items.push(tr.finish());

    let mut tr = Tracker::new("4.14", "convexity in t", tol);
    for i in 0..count {
        let (t, tau, x) = (smp.t(), smp.t(), smp.x());
        let lam = match i {
            0 => 0.0,
            1 => 1.0,
            _ => smp.rng.random::<f64>(),
        };
        let lhs = f(lam * t + (1.0 - lam) * tau, &x);
        let rhs = lam * f(t, &x) + (1.0 - lam) * f(tau, &x);
        tr.record(slack(lhs, rhs), || format!("lambda={lam:e} t={t:e} tau={tau:e} x={x:?}"));
    }
    let convexity = tr.finish();

    AuditReport { kernel: k.label(), items, convexity }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_laplacian_values() {
        let k = KernelParams::p_laplacian(1, 0.5, 2.0).unwrap();
        assert_eq!(k.eval_f(1.0, &[1.0]).unwrap(), 0.5);
        assert_eq!(k.eval_df_dt(1.0, &[1.0]).unwrap(), 1.0);
        assert_eq!(k.eval_f(0.0, &[0.3]).unwrap(), 0.0);
        assert!(matches!(k.eval_f(1.0, &[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn principal_value_at_zero() {
        let k = KernelParams::p_laplacian(2, 0.3, 1.5).unwrap();
        assert_eq!(k.eval_df_dt(0.0, &[0.2, 0.1]).unwrap(), 0.0);
        let k = KernelParams::mean_curvature(2, 0.3).unwrap();
        assert_eq!(k.eval_df_dt(0.0, &[0.2, 0.1]).unwrap(), 0.0);
    }

    #[test]
    fn curvature_constants() {
        let k = KernelParams::mean_curvature(1, 0.5).unwrap();
        // g(1) = 2^(-a), a = 1.25
        assert!((k.c_star - 2f64.powf(-1.25)).abs() < 1e-15);
        assert_eq!(k.p, 1.0);
        assert!(k.c_star <= k.c_upper);
    }

    #[test]
    fn helpers_require_curvature_family() {
        let k = KernelParams::p_laplacian(1, 0.5, 2.0).unwrap();
        assert!(matches!(k.eval_helpers(0.5, Helper::Weight), Err(Error::Usage(_))));
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for &(n, s) in &[(1, 0.1), (1, 0.5), (2, 0.75), (2, 0.99)] {
            let k = KernelParams::mean_curvature(n, s).unwrap();
            for &v in &[0.0, 1e-3, 0.1, 0.24, 0.26, 0.9, 2.5, 17.0] {
                for h in [Helper::Weight, Helper::Primitive, Helper::SecondPrimitive] {
                    let q = k.eval_helpers(v, h).unwrap();
                    let c = k.helper_closed_form(v, h).unwrap();
                    assert!((q - c).abs() <= 1e-10 * q.abs().max(1.0), "{n} {s} {v} {h:?}: {q} vs {c}");
                }
            }
        }
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(KernelParams::p_laplacian(3, 0.5, 2.0).is_err());
        assert!(KernelParams::p_laplacian(1, 1.0, 2.0).is_err());
        assert!(KernelParams::p_laplacian(1, 0.5, 0.5).is_err());
        let mut k = KernelParams::mean_curvature(1, 0.5).unwrap();
        k.p = 2.0;
        assert!(k.validate().is_err());
    }
}
