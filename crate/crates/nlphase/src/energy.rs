//! Discrete energy, its decomposition, Gagliardo-type seminorms and the first
//! variation.
//!
//! All double sums run over ordered pairs of distinct lattice nodes, each pair
//! weighted by h^(2n). Values beyond the box come from the far-field rule
//! through a tail term.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{usage, Error, Result};
use crate::grid::{Domain, FarField, GridFunction};
use crate::kernels::{t_power, t_power_deriv, Family, KernelParams};
use crate::potentials::Potential;
pub use crate::sum::Summation;
use crate::sum::{sum_with, Acc};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SelfPairPolicy {
    /// Drop the i = j cell pair.
    #[default]
    Exclude,
    /// Replace it by the cell-cell integral of a locally linear u (p-Laplacian
    /// kernels only; energies only).
    MidpointCorrection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TailPolicy {
    /// Closed-form upper envelope using |x - y| >= |y|/2; constant far field only.
    #[default]
    AnalyticConstant,
    /// Quadrature of the true kernel against the far-field rule beyond the box.
    Quadrature1d,
    None,
}

impl TailPolicy {
    /// Envelope for constant exterior data, quadrature otherwise.
    pub fn auto(ff: &FarField) -> TailPolicy {
        match ff {
            FarField::Constant(_) => TailPolicy::AnalyticConstant,
            FarField::None => TailPolicy::None,
            _ => TailPolicy::Quadrature1d,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct QuadratureConfig {
    pub self_pair: SelfPairPolicy,
    pub tail: TailPolicy,
    pub summation: Summation,
}

impl QuadratureConfig {
    pub fn with_tail(tail: TailPolicy) -> Self {
        QuadratureConfig { tail, ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBreakdown {
    pub interior_interior: f64,
    /// Includes the tail beyond the box.
    pub interior_exterior: f64,
    pub potential: f64,
    pub total: f64,
    /// The part of `interior_exterior` contributed by the tail.
    pub tail: f64,
    /// True when the tail is the upper-envelope surrogate.
    pub tail_is_envelope: bool,
}

impl EnergyBreakdown {
    fn new(ii: f64, ie: f64, pot: f64, tail: f64, envelope: bool) -> Self {
        EnergyBreakdown {
            interior_interior: ii,
            interior_exterior: ie,
            potential: pot,
            total: ii + ie + pot,
            tail,
            tail_is_envelope: envelope,
        }
    }

    pub fn kinetic(&self) -> f64 {
        self.interior_interior + self.interior_exterior
    }

    pub fn csv_header() -> &'static str {
        "R,h,interior_interior,interior_exterior,potential,total"
    }

    pub fn to_csv_row(&self, r: f64, h: f64) -> String {
        format!(
            "{},{},{},{},{},{}",
            fmt17(r),
            fmt17(h),
            fmt17(self.interior_interior),
            fmt17(self.interior_exterior),
            fmt17(self.potential),
            fmt17(self.total)
        )
    }
}

/// 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

// ---------------------------------------------------------------------------
// Quadrature nodes

pub(crate) fn gauss_legendre(deg: usize) -> Vec<(f64, f64)> {
    gauss_quad::GaussLegendre::new(deg).expect("valid degree").as_node_weight_pairs().to_vec()
}

/// Nodes and weights of `rule` mapped to [a, b].
pub(crate) fn panel(rule: &[(f64, f64)], a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
    rule.iter().map(move |&(x, w)| (m + r * x, r * w))
}

fn sphere_area(n: usize) -> f64 {
    if n == 1 {
        2.0
    } else {
        2.0 * PI
    }
}

// ---------------------------------------------------------------------------
// Pair geometry: per-offset radii and, for p-Laplacian kernels, weights

pub(crate) struct PairGeom {
    n: usize,
    na: usize,
    stride: usize,
    h: f64,
    radius: Vec<f64>,
    sep: Option<(f64, Vec<f64>)>,
}

impl PairGeom {
    pub(crate) fn new(dom: &Domain, k: &KernelParams) -> Self {
        let n = dom.n();
        let na = dom.per_axis();
        let stride = 2 * na - 1;
        let h = dom.h();
        let count = if n == 1 { stride } else { stride * stride };
        let radius: Vec<f64> = (0..count)
            .map(|o| {
                let d = Self::steps(n, na, stride, o);
                h * (d[0] as f64).hypot(d[1] as f64)
            })
            .collect();
        let sep = k.separable_power().map(|p| {
            let m = k.order();
            let w = radius.iter().map(|&r| if r > 0.0 { r.powf(-m) } else { 0.0 }).collect();
            (p, w)
        });
        PairGeom { n, na, stride, h, radius, sep }
    }

    #[inline]
    fn steps(n: usize, na: usize, stride: usize, o: usize) -> [isize; 2] {
        let c = na as isize - 1;
        if n == 1 {
            [o as isize - c, 0]
        } else {
            [(o / stride) as isize - c, (o % stride) as isize - c]
        }
    }

    /// Offset index of node a minus node b.
    #[inline]
    pub(crate) fn offset(&self, a: [usize; 2], b: [usize; 2]) -> usize {
        let c = self.na - 1;
        if self.n == 1 {
            a[0] + c - b[0]
        } else {
            (a[0] + c - b[0]) * self.stride + (a[1] + c - b[1])
        }
    }

    #[inline]
    fn disp(&self, o: usize) -> [f64; 2] {
        let d = Self::steps(self.n, self.na, self.stride, o);
        [d[0] as f64 * self.h, d[1] as f64 * self.h]
    }

    #[inline]
    pub(crate) fn f(&self, k: &KernelParams, t: f64, o: usize) -> f64 {
        if let Some((p, w)) = &self.sep {
            return t_power(t, *p) * w[o];
        }
        let d = self.disp(o);
        k.f_at(t, &d[..self.n], self.radius[o])
    }

    #[inline]
    pub(crate) fn df(&self, k: &KernelParams, t: f64, o: usize) -> f64 {
        if let Some((p, w)) = &self.sep {
            return t_power_deriv(t, *p) * w[o];
        }
        let d = self.disp(o);
        k.df_at(t, &d[..self.n], self.radius[o])
    }

    /// Pure distance weight |x|^-(n+sp) (0 on the diagonal).
    #[inline]
    pub(crate) fn weight(&self, o: usize, order: f64) -> f64 {
        match &self.sep {
            Some((_, w)) => w[o],
            None => {
                let r = self.radius[o];
                if r > 0.0 {
                    r.powf(-order)
                } else {
                    0.0
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Tail beyond the box

#[derive(Clone, Copy, Debug)]
struct TailPoint {
    y: [f64; 2],
    w: f64,
    phi: f64,
}

#[derive(Clone, Debug)]
enum Tail {
    None,
    /// T(t) = coef |t - c|^p
    Envelope {
        c: f64,
        coef: f64,
        p: f64,
    },
    Quadrature {
        pts: Vec<TailPoint>,
    },
}

impl Tail {
    fn build(dom: &Domain, ff: &FarField, k: &KernelParams, policy: TailPolicy) -> Result<Tail> {
        if policy == TailPolicy::None {
            return Ok(Tail::None);
        }
        if ff.is_none() {
            return usage("far-field rule 'none' requires tail policy 'none'");
        }
        let n = dom.n();
        let rb = dom.r_box();
        let sp = k.order() - n as f64;
        match policy {
            TailPolicy::AnalyticConstant => {
                let c = ff.constant_value().ok_or_else(|| {
                    Error::Usage("the analytic tail needs a constant far field; use quadrature_1d".into())
                })?;
                let coef = k.c_upper * 2f64.powf(k.order()) * sphere_area(n) * rb.powf(-sp) / sp;
                Ok(Tail::Envelope { c, coef, p: k.p })
            }
            TailPolicy::Quadrature1d => Ok(Tail::Quadrature { pts: tail_points(dom, ff, sp) }),
            TailPolicy::None => unreachable!(),
        }
    }

    fn is_envelope(&self) -> bool {
        matches!(self, Tail::Envelope { .. })
    }

    /// T_i(u): integral over |y| > R_box of F(u - phi(y), x - y).
    fn value(&self, k: &KernelParams, x: [f64; 2], u: f64) -> f64 {
        match self {
            Tail::None => 0.0,
            Tail::Envelope { c, coef, p } => coef * (u - c).abs().powf(*p),
            Tail::Quadrature { pts } => {
                let n = k.n;
                let mut acc = 0.0;
                for q in pts {
                    let d = [x[0] - q.y[0], x[1] - q.y[1]];
                    let r = d[0].hypot(d[1]);
                    acc += q.w * k.f_at(u - q.phi, &d[..n], r);
                }
                acc
            }
        }
    }

    fn deriv(&self, k: &KernelParams, x: [f64; 2], u: f64) -> f64 {
        match self {
            Tail::None => 0.0,
            Tail::Envelope { c, coef, p } => coef * p * t_power_deriv(u - c, *p),
            Tail::Quadrature { pts } => {
                let n = k.n;
                let mut acc = 0.0;
                for q in pts {
                    let d = [x[0] - q.y[0], x[1] - q.y[1]];
                    let r = d[0].hypot(d[1]);
                    acc += q.w * k.df_at(u - q.phi, &d[..n], r);
                }
                acc
            }
        }
    }

    /// (sum w, sum w phi, sum w phi^2) against the distance weight, for p = 2.
    fn moments(&self, k: &KernelParams, x: [f64; 2]) -> [f64; 3] {
        match self {
            Tail::None => [0.0; 3],
            Tail::Envelope { c, coef, .. } => {
                // coef (u-c)^2 = 2 c_upper K (u-c)^2 / 2
                let a = 2.0 * coef;
                [a, a * c, a * c * c]
            }
            Tail::Quadrature { pts } => {
                let m = k.order();
                let mut out = [0.0; 3];
                for q in pts {
                    let r = (x[0] - q.y[0]).hypot(x[1] - q.y[1]);
                    let w = q.w * r.powf(-m);
                    out[0] += w;
                    out[1] += w * q.phi;
                    out[2] += w * q.phi * q.phi;
                }
                out
            }
        }
    }
}

/// Points and weights for integrals over |y| > R_box. Radius r = R_box v^(-1/sp)
/// so that the r^(-1-sp) decay becomes a bounded integrand in v on (0, 1].
fn tail_points(dom: &Domain, ff: &FarField, sp: f64) -> Vec<TailPoint> {
    let n = dom.n();
    let rb = dom.r_box();
    let rule = gauss_legendre(16);
    let mut radial = Vec::new();
    for (a, b) in [(0.0, 1.0 / 64.0), (1.0 / 64.0, 1.0 / 8.0), (1.0 / 8.0, 1.0)] {
        for (v, wv) in panel(&rule, a, b) {
            let r = rb * v.powf(-1.0 / sp);
            let jac = rb / sp * v.powf(-1.0 / sp - 1.0);
            radial.push((r, wv * jac));
        }
    }
    let mut pts = Vec::new();
    if n == 1 {
        for &(r, w) in &radial {
            for y in [r, -r] {
                let phi = ff.eval(&[y]).expect("evaluable far field");
                pts.push(TailPoint { y: [y, 0.0], w, phi });
            }
        }
        return pts;
    }
    let profiles = ff.profiles();
    for &(r, w) in &radial {
        let mut cuts = vec![0.0, 0.5 * PI, PI, 1.5 * PI, 2.0 * PI];
        for p in &profiles {
            let beta = p.direction[1].atan2(p.direction[0]);
            for z in p.shape.kinks() {
                let c = (z + p.shift) / r;
                if c.abs() < 1.0 {
                    let a = c.acos();
                    for th in [beta + a, beta - a] {
                        cuts.push(th.rem_euclid(2.0 * PI));
                    }
                }
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        for win in cuts.windows(2) {
            for (th, wt) in panel(&rule, win[0], win[1]) {
                let y = [r * th.cos(), r * th.sin()];
                let phi = ff.eval(&y).expect("evaluable far field");
                pts.push(TailPoint { y, w: w * r * wt, phi });
            }
        }
    }
    pts
}

// ---------------------------------------------------------------------------
// Self-cell correction

/// Integral over a cell pair (C x C) of |g.(x-y)|^p / (p |x-y|^(n+sp)).
fn self_cell(n: usize, s: f64, p: f64, h: f64, g: [f64; 2]) -> f64 {
    let q = p - 1.0 - s * p;
    if n == 1 {
        return 2.0 / p * g[0].abs().powf(p) * h.powf(q + 2.0) / ((q + 1.0) * (q + 2.0));
    }
    let rule = gauss_legendre(16);
    let mut acc = 0.0;
    for k in 0..8 {
        let (a, b) = (k as f64 * PI / 4.0, (k + 1) as f64 * PI / 4.0);
        for (th, w) in panel(&rule, a, b) {
            let (c, sn) = (th.cos().abs(), th.sin().abs());
            let dir = (g[0] * th.cos() + g[1] * th.sin()).abs().powf(p) / p;
            let rm = h / c.max(sn);
            let radial = h * h * rm.powf(q + 1.0) / (q + 1.0) - h * (c + sn) * rm.powf(q + 2.0) / (q + 2.0)
                + c * sn * rm.powf(q + 3.0) / (q + 3.0);
            acc += w * dir * radial;
        }
    }
    acc
}

fn discrete_gradient(u: &GridFunction, idx: usize) -> [f64; 2] {
    let d = &u.domain;
    let mi = d.multi_index(idx);
    let na = d.per_axis();
    let mut g = [0.0; 2];
    for axis in 0..d.n() {
        let mut lo = mi;
        let mut hi = mi;
        let mut span = 0.0;
        if mi[axis] > 0 {
            lo[axis] -= 1;
            span += d.h();
        }
        if mi[axis] + 1 < na {
            hi[axis] += 1;
            span += d.h();
        }
        g[axis] = (u.values[d.flat_index(hi)] - u.values[d.flat_index(lo)]) / span;
    }
    g
}

// ---------------------------------------------------------------------------
// Reference evaluation by direct summation

struct RowTerms {
    ii: f64,
    ie: f64,
    tail: f64,
    pot: f64,
}

fn check_inputs(u: &GridFunction, k: &KernelParams) -> Result<()> {
    k.validate()?;
    if u.domain.n() != k.n {
        return usage(format!("kernel dimension {} does not match the lattice dimension {}", k.n, u.domain.n()));
    }
    Ok(())
}

/// Energy of u on B_R with exterior values fixed to the lattice data and the
/// far-field rule.
pub fn total_energy(
    u: &GridFunction,
    k: &KernelParams,
    pot: &Potential,
    q: &QuadratureConfig,
) -> Result<EnergyBreakdown> {
    check_inputs(u, k)?;
    let dom = &u.domain;
    if q.self_pair == SelfPairPolicy::MidpointCorrection && !matches!(k.family, Family::PLaplacian) {
        return usage("midpoint correction is available for p-Laplacian kernels only");
    }
    let tail = Tail::build(dom, &u.farfield, k, q.tail)?;
    let geom = PairGeom::new(dom, k);
    let interior = dom.interior_indices();
    let mask: Vec<bool> = (0..dom.len()).map(|i| dom.is_interior(i)).collect();
    let mi: Vec<[usize; 2]> = (0..dom.len()).map(|i| dom.multi_index(i)).collect();
    let vals = &u.values;
    let mode = q.summation;
    let rows: Vec<RowTerms> = interior
        .par_iter()
        .map(|&i| {
            let mut ii = Acc::new(mode);
            let mut ie = Acc::new(mode);
            let ui = vals[i];
            for j in 0..vals.len() {
                if j == i {
                    continue;
                }
                let f = geom.f(k, ui - vals[j], geom.offset(mi[i], mi[j]));
                if mask[j] {
                    ii.add(f);
                } else {
                    ie.add(f);
                }
            }
            RowTerms { ii: ii.value(), ie: ie.value(), tail: tail.value(k, dom.point(i), ui), pot: pot.eval_w(ui) }
        })
        .collect();
    let h2n = dom.cell_volume().powi(2);
    let hn = dom.cell_volume();
    let mut ii = h2n * sum_with(mode, rows.iter().map(|r| r.ii));
    let tail_sum = 2.0 * hn * sum_with(mode, rows.iter().map(|r| r.tail));
    let ie = 2.0 * h2n * sum_with(mode, rows.iter().map(|r| r.ie)) + tail_sum;
    let potential = hn * sum_with(mode, rows.iter().map(|r| r.pot));
    if q.self_pair == SelfPairPolicy::MidpointCorrection {
        let corr =
            sum_with(mode, interior.iter().map(|&i| self_cell(dom.n(), k.s, k.p, dom.h(), discrete_gradient(u, i))));
        ii += corr;
    }
    Ok(EnergyBreakdown::new(ii, ie, potential, tail_sum, tail.is_envelope()))
}

/// First variation at every interior node, in `interior_indices` order.
pub fn gradient(u: &GridFunction, k: &KernelParams, pot: &Potential, q: &QuadratureConfig) -> Result<Vec<f64>> {
    check_inputs(u, k)?;
    if q.self_pair == SelfPairPolicy::MidpointCorrection {
        return usage("midpoint correction is an energy-only policy; gradients use 'exclude'");
    }
    let dom = &u.domain;
    let tail = Tail::build(dom, &u.farfield, k, q.tail)?;
    let geom = PairGeom::new(dom, k);
    let mi: Vec<[usize; 2]> = (0..dom.len()).map(|i| dom.multi_index(i)).collect();
    let hn = dom.cell_volume();
    let vals = &u.values;
    let mode = q.summation;
    Ok(dom
        .interior_indices()
        .par_iter()
        .map(|&i| {
            let ui = vals[i];
            let mut acc = Acc::new(mode);
            for j in 0..vals.len() {
                if j != i {
                    acc.add(geom.df(k, ui - vals[j], geom.offset(mi[i], mi[j])));
                }
            }
            hn * (2.0 * hn * acc.value() + 2.0 * tail.deriv(k, dom.point(i), ui) + pot.eval_dw(ui))
        })
        .collect())
}

fn seminorm_sum(u: &GridFunction, k: &KernelParams, a: &[usize], b: &[usize], values_b: &[f64]) -> f64 {
    let dom = &u.domain;
    let geom = PairGeom::new(dom, k);
    let m = k.order();
    let p = k.p;
    let rows: Vec<f64> = a
        .par_iter()
        .map(|&i| {
            let mut acc = Acc::new(Summation::Compensated);
            let ma = dom.multi_index(i);
            for (&j, &vj) in b.iter().zip(values_b) {
                if i != j {
                    let o = geom.offset(ma, dom.multi_index(j));
                    acc.add((u.values[i] - vj).abs().powf(p) * geom.weight(o, m));
                }
            }
            acc.value()
        })
        .collect();
    sum_with(Summation::Compensated, rows) * dom.cell_volume().powi(2)
}

/// (sum over B_region x B_region of |u(x)-u(y)|^p / |x-y|^(n+sp))^(1/p)
pub fn gagliardo_seminorm(u: &GridFunction, region: f64, k: &KernelParams) -> Result<f64> {
    check_inputs(u, k)?;
    let dom = &u.domain;
    if region > dom.r_box() {
        return usage("seminorm region exceeds the lattice box");
    }
    let set: Vec<usize> = (0..dom.len()).filter(|&i| dom.radius_of(i) < region).collect();
    let vals: Vec<f64> = set.iter().map(|&i| u.values[i]).collect();
    Ok(seminorm_sum(u, k, &set, &set, &vals).powf(1.0 / k.p))
}

/// (sum over B_R x (B_2R \ B_R) of |u(x) - phi(y)|^p / |x-y|^(n+sp))^(1/p)
pub fn exterior_seminorm(u: &GridFunction, k: &KernelParams) -> Result<f64> {
    check_inputs(u, k)?;
    let dom = &u.domain;
    let r = dom.r();
    if dom.r_box() < 2.0 * r {
        return usage("exterior seminorm needs R_box >= 2R");
    }
    let inner = dom.interior_indices();
    let annulus: Vec<usize> = (0..dom.len())
        .filter(|&i| {
            let q = dom.radius_of(i);
            q >= r && q < 2.0 * r
        })
        .collect();
    let vals: Vec<f64> = annulus.iter().map(|&i| u.values[i]).collect();
    Ok(seminorm_sum(u, k, &inner, &annulus, &vals).powf(1.0 / k.p))
}

// ---------------------------------------------------------------------------
// FFT convolution on a rectangular sub-lattice

fn good_size(min: usize) -> usize {
    let mut m = min.max(1);
    loop {
        let mut r = m;
        for f in [2, 3, 5] {
            while r % f == 0 {
                r /= f;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

struct Convolver {
    shape: [usize; 2],
    pad: [usize; 2],
    khat: Vec<Complex64>,
    fwd: [Arc<dyn Fft<f64>>; 2],
    inv: [Arc<dyn Fft<f64>>; 2],
}

impl Convolver {
    /// Linear convolution with weights `w(d0, d1)` for |d_k| < shape_k.
    fn new(shape: [usize; 2], w: impl Fn(isize, isize) -> f64) -> Self {
        let pad = [good_size(2 * shape[0] - 1), good_size(2 * shape[1] - 1)];
        let mut planner = FftPlanner::new();
        let fwd = [planner.plan_fft_forward(pad[0]), planner.plan_fft_forward(pad[1])];
        let inv = [planner.plan_fft_inverse(pad[0]), planner.plan_fft_inverse(pad[1])];
        let mut me = Convolver { shape, pad, khat: Vec::new(), fwd, inv };
        let mut buf = vec![Complex64::new(0.0, 0.0); pad[0] * pad[1]];
        let (s0, s1) = (shape[0] as isize, shape[1] as isize);
        for d0 in -(s0 - 1)..s0 {
            for d1 in -(s1 - 1)..s1 {
                let a = d0.rem_euclid(pad[0] as isize) as usize;
                let b = d1.rem_euclid(pad[1] as isize) as usize;
                buf[a * pad[1] + b] = Complex64::new(w(d0, d1), 0.0);
            }
        }
        me.transform(&mut buf, true);
        me.khat = buf;
        me
    }

    fn transform(&self, buf: &mut [Complex64], forward: bool) {
        let [p0, p1] = self.pad;
        let plans = if forward { &self.fwd } else { &self.inv };
        if p1 > 1 {
            plans[1].process(buf);
        }
        if p0 > 1 {
            let mut t = vec![Complex64::new(0.0, 0.0); p0 * p1];
            for a in 0..p0 {
                for b in 0..p1 {
                    t[b * p0 + a] = buf[a * p1 + b];
                }
            }
            plans[0].process(&mut t);
            for a in 0..p0 {
                for b in 0..p1 {
                    buf[a * p1 + b] = t[b * p0 + a];
                }
            }
        }
    }

    /// out[i] = sum_j w(i - j) input[j] on the `shape` lattice (row-major).
    fn apply(&self, input: &[f64]) -> Vec<f64> {
        let [s0, s1] = self.shape;
        let [p0, p1] = self.pad;
        let mut buf = vec![Complex64::new(0.0, 0.0); p0 * p1];
        for a in 0..s0 {
            for b in 0..s1 {
                buf[a * p1 + b] = Complex64::new(input[a * s1 + b], 0.0);
            }
        }
        self.transform(&mut buf, true);
        for (x, k) in buf.iter_mut().zip(&self.khat) {
            *x *= k;
        }
        self.transform(&mut buf, false);
        let norm = 1.0 / (p0 * p1) as f64;
        let mut out = vec![0.0; s0 * s1];
        for a in 0..s0 {
            for b in 0..s1 {
                out[a * s1 + b] = buf[a * p1 + b].re * norm;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Energy model for repeated evaluation with fixed exterior data

struct Quadratic {
    /// h^(2n) sum_{j in I, j != i} w_ij
    diag: Vec<f64>,
    /// u_i^2 a_i - 2 u_i b_i + c_i is node i's exterior and tail interaction
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    tail_a: Vec<f64>,
    tail_b: Vec<f64>,
    tail_c: Vec<f64>,
    conv: Convolver,
    /// interior node -> position in the convolver's sub-lattice
    slot: Vec<usize>,
    sub_len: usize,
}

enum Backend {
    Quadratic(Box<Quadratic>),
    Direct { geom: PairGeom, mi: Vec<[usize; 2]>, tail: Option<NodeTail> },
}

/// Tail quadrature folded per interior node for p-Laplacian kernels:
/// T_k(u) = sum over m in start[k]..start[k+1] of w[m] t_power(u - phi[m]).
/// Points sharing a far-field value are merged.
struct NodeTail {
    phi: Vec<f64>,
    w: Vec<f64>,
    start: Vec<usize>,
    p: f64,
}

/// Entries kept before falling back to evaluating the quadrature on the fly.
const NODE_TAIL_BUDGET: usize = 1 << 23;

impl NodeTail {
    fn build(dom: &Domain, k: &KernelParams, tail: &Tail, interior: &[usize]) -> Option<NodeTail> {
        let Tail::Quadrature { pts } = tail else {
            return None;
        };
        let p = k.separable_power()?;
        let m = k.order();
        let lists: Vec<Vec<(f64, f64)>> = interior
            .par_iter()
            .map(|&i| {
                let x = dom.point(i);
                let mut v: Vec<(f64, f64)> =
                    pts.iter().map(|q| (q.phi, q.w * (x[0] - q.y[0]).hypot(x[1] - q.y[1]).powf(-m))).collect();
                v.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut merged: Vec<(f64, f64)> = Vec::new();
                for (phi, w) in v {
                    match merged.last_mut() {
                        Some(last) if last.0 == phi => last.1 += w,
                        _ => merged.push((phi, w)),
                    }
                }
                merged
            })
            .collect();
        if lists.iter().map(Vec::len).sum::<usize>() > NODE_TAIL_BUDGET {
            return None;
        }
        let mut nt = NodeTail { phi: Vec::new(), w: Vec::new(), start: vec![0], p };
        for l in lists {
            for (phi, w) in l {
                nt.phi.push(phi);
                nt.w.push(w);
            }
            nt.start.push(nt.phi.len());
        }
        Some(nt)
    }

    fn value(&self, k: usize, u: f64) -> f64 {
        (self.start[k]..self.start[k + 1]).map(|m| self.w[m] * t_power(u - self.phi[m], self.p)).sum()
    }

    fn deriv(&self, k: usize, u: f64) -> f64 {
        (self.start[k]..self.start[k + 1]).map(|m| self.w[m] * t_power_deriv(u - self.phi[m], self.p)).sum()
    }
}

/// Energy, gradient and exact energy differences as functions of the interior
/// values alone. Kernels with p = 2 use FFT convolutions; others sum directly.
pub struct EnergyModel {
    dom: Domain,
    k: KernelParams,
    pot: Potential,
    q: QuadratureConfig,
    interior: Vec<usize>,
    mask: Vec<bool>,
    base: Vec<f64>,
    tail: Tail,
    backend: Backend,
}

impl EnergyModel {
    pub fn new(u0: &GridFunction, k: &KernelParams, pot: &Potential, q: &QuadratureConfig) -> Result<Self> {
        check_inputs(u0, k)?;
        if q.self_pair == SelfPairPolicy::MidpointCorrection {
            return usage("midpoint correction is an energy-only policy; minimization uses 'exclude'");
        }
        let dom = u0.domain.clone();
        let tail = Tail::build(&dom, &u0.farfield, k, q.tail)?;
        let interior = dom.interior_indices();
        let mask: Vec<bool> = (0..dom.len()).map(|i| dom.is_interior(i)).collect();
        let backend = if k.separable_power() == Some(2.0) {
            Backend::Quadratic(Box::new(Self::quadratic(&dom, k, &tail, &interior, &mask, &u0.values)))
        } else {
            let mi = (0..dom.len()).map(|i| dom.multi_index(i)).collect();
            Backend::Direct { geom: PairGeom::new(&dom, k), mi, tail: NodeTail::build(&dom, k, &tail, &interior) }
        };
        Ok(EnergyModel {
            dom,
            k: k.clone(),
            pot: pot.clone(),
            q: *q,
            interior,
            mask,
            base: u0.values.clone(),
            tail,
            backend,
        })
    }

    fn quadratic(
        dom: &Domain,
        k: &KernelParams,
        tail: &Tail,
        interior: &[usize],
        mask: &[bool],
        vals: &[f64],
    ) -> Quadratic {
        let n = dom.n();
        let h = dom.h();
        let m = k.order();
        let hn = dom.cell_volume();
        let h2n = hn * hn;
        let w = |d0: isize, d1: isize| {
            if d0 == 0 && d1 == 0 {
                0.0
            } else {
                (h * (d0 as f64).hypot(d1 as f64)).powf(-m)
            }
        };
        // interior sub-lattice
        let mut lo = [usize::MAX; 2];
        let mut hi = [0usize; 2];
        for &i in interior {
            let mi = dom.multi_index(i);
            for a in 0..2 {
                lo[a] = lo[a].min(mi[a]);
                hi[a] = hi[a].max(mi[a]);
            }
        }
        let shape = [hi[0] - lo[0] + 1, if n == 1 { 1 } else { hi[1] - lo[1] + 1 }];
        let slot: Vec<usize> = interior
            .iter()
            .map(|&i| {
                let mi = dom.multi_index(i);
                (mi[0] - lo[0]) * shape[1] + if n == 1 { 0 } else { mi[1] - lo[1] }
            })
            .collect();
        let sub_len = shape[0] * shape[1];
        let conv = Convolver::new(shape, w);
        let mut ones = vec![0.0; sub_len];
        for &s in &slot {
            ones[s] = 1.0;
        }
        let dsum = conv.apply(&ones);
        let diag: Vec<f64> = slot.iter().map(|&s| h2n * dsum[s]).collect();

        // exterior nodes inside the box, by convolution over the whole box
        let na = dom.per_axis();
        let full = [na, if n == 1 { 1 } else { na }];
        let big = Convolver::new(full, w);
        let mut e0 = vec![0.0; dom.len()];
        let mut e1 = vec![0.0; dom.len()];
        let mut e2 = vec![0.0; dom.len()];
        for j in 0..dom.len() {
            if !mask[j] {
                e0[j] = 1.0;
                e1[j] = vals[j];
                e2[j] = vals[j] * vals[j];
            }
        }
        let (m0, m1, m2) = (big.apply(&e0), big.apply(&e1), big.apply(&e2));
        let moments: Vec<[f64; 3]> = interior.par_iter().map(|&i| tail.moments(k, dom.point(i))).collect();
        let mut a = Vec::with_capacity(interior.len());
        let mut b = Vec::with_capacity(interior.len());
        let mut c = Vec::with_capacity(interior.len());
        let (mut ta, mut tb, mut tc) = (Vec::new(), Vec::new(), Vec::new());
        for (k_, &i) in interior.iter().enumerate() {
            let t = moments[k_];
            // 2 * (1/2) for ordered exterior pairs; tail enters as 2 h^n T
            ta.push(hn * t[0]);
            tb.push(hn * t[1]);
            tc.push(hn * t[2]);
            a.push(h2n * m0[i] + hn * t[0]);
            b.push(h2n * m1[i] + hn * t[1]);
            c.push(h2n * m2[i] + hn * t[2]);
        }
        Quadratic { diag, a, b, c, tail_a: ta, tail_b: tb, tail_c: tc, conv, slot, sub_len }
    }

    /// Tail term of the `kk`-th interior node at value u.
    fn tail_value(&self, folded: &Option<NodeTail>, kk: usize, u: f64) -> f64 {
        match folded {
            Some(nt) => nt.value(kk, u),
            None => self.tail.value(&self.k, self.dom.point(self.interior[kk]), u),
        }
    }

    fn tail_deriv(&self, folded: &Option<NodeTail>, kk: usize, u: f64) -> f64 {
        match folded {
            Some(nt) => nt.deriv(kk, u),
            None => self.tail.deriv(&self.k, self.dom.point(self.interior[kk]), u),
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.dom
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn interior_len(&self) -> usize {
        self.interior.len()
    }

    pub fn initial_interior(&self) -> Vec<f64> {
        self.interior.iter().map(|&i| self.base[i]).collect()
    }

    /// Full lattice values with the interior replaced by `x`.
    pub fn full_values(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.base.clone();
        for (k, &i) in self.interior.iter().enumerate() {
            v[i] = x[k];
        }
        v
    }

    fn matvec(&self, qd: &Quadratic, x: &[f64]) -> Vec<f64> {
        let mut sub = vec![0.0; qd.sub_len];
        for (k, &s) in qd.slot.iter().enumerate() {
            sub[s] = x[k];
        }
        let y = qd.conv.apply(&sub);
        qd.slot.iter().map(|&s| y[s]).collect()
    }

    pub fn breakdown(&self, x: &[f64]) -> EnergyBreakdown {
        let hn = self.dom.cell_volume();
        let mode = self.q.summation;
        let potential = hn * sum_with(mode, x.iter().map(|&v| self.pot.eval_w(v)));
        match &self.backend {
            Backend::Quadratic(qd) => {
                let wx = self.matvec(qd, x);
                let h2n = hn * hn;
                let ii = sum_with(mode, (0..x.len()).map(|i| qd.diag[i] * x[i] * x[i] - h2n * x[i] * wx[i]));
                let ie = sum_with(mode, (0..x.len()).map(|i| x[i] * (qd.a[i] * x[i] - 2.0 * qd.b[i]) + qd.c[i]));
                let tail = sum_with(
                    mode,
                    (0..x.len()).map(|i| x[i] * (qd.tail_a[i] * x[i] - 2.0 * qd.tail_b[i]) + qd.tail_c[i]),
                );
                EnergyBreakdown::new(ii, ie, potential, tail, self.tail.is_envelope())
            }
            Backend::Direct { geom, mi, tail: folded } => {
                let vals = self.full_values(x);
                let k = &self.k;
                let rows: Vec<(f64, f64, f64)> = self
                    .interior
                    .par_iter()
                    .enumerate()
                    .map(|(kk, &i)| {
                        let mut ii = Acc::new(mode);
                        let mut ie = Acc::new(mode);
                        for j in 0..vals.len() {
                            if j != i {
                                let f = geom.f(k, vals[i] - vals[j], geom.offset(mi[i], mi[j]));
                                if self.mask[j] {
                                    ii.add(f)
                                } else {
                                    ie.add(f)
                                }
                            }
                        }
                        (ii.value(), ie.value(), self.tail_value(folded, kk, vals[i]))
                    })
                    .collect();
                let h2n = hn * hn;
                let tail = 2.0 * hn * sum_with(mode, rows.iter().map(|r| r.2));
                let ii = h2n * sum_with(mode, rows.iter().map(|r| r.0));
                let ie = 2.0 * h2n * sum_with(mode, rows.iter().map(|r| r.1)) + tail;
                EnergyBreakdown::new(ii, ie, potential, tail, self.tail.is_envelope())
            }
        }
    }

    pub fn energy(&self, x: &[f64]) -> f64 {
        self.breakdown(x).total
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let hn = self.dom.cell_volume();
        match &self.backend {
            Backend::Quadratic(qd) => {
                let wx = self.matvec(qd, x);
                let h2n = hn * hn;
                (0..x.len())
                    .map(|i| {
                        2.0 * (qd.diag[i] * x[i] - h2n * wx[i])
                            + 2.0 * (qd.a[i] * x[i] - qd.b[i])
                            + hn * self.pot.eval_dw(x[i])
                    })
                    .collect()
            }
            Backend::Direct { geom, mi, tail: folded } => {
                let vals = self.full_values(x);
                let k = &self.k;
                let mode = self.q.summation;
                self.interior
                    .par_iter()
                    .enumerate()
                    .map(|(kk, &i)| {
                        let mut acc = Acc::new(mode);
                        for j in 0..vals.len() {
                            if j != i {
                                acc.add(geom.df(k, vals[i] - vals[j], geom.offset(mi[i], mi[j])));
                            }
                        }
                        hn * (2.0 * hn * acc.value()
                            + 2.0 * self.tail_deriv(folded, kk, vals[i])
                            + self.pot.eval_dw(vals[i]))
                    })
                    .collect()
            }
        }
    }

    /// E(x + d) - E(x), evaluated without subtracting two totals. `g` must be
    /// the gradient at `x`.
    pub fn energy_change(&self, x: &[f64], g: &[f64], d: &[f64]) -> f64 {
        let hn = self.dom.cell_volume();
        let mode = self.q.summation;
        let dpot = hn * sum_with(mode, (0..x.len()).map(|i| self.pot.difference(x[i], x[i] + d[i])));
        match &self.backend {
            Backend::Quadratic(qd) => {
                let wd = self.matvec(qd, d);
                let h2n = hn * hn;
                let lin = sum_with(mode, (0..x.len()).map(|i| (g[i] - hn * self.pot.eval_dw(x[i])) * d[i]));
                let quad = sum_with(
                    mode,
                    (0..x.len()).map(|i| d[i] * (qd.diag[i] * d[i] - h2n * wd[i]) + qd.a[i] * d[i] * d[i]),
                );
                lin + quad + dpot
            }
            Backend::Direct { geom, mi, tail: folded } => {
                let old = self.full_values(x);
                let xn: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + b).collect();
                let new = self.full_values(&xn);
                let k = &self.k;
                let moved: Vec<bool> = {
                    let mut m = vec![false; old.len()];
                    for (kk, &i) in self.interior.iter().enumerate() {
                        m[i] = d[kk] != 0.0;
                    }
                    m
                };
                let rows: Vec<f64> = self
                    .interior
                    .par_iter()
                    .enumerate()
                    .map(|(kk, &i)| {
                        let mut acc = Acc::new(mode);
                        for j in 0..old.len() {
                            if j == i || (!moved[i] && !moved[j]) {
                                continue;
                            }
                            let o = geom.offset(mi[i], mi[j]);
                            let diff = geom.f(k, new[i] - new[j], o) - geom.f(k, old[i] - old[j], o);
                            acc.add(if self.mask[j] { diff } else { 2.0 * diff });
                        }
                        let dt = if moved[i] {
                            self.tail_value(folded, kk, new[i]) - self.tail_value(folded, kk, old[i])
                        } else {
                            0.0
                        };
                        hn * hn * acc.value() + 2.0 * hn * dt
                    })
                    .collect();
                sum_with(mode, rows) + dpot
            }
        }
    }

    /// The model's minimization inputs repackaged as a grid function.
    pub fn grid_function(&self, x: &[f64], farfield: &FarField) -> Result<GridFunction> {
        GridFunction::new(self.dom.clone(), self.full_values(x), farfield.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{sample_profile, Profile};

    #[test]
    fn self_cell_one_dimensional_closed_form() {
        // p = 2, s = 1/2: integrand constant |g|^2/2, cell pair area h^2
        let v = self_cell(1, 0.5, 2.0, 0.1, [3.0, 0.0]);
        assert!((v - 4.5 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn self_cell_two_dimensional_matches_brute_force() {
        let (s, p, h, g) = (0.4, 2.0, 0.5, [1.0, 0.3]);
        let v = self_cell(2, s, p, h, g);
        // midpoint rule in z over [-h, h]^2 on a fine staggered grid
        let m = 800;
        let dz = 2.0 * h / m as f64;
        let mut acc = 0.0;
        for a in 0..m {
            for b in 0..m {
                let z = [-h + (a as f64 + 0.5) * dz, -h + (b as f64 + 0.5) * dz];
                let r = z[0].hypot(z[1]);
                let wgt = (h - z[0].abs()) * (h - z[1].abs());
                acc += wgt * (g[0] * z[0] + g[1] * z[1]).abs().powf(p) / p * r.powf(-2.0 - s * p) * dz * dz;
            }
        }
        assert!((v - acc).abs() < 2e-3 * v, "{v} {acc}");
    }

    #[test]
    fn convolver_matches_direct_sum() {
        let conv = Convolver::new([5, 3], |a, b| (a * 3 + b) as f64 + 0.5);
        let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.7).sin()).collect();
        let y = conv.apply(&x);
        for i0 in 0..5isize {
            for i1 in 0..3isize {
                let mut s = 0.0;
                for j0 in 0..5isize {
                    for j1 in 0..3isize {
                        s += (((i0 - j0) * 3 + (i1 - j1)) as f64 + 0.5) * x[(j0 * 3 + j1) as usize];
                    }
                }
                assert!((y[(i0 * 3 + i1) as usize] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn model_matches_reference_sums() {
        for n in [1usize, 2] {
            let h = if n == 1 { 0.125 } else { 0.25 };
            let dom = Domain::with_default_box(n, 2.0, h).unwrap();
            let direction = crate::grid::unit_direction(if n == 1 { 0.0 } else { 0.3 });
            let u = sample_profile(&dom, &Profile::LayerTanh { direction, width: 0.8, shift: 0.2 }).unwrap();
            for p in [2.0, 1.5] {
                let k = KernelParams::p_laplacian(n, 0.6, p).unwrap();
                for tail in [TailPolicy::Quadrature1d, TailPolicy::None] {
                    let q = QuadratureConfig::with_tail(tail);
                    let reference = total_energy(&u, &k, &Potential::DoubleWell, &q).unwrap();
                    let model = EnergyModel::new(&u, &k, &Potential::DoubleWell, &q).unwrap();
                    let x = model.initial_interior();
                    let b = model.breakdown(&x);
                    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
                    assert!(rel(b.interior_interior, reference.interior_interior) < 1e-11, "{n} {p} {tail:?}");
                    assert!(rel(b.interior_exterior, reference.interior_exterior) < 1e-11, "{n} {p} {tail:?}");
                    assert!(rel(b.total, reference.total) < 1e-11);
                    let g = model.gradient(&x);
                    let gr = gradient(&u, &k, &Potential::DoubleWell, &q).unwrap();
                    for i in 0..g.len() {
                        assert!((g[i] - gr[i]).abs() < 1e-11 * gr.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                    }
                }
            }
        }
    }
}
