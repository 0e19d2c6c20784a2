//! Box-constrained minimization over the interior nodes with the exterior held
//! fixed, and the comparison probes built on it.

use crate::energy::{fmt17, total_energy, EnergyBreakdown, EnergyModel, QuadratureConfig};
use crate::error::{usage, Error, Result};
use crate::grid::{min_max_combine, GridFunction};
use crate::kernels::KernelParams;
use crate::potentials::Potential;

/// Halvings tried before a line search gives up.
const MAX_HALVINGS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinimizeConfig {
    pub max_iters: usize,
    /// Sup-norm threshold on the projected gradient; `None` means 1e-8 h^n.
    pub grad_tol: Option<f64>,
    /// First trial step; `None` means 1/h^n.
    pub step0: Option<f64>,
    pub backtrack_factor: f64,
    pub armijo_c: f64,
    pub box_bounds: Option<[f64; 2]>,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        MinimizeConfig {
            max_iters: 20_000,
            grad_tol: None,
            step0: None,
            backtrack_factor: 0.5,
            armijo_c: 1e-4,
            box_bounds: Some([-1.0, 1.0]),
        }
    }
}

impl MinimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return usage("max_iters must be at least 1");
        }
        for (name, v) in [("grad_tol", self.grad_tol), ("step0", self.step0)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return usage(format!("{name} must be positive"));
                }
            }
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return usage("backtrack_factor must lie in (0, 1)");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return usage("armijo_c must lie in (0, 1)");
        }
        if let Some([lo, hi]) = self.box_bounds {
            if !(lo < hi) {
                return usage("box bounds need lo < hi");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIters,
    /// No sufficient-decrease step was found.
    Stalled,
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIters => "max_iters",
            Status::Stalled => "stalled",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub energy: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct MinimizeResult {
    pub u: GridFunction,
    pub status: Status,
    pub trace: Vec<TraceRow>,
    /// Freshly evaluated decomposition at the final iterate.
    pub breakdown: EnergyBreakdown,
}

impl MinimizeResult {
    pub fn energy(&self) -> f64 {
        self.breakdown.total
    }

    pub fn iterations(&self) -> usize {
        self.trace.last().map_or(0, |r| r.iter)
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,energy,grad_norm,step\n");
        for r in &self.trace {
            s.push_str(&format!("{},{},{},{}\n", r.iter, fmt17(r.energy), fmt17(r.grad_norm), fmt17(r.step)));
        }
        s
    }
}

fn project(v: f64, bounds: Option<[f64; 2]>) -> f64 {
    match bounds {
        Some([lo, hi]) => v.clamp(lo, hi),
        None => v,
    }
}

fn projected_sup(x: &[f64], g: &[f64], bounds: Option<[f64; 2]>) -> f64 {
    x.iter().zip(g).map(|(&xi, &gi)| (xi - project(xi - gi, bounds)).abs()).fold(0.0, f64::max)
}

/// Projected gradient descent with Barzilai-Borwein trial steps and monotone
/// Armijo backtracking.
pub fn minimize(
    u0: &GridFunction,
    k: &KernelParams,
    pot: &Potential,
    q: &QuadratureConfig,
    cfg: &MinimizeConfig,
) -> Result<MinimizeResult> {
    cfg.validate()?;
    let model = EnergyModel::new(u0, k, pot, q)?;
    let bounds = cfg.box_bounds;
    let mut x = model.initial_interior();
    if let Some([lo, hi]) = bounds {
        if x.iter().any(|&v| v < lo || v > hi) {
            return Err(Error::Precondition(format!("initial interior values leave the box [{lo}, {hi}]")));
        }
    }
    let hn = u0.domain.cell_volume();
    let tol = cfg.grad_tol.unwrap_or(1e-8 * hn);
    let step0 = cfg.step0.unwrap_or(1.0 / hn);

    let mut energy = model.energy(&x);
    if !energy.is_finite() {
        return Err(Error::Input("energy of the initial state is not finite".into()));
    }
    let mut g = model.gradient(&x);
    let mut trace = vec![TraceRow { iter: 0, energy, grad_norm: projected_sup(&x, &g, bounds), step: 0.0 }];
    let mut alpha = step0;
    let mut status = Status::MaxIters;

    for iter in 1..=cfg.max_iters {
        if trace.last().unwrap().grad_norm <= tol {
            status = Status::Converged;
            break;
        }
        let mut step = alpha;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let d: Vec<f64> = x.iter().zip(&g).map(|(&xi, &gi)| project(xi - step * gi, bounds) - xi).collect();
            let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            if slope >= 0.0 {
                // projected step no longer descends; nothing left to gain here
                break;
            }
            let de = model.energy_change(&x, &g, &d);
            if de <= cfg.armijo_c * slope {
                accepted = Some((d, de));
                break;
            }
            step *= cfg.backtrack_factor;
        }
        let Some((d, de)) = accepted else {
            status = Status::Stalled;
            break;
        };
        let x_new: Vec<f64> = x.iter().zip(&d).map(|(a, b)| project(a + b, bounds)).collect();
        let g_new = model.gradient(&x_new);
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..x.len() {
            let s = x_new[i] - x[i];
            ss += s * s;
            sy += s * (g_new[i] - g[i]);
        }
        alpha = if sy > 0.0 { (ss / sy).min(1e6 * step0) } else { step0 };
        energy += de;
        x = x_new;
        g = g_new;
        trace.push(TraceRow { iter, energy, grad_norm: projected_sup(&x, &g, bounds), step });
    }
    if status == Status::MaxIters && trace.last().unwrap().grad_norm <= tol {
        status = Status::Converged;
    }
    let breakdown = model.breakdown(&x);
    let u = model.grid_function(&x, &u0.farfield)?;
    Ok(MinimizeResult { u, status, trace, breakdown })
}

/// [E(min) + E(max)] - [E(u) + E(v)]; never positive up to rounding.
pub fn submodularity_gap(
    u: &GridFunction,
    v: &GridFunction,
    k: &KernelParams,
    pot: &Potential,
    q: &QuadratureConfig,
) -> Result<f64> {
    let (m, big) = min_max_combine(u, v)?;
    let e = |w: &GridFunction| total_energy(w, k, pot, q).map(|b| b.total);
    Ok((e(&m)? + e(&big)?) - (e(u)? + e(v)?))
}

#[derive(Clone, Debug)]
pub struct ComparisonReport {
    /// min over all nodes of u1* - u2*
    pub min_difference: f64,
    /// h^n times the number of interior nodes where u2* exceeds u1* by more
    /// than the tolerance
    pub violation_measure: f64,
    pub tolerance: f64,
    pub upper: MinimizeResult,
    pub lower: MinimizeResult,
}

/// Minimize from ordered exterior data (`upper` >= `lower` outside B_R) and
/// report how well the minimizers keep the order.
pub fn ordered_data_comparison(
    upper: &GridFunction,
    lower: &GridFunction,
    k: &KernelParams,
    pot: &Potential,
    q: &QuadratureConfig,
    cfg: &MinimizeConfig,
) -> Result<ComparisonReport> {
    if upper.domain != lower.domain {
        return usage("comparison needs a shared lattice");
    }
    let dom = &upper.domain;
    if dom.exterior_indices().iter().any(|&i| upper.values[i] < lower.values[i]) {
        return Err(Error::Precondition("exterior data are not ordered".into()));
    }
    let a = minimize(upper, k, pot, q, cfg)?;
    let b = minimize(lower, k, pot, q, cfg)?;
    let tolerance = 1e-6;
    let min_difference = a.u.values.iter().zip(&b.u.values).map(|(x, y)| x - y).fold(f64::INFINITY, f64::min);
    let bad = dom.interior_indices().iter().filter(|&&i| b.u.values[i] - a.u.values[i] > tolerance).count();
    Ok(ComparisonReport {
        min_difference,
        violation_measure: bad as f64 * dom.cell_volume(),
        tolerance,
        upper: a,
        lower: b,
    })
}
