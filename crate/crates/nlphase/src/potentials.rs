//! The potential W and its derivative.

use std::fmt;
use std::sync::Arc;

use crate::error::{usage, Result};

/// Regularity a potential claims for itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothness {
    /// bounded with a continuous derivative
    C1Bounded,
    /// twice differentiable on [-1, 1] with W(-1) = W(1) = 0
    DoubleWellC2,
}

#[derive(Clone)]
pub enum Potential {
    DoubleWell,
    Zero,
    Custom {
        name: String,
        w: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        dw: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        smoothness: Smoothness,
    },
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Potential {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "doubleWell" | "double_well" => Ok(Potential::DoubleWell),
            "zero" => Ok(Potential::Zero),
            other => usage(format!("unknown potential '{other}' (doubleWell, zero)")),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Potential::DoubleWell => "doubleWell".into(),
            Potential::Zero => "zero".into(),
            Potential::Custom { name, .. } => format!("custom:{name}"),
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match self {
            Potential::DoubleWell => Smoothness::DoubleWellC2,
            Potential::Zero => Smoothness::C1Bounded,
            Potential::Custom { smoothness, .. } => *smoothness,
        }
    }

    #[inline]
    pub fn eval_w(&self, u: f64) -> f64 {
        match self {
            Potential::DoubleWell => {
                let a = u * u - 1.0;
                0.25 * a * a
            }
            Potential::Zero => 0.0,
            Potential::Custom { w, .. } => w(u),
        }
    }

    #[inline]
    pub fn eval_dw(&self, u: f64) -> f64 {
        match self {
            Potential::DoubleWell => u * u * u - u,
            Potential::Zero => 0.0,
            Potential::Custom { dw, .. } => dw(u),
        }
    }

    /// W(b) - W(a) without cancellation for the double well.
    #[inline]
    pub fn difference(&self, a: f64, b: f64) -> f64 {
        match self {
            Potential::DoubleWell => 0.25 * (b - a) * (b + a) * (a * a + b * b - 2.0),
            _ => self.eval_w(b) - self.eval_w(a),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_well_values() {
        let w = Potential::DoubleWell;
        assert_eq!(w.eval_w(1.0), 0.0);
        assert_eq!(w.eval_w(-1.0), 0.0);
        assert_eq!(w.eval_w(0.0), 0.25);
        assert_eq!(w.eval_dw(2.0), 6.0);
        assert_eq!(w.eval_dw(0.0), 0.0);
        assert_eq!(w.eval_dw(1.0), 0.0);
        assert_eq!(w.eval_dw(-1.0), 0.0);
    }

    #[test]
    fn difference_matches_direct() {
        let w = Potential::DoubleWell;
        for &(a, b) in &[(0.1, 0.7), (-1.0, 1.0), (0.3, 0.3000001)] {
            let d = w.eval_w(b) - w.eval_w(a);
            assert!((w.difference(a, b) - d).abs() < 1e-15);
        }
    }

    #[test]
    fn names() {
        assert!(Potential::from_name("doubleWell").is_ok());
        assert!(Potential::from_name("triple").is_err());
    }
}
