//! Cell-centered lattices on [-R_box, R_box]^n, nodal functions with an
//! exterior rule, and the profile library.

use std::fmt;
use std::sync::Arc;

use crate::error::{usage, Error, Result};

const TIE_EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct Domain {
    n: usize,
    r: f64,
    r_box: f64,
    h: f64,
    per_axis: usize,
    axis: Vec<f64>,
}

impl PartialEq for Domain {
    fn eq(&self, o: &Self) -> bool {
        self.n == o.n && self.r == o.r && self.r_box == o.r_box && self.h == o.h
    }
}

impl Domain {
    /// Ball radius `r` inside the box [-r_box, r_box]^n with spacing `h`.
    /// `2 r_box / h` must be an integer.
    pub fn new(n: usize, r: f64, r_box: f64, h: f64) -> Result<Self> {
        if n != 1 && n != 2 {
            return usage(format!("dimension n = {n} not supported (1 or 2)"));
        }
        if !(r > 0.0 && r_box.is_finite() && h > 0.0) {
            return usage("R, R_box and h must be positive and finite");
        }
        if r_box < 2.0 * r {
            return usage(format!("R_box = {r_box} must be at least 2R = {}", 2.0 * r));
        }
        if h > r / 4.0 {
            return usage(format!("h = {h} must not exceed R/4 = {}", r / 4.0));
        }
        let cells = 2.0 * r_box / h;
        let per_axis = cells.round();
        if (cells - per_axis).abs() > 1e-9 * cells {
            return usage(format!("2 R_box / h = {cells} is not an integer"));
        }
        let per_axis = per_axis as usize;
        let axis: Vec<f64> = (0..per_axis).map(|k| -r_box + (k as f64 + 0.5) * h).collect();
        let mut dom = Domain { n, r, r_box, h, per_axis, axis };
        // keep nodes off the sphere |x| = R
        for _ in 0..16 {
            if !dom.has_boundary_tie() {
                break;
            }
            dom.r += h / 1000.0;
        }
        Ok(dom)
    }

    /// The default box radius 2R.
    pub fn with_default_box(n: usize, r: f64, h: f64) -> Result<Self> {
        Self::new(n, r, 2.0 * r, h)
    }

    fn has_boundary_tie(&self) -> bool {
        (0..self.len()).any(|i| (self.radius_of(i) - self.r).abs() < TIE_EPS)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    /// Effective ball radius (after any tie-breaking shift).
    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn r_box(&self) -> f64 {
        self.r_box
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn per_axis(&self) -> usize {
        self.per_axis
    }
    pub fn axis(&self) -> &[f64] {
        &self.axis
    }
    pub fn len(&self) -> usize {
        self.per_axis.pow(self.n as u32)
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// h^n
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.n as i32)
    }

    /// Lattice multi-index of a node (second entry 0 when n = 1).
    #[inline]
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.n == 1 {
            [idx, 0]
        } else {
            [idx / self.per_axis, idx % self.per_axis]
        }
    }

    #[inline]
    pub fn flat_index(&self, mi: [usize; 2]) -> usize {
        if self.n == 1 {
            mi[0]
        } else {
            mi[0] * self.per_axis + mi[1]
        }
    }

    /// Cell center; unused coordinates are 0.
    #[inline]
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let mi = self.multi_index(idx);
        if self.n == 1 {
            [self.axis[mi[0]], 0.0]
        } else {
            [self.axis[mi[0]], self.axis[mi[1]]]
        }
    }

    #[inline]
    pub fn radius_of(&self, idx: usize) -> f64 {
        let p = self.point(idx);
        p[0].hypot(p[1])
    }

    #[inline]
    pub fn is_interior(&self, idx: usize) -> bool {
        self.radius_of(idx) < self.r
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_interior(i)).collect()
    }

    pub fn exterior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_interior(i)).collect()
    }

    /// Same lattice with a different ball radius.
    pub fn with_radius(&self, r: f64) -> Result<Self> {
        Self::new(self.n, r, self.r_box, self.h)
    }
}

// ---------------------------------------------------------------------------
// One-dimensional shapes and exterior rules

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// clip(slope z, -1, 1)
    Ramp { slope: f64 },
    /// tanh(z / width)
    Tanh { width: f64 },
}

impl Shape {
    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            Shape::Ramp { slope } => (slope * z).clamp(-1.0, 1.0),
            Shape::Tanh { width } => (z / width).tanh(),
        }
    }

    /// Points where the shape is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            Shape::Ramp { slope } => vec![-1.0 / slope, 1.0 / slope],
            Shape::Tanh { .. } => vec![],
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Shape::Ramp { slope } if !(slope > 0.0 && slope.is_finite()) => usage("ramp slope must be positive"),
            Shape::Tanh { width } if !(width > 0.0 && width.is_finite()) => usage("layer width must be positive"),
            _ => Ok(()),
        }
    }
}

/// u(x) = shape(direction . x - shift)
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Profile1d {
    pub direction: [f64; 2],
    pub shift: f64,
    pub shape: Shape,
}

impl Profile1d {
    pub fn new(direction: [f64; 2], shift: f64, shape: Shape) -> Result<Self> {
        check_direction(direction)?;
        shape.validate()?;
        Ok(Profile1d { direction, shift, shape })
    }

    #[inline]
    pub fn coordinate(&self, x: &[f64]) -> f64 {
        let mut z = self.direction[0] * x[0];
        if x.len() > 1 {
            z += self.direction[1] * x[1];
        }
        z - self.shift
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.shape.eval(self.coordinate(x))
    }
}

fn check_direction(d: [f64; 2]) -> Result<()> {
    if ((d[0].hypot(d[1])) - 1.0).abs() > 1e-12 {
        return usage(format!("direction {d:?} is not a unit vector"));
    }
    Ok(())
}

/// Unit vector at `angle` radians. Multiples of a quarter turn are exact.
pub fn unit_direction(angle: f64) -> [f64; 2] {
    let quarter = std::f64::consts::FRAC_PI_2;
    let k = (angle / quarter).floor();
    quarter_turn_direction(k as i64, angle - k * quarter)
}

/// Unit vector at `k` quarter turns plus `rest` radians; the quarter turns are
/// applied exactly by swapping components.
pub fn quarter_turn_direction(k: i64, rest: f64) -> [f64; 2] {
    let (c, s) = (rest.cos(), rest.sin());
    match k.rem_euclid(4) {
        0 => [c, s],
        1 => [-s, c],
        2 => [-c, -s],
        _ => [s, -c],
    }
}

/// Rule for values beyond the lattice box.
#[derive(Clone, Debug, PartialEq)]
pub enum FarField {
    Constant(f64),
    Profile1d(Profile1d),
    Min(Box<FarField>, Box<FarField>),
    Max(Box<FarField>, Box<FarField>),
    None,
}

impl FarField {
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        match self {
            FarField::Constant(c) => Some(*c),
            FarField::Profile1d(p) => Some(p.eval(x)),
            FarField::Min(a, b) => Some(a.eval(x)?.min(b.eval(x)?)),
            FarField::Max(a, b) => Some(a.eval(x)?.max(b.eval(x)?)),
            FarField::None => None,
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            FarField::Constant(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, FarField::None)
    }

    /// Largest |value| the rule can produce.
    pub fn sup_abs(&self) -> f64 {
        match self {
            FarField::Constant(c) => c.abs(),
            FarField::Profile1d(_) => 1.0,
            FarField::Min(a, b) | FarField::Max(a, b) => a.sup_abs().max(b.sup_abs()),
            FarField::None => 0.0,
        }
    }

    /// One-dimensional profiles contained in the rule.
    pub(crate) fn profiles(&self) -> Vec<Profile1d> {
        match self {
            FarField::Profile1d(p) => vec![*p],
            FarField::Min(a, b) | FarField::Max(a, b) => {
                let mut v = a.profiles();
                v.extend(b.profiles());
                v
            }
            _ => vec![],
        }
    }

    fn shifted(&self, e: &[f64]) -> FarField {
        match self {
            FarField::Profile1d(p) => {
                let mut q = *p;
                q.shift += p.direction[0] * e[0] + if e.len() > 1 { p.direction[1] * e[1] } else { 0.0 };
                FarField::Profile1d(q)
            }
            FarField::Min(a, b) => FarField::Min(Box::new(a.shifted(e)), Box::new(b.shifted(e))),
            FarField::Max(a, b) => FarField::Max(Box::new(a.shifted(e)), Box::new(b.shifted(e))),
            other => other.clone(),
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            FarField::Constant(c) => format!("const({c:?})"),
            FarField::Profile1d(p) => {
                let (kind, par) = match p.shape {
                    Shape::Ramp { slope } => ("ramp", slope),
                    Shape::Tanh { width } => ("tanh", width),
                };
                format!("profile({:?},{:?},{:?},{kind},{par:?})", p.direction[0], p.direction[1], p.shift)
            }
            FarField::Min(a, b) => format!("min({};{})", a.descriptor(), b.descriptor()),
            FarField::Max(a, b) => format!("max({};{})", a.descriptor(), b.descriptor()),
            FarField::None => "none".into(),
        }
    }

    pub fn parse(s: &str) -> Result<FarField> {
        let s = s.trim();
        if s == "none" {
            return Ok(FarField::None);
        }
        let open = s.find('(').ok_or_else(|| Error::Input(format!("bad far-field descriptor '{s}'")))?;
        if !s.ends_with(')') {
            return Err(Error::Input(format!("bad far-field descriptor '{s}'")));
        }
        let name = &s[..open];
        let body = &s[open + 1..s.len() - 1];
        let num = |t: &str| -> Result<f64> {
            t.trim().parse::<f64>().map_err(|_| Error::Input(format!("bad number '{t}' in far-field descriptor")))
        };
        match name {
            "const" => Ok(FarField::Constant(num(body)?)),
            "profile" => {
                let f: Vec<&str> = body.split(',').collect();
                if f.len() != 5 {
                    return Err(Error::Input(format!("profile descriptor needs 5 fields: '{s}'")));
                }
                let shape = match f[3].trim() {
                    "ramp" => Shape::Ramp { slope: num(f[4])? },
                    "tanh" => Shape::Tanh { width: num(f[4])? },
                    other => return Err(Error::Input(format!("unknown profile shape '{other}'"))),
                };
                Ok(FarField::Profile1d(Profile1d::new([num(f[0])?, num(f[1])?], num(f[2])?, shape)?))
            }
            "min" | "max" => {
                let mut depth = 0i32;
                let mut split = None;
                for (i, ch) in body.char_indices() {
                    match ch {
                        '(' => depth += 1,
                        ')' => depth -= 1,
                        ';' if depth == 0 => split = Some(i),
                        _ => {}
                    }
                }
                let i = split.ok_or_else(|| Error::Input(format!("bad far-field descriptor '{s}'")))?;
                let a = Box::new(FarField::parse(&body[..i])?);
                let b = Box::new(FarField::parse(&body[i + 1..])?);
                Ok(if name == "min" { FarField::Min(a, b) } else { FarField::Max(a, b) })
            }
            _ => Err(Error::Input(format!("unknown far-field rule '{name}'"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Profiles

pub type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Profile {
    Constant(f64),
    /// clip(slope direction . x, -1, 1); slope 1 is the plain ramp.
    Ramp {
        direction: [f64; 2],
        slope: f64,
    },
    /// tanh((direction . x - shift) / width)
    LayerTanh {
        direction: [f64; 2],
        width: f64,
        shift: f64,
    },
    /// -1 + 2 min{(|x| - R - 1)_+, 1}
    PsiAux {
        r: f64,
    },
    /// max{R + 1 - |x|, 1}
    DistAux {
        r: f64,
    },
    /// exp(1 - 1/(1 - |x/radius|^2)) inside the ball, 0 outside; height 1.
    RadialBump {
        radius: f64,
    },
    Custom(PointFn),
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Constant(c) => write!(f, "Constant({c})"),
            Profile::Ramp { direction, slope } => write!(f, "Ramp({direction:?}, {slope})"),
            Profile::LayerTanh { direction, width, shift } => write!(f, "LayerTanh({direction:?}, {width}, {shift})"),
            Profile::PsiAux { r } => write!(f, "PsiAux({r})"),
            Profile::DistAux { r } => write!(f, "DistAux({r})"),
            Profile::RadialBump { radius } => write!(f, "RadialBump({radius})"),
            Profile::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Standard bump exp(1 - 1/(1 - z^2)) for |z| < 1, exactly 0 otherwise.
#[inline]
pub fn bump(z2: f64) -> f64 {
    if z2 < 1.0 {
        (1.0 - 1.0 / (1.0 - z2)).exp()
    } else {
        0.0
    }
}

impl Profile {
    pub fn ramp(direction: [f64; 2]) -> Self {
        Profile::Ramp { direction, slope: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Profile::Ramp { direction, slope } => {
                check_direction(*direction)?;
                Shape::Ramp { slope: *slope }.validate()
            }
            Profile::LayerTanh { direction, width, .. } => {
                check_direction(*direction)?;
                Shape::Tanh { width: *width }.validate()
            }
            Profile::PsiAux { r } | Profile::DistAux { r } if !(*r > 0.0) => usage("auxiliary radius must be positive"),
            Profile::RadialBump { radius } if !(*radius > 0.0) => usage("bump radius must be positive"),
            _ => Ok(()),
        }
    }

    fn one_d(&self) -> Option<Profile1d> {
        match *self {
            Profile::Ramp { direction, slope } => {
                Some(Profile1d { direction, shift: 0.0, shape: Shape::Ramp { slope } })
            }
            Profile::LayerTanh { direction, width, shift } => {
                Some(Profile1d { direction, shift, shape: Shape::Tanh { width } })
            }
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = || crate::kernels::norm(x);
        match self {
            Profile::Constant(c) => *c,
            Profile::Ramp { .. } | Profile::LayerTanh { .. } => self.one_d().unwrap().eval(x),
            Profile::PsiAux { r: big } => -1.0 + 2.0 * (r() - big - 1.0).clamp(0.0, 1.0),
            Profile::DistAux { r: big } => (big + 1.0 - r()).max(1.0),
            Profile::RadialBump { radius } => {
                let q = r() / radius;
                bump(q * q)
            }
            Profile::Custom(f) => f(x),
        }
    }

    /// Exterior rule matching the profile beyond `dom`'s box, if describable.
    pub fn far_field(&self, dom: &Domain) -> FarField {
        match self {
            Profile::Constant(c) => FarField::Constant(*c),
            Profile::Ramp { .. } | Profile::LayerTanh { .. } => FarField::Profile1d(self.one_d().unwrap()),
            Profile::PsiAux { r } if dom.r_box() >= r + 2.0 => FarField::Constant(1.0),
            Profile::DistAux { r } if dom.r_box() >= *r => FarField::Constant(1.0),
            Profile::RadialBump { radius } if dom.r_box() >= *radius => FarField::Constant(0.0),
            _ => FarField::None,
        }
    }
}

/// Exact nodal samples of `profile`, with the matching exterior rule.
pub fn sample_profile(dom: &Domain, profile: &Profile) -> Result<GridFunction> {
    profile.validate()?;
    let n = dom.n();
    let values = (0..dom.len()).map(|i| profile.eval(&dom.point(i)[..n])).collect();
    GridFunction::new(dom.clone(), values, profile.far_field(dom))
}

// ---------------------------------------------------------------------------
// Grid functions

#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub domain: Domain,
    pub values: Vec<f64>,
    pub farfield: FarField,
    /// Declared bound M with |u| <= M everywhere, if any.
    pub bound: Option<f64>,
}

impl GridFunction {
    pub fn new(domain: Domain, values: Vec<f64>, farfield: FarField) -> Result<Self> {
        if values.len() != domain.len() {
            return usage(format!("{} values for a lattice of {} nodes", values.len(), domain.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite value at node {i}")));
        }
        Ok(GridFunction { domain, values, farfield, bound: None })
    }

    /// Declare |u| <= m; fails if any value or the exterior rule exceeds it.
    pub fn with_bound(mut self, m: f64) -> Result<Self> {
        if let Some(i) = self.values.iter().position(|v| v.abs() > m) {
            return Err(Error::Input(format!("value {} at node {i} exceeds the bound {m}", self.values[i])));
        }
        if self.farfield.sup_abs() > m {
            return Err(Error::Input(format!("far-field range exceeds the bound {m}")));
        }
        self.bound = Some(m);
        Ok(self)
    }

    pub fn interior_values(&self) -> Vec<f64> {
        self.domain.interior_indices().iter().map(|&i| self.values[i]).collect()
    }

    /// Copy with the interior nodes (in `interior_indices` order) replaced.
    pub fn with_interior(&self, interior: &[f64]) -> Result<Self> {
        let idx = self.domain.interior_indices();
        if idx.len() != interior.len() {
            return usage("interior vector has the wrong length");
        }
        let mut out = self.clone();
        for (k, &i) in idx.iter().enumerate() {
            out.values[i] = interior[k];
        }
        out.bound = None;
        Ok(out)
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v));
        out.bound = None;
        out
    }

    pub fn to_text(&self) -> String {
        let d = &self.domain;
        let mut s = format!(
            "nlphase-grid n={} R={:?} R_box={:?} h={:?} farfield={}\n",
            d.n(),
            d.r(),
            d.r_box(),
            d.h(),
            self.farfield.descriptor()
        );
        s.reserve(self.values.len() * 25);
        for v in &self.values {
            s.push_str(&format!("{v:.16e}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Input("empty grid file".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("nlphase-grid") {
            return Err(Error::Input("missing 'nlphase-grid' header".into()));
        }
        let (mut n, mut r, mut rb, mut h, mut ff) = (None, None, None, None, None);
        for f in fields {
            let (k, v) = f.split_once('=').ok_or_else(|| Error::Input(format!("bad header field '{f}'")))?;
            let num = || v.parse::<f64>().map_err(|_| Error::Input(format!("bad value in header field '{f}'")));
            match k {
                "n" => n = Some(num()? as usize),
                "R" => r = Some(num()?),
                "R_box" => rb = Some(num()?),
                "h" => h = Some(num()?),
                "farfield" => ff = Some(FarField::parse(v)?),
                _ => return Err(Error::Input(format!("unknown header field '{k}'"))),
            }
        }
        let missing = || Error::Input("incomplete grid header".into());
        let dom = Domain::new(
            n.ok_or_else(missing)?,
            r.ok_or_else(missing)?,
            rb.ok_or_else(missing)?,
            h.ok_or_else(missing)?,
        )?;
        let mut values = Vec::with_capacity(dom.len());
        for (k, l) in lines.enumerate() {
            let l = l.trim();
            if l.is_empty() {
                continue;
            }
            values.push(l.parse::<f64>().map_err(|_| Error::Input(format!("bad value on line {}", k + 2)))?);
        }
        GridFunction::new(dom, values, ff.ok_or_else(missing)?)
    }
}

/// Pointwise (min, max) of two functions on the same lattice.
pub fn min_max_combine(u: &GridFunction, v: &GridFunction) -> Result<(GridFunction, GridFunction)> {
    if u.domain != v.domain {
        return usage("min/max of grid functions on different lattices");
    }
    let (ff_min, ff_max) = if u.farfield == v.farfield {
        (u.farfield.clone(), u.farfield.clone())
    } else if u.farfield.is_none() || v.farfield.is_none() {
        (FarField::None, FarField::None)
    } else if let (Some(a), Some(b)) = (u.farfield.constant_value(), v.farfield.constant_value()) {
        (FarField::Constant(a.min(b)), FarField::Constant(a.max(b)))
    } else {
        let (a, b) = (Box::new(u.farfield.clone()), Box::new(v.farfield.clone()));
        (FarField::Min(a.clone(), b.clone()), FarField::Max(a, b))
    };
    let lo = u.values.iter().zip(&v.values).map(|(a, b)| a.min(*b)).collect();
    let hi = u.values.iter().zip(&v.values).map(|(a, b)| a.max(*b)).collect();
    Ok((
        GridFunction { domain: u.domain.clone(), values: lo, farfield: ff_min, bound: None },
        GridFunction { domain: u.domain.clone(), values: hi, farfield: ff_max, bound: None },
    ))
}

/// x -> u(x - shift) for a shift that is a whole number of cells per axis.
pub fn translate(u: &GridFunction, shift: &[f64]) -> Result<GridFunction> {
    let d = &u.domain;
    let n = d.n();
    if shift.len() != n {
        return usage("shift has the wrong dimension");
    }
    let mut steps = [0i64; 2];
    for (k, &e) in shift.iter().enumerate() {
        let q = e / d.h();
        if (q - q.round()).abs() > 1e-9 * q.abs().max(1.0) {
            return usage(format!("shift {e} is not a multiple of h = {}", d.h()));
        }
        steps[k] = q.round() as i64;
    }
    if steps == [0, 0] {
        return Ok(u.clone());
    }
    let na = d.per_axis() as i64;
    let mut values = Vec::with_capacity(d.len());
    for idx in 0..d.len() {
        let mi = d.multi_index(idx);
        let src = [mi[0] as i64 - steps[0], mi[1] as i64 - steps[1]];
        let inside = (0..n).all(|k| src[k] >= 0 && src[k] < na);
        if inside {
            values.push(u.values[d.flat_index([src[0] as usize, src[1] as usize])]);
        } else {
            let p = d.point(idx);
            let pre = [p[0] - shift[0], p[1] - if n > 1 { shift[1] } else { 0.0 }];
            let v = u
                .farfield
                .eval(&pre[..n])
                .ok_or_else(|| Error::Usage("translation needs an evaluable far field".into()))?;
            values.push(v);
        }
    }
    GridFunction::new(d.clone(), values, u.farfield.shifted(shift))
}
