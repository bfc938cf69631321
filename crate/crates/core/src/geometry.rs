//! Snell refraction from a dense medium and the lower hyperboloid sheets
//! that refract a vertical beam into a single focus.
//!
//! Points of the ambient space are `(x, x_last)` with `x` in `R^n`; the
//! beam travels along `e_{n+1}`. All routines are dimension generic and
//! operate on slices so that the solver's inner loops avoid allocation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slopes closer than this to the critical slope are rejected.
pub const CRITICAL_SLOPE_GUARD: f64 = 1e-9;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Refractive indices of the source medium (`n1`) and target medium (`n2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalConstants {
    pub n1: f64,
    pub n2: f64,
    pub kappa: f64,
}

impl OpticalConstants {
    pub fn new(n1: f64, n2: f64) -> Result<Self> {
        if !(n2 > 0.0 && n1 > n2 && n1.is_finite()) {
            return Err(Error::ConfigParse(format!(
                "refractive indices must satisfy n1 > n2 > 0 (got n1 = {n1}, n2 = {n2})"
            )));
        }
        Ok(Self { n1, n2, kappa: n1 / n2 })
    }

    /// Constants with `n2 = 1`.
    pub fn from_kappa(kappa: f64) -> Result<Self> {
        Self::new(kappa, 1.0)
    }

    /// `kappa^2 - 1`.
    #[inline]
    pub fn k2m1(&self) -> f64 {
        self.kappa * self.kappa - 1.0
    }

    /// Largest admissible interface slope `1/sqrt(kappa^2 - 1)`.
    pub fn critical_slope(&self) -> f64 {
        1.0 / self.k2m1().sqrt()
    }

    /// Smallest admissible `e_{n+1}·N`, equal to `sqrt(1 - kappa^-2)`.
    pub fn critical_cos(&self) -> f64 {
        (1.0 - 1.0 / (self.kappa * self.kappa)).sqrt()
    }
}

/// A point `(x, x_last)` of `R^{n+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointUp {
    pub x: Vec<f64>,
    pub last: f64,
}

impl PointUp {
    pub fn new(x: Vec<f64>, last: f64) -> Self {
        Self { x, last }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Flattened `(n+1)`-vector.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.push(self.last);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let (last, x) = v.split_last().expect("non-empty point");
        Self { x: x.to_vec(), last: *last }
    }

    pub fn distance(&self, other: &PointUp) -> f64 {
        (dist2(&self.x, &other.x) + (self.last - other.last).powi(2)).sqrt()
    }

    /// `self + s * dir` with `dir` an `(n+1)`-vector.
    pub fn offset(&self, s: f64, dir: &[f64]) -> PointUp {
        let n = self.dim();
        PointUp {
            x: self.x.iter().zip(dir).map(|(a, d)| a + s * d).collect(),
            last: self.last + s * dir[n],
        }
    }
}

/// Unit interface slope `v`; refraction requires `|v| < 1/sqrt(kappa^2-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeVector(pub Vec<f64>);

impl SlopeVector {
    pub fn new(v: Vec<f64>, constants: &OpticalConstants) -> Result<Self> {
        check_slope(&v, constants)?;
        Ok(Self(v))
    }

    pub fn refract(&self, constants: &OpticalConstants) -> Result<Refraction> {
        refract_dir(&self.0, constants)
    }
}

/// Refracted unit direction `Lambda(v) = (Q v, kappa - Q)` and the factor `Q(v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Refraction {
    pub lambda: Vec<f64>,
    pub q: f64,
}

fn check_slope(v: &[f64], constants: &OpticalConstants) -> Result<f64> {
    let norm_v = norm(v);
    let critical = constants.critical_slope();
    if !(norm_v < critical - CRITICAL_SLOPE_GUARD) {
        return Err(Error::CriticalSlope { norm: norm_v, critical });
    }
    Ok(norm_v)
}

/// Refracts the vertical beam at an interface with unit upper normal `normal`.
///
/// Returns `Lambda = kappa e + delta N` with
/// `delta = -kappa e·N + sqrt(1 + kappa^2((e·N)^2 - 1))`.
pub fn snell_refract(normal: &[f64], constants: &OpticalConstants) -> Result<Vec<f64>> {
    let n = normal.len() - 1;
    let cos_in = normal[n];
    let critical = constants.critical_cos();
    let k = constants.kappa;
    let disc = 1.0 + k * k * (cos_in * cos_in - 1.0);
    // rounding at the exact critical angle must not be reported as reflection
    if cos_in < critical - 1e-12 {
        return Err(Error::TotalInternalReflection { cos_incidence: cos_in, critical });
    }
    let delta = -k * cos_in + disc.max(0.0).sqrt();
    let mut lambda: Vec<f64> = normal.iter().map(|c| delta * c).collect();
    lambda[n] += k;
    Ok(lambda)
}

/// Closed-form `Q(v) = (kappa - sqrt(1 - (kappa^2-1)|v|^2)) / (1 + |v|^2)`.
#[inline]
pub fn q_factor(norm2: f64, constants: &OpticalConstants) -> f64 {
    (constants.kappa - (1.0 - constants.k2m1() * norm2).sqrt()) / (1.0 + norm2)
}

/// Refracted direction for an interface of slope `v`.
pub fn refract_dir(v: &[f64], constants: &OpticalConstants) -> Result<Refraction> {
    check_slope(v, constants)?;
    let q = q_factor(dot(v, v), constants);
    let mut lambda: Vec<f64> = v.iter().map(|c| q * c).collect();
    lambda.push(constants.kappa - q);
    Ok(Refraction { lambda, q })
}

/// Upward unit normal `(-v, 1)/sqrt(1+|v|^2)` of a graph with slope `v`.
pub fn upper_normal(v: &[f64]) -> Vec<f64> {
    let s = (1.0 + dot(v, v)).sqrt();
    let mut nrm: Vec<f64> = v.iter().map(|c| -c / s).collect();
    nrm.push(1.0 / s);
    nrm
}

/// `c(X, Y) = kappa (y_last - x_last) - |X - Y|`.
pub fn c_value(x: &PointUp, y: &PointUp, constants: &OpticalConstants) -> f64 {
    constants.kappa * (y.last - x.last) - x.distance(y)
}

/// Height of the lower sheet with focus height `focus_last` and parameter `b`
/// at horizontal squared distance `d2` from the focus axis.
#[inline]
pub fn phi_from_dist2(d2: f64, focus_last: f64, b: f64, constants: &OpticalConstants) -> f64 {
    let k2m1 = constants.k2m1();
    let a = b / k2m1;
    focus_last - constants.kappa * a - (a * a + d2 / k2m1).sqrt()
}

/// Lower sheet `{kappa (y_last - x_last) - |X - Y| = b}` with upper focus `Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperboloid {
    pub focus: PointUp,
    pub b: f64,
}

impl Hyperboloid {
    /// Requires `0 < b < (kappa - 1) y_last` so the vertex lies above `x_last = 0`.
    pub fn new(focus: PointUp, b: f64, constants: &OpticalConstants) -> Result<Self> {
        if !(b > 0.0) {
            return Err(Error::NonPositiveFocalParameter(b));
        }
        let cap = (constants.kappa - 1.0) * focus.last;
        if !(b < cap) {
            return Err(Error::ConfigParse(format!(
                "focal parameter {b} must be below (kappa-1)*y_last = {cap}"
            )));
        }
        Ok(Self { focus, b })
    }

    /// Sheet with focus `focus` through `x0`, with parameter `c(x0, focus)`.
    pub fn through(focus: &PointUp, x0: &PointUp, constants: &OpticalConstants) -> Result<Self> {
        let b = c_value(x0, focus, constants);
        if !(b > 0.0) {
            return Err(Error::NonPositiveFocalParameter(b));
        }
        Ok(Self { focus: focus.clone(), b })
    }

    pub fn eval(&self, x: &[f64], constants: &OpticalConstants) -> f64 {
        phi_from_dist2(dist2(x, &self.focus.x), self.focus.last, self.b, constants)
    }

    /// Height of the vertex, `y_last - b/(kappa-1)`; also the maximum of the sheet.
    pub fn vertex_height(&self, constants: &OpticalConstants) -> f64 {
        self.focus.last - self.b / (constants.kappa - 1.0)
    }

    pub fn gradient(&self, x: &[f64], constants: &OpticalConstants) -> Vec<f64> {
        let s = (self.b * self.b + constants.k2m1() * dist2(x, &self.focus.x)).sqrt();
        self.focus.x.iter().zip(x).map(|(y, xi)| (y - xi) / s).collect()
    }
}

/// `phi_{Y,b}(x)`.
pub fn phi_eval(x: &[f64], h: &Hyperboloid, constants: &OpticalConstants) -> f64 {
    h.eval(x, constants)
}

/// Height at `x` of the sheet with focus `y` passing through `x0`.
pub fn phi_through(x: &[f64], y: &PointUp, x0: &PointUp, constants: &OpticalConstants) -> Result<f64> {
    let h = Hyperboloid::through(y, x0, constants)?;
    Ok(h.eval(x, constants))
}

/// Gradient and Hessian of a sheet in the horizontal variables.
#[derive(Debug, Clone)]
pub struct PhiDerivatives {
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

pub fn phi_derivatives(x: &[f64], h: &Hyperboloid, constants: &OpticalConstants) -> PhiDerivatives {
    let n = x.len();
    let k2m1 = constants.k2m1();
    let diff: Vec<f64> = x.iter().zip(&h.focus.x).map(|(a, b)| a - b).collect();
    let d2 = dot(&diff, &diff);
    let a = h.b * h.b / (k2m1 * k2m1) + d2 / k2m1;
    let s = k2m1 * a.sqrt();
    let grad = diff.iter().map(|d| -d / s).collect();
    let scale = -a.powf(-1.5) / k2m1;
    let hess = DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { a } else { 0.0 };
        scale * (delta - diff[i] * diff[j] / k2m1)
    });
    PhiDerivatives { grad, hess }
}

/// `d phi(x, Y, X0) / d x0_last`, the sensitivity to lifting the anchor point.
pub fn phi_vertical_derivative(
    x: &[f64],
    y: &PointUp,
    x0: &PointUp,
    constants: &OpticalConstants,
) -> Result<f64> {
    let c = c_value(x0, y, constants);
    if !(c > 0.0) {
        return Err(Error::NonPositiveFocalParameter(c));
    }
    let k2m1 = constants.k2m1();
    let a = c * c / (k2m1 * k2m1) + dist2(x, &y.x) / k2m1;
    let dc = -constants.kappa - (x0.last - y.last) / x0.distance(y);
    Ok(-(constants.kappa / k2m1 + c / (k2m1 * k2m1) / a.sqrt()) * dc)
}

/// Mixed derivatives `d^2 phi / dx_i dy_j` (an `n x (n+1)` matrix), with the
/// focal parameter `c(X0, Y)` moving with `Y`.
pub fn phi_mixed_derivatives(
    x: &[f64],
    y: &PointUp,
    x0: &PointUp,
    constants: &OpticalConstants,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let c = c_value(x0, y, constants);
    if !(c > 0.0) {
        return Err(Error::NonPositiveFocalParameter(c));
    }
    let k2m1 = constants.k2m1();
    let yx: Vec<f64> = y.x.iter().zip(x).map(|(a, b)| a - b).collect();
    let s2 = c * c + k2m1 * dot(&yx, &yx);
    let s = s2.sqrt();
    let r = x0.distance(y);
    let dc = |j: usize| {
        if j == n {
            constants.kappa - (y.last - x0.last) / r
        } else {
            -(y.x[j] - x0.x[j]) / r
        }
    };
    Ok(DMatrix::from_fn(n, n + 1, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        let lateral = if j < n { k2m1 * yx[j] } else { 0.0 };
        delta / s - yx[i] * (c * dc(j) + lateral) / (s2 * s)
    }))
}

/// Uniform derivative bounds for sheets whose focal parameter is at least `c_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBounds {
    pub gradient: f64,
    pub vertical: f64,
    pub hessian: f64,
    pub mixed: f64,
    pub c_min: f64,
}

pub fn derivative_bounds(constants: &OpticalConstants, c_min: f64) -> DerivativeBounds {
    let k = constants.kappa;
    DerivativeBounds {
        gradient: constants.critical_slope(),
        vertical: (k + 1.0) / (k - 1.0),
        hessian: 2.0 / c_min,
        mixed: (2.0 + 0.5 * ((k + 1.0) / (k - 1.0)).sqrt()) / c_min,
        c_min,
    }
}

/// Lower bound `gamma = (kappa - 1) Delta` for `c(X, Y)` under the compatibility condition.
pub fn c_lower_bound(constants: &OpticalConstants, delta_cap: f64) -> f64 {
    (constants.kappa - 1.0) * delta_cap
}

/// Constant in `|phi(x,Y,X0) - phi(x,Y',X0)| <= C |x-x0| |Y-Y'|`, taken as the
/// entrywise mixed bound times the Frobenius factor `sqrt(n(n+1))`.
pub fn focus_shift_constant(bounds: &DerivativeBounds, n: usize) -> f64 {
    bounds.mixed * ((n * (n + 1)) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(kappa: f64) -> OpticalConstants {
        OpticalConstants::from_kappa(kappa).unwrap()
    }

    #[test]
    fn constants_reject_rare_source() {
        assert!(OpticalConstants::new(1.0, 1.5).is_err());
        assert!(OpticalConstants::new(1.0, 1.0).is_err());
        let c = OpticalConstants::new(1.5, 1.0).unwrap();
        assert_eq!(c.kappa, 1.5);
    }

    #[test]
    fn normal_incidence_passes_straight() {
        for kappa in [1.1, 1.5, 2.0, 3.0] {
            let l = snell_refract(&[0.0, 0.0, 1.0], &k(kappa)).unwrap();
            assert!((l[0]).abs() < 1e-15 && (l[1]).abs() < 1e-15);
            assert!((l[2] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn grazing_normal_gives_one_over_kappa() {
        let c = k(2.0);
        let cos = c.critical_cos();
        let nrm = [-(1.0 - cos * cos).sqrt(), cos];
        let l = snell_refract(&nrm, &c).unwrap();
        assert!((l[1] - 0.5).abs() < 1e-12);
        assert!((norm(&l) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tilted_normal_unit_output() {
        let s = 1.09f64.sqrt();
        let l = snell_refract(&[-0.3 / s, 1.0 / s], &k(1.5)).unwrap();
        assert!((norm(&l) - 1.0).abs() < 1e-12);
        // Snell: n1 sin(in) = n2 sin(out) with n2 = 1.
        let sin_in = 0.3 / s;
        let sin_out = (l[0] * (1.0 / s) - l[1] * (-0.3 / s)).abs();
        assert!((1.5 * sin_in - sin_out).abs() < 1e-12);
    }

    #[test]
    fn beyond_critical_is_tir() {
        let c = k(2.0);
        let cos = c.critical_cos() - 1e-6;
        let nrm = [(1.0 - cos * cos).sqrt(), cos];
        assert!(matches!(snell_refract(&nrm, &c), Err(Error::TotalInternalReflection { .. })));
    }

    #[test]
    fn zero_slope_refracts_vertically() {
        let c = k(1.7);
        let r = refract_dir(&[0.0, 0.0], &c).unwrap();
        assert!((r.q - 0.7).abs() < 1e-15);
        assert_eq!(r.lambda, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn critical_slope_rejected() {
        let c = k(2.0);
        let v = [c.critical_slope()];
        assert!(matches!(refract_dir(&v, &c), Err(Error::CriticalSlope { .. })));
        let v = [c.critical_slope() - 1e-10];
        assert!(refract_dir(&v, &c).is_err());
    }

    #[test]
    fn slope_and_normal_routes_agree() {
        let c = k(1.5);
        let v = [0.3, -0.2];
        let a = refract_dir(&v, &c).unwrap().lambda;
        let b = snell_refract(&upper_normal(&v), &c).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn c_value_examples() {
        let c = k(2.0);
        let x = PointUp::new(vec![0.0], 0.0);
        let y = PointUp::new(vec![0.0], 10.0);
        assert!((c_value(&x, &y, &c) - 10.0).abs() < 1e-15);
        assert_eq!(c_value(&y, &y, &c), 0.0);
    }

    #[test]
    fn phi_numeric_example() {
        let c = k(2.0);
        let h = Hyperboloid::new(PointUp::new(vec![0.0], 10.0), 3.0, &c).unwrap();
        // 10 - 2 - sqrt(1 + 16/3)
        assert!((h.eval(&[4.0], &c) - 5.483388521576417).abs() < 1e-12);
        assert!((h.eval(&[0.0], &c) - (10.0 - 3.0)).abs() < 1e-12);
        assert!((h.vertex_height(&c) - 7.0).abs() < 1e-15);
        // point on the sheet has c = b
        let p = PointUp::new(vec![4.0], h.eval(&[4.0], &c));
        assert!((c_value(&p, &h.focus, &c) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn through_rejects_nonpositive_parameter() {
        let c = k(2.0);
        let y = PointUp::new(vec![0.0], 1.0);
        let x0 = PointUp::new(vec![5.0], 0.9);
        assert!(matches!(phi_through(&[0.0], &y, &x0, &c), Err(Error::NonPositiveFocalParameter(_))));
    }

    #[test]
    fn vertex_hessian_is_minus_identity_over_b() {
        let c = k(1.5);
        let h = Hyperboloid::new(PointUp::new(vec![0.2, -0.1], 8.0), 2.5, &c).unwrap();
        let d = phi_derivatives(&[0.2, -0.1], &h, &c);
        assert!(d.grad.iter().all(|g| g.abs() < 1e-15));
        assert!((d.hess[(0, 0)] + 1.0 / 2.5).abs() < 1e-14);
        assert!((d.hess[(1, 1)] + 1.0 / 2.5).abs() < 1e-14);
        assert!(d.hess[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn bounds_examples() {
        let c = k(2.0);
        let b = derivative_bounds(&c, 1.0);
        assert!((b.hessian - 2.0).abs() < 1e-15);
        assert!((b.mixed - (2.0 + 0.5 * 3f64.sqrt())).abs() < 1e-15);
        assert!((b.mixed - 2.8660254037844384).abs() < 1e-12);
        assert!((b.vertical - 3.0).abs() < 1e-15);
        assert!((c_lower_bound(&c, 1.0) - 1.0).abs() < 1e-15);
    }
}
