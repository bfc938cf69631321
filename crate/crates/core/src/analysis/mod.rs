//! Numerical checks of the regularity theory: target parametrizations seen
//! from a point, concavity of `G = 1/H`, the sliding-mountain maximum
//! principle, local-to-global support, tube inclusion and Hölder ratios.

mod aw;
mod holder;
mod lipschitz;

pub use aw::*;
pub use holder::*;
pub use lipschitz::*;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, norm, refract_dir, OpticalConstants, PointUp};

/// A target hypersurface described, from any point `X`, by the distance
/// `s_X(Lambda)` travelled along the unit direction `Lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParametrizedTarget {
    /// Sphere with `(n+1)`-dimensional `center`.
    Sphere { center: Vec<f64>, radius: f64 },
    /// Horizontal hyperplane `x_last = height`.
    Plane { height: f64 },
    /// Star-shaped surface around `origin` with radial function
    /// `radius * exp(-beta |v|^2)`, `v` the slope refracting into the direction.
    DirectionGraph { origin: Vec<f64>, radius: f64, beta: f64 },
}

/// Slope `v` whose refracted direction is the unit vector `dir`.
pub fn slope_of_direction(dir: &[f64], kappa: f64) -> Vec<f64> {
    let n = dir.len() - 1;
    let denom = kappa - dir[n];
    dir[..n].iter().map(|d| d / denom).collect()
}

/// Slope of the sheet with focus `y` through `x0`, at `x0`.
pub fn slope_toward(x0: &PointUp, y: &PointUp, kappa: f64) -> Vec<f64> {
    let mut d: Vec<f64> = y.to_vec().iter().zip(x0.to_vec()).map(|(a, b)| a - b).collect();
    let len = norm(&d);
    d.iter_mut().for_each(|c| *c /= len);
    slope_of_direction(&d, kappa)
}

impl ParametrizedTarget {
    fn radial(&self, dir: &[f64], kappa: f64) -> f64 {
        match self {
            ParametrizedTarget::DirectionGraph { radius, beta, .. } => {
                let v = slope_of_direction(dir, kappa);
                radius * (-beta * dot(&v, &v)).exp()
            }
            _ => unreachable!("radial function only for direction graphs"),
        }
    }

    /// Distance `s_X(Lambda)` from `x` to the target along the unit `lambda`.
    pub fn hit(&self, x: &PointUp, lambda: &[f64], kappa: f64) -> Result<f64> {
        let xv = x.to_vec();
        match self {
            ParametrizedTarget::Sphere { center, radius } => {
                let rel: Vec<f64> = xv.iter().zip(center).map(|(a, c)| a - c).collect();
                let b = dot(lambda, &rel);
                let disc = b * b - (dot(&rel, &rel) - radius * radius);
                if disc < 0.0 {
                    return Err(Error::RayMiss);
                }
                let s = -b + disc.sqrt();
                if s > 0.0 {
                    Ok(s)
                } else {
                    Err(Error::RayMiss)
                }
            }
            ParametrizedTarget::Plane { height } => {
                let n = lambda.len() - 1;
                let s = (height - x.last) / lambda[n];
                if lambda[n] > 0.0 && s > 0.0 {
                    Ok(s)
                } else {
                    Err(Error::RayMiss)
                }
            }
            ParametrizedTarget::DirectionGraph { origin, radius, .. } => {
                let rel: Vec<f64> = xv.iter().zip(origin).map(|(a, o)| a - o).collect();
                let r0 = norm(&rel);
                if r0 == 0.0 {
                    return Ok(self.radial(lambda, kappa));
                }
                let f = |t: f64| {
                    let p: Vec<f64> = rel.iter().zip(lambda).map(|(a, l)| a + t * l).collect();
                    let len = norm(&p);
                    let dir: Vec<f64> = p.iter().map(|c| c / len).collect();
                    len - self.radial(&dir, kappa)
                };
                if f(0.0) >= 0.0 {
                    return Err(Error::RayMiss);
                }
                let t_max = r0 + radius;
                let steps = 256;
                let mut lo = 0.0;
                let mut hi = t_max;
                for k in 1..=steps {
                    let t = t_max * k as f64 / steps as f64;
                    if f(t) >= 0.0 {
                        hi = t;
                        break;
                    }
                    lo = t;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if f(mid) >= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                Ok(hi)
            }
        }
    }

    /// Target point reached from `x` along the refraction of slope `v`.
    pub fn point_from_slope(&self, x: &PointUp, v: &[f64], k: &OpticalConstants) -> Result<PointUp> {
        let r = refract_dir(v, k)?;
        let s = self.hit(x, &r.lambda, k.kappa)?;
        Ok(x.offset(s, &r.lambda))
    }
}

/// `H = s_X(Lambda(v)) Q(v)` and `G = 1/H`, with the target point reached.
#[derive(Debug, Clone, PartialEq)]
pub struct HG {
    pub h: f64,
    pub g: f64,
    pub s: f64,
    pub q: f64,
    pub y: PointUp,
}

pub fn h_and_g(v: &[f64], x: &PointUp, target: &ParametrizedTarget, k: &OpticalConstants) -> Result<HG> {
    let r = refract_dir(v, k)?;
    let s = target.hit(x, &r.lambda, k.kappa)?;
    let h = s * r.q;
    Ok(HG { h, g: 1.0 / h, s, q: r.q, y: x.offset(s, &r.lambda) })
}

/// `J(Y, X, eta) = ((kappa^2-1)<v, eta>^2 - 1)/H` for a unit `eta`.
pub fn j_value(v: &[f64], eta: &[f64], h: f64, k: &OpticalConstants) -> f64 {
    let p = dot(v, eta);
    (k.k2m1() * p * p - 1.0) / h
}

/// Point of the c-segment from `x0` between the slopes `v_bar` and `v_hat`.
pub fn c_segment_point(
    x0: &PointUp,
    v_bar: &[f64],
    v_hat: &[f64],
    lambda: f64,
    target: &ParametrizedTarget,
    k: &OpticalConstants,
) -> Result<PointUp> {
    let v: Vec<f64> = v_bar.iter().zip(v_hat).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect();
    target.point_from_slope(x0, &v, k)
}

/// Regular grid of slopes inside the disk of radius `fraction` times the
/// critical slope, `per_axis` points per axis.
pub fn default_v_grid(n: usize, k: &OpticalConstants, per_axis: usize, fraction: f64) -> Vec<Vec<f64>> {
    let r = fraction * k.critical_slope();
    let total = per_axis.pow(n as u32);
    let mut out = Vec::new();
    for lin in 0..total {
        let mut rem = lin;
        let mut v = vec![0.0; n];
        for c in v.iter_mut().rev() {
            let i = rem % per_axis;
            rem /= per_axis;
            *c = -r + 2.0 * r * i as f64 / (per_axis - 1) as f64;
        }
        if norm(&v) <= r {
            out.push(v);
        }
    }
    out
}

pub(crate) fn random_in_ball<R: Rng>(rng: &mut R, n: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if dot(&v, &v) <= 1.0 {
            return v.into_iter().map(|c| c * radius).collect();
        }
    }
}
