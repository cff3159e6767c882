use std::f64::consts::PI;
use std::fmt::Debug;

use super::{cross, dot};

/// Closed curve on the unit sphere `S^2`, parameterized by arclength.
///
/// Implementors supply the point, the unit tangent and the geodesic curvature
/// with respect to the in-sphere normal `nu = gamma x T`.
pub trait SphereCurve: Debug + Send + Sync {
    fn name(&self) -> String;
    /// Total length; the parameter lives in `[0, length)`.
    fn length(&self) -> f64;
    fn point(&self, t: f64) -> [f64; 3];
    fn tangent(&self, t: f64) -> [f64; 3];
    fn geodesic_curvature(&self, t: f64) -> f64;
    fn geodesic_curvature_derivative(&self, _t: f64) -> f64 {
        0.0
    }

    fn normal(&self, t: f64) -> [f64; 3] {
        cross(&self.point(t), &self.tangent(t))
    }
}

/// The equator `{z = 0}` of the unit sphere, `t` the azimuth.
#[derive(Debug, Clone, Copy, Default)]
pub struct Equator;

impl SphereCurve for Equator {
    fn name(&self) -> String {
        "equator".into()
    }
    fn length(&self) -> f64 {
        2.0 * PI
    }
    fn point(&self, t: f64) -> [f64; 3] {
        [t.cos(), t.sin(), 0.0]
    }
    fn tangent(&self, t: f64) -> [f64; 3] {
        [-t.sin(), t.cos(), 0.0]
    }
    fn geodesic_curvature(&self, _t: f64) -> f64 {
        0.0
    }
}

/// Parallel of latitude `theta0`, `|theta0| < pi/2`.
#[derive(Debug, Clone, Copy)]
pub struct LatitudeCircle {
    pub theta0: f64,
}

impl SphereCurve for LatitudeCircle {
    fn name(&self) -> String {
        format!("latitude({})", self.theta0)
    }
    fn length(&self) -> f64 {
        2.0 * PI * self.theta0.cos()
    }
    fn point(&self, t: f64) -> [f64; 3] {
        let c = self.theta0.cos();
        let phi = t / c;
        [c * phi.cos(), c * phi.sin(), self.theta0.sin()]
    }
    fn tangent(&self, t: f64) -> [f64; 3] {
        let phi = t / self.theta0.cos();
        [-phi.sin(), phi.cos(), 0.0]
    }
    fn geodesic_curvature(&self, _t: f64) -> f64 {
        self.theta0.tan()
    }
}

/// Great circle `t -> R (cos t, sin t, 0)` for a rotation `R` about the
/// x-axis by `tilt`.
#[derive(Debug, Clone, Copy)]
pub struct TiltedGreatCircle {
    pub tilt: f64,
}

impl TiltedGreatCircle {
    fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.tilt.sin_cos();
        [v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]]
    }
}

impl SphereCurve for TiltedGreatCircle {
    fn name(&self) -> String {
        format!("great_circle(tilt={})", self.tilt)
    }
    fn length(&self) -> f64 {
        2.0 * PI
    }
    fn point(&self, t: f64) -> [f64; 3] {
        self.rotate([t.cos(), t.sin(), 0.0])
    }
    fn tangent(&self, t: f64) -> [f64; 3] {
        self.rotate([-t.sin(), t.cos(), 0.0])
    }
    fn geodesic_curvature(&self, _t: f64) -> f64 {
        0.0
    }
}

/// Parameter of the curve point maximizing `x . gamma(t)`, which is both the
/// Euclidean and the spherical closest point.
pub fn closest_parameter(curve: &dyn SphereCurve, x: &[f64; 3]) -> f64 {
    const SAMPLES: usize = 256;
    let len = curve.length();
    let h = len / SAMPLES as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..SAMPLES {
        let t = h * i as f64;
        let v = dot(x, &curve.point(t));
        if v > best.0 {
            best = (v, t);
        }
    }
    // golden section on the bracketing cell, then Newton on x . T = 0
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let f = |t: f64| dot(x, &curve.point(t));
    let (mut a, mut b) = (best.1 - h, best.1 + h);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..40 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let mut t = 0.5 * (a + b);
    let (lo, hi) = (best.1 - h, best.1 + h);
    for _ in 0..6 {
        let g = dot(x, &curve.tangent(t));
        let gamma = curve.point(t);
        let nu = curve.normal(t);
        let kappa = curve.geodesic_curvature(t);
        let tp = [
            -gamma[0] + kappa * nu[0],
            -gamma[1] + kappa * nu[1],
            -gamma[2] + kappa * nu[2],
        ];
        let gp = dot(x, &tp);
        if gp >= 0.0 {
            break;
        }
        let next = t - g / gp;
        if !(lo..=hi).contains(&next) {
            break;
        }
        let done = (next - t).abs() < 1e-15 * len;
        t = next;
        if done {
            break;
        }
    }
    t.rem_euclid(len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_frame(c: &dyn SphereCurve) {
        let len = c.length();
        for i in 0..16 {
            let t = len * i as f64 / 16.0;
            let g = c.point(t);
            let tt = c.tangent(t);
            assert!((dot(&g, &g) - 1.0).abs() < 1e-14);
            assert!((dot(&tt, &tt) - 1.0).abs() < 1e-14);
            assert!(dot(&g, &tt).abs() < 1e-14);
            // unit speed and curvature by central differences
            let h = 1e-5;
            let (gp, gm) = (c.point(t + h), c.point(t - h));
            let fd = [(gp[0] - gm[0]) / (2.0 * h), (gp[1] - gm[1]) / (2.0 * h), (gp[2] - gm[2]) / (2.0 * h)];
            assert!((fd[0] - tt[0]).abs() + (fd[1] - tt[1]).abs() + (fd[2] - tt[2]).abs() < 1e-8);
            let (tp, tm) = (c.tangent(t + h), c.tangent(t - h));
            let tprime = [(tp[0] - tm[0]) / (2.0 * h), (tp[1] - tm[1]) / (2.0 * h), (tp[2] - tm[2]) / (2.0 * h)];
            assert!((dot(&tprime, &c.normal(t)) - c.geodesic_curvature(t)).abs() < 1e-8);
        }
    }

    #[test]
    fn builtin_curves_have_consistent_frames() {
        check_frame(&Equator);
        check_frame(&LatitudeCircle { theta0: 0.4 });
        check_frame(&LatitudeCircle { theta0: -0.7 });
        check_frame(&TiltedGreatCircle { tilt: 0.3 });
    }

    #[test]
    fn closest_parameter_recovers_planted_point() {
        let c = LatitudeCircle { theta0: 0.3 };
        for t0 in [0.0, 1.0, 3.0, 5.5] {
            let g = c.point(t0);
            let nu = c.normal(t0);
            let x = [0.9 * (g[0] + 0.05 * nu[0]), 0.9 * (g[1] + 0.05 * nu[1]), 0.9 * (g[2] + 0.05 * nu[2])];
            let t = closest_parameter(&c, &x);
            let diff = (t - t0).rem_euclid(c.length());
            let diff = diff.min(c.length() - diff);
            assert!(diff < 1e-12, "t0 = {t0}, got {t}");
        }
    }
}
