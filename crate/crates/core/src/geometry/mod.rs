//! Model geometries `(Omega, Sigma_k)`, their distance functions and Fermi
//! coordinates.
//!
//! Every scenario carries a global *collar coordinate* system
//! `y = (y1, y_breve, y_bar)`: `y1` is the distance to the boundary,
//! `y_breve` the normal directions inside the boundary and `y_bar` the
//! parameter of `Sigma_k`. Fermi charts are these coordinates recentred at a
//! base point of `Sigma_k`.

mod chart;
mod curve;
mod expansions;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{HardyError, Result};

pub use chart::{metric_components, FermiChart, MetricReport};
pub use curve::{closest_parameter, Equator, LatitudeCircle, SphereCurve, TiltedGreatCircle};
pub use expansions::{check_distance_expansions, ladder_samples, ExpansionReport, ExpansionRow, RungFit};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    FlatSlab,
    BallEquator,
    ParametricCurveOnSphere,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::FlatSlab => "flat_slab",
            ScenarioKind::BallEquator => "ball_equator",
            ScenarioKind::ParametricCurveOnSphere => "curve_on_sphere",
        })
    }
}

/// A concrete geometry `(Omega, Sigma_k, N, k)` with collar radius `beta`.
///
/// * `FlatSlab`: `Omega = (0,1) x (-1,1)^{N-1}`, `Sigma_k` the patch
///   `{y1 = 0, y_breve = 0, |y_bar_a| <= 1/2}`.
/// * `BallEquator`: the unit ball of `R^3` and its equator.
/// * `ParametricCurveOnSphere`: the unit ball and a closed curve on `S^2`.
#[derive(Clone)]
pub struct Scenario {
    kind: ScenarioKind,
    dim: usize,
    sub_dim: usize,
    beta: f64,
    curve: Option<Arc<dyn SphereCurve>>,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Scenario");
        s.field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("sub_dim", &self.sub_dim)
            .field("beta", &self.beta);
        if let Some(c) = &self.curve {
            s.field("curve", &c.name());
        }
        s.finish()
    }
}

/// Distance data at an arbitrary point of `Omega` (no collar requirement).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distances {
    pub d: f64,
    pub delta: f64,
    pub delta_hat: f64,
    pub delta_tilde: f64,
    /// Parameter of the projection onto `Sigma_k` (equator angle, curve
    /// arclength, or first patch coordinate).
    pub psi: f64,
}

/// All distance data of a collar point.
#[derive(Debug, Clone, PartialEq)]
pub struct CollarPoint {
    pub x: Vec<f64>,
    pub d: f64,
    pub delta: f64,
    /// Boundary projection.
    pub x_bar: Vec<f64>,
    pub delta_hat: f64,
    /// Projection of `x_bar` onto `Sigma_k`.
    pub sigma: Vec<f64>,
    pub delta_tilde: f64,
    pub psi: f64,
    /// Set when `x` lies on `Sigma_k`.
    pub singular: bool,
}

/// Distance data and ambient point at collar coordinates `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub x: Vec<f64>,
    pub sigma: Vec<f64>,
    pub d: f64,
    pub delta: f64,
    pub delta_hat: f64,
    pub delta_tilde: f64,
    pub psi: f64,
}

/// Parameter domain of `Sigma_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub periodic: bool,
}

impl SigmaDomain {
    pub fn measure(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }
}

static EQUATOR: Equator = Equator;

impl Scenario {
    pub fn flat_slab(dim: usize, sub_dim: usize, beta: f64) -> Result<Self> {
        if dim < 3 {
            return Err(HardyError::InvalidScenario(format!("N = {dim} must be at least 3")));
        }
        if sub_dim < 1 || sub_dim + 2 > dim {
            return Err(HardyError::InvalidScenario(format!(
                "k = {sub_dim} must satisfy 1 <= k <= N - 2 = {}",
                dim - 2
            )));
        }
        let s = Scenario {
            kind: ScenarioKind::FlatSlab,
            dim,
            sub_dim,
            beta,
            curve: None,
        };
        s.check_beta()?;
        Ok(s)
    }

    pub fn ball_equator(beta: f64) -> Result<Self> {
        let s = Scenario {
            kind: ScenarioKind::BallEquator,
            dim: 3,
            sub_dim: 1,
            beta,
            curve: None,
        };
        s.check_beta()?;
        Ok(s)
    }

    pub fn curve_on_sphere(curve: Arc<dyn SphereCurve>, beta: f64) -> Result<Self> {
        let s = Scenario {
            kind: ScenarioKind::ParametricCurveOnSphere,
            dim: 3,
            sub_dim: 1,
            beta,
            curve: Some(curve),
        };
        s.check_beta()?;
        Ok(s)
    }

    /// Same geometry with a different collar radius.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        let mut s = self.clone();
        s.beta = beta;
        s.check_beta()?;
        Ok(s)
    }

    fn check_beta(&self) -> Result<()> {
        let b0 = self.safe_beta();
        if !(self.beta > 0.0) || self.beta > b0 {
            return Err(HardyError::InvalidScenario(format!(
                "collar radius beta = {} must lie in (0, {b0}]",
                self.beta
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> ScenarioKind {
        self.kind
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }
    /// Codimension `m = N - k`.
    pub fn codim(&self) -> usize {
        self.dim - self.sub_dim
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    /// Hardy constant `(N-k)^2 / 4`.
    pub fn plateau(&self) -> f64 {
        let m = self.codim() as f64;
        0.25 * m * m
    }

    /// Largest collar radius on which the collar coordinates are smooth.
    pub fn safe_beta(&self) -> f64 {
        match self.kind {
            ScenarioKind::FlatSlab => 0.5,
            ScenarioKind::BallEquator => 1.0,
            ScenarioKind::ParametricCurveOnSphere => {
                let c = self.sphere_curve().expect("curve scenario");
                let len = c.length();
                let kmax = (0..512)
                    .map(|i| c.geodesic_curvature(len * i as f64 / 512.0).abs())
                    .fold(0.0f64, f64::max);
                (0.9 * (1.0 / kmax.max(1e-300)).atan()).min(1.0)
            }
        }
    }

    pub(crate) fn sphere_curve(&self) -> Option<&dyn SphereCurve> {
        match self.kind {
            ScenarioKind::FlatSlab => None,
            ScenarioKind::BallEquator => Some(&EQUATOR),
            ScenarioKind::ParametricCurveOnSphere => self.curve.as_deref(),
        }
    }

    pub fn curve_name(&self) -> Option<String> {
        self.curve.as_ref().map(|c| c.name())
    }

    pub fn sigma_domain(&self) -> SigmaDomain {
        match self.kind {
            ScenarioKind::FlatSlab => SigmaDomain {
                lo: vec![-0.5; self.sub_dim],
                hi: vec![0.5; self.sub_dim],
                periodic: false,
            },
            ScenarioKind::BallEquator => SigmaDomain {
                lo: vec![-PI],
                hi: vec![PI],
                periodic: true,
            },
            ScenarioKind::ParametricCurveOnSphere => SigmaDomain {
                lo: vec![0.0],
                hi: vec![self.sphere_curve().unwrap().length()],
                periodic: true,
            },
        }
    }

    /// k-dimensional measure of `Sigma_k`.
    pub fn sigma_measure(&self) -> f64 {
        self.sigma_domain().measure()
    }

    /// Ambient point of `Sigma_k` at parameter `t` (arclength parameters
    /// make the surface element 1 in every scenario).
    pub fn sigma_point(&self, t: &[f64]) -> Vec<f64> {
        match self.sphere_curve() {
            None => {
                let mut x = vec![0.0; self.dim];
                x[self.codim()..].copy_from_slice(t);
                x
            }
            Some(c) => c.point(t[0]).to_vec(),
        }
    }

    /// Bounding box of `Omega`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            ScenarioKind::FlatSlab => {
                let mut lo = vec![-1.0; self.dim];
                lo[0] = 0.0;
                (lo, vec![1.0; self.dim])
            }
            _ => (vec![-1.0; 3], vec![1.0; 3]),
        }
    }

    /// Membership in the closure of `Omega`.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self.kind {
            ScenarioKind::FlatSlab => {
                (0.0..=1.0).contains(&x[0]) && x[1..].iter().all(|v| (-1.0..=1.0).contains(v))
            }
            _ => norm(x) <= 1.0,
        }
    }

    /// Distances at any point of `Omega`; no collar check. For the slab `d`
    /// is the distance to the face `{y1 = 0}` carrying `Sigma_k`.
    pub fn distances(&self, x: &[f64]) -> Distances {
        match self.kind {
            ScenarioKind::FlatSlab => {
                let m = self.codim();
                let d = x[0];
                let mut dh2: f64 = x[1..m].iter().map(|v| v * v).sum();
                for v in &x[m..] {
                    let e = (v.abs() - 0.5).max(0.0);
                    dh2 += e * e;
                }
                let dt = (d * d + dh2).sqrt();
                Distances {
                    d,
                    delta: dt,
                    delta_hat: dh2.sqrt(),
                    delta_tilde: dt,
                    psi: x[m].clamp(-0.5, 0.5),
                }
            }
            ScenarioKind::BallEquator => {
                let r = norm(x);
                let rho = x[0].hypot(x[1]);
                let theta = x[2].atan2(rho);
                let d = 1.0 - r;
                let dh = theta.abs();
                Distances {
                    d,
                    delta: (rho - 1.0).hypot(x[2]),
                    delta_hat: dh,
                    delta_tilde: dh.hypot(d),
                    psi: x[1].atan2(x[0]),
                }
            }
            ScenarioKind::ParametricCurveOnSphere => {
                let c = self.sphere_curve().unwrap();
                let r = norm(x);
                let d = 1.0 - r;
                let x3 = [x[0], x[1], x[2]];
                let t = closest_parameter(c, &x3);
                let g = c.point(t);
                let dist2 = (r * r + 1.0 - 2.0 * dot(x, &g)).max(0.0);
                let dh = if r > 0.0 {
                    let xb = [x[0] / r, x[1] / r, x[2] / r];
                    let chord = ((xb[0] - g[0]).powi(2) + (xb[1] - g[1]).powi(2) + (xb[2] - g[2]).powi(2)).sqrt();
                    2.0 * (0.5 * chord).min(1.0).asin()
                } else {
                    0.5 * PI
                };
                Distances {
                    d,
                    delta: dist2.sqrt(),
                    delta_hat: dh,
                    delta_tilde: dh.hypot(d),
                    psi: t,
                }
            }
        }
    }

    /// Full collar data at `x`; rejects points outside `Omega`, outside the
    /// collar `{delta_tilde < beta}` and on the cut locus.
    pub fn eval_collar_point(&self, x: &[f64]) -> Result<CollarPoint> {
        if x.len() != self.dim {
            return Err(HardyError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        if !self.contains(x) {
            return Err(HardyError::OutsideDomain { point: x.to_vec() });
        }
        let (x_bar, sigma) = match self.kind {
            ScenarioKind::FlatSlab => {
                let m = self.codim();
                let mut xb = x.to_vec();
                xb[0] = 0.0;
                let mut s = vec![0.0; self.dim];
                for i in m..self.dim {
                    s[i] = x[i].clamp(-0.5, 0.5);
                }
                (xb, s)
            }
            ScenarioKind::BallEquator => {
                let r = norm(x);
                let rho = x[0].hypot(x[1]);
                if rho == 0.0 {
                    return Err(HardyError::CutLocus(format!("{x:?} lies on the polar axis")));
                }
                (x.iter().map(|v| v / r).collect(), vec![x[0] / rho, x[1] / rho, 0.0])
            }
            ScenarioKind::ParametricCurveOnSphere => {
                let r = norm(x);
                if r == 0.0 {
                    return Err(HardyError::CutLocus("centre of the ball".into()));
                }
                let t = closest_parameter(self.sphere_curve().unwrap(), &[x[0], x[1], x[2]]);
                (
                    x.iter().map(|v| v / r).collect(),
                    self.sphere_curve().unwrap().point(t).to_vec(),
                )
            }
        };
        let dist = self.distances(x);
        if dist.delta_tilde >= self.beta {
            return Err(HardyError::OutsideCollar {
                delta_tilde: dist.delta_tilde,
                beta: self.beta,
            });
        }
        // assembled, so the Pythagorean identity holds exactly
        let delta_tilde = (dist.delta_hat * dist.delta_hat + dist.d * dist.d).sqrt();
        Ok(CollarPoint {
            x: x.to_vec(),
            d: dist.d,
            delta: dist.delta,
            x_bar,
            delta_hat: dist.delta_hat,
            sigma,
            delta_tilde,
            psi: dist.psi,
            singular: delta_tilde == 0.0,
        })
    }

    /// Ambient point at global collar coordinates `y`.
    pub fn collar_to_ambient(&self, y: &[f64]) -> Vec<f64> {
        match self.sphere_curve() {
            None => y.to_vec(),
            Some(c) => {
                let (g, nu) = (c.point(y[2]), c.normal(y[2]));
                let (s, co) = y[1].sin_cos();
                let r = 1.0 - y[0];
                (0..3).map(|i| r * (co * g[i] + s * nu[i])).collect()
            }
        }
    }

    /// Distance data at collar coordinates `y`, evaluated analytically in
    /// the chart (no closest-point search, exact at small scales).
    pub fn chart_point(&self, y: &[f64]) -> ChartPoint {
        let x = self.collar_to_ambient(y);
        match self.sphere_curve() {
            None => {
                let dist = self.distances(y);
                let m = self.codim();
                let mut sigma = vec![0.0; self.dim];
                for i in m..self.dim {
                    sigma[i] = y[i].clamp(-0.5, 0.5);
                }
                ChartPoint {
                    x,
                    sigma,
                    d: dist.d,
                    delta: dist.delta,
                    delta_hat: dist.delta_hat,
                    delta_tilde: dist.delta_tilde,
                    psi: dist.psi,
                }
            }
            Some(c) => {
                let (y1, y2) = (y[0], y[1]);
                let s = (0.5 * y2).sin();
                let delta = (y1 * y1 + 4.0 * (1.0 - y1) * s * s).max(0.0).sqrt();
                let t = if self.kind == ScenarioKind::BallEquator {
                    (y[2] + PI).rem_euclid(2.0 * PI) - PI
                } else {
                    y[2].rem_euclid(c.length())
                };
                ChartPoint {
                    x,
                    sigma: c.point(y[2]).to_vec(),
                    d: y1,
                    delta,
                    delta_hat: y2.abs(),
                    delta_tilde: y1.hypot(y2),
                    psi: t,
                }
            }
        }
    }

    /// Diagonal of the metric in collar coordinates.
    pub fn chart_metric(&self, y: &[f64]) -> Vec<f64> {
        match self.sphere_curve() {
            None => vec![1.0; self.dim],
            Some(c) => {
                let r = 1.0 - y[0];
                let j = c.geodesic_curvature(y[2]);
                let jj = y[1].cos() - j * y[1].sin();
                vec![1.0, r * r, r * r * jj * jj]
            }
        }
    }

    /// Volume density `sqrt(det g)` in collar coordinates.
    pub fn chart_volume(&self, y: &[f64]) -> f64 {
        match self.sphere_curve() {
            None => 1.0,
            Some(c) => {
                let r = 1.0 - y[0];
                let j = y[1].cos() - c.geodesic_curvature(y[2]) * y[1].sin();
                r * r * j.abs()
            }
        }
    }

    /// Laplace–Beltrami operator in collar coordinates from axis derivatives.
    pub fn chart_laplacian(&self, y: &[f64], first: &[f64], second: &[f64]) -> f64 {
        match self.sphere_curve() {
            None => second.iter().sum(),
            Some(c) => {
                let r = 1.0 - y[0];
                let (s2, c2) = y[1].sin_cos();
                let kappa = c.geodesic_curvature(y[2]);
                let j = c2 - kappa * s2;
                let j2 = -s2 - kappa * c2;
                let j3 = -c.geodesic_curvature_derivative(y[2]) * s2;
                second[0] - 2.0 * first[0] / r
                    + (second[1] + j2 / j * first[1] + second[2] / (j * j) - j3 / (j * j * j) * first[2])
                        / (r * r)
            }
        }
    }

    /// `h = Laplacian of d` at an ambient point.
    pub fn laplacian_d(&self, x: &[f64]) -> f64 {
        match self.kind {
            ScenarioKind::FlatSlab => 0.0,
            _ => -((self.dim - 1) as f64) / norm(x),
        }
    }

    /// Gradient of `d` at an ambient point.
    pub fn gradient_d(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            ScenarioKind::FlatSlab => {
                let mut g = vec![0.0; self.dim];
                g[0] = 1.0;
                g
            }
            _ => {
                let r = norm(x);
                x.iter().map(|v| -v / r).collect()
            }
        }
    }

    /// `max |Laplacian d|` over the collar of radius `beta`.
    pub fn h_max(&self, beta: f64) -> f64 {
        match self.kind {
            ScenarioKind::FlatSlab => 0.0,
            _ => (self.dim - 1) as f64 / (1.0 - beta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn scenario_invariants_are_enforced() {
        assert!(Scenario::flat_slab(3, 1, 0.1).is_ok());
        assert!(Scenario::flat_slab(3, 2, 0.1).is_err());
        assert!(Scenario::flat_slab(2, 1, 0.1).is_err());
        assert!(Scenario::flat_slab(5, 0, 0.1).is_err());
        assert!(Scenario::ball_equator(0.0).is_err());
        assert!(Scenario::ball_equator(1.5).is_err());
        assert_eq!(Scenario::flat_slab(5, 2, 0.1).unwrap().plateau(), 2.25);
    }

    #[test]
    fn ball_point_radially_below_equator() {
        let s = Scenario::ball_equator(0.2).unwrap();
        let p = s.eval_collar_point(&[0.9, 0.0, 0.0]).unwrap();
        assert_relative_eq!(p.d, 0.1, epsilon = 1e-15);
        assert_eq!(p.delta_hat, 0.0);
        assert_relative_eq!(p.delta, 0.1, epsilon = 1e-15);
        assert_relative_eq!(p.delta_tilde, 0.1, epsilon = 1e-15);
        assert_eq!(p.sigma, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn pythagorean_projection_distance() {
        // delta_hat = 0.3 on the unit sphere, d = 0.4
        let s = Scenario::ball_equator(0.9).unwrap();
        let r = 0.6;
        let x = [r * 0.3f64.cos(), 0.0, r * 0.3f64.sin()];
        let p = s.eval_collar_point(&x).unwrap();
        assert_relative_eq!(p.delta_tilde, 0.5, max_relative = 1e-14);
        let f = Scenario::flat_slab(3, 1, 0.5).unwrap();
        let p = f.eval_collar_point(&[0.24, 0.18, 0.1]).unwrap();
        assert_relative_eq!(p.delta_tilde, 0.3, max_relative = 1e-15);
    }

    #[test]
    fn ball_distance_close_to_projection_distance() {
        let s = Scenario::ball_equator(0.1).unwrap();
        let x = [0.99 * 0.01f64.cos(), 0.0, 0.99 * 0.01f64.sin()];
        let p = s.eval_collar_point(&x).unwrap();
        assert!((p.delta_tilde - p.delta).abs() / p.delta <= p.delta_tilde);
    }

    #[test]
    fn collar_errors() {
        let s = Scenario::ball_equator(0.1).unwrap();
        assert!(matches!(
            s.eval_collar_point(&[0.5, 0.0, 0.0]),
            Err(HardyError::OutsideCollar { .. })
        ));
        assert!(matches!(s.eval_collar_point(&[1.5, 0.0, 0.0]), Err(HardyError::OutsideDomain { .. })));
        let b = Scenario::ball_equator(1.0).unwrap();
        assert!(matches!(b.eval_collar_point(&[0.0, 0.0, 0.5]), Err(HardyError::CutLocus(_))));
        let p = s.eval_collar_point(&[0.0, 1.0, 0.0]).unwrap();
        assert!(p.singular);
        assert_eq!((p.delta, p.delta_hat, p.delta_tilde), (0.0, 0.0, 0.0));
    }

    #[test]
    fn curve_scenario_matches_ball_for_tilted_great_circle() {
        let tilt = 0.0;
        let c = Scenario::curve_on_sphere(Arc::new(TiltedGreatCircle { tilt }), 0.5).unwrap();
        let b = Scenario::ball_equator(0.5).unwrap();
        for x in [[0.8, 0.1, 0.2], [-0.7, 0.5, -0.1], [0.1, -0.9, 0.05]] {
            let (pc, pb) = (c.distances(&x), b.distances(&x));
            assert_relative_eq!(pc.delta, pb.delta, max_relative = 1e-12);
            assert_relative_eq!(pc.delta_hat, pb.delta_hat, max_relative = 1e-12);
            assert_relative_eq!(pc.d, pb.d, max_relative = 1e-14);
        }
    }

    #[test]
    fn latitude_circle_distances_are_analytic() {
        let theta0: f64 = 0.5;
        let c = Scenario::curve_on_sphere(Arc::new(LatitudeCircle { theta0 }), 0.3).unwrap();
        // point at latitude theta0 + 0.1, radius 0.95
        let (th, r) = (theta0 + 0.1, 0.95);
        let x = [r * th.cos() * 0.7f64.cos(), r * th.cos() * 0.7f64.sin(), r * th.sin()];
        let p = c.eval_collar_point(&x).unwrap();
        assert_relative_eq!(p.delta_hat, 0.1, max_relative = 1e-10);
        assert_relative_eq!(p.d, 0.05, max_relative = 1e-12);
        let chord2 = 0.05f64.powi(2) + 4.0 * r * (0.05f64).sin().powi(2);
        assert_relative_eq!(p.delta, chord2.sqrt(), max_relative = 1e-10);
        assert_relative_eq!(p.psi, 0.7 * theta0.cos(), max_relative = 1e-10);
    }

    #[test]
    fn curve_measure_is_length() {
        let c = Scenario::curve_on_sphere(Arc::new(LatitudeCircle { theta0: 0.5 }), 0.3).unwrap();
        assert_relative_eq!(c.sigma_measure(), 2.0 * PI * 0.5f64.cos());
        assert_relative_eq!(Scenario::ball_equator(0.1).unwrap().sigma_measure(), 2.0 * PI);
        assert_eq!(Scenario::flat_slab(5, 2, 0.1).unwrap().sigma_measure(), 1.0);
    }

    fn chart_laplacian_matches_ambient(s: &Scenario, y: [f64; 3]) {
        // f(x) = x1^2 x2 + sin(x3) has an elementary Laplacian
        let f = |x: &[f64]| x[0] * x[0] * x[1] + x[2].sin();
        let lap = |x: &[f64]| 2.0 * x[1] - x[2].sin();
        let h = [1e-3, 1e-3, 1e-3];
        let d = crate::fd::axis_derivatives(|z: &[f64]| Ok(f(&s.collar_to_ambient(z))), &y, &h).unwrap();
        let got = s.chart_laplacian(&y, &d.first, &d.second);
        let x = s.collar_to_ambient(&y);
        assert!((got - lap(&x)).abs() < 1e-7, "{got} vs {}", lap(&x));
    }

    #[test]
    fn chart_laplacian_is_laplace_beltrami() {
        let b = Scenario::ball_equator(0.5).unwrap();
        chart_laplacian_matches_ambient(&b, [0.1, 0.2, 0.7]);
        let c = Scenario::curve_on_sphere(Arc::new(LatitudeCircle { theta0: 0.6 }), 0.3).unwrap();
        chart_laplacian_matches_ambient(&c, [0.05, -0.1, 1.3]);
        let f = Scenario::flat_slab(3, 1, 0.5).unwrap();
        chart_laplacian_matches_ambient(&f, [0.05, -0.1, 0.3]);
    }

    proptest! {
        #[test]
        fn delta_never_exceeds_delta_tilde(y1 in 0.0f64..0.3, y2 in -0.3f64..0.3, t in -3.0f64..3.0) {
            let b = Scenario::ball_equator(1.0).unwrap();
            let x = b.collar_to_ambient(&[y1, y2, t]);
            let p = b.distances(&x);
            prop_assert!(p.delta <= p.delta_tilde * (1.0 + 1e-12));
            prop_assert!(p.delta_tilde <= 2.0 * p.delta + 1e-15);
            let cp = b.chart_point(&[y1, y2, t]);
            prop_assert!((cp.delta - p.delta).abs() <= 1e-12);
            let f = Scenario::flat_slab(4, 1, 0.5).unwrap();
            let q = f.distances(&[y1, y2, t / 3.0, 0.2]);
            prop_assert!(q.delta <= q.delta_tilde);
            prop_assert!(q.d >= 0.0);
        }

        #[test]
        fn projection_distance_identity_is_exact(y1 in 0.0f64..0.09, y2 in -0.09f64..0.09, t in -3.0f64..3.0) {
            prop_assume!(y1.hypot(y2) < 0.095);
            let b = Scenario::ball_equator(0.1).unwrap();
            let p = b.eval_collar_point(&b.collar_to_ambient(&[y1, y2, t])).unwrap();
            let lhs = p.delta_tilde * p.delta_tilde;
            prop_assert!((lhs - (p.delta_hat * p.delta_hat + p.d * p.d)).abs() <= 4.0 * f64::EPSILON * lhs);
        }
    }
}
