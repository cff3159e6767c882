use super::{norm, Scenario};
use crate::error::{HardyError, Result};
use crate::fd;

/// Fermi chart centred at a point of `Sigma_k`: collar coordinates shifted
/// so that `y = 0` maps to the base point.
#[derive(Debug, Clone)]
pub struct FermiChart {
    scenario: Scenario,
    base: Vec<f64>,
    radius: f64,
}

/// Metric tensor with the residuals of its exact rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub g: Vec<Vec<f64>>,
    /// `|g_11 - 1|`.
    pub g11_residual: f64,
    /// `max_beta |g_1beta|`.
    pub g1b_residual: f64,
    /// `max |g_ab - delta_ab| / |y_tilde|` (unnormalized when `y_tilde = 0`).
    pub identity_residual: f64,
    pub step: f64,
}

impl FermiChart {
    /// Chart at `Sigma_k` parameter `base`, radius `beta / 2`.
    pub fn new(scenario: &Scenario, base: &[f64]) -> Result<Self> {
        if base.len() != scenario.sub_dim() {
            return Err(HardyError::DimensionMismatch {
                expected: scenario.sub_dim(),
                found: base.len(),
            });
        }
        Ok(FermiChart {
            scenario: scenario.clone(),
            base: base.to_vec(),
            radius: 0.5 * scenario.beta(),
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn base_point(&self) -> Vec<f64> {
        self.scenario.sigma_point(&self.base)
    }

    /// Collar coordinates of chart coordinates `y`.
    pub fn to_collar(&self, y: &[f64]) -> Vec<f64> {
        let m = self.scenario.codim();
        let mut z = y.to_vec();
        for (zi, b) in z[m..].iter_mut().zip(&self.base) {
            *zi += b;
        }
        z
    }

    fn map_unchecked(&self, y: &[f64]) -> Vec<f64> {
        self.scenario.collar_to_ambient(&self.to_collar(y))
    }

    pub fn fermi_map(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.scenario.dim() {
            return Err(HardyError::DimensionMismatch {
                expected: self.scenario.dim(),
                found: y.len(),
            });
        }
        let n = norm(y);
        if n >= self.radius {
            return Err(HardyError::OutOfChart {
                norm: n,
                radius: self.radius,
            });
        }
        Ok(self.map_unchecked(y))
    }

    /// Orthonormal frame at the base point: inward normal, normals inside
    /// the boundary, tangents of `Sigma_k` (columns of `dF(0)`).
    pub fn frame(&self) -> Result<Vec<Vec<f64>>> {
        let zero = vec![0.0; self.scenario.dim()];
        jacobian(self, &zero, 1e-4)
    }
}

fn jacobian(c: &FermiChart, y: &[f64], h: f64) -> Result<Vec<Vec<f64>>> {
    let n = y.len();
    let mut cols = Vec::with_capacity(n);
    let mut z = y.to_vec();
    for i in 0..n {
        let mut central = |hs: f64| {
            z[i] = y[i] + hs;
            let p = c.map_unchecked(&z);
            z[i] = y[i] - hs;
            let m = c.map_unchecked(&z);
            z[i] = y[i];
            p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * hs)).collect::<Vec<f64>>()
        };
        let (coarse, fine) = (central(h), central(0.5 * h));
        cols.push(fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect());
    }
    Ok(cols)
}

/// Metric `g_ab = <d_a F, d_b F>` by Richardson-extrapolated central
/// differences of the Fermi map. The default step is `1e-3 max(|y|, 1e-2)`;
/// it is shrunk to keep the stencil inside the chart.
pub fn metric_components(c: &FermiChart, y: &[f64], h_fd: Option<f64>) -> Result<MetricReport> {
    let n = norm(y);
    if n >= c.radius {
        return Err(HardyError::OutOfChart {
            norm: n,
            radius: c.radius,
        });
    }
    let mut h = h_fd.unwrap_or_else(|| fd::default_step(n));
    let room = c.radius - n;
    if h >= room {
        h = 0.5 * room;
    }
    if h < 1e-12 {
        return Err(HardyError::BadStep(format!(
            "step {h:e} underflows at distance {room:e} from the chart boundary"
        )));
    }
    let cols = jacobian(c, y, h)?;
    let dim = y.len();
    let mut g = vec![vec![0.0; dim]; dim];
    for a in 0..dim {
        for b in 0..dim {
            g[a][b] = super::dot(&cols[a], &cols[b]);
        }
    }
    let m = c.scenario.codim();
    let ytilde = norm(&y[..m]);
    let mut dev: f64 = 0.0;
    for (a, row) in g.iter().enumerate() {
        for (b, v) in row.iter().enumerate() {
            let id = if a == b { 1.0 } else { 0.0 };
            dev = dev.max((v - id).abs());
        }
    }
    Ok(MetricReport {
        g11_residual: (g[0][0] - 1.0).abs(),
        g1b_residual: g[0][1..].iter().fold(0.0f64, |acc, v| acc.max(v.abs())),
        identity_residual: if ytilde > 0.0 { dev / ytilde } else { dev },
        g,
        step: h,
    })
}
