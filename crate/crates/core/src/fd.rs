//! Central finite differences with one level of Richardson extrapolation.

use crate::error::{HardyError, Result};

/// Value with an a-posteriori error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdEstimate {
    pub value: f64,
    pub error: f64,
}

/// Default step `1e-3 * max(delta_tilde, 1e-2)`.
pub fn default_step(delta_tilde: f64) -> f64 {
    1e-3 * delta_tilde.max(1e-2)
}

fn check_step(x: &[f64], h: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(HardyError::BadStep(format!("step {h:e} is not positive")));
    }
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale + 0.5 * h == scale {
        return Err(HardyError::BadStep(format!(
            "step {h:e} underflows at coordinate scale {scale:e}"
        )));
    }
    Ok(())
}

/// First and second derivatives along each axis, with per-axis steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisDerivatives {
    pub value: f64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    /// Largest Richardson correction over all reported derivatives.
    pub error: f64,
}

pub fn axis_derivatives<F>(f: F, x: &[f64], steps: &[f64]) -> Result<AxisDerivatives>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if steps.len() != x.len() {
        return Err(HardyError::DimensionMismatch {
            expected: x.len(),
            found: steps.len(),
        });
    }
    let f0 = f(x)?;
    let mut first = Vec::with_capacity(x.len());
    let mut second = Vec::with_capacity(x.len());
    let mut error: f64 = 0.0;
    let mut y = x.to_vec();
    for (i, &h) in steps.iter().enumerate() {
        check_step(x, h)?;
        let mut eval = |t: f64| -> Result<f64> {
            y[i] = x[i] + t;
            let v = f(&y);
            y[i] = x[i];
            v
        };
        let (p1, m1) = (eval(h)?, eval(-h)?);
        let (p2, m2) = (eval(0.5 * h)?, eval(-0.5 * h)?);
        let d1h = (p1 - m1) / (2.0 * h);
        let d1h2 = (p2 - m2) / h;
        let d2h = (p1 - 2.0 * f0 + m1) / (h * h);
        let d2h2 = (p2 - 2.0 * f0 + m2) / (0.25 * h * h);
        first.push((4.0 * d1h2 - d1h) / 3.0);
        second.push((4.0 * d2h2 - d2h) / 3.0);
        error = error.max((d1h2 - d1h).abs() / 3.0).max((d2h2 - d2h).abs() / 3.0);
    }
    Ok(AxisDerivatives {
        value: f0,
        first,
        second,
        error,
    })
}

/// Euclidean Laplacian by the `2N+1`-point stencil, Richardson-extrapolated.
pub fn laplacian_fd<F>(f: F, x: &[f64], h: f64) -> Result<FdEstimate>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let steps = vec![h; x.len()];
    let d = axis_derivatives_second(&f, x, &steps)?;
    Ok(d)
}

fn axis_derivatives_second<F>(f: &F, x: &[f64], steps: &[f64]) -> Result<FdEstimate>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let f0 = f(x)?;
    let mut y = x.to_vec();
    let (mut coarse, mut fine) = (0.0, 0.0);
    for (i, &h) in steps.iter().enumerate() {
        check_step(x, h)?;
        for (scale, acc) in [(1.0, &mut coarse), (0.5, &mut fine)] {
            let hs = h * scale;
            y[i] = x[i] + hs;
            let p = f(&y)?;
            y[i] = x[i] - hs;
            let m = f(&y)?;
            y[i] = x[i];
            *acc += (p - 2.0 * f0 + m) / (hs * hs);
        }
    }
    Ok(FdEstimate {
        value: (4.0 * fine - coarse) / 3.0,
        error: (fine - coarse).abs() / 3.0,
    })
}

/// Gradient by Richardson-extrapolated central differences.
pub fn gradient_fd<F>(f: F, x: &[f64], h: f64) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut y = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    let mut err: f64 = 0.0;
    check_step(x, h)?;
    for i in 0..x.len() {
        let mut central = |hs: f64| -> Result<f64> {
            y[i] = x[i] + hs;
            let p = f(&y)?;
            y[i] = x[i] - hs;
            let m = f(&y)?;
            y[i] = x[i];
            Ok((p - m) / (2.0 * hs))
        };
        let (c, fi) = (central(h)?, central(0.5 * h)?);
        g.push((4.0 * fi - c) / 3.0);
        err = err.max((fi - c).abs() / 3.0);
    }
    Ok((g, err))
}
