//! The explicit function family built on the virtual ground state
//! `d * delta_tilde^{(k-N)/2}`: `X_a`, the exponent fields, `W_{a,M,q}`, the
//! subsolution `V_eps`, the supersolution `U` and the collar constants, with
//! pointwise checks of the operator `L_lambda`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{HardyError, Result};
use crate::expr::{Expr, Vars};
use crate::fd::{self, FdEstimate};
use crate::geometry::{ChartPoint, Scenario, ScenarioKind};
use crate::quadrature::GaussLegendre;
use crate::sampling::{half_sphere_direction, Halton};
use crate::weights::{self, normalize_p, vars_chart, vars_sigma, WeightTriple};

/// `X_a(t) = (-log t)^a` for `0 < t < 1`.
pub fn log_power(a: f64, t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(HardyError::Domain {
            function: "log_power",
            detail: format!("t = {t} outside (0, 1)"),
        });
    }
    Ok((-t.ln()).powf(a))
}

/// `alpha` and `alpha_tilde` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFields {
    pub alpha: f64,
    pub alpha_tilde: f64,
}

impl ExponentFields {
    /// `m = N - k`, `q_sigma = q(sigma(x_bar))`.
    pub fn new(m: usize, q_sigma: f64, delta_tilde: f64) -> Result<Self> {
        let m = m as f64;
        let gap = 1.0 - q_sigma + delta_tilde;
        if gap < 0.0 {
            return Err(HardyError::Domain {
                function: "alpha",
                detail: format!("1 - q(sigma) + delta_tilde = {gap:e} < 0"),
            });
        }
        Ok(ExponentFields {
            alpha: -0.5 * m + 0.5 * m * gap.sqrt(),
            alpha_tilde: 0.25 * m * m * gap,
        })
    }
}

/// Parameters of `W_{a,M,q_ref - shift}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundStateSpec {
    pub a: f64,
    pub tilt: f64,
    pub q_ref: Expr,
    pub shift: f64,
    /// Replace `alpha` by its limit `(k-N)/2`.
    pub limiting: bool,
}

impl GroundStateSpec {
    pub fn new(a: f64, tilt: f64, q_ref: Expr) -> Self {
        GroundStateSpec {
            a,
            tilt,
            q_ref,
            shift: 0.0,
            limiting: false,
        }
    }

    pub fn with_shift(mut self, eps: f64) -> Self {
        self.shift = eps;
        self
    }

    pub fn limiting(mut self) -> Self {
        self.limiting = true;
        self
    }

    fn q_sigma(&self, sigma: &[f64], psi: f64) -> f64 {
        self.q_ref.eval(&vars_sigma(sigma, &[psi])) - self.shift
    }

    fn from_parts(&self, m: usize, d: f64, delta_tilde: f64, q_sigma: f64) -> Result<f64> {
        if delta_tilde == 0.0 {
            return Err(HardyError::SingularPoint);
        }
        let alpha = if self.limiting {
            -0.5 * m as f64
        } else {
            ExponentFields::new(m, q_sigma, delta_tilde)?.alpha
        };
        let x = if self.a == 0.0 { 1.0 } else { log_power(self.a, delta_tilde)? };
        Ok(x * (self.tilt * d).exp() * d * delta_tilde.powf(alpha))
    }
}

/// `W(x)` at an ambient collar point.
pub fn eval_w(spec: &GroundStateSpec, s: &Scenario, x: &[f64]) -> Result<f64> {
    let p = s.eval_collar_point(x)?;
    if p.delta_tilde >= 1.0 {
        return Err(HardyError::Domain {
            function: "eval_w",
            detail: format!("delta_tilde = {} >= 1", p.delta_tilde),
        });
    }
    let q = spec.q_sigma(&p.sigma, p.psi);
    spec.from_parts(s.codim(), p.d, p.delta_tilde, q)
}

/// `W` at collar coordinates `y`.
pub fn eval_w_chart(spec: &GroundStateSpec, s: &Scenario, y: &[f64]) -> Result<f64> {
    let c = s.chart_point(y);
    eval_w_at(spec, s, &c)
}

fn eval_w_at(spec: &GroundStateSpec, s: &Scenario, c: &ChartPoint) -> Result<f64> {
    if !(c.delta_tilde < 1.0) || c.d < 0.0 {
        return Err(HardyError::OutsideCollar {
            delta_tilde: c.delta_tilde,
            beta: 1.0,
        });
    }
    let q = spec.q_sigma(&c.sigma, c.psi);
    spec.from_parts(s.codim(), c.d, c.delta_tilde, q)
}

/// `-Lap u / u - ((N-k)^2/4) / |y_tilde|^2` for `u = y1 |y_tilde|^{(k-N)/2}`,
/// from the closed form `Lap(y1 r^b) = y1 r^{b-2} b (b + m)`.
pub fn flat_ground_state_residual(dim: usize, sub_dim: usize, x: &[f64]) -> Result<f64> {
    let m = dim - sub_dim;
    let r2: f64 = x[..m].iter().map(|v| v * v).sum();
    if r2 == 0.0 {
        return Err(HardyError::SingularPoint);
    }
    let b = -0.5 * m as f64;
    let mf = m as f64;
    Ok(-(b * (b + mf)) / r2 - 0.25 * mf * mf / r2)
}

/// Relative gap between the finite-difference Laplacian of the flat ground
/// state and its closed form.
pub fn flat_ground_state_fd_check(dim: usize, sub_dim: usize, x: &[f64]) -> Result<f64> {
    let m = dim - sub_dim;
    let b = -0.5 * m as f64;
    let r = x[..m].iter().map(|v| v * v).sum::<f64>().sqrt();
    let u = |y: &[f64]| -> Result<f64> {
        let r: f64 = y[..m].iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(y[0] * r.powf(b))
    };
    let exact = x[0] * r.powf(b - 2.0) * b * (b + m as f64);
    let lap = fd::laplacian_fd(u, x, fd::default_step(r))?;
    Ok(((lap.value - exact) / exact).abs())
}

/// `L = -Lap - ((N-k)^2/4) q delta^-2 + lambda eta delta^-2 - V` in the
/// `p = 1` normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    pub lambda: f64,
    pub q: Expr,
    pub eta: Expr,
    pub potential: Option<Expr>,
    pub dim: usize,
    pub sub_dim: usize,
}

impl OperatorSpec {
    /// Normalizes `p` away when it is not identically one.
    pub fn from_weights(w: &WeightTriple, s: &Scenario, lambda: f64) -> Result<Self> {
        let (q, eta, potential) = if w.p.as_const() == Some(1.0) {
            (w.q.clone(), w.eta.clone(), None)
        } else {
            let n = normalize_p(w, s.dim())?;
            (n.q_over_p, n.eta_over_p, Some(n.v_extra))
        };
        Ok(OperatorSpec {
            lambda,
            q,
            eta,
            potential,
            dim: s.dim(),
            sub_dim: s.sub_dim(),
        })
    }

    fn zeroth_order(&self, v: &Vars<'_>, delta: f64) -> f64 {
        let m = (self.dim - self.sub_dim) as f64;
        let pot = self.potential.as_ref().map_or(0.0, |p| p.eval(v));
        (-0.25 * m * m * self.q.eval(v) + self.lambda * self.eta.eval(v)) / (delta * delta) - pot
    }
}

/// `L f` at an ambient point; the stencil must stay inside `Omega`.
pub fn operator_apply<F>(op: &OperatorSpec, s: &Scenario, f: F, x: &[f64]) -> Result<FdEstimate>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let dist = s.distances(x);
    let h = fd::default_step(dist.delta_tilde);
    if h > 0.1 * dist.delta_tilde {
        return Err(HardyError::BadStep(format!(
            "step {h:e} exceeds delta_tilde / 10 = {:e}",
            0.1 * dist.delta_tilde
        )));
    }
    let guarded = |y: &[f64]| -> Result<f64> {
        if !s.contains(y) {
            return Err(HardyError::OutsideDomain { point: y.to_vec() });
        }
        f(y)
    };
    let lap = fd::laplacian_fd(guarded, x, h)?;
    let f0 = f(x)?;
    let z = op.zeroth_order(&weights::vars_at(x, &dist), dist.delta);
    Ok(FdEstimate {
        value: -lap.value + z * f0,
        error: lap.error,
    })
}

/// Per-axis chart steps: `1e-3 delta_tilde` on normal axes, the default
/// step on tangential axes.
pub fn chart_steps(s: &Scenario, delta_tilde: f64) -> Vec<f64> {
    let m = s.codim();
    (0..s.dim())
        .map(|i| if i < m { 1e-3 * delta_tilde } else { fd::default_step(delta_tilde) })
        .collect()
}

/// `L f` at collar coordinates `base + y_rel` with `f` given in collar
/// coordinates relative to `base` (tangential offsets only).
pub fn operator_apply_chart<F>(
    op: &OperatorSpec,
    s: &Scenario,
    f: F,
    y_rel: &[f64],
    base: &[f64],
) -> Result<FdEstimate>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let y = absolute(s, y_rel, base);
    let c = s.chart_point(&y);
    let steps = chart_steps(s, c.delta_tilde);
    let der = fd::axis_derivatives(&f, y_rel, &steps)?;
    let lap = s.chart_laplacian(&y, &der.first, &der.second);
    let z = op.zeroth_order(&vars_chart(&c), c.delta);
    let scale = der.value.abs() / (c.delta_tilde * c.delta_tilde);
    Ok(FdEstimate {
        value: -lap + z * der.value,
        error: der.error.max(1e-12 * scale),
    })
}

fn absolute(s: &Scenario, y_rel: &[f64], base: &[f64]) -> Vec<f64> {
    let m = s.codim();
    let mut y = y_rel.to_vec();
    for (v, b) in y[m..].iter_mut().zip(base) {
        *v += b;
    }
    y
}

/// `h_max`, `M0`, `M1`, `M2` on the collar of radius `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollarConstants {
    pub beta: f64,
    pub h_max: f64,
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
}

impl CollarConstants {
    /// `M2` needs `max |grad p . grad d|`, sampled on the collar.
    pub fn new(s: &Scenario, p: &Expr, beta: f64) -> Result<Self> {
        let h_max = s.h_max(beta);
        let mut cross = 0.0f64;
        if p.as_const().is_none() {
            let grad = p.gradient(s.dim())?;
            for y in collar_points(s, beta, 512, 7).0 {
                let c = s.chart_point(&y.absolute(s));
                let gd = s.gradient_d(&c.x);
                let v = Vars::coords(&c.x);
                let dot: f64 = grad.iter().zip(&gd).map(|(g, d)| g.eval(&v) * d).sum();
                cross = cross.max(dot.abs());
            }
        }
        Ok(CollarConstants {
            beta,
            h_max,
            m0: h_max + 1.0,
            m1: -0.5 * h_max - 1.0,
            m2: -0.5 * (h_max + cross) - 1.0,
        })
    }
}

/// A collar sample in relative chart form.
#[derive(Debug, Clone, PartialEq)]
pub struct CollarSample {
    pub index: usize,
    pub y_rel: Vec<f64>,
    pub base: Vec<f64>,
}

impl CollarSample {
    pub fn absolute(&self, s: &Scenario) -> Vec<f64> {
        absolute(s, &self.y_rel, &self.base)
    }

    pub fn delta_tilde(&self, s: &Scenario) -> f64 {
        self.y_rel[..s.codim()].iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Low-discrepancy collar samples stratified over three decades of
/// `delta_tilde` below `beta`. Samples with `y1 < 0.01 delta_tilde` are
/// returned separately as excluded.
pub fn collar_points(s: &Scenario, beta: f64, n: usize, seed: u64) -> (Vec<CollarSample>, Vec<usize>) {
    let m = s.codim();
    let k = s.sub_dim();
    let dom = s.sigma_domain();
    let dir_dims = if m == 2 { 1 } else { m };
    let mut h = Halton::new((1 + dir_dims + k).min(12), seed);
    let mut kept = Vec::with_capacity(n);
    let mut excluded = Vec::new();
    for i in 0..n {
        let u = h.next_point();
        let r = beta * 10f64.powf(-((i % 3) as f64 + u[0]));
        let dir = half_sphere_direction(m, &u[1..1 + dir_dims.min(u.len() - 1)]);
        if dir[0] < 0.01 {
            excluded.push(i);
            continue;
        }
        let mut y_rel = vec![0.0; s.dim()];
        for a in 0..m {
            y_rel[a] = r * dir[a];
        }
        let base: Vec<f64> = (0..k)
            .map(|a| {
                let uu = u[(1 + dir_dims + a) % u.len()];
                if dom.periodic {
                    dom.lo[a] + (dom.hi[a] - dom.lo[a]) * uu
                } else {
                    -0.4 + 0.8 * uu
                }
            })
            .collect();
        kept.push(CollarSample { index: i, y_rel, base });
    }
    (kept, excluded)
}

/// Outcome of a pointwise sign sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignReport {
    pub samples: usize,
    pub evaluated: usize,
    pub violations: usize,
    /// Samples dropped for small `y1` or failed stencils.
    pub excluded: usize,
    /// Supersolution only: samples with `U <= 0`.
    pub positivity_violations: usize,
    /// Largest normalized margin `+-L F delta_tilde^2 / |F|` (violation when
    /// positive beyond the finite-difference error).
    pub max_value: f64,
    pub worst_point: Option<Vec<f64>>,
    /// Largest margin per decade of `delta_tilde`.
    pub margin_curve: Vec<(f64, f64)>,
}

impl SignReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.positivity_violations == 0
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": 1,
            "samples": self.samples,
            "evaluated": self.evaluated,
            "violations": self.violations,
            "positivity_violations": self.positivity_violations,
            "excluded": self.excluded,
            "max_value": self.max_value,
            "worst_point": self.worst_point,
            "margin_curve": self.margin_curve,
        })
    }

    pub fn margin_csv(&self) -> String {
        let mut out = String::from("delta_tilde,margin\n");
        for (d, m) in &self.margin_curve {
            out.push_str(&format!("{d:.6e},{m:.6e}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Sense {
    /// `L F <= 0`.
    Sub,
    /// `L F >= 0` and `F > 0`.
    Super,
}

fn sweep<F>(
    s: &Scenario,
    op: &OperatorSpec,
    beta: f64,
    n: usize,
    seed: u64,
    sense: Sense,
    f: F,
) -> Result<SignReport>
where
    F: Fn(&[f64], &[f64]) -> Result<f64>,
{
    let (pts, dropped) = collar_points(s, beta, n, seed);
    let mut report = SignReport {
        samples: n,
        evaluated: 0,
        violations: 0,
        excluded: dropped.len(),
        positivity_violations: 0,
        max_value: f64::NEG_INFINITY,
        worst_point: None,
        margin_curve: Vec::new(),
    };
    let mut bins: Vec<(i32, f64)> = Vec::new();
    for p in &pts {
        let fy = |z: &[f64]| f(z, &p.base);
        let res = operator_apply_chart(op, s, fy, &p.y_rel, &p.base);
        let (l, value) = match res.and_then(|l| f(&p.y_rel, &p.base).map(|v| (l, v))) {
            Ok(x) => x,
            Err(_) => {
                report.excluded += 1;
                continue;
            }
        };
        report.evaluated += 1;
        let dt = p.delta_tilde(s);
        let norm = dt * dt / value.abs();
        let signed = match sense {
            Sense::Sub => l.value,
            Sense::Super => -l.value,
        };
        let margin = signed * norm;
        let tol = l.error * norm + 1e-9;
        if margin > tol {
            report.violations += 1;
        }
        if sense == Sense::Super && !(value > 0.0) {
            report.positivity_violations += 1;
        }
        if margin > report.max_value {
            report.max_value = margin;
            report.worst_point = Some(p.absolute(s));
        }
        let key = dt.log10().floor() as i32;
        match bins.iter_mut().find(|b| b.0 == key) {
            Some(b) => b.1 = b.1.max(margin),
            None => bins.push((key, margin)),
        }
    }
    bins.sort_by(|a, b| b.0.cmp(&a.0));
    report.margin_curve = bins.into_iter().map(|(k, v)| (10f64.powi(k), v)).collect();
    Ok(report)
}

fn normalized_q(w: &WeightTriple, s: &Scenario) -> Result<Expr> {
    Ok(if w.p.as_const() == Some(1.0) {
        w.q.clone()
    } else {
        normalize_p(w, s.dim())?.q_over_p
    })
}

/// `V_eps = W_{-1,M0,q} + W_{0,M0,q-eps}` in relative chart coordinates.
pub fn subsolution(s: &Scenario, q: &Expr, eps: f64, consts: &CollarConstants) -> impl Fn(&[f64], &[f64]) -> Result<f64> {
    let w1 = GroundStateSpec::new(-1.0, consts.m0, q.clone());
    let w0 = GroundStateSpec::new(0.0, consts.m0, q.clone()).with_shift(eps);
    let s = s.clone();
    move |y_rel: &[f64], base: &[f64]| {
        let c = s.chart_point(&absolute(&s, y_rel, base));
        Ok(eval_w_at(&w1, &s, &c)? + eval_w_at(&w0, &s, &c)?)
    }
}

/// `U = W_{0,M1,q} - W_{-1,M0,q}` in relative chart coordinates.
pub fn supersolution(s: &Scenario, q: &Expr, consts: &CollarConstants) -> impl Fn(&[f64], &[f64]) -> Result<f64> {
    let w0 = GroundStateSpec::new(0.0, consts.m1, q.clone());
    let w1 = GroundStateSpec::new(-1.0, consts.m0, q.clone());
    let s = s.clone();
    move |y_rel: &[f64], base: &[f64]| {
        let c = s.chart_point(&absolute(&s, y_rel, base));
        Ok(eval_w_at(&w0, &s, &c)? - eval_w_at(&w1, &s, &c)?)
    }
}

/// Samples `L_lambda V_eps <= 0` on the collar `{delta_tilde < beta}`.
pub fn check_subsolution(
    s: &Scenario,
    w: &WeightTriple,
    lambda: f64,
    eps: f64,
    beta: f64,
    n: usize,
    seed: u64,
) -> Result<SignReport> {
    if !(0.0..1.0).contains(&eps) {
        return Err(HardyError::Domain {
            function: "check_subsolution",
            detail: format!("eps = {eps} outside [0, 1)"),
        });
    }
    let sb = s.with_beta(beta)?;
    let op = OperatorSpec::from_weights(w, &sb, lambda)?;
    let consts = CollarConstants::new(&sb, &w.p, beta)?;
    let q = normalized_q(w, &sb)?;
    sweep(&sb, &op, beta, n, seed, Sense::Sub, subsolution(&sb, &q, eps, &consts))
}

/// Samples `L_lambda U >= 0` and `U > 0` on the collar.
pub fn check_supersolution(
    s: &Scenario,
    w: &WeightTriple,
    lambda: f64,
    beta: f64,
    n: usize,
    seed: u64,
) -> Result<SignReport> {
    let sb = s.with_beta(beta)?;
    let op = OperatorSpec::from_weights(w, &sb, lambda)?;
    let consts = CollarConstants::new(&sb, &w.p, beta)?;
    let q = normalized_q(w, &sb)?;
    sweep(&sb, &op, beta, n, seed, Sense::Super, supersolution(&sb, &q, &consts))
}

/// Collar radius at which every sweep passes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaCertificate {
    pub beta: f64,
    pub halvings: usize,
    /// `(beta, worst margin)` of every rejected radius.
    pub rejected: Vec<(f64, f64)>,
}

/// Halves `beta` from `min(0.1, safe)` until the subsolution sweeps for all
/// `eps` and the supersolution sweep report no violation.
pub fn certify_beta(
    s: &Scenario,
    w: &WeightTriple,
    lambda: f64,
    eps_list: &[f64],
    n: usize,
    seed: u64,
) -> Result<BetaCertificate> {
    const MAX_HALVINGS: usize = 60;
    let mut beta = 0.1f64.min(s.safe_beta());
    let mut rejected = Vec::new();
    for halvings in 0..=MAX_HALVINGS {
        let mut worst = f64::NEG_INFINITY;
        let mut ok = true;
        for &eps in eps_list {
            let r = check_subsolution(s, w, lambda, eps, beta, n, seed)?;
            worst = worst.max(r.max_value);
            ok &= r.passed();
            if !ok {
                break;
            }
        }
        if ok {
            let r = check_supersolution(s, w, lambda, beta, n, seed)?;
            worst = worst.max(r.max_value);
            ok = r.passed();
        }
        if ok {
            return Ok(BetaCertificate { beta, halvings, rejected });
        }
        rejected.push((beta, worst));
        beta *= 0.5;
    }
    Err(HardyError::NotConverged {
        iterations: MAX_HALVINGS,
        residual: rejected.last().map_or(f64::NAN, |r| r.1),
    })
}

/// One rung of the `Delta W` envelope fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeRung {
    pub delta_tilde: f64,
    pub samples: usize,
    /// `max |Lap W / W + (m^2/4) delta^-2 - (h + 2 M0)/d| / (|log delta_tilde| delta_tilde^{-3/2})`.
    pub k_fit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub shift: f64,
    pub rungs: Vec<EnvelopeRung>,
    /// `max K / min K` over the rungs.
    pub stability_ratio: f64,
}

/// Envelope fit of `Lap W_{0,M0,q-eps}` on a ladder of `delta_tilde`.
pub fn delta_w_envelope(s: &Scenario, q: &Expr, eps: f64, rungs: &[f64], per_rung: usize) -> Result<EnvelopeReport> {
    let m = s.codim() as f64;
    let consts = CollarConstants::new(s, &Expr::constant(1.0), s.beta())?;
    let spec = GroundStateSpec::new(0.0, consts.m0, q.clone()).with_shift(eps);
    let dom = s.sigma_domain();
    let mut out = Vec::new();
    for &r in rungs {
        let mut k_fit = 0.0f64;
        let mut count = 0;
        for i in 0..per_rung {
            let phi = -1.2 + 2.4 * (i as f64 + 0.5) / per_rung as f64;
            let mut y_rel = vec![0.0; s.dim()];
            y_rel[0] = r * phi.cos();
            let spread = ((s.codim() - 1) as f64).sqrt();
            for v in &mut y_rel[1..s.codim()] {
                *v = r * phi.sin() / spread;
            }
            let base: Vec<f64> = (0..s.sub_dim())
                .map(|a| {
                    let frac = (i as f64 * 0.618_033_988_75).fract();
                    if dom.periodic {
                        dom.lo[a] + (dom.hi[a] - dom.lo[a]) * frac
                    } else {
                        -0.4 + 0.8 * frac
                    }
                })
                .collect();
            let y = absolute(s, &y_rel, &base);
            let c = s.chart_point(&y);
            let f = |z: &[f64]| eval_w_chart(&spec, s, &absolute(s, z, &base));
            let der = fd::axis_derivatives(f, &y_rel, &chart_steps(s, r))?;
            let lap = s.chart_laplacian(&y, &der.first, &der.second);
            let h = s.laplacian_d(&c.x);
            let q_res = (lap / der.value + 0.25 * m * m / (c.delta * c.delta) - (h + 2.0 * consts.m0) / c.d).abs();
            k_fit = k_fit.max(q_res / (r.ln().abs() * r.powf(-1.5)));
            count += 1;
        }
        out.push(EnvelopeRung {
            delta_tilde: r,
            samples: count,
            k_fit,
        });
    }
    let kmax = out.iter().map(|r| r.k_fit).fold(0.0, f64::max);
    let kmin = out.iter().map(|r| r.k_fit).fold(f64::INFINITY, f64::min);
    Ok(EnvelopeReport {
        shift: eps,
        rungs: out,
        stability_ratio: kmax / kmin,
    })
}

/// Tensor quadrature over the normal half-ball `{|y_tilde| < R}` in polar
/// form: returns nodes `(r, direction, weight)` without the radial part.
fn half_sphere_rule(m: usize, order: usize) -> Vec<(Vec<f64>, f64)> {
    let rule = GaussLegendre::new(order);
    let mut out = Vec::new();
    if m == 2 {
        for (th, w) in rule.mapped(-0.5 * PI, 0.5 * PI) {
            out.push((vec![th.cos(), th.sin()], w));
        }
    } else {
        // |S^{m-2}| sin^{m-2} theta on (0, pi/2); the integrands depend only on y1 and r
        let sphere = 2.0 * PI.powf(0.5 * (m - 1) as f64) / gamma_half(m - 1);
        for (th, w) in rule.mapped(0.0, 0.5 * PI) {
            let mut dir = vec![0.0; m];
            dir[0] = th.cos();
            dir[1] = th.sin();
            out.push((dir, w * sphere * th.sin().powi(m as i32 - 2)));
        }
    }
    out
}

/// `Gamma(n / 2)` for positive integers `n`.
fn gamma_half(n: usize) -> f64 {
    if n % 2 == 0 {
        (1..n / 2).map(|i| i as f64).product()
    } else {
        let mut g = PI.sqrt();
        let mut x = 0.5;
        while x < 0.5 * n as f64 - 0.25 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

fn tangential_rule(s: &Scenario) -> Vec<(Vec<f64>, f64)> {
    let dom = s.sigma_domain();
    let k = dom.lo.len();
    let rule = GaussLegendre::new(6);
    let panels = if k == 1 { 12 } else { 4 };
    let mut axis: Vec<Vec<(f64, f64)>> = Vec::new();
    for a in 0..k {
        let h = (dom.hi[a] - dom.lo[a]) / panels as f64;
        let mut pts = Vec::new();
        for p in 0..panels {
            let lo = dom.lo[a] + h * p as f64;
            pts.extend(rule.mapped(lo, lo + h));
        }
        axis.push(pts);
    }
    let mut out = vec![(Vec::new(), 1.0)];
    for pts in axis {
        let mut next = Vec::with_capacity(out.len() * pts.len());
        for (t, w) in &out {
            for (x, wx) in &pts {
                let mut tt: Vec<f64> = t.clone();
                tt.push(*x);
                next.push((tt, w * wx));
            }
        }
        out = next;
    }
    out
}

/// `int f` over the collar tube `{|y_tilde| in (r_min, beta)}` above
/// `Sigma_k` in collar coordinates, `f` given the chart point.
fn collar_integral(s: &Scenario, beta: f64, r_min: f64, f: &dyn Fn(&ChartPoint) -> f64) -> f64 {
    let m = s.codim();
    let dirs = half_sphere_rule(m, 16);
    let tang = tangential_rule(s);
    let rule = GaussLegendre::new(8);
    let mut radial = Vec::new();
    let mut hi = beta;
    while hi > r_min && hi > beta * 1e-30 {
        let lo = (0.5 * hi).max(r_min);
        radial.extend(rule.mapped(lo, hi));
        hi = lo;
    }
    let mut total = 0.0;
    let mut y = vec![0.0; s.dim()];
    for (t, wt) in &tang {
        y[m..].copy_from_slice(t);
        let mut acc_t = 0.0;
        for (dir, wd) in &dirs {
            let mut acc = 0.0;
            for &(r, wr) in &radial {
                for a in 0..m {
                    y[a] = r * dir[a];
                }
                let c = s.chart_point(&y);
                acc += wr * r.powi(m as i32 - 1) * s.chart_volume(&y) * f(&c);
            }
            acc_t += wd * acc;
        }
        total += wt * acc_t;
    }
    total
}

/// Both sides of `int V0^2 / delta^2 >= C int_Sigma dsigma / sqrt(1 - q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassBound {
    pub beta: f64,
    pub lhs: f64,
    /// `None` when the boundary integral diverges.
    pub rhs: Option<f64>,
    pub ratio: Option<f64>,
}

/// Quadrature of `V0^2 / delta^2` over the collar tube of radius `beta`
/// above `Sigma_k` with the radial cutoff `r_min`.
pub fn subsolution_mass(s: &Scenario, w: &WeightTriple, beta: f64, r_min: f64) -> Result<f64> {
    let sb = s.with_beta(beta)?;
    let consts = CollarConstants::new(&sb, &w.p, beta)?;
    let q = normalized_q(w, &sb)?;
    let w1 = GroundStateSpec::new(-1.0, consts.m0, q.clone());
    let w0 = GroundStateSpec::new(0.0, consts.m0, q);
    let err = std::cell::RefCell::new(None);
    let v = collar_integral(&sb, beta, r_min, &|c: &ChartPoint| {
        match (eval_w_at(&w1, &sb, c), eval_w_at(&w0, &sb, c)) {
            (Ok(a), Ok(b)) => (a + b) * (a + b) / (c.delta * c.delta),
            (Err(e), _) | (_, Err(e)) => {
                err.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    });
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

pub fn subsolution_mass_lower_bound(s: &Scenario, w: &WeightTriple, beta: f64) -> Result<MassBound> {
    let lhs = subsolution_mass(s, w, beta, 0.0)?;
    let wn = WeightTriple::new(Expr::constant(1.0), normalized_q(w, s)?, w.eta.clone());
    let ik = weights::attainment_integral(&wn, s, 1e-10)?;
    Ok(MassBound {
        beta,
        lhs,
        rhs: ik.value,
        ratio: ik.value.map(|r| lhs / r),
    })
}

/// Truncated comparison for a divergent boundary integral: rows
/// `(tau, lhs with r >= tau, int 1/sqrt(max(1 - q, tau)))`.
pub fn mass_bound_ladder(s: &Scenario, w: &WeightTriple, beta: f64, taus: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    let q = normalized_q(w, s)?;
    let tang = tangential_rule(s);
    let mut out = Vec::new();
    for &tau in taus {
        let lhs = subsolution_mass(s, w, beta, tau)?;
        let rhs: f64 = tang
            .iter()
            .map(|(t, wt)| {
                let x = s.sigma_point(t);
                let g = 1.0 - q.eval(&vars_sigma(&x, t));
                wt / g.max(tau).sqrt()
            })
            .sum();
        out.push((tau, lhs, rhs));
    }
    Ok(out)
}

/// Smooth cutoff: `1` on `[0, 1/2]`, `0` on `[1, inf)`, quintic in between.
fn cutoff(t: f64) -> (f64, f64) {
    if t <= 0.5 {
        (1.0, 0.0)
    } else if t >= 1.0 {
        (0.0, 0.0)
    } else {
        let s = 2.0 * t - 1.0;
        let v = 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
        let dv = -30.0 * s * s * (1.0 - s) * (1.0 - s) * 2.0;
        (v, dv)
    }
}

/// Integrals `(int p |grad u|^2, int q u^2/delta^2, int eta u^2/delta^2)`
/// of `u = z1 r^sexp chi(|z|)` in scaled chart variables `z`. The common
/// factor `r^{2 sexp + m - 1}` is carried by the radial weights; on the
/// inner piece the substitution `r = r_a t^{1/(2 sexp + m)}` absorbs it.
fn concentration_integrals(
    m: usize,
    k: usize,
    sexp: f64,
    point: &dyn Fn(&[f64]) -> Option<PointData>,
) -> (f64, f64, f64) {
    let dirs = half_sphere_rule(m, 16);
    let g12 = GaussLegendre::new(12);
    let g24 = GaussLegendre::new(24);
    let power = 2.0 * sexp + m as f64;
    let mut tang: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
    for _ in 0..k {
        let mut pts = Vec::new();
        for (lo, hi) in [(-1.0, -0.5), (-0.5, 0.5), (0.5, 1.0)] {
            pts.extend(g12.mapped(lo, hi));
        }
        let mut next = Vec::new();
        for (t, w) in &tang {
            for (x, wx) in &pts {
                let mut tt = t.clone();
                tt.push(*x);
                next.push((tt, w * wx));
            }
        }
        tang = next;
    }
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    let mut z = vec![0.0; m + k];
    for (t, wt) in &tang {
        let t2: f64 = t.iter().map(|v| v * v).sum();
        if t2 >= 1.0 {
            continue;
        }
        z[m..].copy_from_slice(t);
        let r_max = (1.0 - t2).sqrt();
        let r_in = (0.25 - t2).max(0.0).sqrt();
        let r_a = 0.125 * r_max;
        let mut radial: Vec<(f64, f64)> = g24
            .mapped(0.0, 1.0)
            .map(|(u, wu)| ((r_a * u.powf(1.0 / power)).max(1e-150), wu * r_a.powf(power) / power))
            .collect();
        let mut breaks = vec![r_a];
        if r_in > r_a && r_in < r_max {
            breaks.push(r_in);
        }
        breaks.push(r_max);
        for wdw in breaks.windows(2) {
            let mid = 0.5 * (wdw[0] + wdw[1]);
            for (lo, hi) in [(wdw[0], mid), (mid, wdw[1])] {
                radial.extend(g12.mapped(lo, hi).map(|(r, w)| (r, w * r.powf(power - 1.0))));
            }
        }
        for (dir, wd) in &dirs {
            for &(r, wr) in &radial {
                for i in 0..m {
                    z[i] = r * dir[i];
                }
                let rho = (r * r + t2).sqrt();
                let (chi, dchi) = cutoff(rho);
                if chi == 0.0 && dchi == 0.0 {
                    continue;
                }
                let Some(pd) = point(&z) else { continue };
                // u and grad u divided by r^sexp
                let u = dir[0] * r * chi;
                let mut grad2 = 0.0;
                for i in 0..m + k {
                    let mut g = 0.0;
                    if dchi != 0.0 {
                        g += z[0] * dchi * z[i] / rho;
                    }
                    if i < m {
                        g += sexp * dir[0] * dir[i] * chi;
                    }
                    if i == 0 {
                        g += chi;
                    }
                    grad2 += pd.ginv[i] * g * g;
                }
                let wgt = wt * wd * wr * pd.sqrt_g;
                a += wgt * pd.p * grad2;
                b += wgt * pd.q_over_delta2 * u * u;
                c += wgt * pd.eta_over_delta2 * u * u;
            }
        }
    }
    (a, b, c)
}

struct PointData {
    sqrt_g: f64,
    ginv: Vec<f64>,
    p: f64,
    q_over_delta2: f64,
    eta_over_delta2: f64,
}

fn flat_model_quotient(m: usize, k: usize, sexp: f64) -> f64 {
    let (a, b, _) = concentration_integrals(m, k, sexp, &|z: &[f64]| {
        let r2: f64 = z[..m].iter().map(|v| v * v).sum();
        Some(PointData {
            sqrt_g: 1.0,
            ginv: vec![1.0; m + k],
            p: 1.0,
            q_over_delta2: 1.0 / r2,
            eta_over_delta2: 0.0,
        })
    });
    a / b
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationResult {
    pub tau: f64,
    pub tau_prime: f64,
    /// Quotient of the test function in the flat half-space model.
    pub flat_quotient: f64,
    pub base: Vec<f64>,
    /// `(eps, quotient)` along the ladder (after any shrinking).
    pub values: Vec<(f64, f64)>,
    pub infimum: f64,
}

/// Quotient of `u = y1 |y_tilde|^{-m/2+tau'} chi(|y|/eps)` pushed through
/// the collar chart at a maximizer of `q/p` on `Sigma_k`.
pub fn concentration_upper_bound(
    s: &Scenario,
    w: &WeightTriple,
    lambda: f64,
    tau: f64,
    eps_ladder: &[f64],
) -> Result<ConcentrationResult> {
    let m = s.codim();
    let k = s.sub_dim();
    let plateau = s.plateau();
    let mut tau_prime = tau;
    let mut flat = flat_model_quotient(m, k, -0.5 * m as f64 + tau_prime);
    let mut tries = 0;
    while flat > plateau + tau {
        tau_prime *= 0.5;
        flat = flat_model_quotient(m, k, -0.5 * m as f64 + tau_prime);
        tries += 1;
        if tries > 40 {
            return Err(HardyError::NotConverged {
                iterations: tries,
                residual: flat - plateau,
            });
        }
    }
    let dom = s.sigma_domain();
    let base = contact_point(w, s);
    let sexp = -0.5 * m as f64 + tau_prime;
    let mut values = Vec::new();
    for &eps0 in eps_ladder {
        let mut eps = eps0;
        let fits = |e: f64| {
            e < 0.5 * s.beta()
                && (dom.periodic || base.iter().enumerate().all(|(a, b)| b - e >= dom.lo[a] && b + e <= dom.hi[a]))
                && e <= 0.5
        };
        while !fits(eps) {
            eps *= 0.5;
            if eps < 1e-12 {
                return Err(HardyError::OutOfChart {
                    norm: eps0,
                    radius: 0.5 * s.beta(),
                });
            }
        }
        let (a, b, c) = concentration_integrals(m, k, sexp, &|z: &[f64]| {
            let mut y: Vec<f64> = z.iter().map(|v| eps * v).collect();
            for (v, b) in y[m..].iter_mut().zip(&base) {
                *v += b;
            }
            let cp = s.chart_point(&y);
            if cp.delta <= 0.0 {
                return None;
            }
            let v = vars_chart(&cp);
            let g = s.chart_metric(&y);
            let d2 = cp.delta * cp.delta;
            Some(PointData {
                sqrt_g: s.chart_volume(&y),
                ginv: g.iter().map(|gi| 1.0 / gi).collect(),
                p: w.p.eval(&v),
                q_over_delta2: w.q.eval(&v) / d2 * eps * eps,
                eta_over_delta2: w.eta.eval(&v) / d2 * eps * eps,
            })
        });
        values.push((eps, (a - lambda * c) / b));
    }
    let infimum = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    Ok(ConcentrationResult {
        tau,
        tau_prime,
        flat_quotient: flat,
        base,
        values,
        infimum,
    })
}

/// Maximizer of `q/p` on a grid of `Sigma_k`; ties go to the point nearest
/// the centre of the parameter domain.
fn contact_point(w: &WeightTriple, s: &Scenario) -> Vec<f64> {
    let dom = s.sigma_domain();
    let centre: Vec<f64> = dom.lo.iter().zip(&dom.hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for t in weights::sigma_grid(s, 1024) {
        let x = s.sigma_point(&t);
        let v = vars_sigma(&x, &t);
        let ratio = w.q.eval(&v) / w.p.eval(&v);
        let dist: f64 = t.iter().zip(&centre).map(|(a, b)| (a - b) * (a - b)).sum();
        let better = match &best {
            None => true,
            Some((r, d, _)) => ratio > r + 1e-12 || (ratio > r - 1e-12 && dist < *d),
        };
        if better {
            best = Some((ratio, dist, t));
        }
    }
    best.expect("non-empty grid").2
}

/// Positivity factor of `U`: `e^{M1 d} - e^{M0 d} X_{-1}(delta_tilde)`.
pub fn supersolution_factor(consts: &CollarConstants, d: f64, delta_tilde: f64) -> Result<f64> {
    Ok((consts.m1 * d).exp() - (consts.m0 * d).exp() * log_power(-1.0, delta_tilde)?)
}

pub fn is_flat(s: &Scenario) -> bool {
    s.kind() == ScenarioKind::FlatSlab
}
