//! Minimization of the discrete quotient, `mu`-curves and the threshold
//! search.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::discretization::{assemble_masses, assemble_stiffness, GradedGrid, MassMode, SparseOperator};
use crate::error::{HardyError, Result};
use crate::expr::Expr;
use crate::weights::{NormalizedWeights, WeightTriple};

/// The three forms of the quotient on one grid.
#[derive(Debug, Clone)]
pub struct QuotientOperators {
    pub a: SparseOperator,
    pub bq: SparseOperator,
    pub beta: SparseOperator,
    pub signature: String,
}

impl QuotientOperators {
    pub fn assemble(g: &GradedGrid, w: &WeightTriple) -> Result<Self> {
        let a = assemble_stiffness(g, &w.p);
        let mut m = assemble_masses(g, &[(&w.q, MassMode::Q), (&w.eta, MassMode::Eta)])?;
        let beta = m.pop().unwrap();
        let bq = m.pop().unwrap();
        Ok(QuotientOperators {
            a,
            bq,
            beta,
            signature: g.signature(),
        })
    }

    /// Operators of the `p = 1` form with the bounded potential subtracted
    /// from the stiffness.
    pub fn assemble_normalized(g: &GradedGrid, w: &NormalizedWeights) -> Result<Self> {
        let one = Expr::constant(1.0);
        let a = assemble_stiffness(g, &one);
        let mut m = assemble_masses(
            g,
            &[
                (&w.q_over_p, MassMode::Q),
                (&w.eta_over_p, MassMode::Eta),
                (&w.v_extra, MassMode::Plain),
            ],
        )?;
        let bv = m.pop().unwrap();
        let beta = m.pop().unwrap();
        let bq = m.pop().unwrap();
        Ok(QuotientOperators {
            a: a.add_scaled(&bv, -1.0)?,
            bq,
            beta,
            signature: format!("{}:normalized", g.signature()),
        })
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Relative residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest search subspace before a restart.
    pub max_basis: usize,
    /// Ritz vectors kept at a restart.
    pub keep: usize,
    /// Relative residual of the inner conjugate-gradient solves.
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 500,
            max_basis: 20,
            keep: 4,
            cg_tol: 1e-4,
            cg_max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuResult {
    pub lambda: f64,
    pub mu: f64,
    #[serde(skip)]
    pub eigvec: Vec<f64>,
    /// `||(A - lambda B_eta) u - mu B_q u||_{B_q^-1} / ||u||_{B_q}`.
    pub residual: f64,
    pub iterations: usize,
    pub shift: f64,
    pub converged: bool,
    pub signature: String,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn d_dot(d: &[f64], a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).zip(d).map(|((x, y), w)| x * y * w).sum()
}

fn residual_norm(k: &SparseOperator, d: &[f64], mu: f64, u: &[f64]) -> f64 {
    let ku = k.apply(u);
    let num: f64 = ku.iter().zip(u).zip(d).map(|((a, b), w)| (a - mu * w * b).powi(2) / w).sum();
    (num / d_dot(d, u, u)).sqrt()
}

/// Outcome of one preconditioned conjugate-gradient solve.
enum Cg {
    Solved(Vec<f64>),
    Indefinite,
}

/// Solves `(K - sigma D) x = b` with Jacobi preconditioning. Returns the
/// last iterate when the iteration budget runs out.
fn pcg(k: &SparseOperator, kdiag: &[f64], d: &[f64], sigma: f64, b: &[f64], tol: f64, max_iter: usize) -> Cg {
    let n = b.len();
    let pre: Vec<f64> = (0..n).map(|i| 1.0 / (kdiag[i] - sigma * d[i])).collect();
    if pre.iter().any(|p| !(*p > 0.0)) {
        return Cg::Indefinite;
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&pre).map(|(a, p)| a * p).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let bnorm = dot(b, b).sqrt();
    let mut sp = vec![0.0; n];
    for _ in 0..max_iter {
        k.matvec(&p, &mut sp);
        for i in 0..n {
            sp[i] -= sigma * d[i] * p[i];
        }
        let psp = dot(&p, &sp);
        if !(psp > 0.0) {
            return Cg::Indefinite;
        }
        let alpha = rz / psp;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * sp[i];
        }
        if dot(&r, &r).sqrt() <= tol * bnorm {
            break;
        }
        for i in 0..n {
            z[i] = r[i] * pre[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Cg::Solved(x)
}

/// Lower bound of the spectrum of `D^-1 K` by Gershgorin discs.
fn gershgorin_lower(k: &SparseOperator, d: &[f64]) -> f64 {
    let mut radius = vec![0.0; k.dim()];
    let mut diag = vec![0.0; k.dim()];
    for (i, j, v) in k.triplets() {
        if i == j {
            diag[i] += v;
        } else {
            radius[i] += v.abs();
        }
    }
    (0..k.dim()).map(|i| (diag[i] - radius[i]) / d[i]).fold(f64::INFINITY, f64::min)
}

fn shift_below(theta: f64) -> f64 {
    theta - 0.1 * theta.abs().max(0.5)
}

/// D-orthogonalizes `t` against the basis twice; returns its D-norm after.
fn orthogonalize(basis: &[Vec<f64>], d: &[f64], t: &mut [f64]) -> f64 {
    let before = d_dot(d, t, t).sqrt();
    for _ in 0..2 {
        for v in basis {
            let c = d_dot(d, v, t);
            for (ti, vi) in t.iter_mut().zip(v) {
                *ti -= c * vi;
            }
        }
    }
    let after = d_dot(d, t, t).sqrt();
    if after <= 1e-10 * before {
        return 0.0;
    }
    for ti in t.iter_mut() {
        *ti /= after;
    }
    after
}

/// Smallest eigenpair of `(A - lambda B_eta) u = mu B_q u` by a
/// shift-and-invert subspace iteration. Each step expands the search space
/// with `(K - sigma B_q)^-1 r` for the residual `r = K u - theta B_q u` of
/// the current Ritz pair, which spans the same space as the inverse
/// iteration step `(K - sigma B_q)^-1 B_q u` together with `u`. Inner solves
/// use Jacobi-preconditioned conjugate gradients. The shift sits below the
/// Ritz value and is lowered on detected indefiniteness.
pub fn min_rayleigh(ops: &QuotientOperators, lambda: f64, opts: &SolverOptions, start: Option<&[f64]>) -> Result<MuResult> {
    if !(opts.tol > 0.0) {
        return Err(HardyError::Config {
            field: "tol".into(),
            message: "must be positive".into(),
        });
    }
    if !ops.bq.is_diagonal() || !ops.beta.is_diagonal() {
        return Err(HardyError::Unsupported("non-diagonal mass operators".into()));
    }
    let n = ops.dim();
    let d = ops.bq.diagonal();
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(HardyError::InvalidGrid("B_q has a nonpositive diagonal entry".into()));
    }
    let k = ops.a.add_scaled(&ops.beta, -lambda)?;
    let kdiag = k.diagonal();
    let safe = {
        let g = gershgorin_lower(&k, &d);
        g - 0.1 * g.abs().max(0.5)
    };

    let mut u0 = match start {
        Some(s) if s.len() == n => s.to_vec(),
        Some(s) => {
            return Err(HardyError::DimensionMismatch {
                expected: n,
                found: s.len(),
            })
        }
        None => vec![1.0; n],
    };
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kbasis: Vec<Vec<f64>> = Vec::new();
    if orthogonalize(&basis, &d, &mut u0) == 0.0 {
        return Err(HardyError::ZeroDenominator);
    }
    kbasis.push(k.apply(&u0));
    basis.push(u0);

    let mut sigma = f64::NAN;
    let mut retries = 0usize;
    let mut last = (f64::NAN, vec![0.0; n], f64::INFINITY);
    for iter in 1..=opts.max_iter {
        let b = basis.len();
        let mut h = DMatrix::<f64>::zeros(b, b);
        for i in 0..b {
            for j in 0..=i {
                let v = 0.5 * (dot(&basis[i], &kbasis[j]) + dot(&basis[j], &kbasis[i]));
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let theta = eig.eigenvalues[order[0]];
        let combine = |vs: &[Vec<f64>], col: usize| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for (c, v) in vs.iter().enumerate() {
                let y = eig.eigenvectors[(c, col)];
                for (o, vi) in out.iter_mut().zip(v) {
                    *o += y * vi;
                }
            }
            out
        };
        let u = combine(&basis, order[0]);
        let ku = combine(&kbasis, order[0]);
        let r: Vec<f64> = (0..n).map(|i| ku[i] - theta * d[i] * u[i]).collect();
        let res = ((0..n).map(|i| r[i] * r[i] / d[i]).sum::<f64>() / d_dot(&d, &u, &u)).sqrt();
        last = (theta, u.clone(), res);
        if res <= opts.tol * theta.abs().max(1.0) {
            return Ok(finish(ops, &k, &d, lambda, u, iter, sigma, true));
        }

        if b >= opts.max_basis {
            let keep = opts.keep.min(b);
            let nb: Vec<Vec<f64>> = order[..keep].iter().map(|&c| combine(&basis, c)).collect();
            let nk: Vec<Vec<f64>> = order[..keep].iter().map(|&c| combine(&kbasis, c)).collect();
            basis = nb;
            kbasis = nk;
        }

        let target = shift_below(theta);
        sigma = if sigma.is_nan() { target } else { sigma.min(target) };
        let mut t = loop {
            match pcg(&k, &kdiag, &d, sigma, &r, opts.cg_tol, opts.cg_max_iter) {
                Cg::Solved(x) => break x,
                Cg::Indefinite => {
                    retries += 1;
                    if retries > 5 {
                        return Err(HardyError::Indefinite { retries: retries - 1 });
                    }
                    sigma = if retries == 5 {
                        safe
                    } else {
                        (sigma - theta.abs().max(1.0) * 2f64.powi(retries as i32)).max(safe)
                    };
                }
            }
        };
        if orthogonalize(&basis, &d, &mut t) == 0.0 {
            t = r.iter().zip(&d).map(|(ri, di)| ri / di).collect();
            if orthogonalize(&basis, &d, &mut t) == 0.0 {
                break;
            }
        }
        kbasis.push(k.apply(&t));
        basis.push(t);
    }
    let (theta, u, res) = last;
    if theta.is_nan() {
        return Err(HardyError::NotConverged {
            iterations: opts.max_iter,
            residual: res,
        });
    }
    let out = finish(ops, &k, &d, lambda, u, opts.max_iter, sigma, false);
    if out.residual <= opts.tol * out.mu.abs().max(1.0) {
        return Ok(MuResult { converged: true, ..out });
    }
    Err(HardyError::NotConverged {
        iterations: opts.max_iter,
        residual: out.residual,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    ops: &QuotientOperators,
    k: &SparseOperator,
    d: &[f64],
    lambda: f64,
    mut u: Vec<f64>,
    iterations: usize,
    shift: f64,
    converged: bool,
) -> MuResult {
    let norm = d_dot(d, &u, &u).sqrt();
    let sign = if u.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    for v in &mut u {
        *v *= sign / norm;
    }
    let mu = k.quad_form(&u) / d_dot(d, &u, &u);
    MuResult {
        lambda,
        mu,
        residual: residual_norm(k, d, mu, &u),
        eigvec: u,
        iterations,
        shift,
        converged,
        signature: ops.signature.clone(),
    }
}

impl MuResult {
    /// Residual recomputed from the operators.
    pub fn verify(&self, ops: &QuotientOperators) -> Result<f64> {
        let k = ops.a.add_scaled(&ops.beta, -self.lambda)?;
        Ok(residual_norm(&k, &ops.bq.diagonal(), self.mu, &self.eigvec))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuCurve {
    pub points: Vec<MuResult>,
    /// Human-readable notes from the monotonicity and concavity audits.
    pub audit: Vec<String>,
    pub nonincreasing: bool,
    /// Largest violation of midpoint concavity over consecutive triples.
    pub concavity_defect: f64,
    pub failed: Vec<f64>,
}

impl MuCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,mu,residual,iterations\n");
        for p in &self.points {
            s.push_str(&format!("{:.10e},{:.15e},{:.6e},{}\n", p.lambda, p.mu, p.residual, p.iterations));
        }
        s
    }
}

/// Concavity defect of consecutive triples: how far the middle value falls
/// below the chord.
pub fn concavity_defect(points: &[(f64, f64)]) -> f64 {
    points
        .windows(3)
        .map(|w| {
            let (l0, m0) = w[0];
            let (l1, m1) = w[1];
            let (l2, m2) = w[2];
            if l2 == l0 {
                return 0.0;
            }
            let chord = m0 + (m2 - m0) * (l1 - l0) / (l2 - l0);
            chord - m1
        })
        .fold(0.0, f64::max)
}

/// Solves along a sorted list of `lambda`, warm-starting from the previous
/// eigenvector. A point whose value exceeds its predecessor is re-solved
/// from the all-ones start and the smaller value kept.
pub fn mu_curve(ops: &QuotientOperators, lambdas: &[f64], opts: &SolverOptions) -> Result<MuCurve> {
    if lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(HardyError::Config {
            field: "lambdas".into(),
            message: "must be sorted".into(),
        });
    }
    let mut points: Vec<MuResult> = Vec::new();
    let mut audit = Vec::new();
    let mut failed = Vec::new();
    for &lambda in lambdas {
        if let Some(prev) = points.last().filter(|p| p.lambda == lambda) {
            points.push(prev.clone());
            continue;
        }
        let start = points.last().map(|p| p.eigvec.as_slice());
        let mut r = match min_rayleigh(ops, lambda, opts, start) {
            Ok(r) => r,
            Err(HardyError::NotConverged { residual, .. }) => {
                audit.push(format!("lambda = {lambda}: not converged (residual {residual:e})"));
                failed.push(lambda);
                continue;
            }
            Err(e) => return Err(e),
        };
        if let Some(prev) = points.last() {
            if r.mu > prev.mu {
                audit.push(format!("lambda = {lambda}: warm start gave {} > {}; re-solved cold", r.mu, prev.mu));
                if let Ok(cold) = min_rayleigh(ops, lambda, opts, None) {
                    if cold.mu < r.mu {
                        r = cold;
                    }
                }
            }
        }
        points.push(r);
    }
    let nonincreasing = points.windows(2).all(|w| w[1].mu <= w[0].mu);
    if !nonincreasing {
        audit.push("curve is not nonincreasing".into());
    }
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.lambda, p.mu)).collect();
    Ok(MuCurve {
        concavity_defect: concavity_defect(&pairs),
        points,
        audit,
        nonincreasing,
        failed,
    })
}

/// Parses `lo:hi:count` into `count` equally spaced values.
pub fn parse_lambda_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| HardyError::Config {
        field: "lambdas".into(),
        message: format!("{m} in `{spec}` (expected lo:hi:count)"),
    };
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad("wrong number of fields"));
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad("bad lower bound"))?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad("bad upper bound"))?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad("bad count"))?;
    if count == 0 || !lo.is_finite() || !hi.is_finite() || hi < lo || (count == 1 && hi != lo) {
        return Err(bad("empty or reversed range"));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect())
}

/// One grid's bracket in the threshold search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridBracket {
    pub signature: String,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub mu_lo: f64,
    pub mu_hi: f64,
    /// Every `(lambda, mu)` evaluated, in order.
    pub evaluations: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub plateau_value: f64,
    pub tol_mu: f64,
    /// `mu` at `lambda = 0` on the coarse and fine grids.
    pub mu_zero: (f64, f64),
    pub coarse: GridBracket,
    pub fine: GridBracket,
    /// Intersection of the two brackets, if they overlap.
    pub overlap: Option<(f64, f64)>,
}

impl ThresholdResult {
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).unwrap_or_default();
        v["schema"] = 1.into();
        v
    }
}

fn bracket_on(
    ops: &QuotientOperators,
    level: f64,
    width: f64,
    opts: &SolverOptions,
    mu0: &MuResult,
) -> Result<GridBracket> {
    let mut evals = vec![(0.0, mu0.mu)];
    let mut warm = mu0.eigvec.clone();
    let mut solve = |lambda: f64, evals: &mut Vec<(f64, f64)>| -> Result<f64> {
        let r = min_rayleigh(ops, lambda, opts, Some(&warm))?;
        warm = r.eigvec;
        evals.push((lambda, r.mu));
        Ok(r.mu)
    };
    let (mut lo, mut hi, mut mu_lo, mut mu_hi);
    if mu0.mu >= level {
        lo = 0.0;
        mu_lo = mu0.mu;
        let mut step = 1.0;
        loop {
            let m = solve(step, &mut evals)?;
            if m < level {
                hi = step;
                mu_hi = m;
                break;
            }
            lo = step;
            mu_lo = m;
            step *= 2.0;
            if step > 1e6 {
                return Err(HardyError::PlateauNotCertified(format!(
                    "mu stays above {level} up to lambda = 1e6"
                )));
            }
        }
    } else {
        hi = 0.0;
        mu_hi = mu0.mu;
        let mut step = -1.0;
        loop {
            let m = solve(step, &mut evals)?;
            if m >= level {
                lo = step;
                mu_lo = m;
                break;
            }
            hi = step;
            mu_hi = m;
            step *= 2.0;
            if step < -1e6 {
                return Err(HardyError::PlateauNotCertified(
                    "plateau not certified at this resolution".into(),
                ));
            }
        }
    }
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        let m = solve(mid, &mut evals)?;
        if m >= level {
            lo = mid;
            mu_lo = m;
        } else {
            hi = mid;
            mu_hi = m;
        }
    }
    Ok(GridBracket {
        signature: ops.signature.clone(),
        lambda_lo: lo,
        lambda_hi: hi,
        mu_lo,
        mu_hi,
        evaluations: evals,
    })
}

/// Brackets the threshold on a coarse and a fine grid. The plateau
/// tolerance is `max(2 |mu_n - mu_2n|, 1e-3)` at `lambda = 0`, and each
/// bracket straddles `plateau - tol_mu`.
pub fn find_threshold(
    coarse: &QuotientOperators,
    fine: &QuotientOperators,
    plateau: f64,
    width: f64,
    opts: &SolverOptions,
) -> Result<ThresholdResult> {
    if !(width > 0.0) {
        return Err(HardyError::Config {
            field: "width".into(),
            message: "must be positive".into(),
        });
    }
    let c0 = min_rayleigh(coarse, 0.0, opts, None)?;
    let f0 = min_rayleigh(fine, 0.0, opts, None)?;
    let tol_mu = (2.0 * (c0.mu - f0.mu).abs()).max(1e-3);
    let level = plateau - tol_mu;
    let cb = bracket_on(coarse, level, width, opts, &c0)?;
    let fb = bracket_on(fine, level, width, opts, &f0)?;
    let lo = cb.lambda_lo.max(fb.lambda_lo);
    let hi = cb.lambda_hi.min(fb.lambda_hi);
    Ok(ThresholdResult {
        plateau_value: plateau,
        tol_mu,
        mu_zero: (c0.mu, f0.mu),
        coarse: cb,
        fine: fb,
        overlap: (lo <= hi).then_some((lo, hi)),
    })
}

/// Discrete constant of the improved local Hardy inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalHardy {
    pub beta: f64,
    pub n: usize,
    pub c: f64,
    pub residual: f64,
    pub signature: String,
    #[serde(skip)]
    pub minimizer: Vec<f64>,
}

/// Minimizes `(u'Au - plateau u'B_q u) / u'B_log u` on the collar grid of
/// radius `beta`, with `B_log` the mass of `delta^-2 |log delta|^-2`.
pub fn local_hardy_check(
    s: &crate::geometry::Scenario,
    w: &WeightTriple,
    beta: f64,
    n: usize,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<LocalHardy> {
    if beta >= 1.0 {
        return Err(HardyError::InvalidGrid("collar radius must be below 1 for the log weight".into()));
    }
    let g = GradedGrid::build_collar(s, beta, n, gamma)?;
    let one = Expr::constant(1.0);
    let a = assemble_stiffness(&g, &w.p);
    let mut m = assemble_masses(&g, &[(&w.q, MassMode::Q), (&one, MassMode::Log)])?;
    let blog = m.pop().unwrap();
    let bq = m.pop().unwrap();
    let ops = QuotientOperators {
        a: a.add_scaled(&bq, -s.plateau())?,
        bq: blog,
        beta: SparseOperator::diagonal_matrix(&vec![0.0; g.unknowns()]),
        signature: g.signature(),
    };
    let r = min_rayleigh(&ops, 0.0, opts, None)?;
    Ok(LocalHardy {
        beta,
        n,
        c: r.mu,
        residual: r.residual,
        signature: r.signature,
        minimizer: r.eigvec,
    })
}
