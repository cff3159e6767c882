//! Graded tensor grids and the sparse forms of the quotient: stiffness
//! `int p |grad u|^2` and lumped singular masses `int w delta^-2 u^2`.

use serde::Serialize;

use crate::error::{HardyError, Result};
use crate::expr::{Expr, Vars};
use crate::geometry::{Scenario, ScenarioKind};
use crate::quadrature::GaussLegendre;

/// Coordinates the grid lives in: ambient Cartesian, or the collar
/// coordinates `(y1, y_breve, y_bar)` of the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Ambient,
    Collar,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Axis {
    /// All nodes, boundary nodes included; periodic axes list each node once.
    pub nodes: Vec<f64>,
    pub period: Option<f64>,
}

impl Axis {
    fn len(&self) -> usize {
        self.nodes.len()
    }

    fn is_boundary(&self, j: usize) -> bool {
        self.period.is_none() && (j == 0 || j + 1 == self.len())
    }

    /// Dual cell `[lo, hi]` of node `j` (interior or periodic nodes).
    fn dual(&self, j: usize) -> (f64, f64) {
        let x = &self.nodes;
        let n = x.len();
        match self.period {
            Some(p) => {
                let prev = if j == 0 { x[n - 1] - p } else { x[j - 1] };
                let next = if j + 1 == n { x[0] + p } else { x[j + 1] };
                (0.5 * (prev + x[j]), 0.5 * (x[j] + next))
            }
            None => (0.5 * (x[j.saturating_sub(1)] + x[j]), 0.5 * (x[j] + x[(j + 1).min(n - 1)])),
        }
    }

    /// Neighbour above `j` and the edge length, if any.
    fn next(&self, j: usize) -> Option<(usize, f64)> {
        let n = self.len();
        match self.period {
            Some(p) => {
                let k = (j + 1) % n;
                let h = if k == 0 { x_wrap(&self.nodes, p) } else { self.nodes[k] - self.nodes[j] };
                Some((k, h))
            }
            None => (j + 1 < n).then(|| (j + 1, self.nodes[j + 1] - self.nodes[j])),
        }
    }
}

fn x_wrap(x: &[f64], p: f64) -> f64 {
    x[0] + p - x[x.len() - 1]
}

/// Geometry at a quadrature point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointInfo {
    /// Ambient position.
    pub x: Vec<f64>,
    pub d: f64,
    pub delta: f64,
    pub delta_tilde: f64,
    pub psi: f64,
    pub sqrt_g: f64,
    /// Diagonal of the inverse metric.
    pub ginv: Vec<f64>,
}

impl PointInfo {
    pub fn vars(&self) -> Vars<'_> {
        Vars {
            x: &self.x,
            d: self.d,
            delta: self.delta,
            delta_tilde: self.delta_tilde,
            psi: self.psi,
        }
    }
}

/// Tensor grid graded toward `Sigma_k` with Dirichlet nodes eliminated.
#[derive(Debug, Clone)]
pub struct GradedGrid {
    scenario: Scenario,
    frame: Frame,
    n: usize,
    gamma: f64,
    axes: Vec<Axis>,
    strides: Vec<usize>,
    /// Unknown number of each tensor node, `usize::MAX` for Dirichlet nodes.
    index: Vec<usize>,
    /// Tensor index of each unknown.
    interior: Vec<usize>,
}

fn graded_half(n: usize, gamma: f64, len: f64) -> Vec<f64> {
    (0..=n).map(|j| len * (j as f64 / n as f64).powf(gamma)).collect()
}

fn graded_symmetric(n: usize, gamma: f64, len: f64) -> Vec<f64> {
    let h = n / 2;
    (0..=n)
        .map(|j| {
            let t = (j as f64 - h as f64) / h as f64;
            len * t.signum() * t.abs().powf(gamma)
        })
        .collect()
}

fn uniform(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..=n).map(|j| lo + (hi - lo) * j as f64 / n as f64).collect()
}

fn check_params(n: usize, gamma: f64) -> Result<()> {
    if n < 8 || n % 2 != 0 {
        return Err(HardyError::InvalidGrid(format!("n = {n} must be even and at least 8")));
    }
    if !(1.0..=4.0).contains(&gamma) {
        return Err(HardyError::InvalidGrid(format!("grading exponent {gamma} outside [1, 4]")));
    }
    Ok(())
}

/// Tangential node count of the flat slab and of collar grids.
pub fn tangential_cells(n: usize) -> usize {
    (n / 2).max(8)
}

impl GradedGrid {
    /// Ambient grid: the slab uses `x1 = (j/n)^gamma`, symmetric grading on
    /// the other normal axes and uniform tangential axes; the ball uses a
    /// box grid graded in `z`, keeping nodes whose dual cell lies inside.
    pub fn build(s: &Scenario, n: usize, gamma: f64) -> Result<Self> {
        check_params(n, gamma)?;
        let dim = s.dim();
        let m = s.codim();
        let axes: Vec<Axis> = match s.kind() {
            ScenarioKind::FlatSlab => (0..dim)
                .map(|a| Axis {
                    nodes: if a == 0 {
                        graded_half(n, gamma, 1.0)
                    } else if a < m {
                        graded_symmetric(n, gamma, 1.0)
                    } else {
                        uniform(tangential_cells(n), -1.0, 1.0)
                    },
                    period: None,
                })
                .collect(),
            _ => (0..3)
                .map(|a| Axis {
                    nodes: if a == 2 { graded_symmetric(n, gamma, 1.0) } else { uniform(n, -1.0, 1.0) },
                    period: None,
                })
                .collect(),
        };
        if s.kind() == ScenarioKind::FlatSlab {
            let inside = axes[0].nodes.iter().filter(|x| **x < s.beta()).count();
            if inside < 4 {
                return Err(HardyError::InvalidGrid(format!(
                    "only {inside} cells inside the collar of radius {}",
                    s.beta()
                )));
            }
        }
        let ball = s.kind() != ScenarioKind::FlatSlab;
        Self::finish(s, Frame::Ambient, n, gamma, axes, |g, idx| {
            if !ball {
                return true;
            }
            let far: f64 = (0..3)
                .map(|a| {
                    let (lo, hi) = g.axes[a].dual(idx[a]);
                    lo.abs().max(hi.abs()).powi(2)
                })
                .sum();
            far <= 1.0
        })
    }

    /// Grid on the collar `{delta_tilde < beta}` in collar coordinates:
    /// `y1` graded on `[0, beta]`, the other normal axes graded on
    /// `[-beta, beta]`, tangential axes periodic (sphere) or uniform with
    /// Dirichlet ends (slab patch). Nodes whose normal dual cell leaves the
    /// collar are Dirichlet.
    pub fn build_collar(s: &Scenario, beta: f64, n: usize, gamma: f64) -> Result<Self> {
        check_params(n, gamma)?;
        if !(beta > 0.0) || beta > s.safe_beta() {
            return Err(HardyError::InvalidGrid(format!("collar radius {beta} outside (0, {}]", s.safe_beta())));
        }
        let m = s.codim();
        let dom = s.sigma_domain();
        let nt = (n / 4).max(8);
        let mut axes = Vec::new();
        for a in 0..s.dim() {
            axes.push(if a == 0 {
                Axis {
                    nodes: graded_half(n, gamma, beta),
                    period: None,
                }
            } else if a < m {
                Axis {
                    nodes: graded_symmetric(n, gamma, beta),
                    period: None,
                }
            } else if dom.periodic {
                let t = a - m;
                let len = dom.hi[t] - dom.lo[t];
                let mut nodes = uniform(nt, dom.lo[t], dom.hi[t]);
                nodes.pop();
                Axis {
                    nodes,
                    period: Some(len),
                }
            } else {
                let t = a - m;
                Axis {
                    nodes: uniform(nt, dom.lo[t], dom.hi[t]),
                    period: None,
                }
            });
        }
        let sb = s.with_beta(beta)?;
        Self::finish(&sb, Frame::Collar, n, gamma, axes, |g, idx| {
            let far: f64 = (0..m)
                .map(|a| {
                    let (lo, hi) = g.axes[a].dual(idx[a]);
                    lo.abs().max(hi.abs()).powi(2)
                })
                .sum();
            far.sqrt() <= beta
        })
    }

    fn finish(
        s: &Scenario,
        frame: Frame,
        n: usize,
        gamma: f64,
        axes: Vec<Axis>,
        keep: impl Fn(&GradedGrid, &[usize]) -> bool,
    ) -> Result<Self> {
        let mut strides = vec![1usize; axes.len()];
        for a in (0..axes.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * axes[a + 1].len();
        }
        let total = strides[0] * axes[0].len();
        let mut g = GradedGrid {
            scenario: s.clone(),
            frame,
            n,
            gamma,
            axes,
            strides,
            index: vec![usize::MAX; total],
            interior: Vec::new(),
        };
        let mut idx = vec![0usize; g.axes.len()];
        for t in 0..total {
            g.unravel(t, &mut idx);
            let boundary = idx.iter().enumerate().any(|(a, &j)| g.axes[a].is_boundary(j));
            if !boundary && keep(&g, &idx) {
                g.index[t] = g.interior.len();
                g.interior.push(t);
            }
        }
        if g.interior.is_empty() {
            return Err(HardyError::InvalidGrid("no interior nodes".into()));
        }
        Ok(g)
    }

    fn unravel(&self, mut t: usize, idx: &mut [usize]) {
        for (a, s) in self.strides.iter().enumerate() {
            idx[a] = t / s;
            t %= s;
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }
    pub fn frame(&self) -> Frame {
        self.frame
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }
    pub fn unknowns(&self) -> usize {
        self.interior.len()
    }

    /// Unknown number of the tensor node `idx`, if it is not Dirichlet.
    pub fn unknown_at(&self, idx: &[usize]) -> Option<usize> {
        let t: usize = idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum();
        let u = self.index[t];
        (u != usize::MAX).then_some(u)
    }

    /// Frame coordinates of unknown `u`.
    pub fn node(&self, u: usize) -> Vec<f64> {
        let mut idx = vec![0; self.axes.len()];
        self.unravel(self.interior[u], &mut idx);
        idx.iter().enumerate().map(|(a, &j)| self.axes[a].nodes[j]).collect()
    }

    /// Dual cell `(lo, hi)` of unknown `u` in frame coordinates.
    pub fn dual_cell(&self, u: usize) -> (Vec<f64>, Vec<f64>) {
        let mut idx = vec![0; self.axes.len()];
        self.unravel(self.interior[u], &mut idx);
        idx.iter().enumerate().map(|(a, &j)| self.axes[a].dual(j)).unzip()
    }

    /// Short identifier of the grid.
    pub fn signature(&self) -> String {
        format!(
            "{}:{:?}:n{}:g{}:N{}:k{}:b{}:u{}",
            self.scenario.kind(),
            self.frame,
            self.n,
            self.gamma,
            self.scenario.dim(),
            self.scenario.sub_dim(),
            self.scenario.beta(),
            self.unknowns()
        )
    }

    pub fn point_info(&self, z: &[f64]) -> PointInfo {
        let s = &self.scenario;
        match self.frame {
            Frame::Ambient => {
                let d = s.distances(z);
                PointInfo {
                    x: z.to_vec(),
                    d: d.d,
                    delta: d.delta,
                    delta_tilde: d.delta_tilde,
                    psi: d.psi,
                    sqrt_g: 1.0,
                    ginv: vec![1.0; z.len()],
                }
            }
            Frame::Collar => {
                let c = s.chart_point(z);
                PointInfo {
                    x: c.x,
                    d: c.d,
                    delta: c.delta,
                    delta_tilde: c.delta_tilde,
                    psi: c.psi,
                    sqrt_g: s.chart_volume(z),
                    ginv: s.chart_metric(z).iter().map(|g| 1.0 / g).collect(),
                }
            }
        }
    }

    /// Smallest node spacing on the first normal axis.
    pub fn min_normal_spacing(&self) -> f64 {
        let x = &self.axes[if self.scenario.kind() == ScenarioKind::FlatSlab || self.frame == Frame::Collar {
            0
        } else {
            2
        }]
        .nodes;
        x.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Projection of a function sampled at the unknowns.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.unknowns()).map(|u| f(&self.node(u))).collect()
    }

    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": 1,
            "scenario": self.scenario.kind(),
            "frame": self.frame,
            "n": self.n,
            "gamma": self.gamma,
            "dim": self.scenario.dim(),
            "sub_dim": self.scenario.sub_dim(),
            "beta": self.scenario.beta(),
            "unknowns": self.unknowns(),
            "axes": self.axes,
        })
    }
}

/// Symmetric sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    /// Sums duplicate entries; rows and columns sorted.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseOperator { n, row_ptr, cols, vals }
    }

    pub fn diagonal_matrix(d: &[f64]) -> Self {
        SparseOperator {
            n: d.len(),
            row_ptr: (0..=d.len()).collect(),
            cols: (0..d.len()).collect(),
            vals: d.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal_matrix(&vec![1.0; n])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] = acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn quad_form(&self, u: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * u[self.cols[k]];
            }
            total += u[i] * acc;
        }
        total
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&k| self.cols[k] == i)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|i| (self.row_ptr[i]..self.row_ptr[i + 1]).all(|k| self.cols[k] == i || self.vals[k] == 0.0))
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.push((i, self.cols[k], self.vals[k]));
            }
        }
        out
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        (self.row_ptr[i]..self.row_ptr[i + 1])
            .find(|&k| self.cols[k] == j)
            .map_or(0.0, |k| self.vals[k])
    }

    /// Bitwise symmetry of the stored entries.
    pub fn is_symmetric(&self) -> bool {
        self.triplets().iter().all(|&(i, j, v)| self.get(j, i).to_bits() == v.to_bits())
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &SparseOperator, s: f64) -> Result<Self> {
        if self.n != other.n {
            return Err(HardyError::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        let mut t = self.triplets();
        t.extend(other.triplets().into_iter().map(|(i, j, v)| (i, j, s * v)));
        Ok(Self::from_triplets(self.n, t))
    }

    /// One `row col value` line per stored entry.
    pub fn to_triplet_text(&self) -> String {
        let mut out = String::new();
        for (i, j, v) in self.triplets() {
            out.push_str(&format!("{i} {j} {v:.17e}\n"));
        }
        out
    }
}

/// `int p grad u . grad v` by two-point fluxes: the edge between
/// neighbours along axis `a` carries `p sqrt(g) g^aa` at its midpoint times
/// the dual face area over the edge length.
pub fn assemble_stiffness(g: &GradedGrid, p: &Expr) -> SparseOperator {
    let dim = g.axes.len();
    let mut t = Vec::with_capacity(g.unknowns() * (2 * dim + 1));
    let mut idx = vec![0usize; dim];
    let total = g.index.len();
    for tt in 0..total {
        g.unravel(tt, &mut idx);
        let ui = g.index[tt];
        for a in 0..dim {
            let Some((jn, h)) = g.axes[a].next(idx[a]) else { continue };
            let tn = tt - idx[a] * g.strides[a] + jn * g.strides[a];
            let un = g.index[tn];
            if ui == usize::MAX && un == usize::MAX {
                continue;
            }
            let mut area = 1.0;
            let mut mid = vec![0.0; dim];
            for b in 0..dim {
                mid[b] = g.axes[b].nodes[idx[b]];
                if b != a {
                    let (lo, hi) = g.axes[b].dual(idx[b]);
                    area *= hi - lo;
                }
            }
            mid[a] += 0.5 * h;
            let info = g.point_info(&mid);
            let c = p.eval(&info.vars()) * info.sqrt_g * info.ginv[a] * area / h;
            if ui != usize::MAX {
                t.push((ui, ui, c));
            }
            if un != usize::MAX {
                t.push((un, un, c));
            }
            if ui != usize::MAX && un != usize::MAX {
                t.push((ui, un, -c));
                t.push((un, ui, -c));
            }
        }
    }
    SparseOperator::from_triplets(g.unknowns(), t)
}

/// Weight applied to the field in a lumped mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MassMode {
    /// `q delta^-2`.
    Q,
    /// `eta delta^-2`.
    Eta,
    /// `w delta^-2 |log delta|^-2`.
    Log,
    /// `w`.
    Plain,
}

fn mode_factor(mode: MassMode, delta: f64) -> f64 {
    match mode {
        MassMode::Q | MassMode::Eta => 1.0 / (delta * delta),
        MassMode::Log => {
            let l = delta.ln();
            1.0 / (delta * delta * l * l)
        }
        MassMode::Plain => 1.0,
    }
}

/// Lumped masses for several fields in one pass over the cells: entry `u`
/// is the tensor Gauss quadrature (order 4 per axis) of
/// `field * mode factor * sqrt(g)` over the dual cell. Cells whose node
/// lies within two normal diameters of `Sigma_k` use order 8 on the normal
/// axes with adaptive bisection of those axes.
pub fn assemble_masses(g: &GradedGrid, fields: &[(&Expr, MassMode)]) -> Result<Vec<SparseOperator>> {
    assemble_masses_with_order(g, fields, 4)
}

/// As [`assemble_masses`] with base order `order` away from `Sigma_k`.
pub fn assemble_masses_with_order(
    g: &GradedGrid,
    fields: &[(&Expr, MassMode)],
    order: usize,
) -> Result<Vec<SparseOperator>> {
    let far = GaussLegendre::new(order);
    let near = GaussLegendre::new(order.max(8));
    let split_axes = match (g.frame, g.scenario.kind()) {
        (Frame::Ambient, k) if k != ScenarioKind::FlatSlab => g.axes.len(),
        _ => g.scenario.codim(),
    };
    let far_rules = vec![&far; g.axes.len()];
    let near_rules: Vec<&GaussLegendre> = (0..g.axes.len()).map(|a| if a < split_axes { &near } else { &far }).collect();
    let mut diags = vec![vec![0.0; g.unknowns()]; fields.len()];
    for u in 0..g.unknowns() {
        let (lo, hi) = g.dual_cell(u);
        let node = g.node(u);
        let diam = lo[..split_axes]
            .iter()
            .zip(&hi[..split_axes])
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt();
        let delta_node = g.point_info(&node).delta;
        let sums = if delta_node < 2.0 * diam {
            let whole = box_gauss(g, fields, &near_rules, &lo, &hi);
            adaptive_box(g, fields, &near_rules, &lo, &hi, split_axes, whole, 0)
        } else {
            box_gauss(g, fields, &far_rules, &lo, &hi)
        };
        if !sums.iter().all(|s| s.is_finite()) {
            return Err(HardyError::InvalidGrid(format!(
                "non-finite mass quadrature on the cell of node {node:?}"
            )));
        }
        for k in 0..fields.len() {
            diags[k][u] = sums[k];
        }
    }
    Ok(diags.iter().map(|d| SparseOperator::diagonal_matrix(d)).collect())
}

fn box_gauss(g: &GradedGrid, fields: &[(&Expr, MassMode)], rules: &[&GaussLegendre], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let dim = lo.len();
    let mut z = vec![0.0; dim];
    let mut sums = vec![0.0; fields.len()];
    let count: usize = rules.iter().map(|r| r.order()).product();
    for q in 0..count {
        let mut w = 1.0;
        let mut r = q;
        for a in (0..dim).rev() {
            let rule = rules[a];
            let i = r % rule.order();
            r /= rule.order();
            let h = 0.5 * (hi[a] - lo[a]);
            z[a] = 0.5 * (lo[a] + hi[a]) + h * rule.nodes[i];
            w *= h * rule.weights[i];
        }
        let info = g.point_info(&z);
        let v = info.vars();
        for (k, (field, mode)) in fields.iter().enumerate() {
            sums[k] += w * info.sqrt_g * field.eval(&v) * mode_factor(*mode, info.delta);
        }
    }
    sums
}

#[allow(clippy::too_many_arguments)]
fn adaptive_box(
    g: &GradedGrid,
    fields: &[(&Expr, MassMode)],
    rules: &[&GaussLegendre],
    lo: &[f64],
    hi: &[f64],
    split: usize,
    whole: Vec<f64>,
    depth: usize,
) -> Vec<f64> {
    let mut parts = Vec::with_capacity(1 << split);
    let mut total = vec![0.0; fields.len()];
    for c in 0..(1usize << split) {
        let (mut clo, mut chi) = (lo.to_vec(), hi.to_vec());
        for a in 0..split {
            let mid = 0.5 * (lo[a] + hi[a]);
            if c >> a & 1 == 0 {
                chi[a] = mid;
            } else {
                clo[a] = mid;
            }
        }
        let v = box_gauss(g, fields, rules, &clo, &chi);
        for k in 0..total.len() {
            total[k] += v[k];
        }
        parts.push((clo, chi, v));
    }
    let done = total
        .iter()
        .zip(&whole)
        .all(|(t, w)| (t - w).abs() <= 1e-6 * t.abs() || !t.is_finite());
    if done || depth >= 4 {
        return total;
    }
    let mut out = vec![0.0; fields.len()];
    for (clo, chi, v) in parts {
        let r = adaptive_box(g, fields, rules, &clo, &chi, split, v, depth + 1);
        for k in 0..out.len() {
            out[k] += r[k];
        }
    }
    out
}

pub fn assemble_singular_mass(g: &GradedGrid, w: &Expr, mode: MassMode) -> Result<SparseOperator> {
    Ok(assemble_masses(g, &[(w, mode)])?.remove(0))
}

/// `(u'Au - lambda u'B_eta u) / u'B_q u`.
pub fn rayleigh_quotient(
    a: &SparseOperator,
    bq: &SparseOperator,
    beta: &SparseOperator,
    lambda: f64,
    u: &[f64],
) -> Result<f64> {
    if u.len() != a.dim() || bq.dim() != a.dim() || beta.dim() != a.dim() {
        return Err(HardyError::DimensionMismatch {
            expected: a.dim(),
            found: u.len(),
        });
    }
    let den = bq.quad_form(u);
    if den == 0.0 {
        return Err(HardyError::ZeroDenominator);
    }
    Ok((a.quad_form(u) - lambda * beta.quad_form(u)) / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn one() -> Expr {
        Expr::constant(1.0)
    }

    #[test]
    fn uniform_flat_grid_cell_volume() {
        let s = Scenario::flat_slab(3, 1, 0.5).unwrap();
        let g = GradedGrid::build(&s, 8, 1.0).unwrap();
        let m = assemble_singular_mass(&g, &one(), MassMode::Plain).unwrap();
        // interior dual cells of the x1 and x2 axes are 1/8 and 2/8; the tangential axis has 8 cells on [-1, 1]
        let vol = (1.0 / 8.0) * (2.0 / 8.0) * (2.0 / 8.0);
        for v in m.diagonal() {
            assert_relative_eq!(v, vol, max_relative = 1e-13);
        }
    }

    #[test]
    fn graded_nodes_follow_power_law() {
        let s = Scenario::flat_slab(3, 1, 0.5).unwrap();
        let g = GradedGrid::build(&s, 8, 2.0).unwrap();
        for (j, x) in g.axes()[0].nodes.iter().enumerate() {
            assert_relative_eq!(*x, (j as f64 / 8.0).powi(2), max_relative = 1e-15);
        }
        let g2 = GradedGrid::build(&s, 16, 2.0).unwrap();
        assert_relative_eq!(g.min_normal_spacing() / g2.min_normal_spacing(), 4.0, max_relative = 1e-12);
        assert!(GradedGrid::build(&s, 6, 2.0).is_err());
        assert!(GradedGrid::build(&s, 8, 5.0).is_err());
        let thin = Scenario::flat_slab(3, 1, 0.05).unwrap();
        assert!(GradedGrid::build(&thin, 8, 1.0).is_err());
    }

    #[test]
    fn one_dimensional_stiffness_stencil() {
        // a 1-D restriction: the x1 stencil of a uniform grid, scaled by the transverse face area
        let s = Scenario::flat_slab(3, 1, 0.5).unwrap();
        let g = GradedGrid::build(&s, 8, 1.0).unwrap();
        let a = assemble_stiffness(&g, &one());
        let area = (2.0 / 8.0) * (2.0 / 8.0);
        let h = 1.0 / 8.0;
        let u = g.unknown_at(&[3, 4, 4]).unwrap();
        let up = g.unknown_at(&[4, 4, 4]).unwrap();
        assert_relative_eq!(a.get(u, up), -area / h, max_relative = 1e-13);
        assert!(a.is_symmetric());
    }

    #[test]
    fn stiffness_rows_vanish_away_from_boundary() {
        let s = Scenario::flat_slab(3, 1, 0.5).unwrap();
        let g = GradedGrid::build(&s, 8, 2.0).unwrap();
        let a = assemble_stiffness(&g, &one());
        let r = a.apply(&vec![1.0; a.dim()]);
        let u = g.unknown_at(&[4, 4, 4]).unwrap();
        assert!(r[u].abs() < 1e-12);
        for (i, j, v) in a.triplets() {
            if i == j {
                assert!(v > 0.0);
            } else {
                assert!(v <= 0.0);
            }
        }
    }

    #[test]
    fn distant_cell_mass_matches_volume_over_distance() {
        let s = Scenario::flat_slab(3, 1, 0.5).unwrap();
        let g = GradedGrid::build(&s, 16, 1.0).unwrap();
        let bq = assemble_singular_mass(&g, &one(), MassMode::Q).unwrap();
        let bp = assemble_singular_mass(&g, &one(), MassMode::Plain).unwrap();
        let u = g.unknown_at(&[12, 12, 4]).unwrap();
        let x = g.node(u);
        let d0 = s.distances(&x).delta;
        assert!((bq.get(u, u) / (bp.get(u, u) / (d0 * d0)) - 1.0).abs() < 0.01);
    }

    #[test]
    fn sigma_adjacent_cell_matches_nested_quadrature() {
        let s = Scenario::flat_slab(3, 1, 0.5).unwrap();
        let g = GradedGrid::build(&s, 16, 2.0).unwrap();
        let bq = assemble_singular_mass(&g, &one(), MassMode::Q).unwrap();
        let u = g.unknown_at(&[1, 8, 4]).unwrap();
        let (lo, hi) = g.dual_cell(u);
        let inner = |x1: f64| {
            crate::quadrature::adaptive_gk(lo[1], hi[1], 1e-13, 1e-13, 2000, |x2| 1.0 / (x1 * x1 + x2 * x2))
                .unwrap()
                .value
        };
        let exact = crate::quadrature::adaptive_gk(lo[0], hi[0], 1e-12, 1e-12, 2000, inner).unwrap().value * (hi[2] - lo[2]);
        assert!((bq.get(u, u) / exact - 1.0).abs() < 1e-3, "{} vs {exact}", bq.get(u, u));
    }

    #[test]
    fn mass_order_insensitivity() {
        let s = Scenario::flat_slab(3, 1, 0.5).unwrap();
        let g = GradedGrid::build(&s, 32, 2.0).unwrap();
        let e = one();
        let m4 = assemble_masses_with_order(&g, &[(&e, MassMode::Q)], 4).unwrap().remove(0);
        let m8 = assemble_masses_with_order(&g, &[(&e, MassMode::Q)], 8).unwrap().remove(0);
        for j in [1, 2, 5, 20] {
            let u = g.unknown_at(&[j, 16, 8]).unwrap();
            assert!((m4.get(u, u) / m8.get(u, u) - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn ball_grid_keeps_cells_inside() {
        let s = Scenario::ball_equator(0.1).unwrap();
        let g = GradedGrid::build(&s, 16, 2.0).unwrap();
        for u in 0..g.unknowns() {
            let (lo, hi) = g.dual_cell(u);
            let far: f64 = lo.iter().zip(&hi).map(|(a, b)| a.abs().max(b.abs()).powi(2)).sum();
            assert!(far <= 1.0);
        }
        let a = assemble_stiffness(&g, &one());
        assert!(a.is_symmetric());
    }

    #[test]
    fn collar_grid_masses_positive() {
        for s in [Scenario::ball_equator(0.05).unwrap(), Scenario::flat_slab(3, 1, 0.1).unwrap()] {
            let g = GradedGrid::build_collar(&s, s.beta(), 16, 2.0).unwrap();
            let e = one();
            let ms = assemble_masses(&g, &[(&e, MassMode::Q), (&e, MassMode::Log), (&e, MassMode::Plain)]).unwrap();
            for m in &ms {
                assert!(m.diagonal().iter().all(|v| *v > 0.0));
            }
            let a = assemble_stiffness(&g, &e);
            assert!(a.is_symmetric());
        }
        // collar volume of the unit-ball equator tube approaches pi beta^2 / 2 * 2 pi
        let s = Scenario::ball_equator(0.05).unwrap();
        let g = GradedGrid::build_collar(&s, 0.05, 32, 1.0).unwrap();
        let vol: f64 = assemble_singular_mass(&g, &one(), MassMode::Plain).unwrap().diagonal().iter().sum();
        let tube = 0.5 * std::f64::consts::PI * 0.05f64.powi(2) * 2.0 * std::f64::consts::PI;
        assert!((vol / tube - 1.0).abs() < 0.15, "{vol} vs {tube}");
    }

    #[test]
    fn rayleigh_quotient_examples() {
        let a = SparseOperator::from_triplets(2, vec![(0, 0, 2.0), (1, 1, 3.0)]);
        let b = SparseOperator::identity(2);
        let e = SparseOperator::diagonal_matrix(&[1.0, 1.0]);
        assert_relative_eq!(rayleigh_quotient(&a, &b, &e, 0.0, &[1.0, 0.0]).unwrap(), 2.0);
        let u = [0.3, 0.7];
        let r = rayleigh_quotient(&a, &b, &e, 0.5, &u).unwrap();
        let scaled: Vec<f64> = u.iter().map(|v| 5.0 * v).collect();
        assert_relative_eq!(rayleigh_quotient(&a, &b, &e, 0.5, &scaled).unwrap(), r, max_relative = 1e-15);
        assert!(rayleigh_quotient(&a, &b, &e, 0.6, &u).unwrap() < r);
        assert!(matches!(
            rayleigh_quotient(&a, &b, &e, 0.0, &[0.0, 0.0]),
            Err(HardyError::ZeroDenominator)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn operators_symmetric_and_masses_positive(n in 4usize..7, gamma in 1.0f64..3.0, which in 0usize..3) {
            let n = 2 * n;
            let s = match which {
                0 => Scenario::flat_slab(3, 1, 0.5).unwrap(),
                1 => Scenario::flat_slab(4, 2, 0.5).unwrap(),
                _ => Scenario::ball_equator(0.5).unwrap(),
            };
            let g = GradedGrid::build(&s, n, gamma).unwrap();
            let p = Expr::parse("1 + x1^2/10").unwrap();
            let a = assemble_stiffness(&g, &p);
            prop_assert!(a.is_symmetric());
            prop_assert!(a.diagonal().iter().all(|v| *v > 0.0));
            let e = one();
            let eta = Expr::parse("delta^2").unwrap();
            for m in assemble_masses(&g, &[(&e, MassMode::Q), (&eta, MassMode::Eta), (&e, MassMode::Plain)]).unwrap() {
                prop_assert!(m.is_diagonal());
                prop_assert!(m.diagonal().iter().all(|v| *v > 0.0));
            }
        }
    }
}
