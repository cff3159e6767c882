//! Gauss–Legendre rules and adaptive Gauss–Kronrod integration.

use crate::error::{HardyError, Result};

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (c + h * x, h * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre over `panels` equal panels.
pub fn composite_gauss(
    a: f64,
    b: f64,
    panels: usize,
    rule: &GaussLegendre,
    mut f: impl FnMut(f64) -> f64,
) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let lo = a + h * i as f64;
        total += rule.integrate(lo, lo + h, &mut f);
    }
    total
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15(a: f64, b: f64, f: &mut impl FnMut(f64) -> f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

/// Adaptive G7K15 integration. Intervals are refined largest-error first and
/// the final sum is taken in left-endpoint order so results do not depend on
/// the refinement history.
pub fn adaptive_gk(
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
    f: impl FnMut(f64) -> f64,
) -> Result<QuadResult> {
    gk_driver(a, b, abs_tol, rel_tol, max_intervals, true, f)
}

/// Like [`adaptive_gk`] but returns the best estimate and its error bound
/// when the interval budget runs out (noise-limited integrands).
pub fn adaptive_gk_estimate(
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
    f: impl FnMut(f64) -> f64,
) -> Result<QuadResult> {
    gk_driver(a, b, abs_tol, rel_tol, max_intervals, false, f)
}

fn gk_driver(
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
    strict: bool,
    mut f: impl FnMut(f64) -> f64,
) -> Result<QuadResult> {
    let mut work: Vec<(f64, f64, f64, f64)> = Vec::new();
    let (v, e) = gk15(a, b, &mut f);
    work.push((a, b, v, e));
    loop {
        let total: f64 = work.iter().map(|w| w.2).sum();
        let err: f64 = work.iter().map(|w| w.3).sum();
        if !total.is_finite() || !err.is_finite() {
            return Err(HardyError::Domain {
                function: "adaptive_gk",
                detail: "non-finite integrand".into(),
            });
        }
        if err <= abs_tol.max(rel_tol * total.abs()) || work.len() >= max_intervals {
            work.sort_by(|x, y| x.0.total_cmp(&y.0));
            let value = work.iter().map(|w| w.2).sum();
            if strict && err > abs_tol.max(rel_tol * total.abs()) {
                return Err(HardyError::NotConverged {
                    iterations: work.len(),
                    residual: err,
                });
            }
            return Ok(QuadResult {
                value,
                error: err,
                intervals: work.len(),
            });
        }
        let (idx, _) = work
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3).then(y.0.cmp(&x.0)))
            .expect("work list is never empty");
        let (lo, hi, v0, e0) = work.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            if !strict {
                work.push((lo, hi, v0, e0));
                work.sort_by(|x, y| x.0.total_cmp(&y.0));
                return Ok(QuadResult {
                    value: work.iter().map(|w| w.2).sum(),
                    error: work.iter().map(|w| w.3).sum(),
                    intervals: work.len(),
                });
            }
            return Err(HardyError::NotConverged {
                iterations: work.len(),
                residual: err,
            });
        }
        let (v1, e1) = gk15(lo, mid, &mut f);
        let (v2, e2) = gk15(mid, hi, &mut f);
        work.push((lo, mid, v1, e1));
        work.push((mid, hi, v2, e2));
    }
}
