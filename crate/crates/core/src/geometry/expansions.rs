use serde::Serialize;

use super::{dot, Scenario};
use crate::error::{HardyError, Result};
use crate::fd;

/// Residuals of the four small-`delta_tilde` expansions at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionRow {
    pub delta_tilde: f64,
    /// `|delta^2 / delta_tilde^2 - 1| / delta_tilde`
    pub r1: f64,
    /// `|grad delta_tilde . grad d - d / delta_tilde|`
    pub r2: f64,
    /// `||grad delta_tilde| - 1| / delta_tilde`
    pub r3: f64,
    /// `|Lap delta_tilde - (N-k-1) / delta_tilde|`
    pub r4: f64,
}

/// Worst residual per half-octave bin of `delta_tilde`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RungFit {
    pub delta_tilde: f64,
    pub samples: usize,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionReport {
    pub rows: Vec<ExpansionRow>,
    /// Sample index and reason for every excluded sample.
    pub excluded: Vec<(usize, String)>,
}

impl ExpansionReport {
    pub fn rung_fits(&self) -> Vec<RungFit> {
        let mut bins: Vec<(i64, RungFit)> = Vec::new();
        for r in &self.rows {
            let key = (2.0 * r.delta_tilde.log2()).floor() as i64;
            let slot = match bins.iter_mut().find(|(k, _)| *k == key) {
                Some((_, f)) => f,
                None => {
                    bins.push((
                        key,
                        RungFit {
                            delta_tilde: 0.0,
                            samples: 0,
                            c1: 0.0,
                            c2: 0.0,
                            c3: 0.0,
                            c4: 0.0,
                        },
                    ));
                    &mut bins.last_mut().unwrap().1
                }
            };
            slot.samples += 1;
            slot.delta_tilde += r.delta_tilde;
            slot.c1 = slot.c1.max(r.r1);
            slot.c2 = slot.c2.max(r.r2);
            slot.c3 = slot.c3.max(r.r3);
            slot.c4 = slot.c4.max(r.r4);
        }
        bins.sort_by(|a, b| b.0.cmp(&a.0));
        bins.into_iter()
            .map(|(_, mut f)| {
                f.delta_tilde /= f.samples as f64;
                f
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("delta_tilde,r1,r2,r3,r4\n");
        for r in &self.rows {
            s.push_str(&format!("{:.12e},{:.6e},{:.6e},{:.6e},{:.6e}\n", r.delta_tilde, r.r1, r.r2, r.r3, r.r4));
        }
        s
    }
}

/// Samples on the rungs `delta_tilde = r` of a ladder: `directions` angles in
/// the normal half-plane and `tangential` positions along `Sigma_k`.
pub fn ladder_samples(s: &Scenario, rungs: &[f64], directions: usize, tangential: usize) -> Vec<Vec<f64>> {
    let m = s.codim();
    let dom = s.sigma_domain();
    let mut out = Vec::new();
    for &r in rungs {
        for i in 0..directions {
            let phi = if directions == 1 {
                0.0
            } else {
                -1.2 + 2.4 * i as f64 / (directions - 1) as f64
            };
            for j in 0..tangential {
                let mut y = vec![0.0; s.dim()];
                y[0] = r * phi.cos();
                let spread = ((m - 1) as f64).sqrt();
                for v in &mut y[1..m] {
                    *v = r * phi.sin() / spread;
                }
                for (a, v) in y[m..].iter_mut().enumerate() {
                    let span = if dom.periodic { dom.hi[a] - dom.lo[a] } else { 0.8 * (dom.hi[a] - dom.lo[a]) };
                    let mid = 0.5 * (dom.lo[a] + dom.hi[a]);
                    *v = mid + span * ((j as f64 + 0.5) / tangential as f64 - 0.5);
                }
                out.push(s.collar_to_ambient(&y));
            }
        }
    }
    out
}

/// Evaluates the residuals of the four expansions at each ambient sample
/// using Richardson-extrapolated differences of the analytic distances.
pub fn check_distance_expansions(s: &Scenario, samples: &[Vec<f64>]) -> Result<ExpansionReport> {
    let n = s.dim();
    let m = s.codim() as f64;
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (idx, x) in samples.iter().enumerate() {
        let p = match s.eval_collar_point(x) {
            Ok(p) => p,
            Err(e) => {
                excluded.push((idx, e.to_string()));
                continue;
            }
        };
        let dt = p.delta_tilde;
        let h = fd::default_step(dt);
        if dt < 10.0 * h || p.d < 2.0 * h {
            excluded.push((idx, format!("stencil of step {h:e} too close to Sigma or the boundary")));
            continue;
        }
        let inside = |y: &[f64]| -> Result<()> {
            if !s.contains(y) {
                return Err(HardyError::OutsideDomain { point: y.to_vec() });
            }
            if n == 3 && s.kind() != super::ScenarioKind::FlatSlab && y[0].hypot(y[1]) == 0.0 {
                return Err(HardyError::CutLocus("polar axis".into()));
            }
            Ok(())
        };
        let dt_fn = |y: &[f64]| -> Result<f64> {
            inside(y)?;
            Ok(s.distances(y).delta_tilde)
        };
        let d_fn = |y: &[f64]| -> Result<f64> {
            inside(y)?;
            Ok(s.distances(y).d)
        };
        let res = (|| -> Result<ExpansionRow> {
            let (g_dt, _) = fd::gradient_fd(dt_fn, x, h)?;
            let (g_d, _) = fd::gradient_fd(d_fn, x, h)?;
            let lap = fd::laplacian_fd(dt_fn, x, h)?;
            Ok(ExpansionRow {
                delta_tilde: dt,
                r1: (p.delta * p.delta / (dt * dt) - 1.0).abs() / dt,
                r2: (dot(&g_dt, &g_d) - p.d / dt).abs(),
                r3: (dot(&g_dt, &g_dt).sqrt() - 1.0).abs() / dt,
                r4: (lap.value - (m - 1.0) / dt).abs(),
            })
        })();
        match res {
            Ok(r) => rows.push(r),
            Err(e) => excluded.push((idx, e.to_string())),
        }
    }
    Ok(ExpansionReport { rows, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_residuals_vanish() {
        for (n, k) in [(3, 1), (4, 1), (5, 2)] {
            let s = Scenario::flat_slab(n, k, 0.4).unwrap();
            let samples = ladder_samples(&s, &[0.2, 0.1, 0.05], 5, 3);
            let rep = check_distance_expansions(&s, &samples).unwrap();
            assert!(rep.excluded.is_empty(), "{:?}", rep.excluded);
            for r in &rep.rows {
                assert!(r.r1 < 1e-12);
                assert!(r.r2 <= 1e-8);
                assert!(r.r3 < 1e-7);
                assert!(r.r4 * r.delta_tilde < 1e-6, "{r:?}");
            }
        }
    }

    #[test]
    fn ball_item_two_is_exact_and_others_bounded() {
        let s = Scenario::ball_equator(0.5).unwrap();
        let samples = ladder_samples(&s, &[0.2, 0.1, 0.05, 0.025], 7, 2);
        let rep = check_distance_expansions(&s, &samples).unwrap();
        assert_eq!(rep.rows.len(), samples.len());
        assert!(rep.rows.iter().all(|r| r.r2 <= 1e-6));
        let fits = rep.rung_fits();
        assert_eq!(fits.len(), 4);
        for f in &fits {
            assert!(f.c1 < 2.0 && f.c3 < 2.0 && f.c4 < 5.0, "{f:?}");
        }
    }

    #[test]
    fn samples_outside_collar_are_excluded() {
        let s = Scenario::ball_equator(0.1).unwrap();
        let rep = check_distance_expansions(&s, &[vec![0.5, 0.0, 0.0], vec![0.95, 0.0, 0.01]]).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.excluded[0].0, 0);
    }
}
