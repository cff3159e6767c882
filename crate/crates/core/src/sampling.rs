//! Low-discrepancy sampling with a seeded Cranley–Patterson rotation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `i` in base `b`.
pub fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let inv = 1.0 / b as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % b) as f64;
        i /= b;
        f *= inv;
    }
    r
}

/// Shifted Halton sequence in `[0,1)^dim`.
#[derive(Debug, Clone)]
pub struct Halton {
    shift: Vec<f64>,
    index: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "Halton dimension limited to {}", PRIMES.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = (0..dim).map(|_| rng.gen::<f64>()).collect();
        Halton { shift, index: 1 }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let i = self.index;
        self.index += 1;
        self.shift
            .iter()
            .zip(PRIMES)
            .map(|(s, b)| {
                let v = radical_inverse(i, b) + s;
                v - v.floor()
            })
            .collect()
    }
}

/// Direction on the half-sphere `{v : v[0] > 0}` of `R^m` from `m` uniforms.
/// For `m = 2` a single angle is used; otherwise Box–Muller pairs.
pub fn half_sphere_direction(m: usize, u: &[f64]) -> Vec<f64> {
    use std::f64::consts::PI;
    if m == 1 {
        return vec![1.0];
    }
    if m == 2 {
        let phi = PI * (u[0] - 0.5);
        return vec![phi.cos(), phi.sin()];
    }
    let mut g = Vec::with_capacity(m);
    let mut j = 0;
    while g.len() < m {
        let a = u[j % u.len()].clamp(1e-12, 1.0 - 1e-12);
        let b = u[(j + 1) % u.len()];
        let r = (-2.0 * a.ln()).sqrt();
        g.push(r * (2.0 * PI * b).cos());
        if g.len() < m {
            g.push(r * (2.0 * PI * b).sin());
        }
        j += 2;
    }
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut v: Vec<f64> = g.iter().map(|x| x / norm).collect();
    v[0] = v[0].abs();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(5, 3) - (2.0 / 3.0 + 1.0 / 9.0)).abs() < 1e-15);
    }

    #[test]
    fn halton_is_seeded_and_in_range() {
        let mut a = Halton::new(4, 7);
        let mut b = Halton::new(4, 7);
        let mut c = Halton::new(4, 8);
        let (pa, pb, pc) = (a.next_point(), b.next_point(), c.next_point());
        assert_eq!(pa, pb);
        assert_ne!(pa, pc);
        for _ in 0..1000 {
            assert!(a.next_point().iter().all(|v| (0.0..1.0).contains(v)));
        }
    }

    #[test]
    fn half_sphere_directions_are_unit_and_inward() {
        let mut h = Halton::new(4, 1);
        for m in 2..5 {
            for _ in 0..100 {
                let v = half_sphere_direction(m, &h.next_point());
                let n: f64 = v.iter().map(|x| x * x).sum();
                assert!((n - 1.0).abs() < 1e-12);
                assert!(v[0] >= 0.0);
            }
        }
    }
}
