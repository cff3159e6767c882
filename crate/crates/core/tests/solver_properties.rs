use std::sync::OnceLock;

use proptest::prelude::*;

use hardy_core::discretization::{rayleigh_quotient, GradedGrid};
use hardy_core::geometry::Scenario;
use hardy_core::solver::{concavity_defect, find_threshold, min_rayleigh, QuotientOperators, SolverOptions};
use hardy_core::weights::WeightTriple;

fn flat_ops(n: usize) -> QuotientOperators {
    let s = Scenario::flat_slab(3, 1, 0.3).unwrap();
    QuotientOperators::assemble(&GradedGrid::build(&s, n, 2.0).unwrap(), &WeightTriple::standard()).unwrap()
}

fn small() -> &'static QuotientOperators {
    static OPS: OnceLock<QuotientOperators> = OnceLock::new();
    OPS.get_or_init(|| flat_ops(8))
}

#[test]
fn mu_at_zero_decreases_under_refinement_and_stays_positive() {
    let opts = SolverOptions::default();
    let mus: Vec<f64> = [8, 16, 32]
        .iter()
        .map(|&n| min_rayleigh(&flat_ops(n), 0.0, &opts, None).unwrap().mu)
        .collect();
    assert!(mus.windows(2).all(|w| w[1] <= w[0]), "{mus:?}");
    assert!(mus.iter().all(|m| *m > 0.0));
}

#[test]
fn threshold_evidence_straddles_the_level() {
    let t = find_threshold(&flat_ops(8), &flat_ops(16), 1.0, 0.5, &SolverOptions::default()).unwrap();
    let level = t.plateau_value - t.tol_mu;
    for b in [&t.coarse, &t.fine] {
        assert!(b.mu_lo >= level && b.mu_hi < level, "{b:?}");
        assert!(b.lambda_hi - b.lambda_lo <= 0.5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn minimizer_reproduces_mu_and_residual(lambda in -20.0f64..30.0) {
        let ops = small();
        let r = min_rayleigh(ops, lambda, &SolverOptions::default(), None).unwrap();
        let q = rayleigh_quotient(&ops.a, &ops.bq, &ops.beta, lambda, &r.eigvec).unwrap();
        prop_assert!((q - r.mu).abs() <= 1e-10 * r.mu.abs().max(1.0));
        let verified = r.verify(ops).unwrap();
        prop_assert!(verified <= 1e-8 * r.mu.abs().max(1.0) * 1.0001, "{verified}");
    }

    #[test]
    fn quotient_is_scale_invariant(lambda in -20.0f64..30.0, scale in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3]) {
        let ops = small();
        let u: Vec<f64> = (0..ops.dim()).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
        let v: Vec<f64> = u.iter().map(|x| x * scale).collect();
        let a = rayleigh_quotient(&ops.a, &ops.bq, &ops.beta, lambda, &u).unwrap();
        let b = rayleigh_quotient(&ops.a, &ops.bq, &ops.beta, lambda, &v).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn mu_is_nonincreasing_and_concave(l0 in -20.0f64..30.0, d1 in 0.1f64..10.0, d2 in 0.1f64..10.0) {
        let ops = small();
        let opts = SolverOptions::default();
        let ls = [l0, l0 + d1, l0 + d1 + d2];
        let pts: Vec<(f64, f64)> = ls.iter().map(|&l| (l, min_rayleigh(ops, l, &opts, None).unwrap().mu)).collect();
        prop_assert!(pts[1].1 <= pts[0].1 + 1e-9 && pts[2].1 <= pts[1].1 + 1e-9, "{pts:?}");
        prop_assert!(concavity_defect(&pts) <= 1e-6, "{pts:?}");
    }
}
