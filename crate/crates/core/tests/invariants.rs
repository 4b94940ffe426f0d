use std::sync::Arc;

use proptest::prelude::*;

use parasys::exponents::{classify_regime, compute_ab, compute_pq, critical_r, Nonlinearity, SystemSpec};
use parasys::fields::{Domain, Field, PointwiseMap};
use parasys::lorentz::{lp_norm, rearrange, uloc_norm, weak_norm};
use parasys::mild::{monotone_solve, picard_seed, picard_step, time_grid, PicardSettings, Reaction};
use parasys::semigroup::{Method, SemigroupEngine};
use parasys::supersolution::{evaluate_profile, smallness_functional, ProfileMode, SupersolutionProfile};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn domain(dim: usize) -> Arc<Domain> {
    let n = match dim {
        1 => 65,
        2 => 17,
        _ => 9,
    };
    Arc::new(Domain::centered(dim, 2.0, n).unwrap())
}

fn random_field(d: &Arc<Domain>, raw: &[f64]) -> Field {
    let vals: Vec<f64> = (0..d.len()).map(|i| raw[i % raw.len()]).collect();
    Field::from_values(d.clone(), vals, true).unwrap()
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, 17..97)
}

fn bumps() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.05f64..1.0, -1.0f64..1.0, 0.15f64..0.6), 1..4)
}

fn bump_field(d: &Arc<Domain>, b: &[(f64, f64, f64)]) -> Field {
    Field::from_fn(d.clone(), true, |x| {
        b.iter()
            .map(|(a, c, w)| a * (-x.iter().map(|xi| (xi - c) * (xi - c)).sum::<f64>() / (2.0 * w * w)).exp())
            .sum()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn pointwise_identity_is_bitwise(dim in 1usize..4, raw in values()) {
        let f = random_field(&domain(dim), &raw);
        let g = f.map(PointwiseMap::Power(1.0)).unwrap();
        prop_assert!(f.values().iter().zip(g.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn sup_norm_is_homogeneous(dim in 1usize..4, raw in values(), c in -5.0f64..5.0) {
        let d = domain(dim);
        let f = random_field(&d, &raw);
        let g = Field::from_values(d, f.values().iter().map(|v| c * v).collect(), false).unwrap();
        prop_assert!((g.linf_norm() - c.abs() * f.linf_norm()).abs() <= 1e-14 * g.linf_norm().max(1.0));
    }

    #[test]
    fn weak_norm_below_strong_norm(dim in 1usize..4, raw in values(), ri in 0usize..3) {
        let r = [1.5, 2.0, 3.0][ri];
        let f = random_field(&domain(dim), &raw);
        let w = weak_norm(&f, r).unwrap().norm;
        let s = lp_norm(&f, r).unwrap();
        prop_assert!(w <= s * (1.0 + 1e-12), "weak {w} > strong {s}");
    }

    #[test]
    fn weak_norm_scales(dim in 1usize..4, raw in values(), c in 0.01f64..100.0, r in 1.0f64..6.0) {
        let d = domain(dim);
        let f = random_field(&d, &raw);
        let g = f.map(PointwiseMap::Scale(c)).unwrap();
        let (a, b) = (weak_norm(&f, r).unwrap().norm, weak_norm(&g, r).unwrap().norm);
        prop_assert!((b - c * a).abs() <= 1e-12 * b.max(1e-300));
    }

    #[test]
    fn norms_are_monotone(dim in 1usize..4, raw in values(), extra in values(), r in 1.0f64..5.0, rho in 0.5f64..2.0) {
        let d = domain(dim);
        let f = random_field(&d, &raw);
        let g = f.combine(1.0, &random_field(&d, &extra), 1.0).unwrap();
        prop_assert!(weak_norm(&f, r).unwrap().norm <= weak_norm(&g, r).unwrap().norm * (1.0 + 1e-12));
        prop_assert!(uloc_norm(&f, r, rho).unwrap().norm <= uloc_norm(&g, r, rho).unwrap().norm * (1.0 + 1e-12));
    }

    #[test]
    fn rearrangements_are_ordered(dim in 1usize..4, raw in values()) {
        let t = rearrange(&random_field(&domain(dim), &raw)).unwrap();
        for i in 0..t.fstar.len() {
            prop_assert!(t.fstar[i] >= 0.0);
            prop_assert!(t.fstarstar[i] >= t.fstar[i] * (1.0 - 1e-12));
            if i > 0 {
                prop_assert!(t.fstar[i] <= t.fstar[i - 1]);
                prop_assert!(t.fstarstar[i] <= t.fstarstar[i - 1] * (1.0 + 1e-12));
            }
        }
    }
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn semigroup_law(dim in 1usize..4, b in bumps(), s in 0.001f64..0.5, t in 0.001f64..0.5) {
        let e = SemigroupEngine::new(domain(dim), Method::SpectralSine);
        // signed data: nonnegative fields are clipped, which is not linear
        let bump = bump_field(e.domain(), &b);
        let phi = Field::from_values(e.domain().clone(), bump.values().iter().map(|v| v - 0.5 * b[0].0).collect(), false).unwrap();
        let two = e.apply(&e.apply(&phi, s).unwrap(), t).unwrap();
        let one = e.apply(&phi, s + t).unwrap();
        let diff = two.combine(1.0, &one, -1.0).unwrap().linf_norm();
        prop_assert!(diff <= 1e-10 * phi.linf_norm());
    }

    #[test]
    fn semigroup_is_positive_contractive_and_ordered(dim in 1usize..4, raw in values(), extra in values(), t in 1e-4f64..1.0) {
        // rough data: the exactly positive difference symbol
        let e = SemigroupEngine::new(domain(dim), Method::SpectralDifference);
        let phi = random_field(e.domain(), &raw);
        let psi = phi.combine(1.0, &random_field(e.domain(), &extra), 1.0).unwrap();
        let (a, b) = (e.apply_with_stats(&phi, t).unwrap(), e.apply(&psi, t).unwrap());
        let tol = 1e-12 * phi.linf_norm();
        prop_assert!(a.undershoot <= tol);
        prop_assert!(a.field.linf_norm() <= phi.linf_norm() * (1.0 + 1e-12));
        prop_assert!(a.field.max_excess_over(&b).0 <= 1e-12 * psi.linf_norm());
    }

    #[test]
    fn weight_identity(n in 1usize..4, p in 0.0f64..4.0, q in 0.0f64..4.0, r1 in 1.0f64..8.0, r2 in 1.0f64..8.0, frac in 0.0f64..1.0) {
        let spec = SystemSpec::weakly_coupled(p, q, n).unwrap();
        let r = 1.0 + frac * (r1.min(r2) - 1.0);
        let (pp, qq) = compute_pq(&spec, &[r1, r2]).unwrap();
        let (a, b) = compute_ab(&spec, &[r1 / r, r2 / r]).unwrap();
        let nf = n as f64;
        prop_assert!((a - 1.0 - r / nf * pp).abs() <= 1e-12 * a.abs().max(1.0));
        prop_assert!((b - 1.0 - r / nf * qq).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn majorant_exponents_nonnegative(e in prop::array::uniform4(0.0f64..3.0), a in 1.0f64..10.0, b in 1.0f64..10.0, unit in any::<bool>()) {
        let spec = SystemSpec::strong_power(e[0], e[1], e[2], e[3], 1).unwrap();
        let (a, b) = if unit { (1.0, 1.0) } else { (a, b) };
        let (ea, eb) = compute_ab(&spec, &[a, b]).unwrap();
        prop_assert!(ea >= 0.0 && eb >= 0.0);
        // A = 1 - 1/a + p2/b for p1 = 0 vanishes only at a = 1, p2 = 0
        let weak = SystemSpec::weakly_coupled(e[0], e[1], 1).unwrap();
        let (wa, wb) = compute_ab(&weak, &[a, b]).unwrap();
        prop_assert_eq!(wa == 0.0, a == 1.0 && e[0] == 0.0);
        prop_assert_eq!(wb == 0.0, b == 1.0 && e[1] == 0.0);
    }

    #[test]
    fn critical_indices_give_two(n in 1usize..4, e in prop::array::uniform4(0.0f64..3.0), weak in any::<bool>()) {
        let spec = if weak {
            SystemSpec::weakly_coupled(e[0] + 0.1, e[1] + 0.1, n).unwrap()
        } else {
            SystemSpec::strong_power(e[0], e[1], e[2], e[3], n).unwrap()
        };
        if let Some(rs) = critical_r(&spec).r_star {
            prop_assume!(rs.iter().all(|r| *r >= 1.0));
            let (pp, qq) = compute_pq(&spec, &rs).unwrap();
            prop_assert!((pp - 2.0).abs() <= 1e-12 && (qq - 2.0).abs() <= 1e-12, "P = {pp}, Q = {qq}");
        }
    }

    #[test]
    fn two_component_cycle_matches(n in 1usize..4, p in 0.0f64..4.0, q in 0.0f64..4.0, r1 in 1.0f64..8.0, r2 in 1.0f64..8.0) {
        let weak = SystemSpec::weakly_coupled(p, q, n).unwrap();
        let cyc = SystemSpec::new(Nonlinearity::KComponent { p: vec![p, q] }, n, Default::default()).unwrap();
        let (pp, qq) = compute_pq(&weak, &[r1, r2]).unwrap();
        let (pk, qk) = compute_pq(&cyc, &[r1, r2]).unwrap();
        prop_assert!((pk - pp.max(qq)).abs() <= 1e-12 && (qk - pp.min(qq)).abs() <= 1e-12);
    }

    #[test]
    fn verdict_survives_relabeling(n in 1usize..4, e in prop::array::uniform4(0.0f64..3.0), r1 in 1.0f64..8.0, r2 in 1.0f64..8.0) {
        let spec = SystemSpec::strong_power(e[0], e[1], e[2], e[3], n).unwrap();
        let a = classify_regime(&spec, Some(&[r1, r2])).unwrap();
        let b = classify_regime(&spec.swapped(), Some(&[r2, r1])).unwrap();
        prop_assert_eq!(a.verdict, b.verdict);
        prop_assert_eq!(a.data_class_verdict, b.data_class_verdict);
    }
}

fn profile(mode: ProfileMode, w0: Field, sigma: f64) -> SupersolutionProfile {
    SupersolutionProfile::new(mode, sigma, 1.0, 1.0, 2.0, 3.0, w0, 1.0).unwrap()
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn drift_profile_dominates(b in bumps(), sigma in 1.05f64..2.0, t in 0.0f64..1.0) {
        let e = SemigroupEngine::new(domain(1), Method::SpectralDifference);
        let w0 = bump_field(e.domain(), &b);
        let hi = evaluate_profile(&profile(ProfileMode::WithLinearDrift, w0.clone(), sigma), &e, t).unwrap();
        let lo = evaluate_profile(&profile(ProfileMode::PureSemigroup, w0, sigma), &e, t).unwrap();
        prop_assert!(lo.max_excess_over(&hi).0 <= 1e-12 * hi.linf_norm());
    }

    #[test]
    fn profile_is_monotone_in_data(b in bumps(), extra in bumps(), sigma in 1.05f64..2.0, t in 0.0f64..1.0, drift in any::<bool>()) {
        let e = SemigroupEngine::new(domain(1), Method::SpectralDifference);
        let w0 = bump_field(e.domain(), &b);
        let w1 = w0.combine(1.0, &bump_field(e.domain(), &extra), 1.0).unwrap();
        let mode = if drift { ProfileMode::WithLinearDrift } else { ProfileMode::PureSemigroup };
        let a = evaluate_profile(&profile(mode, w0, sigma), &e, t).unwrap();
        let c = evaluate_profile(&profile(mode, w1, sigma), &e, t).unwrap();
        prop_assert!(a.max_excess_over(&c).0 <= 1e-12 * c.linf_norm());
    }

    #[test]
    fn functional_homogeneous_and_monotone(b in bumps(), c in 0.1f64..10.0, sigma in 1.05f64..3.0, t1 in 0.01f64..0.5, t2 in 0.01f64..0.5) {
        let e = SemigroupEngine::new(domain(1), Method::SpectralSine);
        let w0 = bump_field(e.domain(), &b);
        let f = |w: Field, t: f64| smallness_functional(&profile(ProfileMode::WithLinearDrift, w, sigma), &e, t).unwrap();
        let base = f(w0.clone(), t1);
        let scaled = f(w0.map(PointwiseMap::Scale(c)).unwrap(), t1);
        // degree max(A,B) - 1 = 2
        prop_assert!((scaled - c * c * base).abs() <= 1e-9 * scaled);
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        prop_assert!(f(w0.clone(), lo) <= f(w0, hi) * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn picard_iterates_increase(amp in 0.05f64..0.5, shift in -0.5f64..0.5, p in 0.0f64..3.0, q in 0.0f64..3.0, rough in any::<bool>()) {
        let d = domain(1);
        let e = SemigroupEngine::new(d.clone(), Method::SpectralDifference);
        let u0 = if rough {
            Field::from_fn(d.clone(), true, |x| if (x[0] - shift).abs() < 0.5 { amp } else { 0.0 }).unwrap()
        } else {
            bump_field(&d, &[(amp, shift, 0.3)])
        };
        let v0 = bump_field(&d, &[(amp, -shift, 0.4)]);
        let reaction = Reaction::system(&SystemSpec::weakly_coupled(p, q, 1).unwrap());
        let grid = time_grid(0.2, 16, 4.0).unwrap();
        let data = [u0, v0];
        let mut state = picard_seed(&reaction, &data, &e, &grid).unwrap();
        for _ in 0..8 {
            let next = picard_step(&state, &reaction, &data, &e).unwrap();
            let sup = next.states.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(*v));
            prop_assert!(next.monotone_violation <= 1e-12 * sup.max(1.0), "violation {}", next.monotone_violation);
            for (c, comp) in next.states.iter().enumerate() {
                for (j, row) in comp.iter().enumerate() {
                    for (k, v) in row.iter().enumerate() {
                        prop_assert!(*v >= state.states[c][j][k] - 1e-12 * sup.max(1.0));
                    }
                }
            }
            state = next;
        }
    }

    #[test]
    fn minimal_solutions_ordered_by_data(b in bumps(), extra in bumps(), scale in 0.05f64..0.3) {
        let d = domain(1);
        let e = SemigroupEngine::new(d.clone(), Method::SpectralDifference);
        let u0 = bump_field(&d, &b).map(PointwiseMap::Scale(scale)).unwrap();
        let v0 = bump_field(&d, &extra).map(PointwiseMap::Scale(scale)).unwrap();
        let u1 = u0.combine(1.0, &v0, 0.5).unwrap();
        let v1 = v0.combine(1.0, &u0, 0.5).unwrap();
        let reaction = Reaction::system(&SystemSpec::weakly_coupled(2.0, 2.0, 1).unwrap());
        let grid = time_grid(0.3, 16, 4.0).unwrap();
        let s = PicardSettings::default();
        let lo = monotone_solve(&reaction, &[u0, v0], &e, &grid, &s).unwrap();
        let hi = monotone_solve(&reaction, &[u1, v1], &e, &grid, &s).unwrap();
        for c in 0..2 {
            for (a, b) in lo.components[c].iter().zip(&hi.components[c]) {
                prop_assert!(a.max_excess_over(b).0 <= 1e-10 * b.linf_norm().max(1e-300));
            }
        }
    }
}
