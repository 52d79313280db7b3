use nlpot::iterate::{
    calibrate_k, check_absorption, estimate_constants, fit_hessian_constants, picard_solve, smallness_m, IterationConfig, Outcome,
};
use nlpot::measure::{Cuboid, Grid, Point, RadonMeasure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(cells: usize) -> Grid {
    Grid::uniform(Cuboid::unit(2).unwrap(), cells).unwrap()
}

fn random_suite(seed: u64, count: usize) -> Vec<RadonMeasure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let k = rng.gen_range(1..4);
            let mut m = RadonMeasure::zero(2);
            for _ in 0..k {
                let x = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
                m = m.with_atom(Point::new(x), rng.gen_range(0.1..1.0) / k as f64).unwrap();
            }
            m
        })
        .collect()
}

/// Configuration calibrated on a central Dirac at 64 cells.
fn calibrated(l: u32) -> (IterationConfig, RadonMeasure) {
    let g = unit(64);
    let dirac = RadonMeasure::dirac(Point::new([0.5, 0.5]), 1.0).unwrap();
    let k = calibrate_k(std::slice::from_ref(&dirac), &g, 2.0).unwrap();
    let cfg0 = IterationConfig::new(2, 2.0, l, k, 1.0, 1.0);
    let est = estimate_constants(std::slice::from_ref(&dirac), &g, &cfg0.wolff_params(&g), 2.0).unwrap();
    (IterationConfig::new(2, 2.0, l, k, est.delta0, est.c1), dirac)
}

#[test]
fn estimated_constants_survive_refinement() {
    let suite = random_suite(3, 10);
    let est = |cells: usize| {
        let g = unit(cells);
        let params = IterationConfig::new(2, 2.0, 2, 1.0, 1.0, 1.0).wolff_params(&g);
        estimate_constants(&suite, &g, &params, 2.0).unwrap()
    };
    let a = est(32);
    let b = est(64);
    assert_eq!(a.delta0, b.delta0);
    assert!(a.c1 >= a.c1_floor && a.c1 <= 2.0 * a.c1_floor);
    assert!((a.c1 / b.c1 - 1.0).abs() <= 0.05, "{} vs {}", a.c1, b.c1);
    // C1 is nondecreasing along the dyadic candidates
    for w in a.evaluated.windows(2) {
        assert!(w[1].1 >= w[0].1 * (1.0 - 1e-12), "{:?}", a.evaluated);
    }
}

#[test]
fn estimate_rejects_overweight_measures() {
    let g = unit(16);
    let heavy = RadonMeasure::dirac(Point::new([0.5, 0.5]), 2.0).unwrap();
    let params = IterationConfig::new(2, 2.0, 2, 1.0, 1.0, 1.0).wolff_params(&g);
    assert!(estimate_constants(&[heavy], &g, &params, 2.0).is_err());
}

#[test]
fn absorption_holds_at_the_smallness_mass() {
    let (cfg, dirac) = calibrated(2);
    let m = smallness_m(&cfg).unwrap();
    let mu = dirac.scaled(m).unwrap();
    let g = unit(64);
    let r = check_absorption(&mu, &cfg, &g, &cfg.wolff_params(&g), 0.05).unwrap();
    assert!(r.passed, "ratio {}", r.checked.value);
    assert!((r.value("mass_over_M").unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn picard_converges_monotonically_below_the_threshold() {
    let (cfg, dirac) = calibrated(3);
    let m = smallness_m(&cfg).unwrap();
    let g = unit(64);
    let (u, trace) = picard_solve(&dirac.scaled(0.5 * m).unwrap(), &cfg, &g).unwrap();
    assert_eq!(trace.outcome, Outcome::Converged);
    assert!(trace.cap_enforced && trace.theorem_regime);
    for s in &trace.steps {
        assert!(s.min_increment >= -1e-8);
        assert!(s.cap_margin >= 0.0);
    }
    assert!(trace.fixed_point_change.unwrap() <= 10.0 * trace.tol_sup);
    assert!(u.min() >= 0.0);
}

#[test]
fn reaction_raises_the_solution_above_the_linear_one() {
    // at a moderate mass the reaction term is visible but the scheme still settles
    let (mut cfg, dirac) = calibrated(2);
    cfg.bar_scale = nlpot::iterate::BarScale::Unit;
    let g = unit(32);
    let mu = dirac.scaled(2.0).unwrap();
    let (u, trace) = picard_solve(&mu, &cfg, &g).unwrap();
    assert!(!trace.cap_enforced);
    assert_eq!(trace.outcome, Outcome::Converged);
    assert!(trace.step_count() > 1);
    let (lin, _) = nlpot::pde::solve_plaplace(&nlpot::pde::PdeProblem::with_measure(g, 2.0, mu).unwrap(), 1e-11).unwrap();
    for (a, b) in u.values().iter().zip(lin.values()) {
        assert!(a + 1e-12 >= *b);
    }
    assert!(u.max() > lin.max());
}

#[test]
fn huge_mass_is_classified_as_diverged() {
    let (cfg, dirac) = calibrated(2);
    let m = smallness_m(&cfg).unwrap();
    let (_, trace) = picard_solve(&dirac.scaled(1e10 * m).unwrap(), &cfg, &unit(32)).unwrap();
    assert_eq!(trace.outcome, Outcome::Diverged);
    assert!(trace.fixed_point_change.is_none());
}

#[test]
fn hessian_constants_are_refinement_stable() {
    let (cfg, dirac) = calibrated(2);
    let mu = dirac.scaled(smallness_m(&cfg).unwrap()).unwrap();
    let fit = |cells: usize| {
        let (u, _) = picard_solve(&mu, &cfg, &unit(cells)).unwrap();
        fit_hessian_constants(&u.coarsened(cells / 32).unwrap(), &mu, 4.0 / 32.0).unwrap()
    };
    let a = fit(32);
    let b = fit(64);
    assert!(a.k2.is_finite() && a.k2 > 0.0);
    assert!((a.k2 / b.k2 - 1.0).abs() <= 0.10, "{a:?} {b:?}");
    assert!(a.mean_gap >= 0.0);
}
