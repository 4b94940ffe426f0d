//! One test per acceptance criterion. Each prints a PASS/FAIL line to the
//! uncaptured stderr so the summary shows up in plain `cargo test` output.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use parasys::exponents::{compute_ab, compute_pq, critical_r, Nonlinearity, SystemSpec};
use parasys::fields::{sample_function, Domain, Field, InitialDatum};
use parasys::lorentz::{lp_norm, weak_norm};
use parasys::semigroup::{log_grid, Method, SemigroupEngine};
use parasys_cli::config::{DataSource, RunConfig, SolverMode};
use parasys_cli::{run, RunReport};

fn line(n: u32, pass: bool, started: Instant, msg: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let secs = started.elapsed().as_secs_f64();
    let _ = writeln!(std::io::stderr(), "criterion {n}: {tag} ({secs:.1} s) {msg}");
}

fn preset(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(format!("{name}.toml"));
    RunConfig::load(&path).unwrap()
}

fn check<'a>(r: &'a RunReport, name: &str) -> &'a parasys_cli::pipeline::Check {
    r.checks.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("no check {name}: {:?}", r.checks))
}

fn bump(amplitude: f64, width: f64) -> DataSource {
    DataSource::Datum(InitialDatum::GaussianBump { amplitude, width, center: Vec::new() })
}

#[test]
fn criterion_1_exponent_algebra() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    let (mut worst_id, mut worst_crit, mut done, mut crit_cases) = (0.0f64, 0.0f64, 0, 0);
    while done < 200 {
        let n = rng.gen_range(1..=3usize);
        let (p, q) = (rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.0));
        let (r1, r2): (f64, f64) = (rng.gen_range(1.0..10.0), rng.gen_range(1.0..10.0));
        let spec = SystemSpec::weakly_coupled(p, q, n).unwrap();
        let r = rng.gen_range(1.0..=r1.min(r2));
        let (pp, qq) = compute_pq(&spec, &[r1, r2]).unwrap();
        let (a, b) = compute_ab(&spec, &[r1 / r, r2 / r]).unwrap();
        let nf = n as f64;
        worst_id = worst_id.max((a - 1.0 - r / nf * pp).abs()).max((b - 1.0 - r / nf * qq).abs());
        // P, Q are only defined for indices >= 1
        if let Some(rs) = critical_r(&spec).r_star.filter(|rs| rs.iter().all(|r| *r >= 1.0)) {
            let (ps, qs) = compute_pq(&spec, &rs).unwrap();
            worst_crit = worst_crit.max((ps - 2.0).abs()).max((qs - 2.0).abs());
            crit_cases += 1;
        }
        done += 1;
    }
    let pass = worst_id <= 1e-12 && worst_crit <= 1e-12 && crit_cases > 0;
    line(
        1,
        pass,
        start,
        &format!("A = 1 + (r/N)P worst {worst_id:.1e}; P(r*) = Q(r*) = 2 worst {worst_crit:.1e} on {crit_cases} cases"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_closed_form_scan() {
    let start = Instant::now();
    let report = run(&preset("regime_table")).unwrap().report;
    let scan = report.scan.as_ref().unwrap();
    let pass = scan.closed_form_discrepancies == 0;
    line(
        2,
        pass,
        start,
        &format!(
            "{} lattice cases: published closed forms disagree in {}, amended forms in {}, exact solver in {}",
            scan.cases, scan.closed_form_discrepancies, scan.amended_discrepancies, scan.exact_vs_search
        ),
    );
    // the amended characterizations and the exact solver must agree with the search either way
    assert_eq!(scan.amended_discrepancies, 0);
    assert_eq!(scan.exact_vs_search, 0);
    assert!(pass, "first discrepancies: {:?}", scan.examples);
}

#[test]
fn criterion_3_norm_suite() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(3);
    let mut corpus = Vec::new();
    for dim in 1..=3usize {
        let n = [257, 33, 13][dim - 1];
        let d = Arc::new(Domain::centered(dim, 2.0, n).unwrap());
        for k in 0..34 {
            let f = if k % 2 == 0 {
                Field::from_values(d.clone(), (0..d.len()).map(|_| rng.gen_range(0.0..10.0)).collect(), true).unwrap()
            } else {
                let (a, w) = (rng.gen_range(0.1..5.0), rng.gen_range(0.2..1.0));
                let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                sample_function(&d, &InitialDatum::GaussianBump { amplitude: a, width: w, center: c }).unwrap()
            };
            corpus.push(f);
        }
    }
    corpus.truncate(100);

    let mut weak_ok = true;
    for f in &corpus {
        for r in [1.5, 2.0, 3.0] {
            weak_ok &= weak_norm(f, r).unwrap().norm <= lp_norm(f, r).unwrap() * (1.0 + 1e-12);
        }
    }

    let d = Arc::new(Domain::centered(1, 4.0, 1024).unwrap());
    let ind = Field::from_fn(d, true, |x| if x[0].abs() <= 1.0 { 1.0 } else { 0.0 }).unwrap();
    let w = weak_norm(&ind, 2.0).unwrap().norm;
    let ind_ok = (w - 2f64.sqrt()).abs() <= 0.02 * 2f64.sqrt();

    // ||fg||_{r,inf} <= C ||f||_{r1,inf} ||g||_{r2,inf}; from (fg)* (s) <= f*(s/2) g*(s/2)
    // and f* <= f** one gets C <= 2^{1/r} r / (r - 1)
    let mut product_ok = true;
    let mut worst = 0.0f64;
    for (r1, r2) in [(3.0, 3.0), (4.0, 4.0), (3.0, 6.0), (6.0, 6.0)] {
        let r: f64 = 1.0 / (1.0 / r1 + 1.0 / r2);
        let bound = 2f64.powf(1.0 / r) * r / (r - 1.0);
        for pair in corpus.chunks(2) {
            let (f, g) = (&pair[0], &pair[1]);
            let fg = Field::from_values(
                f.domain().clone(),
                f.values().iter().zip(g.values()).map(|(a, b)| a * b).collect(),
                true,
            )
            .unwrap();
            let ratio =
                weak_norm(&fg, r).unwrap().norm / (weak_norm(f, r1).unwrap().norm * weak_norm(g, r2).unwrap().norm);
            worst = worst.max(ratio / bound);
            product_ok &= ratio <= bound;
        }
    }
    let pass = weak_ok && ind_ok && product_ok;
    line(
        3,
        pass,
        start,
        &format!(
            "weak <= strong on {} fields: {weak_ok}; indicator weak norm {w:.4}; product ratio at most {worst:.3} of 2^(1/r) r/(r-1)",
            corpus.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_semigroup() {
    let start = Instant::now();
    let a = 3.0;
    let mut decay_err = 0.0f64;
    for (dim, n) in [(1usize, 129usize), (2, 65)] {
        let d = Arc::new(Domain::centered(dim, a, n).unwrap());
        let engine = SemigroupEngine::new(d.clone(), Method::SpectralSine);
        let ks = [3.0, 2.0];
        let phi = Field::from_fn(d.clone(), false, |x| {
            (0..dim).map(|i| (ks[i] * std::f64::consts::PI * (x[i] + a) / (2.0 * a)).sin()).product()
        })
        .unwrap();
        let lambda: f64 = (0..dim).map(|i| (ks[i] * std::f64::consts::PI / (2.0 * a)).powi(2)).sum();
        for t in [0.01, 0.1, 1.0] {
            let got = engine.apply(&phi, t).unwrap();
            let err = got.combine(1.0, &phi, -(-lambda * t).exp()).unwrap().linf_norm();
            decay_err = decay_err.max(err);
        }
    }

    // capped d|x|^{-1/2}: ||S(t) phi||_inf ~ t^{-1/4}
    let d = Arc::new(Domain::centered(1, 8.0, 131073).unwrap());
    let engine = SemigroupEngine::new(d.clone(), Method::SpectralSine);
    let phi = sample_function(&d, &InitialDatum::PowerLaw { d: 1.0, r: 2.0, center: Vec::new(), envelope: None }).unwrap();
    let ts = log_grid(1e-3, 1.0, 13);
    let pts: Vec<(f64, f64)> = ts.iter().map(|&t| (t.ln(), engine.apply(&phi, t).unwrap().linf_norm().ln())).collect();
    let m = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / m, pts.iter().map(|p| p.1).sum::<f64>() / m);
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let expected = -0.25;
    let pass = decay_err <= 1e-10 && (slope - expected).abs() <= 0.1 * expected.abs();
    line(4, pass, start, &format!("eigenmode decay error {decay_err:.1e}; smoothing slope {slope:.4} (expected -0.25)"));
    assert!(pass);
}

#[test]
fn criterion_5_supersolution() {
    let start = Instant::now();
    let report = run(&preset("small_data_drift")).unwrap().report;
    let sup = report.supersolution.as_ref().unwrap();
    let calibrated = sup.calibration.is_some();
    let ineq = check(&report, "supersolution_inequality");
    let cmp = check(&report, "solution_below_profile");
    let pass = calibrated && ineq.pass && cmp.pass && report.errors.is_empty();
    line(
        5,
        pass,
        start,
        &format!(
            "calibrated gamma {:.4}; inequality violation {:.1e}; solution above profile by {:.1e}",
            sup.gamma, ineq.value, cmp.value
        ),
    );
    assert!(pass, "{:?}", report.checks);
}

#[test]
fn criterion_6_solver_cross_validation() {
    let start = Instant::now();
    let base = preset("three_component");
    let weak = |p: f64, q: f64| Nonlinearity::WeaklyCoupled { p, q };
    let strong = |p1, p2, q1, q2| Nonlinearity::StrongPower { p1, p2, q1, q2 };
    let cases: Vec<(Nonlinearity, Vec<DataSource>)> = vec![
        (weak(2.0, 2.0), vec![bump(0.4, 0.8), bump(0.3, 1.0)]),
        (weak(3.0, 2.0), vec![bump(0.3, 0.6), bump(0.3, 0.6)]),
        (weak(1.5, 2.5), vec![bump(0.5, 1.0), bump(0.2, 0.5)]),
        (weak(1.0, 3.0), vec![bump(0.3, 0.7), bump(0.4, 0.9)]),
        (Nonlinearity::KComponent { p: vec![2.0, 3.0, 1.5] }, vec![bump(0.4, 0.8), bump(0.3, 1.0), bump(0.2, 0.6)]),
        (Nonlinearity::KComponent { p: vec![2.0, 2.0, 2.0] }, vec![bump(0.3, 0.8), bump(0.3, 0.8), bump(0.3, 0.8)]),
        (Nonlinearity::KComponent { p: vec![1.5, 1.5, 3.0] }, vec![bump(0.5, 0.5), bump(0.2, 1.0), bump(0.3, 0.7)]),
        (Nonlinearity::KComponent { p: vec![4.0, 1.0, 2.0] }, vec![bump(0.3, 1.0), bump(0.4, 0.6), bump(0.2, 0.8)]),
        (strong(1.0, 1.0, 1.0, 1.0), vec![bump(0.4, 0.8), bump(0.3, 1.0)]),
        (strong(0.0, 2.0, 2.0, 0.0), vec![bump(0.3, 0.8), bump(0.4, 0.6)]),
        (strong(1.5, 0.5, 0.5, 1.5), vec![bump(0.5, 0.7), bump(0.3, 1.0)]),
        (strong(2.0, 1.0, 1.0, 2.0), vec![bump(0.3, 1.0), bump(0.3, 0.5)]),
    ];
    let mut worst_diff = 0.0f64;
    let mut failures = Vec::new();
    for (i, (nl, data)) in cases.into_iter().enumerate() {
        let mut cfg = base.clone();
        cfg.system = SystemSpec::new(nl, 1, Default::default()).unwrap();
        cfg.data = data;
        cfg.solver.mode = SolverMode::Compare;
        let report = run(&cfg).unwrap().report;
        if let Some(cv) = &report.cross_validation {
            worst_diff = worst_diff.max(cv.relative_sup_difference);
        }
        if !report.pass {
            failures.push(format!("case {i}: {:?} {:?}", report.errors, report.checks.iter().filter(|c| !c.pass).collect::<Vec<_>>()));
        }
    }
    let pass = failures.is_empty();
    line(6, pass, start, &format!("12 configurations; worst relative sup difference {worst_diff:.1e}; Picard monotone in every step: {pass}"));
    assert!(pass, "{failures:?}");
}

#[test]
fn criterion_7_blowup_rates() {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    let mut exps = Vec::new();
    for name in ["blowup_rate", "strong_blowup_rate"] {
        let report = run(&preset(name)).unwrap().report;
        let b = report.blowup.as_ref().unwrap();
        let t = b.time.as_ref().map_or(f64::NAN, |t| t.t_est);
        let fit = b.fit.as_ref().unwrap();
        let e = fit.fitted_exp[0];
        pass &= b.blew_up && (t - 1.0).abs() <= 0.03 && (e - 1.0).abs() <= 0.15 && report.pass;
        parts.push(format!("{name}: T = {t:.6}, exponent {e:.4} (theory {})", fit.theory_exp[0]));
        exps.push(e);
    }
    pass &= (exps[0] - exps[1]).abs() <= 1e-6;
    line(7, pass, start, &parts.join("; "));
    assert!(pass);
}

#[test]
fn criterion_8_regime_dichotomy() {
    let start = Instant::now();
    let bounded = run(&preset("pq_le_one")).unwrap().report;
    let blowup = run(&preset("fujita_blowup")).unwrap().report;
    let b1 = check(&bounded, "bounded_to_horizon");
    let b2 = check(&blowup, "blows_up");
    let pass = b1.pass && b2.pass && bounded.pass && blowup.pass;
    line(8, pass, start, &format!("pq = 1: {}; N = 2, p = q = 2, unit bump: {}", b1.detail, b2.detail));
    assert!(pass);
}

#[test]
fn criterion_9_transform_consistency() {
    let start = Instant::now();
    let report = run(&preset("exp_transform")).unwrap().report;
    let cv = report.cross_validation.as_ref().unwrap();
    let pass = cv.relative_sup_difference <= 1e-3 && report.pass;
    line(9, pass, start, &format!("transformed vs direct relative sup difference {:.1e}", cv.relative_sup_difference));
    assert!(pass);
}
