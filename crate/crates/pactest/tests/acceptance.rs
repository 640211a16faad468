//! Acceptance gate: one line per criterion, nonzero exit if any fails.
//!
//! Each criterion runs independently and reports `PASS` or `FAIL (reason)`.
//! Tolerances are pinned here, not read from config, so a regression cannot
//! hide behind a loosened knob.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use pactest::aids::{sample_params, ClassTag, SamplerConfig};
use pactest::betweenness::{
    r_betweenness, ClaimEconomy, CrraEuOracle, PerturbedEuOracle,
};
use pactest::calculus::{income_derivative, price_jacobian, slutsky, Method};
use pactest::dataset::{generate_dataset, IncomeLaw, NoiseSpec, PointLaw};
use pactest::engine::{
    derive_seed, empirical_size, run_test_with_table, TestSchedule, TestSubject, Verdict,
};
use pactest::harness::{default_groups, homothetic_dgp, separable_dgp};
use pactest::learn::{estimate_gamma, sample_size};
use pactest::prng::stream_rng;
use pactest::restrictions::{restriction_norm, NormOptions, RestrictionKind, SingularPolicy};
use rand::Rng;

type Criterion = fn() -> Result<(), String>;

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("a01 decision-table-fast-rejections", a01_fast_rejections),
        ("a02 decision-table-hard-column", a02_hard_column),
        ("a03 separability-table-rejections", a03_separability_rejections),
        ("a04 empirical-soundness", a04_empirical_soundness),
        ("a05 zero-on-class-identities", a05_zero_on_class),
        ("a06 calculus-oracle-equivalence", a06_calculus_equivalence),
        ("a07 betweenness-one-sidedness", a07_betweenness_one_sidedness),
        ("a08 sample-size-consistency", a08_sample_size_consistency),
        ("a09 measurement-error-robustness", a09_measurement_error),
        ("a10 determinism", a10_determinism),
    ];
    let mut failures = 0usize;
    for (name, run) in criteria {
        match catch_unwind(AssertUnwindSafe(run)) {
            Ok(Ok(())) => println!("ACCEPTANCE {name}: PASS"),
            Ok(Err(msg)) => {
                failures += 1;
                println!("ACCEPTANCE {name}: FAIL ({msg})");
            }
            Err(_) => {
                failures += 1;
                println!("ACCEPTANCE {name}: FAIL (panicked)");
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Deviations 1e-1..1e-4: n = 60 and rejection at iteration 1, each column
/// inside 10 s.
fn a01_fast_rejections() -> Result<(), String> {
    let schedule = TestSchedule::homothetic_study(11);
    let table = estimate_gamma(&schedule.gamma)
        .map_err(|e| e.to_string())?
        .table;
    let kind = RestrictionKind::Homothetic { scaled: true };
    for &beta in &[1e-1, 1e-2, 1e-3, 1e-4] {
        let started = Instant::now();
        let params = homothetic_dgp(beta);
        let subject = TestSubject::oracle(&params, format!("beta={beta}"));
        let report =
            run_test_with_table(&subject, &kind, &schedule, &table).map_err(|e| e.to_string())?;
        check(
            started.elapsed() < Duration::from_secs(10),
            format!("beta={beta}: column exceeded 10 s"),
        )?;
        check(
            report.rows[0].n_required == 60,
            format!("beta={beta}: n_1 = {}, want 60", report.rows[0].n_required),
        )?;
        check(
            report.verdict == Verdict::Rejected { iteration: 1 },
            format!("beta={beta}: verdict {}, want rejection at 1", report.verdict),
        )?;
    }
    Ok(())
}

/// beta = 1e-5 survives (eps, delta) = (1.0, 0.05) and is rejected at a
/// deeper iteration; the study table prints both the reference row
/// (0.33, 0.016, n=100) and the computed sample sizes.
fn a02_hard_column() -> Result<(), String> {
    let schedule = TestSchedule::homothetic_study(11);
    let table = estimate_gamma(&schedule.gamma)
        .map_err(|e| e.to_string())?
        .table;
    let kind = RestrictionKind::Homothetic { scaled: true };
    let params = homothetic_dgp(1e-5);
    let subject = TestSubject::oracle(&params, "beta=1e-5");
    let report =
        run_test_with_table(&subject, &kind, &schedule, &table).map_err(|e| e.to_string())?;
    check(
        report.rows[0].decision.to_string() == "continue",
        format!(
            "beta=1e-5 decided {} at iteration 1, want continue",
            report.rows[0].decision
        ),
    )?;
    match report.verdict {
        Verdict::Rejected { iteration } if iteration >= 2 => {}
        other => return Err(format!("verdict {other}, want rejection at iteration >= 2")),
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_pactest"))
        .args([
            "simulate",
            "--study",
            "homotheticity",
            "--pairs",
            "800",
            "--grid-points",
            "100",
            "--out-dir",
        ])
        .arg(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), "simulate run failed")?;
    let text = std::fs::read_to_string(dir.path().join("homotheticity_table.txt"))
        .map_err(|e| e.to_string())?;
    check(
        text.contains("eps=0.33 delta=0.016 n=100"),
        "table does not print the reference row",
    )?;
    check(
        text.contains("n=760") && text.contains("n=737"),
        "table does not print the computed sample sizes",
    )?;
    check(
        text.contains("does not reproduce"),
        "table does not flag the non-reproducing reference row",
    )
}

/// Cross-group deviations 1e-1..1e-5 with beta = 0: n = 60 and rejection at
/// iteration 1 for all five columns, each inside 10 s.
fn a03_separability_rejections() -> Result<(), String> {
    let groups = default_groups();
    let schedule = TestSchedule::weak_separable_study(groups.clone(), 11);
    let table = estimate_gamma(&schedule.gamma)
        .map_err(|e| e.to_string())?
        .table;
    let kind = RestrictionKind::WeakSeparableHomothetic {
        groups: groups.clone(),
    };
    for &d in &[1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
        let started = Instant::now();
        let params = separable_dgp(d, &groups).map_err(|e| e.to_string())?;
        let subject = TestSubject::oracle(&params, format!("gamma={d}"));
        let report =
            run_test_with_table(&subject, &kind, &schedule, &table).map_err(|e| e.to_string())?;
        check(
            started.elapsed() < Duration::from_secs(10),
            format!("gamma={d}: column exceeded 10 s"),
        )?;
        check(
            report.rows[0].n_required == 60,
            format!("gamma={d}: n_1 = {}, want 60", report.rows[0].n_required),
        )?;
        check(
            report.verdict == Verdict::Rejected { iteration: 1 },
            format!("gamma={d}: verdict {}, want rejection at 1", report.verdict),
        )?;
    }
    Ok(())
}

/// 200 in-class homothetic subjects under the default schedule: rejection
/// rate at most 0.05 + 2 sqrt(0.05*0.95/200) ~ 0.081, inside 5 minutes.
fn a04_empirical_soundness() -> Result<(), String> {
    let started = Instant::now();
    let schedule = TestSchedule::homothetic_study(17);
    let kind = RestrictionKind::Homothetic { scaled: true };
    let summary = empirical_size(&ClassTag::Homothetic, &kind, &schedule, 200)
        .map_err(|e| e.to_string())?;
    let bound = 0.05 + 2.0 * (0.05f64 * 0.95 / 200.0).sqrt();
    check(
        summary.rate() <= bound,
        format!("size {} above bound {bound:.4}", summary.rate()),
    )?;
    check(
        started.elapsed() < Duration::from_secs(300),
        "soundness sweep exceeded 5 minutes",
    )
}

/// restriction_norm (analytic mode) at most 1e-8 for 50 homothetic subjects
/// under the homothetic kind and 50 homothetic-weakly-separable subjects
/// under the separability kind.
fn a05_zero_on_class() -> Result<(), String> {
    let groups = default_groups();
    let law = PointLaw::new(3, 0.5, 2.0, IncomeLaw::Fixed(10.0));
    let mut rng = stream_rng(123, 0);
    let grid = law.draw_many(40, &mut rng);
    let options = NormOptions {
        method: Method::Analytic,
        singular: SingularPolicy::Fail,
    };
    let cfg = SamplerConfig::new(3);
    let cases: [(ClassTag, RestrictionKind); 2] = [
        (
            ClassTag::Homothetic,
            RestrictionKind::Homothetic { scaled: true },
        ),
        (
            ClassTag::HomotheticWeaklySeparable(groups.clone()),
            RestrictionKind::WeakSeparableHomothetic { groups },
        ),
    ];
    for (class, kind) in cases {
        for i in 0..50u64 {
            let mut draw_rng = stream_rng(123, 1 + i);
            let params =
                sample_params(&cfg, &class, &mut draw_rng).map_err(|e| e.to_string())?;
            let report =
                restriction_norm(&params, &kind, &grid, options).map_err(|e| e.to_string())?;
            check(
                report.norm <= 1e-8,
                format!("{kind} norm {} on in-class subject {i}", report.norm),
            )?;
        }
    }
    Ok(())
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Analytic and central-finite-difference income derivatives, price
/// Jacobians, and Slutsky matrices agree within 1e-5 relative at 100 random
/// points; analytic Slutsky symmetry within 1e-6 at all of them.
fn a06_calculus_equivalence() -> Result<(), String> {
    let cfg = SamplerConfig::new(3);
    let law = PointLaw::new(3, 0.5, 2.0, IncomeLaw::Fixed(10.0));
    for i in 0..100u64 {
        let mut rng = stream_rng(456, i);
        let params = sample_params(&cfg, &ClassTag::Unrestricted, &mut rng)
            .map_err(|e| e.to_string())?;
        let point = law.draw(&mut rng);
        let (p, inc) = (&point.prices, point.income);

        let di_a = income_derivative(&params, p, inc, Method::Analytic)
            .map_err(|e| e.to_string())?;
        let di_f = income_derivative(&params, p, inc, Method::FiniteDifference)
            .map_err(|e| e.to_string())?;
        let scale = di_a.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        for (a, f) in di_a.iter().zip(&di_f) {
            check(
                (a - f).abs() <= 1e-5 * scale,
                format!("point {i}: income derivative gap {:.2e}", (a - f).abs()),
            )?;
        }

        let jac_a =
            price_jacobian(&params, p, inc, Method::Analytic).map_err(|e| e.to_string())?;
        let jac_f = price_jacobian(&params, p, inc, Method::FiniteDifference)
            .map_err(|e| e.to_string())?;
        let scale = max_abs(&jac_a).max(1.0);
        check(
            max_abs(&(jac_a - &jac_f)) <= 1e-5 * scale,
            format!("point {i}: price Jacobian disagrees beyond 1e-5 relative"),
        )?;

        let s_a = slutsky(&params, p, inc, Method::Analytic).map_err(|e| e.to_string())?;
        let s_f =
            slutsky(&params, p, inc, Method::FiniteDifference).map_err(|e| e.to_string())?;
        let scale = max_abs(&s_a).max(1.0);
        check(
            max_abs(&(s_a.clone() - &s_f)) <= 1e-5 * scale,
            format!("point {i}: Slutsky disagrees beyond 1e-5 relative"),
        )?;
        check(
            max_abs(&(s_a.clone() - s_a.transpose())) <= 1e-6 * scale,
            format!("point {i}: Slutsky asymmetry beyond 1e-6"),
        )?;
    }
    Ok(())
}

/// CRRA expected-utility oracles satisfy |R_bet| <= 1e-6 at 100 random
/// economies (S in {3,4,5}, rho in {0.5, 1, 2}); the perturbed oracle
/// yields |R_bet| > 1e-3 at 95% or more of them.
fn a07_betweenness_one_sidedness() -> Result<(), String> {
    let mut hits = 0usize;
    let total = 100usize;
    for i in 0..total {
        let mut rng = stream_rng(789, i as u64);
        let states = [3, 4, 5][i % 3];
        let rho = [0.5, 1.0, 2.0][(i / 3) % 3];
        let raw: Vec<f64> = (0..states).map(|_| rng.random_range(0.2..1.0)).collect();
        let mass: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|v| v / mass).collect();
        let prices: Vec<f64> = (0..states).map(|_| rng.random_range(0.5..2.0)).collect();
        let income = rng.random_range(5.0..20.0);
        let econ = ClaimEconomy::new(probs, prices, income).map_err(|e| e.to_string())?;

        // Claims 0 and 1 anchor the constrained directions, so the
        // restriction is evaluated at every remaining claim.
        let eu = CrraEuOracle { rho };
        for s in 2..states {
            let r = r_betweenness(&eu, &econ, s).map_err(|e| e.to_string())?;
            check(
                r.abs() <= 1e-6,
                format!("economy {i}: expected-utility R_bet {r:.2e} at claim {s}"),
            )?;
        }

        let perturbed = PerturbedEuOracle { rho, state: 2 };
        let r = r_betweenness(&perturbed, &econ, 2).map_err(|e| e.to_string())?;
        if r.abs() > 1e-3 {
            hits += 1;
        }
    }
    check(
        hits * 100 >= 95 * total,
        format!("perturbed oracle detected at {hits}/{total} economies, want >= 95%"),
    )
}

/// sample_size(1.0, 0.05, C=20) = 60 and monotone nonincreasing in eps and
/// delta over a 10x10 grid.
fn a08_sample_size_consistency() -> Result<(), String> {
    let n = sample_size(1.0, 0.05, 0.0, 2, 20.0).map_err(|e| e.to_string())?;
    check(n == 60, format!("sample_size(1, 0.05) = {n}, want 60"))?;

    let eps_grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let delta_grid: Vec<f64> = (1..=10).map(|i| i as f64 / 200.0).collect();
    let mut table = vec![vec![0u64; 10]; 10];
    for (a, &eps) in eps_grid.iter().enumerate() {
        for (b, &delta) in delta_grid.iter().enumerate() {
            table[a][b] = sample_size(eps, delta, 1e-3, 2, 20.0).map_err(|e| e.to_string())?;
        }
    }
    for a in 0..10 {
        for b in 0..10 {
            if a + 1 < 10 {
                check(
                    table[a + 1][b] <= table[a][b],
                    format!("n not nonincreasing in eps at ({a},{b})"),
                )?;
            }
            if b + 1 < 10 {
                check(
                    table[a][b + 1] <= table[a][b],
                    format!("n not nonincreasing in delta at ({a},{b})"),
                )?;
            }
        }
    }
    Ok(())
}

/// Uniform noise of variance 1e-4 on generated quantities: in-class
/// homothetic datasets are rejected in at most 10% of 100 trials; datasets
/// with beta = 1e-1 are rejected in at least 95%.
fn a09_measurement_error() -> Result<(), String> {
    let kind = RestrictionKind::Homothetic { scaled: true };
    let schedule = TestSchedule::dataset_default(&kind, 2, 42).map_err(|e| e.to_string())?;
    let table = estimate_gamma(&schedule.gamma)
        .map_err(|e| e.to_string())?
        .table;
    let law = PointLaw::new(2, 0.5, 2.0, IncomeLaw::spread(10.0));
    let noise = NoiseSpec::uniform(1e-4);
    let run_sweep = |beta: f64| -> Result<usize, String> {
        let params = homothetic_dgp(beta);
        let mut rejected = 0usize;
        for i in 0..100u64 {
            let mut rng = stream_rng(derive_seed(99, i), 7);
            let data = generate_dataset(&params, 100, &law, &noise, format!("trial {i}"), &mut rng)
                .map_err(|e| e.to_string())?;
            let subject = TestSubject::data(&data);
            let report = run_test_with_table(&subject, &kind, &schedule, &table)
                .map_err(|e| e.to_string())?;
            if report.rejected() {
                rejected += 1;
            }
        }
        Ok(rejected)
    };
    let in_class = run_sweep(0.0)?;
    check(
        in_class <= 10,
        format!("in-class rejection rate {in_class}/100 above 0.10"),
    )?;
    let deviant = run_sweep(1e-1)?;
    check(
        deviant >= 95,
        format!("beta=1e-1 rejection rate {deviant}/100 below 0.95"),
    )
}

/// Reruns with identical config and seeds produce byte-identical CSVs for
/// all three subcommands.
fn a10_determinism() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_pactest");

    let simulate = |outdir: &std::path::Path| -> Result<(), String> {
        let out = Command::new(bin)
            .args([
                "simulate",
                "--study",
                "homotheticity",
                "--grid",
                "1e-1,1e-5",
                "--pairs",
                "400",
                "--grid-points",
                "60",
                "--emit-datasets",
                "--noise-family",
                "uniform",
                "--out-dir",
            ])
            .arg(outdir)
            .output()
            .map_err(|e| e.to_string())?;
        check(out.status.success(), "simulate run failed")
    };
    let files = [
        "homotheticity_cells.csv",
        "homotheticity_gamma.csv",
        "dataset_homotheticity_1e-1.csv",
    ];
    simulate(dir.path())?;
    let mut first: Vec<Vec<u8>> = Vec::new();
    for f in files {
        first.push(std::fs::read(dir.path().join(f)).map_err(|e| e.to_string())?);
    }
    simulate(dir.path())?;
    for (f, bytes) in files.iter().zip(&first) {
        let again = std::fs::read(dir.path().join(f)).map_err(|e| e.to_string())?;
        check(&again == bytes, format!("simulate rerun changed {f}"))?;
    }

    let run_test = || -> Result<Vec<u8>, String> {
        let out = Command::new(bin)
            .args(["test", "--data"])
            .arg(dir.path().join("dataset_homotheticity_1e-1.csv"))
            .args(["--kind", "homothetic", "--pairs", "300", "--grid-points", "50", "--out-dir"])
            .arg(dir.path())
            .output()
            .map_err(|e| e.to_string())?;
        check(
            out.status.code() == Some(2),
            format!("test run exited {:?}, want 2", out.status.code()),
        )?;
        std::fs::read(dir.path().join("test_report.csv")).map_err(|e| e.to_string())
    };
    let report_a = run_test()?;
    let report_b = run_test()?;
    check(report_a == report_b, "test rerun changed test_report.csv")?;

    let run_gamma = || -> Result<Vec<u8>, String> {
        let out = Command::new(bin)
            .args([
                "gamma",
                "--kind",
                "homothetic",
                "--eps-grid",
                "1e-2,1e-1,1,inf",
                "--pairs",
                "200",
                "--grid-points",
                "40",
                "--out-dir",
            ])
            .arg(dir.path())
            .output()
            .map_err(|e| e.to_string())?;
        check(out.status.success(), "gamma run failed")?;
        std::fs::read(dir.path().join("gamma_table.csv")).map_err(|e| e.to_string())
    };
    let gamma_a = run_gamma()?;
    let gamma_b = run_gamma()?;
    check(gamma_a == gamma_b, "gamma rerun changed gamma_table.csv")
}
