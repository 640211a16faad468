//! Smallest end-to-end run: test one closed-form demand system for
//! homotheticity and print the verdict.

use pactest::{run_test, RestrictionKind, TestSchedule, TestSubject};

fn main() -> Result<(), pactest::engine::EngineError> {
    let schedule = TestSchedule::homothetic_study(11);
    let params = pactest::harness::homothetic_dgp(1e-3);
    let subject = TestSubject::oracle(&params, "beta=1e-3");
    let kind = RestrictionKind::Homothetic { scaled: true };
    let report = run_test(&subject, &kind, &schedule)?;
    println!("{}", report.verdict);
    Ok(())
}
