//! The `verify` command.

use std::fmt::Write as _;

use ada_core::oracle::{verification_suite, CheckResult};

use crate::error::{CliError, CliResult};

pub fn report(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        let verdict = match (r.passed(), r.expect_violation) {
            (true, false) => "PASS",
            (true, true) => "PASS (expected violation)",
            (false, _) => "FAIL",
        };
        let cmp = if r.expect_violation { ">" } else { "<" };
        let _ = writeln!(s, "{verdict:<26} {:<58} {:.3e} {cmp} {:.0e}", r.name, r.value, r.tolerance);
    }
    s
}

/// Runs the oracle suite, returning the printed report; failures map to
/// a verification error carrying the same report.
pub fn cmd_verify(seed: u64) -> CliResult<String> {
    let results = verification_suite(seed)?;
    let text = report(&results);
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CliError::Verification(format!("{failed} check(s) failed\n{text}")));
    }
    Ok(text)
}
