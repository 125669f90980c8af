//! Acceptance criteria of the workspace, grouped from the verification suites.
//!
//! Each criterion gathers one or more suites of [`Check`]s and passes when
//! every check does. Run them with `cargo test -p speclab-validation`.

use speclab::dynamics::gd_discrete;
use speclab::harness::verify::{
    depth_checks, dynamics_checks, equal_rate_checks, gf_theorem_checks, imbalance_checks,
    jointness_checks, kernel_checks, ngf_path_checks, ngf_theorem_checks, reduction_checks,
    ImbalanceOptions,
};
use speclab::harness::Check;
use speclab::Result;

/// A named group of checks.
pub struct Criterion {
    /// Short description printed on the verdict line.
    pub name: &'static str,
    /// Every check the verdict depends on.
    pub checks: Vec<Check>,
}

impl Criterion {
    /// True when every check passes.
    pub fn pass(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    /// The verdict line followed by one indented line per failing check.
    pub fn summary(&self) -> String {
        let failed: Vec<&Check> = self.checks.iter().filter(|c| !c.pass).collect();
        let mut out = format!(
            "{} {} ({} of {} checks pass)",
            if self.pass() { "PASS" } else { "FAIL" },
            self.name,
            self.checks.len() - failed.len(),
            self.checks.len()
        );
        for c in failed {
            out.push_str(&format!("\n    {c}"));
        }
        out
    }
}

type Builder = fn() -> Result<Vec<Check>>;

fn dynamics_oracle() -> Result<Vec<Check>> {
    dynamics_checks(&gd_discrete)
}

fn finite_sample_imbalance() -> Result<Vec<Check>> {
    Ok(imbalance_checks(&ImbalanceOptions::default())?.checks)
}

/// Every criterion, in a fixed order.
pub const CRITERIA: [(&str, Builder); 10] = [
    ("optimizer reductions", reduction_checks),
    ("gd and specgd match their closed forms", dynamics_oracle),
    (
        "specgd equal-rate growth and saturation steps",
        equal_rate_checks,
    ),
    (
        "gradient-flow loss gaps on the heavy-tail profile",
        gf_theorem_checks,
    ),
    (
        "normalised-flow loss gaps on the heavy-tail profile",
        ngf_theorem_checks,
    ),
    (
        "normalised flow follows the gradient-flow path",
        ngf_path_checks,
    ),
    ("layered spectral descent and the depth gap", depth_checks),
    (
        "specgd wins the finite-sample zipf comparison",
        finite_sample_imbalance,
    ),
    ("finite-sample jointness ratio", jointness_checks),
    ("numerical kernels", kernel_checks),
];

/// Evaluates one criterion; an error becomes a single failing check.
pub fn evaluate(name: &'static str, build: Builder) -> Criterion {
    let checks = build().unwrap_or_else(|e| {
        vec![Check::below(
            "acceptance",
            format!("error: {e}"),
            f64::NAN,
            0.0,
        )]
    });
    Criterion { name, checks }
}
