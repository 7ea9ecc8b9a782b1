//! The invariant suite behind `hdivproj verify`.

use anyhow::Result;
use serde::Serialize;

use crate::checks::{self, Check};
use crate::oracles;

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOptions {
    /// Mesh sizes `n` of the structured meshes.
    pub sizes: Vec<usize>,
    pub degrees: Vec<usize>,
    /// Degrees for the cheap algebraic identities.
    pub identity_degrees: Vec<usize>,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            sizes: vec![2, 4],
            degrees: vec![0, 1, 2],
            identity_degrees: vec![0, 1, 2, 3],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub options: VerifyOptions,
    pub checks: Vec<Check>,
    /// Whether every gating check passed.
    pub passed: bool,
}

impl VerifyReport {
    pub fn render(&self) -> String {
        let mut s: String = self.checks.iter().map(|c| c.line() + "\n").collect();
        let failed = self.checks.iter().filter(|c| c.gating && !c.passed).count();
        s.push_str(&format!(
            "{} checks, {} failed: {}\n",
            self.checks.len(),
            failed,
            if self.passed { "OK" } else { "FAILED" }
        ));
        s
    }
}

/// Runs every check at the sizes of `opts`. Errors inside a check become
/// failed entries rather than aborting the suite.
pub fn verify(opts: &VerifyOptions) -> VerifyReport {
    let base = opts.sizes.first().copied().unwrap_or(2);
    let seed = opts.seed;
    let mut checks = Vec::new();
    let mut run = |name: &str, f: &dyn Fn() -> Result<Vec<Check>>| match f() {
        Ok(cs) => checks.extend(cs),
        Err(e) => checks.push(Check {
            name: name.into(),
            passed: false,
            gating: true,
            measured: f64::NAN,
            bound: f64::NAN,
            detail: format!("error: {e:#}"),
        }),
    };
    let (sizes, degrees, ids) = (&opts.sizes, &opts.degrees, &opts.identity_degrees);
    run("commuting property", &|| Ok(vec![checks::commuting(sizes, ids, seed)?]));
    run("projection property", &|| Ok(vec![checks::projection(base, ids, 10, seed)?]));
    run("patch invariants", &|| checks::patch_invariants(sizes, ids));
    run("weak divergence", &|| {
        sizes.iter().map(|&n| checks::weak_divergence(n, degrees)).collect()
    });
    run("equivalence", &|| checks::equivalence(&checks::catalog(seed), base, sizes.len(), degrees));
    run("divergence switch", &|| Ok(vec![checks::divergence_switch(sizes, degrees)?]));
    run("degree-robust ratio", &|| {
        Ok(vec![checks::degree_robust(base, &[1, 2, 3, 4, 5])?.recorded()])
    });
    run("projector stability", &|| checks::projector_stability(&[2, 4, 8], 1));
    run("patch stability", &|| Ok(vec![checks::patch_stability(base, &[0, 1, 2, 3, 4])?]));
    run("constrained sweep", &|| checks::constrained_sweep_checks(6));
    run("mixed characterization", &|| {
        Ok(vec![checks::mixed_characterization(sizes, degrees)?])
    });
    run("least squares", &|| checks::least_squares(sizes, degrees, 20, seed));
    run("oracles", &oracles::all);
    run("reproducibility", &|| Ok(vec![checks::reproducibility(seed)?]));
    let passed = checks.iter().all(|c| c.passed || !c.gating);
    VerifyReport {
        options: opts.clone(),
        checks,
        passed,
    }
}
