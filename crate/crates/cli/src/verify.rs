//! The `verify` subcommand.

use std::sync::Arc;

use anyhow::Result;

use bemps_core::acquisition::Strategy;
use bemps_core::model_space::GeneratorSpec;
use bemps_core::scoring_rules::{CoreLog, CoreMse, RuleHandle, RuleRegistry};
use bemps_core::verification::{
    convergence_battery, formulation_equivalence, nonnegativity_sweep, BatterySpec, InstanceSpec,
    SuiteReport,
};

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub sweep: InstanceSpec,
    pub equivalence: InstanceSpec,
    pub battery: BatterySpec,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            sweep: InstanceSpec::default(),
            equivalence: InstanceSpec {
                instances: 100,
                ..InstanceSpec::default()
            },
            battery: BatterySpec::default(),
        }
    }
}

impl VerifyOptions {
    /// Same shape with fewer instances, families and labels.
    pub fn sized(instances: usize, families: usize, budget: usize, seed: u64) -> Self {
        let base = Self::default();
        Self {
            sweep: InstanceSpec {
                instances,
                seed,
                ..base.sweep
            },
            equivalence: InstanceSpec {
                instances,
                seed: seed.wrapping_add(1),
                ..base.equivalence
            },
            battery: BatterySpec {
                families,
                budget,
                seed: seed.wrapping_add(2),
                generator: GeneratorSpec::new(10, 50, 3),
            },
        }
    }
}

pub fn builtin_rules() -> Vec<RuleHandle> {
    vec![Arc::new(CoreMse), Arc::new(CoreLog)]
}

/// Runs all three suites. The non-negativity sweep covers BALD and a BEMPS
/// strategy per rule; the equivalence suite and the convergence battery use
/// `rules` directly.
pub fn verify(rules: &[RuleHandle], options: &VerifyOptions) -> Result<SuiteReport> {
    let mut strategies: Vec<Strategy> = rules.iter().cloned().map(Strategy::Bemps).collect();
    strategies.push(Strategy::Bald);
    let mut report = nonnegativity_sweep(&strategies, &options.sweep);
    report.extend(formulation_equivalence(rules, &options.equivalence));

    let mut registry = RuleRegistry::default();
    for rule in rules {
        if registry.get(rule.name()).is_err() {
            registry.register(rule.clone())?;
        }
    }
    let mut names: Vec<String> = rules.iter().map(|r| r.name().to_string()).collect();
    names.push("bald".into());
    report.extend(convergence_battery(
        &names,
        rules,
        &registry,
        &options.battery,
    )?);
    Ok(report)
}

/// One line per check: `PASS name: worst … (tolerance …, n instances)`.
pub fn format_report(report: &SuiteReport) -> String {
    let mut out = String::new();
    for c in &report.checks {
        out.push_str(&format!(
            "{} {}: worst {:.3e} (tolerance {:.1e}, {} instances)\n",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.worst,
            c.tolerance,
            c.instances
        ));
    }
    out
}
