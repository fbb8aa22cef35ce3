use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::Policy;
use crate::synth::gen_scenario;

use super::config::RunConfig;
use super::run::run_stream;

pub const COMPARISON_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub seeds: Vec<u64>,
    pub lengths: Vec<usize>,
    pub policies: Vec<Policy>,
}

/// Summary of one (policy, length) cell over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub policy: Policy,
    pub length: usize,
    pub recall_mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub recall_sd: f64,
    pub redundancy_mean: f64,
    pub recalls: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub format_version: u32,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellSummary>,
    /// Scenario checksum per length and seed; every policy consumed that exact scenario.
    pub scenario_checksums: BTreeMap<usize, BTreeMap<u64, String>>,
}

impl Comparison {
    pub fn cell(&self, policy: Policy, length: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.policy == policy && c.length == length)
    }

    /// Aligned text table, one row per policy and one column per length.
    pub fn table(&self) -> String {
        let mut lengths: Vec<usize> = self.cells.iter().map(|c| c.length).collect();
        lengths.sort_unstable();
        lengths.dedup();
        let mut policies: Vec<Policy> = self.cells.iter().map(|c| c.policy).collect();
        policies.sort_unstable();
        policies.dedup();

        let header: Vec<String> = std::iter::once("policy".to_string())
            .chain(lengths.iter().map(|l| format!("L={l}")))
            .collect();
        let mut rows = vec![header];
        for p in &policies {
            let mut row = vec![p.to_string()];
            for &l in &lengths {
                row.push(self.cell(*p, l).map_or("-".into(), |c| format!("{:.3} ± {:.3}", c.recall_mean, c.recall_sd)));
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, w))| {
                    let pad = w - c.chars().count();
                    if j == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Runs every policy on the same generated scenario for each (seed, length).
pub fn compare(base: &RunConfig, options: &CompareOptions) -> Result<Comparison> {
    let mut policies = options.policies.clone();
    policies.sort_unstable();
    policies.dedup();
    if policies.len() < 2 {
        return Err(Error::Config("need ≥2 policies to compare".into()));
    }
    if options.seeds.is_empty() {
        return Err(Error::Config("need at least one seed to compare".into()));
    }
    if options.lengths.is_empty() {
        return Err(Error::Config("need at least one length bucket to compare".into()));
    }

    let mut recalls: BTreeMap<(Policy, usize), Vec<f64>> = BTreeMap::new();
    let mut redundancies: BTreeMap<(Policy, usize), Vec<f64>> = BTreeMap::new();
    let mut scenario_checksums: BTreeMap<usize, BTreeMap<u64, String>> = BTreeMap::new();
    for &length in &options.lengths {
        for &seed in &options.seeds {
            let mut config = base.clone();
            config.seed = seed;
            config.scenario.length = length;
            config.validate()?;
            let scenario = gen_scenario(&config.scenario_params()?)?;
            let checksum = scenario.checksum()?;
            for &policy in &policies {
                let report = run_stream(&config, &scenario, policy)?;
                if report.scenario_checksum != checksum {
                    return Err(Error::Config(format!(
                        "policy {policy} saw a different scenario at seed {seed}, length {length}"
                    )));
                }
                recalls.entry((policy, length)).or_default().push(report.recall);
                redundancies.entry((policy, length)).or_default().push(report.redundancy);
            }
            scenario_checksums.entry(length).or_default().insert(seed, checksum);
        }
    }

    let cells = recalls
        .into_iter()
        .map(|((policy, length), r)| CellSummary {
            policy,
            length,
            recall_mean: mean(&r),
            recall_sd: sample_sd(&r),
            redundancy_mean: mean(&redundancies[&(policy, length)]),
            recalls: r,
        })
        .collect();
    Ok(Comparison {
        format_version: COMPARISON_FORMAT_VERSION,
        config: base.clone(),
        seeds: options.seeds.clone(),
        cells,
        scenario_checksums,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_sd_matches_hand_value() {
        assert_eq!(sample_sd(&[1.0]), 0.0);
        assert!((sample_sd(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_single_policy_and_no_seeds() {
        let base = RunConfig::default();
        let one = CompareOptions {
            seeds: vec![0],
            lengths: vec![8],
            policies: vec![Policy::Fifo, Policy::Fifo],
        };
        assert_eq!(compare(&base, &one).unwrap_err().to_string(), "invalid configuration: need ≥2 policies to compare");
        let none = CompareOptions {
            seeds: vec![],
            lengths: vec![8],
            policies: vec![Policy::Fifo, Policy::SgebFull],
        };
        assert!(compare(&base, &none).is_err());
    }
}
