use serde::{Deserialize, Serialize};

use super::config::{hex_digest, PipelineConfig};
use super::pipeline::Method;
use super::stats::{mean_std, paired_compare, PairedTest};
use crate::error::Result;
use crate::ft_engine::InfluenceRecord;
use crate::ncfm::RoundStats;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    pub seed: u64,
    pub success_rate: f64,
    pub mean_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_success: f64,
    pub std_success: f64,
    pub mean_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub seed: u64,
    pub sum: f64,
    pub min: f64,
    pub max: f64,
    pub elites: usize,
    /// 1 / Σw², the number of equally weighted samples with the same spread.
    pub effective_size: f64,
}

impl WeightStats {
    pub fn from_records(seed: u64, records: &[InfluenceRecord]) -> Self {
        let w: Vec<f64> = records.iter().map(|r| r.weight).collect();
        Self {
            seed,
            sum: w.iter().sum(),
            min: w.iter().copied().fold(f64::INFINITY, f64::min),
            max: w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            elites: records.iter().filter(|r| r.is_elite).count(),
            effective_size: 1.0 / w.iter().map(|x| x * x).sum::<f64>(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyCurve {
    pub seed: u64,
    pub first: Option<f64>,
    pub last: Option<f64>,
    /// Discrepancy after the generator step of every round.
    pub after_generator: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTest {
    pub a: Method,
    pub b: Method,
    #[serde(flatten)]
    pub test: PairedTest,
}

/// Everything a run measured. Wall-clock times live in a separate file so
/// that the report itself is reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub coreset_size: usize,
    pub metrics: Vec<MethodMetrics>,
    pub summary: Vec<MethodSummary>,
    pub weights: Vec<WeightStats>,
    pub discrepancy: Vec<DiscrepancyCurve>,
    pub paired_tests: Vec<NamedTest>,
    /// SHA-256 of the report serialized with this field empty.
    pub content_hash: String,
}

const COMPARISONS: [(Method, Method); 4] = [
    (Method::FtNcfm, Method::RandomCoreset),
    (Method::FtNcfm, Method::InfluenceCoreset),
    (Method::InfluenceCoreset, Method::RandomCoreset),
    (Method::FullData, Method::FtNcfm),
];

impl RunReport {
    pub fn assemble(
        cfg: &PipelineConfig,
        coreset_size: usize,
        metrics: Vec<MethodMetrics>,
        weights: Vec<WeightStats>,
        curves: Vec<(u64, Vec<RoundStats>)>,
    ) -> Result<Self> {
        let success = |m: Method| -> Vec<f64> {
            cfg.seeds
                .iter()
                .filter_map(|&s| metrics.iter().find(|x| x.method == m && x.seed == s).map(|x| x.success_rate))
                .collect()
        };
        let summary = Method::ALL
            .iter()
            .map(|&method| {
                let (mean_success, std_success) = mean_std(&success(method));
                let errors: Vec<f64> = metrics.iter().filter(|x| x.method == method).map(|x| x.mean_error).collect();
                MethodSummary {
                    method,
                    mean_success,
                    std_success,
                    mean_error: mean_std(&errors).0,
                }
            })
            .collect();
        let paired_tests = if cfg.seeds.len() >= 2 {
            COMPARISONS
                .iter()
                .map(|&(a, b)| {
                    Ok(NamedTest {
                        a,
                        b,
                        test: paired_compare(&success(a), &success(b))?,
                    })
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let discrepancy = curves
            .into_iter()
            .map(|(seed, rounds)| DiscrepancyCurve {
                seed,
                first: rounds.first().map(|r| r.start),
                last: rounds.last().map(|r| r.after_generator),
                after_generator: rounds.iter().map(|r| r.after_generator).collect(),
            })
            .collect();
        let mut report = Self {
            config_hash: cfg.hash(),
            seeds: cfg.seeds.clone(),
            coreset_size,
            metrics,
            summary,
            weights,
            discrepancy,
            paired_tests,
            content_hash: String::new(),
        };
        report.content_hash = report.compute_hash()?;
        Ok(report)
    }

    pub fn compute_hash(&self) -> Result<String> {
        let blank = Self {
            content_hash: String::new(),
            ..self.clone()
        };
        Ok(hex_digest(serde_json::to_string(&blank)?.as_bytes()))
    }

    pub fn summary_of(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn success_of(&self, method: Method) -> Vec<f64> {
        self.seeds
            .iter()
            .filter_map(|&s| {
                self.metrics
                    .iter()
                    .find(|x| x.method == method && x.seed == s)
                    .map(|x| x.success_rate)
            })
            .collect()
    }

    pub fn test_between(&self, a: Method, b: Method) -> Option<&PairedTest> {
        self.paired_tests.iter().find(|t| t.a == a && t.b == b).map(|t| &t.test)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedTimings {
    pub seed: u64,
    pub guide_secs: f64,
    pub assess_secs: f64,
    pub distill_secs: f64,
    pub downstream_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub seeds: Vec<SeedTimings>,
}
