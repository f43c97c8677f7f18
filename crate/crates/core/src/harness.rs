//! End-to-end runs over a dataset, metric aggregation, and report rendering.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{predict_all, CalibrationError};
use crate::controllers::{run_policy, ControllerError, Policy, PolicyConfig, Route, SamplingTrace, StopReason};
use crate::numeric::{pct_change, round_half_away, CompensatedSum};
use crate::par;
use crate::probe::{ProbeError, ProbeModel};
use crate::samplers::{ReplaySampler, Sampler, SimSampler};
use crate::store::{ActivationRecord, Dataset};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("problem `{0}` has no gold answer in the dataset or the sampler backend")]
    MissingGold(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// The answer backend for a run. Each (policy, problem) pair gets a fresh
/// instance, so simulated and replayed streams are identical across policies.
#[derive(Clone)]
pub enum SamplerSource {
    Sim(SimSampler),
    Replay(ReplaySampler),
    #[cfg(feature = "live")]
    Live(crate::samplers::live::LiveSampler),
}

impl SamplerSource {
    pub fn open(&self) -> Box<dyn Sampler + Send> {
        match self {
            SamplerSource::Sim(s) => Box::new(s.fresh()),
            SamplerSource::Replay(r) => Box::new(r.fresh()),
            #[cfg(feature = "live")]
            SamplerSource::Live(l) => Box::new(l.clone()),
        }
    }

    pub fn is_paired(&self) -> bool {
        self.open().is_paired()
    }

    pub fn gold_answer(&self, problem_id: &str) -> Option<String> {
        self.open().gold_answer(problem_id)
    }
}

/// Per-problem line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub problem_id: String,
    pub samples: usize,
    pub prepare_samples: usize,
    pub route: Route,
    pub stop_reason: StopReason,
    pub final_answer: String,
    pub correct: bool,
}

/// Aggregate metrics for one policy on one dataset.
///
/// Token figures are per-problem averages in thousands; the exact integer
/// totals are kept alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: Policy,
    pub dataset: String,
    pub n_problems: usize,
    pub avg_samples: f64,
    pub avg_prepare_samples: f64,
    pub prepare_tokens_k: f64,
    pub inference_tokens_k: f64,
    pub prepare_tokens_total: u64,
    pub inference_tokens_total: u64,
    pub accuracy_pct: f64,
    pub pct_reduction_vs_sc: Option<f64>,
    pub paired: bool,
    pub per_problem: Vec<TraceSummary>,
}

impl RunReport {
    pub fn has_prepare_phase(&self) -> bool {
        self.policy.has_prepare_phase()
    }

    /// Reduction vs. SC at display precision (one decimal).
    pub fn reduction_display(&self) -> Option<f64> {
        self.pct_reduction_vs_sc.map(|r| round_half_away(r, 1))
    }
}

/// `(avg − sc_avg) / sc_avg × 100`.
pub fn pct_reduction(avg_samples: f64, sc_avg_samples: f64) -> f64 {
    pct_change(avg_samples, sc_avg_samples)
}

/// Builds a report from finished traces. `golds` maps problem id to gold answer;
/// correctness is exact string match. `sc_avg` enables the reduction column.
pub fn aggregate_metrics(
    policy: Policy,
    dataset: &str,
    traces: &[SamplingTrace],
    golds: &BTreeMap<String, String>,
    sc_avg: Option<f64>,
) -> Result<RunReport, HarnessError> {
    if traces.is_empty() {
        return Err(HarnessError::Config("no traces to aggregate".into()));
    }
    let n = traces.len() as f64;
    let mut samples = CompensatedSum::new();
    let mut prep_samples = CompensatedSum::new();
    let mut prep_tokens = 0u64;
    let mut inf_tokens = 0u64;
    let mut correct = 0usize;
    let mut per_problem = Vec::with_capacity(traces.len());
    for t in traces {
        let gold = golds
            .get(&t.problem_id)
            .ok_or_else(|| HarnessError::MissingGold(t.problem_id.clone()))?;
        let ok = &t.final_answer == gold;
        correct += usize::from(ok);
        samples.add(t.samples.len() as f64);
        prep_samples.add(t.prepare_samples.len() as f64);
        prep_tokens += crate::samplers::total_tokens(&t.prepare_samples);
        inf_tokens += crate::samplers::total_tokens(&t.samples);
        per_problem.push(TraceSummary {
            problem_id: t.problem_id.clone(),
            samples: t.samples.len(),
            prepare_samples: t.prepare_samples.len(),
            route: t.route,
            stop_reason: t.stop_reason,
            final_answer: t.final_answer.clone(),
            correct: ok,
        });
    }
    let avg_samples = samples.total() / n;
    Ok(RunReport {
        policy,
        dataset: dataset.to_string(),
        n_problems: traces.len(),
        avg_samples,
        avg_prepare_samples: prep_samples.total() / n,
        prepare_tokens_k: prep_tokens as f64 / n / 1000.0,
        inference_tokens_k: inf_tokens as f64 / n / 1000.0,
        prepare_tokens_total: prep_tokens,
        inference_tokens_total: inf_tokens,
        accuracy_pct: correct as f64 / n * 100.0,
        pct_reduction_vs_sc: sc_avg.map(|sc| pct_reduction(avg_samples, sc)),
        paired: true,
        per_problem,
    })
}

/// Inputs to [`run_benchmark`].
pub struct BenchmarkSpec<'a> {
    pub dataset: &'a Dataset,
    pub probe: Option<&'a ProbeModel>,
    /// Routing threshold; overrides any `tau` inside the policy configs.
    pub tau: Option<f64>,
    pub policies: Vec<(Policy, PolicyConfig)>,
    pub sampler: &'a SamplerSource,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub reports: Vec<RunReport>,
    pub traces: BTreeMap<Policy, Vec<SamplingTrace>>,
}

fn gold_map(records: &[ActivationRecord], sampler: &SamplerSource) -> Result<BTreeMap<String, String>, HarnessError> {
    let probe = sampler.open();
    records
        .iter()
        .map(|r| {
            let g = r
                .gold_answer
                .clone()
                .or_else(|| probe.gold_answer(&r.problem_id))
                .ok_or_else(|| HarnessError::MissingGold(r.problem_id.clone()))?;
            Ok((r.problem_id.clone(), g))
        })
        .collect()
}

/// Runs every policy over every problem of the dataset.
///
/// Problems run concurrently; each policy sees the same per-problem answer
/// stream. Reports come back in the order policies were given; when SC is
/// among them, the others carry a reduction relative to its average.
pub fn run_benchmark(spec: &BenchmarkSpec<'_>) -> Result<BenchmarkOutput, HarnessError> {
    if spec.policies.is_empty() {
        return Err(HarnessError::Config("no policies requested".into()));
    }
    let records = &spec.dataset.records;
    if records.is_empty() {
        return Err(HarnessError::Config("dataset has no problems".into()));
    }
    let golds = gold_map(records, spec.sampler)?;

    let needs_probe = spec.policies.iter().any(|(p, _)| *p == Policy::Actsc);
    let p_hard: Option<Vec<f64>> = if needs_probe {
        let probe = spec
            .probe
            .ok_or_else(|| HarnessError::Config("actsc requires a trained probe".into()))?;
        Some(predict_all(probe, records)?)
    } else {
        None
    };

    let mut traces = BTreeMap::new();
    for (policy, cfg) in &spec.policies {
        let mut cfg = *cfg;
        if spec.tau.is_some() {
            cfg.tau = spec.tau;
        }
        if *policy == Policy::Actsc && cfg.tau.is_none() {
            return Err(HarnessError::Config("actsc requires tau (calibrate or override)".into()));
        }
        cfg.validate()?;
        let indices: Vec<usize> = (0..records.len()).collect();
        let run = par::try_map(&indices, |&i| {
            let mut sampler = spec.sampler.open();
            let p = p_hard.as_ref().map(|ps| ps[i]);
            run_policy(*policy, &mut sampler, &records[i].problem_id, p, &cfg)
        })?;
        if traces.insert(*policy, run).is_some() {
            return Err(HarnessError::Config(format!("policy {policy} requested twice")));
        }
    }

    let paired = spec.sampler.is_paired();
    let sc_avg = traces.get(&Policy::Sc).map(|t| {
        t.iter().map(|t| t.samples.len() as f64).collect::<CompensatedSum>().total() / t.len() as f64
    });
    let mut reports = Vec::with_capacity(spec.policies.len());
    for (policy, _) in &spec.policies {
        let reference = if *policy == Policy::Sc { None } else { sc_avg };
        let mut report = aggregate_metrics(*policy, &spec.dataset.manifest.name, &traces[policy], &golds, reference)?;
        report.paired = paired;
        reports.push(report);
    }
    Ok(BenchmarkOutput { reports, traces })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TextTable,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "table" | "text_table" => Ok(ReportFormat::TextTable),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format `{other}` (expected text|json|csv)")),
        }
    }
}

/// `"9.71 (-75.7%)"`, or just `"40.00"` without a reference.
pub fn format_samples(report: &RunReport) -> String {
    let avg = format!("{:.2}", round_half_away(report.avg_samples, 2));
    match report.reduction_display() {
        Some(r) => format!("{avg} ({r:.1}%)"),
        None => avg,
    }
}

/// `"-- / 22.3"` for single-phase policies, `"2.8 / 12.4"` otherwise.
pub fn format_tokens(report: &RunReport) -> String {
    let inf = format!("{:.1}", round_half_away(report.inference_tokens_k, 1));
    if report.has_prepare_phase() {
        format!("{:.1} / {inf}", round_half_away(report.prepare_tokens_k, 1))
    } else {
        format!("-- / {inf}")
    }
}

pub fn render_report(reports: &[RunReport], format: ReportFormat) -> Result<String, HarnessError> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(reports)? + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "policy",
                "dataset",
                "n_problems",
                "avg_samples",
                "pct_reduction_vs_sc",
                "prepare_tokens_k",
                "inference_tokens_k",
                "accuracy_pct",
            ])?;
            for r in reports {
                w.write_record([
                    r.policy.name().to_string(),
                    r.dataset.clone(),
                    r.n_problems.to_string(),
                    format!("{:.2}", round_half_away(r.avg_samples, 2)),
                    r.reduction_display().map(|v| format!("{v:.1}")).unwrap_or_default(),
                    if r.has_prepare_phase() {
                        format!("{:.1}", round_half_away(r.prepare_tokens_k, 1))
                    } else {
                        String::new()
                    },
                    format!("{:.1}", round_half_away(r.inference_tokens_k, 1)),
                    format!("{:.2}", round_half_away(r.accuracy_pct, 2)),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
        }
        ReportFormat::TextTable => {
            let header = ["Method", "Sample↓", "Prepare / Inference↓", "Acc↑"];
            let rows: Vec<[String; 4]> = reports
                .iter()
                .map(|r| {
                    [
                        r.policy.to_string(),
                        format_samples(r),
                        format_tokens(r),
                        format!("{:.2}", round_half_away(r.accuracy_pct, 2)),
                    ]
                })
                .collect();
            let mut widths = header.map(|h| h.chars().count());
            for row in &rows {
                for (w, cell) in widths.iter_mut().zip(row) {
                    *w = (*w).max(cell.chars().count());
                }
            }
            let line = |cells: [&str; 4]| {
                let padded: Vec<String> = cells
                    .iter()
                    .zip(widths)
                    .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                    .collect();
                format!("| {} |\n", padded.join(" | "))
            };
            let mut out = String::new();
            if let Some(first) = reports.first() {
                let paired = if first.paired { "paired" } else { "UNPAIRED" };
                out.push_str(&format!("dataset: {} ({} problems, {paired})\n", first.dataset, first.n_problems));
            }
            out.push_str(&line(header));
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
            for row in &rows {
                out.push_str(&line([&row[0], &row[1], &row[2], &row[3]]));
            }
            Ok(out)
        }
    }
}

/// Parses the JSON rendering back into reports.
pub fn load_reports(json: &str) -> Result<Vec<RunReport>, HarnessError> {
    Ok(serde_json::from_str(json)?)
}

/// Writes traces as JSONL, one per line, sorted by problem id.
pub fn write_traces(traces: &[SamplingTrace], path: &Path) -> Result<(), HarnessError> {
    let mut sorted: Vec<&SamplingTrace> = traces.iter().collect();
    sorted.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    let mut w = BufWriter::new(fs::File::create(path)?);
    for t in sorted {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<SamplingTrace>, HarnessError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(HarnessError::from))
        .collect()
}

/// One logit row per record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitRow {
    pub problem_id: String,
    pub difficulty: Option<u8>,
    pub logit: f64,
    pub p_hard: f64,
}

pub fn probe_logits(probe: &ProbeModel, dataset: &Dataset) -> Result<Vec<LogitRow>, HarnessError> {
    par::try_map(&dataset.records, |r| {
        let logit = probe.logit(&r.activations)?;
        Ok(LogitRow {
            problem_id: r.problem_id.clone(),
            difficulty: r.difficulty,
            logit,
            p_hard: crate::probe::clamp_probability(crate::numeric::sigmoid(logit)),
        })
    })
}

/// CSV `problem_id,difficulty,logit,p_hard`; difficulty is empty when unlabeled.
pub fn export_probe_logits(probe: &ProbeModel, dataset: &Dataset, out_path: &Path) -> Result<Vec<LogitRow>, HarnessError> {
    let rows = probe_logits(probe, dataset)?;
    let mut w = csv::Writer::from_path(out_path)?;
    w.write_record(["problem_id", "difficulty", "logit", "p_hard"])?;
    for r in &rows {
        w.write_record([
            r.problem_id.clone(),
            r.difficulty.map(|d| d.to_string()).unwrap_or_default(),
            r.logit.to_string(),
            r.p_hard.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}
