use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use actsc::calibration::{calibrate_tau, TauCalibration};
use actsc::controllers::{ConfScope, Policy, PolicyConfig};
use actsc::dsn::{identify_dsn, DsnSelection, GapConfig, SelectionMode};
use actsc::harness::{
    export_probe_logits, render_report, run_benchmark, write_traces, BenchmarkSpec, ReportFormat, SamplerSource,
};
use actsc::probe::{evaluate_labeled, train_probe, ProbeModel, ProbeTrainingSet, TrainConfig};
use actsc::samplers::{load_sim_specs, save_sim_specs, AnswerPattern, ReplaySampler, SimSampler};
use actsc::store::{load_dataset, load_sample_pool, save_dataset, Dataset, DumpFormat};
use actsc::synth::{default_sim_specs, LevelMix, PlantDirection, PlantedSignal};

#[derive(Parser)]
#[command(name = "actsc", version, about = "Difficulty-aware self-consistency from FFN activations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check an activation dump against its format and invariants.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        format: Option<DumpFormat>,
    },
    /// Write a synthetic dump with planted neurons plus matching sim specs.
    Synth(SynthArgs),
    /// Select difficulty-sensitive neurons.
    DsnIdentify {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        format: Option<DumpFormat>,
        #[arg(long, default_value_t = 1)]
        theta_easy: u8,
        #[arg(long, default_value_t = 5)]
        theta_hard: u8,
        #[arg(long, default_value_t = 0.0)]
        margin: f64,
        #[arg(long, default_value = "sign")]
        mode: SelectionMode,
        #[arg(long, default_value_t = 32)]
        top_k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the linear difficulty probe.
    ProbeTrain {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        format: Option<DumpFormat>,
        #[arg(long)]
        dsn: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 0.0)]
        l2: f64,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a probe on labeled data and export per-problem logits.
    ProbeEval {
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        format: Option<DumpFormat>,
        #[arg(long)]
        logits_out: Option<PathBuf>,
    },
    /// Compute the routing threshold as the mean P(Hard) of a dataset.
    CalibrateTau {
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        format: Option<DumpFormat>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one policy over a dataset.
    Run {
        #[arg(long)]
        policy: Policy,
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[command(flatten)]
        common: RunArgs,
    },
    /// Run several policies on paired answer streams and print the comparison table.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "sc,ac,esc,dsc,actsc")]
        policies: Vec<Policy>,
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        #[command(flatten)]
        common: RunArgs,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    problems: usize,
    #[arg(long, default_value_t = 64)]
    neurons: usize,
    #[arg(long, default_value_t = 8)]
    planted: usize,
    #[arg(long, default_value_t = 1.0)]
    shift: f64,
    #[arg(long, default_value_t = 0.25)]
    noise: f64,
    #[arg(long, value_enum, default_value_t = DirectionArg::EasyActive)]
    direction: DirectionArg,
    /// Draw only levels 1 and 5, with this share of level 5.
    #[arg(long)]
    hard_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "q")]
    id_prefix: String,
    #[arg(long)]
    out_dataset: PathBuf,
    #[arg(long)]
    format: Option<DumpFormat>,
    #[arg(long)]
    out_sim: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    EasyActive,
    HardActive,
    Alternating,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerKind {
    Sim,
    Replay,
    Live,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => ReportFormat::TextTable,
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = SamplerKind::Sim)]
    sampler: SamplerKind,
    /// Activation dump listing the problems to run.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    format: Option<DumpFormat>,
    #[arg(long)]
    probe: Option<PathBuf>,
    #[arg(long)]
    tau_file: Option<PathBuf>,
    /// Fixed routing threshold; takes precedence over --tau-file.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    k_max: usize,
    /// ACTSC window size.
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value = "global")]
    conf_scope: ConfScope,
    #[arg(long, default_value_t = 5)]
    esc_window: usize,
    #[arg(long, default_value_t = 0.95)]
    ac_threshold: f64,
    #[arg(long, default_value_t = 2)]
    ac_min_samples: usize,
    #[arg(long, default_value_t = 3)]
    dsc_presamples: usize,
    #[arg(long, default_value_t = 0.95)]
    dsc_threshold: f64,
    /// JSONL of simulated answer distributions (sim sampler).
    #[arg(long)]
    sim_spec: Option<PathBuf>,
    /// JSONL sample pool (replay sampler).
    #[arg(long)]
    pool: Option<PathBuf>,
    /// JSONL of `{"problem_id","question"}` (live sampler).
    #[arg(long)]
    questions: Option<PathBuf>,
    /// TOML file with live sampler settings; flags override it.
    #[arg(long)]
    live_config: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    answer_pattern: Option<AnswerPattern>,
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    report_format: FormatArg,
}

impl RunArgs {
    fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            k_max: self.k_max,
            ac_threshold: self.ac_threshold,
            ac_min_samples: self.ac_min_samples,
            esc_window: self.esc_window,
            dsc_presamples: self.dsc_presamples,
            dsc_threshold: self.dsc_threshold,
            actsc_window: self.window,
            actsc_gamma: self.gamma,
            conf_scope: self.conf_scope,
            tau: None,
        }
    }

    fn tau(&self) -> Result<Option<f64>> {
        if let Some(t) = self.tau {
            return Ok(Some(TauCalibration::fixed(t)?.tau));
        }
        match &self.tau_file {
            Some(p) => Ok(Some(
                TauCalibration::load(p)
                    .with_context(|| format!("reading {}", p.display()))?
                    .tau,
            )),
            None => Ok(None),
        }
    }

    fn sampler(&self, dataset: &Dataset) -> Result<SamplerSource> {
        match self.sampler {
            SamplerKind::Sim => {
                let path = self.sim_spec.as_ref().context("--sampler sim needs --sim-spec")?;
                let specs = load_sim_specs(path)?;
                Ok(SamplerSource::Sim(SimSampler::new(specs, self.seed)?))
            }
            SamplerKind::Replay => {
                let path = self.pool.as_ref().context("--sampler replay needs --pool")?;
                Ok(SamplerSource::Replay(ReplaySampler::new(load_sample_pool(path)?)))
            }
            SamplerKind::Live => self.live_sampler(dataset),
        }
    }

    #[cfg(feature = "live")]
    fn live_sampler(&self, dataset: &Dataset) -> Result<SamplerSource> {
        use actsc::samplers::live::{LiveSampler, LiveSamplerConfig};

        let mut cfg: LiveSamplerConfig = match &self.live_config {
            Some(p) => toml::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
            None => LiveSamplerConfig::default(),
        };
        if let Some(e) = &self.endpoint {
            cfg.endpoint_url = e.clone();
        }
        if let Some(m) = &self.model {
            cfg.model_name = m.clone();
        }
        if let Some(t) = self.temperature {
            cfg.temperature = t;
        }
        if let Some(t) = self.top_p {
            cfg.top_p = t;
        }
        if let Some(p) = self.answer_pattern {
            cfg.answer_pattern = p;
        }
        let path = self.questions.as_ref().context("--sampler live needs --questions")?;
        let questions = load_questions(path)?;
        let golds = dataset
            .records
            .iter()
            .filter_map(|r| r.gold_answer.clone().map(|g| (r.problem_id.clone(), g)))
            .collect();
        Ok(SamplerSource::Live(LiveSampler::new(cfg.with_env_key(), questions, golds)?))
    }

    #[cfg(not(feature = "live"))]
    fn live_sampler(&self, _dataset: &Dataset) -> Result<SamplerSource> {
        bail!("this build was compiled without the `live` feature")
    }
}

#[derive(Deserialize)]
struct QuestionLine {
    problem_id: String,
    question: String,
}

#[cfg_attr(not(feature = "live"), allow(dead_code))]
fn load_questions(path: &Path) -> Result<HashMap<String, String>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionLine =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.insert(q.problem_id, q.question);
    }
    Ok(out)
}

fn load(path: &Path, format: Option<DumpFormat>) -> Result<Dataset> {
    let format = format.unwrap_or_else(|| DumpFormat::from_path(path));
    load_dataset(path, format).with_context(|| format!("loading {}", path.display()))
}

fn emit_report(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn benchmark(policies: Vec<Policy>, common: &RunArgs) -> Result<actsc::harness::BenchmarkOutput> {
    let dataset = load(&common.dataset, common.format)?;
    let probe = common
        .probe
        .as_ref()
        .map(|p| ProbeModel::load(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let sampler = common.sampler(&dataset)?;
    let cfg = common.policy_config();
    let spec = BenchmarkSpec {
        dataset: &dataset,
        probe: probe.as_ref(),
        tau: common.tau()?,
        policies: policies.into_iter().map(|p| (p, cfg)).collect(),
        sampler: &sampler,
    };
    Ok(run_benchmark(&spec)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { dataset, format } => {
            let ds = load(&dataset, format)?;
            let labeled = ds.records.iter().filter(|r| r.difficulty.is_some()).count();
            println!(
                "ok: {} records, {} neurons, {} labeled ({})",
                ds.manifest.record_count, ds.manifest.neuron_count, labeled, ds.manifest.name
            );
        }
        Command::Synth(a) => {
            if a.planted > a.neurons {
                bail!("cannot plant {} neurons in {}", a.planted, a.neurons);
            }
            // Spread planted neurons evenly across the index range.
            let planted = (0..a.planted).map(|i| i * a.neurons / a.planted.max(1)).collect();
            let cfg = PlantedSignal {
                problems: a.problems,
                neurons: a.neurons,
                planted,
                shift: a.shift,
                noise_sd: a.noise,
                direction: match a.direction {
                    DirectionArg::EasyActive => PlantDirection::EasyActive,
                    DirectionArg::HardActive => PlantDirection::HardActive,
                    DirectionArg::Alternating => PlantDirection::Alternating,
                },
                levels: match a.hard_fraction {
                    Some(f) => LevelMix::EasyHard { hard_fraction: f },
                    None => LevelMix::Uniform,
                },
                seed: a.seed,
                id_prefix: a.id_prefix,
            };
            let ds = cfg.generate();
            let format = a.format.unwrap_or_else(|| DumpFormat::from_path(&a.out_dataset));
            save_dataset(&ds, &a.out_dataset, format)?;
            if let Some(p) = &a.out_sim {
                save_sim_specs(&default_sim_specs(&ds), p)?;
            }
            println!("wrote {} problems ({} neurons, planted {:?})", ds.records.len(), ds.neuron_count(), cfg.planted);
        }
        Command::DsnIdentify {
            dataset,
            format,
            theta_easy,
            theta_hard,
            margin,
            mode,
            top_k,
            out,
        } => {
            let ds = load(&dataset, format)?;
            let cfg = GapConfig {
                theta_easy,
                theta_hard,
                margin,
                selection_mode: mode,
                top_k,
            };
            let sel = identify_dsn(&ds.records, &cfg)?;
            sel.save(&out)?;
            println!("{sel}");
        }
        Command::ProbeTrain {
            dataset,
            format,
            dsn,
            lr,
            epochs,
            l2,
            tol,
            out,
        } => {
            let ds = load(&dataset, format)?;
            let sel = DsnSelection::load(&dsn).with_context(|| format!("reading {}", dsn.display()))?;
            let set = ProbeTrainingSet::from_records(&ds.records, &sel)?;
            let cfg = TrainConfig {
                learning_rate: lr,
                epochs,
                l2,
                convergence_tol: tol,
            };
            let model = train_probe(&set, &cfg)?;
            model.save(&out)?;
            println!(
                "trained on {} problems, {} features: loss {:.6} after {} epochs",
                set.labels.len(),
                model.weights.len(),
                model.train_meta.final_loss,
                model.train_meta.epochs_run
            );
        }
        Command::ProbeEval {
            probe,
            dataset,
            format,
            logits_out,
        } => {
            let model = ProbeModel::load(&probe)?;
            let ds = load(&dataset, format)?;
            if let Some(p) = &logits_out {
                export_probe_logits(&model, &ds, p)?;
            }
            match evaluate_labeled(&model, &ds.records) {
                Ok(ev) => println!(
                    "accuracy {:.4}, mean BCE {:.6} on {} easy/hard problems",
                    ev.accuracy,
                    ev.mean_bce,
                    ev.logits.len()
                ),
                Err(e) => println!("no labeled easy/hard subset to score ({e}); logits exported only"),
            }
        }
        Command::CalibrateTau {
            probe,
            dataset,
            format,
            out,
        } => {
            let model = ProbeModel::load(&probe)?;
            let ds = load(&dataset, format)?;
            let t = calibrate_tau(&model, &ds.records, &ds.manifest.name)?;
            t.save(&out)?;
            println!("tau = {} over {} problems", t.tau, t.n);
        }
        Command::Run {
            policy,
            trace_out,
            common,
        } => {
            let out = benchmark(vec![policy], &common)?;
            if let Some(p) = &trace_out {
                write_traces(&out.traces[&policy], p)?;
            }
            let text = render_report(&out.reports, common.report_format.into())?;
            emit_report(&text, common.report_out.as_deref())?;
        }
        Command::Compare {
            policies,
            trace_dir,
            common,
        } => {
            let out = benchmark(policies, &common)?;
            if let Some(dir) = &trace_dir {
                fs::create_dir_all(dir)?;
                for (policy, traces) in &out.traces {
                    write_traces(traces, &dir.join(format!("{}.traces.jsonl", policy.name())))?;
                }
            }
            let text = render_report(&out.reports, common.report_format.into())?;
            emit_report(&text, common.report_out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
