//! Seeded categorical answer simulator.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AnswerSample, Sampler, SamplerError};
use crate::store::StoreError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerProbability {
    pub answer: String,
    pub probability: f64,
}

/// Generative description of one simulated problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimProblemSpec {
    pub problem_id: String,
    pub gold_answer: String,
    pub answer_distribution: Vec<AnswerProbability>,
    pub mean_input_tokens: u64,
    pub mean_output_tokens: u64,
}

impl SimProblemSpec {
    pub fn new(
        problem_id: impl Into<String>,
        gold_answer: impl Into<String>,
        distribution: &[(&str, f64)],
        mean_input_tokens: u64,
        mean_output_tokens: u64,
    ) -> Self {
        Self {
            problem_id: problem_id.into(),
            gold_answer: gold_answer.into(),
            answer_distribution: distribution
                .iter()
                .map(|&(a, p)| AnswerProbability {
                    answer: a.to_string(),
                    probability: p,
                })
                .collect(),
            mean_input_tokens,
            mean_output_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |msg: String| SamplerError::Config(format!("sim problem `{}`: {msg}", self.problem_id));
        if self.answer_distribution.is_empty() {
            return Err(bad("empty answer distribution".into()));
        }
        let mut total = 0.0;
        for ap in &self.answer_distribution {
            if !(0.0..=1.0).contains(&ap.probability) {
                return Err(bad(format!("probability {} for `{}` outside [0,1]", ap.probability, ap.answer)));
            }
            if ap.answer.is_empty() {
                return Err(bad("empty answer string".into()));
            }
            total += ap.probability;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(bad(format!("probabilities sum to {total}, not 1")));
        }
        if self.mean_input_tokens == 0 || self.mean_output_tokens == 0 {
            return Err(bad("token means must be positive".into()));
        }
        Ok(())
    }

    fn pick(&self, u: f64) -> &str {
        let mut acc = 0.0;
        for ap in &self.answer_distribution {
            acc += ap.probability;
            if u < acc {
                return &ap.answer;
            }
        }
        // u landed in the rounding slack above the cumulative sum.
        self.answer_distribution
            .iter()
            .rev()
            .find(|ap| ap.probability > 0.0)
            .map(|ap| ap.answer.as_str())
            .unwrap_or(&self.answer_distribution[0].answer)
    }
}

/// Derives the per-problem stream seed from `(global_seed, problem_id)` only.
pub fn stream_seed(global_seed: u64, problem_id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"actsc-sim-stream\0");
    h.update(global_seed.to_le_bytes());
    h.update(problem_id.as_bytes());
    h.finalize().into()
}

#[derive(Clone)]
struct Stream {
    rng: ChaCha8Rng,
    input: Poisson<f64>,
    output: Poisson<f64>,
}

/// Categorical simulator with one independent RNG stream per problem.
#[derive(Clone)]
pub struct SimSampler {
    specs: Arc<HashMap<String, SimProblemSpec>>,
    seed: u64,
    streams: HashMap<String, Stream>,
}

impl std::fmt::Debug for SimSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimSampler")
            .field("problems", &self.specs.len())
            .field("seed", &self.seed)
            .finish()
    }
}

impl SimSampler {
    pub fn new(specs: Vec<SimProblemSpec>, seed: u64) -> Result<Self, SamplerError> {
        let mut map = HashMap::with_capacity(specs.len());
        for spec in specs {
            spec.validate()?;
            if map.contains_key(&spec.problem_id) {
                return Err(SamplerError::Config(format!("duplicate sim problem `{}`", spec.problem_id)));
            }
            map.insert(spec.problem_id.clone(), spec);
        }
        Ok(Self {
            specs: Arc::new(map),
            seed,
            streams: HashMap::new(),
        })
    }

    /// A sampler over the same specs and seed with every stream rewound.
    pub fn fresh(&self) -> Self {
        Self {
            specs: Arc::clone(&self.specs),
            seed: self.seed,
            streams: HashMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec(&self, problem_id: &str) -> Option<&SimProblemSpec> {
        self.specs.get(problem_id)
    }
}

impl Sampler for SimSampler {
    fn draw(&mut self, problem_id: &str, count: usize) -> Result<Vec<AnswerSample>, SamplerError> {
        if count == 0 {
            return Err(SamplerError::ZeroCount);
        }
        let spec = self
            .specs
            .get(problem_id)
            .ok_or_else(|| SamplerError::UnknownProblem(problem_id.to_string()))?;
        let seed = self.seed;
        let Stream { rng, input, output } = self.streams.entry(problem_id.to_string()).or_insert_with(|| Stream {
            rng: ChaCha8Rng::from_seed(stream_seed(seed, problem_id)),
            input: Poisson::new(spec.mean_input_tokens as f64).expect("validated positive mean"),
            output: Poisson::new(spec.mean_output_tokens as f64).expect("validated positive mean"),
        });
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let u: f64 = rng.random();
            let answer = spec.pick(u).to_string();
            let inp = input.sample(rng) as u64;
            let outp = output.sample(rng) as u64;
            out.push(AnswerSample::new(answer, inp, outp));
        }
        Ok(out)
    }

    fn gold_answer(&self, problem_id: &str) -> Option<String> {
        self.specs.get(problem_id).map(|s| s.gold_answer.clone())
    }
}

/// Reads a JSONL file of [`SimProblemSpec`]s.
pub fn load_sim_specs(path: &Path) -> Result<Vec<SimProblemSpec>, StoreError> {
    let io = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io)?;
    let mut specs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let spec: SimProblemSpec = serde_json::from_str(&line).map_err(|e| StoreError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        spec.validate().map_err(|e| StoreError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        specs.push(spec);
    }
    Ok(specs)
}

pub fn save_sim_specs(specs: &[SimProblemSpec], path: &Path) -> Result<(), StoreError> {
    let io = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for spec in specs {
        serde_json::to_writer(&mut w, spec).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}
