//! Answer sources for the sampling controllers.
//!
//! Every backend implements [`Sampler`]: draw `count` final answers for a
//! problem, in a deterministic order, with token counts attached. Three
//! backends ship here: a seeded categorical simulator, replay from a
//! pre-generated [`SamplePool`](crate::store::SamplePool), and a live
//! OpenAI-compatible chat-completions client.

mod extract;
#[cfg(feature = "live")]
pub mod live;
pub mod replay;
pub mod sim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{extract_final_answer, AnswerPattern, NO_ANSWER};
pub use replay::ReplaySampler;
pub use sim::{load_sim_specs, save_sim_specs, SimProblemSpec, SimSampler};

/// One sampled response reduced to its final answer and token usage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerSample {
    pub answer: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl AnswerSample {
    /// An empty answer is replaced by the [`NO_ANSWER`] sentinel.
    pub fn new(answer: impl Into<String>, input_tokens: u64, output_tokens: u64) -> Self {
        let answer = answer.into();
        let answer = if answer.is_empty() { NO_ANSWER.to_string() } else { answer };
        Self {
            answer,
            input_tokens,
            output_tokens,
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("replay pool for `{problem_id}` exhausted: requested {requested}, {remaining} left")]
    PoolExhausted {
        problem_id: String,
        requested: usize,
        remaining: usize,
    },
    #[error("draw count must be at least 1")]
    ZeroCount,
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("transport failure for `{problem_id}` after {attempts} attempts: {message}")]
    Transport {
        problem_id: String,
        attempts: u32,
        message: String,
    },
}

/// A source of sampled answers.
///
/// Implementations keep per-problem state (RNG stream, replay cursor), so
/// a fresh instance per (policy, problem) yields paired answer streams.
pub trait Sampler {
    fn draw(&mut self, problem_id: &str, count: usize) -> Result<Vec<AnswerSample>, SamplerError>;

    /// Gold answer known to the backend, if any.
    fn gold_answer(&self, _problem_id: &str) -> Option<String> {
        None
    }

    /// Whether repeated runs see the same answer stream.
    fn is_paired(&self) -> bool {
        true
    }
}

impl<S: Sampler + ?Sized> Sampler for &mut S {
    fn draw(&mut self, problem_id: &str, count: usize) -> Result<Vec<AnswerSample>, SamplerError> {
        (**self).draw(problem_id, count)
    }

    fn gold_answer(&self, problem_id: &str) -> Option<String> {
        (**self).gold_answer(problem_id)
    }

    fn is_paired(&self) -> bool {
        (**self).is_paired()
    }
}

impl<S: Sampler + ?Sized> Sampler for Box<S> {
    fn draw(&mut self, problem_id: &str, count: usize) -> Result<Vec<AnswerSample>, SamplerError> {
        (**self).draw(problem_id, count)
    }

    fn gold_answer(&self, problem_id: &str) -> Option<String> {
        (**self).gold_answer(problem_id)
    }

    fn is_paired(&self) -> bool {
        (**self).is_paired()
    }
}

/// Sum of input and output tokens over a batch.
pub fn total_tokens(samples: &[AnswerSample]) -> u64 {
    samples.iter().map(AnswerSample::total_tokens).sum()
}
