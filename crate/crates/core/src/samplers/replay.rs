//! Replay of pre-generated samples in pool order.

use std::collections::HashMap;
use std::sync::Arc;

use super::{AnswerSample, Sampler, SamplerError};
use crate::store::{PoolEntry, SamplePool};

/// Serves each problem's pooled samples sequentially.
///
/// A draw that would run past the end of the pool fails without consuming
/// anything.
#[derive(Debug, Clone)]
pub struct ReplaySampler {
    pool: Arc<SamplePool>,
    cursors: HashMap<String, usize>,
}

impl ReplaySampler {
    pub fn new(pool: SamplePool) -> Self {
        Self::shared(Arc::new(pool))
    }

    pub fn shared(pool: Arc<SamplePool>) -> Self {
        Self {
            pool,
            cursors: HashMap::new(),
        }
    }

    /// Single-problem pool over literal answers, one token in and out each.
    pub fn scripted<S: AsRef<str>>(problem_id: &str, gold: &str, answers: &[S]) -> Self {
        let entry = PoolEntry {
            problem_id: problem_id.to_string(),
            gold_answer: gold.to_string(),
            samples: answers.iter().map(|a| AnswerSample::new(a.as_ref(), 1, 1)).collect(),
        };
        Self::new(SamplePool::from_entries([entry]).expect("scripted pool needs at least one answer"))
    }

    /// Same pool, all cursors rewound.
    pub fn fresh(&self) -> Self {
        Self::shared(Arc::clone(&self.pool))
    }

    pub fn pool(&self) -> &SamplePool {
        &self.pool
    }

    pub fn consumed(&self, problem_id: &str) -> usize {
        self.cursors.get(problem_id).copied().unwrap_or(0)
    }
}

impl Sampler for ReplaySampler {
    fn draw(&mut self, problem_id: &str, count: usize) -> Result<Vec<AnswerSample>, SamplerError> {
        if count == 0 {
            return Err(SamplerError::ZeroCount);
        }
        let entry = self
            .pool
            .get(problem_id)
            .ok_or_else(|| SamplerError::UnknownProblem(problem_id.to_string()))?;
        let cursor = self.cursors.entry(problem_id.to_string()).or_insert(0);
        let remaining = entry.samples.len() - *cursor;
        if count > remaining {
            return Err(SamplerError::PoolExhausted {
                problem_id: problem_id.to_string(),
                requested: count,
                remaining,
            });
        }
        let out = entry.samples[*cursor..*cursor + count].to_vec();
        *cursor += count;
        Ok(out)
    }

    fn gold_answer(&self, problem_id: &str) -> Option<String> {
        self.pool.get(problem_id).map(|e| e.gold_answer.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_replay_then_exhaustion() {
        let mut r = ReplaySampler::scripted("p", "A", &["A", "B"]);
        let first: Vec<String> = r.draw("p", 2).unwrap().into_iter().map(|s| s.answer).collect();
        assert_eq!(first, ["A", "B"]);
        assert!(matches!(
            r.draw("p", 1),
            Err(SamplerError::PoolExhausted { requested: 1, remaining: 0, .. })
        ));
    }

    #[test]
    fn failed_draw_consumes_nothing() {
        let mut r = ReplaySampler::scripted("p", "A", &["A", "B", "C"]);
        r.draw("p", 1).unwrap();
        assert!(r.draw("p", 5).is_err());
        assert_eq!(r.consumed("p"), 1);
        assert_eq!(r.draw("p", 2).unwrap()[1].answer, "C");
    }

    #[test]
    fn unknown_problem() {
        let mut r = ReplaySampler::scripted("p", "A", &["A"]);
        assert!(matches!(r.draw("zz", 1), Err(SamplerError::UnknownProblem(_))));
        assert_eq!(r.gold_answer("p").as_deref(), Some("A"));
    }
}
