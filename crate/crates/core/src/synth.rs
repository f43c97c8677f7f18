//! Synthetic activation dumps with planted difficulty-sensitive neurons,
//! and matching simulated answer distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::samplers::sim::AnswerProbability;
use crate::samplers::SimProblemSpec;
use crate::store::{ActivationRecord, Dataset, DatasetManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlantDirection {
    /// Planted neurons fire more on easy problems.
    #[default]
    EasyActive,
    /// Planted neurons fire more on hard problems.
    HardActive,
    /// Even-numbered planted neurons are easy-active, odd ones hard-active.
    Alternating,
}

/// How difficulty labels are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LevelMix {
    /// Uniform over 1..=5.
    Uniform,
    /// Level 1 with probability `1 - hard_fraction`, else level 5.
    EasyHard { hard_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSignal {
    pub problems: usize,
    pub neurons: usize,
    /// Indices carrying the difficulty signal.
    pub planted: Vec<usize>,
    /// Mean activation difference between level 1 and level 5 on planted neurons.
    pub shift: f64,
    pub noise_sd: f64,
    pub direction: PlantDirection,
    pub levels: LevelMix,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for PlantedSignal {
    fn default() -> Self {
        Self {
            problems: 500,
            neurons: 64,
            planted: vec![3, 11, 17, 24, 30, 41, 52, 60],
            shift: 1.0,
            noise_sd: 0.25,
            direction: PlantDirection::EasyActive,
            levels: LevelMix::Uniform,
            seed: 0,
            id_prefix: "q".into(),
        }
    }
}

impl PlantedSignal {
    /// Mean of a planted neuron at difficulty `d`; interpolates linearly
    /// between the level-1 and level-5 means.
    pub fn planted_mean(&self, slot: usize, d: u8) -> f64 {
        let t = (d as f64 - 1.0) / 4.0;
        let easy_active = match self.direction {
            PlantDirection::EasyActive => true,
            PlantDirection::HardActive => false,
            PlantDirection::Alternating => slot.is_multiple_of(2),
        };
        if easy_active {
            self.shift * (1.0 - t)
        } else {
            self.shift * t
        }
    }

    pub fn generate(&self) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise_sd).expect("noise sd must be finite and >= 0");
        let width = self.problems.max(1).to_string().len();
        let mut slot_of = vec![None; self.neurons];
        for (slot, &n) in self.planted.iter().enumerate() {
            slot_of[n] = Some(slot);
        }
        let records = (0..self.problems)
            .map(|i| {
                let d = match self.levels {
                    LevelMix::Uniform => rng.random_range(1..=5u8),
                    LevelMix::EasyHard { hard_fraction } => {
                        if rng.random::<f64>() < hard_fraction {
                            5
                        } else {
                            1
                        }
                    }
                };
                let activations = (0..self.neurons)
                    .map(|n| {
                        let mean = slot_of[n].map(|s| self.planted_mean(s, d)).unwrap_or(0.0);
                        (mean + noise.sample(&mut rng)) as f32
                    })
                    .collect();
                ActivationRecord::new(format!("{}{:0width$}", self.id_prefix, i), Some(d), activations)
                    .with_gold(gold_for(i))
            })
            .collect();
        let mut manifest = DatasetManifest::new(format!("synthetic-{}", self.seed), self.neurons, 0);
        manifest.source_model = "synthetic".into();
        manifest.layer_spec = format!("planted {:?}", self.planted);
        Dataset::new(manifest, records).expect("generated records are valid")
    }
}

fn gold_for(i: usize) -> String {
    format!("{}", 1000 + i)
}

/// A categorical answer distribution with `correct_mass` on `gold` and the
/// rest split over `wrong` distractors with weights halving each step.
pub fn answer_spec(problem_id: &str, gold: &str, correct_mass: f64, wrong: &[f64], tokens: (u64, u64)) -> SimProblemSpec {
    let mut dist = vec![AnswerProbability {
        answer: gold.to_string(),
        probability: correct_mass,
    }];
    let rest = 1.0 - correct_mass;
    let total: f64 = wrong.iter().sum();
    for (k, w) in wrong.iter().enumerate() {
        dist.push(AnswerProbability {
            answer: format!("{gold}-wrong{k}"),
            probability: rest * w / total,
        });
    }
    // Absorb rounding so the masses sum to one.
    let sum: f64 = dist.iter().map(|a| a.probability).sum();
    dist[0].probability += 1.0 - sum;
    SimProblemSpec {
        problem_id: problem_id.to_string(),
        gold_answer: gold.to_string(),
        answer_distribution: dist,
        mean_input_tokens: tokens.0,
        mean_output_tokens: tokens.1,
    }
}

/// Correct-answer mass per difficulty level used by [`default_sim_specs`].
pub const DEFAULT_CORRECT_MASS: [f64; 5] = [0.90, 0.80, 0.70, 0.55, 0.45];

/// Sim specs for every labeled record: correct mass by level, four
/// distractors, output length growing with difficulty.
pub fn default_sim_specs(dataset: &Dataset) -> Vec<SimProblemSpec> {
    dataset
        .records
        .iter()
        .map(|r| {
            let d = r.difficulty.unwrap_or(3);
            let gold = r.gold_answer.clone().unwrap_or_else(|| format!("{}-gold", r.problem_id));
            answer_spec(
                &r.problem_id,
                &gold,
                DEFAULT_CORRECT_MASS[(d - 1) as usize],
                &[0.5, 0.25, 0.15, 0.10],
                (150, 300 + 100 * d as u64),
            )
        })
        .collect()
}
