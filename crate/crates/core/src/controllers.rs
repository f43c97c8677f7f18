//! Sampling-budget controllers.
//!
//! Each controller pulls answers for one problem from a [`Sampler`] until
//! its stopping rule fires or `k_max` samples have been drawn, then
//! returns a [`SamplingTrace`] recording every sample, the draw sizes, and
//! why it stopped.
//!
//! | policy  | rule |
//! |---------|------|
//! | `sc`    | exactly `k` samples |
//! | `ac`    | one at a time, stop once top-answer share `> ac_threshold` |
//! | `esc`   | windows of `esc_window`, stop when the latest window is unanimous |
//! | `dsc`   | `dsc_presamples` prepare draws; unanimous → 1 sample, else adaptive until share `≥ dsc_threshold` |
//! | `actsc` | probe routing: `P(Hard) < tau` → 1 sample, else dynamic window top-ups until confidence `≥ gamma` |

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::samplers::{AnswerSample, Sampler, SamplerError};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("problem `{problem_id}`: {source}")]
    Sampler {
        problem_id: String,
        #[source]
        source: SamplerError,
    },
    #[error("invalid policy config: {0}")]
    Config(String),
    #[error("majority vote over an empty answer list")]
    EmptyVote,
    #[error("problem `{0}`: actsc needs a P(Hard) in (0, 1)")]
    MissingProbability(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Sc,
    Ac,
    Esc,
    Dsc,
    Actsc,
}

impl Policy {
    pub const ALL: [Policy; 5] = [Policy::Sc, Policy::Ac, Policy::Esc, Policy::Dsc, Policy::Actsc];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Sc => "sc",
            Policy::Ac => "ac",
            Policy::Esc => "esc",
            Policy::Dsc => "dsc",
            Policy::Actsc => "actsc",
        }
    }

    /// Whether the policy spends tokens before answering.
    pub fn has_prepare_phase(self) -> bool {
        self == Policy::Dsc
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Sc => "SC",
            Policy::Ac => "AC",
            Policy::Esc => "ESC",
            Policy::Dsc => "DSC",
            Policy::Actsc => "ACTSC",
        })
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sc" => Ok(Policy::Sc),
            "ac" => Ok(Policy::Ac),
            "esc" => Ok(Policy::Esc),
            "dsc" => Ok(Policy::Dsc),
            "actsc" => Ok(Policy::Actsc),
            other => Err(format!("unknown policy `{other}` (expected sc|ac|esc|dsc|actsc)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    #[serde(rename = "easy")]
    Easy,
    #[serde(rename = "hard")]
    Hard,
    #[serde(rename = "n/a")]
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    FixedBudget,
    Agreement,
    WindowUnanimous,
    Confidence,
    BudgetExhausted,
    SingleSample,
}

/// Which answers the ACTSC confidence is measured over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfScope {
    /// Share of the leading answer among all samples so far.
    #[default]
    Global,
    /// Share of the leading answer among the most recent `window` samples.
    Window,
}

impl FromStr for ConfScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(ConfScope::Global),
            "window" => Ok(ConfScope::Window),
            other => Err(format!("unknown confidence scope `{other}` (expected window|global)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub k_max: usize,
    pub ac_threshold: f64,
    pub ac_min_samples: usize,
    pub esc_window: usize,
    pub dsc_presamples: usize,
    pub dsc_threshold: f64,
    pub actsc_window: usize,
    pub actsc_gamma: f64,
    pub conf_scope: ConfScope,
    pub tau: Option<f64>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            k_max: 40,
            ac_threshold: 0.95,
            ac_min_samples: 2,
            esc_window: 5,
            dsc_presamples: 3,
            dsc_threshold: 0.95,
            actsc_window: 5,
            actsc_gamma: 0.50,
            conf_scope: ConfScope::Global,
            tau: None,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: &str| Err(ControllerError::Config(m.to_string()));
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if self.k_max == 0 {
            return bad("k_max must be >= 1");
        }
        if !unit(self.ac_threshold) || !unit(self.dsc_threshold) {
            return bad("agreement thresholds must lie in (0, 1]");
        }
        if self.esc_window == 0 || self.actsc_window == 0 {
            return bad("windows must be >= 1");
        }
        if self.dsc_presamples == 0 || self.ac_min_samples == 0 {
            return bad("dsc_presamples and ac_min_samples must be >= 1");
        }
        if !unit(self.actsc_gamma) {
            return bad("gamma must lie in (0, 1]");
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t < 1.0) {
                return bad("tau must lie in (0, 1)");
            }
        }
        Ok(())
    }
}

/// `route = easy` iff `p_hard < tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub p_hard: f64,
    pub tau: f64,
    pub route: Route,
}

impl RoutingDecision {
    pub fn new(p_hard: f64, tau: f64) -> Self {
        let route = if p_hard < tau { Route::Easy } else { Route::Hard };
        Self { p_hard, tau, route }
    }
}

/// Everything one controller did for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingTrace {
    pub problem_id: String,
    pub policy: Policy,
    pub route: Route,
    pub p_hard: Option<f64>,
    pub samples: Vec<AnswerSample>,
    #[serde(default)]
    pub prepare_samples: Vec<AnswerSample>,
    pub final_answer: String,
    pub stop_reason: StopReason,
    pub confidence_at_stop: f64,
    /// Size of each inference draw in order (for ACTSC, the `n_need` history).
    pub draws: Vec<usize>,
}

impl SamplingTrace {
    pub fn answers(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.answer.as_str()).collect()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }
}

/// Most frequent answer and its count; ties go to the answer seen first.
pub fn majority_vote<S: AsRef<str>>(answers: &[S]) -> Result<(String, usize), ControllerError> {
    let (winner, count) = leader(answers.iter().map(AsRef::as_ref)).ok_or(ControllerError::EmptyVote)?;
    Ok((winner.to_string(), count))
}

fn leader<'a>(answers: impl Iterator<Item = &'a str>) -> Option<(&'a str, usize)> {
    let mut order: Vec<&str> = Vec::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for a in answers {
        let c = counts.entry(a).or_insert(0);
        if *c == 0 {
            order.push(a);
        }
        *c += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for a in order {
        let c = counts[a];
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((a, c));
        }
    }
    best
}

fn sample_leader(samples: &[AnswerSample]) -> (&str, usize) {
    leader(samples.iter().map(|s| s.answer.as_str())).expect("at least one sample drawn")
}

struct Drawer<'a, S: ?Sized> {
    sampler: &'a mut S,
    problem_id: &'a str,
    samples: Vec<AnswerSample>,
    draws: Vec<usize>,
}

impl<'a, S: Sampler + ?Sized> Drawer<'a, S> {
    fn new(sampler: &'a mut S, problem_id: &'a str) -> Self {
        Self {
            sampler,
            problem_id,
            samples: Vec::new(),
            draws: Vec::new(),
        }
    }

    fn raw(&mut self, count: usize) -> Result<Vec<AnswerSample>, ControllerError> {
        let got = self
            .sampler
            .draw(self.problem_id, count)
            .map_err(|source| ControllerError::Sampler {
                problem_id: self.problem_id.to_string(),
                source,
            })?;
        if got.len() != count {
            return Err(ControllerError::Sampler {
                problem_id: self.problem_id.to_string(),
                source: SamplerError::Config(format!("backend returned {} of {count} samples", got.len())),
            });
        }
        Ok(got)
    }

    fn draw(&mut self, count: usize) -> Result<(), ControllerError> {
        let got = self.raw(count)?;
        self.samples.extend(got);
        self.draws.push(count);
        Ok(())
    }

    fn finish(
        self,
        policy: Policy,
        route: Route,
        p_hard: Option<f64>,
        prepare_samples: Vec<AnswerSample>,
        stop_reason: StopReason,
        answer_and_confidence: Option<(String, f64)>,
    ) -> SamplingTrace {
        let (final_answer, confidence_at_stop) = answer_and_confidence.unwrap_or_else(|| {
            let (a, c) = sample_leader(&self.samples);
            (a.to_string(), c as f64 / self.samples.len() as f64)
        });
        SamplingTrace {
            problem_id: self.problem_id.to_string(),
            policy,
            route,
            p_hard,
            samples: self.samples,
            prepare_samples,
            final_answer,
            stop_reason,
            confidence_at_stop,
            draws: self.draws,
        }
    }
}

/// Plain self-consistency: `k` samples, majority vote.
pub fn run_sc<S: Sampler + ?Sized>(sampler: &mut S, problem_id: &str, k: usize) -> Result<SamplingTrace, ControllerError> {
    if k == 0 {
        return Err(ControllerError::Config("k must be >= 1".into()));
    }
    let mut d = Drawer::new(sampler, problem_id);
    d.draw(k)?;
    Ok(d.finish(Policy::Sc, Route::NotApplicable, None, Vec::new(), StopReason::FixedBudget, None))
}

/// Draws one sample at a time until the leading share passes `threshold` (strictly
/// if `strict`), with at least `min_samples` drawn, or `budget` is reached.
fn adaptive_agreement<S: Sampler + ?Sized>(
    d: &mut Drawer<'_, S>,
    budget: usize,
    threshold: f64,
    strict: bool,
    min_samples: usize,
) -> Result<StopReason, ControllerError> {
    loop {
        d.draw(1)?;
        let n = d.samples.len();
        if n >= min_samples {
            let share = sample_leader(&d.samples).1 as f64 / n as f64;
            let hit = if strict { share > threshold } else { share >= threshold };
            if hit {
                return Ok(StopReason::Agreement);
            }
        }
        if n >= budget {
            return Ok(StopReason::BudgetExhausted);
        }
    }
}

/// Adaptive consistency: stop once the top answer's share exceeds `ac_threshold`.
pub fn run_ac<S: Sampler + ?Sized>(
    sampler: &mut S,
    problem_id: &str,
    config: &PolicyConfig,
) -> Result<SamplingTrace, ControllerError> {
    config.validate()?;
    let mut d = Drawer::new(sampler, problem_id);
    let stop = adaptive_agreement(&mut d, config.k_max, config.ac_threshold, true, config.ac_min_samples)?;
    Ok(d.finish(Policy::Ac, Route::NotApplicable, None, Vec::new(), stop, None))
}

/// Early-stopping SC: windows of `esc_window`, stop on a unanimous window.
pub fn run_esc<S: Sampler + ?Sized>(
    sampler: &mut S,
    problem_id: &str,
    config: &PolicyConfig,
) -> Result<SamplingTrace, ControllerError> {
    config.validate()?;
    let w = config.esc_window;
    let mut d = Drawer::new(sampler, problem_id);
    let stop = loop {
        let n = d.samples.len();
        d.draw(w.min(config.k_max - n))?;
        let n = d.samples.len();
        if n >= w {
            let recent = &d.samples[n - w..];
            if recent.iter().all(|s| s.answer == recent[0].answer) {
                break StopReason::WindowUnanimous;
            }
        }
        if n >= config.k_max {
            break StopReason::BudgetExhausted;
        }
    };
    Ok(d.finish(Policy::Esc, Route::NotApplicable, None, Vec::new(), stop, None))
}

/// Difficulty-adaptive SC with a sampling-based prepare stage.
pub fn run_dsc<S: Sampler + ?Sized>(
    sampler: &mut S,
    problem_id: &str,
    config: &PolicyConfig,
) -> Result<SamplingTrace, ControllerError> {
    config.validate()?;
    let mut d = Drawer::new(sampler, problem_id);
    let prepare = d.raw(config.dsc_presamples)?;
    let unanimous = prepare.iter().all(|s| s.answer == prepare[0].answer);
    if unanimous {
        d.draw(1)?;
        return Ok(d.finish(Policy::Dsc, Route::Easy, None, prepare, StopReason::SingleSample, None));
    }
    let stop = adaptive_agreement(&mut d, config.k_max, config.dsc_threshold, false, config.ac_min_samples)?;
    Ok(d.finish(Policy::Dsc, Route::Hard, None, prepare, stop, None))
}

/// Leading answer and its share under the configured scope.
fn scoped_confidence(samples: &[AnswerSample], window: usize, scope: ConfScope) -> (&str, f64) {
    let view = match scope {
        ConfScope::Global => samples,
        ConfScope::Window => &samples[samples.len().saturating_sub(window)..],
    };
    let (a, c) = sample_leader(view);
    (a, c as f64 / view.len() as f64)
}

/// Probe-routed SC with dynamic window top-ups on the hard route.
pub fn run_actsc<S: Sampler + ?Sized>(
    sampler: &mut S,
    problem_id: &str,
    p_hard: f64,
    config: &PolicyConfig,
) -> Result<SamplingTrace, ControllerError> {
    config.validate()?;
    if !(p_hard > 0.0 && p_hard < 1.0) {
        return Err(ControllerError::MissingProbability(problem_id.to_string()));
    }
    let tau = config
        .tau
        .ok_or_else(|| ControllerError::Config("actsc requires tau".into()))?;
    let decision = RoutingDecision::new(p_hard, tau);
    let mut d = Drawer::new(sampler, problem_id);

    if decision.route == Route::Easy {
        d.draw(1)?;
        return Ok(d.finish(Policy::Actsc, Route::Easy, Some(p_hard), Vec::new(), StopReason::SingleSample, None));
    }

    let w = config.actsc_window;
    let (answer, conf, stop) = loop {
        let n = d.samples.len();
        let window_top = if n == 0 { 0 } else { sample_leader(&d.samples[n.saturating_sub(w)..]).1 };
        // Floor at 1: a unanimous recent window with low global confidence
        // would otherwise request zero samples forever.
        let n_need = w.saturating_sub(window_top).max(1).min(config.k_max - n);
        d.draw(n_need)?;
        let (a, conf) = scoped_confidence(&d.samples, w, config.conf_scope);
        if conf >= config.actsc_gamma {
            break (a.to_string(), conf, StopReason::Confidence);
        }
        if d.samples.len() >= config.k_max {
            break (a.to_string(), conf, StopReason::BudgetExhausted);
        }
    };
    Ok(d.finish(Policy::Actsc, Route::Hard, Some(p_hard), Vec::new(), stop, Some((answer, conf))))
}

/// Dispatches to the controller for `policy`. `p_hard` is required for ACTSC only.
pub fn run_policy<S: Sampler + ?Sized>(
    policy: Policy,
    sampler: &mut S,
    problem_id: &str,
    p_hard: Option<f64>,
    config: &PolicyConfig,
) -> Result<SamplingTrace, ControllerError> {
    match policy {
        Policy::Sc => {
            config.validate()?;
            run_sc(sampler, problem_id, config.k_max)
        }
        Policy::Ac => run_ac(sampler, problem_id, config),
        Policy::Esc => run_esc(sampler, problem_id, config),
        Policy::Dsc => run_dsc(sampler, problem_id, config),
        Policy::Actsc => {
            let p = p_hard.ok_or_else(|| ControllerError::MissingProbability(problem_id.to_string()))?;
            run_actsc(sampler, problem_id, p, config)
        }
    }
}
