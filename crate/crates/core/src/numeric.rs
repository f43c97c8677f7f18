//! Small numeric helpers shared across modules.

/// Neumaier-compensated running sum.
///
/// Aggregates in this crate must not depend on evaluation order beyond
/// rounding noise, so every mean over problems goes through this.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Compensated sum of a slice.
pub fn stable_sum(values: &[f64]) -> f64 {
    values.iter().copied().collect::<CompensatedSum>().total()
}

/// Compensated arithmetic mean; `None` for an empty slice.
pub fn stable_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(stable_sum(values) / values.len() as f64)
    }
}

/// Logistic sigmoid, evaluated in the branch that cannot overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Rounds to `decimals` places, ties away from zero.
///
/// Table values such as `-78.25` are not exactly representable, so the
/// scaled value is nudged by a few ulps-worth before rounding to land on
/// the decimal tie the way a person reading the table would.
pub fn round_half_away(value: f64, decimals: u32) -> f64 {
    let factor = 10f64.powi(decimals as i32);
    let scaled = value * factor;
    let nudge = scaled.abs().max(1.0) * 1e-12;
    (scaled + scaled.signum() * nudge).round() / factor
}

/// Percent change of `value` relative to `reference`.
pub fn pct_change(value: f64, reference: f64) -> f64 {
    (value - reference) / reference * 100.0
}
