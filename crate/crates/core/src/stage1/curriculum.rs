//! Phase scheduling: a phase ends once every active loss has stabilized.

use std::collections::BTreeMap;

use super::losses::{LossName, Phase};
use crate::error::{bail_validation, Result};

/// Slope of the loss over its last `patience` values, measured as the change
/// between the window's end points divided by `patience` (the per-step change
/// of the `patience`-long moving average).
pub fn moving_average_slope(history: &[f64], patience: usize) -> Option<f64> {
    if patience == 0 || history.len() < patience {
        return None;
    }
    let window = &history[history.len() - patience..];
    Some((window[patience - 1] - window[0]) / patience as f64)
}

/// True iff the moving-average slope over the last `patience` values is
/// smaller than `epsilon` in magnitude.
pub fn stabilization_check(history: &[f64], epsilon: f64, patience: usize) -> bool {
    match moving_average_slope(history, patience) {
        Some(s) => s == 0.0 || s.abs() < epsilon,
        None => false,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilizationSettings {
    /// Epsilon as a fraction of the loss's rolling mean.
    pub epsilon_fraction: f64,
    pub patience: usize,
}

impl Default for StabilizationSettings {
    fn default() -> Self {
        Self {
            epsilon_fraction: 0.01,
            patience: 5,
        }
    }
}

impl StabilizationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_fraction.is_finite() && self.epsilon_fraction >= 0.0) {
            bail_validation!("stabilization epsilon must be non-negative");
        }
        if self.patience < 2 {
            bail_validation!("stabilization patience must be at least 2");
        }
        Ok(())
    }

    /// Epsilon for a history: the configured fraction of the mean magnitude
    /// of its last `patience` values.
    pub fn epsilon_for(&self, history: &[f64]) -> f64 {
        let k = self.patience.min(history.len()).max(1);
        let tail = &history[history.len().saturating_sub(k)..];
        self.epsilon_fraction * (tail.iter().sum::<f64>() / k as f64).abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumState {
    pub phase: Phase,
    pub epoch: usize,
    /// Per-epoch values of the active losses since the current phase began.
    pub loss_history: BTreeMap<LossName, Vec<f64>>,
    pub settings: StabilizationSettings,
    /// When false, phases only change through [`CurriculumState::advance_to`].
    pub automatic: bool,
}

impl CurriculumState {
    pub fn new(settings: StabilizationSettings) -> Self {
        Self {
            phase: Phase::One,
            epoch: 0,
            loss_history: BTreeMap::new(),
            settings,
            automatic: true,
        }
    }

    pub fn active_losses(&self) -> std::collections::BTreeSet<LossName> {
        self.phase.active_losses()
    }

    /// Whether every active loss has stabilized.
    pub fn is_stable(&self) -> bool {
        self.active_losses().iter().all(|n| {
            self.loss_history.get(n).is_some_and(|h| {
                stabilization_check(h, self.settings.epsilon_for(h), self.settings.patience)
            })
        })
    }

    /// Record one epoch of mean loss values (inactive losses are ignored) and
    /// advance the phase if the active set has stabilized. Returns the new
    /// phase on a transition.
    pub fn observe_epoch(&mut self, epoch_losses: &BTreeMap<LossName, f64>) -> Option<Phase> {
        self.epoch += 1;
        for name in self.active_losses() {
            if let Some(&v) = epoch_losses.get(&name) {
                self.loss_history.entry(name).or_default().push(v);
            }
        }
        if !self.automatic || !self.is_stable() {
            return None;
        }
        let next = self.phase.next()?;
        self.enter(next);
        Some(next)
    }

    /// Manual phase change; phases never move backwards.
    pub fn advance_to(&mut self, phase: Phase) -> Result<()> {
        if phase < self.phase {
            bail_validation!(
                "cannot move from phase {} back to phase {}",
                self.phase.number(),
                phase.number()
            );
        }
        if phase != self.phase {
            self.enter(phase);
        }
        Ok(())
    }

    fn enter(&mut self, phase: Phase) {
        self.phase = phase;
        self.loss_history.clear();
    }

    /// `key=value` lines for `state.txt`.
    pub fn render(&self) -> String {
        let mut s = format!(
            "phase={}\nepoch={}\nautomatic={}\nepsilon_fraction={}\npatience={}\n",
            self.phase.number(),
            self.epoch,
            self.automatic,
            self.settings.epsilon_fraction,
            self.settings.patience
        );
        for (name, h) in &self.loss_history {
            let vals: Vec<String> = h.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&format!("history.{}={}\n", name.as_str(), vals.join(",")));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut state = CurriculumState::new(StabilizationSettings::default());
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let Some((k, v)) = line.split_once('=') else {
                bail_validation!("curriculum state: bad line `{line}`");
            };
            let bad =
                || crate::Error::Validation(format!("curriculum state: bad value in `{line}`"));
            match k {
                "phase" => {
                    state.phase = v
                        .parse()
                        .ok()
                        .and_then(Phase::from_number)
                        .ok_or_else(bad)?
                }
                "epoch" => state.epoch = v.parse().map_err(|_| bad())?,
                "automatic" => state.automatic = v.parse().map_err(|_| bad())?,
                "epsilon_fraction" => {
                    state.settings.epsilon_fraction = v.parse().map_err(|_| bad())?
                }
                "patience" => state.settings.patience = v.parse().map_err(|_| bad())?,
                _ => {
                    if let Some(name) = k.strip_prefix("history.") {
                        let name = LossName::parse(name).ok_or_else(bad)?;
                        let vals = if v.is_empty() {
                            Vec::new()
                        } else {
                            v.split(',')
                                .map(|x| x.parse::<f64>())
                                .collect::<std::result::Result<_, _>>()
                                .map_err(|_| bad())?
                        };
                        state.loss_history.insert(name, vals);
                    }
                    // Other keys belong to the trainer.
                }
            }
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn flat_history_is_stable() {
        assert!(stabilization_check(&[2.0; 5], 0.02, 5));
        assert!(stabilization_check(&[0.0; 5], 0.0, 5));
    }

    #[test]
    fn steady_decline_is_not_stable() {
        let eps = 0.01;
        let h: Vec<f64> = (0..8).map(|i| 5.0 - 10.0 * eps * i as f64).collect();
        assert!(!stabilization_check(&h, eps, 5));
    }

    #[test]
    fn short_history_is_not_stable() {
        assert!(!stabilization_check(&[1.0; 4], 1.0, 5));
    }

    #[test]
    fn bounded_noise_is_stable() {
        let mut rng = crate::autograd::seeded_rng(11);
        let (eps, patience) = (0.05, 5);
        let amp = 0.99 * eps * patience as f64 / 2.0;
        for _ in 0..200 {
            let h: Vec<f64> = (0..12).map(|_| 3.0 + rng.random_range(-amp..amp)).collect();
            assert!(stabilization_check(&h, eps, patience));
        }
    }

    #[test]
    fn state_roundtrip() {
        let mut s = CurriculumState::new(StabilizationSettings::default());
        let mut losses = BTreeMap::new();
        losses.insert(LossName::Gan, 1.25);
        losses.insert(LossName::Fm, 0.5);
        s.observe_epoch(&losses);
        assert_eq!(CurriculumState::parse(&s.render()).unwrap(), s);
    }

    #[test]
    fn phases_only_move_forward() {
        let mut s = CurriculumState::new(StabilizationSettings::default());
        s.advance_to(Phase::Three).unwrap();
        assert!(s.advance_to(Phase::Two).is_err());
    }
}
