//! Domain types shared by every stage of the queue: changes, outcomes and
//! engine configuration.

use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::fmt;

/// Identifier of a submitted change. The numeric order is the enqueue order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChangeId(pub u32);

impl fmt::Display for ChangeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BuildOutcome {
    Pass,
    Fail,
}

impl BuildOutcome {
    pub fn is_pass(self) -> bool {
        matches!(self, BuildOutcome::Pass)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BuildOutcome::Pass => "pass",
            BuildOutcome::Fail => "fail",
        }
    }
}

/// A code change waiting in the queue.
#[derive(Debug, Clone, PartialEq)]
pub struct Change {
    pub id: ChangeId,
    /// Minutes since the start of the simulated epoch.
    pub arrival_time: f64,
    pub targets_changed: BTreeSet<String>,
    pub targets_added: BTreeSet<String>,
    pub targets_removed: BTreeSet<String>,
    pub added_lines: u64,
    pub removed_lines: u64,
    pub changeset_count: u64,
    pub commits_count: u64,
    pub developer: String,
    pub success_prior: f64,
}

impl Change {
    /// A change touching `targets` with neutral metadata. Mostly useful in tests
    /// and hand-written scenarios.
    pub fn new<I, S>(id: u32, arrival_time: f64, targets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Change {
            id: ChangeId(id),
            arrival_time,
            targets_changed: targets.into_iter().map(Into::into).collect(),
            targets_added: BTreeSet::new(),
            targets_removed: BTreeSet::new(),
            added_lines: 0,
            removed_lines: 0,
            changeset_count: 0,
            commits_count: 1,
            developer: String::new(),
            success_prior: 1.0,
        }
    }

    pub fn with_prior(mut self, prior: f64) -> Self {
        self.success_prior = prior;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_time.is_finite() && self.arrival_time >= 0.0) {
            return Err(Error::InvalidWorkload(format!(
                "change {} has arrival time {}",
                self.id, self.arrival_time
            )));
        }
        if !(0.0..=1.0).contains(&self.success_prior) {
            return Err(Error::InvalidWorkload(format!(
                "change {} has success prior {} outside [0, 1]",
                self.id, self.success_prior
            )));
        }
        Ok(())
    }

    /// Every target the change touches, whether modified, added or removed.
    pub fn all_targets(&self) -> impl Iterator<Item = &String> {
        self.targets_changed
            .iter()
            .chain(&self.targets_added)
            .chain(&self.targets_removed)
    }
}

/// Which scheduling policy drives the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    /// Single-build-per-change model: in-order landing, no threshold, no bypass.
    Baseline,
    /// Bypass-aware prioritization with a speculation threshold.
    Enhanced,
}

impl Strategy {
    pub fn allows_bypass(self) -> bool {
        matches!(self, Strategy::Enhanced)
    }

    /// Speculation threshold in effect; the baseline schedules anything that fits.
    pub fn effective_threshold(self, cfg: &EngineConfig) -> f64 {
        match self {
            Strategy::Baseline => 0.0,
            Strategy::Enhanced => cfg.speculation_threshold,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Enhanced => "enhanced",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "baseline" => Ok(Strategy::Baseline),
            "enhanced" => Ok(Strategy::Enhanced),
            other => Err(Error::InvalidConfig(format!("unknown strategy `{other}`"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Minimum needed-probability for a non-head build to be scheduled.
    pub speculation_threshold: f64,
    /// Minimum probability of finishing first for a predecessor to be bypassable.
    pub blrd_eligibility_threshold: f64,
    /// Below this bypass product the original single-path model is used.
    pub bypass_product_floor: f64,
    pub executor_capacity: usize,
    /// Maximum number of conflicting predecessors speculated per change.
    pub depth_cap: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            speculation_threshold: 0.3,
            blrd_eligibility_threshold: 0.5,
            bypass_product_floor: 0.05,
            executor_capacity: 8,
            depth_cap: 6,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        unit("speculation_threshold", self.speculation_threshold)?;
        unit("blrd_eligibility_threshold", self.blrd_eligibility_threshold)?;
        if !(self.bypass_product_floor > 0.0 && self.bypass_product_floor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "bypass_product_floor = {} is outside (0, 1)",
                self.bypass_product_floor
            )));
        }
        if self.executor_capacity == 0 {
            return Err(Error::InvalidConfig("executor_capacity must be at least 1".into()));
        }
        if self.depth_cap == 0 {
            return Err(Error::InvalidConfig("depth_cap must be at least 1".into()));
        }
        // 2^depth_cap nodes per change; beyond this a u64 subset mask overflows.
        if self.depth_cap > 20 {
            return Err(Error::InvalidConfig(format!(
                "depth_cap = {} exceeds the supported maximum of 20",
                self.depth_cap
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        EngineConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range_config() {
        let bad = [
            EngineConfig { speculation_threshold: 1.5, ..Default::default() },
            EngineConfig { blrd_eligibility_threshold: -0.1, ..Default::default() },
            EngineConfig { bypass_product_floor: 0.0, ..Default::default() },
            EngineConfig { bypass_product_floor: 1.0, ..Default::default() },
            EngineConfig { executor_capacity: 0, ..Default::default() },
            EngineConfig { depth_cap: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn change_validation() {
        assert!(Change::new(1, 0.0, ["a"]).validate().is_ok());
        assert!(Change::new(1, -1.0, ["a"]).validate().is_err());
        assert!(Change::new(1, 0.0, ["a"]).with_prior(1.2).validate().is_err());
    }

    #[test]
    fn strategy_parses() {
        assert_eq!("baseline".parse::<Strategy>().unwrap(), Strategy::Baseline);
        assert_eq!("enhanced".parse::<Strategy>().unwrap(), Strategy::Enhanced);
        assert!("greedy".parse::<Strategy>().is_err());
    }
}
