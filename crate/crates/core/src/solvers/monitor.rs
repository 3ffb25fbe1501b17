//! Residual-history metrics and the precision escalation rule.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::MonitorParams;
use crate::fpcodec::PrecisionLevel;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MonitorError {
    #[error("residual window needs at least {needed} entries, has {found}")]
    WindowTooShort { needed: usize, found: usize },
    #[error("leading residual is zero")]
    ZeroLeadingResidual,
}

fn need(window: &[f64], needed: usize) -> Result<(), MonitorError> {
    if window.len() < needed {
        return Err(MonitorError::WindowTooShort {
            needed,
            found: window.len(),
        });
    }
    Ok(())
}

/// Relative standard deviation (population form) of `window`.
pub fn rsd(window: &[f64]) -> Result<f64, MonitorError> {
    need(window, 2)?;
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    if mean < 1e-300 {
        return Ok(0.0);
    }
    let var = window.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// Number of strict decreases between consecutive entries.
pub fn n_dec(window: &[f64]) -> Result<usize, MonitorError> {
    need(window, 2)?;
    Ok(window.windows(2).filter(|p| p[0] > p[1]).count())
}

/// `(first - last) / first`.
pub fn rel_dec(window: &[f64]) -> Result<f64, MonitorError> {
    need(window, 1)?;
    let first = window[0];
    if first == 0.0 {
        return Err(MonitorError::ZeroLeadingResidual);
    }
    Ok((first - window[window.len() - 1]) / first)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchMetrics {
    pub rsd: f64,
    pub n_dec: usize,
    pub rel_dec: f64,
}

/// Which escalation condition fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trigger {
    /// Large relative spread and few decreases: residual oscillates.
    Fluctuating,
    /// Mostly decreasing but by too little overall.
    SlowDecrease,
    /// No decrease at all.
    Stagnant,
}

/// First condition that holds, if any. `n_dec_limit` stands where the raw
/// rule uses `t / 2`.
pub fn escalation_trigger(m: &SwitchMetrics, p: &MonitorParams) -> Option<Trigger> {
    if m.rsd > p.rsd_limit && m.n_dec < p.n_dec_limit {
        Some(Trigger::Fluctuating)
    } else if m.n_dec >= p.n_dec_limit && m.rel_dec < p.rel_dec_limit {
        Some(Trigger::SlowDecrease)
    } else if m.n_dec == 0 {
        Some(Trigger::Stagnant)
    } else {
        None
    }
}

/// Ring buffer of the last `t + 1` relative residuals.
#[derive(Debug, Clone)]
pub struct ResidualMonitor {
    params: MonitorParams,
    window: VecDeque<f64>,
}

impl ResidualMonitor {
    pub fn new(params: MonitorParams) -> Self {
        Self {
            window: VecDeque::with_capacity(params.t + 1),
            params,
        }
    }

    pub fn params(&self) -> &MonitorParams {
        &self.params
    }

    pub fn push(&mut self, residual: f64) {
        if self.window.len() == self.params.t + 1 {
            self.window.pop_front();
        }
        self.window.push_back(residual);
    }

    pub fn is_full(&self) -> bool {
        self.window.len() == self.params.t + 1
    }

    pub fn window(&self) -> Vec<f64> {
        self.window.iter().copied().collect()
    }

    /// Check points are `l, l + m, l + 2m, ...`, once the window is full.
    pub fn is_check_point(&self, iteration: usize) -> bool {
        let p = &self.params;
        self.is_full() && iteration >= p.l && (iteration - p.l).is_multiple_of(p.m)
    }

    /// Metrics over the window `resid[j-t ..= j]`: spread and relative drop
    /// over the first `t` entries, decreases over all `t` consecutive pairs.
    /// `None` until the window fills or when its leading residual is zero.
    pub fn metrics(&self) -> Option<SwitchMetrics> {
        if !self.is_full() {
            return None;
        }
        let w = self.window();
        let t = self.params.t;
        Some(SwitchMetrics {
            rsd: rsd(&w[..t]).ok()?,
            n_dec: n_dec(&w).ok()?,
            rel_dec: rel_dec(&w[..t]).ok()?,
        })
    }

    /// Whether a higher precision is called for at `iteration`.
    pub fn should_escalate(&self, iteration: usize) -> bool {
        self.evaluate(iteration).is_some()
    }

    pub fn evaluate(&self, iteration: usize) -> Option<(Trigger, SwitchMetrics)> {
        if !self.is_check_point(iteration) {
            return None;
        }
        let m = self.metrics()?;
        escalation_trigger(&m, &self.params).map(|t| (t, m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub iteration: usize,
    pub from: PrecisionLevel,
    pub to: PrecisionLevel,
    pub trigger: Trigger,
    pub metrics: SwitchMetrics,
}

/// Current precision tag and every escalation so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteppedState {
    pub tag: PrecisionLevel,
    pub switch_log: Vec<SwitchEvent>,
}

impl SteppedState {
    pub fn new(start: PrecisionLevel) -> Self {
        Self {
            tag: start,
            switch_log: Vec::new(),
        }
    }

    /// Raises the tag by one level at a triggering check point. Nothing
    /// happens once the tag is `Full`.
    pub fn observe(&mut self, monitor: &ResidualMonitor, iteration: usize) -> Option<&SwitchEvent> {
        let to = self.tag.next()?;
        let (trigger, metrics) = monitor.evaluate(iteration)?;
        self.switch_log.push(SwitchEvent {
            iteration,
            from: self.tag,
            to,
            trigger,
            metrics,
        });
        self.tag = to;
        self.switch_log.last()
    }
}
