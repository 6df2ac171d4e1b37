//! Update sets `J(p)` and delay indices `s_i(p)` for the iteration
//!
//! ```text
//! x_i^{p+1} = x_i^p                                   if i not in J(p)
//! x_i^{p+1} = F_i(x_1^{s_1(p)}, ..., x_a^{s_a(p)})    if i in J(p)
//! ```
//!
//! Schedules are materialized over a finite horizon. The Rust API uses
//! 0-based block indices; problem files and validation reports use 1-based
//! block numbers.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule parameters: {0}")]
    InvalidParams(String),
}

/// How to construct a schedule. Block indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    /// `J(p) = {1..alpha}`, `s_i(p) = p`.
    Jacobi,
    /// `J(p) = {(p mod alpha) + 1}`, `s_i(p) = p`.
    GaussSeidel,
    /// Cycles through `base`, inserting a full update every `period`-th step.
    PeriodicFull {
        period: usize,
        base: Vec<Vec<usize>>,
    },
    /// Explicit tables. `delays` may be omitted for a synchronous schedule;
    /// otherwise it holds `horizon` rows of `alpha` step indices.
    Custom {
        update_sets: Vec<Vec<usize>>,
        delays: Option<Vec<Vec<usize>>>,
    },
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Jacobi => "jacobi",
            ScheduleKind::GaussSeidel => "gauss_seidel",
            ScheduleKind::PeriodicFull { .. } => "periodic_full",
            ScheduleKind::Custom { .. } => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    alpha: usize,
    update_sets: Vec<Vec<usize>>,
    /// `None` means synchronous: `s_i(p) = p`.
    delays: Option<Vec<Vec<usize>>>,
    full_update_steps: Vec<usize>,
}

impl Schedule {
    pub fn build(kind: &ScheduleKind, alpha: usize, horizon: usize) -> Result<Self, ScheduleError> {
        if alpha < 1 {
            return Err(ScheduleError::InvalidParams("alpha must be >= 1".into()));
        }
        if horizon < 1 {
            return Err(ScheduleError::InvalidParams("horizon must be >= 1".into()));
        }
        let all: Vec<usize> = (0..alpha).collect();
        let (update_sets, delays) = match kind {
            ScheduleKind::Jacobi => (vec![all; horizon], None),
            ScheduleKind::GaussSeidel => ((0..horizon).map(|p| vec![p % alpha]).collect(), None),
            ScheduleKind::PeriodicFull { period, base } => {
                if *period < 1 {
                    return Err(ScheduleError::InvalidParams("period must be >= 1".into()));
                }
                if base.is_empty() && *period > 1 {
                    return Err(ScheduleError::InvalidParams(
                        "periodic_full needs a non-empty base pattern".into(),
                    ));
                }
                for set in base {
                    check_set(set, alpha)?;
                }
                // The base cycle advances only on non-full steps.
                let mut sets = Vec::with_capacity(horizon);
                let mut cursor = 0;
                for p in 0..horizon {
                    if (p + 1) % period == 0 {
                        sets.push(all.clone());
                    } else {
                        sets.push(normalize(&base[cursor % base.len()]));
                        cursor += 1;
                    }
                }
                (sets, None)
            }
            ScheduleKind::Custom {
                update_sets,
                delays,
            } => {
                if update_sets.len() != horizon {
                    return Err(ScheduleError::InvalidParams(format!(
                        "update_sets has {} rows, expected horizon {}",
                        update_sets.len(),
                        horizon
                    )));
                }
                for set in update_sets {
                    check_set(set, alpha)?;
                }
                if let Some(d) = delays {
                    if d.len() != horizon {
                        return Err(ScheduleError::InvalidParams(format!(
                            "delays has {} rows, expected horizon {}",
                            d.len(),
                            horizon
                        )));
                    }
                    if let Some((p, row)) = d.iter().enumerate().find(|(_, r)| r.len() != alpha) {
                        return Err(ScheduleError::InvalidParams(format!(
                            "delays row {p} has {} entries, expected alpha {alpha}",
                            row.len()
                        )));
                    }
                }
                let delays = delays.as_ref().and_then(|d| {
                    let sync = d
                        .iter()
                        .enumerate()
                        .all(|(p, row)| row.iter().all(|&s| s == p));
                    (!sync).then(|| d.clone())
                });
                (update_sets.iter().map(|s| normalize(s)).collect(), delays)
            }
        };
        let full_update_steps = update_sets
            .iter()
            .enumerate()
            .filter(|(_, s)| s.len() == alpha)
            .map(|(p, _)| p)
            .collect();
        Ok(Self {
            alpha,
            update_sets,
            delays,
            full_update_steps,
        })
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn horizon(&self) -> usize {
        self.update_sets.len()
    }

    /// `J(p)`, sorted, 0-based.
    pub fn update_set(&self, p: usize) -> &[usize] {
        &self.update_sets[p]
    }

    pub fn is_full_update(&self, p: usize) -> bool {
        self.update_sets[p].len() == self.alpha
    }

    /// `s_i(p)`.
    pub fn delay(&self, p: usize, i: usize) -> usize {
        match &self.delays {
            None => p,
            Some(d) => d[p][i],
        }
    }

    pub fn is_synchronous(&self) -> bool {
        self.delays.is_none()
    }

    /// Steps `p_k` with `J(p_k) = {1..alpha}`.
    pub fn full_update_steps(&self) -> &[usize] {
        &self.full_update_steps
    }

    pub fn is_jacobi(&self) -> bool {
        self.is_synchronous() && self.full_update_steps.len() == self.horizon()
    }

    /// Largest `p - min_i s_i(p)` over the horizon; 0 for synchronous schedules.
    /// Illegal delays (`s_i(p) > p`) are ignored here.
    pub fn max_delay(&self) -> usize {
        match &self.delays {
            None => 0,
            Some(d) => d
                .iter()
                .enumerate()
                .map(|(p, row)| row.iter().map(|&s| p.saturating_sub(s)).max().unwrap_or(0))
                .max()
                .unwrap_or(0),
        }
    }

    /// Tables as stored, for serialization (0-based blocks).
    pub fn update_sets(&self) -> &[Vec<usize>] {
        &self.update_sets
    }

    pub fn delays(&self) -> Option<&[Vec<usize>]> {
        self.delays.as_deref()
    }
}

fn check_set(set: &[usize], alpha: usize) -> Result<(), ScheduleError> {
    if set.is_empty() {
        return Err(ScheduleError::InvalidParams(
            "update sets must be non-empty".into(),
        ));
    }
    if let Some(&b) = set.iter().find(|&&b| b >= alpha) {
        return Err(ScheduleError::InvalidParams(format!(
            "block {} out of range 1..={alpha}",
            b + 1
        )));
    }
    Ok(())
}

fn normalize(set: &[usize]) -> Vec<usize> {
    let mut s = set.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

pub fn build_schedule(
    kind: &ScheduleKind,
    alpha: usize,
    horizon: usize,
) -> Result<Schedule, ScheduleError> {
    Schedule::build(kind, alpha, horizon)
}

/// Finite-horizon surrogate for the asymptotic conditions on `J` and `S`.
/// Block numbers in this report are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub window: usize,
    pub horizon: usize,
    pub synchronous: bool,
    /// `s_i(p) <= p` everywhere.
    pub delay_legal: bool,
    /// Every block is updated in every complete window of the horizon.
    pub fairness: bool,
    /// `min_i s_i(p)` is nondecreasing and never stalls more than `window` steps.
    pub delay_progress: bool,
    /// Full-update steps exist and recur with gap at most `window`.
    pub h0_satisfied: bool,
    /// Largest gap between consecutive full-update steps (horizon ends count
    /// as sentinels); `None` when there are no full-update steps.
    pub h0_gap: Option<usize>,
    pub max_delay: usize,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.delay_legal && self.fairness && self.delay_progress && self.h0_satisfied
    }
}

/// Largest distance between consecutive events with `-1` and `horizon` as
/// sentinels. A window of length `w` always meets an event iff this is `<= w`.
fn max_gap(events: impl Iterator<Item = usize>, horizon: usize) -> usize {
    let mut prev: isize = -1;
    let mut gap = 0;
    for e in events {
        gap = gap.max((e as isize - prev) as usize);
        prev = e as isize;
    }
    gap.max((horizon as isize - prev) as usize)
}

pub fn validate_schedule(s: &Schedule, window: usize) -> ValidationReport {
    let window = window.max(1);
    let horizon = s.horizon();
    let mut violations = Vec::new();

    let mut delay_legal = true;
    if let Some(d) = &s.delays {
        'outer: for (p, row) in d.iter().enumerate() {
            for (i, &si) in row.iter().enumerate() {
                if si > p {
                    delay_legal = false;
                    violations.push(format!("s_{}({p}) = {si} exceeds p = {p}", i + 1));
                    break 'outer;
                }
            }
        }
    }

    let mut fairness = true;
    for i in 0..s.alpha {
        let events = (0..horizon).filter(|&p| s.update_sets[p].binary_search(&i).is_ok());
        let gap = max_gap(events, horizon);
        if gap > window {
            fairness = false;
            violations.push(format!(
                "block {} goes {} steps without update (window {window})",
                i + 1,
                gap - 1
            ));
        }
    }

    let mut delay_progress = true;
    if s.delays.is_some() {
        let mins: Vec<usize> = (0..horizon)
            .map(|p| (0..s.alpha).map(|i| s.delay(p, i)).min().unwrap_or(p))
            .collect();
        let mut stall = 0;
        for p in 1..horizon {
            if mins[p] < mins[p - 1] {
                delay_progress = false;
                violations.push(format!("min_i s_i(p) decreases at p = {p}"));
                break;
            }
            stall = if mins[p] == mins[p - 1] { stall + 1 } else { 0 };
            if stall > window {
                delay_progress = false;
                violations.push(format!(
                    "min_i s_i(p) stalls at {} for more than {window} steps",
                    mins[p]
                ));
                break;
            }
        }
    }

    let h0_gap = (!s.full_update_steps.is_empty())
        .then(|| max_gap(s.full_update_steps.iter().copied(), horizon));
    let h0_satisfied = matches!(h0_gap, Some(g) if g <= window);
    match h0_gap {
        None => violations.push("no step updates every block".into()),
        Some(g) if g > window => {
            violations.push(format!("full-update gap {g} exceeds window {window}"))
        }
        _ => {}
    }

    ValidationReport {
        window,
        horizon,
        synchronous: s.is_synchronous(),
        delay_legal,
        fairness,
        delay_progress,
        h0_satisfied,
        h0_gap,
        max_delay: s.max_delay(),
        violations,
    }
}
