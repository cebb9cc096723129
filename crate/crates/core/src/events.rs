//! Timed intervention scripts applied during rollouts: colour-change signals
//! and destructive perturbations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridState, Real};
use crate::rng::{self, stream};

/// One scheduled intervention. Events fire at the start of their timestep,
/// before that step's update, and are visible in the recorded state for that
/// timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub timestep: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    /// Write `value` into `channel` within a disc of `radius` around
    /// `centre`, after jittering the centre by a uniform integer offset in
    /// `[-jitter_radius, +jitter_radius]^2` (clamped to the grid).
    Signal {
        centre: (usize, usize),
        #[serde(default)]
        jitter_radius: usize,
        channel: usize,
        value: f64,
        radius: f64,
    },
    /// Overwrite every channel inside the half-open rectangle
    /// `(row0, col0, row1, col1)` with `fill`.
    Perturb {
        rect: (usize, usize, usize, usize),
        fill: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventScript {
    pub events: Vec<Event>,
}

impl EventScript {
    pub fn empty() -> Self {
        EventScript { events: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Signals at `every, 2*every, ...` strictly before `steps`.
    pub fn periodic_signal(
        every: usize,
        steps: usize,
        centre: (usize, usize),
        jitter_radius: usize,
        channel: usize,
        value: f64,
        radius: f64,
    ) -> Self {
        assert!(every > 0, "signal period must be positive");
        let events = (1..)
            .map(|i| i * every)
            .take_while(|&t| t < steps)
            .map(|timestep| Event {
                timestep,
                kind: EventKind::Signal {
                    centre,
                    jitter_radius,
                    channel,
                    value,
                    radius,
                },
            })
            .collect();
        EventScript { events }
    }

    /// Merge two scripts, keeping events sorted by timestep (stable within a
    /// timestep: `self` first).
    pub fn merged_with(&self, other: &EventScript) -> Self {
        let mut events = self.events.clone();
        events.extend(other.events.iter().cloned());
        events.sort_by_key(|e| e.timestep);
        EventScript { events }
    }

    /// Reject scripts whose timesteps are unsorted or whose coordinates do
    /// not fit the given grid.
    pub fn validate(&self, height: usize, width: usize, channels: usize) -> Result<()> {
        let mut last = 0usize;
        for (i, ev) in self.events.iter().enumerate() {
            if ev.timestep < last {
                return Err(Error::Validation(format!(
                    "event {i} at timestep {} but predecessor is at {last}; timesteps must be non-decreasing",
                    ev.timestep
                )));
            }
            last = ev.timestep;
            match ev.kind {
                EventKind::Signal {
                    centre,
                    channel,
                    value,
                    radius,
                    ..
                } => {
                    if centre.0 >= height || centre.1 >= width {
                        return Err(Error::Validation(format!(
                            "event {i}: signal centre ({},{}) outside {height}x{width} grid",
                            centre.0, centre.1
                        )));
                    }
                    if channel >= channels {
                        return Err(Error::Validation(format!(
                            "event {i}: signal channel {channel} out of range for {channels} channels"
                        )));
                    }
                    if !value.is_finite() || !radius.is_finite() || radius < 0.0 {
                        return Err(Error::Validation(format!("event {i}: non-finite or negative signal payload")));
                    }
                }
                EventKind::Perturb { rect, fill } => {
                    let (r0, c0, r1, c1) = rect;
                    if r0 > r1 || c0 > c1 || r1 > height || c1 > width {
                        return Err(Error::Validation(format!(
                            "event {i}: perturbation rectangle ({r0},{c0},{r1},{c1}) invalid on {height}x{width} grid"
                        )));
                    }
                    if !fill.is_finite() {
                        return Err(Error::Validation(format!("event {i}: non-finite fill value")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Events scheduled at `timestep`, with their index in the script.
    pub fn at(&self, timestep: usize) -> impl Iterator<Item = (usize, &Event)> {
        self.events
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.timestep == timestep)
    }

    pub fn signal_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Signal { .. }))
            .count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &str) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &str) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Deterministic jittered centre for a signal event: uniform integer offset
/// in `[-jitter, +jitter]^2` keyed on the rollout seed, the timestep and the
/// event's index, clamped to the grid.
pub fn resolve_signal_centre(
    centre: (usize, usize),
    jitter_radius: usize,
    rng_seed: u64,
    timestep: usize,
    event_index: usize,
    height: usize,
    width: usize,
) -> (usize, usize) {
    if jitter_radius == 0 {
        return centre;
    }
    let span = 2 * jitter_radius + 1;
    let dr = rng::uniform_index(&[rng_seed, stream::JITTER, timestep as u64, event_index as u64, 0], span) as i64
        - jitter_radius as i64;
    let dc = rng::uniform_index(&[rng_seed, stream::JITTER, timestep as u64, event_index as u64, 1], span) as i64
        - jitter_radius as i64;
    let r = (centre.0 as i64 + dr).clamp(0, height as i64 - 1) as usize;
    let c = (centre.1 as i64 + dc).clamp(0, width as i64 - 1) as usize;
    (r, c)
}

/// Apply one event to a grid in place.
pub fn apply_event<T: Real>(
    grid: &mut GridState<T>,
    event: &Event,
    event_index: usize,
    rng_seed: u64,
) -> Result<()> {
    match event.kind {
        EventKind::Signal {
            centre,
            jitter_radius,
            channel,
            value,
            radius,
        } => {
            let resolved = resolve_signal_centre(
                centre,
                jitter_radius,
                rng_seed,
                event.timestep,
                event_index,
                grid.height(),
                grid.width(),
            );
            grid.apply_signal(resolved, radius, channel, T::from_f64(value))
        }
        EventKind::Perturb { rect, fill } => grid.apply_perturbation(rect, T::from_f64(fill)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_signal_count_matches_floor_arithmetic() {
        let s = EventScript::periodic_signal(150, 20_000, (30, 30), 2, 16, 1.0, 3.0);
        assert_eq!(s.signal_count(), 133);
        assert_eq!(s.events.first().unwrap().timestep, 150);
        assert_eq!(s.events.last().unwrap().timestep, 19_950);
        s.validate(60, 60, 17).unwrap();
    }

    #[test]
    fn out_of_bounds_events_are_rejected_up_front() {
        let s = EventScript {
            events: vec![Event {
                timestep: 5,
                kind: EventKind::Signal {
                    centre: (70, 30),
                    jitter_radius: 0,
                    channel: 2,
                    value: 1.0,
                    radius: 2.0,
                },
            }],
        };
        assert!(s.validate(60, 60, 17).is_err());

        let p = EventScript {
            events: vec![Event {
                timestep: 0,
                kind: EventKind::Perturb {
                    rect: (0, 0, 61, 10),
                    fill: 0.0,
                },
            }],
        };
        assert!(p.validate(60, 60, 17).is_err());
        assert!(p.validate(61, 61, 17).is_ok());
    }

    #[test]
    fn unsorted_timesteps_are_rejected() {
        let s = EventScript {
            events: vec![
                Event {
                    timestep: 10,
                    kind: EventKind::Perturb {
                        rect: (0, 0, 1, 1),
                        fill: 0.0,
                    },
                },
                Event {
                    timestep: 5,
                    kind: EventKind::Perturb {
                        rect: (0, 0, 1, 1),
                        fill: 0.0,
                    },
                },
            ],
        };
        assert!(s.validate(8, 8, 4).is_err());
    }

    #[test]
    fn json_round_trip_preserves_script() {
        let s = EventScript::periodic_signal(7, 50, (3, 4), 1, 5, -0.5, 2.5).merged_with(&EventScript {
            events: vec![Event {
                timestep: 9,
                kind: EventKind::Perturb {
                    rect: (1, 1, 3, 3),
                    fill: 0.25,
                },
            }],
        });
        let json = s.to_json().unwrap();
        let back = EventScript::from_json(&json).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn jitter_is_deterministic_and_bounded() {
        let c = resolve_signal_centre((5, 5), 2, 42, 100, 0, 16, 16);
        assert_eq!(c, resolve_signal_centre((5, 5), 2, 42, 100, 0, 16, 16));
        assert!(c.0 >= 3 && c.0 <= 7 && c.1 >= 3 && c.1 <= 7);
        // Clamped at the boundary.
        let e = resolve_signal_centre((0, 0), 3, 7, 1, 0, 8, 8);
        assert!(e.0 < 8 && e.1 < 8);
        // Different timesteps decorrelate.
        let all_same = (0..20).all(|t| resolve_signal_centre((5, 5), 2, 42, t, 0, 16, 16) == c);
        assert!(!all_same);
    }
}
