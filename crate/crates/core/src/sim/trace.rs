//! Harvested-power traces: piecewise-constant inflow over time.
//!
//! The on-disk format is CSV with two columns, `duration_ms,power_mW`,
//! `#` comments, and an optional header row.  Traces repeat by default:
//! a 400 ms profile drives a 10 s run by looping.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("trace has no segments")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSegment {
    pub duration_ms: f64,
    pub power_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestTrace {
    pub name: String,
    pub segments: Vec<TraceSegment>,
    /// Loop the profile past its end (on by default); otherwise the
    /// source goes dark after the last segment.
    pub repeat: bool,
}

impl HarvestTrace {
    pub fn new(name: &str, segments: Vec<TraceSegment>) -> HarvestTrace {
        HarvestTrace {
            name: name.into(),
            segments,
            repeat: true,
        }
    }

    /// Parses `duration_ms,power_mW` CSV.  Values must be finite,
    /// durations positive, powers non-negative.
    pub fn parse_csv(text: &str, name: &str) -> Result<HarvestTrace, TraceError> {
        let mut segments = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut cols = body.split(',').map(str::trim);
            let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(TraceError::Syntax {
                    line,
                    msg: "expected two comma-separated columns".into(),
                });
            };
            if segments.is_empty() && a.parse::<f64>().is_err() {
                // Header row.
                continue;
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| TraceError::Syntax {
                    line,
                    msg: format!("`{s}` is not a number"),
                })
            };
            let (duration_ms, power_mw) = (parse(a)?, parse(b)?);
            if !(duration_ms.is_finite() && duration_ms > 0.0) {
                return Err(TraceError::Syntax {
                    line,
                    msg: "duration must be positive".into(),
                });
            }
            if !(power_mw.is_finite() && power_mw >= 0.0) {
                return Err(TraceError::Syntax {
                    line,
                    msg: "power must be non-negative".into(),
                });
            }
            segments.push(TraceSegment {
                duration_ms,
                power_mw,
            });
        }
        if segments.is_empty() {
            return Err(TraceError::Empty);
        }
        Ok(HarvestTrace::new(name, segments))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# harvest trace: {}\nduration_ms,power_mW\n", self.name);
        for s in &self.segments {
            out.push_str(&format!("{},{}\n", s.duration_ms, s.power_mw));
        }
        out
    }

    pub fn total_duration_ms(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_ms).sum()
    }

    /// Inflow at time `t_ms`.  Repeating traces wrap; finite ones return
    /// zero past the end.
    pub fn power_at(&self, t_ms: f64) -> f64 {
        let total = self.total_duration_ms();
        if total <= 0.0 {
            return 0.0;
        }
        let mut t = t_ms;
        if t >= total {
            if !self.repeat {
                return 0.0;
            }
            t %= total;
        }
        for s in &self.segments {
            if t < s.duration_ms {
                return s.power_mw;
            }
            t -= s.duration_ms;
        }
        self.segments.last().map(|s| s.power_mw).unwrap_or(0.0)
    }

    /// Steady source.
    pub fn constant(name: &str, power_mw: f64, duration_ms: f64) -> HarvestTrace {
        HarvestTrace::new(
            name,
            vec![TraceSegment {
                duration_ms,
                power_mw,
            }],
        )
    }

    /// Alternating high/low source, starting high.
    pub fn square_wave(
        name: &str,
        hi_mw: f64,
        hi_ms: f64,
        lo_mw: f64,
        lo_ms: f64,
        periods: usize,
    ) -> HarvestTrace {
        let mut segments = Vec::with_capacity(periods * 2);
        for _ in 0..periods {
            segments.push(TraceSegment {
                duration_ms: hi_ms,
                power_mw: hi_mw,
            });
            segments.push(TraceSegment {
                duration_ms: lo_ms,
                power_mw: lo_mw,
            });
        }
        HarvestTrace::new(name, segments)
    }

    /// Irregular indoor-harvest profile: a strong charge ramp that clips
    /// the capacitor, a deep outage (with a faint flicker partway down)
    /// that forces a backup and a full shutdown, three shallow dips that
    /// graze the suspend band and recover, and a final brown-out caught
    /// by the returning supply just after the backup fires.
    pub fn reference_burst() -> HarvestTrace {
        let seg = |duration_ms: f64, power_mw: f64| TraceSegment {
            duration_ms,
            power_mw,
        };
        HarvestTrace::new(
            "reference-burst",
            vec![
                seg(60.0, 9.0),
                seg(9.0, 0.0),
                seg(1.0, 0.8),
                seg(45.0, 0.0),
                seg(25.0, 9.0),
                seg(11.0, 0.0),
                seg(19.0, 9.0),
                seg(11.0, 0.0),
                seg(19.0, 9.0),
                seg(11.0, 0.0),
                seg(19.0, 9.0),
                seg(9.0, 0.0),
                seg(1.0, 0.8),
                seg(40.0, 9.0),
            ],
        )
    }

    /// A copy with every segment's power scaled by a random factor in
    /// `[1 - amplitude, 1 + amplitude]`, deterministic in `seed`.
    pub fn jittered(&self, seed: u64, amplitude: f64) -> HarvestTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let segments = self
            .segments
            .iter()
            .map(|s| TraceSegment {
                duration_ms: s.duration_ms,
                power_mw: s.power_mw * (1.0 + rng.gen_range(-amplitude..=amplitude)),
            })
            .collect();
        HarvestTrace {
            name: format!("{}-j{}", self.name, seed),
            segments,
            repeat: self.repeat,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_comments_and_header() {
        let text = "# indoor profile\nduration_ms,power_mW\n10,5.0 # bright\n20,0.5\n";
        let t = HarvestTrace::parse_csv(text, "indoor").unwrap();
        assert_eq!(t.segments.len(), 2);
        assert_eq!(t.power_at(0.0), 5.0);
        assert_eq!(t.power_at(15.0), 0.5);
        let back = HarvestTrace::parse_csv(&t.to_csv(), "indoor").unwrap();
        assert_eq!(back.segments, t.segments);
    }

    #[test]
    fn repeating_traces_wrap() {
        let t = HarvestTrace::square_wave("sq", 4.0, 10.0, 1.0, 10.0, 1);
        assert_eq!(t.total_duration_ms(), 20.0);
        assert_eq!(t.power_at(5.0), 4.0);
        assert_eq!(t.power_at(15.0), 1.0);
        assert_eq!(t.power_at(25.0), 4.0);
        let mut finite = t.clone();
        finite.repeat = false;
        assert_eq!(finite.power_at(25.0), 0.0);
    }

    #[test]
    fn malformed_rows_are_rejected_with_line_numbers() {
        let err = HarvestTrace::parse_csv("10,5\nx,y\n", "t").unwrap_err();
        assert!(matches!(err, TraceError::Syntax { line: 2, .. }));
        let err = HarvestTrace::parse_csv("10\n", "t").unwrap_err();
        assert!(matches!(err, TraceError::Syntax { line: 1, .. }));
        let err = HarvestTrace::parse_csv("-5,1\n", "t").unwrap_err();
        assert!(matches!(err, TraceError::Syntax { line: 1, .. }));
        assert!(matches!(
            HarvestTrace::parse_csv("# nothing\n", "t"),
            Err(TraceError::Empty)
        ));
    }

    #[test]
    fn jitter_is_deterministic_and_bounded() {
        let t = HarvestTrace::reference_burst();
        let a = t.jittered(7, 0.2);
        let b = t.jittered(7, 0.2);
        assert_eq!(a, b);
        for (orig, j) in t.segments.iter().zip(&a.segments) {
            assert!(j.power_mw >= orig.power_mw * 0.8 - 1e-12);
            assert!(j.power_mw <= orig.power_mw * 1.2 + 1e-12);
            assert_eq!(j.duration_ms, orig.duration_ms);
        }
        assert_ne!(t.jittered(8, 0.2), a);
    }
}
