//! Skew-tent chaotic neuron.
//!
//! A neuron starts at its initial activity `q` and iterates the skew-tent map
//! until the trajectory comes within `eps` of the stimulus `x`. The number of
//! iterations is the firing time; the fraction of pre-firing states above the
//! threshold `b` is the firing rate. The same `b` is both the skew of the map
//! and the symbolic threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.499;
pub const DEFAULT_NEIGHBOURHOOD: f64 = 0.25;
pub const DEFAULT_MAX_ITERS: usize = 20_000;

/// Tolerance outside `[0, 1]` that is clamped instead of rejected.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChaosError {
    #[error("invalid neuron config: {0}")]
    InvalidConfig(String),
    #[error("map state {value} lies outside [0, 1]")]
    Domain { value: f64 },
    #[error("stimulus {x} lies outside [0, 1]")]
    StimulusOutOfRange { x: f64 },
    #[error(
        "neuron (q={q}, eps={eps}) did not fire for stimulus {x} within {max_iters} iterations"
    )]
    NonFiring {
        q: f64,
        x: f64,
        eps: f64,
        max_iters: usize,
    },
}

/// Parameters of a single chaotic neuron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronConfig {
    /// Initial neural activity.
    pub q: f64,
    /// Skew of the map and discrimination threshold.
    pub b: f64,
    /// Neighbourhood half-width around the stimulus.
    pub eps: f64,
    pub max_iters: usize,
}

impl NeuronConfig {
    pub fn new(q: f64, b: f64, eps: f64, max_iters: usize) -> Result<Self, ChaosError> {
        let config = Self {
            q,
            b,
            eps,
            max_iters,
        };
        config.validate()?;
        Ok(config)
    }

    /// Neuron with the given initial activity and default `b`, `eps` and cap.
    pub fn with_q(q: f64) -> Result<Self, ChaosError> {
        Self::new(
            q,
            DEFAULT_THRESHOLD,
            DEFAULT_NEIGHBOURHOOD,
            DEFAULT_MAX_ITERS,
        )
    }

    pub fn validate(&self) -> Result<(), ChaosError> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(ChaosError::InvalidConfig(format!(
                "q must lie in (0, 1), got {}",
                self.q
            )));
        }
        if !(self.b > 0.0 && self.b < 1.0) {
            return Err(ChaosError::InvalidConfig(format!(
                "b must lie in (0, 1), got {}",
                self.b
            )));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(ChaosError::InvalidConfig(format!(
                "eps must lie in (0, 1], got {}",
                self.eps
            )));
        }
        if self.max_iters == 0 {
            return Err(ChaosError::InvalidConfig("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one neuron responding to one stimulus.
#[derive(Debug, Clone, PartialEq)]
pub struct FiringResult {
    pub firing_time: usize,
    pub firing_rate: f64,
    /// Visited states `y_0 .. y_{N-1}`, present only when requested.
    pub trace: Option<Vec<f64>>,
}

#[inline(always)]
fn step_unchecked(y: f64, b: f64) -> f64 {
    if y < b {
        y / b
    } else {
        (1.0 - y) / (1.0 - b)
    }
}

/// One iteration of the skew-tent map.
///
/// States within `1e-12` of the unit interval are clamped onto it; anything
/// further out is a domain error.
pub fn skew_tent_step(y: f64, b: f64) -> Result<f64, ChaosError> {
    if !(b > 0.0 && b < 1.0) {
        return Err(ChaosError::InvalidConfig(format!(
            "b must lie in (0, 1), got {b}"
        )));
    }
    if !(-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&y) {
        return Err(ChaosError::Domain { value: y });
    }
    Ok(step_unchecked(y.clamp(0.0, 1.0), b).clamp(0.0, 1.0))
}

/// Iterate the neuron from `q` until it enters the open `eps`-ball around `x`.
pub fn fire(config: &NeuronConfig, x: f64, keep_trace: bool) -> Result<FiringResult, ChaosError> {
    config.validate()?;
    if !(0.0..=1.0).contains(&x) {
        return Err(ChaosError::StimulusOutOfRange { x });
    }
    let NeuronConfig {
        q,
        b,
        eps,
        max_iters,
    } = *config;

    let mut trace = keep_trace.then(Vec::new);
    let mut y = q;
    let mut above = 0usize;
    for k in 0..=max_iters {
        if (y - x).abs() < eps {
            let firing_rate = if k == 0 { 0.0 } else { above as f64 / k as f64 };
            return Ok(FiringResult {
                firing_time: k,
                firing_rate,
                trace,
            });
        }
        if y > b {
            above += 1;
        }
        if let Some(t) = trace.as_mut() {
            t.push(y);
        }
        y = step_unchecked(y, b);
    }
    Err(ChaosError::NonFiring {
        q,
        x,
        eps,
        max_iters,
    })
}

/// Fraction of trace entries strictly above `b`; zero for an empty trace.
pub fn firing_rate_from_trace(trace: &[f64], b: f64) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    let above = trace.iter().filter(|&&y| y > b).count();
    above as f64 / trace.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(q: f64) -> NeuronConfig {
        NeuronConfig::with_q(q).unwrap()
    }

    #[test]
    fn step_examples() {
        assert_eq!(skew_tent_step(0.0, 0.499).unwrap(), 0.0);
        assert!((skew_tent_step(0.2, 0.499).unwrap() - 0.400_801_603_206_412_8).abs() < 1e-15);
        assert!((skew_tent_step(0.6, 0.499).unwrap() - 0.798_403_193_612_774_5).abs() < 1e-15);
    }

    #[test]
    fn step_clamps_within_slack_and_rejects_beyond() {
        assert_eq!(skew_tent_step(-1e-13, 0.499).unwrap(), 0.0);
        assert_eq!(skew_tent_step(1.0 + 1e-13, 0.499).unwrap(), 0.0);
        assert!(matches!(
            skew_tent_step(1.1, 0.499),
            Err(ChaosError::Domain { .. })
        ));
        assert!(skew_tent_step(f64::NAN, 0.499).is_err());
    }

    #[test]
    fn fires_immediately_inside_neighbourhood() {
        let r = fire(&cfg(0.3), 0.4, true).unwrap();
        assert_eq!(r.firing_time, 0);
        assert_eq!(r.firing_rate, 0.0);
        assert_eq!(r.trace.unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn q034_x09_matches_hand_trace() {
        // y0 = 0.34 (|0.34-0.9| >= 0.25, below b)
        // y1 = 0.34/0.499 = 0.68136.. (|y1-0.9| = 0.2186 < 0.25) -> fires at N=1
        let r = fire(&cfg(0.34), 0.9, true).unwrap();
        assert_eq!(r.firing_time, 1);
        assert_eq!(r.firing_rate, 0.0);
        assert_eq!(r.trace.unwrap(), vec![0.34]);
    }

    #[test]
    fn deterministic() {
        let c = cfg(0.956);
        for x in [0.0, 0.01, 0.37, 0.5, 0.99, 1.0] {
            assert_eq!(fire(&c, x, true).unwrap(), fire(&c, x, true).unwrap());
        }
    }

    #[test]
    fn rate_from_trace_examples() {
        assert_eq!(firing_rate_from_trace(&[], 0.499), 0.0);
        assert_eq!(firing_rate_from_trace(&[0.6, 0.3, 0.7, 0.1], 0.499), 0.5);
        assert_eq!(firing_rate_from_trace(&[0.1, 0.2], 0.499), 0.0);
    }

    #[test]
    fn non_firing_is_an_error() {
        // q = 0.5 maps towards 1 then 0 and sticks at the fixed point 0.
        let c = NeuronConfig::new(0.5, 0.5, 0.01, 50).unwrap();
        assert!(matches!(
            fire(&c, 0.75, false),
            Err(ChaosError::NonFiring { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(NeuronConfig::with_q(0.0).is_err());
        assert!(NeuronConfig::with_q(1.0).is_err());
        assert!(NeuronConfig::new(0.5, 0.0, 0.25, 10).is_err());
        assert!(NeuronConfig::new(0.5, 0.5, 0.0, 10).is_err());
        assert!(NeuronConfig::new(0.5, 0.5, 1.0, 10).is_ok());
        assert!(NeuronConfig::new(0.5, 0.5, 0.25, 0).is_err());
        assert!(fire(&cfg(0.5), 1.5, false).is_err());
    }

    proptest! {
        #[test]
        fn map_is_closed(y in 0.0f64..=1.0, b in 0.001f64..0.999) {
            let z = skew_tent_step(y, b).unwrap();
            prop_assert!((0.0..=1.0).contains(&z));
        }

        #[test]
        fn trace_rate_agrees_and_stop_point_is_inside(q in 0.001f64..0.999, x in 0.0f64..=1.0) {
            let c = cfg(q);
            let r = fire(&c, x, true).unwrap();
            let trace = r.trace.clone().unwrap();
            prop_assert_eq!(trace.len(), r.firing_time);
            prop_assert_eq!(firing_rate_from_trace(&trace, c.b), r.firing_rate);
            let mut y = q;
            for _ in 0..r.firing_time {
                y = skew_tent_step(y, c.b).unwrap();
            }
            prop_assert!((y - x).abs() < c.eps);
        }

        #[test]
        fn rate_is_monotone_in_threshold(
            trace in proptest::collection::vec(0.0f64..=1.0, 0..40),
            b in 0.0f64..1.0,
            db in 0.0f64..0.5,
        ) {
            let hi = (b + db).min(1.0);
            prop_assert!(firing_rate_from_trace(&trace, hi) <= firing_rate_from_trace(&trace, b));
        }
    }
}
