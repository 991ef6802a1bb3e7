//! Commitment scores: a per-DCA reliability measure in [0, 1] updated from
//! normalized deviations of actual injections relative to the cleared bands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::secondary::DcaClearing;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommitmentError {
    #[error("{actuals} actual responses for {dcas} DCAs")]
    LengthMismatch { dcas: usize, actuals: usize },
}

/// Band violation of `actual` against `[setpoint − half_width, setpoint + half_width]`.
/// Positive outside the band (distance to the nearest edge), nonpositive inside,
/// reaching `−half_width` at the centre.
///
/// ```
/// use lem_core::commitment::raw_error;
/// assert_eq!(raw_error(13.0, 10.0, 2.0), 1.0);
/// assert_eq!(raw_error(10.0, 10.0, 2.0), -2.0);
/// assert_eq!(raw_error(12.0, 10.0, 2.0), 0.0);
/// ```
pub fn raw_error(actual: f64, setpoint: f64, half_width: f64) -> f64 {
    let lo = setpoint - half_width;
    let hi = setpoint + half_width;
    if actual > hi {
        actual - hi
    } else if actual < lo {
        lo - actual
    } else {
        (actual - hi).max(lo - actual)
    }
}

/// Raw and normalized errors of one SM step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepErrors {
    pub raw_p: Vec<f64>,
    pub raw_q: Vec<f64>,
    pub norm_p: Vec<f64>,
    pub norm_q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitmentLedger {
    pub dca_ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub history: Vec<StepErrors>,
    /// kW per pu, for the zero-setpoint guard.
    pub s_base_kw: f64,
}

/// Setpoints below this (pu) are treated as zero when normalizing errors.
const ZERO_SETPOINT_PU: f64 = 1e-6;
/// Replacement denominator floor (pu) for near-zero setpoints.
const SETPOINT_FLOOR_PU: f64 = 1e-3;
const ZERO_NORM: f64 = 1e-12;

impl CommitmentLedger {
    /// Every DCA starts fully trusted.
    pub fn new(dca_ids: Vec<usize>, s_base_kw: f64) -> Self {
        let n = dca_ids.len();
        Self {
            dca_ids,
            scores: vec![1.0; n],
            history: Vec::new(),
            s_base_kw,
        }
    }

    /// Applies one step of the score recursion.
    pub fn update(&mut self, clearing: &[DcaClearing], actuals: &[(f64, f64)]) -> Result<&StepErrors, CommitmentError> {
        if clearing.len() != actuals.len() || clearing.len() != self.scores.len() {
            return Err(CommitmentError::LengthMismatch {
                dcas: self.scores.len().max(clearing.len()),
                actuals: actuals.len(),
            });
        }
        let raw_p: Vec<f64> = clearing
            .iter()
            .zip(actuals)
            .map(|(c, a)| raw_error(a.0, c.p_star, c.dp))
            .collect();
        let raw_q: Vec<f64> = clearing
            .iter()
            .zip(actuals)
            .map(|(c, a)| raw_error(a.1, c.q_star, c.dq))
            .collect();
        let sp_p: Vec<f64> = clearing.iter().map(|c| c.p_star).collect();
        let sp_q: Vec<f64> = clearing.iter().map(|c| c.q_star).collect();
        let norm_p = normalize_errors(&raw_p, &sp_p, self.s_base_kw);
        let norm_q = normalize_errors(&raw_q, &sp_q, self.s_base_kw);
        for (j, c) in self.scores.iter_mut().enumerate() {
            *c = (*c - (norm_p[j] + norm_q[j]) / 2.0).clamp(0.0, 1.0);
        }
        self.history.push(StepErrors {
            raw_p,
            raw_q,
            norm_p,
            norm_q,
        });
        Ok(self.history.last().expect("just pushed"))
    }
}

/// Divides each raw error by its setpoint magnitude (with the zero-setpoint
/// guard), then scales the vector to unit L2 norm. A (near-)zero vector maps to
/// all zeros.
pub fn normalize_errors(raw: &[f64], setpoints: &[f64], s_base_kw: f64) -> Vec<f64> {
    let per_setpoint: Vec<f64> = raw
        .iter()
        .zip(setpoints)
        .map(|(&e, &p)| {
            let mag = p.abs();
            let denom = if mag < ZERO_SETPOINT_PU * s_base_kw {
                mag.max(SETPOINT_FLOOR_PU * s_base_kw)
            } else {
                mag
            };
            e / denom
        })
        .collect();
    let norm = per_setpoint.iter().map(|e| e * e).sum::<f64>().sqrt();
    if norm < ZERO_NORM {
        vec![0.0; raw.len()]
    } else {
        per_setpoint.iter().map(|e| e / norm).collect()
    }
}

/// Functional form of [`CommitmentLedger::update`].
pub fn update_scores(
    ledger: &CommitmentLedger,
    clearing: &[DcaClearing],
    actuals: &[(f64, f64)],
) -> Result<CommitmentLedger, CommitmentError> {
    let mut next = ledger.clone();
    next.update(clearing, actuals)?;
    Ok(next)
}

/// How a DCA actually behaves relative to its cleared band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    /// Probability of staying inside the band at a given step.
    pub follow_prob: f64,
    /// Violation distance outside the band, as a multiple of the half-width.
    pub overshoot_scale: f64,
    /// In-band jitter, as a fraction of the half-width.
    pub noise_scale: f64,
    /// Smallest violation distance (kW), so that zero-width bands can be violated.
    pub min_violation_kw: f64,
    pub rng_seed: u64,
}

impl ResponseModel {
    pub fn validate(&self) -> bool {
        (0.0..=1.0).contains(&self.follow_prob)
            && self.overshoot_scale >= 0.0
            && self.noise_scale >= 0.0
            && self.min_violation_kw >= 0.0
    }
}

fn mix(seed: u64, dca: u64, step: u64) -> u64 {
    // splitmix64 finalizer over a combination of the three inputs
    let mut z = seed
        ^ dca.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ step.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn respond_axis(rng: &mut ChaCha8Rng, follow: bool, m: &ResponseModel, setpoint: f64, half_width: f64) -> f64 {
    if follow {
        let jitter = m.noise_scale.min(1.0) * half_width;
        setpoint + jitter * rng.random_range(-1.0..=1.0)
    } else {
        let d = (m.overshoot_scale * half_width).max(m.min_violation_kw);
        if rng.random_bool(0.5) {
            setpoint + half_width + d
        } else {
            setpoint - half_width - d
        }
    }
}

/// Actual (P̂, Q̂) per DCA at `step`. Deterministic in (model seed, DCA id, step).
pub fn simulate_response(models: &[ResponseModel], clearing: &[DcaClearing], step: u64) -> Vec<(f64, f64)> {
    models
        .iter()
        .zip(clearing)
        .map(|(m, c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(m.rng_seed, c.dca_id as u64, step));
            let follow = rng.random::<f64>() < m.follow_prob;
            let p = respond_axis(&mut rng, follow, m, c.p_star, c.dp);
            let q = respond_axis(&mut rng, follow, m, c.q_star, c.dq);
            (p, q)
        })
        .collect()
}
