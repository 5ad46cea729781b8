//! Fault injection around another backend.

use sha2::{Digest, Sha256};

use super::{parse_lang_response, BackendError, CallKind, DecisionBackend, DecisionContext, LangAction, PromptPayload};
use crate::geometry::ViewDir;

/// Replaces Turn directions of wrapped navigation and recovery decisions with
/// a different direction. Whether a decision is corrupted, and how, depends
/// only on the seed and on where the agent stands (0.5 m cell, floor, 30°
/// heading sector) and, for recovery, the failed direction. Returning to the
/// same spot facing the same way repeats the same mistake.
pub struct FaultyBackend<B> {
    inner: B,
    error_rate: f64,
    seed: u64,
}

impl<B: DecisionBackend> FaultyBackend<B> {
    pub fn new(inner: B, error_rate: f64, seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&error_rate), "error rate must be in [0, 1]");
        FaultyBackend { inner, error_rate, seed }
    }

    fn draws(&self, ctx: &DecisionContext) -> (f64, u64) {
        let p = &ctx.pose;
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(((p.x / 0.5).floor() as i64).to_le_bytes());
        h.update(((p.y / 0.5).floor() as i64).to_le_bytes());
        h.update(((p.z / 0.5).floor() as i64).to_le_bytes());
        h.update((p.floor as u64).to_le_bytes());
        h.update((((p.yaw + 15.0) / 30.0).floor() as i64 % 12).to_le_bytes());
        h.update(ctx.kind.as_str().as_bytes());
        h.update(ctx.failed_dir.map_or("none", ViewDir::as_str).as_bytes());
        let d = h.finalize();
        let a = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        let b = u64::from_le_bytes(d[8..16].try_into().expect("8 bytes"));
        ((a >> 11) as f64 / (1u64 << 53) as f64, b)
    }
}

impl<B: DecisionBackend> DecisionBackend for FaultyBackend<B> {
    fn decide_lang(&self, payload: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError> {
        let raw = self.inner.decide_lang(payload, ctx)?;
        if !matches!(ctx.kind, CallKind::Navigate | CallKind::Recover) || self.error_rate == 0.0 {
            return Ok(raw);
        }
        let Ok(parsed) = parse_lang_response(&raw) else {
            return Ok(raw);
        };
        let LangAction::Turn { direction } = parsed.value.action else {
            return Ok(raw);
        };
        let (u, pick) = self.draws(ctx);
        if u >= self.error_rate {
            return Ok(raw);
        }
        let wrong: Vec<ViewDir> = ViewDir::HORIZONTAL
            .into_iter()
            .filter(|d| *d != direction && Some(*d) != ctx.failed_dir)
            .collect();
        let mut decision = parsed.value;
        decision.action = LangAction::Turn {
            direction: wrong[(pick % wrong.len() as u64) as usize],
        };
        Ok(decision.to_json())
    }

    fn decide_vis(&self, payload: &PromptPayload, ctx: &DecisionContext) -> Result<String, BackendError> {
        self.inner.decide_vis(payload, ctx)
    }

    fn name(&self) -> String {
        format!("faulty({}, rate {}, seed {})", self.inner.name(), self.error_rate, self.seed)
    }
}
