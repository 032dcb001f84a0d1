//! Impression pacing: a score threshold steered so that roughly
//! `target_total` impressions are shown over a stream of `horizon_requests`.
//!
//! After every block of requests the threshold is multiplied by
//! `(shown_rate / target_rate)^γ`, where `target_rate` is the share of the
//! remaining requests that must be shown to land on target. The per-block
//! factor is bounded to `[1/4, 4]` so an empty block cannot drive the
//! threshold to zero permanently. No impression is shown once the target is
//! reached.

pub const DEFAULT_BLOCK_SIZE: u64 = 1000;
pub const DEFAULT_GAMMA: f64 = 0.5;
const MAX_STEP: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Show,
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacingState {
    pub target_total: u64,
    pub horizon_requests: u64,
    pub threshold: f64,
    pub shown_so_far: u64,
    pub seen: u64,
    pub block_size: u64,
    pub gamma: f64,
    block_seen: u64,
    block_shown: u64,
}

impl PacingState {
    pub fn new(target_total: u64, horizon_requests: u64, initial_threshold: f64) -> Self {
        PacingState {
            target_total,
            horizon_requests,
            threshold: initial_threshold.clamp(0.0, 1.0),
            shown_so_far: 0,
            seen: 0,
            block_size: DEFAULT_BLOCK_SIZE,
            gamma: DEFAULT_GAMMA,
            block_seen: 0,
            block_shown: 0,
        }
    }

    pub fn with_block(mut self, block_size: u64, gamma: f64) -> Self {
        self.block_size = block_size.max(1);
        self.gamma = gamma;
        self
    }

    /// Decides on one scored request and updates the controller.
    pub fn pace(&mut self, score: f64) -> Decision {
        let decision = if self.shown_so_far < self.target_total && score >= self.threshold {
            Decision::Show
        } else {
            Decision::Skip
        };
        self.seen += 1;
        self.block_seen += 1;
        if decision == Decision::Show {
            self.shown_so_far += 1;
            self.block_shown += 1;
        }
        if self.block_seen == self.block_size {
            self.end_block();
        }
        decision
    }

    fn end_block(&mut self) {
        let remaining_requests = self.horizon_requests.saturating_sub(self.seen);
        let remaining_target = self.target_total.saturating_sub(self.shown_so_far);
        if remaining_requests > 0 && remaining_target > 0 {
            let target_rate = remaining_target as f64 / remaining_requests as f64;
            let shown_rate = self.block_shown as f64 / self.block_seen as f64;
            let step = (shown_rate / target_rate).powf(self.gamma).clamp(1.0 / MAX_STEP, MAX_STEP);
            self.threshold = (self.threshold * step).clamp(0.0, 1.0);
        }
        self.block_seen = 0;
        self.block_shown = 0;
    }
}
