use rand::Rng;
use rand_chacha::ChaCha8Rng;

use xchange_core::SimDuration;

/// Per-hop delay drawn uniformly from `[min, max]`, and independent loss.
#[derive(Clone, Debug)]
pub struct LatencyModel {
    min_us: u64,
    max_us: u64,
    loss: f64,
    rng: ChaCha8Rng,
}

impl LatencyModel {
    pub fn new(min: SimDuration, max: SimDuration, loss: f64, rng: ChaCha8Rng) -> Self {
        assert!(min <= max, "latency bounds inverted");
        LatencyModel { min_us: min.as_micros(), max_us: max.as_micros(), loss, rng }
    }

    /// Delay for one message, or `None` when it is lost.
    pub fn sample(&mut self) -> Option<SimDuration> {
        if self.loss > 0.0 && self.rng.gen_bool(self.loss) {
            return None;
        }
        Some(SimDuration::from_micros(self.rng.gen_range(self.min_us..=self.max_us)))
    }
}
