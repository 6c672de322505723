use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stream id of the reorder generator; the loss generator uses stream 0 so
/// the drop pattern depends on the seed alone.
const REORDER_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
    pub reordered_pairs: u64,
}

/// Seeded datagram-channel simulator.
///
/// Each datagram is dropped independently with `p_loss` (one draw per
/// datagram from the seed's loss stream). Survivors pass through a one-slot
/// hold; each adjacent pair of survivors is swapped with `p_reorder`.
#[derive(Debug)]
pub struct LossyChannel {
    p_loss: f64,
    p_reorder: f64,
    loss_rng: ChaCha8Rng,
    reorder_rng: ChaCha8Rng,
    held: Option<Vec<u8>>,
    stats: ChannelStats,
}

impl LossyChannel {
    pub fn new(p_loss: f64, p_reorder: f64, seed: u64) -> Self {
        let p_loss = p_loss.clamp(0.0, 1.0);
        let p_reorder = p_reorder.clamp(0.0, 1.0);
        let mut reorder_rng = ChaCha8Rng::seed_from_u64(seed);
        reorder_rng.set_stream(REORDER_STREAM);
        Self {
            p_loss,
            p_reorder,
            loss_rng: ChaCha8Rng::seed_from_u64(seed),
            reorder_rng,
            held: None,
            stats: ChannelStats::default(),
        }
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    /// Sends one datagram and returns whatever the channel delivers now.
    pub fn push(&mut self, datagram: Vec<u8>) -> Vec<Vec<u8>> {
        self.stats.sent += 1;
        if self.loss_rng.gen_bool(self.p_loss) {
            self.stats.dropped += 1;
            return Vec::new();
        }
        let out = match self.held.take() {
            None => {
                self.held = Some(datagram);
                Vec::new()
            }
            Some(prev) => {
                if self.reorder_rng.gen_bool(self.p_reorder) {
                    self.stats.reordered_pairs += 1;
                    vec![datagram, prev]
                } else {
                    self.held = Some(datagram);
                    vec![prev]
                }
            }
        };
        self.stats.delivered += out.len() as u64;
        out
    }

    pub fn flush(&mut self) -> Vec<Vec<u8>> {
        let out: Vec<_> = self.held.take().into_iter().collect();
        self.stats.delivered += out.len() as u64;
        out
    }

    pub fn transmit(&mut self, datagrams: impl IntoIterator<Item = Vec<u8>>) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        for d in datagrams {
            out.extend(self.push(d));
        }
        out.extend(self.flush());
        out
    }
}
