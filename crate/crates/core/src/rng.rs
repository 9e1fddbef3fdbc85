//! Seed derivation for independent random streams.
//!
//! Every consumer of randomness (spawning, class assignment, each latency
//! flow, each delivery flow, event placement) draws from its own ChaCha8
//! stream so that adding draws to one flow never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser. Used as the fixed hash for all seed derivation.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named random streams derived from one scenario seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Spawn,
    Class,
    OriginDestination,
    EventPlacement,
    LatencyRsu,
    LatencyI2c,
    LatencyV2c,
    LatencyCloudMonitor,
    LatencyCloudPlan,
    LatencyLocal,
    LatencyExe,
    DeliverySsms,
    DeliveryInfo,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Spawn => 1,
            Stream::Class => 2,
            Stream::OriginDestination => 3,
            Stream::EventPlacement => 4,
            Stream::LatencyRsu => 10,
            Stream::LatencyI2c => 11,
            Stream::LatencyV2c => 12,
            Stream::LatencyCloudMonitor => 13,
            Stream::LatencyCloudPlan => 14,
            Stream::LatencyLocal => 15,
            Stream::LatencyExe => 16,
            Stream::DeliverySsms => 20,
            Stream::DeliveryInfo => 21,
        }
    }
}

pub fn stream_seed(seed: u64, stream: Stream) -> u64 {
    splitmix64(seed ^ splitmix64(stream.tag()))
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, stream))
}

/// Seed for sweep point `point`, replicate `replicate`:
/// `base XOR splitmix64((point << 32) | replicate)`.
pub fn sweep_seed(base: u64, point: u32, replicate: u32) -> u64 {
    base ^ splitmix64(((point as u64) << 32) | replicate as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0,
        // i.e. the finaliser applied to multiples of the golden gamma.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(
            splitmix64(0x9E37_79B9_7F4A_7C15),
            0x6E78_9E6A_A1B9_65F4
        );
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = stream_rng(7, Stream::Spawn).random();
        let b: u64 = stream_rng(7, Stream::Spawn).random();
        let c: u64 = stream_rng(7, Stream::Class).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(sweep_seed(1, 0, 1), sweep_seed(1, 1, 0));
    }
}
