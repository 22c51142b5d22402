//! Independent random streams per robot and subsystem.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    Gps = 1,
    Encoders = 2,
    Comms = 3,
}

/// SplitMix64 finalizer: a bijective 64-bit mixer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_4D1C_E4E5_B9D9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream for `(master, robot, subsystem)`.
///
/// Each component is folded in through its own mixing round, so streams of
/// different robots or subsystems share no structure even for adjacent seeds.
pub fn stream_seed(master: u64, robot: usize, subsystem: Subsystem) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ robot as u64) ^ subsystem as u64)
}

pub fn stream(master: u64, robot: usize, subsystem: Subsystem) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, robot, subsystem))
}
