//! Counter-based weight generator: every weight is a pure function of
//! (seed, tensor stream, element index), so builds never depend on order.

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform in [-1, 1).
pub fn uniform(seed: u64, stream: u64, counter: u64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(stream.wrapping_mul(0xd6e8_feb8_6659_fd93) ^ splitmix64(counter)));
    let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
    2.0 * unit - 1.0
}
