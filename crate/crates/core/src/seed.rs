//! Seed derivation shared by every stochastic component.

/// Mixes `root` and `stream` into an independent 64-bit seed (SplitMix64
/// finalizer over the pair).
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut z = root
        ^ stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named streams so that components never share random sequences.
pub mod stream {
    pub const SCENARIO: u64 = 0x5C3A_0001;
    pub const SCHEDULE: u64 = 0x5C3A_0002;
    pub const RELPERM: u64 = 0x5C3A_0003;
    pub const HELD_OUT: u64 = 0x5C3A_0004;
    pub const MLD: u64 = 0x5C3A_0010;
    pub const AGENT: u64 = 0x5C3A_0020;
    pub const DE: u64 = 0x5C3A_0030;
    pub const RANDOM: u64 = 0x5C3A_0031;
}
