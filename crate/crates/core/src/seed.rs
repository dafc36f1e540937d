//! Seed derivation: every random stream in a run hangs off one master seed.

/// One round of splitmix64.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th item of a stream.
pub fn item_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index))
}

/// Named sub-seed, e.g. `named(master, "train.shuffle")`.
pub fn named(master: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the master seed
    let h = name
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01B3));
    splitmix64(master ^ h)
}
