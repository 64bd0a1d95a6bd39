//! Deterministic seed derivation so every run is reproducible from one base
//! seed plus a structural path (model kind, seed index, cell key, ...).

/// splitmix64 finalizer; decorrelates nearby seeds.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `base`, a textual tag and an index.
pub fn derive_seed(base: u64, tag: &str, idx: u64) -> u64 {
    // FNV-1a over the tag, then mix with base and index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(base ^ h.wrapping_add(idx.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}
