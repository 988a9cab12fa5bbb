//! Seed fan-out.
//!
//! One user-facing seed drives every random decision in a run. Module-level
//! seeds are derived with [`derive_seed`], which mixes the root seed with a
//! label through SplitMix64, so adding a new consumer never perturbs the
//! streams of existing ones.

/// SplitMix64 step: advances the state and returns the next value.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a stream seed from a root seed and a textual label.
///
/// The label is folded in FNV-1a style, then the combined state is tempered
/// through two SplitMix64 steps.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut state = root ^ h;
    splitmix64(&mut state);
    splitmix64(&mut state)
}
