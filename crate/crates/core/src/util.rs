//! Small shared helpers: a stable 64-bit content hash and deterministic
//! pseudo-text generation for the mock backends.

/// FNV-1a, 64-bit. Stable across platforms and releases, which matters
/// because mock embeddings and mock captions are frozen into tests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// FNV-1a over several byte slices without concatenating them.
pub fn fnv1a64_parts(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

const WORD_BANK: &[&str] = &[
    "river", "lantern", "gravel", "meadow", "harbor", "copper", "willow", "ember", "saddle",
    "quarry", "drift", "canvas", "orchard", "signal", "timber", "hollow", "ridge", "current",
    "basket", "mural", "anchor", "prairie", "summit", "ferry", "garland", "cobble", "marsh",
    "beacon", "terrace", "juniper", "slate", "harvest",
];

/// Deterministic filler prose: seeded word salad of at least `min_len`
/// bytes. Used by the mock VLM/LLM so caption text is reproducible but not
/// constant across inputs.
pub fn pseudo_text(seed: u64, min_len: usize) -> String {
    // SplitMix64; the word sequence must never change once tests freeze it.
    let mut state = seed;
    let mut next = || {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    let mut out = String::new();
    while out.len() < min_len {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(WORD_BANK[(next() % WORD_BANK.len() as u64) as usize]);
    }
    out.push('.');
    out
}
