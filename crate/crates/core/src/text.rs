//! Surface-string normalisation and word tokenisation.

use std::sync::OnceLock;

use regex::Regex;

/// Collapses runs of whitespace to single spaces and trims. Case is preserved.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}_]+|[^\s\p{L}\p{N}_]").expect("valid token regex"))
}

/// Lowercased word tokens; punctuation characters become their own tokens.
///
/// The same function tokenises references and entity surface forms, so
/// mention matching and copy labels always refer to the same positions.
pub fn tokenize(s: &str) -> Vec<String> {
    let lower = s.to_lowercase();
    token_re().find_iter(&lower).map(|m| m.as_str().to_string()).collect()
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ")
}

/// 64-bit FNV-1a, used for stable hashed-bucket lookups of unseen strings.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
