use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from length-prefixed parts, so that
/// `["ab", "c"]` and `["a", "bc"]` give different seeds.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
