use crate::ids::Hash32;

/// Binary Merkle root over `leaves`.
///
/// Odd levels duplicate their last node. A single leaf is its own root and the
/// empty list maps to the all-zero hash.
pub fn merkle_root(leaves: &[Hash32]) -> Hash32 {
    if leaves.is_empty() {
        return Hash32::ZERO;
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            level.push(*level.last().unwrap());
        }
        level = level
            .chunks_exact(2)
            .map(|pair| Hash32::combine(&pair[0], &pair[1]))
            .collect();
    }
    level[0]
}
