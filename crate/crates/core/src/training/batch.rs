use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataio::EmbeddingSet;
use crate::scalar::Scalar;

/// Record indices grouped by `(language, dataset)`, in sorted group order.
pub fn batch_groups<T: Scalar>(set: &EmbeddingSet<T>) -> Vec<Vec<usize>> {
    set.groups().into_values().collect()
}

/// Balanced batch: groups are visited in random order, the first
/// `batch_size % G` of them get one extra sample, and samples are drawn
/// with replacement within each group.
pub fn sample_from_groups<R: Rng>(
    groups: &[Vec<usize>],
    batch_size: usize,
    rng: &mut R,
) -> Vec<usize> {
    let g = groups.len();
    if g == 0 || batch_size == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..g).collect();
    order.shuffle(rng);
    let (base, extra) = (batch_size / g, batch_size % g);
    let mut out = Vec::with_capacity(batch_size);
    for (rank, &gi) in order.iter().enumerate() {
        let quota = base + usize::from(rank < extra);
        let members = &groups[gi];
        for _ in 0..quota {
            out.push(members[rng.random_range(0..members.len())]);
        }
    }
    out
}

pub fn sample_batch<T: Scalar, R: Rng>(
    set: &EmbeddingSet<T>,
    batch_size: usize,
    rng: &mut R,
) -> Vec<usize> {
    sample_from_groups(&batch_groups(set), batch_size, rng)
}
