use rand::Rng;

use super::FeedbackError;

/// `count` index pairs drawn uniformly over ordered pairs of distinct
/// segments from a pool of `pool_size`. Pairs may repeat across draws.
pub fn sample_query_pairs<R: Rng + ?Sized>(
    pool_size: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>, FeedbackError> {
    if pool_size < 2 {
        return Err(FeedbackError::InsufficientSegments(pool_size));
    }
    Ok((0..count)
        .map(|_| {
            let i = rng.random_range(0..pool_size);
            let mut j = rng.random_range(0..pool_size - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect())
}
