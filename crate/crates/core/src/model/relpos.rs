/// Maps a signed key-minus-query offset to a bias bucket.
///
/// Small distances get their own bucket; larger ones share logarithmically
/// spaced buckets up to `max_distance`, beyond which everything is clamped
/// into the last bucket. In the bidirectional case the upper half of the
/// buckets is reserved for keys after the query. Unidirectional attention
/// only distinguishes keys at or before the query.
pub fn relative_position_bucket(rel: i64, bidirectional: bool, num_buckets: usize, max_distance: usize) -> usize {
    let mut buckets = num_buckets as i64;
    let mut ret = 0i64;
    let mut n = -rel;
    if bidirectional {
        buckets /= 2;
        if n < 0 {
            ret += buckets;
        }
        n = n.abs();
    } else {
        n = n.max(0);
    }
    let max_exact = buckets / 2;
    if n < max_exact {
        return (ret + n) as usize;
    }
    let scaled = (n as f64 / max_exact as f64).ln() / (max_distance as f64 / max_exact as f64).ln()
        * (buckets - max_exact) as f64;
    let large = (max_exact + scaled as i64).min(buckets - 1);
    (ret + large) as usize
}

/// Bucket ids for every (query, key) pair, row-major over queries.
pub fn bucket_matrix(q_len: usize, k_len: usize, bidirectional: bool, num_buckets: usize, max_distance: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(q_len * k_len);
    for q in 0..q_len {
        for k in 0..k_len {
            out.push(relative_position_bucket(k as i64 - q as i64, bidirectional, num_buckets, max_distance));
        }
    }
    out
}
