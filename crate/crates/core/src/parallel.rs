//! Order-preserving map helpers with an optional rayon backend.
//!
//! Every parallel site in the crate maps items independently, collects in
//! input order, and reduces sequentially afterwards. Output is therefore
//! bit-identical with and without the `parallel` feature, and independent
//! of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map over a slice, parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Always-sequential map; the benchmark suite compares this against
/// [`map_collect`].
pub fn map_collect_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Map over `0..n`, parallel when the feature is on. Used for seeded
/// multi-run experiments where each index owns its state.
#[cfg(feature = "parallel")]
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_collect_preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let out = map_collect(&items, |&x| x * 2);
        let seq = map_collect_seq(&items, |&x| x * 2);
        assert_eq!(out, seq);
    }
}
