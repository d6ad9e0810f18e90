//! Bounded FIFO sliding windows with replacement-fraction tracking.
//!
//! These are the memory substrate of the pipeline: the training window,
//! both drift-test windows, and the window of predicted anomalies. Items
//! are stored oldest-first; pushing past capacity evicts the oldest item.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct SlidingWindow<T> {
    capacity: usize,
    items: VecDeque<T>,
    replaced_since_mark: usize,
    version: u64,
}

impl<T> SlidingWindow<T> {
    /// `capacity` must be at least 1.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be >= 1");
        SlidingWindow {
            capacity,
            items: VecDeque::with_capacity(capacity),
            replaced_since_mark: 0,
            version: 0,
        }
    }

    /// Append an item, evicting and returning the oldest when full.
    pub fn push(&mut self, item: T) -> Option<T> {
        self.version = self.version.wrapping_add(1);
        self.replaced_since_mark += 1;
        let evicted = if self.items.len() == self.capacity {
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(item);
        evicted
    }

    /// Fraction of the capacity pushed since the last mark, capped at 1.
    pub fn replaced_fraction(&self) -> f64 {
        let f = self.replaced_since_mark as f64 / self.capacity as f64;
        f.min(1.0)
    }

    /// Zero the replacement counter; called after each training event.
    pub fn mark_reset(&mut self) {
        self.replaced_since_mark = 0;
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.replaced_since_mark = 0;
        self.version = self.version.wrapping_add(1);
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Bumped by every push or clear; lets callers cache derived data.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Oldest-first iteration.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn to_vec(&self) -> Vec<T>
    where
        T: Clone,
    {
        self.items.iter().cloned().collect()
    }

    /// The most recent `n` items, oldest-first.
    pub fn last_n(&self, n: usize) -> Vec<T>
    where
        T: Clone,
    {
        let skip = self.items.len().saturating_sub(n);
        self.items.iter().skip(skip).cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn push_evicts_oldest_at_capacity() {
        let mut w = SlidingWindow::new(2);
        assert_eq!(w.push('a'), None);
        assert_eq!(w.push('b'), None);
        assert_eq!(w.push('c'), Some('a'));
        assert_eq!(w.to_vec(), vec!['b', 'c']);
    }

    #[test]
    fn length_never_exceeds_capacity() {
        let mut w = SlidingWindow::new(200);
        for i in 0..1000 {
            w.push(i);
            assert!(w.len() <= 200);
        }
        assert_eq!(w.len(), 200);
        assert!(w.is_full());
    }

    #[test]
    fn replaced_fraction_counts_pushes_since_mark() {
        let mut w = SlidingWindow::new(100);
        assert_eq!(w.replaced_fraction(), 0.0);
        for i in 0..100 {
            w.push(i);
        }
        assert_eq!(w.replaced_fraction(), 1.0);
        w.mark_reset();
        assert_eq!(w.replaced_fraction(), 0.0);

        let mut big = SlidingWindow::new(2000);
        for i in 0..1000 {
            big.push(i);
        }
        assert_eq!(big.replaced_fraction(), 0.5);
    }

    #[test]
    fn clear_empties_and_is_idempotent() {
        let mut w = SlidingWindow::new(3);
        w.push(1);
        w.push(2);
        w.clear();
        assert!(!w.is_full());
        assert_eq!(w.len(), 0);
        assert_eq!(w.replaced_fraction(), 0.0);
        w.clear();
        assert_eq!(w.len(), 0);
    }

    #[test]
    fn last_n_returns_most_recent() {
        let mut w = SlidingWindow::new(5);
        for i in 0..5 {
            w.push(i);
        }
        assert_eq!(w.last_n(2), vec![3, 4]);
        assert_eq!(w.last_n(10), vec![0, 1, 2, 3, 4]);
    }

    proptest! {
        #[test]
        fn fifo_order_and_capacity_hold(ops in proptest::collection::vec(0u32..1000, 1..300), cap in 1usize..20) {
            let mut w = SlidingWindow::new(cap);
            let mut model: Vec<u32> = Vec::new();
            let mut frac_prev = 0.0;
            for &x in &ops {
                let evicted = w.push(x);
                model.push(x);
                if model.len() > cap {
                    let oldest = model.remove(0);
                    prop_assert_eq!(evicted, Some(oldest));
                } else {
                    prop_assert_eq!(evicted, None);
                }
                prop_assert!(w.len() <= cap);
                prop_assert_eq!(w.to_vec(), model.clone());
                let frac = w.replaced_fraction();
                prop_assert!(frac >= frac_prev);
                frac_prev = frac;
            }
        }
    }
}
