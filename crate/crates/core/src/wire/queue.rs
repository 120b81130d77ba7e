//! Latest-wins outbound media queue.

use std::collections::VecDeque;

/// FIFO that, when bounded, evicts its oldest entry to admit a new one.
///
/// A capacity of `None` never drops, which lets latency grow without bound
/// on a congested link.
#[derive(Debug, Clone)]
pub struct MediaQueue<T> {
    items: VecDeque<T>,
    capacity: Option<usize>,
    dropped: u64,
}

impl<T> MediaQueue<T> {
    /// # Panics
    /// If `capacity` is `Some(0)`.
    pub fn new(capacity: Option<usize>) -> Self {
        assert!(capacity != Some(0), "bounded queue needs room for one item");
        Self {
            items: VecDeque::new(),
            capacity,
            dropped: 0,
        }
    }

    pub fn bounded(capacity: usize) -> Self {
        Self::new(Some(capacity))
    }

    pub fn unbounded() -> Self {
        Self::new(None)
    }

    /// Enqueues `item`, returning the evicted entry if the queue was full.
    pub fn push(&mut self, item: T) -> Option<T> {
        let evicted = match self.capacity {
            Some(cap) if self.items.len() >= cap => {
                self.dropped += 1;
                self.items.pop_front()
            }
            _ => None,
        };
        self.items.push_back(item);
        evicted
    }

    pub fn pop(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    /// Entries evicted so far.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Removes every entry, counting them as drops.
    pub fn drain_as_dropped(&mut self) -> usize {
        let n = self.items.len();
        self.dropped += n as u64;
        self.items.clear();
        n
    }
}
