//! Bounded multi-producer queue with a configurable overflow policy.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Overflow {
    /// Evict the oldest queued item to make room; never blocks the producer.
    DropOldest,
    /// Wait for room; lossless.
    Block,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub pushed: u64,
    pub popped: u64,
    pub dropped: u64,
    pub high_water: usize,
}

#[derive(Debug)]
struct State<T> {
    items: VecDeque<T>,
    closed: bool,
    stats: QueueStats,
}

#[derive(Debug)]
pub struct BoundedQueue<T> {
    capacity: usize,
    policy: Overflow,
    state: Mutex<State<T>>,
    not_empty: Condvar,
    not_full: Condvar,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize, policy: Overflow) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        BoundedQueue {
            capacity,
            policy,
            state: Mutex::new(State {
                items: VecDeque::with_capacity(capacity),
                closed: false,
                stats: QueueStats::default(),
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Enqueue `item`. Returns the evicted item under [`Overflow::DropOldest`].
    /// Pushing after [`BoundedQueue::close`] discards the item.
    pub fn push(&self, item: T) -> Option<T> {
        let mut st = self.state.lock().expect("queue lock");
        let mut evicted = None;
        if self.policy == Overflow::Block {
            while st.items.len() >= self.capacity && !st.closed {
                st = self.not_full.wait(st).expect("queue lock");
            }
        }
        if st.closed {
            return Some(item);
        }
        if st.items.len() >= self.capacity {
            evicted = st.items.pop_front();
            st.stats.dropped += 1;
        }
        st.items.push_back(item);
        st.stats.pushed += 1;
        st.stats.high_water = st.stats.high_water.max(st.items.len());
        drop(st);
        self.not_empty.notify_one();
        evicted
    }

    /// Next item, waiting while the queue is open and empty. `None` once the
    /// queue is closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut st = self.state.lock().expect("queue lock");
        loop {
            if let Some(item) = st.items.pop_front() {
                st.stats.popped += 1;
                drop(st);
                self.not_full.notify_one();
                return Some(item);
            }
            if st.closed {
                return None;
            }
            st = self.not_empty.wait(st).expect("queue lock");
        }
    }

    /// End-of-stream: consumers drain what is left, then see `None`.
    pub fn close(&self) {
        self.state.lock().expect("queue lock").closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("queue lock").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> QueueStats {
        self.state.lock().expect("queue lock").stats
    }
}
