//! Fixed-capacity FIFO experience memory with uniform sampling.

use rand::Rng;

use crate::env::Transition;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    /// Slot the next push writes to once the buffer is full.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be ≥ 1".into()));
        }
        Ok(Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Stores `t`, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// `batch_size` uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = self.storage.len();
        Ok((0..batch_size)
            .map(|_| &self.storage[rng.random_range(0..n)])
            .collect())
    }

    pub fn warmup_reached(&self, threshold: usize) -> bool {
        self.storage.len() >= threshold
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.storage.split_at(self.cursor);
        older.iter().chain(newer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Action;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(k: usize) -> Transition {
        Transition {
            state: vec![k as f64],
            action: Action::Hold,
            reward: k as f64,
            next_state: vec![k as f64 + 1.0],
            terminal: false,
        }
    }

    fn rewards(buf: &ReplayBuffer) -> Vec<f64> {
        buf.iter().map(|t| t.reward).collect()
    }

    #[test]
    fn evicts_oldest() {
        let mut buf = ReplayBuffer::new(3).unwrap();
        for k in 1..=4 {
            buf.push(tr(k));
        }
        assert_eq!(rewards(&buf), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn single_push() {
        let mut buf = ReplayBuffer::new(5).unwrap();
        buf.push(tr(0));
        assert_eq!(buf.len(), 1);
    }

    #[test]
    fn saturates_at_capacity() {
        let mut buf = ReplayBuffer::new(4).unwrap();
        for k in 0..4 + 9 {
            buf.push(tr(k));
            assert_eq!(buf.len(), (k + 1).min(4));
        }
    }

    #[test]
    fn sample_single_element() {
        let mut buf = ReplayBuffer::new(8).unwrap();
        buf.push(tr(7));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = buf.sample(4, &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|t| **t == tr(7)));
    }

    #[test]
    fn sample_empty_fails() {
        let buf = ReplayBuffer::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample(1, &mut rng), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn seeded_sampling_repeats() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        (0..10).for_each(|k| buf.push(tr(k)));
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .flat_map(|_| buf.sample(7, &mut rng).unwrap())
                .map(|t| t.reward)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn warmup_threshold() {
        let mut buf = ReplayBuffer::new(1000).unwrap();
        assert!(!buf.warmup_reached(1000));
        (0..999).for_each(|k| buf.push(tr(k)));
        assert!(!buf.warmup_reached(1000));
        buf.push(tr(999));
        assert!(buf.warmup_reached(1000));
        buf.push(tr(1000));
        assert!(buf.warmup_reached(1) && buf.warmup_reached(1000));
    }

    #[test]
    fn zero_capacity_rejected() {
        assert!(ReplayBuffer::new(0).is_err());
    }
}
