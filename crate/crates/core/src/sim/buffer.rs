//! Persistent measurement buffer with oldest-first overflow.

use std::collections::VecDeque;

use crate::domain::Measurement;

#[derive(Debug, Clone)]
pub struct MeasurementBuffer {
    entries: VecDeque<Measurement>,
    capacity: usize,
    dropped: u64,
}

impl MeasurementBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            entries: VecDeque::new(),
            capacity,
            dropped: 0,
        }
    }

    /// Append, discarding the oldest entry when full. Returns whether
    /// something was dropped.
    pub fn push(&mut self, m: Measurement) -> bool {
        let overflow = self.entries.len() == self.capacity;
        if overflow {
            self.entries.pop_front();
            self.dropped += 1;
        }
        self.entries.push_back(m);
        overflow
    }

    /// Remove up to `max` of the oldest entries.
    pub fn take(&mut self, max: usize) -> Vec<Measurement> {
        let n = max.min(self.entries.len());
        self.entries.drain(..n).collect()
    }

    /// Put entries back at the front after a failed delivery.
    pub fn restore(&mut self, batch: Vec<Measurement>) {
        for m in batch.into_iter().rev() {
            if self.entries.len() == self.capacity {
                self.dropped += 1;
                continue;
            }
            self.entries.push_front(m);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(t: i64) -> Measurement {
        Measurement::new("heartbeat__0", t, t.to_string())
    }

    #[test]
    fn drops_oldest() {
        let mut b = MeasurementBuffer::new(3);
        for t in 0..5 {
            b.push(m(t));
        }
        assert_eq!(b.dropped(), 2);
        let times: Vec<_> = b.take(10).iter().map(|x| x.time).collect();
        assert_eq!(times, vec![2, 3, 4]);
    }

    #[test]
    fn restore_keeps_order() {
        let mut b = MeasurementBuffer::new(10);
        for t in 0..4 {
            b.push(m(t));
        }
        let first = b.take(2);
        b.push(m(4));
        b.restore(first);
        let times: Vec<_> = b.take(10).iter().map(|x| x.time).collect();
        assert_eq!(times, vec![0, 1, 2, 3, 4]);
    }
}
