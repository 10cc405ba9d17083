//! Conduction-delay queue between a pre-synaptic and a post-synaptic unit.

/// Ring buffer of the last `delay - 1` values of a pre-synaptic unit.
///
/// A value pushed at time `t` leaves the head at time `t + delay - 1`, i.e. it
/// reaches the post-synaptic side `delay` steps after it was emitted. With
/// `delay == 1` the queue has no slots and values pass straight through.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FifoQueue {
    delay: usize,
    slots: Vec<u8>,
    head: usize,
}

impl FifoQueue {
    /// A zero-filled queue. `delay` must be at least 1.
    pub fn new(delay: usize) -> Self {
        assert!(delay >= 1, "conduction delay must be at least 1");
        FifoQueue {
            delay,
            slots: vec![0; delay - 1],
            head: 0,
        }
    }

    /// Builds a queue from its slot contents, oldest first.
    pub fn from_slots(slots: &[u8]) -> Self {
        FifoQueue {
            delay: slots.len() + 1,
            slots: slots.to_vec(),
            head: 0,
        }
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    /// Pops the head and appends `value` at the tail, returning the popped value.
    #[inline]
    pub fn push(&mut self, value: u8) -> u8 {
        if self.slots.is_empty() {
            return value;
        }
        let out = self.slots[self.head];
        self.slots[self.head] = value;
        self.head += 1;
        if self.head == self.slots.len() {
            self.head = 0;
        }
        out
    }

    /// The value pushed `age` steps ago, `age` in `1..=slot_count()`
    /// (`age == 1` is the most recent push).
    #[inline]
    pub fn recent(&self, age: usize) -> u8 {
        let len = self.slots.len();
        debug_assert!(age >= 1 && age <= len);
        self.slots[(self.head + len - age) % len]
    }

    /// Calls `f(age)` for every slot holding a one, most recent first.
    #[inline]
    pub fn for_each_spike_age(&self, mut f: impl FnMut(usize)) {
        // slots before the head were written last
        let (newest, oldest) = self.slots.split_at(self.head);
        let recent_first = newest.iter().rev().chain(oldest.iter().rev());
        for (m, &v) in recent_first.enumerate() {
            if v != 0 {
                f(m + 1);
            }
        }
    }

    /// Slot contents, oldest first.
    pub fn contents(&self) -> Vec<u8> {
        let len = self.slots.len();
        (0..len).map(|m| self.slots[(self.head + m) % len]).collect()
    }

    /// Zero-fills the slots.
    pub fn clear(&mut self) {
        self.slots.iter_mut().for_each(|s| *s = 0);
        self.head = 0;
    }

    /// Changes the delay; the queue restarts zero-filled.
    pub fn set_delay(&mut self, delay: usize) {
        *self = FifoQueue::new(delay);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spike_ages_match_recent() {
        let mut q = FifoQueue::new(6);
        for v in [1, 0, 1, 1, 0, 0, 1, 0] {
            q.push(v);
            let mut ages = Vec::new();
            q.for_each_spike_age(|a| ages.push(a));
            let expected: Vec<usize> = (1..=q.slot_count()).filter(|&a| q.recent(a) == 1).collect();
            assert_eq!(ages, expected);
        }
    }

    #[test]
    fn shifts_like_a_fifo() {
        let mut q = FifoQueue::from_slots(&[0, 1, 0]);
        assert_eq!(q.push(1), 0);
        assert_eq!(q.contents(), vec![1, 0, 1]);
        assert_eq!(q.delay(), 4);
    }

    #[test]
    fn unit_delay_passes_through() {
        let mut q = FifoQueue::new(1);
        assert_eq!(q.slot_count(), 0);
        assert_eq!(q.push(1), 1);
        assert_eq!(q.push(0), 0);
        assert!(q.contents().is_empty());
    }

    proptest! {
        #[test]
        fn emits_input_delayed(delay in 1usize..8, bits in proptest::collection::vec(0u8..2, 0..60)) {
            let mut q = FifoQueue::new(delay);
            for (t, &b) in bits.iter().enumerate() {
                let out = q.push(b);
                // value pushed at t leaves at t + delay - 1
                let expected = if t + 1 >= delay { bits[t + 1 - delay] } else { 0 };
                prop_assert_eq!(out, expected);
                prop_assert_eq!(q.slot_count(), delay - 1);
                // holds x[t], ..., x[t-d+2]
                for age in 1..delay {
                    let src = (t + 1).checked_sub(age).map_or(0, |s| bits[s]);
                    prop_assert_eq!(q.recent(age), src);
                }
            }
        }
    }
}
