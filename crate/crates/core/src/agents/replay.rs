use rand::seq::index;
use rand::Rng;

/// Bounded ring buffer; once full, new records overwrite the oldest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMemory<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayMemory<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Slot the next push writes to.
    pub fn insertion_index(&self) -> usize {
        self.next
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform minibatch without replacement; returns fewer than `k` records
    /// when the buffer holds fewer.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Vec<&T> {
        let k = k.min(self.items.len());
        index::sample(rng, self.items.len(), k)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.next = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ring_overwrites_oldest() {
        let mut m = ReplayMemory::new(3);
        for i in 0..5 {
            m.push(i);
        }
        assert_eq!(m.len(), 3);
        let mut v: Vec<i32> = m.iter().copied().collect();
        v.sort();
        assert_eq!(v, vec![2, 3, 4]);
        assert_eq!(m.insertion_index(), 2);
    }

    #[test]
    fn minibatch_has_no_duplicates() {
        let mut m = ReplayMemory::new(10);
        (0..10).for_each(|i| m.push(i));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mut s: Vec<i32> = m.sample(&mut rng, 6).into_iter().copied().collect();
            s.sort();
            s.dedup();
            assert_eq!(s.len(), 6);
        }
        assert_eq!(m.sample(&mut rng, 50).len(), 10);
    }

    #[test]
    fn sampling_is_uniform_within_three_sigma() {
        let n = 20;
        let mut m = ReplayMemory::new(n);
        (0..n).for_each(|i| m.push(i));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (draws, k) = (20_000, 5);
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            for &i in m.sample(&mut rng, k) {
                counts[i] += 1;
            }
        }
        let p = k as f64 / n as f64;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sd, "{c} vs {mean}");
        }
    }
}
