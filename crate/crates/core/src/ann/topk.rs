use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::Neighbor;

/// Ranking used everywhere: higher score first, then smaller id.
pub(crate) fn rank(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

// Heap entry ordered so the *worst* retained neighbor sits on top.
struct Entry(Neighbor);

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        rank(&self.0, &other.0)
    }
}

/// Bounded collector of the best `k` neighbors.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Entry>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, id: usize, score: f32) {
        let cand = Neighbor { id, score };
        if self.heap.len() < self.k {
            self.heap.push(Entry(cand));
        } else if let Some(worst) = self.heap.peek() {
            if rank(&cand, &worst.0) == Ordering::Less {
                self.heap.pop();
                self.heap.push(Entry(cand));
            }
        }
    }

    pub fn into_sorted(self) -> Vec<Neighbor> {
        let mut out: Vec<Neighbor> = self.heap.into_iter().map(|e| e.0).collect();
        out.sort_by(rank);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_best_with_id_tiebreak() {
        let mut t = TopK::new(3);
        for (id, s) in [(5, 0.5), (1, 0.9), (3, 0.5), (2, 0.5), (0, 0.1), (4, 0.9)] {
            t.push(id, s);
        }
        let ids: Vec<usize> = t.into_sorted().iter().map(|n| n.id).collect();
        assert_eq!(ids, vec![1, 4, 2]);
    }

    #[test]
    fn fewer_than_k() {
        let mut t = TopK::new(10);
        t.push(7, 0.0);
        assert_eq!(t.into_sorted().len(), 1);
    }
}
