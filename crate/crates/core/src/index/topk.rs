use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

/// Greater means better: higher score, then lower id.
#[derive(Clone, Copy, Debug)]
struct Cand {
    score: f64,
    id: u32,
}

impl PartialEq for Cand {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Cand {
    fn cmp(&self, o: &Self) -> Ordering {
        // adding zero folds -0.0 into +0.0
        (self.score + 0.0).total_cmp(&(o.score + 0.0)).then(o.id.cmp(&self.id))
    }
}

/// Bounded collector of the `k` best `(score, id)` pairs.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Reverse<Cand>>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub fn push(&mut self, score: f64, id: u32) {
        if self.k == 0 {
            return;
        }
        let c = Cand { score, id };
        if self.heap.len() < self.k {
            self.heap.push(Reverse(c));
        } else if let Some(Reverse(worst)) = self.heap.peek() {
            if c > *worst {
                self.heap.pop();
                self.heap.push(Reverse(c));
            }
        }
    }

    /// Best first.
    pub fn into_sorted(self) -> Vec<(f64, u32)> {
        // ascending order of Reverse is descending order of Cand
        self.heap.into_sorted_vec().into_iter().map(|Reverse(c)| (c.score, c.id)).collect()
    }
}
