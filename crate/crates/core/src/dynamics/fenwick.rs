/// Binary indexed tree over nonnegative weights with prefix-sum search.
#[derive(Debug, Clone)]
pub struct Fenwick {
    values: Vec<f64>,
    tree: Vec<f64>,
    top: usize,
}

impl Fenwick {
    pub fn new(values: &[f64]) -> Self {
        let n = values.len();
        let mut top = 1;
        while top * 2 <= n {
            top *= 2;
        }
        let mut f = Fenwick {
            values: values.to_vec(),
            tree: vec![0.0; n + 1],
            top,
        };
        f.rebuild();
        f
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Recomputes every partial sum from the stored values (clears rounding drift).
    pub fn rebuild(&mut self) {
        let n = self.values.len();
        self.tree[1..].copy_from_slice(&self.values);
        self.tree[0] = 0.0;
        for i in 1..=n {
            let parent = i + (i & i.wrapping_neg());
            if parent <= n {
                self.tree[parent] += self.tree[i];
            }
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let delta = value - self.values[i];
        if delta == 0.0 {
            return;
        }
        self.values[i] = value;
        let n = self.values.len();
        let mut k = i + 1;
        while k <= n {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
    }

    /// Sum of the first `count` values.
    pub fn prefix(&self, count: usize) -> f64 {
        let mut k = count;
        let mut acc = 0.0;
        while k > 0 {
            acc += self.tree[k];
            k -= k & k.wrapping_neg();
        }
        acc
    }

    pub fn total(&self) -> f64 {
        self.prefix(self.values.len())
    }

    /// Index `i` with `prefix(i) <= u < prefix(i + 1)`, clamped to the last index.
    pub fn search(&self, mut u: f64) -> usize {
        let n = self.values.len();
        let mut pos = 0;
        let mut step = self.top;
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= u {
                pos = next;
                u -= self.tree[next];
            }
            step >>= 1;
        }
        pos.min(n.saturating_sub(1))
    }
}
