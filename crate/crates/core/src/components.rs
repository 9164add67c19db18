//! 8-connected component labeling with union-find.
//!
//! Component ids start at 1 and follow the scanline order of each
//! component's first pixel, so the output is fully determined by the input.

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            // keep the smaller index as root
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels 8-connected groups of pixels sharing the same key.
///
/// `key(i)` returns `None` for background pixels. Returns the per-pixel
/// component ids (0 for background) and the number of components.
pub fn label_components<K, F>(width: usize, height: usize, key: F) -> (Vec<u32>, u32)
where
    K: PartialEq,
    F: Fn(usize) -> Option<K>,
{
    let n = width * height;
    let keys: Vec<Option<K>> = (0..n).map(&key).collect();
    let mut set = DisjointSet::new(n);

    for row in 0..height {
        for col in 0..width {
            let i = row * width + col;
            let Some(k) = &keys[i] else { continue };
            let mut join = |j: usize| {
                if keys[j].as_ref() == Some(k) {
                    set.union(i as u32, j as u32);
                }
            };
            if col > 0 {
                join(i - 1);
            }
            if row > 0 {
                let up = i - width;
                join(up);
                if col > 0 {
                    join(up - 1);
                }
                if col + 1 < width {
                    join(up + 1);
                }
            }
        }
    }

    let mut ids = vec![0u32; n];
    let mut root_id = vec![0u32; n];
    let mut next = 0u32;
    for i in 0..n {
        if keys[i].is_none() {
            continue;
        }
        let r = set.find(i as u32) as usize;
        if root_id[r] == 0 {
            next += 1;
            root_id[r] = next;
        }
        ids[i] = root_id[r];
    }
    (ids, next)
}
