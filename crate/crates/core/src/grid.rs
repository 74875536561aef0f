//! Pixel-grid primitives: union-find, connected components and the exact
//! squared Euclidean distance transform.

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    /// Returns `true` when the two sets were distinct.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    /// Groups `0..n` by set, ordered by each set's smallest member.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut slot = vec![usize::MAX; n];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let r = self.find(i);
            if slot[r] == usize::MAX {
                slot[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[r]].push(i);
        }
        groups
    }
}

/// 4-connected components of the `true` pixels of a row-major mask.
///
/// Components are returned in raster order of their first pixel; each holds
/// its pixel indices in increasing order.
pub fn components_4(mask: &[bool], height: usize, width: usize) -> Vec<Vec<usize>> {
    debug_assert_eq!(mask.len(), height * width);
    let mut uf = UnionFind::new(mask.len());
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !mask[i] {
                continue;
            }
            if x + 1 < width && mask[i + 1] {
                uf.union(i, i + 1);
            }
            if y + 1 < height && mask[i + width] {
                uf.union(i, i + width);
            }
        }
    }
    uf.groups()
        .into_iter()
        .filter(|g| mask[g[0]])
        .collect()
}

fn intersect(f: &[f64], q: usize, p: usize) -> f64 {
    ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
}

/// One-dimensional lower envelope pass of the Felzenszwalb-Huttenlocher
/// transform. `f` holds squared distances (`INF` where undefined) and is
/// overwritten with `min_q (p - q)^2 + f(q)`.
fn envelope_1d(f: &mut [f64], v: &mut [usize], z: &mut [f64], out: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    let mut started = false;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if !started {
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            started = true;
            continue;
        }
        let mut s = intersect(f, q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(f, q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    if !started {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        f.copy_from_slice(out);
        return;
    }
    let mut k = 0usize;
    for (p, o) in out.iter_mut().enumerate() {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        let d = p as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
    f.copy_from_slice(out);
}

/// Exact squared Euclidean distance from every pixel to the nearest `true`
/// pixel of `features`. Values are integers stored as `f64`; pixels with no
/// feature in the image get `INFINITY`.
pub fn squared_edt(features: &[bool], height: usize, width: usize) -> Vec<f64> {
    debug_assert_eq!(features.len(), height * width);
    let mut d: Vec<f64> = features
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let n = height.max(width);
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut out = vec![0f64; n];
    let mut col = vec![0f64; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = d[y * width + x];
        }
        envelope_1d(&mut col, &mut v, &mut z, &mut out[..height]);
        for y in 0..height {
            d[y * width + x] = col[y];
        }
    }
    for row in d.chunks_exact_mut(width) {
        envelope_1d(row, &mut v, &mut z, &mut out[..width]);
    }
    d
}

/// Offsets of the 8-neighborhood with their step lengths.
pub(crate) const NEIGHBORS_8: [(isize, isize, f64); 8] = [
    (-1, -1, std::f64::consts::SQRT_2),
    (-1, 0, 1.0),
    (-1, 1, std::f64::consts::SQRT_2),
    (0, -1, 1.0),
    (0, 1, 1.0),
    (1, -1, std::f64::consts::SQRT_2),
    (1, 0, 1.0),
    (1, 1, std::f64::consts::SQRT_2),
];

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_sq(features: &[bool], h: usize, w: usize) -> Vec<f64> {
        (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as i64, (i % w) as i64);
                features
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(j, _)| {
                        let (fy, fx) = ((j / w) as i64, (j % w) as i64);
                        ((y - fy).pow(2) + (x - fx).pow(2)) as f64
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn edt_matches_brute_force_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let h = rng.gen_range(1..12);
            let w = rng.gen_range(1..12);
            let p: f64 = rng.gen_range(0.0..0.5);
            let mask: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(p)).collect();
            assert_eq!(squared_edt(&mask, h, w), brute_sq(&mask, h, w));
        }
    }

    #[test]
    fn components_of_checkerboard_are_singletons() {
        let mask: Vec<bool> = (0..16).map(|i| (i / 4 + i % 4) % 2 == 0).collect();
        let comps = components_4(&mask, 4, 4);
        assert_eq!(comps.len(), 8);
        assert!(comps.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn union_find_groups_are_ordered() {
        let mut uf = UnionFind::new(5);
        uf.union(4, 1);
        uf.union(2, 3);
        assert_eq!(uf.groups(), vec![vec![0], vec![1, 4], vec![2, 3]]);
    }
}
