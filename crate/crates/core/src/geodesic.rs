//! Geodesic distances on the 8-connected pixel graph weighted by edge
//! strength.
//!
//! Moving between 8-neighbors `p` and `q` costs `step(p, q) * (g(p) + g(q)) / 2`
//! where `step` is 1 for axis moves and `sqrt(2)` for diagonal ones. There is
//! no additive length term: in a region with zero strength every pixel is at
//! distance 0, so the distance measures how much boundary must be crossed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::grid::NEIGHBORS_8;
use crate::seeds::SeedRegionSet;
use crate::tensor::ScalarField;

/// Shortest-path distances from a source pixel set. `INFINITY` marks
/// unreachable pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicField {
    height: usize,
    width: usize,
    distances: Vec<f64>,
}

impl GeodesicField {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    #[inline]
    pub fn get(&self, index: usize) -> f64 {
        self.distances[index]
    }

    /// Smallest distance over a set of pixels.
    pub fn min_over(&self, pixels: &[usize]) -> f64 {
        pixels
            .iter()
            .map(|&p| self.distances[p])
            .fold(f64::INFINITY, f64::min)
    }

    /// Scalar-field view; unreachable pixels are stored as `f32::MAX`.
    pub fn to_scalar_field(&self) -> Result<ScalarField> {
        let data = self
            .distances
            .iter()
            .map(|&d| if d.is_finite() { d as f32 } else { f32::MAX })
            .collect();
        ScalarField::new(self.height, self.width, data)
    }
}

#[derive(PartialEq)]
struct State {
    dist: f64,
    pixel: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.pixel.cmp(&self.pixel))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Multi-source Dijkstra from `source` over the strength-weighted grid.
pub fn geodesic_field(strength: &ScalarField, source: &[usize]) -> Result<GeodesicField> {
    if source.is_empty() {
        return Err(invalid("geodesic source set is empty"));
    }
    strength.check_unit_range()?;
    let (h, w) = (strength.height(), strength.width());
    let g = strength.data();
    let mut dist = vec![f64::INFINITY; h * w];
    let mut heap = BinaryHeap::new();
    for &s in source {
        if s >= h * w {
            return Err(invalid(format!("source pixel {s} outside {h}x{w}")));
        }
        if dist[s] != 0.0 {
            dist[s] = 0.0;
            heap.push(State { dist: 0.0, pixel: s });
        }
    }
    while let Some(State { dist: d, pixel: p }) = heap.pop() {
        if d > dist[p] {
            continue;
        }
        let (y, x) = ((p / w) as isize, (p % w) as isize);
        let gp = f64::from(g[p]);
        for &(dy, dx, step) in &NEIGHBORS_8 {
            let (ny, nx) = (y + dy, x + dx);
            if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                continue;
            }
            let q = ny as usize * w + nx as usize;
            let nd = d + step * (gp + f64::from(g[q])) * 0.5;
            if nd < dist[q] {
                dist[q] = nd;
                heap.push(State { dist: nd, pixel: q });
            }
        }
    }
    Ok(GeodesicField {
        height: h,
        width: w,
        distances: dist,
    })
}

/// Geodesic distance between two pixel sets: the smallest distance from `a`
/// to any pixel of `b`.
///
/// The search always starts from the lexicographically smaller set, so the
/// result is bitwise symmetric in its arguments.
pub fn region_geodesic(strength: &ScalarField, a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("geodesic regions must be non-empty"));
    }
    let (from, to) = if canonical_order(a, b) { (a, b) } else { (b, a) };
    Ok(geodesic_field(strength, from)?.min_over(to))
}

/// `true` when `a` is the canonical source for the pair `(a, b)`.
fn canonical_order(a: &[usize], b: &[usize]) -> bool {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_unstable();
    sb.sort_unstable();
    sa <= sb
}

/// One geodesic field per seed region, computed in parallel.
pub fn seed_geodesic_fields(strength: &ScalarField, seeds: &SeedRegionSet) -> Result<Vec<GeodesicField>> {
    if (strength.height(), strength.width()) != (seeds.height(), seeds.width()) {
        return Err(crate::error::dims("edge strength and seeds differ in size"));
    }
    seeds
        .regions()
        .par_iter()
        .map(|r| geodesic_field(strength, r))
        .collect()
}

/// Region-to-region geodesic distance from precomputed per-seed fields,
/// using the same canonical direction as [`region_geodesic`].
pub fn region_geodesic_from_fields(fields: &[GeodesicField], seeds: &SeedRegionSet, i: usize, j: usize) -> f64 {
    let (a, b) = (seeds.region(i), seeds.region(j));
    if a <= b {
        fields[i].min_over(b)
    } else {
        fields[j].min_over(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive simple-path enumeration: minimum cost from `src` to every
    /// node, accumulating costs in path order.
    fn brute_force(strength: &ScalarField, src: usize) -> Vec<f64> {
        let (h, w) = (strength.height(), strength.width());
        let g = strength.data();
        let mut best = vec![f64::INFINITY; h * w];
        let mut visited = vec![false; h * w];
        fn dfs(
            p: usize,
            cost: f64,
            h: usize,
            w: usize,
            g: &[f32],
            visited: &mut [bool],
            best: &mut [f64],
        ) {
            best[p] = best[p].min(cost);
            visited[p] = true;
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for &(dy, dx, step) in &NEIGHBORS_8 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if !visited[q] {
                    let c = cost + step * (f64::from(g[p]) + f64::from(g[q])) * 0.5;
                    dfs(q, c, h, w, g, visited, best);
                }
            }
            visited[p] = false;
        }
        dfs(src, 0.0, h, w, g, &mut visited, &mut best);
        best
    }

    #[test]
    fn zero_strength_gives_zero_distances() {
        let s = ScalarField::filled(5, 6, 0.0).unwrap();
        let f = geodesic_field(&s, &[7]).unwrap();
        assert!(f.distances().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn all_pixels_as_source() {
        let s = ScalarField::filled(3, 3, 0.7).unwrap();
        let all: Vec<usize> = (0..9).collect();
        assert!(geodesic_field(&s, &all).unwrap().distances().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn empty_source_is_an_error() {
        let s = ScalarField::filled(3, 3, 0.0).unwrap();
        assert!(geodesic_field(&s, &[]).is_err());
        assert!(region_geodesic(&s, &[0], &[]).is_err());
    }

    #[test]
    fn matches_path_enumeration_on_3x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let s = ScalarField::from_fn(3, 3, |_, _| rng.gen::<f32>()).unwrap();
            let src = rng.gen_range(0..9);
            assert_eq!(geodesic_field(&s, &[src]).unwrap().distances(), &brute_force(&s, src)[..]);
        }
    }

    #[test]
    fn identical_and_touching_regions() {
        let s = ScalarField::filled(4, 4, 0.0).unwrap();
        assert_eq!(region_geodesic(&s, &[1, 2], &[1, 2]).unwrap(), 0.0);
        assert_eq!(region_geodesic(&s, &[0], &[1]).unwrap(), 0.0);
    }

    #[test]
    fn wall_costs_more_than_gap() {
        let left: Vec<usize> = (0..8).map(|y| y * 8 + 1).collect();
        let right: Vec<usize> = (0..8).map(|y| y * 8 + 6).collect();
        let walled = ScalarField::from_fn(8, 8, |_, x| if x == 4 { 1.0 } else { 0.0 }).unwrap();
        let open = ScalarField::from_fn(8, 8, |y, x| if x == 4 && y != 3 { 1.0 } else { 0.0 }).unwrap();
        let dw = region_geodesic(&walled, &left, &right).unwrap();
        let dg = region_geodesic(&open, &left, &right).unwrap();
        assert_eq!(dw, 1.0);
        assert_eq!(dg, 0.0);
        assert!(dw > dg);
    }

    #[test]
    fn region_distance_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = ScalarField::from_fn(10, 10, |_, _| rng.gen::<f32>()).unwrap();
        let a = [3, 4, 13];
        let b = [77, 88];
        assert_eq!(
            region_geodesic(&s, &a, &b).unwrap().to_bits(),
            region_geodesic(&s, &b, &a).unwrap().to_bits()
        );
    }

    #[test]
    fn infinity_is_stored_as_f32_max() {
        let f = GeodesicField {
            height: 1,
            width: 2,
            distances: vec![0.0, f64::INFINITY],
        };
        assert_eq!(f.to_scalar_field().unwrap().data(), &[0.0, f32::MAX]);
    }
}
