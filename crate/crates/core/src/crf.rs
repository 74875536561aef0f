//! Fully connected pairwise CRF over the seed posteriors, solved by
//! synchronous mean-field updates.
//!
//! The pairwise kernel between pixels `p` and `q` is
//!
//! ```text
//! k(p, q) = w1 * exp(-|pos_p - pos_q|^2 / (2 theta_a^2) - |I_p - I_q|^2 / (2 theta_b^2))
//!         + w2 * exp(-|pos_p - pos_q|^2 / (2 theta_gamma^2))
//! ```
//!
//! with Potts compatibility, so one update is
//! `Q_i(l) ∝ exp(-psi_i(l) - sum_{j != i} k(i, j) * sum_{l' != l} Q_j(l'))`.
//! Kernel sums are not normalized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dims, invalid, Result};
use crate::tensor::{ColorImage, EmbeddingField, LabelMap};
use crate::unary::{argmax, softmax_in_place, UnaryField};

/// Default clamp applied to posteriors before taking logs.
pub const DEFAULT_CLAMP: f64 = 1e-10;

/// Largest bilateral grid (cells times channels) the fast path will allocate.
const GRID_BUDGET: usize = 1 << 25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfParams {
    /// Appearance kernel weight.
    pub w1: f64,
    /// Smoothness kernel weight.
    pub w2: f64,
    /// Appearance spatial bandwidth, pixels.
    pub theta_a: f64,
    /// Appearance color bandwidth, color units on a 0..255 scale.
    pub theta_b: f64,
    /// Smoothness spatial bandwidth, pixels.
    pub theta_gamma: f64,
    pub iterations: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            w1: 6.0,
            w2: 1.0,
            theta_a: 60.0,
            theta_b: 10.0,
            theta_gamma: 3.0,
            iterations: 10,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.w1 >= 0.0 && self.w2 >= 0.0 && self.w1.is_finite() && self.w2.is_finite()) {
            return Err(invalid("CRF weights must be finite and >= 0"));
        }
        let bands = [self.theta_a, self.theta_b, self.theta_gamma];
        if bands.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(invalid("CRF bandwidths must be finite and > 0"));
        }
        Ok(())
    }
}

/// Unary potentials `psi = -log(max(Z, clamp))`, row-major `(pixel, label)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Potentials {
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub psi: Vec<f64>,
}

impl Potentials {
    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.psi[pixel * self.k..(pixel + 1) * self.k]
    }
}

pub fn unary_potentials(z: &UnaryField, clamp: f64) -> Potentials {
    Potentials {
        height: z.height(),
        width: z.width(),
        k: z.k(),
        psi: z.values().iter().map(|&v| -v.max(clamp).ln()).collect(),
    }
}

/// Per-pixel color features used by the appearance kernel, on a 0..255 scale.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfFeatures {
    pub height: usize,
    pub width: usize,
    pub colors: Vec<[f32; 3]>,
    /// `true` when the colors were derived from embedding channels because
    /// no color image was available.
    pub from_embedding: bool,
}

impl CrfFeatures {
    pub fn from_image(image: &ColorImage) -> Self {
        Self {
            height: image.height(),
            width: image.width(),
            colors: (0..image.num_pixels())
                .map(|i| image.pixel(i).map(|v| v * 255.0))
                .collect(),
            from_embedding: false,
        }
    }

    /// Stand-in colors: the first three embedding channels, each min-max
    /// scaled to 0..255 (constant or missing channels map to 0).
    pub fn from_embedding(emb: &EmbeddingField) -> Self {
        let p = emb.num_pixels();
        let mut colors = vec![[0f32; 3]; p];
        for c in 0..emb.depth().min(3) {
            let (lo, hi) = (0..p).fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), i| {
                let v = emb.pixel(i)[c];
                (lo.min(v), hi.max(v))
            });
            if hi > lo {
                let scale = 255.0 / f64::from(hi - lo);
                for (i, col) in colors.iter_mut().enumerate() {
                    col[c] = (f64::from(emb.pixel(i)[c] - lo) * scale) as f32;
                }
            }
        }
        Self {
            height: emb.height(),
            width: emb.width(),
            colors,
            from_embedding: true,
        }
    }
}

/// Mean-field marginals, row-major `(pixel, label)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalField {
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub q: Vec<f64>,
}

impl MarginalField {
    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.q[pixel * self.k..(pixel + 1) * self.k]
    }

    /// Largest deviation of a row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        self.q
            .chunks_exact(self.k)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Per-pixel argmax (ties to the lowest label), relabeled contiguous.
    pub fn labels(&self) -> Result<LabelMap> {
        let l = self.q.chunks_exact(self.k).map(|r| argmax(r) as u32).collect();
        LabelMap::new(self.height, self.width, l)
    }

    pub fn to_embedding(&self) -> Result<EmbeddingField> {
        EmbeddingField::new(self.height, self.width, self.k, self.q.iter().map(|&v| v as f32).collect())
    }
}

fn sq_dist_pos(w: usize, p: usize, q: usize) -> f64 {
    let dy = (p / w) as f64 - (q / w) as f64;
    let dx = (p % w) as f64 - (q % w) as f64;
    dy * dy + dx * dx
}

fn sq_dist_color(a: &[f32; 3], b: &[f32; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(x - y).powi(2)).sum()
}

/// The pairwise kernel value between two pixels.
pub fn pairwise_kernel(features: &CrfFeatures, p: usize, q: usize, params: &CrfParams) -> f64 {
    let dp = sq_dist_pos(features.width, p, q);
    let dc = sq_dist_color(&features.colors[p], &features.colors[q]);
    appearance(dp, dc, params) + smoothness(dp, params)
}

#[inline]
fn appearance(dp: f64, dc: f64, params: &CrfParams) -> f64 {
    if params.w1 == 0.0 {
        return 0.0;
    }
    params.w1
        * (-dp / (2.0 * params.theta_a * params.theta_a) - dc / (2.0 * params.theta_b * params.theta_b)).exp()
}

#[inline]
fn smoothness(dp: f64, params: &CrfParams) -> f64 {
    if params.w2 == 0.0 {
        return 0.0;
    }
    params.w2 * (-dp / (2.0 * params.theta_gamma * params.theta_gamma)).exp()
}

fn check_inputs(psi: &Potentials, features: &CrfFeatures, params: &CrfParams) -> Result<()> {
    params.validate()?;
    if (psi.height, psi.width) != (features.height, features.width) {
        return Err(dims(format!(
            "potentials are {}x{}, image features are {}x{}",
            psi.height, psi.width, features.height, features.width
        )));
    }
    if psi.k == 0 || psi.psi.len() != psi.height * psi.width * psi.k {
        return Err(invalid("potential payload does not match H x W x K"));
    }
    Ok(())
}

fn initial_marginals(psi: &Potentials) -> MarginalField {
    let mut q: Vec<f64> = psi.psi.iter().map(|v| -v).collect();
    q.par_chunks_exact_mut(psi.k).for_each(softmax_in_place);
    MarginalField {
        height: psi.height,
        width: psi.width,
        k: psi.k,
        q,
    }
}

/// Pairwise messages for the current marginals: for every pixel and label,
/// `sum_{j != i} k(i, j) * sum_{l' != l} Q_j(l')`.
type MessageFn<'a> = dyn Fn(&MarginalField) -> Vec<f64> + Sync + 'a;

fn run_mean_field(
    psi: &Potentials,
    params: &CrfParams,
    messages: &MessageFn<'_>,
    observe: &mut dyn FnMut(usize, &MarginalField),
) -> Result<(MarginalField, LabelMap)> {
    let mut q = initial_marginals(psi);
    observe(0, &q);
    let k = psi.k;
    let silent = params.w1 == 0.0 && params.w2 == 0.0;
    for it in 1..=params.iterations {
        if silent {
            observe(it, &q);
            continue;
        }
        let m = messages(&q);
        q.q.par_chunks_exact_mut(k)
            .zip(psi.psi.par_chunks_exact(k))
            .zip(m.par_chunks_exact(k))
            .for_each(|((row, p), m)| {
                for l in 0..k {
                    row[l] = -p[l] - m[l];
                }
                softmax_in_place(row);
            });
        observe(it, &q);
    }
    let labels = q.labels()?;
    Ok((q, labels))
}

/// Exact `O(P^2 K)` messages.
fn bruteforce_messages(features: &CrfFeatures, params: &CrfParams, q: &MarginalField) -> Vec<f64> {
    let (p_count, k, w) = (q.height * q.width, q.k, q.width);
    let row_sums: Vec<f64> = q.q.chunks_exact(k).map(|r| r.iter().sum()).collect();
    let mut out = vec![0.0; p_count * k];
    out.par_chunks_exact_mut(k).enumerate().for_each(|(i, msg)| {
        let ci = &features.colors[i];
        let mut total = 0.0;
        let mut acc = vec![0.0; k];
        for j in 0..p_count {
            if j == i {
                continue;
            }
            let dp = sq_dist_pos(w, i, j);
            let kij = appearance(dp, sq_dist_color(ci, &features.colors[j]), params) + smoothness(dp, params);
            total += kij * row_sums[j];
            for (a, &qv) in acc.iter_mut().zip(q.row(j)) {
                *a += kij * qv;
            }
        }
        for l in 0..k {
            msg[l] = total - acc[l];
        }
    });
    out
}

/// Mean-field inference with exact all-pairs messages.
pub fn mean_field_bruteforce(
    psi: &Potentials,
    features: &CrfFeatures,
    params: &CrfParams,
) -> Result<(MarginalField, LabelMap)> {
    mean_field_bruteforce_observed(psi, features, params, &mut |_, _| {})
}

/// As [`mean_field_bruteforce`], calling `observe(iteration, Q)` after the
/// initialization (iteration 0) and after every update.
pub fn mean_field_bruteforce_observed(
    psi: &Potentials,
    features: &CrfFeatures,
    params: &CrfParams,
    observe: &mut dyn FnMut(usize, &MarginalField),
) -> Result<(MarginalField, LabelMap)> {
    check_inputs(psi, features, params)?;
    let msg = |q: &MarginalField| bruteforce_messages(features, params, q);
    run_mean_field(psi, params, &msg, observe)
}

/// Mean-field inference with truncated kernels: the smoothness kernel is a
/// separable Gaussian cut off at three bandwidths, and the appearance kernel
/// is accumulated on a bilateral grid whose blur is cut off at three
/// bandwidths (or, when such a grid would be too large, summed directly over
/// pixels within three spatial and three color bandwidths).
pub fn mean_field_fast(
    psi: &Potentials,
    features: &CrfFeatures,
    params: &CrfParams,
) -> Result<(MarginalField, LabelMap)> {
    mean_field_fast_observed(psi, features, params, &mut |_, _| {})
}

pub fn mean_field_fast_observed(
    psi: &Potentials,
    features: &CrfFeatures,
    params: &CrfParams,
    observe: &mut dyn FnMut(usize, &MarginalField),
) -> Result<(MarginalField, LabelMap)> {
    check_inputs(psi, features, params)?;
    let appearance = if params.w1 > 0.0 {
        Some(AppearanceFilter::new(features, params, psi.k + 1))
    } else {
        None
    };
    let msg = |q: &MarginalField| fast_messages(features, params, appearance.as_ref(), q);
    run_mean_field(psi, params, &msg, observe)
}

/// Per-pixel channels: `Q_j(0..K)` followed by the row sum.
fn channels(q: &MarginalField) -> Vec<f64> {
    let k = q.k;
    let mut v = Vec::with_capacity(q.q.len() + q.height * q.width);
    for r in q.q.chunks_exact(k) {
        v.extend_from_slice(r);
        v.push(r.iter().sum());
    }
    v
}

fn fast_messages(
    features: &CrfFeatures,
    params: &CrfParams,
    appearance: Option<&AppearanceFilter>,
    q: &MarginalField,
) -> Vec<f64> {
    let (h, w, k) = (q.height, q.width, q.k);
    let c = k + 1;
    let values = channels(q);
    let mut filtered = vec![0.0; values.len()];
    if params.w2 > 0.0 {
        let s = smooth_separable(&values, h, w, c, params.theta_gamma);
        for (f, (sv, v)) in filtered.iter_mut().zip(s.iter().zip(&values)) {
            // Remove the j == i term (kernel value 1 at zero distance).
            *f += params.w2 * (sv - v);
        }
    }
    if let Some(app) = appearance {
        let a = app.apply(&values);
        for (f, av) in filtered.iter_mut().zip(&a) {
            *f += params.w1 * av;
        }
    }
    let _ = features;
    let mut out = vec![0.0; h * w * k];
    for (msg, f) in out.chunks_exact_mut(k).zip(filtered.chunks_exact(c)) {
        let total = f[k];
        for l in 0..k {
            msg[l] = total - f[l];
        }
    }
    out
}

fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    (0..=2 * radius)
        .map(|t| {
            let d = t as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Separable unnormalized Gaussian filter over an `h x w x c` field, support
/// truncated at `ceil(3 sigma)` pixels. Includes the center tap.
fn smooth_separable(values: &[f64], h: usize, w: usize, c: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let taps = gaussian_taps(sigma, radius);
    let r = radius as isize;
    let mut tmp = vec![0.0; values.len()];
    tmp.par_chunks_exact_mut(w * c).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let out = &mut row[x * c..(x + 1) * c];
            for t in -r..=r {
                let xx = x as isize + t;
                if xx < 0 || xx >= w as isize {
                    continue;
                }
                let g = taps[(t + r) as usize];
                let src = &values[(y * w + xx as usize) * c..][..c];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += g * s;
                }
            }
        }
    });
    let mut out = vec![0.0; values.len()];
    out.par_chunks_exact_mut(w * c).enumerate().for_each(|(y, row)| {
        for t in -r..=r {
            let yy = y as isize + t;
            if yy < 0 || yy >= h as isize {
                continue;
            }
            let g = taps[(t + r) as usize];
            let src = &tmp[yy as usize * w * c..][..w * c];
            for (o, s) in row.iter_mut().zip(src) {
                *o += g * s;
            }
        }
    });
    out
}

/// Accumulates `sum_{j != i} exp(-|pos_i - pos_j|^2 / 2 theta_a^2 - |I_i - I_j|^2 / 2 theta_b^2) v_j`.
enum AppearanceFilter {
    Grid(BilateralGrid),
    Windowed(WindowedBilateral),
}

impl AppearanceFilter {
    fn new(features: &CrfFeatures, params: &CrfParams, channels: usize) -> Self {
        let grid = BilateralGrid::plan(features, params, channels);
        let windowed = WindowedBilateral::new(features, params);
        match grid {
            Some(g) if g.cost() <= windowed.cost(channels) => AppearanceFilter::Grid(g),
            _ => AppearanceFilter::Windowed(windowed),
        }
    }

    fn apply(&self, values: &[f64]) -> Vec<f64> {
        match self {
            AppearanceFilter::Grid(g) => g.apply(values),
            AppearanceFilter::Windowed(w) => w.apply(values),
        }
    }
}

/// Direct summation over pixels within `3 theta_a` on both spatial axes
/// whose color lies within `3 theta_b` on every channel.
struct WindowedBilateral {
    height: usize,
    width: usize,
    radius: usize,
    colors: Vec<[f32; 3]>,
    inv_2a: f64,
    inv_2b: f64,
    color_cut: f32,
}

impl WindowedBilateral {
    fn new(features: &CrfFeatures, params: &CrfParams) -> Self {
        Self {
            height: features.height,
            width: features.width,
            radius: (3.0 * params.theta_a).ceil() as usize,
            colors: features.colors.clone(),
            inv_2a: 1.0 / (2.0 * params.theta_a * params.theta_a),
            inv_2b: 1.0 / (2.0 * params.theta_b * params.theta_b),
            color_cut: (3.0 * params.theta_b) as f32,
        }
    }

    fn cost(&self, channels: usize) -> usize {
        let win = (2 * self.radius + 1).min(self.height) * (2 * self.radius + 1).min(self.width);
        self.height * self.width * win * (channels + 4)
    }

    fn apply(&self, values: &[f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let c = values.len() / (h * w);
        let r = self.radius;
        let mut out = vec![0.0; values.len()];
        out.par_chunks_exact_mut(c).enumerate().for_each(|(i, o)| {
            let (y, x) = (i / w, i % w);
            let ci = &self.colors[i];
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    let j = yy * w + xx;
                    if j == i {
                        continue;
                    }
                    let cj = &self.colors[j];
                    if (0..3).any(|d| (ci[d] - cj[d]).abs() > self.color_cut) {
                        continue;
                    }
                    let dc = sq_dist_color(ci, cj);
                    let dy = y as f64 - yy as f64;
                    let dx = x as f64 - xx as f64;
                    let kij = (-(dy * dy + dx * dx) * self.inv_2a - dc * self.inv_2b).exp();
                    for (a, v) in o.iter_mut().zip(&values[j * c..(j + 1) * c]) {
                        *a += kij * v;
                    }
                }
            }
        });
        out
    }
}

const GRID_DIMS: usize = 5;
const CORNERS: usize = 1 << GRID_DIMS;
/// Grid cells per bandwidth: spatial axes, then color axes.
const OVERSAMPLE: [f64; GRID_DIMS] = [2.0, 2.0, 1.0, 1.0, 1.0];

/// Five-dimensional (y, x, r, g, b) bilateral grid with multilinear splat
/// and slice and a separable Gaussian blur truncated at three bandwidths.
///
/// Splatting and slicing each add the variance of a linear hat (1/6 cell^2),
/// so the blur uses `sqrt(os^2 - 1/3)` cells and the result is rescaled by
/// `os / sigma_blur` per axis to keep unit kernel amplitude.
struct BilateralGrid {
    shape: [usize; GRID_DIMS],
    strides: [usize; GRID_DIMS],
    channels: usize,
    /// Per pixel: base cell index and interpolation fractions.
    base: Vec<usize>,
    frac: Vec<[f64; GRID_DIMS]>,
    taps: [Vec<f64>; GRID_DIMS],
    gain: f64,
    /// Kernel value the grid assigns to a pixel paired with itself.
    self_weight: Vec<f64>,
}

impl BilateralGrid {
    fn plan(features: &CrfFeatures, params: &CrfParams, channels: usize) -> Option<Self> {
        let (h, w) = (features.height, features.width);
        let p = h * w;
        let sigma = [params.theta_a, params.theta_a, params.theta_b, params.theta_b, params.theta_b];
        let coords: Vec<[f64; GRID_DIMS]> = (0..p)
            .map(|i| {
                let col = features.colors[i];
                let raw = [(i / w) as f64, (i % w) as f64, col[0].into(), col[1].into(), col[2].into()];
                std::array::from_fn(|d| raw[d] / sigma[d] * OVERSAMPLE[d])
            })
            .collect();
        let mut lo = [f64::INFINITY; GRID_DIMS];
        let mut hi = [f64::NEG_INFINITY; GRID_DIMS];
        for c in &coords {
            for d in 0..GRID_DIMS {
                lo[d] = lo[d].min(c[d]);
                hi[d] = hi[d].max(c[d]);
            }
        }
        let shape: [usize; GRID_DIMS] = std::array::from_fn(|d| (hi[d] - lo[d]).floor() as usize + 2);
        let cells = shape
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))?;
        if cells.checked_mul(channels)? > GRID_BUDGET {
            return None;
        }
        let mut strides = [1usize; GRID_DIMS];
        for d in (0..GRID_DIMS - 1).rev() {
            strides[d] = strides[d + 1] * shape[d + 1];
        }
        let blur_sigma: [f64; GRID_DIMS] = std::array::from_fn(|d| (OVERSAMPLE[d].powi(2) - 1.0 / 3.0).sqrt());
        let taps: [Vec<f64>; GRID_DIMS] = std::array::from_fn(|d| {
            let s = blur_sigma[d];
            gaussian_taps(s, (3.0 * s).ceil() as usize)
        });
        let gain: f64 = (0..GRID_DIMS).map(|d| OVERSAMPLE[d] / blur_sigma[d]).product();
        let mut base = Vec::with_capacity(p);
        let mut frac = Vec::with_capacity(p);
        let mut self_weight = Vec::with_capacity(p);
        for c in &coords {
            let mut b = 0;
            let mut f = [0.0; GRID_DIMS];
            let mut sw = gain;
            for d in 0..GRID_DIMS {
                let u = c[d] - lo[d];
                let cell = (u.floor() as usize).min(shape[d] - 2);
                let t = u - cell as f64;
                b += cell * strides[d];
                f[d] = t;
                let r = (taps[d].len() - 1) / 2;
                let g0 = taps[d][r];
                let g1 = taps[d].get(r + 1).copied().unwrap_or(0.0);
                sw *= ((1.0 - t).powi(2) + t * t) * g0 + 2.0 * t * (1.0 - t) * g1;
            }
            base.push(b);
            frac.push(f);
            self_weight.push(sw);
        }
        Some(Self {
            shape,
            strides,
            channels,
            base,
            frac,
            taps,
            gain,
            self_weight,
        })
    }

    fn cells(&self) -> usize {
        self.shape.iter().product()
    }

    fn cost(&self) -> usize {
        let taps: usize = self.taps.iter().map(Vec::len).sum();
        self.cells() * self.channels * taps + self.base.len() * CORNERS * self.channels * 2
    }

    fn corner(&self, pixel: usize, corner: usize) -> (usize, f64) {
        let mut idx = self.base[pixel];
        let mut wgt = 1.0;
        let f = &self.frac[pixel];
        for d in 0..GRID_DIMS {
            if corner >> d & 1 == 1 {
                idx += self.strides[d];
                wgt *= f[d];
            } else {
                wgt *= 1.0 - f[d];
            }
        }
        (idx, wgt)
    }

    fn apply(&self, values: &[f64]) -> Vec<f64> {
        let c = self.channels;
        let mut grid = vec![0.0; self.cells() * c];
        for (i, v) in values.chunks_exact(c).enumerate() {
            for corner in 0..CORNERS {
                let (idx, wgt) = self.corner(i, corner);
                if wgt == 0.0 {
                    continue;
                }
                for (g, x) in grid[idx * c..(idx + 1) * c].iter_mut().zip(v) {
                    *g += wgt * x;
                }
            }
        }
        for d in 0..GRID_DIMS {
            grid = self.blur_axis(&grid, d);
        }
        let mut out = vec![0.0; values.len()];
        out.par_chunks_exact_mut(c).enumerate().for_each(|(i, o)| {
            for corner in 0..CORNERS {
                let (idx, wgt) = self.corner(i, corner);
                if wgt == 0.0 {
                    continue;
                }
                for (a, g) in o.iter_mut().zip(&grid[idx * c..(idx + 1) * c]) {
                    *a += wgt * g;
                }
            }
            let sw = self.self_weight[i];
            for (a, v) in o.iter_mut().zip(&values[i * c..(i + 1) * c]) {
                *a = *a * self.gain - sw * v;
            }
        });
        out
    }

    fn blur_axis(&self, grid: &[f64], d: usize) -> Vec<f64> {
        let c = self.channels;
        let n = self.shape[d];
        let stride = self.strides[d];
        let taps = &self.taps[d];
        let r = ((taps.len() - 1) / 2) as isize;
        let mut out = vec![0.0; grid.len()];
        out.par_chunks_exact_mut(c).enumerate().for_each(|(cell, o)| {
            let pos = (cell / stride % n) as isize;
            for t in -r..=r {
                let q = pos + t;
                if q < 0 || q >= n as isize {
                    continue;
                }
                let src = (cell as isize + t * stride as isize) as usize;
                let g = taps[(t + r) as usize];
                for (a, v) in o.iter_mut().zip(&grid[src * c..(src + 1) * c]) {
                    *a += g * v;
                }
            }
        });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(h: usize, w: usize, k: usize, seed: u64) -> (Potentials, CrfFeatures) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = Vec::with_capacity(h * w * k);
        for _ in 0..h * w {
            let mut row: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..0.0)).collect();
            softmax_in_place(&mut row);
            z.extend(row);
        }
        let zf = UnaryField::new(h, w, k, z).unwrap();
        let colors = (0..h * w).map(|_| [rng.gen_range(0.0..255.0), rng.gen_range(0.0..255.0), rng.gen_range(0.0..255.0)]).collect();
        (
            unary_potentials(&zf, DEFAULT_CLAMP),
            CrfFeatures {
                height: h,
                width: w,
                colors,
                from_embedding: false,
            },
        )
    }

    #[test]
    fn potentials_examples() {
        let z = UnaryField::new(1, 3, 1, vec![1.0, 1.0, 1.0]).unwrap();
        assert!(unary_potentials(&z, DEFAULT_CLAMP).psi.iter().all(|&v| v == 0.0));
        let e = (-1f64).exp();
        let z = UnaryField::new(1, 1, 2, vec![e, 1.0 - e]).unwrap();
        assert!((unary_potentials(&z, DEFAULT_CLAMP).psi[0] - 1.0).abs() < 1e-15);
        let z = UnaryField::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(unary_potentials(&z, DEFAULT_CLAMP).psi[0], -(DEFAULT_CLAMP.ln()));
    }

    #[test]
    fn kernel_examples() {
        let f = CrfFeatures {
            height: 1,
            width: 2,
            colors: vec![[10.0, 20.0, 30.0]; 2],
            from_embedding: false,
        };
        let p = CrfParams::default();
        assert_eq!(pairwise_kernel(&f, 0, 0, &p), 7.0);
        let expected = 6.0 * (-1.0f64 / 7200.0).exp() + (-1.0f64 / 18.0).exp();
        assert!((pairwise_kernel(&f, 0, 1, &p) - expected).abs() < 1e-15);
        assert_eq!(pairwise_kernel(&f, 1, 0, &p), pairwise_kernel(&f, 0, 1, &p));
        let off = CrfParams {
            w1: 0.0,
            w2: 0.0,
            ..p
        };
        assert_eq!(pairwise_kernel(&f, 0, 1, &off), 0.0);
    }

    #[test]
    fn zero_weights_leave_initialization() {
        let (psi, f) = random_instance(5, 6, 3, 1);
        let params = CrfParams {
            w1: 0.0,
            w2: 0.0,
            iterations: 4,
            ..CrfParams::default()
        };
        let (q, _) = mean_field_bruteforce(&psi, &f, &params).unwrap();
        assert_eq!(q, initial_marginals(&psi));
        let (qf, _) = mean_field_fast(&psi, &f, &params).unwrap();
        assert_eq!(qf, initial_marginals(&psi));
    }

    #[test]
    fn smoothness_only_fast_matches_bruteforce_closely() {
        let (psi, f) = random_instance(12, 10, 3, 2);
        let params = CrfParams {
            w1: 0.0,
            iterations: 3,
            ..CrfParams::default()
        };
        let (qb, lb) = mean_field_bruteforce(&psi, &f, &params).unwrap();
        let (qf, lf) = mean_field_fast(&psi, &f, &params).unwrap();
        let diff = qb.q.iter().zip(&qf.q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // Tail mass beyond 3 bandwidths is dropped.
        assert!(diff < 0.05, "{diff}");
        assert_eq!(lb, lf);
    }

    #[test]
    fn windowed_appearance_matches_truncated_direct_sum() {
        let (_, f) = random_instance(6, 7, 2, 3);
        let params = CrfParams {
            theta_a: 1.5,
            ..CrfParams::default()
        };
        let win = WindowedBilateral::new(&f, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values: Vec<f64> = (0..42 * 2).map(|_| rng.gen()).collect();
        let got = win.apply(&values);
        for i in 0..42usize {
            for c in 0..2 {
                let mut s = 0.0;
                for j in 0..42usize {
                    let (dy, dx) = ((i / 7).abs_diff(j / 7), (i % 7).abs_diff(j % 7));
                    let dc = sq_dist_color(&f.colors[i], &f.colors[j]);
                    let near = (0..3).all(|d| (f.colors[i][d] - f.colors[j][d]).abs() <= 30.0);
                    if j != i && dy <= 5 && dx <= 5 && near {
                        s += appearance(sq_dist_pos(7, i, j), dc, &params) / 6.0 * values[j * 2 + c];
                    }
                }
                assert!((got[i * 2 + c] - s).abs() < 1e-12, "{} vs {s}", got[i * 2 + c]);
            }
        }
    }

    #[test]
    fn grid_approximates_appearance_sums() {
        let (_, f) = random_instance(16, 16, 2, 5);
        let params = CrfParams::default();
        let grid = BilateralGrid::plan(&f, &params, 1).unwrap();
        let values = vec![1.0; 256];
        let got = grid.apply(&values);
        let mut worst = 0.0f64;
        for i in 0..256 {
            let exact: f64 = (0..256)
                .filter(|&j| j != i)
                .map(|j| appearance(sq_dist_pos(16, i, j), sq_dist_color(&f.colors[i], &f.colors[j]), &params) / 6.0)
                .sum();
            worst = worst.max((got[i] - exact).abs() / exact.max(1.0));
        }
        assert!(worst < 0.25, "{worst}");
    }

    #[test]
    fn mismatched_features_are_rejected() {
        let (psi, _) = random_instance(3, 3, 2, 6);
        let (_, f) = random_instance(3, 4, 2, 6);
        assert!(mean_field_bruteforce(&psi, &f, &CrfParams::default()).is_err());
    }

    #[test]
    fn embedding_colors_are_scaled() {
        let emb = EmbeddingField::from_fn(1, 3, 2, |_, x, c| if c == 0 { x as f32 } else { 5.0 }).unwrap();
        let f = CrfFeatures::from_embedding(&emb);
        assert!(f.from_embedding);
        assert_eq!(f.colors, vec![[0.0, 0.0, 0.0], [127.5, 0.0, 0.0], [255.0, 0.0, 0.0]]);
    }
}
