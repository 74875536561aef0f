//! Initial seed regions from a distance-transform field: thresholding,
//! connected components and multi-scale disk erosion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{components_4, squared_edt};
use crate::io;
use crate::tensor::{LabelMap, ScalarField};

/// Disjoint, non-empty pixel sets over an `H x W` grid. Initial seeds are
/// 4-connected; merged seeds are unions of initial ones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedRegionSet {
    height: usize,
    width: usize,
    /// Pixel indices of each region, increasing.
    regions: Vec<Vec<usize>>,
    /// Erosion radius each region was accepted at (debugging only).
    scales: Vec<u32>,
}

impl SeedRegionSet {
    /// Builds a set, checking that regions are non-empty, in range and
    /// pairwise disjoint. Connectivity is not required here: merged seeds
    /// are unions of connected regions.
    pub fn new(height: usize, width: usize, regions: Vec<Vec<usize>>, scales: Vec<u32>) -> Result<Self> {
        if scales.len() != regions.len() {
            return Err(invalid("one scale tag per region required"));
        }
        let mut owner = vec![false; height * width];
        let mut sorted = Vec::with_capacity(regions.len());
        for mut r in regions {
            if r.is_empty() {
                return Err(invalid("seed regions must be non-empty"));
            }
            r.sort_unstable();
            for &p in &r {
                if p >= owner.len() {
                    return Err(invalid(format!("pixel {p} outside {height}x{width}")));
                }
                if owner[p] {
                    return Err(invalid(format!("pixel {p} belongs to two seed regions")));
                }
                owner[p] = true;
            }
            sorted.push(r);
        }
        Ok(Self {
            height,
            width,
            regions: sorted,
            scales,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn regions(&self) -> &[Vec<usize>] {
        &self.regions
    }

    pub fn region(&self, i: usize) -> &[usize] {
        &self.regions[i]
    }

    pub fn scales(&self) -> &[u32] {
        &self.scales
    }

    /// Union of all region pixels.
    pub fn covered(&self) -> Vec<bool> {
        let mut m = vec![false; self.height * self.width];
        self.regions.iter().flatten().for_each(|&p| m[p] = true);
        m
    }

    /// Raw id map: region index + 1, 0 for unassigned pixels.
    pub fn id_map(&self) -> Vec<u32> {
        let mut ids = vec![0u32; self.height * self.width];
        for (k, r) in self.regions.iter().enumerate() {
            r.iter().for_each(|&p| ids[p] = k as u32 + 1);
        }
        ids
    }

    /// The map as a [`LabelMap`] where unassigned pixels form their own label.
    pub fn to_label_map(&self) -> Result<LabelMap> {
        LabelMap::new(self.height, self.width, self.id_map())
    }

    /// Writes the id map in the DGST label format (0 = unassigned).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_bytes(path, &io::encode_raw_labels(self.height, self.width, &self.id_map()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (h, w, ids) = io::decode_raw_labels(&io::read_bytes(path)?)?;
        let n = ids.iter().copied().max().unwrap_or(0) as usize;
        let mut regions = vec![Vec::new(); n];
        for (p, &id) in ids.iter().enumerate() {
            if id > 0 {
                regions[id as usize - 1].push(p);
            }
        }
        let scales = vec![0; n];
        Self::new(h, w, regions, scales)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedGenConfig {
    /// Pixels with DT strictly above this value seed regions.
    pub epsilon: f64,
    /// Strictly descending disk radii, in pixels.
    pub erosion_radii: Vec<u32>,
    /// Components smaller than this many pixels are discarded.
    pub min_region_area: usize,
}

impl Default for SeedGenConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.5,
            erosion_radii: vec![15, 7, 0],
            min_region_area: 10,
        }
    }
}

impl SeedGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon must be finite and > 0"));
        }
        if self.erosion_radii.is_empty() {
            return Err(invalid("at least one erosion radius is required"));
        }
        if self.erosion_radii.windows(2).any(|w| w[0] <= w[1]) {
            return Err(invalid("erosion radii must be strictly descending"));
        }
        Ok(())
    }
}

/// 4-connected components of `dt > epsilon`. An empty mask gives an empty set.
pub fn threshold_components(dt: &ScalarField, epsilon: f64) -> Result<SeedRegionSet> {
    dt.check_non_negative()?;
    let mask: Vec<bool> = dt.data().iter().map(|&v| f64::from(v) > epsilon).collect();
    let regions = components_4(&mask, dt.height(), dt.width());
    let scales = vec![0; regions.len()];
    SeedRegionSet::new(dt.height(), dt.width(), regions, scales)
}

/// Keeps a pixel iff the whole Euclidean disk of `radius` around it lies in
/// the mask; pixels beyond the image border count as outside.
pub fn erode_disk(mask: &[bool], height: usize, width: usize, radius: u32) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    // Distance to the nearest background pixel, with a one-pixel background
    // frame standing in for the outside of the image.
    let (ph, pw) = (height + 2, width + 2);
    let mut background = vec![true; ph * pw];
    for y in 0..height {
        for x in 0..width {
            background[(y + 1) * pw + x + 1] = !mask[y * width + x];
        }
    }
    let d2 = squared_edt(&background, ph, pw);
    let r2 = f64::from(radius) * f64::from(radius);
    let mut out = vec![false; height * width];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = d2[(y + 1) * pw + x + 1] > r2;
        }
    }
    out
}

/// Multi-scale seeds: for each radius (largest first) the components of the
/// eroded `dt > epsilon` mask are accepted when they are at least
/// `min_region_area` pixels and share no pixel with a previously accepted
/// region.
pub fn multiscale_seed_regions(dt: &ScalarField, cfg: &SeedGenConfig) -> Result<SeedRegionSet> {
    cfg.validate()?;
    dt.check_non_negative()?;
    let (h, w) = (dt.height(), dt.width());
    let mask: Vec<bool> = dt.data().iter().map(|&v| f64::from(v) > cfg.epsilon).collect();
    let mut taken = vec![false; h * w];
    let mut regions = Vec::new();
    let mut scales = Vec::new();
    for &r in &cfg.erosion_radii {
        let eroded = erode_disk(&mask, h, w, r);
        for comp in components_4(&eroded, h, w) {
            if comp.len() < cfg.min_region_area.max(1) || comp.iter().any(|&p| taken[p]) {
                continue;
            }
            comp.iter().for_each(|&p| taken[p] = true);
            regions.push(comp);
            scales.push(r);
        }
    }
    if regions.is_empty() {
        return Err(Error::EmptySeeds);
    }
    SeedRegionSet::new(h, w, regions, scales)
}
