//! Dense per-pixel containers shared by every stage of the pipeline.
//!
//! All three kinds store their payload row-major as `(y, x, channel)` and are
//! immutable once constructed, so they can be shared freely between workers.

use crate::error::{invalid, Result};

/// An `H x W x N` field of per-pixel representation vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingField {
    height: usize,
    width: usize,
    depth: usize,
    data: Vec<f32>,
}

impl EmbeddingField {
    pub fn new(height: usize, width: usize, depth: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || depth == 0 {
            return Err(invalid(format!(
                "embedding dimensions must be positive, got {height}x{width}x{depth}"
            )));
        }
        let expected = height * width * depth;
        if data.len() != expected {
            return Err(invalid(format!(
                "embedding payload has {} values, expected {expected}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("embedding value at offset {pos} is not finite")));
        }
        Ok(Self {
            height,
            width,
            depth,
            data,
        })
    }

    /// Builds a field by evaluating `f(y, x, channel)` at every element.
    pub fn from_fn(
        height: usize,
        width: usize,
        depth: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * depth);
        for y in 0..height {
            for x in 0..width {
                for c in 0..depth {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, depth, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The representation vector of pixel `index` (row-major pixel index).
    #[inline]
    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.data[index * self.depth..(index + 1) * self.depth]
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> &[f32] {
        self.pixel(y * self.width + x)
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// A single real value per pixel: edge strength, distance transform values, etc.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ScalarField {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!(
                "scalar field dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(invalid(format!(
                "scalar payload has {} values, expected {}",
                data.len(),
                height * width
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("scalar value at pixel {pos} is not finite")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Checks the edge-strength contract: every value in `[0, 1]`.
    pub fn check_unit_range(&self) -> Result<()> {
        match self.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            Some(pos) => Err(invalid(format!(
                "edge strength at pixel {pos} is {} (outside [0, 1])",
                self.data[pos]
            ))),
            None => Ok(()),
        }
    }

    /// Checks the distance-transform contract: every value `>= 0`.
    pub fn check_non_negative(&self) -> Result<()> {
        match self.data.iter().position(|v| *v < 0.0) {
            Some(pos) => Err(invalid(format!(
                "distance value at pixel {pos} is negative ({})",
                self.data[pos]
            ))),
            None => Ok(()),
        }
    }

    /// Boolean mask of pixels strictly above `threshold`.
    pub fn mask_above(&self, threshold: f32) -> Vec<bool> {
        self.data.iter().map(|&v| v > threshold).collect()
    }
}

/// Integer segment labels, always compacted to the contiguous set `0..K`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    num_labels: usize,
}

impl LabelMap {
    /// Builds a label map from arbitrary non-negative ids.
    ///
    /// Ids are relabeled to `0..K` in increasing order of the original id,
    /// so an already contiguous map is returned unchanged.
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!(
                "label map dimensions must be positive, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(invalid(format!(
                "label payload has {} values, expected {}",
                labels.len(),
                height * width
            )));
        }
        let mut ids: Vec<u32> = labels.clone();
        ids.sort_unstable();
        ids.dedup();
        let num_labels = ids.len();
        let contiguous = ids.last().map_or(true, |&m| m as usize + 1 == num_labels);
        let labels = if contiguous {
            labels
        } else {
            labels
                .iter()
                .map(|l| ids.binary_search(l).expect("id collected above") as u32)
                .collect()
        };
        Ok(Self {
            height,
            width,
            labels,
            num_labels,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> u32,
    ) -> Result<Self> {
        let mut labels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(y, x));
            }
        }
        Self::new(height, width, labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Pixel count per label.
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.num_labels];
        for &l in &self.labels {
            areas[l as usize] += 1;
        }
        areas
    }

    /// Pixel indices grouped by label.
    pub fn regions(&self) -> Vec<Vec<usize>> {
        let mut regions = vec![Vec::new(); self.num_labels];
        for (i, &l) in self.labels.iter().enumerate() {
            regions[l as usize].push(i);
        }
        regions
    }
}

/// An `H x W` RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ColorImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(invalid(format!(
                "image payload has {} values, expected {}",
                data.len(),
                height * width * 3
            )));
        }
        if let Some(pos) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid(format!(
                "color value at offset {pos} is {} (outside [0, 1])",
                data[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> [f32; 3] {
        let p = &self.data[index * 3..index * 3 + 3];
        [p[0], p[1], p[2]]
    }
}

/// Uses the color triples themselves as a depth-3 embedding (the RGB baseline).
pub fn embedding_from_colors(image: &ColorImage) -> EmbeddingField {
    EmbeddingField {
        height: image.height,
        width: image.width,
        depth: 3,
        data: image.data.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_map_is_compacted_preserving_partition() {
        let m = LabelMap::new(1, 4, vec![7, 3, 7, 9]).unwrap();
        assert_eq!(m.labels(), &[1, 0, 1, 2]);
        assert_eq!(m.num_labels(), 3);
        let c = LabelMap::new(1, 3, vec![0, 2, 1]).unwrap();
        assert_eq!(c.labels(), &[0, 2, 1]);
    }

    #[test]
    fn nan_embedding_is_rejected() {
        let err = EmbeddingField::new(1, 1, 2, vec![0.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, crate::Error::Invalid(_)));
    }

    #[test]
    fn zero_sized_dimensions_are_rejected() {
        assert!(EmbeddingField::new(0, 1, 1, vec![]).is_err());
        assert!(EmbeddingField::new(1, 1, 0, vec![]).is_err());
        assert!(ScalarField::new(1, 0, vec![]).is_err());
    }

    #[test]
    fn gray_image_gives_constant_embedding() {
        let img = ColorImage::new(2, 3, vec![0.5; 18]).unwrap();
        let emb = embedding_from_colors(&img);
        assert_eq!(emb.depth(), 3);
        assert!(emb.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn checkerboard_gives_two_vectors_sqrt3_apart() {
        let mut data = Vec::new();
        for y in 0..4 {
            for x in 0..4 {
                let v = ((x + y) % 2) as f32;
                data.extend([v, v, v]);
            }
        }
        let img = ColorImage::new(4, 4, data.clone()).unwrap();
        let emb = embedding_from_colors(&img);
        assert_eq!(emb.data(), &data[..]);
        let a = emb.at(0, 0);
        let b = emb.at(0, 1);
        let d: f32 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f32>().sqrt();
        assert_eq!(d, 3f32.sqrt());
    }
}
