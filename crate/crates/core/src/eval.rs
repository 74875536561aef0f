//! Benchmark metrics: boundary F-measure, a region-level detection measure,
//! segmentation covering, ODS/OIS/AP aggregation and grid search.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dims, invalid, Result};
use crate::io::write_bytes;
use crate::tensor::LabelMap;

/// One precision/recall measurement. The match counts are kept so curves
/// can be pooled across images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// Machine elements (boundary pixels or regions) that were matched.
    pub machine_matched: usize,
    pub machine_total: usize,
    /// Ground-truth elements that were matched.
    pub gt_matched: usize,
    pub gt_total: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    // Nothing to get wrong: an empty set is perfectly precise/recalled.
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

impl PrPoint {
    pub fn from_counts(machine_matched: usize, machine_total: usize, gt_matched: usize, gt_total: usize) -> Self {
        let precision = ratio(machine_matched, machine_total);
        let recall = ratio(gt_matched, gt_total);
        Self {
            threshold: 0.0,
            precision,
            recall,
            f_measure: f_measure(precision, recall),
            machine_matched,
            machine_total,
            gt_matched,
            gt_total,
        }
    }

    pub fn at_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }
}

fn same_dims(machine: &LabelMap, gt: &LabelMap) -> Result<()> {
    if (machine.height(), machine.width()) != (gt.height(), gt.width()) {
        return Err(dims(format!(
            "machine segmentation is {}x{}, ground truth is {}x{}",
            machine.height(),
            machine.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// Boundary pixels: those whose right or lower neighbor has another label.
///
/// Marking only one side of each label change puts a boundary exactly one
/// pixel thick, so a boundary displaced by one pixel is one pixel away.
pub fn boundary_map(labels: &LabelMap) -> Vec<bool> {
    let (h, w) = (labels.height(), labels.width());
    let l = labels.labels();
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            (x + 1 < w && l[i] != l[i + 1]) || (y + 1 < h && l[i] != l[i + w])
        })
        .collect()
}

/// Boundary precision/recall with greedy one-to-one matching: candidate
/// pairs within Euclidean distance `tol` are taken in increasing distance
/// order (ties by machine pixel index, then ground-truth pixel index).
pub fn boundary_f(machine: &LabelMap, gt: &LabelMap, tol: f64) -> Result<PrPoint> {
    same_dims(machine, gt)?;
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(invalid(format!("boundary tolerance must be finite and >= 0, got {tol}")));
    }
    let (h, w) = (gt.height(), gt.width());
    let mb = boundary_map(machine);
    let gb = boundary_map(gt);
    let m_total = mb.iter().filter(|&&b| b).count();
    let g_total = gb.iter().filter(|&&b| b).count();
    let r = tol.floor() as isize;
    let tol2 = tol * tol;
    let mut pairs: Vec<(i64, usize, usize)> = Vec::new();
    for (i, _) in mb.iter().enumerate().filter(|(_, &b)| b) {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = dy * dy + dx * dx;
                if d2 as f64 > tol2 {
                    continue;
                }
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if gb[j] {
                    pairs.push((d2 as i64, i, j));
                }
            }
        }
    }
    pairs.sort_unstable();
    let mut m_used = vec![false; h * w];
    let mut g_used = vec![false; h * w];
    let mut matched = 0;
    for (_, i, j) in pairs {
        if !m_used[i] && !g_used[j] {
            m_used[i] = true;
            g_used[j] = true;
            matched += 1;
        }
    }
    Ok(PrPoint::from_counts(matched, m_total, matched, g_total))
}

/// Region overlap statistics between two label maps.
struct Overlaps {
    machine_areas: Vec<usize>,
    gt_areas: Vec<usize>,
    /// Sparse intersection counts keyed by (machine, gt) label.
    intersections: HashMap<(u32, u32), usize>,
}

impl Overlaps {
    fn new(machine: &LabelMap, gt: &LabelMap) -> Self {
        let mut intersections = HashMap::new();
        for (&m, &g) in machine.labels().iter().zip(gt.labels()) {
            *intersections.entry((m, g)).or_insert(0) += 1;
        }
        Self {
            machine_areas: machine.areas(),
            gt_areas: gt.areas(),
            intersections,
        }
    }

    /// Jaccard index for every overlapping pair, sorted by (machine, gt).
    fn jaccards(&self) -> Vec<(u32, u32, f64)> {
        let mut v: Vec<(u32, u32, f64)> = self
            .intersections
            .iter()
            .map(|(&(m, g), &inter)| {
                let union = self.machine_areas[m as usize] + self.gt_areas[g as usize] - inter;
                (m, g, inter as f64 / union as f64)
            })
            .collect();
        v.sort_unstable_by_key(|&(m, g, _)| (m, g));
        v
    }
}

/// Region detection measure: a machine region is a detection when its best
/// Jaccard overlap with a ground-truth region is at least `gamma`; recall is
/// the fraction of ground-truth regions claimed one-to-one (by descending
/// overlap) by such pairs.
pub fn region_f(machine: &LabelMap, gt: &LabelMap, gamma: f64) -> Result<PrPoint> {
    same_dims(machine, gt)?;
    let ov = Overlaps::new(machine, gt);
    let jac = ov.jaccards();
    let km = ov.machine_areas.len();
    let kg = ov.gt_areas.len();
    let mut best = vec![0.0f64; km];
    for &(m, _, j) in &jac {
        best[m as usize] = best[m as usize].max(j);
    }
    let detected = best.iter().filter(|&&b| b >= gamma).count();

    let mut candidates: Vec<&(u32, u32, f64)> = jac.iter().filter(|c| c.2 >= gamma).collect();
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut m_used = vec![false; km];
    let mut g_used = vec![false; kg];
    let mut claimed = 0;
    for &&(m, g, _) in &candidates {
        if !m_used[m as usize] && !g_used[g as usize] {
            m_used[m as usize] = true;
            g_used[g as usize] = true;
            claimed += 1;
        }
    }
    Ok(PrPoint::from_counts(detected, km, claimed, kg))
}

/// Segmentation covering of `gt` by `machine`: area-weighted best Jaccard
/// overlap of every ground-truth region.
pub fn covering(machine: &LabelMap, gt: &LabelMap) -> Result<f64> {
    same_dims(machine, gt)?;
    let ov = Overlaps::new(machine, gt);
    let mut best = vec![0.0f64; ov.gt_areas.len()];
    for (_, g, j) in ov.jaccards() {
        best[g as usize] = best[g as usize].max(j);
    }
    let total = gt.num_pixels() as f64;
    // Summed in sorted order so relabeling cannot change the rounding.
    let mut terms: Vec<f64> = best.iter().zip(&ov.gt_areas).map(|(b, &a)| b * a as f64).collect();
    terms.sort_unstable_by(f64::total_cmp);
    Ok(terms.iter().sum::<f64>() / total)
}

/// Which per-image measure a PR curve is built from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Measure {
    Boundary { tolerance: f64 },
    Region { gamma: f64 },
}

impl Measure {
    pub fn evaluate(&self, machine: &LabelMap, gt: &LabelMap) -> Result<PrPoint> {
        match *self {
            Measure::Boundary { tolerance } => boundary_f(machine, gt, tolerance),
            Measure::Region { gamma } => region_f(machine, gt, gamma),
        }
    }
}

/// PR curve of one image from segmentations at a series of thresholds.
pub fn pr_curve(segmentations: &[(f64, LabelMap)], gt: &LabelMap, measure: Measure) -> Result<Vec<PrPoint>> {
    segmentations
        .par_iter()
        .map(|(t, seg)| Ok(measure.evaluate(seg, gt)?.at_threshold(*t)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    /// Best F at a single dataset-wide threshold.
    pub ods: f64,
    /// Mean of each image's best F.
    pub ois: f64,
    /// Average precision of the pooled curve.
    pub ap: f64,
    /// Threshold achieving `ods`.
    pub ods_threshold: f64,
}

/// Dataset-level curve: counts summed over images at each threshold.
pub fn pooled_curve(curves: &[Vec<PrPoint>]) -> Result<Vec<PrPoint>> {
    check_curves(curves)?;
    Ok((0..curves[0].len())
        .map(|t| {
            let mut acc = [0usize; 4];
            for c in curves {
                let p = &c[t];
                acc[0] += p.machine_matched;
                acc[1] += p.machine_total;
                acc[2] += p.gt_matched;
                acc[3] += p.gt_total;
            }
            PrPoint::from_counts(acc[0], acc[1], acc[2], acc[3]).at_threshold(curves[0][t].threshold)
        })
        .collect())
}

fn check_curves(curves: &[Vec<PrPoint>]) -> Result<()> {
    let first = curves.first().ok_or_else(|| invalid("no PR curves to aggregate"))?;
    if first.is_empty() {
        return Err(invalid("PR curves must have at least one point"));
    }
    for c in curves {
        if c.len() != first.len() || c.iter().zip(first).any(|(a, b)| a.threshold != b.threshold) {
            return Err(invalid("PR curves are not sampled at a shared threshold grid"));
        }
    }
    Ok(())
}

/// Trapezoidal area under a P(R) curve after replacing each precision by
/// the best precision at equal or higher recall. No extrapolation beyond
/// the observed recall range.
pub fn average_precision(points: &[PrPoint]) -> f64 {
    let mut pr: Vec<(f64, f64)> = points.iter().map(|p| (p.recall, p.precision)).collect();
    pr.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    for i in (0..pr.len().saturating_sub(1)).rev() {
        pr[i].1 = pr[i].1.max(pr[i + 1].1);
    }
    pr.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// ODS, OIS and AP over per-image curves sharing a threshold grid.
///
/// ODS is the best, over thresholds, of the mean per-image F, so it never
/// exceeds OIS. AP is computed on the pooled-count curve.
pub fn aggregate(curves: &[Vec<PrPoint>]) -> Result<BenchmarkSummary> {
    check_curves(curves)?;
    let n = curves.len() as f64;
    let t_count = curves[0].len();
    let mut ods = f64::NEG_INFINITY;
    let mut ods_threshold = curves[0][0].threshold;
    for t in 0..t_count {
        // Images are summed in a fixed order per threshold; order-invariance
        // holds up to floating-point rounding.
        let mean = curves.iter().map(|c| c[t].f_measure).sum::<f64>() / n;
        if mean > ods {
            ods = mean;
            ods_threshold = curves[0][t].threshold;
        }
    }
    let ois = curves
        .iter()
        .map(|c| c.iter().map(|p| p.f_measure).fold(0.0, f64::max))
        .sum::<f64>()
        / n;
    let ap = average_precision(&pooled_curve(curves)?);
    Ok(BenchmarkSummary {
        ods,
        ois,
        ap,
        ods_threshold,
    })
}

/// `threshold,precision,recall,f` CSV, one row per point after the header.
pub fn pr_csv(points: &[PrPoint]) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["threshold", "precision", "recall", "f"])?;
    for p in points {
        out.write_record([p.threshold, p.precision, p.recall, p.f_measure].map(|v| v.to_string()))?;
    }
    out.into_inner().map_err(|e| invalid(e.to_string()))
}

pub fn write_pr_csv(path: &Path, points: &[PrPoint]) -> Result<()> {
    write_bytes(path, &pr_csv(points)?)
}

/// A minimal SVG plot of precision against recall.
pub fn pr_svg(points: &[PrPoint], title: &str) -> String {
    const SIZE: f64 = 320.0;
    const PAD: f64 = 40.0;
    let mut sorted: Vec<&PrPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.recall.total_cmp(&b.recall));
    let to_xy = |p: &PrPoint| (PAD + p.recall * SIZE, PAD + (1.0 - p.precision) * SIZE);
    let mut svg = String::new();
    let dim = SIZE + 2.0 * PAD;
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{dim}" height="{dim}">"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(svg, r#"<text x="{PAD}" y="{}" font-size="14">{}</text>"#, PAD - 12.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12">recall</text>"#,
        PAD + SIZE / 2.0 - 18.0,
        dim - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="8" y="{}" font-size="12" transform="rotate(-90 8 {})">precision</text>"#,
        PAD + SIZE / 2.0 + 24.0,
        PAD + SIZE / 2.0 + 24.0
    );
    let pts: Vec<String> = sorted
        .iter()
        .map(|p| {
            let (x, y) = to_xy(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        pts.join(" ")
    );
    for p in &sorted {
        let (x, y) = to_xy(p);
        let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="steelblue"/>"#);
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_pr_svg(path: &Path, points: &[PrPoint], title: &str) -> Result<()> {
    write_bytes(path, pr_svg(points, title).as_bytes())
}

/// One evaluated point of a parameter grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub values: Vec<f64>,
    /// `-inf` when evaluation failed.
    pub score: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub names: Vec<String>,
    pub best: Vec<f64>,
    pub best_score: f64,
    /// Every grid point in enumeration order (first parameter slowest).
    pub table: Vec<GridPoint>,
}

/// Exhaustive search over the Cartesian product of per-parameter values.
/// `objective` maps a parameter vector to a score to maximize; errors score
/// `-inf`. Ties keep the earliest vector in enumeration order.
pub fn grid_search<F>(space: &[(String, Vec<f64>)], objective: F) -> Result<GridSearchResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if space.is_empty() || space.iter().any(|(_, v)| v.is_empty()) {
        return Err(invalid("grid search space must be non-empty in every parameter"));
    }
    let total: usize = space.iter().map(|(_, v)| v.len()).product();
    let vectors: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            let mut v = vec![0.0; space.len()];
            for (slot, (_, values)) in v.iter_mut().zip(space).rev() {
                *slot = values[idx % values.len()];
                idx /= values.len();
            }
            v
        })
        .collect();
    let table: Vec<GridPoint> = vectors
        .into_par_iter()
        .map(|values| match objective(&values) {
            Ok(s) if !s.is_nan() => GridPoint {
                values,
                score: s,
                error: None,
            },
            Ok(_) => GridPoint {
                values,
                score: f64::NEG_INFINITY,
                error: Some("objective returned NaN".into()),
            },
            Err(e) => GridPoint {
                values,
                score: f64::NEG_INFINITY,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let mut best = 0;
    for (i, p) in table.iter().enumerate() {
        if p.score > table[best].score {
            best = i;
        }
    }
    Ok(GridSearchResult {
        names: space.iter().map(|(n, _)| n.clone()).collect(),
        best: table[best].values.clone(),
        best_score: table[best].score,
        table,
    })
}

/// Pretty JSON for a benchmark summary.
pub fn summary_json(summary: &BenchmarkSummary) -> Result<String> {
    Ok(serde_json::to_string_pretty(summary)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn lm(h: usize, w: usize, f: impl Fn(usize, usize) -> u32) -> LabelMap {
        LabelMap::from_fn(h, w, f).unwrap()
    }

    #[test]
    fn identical_maps_score_one() {
        let a = lm(8, 8, |y, x| (y / 4 * 2 + x / 4) as u32);
        assert_eq!(boundary_f(&a, &a, 2.0).unwrap().f_measure, 1.0);
        assert_eq!(region_f(&a, &a, 0.5).unwrap().f_measure, 1.0);
        assert_eq!(covering(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn missing_machine_boundary() {
        let one = lm(6, 6, |_, _| 0);
        let two = lm(6, 6, |_, x| u32::from(x >= 3));
        let p = boundary_f(&one, &two, 2.0).unwrap();
        assert_eq!((p.recall, p.f_measure), (0.0, 0.0));
    }

    #[test]
    fn shifted_boundary_depends_on_tolerance() {
        let gt = lm(6, 8, |_, x| u32::from(x >= 4));
        let shifted = lm(6, 8, |_, x| u32::from(x >= 5));
        assert_eq!(boundary_f(&shifted, &gt, 2.0).unwrap().f_measure, 1.0);
        assert_eq!(boundary_f(&shifted, &gt, 0.0).unwrap().f_measure, 0.0);
        assert_eq!(boundary_f(&shifted, &gt, 1.0).unwrap().f_measure, 1.0);
    }

    #[test]
    fn greedy_matching_is_one_to_one() {
        // Two machine boundary columns compete for one ground-truth column.
        let gt = lm(4, 8, |_, x| u32::from(x >= 4));
        let double = lm(4, 8, |_, x| match x {
            0..=3 => 0,
            4 => 1,
            _ => 2,
        });
        let p = boundary_f(&double, &gt, 2.0).unwrap();
        assert_eq!((p.machine_matched, p.machine_total, p.gt_total), (4, 8, 4));
        assert_eq!(p.precision, 0.5);
        assert_eq!(p.recall, 1.0);
    }

    #[test]
    fn region_examples() {
        let one = lm(4, 4, |_, _| 0);
        let halves = lm(4, 4, |_, x| u32::from(x >= 2));
        let p = region_f(&one, &halves, 0.5).unwrap();
        assert_eq!((p.precision, p.recall), (1.0, 0.5));
        let p = region_f(&halves, &halves, 1.5).unwrap();
        assert_eq!((p.precision, p.recall), (0.0, 0.0));
        assert_eq!(covering(&one, &halves).unwrap(), 0.5);
    }

    #[test]
    fn covering_ignores_label_ids() {
        let gt = lm(6, 6, |y, x| (y / 3 + 2 * (x / 2)) as u32 % 4);
        let m = lm(6, 6, |y, _| u32::from(y >= 2));
        let m2 = lm(6, 6, |y, _| u32::from(y < 2));
        assert_eq!(covering(&m, &gt).unwrap(), covering(&m2, &gt).unwrap());
    }

    #[test]
    fn dimension_mismatch() {
        let a = lm(3, 3, |_, _| 0);
        let b = lm(3, 4, |_, _| 0);
        assert!(matches!(boundary_f(&a, &b, 1.0), Err(Error::DimensionMismatch(_))));
        assert!(region_f(&a, &b, 0.5).is_err());
        assert!(covering(&a, &b).is_err());
    }

    #[test]
    fn f_is_harmonic_mean() {
        let p = PrPoint::from_counts(1, 4, 3, 4);
        assert_eq!(p.f_measure, 2.0 * 0.25 * 0.75 / 1.0);
        assert_eq!(PrPoint::from_counts(0, 3, 0, 3).f_measure, 0.0);
    }

    #[test]
    fn hand_built_aggregate() {
        // Image A: t=0 -> P 1/2, R 2/2; t=1 -> P 1/1, R 1/2.
        // Image B: t=0 -> P 2/4, R 2/2; t=1 -> P 0/0 (1), R 0/2.
        let a = vec![
            PrPoint::from_counts(1, 2, 2, 2).at_threshold(0.0),
            PrPoint::from_counts(1, 1, 1, 2).at_threshold(1.0),
        ];
        let b = vec![
            PrPoint::from_counts(2, 4, 2, 2).at_threshold(0.0),
            PrPoint::from_counts(0, 0, 0, 2).at_threshold(1.0),
        ];
        let s = aggregate(&[a, b]).unwrap();
        // Per-image F: A = (2/3, 2/3), B = (2/3, 0).
        assert!((s.ods - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.ods_threshold, 0.0);
        assert!((s.ois - 2.0 / 3.0).abs() < 1e-12);
        // Pooled: t=0 -> P 3/6, R 4/4; t=1 -> P 1/1, R 1/4.
        // Envelope keeps both; area = (1 - 1/4) * (1/2 + 1) / 2.
        assert!((s.ap - 0.5625).abs() < 1e-12);
    }

    #[test]
    fn single_image_ois_equals_ods() {
        let c = vec![
            PrPoint::from_counts(3, 5, 2, 7).at_threshold(0.1),
            PrPoint::from_counts(4, 4, 1, 7).at_threshold(0.2),
        ];
        let s = aggregate(&[c]).unwrap();
        assert_eq!(s.ois, s.ods);
    }

    #[test]
    fn aggregate_errors() {
        assert!(aggregate(&[]).is_err());
        let a = vec![PrPoint::from_counts(1, 1, 1, 1).at_threshold(0.0)];
        let b = vec![PrPoint::from_counts(1, 1, 1, 1).at_threshold(0.5)];
        assert!(aggregate(&[a, b]).is_err());
    }

    #[test]
    fn envelope_raises_low_precision_points() {
        let pts = [
            PrPoint::from_counts(1, 2, 1, 4),
            PrPoint::from_counts(3, 4, 2, 4),
            PrPoint::from_counts(1, 1, 4, 4),
        ];
        // Recalls 0.25, 0.5, 1 with precision 0.5, 0.75, 1 -> envelope 1, 1, 1.
        assert!((average_precision(&pts) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn grid_search_rules() {
        let single = grid_search(&[("a".into(), vec![3.0])], |_| Ok(1.0)).unwrap();
        assert_eq!(single.best, vec![3.0]);
        let space = vec![("a".into(), vec![1.0, 2.0]), ("b".into(), vec![10.0, 20.0])];
        let flat = grid_search(&space, |_| Ok(0.5)).unwrap();
        assert_eq!(flat.best, vec![1.0, 10.0]);
        let order: Vec<Vec<f64>> = flat.table.iter().map(|p| p.values.clone()).collect();
        assert_eq!(order, vec![vec![1.0, 10.0], vec![1.0, 20.0], vec![2.0, 10.0], vec![2.0, 20.0]]);
        let r = grid_search(&space, |v| {
            if v[1] == 20.0 {
                Err(invalid("boom"))
            } else {
                Ok(v[0])
            }
        })
        .unwrap();
        assert_eq!(r.best, vec![2.0, 10.0]);
        assert_eq!(r.table[1].score, f64::NEG_INFINITY);
        assert!(r.table[1].error.as_deref().unwrap().contains("boom"));
        assert!(grid_search(&[], |_| Ok(0.0)).is_err());
    }

    #[test]
    fn csv_and_svg_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![PrPoint::from_counts(1, 2, 1, 1).at_threshold(0.5)];
        let path = dir.path().join("pr.csv");
        write_pr_csv(&path, &pts).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "threshold,precision,recall,f\n0.5,0.5,1,0.6666666666666666\n");
        let svg = pr_svg(&pts, "a<b");
        assert!(svg.starts_with("<svg") && svg.contains("a&lt;b") && svg.contains("<polyline"));
    }
}
