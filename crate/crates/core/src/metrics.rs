//! DICE similarity and average symmetric surface distance, plus the
//! mean ± std aggregation used for result tables.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::edt::squared_distance_to_seeds;
use crate::levelset::boundary_of;
use crate::{Error, Grid, Result};

/// Hard class-index mask with physical pixel spacing in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    labels: Grid<u8>,
    classes: usize,
    spacing: (f64, f64),
}

impl LabelMask {
    pub fn new(labels: Grid<u8>, classes: usize, spacing: (f64, f64)) -> Result<Self> {
        if labels.iter().any(|&l| l as usize >= classes) {
            return Err(Error::InvalidValue("label index out of range"));
        }
        if !(spacing.0 > 0.0 && spacing.1 > 0.0) {
            return Err(Error::InvalidValue("spacing must be positive"));
        }
        Ok(Self { labels, classes, spacing })
    }

    pub fn labels(&self) -> &Grid<u8> {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn spacing(&self) -> (f64, f64) {
        self.spacing
    }

    pub fn with_spacing(&self, spacing: (f64, f64)) -> Result<Self> {
        Self::new(self.labels.clone(), self.classes, spacing)
    }

    fn check_compatible(&self, other: &LabelMask) -> Result<()> {
        if self.labels.shape() != other.labels.shape() || self.spacing != other.spacing {
            return Err(Error::ShapeMismatch {
                expected: (self.labels.height(), self.labels.width(), 1),
                found: (other.labels.height(), other.labels.width(), 1),
            });
        }
        Ok(())
    }

    /// Surface (boundary) pixels of one class region.
    pub fn surface(&self, class_id: u8) -> Grid<bool> {
        let (h, w) = self.labels.shape();
        boundary_of(h, w, |a, b| self.labels[(a, b)] == class_id)
    }
}

/// DICE in percent; 100 when the class is absent from both masks.
pub fn dice_coefficient(pred: &LabelMask, gt: &LabelMask, class_id: u8) -> Result<f64> {
    pred.check_compatible(gt)?;
    let (mut inter, mut size_p, mut size_g) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.labels.iter().zip(gt.labels.iter()) {
        let (p, g) = (p == class_id, g == class_id);
        size_p += p as usize;
        size_g += g as usize;
        inter += (p && g) as usize;
    }
    if size_p + size_g == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * inter as f64 / (size_p + size_g) as f64)
}

/// Average symmetric surface distance outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceDistance {
    /// Distance in mm.
    Defined(f64),
    /// The class region is empty in exactly one of the two masks.
    Undefined,
}

impl SurfaceDistance {
    pub fn value(self) -> Option<f64> {
        match self {
            SurfaceDistance::Defined(v) => Some(v),
            SurfaceDistance::Undefined => None,
        }
    }
}

pub fn asd(pred: &LabelMask, gt: &LabelMask, class_id: u8) -> Result<SurfaceDistance> {
    pred.check_compatible(gt)?;
    let surf_p = pred.surface(class_id);
    let surf_g = gt.surface(class_id);
    let count_p = surf_p.iter().filter(|&&s| s).count();
    let count_g = surf_g.iter().filter(|&&s| s).count();
    match (count_p, count_g) {
        (0, 0) => return Ok(SurfaceDistance::Defined(0.0)),
        (0, _) | (_, 0) => return Ok(SurfaceDistance::Undefined),
        _ => {}
    }
    let (rs, cs) = pred.spacing;
    let to_g = squared_distance_to_seeds(&surf_g, rs, cs);
    let to_p = squared_distance_to_seeds(&surf_p, rs, cs);
    let directed = |from: &Grid<bool>, field: &Grid<f64>| -> f64 {
        from.iter()
            .zip(field.iter())
            .filter(|(s, _)| **s)
            .map(|(_, d2)| libm::sqrt(*d2))
            .sum()
    };
    let total = directed(&surf_p, &to_g) + directed(&surf_g, &to_p);
    Ok(SurfaceDistance::Defined(total / (count_p + count_g) as f64))
}

/// One evaluated (sample, class) pair.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SampleMetrics {
    pub sample_id: String,
    pub class_id: u8,
    pub dice_pct: f64,
    /// `None` when the surface distance is undefined.
    pub asd_mm: Option<f64>,
}

/// Mean and population standard deviation of a set of rows.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    pub mean_dice: f64,
    pub std_dice: f64,
    pub mean_asd: Option<f64>,
    pub std_asd: Option<f64>,
    pub rows: usize,
    pub undefined_asd: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub per_sample: Vec<SampleMetrics>,
    pub per_class: Vec<(u8, Summary)>,
    /// Pooled over all foreground-class rows.
    pub overall: Summary,
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, libm::sqrt(var)))
}

fn summarize<'a>(rows: impl Iterator<Item = &'a SampleMetrics>) -> Option<Summary> {
    let mut dice = Vec::new();
    let mut dist = Vec::new();
    let mut undefined = 0;
    for r in rows {
        dice.push(r.dice_pct);
        match r.asd_mm {
            Some(v) => dist.push(v),
            None => undefined += 1,
        }
    }
    let (mean_dice, std_dice) = mean_std(&dice)?;
    let asd = mean_std(&dist);
    Some(Summary {
        mean_dice,
        std_dice,
        mean_asd: asd.map(|a| a.0),
        std_asd: asd.map(|a| a.1),
        rows: dice.len(),
        undefined_asd: undefined,
    })
}

pub fn aggregate(per_sample: Vec<SampleMetrics>) -> Result<MetricReport> {
    if per_sample.is_empty() {
        return Err(Error::NoDefinedSamples);
    }
    let mut classes: Vec<u8> = per_sample.iter().map(|r| r.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let per_class = classes
        .iter()
        .filter_map(|&c| summarize(per_sample.iter().filter(|r| r.class_id == c)).map(|s| (c, s)))
        .collect();
    let has_foreground = classes.iter().any(|&c| c != 0);
    let overall = summarize(per_sample.iter().filter(|r| !has_foreground || r.class_id != 0))
        .ok_or(Error::NoDefinedSamples)?;
    Ok(MetricReport {
        per_sample,
        per_class,
        overall,
    })
}

/// `"82.77 ± 10.12"`, or `"n/a"` when undefined.
pub fn format_mean_std(mean: Option<f64>, std: Option<f64>) -> String {
    let mut s = String::new();
    match (mean, std) {
        (Some(m), Some(d)) => {
            let _ = write!(s, "{m:.2} \u{b1} {d:.2}");
        }
        _ => s.push_str("n/a"),
    }
    s
}

fn push_row(out: &mut String, cells: &[String], widths: &[usize]) {
    for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
        if i > 0 {
            out.push_str(" | ");
        }
        let _ = write!(out, "{cell:<w$}");
    }
    out.push('\n');
}

fn render(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let rule: usize = widths.iter().sum::<usize>() + 3 * cols.saturating_sub(1);
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        push_row(&mut out, r, &widths);
        if i == 0 {
            out.extend(core::iter::repeat_n('-', rule));
            out.push('\n');
        }
    }
    out
}

/// Method-per-row table with `DICE (%)` and `ASD (mm)` columns.
pub fn comparison_table(rows: &[(&str, &Summary)]) -> String {
    let mut cells = Vec::with_capacity(rows.len() + 1);
    cells.push(["Method", "DICE (%)", "ASD (mm)"].map(String::from).to_vec());
    for (name, s) in rows {
        cells.push(alloc::vec![
            String::from(*name),
            format_mean_std(Some(s.mean_dice), Some(s.std_dice)),
            format_mean_std(s.mean_asd, s.std_asd),
        ]);
    }
    render(&cells)
}

/// One method over several training-set sizes: a DICE row and an ASD row,
/// one column per size.
pub fn sample_size_table(method: &str, columns: &[(usize, &Summary)]) -> String {
    let mut header = alloc::vec![String::from("Method"), String::from("Metrics")];
    let mut dice = alloc::vec![String::from(method), String::from("DICE (%)")];
    let mut dist = alloc::vec![String::new(), String::from("ASD (mm)")];
    for (size, s) in columns {
        let mut h = String::new();
        let _ = write!(h, "{size}");
        header.push(h);
        dice.push(format_mean_std(Some(s.mean_dice), Some(s.std_dice)));
        dist.push(format_mean_std(s.mean_asd, s.std_asd));
    }
    render(&[header, dice, dist])
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn mask(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> LabelMask {
        LabelMask::new(Grid::from_fn(h, w, |a, b| f(a, b) as u8), 2, (1.0, 1.0)).unwrap()
    }

    fn row(id: &str, dice: f64, asd: Option<f64>) -> SampleMetrics {
        SampleMetrics {
            sample_id: id.to_string(),
            class_id: 1,
            dice_pct: dice,
            asd_mm: asd,
        }
    }

    #[test]
    fn dice_examples() {
        let a = mask(10, 10, |r, _| r < 3);
        assert_eq!(dice_coefficient(&a, &a, 1).unwrap(), 100.0);
        let b = mask(10, 10, |r, _| r > 6);
        assert_eq!(dice_coefficient(&a, &b, 1).unwrap(), 0.0);
        // |P| = |G| = 100, overlap 50.
        let p = mask(20, 20, |r, c| r < 10 && c < 10);
        let g = mask(20, 20, |r, c| r < 10 && (5..15).contains(&c));
        assert_eq!(dice_coefficient(&p, &g, 1).unwrap(), 50.0);
        let empty = mask(4, 4, |_, _| false);
        assert_eq!(dice_coefficient(&empty, &empty, 1).unwrap(), 100.0);
    }

    #[test]
    fn asd_examples() {
        let a = mask(12, 12, |r, c| (3..8).contains(&r) && (2..9).contains(&c));
        assert_eq!(asd(&a, &a, 1).unwrap(), SurfaceDistance::Defined(0.0));
        let k = 5;
        let p = mask(1, 12, |_, c| c == 2);
        let g = mask(1, 12, |_, c| c == 2 + k);
        assert_eq!(asd(&p, &g, 1).unwrap(), SurfaceDistance::Defined(k as f64));
    }

    #[test]
    fn asd_empty_regions() {
        let empty = mask(6, 6, |_, _| false);
        let some = mask(6, 6, |r, c| r == 2 && c == 3);
        assert_eq!(asd(&empty, &empty, 1).unwrap(), SurfaceDistance::Defined(0.0));
        assert_eq!(asd(&empty, &some, 1).unwrap(), SurfaceDistance::Undefined);
        assert_eq!(asd(&some, &empty, 1).unwrap(), SurfaceDistance::Undefined);
    }

    #[test]
    fn mismatched_masks_error() {
        let a = mask(4, 4, |_, _| true);
        let b = mask(4, 5, |_, _| true);
        assert!(dice_coefficient(&a, &b, 1).is_err());
        let c = a.with_spacing((2.0, 1.0)).unwrap();
        assert!(asd(&a, &c, 1).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let r = aggregate(vec![row("a", 80.0, Some(1.0))]).unwrap();
        assert_eq!((r.overall.mean_dice, r.overall.std_dice), (80.0, 0.0));
        let r = aggregate(vec![row("a", 70.0, Some(1.0)), row("b", 90.0, Some(3.0))]).unwrap();
        assert_eq!((r.overall.mean_dice, r.overall.std_dice), (80.0, 10.0));
        let r = aggregate(vec![row("a", 70.0, Some(1.0)), row("b", 90.0, None), row("c", 50.0, Some(3.0))]).unwrap();
        assert_eq!(r.overall.mean_asd, Some(2.0));
        assert_eq!(r.overall.undefined_asd, 1);
        assert_eq!(r.overall.rows, 3);
        assert_eq!(aggregate(vec![]), Err(Error::NoDefinedSamples));
    }

    #[test]
    fn overall_excludes_background_rows() {
        let mut bg = row("a", 10.0, Some(9.0));
        bg.class_id = 0;
        let r = aggregate(vec![bg, row("a", 90.0, Some(1.0))]).unwrap();
        assert_eq!(r.overall.mean_dice, 90.0);
        assert_eq!(r.per_class.len(), 2);
    }

    #[test]
    fn tables_have_expected_layout() {
        let s = aggregate(vec![row("a", 82.77, Some(1.14))]).unwrap().overall;
        let t = comparison_table(&[("nnSAM (w/o SAM)", &s), ("nnSAM (w/o Reg head)", &s), ("nnSAM", &s)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].contains("DICE (%)") && lines[0].contains("ASD (mm)"));
        assert!(lines[4].contains("82.77 \u{b1} 0.00"));
        let t = sample_size_table("nnSAM", &[(5, &s), (10, &s), (15, &s), (20, &s)]);
        let header = t.lines().next().unwrap();
        assert_eq!(header.split(" | ").count(), 6);
    }
}
