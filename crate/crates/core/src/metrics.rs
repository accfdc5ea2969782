//! Segmentation quality over time: Dice, HD95 and temporal consistency of
//! Dice (TCD).
//!
//! HD95 is the 95th percentile (linear interpolation between order
//! statistics) of the pooled boundary-to-boundary distances in both
//! directions. Boundaries are foreground pixels with at least one background
//! pixel (or the image edge) among their 8 neighbours. Nearest-boundary
//! distances come from an exact Euclidean distance transform.
//!
//! TCD is the mean absolute change of per-frame Dice between adjacent frames.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seqio::{MaskSequence, LABEL_LA, LABEL_LV, LABEL_LVM};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("distance undefined: {0} mask is empty")]
    UndefinedDistance(&'static str),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "mask buffer length");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, data)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    fn check_same(&self, other: &BinaryMask) -> Result<(), MetricsError> {
        if self.width != other.width || self.height != other.height {
            return Err(MetricsError::Dimension(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    a.check_same(b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// 8-connected border pixels of the foreground, as `(x, y)`.
pub fn boundary(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (w, h) = (mask.width as isize, mask.height as isize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x as usize, y as usize) {
                continue;
            }
            let edge = (-1..=1).any(|dy| {
                (-1..=1).any(|dx| {
                    let (nx, ny) = (x + dx, y + dy);
                    nx < 0 || ny < 0 || nx >= w || ny >= h || !mask.get(nx as usize, ny as usize)
                })
            });
            if edge {
                out.push((x as usize, y as usize));
            }
        }
    }
    out
}

/// 1D squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    // skip leading infinite samples so the envelope starts at a real parabola
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest seed.
pub fn squared_distance_transform(width: usize, height: usize, seeds: &[(usize, usize)]) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; width * height];
    for &(x, y) in seeds {
        grid[y * width + x] = 0.0;
    }
    let mut col = vec![0.0; height];
    let mut col_out = vec![0.0; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = grid[y * width + x];
        }
        edt_1d(&col, &mut col_out);
        for y in 0..height {
            grid[y * width + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; width];
    for y in 0..height {
        edt_1d(&grid[y * width..(y + 1) * width], &mut row_out);
        grid[y * width..(y + 1) * width].copy_from_slice(&row_out);
    }
    grid
}

/// Pooled directed boundary distances `{d(p, ∂B)} ∪ {d(q, ∂A)}`.
pub fn boundary_distances(a: &BinaryMask, b: &BinaryMask) -> Result<Vec<f64>, MetricsError> {
    a.check_same(b)?;
    let ba = boundary(a);
    let bb = boundary(b);
    if ba.is_empty() {
        return Err(MetricsError::UndefinedDistance("first"));
    }
    if bb.is_empty() {
        return Err(MetricsError::UndefinedDistance("second"));
    }
    let dt_a = squared_distance_transform(a.width, a.height, &ba);
    let dt_b = squared_distance_transform(b.width, b.height, &bb);
    let w = a.width;
    let mut out = Vec::with_capacity(ba.len() + bb.len());
    out.extend(ba.iter().map(|&(x, y)| dt_b[y * w + x].sqrt()));
    out.extend(bb.iter().map(|&(x, y)| dt_a[y * w + x].sqrt()));
    Ok(out)
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    values[lo] + (pos - lo as f64) * (values[hi] - values[lo])
}

/// 95th-percentile symmetric boundary distance, in pixels.
pub fn hd95(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    let mut d = boundary_distances(a, b)?;
    Ok(percentile(&mut d, 95.0))
}

/// Symmetric Hausdorff distance between boundaries.
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    Ok(boundary_distances(a, b)?.into_iter().fold(0.0, f64::max))
}

/// Mean absolute adjacent-frame change of Dice.
pub fn tcd(dice_per_frame: &[f64]) -> Result<f64, MetricsError> {
    if dice_per_frame.len() < 2 {
        return Err(MetricsError::InsufficientData(format!(
            "TCD needs ≥ 2 frames, got {}",
            dice_per_frame.len()
        )));
    }
    let n = dice_per_frame.len() - 1;
    Ok(dice_per_frame.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / n as f64)
}

pub const EVALUATED_LABELS: [(u8, &str); 3] = [(LABEL_LV, "LV"), (LABEL_LVM, "LVM"), (LABEL_LA, "LA")];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub label: String,
    pub dice_per_frame: Vec<f64>,
    pub mean_dice: f64,
    /// `None` where either mask is empty.
    pub hd95_per_frame: Vec<Option<f64>>,
    /// Mean over frames with a defined HD95.
    pub mean_hd95: Option<f64>,
    /// Frames skipped for HD95 (empty ground truth or empty prediction).
    pub hd95_missing_frames: Vec<usize>,
    pub tcd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_label: Vec<LabelReport>,
    /// Unweighted mean of per-label mean Dice.
    pub mean_dice: f64,
    /// Mean of the defined per-label mean HD95 values.
    pub mean_hd95: Option<f64>,
    pub average_tcd: f64,
}

fn label_mask(seq: &MaskSequence, t: usize, label: u8) -> BinaryMask {
    let m = &seq.masks()[t];
    BinaryMask::new(m.width, m.height, m.binarize(label))
}

/// Per-label Dice/HD95/TCD of `pred` against `gt`.
pub fn evaluate(pred: &MaskSequence, gt: &MaskSequence) -> Result<MetricsReport, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::Dimension(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(MetricsError::Dimension(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let t_count = gt.len();
    let mut per_label = Vec::with_capacity(EVALUATED_LABELS.len());
    for (label, name) in EVALUATED_LABELS {
        let mut dices = Vec::with_capacity(t_count);
        let mut hds = Vec::with_capacity(t_count);
        let mut missing = Vec::new();
        for t in 0..t_count {
            let p = label_mask(pred, t, label);
            let g = label_mask(gt, t, label);
            dices.push(dice(&p, &g)?);
            if g.is_empty() || p.is_empty() {
                hds.push(None);
                missing.push(t);
            } else {
                hds.push(Some(hd95(&p, &g)?));
            }
        }
        let defined: Vec<f64> = hds.iter().flatten().copied().collect();
        let mean_hd95 = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        let tcd = if t_count >= 2 { tcd(&dices)? } else { 0.0 };
        per_label.push(LabelReport {
            label: name.to_string(),
            mean_dice: dices.iter().sum::<f64>() / t_count as f64,
            dice_per_frame: dices,
            hd95_per_frame: hds,
            mean_hd95,
            hd95_missing_frames: missing,
            tcd,
        });
    }
    let n = per_label.len() as f64;
    let hd: Vec<f64> = per_label.iter().filter_map(|l| l.mean_hd95).collect();
    Ok(MetricsReport {
        mean_dice: per_label.iter().map(|l| l.mean_dice).sum::<f64>() / n,
        mean_hd95: (!hd.is_empty()).then(|| hd.iter().sum::<f64>() / hd.len() as f64),
        average_tcd: per_label.iter().map(|l| l.tcd).sum::<f64>() / n,
        per_label,
    })
}

impl MetricsReport {
    /// `label,frame,dice,hd95` rows, then `mean` and `tcd` summary rows per
    /// label and a final `average,tcd` row. Missing HD95 is left blank.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("label,frame,dice,hd95\n");
        for l in &self.per_label {
            for (t, (d, h)) in l.dice_per_frame.iter().zip(&l.hd95_per_frame).enumerate() {
                writeln!(s, "{},{t},{d},{}", l.label, fmt(*h)).unwrap();
            }
        }
        for l in &self.per_label {
            writeln!(s, "{},mean,{},{}", l.label, l.mean_dice, fmt(l.mean_hd95)).unwrap();
            writeln!(s, "{},tcd,{},", l.label, l.tcd).unwrap();
        }
        writeln!(s, "average,mean,{},{}", self.mean_dice, fmt(self.mean_hd95)).unwrap();
        writeln!(s, "average,tcd,{},", self.average_tcd).unwrap();
        s
    }

    /// One line in Dice, HD95, TCD order.
    pub fn summary_line(&self) -> String {
        let hd = self
            .mean_hd95
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "NA".to_string());
        format!("dice={:.4} hd95={hd} tcd={:.4}", self.mean_dice, self.average_tcd)
    }
}
