//! Segmentation metrics accumulated over an evaluation set.

/// Pixel counts indexed `[label][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, label: usize, pred: usize) -> u64 {
        self.counts[label * self.classes + pred]
    }

    /// Adds one mask pair; labels equal to `ignore` are skipped.
    pub fn add(&mut self, pred: &[u8], label: &[u8], ignore: u8) {
        debug_assert_eq!(pred.len(), label.len());
        for (&p, &l) in pred.iter().zip(label) {
            if l == ignore {
                continue;
            }
            let (p, l) = (p as usize, l as usize);
            if p < self.classes && l < self.classes {
                self.counts[l * self.classes + p] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// `TP / (TP + FP + FN)` per class; `None` for classes absent from both
    /// predictions and labels.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.count(c, c);
                let fn_: u64 = (0..self.classes).map(|p| self.count(c, p)).sum::<u64>() - tp;
                let fp: u64 = (0..self.classes).map(|l| self.count(l, c)).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean IoU over present classes; NaN when no class is present.
    pub fn miou(&self) -> f64 {
        let present: Vec<f64> = self.iou().into_iter().flatten().collect();
        if present.is_empty() {
            f64::NAN
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }

    pub fn pixel_accuracy(&self) -> f64 {
        let total: u64 = self.counts.iter().sum();
        let correct: u64 = (0..self.classes).map(|c| self.count(c, c)).sum();
        correct as f64 / total as f64
    }
}

/// Pixels with a 4-neighbour carrying a different label.
pub fn boundary_map(mask: &[u8], height: usize, width: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            let v = mask[y * width + x];
            out[y * width + x] = (x > 0 && mask[y * width + x - 1] != v)
                || (x + 1 < width && mask[y * width + x + 1] != v)
                || (y > 0 && mask[(y - 1) * width + x] != v)
                || (y + 1 < height && mask[(y + 1) * width + x] != v);
        }
    }
    out
}

/// Boundary precision/recall counts with a Chebyshev distance tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BoundaryStats {
    pub pred_matched: u64,
    pub pred_total: u64,
    pub label_matched: u64,
    pub label_total: u64,
}

fn near(map: &[bool], height: usize, width: usize, y: usize, x: usize, tol: usize) -> bool {
    let (y0, y1) = (y.saturating_sub(tol), (y + tol).min(height - 1));
    let (x0, x1) = (x.saturating_sub(tol), (x + tol).min(width - 1));
    (y0..=y1).any(|yy| (x0..=x1).any(|xx| map[yy * width + xx]))
}

impl BoundaryStats {
    pub const TOLERANCE: usize = 2;

    pub fn add(&mut self, pred: &[u8], label: &[u8], height: usize, width: usize) {
        let (bp, bl) = (boundary_map(pred, height, width), boundary_map(label, height, width));
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                if bp[i] {
                    self.pred_total += 1;
                    self.pred_matched += near(&bl, height, width, y, x, Self::TOLERANCE) as u64;
                }
                if bl[i] {
                    self.label_total += 1;
                    self.label_matched += near(&bp, height, width, y, x, Self::TOLERANCE) as u64;
                }
            }
        }
    }

    pub fn merge(&mut self, o: &BoundaryStats) {
        self.pred_matched += o.pred_matched;
        self.pred_total += o.pred_total;
        self.label_matched += o.label_matched;
        self.label_total += o.label_total;
    }

    /// Harmonic mean of boundary precision and recall; NaN when neither side
    /// has any boundary pixel.
    pub fn f_score(&self) -> f64 {
        if self.pred_total + self.label_total == 0 {
            return f64::NAN;
        }
        let ratio = |a: u64, b: u64| if b > 0 { a as f64 / b as f64 } else { 0.0 };
        let p = ratio(self.pred_matched, self.pred_total);
        let r = ratio(self.label_matched, self.label_total);
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let m = [0u8, 1, 1, 2, 0, 2];
        let mut cm = ConfusionMatrix::new(4);
        cm.add(&m, &m, 255);
        assert_eq!(cm.miou(), 1.0);
        assert_eq!(cm.iou()[3], None);
    }

    #[test]
    fn hand_counted_four_by_four() {
        // label: left half class 1; prediction: top half class 1
        let mut label = [0u8; 16];
        let mut pred = [0u8; 16];
        for y in 0..4 {
            for x in 0..4 {
                label[y * 4 + x] = (x < 2) as u8;
                pred[y * 4 + x] = (y < 2) as u8;
            }
        }
        let mut cm = ConfusionMatrix::new(2);
        cm.add(&pred, &label, 255);
        // each class: TP 4, FP 4, FN 4
        let iou = cm.iou();
        assert_eq!(iou, vec![Some(4.0 / 12.0), Some(4.0 / 12.0)]);
        assert!((cm.miou() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_ignored_is_undefined() {
        let mut cm = ConfusionMatrix::new(3);
        cm.add(&[0, 1, 2], &[255, 255, 255], 255);
        assert!(cm.miou().is_nan());
    }

    #[test]
    fn boundary_f_cases() {
        let (h, w) = (8, 8);
        let label: Vec<u8> = (0..64).map(|i| ((i % 8) >= 4) as u8).collect();
        let mut s = BoundaryStats::default();
        s.add(&label, &label, h, w);
        assert_eq!(s.f_score(), 1.0);

        // edge shifted by two columns stays within tolerance
        let shifted: Vec<u8> = (0..64).map(|i| ((i % 8) >= 6) as u8).collect();
        let mut s = BoundaryStats::default();
        s.add(&shifted, &label, h, w);
        assert_eq!(s.f_score(), 1.0);

        // a prediction with no boundary has zero precision and recall
        let mut s = BoundaryStats::default();
        s.add(&[0; 64], &label, h, w);
        assert_eq!(s.f_score(), 0.0);

        let mut s = BoundaryStats::default();
        s.add(&[0; 64], &[0; 64], h, w);
        assert!(s.f_score().is_nan());
    }

    proptest! {
        #[test]
        fn accumulation_order_is_irrelevant(masks in prop::collection::vec((prop::collection::vec(0u8..3, 12), prop::collection::vec(0u8..3, 12)), 1..6)) {
            let mut fwd = ConfusionMatrix::new(3);
            let mut bwd = ConfusionMatrix::new(3);
            for (p, l) in &masks {
                fwd.add(p, l, 255);
            }
            for (p, l) in masks.iter().rev() {
                bwd.add(p, l, 255);
            }
            prop_assert_eq!(fwd, bwd);
        }
    }
}
