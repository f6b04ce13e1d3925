//! Segmentation evaluation metrics over binary masks plus inference-time
//! measurement.
//!
//! Thresholding is strict everywhere: a pixel belongs to a mask iff
//! `prob > t`, so exact ties at a threshold fall deterministically to
//! background. Undefined fractions and empty-mask cases follow explicit
//! conventions that are flagged in the output rather than silently folded
//! into averages.

use std::fmt;
use std::time::Instant;

use serde::Serialize;

use crate::postprocess::BinaryMask;
use crate::tensor::Tensor;

/// Predicted/ground-truth mask pair, with an optional probability map
/// behind the prediction for threshold sweeps.
#[derive(Clone, Debug)]
pub struct MaskPair {
    pub pred: BinaryMask,
    pub gt: BinaryMask,
    pub prob: Option<Tensor>,
}

/// Pixel-level confusion counts; always sums to the pixel count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Conventions that fired while evaluating a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MetricFlag {
    /// Both masks empty: DC and IoU reported as 1 by convention.
    BothEmpty,
    /// A mask was empty: AHD reported as the image diagonal sentinel.
    AhdSentinel,
}

impl fmt::Display for MetricFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricFlag::BothEmpty => write!(f, "both_empty"),
            MetricFlag::AhdSentinel => write!(f, "ahd_sentinel"),
        }
    }
}

/// One evaluated pair: the seven mask metrics plus any convention flags.
#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    pub acc: f64,
    pub pr: f64,
    pub r: f64,
    pub dc: f64,
    pub miou: f64,
    pub ahd: f64,
    pub mae: f64,
    pub flags: Vec<MetricFlag>,
}

/// Pixelwise confusion counts. Masks must share a shape.
pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> ConfusionCounts {
    assert_eq!(pred.dims(), gt.dims(), "mask shapes must match");
    let mut c = ConfusionCounts {
        tp: 0,
        tn: 0,
        fp: 0,
        fn_: 0,
    };
    for (p, g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => unreachable!("masks are binary"),
        }
    }
    c
}

/// Ratio with the undefined-fraction convention: a zero denominator yields
/// 1 when the complementary error count is also zero, else 0.
fn safe_ratio(num: u64, den: u64, complementary_errors: u64) -> f64 {
    if den == 0 {
        if complementary_errors == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, precision, recall and dice from confusion counts.
pub fn basic_metrics(c: &ConfusionCounts) -> (f64, f64, f64, f64) {
    assert!(c.total() > 0, "empty masks have no metrics");
    let acc = (c.tp + c.tn) as f64 / c.total() as f64;
    let pr = safe_ratio(c.tp, c.tp + c.fp, c.fn_);
    let r = safe_ratio(c.tp, c.tp + c.fn_, c.fp);
    let dc = safe_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, 0);
    (acc, pr, r, dc)
}

/// IoU at one binarization.
pub fn iou(c: &ConfusionCounts) -> f64 {
    safe_ratio(c.tp, c.tp + c.fp + c.fn_, 0)
}

/// The ten sweep thresholds 0.50, 0.55, …, 0.95.
pub fn miou_thresholds() -> [f64; 10] {
    let mut t = [0.0; 10];
    for (k, slot) in t.iter_mut().enumerate() {
        *slot = (50 + 5 * k) as f64 / 100.0;
    }
    t
}

/// Mean IoU over the threshold sweep of a probability map.
pub fn miou(prob: &Tensor, gt: &BinaryMask) -> f64 {
    let total: f64 = miou_thresholds()
        .iter()
        .map(|&t| {
            let mask = BinaryMask::from_prob(prob, t);
            iou(&confusion(&mask, gt))
        })
        .sum();
    total / 10.0
}

/// Average Hausdorff distance between foreground pixel sets, with directed
/// means each way. Returns the image diagonal as a flagged sentinel when
/// either set is empty.
pub fn ahd(pred: &BinaryMask, gt: &BinaryMask) -> (f64, Option<MetricFlag>) {
    assert_eq!(pred.dims(), gt.dims(), "mask shapes must match");
    let a = pred.foreground_coords();
    let b = gt.foreground_coords();
    if a.is_empty() || b.is_empty() {
        let (h, w) = pred.dims();
        let diag = ((h * h + w * w) as f64).sqrt();
        return (diag, Some(MetricFlag::AhdSentinel));
    }
    let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| -> f64 {
        let mut total = 0.0;
        for &(y, x) in from {
            let mut best = f64::INFINITY;
            for &(gy, gx) in to {
                let dy = y as f64 - gy as f64;
                let dx = x as f64 - gx as f64;
                let d2 = dy * dy + dx * dx;
                if d2 < best {
                    best = d2;
                }
            }
            total += best.sqrt();
        }
        total / from.len() as f64
    };
    (0.5 * (directed(&a, &b) + directed(&b, &a)), None)
}

/// Mean absolute pixel difference.
pub fn mae(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    assert_eq!(pred.dims(), gt.dims(), "mask shapes must match");
    let diff: u64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| u64::from(p != g))
        .sum();
    diff as f64 / pred.data().len() as f64
}

/// Evaluates all seven metrics of a pair. When no probability map is
/// attached, the binary prediction stands in for it (the sweep then
/// degenerates to the plain IoU).
pub fn evaluate_pair(pair: &MaskPair) -> MetricReport {
    let c = confusion(&pair.pred, &pair.gt);
    let (acc, pr, r, dc) = basic_metrics(&c);
    let mut flags = Vec::new();
    if c.tp + c.fp + c.fn_ == 0 {
        flags.push(MetricFlag::BothEmpty);
    }
    let miou_val = match &pair.prob {
        Some(p) => miou(p, &pair.gt),
        None => miou(&pair.pred.to_prob(), &pair.gt),
    };
    let (ahd_val, ahd_flag) = ahd(&pair.pred, &pair.gt);
    if let Some(flag) = ahd_flag {
        flags.push(flag);
    }
    MetricReport {
        acc,
        pr,
        r,
        dc,
        miou: miou_val,
        ahd: ahd_val,
        mae: mae(&pair.pred, &pair.gt),
        flags,
    }
}

/// Wall-clock forward time per sample in milliseconds, averaged after a few
/// warm-up passes. Post-processing is excluded; the caller records the
/// environment (threads, dtype) alongside.
pub fn inference_time_ms<F: FnMut(usize)>(samples: usize, warmup: usize, mut forward: F) -> f64 {
    assert!(samples >= 1, "need at least one sample");
    for i in 0..warmup.min(samples) {
        forward(i);
    }
    let mut per_sample = Vec::with_capacity(samples);
    for i in 0..samples {
        let t0 = Instant::now();
        forward(i);
        per_sample.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    per_sample.iter().sum::<f64>() / samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;

    fn mask(dims: (usize, usize), fg: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::zeros(dims.0, dims.1);
        for &(y, x) in fg {
            m.set(y, x, true);
        }
        m
    }

    #[test]
    fn all_ones_confusion() {
        let m = BinaryMask::from_fn(4, 4, |_, _| true);
        let c = confusion(&m, &m);
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 16,
                tn: 0,
                fp: 0,
                fn_: 0
            }
        );
    }

    #[test]
    fn complement_has_no_agreement() {
        let p = BinaryMask::from_fn(4, 4, |y, x| (y + x) % 2 == 0);
        let g = BinaryMask::from_fn(4, 4, |y, x| (y + x) % 2 == 1);
        let c = confusion(&p, &g);
        assert_eq!(c.tp, 0);
        assert_eq!(c.tn, 0);
        assert_eq!(c.fp + c.fn_, 16);
    }

    #[test]
    fn perfect_mask_scores_ones() {
        let g = BinaryMask::from_fn(5, 5, |y, _| y < 2);
        let (acc, pr, r, dc) = basic_metrics(&confusion(&g, &g));
        assert_eq!((acc, pr, r, dc), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn table_arithmetic_example() {
        // TP=8, FP=2, FN=2, TN=4.
        let mut p = BinaryMask::zeros(4, 4);
        let mut g = BinaryMask::zeros(4, 4);
        for i in 0..10 {
            p.set(i / 4, i % 4, true);
        }
        for i in 0..8 {
            g.set(i / 4, i % 4, true);
        }
        for i in 10..12 {
            g.set(i / 4, i % 4, true);
        }
        let c = confusion(&p, &g);
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (8, 2, 2, 4));
        let (acc, pr, r, dc) = basic_metrics(&c);
        assert_eq!(pr, 0.8);
        assert_eq!(r, 0.8);
        assert_eq!(dc, 0.8);
        assert_eq!(acc, 0.75);
    }

    #[test]
    fn both_empty_dice_is_one_and_flagged() {
        let e = BinaryMask::zeros(4, 4);
        let (_, pr, r, dc) = basic_metrics(&confusion(&e, &e));
        assert_eq!((pr, r, dc), (1.0, 1.0, 1.0));
        let report = evaluate_pair(&MaskPair {
            pred: e.clone(),
            gt: e,
            prob: None,
        });
        assert!(report.flags.contains(&MetricFlag::BothEmpty));
        assert!(report.flags.contains(&MetricFlag::AhdSentinel));
    }

    #[test]
    fn miou_exact_probability_mask() {
        let g = BinaryMask::from_fn(4, 4, |y, x| y == x);
        let prob = g.to_prob();
        assert_eq!(miou(&prob, &g), 1.0);
    }

    #[test]
    fn miou_uniform_probability_crosses_thresholds() {
        // prob 0.6 everywhere vs all-ones gt: IoU 1 for t in {0.50, 0.55},
        // 0 beyond (strict rule), so the mean is 0.2.
        let g = BinaryMask::from_fn(4, 4, |_, _| true);
        let prob = Tensor::full(&[4, 4], 0.6, DType::F64);
        assert!((miou(&prob, &g) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ahd_single_pair_distance() {
        let p = mask((8, 8), &[(0, 0)]);
        let g = mask((8, 8), &[(3, 4)]);
        let (d, flag) = ahd(&p, &g);
        assert_eq!(d, 5.0);
        assert!(flag.is_none());
    }

    #[test]
    fn ahd_identical_masks_is_zero_and_symmetric() {
        let p = mask((6, 6), &[(1, 2), (3, 3), (5, 0)]);
        let (d, _) = ahd(&p, &p);
        assert_eq!(d, 0.0);
        let g = mask((6, 6), &[(0, 5), (2, 2)]);
        let (dpg, _) = ahd(&p, &g);
        let (dgp, _) = ahd(&g, &p);
        assert_eq!(dpg, dgp);
    }

    #[test]
    fn mae_extremes() {
        let ones = BinaryMask::from_fn(4, 4, |_, _| true);
        let zeros = BinaryMask::zeros(4, 4);
        assert_eq!(mae(&ones, &ones), 0.0);
        assert_eq!(mae(&ones, &zeros), 1.0);
    }

    #[test]
    fn dc_iou_identity() {
        let p = BinaryMask::from_fn(8, 8, |y, x| (y * 3 + x * 7) % 5 < 2);
        let g = BinaryMask::from_fn(8, 8, |y, x| (y * 5 + x * 2) % 4 < 2);
        let c = confusion(&p, &g);
        let (_, _, _, dc) = basic_metrics(&c);
        let i = iou(&c);
        assert!((dc - 2.0 * i / (1.0 + i)).abs() < 1e-12);
    }

    #[test]
    fn metrics_invariant_under_joint_transposition() {
        let p = BinaryMask::from_fn(6, 6, |y, x| (y * x) % 3 == 0);
        let g = BinaryMask::from_fn(6, 6, |y, x| (y + 2 * x) % 4 == 1);
        let pt = BinaryMask::from_fn(6, 6, |y, x| p.get(x, y));
        let gt_t = BinaryMask::from_fn(6, 6, |y, x| g.get(x, y));
        let a = evaluate_pair(&MaskPair {
            pred: p,
            gt: g,
            prob: None,
        });
        let b = evaluate_pair(&MaskPair {
            pred: pt,
            gt: gt_t,
            prob: None,
        });
        assert_eq!(a.acc, b.acc);
        assert_eq!(a.dc, b.dc);
        assert!((a.ahd - b.ahd).abs() < 1e-12);
        assert_eq!(a.mae, b.mae);
    }

    #[test]
    fn binarized_prob_sweep_equals_top_threshold_iou() {
        // Thresholding a 0/1 map gives the same mask at every sweep point.
        let g = BinaryMask::from_fn(5, 5, |y, x| y + x > 4);
        let p = BinaryMask::from_fn(5, 5, |y, x| y + x > 3);
        let prob = p.to_prob();
        let sweep = miou(&prob, &g);
        let at_95 = iou(&confusion(
            &BinaryMask::from_prob(&prob, 0.95),
            &g,
        ));
        assert!(sweep >= at_95 - 1e-12);
        assert!((sweep - at_95).abs() < 1e-12);
    }

    #[test]
    fn inference_time_is_mean_of_positive_samples() {
        let mut calls = 0usize;
        let ms = inference_time_ms(3, 1, |_| {
            calls += 1;
            std::thread::sleep(std::time::Duration::from_millis(1));
        });
        assert_eq!(calls, 4); // 1 warmup + 3 timed
        assert!(ms >= 1.0);
    }
}
