//! Mask refinement: binary thresholding, flood-fill hole filling, and
//! small-region removal. All connectivity is 4-connected, which never
//! bridges diagonals.

use crate::tensor::{DType, Tensor};

/// Default refinement threshold.
pub const REFINE_THRESHOLD: f64 = 0.5;
/// Default minimum component area as a fraction of the image.
pub const MIN_AREA_FRACTION: f64 = 0.001;

/// H×W grid of {0,1} with 4-connected foreground.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(h: usize, w: usize) -> BinaryMask {
        assert!(h >= 1 && w >= 1, "empty mask grid");
        BinaryMask {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> BinaryMask {
        let mut m = BinaryMask::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                m.data[y * w + x] = u8::from(f(y, x));
            }
        }
        m
    }

    /// Strict thresholding: pixel in mask iff `prob > t`.
    pub fn from_prob(prob: &Tensor, t: f64) -> BinaryMask {
        let (h, w) = prob.spatial().expect("probability map needs spatial dims");
        assert_eq!(prob.len(), h * w, "one probability map at a time");
        BinaryMask {
            h,
            w,
            data: prob.data().iter().map(|&p| u8::from(p > t)).collect(),
        }
    }

    pub fn from_raw(h: usize, w: usize, data: Vec<u8>) -> BinaryMask {
        assert_eq!(data.len(), h * w);
        assert!(data.iter().all(|&v| v <= 1), "mask must be binary");
        BinaryMask { h, w, data }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = u8::from(v);
    }

    pub fn foreground_area(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn foreground_coords(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.h {
            for x in 0..self.w {
                if self.get(y, x) {
                    out.push((y, x));
                }
            }
        }
        out
    }

    /// The mask as a {0,1}-valued probability map.
    pub fn to_prob(&self) -> Tensor {
        Tensor::from_vec(
            &[self.h, self.w],
            self.data.iter().map(|&v| v as f64).collect(),
            DType::F64,
        )
        .expect("mask shape")
    }
}

/// Strict binary thresholding of a probability map.
pub fn threshold(prob: &Tensor, t: f64) -> BinaryMask {
    assert!(t > 0.0 && t < 1.0, "threshold must be inside (0,1)");
    BinaryMask::from_prob(prob, t)
}

/// 4-connected BFS labelling from a seed over pixels matching `value`.
fn flood(mask: &BinaryMask, labels: &mut [u32], label: u32, seed: usize, value: u8) {
    let (h, w) = mask.dims();
    let mut queue = std::collections::VecDeque::new();
    labels[seed] = label;
    queue.push_back(seed);
    while let Some(i) = queue.pop_front() {
        let (y, x) = (i / w, i % w);
        let mut push = |ny: usize, nx: usize, queue: &mut std::collections::VecDeque<usize>| {
            let ni = ny * w + nx;
            if labels[ni] == 0 && mask.data()[ni] == value {
                labels[ni] = label;
                queue.push_back(ni);
            }
        };
        if y > 0 {
            push(y - 1, x, &mut queue);
        }
        if y + 1 < h {
            push(y + 1, x, &mut queue);
        }
        if x > 0 {
            push(y, x - 1, &mut queue);
        }
        if x + 1 < w {
            push(y, x + 1, &mut queue);
        }
    }
}

/// Labels 4-connected components of pixels equal to `value`; label 0 means
/// "not this value". Returns (labels, component count).
fn label_components(mask: &BinaryMask, value: u8) -> (Vec<u32>, u32) {
    let (h, w) = mask.dims();
    let mut labels = vec![0u32; h * w];
    let mut next = 0u32;
    for i in 0..h * w {
        if mask.data()[i] == value && labels[i] == 0 {
            next += 1;
            flood(mask, &mut labels, next, i, value);
        }
    }
    (labels, next)
}

/// Fills enclosed holes: background components with no border pixel become
/// foreground; border-connected background is untouched. Never removes
/// foreground.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dims();
    let (labels, count) = label_components(mask, 0);
    let mut touches_border = vec![false; count as usize + 1];
    for y in 0..h {
        for x in 0..w {
            if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
                let l = labels[y * w + x];
                if l > 0 {
                    touches_border[l as usize] = true;
                }
            }
        }
    }
    let mut out = mask.clone();
    for i in 0..h * w {
        let l = labels[i];
        if l > 0 && !touches_border[l as usize] {
            out.data[i] = 1;
        }
    }
    out
}

/// Erases foreground components smaller than `min_area_fraction` of the
/// image. Never adds foreground.
pub fn remove_small_regions(mask: &BinaryMask, min_area_fraction: f64) -> BinaryMask {
    assert!(
        (0.0..1.0).contains(&min_area_fraction),
        "fraction must lie in [0,1)"
    );
    let (h, w) = mask.dims();
    let min_area = min_area_fraction * (h * w) as f64;
    let (labels, count) = label_components(mask, 1);
    let mut areas = vec![0usize; count as usize + 1];
    for &l in &labels {
        if l > 0 {
            areas[l as usize] += 1;
        }
    }
    let mut out = mask.clone();
    for i in 0..h * w {
        let l = labels[i];
        if l > 0 && (areas[l as usize] as f64) < min_area {
            out.data[i] = 0;
        }
    }
    out
}

/// Full refinement: threshold at 0.5, fill holes, drop sub-0.1% specks.
/// Idempotent: refining a refined mask (read back as a 0/1 map) is a fixed
/// point.
pub fn refine(prob: &Tensor) -> BinaryMask {
    let mask = threshold(prob, REFINE_THRESHOLD);
    remove_small_regions(&fill_holes(&mask), MIN_AREA_FRACTION)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_extremes() {
        let high = Tensor::full(&[3, 3], 0.9, DType::F64);
        assert_eq!(threshold(&high, 0.5).foreground_area(), 9);
        // Strict rule: exact ties go to background.
        let tie = Tensor::full(&[3, 3], 0.5, DType::F64);
        assert_eq!(threshold(&tie, 0.5).foreground_area(), 0);
    }

    #[test]
    fn threshold_matches_loop_oracle() {
        let prob = Tensor::from_fn(&[8, 8], DType::F64, |i| ((i * 37) % 64) as f64 / 64.0);
        let t = 0.42;
        let got = threshold(&prob, t);
        for (i, &p) in prob.data().iter().enumerate() {
            assert_eq!(got.data()[i] == 1, p > t, "pixel {i}");
        }
    }

    #[test]
    fn ring_hole_gets_filled() {
        let ring = BinaryMask::from_fn(5, 5, |y, x| {
            (1..=3).contains(&y) && (1..=3).contains(&x) && !(y == 2 && x == 2)
        });
        let filled = fill_holes(&ring);
        for y in 1..=3 {
            for x in 1..=3 {
                assert!(filled.get(y, x));
            }
        }
        assert_eq!(filled.foreground_area(), 9);
    }

    #[test]
    fn border_connected_background_untouched() {
        let mask = BinaryMask::from_fn(5, 5, |y, x| y == 2 && x >= 1);
        assert_eq!(fill_holes(&mask), mask);
    }

    #[test]
    fn fill_holes_matches_bfs_oracle_on_random_masks() {
        for seed in 0..5u64 {
            let mask = BinaryMask::from_fn(16, 16, |y, x| {
                ((y * 131 + x * 37 + seed as usize * 997) % 7) < 3
            });
            let got = fill_holes(&mask);
            // Independent oracle: BFS from every border background pixel;
            // anything unreached and background becomes foreground.
            let (h, w) = mask.dims();
            let mut reach = vec![false; h * w];
            let mut queue = std::collections::VecDeque::new();
            for y in 0..h {
                for x in 0..w {
                    if (y == 0 || x == 0 || y == h - 1 || x == w - 1)
                        && !mask.get(y, x)
                        && !reach[y * w + x]
                    {
                        reach[y * w + x] = true;
                        queue.push_back((y, x));
                    }
                }
            }
            while let Some((y, x)) = queue.pop_front() {
                let neighbors = [
                    (y.wrapping_sub(1), x),
                    (y + 1, x),
                    (y, x.wrapping_sub(1)),
                    (y, x + 1),
                ];
                for (ny, nx) in neighbors {
                    if ny < h && nx < w && !mask.get(ny, nx) && !reach[ny * w + nx] {
                        reach[ny * w + nx] = true;
                        queue.push_back((ny, nx));
                    }
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let expect = mask.get(y, x) || !reach[y * w + x];
                    assert_eq!(got.get(y, x), expect, "seed {seed} at ({y},{x})");
                }
            }
        }
    }

    #[test]
    fn single_speck_below_fraction_is_erased() {
        let mut mask = BinaryMask::zeros(64, 64);
        mask.set(10, 10, true);
        // 0.001 of 64x64 ≈ 4.1 px.
        let out = remove_small_regions(&mask, 0.001);
        assert_eq!(out.foreground_area(), 0);
    }

    #[test]
    fn zero_fraction_is_identity() {
        let mask = BinaryMask::from_fn(16, 16, |y, x| (y + x) % 5 == 0);
        assert_eq!(remove_small_regions(&mask, 0.0), mask);
    }

    #[test]
    fn only_small_component_is_erased() {
        let mut mask = BinaryMask::zeros(16, 16);
        // 3x3 block (9 px) and a 1-px speck; threshold at 2% of 256 ≈ 5.1 px.
        for y in 2..5 {
            for x in 2..5 {
                mask.set(y, x, true);
            }
        }
        mask.set(12, 12, true);
        let out = remove_small_regions(&mask, 0.02);
        assert_eq!(out.foreground_area(), 9);
        assert!(!out.get(12, 12));
    }

    #[test]
    fn fill_never_removes_and_remove_never_adds() {
        for seed in 0..8u64 {
            let mask = BinaryMask::from_fn(20, 20, |y, x| {
                ((y * 53 + x * 101 + seed as usize * 7919) % 11) < 4
            });
            let filled = fill_holes(&mask);
            for i in 0..mask.data().len() {
                assert!(filled.data()[i] >= mask.data()[i]);
            }
            let removed = remove_small_regions(&mask, 0.01);
            for i in 0..mask.data().len() {
                assert!(removed.data()[i] <= mask.data()[i]);
            }
        }
    }

    #[test]
    fn refine_is_idempotent() {
        for seed in 0..8u64 {
            let prob = Tensor::from_fn(&[24, 24], DType::F64, |i| {
                (((i * 67 + seed as usize * 331) % 97) as f64) / 97.0
            });
            let once = refine(&prob);
            let twice = refine(&once.to_prob());
            assert_eq!(once, twice, "seed {seed}");
        }
    }

    #[test]
    fn ring_plus_speck_probability_map_cleans_up() {
        let prob = Tensor::from_fn(&[32, 32], DType::F64, |i| {
            let (y, x) = (i / 32, i % 32);
            let in_ring = (8..=16).contains(&y)
                && (8..=16).contains(&x)
                && !((10..=14).contains(&y) && (10..=14).contains(&x));
            let speck = y == 28 && x == 28;
            if in_ring || speck {
                0.9
            } else {
                0.1
            }
        });
        let out = refine(&prob);
        // Hole filled solid.
        for y in 8..=16 {
            for x in 8..=16 {
                assert!(out.get(y, x), "({y},{x})");
            }
        }
        // Speck gone (1 px < 0.1% of 1024 ≈ 1.02 px).
        assert!(!out.get(28, 28));
    }

    #[test]
    fn all_zero_probability_is_all_zero_mask() {
        let prob = Tensor::zeros(&[8, 8], DType::F64);
        assert_eq!(refine(&prob).foreground_area(), 0);
    }
}
