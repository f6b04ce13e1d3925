//! Brute-force oracles shared by the integration suites. Everything here is
//! written directly from definitions — double loops and direct sums — and
//! stays independent of the library's transform and metric code paths.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Naive O(N²) forward DFT of one H×W channel:
/// `X[u,v] = Σ_{y,x} d[y,x]·exp(-2πi(uy/H + vx/W))`.
pub fn naive_dft2d(data: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let theta = 2.0 * PI * (u * y) as f64 / h as f64
                        + 2.0 * PI * (v * x) as f64 / w as f64;
                    let val = data[y * w + x];
                    acc_re += val * theta.cos();
                    acc_im -= val * theta.sin();
                }
            }
            re[u * w + v] = acc_re;
            im[u * w + v] = acc_im;
        }
    }
    (re, im)
}

/// Naive normalized inverse DFT of one H×W spectrum.
pub fn naive_idft2d(re: &[f64], im: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut out_re = vec![0.0; h * w];
    let mut out_im = vec![0.0; h * w];
    let norm = 1.0 / (h * w) as f64;
    for y in 0..h {
        for x in 0..w {
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for u in 0..h {
                for v in 0..w {
                    let theta = 2.0 * PI * (u * y) as f64 / h as f64
                        + 2.0 * PI * (v * x) as f64 / w as f64;
                    let (c, s) = (theta.cos(), theta.sin());
                    let (xr, xi) = (re[u * w + v], im[u * w + v]);
                    acc_re += xr * c - xi * s;
                    acc_im += xr * s + xi * c;
                }
            }
            out_re[y * w + x] = acc_re * norm;
            out_im[y * w + x] = acc_im * norm;
        }
    }
    (out_re, out_im)
}

fn freqs(m: usize) -> Vec<i64> {
    (0..m)
        .map(|u| {
            if u <= m / 2 {
                u as i64
            } else {
                u as i64 - m as i64
            }
        })
        .collect()
}

/// Band-limited downsample evaluated directly from naive DFT coefficients:
/// keep the centered band, average the aliasing band-edge bins, reconstruct
/// on the small grid.
pub fn naive_band_limit_downsample(
    data: &[f64],
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let (sre, sim) = naive_dft2d(data, h, w);
    let fetch = |fu: i64, fv: i64| -> (f64, f64) {
        let pu = fu.rem_euclid(h as i64) as usize;
        let pv = fv.rem_euclid(w as i64) as usize;
        (sre[pu * w + pv], sim[pu * w + pv])
    };
    let folded = |f: i64, m: usize| m % 2 == 0 && f == (m / 2) as i64;
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for &fu in &freqs(oh) {
                for &fv in &freqs(ow) {
                    // Alias-average the band-edge bins.
                    let mut sum_re = 0.0;
                    let mut sum_im = 0.0;
                    let us: Vec<i64> = if folded(fu, oh) { vec![fu, -fu] } else { vec![fu] };
                    let vs: Vec<i64> = if folded(fv, ow) { vec![fv, -fv] } else { vec![fv] };
                    let mut n_alias = 0.0;
                    let mut seen = std::collections::HashSet::new();
                    for &au in &us {
                        for &av in &vs {
                            let key = (au.rem_euclid(h as i64), av.rem_euclid(w as i64));
                            if !seen.insert(key) {
                                continue;
                            }
                            let (r, im) = fetch(au, av);
                            sum_re += r;
                            sum_im += im;
                            n_alias += 1.0;
                        }
                    }
                    let (xr, xi) = (sum_re / n_alias, sum_im / n_alias);
                    let theta = 2.0 * PI * (fu * i as i64) as f64 / oh as f64
                        + 2.0 * PI * (fv * j as i64) as f64 / ow as f64;
                    acc += xr * theta.cos() - xi * theta.sin();
                }
            }
            out[i * ow + j] = acc / (h * w) as f64;
        }
    }
    out
}

/// Same-size spectral low-pass evaluated from naive DFT coefficients: the
/// retained band is alias-averaged onto the small grid, replicated back to
/// every alias position, and reconstructed at full size.
pub fn naive_band_limit_lowpass(data: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let (sre, sim) = naive_dft2d(data, h, w);
    let folded = |f: i64, m: usize| m % 2 == 0 && f == (m / 2) as i64;
    // Build the padded spectrum on the full grid.
    let mut pre = vec![0.0; h * w];
    let mut pim = vec![0.0; h * w];
    for &fu in &freqs(oh) {
        for &fv in &freqs(ow) {
            let us: Vec<i64> = if folded(fu, oh) { vec![fu, -fu] } else { vec![fu] };
            let vs: Vec<i64> = if folded(fv, ow) { vec![fv, -fv] } else { vec![fv] };
            let mut sum_re = 0.0;
            let mut sum_im = 0.0;
            let mut seen = std::collections::HashSet::new();
            let mut n_alias = 0.0;
            for &au in &us {
                for &av in &vs {
                    let key = (au.rem_euclid(h as i64), av.rem_euclid(w as i64));
                    if !seen.insert(key) {
                        continue;
                    }
                    let pu = key.0 as usize;
                    let pv = key.1 as usize;
                    sum_re += sre[pu * w + pv];
                    sum_im += sim[pu * w + pv];
                    n_alias += 1.0;
                }
            }
            let (vr, vi) = (sum_re / n_alias, sum_im / n_alias);
            let mut positions = std::collections::HashSet::new();
            for &au in &us {
                for &av in &vs {
                    positions.insert((
                        au.rem_euclid(h as i64) as usize,
                        av.rem_euclid(w as i64) as usize,
                    ));
                }
            }
            for (pu, pv) in positions {
                pre[pu * w + pv] += vr;
                pim[pu * w + pv] += vi;
            }
        }
    }
    let (out_re, _) = naive_idft2d(&pre, &pim, h, w);
    out_re
}
