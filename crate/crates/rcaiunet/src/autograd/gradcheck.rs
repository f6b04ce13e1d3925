//! Central finite-difference gradient checking.
//!
//! This is the ground-truth oracle for every differentiable component: it
//! never consults the tape, only a scalar function of the parameter values.
//! Failures are reported, not thrown.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;

use crate::tensor::Tensor;

/// Sampling and tolerance settings for a gradient check.
#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Relative error threshold for a coordinate to pass.
    pub tol: f64,
    /// Seed for coordinate sampling.
    pub seed: u64,
    /// Coordinates sampled per parameter tensor (full sweep if the tensor
    /// is smaller).
    pub max_coords: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            h: 1e-5,
            tol: 1e-4,
            seed: 0,
            max_coords: 200,
        }
    }
}

/// Outcome for one parameter tensor.
#[derive(Clone, Debug, Serialize)]
pub struct GradcheckRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Full report over all checked tensors.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub records: Vec<GradcheckRecord>,
    pub tol: f64,
    pub h: f64,
}

impl GradcheckReport {
    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn worst(&self) -> f64 {
        self.records.iter().fold(0.0, |m, r| m.max(r.max_rel_err))
    }

    /// One JSON object per record, newline separated.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<40} {:>16} {:>8} {:>14} {:>6}",
            "parameter", "shape", "coords", "max_rel_err", "pass"
        )?;
        for r in &self.records {
            writeln!(
                f,
                "{:<40} {:>16} {:>8} {:>14.3e} {:>6}",
                r.name,
                format!("{:?}", r.shape),
                r.coords_checked,
                r.max_rel_err,
                if r.pass { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "tol {:.1e}, step {:.1e}: {}",
            self.tol,
            self.h,
            if self.all_pass() { "all pass" } else { "FAILURES" }
        )
    }
}

/// Relative error with an absolute floor, `|a-n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central finite differences of `f`.
///
/// `f` receives the full parameter value list (same order as `params`) and
/// returns the scalar objective; it must be pure. `analytic[i]` is the
/// gradient for `params[i].1`.
pub fn gradcheck<F>(
    f: &F,
    params: &[(String, Tensor)],
    analytic: &[Tensor],
    cfg: &GradcheckConfig,
) -> GradcheckReport
where
    F: Fn(&[Tensor]) -> f64 + Sync,
{
    assert_eq!(params.len(), analytic.len());
    let base: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut records = Vec::with_capacity(params.len());
    for (pi, (name, tensor)) in params.iter().enumerate() {
        assert_eq!(
            tensor.shape(),
            analytic[pi].shape(),
            "analytic gradient shape must match parameter {name}"
        );
        let n = tensor.len();
        let coords: Vec<usize> = if n <= cfg.max_coords {
            (0..n).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed.wrapping_add((pi as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            );
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            all.truncate(cfg.max_coords);
            all
        };
        let errs: Vec<f64> = coords
            .par_iter()
            .map(|&ci| {
                let x0 = tensor.data()[ci];
                let eval = |v: f64| -> f64 {
                    let mut vals = base.clone();
                    vals[pi] = tensor.with_value_at(ci, v);
                    f(&vals)
                };
                let numeric = (eval(x0 + cfg.h) - eval(x0 - cfg.h)) / (2.0 * cfg.h);
                relative_error(analytic[pi].data()[ci], numeric)
            })
            .collect();
        let max_rel_err = errs.iter().fold(0.0f64, |m, &e| m.max(e));
        records.push(GradcheckRecord {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            coords_checked: coords.len(),
            max_rel_err,
            pass: max_rel_err < cfg.tol,
        });
    }
    GradcheckReport {
        records,
        tol: cfg.tol,
        h: cfg.h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn sum_of_squares_gradient() {
        let mut rng = StdRng::seed_from_u64(3);
        let x = Tensor::from_fn(&[16], DType::F64, |_| rng.gen_range(-2.0..2.0));
        let analytic = x.scale(2.0);
        let f = |vals: &[Tensor]| vals[0].data().iter().map(|v| v * v).sum::<f64>();
        let report = gradcheck(
            &f,
            &[("x".to_string(), x)],
            &[analytic],
            &GradcheckConfig {
                tol: 1e-8,
                ..Default::default()
            },
        );
        assert!(report.all_pass(), "{report}");
        assert!(report.worst() < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_reported_not_thrown() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0], DType::F64).unwrap();
        let wrong = Tensor::from_vec(&[2], vec![5.0, 5.0], DType::F64).unwrap();
        let f = |vals: &[Tensor]| vals[0].sum();
        let report = gradcheck(
            &f,
            &[("x".to_string(), x)],
            &[wrong],
            &GradcheckConfig::default(),
        );
        assert!(!report.all_pass());
        assert!(!report.records[0].pass);
    }

    #[test]
    fn sampling_is_capped_and_seeded() {
        let x = Tensor::zeros(&[1000], DType::F64);
        let g = Tensor::zeros(&[1000], DType::F64);
        let f = |_: &[Tensor]| 0.0;
        let cfg = GradcheckConfig {
            max_coords: 50,
            ..Default::default()
        };
        let r1 = gradcheck(&f, &[("x".to_string(), x.clone())], &[g.clone()], &cfg);
        let r2 = gradcheck(&f, &[("x".to_string(), x)], &[g], &cfg);
        assert_eq!(r1.records[0].coords_checked, 50);
        assert_eq!(r1.records[0].max_rel_err, r2.records[0].max_rel_err);
    }
}
