//! Per-channel batch normalization with running statistics.

use crate::autograd::{Tape, Var};
use crate::tensor::{DType, Tensor};

use super::{LayerError, Mode, Param, ParamVisit};

/// Batch normalization over (N, H, W) per channel.
///
/// Train mode normalizes with batch statistics and updates the running
/// estimates; eval mode applies the frozen affine transform. Running
/// statistics are state, not weights: they're stored as non-trainable
/// params so archives carry them, but they never enter the differentiable
/// set or parameter counts.
#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub gamma: Param,
    pub beta: Param,
    running_mean: Param,
    running_var: Param,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormLayer {
    pub fn new(channels: usize, dtype: DType) -> BatchNormLayer {
        let running_mean = Param::new(Tensor::zeros(&[channels], DType::F64));
        let running_var = Param::new(Tensor::full(&[channels], 1.0, DType::F64));
        running_mean.set_trainable(false);
        running_var.set_trainable(false);
        BatchNormLayer {
            gamma: Param::new(Tensor::full(&[channels], 1.0, dtype)),
            beta: Param::new(Tensor::zeros(&[channels], dtype)),
            running_mean,
            running_var,
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn running_stats(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.running_mean.value().data().to_vec(),
            self.running_var.value().data().to_vec(),
        )
    }

    pub fn set_running_stats(&self, mean: Vec<f64>, var: Vec<f64>) {
        let c = self.running_mean.len();
        self.running_mean
            .set(Tensor::from_vec(&[c], mean, DType::F64).expect("running mean"));
        self.running_var
            .set(Tensor::from_vec(&[c], var, DType::F64).expect("running var"));
    }

    pub fn forward(&self, tape: &Tape, x: Var, mode: Mode) -> Result<Var, LayerError> {
        let vx = tape.value(x);
        let (n, c, h, w) = vx.dims4()?;
        let m = (n * h * w) as f64;
        let hw = h * w;
        let gamma = self.gamma.on(tape);
        let beta = self.beta.on(tape);
        let vg = tape.value(gamma);
        let vb = tape.value(beta);
        let eps = self.eps;

        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        for i in 0..hw {
                            mean[ch] += vx.data()[base + i];
                        }
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        for i in 0..hw {
                            let d = vx.data()[base + i] - mean[ch];
                            var[ch] += d * d;
                        }
                    }
                }
                var.iter_mut().for_each(|v| *v /= m);
                // Running estimates drift toward the batch statistics.
                let (mut rm, mut rv) = self.running_stats();
                for ch in 0..c {
                    rm[ch] = self.momentum * rm[ch] + (1.0 - self.momentum) * mean[ch];
                    rv[ch] = self.momentum * rv[ch] + (1.0 - self.momentum) * var[ch];
                }
                self.set_running_stats(rm, rv);
                (mean, var)
            }
            Mode::Eval => self.running_stats(),
        };

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let xhat = Tensor::from_fn(vx.shape(), vx.dtype(), |i| {
            let ch = (i / hw) % c;
            (vx.data()[i] - mean[ch]) * inv_std[ch]
        });
        let out = Tensor::from_fn(vx.shape(), vx.dtype(), |i| {
            let ch = (i / hw) % c;
            xhat.data()[i] * vg.data()[ch] + vb.data()[ch]
        });

        let xhat_saved = xhat;
        let train = mode == Mode::Train;
        Ok(tape.push(
            out,
            vec![x, gamma, beta],
            Some(Box::new(move |g| {
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for i in 0..g.len() {
                    let ch = (i / hw) % c;
                    dgamma[ch] += g.data()[i] * xhat_saved.data()[i];
                    dbeta[ch] += g.data()[i];
                }
                let gx = if train {
                    // dx = γ/σ̃ · (g − mean(g) − x̂·mean(g·x̂)) per channel.
                    Tensor::from_fn(xhat_saved.shape(), g.dtype(), |i| {
                        let ch = (i / hw) % c;
                        vg.data()[ch]
                            * inv_std[ch]
                            * (g.data()[i]
                                - dbeta[ch] / m
                                - xhat_saved.data()[i] * dgamma[ch] / m)
                    })
                } else {
                    Tensor::from_fn(xhat_saved.shape(), g.dtype(), |i| {
                        let ch = (i / hw) % c;
                        vg.data()[ch] * inv_std[ch] * g.data()[i]
                    })
                };
                vec![
                    gx,
                    Tensor::from_vec(&[c], dgamma, g.dtype()).expect("dgamma"),
                    Tensor::from_vec(&[c], dbeta, g.dtype()).expect("dbeta"),
                ]
            })),
            false,
        ))
    }
}

impl ParamVisit for BatchNormLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(format!("{prefix}.g"), &self.gamma);
        f(format!("{prefix}.b"), &self.beta);
        f(format!("{prefix}.rm"), &self.running_mean);
        f(format!("{prefix}.rv"), &self.running_var);
    }
}
