//! Cross-spatial attention over long skip connections.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{ops, Tape, Var};
use crate::tensor::DType;

use super::{Conv2d, LayerError, Param, ParamVisit};

/// Gates a skip feature map with attention coefficients built from deeper
/// encoder levels.
///
/// Every source is projected by a biased 1×1 convolution to the skip's
/// channel width; gate projections are bilinearly resampled up to the skip's
/// spatial size; the sum is ReLU-activated, squeezed to one channel by a
/// final 1×1 convolution, and passed through a sigmoid. The resulting
/// coefficients α ∈ [0,1] multiply the skip map elementwise (broadcast over
/// channels), so the output magnitude never exceeds the skip magnitude.
#[derive(Clone, Debug)]
pub struct CrossSpatialAttentionBlock {
    pub skip_proj: Conv2d,
    pub gate_projs: Vec<Conv2d>,
    pub psi: Conv2d,
}

impl CrossSpatialAttentionBlock {
    /// `skip_channels` is also the gate width; `gate_channels` lists the
    /// channel counts of the deeper sources (1 or 2 of them).
    pub fn new(
        skip_channels: usize,
        gate_channels: &[usize],
        rng: &mut ChaCha8Rng,
        dtype: DType,
    ) -> Self {
        assert!(
            !gate_channels.is_empty() && gate_channels.len() <= 2,
            "cross-spatial attention takes 1 or 2 gates"
        );
        CrossSpatialAttentionBlock {
            skip_proj: Conv2d::new(skip_channels, skip_channels, 1, true, rng, dtype),
            gate_projs: gate_channels
                .iter()
                .map(|&c| Conv2d::new(c, skip_channels, 1, true, rng, dtype))
                .collect(),
            psi: Conv2d::new(skip_channels, 1, 1, true, rng, dtype),
        }
    }

    /// Returns `(gated skip, attention coefficients)`.
    pub fn forward(
        &self,
        tape: &Tape,
        skip: Var,
        gates: &[Var],
    ) -> Result<(Var, Var), LayerError> {
        assert_eq!(gates.len(), self.gate_projs.len(), "gate count is fixed");
        let (_, _, h, w) = tape.value(skip).dims4()?;
        let mut acc = self.skip_proj.forward(tape, skip)?;
        for (proj, &gate) in self.gate_projs.iter().zip(gates) {
            let (_, _, gh, gw) = tape.value(gate).dims4()?;
            assert!(
                gh <= h && gw <= w,
                "gate spatial dims must not exceed the skip's"
            );
            let p = proj.forward(tape, gate)?;
            let up = ops::resize_bilinear(tape, p, h, w)?;
            acc = ops::add(tape, acc, up)?;
        }
        let act = ops::relu(tape, acc);
        let alpha = ops::sigmoid(tape, self.psi.forward(tape, act)?);
        let gated = ops::mul_gate(tape, skip, alpha)?;
        Ok((gated, alpha))
    }
}

impl ParamVisit for CrossSpatialAttentionBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        self.skip_proj.visit_params(&format!("{prefix}.skip"), f);
        for (i, p) in self.gate_projs.iter().enumerate() {
            p.visit_params(&format!("{prefix}.gate{i}"), f);
        }
        self.psi.visit_params(&format!("{prefix}.psi"), f);
    }
}
