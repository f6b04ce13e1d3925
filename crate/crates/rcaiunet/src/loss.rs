//! The composite segmentation loss L = ½·L_BC + ½·L_DC.
//!
//! Binary cross entropy is computed in both sum and mean form; training and
//! the combined loss use the mean so the BCE scale stays independent of
//! resolution while the dice term remains bounded by one. Gradients flow
//! through the autograd tape and are pinned against finite differences; a
//! closed-form dice gradient as commonly printed is kept for diagnostics
//! only (it omits the quotient-rule cross term and is never used for
//! training).

use crate::autograd::{ops, ParamId, Tape, Var};
use crate::tensor::{DType, Tensor, TensorError, TensorResult};

/// Clamp applied to predictions before logarithms.
pub const PRED_EPSILON: f64 = 1e-7;
/// Smoothing constant added to the dice numerator and denominator.
pub const DICE_SMOOTHING: f64 = 1e-6;

/// Ground truth / prediction pair for loss evaluation.
///
/// `y` must be binary; `p` is clamped into `[ε, 1-ε]` on construction.
#[derive(Clone, Debug)]
pub struct BatchPair {
    y: Tensor,
    p: Tensor,
}

impl BatchPair {
    pub fn new(y: Tensor, p: Tensor) -> TensorResult<BatchPair> {
        if y.shape() != p.shape() {
            return Err(TensorError::ShapeMismatch {
                left: y.shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
        assert!(
            y.data().iter().all(|&v| v == 0.0 || v == 1.0),
            "ground truth must be binary"
        );
        Ok(BatchPair {
            y,
            p: p.clamp(PRED_EPSILON, 1.0 - PRED_EPSILON),
        })
    }

    pub fn y(&self) -> &Tensor {
        &self.y
    }

    pub fn p(&self) -> &Tensor {
        &self.p
    }

    pub fn pixel_count(&self) -> usize {
        self.y.len()
    }
}

/// Loss values and the gradient wrt the prediction tensor.
#[derive(Clone, Debug)]
pub struct LossReport {
    /// Combined loss, `(l_bc + l_dc) / 2`.
    pub l: f64,
    /// Mean-form binary cross entropy (the trained quantity).
    pub l_bc: f64,
    /// Sum-form binary cross entropy.
    pub l_bc_sum: f64,
    /// Dice loss in `[0, 1]`.
    pub l_dc: f64,
    /// dL/dp, same shape as the prediction.
    pub grad: Tensor,
}

/// Records sum-form BCE `-Σ[y·ln p + (1-y)·ln(1-p)]` on a tape.
fn bce_sum_node(tape: &Tape, y: Var, p: Var) -> Var {
    let ln_p = ops::ln(tape, p);
    let one_minus_p = ops::rsub_scalar(tape, 1.0, p);
    let ln_1mp = ops::ln(tape, one_minus_p);
    let one_minus_y = ops::rsub_scalar(tape, 1.0, y);
    let pos = ops::mul(tape, y, ln_p).expect("bce shapes");
    let neg = ops::mul(tape, one_minus_y, ln_1mp).expect("bce shapes");
    let total = ops::add(tape, pos, neg).expect("bce shapes");
    let summed = ops::sum(tape, total);
    ops::scale(tape, summed, -1.0)
}

/// Records the smoothed dice loss `1 - (2Σyp + s)/(Σy² + Σp² + s)`.
fn dice_node(tape: &Tape, y: Var, p: Var) -> Var {
    let yp = ops::mul(tape, y, p).expect("dice shapes");
    let num = ops::add_scalar(tape, ops::scale(tape, ops::sum(tape, yp), 2.0), DICE_SMOOTHING);
    let y2 = ops::mul(tape, y, y).expect("dice shapes");
    let p2 = ops::mul(tape, p, p).expect("dice shapes");
    let denom_sum = ops::add(tape, ops::sum(tape, y2), ops::sum(tape, p2)).expect("dice shapes");
    let denom = ops::add_scalar(tape, denom_sum, DICE_SMOOTHING);
    let frac = ops::div(tape, num, denom).expect("dice shapes");
    ops::rsub_scalar(tape, 1.0, frac)
}

/// Sum- and mean-form binary cross entropy.
pub fn bce(pair: &BatchPair) -> (f64, f64) {
    let mut sum = 0.0;
    for (y, p) in pair.y.data().iter().zip(pair.p.data()) {
        sum -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    (sum, sum / pair.pixel_count() as f64)
}

/// Smoothed dice loss.
pub fn dice_loss(pair: &BatchPair) -> f64 {
    let mut yp = 0.0;
    let mut y2 = 0.0;
    let mut p2 = 0.0;
    for (y, p) in pair.y.data().iter().zip(pair.p.data()) {
        yp += y * p;
        y2 += y * y;
        p2 += p * p;
    }
    1.0 - (2.0 * yp + DICE_SMOOTHING) / (y2 + p2 + DICE_SMOOTHING)
}

/// Evaluates the combined loss and its gradient wrt `p` via the tape.
pub fn combined_loss(pair: &BatchPair) -> LossReport {
    let tape = Tape::new();
    let p_id = ParamId::fresh();
    let p = tape.param(p_id, pair.p.clone());
    let y = tape.constant(pair.y.clone());
    let n = pair.pixel_count() as f64;

    let bce_sum = bce_sum_node(&tape, y, p);
    let bce_mean = ops::scale(&tape, bce_sum, 1.0 / n);
    let dice = dice_node(&tape, y, p);
    let half_sum = ops::add(&tape, bce_mean, dice).expect("loss shapes");
    let total = ops::scale(&tape, half_sum, 0.5);

    let grads = tape.backward(total).expect("loss root is scalar");
    LossReport {
        l: tape.value(total).data()[0],
        l_bc: tape.value(bce_mean).data()[0],
        l_bc_sum: tape.value(bce_sum).data()[0],
        l_dc: tape.value(dice).data()[0],
        grad: grads.get(p_id).expect("prediction gradient").clone(),
    }
}

/// Records the combined loss on an existing tape (used by training, where
/// `p` is the live model output). Returns `(total, bce_mean, bce_sum, dice)`.
pub fn combined_loss_on_tape(tape: &Tape, y: Var, p_raw: Var) -> (Var, Var, Var, Var) {
    let p = ops::clamp(tape, p_raw, PRED_EPSILON, 1.0 - PRED_EPSILON);
    let n = tape.value(p).len() as f64;
    let bce_sum = bce_sum_node(tape, y, p);
    let bce_mean = ops::scale(tape, bce_sum, 1.0 / n);
    let dice = dice_node(tape, y, p);
    let half_sum = ops::add(tape, bce_mean, dice).expect("loss shapes");
    let total = ops::scale(tape, half_sum, 0.5);
    (total, bce_mean, bce_sum, dice)
}

/// Closed-form gradient of the sum-form BCE at interior points,
/// `(p - y) / (p·(1 - p))`.
pub fn bce_grad_closed_form(pair: &BatchPair) -> Tensor {
    Tensor::from_fn(pair.p.shape(), DType::F64, |i| {
        let (y, p) = (pair.y.data()[i], pair.p.data()[i]);
        (p - y) / (p * (1.0 - p))
    })
}

/// Reference closed-form dice gradient as commonly printed,
/// `-2·y·(Σy² - Σp²) / (Σy² + Σp²)²`.
///
/// This form drops the quotient-rule cross term, so it disagrees with
/// finite differences of the dice loss; it is exposed for the diagnostic
/// comparison table only and never used for training.
pub fn dice_grad_reference_form(pair: &BatchPair) -> Tensor {
    let mut y2 = 0.0;
    let mut p2 = 0.0;
    for (y, p) in pair.y.data().iter().zip(pair.p.data()) {
        y2 += y * y;
        p2 += p * p;
    }
    let denom = (y2 + p2) * (y2 + p2);
    Tensor::from_fn(pair.y.shape(), DType::F64, |i| {
        -2.0 * pair.y.data()[i] * (y2 - p2) / denom
    })
}

/// Gradient of the dice loss alone via the tape (for diagnostics).
pub fn dice_grad_autograd(pair: &BatchPair) -> Tensor {
    let tape = Tape::new();
    let p_id = ParamId::fresh();
    let p = tape.param(p_id, pair.p.clone());
    let y = tape.constant(pair.y.clone());
    let dice = dice_node(&tape, y, p);
    let grads = tape.backward(dice).expect("dice root is scalar");
    grads.get(p_id).expect("dice gradient").clone()
}
