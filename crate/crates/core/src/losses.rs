//! Training objectives with exact gradients w.r.t. logits.
//!
//! * [`bce_loss`]: binary cross-entropy in stable logit form.
//! * [`kd_loss`]: mean squared error between predicted and teacher
//!   probabilities.
//! * [`total_loss`]: `alpha * bce + (1 - alpha) * kd`.
//! * [`asl_loss`]: asymmetric focal loss with a probability margin on the
//!   negative term.
//!
//! All losses average over every `N×C` entry.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::net::sigmoid;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Gradient w.r.t. the loss input (logits, or probabilities for
    /// [`kd_loss`]).
    pub grad: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AslParams {
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub margin: f64,
}

impl Default for AslParams {
    fn default() -> Self {
        Self {
            gamma_pos: 0.0,
            gamma_neg: 4.0,
            margin: 0.05,
        }
    }
}

impl AslParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_pos >= 0.0 && self.gamma_neg >= 0.0) {
            return Err(Error::config(format!(
                "ASL focusing exponents must be >= 0, got {} / {}",
                self.gamma_pos, self.gamma_neg
            )));
        }
        if !(0.0..1.0).contains(&self.margin) {
            return Err(Error::config(format!("ASL margin must lie in [0, 1), got {}", self.margin)));
        }
        Ok(())
    }
}

fn same_shape(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

fn check_finite(what: &str, a: &ArrayView2<f64>) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} contains non-finite values")));
    }
    Ok(())
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn bce_loss(logits: ArrayView2<f64>, labels: ArrayView2<f64>) -> Result<LossValue> {
    same_shape("bce_loss logits vs labels", logits.dim(), labels.dim())?;
    check_finite("logits", &logits)?;
    let scale = 1.0 / logits.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    Zip::from(&mut grad).and(&logits).and(&labels).for_each(|g, &x, &y| {
        total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        *g = (sigmoid(x) - y) * scale;
    });
    Ok(LossValue {
        value: total * scale,
        grad,
    })
}

/// Squared error between probabilities `p` and knowledge `k`, averaged over
/// classes and then over samples. The gradient is w.r.t. `p`.
pub fn kd_loss(probs: ArrayView2<f64>, knowledge: ArrayView2<f64>) -> Result<LossValue> {
    same_shape("kd_loss probabilities vs knowledge", probs.dim(), knowledge.dim())?;
    check_finite("probabilities", &probs)?;
    check_finite("knowledge", &knowledge)?;
    let scale = 1.0 / probs.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(probs.dim());
    Zip::from(&mut grad).and(&probs).and(&knowledge).for_each(|g, &p, &k| {
        let d = p - k;
        total += d * d;
        *g = 2.0 * d * scale;
    });
    Ok(LossValue {
        value: total * scale,
        grad,
    })
}

/// [`kd_loss`] on `sigmoid(logits)`, with the gradient chained back to logits.
pub fn kd_loss_logits(logits: ArrayView2<f64>, knowledge: ArrayView2<f64>) -> Result<LossValue> {
    check_finite("logits", &logits)?;
    let probs = logits.mapv(sigmoid);
    let mut out = kd_loss(probs.view(), knowledge)?;
    Zip::from(&mut out.grad).and(&probs).for_each(|g, &p| *g *= p * (1.0 - p));
    Ok(out)
}

/// `alpha * bce + (1 - alpha) * kd`, gradient w.r.t. logits. The endpoints
/// return the corresponding sub-loss unchanged.
pub fn total_loss(
    logits: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    knowledge: ArrayView2<f64>,
    alpha: f64,
) -> Result<LossValue> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    same_shape("total_loss logits vs knowledge", logits.dim(), knowledge.dim())?;
    if alpha == 1.0 {
        return bce_loss(logits, labels);
    }
    if alpha == 0.0 {
        same_shape("total_loss logits vs labels", logits.dim(), labels.dim())?;
        return kd_loss_logits(logits, knowledge);
    }
    let bce = bce_loss(logits, labels)?;
    let kd = kd_loss_logits(logits, knowledge)?;
    let mut grad = bce.grad * alpha;
    grad.scaled_add(1.0 - alpha, &kd.grad);
    Ok(LossValue {
        value: alpha * bce.value + (1.0 - alpha) * kd.value,
        grad,
    })
}

/// Asymmetric loss. With `p = sigmoid(x)` and `p_m = max(p - m, 0)`:
///
/// ```text
/// L = -[ y (1-p)^g+ log p  +  (1-y) p_m^g- log(1 - p_m) ]
/// ```
///
/// The gradient flows through both the focusing factor and the log term.
pub fn asl_loss(logits: ArrayView2<f64>, labels: ArrayView2<f64>, params: AslParams) -> Result<LossValue> {
    params.validate()?;
    same_shape("asl_loss logits vs labels", logits.dim(), labels.dim())?;
    check_finite("logits", &logits)?;
    let AslParams {
        gamma_pos: gp,
        gamma_neg: gn,
        margin: m,
    } = params;
    let scale = 1.0 / logits.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    Zip::from(&mut grad).and(&logits).and(&labels).for_each(|g, &x, &y| {
        let p = sigmoid(x);
        let q = sigmoid(-x); // 1 - p without cancellation
        let mut value = 0.0;
        let mut dx = 0.0;
        if y != 0.0 {
            let log_p = -softplus(-x);
            let focus = q.powf(gp);
            value += -y * focus * log_p;
            // d/dx of -(1-p)^g log p = g (1-p)^g p log p - (1-p)^(g+1)
            let d = if gp == 0.0 { -q } else { gp * focus * p * log_p - focus * q };
            dx += y * d;
        }
        if y != 1.0 {
            let w = 1.0 - y;
            let pm = (p - m).max(0.0);
            if pm > 0.0 {
                let (one_minus_pm, log_one_minus_pm) = if m == 0.0 {
                    (q, -softplus(x))
                } else {
                    let v = q + m;
                    (v, v.ln())
                };
                let focus = if gn == 0.0 { 1.0 } else { pm.powf(gn) };
                value += -w * focus * log_one_minus_pm;
                // d/dp_m of -p_m^g log(1-p_m) = -g p_m^(g-1) log(1-p_m) + p_m^g / (1-p_m)
                let dpm = if gn == 0.0 {
                    1.0 / one_minus_pm
                } else {
                    -gn * pm.powf(gn - 1.0) * log_one_minus_pm + focus / one_minus_pm
                };
                dx += w * dpm * p * q;
            }
        }
        total += value;
        *g = dx * scale;
    });
    Ok(LossValue {
        value: total * scale,
        grad,
    })
}
