//! Training objectives with analytic gradients. Every loss is a mean over
//! its elements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::BinaryMask;
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tensor3};

/// Probabilities are clamped to `[FOCAL_EPS, 1 - FOCAL_EPS]` before the log.
pub const FOCAL_EPS: f64 = 1e-7;

/// Loss value with the gradient w.r.t. the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<G> {
    pub value: f64,
    pub grad: G,
}

/// Balance factors of the two combined objectives plus the focal exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub alpha5: f64,
    pub alpha6: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 0.8,
            alpha3: 1.0,
            alpha4: 0.4,
            alpha5: 0.6,
            alpha6: 0.3,
            gamma: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha1,
            self.alpha2,
            self.alpha3,
            self.alpha4,
            self.alpha5,
            self.alpha6,
            self.gamma,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("weights", format!("must be finite and non-negative: {all:?}")));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            alpha1: self.alpha1 * s,
            alpha2: self.alpha2 * s,
            alpha3: self.alpha3 * s,
            alpha4: self.alpha4 * s,
            alpha5: self.alpha5 * s,
            alpha6: self.alpha6 * s,
            gamma: self.gamma,
        }
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor3<T>, b: &Tensor3<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}

fn elementwise<T: Scalar>(
    pred: &Tensor3<T>,
    target: &Tensor3<T>,
    f: impl Fn(f64, f64) -> (f64, f64),
) -> LossGrad<Tensor3<T>> {
    let n = pred.as_slice().len() as f64;
    let mut sum = 0.0;
    let mut grad = pred.clone();
    for ((g, p), t) in grad.as_mut_slice().iter_mut().zip(pred.as_slice()).zip(target.as_slice()) {
        let (v, d) = f(p.wide(), t.wide());
        sum += v;
        *g = T::narrow(d / n);
    }
    LossGrad { value: sum / n, grad }
}

/// Mean absolute error; the subgradient at a tie is zero.
pub fn l1_loss<T: Scalar>(pred: &Tensor3<T>, target: &Tensor3<T>) -> Result<LossGrad<Tensor3<T>>> {
    same_shape("l1_loss", pred, target)?;
    Ok(elementwise(pred, target, |p, t| {
        let d = p - t;
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        (d.abs(), sign)
    }))
}

/// Mean squared error, used as the bottleneck auxiliary loss.
pub fn l2_aux_loss<T: Scalar>(deep_pred: &Tensor3<T>, deep_target: &Tensor3<T>) -> Result<LossGrad<Tensor3<T>>> {
    same_shape("l2_aux_loss", deep_pred, deep_target)?;
    Ok(elementwise(deep_pred, deep_target, |p, t| {
        let d = p - t;
        (d * d, 2.0 * d)
    }))
}

/// Per-pixel focal loss and its derivative w.r.t. the raw probability.
fn focal_term(p_raw: f64, positive: bool, gamma: f64) -> (f64, f64) {
    let p = p_raw.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
    let inside = p_raw > FOCAL_EPS && p_raw < 1.0 - FOCAL_EPS;
    // write in terms of q = p_t and the "miss" probability m = 1 - p_t
    let (q, m, dq_dp) = if positive { (p, 1.0 - p, 1.0) } else { (1.0 - p, p, -1.0) };
    let weight = m.powf(gamma);
    let value = -weight * q.ln();
    // d/dq [-(1-q)^g ln q] = g (1-q)^(g-1) ln q - (1-q)^g / q
    let d_dq = if gamma == 0.0 {
        -1.0 / q
    } else {
        gamma * m.powf(gamma - 1.0) * q.ln() - weight / q
    };
    (value, if inside { d_dq * dq_dp } else { 0.0 })
}

/// Mean of `-(1 - p_t)^gamma * ln(p_t)`, with `p_t = p` on positive pixels and
/// `1 - p` elsewhere. `prob` must be single-channel with values in `[0, 1]`.
pub fn focal_loss<T: Scalar>(prob: &Tensor3<T>, label: &BinaryMask, gamma: f64) -> Result<LossGrad<Tensor3<T>>> {
    if prob.channels() != 1 || !prob.same_spatial(label.height(), label.width()) {
        return Err(Error::shape(
            "focal_loss",
            format!("{}x{}x1", label.height(), label.width()),
            format!("{:?}", prob.shape()),
        ));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::invalid("gamma", format!("must be >= 0, got {gamma}")));
    }
    if let Some(i) = prob.as_slice().iter().position(|p| !(0.0..=1.0).contains(&p.wide())) {
        return Err(Error::invalid("prob", format!("value at index {i} is outside [0, 1]")));
    }
    let n = label.len() as f64;
    let mut sum = 0.0;
    let mut grad = prob.clone();
    for ((g, p), &y) in grad.as_mut_slice().iter_mut().zip(prob.as_slice()).zip(label.bits()) {
        let (v, d) = focal_term(p.wide(), y, gamma);
        sum += v;
        *g = T::narrow(d / n);
    }
    Ok(LossGrad { value: sum / n, grad })
}

/// Binary cross-entropy with the same clamp as [`focal_loss`].
pub fn binary_cross_entropy<T: Scalar>(prob: &Tensor3<T>, label: &BinaryMask) -> Result<f64> {
    focal_loss(prob, label, 0.0).map(|l| l.value)
}

/// Generator side of the least-squares GAN: mean of `0.5 (d - 1)^2`.
pub fn lsgan_generator<T: Scalar>(d_fake: &Matrix<T>) -> LossGrad<Matrix<T>> {
    let n = d_fake.as_slice().len() as f64;
    let value = d_fake.as_slice().iter().map(|d| 0.5 * (d.wide() - 1.0).powi(2)).sum::<f64>() / n;
    let grad = d_fake.map(|d| T::narrow((d.wide() - 1.0) / n));
    LossGrad { value, grad }
}

/// Gradients of [`lsgan_discriminator`] w.r.t. both discriminator maps.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorGrads<T> {
    pub d_fake: Matrix<T>,
    pub d_real: Matrix<T>,
}

/// Discriminator side: mean of `0.5 d_fake^2 + 0.5 (d_real - 1)^2`. Both maps
/// must share a shape; the mean runs over map entries.
pub fn lsgan_discriminator<T: Scalar>(
    d_fake: &Matrix<T>,
    d_real: &Matrix<T>,
) -> Result<LossGrad<DiscriminatorGrads<T>>> {
    if (d_fake.rows(), d_fake.cols()) != (d_real.rows(), d_real.cols()) {
        return Err(Error::shape(
            "lsgan_discriminator",
            format!("{}x{}", d_fake.rows(), d_fake.cols()),
            format!("{}x{}", d_real.rows(), d_real.cols()),
        ));
    }
    let n = d_fake.as_slice().len() as f64;
    let value = d_fake
        .as_slice()
        .iter()
        .zip(d_real.as_slice())
        .map(|(f, r)| 0.5 * f.wide().powi(2) + 0.5 * (r.wide() - 1.0).powi(2))
        .sum::<f64>()
        / n;
    Ok(LossGrad {
        value,
        grad: DiscriminatorGrads {
            d_fake: d_fake.map(|f| T::narrow(f.wide() / n)),
            d_real: d_real.map(|r| T::narrow((r.wide() - 1.0) / n)),
        },
    })
}

/// Reconstruction-network objective: `a1 adversarial + a2 l1 + a3 aux`.
pub fn gpt_objective(adversarial: f64, l1: f64, aux: f64, w: &LossWeights) -> f64 {
    debug_assert!(adversarial >= 0.0 && l1 >= 0.0 && aux >= 0.0);
    w.alpha1 * adversarial + w.alpha2 * l1 + w.alpha3 * aux
}

/// Segmentation-network objective: `a4 focal + a5 l1 + a6 aux`. The l1 term
/// compares predicted probabilities with the binary label, not logits.
pub fn seg_objective(focal: f64, l1: f64, aux: f64, w: &LossWeights) -> f64 {
    debug_assert!(focal >= 0.0 && l1 >= 0.0 && aux >= 0.0);
    w.alpha4 * focal + w.alpha5 * l1 + w.alpha6 * aux
}
