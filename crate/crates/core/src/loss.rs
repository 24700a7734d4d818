//! Loss kernels for the detection and segmentation heads, each with an
//! analytic gradient.

use std::f64::consts::{PI, TAU};

use crate::boxes::Box3D;
use crate::error::{BevError, Result};

/// Per-term weights of the detection and segmentation objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub beta_cls: f64,
    pub beta_loc: f64,
    pub beta_dir: f64,
    pub beta_dice: f64,
    pub beta_bce: f64,
    /// Smooth-L1 weight per regression dimension, `(x, y, z, w, h, l, theta, vx, vy)`.
    pub box_dim_weights: [f64; 9],
    /// Multipliers on the 3D detection, BEV segmentation and 2D detection totals.
    pub task_weights: [f64; 3],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta_cls: 1.0,
            beta_loc: 0.8,
            beta_dir: 0.8,
            beta_dice: 1.0,
            beta_bce: 1.0,
            box_dim_weights: [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.2, 0.2],
            task_weights: [1.0; 3],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.beta_cls, self.beta_loc, self.beta_dir, self.beta_dice, self.beta_bce]
            .into_iter()
            .chain(self.box_dim_weights)
            .chain(self.task_weights);
        for w in all {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(BevError::InvalidArgument(format!("loss weight {w} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// A loss value together with its gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct WithGrad<G> {
    pub value: f64,
    pub grad: G,
}

fn check_prob_open(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(BevError::InvalidArgument(format!("probability {p} outside (0, 1)")))
    }
}

/// Focal loss on a probability. Target 1 costs `alpha (1-p)^gamma (-ln p)`,
/// target 0 costs `(1-alpha) p^gamma (-ln(1-p))`. Gradient is `d/dp`.
pub fn focal_loss(p: f64, target: bool, alpha: f64, gamma: f64) -> Result<WithGrad<f64>> {
    check_prob_open(p)?;
    // Rewrite target 0 as target 1 on q = 1 - p with weight 1 - alpha.
    let (q, weight, sign) = if target { (p, alpha, 1.0) } else { (1.0 - p, 1.0 - alpha, -1.0) };
    let one_minus = 1.0 - q;
    let mod_factor = one_minus.powf(gamma);
    let nll = -q.ln();
    let value = weight * mod_factor * nll;
    // d/dq [ (1-q)^g * -ln q ] = -g (1-q)^(g-1) (-ln q) - (1-q)^g / q
    let d_mod = if gamma == 0.0 { 0.0 } else { -gamma * one_minus.powf(gamma - 1.0) };
    let dq = weight * (d_mod * nll - mod_factor / q);
    Ok(WithGrad {
        value,
        grad: sign * dq,
    })
}

/// Huber penalty with transition `beta`: quadratic `0.5 d^2 / beta` inside,
/// linear `|d| - beta/2` outside.
pub fn huber(d: f64, beta: f64) -> (f64, f64) {
    let a = d.abs();
    if a < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (a - 0.5 * beta, d.signum())
    }
}

/// Weighted sum of per-dimension Huber penalties between two 9-vectors.
pub fn smooth_l1_box(pred: &[f64; 9], target: &[f64; 9], dim_weights: &[f64; 9], beta: f64) -> Result<WithGrad<[f64; 9]>> {
    if !(beta > 0.0) {
        return Err(BevError::InvalidArgument(format!("smooth-L1 beta {beta} must be positive")));
    }
    let mut value = 0.0;
    let mut grad = [0.0; 9];
    for k in 0..9 {
        let (v, g) = huber(pred[k] - target[k], beta);
        value += dim_weights[k] * v;
        grad[k] = dim_weights[k] * g;
    }
    Ok(WithGrad { value, grad })
}

/// Binary cross-entropy on the heading-flip logit, computed from the logit
/// directly so large magnitudes do not overflow. Gradient is `d/dlogit`.
pub fn direction_loss(logit: f64, target: bool) -> WithGrad<f64> {
    let t = if target { 1.0 } else { 0.0 };
    let value = logit.max(0.0) - logit * t + (-logit.abs()).exp().ln_1p();
    let sigmoid = if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    };
    WithGrad {
        value,
        grad: sigmoid - t,
    }
}

pub const DICE_EPS: f64 = 1.0;

fn check_mask(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(BevError::ShapeMismatch(format!(
            "prediction has {} elements, target {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(BevError::InvalidArgument("mask probabilities must lie in [0, 1]".into()));
    }
    if target.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(BevError::InvalidArgument("target mask must be binary".into()));
    }
    Ok(())
}

/// `1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)` with `eps = 1`.
pub fn dice_loss(pred: &[f64], target: &[f64]) -> Result<WithGrad<Vec<f64>>> {
    check_mask(pred, target)?;
    let inter: f64 = pred.iter().zip(target).map(|(p, t)| p * t).sum();
    let num = 2.0 * inter + DICE_EPS;
    let den = pred.iter().sum::<f64>() + target.iter().sum::<f64>() + DICE_EPS;
    let grad = target.iter().map(|t| -(2.0 * t * den - num) / (den * den)).collect();
    Ok(WithGrad {
        value: 1.0 - num / den,
        grad,
    })
}

const BCE_CLAMP: f64 = 1e-12;

/// Mean over elements of `w * BCE(p, t)`; absent weights count as 1.
pub fn weighted_bce_seg(pred: &[f64], target: &[f64], weights: Option<&[f64]>) -> Result<WithGrad<Vec<f64>>> {
    check_mask(pred, target)?;
    if let Some(w) = weights {
        if w.len() != pred.len() {
            return Err(BevError::ShapeMismatch(format!(
                "weight map has {} elements, prediction {}",
                w.len(),
                pred.len()
            )));
        }
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(BevError::InvalidArgument("segmentation weights must be non-negative".into()));
        }
    }
    let n = pred.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (i, (&p, &t)) in pred.iter().zip(target).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        value += w * -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln());
        grad.push(w * (-t / pc + (1.0 - t) / (1.0 - pc)) / n);
    }
    Ok(WithGrad { value: value / n, grad })
}

/// Summed (not yet normalized) 3D detection components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetTerms {
    pub cls: f64,
    pub loc: f64,
    pub dir: f64,
    pub n_pos: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SegTerms {
    pub dice: f64,
    pub bce: f64,
}

/// 2D auxiliary head components (classification, box, centerness).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Det2dTerms {
    pub cls: f64,
    pub bbox: f64,
    pub centerness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub det3d: f64,
    pub seg3d: f64,
    pub det2d: f64,
    pub n_pos: usize,
}

/// Combines the three task losses. The 3D detection sum is divided by
/// `max(n_pos, 1)`.
pub fn total_loss(det: &DetTerms, seg: &SegTerms, det2d: &Det2dTerms, weights: &LossWeights) -> Result<LossReport> {
    weights.validate()?;
    let comps = [det.cls, det.loc, det.dir, seg.dice, seg.bce, det2d.cls, det2d.bbox, det2d.centerness];
    if let Some(c) = comps.iter().find(|c| !(**c >= 0.0) || !c.is_finite()) {
        return Err(BevError::InvalidArgument(format!("loss component {c} must be non-negative")));
    }
    let norm = det.n_pos.max(1) as f64;
    let det3d = weights.task_weights[0]
        * (weights.beta_cls * det.cls + weights.beta_loc * det.loc + weights.beta_dir * det.dir)
        / norm;
    let seg3d = weights.task_weights[1] * (weights.beta_dice * seg.dice + weights.beta_bce * seg.bce);
    let det2d = weights.task_weights[2] * (det2d.cls + det2d.bbox + det2d.centerness);
    Ok(LossReport {
        total: det3d + seg3d + det2d,
        det3d,
        seg3d,
        det2d,
        n_pos: det.n_pos,
    })
}

/// How the yaw residual enters the regression target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AngleEncoding {
    /// Regress `theta_gt - theta_anchor` and compare predictions through
    /// [`sin_difference`]; the heading flip is left to the direction loss.
    #[default]
    Sin,
    Raw,
}

/// Anchor-relative regression target in `(x, y, z, w, h, l, theta, vx, vy)` order.
pub fn encode_box_target(gt: &Box3D, anchor: &Box3D) -> [f64; 9] {
    let diag = anchor.w.hypot(anchor.l);
    [
        (gt.x - anchor.x) / diag,
        (gt.y - anchor.y) / diag,
        (gt.z - anchor.z) / anchor.h,
        (gt.w / anchor.w).ln(),
        (gt.h / anchor.h).ln(),
        (gt.l / anchor.l).ln(),
        gt.theta - anchor.theta,
        gt.vx,
        gt.vy,
    ]
}

/// Replaces the yaw pair with `(sin p cos t, cos p sin t)`, whose difference
/// is `sin(p - t)` and therefore blind to a half-turn flip.
pub fn sin_difference(pred: &mut [f64; 9], target: &mut [f64; 9]) {
    let (p, t) = (pred[6], target[6]);
    pred[6] = p.sin() * t.cos();
    target[6] = p.cos() * t.sin();
}

/// Heading-flip bin: 0 for yaw in `[0, pi)`, 1 for `[pi, 2 pi)` after wrapping.
pub fn direction_target(theta: f64) -> bool {
    let a = theta.rem_euclid(TAU);
    a >= PI
}

/// Regression-loss inputs for one positive anchor under `encoding`.
pub fn regression_pair(pred: &[f64; 9], gt: &Box3D, anchor: &Box3D, encoding: AngleEncoding) -> ([f64; 9], [f64; 9]) {
    let mut p = *pred;
    let mut t = encode_box_target(gt, anchor);
    if encoding == AngleEncoding::Sin {
        sin_difference(&mut p, &mut t);
    }
    (p, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_reduces_to_cross_entropy() {
        let l = focal_loss(0.5, true, 1.0, 0.0).unwrap();
        assert!((l.value - 2f64.ln()).abs() < 1e-15);
        let l = focal_loss(0.5, true, 0.25, 2.0).unwrap();
        assert!((l.value - 0.043322).abs() < 1e-6);
        assert!((l.value - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!(focal_loss(1.0 - 1e-12, true, 0.25, 2.0).unwrap().value < 1e-20);
        assert!(focal_loss(1.0, true, 0.25, 2.0).is_err());
        assert!(focal_loss(0.0, false, 0.25, 2.0).is_err());
    }

    #[test]
    fn smooth_l1_examples() {
        let w = LossWeights::default().box_dim_weights;
        let z = [0.3; 9];
        assert_eq!(smooth_l1_box(&z, &z, &w, 1.0 / 9.0).unwrap().value, 0.0);
        let mut p = [0.0; 9];
        p[7] = 1.0;
        let l = smooth_l1_box(&p, &[0.0; 9], &w, 1.0).unwrap();
        assert!((l.value - 0.1).abs() < 1e-15);
        assert!(smooth_l1_box(&p, &p, &w, 0.0).is_err());
    }

    #[test]
    fn direction_examples() {
        assert!((direction_loss(0.0, true).value - 2f64.ln()).abs() < 1e-15);
        assert!(direction_loss(800.0, true).value < 1e-300);
        assert!(direction_loss(-800.0, true).value.is_finite());
        assert!(direction_target(-0.1));
        assert!(!direction_target(0.1));
    }

    #[test]
    fn dice_examples() {
        let t: Vec<f64> = (0..1000).map(|i| (i % 3 == 0) as u8 as f64).collect();
        assert!(dice_loss(&t, &t).unwrap().value.abs() < 1e-12);
        let inv: Vec<f64> = t.iter().map(|x| 1.0 - x).collect();
        assert!(dice_loss(&inv, &t).unwrap().value > 0.999);
        assert!(dice_loss(&t[..3], &t).is_err());
    }

    #[test]
    fn bce_weighting() {
        let p = [0.2, 0.7, 0.9];
        let t = [0.0, 1.0, 0.0];
        let plain = weighted_bce_seg(&p, &t, None).unwrap().value;
        assert_eq!(weighted_bce_seg(&p, &t, Some(&[1.0; 3])).unwrap().value, plain);
        assert!((weighted_bce_seg(&p, &t, Some(&[2.0; 3])).unwrap().value - 2.0 * plain).abs() < 1e-15);
        assert!(weighted_bce_seg(&p, &t, Some(&[1.0; 2])).is_err());
        assert!(weighted_bce_seg(&p, &[0.0, 0.5, 1.0], None).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        let w = LossWeights::default();
        let r = total_loss(&DetTerms::default(), &SegTerms::default(), &Det2dTerms::default(), &w).unwrap();
        assert_eq!(r.total, 0.0);
        let det = DetTerms { cls: 2.0, loc: 0.0, dir: 0.0, n_pos: 2 };
        let r = total_loss(&det, &SegTerms::default(), &Det2dTerms::default(), &w).unwrap();
        assert_eq!(r.det3d, 1.0);
        let bad = DetTerms { cls: -1.0, ..det };
        assert!(total_loss(&bad, &SegTerms::default(), &Det2dTerms::default(), &w).is_err());
    }

    #[test]
    fn sin_encoding_ignores_flip() {
        let anchor = Box3D::new(0.0, 0.0, 0.0, 1.0, 2.0, 1.0, 0.0);
        let gt = Box3D::new(0.5, 0.0, 0.0, 1.0, 2.0, 1.0, 0.4);
        let mut pred = encode_box_target(&gt, &anchor);
        pred[6] += PI;
        let (p, t) = regression_pair(&pred, &gt, &anchor, AngleEncoding::Sin);
        assert!((p[6] - t[6]).abs() < 1e-12);
        let (p, t) = regression_pair(&pred, &gt, &anchor, AngleEncoding::Raw);
        assert!((p[6] - t[6] - PI).abs() < 1e-12);
    }
}
