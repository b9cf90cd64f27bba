//! Training losses and the per-epoch consistency weight schedule.

use autograd::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::curriculum::Level;
use crate::geometry::DepthMap;
use crate::image::{Image, Mask};
use crate::{Error, Result};

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Weights of the SSIM and L1 terms of the photometric loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotometricParams {
    pub alpha: f64,
    pub beta: f64,
    pub ssim_window: usize,
}

impl Default for PhotometricParams {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            beta: 0.15,
            ssim_window: 3,
        }
    }
}

impl PhotometricParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(Error::Config(format!(
                "photometric weights must be non-negative with a positive sum (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(Error::Config(format!(
                "ssim_window must be odd and at least 3, got {}",
                self.ssim_window
            )));
        }
        Ok(())
    }
}

/// Per-pixel, per-channel `(1 - SSIM) / 2` map.
fn dssim_map<'t>(x: Var<'t>, y: Var<'t>, window: usize) -> Var<'t> {
    let pool = |v: Var<'t>| v.avg_pool_reflect(window);
    let mu_x = pool(x);
    let mu_y = pool(y);
    let sigma_x = pool(x.square()) - mu_x.square();
    let sigma_y = pool(y.square()) - mu_y.square();
    let sigma_xy = pool(x * y) - mu_x * mu_y;
    let num = ((mu_x * mu_y) * 2.0 + SSIM_C1) * (sigma_xy * 2.0 + SSIM_C2);
    let den = (mu_x.square() + mu_y.square() + SSIM_C1) * (sigma_x + sigma_y + SSIM_C2);
    (-(num / den) + 1.0) * 0.5
}

/// Masked mean of `alpha * (1 - SSIM) / 2 + beta * |target - recon|`.
///
/// `target` and `reconstructed` are `[n, c, h, w]`; `valid` is a constant
/// `[n, 1, h, w]` tensor of zeros and ones.
pub fn photometric_loss_var<'t>(
    target: Var<'t>,
    reconstructed: Var<'t>,
    valid: &Tensor,
    params: &PhotometricParams,
) -> Result<Var<'t>> {
    params.validate()?;
    let [n, _, h, w] = target.shape();
    if reconstructed.shape() != target.shape() {
        let s = reconstructed.shape();
        return Err(Error::ShapeMismatch {
            context: "photometric loss images",
            expected: (w, h),
            actual: (s[3], s[2]),
        });
    }
    if valid.shape() != [n, 1, h, w] {
        return Err(Error::Config(format!(
            "valid mask shape {:?} does not match images {:?}",
            valid.shape(),
            target.shape()
        )));
    }
    let count = valid.sum();
    if count <= 0.0 {
        return Err(Error::Degenerate(
            "photometric loss over an empty valid mask".into(),
        ));
    }
    let mut per_pixel = (target - reconstructed).abs() * params.beta;
    if params.alpha > 0.0 {
        per_pixel = per_pixel + dssim_map(target, reconstructed, params.ssim_window) * params.alpha;
    }
    let mask = target.tape().constant(valid.clone());
    Ok((per_pixel.mean_channels() * mask).sum() * (1.0 / count))
}

pub fn photometric_loss(
    target: &Image,
    reconstructed: &Image,
    valid: &Mask,
    params: &PhotometricParams,
) -> Result<f64> {
    if target.dims() != reconstructed.dims() || target.channels() != reconstructed.channels() {
        return Err(Error::ShapeMismatch {
            context: "photometric loss images",
            expected: target.dims(),
            actual: reconstructed.dims(),
        });
    }
    if valid.dims() != target.dims() {
        return Err(Error::ShapeMismatch {
            context: "photometric loss mask",
            expected: target.dims(),
            actual: valid.dims(),
        });
    }
    let tape = Tape::new();
    let loss = photometric_loss_var(
        tape.constant(target.to_tensor()),
        tape.constant(reconstructed.to_tensor()),
        &valid.to_tensor(),
        params,
    )?;
    Ok(loss.value().item())
}

/// Edge-aware first-order smoothness of mean-normalized disparity.
pub fn smoothness_var<'t>(disparity: Var<'t>, image: &Tensor) -> Var<'t> {
    let tape = disparity.tape();
    let normalized = disparity / disparity.mean().broadcast_scalar(disparity.shape());
    let img = tape.constant(image.clone());
    let wx = tape.constant(img.diff_x().abs().mean_channels().value().map(|g| (-g).exp()));
    let wy = tape.constant(img.diff_y().abs().mean_channels().value().map(|g| (-g).exp()));
    (normalized.diff_x().abs() * wx).mean() + (normalized.diff_y().abs() * wy).mean()
}

/// Which branch of the consistency loss is cut from backpropagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetachDirection {
    /// Gradients flow into both depth maps.
    None,
    /// The contrast depth is a constant target.
    Contrast,
    /// The training depth is a constant target.
    Augmented,
}

impl DetachDirection {
    /// The branch from the earlier (easier) stage is the fixed target; equal
    /// stages fix the contrast branch.
    pub fn for_stages(augmented: Level, contrast: Level, enabled: bool) -> Self {
        if !enabled {
            Self::None
        } else if contrast > augmented {
            Self::Augmented
        } else {
            Self::Contrast
        }
    }
}

/// Mean of `ln(|D_aug - D_cst| + 1)` over all pixels, with the gradient cut
/// off through the branch chosen by [`DetachDirection::for_stages`].
pub fn contrastive_loss_var<'t>(
    augmented: Var<'t>,
    contrast: Var<'t>,
    augmented_level: Level,
    contrast_level: Level,
    detach_enabled: bool,
) -> Result<Var<'t>> {
    if augmented.shape() != contrast.shape() {
        let (a, c) = (augmented.shape(), contrast.shape());
        return Err(Error::ShapeMismatch {
            context: "contrastive loss depth maps",
            expected: (a[3], a[2]),
            actual: (c[3], c[2]),
        });
    }
    let (a, c) = match DetachDirection::for_stages(augmented_level, contrast_level, detach_enabled)
    {
        DetachDirection::None => (augmented, contrast),
        DetachDirection::Contrast => (augmented, contrast.detach()),
        DetachDirection::Augmented => (augmented.detach(), contrast),
    };
    Ok((a - c).abs().log1p().mean())
}

pub fn contrastive_loss(
    augmented: &DepthMap,
    contrast: &DepthMap,
    augmented_level: Level,
    contrast_level: Level,
    detach_enabled: bool,
) -> Result<f64> {
    let tape = Tape::new();
    let loss = contrastive_loss_var(
        tape.constant(augmented.map().to_tensor()),
        tape.constant(contrast.map().to_tensor()),
        augmented_level,
        contrast_level,
        detach_enabled,
    )?;
    Ok(loss.value().item())
}

/// The components of one optimization step's objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_model: f64,
    pub l_cst: f64,
    pub w_curr: f64,
    pub l_backward: f64,
}

pub fn total_loss(l_model: f64, l_cst: f64, w_curr: f64) -> LossBundle {
    LossBundle {
        l_model,
        l_cst,
        w_curr,
        l_backward: l_model + w_curr * l_cst,
    }
}

pub fn total_loss_var<'t>(l_model: Var<'t>, l_cst: Var<'t>, w_curr: f64) -> Var<'t> {
    l_model + l_cst * w_curr
}

/// How the growth step is bounded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightCap {
    /// `min(w_max * w_cst, lambda * w_curr)`: grow geometrically up to the cap.
    #[default]
    Min,
    /// `max(w_max * w_cst, lambda * w_curr)`: the formula taken literally,
    /// which jumps to the cap on the first update and then keeps growing.
    LiteralMax,
}

/// Consistency weight within the current stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastWeightState {
    pub w_cst: f64,
    pub w_max: f64,
    pub lambda: f64,
    pub w_curr: f64,
    /// Epochs completed in the current stage.
    pub r: usize,
    /// Grow every `period` epochs.
    pub period: usize,
    pub cap: WeightCap,
}

impl ContrastWeightState {
    pub fn new(w_cst: f64, w_max: f64, lambda: f64) -> Result<Self> {
        if !(w_cst >= 0.0 && w_cst.is_finite()) {
            return Err(Error::Config(format!("w_cst must be finite and >= 0, got {w_cst}")));
        }
        if !(w_max >= 1.0 && w_max.is_finite()) {
            return Err(Error::Config(format!("w_max must be finite and >= 1, got {w_max}")));
        }
        if !(lambda > 1.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and > 1, got {lambda}")));
        }
        Ok(Self {
            w_cst,
            w_max,
            lambda,
            w_curr: w_cst,
            r: 0,
            period: 2,
            cap: WeightCap::Min,
        })
    }

    pub fn with_period(mut self, period: usize) -> Self {
        self.period = period.max(1);
        self
    }

    pub fn with_cap(mut self, cap: WeightCap) -> Self {
        self.cap = cap;
        self
    }

    /// Start-of-epoch update.
    pub fn update(&mut self) {
        if self.r == 0 {
            self.w_curr = self.w_cst;
        } else if self.r % self.period == 0 {
            let grown = self.lambda * self.w_curr;
            let cap = self.w_max * self.w_cst;
            self.w_curr = match self.cap {
                WeightCap::Min => grown.min(cap),
                WeightCap::LiteralMax => grown.max(cap),
            };
        }
    }

    pub fn finish_epoch(&mut self) {
        self.r += 1;
    }

    /// Back to the first epoch of a stage.
    pub fn reset(&mut self) {
        self.r = 0;
        self.w_curr = self.w_cst;
    }
}

/// Functional form of [`ContrastWeightState::update`].
pub fn update_contrast_weight(mut state: ContrastWeightState) -> ContrastWeightState {
    state.update();
    state
}
