//! Stereo camera model, disparity/depth conversion and view synthesis.
//!
//! Training assumes a rectified rig, where reprojecting a pixel from one
//! view into the other reduces to a horizontal shift by its disparity. The
//! general pinhole reprojection through the rig extrinsics is also provided
//! ([`warp_general`]) and agrees with the shortcut on rectified rigs.
//!
//! Sampling is bilinear everywhere. Samples that land outside the source
//! image read the clamped border value and are flagged invalid in the
//! returned mask; losses average over valid pixels only.

use autograd::{horizontal_tap, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::image::{Image, Map, Mask};
use crate::{Error, Result};

/// Default lower bound on disparity before a map is treated as degenerate.
pub const DEFAULT_DISPARITY_EPSILON: f64 = 1e-6;

/// Rotation plus translation acting on 3-D points: `p' = R p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub const IDENTITY: Self = Self {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
    };

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::IDENTITY
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        std::array::from_fn(|i| {
            r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + self.translation[i]
        })
    }

    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let rt: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| r[j][i]));
        let t = &self.translation;
        let translation =
            std::array::from_fn(|i| -(rt[i][0] * t[0] + rt[i][1] * t[1] + rt[i][2] * t[2]));
        Self {
            rotation: rt,
            translation,
        }
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &Self) -> Self {
        let (a, b) = (&self.rotation, &other.rotation);
        let rotation = std::array::from_fn(|i| {
            std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum())
        });
        let tb = self.apply(other.translation);
        Self {
            rotation,
            translation: tb,
        }
    }

    pub fn max_deviation_from_identity(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                m = m.max((self.rotation[i][j] - id).abs());
            }
            m = m.max(self.translation[i].abs());
        }
        m
    }
}

/// Intrinsics and extrinsics of a stereo pair.
///
/// Serializes to the `rig.json` dataset metadata (`fx, fy, cx, cy, b, W, H`);
/// the right-to-left transform is not stored and is rebuilt as the rectified
/// translation by the baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigFile", into = "RigFile")]
pub struct CameraRig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Stereo baseline in meters.
    pub baseline: f64,
    pub width: usize,
    pub height: usize,
    /// Maps points from the right camera frame into the left camera frame.
    pub right_to_left: RigidTransform,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct RigFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    b: f64,
    W: usize,
    H: usize,
}

impl TryFrom<RigFile> for CameraRig {
    type Error = Error;
    fn try_from(f: RigFile) -> Result<Self> {
        CameraRig::rectified(f.fx, f.fy, f.cx, f.cy, f.b, f.W, f.H)
    }
}

impl From<CameraRig> for RigFile {
    fn from(r: CameraRig) -> Self {
        RigFile {
            fx: r.fx,
            fy: r.fy,
            cx: r.cx,
            cy: r.cy,
            b: r.baseline,
            W: r.width,
            H: r.height,
        }
    }
}

impl CameraRig {
    /// Rectified rig whose right camera sits `baseline` meters along +x of
    /// the left camera.
    pub fn rectified(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        baseline: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let rig = Self {
            fx,
            fy,
            cx,
            cy,
            baseline,
            width,
            height,
            right_to_left: RigidTransform::translation([baseline, 0.0, 0.0]),
        };
        rig.validate()?;
        Ok(rig)
    }

    /// 192x64 rig with KITTI-like normalized focal length and baseline.
    pub fn desk_scale() -> Self {
        Self::for_resolution(192, 64)
    }

    pub fn for_resolution(width: usize, height: usize) -> Self {
        let f = 0.58 * width as f64;
        Self::rectified(f, f, width as f64 / 2.0, height as f64 / 2.0, 0.54, width, height)
            .expect("positive resolution gives a valid rig")
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.baseline]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 || self.baseline <= 0.0 {
            return Err(Error::Config(format!(
                "rig needs positive finite fx, fy and baseline (fx={}, fy={}, b={})",
                self.fx, self.fy, self.baseline
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("rig resolution must be positive".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::Config(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        let round_trip = self.right_to_left.compose(&self.right_to_left.inverse());
        if round_trip.max_deviation_from_identity() > 1e-9 {
            return Err(Error::Config("right_to_left transform is not invertible".into()));
        }
        Ok(())
    }

    /// `b * fx`, the disparity of a point at one meter.
    pub fn disparity_scale(&self) -> f64 {
        self.baseline * self.fx
    }

    pub fn left_to_right(&self) -> RigidTransform {
        self.right_to_left.inverse()
    }

    fn check_dims(&self, context: &'static str, dims: (usize, usize)) -> Result<()> {
        if dims != (self.width, self.height) {
            return Err(Error::ShapeMismatch {
                context,
                expected: (self.width, self.height),
                actual: dims,
            });
        }
        Ok(())
    }
}

fn check_positive(map: &Map, what: &str) -> Result<()> {
    if let Some(v) = map.data().iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Degenerate(format!(
            "{what} values must be positive and finite, found {v}"
        )));
    }
    Ok(())
}

/// Horizontal disparity in pixels; strictly positive and finite.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap(Map);

impl DisparityMap {
    pub fn new(map: Map) -> Result<Self> {
        check_positive(&map, "disparity")?;
        Ok(Self(map))
    }

    /// Also enforces the upper bound `d_max`.
    pub fn bounded(map: Map, d_max: f64) -> Result<Self> {
        if let Some(v) = map.data().iter().find(|v| **v > d_max) {
            return Err(Error::Degenerate(format!(
                "disparity {v} exceeds bound {d_max}"
            )));
        }
        Self::new(map)
    }

    pub fn map(&self) -> &Map {
        &self.0
    }

    pub fn into_map(self) -> Map {
        self.0
    }
}

/// Metric depth in meters; strictly positive and finite.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap(Map);

impl DepthMap {
    pub fn new(map: Map) -> Result<Self> {
        check_positive(&map, "depth")?;
        Ok(Self(map))
    }

    pub fn map(&self) -> &Map {
        &self.0
    }

    pub fn into_map(self) -> Map {
        self.0
    }
}

/// `D = b * fx / d`, rejecting disparities at or below the default epsilon.
pub fn disparity_to_depth(d: &DisparityMap, rig: &CameraRig) -> Result<DepthMap> {
    disparity_to_depth_with_epsilon(d, rig, DEFAULT_DISPARITY_EPSILON)
}

pub fn disparity_to_depth_with_epsilon(
    d: &DisparityMap,
    rig: &CameraRig,
    epsilon: f64,
) -> Result<DepthMap> {
    if let Some(v) = d.map().data().iter().find(|v| **v <= epsilon) {
        return Err(Error::Degenerate(format!(
            "disparity {v} at or below epsilon {epsilon}"
        )));
    }
    let scale = rig.disparity_scale();
    DepthMap::new(d.map().map(|v| scale / v))
}

/// `d = b * fx / D`.
pub fn depth_to_disparity(depth: &DepthMap, rig: &CameraRig) -> DisparityMap {
    let scale = rig.disparity_scale();
    DisparityMap(depth.map().map(|v| scale / v))
}

/// Differentiable `b * fx / d` on a disparity batch.
pub fn disparity_to_depth_var<'t>(disparity: Var<'t>, rig: &CameraRig) -> Var<'t> {
    disparity.recip(rig.disparity_scale())
}

/// Which view is synthesized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpDirection {
    /// Reconstruct the left view from the right image and left-view depth.
    RightToLeft,
    /// Reconstruct the right view from the left image and right-view depth.
    LeftToRight,
}

impl WarpDirection {
    /// Source column is `x + sign * disparity`.
    pub fn sign(self) -> f64 {
        match self {
            Self::RightToLeft => -1.0,
            Self::LeftToRight => 1.0,
        }
    }
}

/// Differentiable rectified warp of a `[n, c, h, w]` source by a
/// `[n, 1, h, w]` disparity batch.
pub fn warp_var<'t>(source: Var<'t>, disparity: Var<'t>, direction: WarpDirection) -> Var<'t> {
    source.warp_horizontal(&disparity, direction.sign())
}

/// Valid-sample mask (`[n, 1, h, w]`, 1.0 or 0.0) for a disparity batch.
pub fn valid_mask_tensor(disparity: &Tensor, direction: WarpDirection) -> Tensor {
    let [n, _, h, w] = disparity.shape();
    let sign = direction.sign();
    Tensor::from_fn([n, 1, h, w], |[i, _, y, x]| {
        let xs = x as f64 + sign * disparity.at([i, 0, y, x]);
        if horizontal_tap(xs, w).2 {
            1.0
        } else {
            0.0
        }
    })
}

/// Rectified warp by an arbitrary (possibly zero) per-pixel shift map.
pub fn warp_by_disparity(
    source: &Image,
    disparity: &Map,
    direction: WarpDirection,
) -> Result<(Image, Mask)> {
    if source.dims() != disparity.dims() {
        return Err(Error::ShapeMismatch {
            context: "warp source vs disparity",
            expected: source.dims(),
            actual: disparity.dims(),
        });
    }
    let tape = Tape::new();
    let d = disparity.to_tensor();
    let warped = warp_var(tape.constant(source.to_tensor()), tape.constant(d.clone()), direction);
    let out = Image::from_tensor(&warped.value(), 0);
    let mask = Mask::from_tensor(&valid_mask_tensor(&d, direction), 0);
    Ok((out, mask))
}

/// Synthesizes the target view from `source` using the target-view depth.
pub fn warp(
    source: &Image,
    depth: &DepthMap,
    rig: &CameraRig,
    direction: WarpDirection,
) -> Result<(Image, Mask)> {
    rig.check_dims("warp source vs rig", source.dims())?;
    rig.check_dims("warp depth vs rig", depth.map().dims())?;
    let disparity = depth_to_disparity(depth, rig);
    warp_by_disparity(source, disparity.map(), direction)
}

/// Warp of the unaugmented source view by depth predicted from an augmented
/// target image.
///
/// The arithmetic is exactly [`warp`]; what differs is the contract: the
/// source is the clear image and the result is compared against the clear
/// target, so weather artifacts in the input never enter the photometric
/// comparison.
pub fn semi_augmented_warp(
    clear_source: &Image,
    augmented_depth: &DepthMap,
    rig: &CameraRig,
    direction: WarpDirection,
) -> Result<(Image, Mask)> {
    warp(clear_source, augmented_depth, rig, direction)
}

/// Sample coordinates in the source view for every target pixel, obtained by
/// back-projecting with `depth`, moving through the rig extrinsics and
/// projecting with the intrinsics.
pub fn reproject(depth: &DepthMap, rig: &CameraRig, direction: WarpDirection) -> Result<(Map, Map)> {
    rig.check_dims("reproject depth vs rig", depth.map().dims())?;
    // Target frame -> source frame.
    let to_source = match direction {
        WarpDirection::RightToLeft => rig.left_to_right(),
        WarpDirection::LeftToRight => rig.right_to_left,
    };
    let (w, h) = (rig.width, rig.height);
    let mut xs = Map::filled(w, h, 0.0);
    let mut ys = Map::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let z = depth.map().get(y, x);
            let p = [
                (x as f64 - rig.cx) / rig.fx * z,
                (y as f64 - rig.cy) / rig.fy * z,
                z,
            ];
            let q = to_source.apply(p);
            xs.set(y, x, rig.fx * q[0] / q[2] + rig.cx);
            ys.set(y, x, rig.fy * q[1] / q[2] + rig.cy);
        }
    }
    Ok((xs, ys))
}

/// General-extrinsics warp with 2-D bilinear sampling.
pub fn warp_general(
    source: &Image,
    depth: &DepthMap,
    rig: &CameraRig,
    direction: WarpDirection,
) -> Result<(Image, Mask)> {
    rig.check_dims("warp source vs rig", source.dims())?;
    let (xs, ys) = reproject(depth, rig, direction)?;
    let (w, h) = (rig.width, rig.height);
    let mut out = Image::filled(w, h, source.channels(), 0.0);
    let mask = Mask::from_fn(w, h, |y, x| {
        let (x0, ax, in_x) = horizontal_tap(xs.get(y, x), w);
        let (y0, ay, in_y) = horizontal_tap(ys.get(y, x), h);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        for c in 0..source.channels() {
            let top = (1.0 - ax) * source.get(c, y0, x0) + ax * source.get(c, y0, x1);
            let bottom = (1.0 - ax) * source.get(c, y1, x0) + ax * source.get(c, y1, x1);
            out.set(c, y, x, (1.0 - ay) * top + ay * bottom);
        }
        in_x && in_y
    });
    Ok((out, mask))
}
