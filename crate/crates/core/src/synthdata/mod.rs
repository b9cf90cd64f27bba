//! Procedural rectified stereo scenes with exact ground-truth depth.
//!
//! A scene is a textured far wall, an optional ground plane, and a handful
//! of camera-facing box faces standing on the ground at distinct depths.
//! Sizes and texture scales are metric, so apparent size, ground contact row
//! and texture detail all vary with depth the way they do in street scenes.
//! The ground is rasterized as one fronto-parallel strip per image row, so
//! every surface a pixel sees has constant depth along the row and the right
//! view is an exact horizontal shift of the left view on every surface.
//! Texture detail fades once a pixel covers more than a fraction of a noise
//! cell, which keeps bilinear resampling error small at any depth.

mod dataset;

pub use dataset::{augment_dataset, generate_dataset, variant_seed, Dataset, Entry, Side};

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::WeatherVariantId;
use crate::geometry::{CameraRig, DepthMap};
use crate::image::{Image, Map, Mask};
use crate::noise::value_noise;
use crate::{Error, Result};

/// Depth PNGs store `round(depth_m * DEPTH_SCALE)` as 16-bit values.
pub const DEPTH_SCALE: f64 = 256.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub seed: u64,
    pub base: [f64; 3],
    pub accent: [f64; 3],
    /// Noise lattice spacing in meters.
    pub cell: f64,
    /// Period of the soft checker in meters.
    pub checker: f64,
}

impl Texture {
    fn random(rng: &mut impl Rng, base: (f64, f64)) -> Self {
        Self {
            seed: rng.random(),
            base: std::array::from_fn(|_| rng.random_range(base.0..base.1)),
            accent: std::array::from_fn(|_| rng.random_range(0.0..0.6)),
            cell: rng.random_range(0.15..0.5),
            checker: rng.random_range(0.6..2.0),
        }
    }

    fn mean(&self) -> [f64; 3] {
        std::array::from_fn(|c| self.base[c] * (0.35 + 0.65 * 0.5) + self.accent[c] * 0.35 * 0.5)
    }

    /// Color at surface coordinates `(s, t)` in meters, seen with a pixel
    /// footprint of `footprint` meters.
    pub fn sample(&self, s: f64, t: f64, footprint: f64) -> [f64; 3] {
        let n = 0.65 * value_noise(self.seed, s, t, self.cell)
            + 0.35 * value_noise(self.seed ^ 0x5bd1_e995, s, t, self.cell * 0.5);
        let tau = std::f64::consts::TAU;
        let checker = 0.5 + 0.5 * (tau * s / self.checker).sin() * (tau * t / self.checker).sin();
        let r = footprint / (0.5 * self.cell);
        let detail = 1.0 / (1.0 + r * r);
        let mean = self.mean();
        std::array::from_fn(|c| {
            let full = self.base[c] * (0.35 + 0.65 * n) + self.accent[c] * 0.35 * checker;
            (mean[c] + detail * (full - mean[c])).clamp(0.0, 1.0)
        })
    }
}

/// Camera-facing box face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    /// Center in left-camera coordinates (x right, y down, z forward), meters.
    pub center: [f64; 3],
    /// Width and height in meters.
    pub size: [f64; 2],
    pub texture: Texture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub rig: CameraRig,
    /// Depth of the far wall that covers every pixel nothing else covers.
    pub background_depth: f64,
    pub background: Texture,
    /// Camera height above the ground plane; `None` for no ground.
    pub camera_height: Option<f64>,
    pub ground: Texture,
    /// Sorted nearest first.
    pub objects: Vec<SceneObject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub min_depth: f64,
    pub max_depth: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Forces an exact object count when set.
    pub object_count: Option<usize>,
    /// Background depth range, meters.
    pub background_depth: (f64, f64),
    /// Camera height above a ground plane the objects stand on; `None`
    /// removes the ground and places objects anywhere in view.
    pub camera_height: Option<f64>,
    pub object_width: (f64, f64),
    pub object_height: (f64, f64),
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_depth: 2.0,
            max_depth: 80.0,
            min_objects: 3,
            max_objects: 10,
            object_count: None,
            background_depth: (25.0, 80.0),
            camera_height: Some(1.65),
            object_width: (0.6, 3.5),
            object_height: (0.8, 3.0),
        }
    }
}

fn quantize_depth(z: f64) -> f64 {
    (z * DEPTH_SCALE).round() / DEPTH_SCALE
}

/// Depth drawn uniformly in disparity between `near` and `far`.
fn depth_uniform_in_disparity(rng: &mut impl Rng, near: f64, far: f64) -> f64 {
    let inv = rng.random_range(1.0 / far..=1.0 / near);
    quantize_depth(1.0 / inv)
}

pub fn generate_scene(seed: u64, rig: &CameraRig) -> Result<Scene> {
    generate_scene_with(seed, rig, &SceneConfig::default())
}

pub fn generate_scene_with(seed: u64, rig: &CameraRig, config: &SceneConfig) -> Result<Scene> {
    rig.validate()?;
    let (bg_near, bg_far) = config.background_depth;
    let sizes_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi;
    if !(config.min_depth > 0.0
        && config.min_depth < bg_near
        && bg_near <= bg_far
        && bg_far <= config.max_depth
        && config.min_objects <= config.max_objects
        && config.camera_height.is_none_or(|h| h > 0.0)
        && sizes_ok(config.object_width)
        && sizes_ok(config.object_height))
    {
        return Err(Error::Config(format!("inconsistent scene config {config:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background_depth = depth_uniform_in_disparity(&mut rng, bg_near, bg_far);
    let background = Texture::random(&mut rng, (0.3, 0.9));
    let ground = Texture::random(&mut rng, (0.2, 0.55));
    let count = config
        .object_count
        .unwrap_or_else(|| rng.random_range(config.min_objects..=config.max_objects));

    let (w, h) = (rig.width as f64, rig.height as f64);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    let far_limit = (background_depth - 1.0).min(config.max_depth);
    while objects.len() < count {
        let z = depth_uniform_in_disparity(&mut rng, config.min_depth, far_limit);
        if objects.iter().any(|o| (o.center[2] - z).abs() < 0.25) {
            continue;
        }
        let width = rng.random_range(config.object_width.0..=config.object_width.1);
        let height = rng.random_range(config.object_height.0..=config.object_height.1);
        let u = rng.random_range(0.0..w);
        let cy = match config.camera_height {
            Some(cam) => cam - height / 2.0,
            None => (rng.random_range(0.0..h) - rig.cy) * z / rig.fy,
        };
        objects.push(SceneObject {
            center: [(u - rig.cx) * z / rig.fx, cy, z],
            size: [width, height],
            texture: Texture::random(&mut rng, (0.25, 0.9)),
        });
    }
    objects.sort_by(|a, b| a.center[2].total_cmp(&b.center[2]));
    Ok(Scene {
        seed,
        rig: rig.clone(),
        background_depth,
        background,
        camera_height: config.camera_height,
        ground,
        objects,
    })
}

/// One stereo frame with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub scene: String,
    pub frame: String,
    pub left: Image,
    pub right: Image,
    /// Left-view metric depth.
    pub depth: DepthMap,
    /// Rendered weather variants of the left image, relative to the dataset
    /// root.
    pub variants: BTreeMap<WeatherVariantId, PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum View {
    Left,
    Right,
}

/// What a pixel sees: surface id (0 = wall, 1 = ground, `i + 2` = object
/// `i`), depth and surface coordinates in meters.
#[derive(Clone, Copy, Debug)]
struct Hit {
    surface: usize,
    depth: f64,
    s: f64,
    t: f64,
}

impl Scene {
    /// Quantized ground depth seen by row `y`, if the ground is nearer than
    /// the wall there.
    fn ground_depth(&self, y: f64) -> Option<f64> {
        let cam = self.camera_height?;
        let below = y - self.rig.cy;
        if below <= 0.0 {
            return None;
        }
        let z = quantize_depth(self.rig.fy * cam / below);
        (z > 0.0 && z < self.background_depth).then_some(z)
    }

    fn hit(&self, view: View, x: f64, y: f64) -> Hit {
        let rig = &self.rig;
        let offset = match view {
            View::Left => 0.0,
            View::Right => rig.baseline,
        };
        // Left-camera x coordinate of the point at depth `z` seen by this pixel.
        let lateral = |z: f64| (x - rig.cx) * z / rig.fx + offset;
        let vertical = |z: f64| (y - rig.cy) * z / rig.fy;
        let ground = self.ground_depth(y);
        for (i, o) in self.objects.iter().enumerate() {
            let z = o.center[2];
            if ground.is_some_and(|g| g < z) {
                continue;
            }
            let (px, py) = (lateral(z), vertical(z));
            let (hx, hy) = (o.size[0] / 2.0, o.size[1] / 2.0);
            if (o.center[0] - hx..o.center[0] + hx).contains(&px) && (o.center[1] - hy..o.center[1] + hy).contains(&py) {
                return Hit {
                    surface: i + 2,
                    depth: z,
                    s: px,
                    t: py,
                };
            }
        }
        if let Some(z) = ground {
            return Hit {
                surface: 1,
                depth: z,
                s: lateral(z),
                t: z,
            };
        }
        let z = self.background_depth;
        Hit {
            surface: 0,
            depth: z,
            s: lateral(z),
            t: vertical(z),
        }
    }

    fn texture(&self, surface: usize) -> &Texture {
        match surface {
            0 => &self.background,
            1 => &self.ground,
            i => &self.objects[i - 2].texture,
        }
    }

    fn render_view(&self, view: View) -> Image {
        let (w, h) = (self.rig.width, self.rig.height);
        let mut img = Image::filled(w, h, 3, 0.0);
        for y in 0..h {
            for x in 0..w {
                let hit = self.hit(view, x as f64, y as f64);
                let footprint = hit.depth / self.rig.fx;
                img.set_rgb(y, x, self.texture(hit.surface).sample(hit.s, hit.t, footprint));
            }
        }
        img.quantized()
    }

    pub fn depth_map(&self) -> DepthMap {
        let (w, h) = (self.rig.width, self.rig.height);
        DepthMap::new(Map::from_fn(w, h, |y, x| self.hit(View::Left, x as f64, y as f64).depth))
            .expect("scene depths are positive")
    }

    /// Left pixels whose bilinear taps in the right view both see the same
    /// surface as the left pixel.
    pub fn non_occluded_mask(&self) -> Mask {
        let rig = &self.rig;
        let (w, h) = (rig.width, rig.height);
        Mask::from_fn(w, h, |y, x| {
            let hit = self.hit(View::Left, x as f64, y as f64);
            let xr = x as f64 - rig.disparity_scale() / hit.depth;
            let (x0, a, inside) = autograd::horizontal_tap(xr, w);
            if !inside {
                return false;
            }
            let same = |xx: usize| self.hit(View::Right, xx as f64, y as f64).surface == hit.surface;
            same(x0) && (a == 0.0 || same((x0 + 1).min(w - 1)))
        })
    }
}

/// Rasterizes both views (8-bit quantized) and the exact left depth.
pub fn render_stereo(scene: &Scene, scene_id: &str, frame_id: &str) -> Sample {
    Sample {
        scene: scene_id.to_string(),
        frame: frame_id.to_string(),
        left: scene.render_view(View::Left),
        right: scene.render_view(View::Right),
        depth: scene.depth_map(),
        variants: BTreeMap::new(),
    }
}

/// Scene directory name for index `i`.
pub fn scene_name(i: usize) -> String {
    format!("scene_{i:05}")
}

/// Frame name for index `i`.
pub fn frame_name(i: usize) -> String {
    format!("{i:06}")
}
