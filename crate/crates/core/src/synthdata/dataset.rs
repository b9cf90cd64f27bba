//! On-disk dataset layout.
//!
//! ```text
//! <root>/rig.json                         fx, fy, cx, cy, b, W, H
//! <root>/<scene>/<frame>_<L|R>_<weather>_<mag>.png   8-bit RGB
//! <root>/<scene>/<frame>_depth.png        16-bit, depth_m = raw / 256
//! ```
//!
//! The clear pair is `<frame>_L_clear_0.png` / `<frame>_R_clear_0.png`.
//! Weather variants are rendered for the left view only. A variant present
//! for any frame is expected for every frame; a gap is reported at load time.
//! Variants absent from the whole dataset are only an error once training
//! asks for them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::{frame_name, generate_scene, render_stereo, scene_name, Sample, DEPTH_SCALE};
use crate::augmentation::{build_variant_from, WeatherConfig, WeatherVariantId};
use crate::geometry::{CameraRig, DepthMap};
use crate::image::{Image, Map};
use crate::{Error, Result};

const RIG_FILE: &str = "rig.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn tag(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub scene: String,
    pub frame: String,
    pub variants: BTreeSet<WeatherVariantId>,
}

/// Read-only handle to a dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    rig: CameraRig,
    entries: Vec<Entry>,
}

fn image_file(frame: &str, side: Side, variant: WeatherVariantId) -> String {
    format!("{frame}_{}_{variant}.png", side.tag())
}

fn depth_file(frame: &str) -> String {
    format!("{frame}_depth.png")
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

pub fn write_rig(root: &Path, rig: &CameraRig) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let path = root.join(RIG_FILE);
    let json = serde_json::to_string_pretty(rig).map_err(|e| Error::data(&path, e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

impl Dataset {
    /// Writes the clear pairs, depth maps and `rig.json`. Variant paths in the
    /// samples must already point at files under `root`.
    pub fn write(samples: &[Sample], rig: &CameraRig, root: &Path) -> Result<Self> {
        write_rig(root, rig)?;
        for s in samples {
            let dir = root.join(&s.scene);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            s.left
                .save_png(&dir.join(image_file(&s.frame, Side::Left, WeatherVariantId::CLEAR)))?;
            s.right
                .save_png(&dir.join(image_file(&s.frame, Side::Right, WeatherVariantId::CLEAR)))?;
            s.depth
                .map()
                .save_png16(&dir.join(depth_file(&s.frame)), DEPTH_SCALE)?;
        }
        Self::load(root)
    }

    pub fn load(root: &Path) -> Result<Self> {
        let rig_path = root.join(RIG_FILE);
        let text = fs::read_to_string(&rig_path).map_err(|e| Error::io(&rig_path, e))?;
        let rig: CameraRig =
            serde_json::from_str(&text).map_err(|e| Error::data(&rig_path, e.to_string()))?;

        let mut entries = Vec::new();
        for dir in read_dir_sorted(root)? {
            if !dir.is_dir() {
                continue;
            }
            let scene = dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::data(&dir, "scene directory name is not UTF-8"))?
                .to_string();
            let mut frames: BTreeMap<String, BTreeSet<WeatherVariantId>> = BTreeMap::new();
            let mut rights = BTreeSet::new();
            let mut depths = BTreeSet::new();
            for file in read_dir_sorted(&dir)? {
                let Some(name) = file.file_name().and_then(|n| n.to_str()) else {
                    continue;
                };
                let Some(stem) = name.strip_suffix(".png") else {
                    continue;
                };
                if let Some(frame) = stem.strip_suffix("_depth") {
                    depths.insert(frame.to_string());
                    continue;
                }
                let parts: Vec<&str> = stem.splitn(3, '_').collect();
                let [frame, side, variant] = parts[..] else {
                    return Err(Error::data(&file, "unrecognized file name"));
                };
                let variant: WeatherVariantId = variant
                    .parse()
                    .map_err(|e: Error| Error::data(&file, e.to_string()))?;
                match side {
                    "L" => {
                        frames.entry(frame.to_string()).or_default().insert(variant);
                    }
                    "R" if variant == WeatherVariantId::CLEAR => {
                        rights.insert(frame.to_string());
                    }
                    "R" => {}
                    _ => return Err(Error::data(&file, "side must be L or R")),
                }
            }
            for (frame, variants) in frames {
                if !variants.contains(&WeatherVariantId::CLEAR) {
                    return Err(Error::data(
                        dir.join(image_file(&frame, Side::Left, WeatherVariantId::CLEAR)),
                        "missing clear left image",
                    ));
                }
                if !rights.contains(&frame) {
                    return Err(Error::data(
                        dir.join(image_file(&frame, Side::Right, WeatherVariantId::CLEAR)),
                        "missing clear right image",
                    ));
                }
                if !depths.contains(&frame) {
                    return Err(Error::data(dir.join(depth_file(&frame)), "missing depth map"));
                }
                entries.push(Entry {
                    scene: scene.clone(),
                    frame,
                    variants,
                });
            }
        }
        if entries.is_empty() {
            return Err(Error::data(root, "dataset contains no frames"));
        }

        let union: BTreeSet<WeatherVariantId> =
            entries.iter().flat_map(|e| e.variants.iter().copied()).collect();
        for e in &entries {
            if let Some(missing) = union.difference(&e.variants).next() {
                return Err(Error::MissingVariant {
                    scene: e.scene.clone(),
                    frame: e.frame.clone(),
                    variant: missing.to_string(),
                });
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            rig,
            entries,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn rig(&self) -> &CameraRig {
        &self.rig
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Variants available for every frame.
    pub fn variants(&self) -> BTreeSet<WeatherVariantId> {
        self.entries[0].variants.clone()
    }

    /// Errors with the first frame lacking one of `variants`.
    pub fn require_variants(&self, variants: &[WeatherVariantId]) -> Result<()> {
        for e in &self.entries {
            if let Some(v) = variants.iter().find(|v| !e.variants.contains(v)) {
                return Err(Error::MissingVariant {
                    scene: e.scene.clone(),
                    frame: e.frame.clone(),
                    variant: v.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn relative_path(&self, index: usize, side: Side, variant: WeatherVariantId) -> PathBuf {
        let e = &self.entries[index];
        Path::new(&e.scene).join(image_file(&e.frame, side, variant))
    }

    pub fn load_image(&self, index: usize, side: Side, variant: WeatherVariantId) -> Result<Image> {
        let e = &self.entries[index];
        if side == Side::Left && !e.variants.contains(&variant) {
            return Err(Error::MissingVariant {
                scene: e.scene.clone(),
                frame: e.frame.clone(),
                variant: variant.to_string(),
            });
        }
        Image::load_png(&self.root.join(self.relative_path(index, side, variant)))
    }

    pub fn load_depth(&self, index: usize) -> Result<DepthMap> {
        let e = &self.entries[index];
        let path = self.root.join(&e.scene).join(depth_file(&e.frame));
        DepthMap::new(Map::load_png16(&path, DEPTH_SCALE)?)
            .map_err(|err| Error::data(&path, err.to_string()))
    }

    pub fn sample(&self, index: usize) -> Result<Sample> {
        let e = &self.entries[index];
        Ok(Sample {
            scene: e.scene.clone(),
            frame: e.frame.clone(),
            left: self.load_image(index, Side::Left, WeatherVariantId::CLEAR)?,
            right: self.load_image(index, Side::Right, WeatherVariantId::CLEAR)?,
            depth: self.load_depth(index)?,
            variants: e
                .variants
                .iter()
                .filter(|v| **v != WeatherVariantId::CLEAR)
                .map(|v| (*v, self.relative_path(index, Side::Left, *v)))
                .collect(),
        })
    }
}

/// Per-frame seed for rendering `variant`.
pub fn variant_seed(base: u64, entry_index: usize, variant: WeatherVariantId) -> u64 {
    let v = u64::from(variant.magnitude()) * 8 + variant.weather() as u64;
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (entry_index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ v.wrapping_mul(0x1656_67B1_9E37_79F9)
}

/// Renders `scenes` scenes of `frames` frames each under `root`.
pub fn generate_dataset(root: &Path, scenes: usize, seed: u64, rig: &CameraRig) -> Result<Dataset> {
    let samples = (0..scenes)
        .map(|i| {
            let scene = generate_scene(seed.wrapping_add(i as u64), rig)?;
            Ok(render_stereo(&scene, &scene_name(i), &frame_name(0)))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::write(&samples, rig, root)
}

/// Writes the requested weather variants of every left clear image.
pub fn augment_dataset(
    dataset: &Dataset,
    variants: &[WeatherVariantId],
    seed: u64,
    config: &WeatherConfig,
) -> Result<Dataset> {
    for i in 0..dataset.len() {
        let left = dataset.load_image(i, Side::Left, WeatherVariantId::CLEAR)?;
        let depth = dataset.load_depth(i)?;
        for &v in variants {
            if v == WeatherVariantId::CLEAR {
                continue;
            }
            let img = build_variant_from(&left, Some(&depth), v, variant_seed(seed, i, v), config)?;
            img.save_png(&dataset.root().join(dataset.relative_path(i, Side::Left, v)))?;
        }
    }
    Dataset::load(dataset.root())
}
