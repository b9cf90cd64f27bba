//! Depth network contract, the reference encoder-decoder, Adam and the
//! checkpoint container.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use autograd::{Gradients, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraRig, DisparityMap};
use crate::image::{Image, Map};
use crate::{Error, Result};

const INPUT_MEAN: f64 = 0.45;
const INPUT_STD: f64 = 0.225;
/// Initial head bias; puts the first predictions at a few pixels of disparity
/// rather than mid-range.
const HEAD_BIAS_INIT: f64 = -2.5;

/// Shape and output range of the reference network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub width: usize,
    pub height: usize,
    /// Channels of the first encoder level; level `k` has `base << k`.
    pub base_channels: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub init_seed: u64,
}

impl ArchConfig {
    /// Defaults for a rig: `d_min = 0.5 px`, `d_max = W / 3 px`.
    pub fn for_rig(rig: &CameraRig, base_channels: usize, init_seed: u64) -> Self {
        Self {
            width: rig.width,
            height: rig.height,
            base_channels,
            d_min: 0.5,
            d_max: rig.width as f64 / 3.0,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width % 8 != 0 || self.height % 8 != 0 {
            return Err(Error::Config(format!(
                "resolution {}x{} must be a positive multiple of 8",
                self.width, self.height
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if !(self.d_min > 0.0 && self.d_max > self.d_min && self.d_max.is_finite()) {
            return Err(Error::Config(format!(
                "disparity range must satisfy 0 < d_min < d_max (got {}, {})",
                self.d_min, self.d_max
            )));
        }
        Ok(())
    }

    /// Names the first field that differs from `other`.
    pub fn mismatch(&self, other: &Self) -> Option<String> {
        let fields: [(&str, String, String); 5] = [
            ("width", self.width.to_string(), other.width.to_string()),
            ("height", self.height.to_string(), other.height.to_string()),
            (
                "base_channels",
                self.base_channels.to_string(),
                other.base_channels.to_string(),
            ),
            ("d_min", self.d_min.to_string(), other.d_min.to_string()),
            ("d_max", self.d_max.to_string(), other.d_max.to_string()),
        ];
        fields
            .into_iter()
            .find(|(_, a, b)| a != b)
            .map(|(name, a, b)| format!("{name}: expected {a}, found {b}"))
    }
}

/// A trainable image-to-disparity network.
pub trait DepthNetwork {
    fn arch(&self) -> &ArchConfig;
    fn parameters(&self) -> &[Tensor];
    fn parameters_mut(&mut self) -> &mut [Tensor];

    /// Forward pass on a `[n, 3, H, W]` batch with parameters already on the
    /// tape (as trainable vars or constants). Returns `[n, 1, H, W]`
    /// disparity in `(d_min, d_max)`.
    fn forward_with<'t>(&self, params: &[Var<'t>], input: Var<'t>) -> Result<Var<'t>>;

    /// Records all parameters on `tape` as trainable leaves.
    fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.parameters().iter().map(|p| tape.var(p.clone())).collect()
    }

    /// Gradient-free forward pass.
    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let params: Vec<Var<'_>> = self
            .parameters()
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let out = self.forward_with(&params, tape.constant(input.clone()))?;
        Ok((*out.value()).clone())
    }

    fn forward_image(&self, image: &Image) -> Result<DisparityMap> {
        let out = self.predict(&image.to_tensor())?;
        DisparityMap::new(Map::from_tensor(&out, 0))
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvSpec {
    cin: usize,
    cout: usize,
    stride: usize,
}

/// Four-level convolutional encoder-decoder with skip connections and a
/// single-scale sigmoid disparity head.
#[derive(Clone, Debug)]
pub struct ReferenceNet {
    arch: ArchConfig,
    params: Vec<Tensor>,
}

impl ReferenceNet {
    /// Layers in forward order. Encoder level `k` is a strided conv followed
    /// by a stride-1 conv; decoder levels upsample, concatenate the skip and
    /// convolve.
    fn layers(base: usize) -> Vec<ConvSpec> {
        let c = [base, base * 2, base * 4, base * 8];
        let conv = |cin, cout, stride| ConvSpec { cin, cout, stride };
        vec![
            conv(3, c[0], 1),
            conv(c[0], c[0], 1),
            conv(c[0], c[1], 2),
            conv(c[1], c[1], 1),
            conv(c[1], c[2], 2),
            conv(c[2], c[2], 1),
            conv(c[2], c[3], 2),
            conv(c[3], c[3], 1),
            conv(c[3] + c[2], c[2], 1),
            conv(c[2] + c[1], c[1], 1),
            conv(c[1] + c[0], c[0], 1),
            conv(c[0], 1, 1),
        ]
    }

    pub fn new(arch: ArchConfig) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(arch.init_seed);
        let layers = Self::layers(arch.base_channels);
        let last = layers.len() - 1;
        let mut params = Vec::with_capacity(layers.len() * 2);
        for (i, l) in layers.iter().enumerate() {
            let fan_in = (l.cin * 9) as f64;
            let bound = (6.0 / fan_in).sqrt() * if i == last { 0.1 } else { 1.0 };
            params.push(Tensor::from_fn([l.cout, l.cin, 3, 3], |_| {
                rng.random_range(-bound..bound)
            }));
            let b = if i == last { HEAD_BIAS_INIT } else { 0.0 };
            params.push(Tensor::full([1, l.cout, 1, 1], b));
        }
        Ok(Self { arch, params })
    }

    /// Rebuilds a network from stored tensors, checking every shape.
    pub fn from_parameters(arch: ArchConfig, params: Vec<Tensor>) -> Result<Self> {
        let net = Self::new(arch)?;
        if net.params.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                net.params.len(),
                params.len()
            )));
        }
        for (i, (a, b)) in net.params.iter().zip(&params).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::Config(format!(
                    "parameter {i}: expected shape {:?}, found {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(Self {
            arch: net.arch,
            params,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }
}

impl DepthNetwork for ReferenceNet {
    fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn forward_with<'t>(&self, params: &[Var<'t>], input: Var<'t>) -> Result<Var<'t>> {
        let [_, c, h, w] = input.shape();
        if c != 3 || (w, h) != (self.arch.width, self.arch.height) {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: (self.arch.width, self.arch.height),
                actual: (w, h),
            });
        }
        let layers = Self::layers(self.arch.base_channels);
        if params.len() != layers.len() * 2 {
            return Err(Error::Config(format!(
                "network expects {} parameter vars, got {}",
                layers.len() * 2,
                params.len()
            )));
        }
        let conv = |i: usize, x: Var<'t>| {
            x.conv2d(&params[2 * i], Some(&params[2 * i + 1]), layers[i].stride, 1)
        };

        let x = input.affine(1.0 / INPUT_STD, -INPUT_MEAN / INPUT_STD);
        let mut skips = Vec::with_capacity(4);
        let mut x = x;
        for level in 0..4 {
            x = conv(2 * level, x).elu();
            x = conv(2 * level + 1, x).elu();
            skips.push(x);
        }
        for (i, skip) in (8..11).zip(skips[..3].iter().rev()) {
            x = conv(i, x.upsample2().concat(skip)).elu();
        }
        let range = self.arch.d_max - self.arch.d_min;
        Ok(conv(11, x).sigmoid().affine(range, self.arch.d_min))
    }
}

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AdamMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

impl Adam {
    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One update from the gradients of `vars`, which were bound from
    /// `params` in the same order. Parameters without a gradient are left
    /// untouched.
    pub fn update(&mut self, params: &mut [Tensor], vars: &[Var<'_>], grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, var)) in params.iter_mut().zip(vars).enumerate() {
            let Some(g) = grads.wrt(*var) else { continue };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (pj, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *pj -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    fn meta(&self) -> AdamMeta {
        AdamMeta {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            step: self.step,
        }
    }
}

const MAGIC: &[u8; 8] = b"CCDEPTH1";

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    shapes: Vec<[usize; 4]>,
    optimizer: AdamMeta,
    state: serde_json::Value,
}

/// Everything needed to continue training: network, optimizer and the
/// caller's own state (curriculum, RNG position, epoch counter).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub net: ReferenceNet,
    pub optimizer: Adam,
    pub state: serde_json::Value,
}

impl Checkpoint {
    /// Writes to a temporary file next to `path` and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            arch: self.net.arch.clone(),
            shapes: self.net.params.iter().map(Tensor::shape).collect(),
            optimizer: self.optimizer.meta(),
            state: self.state.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut buf = Vec::with_capacity(json.len() + 16 + self.net.parameter_count() * 24);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for group in [&self.net.params, &self.optimizer.m, &self.optimizer.v] {
            for t in group.iter() {
                for x in t.data() {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = temp_path(path);
        let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(len))
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        let mut payload = bytes[16 + len..].chunks_exact(8);
        let count: usize = header.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if payload.len() != count * 3 || !payload.remainder().is_empty() {
            return Err(bad(format!(
                "payload holds {} bytes, expected {}",
                bytes.len() - 16 - len,
                count * 3 * 8
            )));
        }
        let mut read_group = || -> Result<Vec<Tensor>> {
            header
                .shapes
                .iter()
                .map(|&shape| {
                    let n = shape.iter().product();
                    let data = payload
                        .by_ref()
                        .take(n)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect();
                    Ok(Tensor::new(shape, data)?)
                })
                .collect()
        };
        let params = read_group()?;
        let m = read_group()?;
        let v = read_group()?;
        let net = ReferenceNet::from_parameters(header.arch, params).map_err(|e| bad(e.to_string()))?;
        let o = header.optimizer;
        Ok(Self {
            net,
            optimizer: Adam {
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                step: o.step,
                m,
                v,
            },
            state: header.state,
        })
    }

    /// Loads and checks the architecture against `expected`.
    pub fn load_for(path: &Path, expected: &ArchConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if let Some(diff) = expected.mismatch(&ckpt.net.arch) {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("architecture mismatch, {diff}"),
            });
        }
        Ok(ckpt)
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}
