//! Seeded weather variants of a clear frame.
//!
//! Magnitude 0 is the clear frame with a mild brightness, contrast and
//! saturation jitter. Magnitude 1 ("relative adverse") adds effects that
//! alter texture without occluding the scene much: ground water reflections,
//! lens droplets, ground snow, light fog. Magnitude 2 ("adverse") adds
//! particles and veiling on top: rain streaks, snowflakes, dense fog.
//!
//! Rain and snow are procedural stand-ins; fog follows the Koschmieder
//! scattering model and needs the scene depth. Every function here is a pure
//! function of its inputs and seed.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::DepthMap;
use crate::image::Image;
use crate::noise::{smoothstep, value_noise};
use crate::synthdata::Sample;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weather {
    Clear,
    Rain,
    Snow,
    Fog,
}

impl Weather {
    pub fn name(self) -> &'static str {
        match self {
            Self::Clear => "clear",
            Self::Rain => "rain",
            Self::Snow => "snow",
            Self::Fog => "fog",
        }
    }
}

impl FromStr for Weather {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clear" => Ok(Self::Clear),
            "rain" => Ok(Self::Rain),
            "snow" => Ok(Self::Snow),
            "fog" => Ok(Self::Fog),
            other => Err(Error::Config(format!("unknown weather '{other}'"))),
        }
    }
}

/// A weather type at a magnitude; clear is always magnitude 0 and every
/// other weather is magnitude 1 or 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct WeatherVariantId {
    weather: Weather,
    magnitude: u8,
}

impl WeatherVariantId {
    pub const CLEAR: Self = Self {
        weather: Weather::Clear,
        magnitude: 0,
    };

    pub fn new(weather: Weather, magnitude: u8) -> Result<Self> {
        let legal = match weather {
            Weather::Clear => magnitude == 0,
            _ => magnitude == 1 || magnitude == 2,
        };
        if !legal {
            return Err(Error::Config(format!(
                "illegal variant {}_{magnitude}",
                weather.name()
            )));
        }
        Ok(Self { weather, magnitude })
    }

    pub fn weather(self) -> Weather {
        self.weather
    }

    pub fn magnitude(self) -> u8 {
        self.magnitude
    }

    /// The six rain/snow/fog variants at magnitudes 1 and 2.
    pub fn adverse_variants() -> Vec<Self> {
        [1, 2]
            .into_iter()
            .flat_map(|m| {
                [Weather::Rain, Weather::Snow, Weather::Fog]
                    .into_iter()
                    .map(move |w| Self { weather: w, magnitude: m })
            })
            .collect()
    }

    /// Clear followed by the six weather variants.
    pub fn all() -> Vec<Self> {
        let mut v = vec![Self::CLEAR];
        v.extend(Self::adverse_variants());
        v
    }
}

impl fmt::Display for WeatherVariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.weather.name(), self.magnitude)
    }
}

impl FromStr for WeatherVariantId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (w, m) = s
            .rsplit_once('_')
            .ok_or_else(|| Error::Config(format!("variant '{s}' is not <weather>_<magnitude>")))?;
        let m: u8 = m
            .parse()
            .map_err(|_| Error::Config(format!("variant '{s}' has a non-numeric magnitude")))?;
        Self::new(w.parse()?, m)
    }
}

impl TryFrom<String> for WeatherVariantId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<WeatherVariantId> for String {
    fn from(v: WeatherVariantId) -> String {
        v.to_string()
    }
}

/// Uniform range for each jitter factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterRange {
    pub min: f64,
    pub max: f64,
}

impl Default for JitterRange {
    fn default() -> Self {
        Self { min: 0.8, max: 1.2 }
    }
}

impl JitterRange {
    pub const IDENTITY: Self = Self { min: 1.0, max: 1.0 };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl JitterFactors {
    pub const IDENTITY: Self = Self {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
    };

    pub fn sample(seed: u64, range: JitterRange) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || {
            if range.max > range.min {
                rng.random_range(range.min..=range.max)
            } else {
                range.min
            }
        };
        Self {
            brightness: draw(),
            contrast: draw(),
            saturation: draw(),
        }
    }
}

fn luma(rgb: [f64; 3]) -> f64 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

/// Brightness, then contrast about the mean luma, then saturation about the
/// per-pixel luma; clamped to `[0, 1]`.
pub fn jitter_with(image: &Image, f: JitterFactors) -> Image {
    if f == JitterFactors::IDENTITY {
        return image.clone();
    }
    let (w, h) = image.dims();
    let mut out = image.map(|v| (v * f.brightness).clamp(0.0, 1.0));
    if f.contrast != 1.0 {
        let mean = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .map(|(y, x)| luma(out.rgb(y, x)))
            .sum::<f64>()
            / (w * h) as f64;
        out = out.map(|v| ((v - mean) * f.contrast + mean).clamp(0.0, 1.0));
    }
    if f.saturation != 1.0 && image.channels() >= 3 {
        for y in 0..h {
            for x in 0..w {
                let px = out.rgb(y, x);
                let g = luma(px);
                out.set_rgb(y, x, px.map(|v| (g + (v - g) * f.saturation).clamp(0.0, 1.0)));
            }
        }
    }
    out
}

/// Jitter with factors drawn uniformly from `[0.8, 1.2]`.
pub fn jitter(image: &Image, seed: u64) -> Image {
    jitter_with(image, JitterFactors::sample(seed, JitterRange::default()))
}

/// Visibility-parameterized homogeneous fog.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FogParams {
    /// Meteorological visibility in meters.
    pub visibility: f64,
    pub atmospheric_light: [f64; 3],
    /// `-ln(contrast threshold)`; 3.912 for the 2% threshold.
    pub koschmieder: f64,
}

impl FogParams {
    pub const DEFAULT_LIGHT: [f64; 3] = [0.9, 0.9, 0.92];
    pub const KOSCHMIEDER: f64 = 3.912;

    pub fn new(visibility: f64) -> Result<Self> {
        let p = Self {
            visibility,
            atmospheric_light: Self::DEFAULT_LIGHT,
            koschmieder: Self::KOSCHMIEDER,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.visibility > 0.0 && self.visibility.is_finite()) {
            return Err(Error::Config(format!(
                "fog visibility must be positive, got {}",
                self.visibility
            )));
        }
        if self.atmospheric_light.iter().any(|a| !(0.7..=1.0).contains(a)) {
            return Err(Error::Config(format!(
                "atmospheric light {:?} outside [0.7, 1]",
                self.atmospheric_light
            )));
        }
        Ok(())
    }

    /// Extinction coefficient in 1/m.
    pub fn beta_ext(&self) -> f64 {
        self.koschmieder / self.visibility
    }

    pub fn transmittance(&self, depth: f64) -> f64 {
        (-self.beta_ext() * depth).exp()
    }
}

/// `I * t + A * (1 - t)` with `t = exp(-beta * depth)` per pixel.
pub fn render_fog(image: &Image, depth: Option<&DepthMap>, params: &FogParams) -> Result<Image> {
    params.validate()?;
    let depth = depth.ok_or_else(|| Error::Config("fog rendering requires a depth map".into()))?;
    if depth.map().dims() != image.dims() {
        return Err(Error::ShapeMismatch {
            context: "fog depth vs image",
            expected: image.dims(),
            actual: depth.map().dims(),
        });
    }
    let mut out = image.clone();
    let (w, h) = image.dims();
    for y in 0..h {
        for x in 0..w {
            let t = params.transmittance(depth.map().get(y, x));
            for c in 0..image.channels() {
                let a = params.atmospheric_light[c.min(2)];
                out.set(c, y, x, image.get(c, y, x) * t + a * (1.0 - t));
            }
        }
    }
    Ok(out)
}

/// Counts of composited elements, for instrumentation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EffectStats {
    pub droplets: usize,
    pub streaks: usize,
    pub flakes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub image: Image,
    pub stats: EffectStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RainParams {
    pub droplets: usize,
    pub droplet_radius: (f64, f64),
    /// Strength of the darkened ground reflection, 0 disables it.
    pub reflection: f64,
    /// Fraction of the image height (from the bottom) that reflects.
    pub reflection_extent: f64,
    pub streaks: usize,
    pub streak_length: (f64, f64),
    pub streak_alpha: (f64, f64),
    /// Blend toward a bright gray, 0 disables it.
    pub veil: f64,
}

impl RainParams {
    pub const NONE: Self = Self {
        droplets: 0,
        droplet_radius: (3.0, 7.0),
        reflection: 0.0,
        reflection_extent: 0.35,
        streaks: 0,
        streak_length: (6.0, 14.0),
        streak_alpha: (0.25, 0.5),
        veil: 0.0,
    };

    pub fn for_magnitude(magnitude: u8) -> Self {
        let m1 = Self {
            droplets: 6,
            reflection: 0.55,
            ..Self::NONE
        };
        match magnitude {
            0 => Self::NONE,
            1 => m1,
            _ => Self {
                streaks: 140,
                veil: 0.2,
                ..m1
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnowParams {
    /// Maximum ground-snow blend, 0 disables it.
    pub ground_opacity: f64,
    /// Fraction of the image height (from the bottom) covered by snow.
    pub ground_extent: f64,
    pub flakes: usize,
    /// Flake radius at unit pseudo-distance.
    pub flake_radius: f64,
    pub veil: f64,
}

impl SnowParams {
    pub const NONE: Self = Self {
        ground_opacity: 0.0,
        ground_extent: 0.4,
        flakes: 0,
        flake_radius: 3.5,
        veil: 0.0,
    };

    pub fn for_magnitude(magnitude: u8) -> Self {
        let m1 = Self {
            ground_opacity: 0.8,
            ..Self::NONE
        };
        match magnitude {
            0 => Self::NONE,
            1 => m1,
            _ => Self {
                flakes: 90,
                veil: 0.15,
                ..m1
            },
        }
    }
}

fn veil(image: &mut Image, amount: f64, level: f64) {
    if amount > 0.0 {
        *image = image.map(|v| v * (1.0 - amount) + level * amount);
    }
}

fn blend(image: &mut Image, y: usize, x: usize, color: [f64; 3], alpha: f64) {
    let px = image.rgb(y, x);
    image.set_rgb(y, x, std::array::from_fn(|c| px[c] * (1.0 - alpha) + color[c] * alpha));
}

fn ground_reflection(src: &Image, out: &mut Image, strength: f64, extent: f64, rng: &mut ChaCha8Rng) {
    let (w, h) = src.dims();
    let start = ((1.0 - extent) * h as f64).round() as usize;
    if strength <= 0.0 || start >= h {
        return;
    }
    let seed = rng.random::<u64>();
    for y in start..h {
        let ramp = (y - start + 1) as f64 / (h - start) as f64;
        // Mirror about the water line and smear vertically.
        let mirror = (2 * start).saturating_sub(y + 1).min(h - 1);
        for x in 0..w {
            let wet = strength * ramp * (0.4 + 0.6 * value_noise(seed, x as f64, 0.0, 3.0));
            let mut acc = [0.0; 3];
            let mut n = 0.0;
            for dy in -3i64..=3 {
                let yy = (mirror as i64 + dy).clamp(0, h as i64 - 1) as usize;
                let p = src.rgb(yy, x);
                for c in 0..3 {
                    acc[c] += p[c];
                }
                n += 1.0;
            }
            let reflected = acc.map(|v| 0.7 * v / n);
            let base = out.rgb(y, x).map(|v| v * (1.0 - 0.3 * strength * ramp));
            out.set_rgb(y, x, std::array::from_fn(|c| base[c] * (1.0 - wet) + reflected[c] * wet));
        }
    }
}

fn lens_droplets(src: &Image, out: &mut Image, p: &RainParams, rng: &mut ChaCha8Rng) -> usize {
    let (w, h) = src.dims();
    for _ in 0..p.droplets {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let r = rng.random_range(p.droplet_radius.0..=p.droplet_radius.1);
        let blur = (r / 2.0).ceil() as i64;
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w - 1));
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                let alpha = 0.85 * smoothstep(r, r - 1.5, d);
                if alpha <= 0.0 {
                    continue;
                }
                // A drop acts as a small inverted lens: read a blurred patch
                // mirrored through its center.
                let sx = (2.0 * cx - x as f64).clamp(0.0, (w - 1) as f64) as i64;
                let sy = (2.0 * cy - y as f64).clamp(0.0, (h - 1) as f64) as i64;
                let mut acc = [0.0; 3];
                let mut n = 0.0;
                for dy in -blur..=blur {
                    for dx in -blur..=blur {
                        let yy = (sy + dy).clamp(0, h as i64 - 1) as usize;
                        let xx = (sx + dx).clamp(0, w as i64 - 1) as usize;
                        let px = src.rgb(yy, xx);
                        for c in 0..3 {
                            acc[c] += px[c];
                        }
                        n += 1.0;
                    }
                }
                let color = acc.map(|v| (1.05 * v / n).min(1.0));
                blend(out, y, x, color, alpha);
            }
        }
    }
    p.droplets
}

fn rain_streaks(out: &mut Image, p: &RainParams, rng: &mut ChaCha8Rng) -> usize {
    let (w, h) = out.dims();
    let slant = rng.random_range(-0.25..0.25);
    for _ in 0..p.streaks {
        let x0 = rng.random_range(0.0..w as f64);
        let y0 = rng.random_range(0.0..h as f64);
        let len = rng.random_range(p.streak_length.0..=p.streak_length.1);
        let alpha = rng.random_range(p.streak_alpha.0..=p.streak_alpha.1);
        let steps = (len * 2.0).ceil() as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let y = y0 + t * len;
            let x = x0 + t * len * slant;
            if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
                continue;
            }
            // Motion blur tapers toward both ends.
            let profile = (std::f64::consts::PI * t).sin();
            blend(out, y.round() as usize, x.round() as usize, [0.85, 0.87, 0.9], 0.5 * alpha * profile);
        }
    }
    p.streaks
}

/// Rain with explicit parameters.
pub fn render_rain_with(image: &Image, params: &RainParams, seed: u64) -> Rendered {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    ground_reflection(image, &mut out, params.reflection, params.reflection_extent, &mut rng);
    let droplet_src = out.clone();
    let droplets = lens_droplets(&droplet_src, &mut out, params, &mut rng);
    let streaks = rain_streaks(&mut out, params, &mut rng);
    veil(&mut out, params.veil, 0.8);
    Rendered {
        image: out.clamp01(),
        stats: EffectStats {
            droplets,
            streaks,
            flakes: 0,
        },
    }
}

pub fn render_rain(image: &Image, magnitude: u8, seed: u64) -> Image {
    render_rain_with(image, &RainParams::for_magnitude(magnitude), seed).image
}

fn ground_snow(out: &mut Image, p: &SnowParams, rng: &mut ChaCha8Rng) {
    let (w, h) = out.dims();
    let start = ((1.0 - p.ground_extent) * h as f64).round() as usize;
    if p.ground_opacity <= 0.0 || start >= h {
        return;
    }
    let seed = rng.random::<u64>();
    for y in start..h {
        let ramp = smoothstep(start as f64, start as f64 + 0.35 * (h - start) as f64, y as f64);
        for x in 0..w {
            let n = value_noise(seed, x as f64, y as f64, 5.0);
            let cover = p.ground_opacity * ramp * smoothstep(0.3, 0.6, n);
            let white = 0.82 + 0.12 * n;
            blend(out, y, x, [white, white, (white + 0.04).min(1.0)], cover);
        }
    }
}

fn snowflakes(out: &mut Image, p: &SnowParams, rng: &mut ChaCha8Rng) -> usize {
    let (w, h) = out.dims();
    for _ in 0..p.flakes {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        // Nearer flakes (small pseudo-distance) are larger.
        let distance = rng.random_range(1.0..8.0);
        let radius = (p.flake_radius / distance).max(0.5);
        let sigma = radius / 1.5;
        let reach = (2.5 * sigma).ceil().max(1.0);
        let (x0, x1) = ((cx - reach).max(0.0) as usize, ((cx + reach) as usize).min(w - 1));
        let (y0, y1) = ((cy - reach).max(0.0) as usize, ((cy + reach) as usize).min(h - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let alpha = 0.9 * (-d2 / (2.0 * sigma * sigma)).exp();
                blend(out, y, x, [0.97, 0.97, 0.98], alpha);
            }
        }
    }
    p.flakes
}

/// Snow with explicit parameters. Depth is accepted for interface symmetry
/// with fog; flake sizes use a sampled pseudo-distance instead.
pub fn render_snow_with(image: &Image, _depth: Option<&DepthMap>, params: &SnowParams, seed: u64) -> Rendered {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    ground_snow(&mut out, params, &mut rng);
    let flakes = snowflakes(&mut out, params, &mut rng);
    veil(&mut out, params.veil, 0.85);
    Rendered {
        image: out.clamp01(),
        stats: EffectStats {
            flakes,
            ..EffectStats::default()
        },
    }
}

pub fn render_snow(image: &Image, depth: Option<&DepthMap>, magnitude: u8, seed: u64) -> Image {
    render_snow_with(image, depth, &SnowParams::for_magnitude(magnitude), seed).image
}

/// Parameters of every variant renderer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherConfig {
    pub jitter: JitterRange,
    /// Fog visibility in meters at magnitudes 1 and 2.
    pub fog_visibility: [f64; 2],
    pub atmospheric_light: [f64; 3],
    pub koschmieder: f64,
    pub rain: [RainParams; 2],
    pub snow: [SnowParams; 2],
}

impl Default for WeatherConfig {
    fn default() -> Self {
        Self {
            jitter: JitterRange::default(),
            fog_visibility: [150.0, 75.0],
            atmospheric_light: FogParams::DEFAULT_LIGHT,
            koschmieder: FogParams::KOSCHMIEDER,
            rain: [RainParams::for_magnitude(1), RainParams::for_magnitude(2)],
            snow: [SnowParams::for_magnitude(1), SnowParams::for_magnitude(2)],
        }
    }
}

impl WeatherConfig {
    pub fn fog(&self, magnitude: u8) -> Result<FogParams> {
        let idx = usize::from(magnitude.clamp(1, 2) - 1);
        let p = FogParams {
            visibility: self.fog_visibility[idx],
            atmospheric_light: self.atmospheric_light,
            koschmieder: self.koschmieder,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Renders `variant` of the sample's clear left image.
pub fn build_variant(
    sample: &Sample,
    variant: WeatherVariantId,
    seed: u64,
    config: &WeatherConfig,
) -> Result<Image> {
    build_variant_from(&sample.left, Some(&sample.depth), variant, seed, config)
}

pub fn build_variant_from(
    clear: &Image,
    depth: Option<&DepthMap>,
    variant: WeatherVariantId,
    seed: u64,
    config: &WeatherConfig,
) -> Result<Image> {
    let m = variant.magnitude();
    let idx = usize::from(m.max(1) - 1);
    match variant.weather() {
        Weather::Clear => Ok(jitter_with(clear, JitterFactors::sample(seed, config.jitter))),
        Weather::Rain => Ok(render_rain_with(clear, &config.rain[idx], seed).image),
        Weather::Snow => Ok(render_snow_with(clear, depth, &config.snow[idx], seed).image),
        Weather::Fog => render_fog(clear, depth, &config.fog(m)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Map;

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |c, y, x| 0.2 + 0.6 * value_noise(c as u64 + 3, x as f64, y as f64, 4.0))
    }

    #[test]
    fn variant_ids() {
        assert!(WeatherVariantId::new(Weather::Clear, 1).is_err());
        assert!(WeatherVariantId::new(Weather::Rain, 0).is_err());
        assert!(WeatherVariantId::new(Weather::Fog, 3).is_err());
        let v: WeatherVariantId = "snow_2".parse().unwrap();
        assert_eq!(v.to_string(), "snow_2");
        assert!("hail_1".parse::<WeatherVariantId>().is_err());
        assert!("rain".parse::<WeatherVariantId>().is_err());
        assert_eq!(WeatherVariantId::all().len(), 7);
    }

    #[test]
    fn identity_jitter() {
        let img = textured(16, 8);
        assert_eq!(jitter_with(&img, JitterFactors::IDENTITY), img);
        let f = JitterFactors::sample(3, JitterRange::IDENTITY);
        assert_eq!(f, JitterFactors::IDENTITY);
    }

    #[test]
    fn brightness_only() {
        let img = Image::filled(8, 4, 3, 0.5);
        let out = jitter_with(
            &img,
            JitterFactors {
                brightness: 1.2,
                ..JitterFactors::IDENTITY
            },
        );
        assert!(out.data().iter().all(|v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn jitter_factors_within_range() {
        for seed in 0..200 {
            let f = JitterFactors::sample(seed, JitterRange::default());
            for v in [f.brightness, f.contrast, f.saturation] {
                assert!((0.8..=1.2).contains(&v));
            }
        }
    }

    #[test]
    fn fog_needs_depth() {
        let img = textured(8, 4);
        assert!(render_fog(&img, None, &FogParams::new(150.0).unwrap()).is_err());
        assert!(FogParams::new(0.0).is_err());
        let mut p = FogParams::new(10.0).unwrap();
        p.atmospheric_light = [0.5, 0.9, 0.9];
        assert!(p.validate().is_err());
    }

    #[test]
    fn zero_effects_are_identity() {
        let img = textured(32, 16);
        assert_eq!(render_rain_with(&img, &RainParams::NONE, 5).image, img);
        assert_eq!(render_snow_with(&img, None, &SnowParams::NONE, 5).image, img);
    }

    #[test]
    fn fog_at_zero_depth_is_identity() {
        let img = textured(8, 4);
        let depth = DepthMap::new(Map::filled(8, 4, 1e-12)).unwrap();
        let out = render_fog(&img, Some(&depth), &FogParams::new(150.0).unwrap()).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-12);
    }
}
