//! Depth error metrics and per-variant evaluation reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::augmentation::WeatherVariantId;
use crate::geometry::{CameraRig, DepthMap};
use crate::image::{Image, Map, Mask};
use crate::model::DepthNetwork;
use crate::synthdata::{Dataset, Side};
use crate::{Error, Result};

/// The seven standard depth metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub absrel: f64,
    pub sqrel: f64,
    pub rmse: f64,
    pub rmselog: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl MetricSet {
    pub fn as_array(&self) -> [f64; 7] {
        [self.absrel, self.sqrel, self.rmse, self.rmselog, self.a1, self.a2, self.a3]
    }

    fn from_array(a: [f64; 7]) -> Self {
        Self {
            absrel: a[0],
            sqrel: a[1],
            rmse: a[2],
            rmselog: a[3],
            a1: a[4],
            a2: a[5],
            a3: a[6],
        }
    }

    /// Field-wise mean.
    pub fn mean(sets: &[MetricSet]) -> Option<MetricSet> {
        if sets.is_empty() {
            return None;
        }
        let mut acc = [0.0; 7];
        for s in sets {
            for (a, v) in acc.iter_mut().zip(s.as_array()) {
                *a += v;
            }
        }
        Some(Self::from_array(acc.map(|a| a / sets.len() as f64)))
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub depth_min: f64,
    pub depth_max: f64,
    /// Rescale each prediction by `median(gt) / median(pred)` first.
    pub median_scaling: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            depth_min: 1e-3,
            depth_max: 80.0,
            median_scaling: false,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Metrics over the pixels of `valid`, after clamping both maps to
/// `[depth_min, depth_max]`.
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, valid: &Mask, config: &EvalConfig) -> Result<MetricSet> {
    let (p, g) = (pred.map(), gt.map());
    if p.dims() != g.dims() {
        return Err(Error::ShapeMismatch {
            context: "predicted vs ground-truth depth",
            expected: g.dims(),
            actual: p.dims(),
        });
    }
    if valid.dims() != g.dims() {
        return Err(Error::ShapeMismatch {
            context: "evaluation mask",
            expected: g.dims(),
            actual: valid.dims(),
        });
    }
    if !(config.depth_min > 0.0 && config.depth_max > config.depth_min) {
        return Err(Error::Config(format!(
            "evaluation range must satisfy 0 < depth_min < depth_max (got {}, {})",
            config.depth_min, config.depth_max
        )));
    }
    let clamp = |v: f64| v.clamp(config.depth_min, config.depth_max);
    let mut pairs: Vec<(f64, f64)> = p
        .data()
        .iter()
        .zip(g.data())
        .zip(valid.data())
        .filter(|(_, &m)| m)
        .map(|((&a, &b), _)| (clamp(a), clamp(b)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Degenerate("evaluation mask selects no pixels".into()));
    }
    if config.median_scaling {
        let ratio = median(pairs.iter().map(|x| x.1).collect()) / median(pairs.iter().map(|x| x.0).collect());
        for x in &mut pairs {
            x.0 = clamp(x.0 * ratio);
        }
    }
    let n = pairs.len() as f64;
    let mut acc = [0.0; 7];
    for &(p, g) in &pairs {
        let diff = p - g;
        let delta = (p / g).max(g / p);
        acc[0] += diff.abs() / g;
        acc[1] += diff * diff / g;
        acc[2] += diff * diff;
        acc[3] += (p.ln() - g.ln()).powi(2);
        acc[4] += f64::from(u8::from(delta < 1.25));
        acc[5] += f64::from(u8::from(delta < 1.25f64.powi(2)));
        acc[6] += f64::from(u8::from(delta < 1.25f64.powi(3)));
    }
    let m = acc.map(|a| a / n);
    Ok(MetricSet::from_array([m[0], m[1], m[2].sqrt(), m[3].sqrt(), m[4], m[5], m[6]]))
}

/// Per-variant rows and their average. Variants missing from the dataset
/// are kept as `null` rows and left out of the average.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub rows: BTreeMap<String, Option<MetricSet>>,
    pub average: Option<MetricSet>,
}

impl EvalReport {
    pub fn row(&self, variant: WeatherVariantId) -> Option<MetricSet> {
        self.rows.get(&variant.to_string()).copied().flatten()
    }

    /// Mean over the given variants; `None` if any of them is absent.
    pub fn average_of(&self, variants: &[WeatherVariantId]) -> Option<MetricSet> {
        let rows: Option<Vec<MetricSet>> = variants.iter().map(|v| self.row(*v)).collect();
        MetricSet::mean(&rows?)
    }

    pub fn missing(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|(_, r)| r.is_none())
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::data(path, e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

/// Evaluates an arbitrary depth predictor on `variants` of the left views.
pub fn evaluate_with(
    dataset: &Dataset,
    variants: &[WeatherVariantId],
    config: &EvalConfig,
    mut predict: impl FnMut(usize, &Image) -> Result<DepthMap>,
) -> Result<EvalReport> {
    let available = dataset.variants();
    let mut report = EvalReport::default();
    let mut present = Vec::new();
    for &variant in variants {
        if !available.contains(&variant) {
            log::warn!("variant {variant} is absent from {}", dataset.root().display());
            report.rows.insert(variant.to_string(), None);
            continue;
        }
        let mut per_image = Vec::with_capacity(dataset.len());
        for i in 0..dataset.len() {
            let image = dataset.load_image(i, Side::Left, variant)?;
            let gt = dataset.load_depth(i)?;
            let valid = Mask::from_fn(gt.map().width(), gt.map().height(), |y, x| gt.map().get(y, x) > 0.0);
            let pred = predict(i, &image)?;
            per_image.push(compute_metrics(&pred, &gt, &valid, config)?);
        }
        let row = MetricSet::mean(&per_image).expect("dataset has at least one frame");
        present.push(row);
        report.rows.insert(variant.to_string(), Some(row));
    }
    report.average = MetricSet::mean(&present);
    Ok(report)
}

/// Depth predicted by `net` for one image, `b * fx / disparity`.
pub fn predict_depth<N: DepthNetwork>(net: &N, rig: &CameraRig, image: &Image) -> Result<DepthMap> {
    let disp = net.predict(&image.to_tensor())?;
    let scale = rig.disparity_scale();
    let t: Tensor = disp.map(|d| scale / d);
    DepthMap::new(Map::from_tensor(&t, 0))
}

pub fn evaluate<N: DepthNetwork>(
    net: &N,
    dataset: &Dataset,
    variants: &[WeatherVariantId],
    config: &EvalConfig,
) -> Result<EvalReport> {
    let rig = dataset.rig().clone();
    evaluate_with(dataset, variants, config, |_, image| predict_depth(net, &rig, image))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn depth(values: &[f64], w: usize) -> DepthMap {
        DepthMap::new(Map::new(w, values.len() / w, values.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let d = depth(&[1.0, 5.0, 20.0, 79.0], 2);
        let m = compute_metrics(&d, &d, &Mask::full(2, 2), &EvalConfig::default()).unwrap();
        assert_eq!(m.as_array(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_pixel_case() {
        let m = compute_metrics(
            &depth(&[2.0, 4.0], 2),
            &depth(&[1.0, 4.0], 2),
            &Mask::full(2, 1),
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(m.absrel, 0.5);
        assert_eq!(m.a1, 0.5);
        assert_eq!(m.sqrel, 0.5);
        assert_eq!(m.rmse, 0.5f64.sqrt());
    }

    #[test]
    fn empty_mask_is_an_error() {
        let d = depth(&[1.0, 2.0], 2);
        let empty = Mask::new(2, 1, vec![false, false]).unwrap();
        assert!(matches!(
            compute_metrics(&d, &d, &empty, &EvalConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn median_scaling_removes_global_scale() {
        let gt = depth(&[2.0, 4.0, 8.0], 3);
        let pred = depth(&[4.0, 8.0, 16.0], 3);
        let cfg = EvalConfig {
            median_scaling: true,
            ..EvalConfig::default()
        };
        let m = compute_metrics(&pred, &gt, &Mask::full(3, 1), &cfg).unwrap();
        assert!(m.absrel < 1e-12);
    }

    #[test]
    fn report_json_shape() {
        let mut r = EvalReport::default();
        r.rows.insert("clear_0".into(), Some(MetricSet::default()));
        r.rows.insert("fog_2".into(), None);
        r.average = Some(MetricSet::default());
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert!(v["clear_0"]["absrel"].is_number());
        assert!(v["fog_2"].is_null());
        assert!(v["average"]["a3"].is_number());
        let back: EvalReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.missing(), ["fog_2"]);
    }
}
