//! Curriculum levels, contrastive-mode sampling and the patience-based
//! stage scheduler.
//!
//! Level 1 trains on photometrically jittered clear frames and contrasts
//! against a second jitter of the same frame (one mode). Level 2 trains on a
//! relative-adverse weather variant and contrasts against the clear frame
//! (three modes). Level 3 trains on an adverse variant and contrasts against
//! an independently chosen relative-adverse variant (nine modes).
//!
//! The scheduler watches only the per-epoch mean of the self-supervised
//! model loss. Every epoch whose mean rises by more than `threshold` over the
//! previous epoch of the same stage bumps the patience counter; reaching the
//! stage patience moves on to the next level.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{Weather, WeatherVariantId};
use crate::losses::{ContrastWeightState, DetachDirection};
use crate::{Error, Result};

/// Curriculum level in `1..=3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Level(u8);

impl Level {
    pub const FIRST: Level = Level(1);
    pub const MAX: Level = Level(3);

    pub fn new(level: u8) -> Result<Self> {
        if (1..=3).contains(&level) {
            Ok(Self(level))
        } else {
            Err(Error::Config(format!("curriculum level must be 1, 2 or 3, got {level}")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn next(self) -> Option<Self> {
        (self.0 < 3).then(|| Self(self.0 + 1))
    }

    /// Index into per-level arrays.
    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }

    pub fn all() -> [Level; 3] {
        [Level(1), Level(2), Level(3)]
    }
}

impl TryFrom<u8> for Level {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Level> for u8 {
    fn from(l: Level) -> u8 {
        l.0
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// What a level trains on and contrasts against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub level: Level,
    pub train_variants: Vec<WeatherVariantId>,
    pub contrast_variants: Vec<WeatherVariantId>,
    /// Rising epochs tolerated before moving on; `None` keeps the stage until
    /// the epoch budget runs out.
    pub patience: Option<u32>,
    pub mode_count: usize,
}

fn weather_at(magnitude: u8) -> Vec<WeatherVariantId> {
    [Weather::Rain, Weather::Snow, Weather::Fog]
        .into_iter()
        .map(|w| WeatherVariantId::new(w, magnitude).expect("rain/snow/fog accept magnitudes 1 and 2"))
        .collect()
}

/// Variants legal at `level`, with the default patience (1, 1, unbounded).
pub fn stage_variants(level: Level) -> StageSpec {
    let (train, contrast, patience) = match level.get() {
        1 => (vec![WeatherVariantId::CLEAR], vec![WeatherVariantId::CLEAR], Some(1)),
        2 => (weather_at(1), vec![WeatherVariantId::CLEAR], Some(1)),
        _ => (weather_at(2), weather_at(1), None),
    };
    StageSpec {
        level,
        mode_count: train.len() * contrast.len(),
        train_variants: train,
        contrast_variants: contrast,
        patience,
    }
}

impl StageSpec {
    pub fn with_patience(mut self, patience: Option<u32>) -> Self {
        self.patience = patience;
        self
    }

    /// Every (train, contrast) pairing of this level.
    pub fn modes(&self) -> Vec<(WeatherVariantId, WeatherVariantId)> {
        self.train_variants
            .iter()
            .flat_map(|t| self.contrast_variants.iter().map(move |c| (*t, *c)))
            .collect()
    }

    /// Stage an image variant belongs to: clear frames are level 1 and
    /// weather variants sit at `magnitude + 1`.
    pub fn level_of(variant: WeatherVariantId) -> Level {
        Level(variant.magnitude() + 1)
    }
}

/// The specs of all three levels with the given patience per level.
pub fn stage_specs(patience: [Option<u32>; 3]) -> [StageSpec; 3] {
    Level::all().map(|l| stage_variants(l).with_patience(patience[l.index()]))
}

/// Training and contrast inputs for one batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastPlan {
    pub train: WeatherVariantId,
    pub contrast: WeatherVariantId,
    pub augmented_level: Level,
    pub contrast_level: Level,
    /// Branch cut from backpropagation when detaching is enabled.
    pub detach: DetachDirection,
    /// Seeds for on-the-fly photometric jitter of clear inputs.
    pub train_seed: u64,
    pub contrast_seed: u64,
}

impl ContrastPlan {
    pub fn mode(&self) -> (WeatherVariantId, WeatherVariantId) {
        (self.train, self.contrast)
    }
}

/// Draws one contrastive mode of `level` uniformly at random.
pub fn sample_contrast_plan(level: Level, seed: u64) -> ContrastPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_contrast_plan_with(&stage_variants(level), &mut rng)
}

pub fn sample_contrast_plan_with(spec: &StageSpec, rng: &mut impl Rng) -> ContrastPlan {
    let train = spec.train_variants[rng.random_range(0..spec.train_variants.len())];
    let contrast = spec.contrast_variants[rng.random_range(0..spec.contrast_variants.len())];
    let augmented_level = spec.level;
    let contrast_level = StageSpec::level_of(contrast);
    let mut train_seed = rng.random::<u64>();
    let mut contrast_seed = rng.random::<u64>();
    if train_seed == contrast_seed {
        // Two clear inputs must get different jitters.
        contrast_seed = contrast_seed.wrapping_add(1);
    }
    if train != WeatherVariantId::CLEAR {
        train_seed = 0;
    }
    if contrast != WeatherVariantId::CLEAR {
        contrast_seed = 0;
    }
    ContrastPlan {
        train,
        contrast,
        augmented_level,
        contrast_level,
        detach: DetachDirection::for_stages(augmented_level, contrast_level, true),
        train_seed,
        contrast_seed,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Outcome of [`CurriculumState::end_of_epoch`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Stay,
    Advance,
    Finished,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochOutcome {
    pub decision: Decision,
    /// Level the epoch was trained at.
    pub level: Level,
    pub mean_loss: f64,
    /// Patience counter after this epoch (reset to 0 on a transition).
    pub patience: u32,
    /// Checkpoint the trainer must restore before continuing.
    pub reload: Option<BestEpoch>,
}

/// Scheduler state owned by the epoch loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub level: Level,
    /// Patience counter.
    pub p: u32,
    /// Per-batch model losses of the running epoch.
    pub recordloss: Vec<f64>,
    /// Per-epoch mean model losses of the current stage.
    pub recordkey: Vec<f64>,
    pub best_epoch: Option<BestEpoch>,
    pub threshold: f64,
    pub weight: ContrastWeightState,
    /// Restore the best epoch when patience runs out at the last level with
    /// a patience of at least three.
    pub reload_best_at_max_level: bool,
}

impl CurriculumState {
    pub fn new(threshold: f64, weight: ContrastWeightState) -> Self {
        Self {
            level: Level::FIRST,
            p: 0,
            recordloss: Vec::new(),
            recordkey: Vec::new(),
            best_epoch: None,
            threshold,
            weight,
            reload_best_at_max_level: true,
        }
    }

    /// Epochs completed in the current stage.
    pub fn r(&self) -> usize {
        self.weight.r
    }

    /// Start-of-epoch hook: refresh the consistency weight.
    pub fn begin_epoch(&mut self) -> f64 {
        self.weight.update();
        self.weight.w_curr
    }

    pub fn record_batch_loss(&mut self, l_model: f64) -> Result<()> {
        if !l_model.is_finite() {
            return Err(Error::Degenerate(format!(
                "non-finite model loss {l_model} at level {}",
                self.level
            )));
        }
        self.recordloss.push(l_model);
        Ok(())
    }

    pub fn end_of_epoch(&mut self, epoch: usize, specs: &[StageSpec; 3]) -> Result<EpochOutcome> {
        if self.recordloss.is_empty() {
            return Err(Error::Degenerate(format!(
                "epoch {epoch} recorded no batch losses"
            )));
        }
        let mean = self.recordloss.iter().sum::<f64>() / self.recordloss.len() as f64;
        self.recordloss.clear();
        self.recordkey.push(mean);
        if self.best_epoch.map_or(true, |b| mean < b.mean_loss) {
            self.best_epoch = Some(BestEpoch {
                epoch,
                mean_loss: mean,
            });
        }
        if let [.., prev, last] = self.recordkey[..] {
            if last - prev > self.threshold {
                self.p += 1;
            }
        }

        let level = self.level;
        let patience = specs[level.index()].patience;
        let exhausted = patience.is_some_and(|limit| self.p >= limit);
        if !exhausted {
            self.weight.finish_epoch();
            return Ok(EpochOutcome {
                decision: Decision::Stay,
                level,
                mean_loss: mean,
                patience: self.p,
                reload: None,
            });
        }

        let reload = (self.reload_best_at_max_level
            && level == Level::MAX
            && patience.is_some_and(|limit| limit >= 3))
        .then_some(self.best_epoch)
        .flatten();
        self.weight.reset();
        self.p = 0;
        let decision = match level.next() {
            Some(next) => {
                self.level = next;
                self.recordkey.clear();
                self.best_epoch = None;
                Decision::Advance
            }
            None => Decision::Finished,
        };
        Ok(EpochOutcome {
            decision,
            level,
            mean_loss: mean,
            patience: 0,
            reload,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(threshold: f64) -> CurriculumState {
        CurriculumState::new(threshold, ContrastWeightState::new(0.02, 10.0, 2.0).unwrap())
    }

    fn run_epoch(s: &mut CurriculumState, epoch: usize, losses: &[f64]) -> EpochOutcome {
        for &l in losses {
            s.record_batch_loss(l).unwrap();
        }
        s.end_of_epoch(epoch, &stage_specs([Some(1), Some(1), None])).unwrap()
    }

    #[test]
    fn level_bounds() {
        assert!(Level::new(0).is_err());
        assert!(Level::new(4).is_err());
        assert_eq!(Level::new(2).unwrap().next(), Some(Level::MAX));
        assert_eq!(Level::MAX.next(), None);
    }

    #[test]
    fn stage_contents() {
        let s1 = stage_variants(Level::new(1).unwrap());
        assert_eq!(s1.train_variants, vec![WeatherVariantId::CLEAR]);
        assert_eq!(s1.mode_count, 1);
        let s2 = stage_variants(Level::new(2).unwrap());
        assert!(s2.train_variants.iter().all(|v| v.magnitude() == 1));
        assert_eq!(s2.train_variants.len(), 3);
        assert_eq!(s2.mode_count, 3);
        let s3 = stage_variants(Level::MAX);
        assert!(s3.train_variants.iter().all(|v| v.magnitude() == 2));
        assert!(s3.contrast_variants.iter().all(|v| v.magnitude() == 1));
        assert_eq!(s3.mode_count, 9);
        for s in [s1, s2, s3] {
            assert!(s
                .contrast_variants
                .iter()
                .all(|v| StageSpec::level_of(*v) <= s.level));
        }
    }

    #[test]
    fn batch_losses_and_epoch_mean() {
        let mut s = state(0.0);
        for l in [1.0, 2.0, 3.0] {
            s.record_batch_loss(l).unwrap();
        }
        assert_eq!(s.recordloss.len(), 3);
        s.end_of_epoch(0, &stage_specs([Some(1), Some(1), None])).unwrap();
        assert_eq!(s.recordkey, vec![2.0]);
        assert!(s.recordloss.is_empty());
        assert!(s.record_batch_loss(f64::NAN).is_err());
        assert!(s.record_batch_loss(f64::INFINITY).is_err());
    }

    #[test]
    fn empty_epoch_is_an_error() {
        let mut s = state(0.0);
        assert!(s.end_of_epoch(0, &stage_specs([Some(1), Some(1), None])).is_err());
    }

    #[test]
    fn rise_above_threshold_advances() {
        let mut s = state(0.0);
        assert_eq!(run_epoch(&mut s, 0, &[1.0]).decision, Decision::Stay);
        let out = run_epoch(&mut s, 1, &[1.001]);
        assert_eq!(out.decision, Decision::Advance);
        assert_eq!(s.level.get(), 2);
        assert_eq!(s.p, 0);
        assert!(s.recordkey.is_empty());
        assert_eq!(s.r(), 0);
    }

    #[test]
    fn small_rise_below_threshold_stays() {
        let mut s = state(5e-4);
        run_epoch(&mut s, 0, &[1.0]);
        let out = run_epoch(&mut s, 1, &[1.0003]);
        assert_eq!(out.decision, Decision::Stay);
        assert_eq!(s.p, 0);
        assert_eq!(s.level.get(), 1);
    }

    #[test]
    fn descending_losses_never_advance() {
        let mut s = state(0.0);
        for e in 0..10 {
            let out = run_epoch(&mut s, e, &[1.0 - 0.05 * e as f64]);
            assert_eq!(out.decision, Decision::Stay);
            assert_eq!(s.p, 0);
        }
        assert_eq!(s.r(), 10);
        assert_eq!(s.best_epoch.unwrap().epoch, 9);
    }

    #[test]
    fn patience_is_never_decremented() {
        let mut s = state(0.0);
        let specs = stage_specs([Some(3), Some(1), None]);
        for (e, l) in [1.0, 1.1, 0.5, 0.4].into_iter().enumerate() {
            s.record_batch_loss(l).unwrap();
            s.end_of_epoch(e, &specs).unwrap();
        }
        assert_eq!(s.p, 1);
    }

    #[test]
    fn reload_fires_only_at_max_level_with_patience_three() {
        let specs = stage_specs([Some(1), Some(1), Some(3)]);
        let mut s = state(0.0);
        s.level = Level::MAX;
        let losses = [1.0, 0.5, 0.6, 0.7, 0.8];
        let mut last = None;
        for (e, l) in losses.into_iter().enumerate() {
            s.record_batch_loss(l).unwrap();
            last = Some(s.end_of_epoch(e, &specs).unwrap());
        }
        let out = last.unwrap();
        assert_eq!(out.decision, Decision::Finished);
        assert_eq!(out.reload.unwrap().epoch, 1);

        // Default paper-style patience of one never triggers the reload.
        let specs = stage_specs([Some(1), Some(1), Some(1)]);
        let mut s = state(0.0);
        run_epoch(&mut s, 0, &[1.0]);
        let out = {
            s.record_batch_loss(2.0).unwrap();
            s.end_of_epoch(1, &specs).unwrap()
        };
        assert_eq!(out.decision, Decision::Advance);
        assert!(out.reload.is_none());
    }

    #[test]
    fn plan_sampling_is_deterministic_and_legal() {
        for l in Level::all() {
            let spec = stage_variants(l);
            for seed in 0..50 {
                let a = sample_contrast_plan(l, seed);
                assert_eq!(a, sample_contrast_plan(l, seed));
                assert!(spec.train_variants.contains(&a.train));
                assert!(spec.contrast_variants.contains(&a.contrast));
                assert!(a.contrast_level <= a.augmented_level);
                assert_eq!(a.detach, DetachDirection::Contrast);
            }
        }
        let p = sample_contrast_plan(Level::FIRST, 7);
        assert_ne!(p.train_seed, p.contrast_seed);
    }
}
