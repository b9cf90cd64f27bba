//! The epoch loop: training and contrast forwards, loss assembly, stage
//! scheduling and per-epoch checkpoints.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use autograd::{Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{jitter_with, JitterFactors, JitterRange, WeatherVariantId};
use crate::curriculum::{
    sample_contrast_plan_with, stage_specs, BestEpoch, ContrastPlan, CurriculumState, Decision,
    Level, StageSpec,
};
use crate::geometry::{disparity_to_depth_var, valid_mask_tensor, warp_var, CameraRig, WarpDirection};
use crate::image::Image;
use crate::losses::{
    contrastive_loss_var, photometric_loss_var, smoothness_var, total_loss, total_loss_var,
    ContrastWeightState, LossBundle, PhotometricParams, WeightCap,
};
use crate::model::{Adam, ArchConfig, Checkpoint, DepthNetwork, ReferenceNet};
use crate::synthdata::{Dataset, Side};
use crate::{Error, Result};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Staged data with the consistency loss.
    CurriculumContrastive,
    /// Staged data, consistency weight fixed at zero.
    CurriculumOnly,
    /// Every condition from the first epoch, drawn with equal frequency; no
    /// stages and no consistency loss.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub mode: TrainMode,
    pub batch_size: usize,
    /// Total epoch budget across all stages.
    pub epochs: usize,
    pub learning_rate: f64,
    /// Patience of levels 1 to 3; `null` keeps a level until the budget ends.
    pub patience: [Option<u32>; 3],
    pub threshold: f64,
    pub w_cst: f64,
    pub w_max: f64,
    pub lambda: f64,
    pub weight_period: usize,
    pub weight_cap: WeightCap,
    pub detach_enabled: bool,
    pub smoothness_weight: f64,
    pub photometric: PhotometricParams,
    pub jitter: JitterRange,
    pub base_channels: usize,
    pub seed: u64,
    pub reload_best_at_max_level: bool,
    /// Forces a move to the next level after this many epochs at levels 1
    /// and 2, for runs whose budget is too short for patience to trigger.
    pub stage_epoch_cap: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            mode: TrainMode::CurriculumContrastive,
            batch_size: 4,
            epochs: 10,
            learning_rate: 1e-4,
            patience: [Some(1), Some(1), None],
            threshold: 5e-4,
            w_cst: 0.02,
            w_max: 10.0,
            lambda: 2.0,
            weight_period: 2,
            weight_cap: WeightCap::Min,
            detach_enabled: true,
            smoothness_weight: 1e-3,
            photometric: PhotometricParams::default(),
            jitter: JitterRange::default(),
            base_channels: 8,
            seed: 0,
            reload_best_at_max_level: true,
            stage_epoch_cap: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!("threshold must be >= 0, got {}", self.threshold)));
        }
        if !(self.smoothness_weight >= 0.0) {
            return Err(Error::Config("smoothness_weight must be >= 0".into()));
        }
        self.photometric.validate()?;
        self.weight_state()?;
        Ok(())
    }

    /// Consistency weight actually applied; zero outside the contrastive mode.
    pub fn effective_w_cst(&self) -> f64 {
        match self.mode {
            TrainMode::CurriculumContrastive => self.w_cst,
            _ => 0.0,
        }
    }

    fn weight_state(&self) -> Result<ContrastWeightState> {
        Ok(ContrastWeightState::new(self.effective_w_cst(), self.w_max, self.lambda)?
            .with_period(self.weight_period)
            .with_cap(self.weight_cap))
    }

    pub fn stages(&self) -> [StageSpec; 3] {
        match self.mode {
            TrainMode::Mixed => stage_specs([None; 3]),
            _ => stage_specs(self.patience),
        }
    }

    pub fn initial_state(&self) -> Result<CurriculumState> {
        let mut state = CurriculumState::new(self.threshold, self.weight_state()?);
        state.reload_best_at_max_level = self.reload_best_at_max_level;
        Ok(state)
    }

    pub fn scheduler_enabled(&self) -> bool {
        self.mode != TrainMode::Mixed
    }
}

/// Clear left/right pair and the left-view variants of one frame, kept as
/// 8-bit samples.
#[derive(Clone, Debug)]
struct CachedFrame {
    left: BTreeMap<WeatherVariantId, Vec<u8>>,
    right: Vec<u8>,
}

/// In-memory copy of a dataset's training inputs.
#[derive(Clone, Debug)]
pub struct FrameCache {
    rig: CameraRig,
    frames: Vec<CachedFrame>,
    dataset: Dataset,
}

fn to_u8(img: &Image) -> Vec<u8> {
    img.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
}

impl FrameCache {
    pub fn load(dataset: &Dataset) -> Result<Self> {
        let variants = dataset.variants();
        let mut frames = Vec::with_capacity(dataset.len());
        for i in 0..dataset.len() {
            let mut left = BTreeMap::new();
            for &v in &variants {
                left.insert(v, to_u8(&dataset.load_image(i, Side::Left, v)?));
            }
            let right = to_u8(&dataset.load_image(i, Side::Right, WeatherVariantId::CLEAR)?);
            frames.push(CachedFrame { left, right });
        }
        Ok(Self {
            rig: dataset.rig().clone(),
            frames,
            dataset: dataset.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn rig(&self) -> &CameraRig {
        &self.rig
    }

    pub fn require(&self, variants: &[WeatherVariantId]) -> Result<()> {
        self.dataset.require_variants(variants)
    }

    fn image(&self, bytes: &[u8]) -> Image {
        Image::new(
            self.rig.width,
            self.rig.height,
            3,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
        .expect("cached frame matches the rig")
    }

    /// Left view of `variant`, jittered when `jitter_seed` is nonzero.
    pub fn left(&self, index: usize, variant: WeatherVariantId, jitter: Option<(u64, JitterRange)>) -> Result<Image> {
        let entry = &self.dataset.entries()[index];
        let bytes = self.frames[index].left.get(&variant).ok_or_else(|| Error::MissingVariant {
            scene: entry.scene.clone(),
            frame: entry.frame.clone(),
            variant: variant.to_string(),
        })?;
        let img = self.image(bytes);
        Ok(match jitter {
            Some((seed, range)) if seed != 0 => jitter_with(&img, JitterFactors::sample(seed, range)),
            _ => img,
        })
    }

    pub fn right(&self, index: usize) -> Image {
        self.image(&self.frames[index].right)
    }
}

/// One batch of training inputs.
#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// Variant each sample's training input was drawn from.
    pub variants: Vec<WeatherVariantId>,
    /// Network input for the training branch, `[n, 3, H, W]`.
    pub augmented: Tensor,
    /// Network input for the contrast branch.
    pub contrast: Option<Tensor>,
    pub clear_left: Tensor,
    pub clear_right: Tensor,
    pub augmented_level: Level,
    pub contrast_level: Level,
}

/// Differentiable outputs of the training branch.
pub struct StepOutput<'t> {
    pub disparity: Var<'t>,
    pub depth: Var<'t>,
    pub l_model: Var<'t>,
}

/// Loss terms of the model objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelLossParams {
    pub photometric: PhotometricParams,
    pub smoothness_weight: f64,
}

/// Self-supervised loss of a disparity batch: the clear right image warped
/// into the left view, compared against the clear left image.
pub fn model_loss<'t>(
    disparity: Var<'t>,
    clear_left: &Tensor,
    clear_right: &Tensor,
    params: &ModelLossParams,
) -> Result<Var<'t>> {
    let tape = disparity.tape();
    if disparity.value().data().iter().any(|d| !d.is_finite()) {
        return Ok(tape.constant(Tensor::scalar(f64::NAN)));
    }
    let right = tape.constant(clear_right.clone());
    let recon = warp_var(right, disparity, WarpDirection::RightToLeft);
    let valid = valid_mask_tensor(&disparity.value(), WarpDirection::RightToLeft);
    let mut loss = photometric_loss_var(tape.constant(clear_left.clone()), recon, &valid, &params.photometric)?;
    if params.smoothness_weight > 0.0 {
        loss = loss + smoothness_var(disparity, clear_left) * params.smoothness_weight;
    }
    Ok(loss)
}

/// Forward on the training input and the semi-augmented model loss.
pub fn train_step<'t, N: DepthNetwork>(
    net: &N,
    params: &[Var<'t>],
    augmented: &Tensor,
    clear_left: &Tensor,
    clear_right: &Tensor,
    rig: &CameraRig,
    loss_params: &ModelLossParams,
) -> Result<StepOutput<'t>> {
    let tape = params
        .first()
        .map(|p| p.tape())
        .ok_or_else(|| Error::Config("network has no parameters".into()))?;
    let disparity = net.forward_with(params, tape.constant(augmented.clone()))?;
    let l_model = model_loss(disparity, clear_left, clear_right, loss_params)?;
    Ok(StepOutput {
        disparity,
        depth: disparity_to_depth_var(disparity, rig),
        l_model,
    })
}

/// Depth of the contrast input. Detached, it is computed without recording
/// the network on the tape and enters the graph as a constant.
pub fn inference_step<'t, N: DepthNetwork>(
    net: &N,
    params: &[Var<'t>],
    contrast: &Tensor,
    rig: &CameraRig,
    detach: bool,
) -> Result<Var<'t>> {
    let tape = params
        .first()
        .map(|p| p.tape())
        .ok_or_else(|| Error::Config("network has no parameters".into()))?;
    let disparity = if detach {
        tape.constant(net.predict(contrast)?)
    } else {
        net.forward_with(params, tape.constant(contrast.clone()))?
    };
    Ok(disparity_to_depth_var(disparity, rig))
}

/// What the scheduler hands a runner for one epoch.
#[derive(Clone, Copy, Debug)]
pub struct EpochContext<'a> {
    pub epoch: usize,
    pub level: Level,
    pub spec: &'a StageSpec,
    pub w_curr: f64,
}

/// Executes the batches of one epoch. The scheduler loop is shared between
/// the real trainer and scripted replays.
pub trait EpochRunner {
    /// Loss components of every batch of the epoch, in order.
    fn run_epoch(&mut self, ctx: &EpochContext<'_>) -> Result<Vec<LossBundle>>;

    /// Called once the level the next epoch trains at is known.
    fn enter_level(&mut self, _level: Level) -> Result<()> {
        Ok(())
    }

    /// Called after the scheduler has processed an epoch.
    fn finish_epoch(&mut self, _report: &EpochReport, _state: &CurriculumState) -> Result<()> {
        Ok(())
    }

    /// Restore the parameters of `best`.
    fn reload(&mut self, _best: BestEpoch) -> Result<()> {
        Ok(())
    }
}

/// One line of `train_log.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Level trained at; `null` when the scheduler is disabled.
    pub level: Option<u8>,
    /// Epochs completed in the stage before this one.
    pub r: usize,
    pub p: u32,
    pub w_curr: f64,
    #[serde(rename = "mean_L_model")]
    pub mean_l_model: f64,
    #[serde(rename = "mean_L_cst")]
    pub mean_l_cst: f64,
    pub wall_s: f64,
}

/// Scheduler settings for [`run_schedule`].
#[derive(Clone, Debug)]
pub struct Schedule {
    pub specs: [StageSpec; 3],
    pub enabled: bool,
    pub stage_epoch_cap: Option<usize>,
}

/// Runs epochs `start..end`, advancing `state` after each one. Returns the
/// reports and whether training finished before the budget ran out.
pub fn run_schedule<R: EpochRunner>(
    runner: &mut R,
    state: &mut CurriculumState,
    schedule: &Schedule,
    start: usize,
    end: usize,
) -> Result<(Vec<EpochReport>, bool)> {
    let mut reports = Vec::new();
    if start < end {
        runner.enter_level(state.level)?;
    }
    for epoch in start..end {
        let t0 = Instant::now();
        let r = state.r();
        let w_curr = state.begin_epoch();
        let level = state.level;
        let ctx = EpochContext {
            epoch,
            level,
            spec: &schedule.specs[level.index()],
            w_curr,
        };
        let bundles = runner.run_epoch(&ctx)?;
        for b in &bundles {
            state.record_batch_loss(b.l_model)?;
        }
        let mut specs = schedule.specs.clone();
        if let Some(cap) = schedule.stage_epoch_cap.filter(|_| schedule.enabled) {
            if level < Level::MAX && r + 1 >= cap {
                specs[level.index()].patience = Some(0);
            }
        }
        let outcome = state.end_of_epoch(epoch, &specs)?;
        let n = bundles.len().max(1) as f64;
        let report = EpochReport {
            epoch,
            level: schedule.enabled.then_some(level.get()),
            r,
            p: outcome.patience,
            w_curr,
            mean_l_model: outcome.mean_loss,
            mean_l_cst: bundles.iter().map(|b| b.l_cst).sum::<f64>() / n,
            wall_s: t0.elapsed().as_secs_f64(),
        };
        runner.finish_epoch(&report, state)?;
        reports.push(report);
        if let Some(best) = outcome.reload {
            runner.reload(best)?;
        }
        match outcome.decision {
            Decision::Stay => {}
            Decision::Advance => {
                if epoch + 1 < end {
                    runner.enter_level(state.level)?;
                }
            }
            Decision::Finished => return Ok((reports, true)),
        }
    }
    Ok((reports, false))
}

/// Trainer state stored alongside the network in every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    /// Epochs completed so far.
    pub epochs_done: usize,
    pub curriculum: CurriculumState,
    pub finished: bool,
    pub seed: u64,
    pub mode: TrainMode,
}

pub fn epoch_checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join(format!("epoch_{epoch:04}.ckpt"))
}

/// Per-epoch RNG, independent of how many epochs ran before in this process.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn mix_seed(seed: u64, index: usize) -> u64 {
    let s = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    if s == 0 {
        1
    } else {
        s
    }
}

/// The real network runner.
pub struct NetRunner<'a> {
    pub config: &'a TrainConfig,
    pub data: &'a FrameCache,
    pub net: ReferenceNet,
    pub optimizer: Adam,
    pub out: Option<PathBuf>,
    loss_params: ModelLossParams,
    last_checkpoint: Option<PathBuf>,
}

impl<'a> NetRunner<'a> {
    pub fn new(config: &'a TrainConfig, data: &'a FrameCache, net: ReferenceNet, optimizer: Adam, out: Option<PathBuf>) -> Self {
        Self {
            config,
            data,
            net,
            optimizer,
            out,
            loss_params: ModelLossParams {
                photometric: config.photometric,
                smoothness_weight: config.smoothness_weight,
            },
            last_checkpoint: None,
        }
    }

    fn stack(images: Vec<Image>) -> Result<Tensor> {
        let items: Vec<Tensor> = images.iter().map(Image::to_tensor).collect();
        Ok(Tensor::stack(&items)?)
    }

    fn clear_pair(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let left = indices
            .iter()
            .map(|&i| self.data.left(i, WeatherVariantId::CLEAR, None))
            .collect::<Result<Vec<_>>>()?;
        let right = indices.iter().map(|&i| self.data.right(i)).collect();
        Ok((Self::stack(left)?, Self::stack(right)?))
    }

    /// Batches of a curriculum epoch; one contrast plan per batch.
    fn curriculum_batches(&self, ctx: &EpochContext<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<Batch>> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(rng);
        let with_contrast = self.config.mode == TrainMode::CurriculumContrastive && ctx.w_curr > 0.0;
        let jitter = self.config.jitter;
        order
            .chunks(self.config.batch_size)
            .map(|chunk| {
                let plan: ContrastPlan = sample_contrast_plan_with(ctx.spec, rng);
                let aug = chunk
                    .iter()
                    .map(|&i| self.data.left(i, plan.train, Some((mix_seed(plan.train_seed, i), jitter))))
                    .collect::<Result<Vec<_>>>()?;
                let contrast = if with_contrast {
                    let imgs = chunk
                        .iter()
                        .map(|&i| {
                            self.data
                                .left(i, plan.contrast, Some((mix_seed(plan.contrast_seed, i), jitter)))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Some(Self::stack(imgs)?)
                } else {
                    None
                };
                let (clear_left, clear_right) = self.clear_pair(chunk)?;
                Ok(Batch {
                    indices: chunk.to_vec(),
                    variants: vec![plan.train; chunk.len()],
                    augmented: Self::stack(aug)?,
                    contrast,
                    clear_left,
                    clear_right,
                    augmented_level: plan.augmented_level,
                    contrast_level: plan.contrast_level,
                })
            })
            .collect()
    }

    /// Batches of a mixed epoch: every frame gets a condition, and the seven
    /// conditions are dealt out in equal shares.
    fn mixed_batches(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Batch>> {
        let conditions = WeatherVariantId::all();
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(rng);
        let mut assigned: Vec<WeatherVariantId> =
            (0..order.len()).map(|k| conditions[k % conditions.len()]).collect();
        assigned.shuffle(rng);
        let jitter = self.config.jitter;
        let pairs: Vec<(usize, WeatherVariantId, u64)> = order
            .iter()
            .zip(&assigned)
            .map(|(&i, &v)| (i, v, rng.random::<u64>() | 1))
            .collect();
        pairs
            .chunks(self.config.batch_size)
            .map(|chunk| {
                let indices: Vec<usize> = chunk.iter().map(|c| c.0).collect();
                let aug = chunk
                    .iter()
                    .map(|&(i, v, s)| self.data.left(i, v, Some((s, jitter))))
                    .collect::<Result<Vec<_>>>()?;
                let (clear_left, clear_right) = self.clear_pair(&indices)?;
                Ok(Batch {
                    indices,
                    variants: chunk.iter().map(|c| c.1).collect(),
                    augmented: Self::stack(aug)?,
                    contrast: None,
                    clear_left,
                    clear_right,
                    augmented_level: Level::FIRST,
                    contrast_level: Level::FIRST,
                })
            })
            .collect()
    }

    /// Conditions the epoch's batches will train on, for inspection.
    pub fn epoch_batches(&self, ctx: &EpochContext<'_>) -> Result<Vec<Batch>> {
        let mut rng = epoch_rng(self.config.seed, ctx.epoch);
        match self.config.mode {
            TrainMode::Mixed => self.mixed_batches(&mut rng),
            _ => self.curriculum_batches(ctx, &mut rng),
        }
    }

    /// One optimization step. Returns the loss components.
    pub fn step(&mut self, batch: &Batch, w_curr: f64) -> Result<LossBundle> {
        let tape = Tape::new();
        let params = self.net.bind(&tape);
        let rig = self.data.rig();
        let out = train_step(
            &self.net,
            &params,
            &batch.augmented,
            &batch.clear_left,
            &batch.clear_right,
            rig,
            &self.loss_params,
        )?;
        let (objective, l_cst) = match &batch.contrast {
            Some(contrast) => {
                let d_cst = inference_step(&self.net, &params, contrast, rig, self.config.detach_enabled)?;
                let l_cst = contrastive_loss_var(
                    out.depth,
                    d_cst,
                    batch.augmented_level,
                    batch.contrast_level,
                    self.config.detach_enabled,
                )?;
                (total_loss_var(out.l_model, l_cst, w_curr), l_cst.value().item())
            }
            None => (out.l_model, 0.0),
        };
        let bundle = total_loss(out.l_model.value().item(), l_cst, w_curr);
        if !bundle.l_backward.is_finite() {
            return Ok(bundle);
        }
        let grads = tape.backward(objective)?;
        self.optimizer.update(self.net.parameters_mut(), &params, &grads);
        Ok(bundle)
    }

    fn checkpoint(&self, state: TrainerState) -> Result<Checkpoint> {
        Ok(Checkpoint {
            net: self.net.clone(),
            optimizer: self.optimizer.clone(),
            state: serde_json::to_value(state).map_err(|e| Error::Config(e.to_string()))?,
        })
    }

    fn last_checkpoint_name(&self) -> String {
        self.last_checkpoint
            .as_ref()
            .map_or_else(|| "none".into(), |p| p.display().to_string())
    }
}

impl EpochRunner for NetRunner<'_> {
    fn run_epoch(&mut self, ctx: &EpochContext<'_>) -> Result<Vec<LossBundle>> {
        let batches = self.epoch_batches(ctx)?;
        let mut bundles = Vec::with_capacity(batches.len());
        for (b, batch) in batches.iter().enumerate() {
            let bundle = self.step(batch, ctx.w_curr)?;
            if !bundle.l_backward.is_finite() {
                return Err(Error::NonFiniteLoss {
                    value: bundle.l_backward,
                    epoch: ctx.epoch,
                    batch: b,
                    checkpoint: self.last_checkpoint_name(),
                });
            }
            log::debug!(
                "epoch {} batch {b}: L_model {:.5} L_cst {:.5}",
                ctx.epoch,
                bundle.l_model,
                bundle.l_cst
            );
            bundles.push(bundle);
        }
        Ok(bundles)
    }

    fn enter_level(&mut self, level: Level) -> Result<()> {
        match self.config.mode {
            TrainMode::Mixed => self.data.require(&WeatherVariantId::all()),
            _ => {
                let spec = &self.config.stages()[level.index()];
                self.data.require(&spec.train_variants)?;
                if self.config.mode == TrainMode::CurriculumContrastive {
                    self.data.require(&spec.contrast_variants)?;
                }
                Ok(())
            }
        }
    }

    fn finish_epoch(&mut self, report: &EpochReport, state: &CurriculumState) -> Result<()> {
        log::info!(
            "epoch {} level {:?} w_curr {:.4} L_model {:.5} L_cst {:.5} ({:.1}s)",
            report.epoch,
            report.level,
            report.w_curr,
            report.mean_l_model,
            report.mean_l_cst,
            report.wall_s
        );
        let Some(out) = self.out.clone() else {
            return Ok(());
        };
        let trainer = TrainerState {
            epochs_done: report.epoch + 1,
            curriculum: state.clone(),
            finished: false,
            seed: self.config.seed,
            mode: self.config.mode,
        };
        let path = epoch_checkpoint_path(&out, report.epoch);
        self.checkpoint(trainer)?.save(&path)?;
        self.last_checkpoint = Some(path);
        let log_path = out.join(LOG_FILE);
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        let line = serde_json::to_string(report).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))
    }

    fn reload(&mut self, best: BestEpoch) -> Result<()> {
        let out = self.out.clone().ok_or_else(|| {
            Error::Config("reloading the best epoch needs an output directory".into())
        })?;
        let ckpt = Checkpoint::load_for(&epoch_checkpoint_path(&out, best.epoch), self.net.arch())?;
        log::info!("restoring epoch {} (mean L_model {:.5})", best.epoch, best.mean_loss);
        self.net = ckpt.net;
        self.optimizer = ckpt.optimizer;
        Ok(())
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: ReferenceNet,
    pub reports: Vec<EpochReport>,
    pub state: CurriculumState,
    pub epochs_done: usize,
}

/// Trains from scratch, or from `resume` when given. With `out`, every epoch
/// writes a checkpoint and a log line there, and the final network goes to
/// `final.ckpt`.
pub fn run_training(config: &TrainConfig, resume: Option<&Path>, out: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let dataset = Dataset::load(&config.dataset)?;
    let data = FrameCache::load(&dataset)?;
    run_training_on(config, &data, resume, out)
}

pub fn run_training_on(
    config: &TrainConfig,
    data: &FrameCache,
    resume: Option<&Path>,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let arch = ArchConfig::for_rig(data.rig(), config.base_channels, config.seed);
    let (net, optimizer, mut state, start, finished) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load_for(path, &arch)?;
            let ts: TrainerState = serde_json::from_value(ckpt.state.clone()).map_err(|e| Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("trainer state: {e}"),
            })?;
            if ts.mode != config.mode {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    reason: format!("checkpoint was trained in mode {:?}, config asks for {:?}", ts.mode, config.mode),
                });
            }
            (ckpt.net, ckpt.optimizer, ts.curriculum, ts.epochs_done, ts.finished)
        }
        None => {
            let net = ReferenceNet::new(arch)?;
            let optimizer = Adam::new(config.learning_rate, net.parameters());
            (net, optimizer, config.initial_state()?, 0, false)
        }
    };
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        if resume.is_none() {
            File::create(out.join(LOG_FILE)).map_err(|e| Error::io(out.join(LOG_FILE), e))?;
        }
    }
    let schedule = Schedule {
        specs: config.stages(),
        enabled: config.scheduler_enabled(),
        stage_epoch_cap: config.stage_epoch_cap,
    };
    let mut runner = NetRunner::new(config, data, net, optimizer, out.map(Path::to_path_buf));
    runner.last_checkpoint = resume.map(Path::to_path_buf);
    let end = if finished { start } else { config.epochs.max(start) };
    let (reports, done) = run_schedule(&mut runner, &mut state, &schedule, start, end)?;
    let epochs_done = start + reports.len();
    if let Some(out) = out {
        let ts = TrainerState {
            epochs_done,
            curriculum: state.clone(),
            finished: finished || done,
            seed: config.seed,
            mode: config.mode,
        };
        runner.checkpoint(ts)?.save(&out.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainOutcome {
        net: runner.net,
        reports,
        state,
        epochs_done,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ContrastWeightState;

    /// Replays fixed per-epoch mean losses.
    struct Scripted {
        losses: Vec<f64>,
        levels: Vec<Level>,
    }

    impl EpochRunner for Scripted {
        fn run_epoch(&mut self, ctx: &EpochContext<'_>) -> Result<Vec<LossBundle>> {
            self.levels.push(ctx.level);
            let l = self.losses[ctx.epoch];
            Ok(vec![total_loss(l, 1.0, ctx.w_curr); 2])
        }
    }

    fn schedule(patience: [Option<u32>; 3]) -> Schedule {
        Schedule {
            specs: stage_specs(patience),
            enabled: true,
            stage_epoch_cap: None,
        }
    }

    #[test]
    fn replay_transitions_follow_rises() {
        let losses = vec![1.0, 0.9, 0.8, 0.7, 0.75, 0.7, 0.6, 0.5, 0.45, 0.5, 0.4, 0.3];
        let mut runner = Scripted { losses, levels: vec![] };
        let mut state = CurriculumState::new(0.0, ContrastWeightState::new(0.02, 10.0, 2.0).unwrap());
        let (reports, finished) =
            run_schedule(&mut runner, &mut state, &schedule([Some(1), Some(1), None]), 0, 12).unwrap();
        assert!(!finished);
        let levels: Vec<u8> = reports.iter().map(|r| r.level.unwrap()).collect();
        assert_eq!(levels, [1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 3, 3]);
    }

    #[test]
    fn stage_epoch_cap_forces_advance() {
        let mut runner = Scripted { losses: vec![1.0; 8], levels: vec![] };
        let mut state = CurriculumState::new(0.0, ContrastWeightState::new(0.02, 10.0, 2.0).unwrap());
        let mut s = schedule([Some(1), Some(1), None]);
        s.stage_epoch_cap = Some(3);
        let (reports, _) = run_schedule(&mut runner, &mut state, &s, 0, 8).unwrap();
        let levels: Vec<u8> = reports.iter().map(|r| r.level.unwrap()).collect();
        assert_eq!(levels, [1, 1, 1, 2, 2, 2, 3, 3]);
    }

    #[test]
    fn reload_at_max_level_finishes() {
        struct Reloading(Vec<BestEpoch>);
        impl EpochRunner for Reloading {
            fn run_epoch(&mut self, ctx: &EpochContext<'_>) -> Result<Vec<LossBundle>> {
                let l = [1.0, 2.0, 3.0, 1.0, 1.1, 1.0, 1.1, 1.2, 1.3][ctx.epoch];
                Ok(vec![total_loss(l, 0.0, 0.0)])
            }
            fn reload(&mut self, best: BestEpoch) -> Result<()> {
                self.0.push(best);
                Ok(())
            }
        }
        let mut runner = Reloading(vec![]);
        let mut state = CurriculumState::new(0.0, ContrastWeightState::new(0.02, 10.0, 2.0).unwrap());
        let (reports, finished) =
            run_schedule(&mut runner, &mut state, &schedule([Some(1), Some(1), Some(3)]), 0, 12).unwrap();
        assert!(finished);
        assert_eq!(reports.len(), 9);
        assert_eq!(runner.0, [BestEpoch { epoch: 5, mean_loss: 1.0 }]);
    }

    #[test]
    fn config_defaults_round_trip() {
        let cfg = TrainConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        let partial: TrainConfig = serde_json::from_str(r#"{"mode": "mixed", "epochs": 3}"#).unwrap();
        assert_eq!(partial.mode, TrainMode::Mixed);
        assert_eq!(partial.batch_size, 4);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn curriculum_only_has_zero_weight() {
        let cfg = TrainConfig {
            mode: TrainMode::CurriculumOnly,
            ..TrainConfig::default()
        };
        let mut state = cfg.initial_state().unwrap();
        assert_eq!(state.begin_epoch(), 0.0);
    }
}
