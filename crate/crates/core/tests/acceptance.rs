//! End-to-end acceptance checks. Runs every criterion, prints one line per
//! criterion and exits non-zero if any failed.
//!
//! The desk-scale ablation (criteria 9 and 10) trains three networks and
//! takes several minutes on one core. Set `ACCEPTANCE_SKIP_ABLATION=1` to
//! report those two as skipped while iterating on the quick ones.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use autograd::{Tape, Tensor};
use curriculum_depth::augmentation::{render_fog, FogParams, WeatherConfig, WeatherVariantId};
use curriculum_depth::curriculum::{sample_contrast_plan, stage_specs, CurriculumState, Level};
use curriculum_depth::evaluation::{compute_metrics, evaluate, EvalConfig, EvalReport};
use curriculum_depth::geometry::{warp, warp_by_disparity, warp_var, CameraRig, DepthMap, WarpDirection};
use curriculum_depth::image::{Image, Map, Mask};
use curriculum_depth::losses::{
    contrastive_loss, contrastive_loss_var, photometric_loss, total_loss, ContrastWeightState, LossBundle,
    PhotometricParams,
};
use curriculum_depth::model::{ArchConfig, DepthNetwork, ReferenceNet};
use curriculum_depth::synthdata::{augment_dataset, generate_dataset, generate_scene, render_stereo, Dataset};
use curriculum_depth::trainer::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, 3, |_, _, _| rng.random::<f64>())
}

fn loss_identities() -> Outcome {
    let params = PhotometricParams::default();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let img = random_image(24, 12, seed);
        worst = worst.max(photometric_loss(&img, &img, &Mask::full(24, 12), &params).map_err(|e| e.to_string())?.abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = DepthMap::new(Map::from_fn(16, 8, |_, _| rng.random_range(1.0..80.0))).unwrap();
    let self_cst = contrastive_loss(&d, &d, Level::FIRST, Level::FIRST, true).unwrap();
    let shifted = DepthMap::new(d.map().map(|v| v + std::f64::consts::E - 1.0)).unwrap();
    let unit = contrastive_loss(&shifted, &d, Level::new(2).unwrap(), Level::FIRST, true).unwrap();
    check(
        worst <= 1e-6 && self_cst == 0.0 && (unit - 1.0).abs() <= 1e-9,
        format!("max photometric(I, I) {worst:.2e}, L_cst(D, D) {self_cst}, L_cst at e-1 {unit:.12}"),
    )
}

fn gradient_cut_off() -> Outcome {
    // Two branches of a shared network: the lower-stage (contrast) input
    // must pass no gradient when detaching is on.
    let rig = CameraRig::for_resolution(32, 16);
    let a = render_stereo(&generate_scene(1, &rig).unwrap(), "a", "f");
    let b = render_stereo(&generate_scene(2, &rig).unwrap(), "b", "f");
    let net = ReferenceNet::new(ArchConfig::for_rig(&rig, 4, 0)).unwrap();
    let lower_grad = |detach: bool| -> (f64, f64) {
        let tape = Tape::new();
        let params = net.bind(&tape);
        let aug = tape.var(a.left.to_tensor());
        let cst = tape.var(b.left.to_tensor());
        let d_aug = net.forward_with(&params, aug).unwrap();
        let d_cst = net.forward_with(&params, cst).unwrap();
        let l = contrastive_loss_var(d_aug, d_cst, Level::new(2).unwrap(), Level::FIRST, detach).unwrap();
        let g = tape.backward(l).unwrap();
        (g.wrt_or_zeros(cst).max_abs(), g.wrt_or_zeros(aug).max_abs())
    };
    let (cut, kept) = lower_grad(true);
    let (open, _) = lower_grad(false);
    // The trainer's detached branch is a constant: no route to parameters.
    let tape = Tape::new();
    let params = net.bind(&tape);
    let d = inference_step(&net, &params, &b.left.to_tensor(), &rig, true).unwrap();
    let g = tape.backward(d.sum()).unwrap();
    let through_params = params.iter().map(|p| g.wrt_or_zeros(*p).max_abs()).fold(0.0, f64::max);
    check(
        cut == 0.0 && kept > 0.0 && open > 0.0 && through_params == 0.0,
        format!("detached max|grad| {cut}, training branch {kept:.3e}, not detached {open:.3e}"),
    )
}

fn weight_schedule() -> Outcome {
    let mut state = CurriculumState::new(0.0, ContrastWeightState::new(0.02, 10.0, 2.0).unwrap());
    let specs = stage_specs([None, None, None]);
    let mut seq = Vec::new();
    for epoch in 0..10 {
        seq.push(state.begin_epoch());
        state.record_batch_loss(1.0 - 0.01 * epoch as f64).unwrap();
        state.end_of_epoch(epoch, &specs).unwrap();
    }
    let want = [0.02, 0.02, 0.04, 0.04, 0.08, 0.08, 0.16, 0.16, 0.2, 0.2];
    let matches = seq.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15);

    // Reset at every stage switch.
    let mut state = CurriculumState::new(0.0, ContrastWeightState::new(0.02, 10.0, 2.0).unwrap());
    let specs = stage_specs([Some(1), Some(1), None]);
    let losses = [1.0, 0.9, 0.8, 0.7, 0.8, 0.7, 0.6, 0.7, 0.6];
    let mut after_switch = Vec::new();
    let mut level = state.level;
    for (epoch, l) in losses.iter().enumerate() {
        let w = state.begin_epoch();
        if state.level != level {
            after_switch.push(w);
            level = state.level;
        }
        state.record_batch_loss(*l).unwrap();
        state.end_of_epoch(epoch, &specs).unwrap();
    }
    check(
        matches && after_switch == [0.02, 0.02],
        format!("w_curr {seq:?}, first weight after each switch {after_switch:?}"),
    )
}

struct Replay(Vec<f64>);

impl EpochRunner for Replay {
    fn run_epoch(&mut self, ctx: &EpochContext<'_>) -> curriculum_depth::Result<Vec<LossBundle>> {
        Ok(vec![total_loss(self.0[ctx.epoch], 0.5, ctx.w_curr); 4])
    }
}

fn replay_levels(losses: &[f64], threshold: f64) -> Vec<u8> {
    let schedule = Schedule {
        specs: stage_specs([Some(1), Some(1), None]),
        enabled: true,
        stage_epoch_cap: None,
    };
    let mut state = CurriculumState::new(threshold, ContrastWeightState::new(0.02, 10.0, 2.0).unwrap());
    let (reports, _) = run_schedule(&mut Replay(losses.to_vec()), &mut state, &schedule, 0, losses.len()).unwrap();
    reports.iter().map(|r| r.level.unwrap()).collect()
}

fn scheduler_replay() -> Outcome {
    // Falling losses with rises at epochs 4 and 9.
    let losses = [1.0, 0.9, 0.8, 0.7, 0.75, 0.7, 0.6, 0.5, 0.45, 0.5, 0.4, 0.3];
    let levels = replay_levels(&losses, 0.0);
    let transitions: Vec<usize> = (0..levels.len() - 1).filter(|&e| levels[e + 1] != levels[e]).collect();
    let small = [1.0, 0.9, 0.8, 0.7, 0.7003, 0.6, 0.5, 0.4, 0.4003, 0.3];
    let quiet = replay_levels(&small, 5e-4);
    check(
        transitions == [4, 9] && quiet.iter().all(|&l| l == 1),
        format!("transitions after epochs {transitions:?}; 3e-4 rises at threshold 5e-4 keep level {:?}", quiet.last()),
    )
}

fn contrastive_mode_counts() -> Outcome {
    let counts: Vec<usize> = Level::all()
        .iter()
        .map(|&level| {
            (0..5000u64)
                .map(|seed| sample_contrast_plan(level, seed).mode())
                .collect::<BTreeSet<_>>()
                .len()
        })
        .collect();
    check(counts == [1, 3, 9], format!("distinct modes per level {counts:?}"))
}

fn geometry_oracles() -> Outcome {
    let img = random_image(24, 10, 1);
    let (same, _) = warp_by_disparity(&img, &Map::filled(24, 10, 0.0), WarpDirection::RightToLeft).unwrap();
    let identity = same.max_abs_diff(&img);

    let (shifted, _) = warp_by_disparity(&img, &Map::filled(24, 10, 3.0), WarpDirection::RightToLeft).unwrap();
    let mut translation: f64 = 0.0;
    for c in 0..3 {
        for y in 0..10 {
            for x in 3..24 {
                translation = translation.max((shifted.get(c, y, x) - img.get(c, y, x - 3)).abs());
            }
        }
    }

    let smooth = Image::from_fn(16, 5, 3, |c, y, x| {
        0.5 + 0.4 * ((x as f64 * 0.37 + c as f64).sin() * (y as f64 * 0.21).cos())
    })
    .to_tensor();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let disp = Tensor::from_fn([1, 1, 5, 16], |_| rng.random_range(0.3..4.7));
    let weights = Tensor::from_fn([1, 3, 5, 16], |_| rng.random_range(-1.0..1.0));
    let objective = |d: &Tensor| -> f64 {
        let tape = Tape::new();
        let out = warp_var(tape.constant(smooth.clone()), tape.constant(d.clone()), WarpDirection::RightToLeft);
        out.value().zip_map(&weights, |a, b| a * b).sum()
    };
    let tape = Tape::new();
    let d = tape.var(disp.clone());
    let out = warp_var(tape.constant(smooth.clone()), d, WarpDirection::RightToLeft);
    let grad = tape.backward((out * tape.constant(weights.clone())).sum()).unwrap().wrt_or_zeros(d);
    let mut fd_err: f64 = 0.0;
    for i in 0..disp.len() {
        if !(0.05..0.95).contains(&disp.data()[i].fract()) {
            continue;
        }
        let (mut p, mut m) = (disp.clone(), disp.clone());
        p.data_mut()[i] += 1e-6;
        m.data_mut()[i] -= 1e-6;
        let fd = (objective(&p) - objective(&m)) / 2e-6;
        let an = grad.data()[i];
        fd_err = fd_err.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3));
    }

    let rig = CameraRig::desk_scale();
    let mut recon_err: f64 = 0.0;
    for seed in 0..10 {
        let scene = generate_scene(seed, &rig).unwrap();
        let s = render_stereo(&scene, "s", "f");
        let (recon, valid) = warp(&s.right, &s.depth, &rig, WarpDirection::RightToLeft).unwrap();
        let mask = valid.and(&scene.non_occluded_mask());
        let mut total = 0.0;
        for y in 0..rig.height {
            for x in 0..rig.width {
                if mask.get(y, x) {
                    for c in 0..3 {
                        total += (recon.get(c, y, x) - s.left.get(c, y, x)).abs();
                    }
                }
            }
        }
        recon_err = recon_err.max(total / (3 * mask.count()) as f64);
    }
    check(
        identity < 1e-6 && translation < 1e-6 && fd_err < 1e-2 && recon_err < 1e-2,
        format!(
            "identity {identity:.1e}, 3 px shift {translation:.1e}, gradient rel err {fd_err:.1e}, \
             worst mean GT reconstruction error {recon_err:.1e}"
        ),
    )
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let pred: Vec<f64> = (0..100).map(|_| rng.random_range(0.5..80.0)).collect();
        let gt: Vec<f64> = (0..100).map(|_| rng.random_range(0.5..80.0)).collect();
        let p = DepthMap::new(Map::new(10, 10, pred.clone()).unwrap()).unwrap();
        let g = DepthMap::new(Map::new(10, 10, gt.clone()).unwrap()).unwrap();
        let m = compute_metrics(&p, &g, &Mask::full(10, 10), &EvalConfig::default()).unwrap();
        let n = 100.0;
        let mut o = [0.0; 7];
        for (&p, &g) in pred.iter().zip(&gt) {
            o[0] += (p - g).abs() / g / n;
            o[1] += (p - g).powi(2) / g / n;
            o[2] += (p - g).powi(2) / n;
            o[3] += (p.ln() - g.ln()).powi(2) / n;
            let delta = (p / g).max(g / p);
            for (k, t) in [1.25f64, 1.25f64.powi(2), 1.25f64.powi(3)].iter().enumerate() {
                if delta < *t {
                    o[4 + k] += 1.0 / n;
                }
            }
        }
        o[2] = o[2].sqrt();
        o[3] = o[3].sqrt();
        for (a, b) in m.as_array().iter().zip(o) {
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-300));
        }
    }
    let pred = DepthMap::new(Map::new(2, 1, vec![1.0, 4.0]).unwrap()).unwrap();
    let gt = DepthMap::new(Map::new(2, 1, vec![1.0, 2.0]).unwrap()).unwrap();
    let hand = compute_metrics(&pred, &gt, &Mask::full(2, 1), &EvalConfig::default()).unwrap();
    check(
        worst <= 1e-9 && (hand.absrel - 0.5).abs() < 1e-15 && hand.a1 == 0.5,
        format!("worst relative error {worst:.1e}; hand case absrel {}, a1 {}", hand.absrel, hand.a1),
    )
}

fn fog_physics() -> Outcome {
    let near = FogParams::new(75.0).unwrap();
    let far = FogParams::new(150.0).unwrap();
    let at_visibility = far.transmittance(150.0);
    let (w, h) = (40, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let clear = Image::from_fn(w, h, 3, |_, _, _| rng.random_range(0.0..0.5));
    let depth = DepthMap::new(Map::from_fn(w, h, |_, _| rng.random_range(1.0..200.0))).unwrap();
    let fog75 = render_fog(&clear, Some(&depth), &near).unwrap();
    let fog150 = render_fog(&clear, Some(&depth), &far).unwrap();
    let mut worst: f64 = 0.0;
    for c in 0..3 {
        let a = near.atmospheric_light[c];
        for y in 0..h {
            for x in 0..w {
                let j = clear.get(c, y, x);
                let t75 = (fog75.get(c, y, x) - a) / (j - a);
                let t150 = (fog150.get(c, y, x) - a) / (j - a);
                worst = worst.max((t75 - t150 * t150).abs());
            }
        }
    }
    check(
        (at_visibility - 0.02).abs() <= 1e-6 && worst <= 1e-6,
        format!("t(V) = {at_visibility:.8}; max |t75 - t150^2| {worst:.1e}"),
    )
}

fn reproducibility_and_resume() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let ds = generate_dataset(&data, 8, 21, &CameraRig::for_resolution(32, 16)).map_err(|e| e.to_string())?;
    augment_dataset(&ds, &WeatherVariantId::adverse_variants(), 22, &WeatherConfig::default())
        .map_err(|e| e.to_string())?;
    let cache = FrameCache::load(&Dataset::load(&data).unwrap()).unwrap();
    let config = TrainConfig {
        dataset: data,
        epochs: 6,
        batch_size: 4,
        base_channels: 2,
        learning_rate: 1e-3,
        threshold: 0.0,
        ..TrainConfig::default()
    };
    let run = |out: &Path, resume: Option<&Path>| run_training_on(&config, &cache, resume, Some(out)).map_err(|e| e.to_string());
    let a = run(&dir.path().join("a"), None)?;
    let b = run(&dir.path().join("b"), None)?;
    let keys = |o: &TrainOutcome| o.reports.iter().map(|r| r.mean_l_model).collect::<Vec<_>>();
    let identical = keys(&a) == keys(&b) && a.state.recordkey == b.state.recordkey;

    // Resume from the last checkpoint whose next epoch stays in the same stage.
    let mid = (0..a.reports.len() - 1)
        .rev()
        .find(|&e| a.reports[e].level == a.reports[e + 1].level)
        .ok_or("no mid-stage epoch")?;
    let a_out = dir.path().join("a");
    let resumed = run(&dir.path().join("c"), Some(&epoch_checkpoint_path(&a_out, mid)))?;
    let next = resumed.reports.first().ok_or("resumed run trained nothing")?;
    let diff = (next.mean_l_model - a.reports[mid + 1].mean_l_model).abs();
    check(
        identical && next.epoch == mid + 1 && diff <= 1e-6,
        format!("identical runs: {identical}; resumed after epoch {mid}, next-epoch loss diff {diff:.1e}"),
    )
}

struct AblationRun {
    mode: TrainMode,
    report: EvalReport,
    mean_wall_s: f64,
}

fn ablation_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

/// Three runs on the same 200-scene set with identical seeds and budget,
/// evaluated on a held-out set.
fn run_ablation() -> Result<Vec<AblationRun>, String> {
    let root = ablation_dir();
    let _ = fs::remove_dir_all(&root);
    let rig = CameraRig::desk_scale();
    let err = |e: curriculum_depth::Error| e.to_string();
    let t = Instant::now();
    let train = generate_dataset(&root.join("train"), 200, 1, &rig).map_err(err)?;
    augment_dataset(&train, &WeatherVariantId::adverse_variants(), 2, &WeatherConfig::default()).map_err(err)?;
    let test = generate_dataset(&root.join("test"), 40, 100_000, &rig).map_err(err)?;
    let test = augment_dataset(&test, &WeatherVariantId::adverse_variants(), 3, &WeatherConfig::default()).map_err(err)?;
    let train = Dataset::load(&root.join("train")).map_err(err)?;
    let cache = FrameCache::load(&train).map_err(err)?;
    println!("  ablation data ready in {:.0}s", t.elapsed().as_secs_f64());

    let mut runs = Vec::new();
    for mode in [TrainMode::Mixed, TrainMode::CurriculumOnly, TrainMode::CurriculumContrastive] {
        let config = TrainConfig {
            dataset: root.join("train"),
            mode,
            epochs: 12,
            batch_size: 4,
            learning_rate: 1e-3,
            stage_epoch_cap: Some(4),
            seed: 0,
            ..TrainConfig::default()
        };
        let out = root.join(format!("{mode:?}").to_lowercase());
        let t = Instant::now();
        let outcome = run_training_on(&config, &cache, None, Some(&out)).map_err(err)?;
        let report = evaluate(&outcome.net, &test, &WeatherVariantId::all(), &EvalConfig::default()).map_err(err)?;
        report.write_json(&out.join("report.json")).map_err(err)?;
        let levels: Vec<String> = outcome
            .reports
            .iter()
            .map(|r| r.level.map_or("-".into(), |l| l.to_string()))
            .collect();
        let mean_wall_s = outcome.reports.iter().map(|r| r.wall_s).sum::<f64>() / outcome.reports.len() as f64;
        println!(
            "  {mode:?}: levels [{}], clear absrel {:.4}, {:.0}s",
            levels.join(" "),
            report.row(WeatherVariantId::CLEAR).map_or(f64::NAN, |m| m.absrel),
            t.elapsed().as_secs_f64()
        );
        runs.push(AblationRun { mode, report, mean_wall_s });
    }
    Ok(runs)
}

fn weather_absrel(report: &EvalReport) -> f64 {
    report
        .average_of(&WeatherVariantId::adverse_variants())
        .map_or(f64::NAN, |m| m.absrel)
}

fn ablation_direction(runs: &[AblationRun]) -> Outcome {
    let find = |mode| runs.iter().find(|r| r.mode == mode).unwrap();
    let mixed = find(TrainMode::Mixed);
    let only = find(TrainMode::CurriculumOnly);
    let full = find(TrainMode::CurriculumContrastive);
    let clear = |r: &AblationRun| r.report.row(WeatherVariantId::CLEAR).map_or(f64::NAN, |m| m.absrel);
    let (w_full, w_mixed, w_only) = (weather_absrel(&full.report), weather_absrel(&mixed.report), weather_absrel(&only.report));
    let rel_clear = (clear(full) - clear(only)).abs() / clear(only);
    check(
        w_full <= w_mixed && rel_clear <= 0.10,
        format!(
            "weather absrel: contrastive {w_full:.4} vs mixed {w_mixed:.4} (curriculum only {w_only:.4}); \
             clear absrel {:.4} vs {:.4} ({:.1}% apart)",
            clear(full),
            clear(only),
            100.0 * rel_clear
        ),
    )
}

fn efficiency(runs: &[AblationRun]) -> Outcome {
    let find = |mode| runs.iter().find(|r| r.mode == mode).unwrap();
    let with = find(TrainMode::CurriculumContrastive).mean_wall_s;
    let without = find(TrainMode::CurriculumOnly).mean_wall_s;
    let ratio = with / without;
    check(ratio < 1.5, format!("epoch wall time {with:.1}s with contrast vs {without:.1}s without, ratio {ratio:.2}"))
}

fn main() {
    let mut results: Vec<(u32, &str, Option<Outcome>)> = vec![
        (1, "loss identities", Some(loss_identities())),
        (2, "gradient cut-off", Some(gradient_cut_off())),
        (3, "weight schedule", Some(weight_schedule())),
        (4, "scheduler replay", Some(scheduler_replay())),
        (5, "contrastive mode counts", Some(contrastive_mode_counts())),
        (6, "geometry oracles", Some(geometry_oracles())),
        (7, "metric oracle", Some(metric_oracle())),
        (8, "fog physics", Some(fog_physics())),
    ];
    if std::env::var_os("ACCEPTANCE_SKIP_ABLATION").is_some() {
        results.push((9, "desk-scale ablation direction", None));
        results.push((10, "contrast path overhead", None));
    } else {
        match run_ablation() {
            Ok(runs) => {
                results.push((9, "desk-scale ablation direction", Some(ablation_direction(&runs))));
                results.push((10, "contrast path overhead", Some(efficiency(&runs))));
            }
            Err(e) => {
                results.push((9, "desk-scale ablation direction", Some(Err(format!("ablation failed: {e}")))));
                results.push((10, "contrast path overhead", Some(Err("no ablation timings".into()))));
            }
        }
    }
    results.push((11, "reproducibility and resume", Some(reproducibility_and_resume())));

    let mut failed = 0;
    println!();
    for (n, name, outcome) in &results {
        match outcome {
            Some(Ok(detail)) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Some(Err(detail)) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail}");
            }
            None => println!("criterion {n:>2} SKIP  {name}"),
        }
    }
    println!("{} of {} criteria passed", results.len() - failed - results.iter().filter(|r| r.2.is_none()).count(), results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
