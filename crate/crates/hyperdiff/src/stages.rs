//! Pipeline stages over an artifact directory.
//!
//! Every stage writes self-describing artifacts and can be re-run from
//! them alone; existing artifacts are reused unless `force` is set.
//! All stage seeds derive from the run's root seed, so identical
//! configurations produce byte-identical artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hyperdiff_core::adam::{AdamConfig, AdamState};
use hyperdiff_core::diffusion::{
    reconstruct, train_diffusion, DiffusionTrainConfig, TrainError,
};
use hyperdiff_core::features::{extract_features, FeatureCube};
use hyperdiff_core::hsi::{stratified_split, HsiCube, LabelMap, Split};
use hyperdiff_core::metrics::{evaluate, EvalReport};
use hyperdiff_core::rng;
use hyperdiff_core::schedule::NoiseSchedule;
use hyperdiff_core::ssdn::{build_ssdn, SsdnConfig, SsdnNetwork};
use hyperdiff_core::svit::{
    build_svit, predict_map, train_classifier, EpochStats, FeatureSource, SvitConfig, SvitModel,
    SvitTrainConfig,
};
use hyperdiff_core::synth::SynthParams;
use hyperdiff_core::tensor::Tensor;

use crate::archive::{read_archive, write_archive};
use crate::config::RunConfig;
use crate::container::{load_json, read_cube, write_cube, write_json, ClassEntry, ClassTable};
use crate::error::{Error, Result};
use crate::featio::{read_features, write_features, write_pca};
use crate::render::{build_palette, default_composite_bands, render_composite, render_map};
use crate::report::{format_report_table, write_report_json};

/// Artifact directory plus the overwrite policy.
pub struct Workspace {
    pub out: PathBuf,
    pub force: bool,
}

impl Workspace {
    pub fn new(out: impl Into<PathBuf>, force: bool) -> Result<Self> {
        let out = out.into();
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self { out, force })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn reusable(&self, rel: &str) -> bool {
        !self.force && self.path(rel).exists()
    }
}

/// Effective-parameter manifest written at the start of every command.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: &'a RunConfig,
}

pub fn write_manifest(ws: &Workspace, command: &str, cfg: &RunConfig) -> Result<()> {
    write_json(&ws.path("run.json"), &RunManifest { command, config: cfg })
}

/// Load the configured dataset and normalize its bands to [0, 1].
pub fn load_dataset(cfg: &RunConfig) -> Result<(HsiCube, LabelMap, Option<ClassTable>)> {
    let dir = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset configured".to_string()))?;
    let (cube, labels, classes) = read_cube(dir)?;
    labels.matches(&cube)?;
    Ok((cube.normalize_bands(), labels, classes))
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SplitArtifact {
    spec: hyperdiff_core::hsi::SplitSpec,
    train: Vec<usize>,
    test: Vec<usize>,
}

pub fn stage_split(cfg: &RunConfig, ws: &Workspace, labels: &LabelMap) -> Result<Split> {
    if ws.reusable("split.json") {
        let art: SplitArtifact = load_json(&ws.path("split.json"))?;
        return Ok(Split {
            train: art.train,
            test: art.test,
        });
    }
    let spec = cfg.split_spec();
    let split = stratified_split(labels, &spec)?;
    write_json(
        &ws.path("split.json"),
        &SplitArtifact {
            spec,
            train: split.train.clone(),
            test: split.test.clone(),
        },
    )?;
    Ok(split)
}

// ---------------------------------------------------------------------------
// diffusion training
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TrainState {
    steps_done: usize,
    completed: bool,
    stopped_by_plateau: bool,
    diverged: bool,
}

fn adam_entries(adam: &AdamState, net: &SsdnNetwork) -> Vec<(String, Tensor)> {
    let mut out = vec![("step".to_string(), Tensor::scalar(adam.step_count as f32))];
    for (i, (_, p)) in net.params.iter().enumerate() {
        out.push((format!("m.{}", p.name), adam.first_moment[i].clone()));
        out.push((format!("v.{}", p.name), adam.second_moment[i].clone()));
    }
    out
}

fn adam_from_entries(
    entries: &[(String, Tensor)],
    config: AdamConfig,
    net: &SsdnNetwork,
) -> Result<AdamState> {
    let mut adam = AdamState::new(config, &net.params);
    let find = |name: &str| -> Result<&Tensor> {
        entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::format(format!("optimizer checkpoint missing {name:?}")))
    };
    adam.step_count = find("step")?.item() as u64;
    for (i, (_, p)) in net.params.iter().enumerate() {
        adam.first_moment[i] = find(&format!("m.{}", p.name))?.clone();
        adam.second_moment[i] = find(&format!("v.{}", p.name))?.clone();
    }
    Ok(adam)
}

fn write_loss_csv(path: &Path, losses: &[(usize, f32)]) -> Result<()> {
    let mut text = String::from("step,loss\n");
    for (s, l) in losses {
        text.push_str(&format!("{s},{l}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_loss_csv(path: &Path) -> Result<Vec<(usize, f32)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let s = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format("malformed loss.csv"))?;
        let l = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format("malformed loss.csv"))?;
        out.push((s, l));
    }
    Ok(out)
}

pub fn load_schedule(ws: &Workspace) -> Result<NoiseSchedule> {
    #[derive(Deserialize)]
    struct S {
        timesteps: usize,
        beta_start: f64,
        beta_end: f64,
    }
    let s: S = load_json(&ws.path("schedule.json"))?;
    Ok(NoiseSchedule::linear(s.timesteps, s.beta_start, s.beta_end)?)
}

pub fn load_denoiser(ws: &Workspace) -> Result<SsdnNetwork> {
    let config: SsdnConfig = load_json(&ws.path("ssdn_config.json"))?;
    let mut net = build_ssdn(config, 0)?;
    let entries = read_archive(&ws.path("model.ckpt"))?;
    net.load_state_tensors(&entries)?;
    Ok(net)
}

/// Train (or resume, or reuse) the denoiser. Artifacts: model.ckpt,
/// optim.ckpt, schedule.json, ssdn_config.json, loss.csv,
/// train_state.json.
pub fn stage_train_diffusion(
    cfg: &RunConfig,
    ws: &Workspace,
    cube: &HsiCube,
) -> Result<(SsdnNetwork, NoiseSchedule)> {
    let sched = NoiseSchedule::linear(
        cfg.schedule.timesteps,
        cfg.schedule.beta_start,
        cfg.schedule.beta_end,
    )?;
    #[derive(Serialize)]
    struct S {
        timesteps: usize,
        beta_start: f64,
        beta_end: f64,
    }
    write_json(
        &ws.path("schedule.json"),
        &S {
            timesteps: cfg.schedule.timesteps,
            beta_start: cfg.schedule.beta_start,
            beta_end: cfg.schedule.beta_end,
        },
    )?;

    let ssdn_config = cfg.ssdn_config(cube.bands());
    write_json(&ws.path("ssdn_config.json"), &ssdn_config)?;

    let init_seed = rng::derive_seed(cfg.seed, "ssdn-init", 0);
    let mut net = build_ssdn(ssdn_config, init_seed)?;
    let adam_config = AdamConfig::with_lr(cfg.diffusion_train.learning_rate);
    let mut adam = AdamState::new(adam_config, &net.params);
    let mut start_step = 0usize;
    let mut losses: Vec<(usize, f32)> = Vec::new();

    if ws.reusable("train_state.json") {
        let state: TrainState = load_json(&ws.path("train_state.json"))?;
        net.load_state_tensors(&read_archive(&ws.path("model.ckpt"))?)?;
        losses = read_loss_csv(&ws.path("loss.csv")).unwrap_or_default();
        if state.completed || state.steps_done >= cfg.diffusion_train.max_steps {
            eprintln!("train-diffusion: reusing checkpoint at step {}", state.steps_done);
            return Ok((net, sched));
        }
        adam = adam_from_entries(&read_archive(&ws.path("optim.ckpt"))?, adam_config, &net)?;
        start_step = state.steps_done;
        losses.truncate(start_step);
        eprintln!("train-diffusion: resuming from step {start_step}");
    }

    let train_cfg = DiffusionTrainConfig {
        batch_size: cfg.diffusion_train.batch_size,
        max_steps: cfg.diffusion_train.max_steps,
        seed: rng::derive_seed(cfg.seed, "diffusion-train", 0),
        start_step,
        plateau_window: cfg.diffusion_train.plateau_window,
        min_steps: cfg.diffusion_train.min_steps,
    };

    let checkpoint_every = cfg.diffusion_train.checkpoint_every.max(1);
    let mut pending: Vec<(usize, f32)> = Vec::new();
    let result = {
        let losses_ref = &mut losses;
        let pending_ref = &mut pending;
        train_diffusion(cube, &mut net, &sched, &mut adam, &train_cfg, |info| {
            losses_ref.push((info.step, info.loss));
            pending_ref.push((info.step, info.loss));
            if (info.step + 1) % checkpoint_every == 0 {
                let _ = write_archive(&ws.path("model.ckpt"), &info.net.state_tensors());
                let _ = write_archive(&ws.path("optim.ckpt"), &adam_entries(info.adam, info.net));
                let _ = write_loss_csv(&ws.path("loss.csv"), losses_ref);
                let _ = write_json(
                    &ws.path("train_state.json"),
                    &TrainState {
                        steps_done: info.step + 1,
                        completed: false,
                        stopped_by_plateau: false,
                        diverged: false,
                    },
                );
                pending_ref.clear();
            }
        })
    };

    match result {
        Ok(report) => {
            write_archive(&ws.path("model.ckpt"), &net.state_tensors())?;
            write_archive(&ws.path("optim.ckpt"), &adam_entries(&adam, &net))?;
            write_loss_csv(&ws.path("loss.csv"), &losses)?;
            write_json(
                &ws.path("train_state.json"),
                &TrainState {
                    steps_done: start_step + report.steps_run,
                    completed: true,
                    stopped_by_plateau: report.stopped_by_plateau,
                    diverged: false,
                },
            )?;
            eprintln!(
                "train-diffusion: {} steps, final loss {:.4}{}",
                start_step + report.steps_run,
                losses.last().map(|(_, l)| *l).unwrap_or(f32::NAN),
                if report.stopped_by_plateau {
                    " (plateau)"
                } else {
                    ""
                }
            );
            Ok((net, sched))
        }
        Err(TrainError::Diverged { step }) => {
            // fall back to the last good checkpoint on disk
            let last_good = step - (step % checkpoint_every);
            if ws.path("model.ckpt").exists() {
                net.load_state_tensors(&read_archive(&ws.path("model.ckpt"))?)?;
            }
            losses.truncate(losses.len().saturating_sub(pending.len()));
            write_loss_csv(&ws.path("loss.csv"), &losses)?;
            write_json(
                &ws.path("train_state.json"),
                &TrainState {
                    steps_done: last_good,
                    completed: false,
                    stopped_by_plateau: false,
                    diverged: true,
                },
            )?;
            Err(Error::Stage {
                stage: "train-diffusion",
                message: format!(
                    "loss diverged at step {step}; last good checkpoint at step {last_good}"
                ),
            })
        }
        Err(e) => Err(Error::Stage {
            stage: "train-diffusion",
            message: e.to_string(),
        }),
    }
}

// ---------------------------------------------------------------------------
// feature extraction
// ---------------------------------------------------------------------------

/// Extract (or reuse) the per-pixel feature cube. For the raw source
/// the normalized spectra pass through unchanged.
pub fn stage_extract(
    cfg: &RunConfig,
    ws: &Workspace,
    cube: &HsiCube,
    split: &Split,
) -> Result<FeatureCube> {
    if ws.reusable("features/header.json") {
        return read_features(&ws.path("features"));
    }
    let fc = match cfg.svit.feature_source {
        FeatureSource::Raw => FeatureCube::from_raw_cube(cube),
        FeatureSource::Diffusion => {
            let net = load_denoiser(ws)?;
            let sched = load_schedule(ws)?;
            let (fc, pca) = extract_features(
                cube,
                &net,
                &sched,
                cfg.features.timestamp,
                cfg.features.layer_index,
                None,
                cfg.features.pca_dim,
                cfg.feature_noise_seed(),
                &split.train,
            )?;
            write_pca(&ws.path("pca.ckpt"), &pca)?;
            if pca.rank < pca.d_out() {
                eprintln!(
                    "extract-features: warning: covariance rank {} below requested {} components; padded with zero-variance directions",
                    pca.rank,
                    pca.d_out()
                );
            }
            fc
        }
    };
    write_features(&ws.path("features"), &fc)?;
    eprintln!(
        "extract-features: {}x{}x{} ({})",
        fc.height(),
        fc.width(),
        fc.dim(),
        fc.provenance.source
    );
    Ok(fc)
}

// ---------------------------------------------------------------------------
// classifier training
// ---------------------------------------------------------------------------

fn write_acc_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut text = String::from("epoch,train_acc,test_acc\n");
    for e in history {
        text.push_str(&format!("{},{},{}\n", e.epoch, e.train_acc, e.test_acc));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_classifier(ws: &Workspace) -> Result<SvitModel> {
    let config: SvitConfig = load_json(&ws.path("svit_config.json"))?;
    let mut model = build_svit(config, 0)?;
    model.load_state_tensors(&read_archive(&ws.path("svit.ckpt"))?)?;
    Ok(model)
}

pub fn stage_train_classifier(
    cfg: &RunConfig,
    ws: &Workspace,
    features: &FeatureCube,
    labels: &LabelMap,
    split: &Split,
) -> Result<SvitModel> {
    if ws.reusable("svit.ckpt") {
        return load_classifier(ws);
    }
    let classes = labels.validate_contiguous()?;
    let svit_config = cfg.svit_config(classes, features.dim());
    write_json(&ws.path("svit_config.json"), &svit_config)?;
    let mut model = build_svit(svit_config, rng::derive_seed(cfg.seed, "svit-init", 0))?;
    let train_cfg = SvitTrainConfig {
        learning_rate: cfg.classifier_train.learning_rate,
        batch_size: cfg.classifier_train.batch_size,
        epochs: cfg.classifier_train.epochs,
        seed: rng::derive_seed(cfg.seed, "svit-train", 0),
    };
    let report = train_classifier(features, labels, split, &mut model, &train_cfg, |e| {
        eprintln!(
            "train-classifier: epoch {} loss {:.4} train {:.3} test {:.3}",
            e.epoch, e.mean_loss, e.train_acc, e.test_acc
        );
    })?;
    write_acc_csv(&ws.path("acc.csv"), &report.history)?;
    write_archive(&ws.path("svit.ckpt"), &model.state_tensors())?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

pub fn stage_evaluate(
    ws: &Workspace,
    model: &SvitModel,
    features: &FeatureCube,
    labels: &LabelMap,
    split: &Split,
    classes: Option<&ClassTable>,
) -> Result<EvalReport> {
    if ws.reusable("eval.json") {
        return load_json(&ws.path("eval.json"));
    }
    let pred = predict_map(model, features);
    let report = evaluate(&pred, labels, &split.test)?;
    write_report_json(&ws.path("eval.json"), &report)?;
    let table = format_report_table(&report, classes);
    fs::write(ws.path("report.txt"), &table).map_err(|e| Error::io(ws.path("report.txt"), e))?;

    let palette = build_palette(report.classes, classes);
    render_map(&pred, &palette, &ws.path("pred_map.png"))?;
    render_map(labels, &palette, &ws.path("truth_map.png"))?;
    eprintln!(
        "evaluate: OA {:.4} AA {:.4} kappa {:.4} over {} test pixels",
        report.oa, report.aa, report.kappa, report.n_test
    );
    Ok(report)
}

// ---------------------------------------------------------------------------
// whole pipeline, sweep, reconstruct, synth, ingest
// ---------------------------------------------------------------------------

pub fn run_pipeline(cfg: &RunConfig, ws: &Workspace) -> Result<EvalReport> {
    cfg.validate()?;
    write_manifest(ws, "pipeline", cfg)?;
    let (cube, labels, classes) = load_dataset(cfg)?;
    let split = stage_split(cfg, ws, &labels)?;
    if cfg.svit.feature_source == FeatureSource::Diffusion {
        stage_train_diffusion(cfg, ws, &cube)?;
    }
    let features = stage_extract(cfg, ws, &cube, &split)?;
    let model = stage_train_classifier(cfg, ws, &features, &labels, &split)?;
    stage_evaluate(ws, &model, &features, &labels, &split, classes.as_ref())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub layer_index: usize,
    pub timestamp: usize,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

/// One classification run per (timestamp, layer) pair, reusing the
/// trained diffusion checkpoint and fitting a fresh classifier per cell.
pub fn run_sweep(
    cfg: &RunConfig,
    ws: &Workspace,
    timestamps: &[usize],
    layers: &[usize],
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    write_manifest(ws, "sweep", cfg)?;
    if !ws.path("model.ckpt").exists() {
        return Err(Error::Stage {
            stage: "sweep",
            message: "no diffusion checkpoint (model.ckpt) in the output directory; run train-diffusion first".to_string(),
        });
    }
    let (cube, labels, _classes) = load_dataset(cfg)?;
    let split = stage_split(cfg, ws, &labels)?;
    let net = load_denoiser(ws)?;
    let sched = load_schedule(ws)?;
    let classes = labels.validate_contiguous()?;

    let mut rows = Vec::new();
    for &layer in layers {
        for &t in timestamps {
            let cell = format!("sweep/t{t}_l{layer}");
            fs::create_dir_all(ws.path(&cell)).map_err(|e| Error::io(ws.path(&cell), e))?;
            let (features, _pca) = extract_features(
                &cube,
                &net,
                &sched,
                t,
                layer,
                None,
                cfg.features.pca_dim,
                cfg.feature_noise_seed(),
                &split.train,
            )?;
            let cell_tag = (layer * 10_000 + t) as u64;
            let svit_config = cfg.svit_config(classes, features.dim());
            let mut model = build_svit(
                svit_config,
                rng::derive_seed(cfg.seed, "sweep-svit-init", cell_tag),
            )?;
            let train_cfg = SvitTrainConfig {
                learning_rate: cfg.classifier_train.learning_rate,
                batch_size: cfg.classifier_train.batch_size,
                epochs: cfg.classifier_train.epochs,
                seed: rng::derive_seed(cfg.seed, "sweep-svit-train", cell_tag),
            };
            let report = train_classifier(&features, &labels, &split, &mut model, &train_cfg, |_| {})?;
            write_acc_csv(&ws.path(&format!("{cell}/acc.csv")), &report.history)?;
            let pred = predict_map(&model, &features);
            let eval = evaluate(&pred, &labels, &split.test)?;
            write_report_json(&ws.path(&format!("{cell}/eval.json")), &eval)?;
            eprintln!(
                "sweep: t={t} layer={layer} OA {:.4} AA {:.4} kappa {:.4}",
                eval.oa, eval.aa, eval.kappa
            );
            rows.push(SweepRow {
                layer_index: layer,
                timestamp: t,
                oa: eval.oa,
                aa: eval.aa,
                kappa: eval.kappa,
            });
        }
    }

    let mut csv = String::from("layer_index,timestamp,oa,aa,kappa\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.layer_index, r.timestamp, r.oa, r.aa, r.kappa
        ));
    }
    fs::write(ws.path("sweep.csv"), csv).map_err(|e| Error::io(ws.path("sweep.csv"), e))?;

    let mut table = format!(
        "{:>10} {:>10} {:>8} {:>8} {:>10}\n",
        "LayerIndex", "Timestamp", "OA(%)", "AA(%)", "kappa*100"
    );
    for r in &rows {
        table.push_str(&format!(
            "{:>10} {:>10} {:>8.2} {:>8.2} {:>10.2}\n",
            r.layer_index,
            r.timestamp,
            r.oa * 100.0,
            r.aa * 100.0,
            r.kappa * 100.0
        ));
    }
    fs::write(ws.path("sweep.txt"), table).map_err(|e| Error::io(ws.path("sweep.txt"), e))?;
    Ok(rows)
}

/// Reverse-process reconstruction panels: for each start timestep,
/// noise the cube, run the chain back down, and write a false-color
/// panel plus per-class mean spectral curves and an MSE summary.
pub fn run_reconstruct(cfg: &RunConfig, ws: &Workspace, start_ts: &[usize]) -> Result<()> {
    cfg.validate()?;
    write_manifest(ws, "reconstruct", cfg)?;
    if !ws.path("model.ckpt").exists() {
        return Err(Error::Stage {
            stage: "reconstruct",
            message: "no diffusion checkpoint (model.ckpt); run train-diffusion first".to_string(),
        });
    }
    let (cube, labels, _classes) = load_dataset(cfg)?;
    let net = load_denoiser(ws)?;
    let sched = load_schedule(ws)?;
    let k = net.config.patch_size;
    let (h, w, b) = (cube.height(), cube.width(), cube.bands());
    let recon_dir = ws.path("recon");
    fs::create_dir_all(&recon_dir).map_err(|e| Error::io(&recon_dir, e))?;
    let bands3 = default_composite_bands(b);

    // reference panel: the original cube
    render_composite(&cube, bands3, &recon_dir.join("recon_t0.png"))?;
    write_curves_csv(&recon_dir.join("curves_t0.csv"), &cube, &labels)?;

    let mut mse_rows: Vec<(usize, f64)> = Vec::new();
    for &start_t in start_ts {
        if start_t < 1 || start_t > sched.len() {
            return Err(Error::Stage {
                stage: "reconstruct",
                message: format!("start timestep {start_t} outside 1..={}", sched.len()),
            });
        }
        let mut data = vec![0.0f32; h * w * b];
        let tiles_r = h.div_ceil(k);
        let tiles_c = w.div_ceil(k);
        for tr in 0..tiles_r {
            for tc in 0..tiles_c {
                let x0 = hyperdiff_core::hsi::tile_chw(&cube, tr * k, tc * k, k);
                let x0 = x0.reshape(&[1, b, k, k]);
                let mut tile_rng = rng::substream(
                    cfg.seed,
                    "reconstruct",
                    (start_t * 1_000_000 + tr * 1_000 + tc) as u64,
                );
                let xhat = reconstruct(&x0, start_t, &net, &sched, &mut tile_rng);
                for band in 0..b {
                    for dr in 0..k {
                        let row = tr * k + dr;
                        if row >= h {
                            continue;
                        }
                        for dc in 0..k {
                            let col = tc * k + dc;
                            if col >= w {
                                continue;
                            }
                            data[(row * w + col) * b + band] =
                                xhat.data()[(band * k + dr) * k + dc];
                        }
                    }
                }
            }
        }
        let mut mse = 0.0f64;
        for (a, v) in data.iter().zip(cube.data()) {
            let d = (*a - *v) as f64;
            mse += d * d;
        }
        mse /= data.len() as f64;
        mse_rows.push((start_t, mse));

        // clamp for rendering only; csv keeps raw values
        let clamped: Vec<f32> = data.iter().map(|v| v.clamp(-10.0, 10.0)).collect();
        let recon_cube = HsiCube::new(h, w, b, clamped, "reconstruction")
            .map_err(Error::from)?;
        render_composite(&recon_cube, bands3, &recon_dir.join(format!("recon_t{start_t}.png")))?;
        write_curves_csv(&recon_dir.join(format!("curves_t{start_t}.csv")), &recon_cube, &labels)?;
        eprintln!("reconstruct: start_t={start_t} mse {mse:.6}");
    }

    let mut csv = String::from("start_t,mse\n");
    for (t, m) in &mse_rows {
        csv.push_str(&format!("{t},{m}\n"));
    }
    fs::write(recon_dir.join("recon_mse.csv"), csv)
        .map_err(|e| Error::io(recon_dir.join("recon_mse.csv"), e))?;
    Ok(())
}

/// Per-class mean spectra: band index against the class means.
fn write_curves_csv(path: &Path, cube: &HsiCube, labels: &LabelMap) -> Result<()> {
    let classes = labels.class_count();
    let b = cube.bands();
    let mut sums = vec![vec![0.0f64; b]; classes];
    let mut counts = vec![0usize; classes];
    for r in 0..cube.height() {
        for c in 0..cube.width() {
            let l = labels.at(r, c);
            if l == 0 {
                continue;
            }
            counts[l as usize - 1] += 1;
            for (s, &v) in sums[l as usize - 1].iter_mut().zip(cube.spectrum(r, c)) {
                *s += v as f64;
            }
        }
    }
    let mut text = String::from("band");
    for class in 1..=classes {
        text.push_str(&format!(",class_{class}"));
    }
    text.push('\n');
    for band in 0..b {
        text.push_str(&band.to_string());
        for class in 0..classes {
            let mean = if counts[class] > 0 {
                sums[class][band] / counts[class] as f64
            } else {
                0.0
            };
            text.push_str(&format!(",{mean}"));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Generate a synthetic labeled cube container.
pub fn run_synth(params: &SynthParams, dst: &Path) -> Result<()> {
    let (cube, labels) = params.generate()?;
    let mut table = ClassTable::new();
    for class in 1..=params.classes as u16 {
        table.insert(class, ClassEntry::Name(format!("class-{class}")));
    }
    write_cube(dst, &cube, &labels, Some(&table))?;
    print_cube_stats(&cube, &labels);
    Ok(())
}

/// Convert a CSV (or copy a container) into the cube container format.
pub fn run_ingest(src: &Path, labels_csv: Option<&Path>, dst: &Path) -> Result<()> {
    let (cube, labels, classes) = if src.is_dir() {
        read_cube(src)?
    } else {
        let name = dst
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "cube".to_string());
        let cube = crate::container::read_csv_cube(src, &name)?;
        let labels = match labels_csv {
            Some(p) => crate::container::read_csv_labels(p, cube.height(), cube.width())?,
            None => LabelMap::new(cube.height(), cube.width(), vec![0; cube.height() * cube.width()])?,
        };
        (cube, labels, None)
    };
    write_cube(dst, &cube, &labels, classes.as_ref())?;
    print_cube_stats(&cube, &labels);
    Ok(())
}

fn print_cube_stats(cube: &HsiCube, labels: &LabelMap) {
    println!(
        "cube {}: {} x {} pixels, {} bands, {} classes, {} labeled pixels",
        cube.name(),
        cube.height(),
        cube.width(),
        cube.bands(),
        labels.class_count(),
        labels.labeled_count()
    );
}
