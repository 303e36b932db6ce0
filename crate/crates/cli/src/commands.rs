use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use mixdvae::baselines::{self, DeepArParams, LinearDynParams};
use mixdvae::dataio::{self, Mot3tSequence};
use mixdvae::formats::{self, TrackingResult};
use mixdvae::metrics::{self, MetricCounts, TrackSet};
use mixdvae::plot::{self, PlotInput};
use mixdvae::rng::{self, stream};
use mixdvae::scene::Scene;
use mixdvae::srnn::SrnnParams;
use mixdvae::train::{self, EpochRecord, TrainConfig};
use mixdvae::trajgen::{self, GaussParam, SceneConfig, TrajGenConfig};
use mixdvae::vem::{self, Dynamics, EncoderInput, VemConfig, VemOutput};
use mixdvae::Vec4;
use rayon::prelude::*;

use crate::{
    Command, DataKind, EncoderInputArg, EvaluateArgs, GenDataArgs, MakeMot3tArgs, PlotArgs, PretrainArgs,
    PretrainModel, TrackArgs, TrackModel,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(&a),
        Command::Pretrain(a) => pretrain(&a),
        Command::Track(a) => track(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::MakeMot3t(a) => make_mot3t(&a),
        Command::Plot(a) => plot(&a),
    }
}

fn trajgen_config(a: &GenDataArgs) -> Result<TrajGenConfig> {
    let cfg = TrajGenConfig {
        seq_len: a.seq_len,
        s_max: a.s_max,
        kind_probabilities: a
            .kind_probabilities
            .as_slice()
            .try_into()
            .context("--kind-probabilities needs exactly four values")?,
        a1: GaussParam::new(a.a1_mean, a.a1_std),
        a2: GaussParam::new(a.a2_mean, a.a2_std),
        omega: GaussParam::new(a.omega_mean, a.omega_std),
        phi0: GaussParam::new(a.phase_mean, a.phase_std),
        b0: GaussParam::new(a.width_log_mean, a.width_log_std),
        ratio: GaussParam::new(a.ratio_log_mean, a.ratio_log_std),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    ensure!(a.count >= 1, "--count must be at least 1");
    let traj_cfg = trajgen_config(a)?;
    match a.kind {
        DataKind::Trajectories => {
            trajgen::gen_dataset(a.seed, &traj_cfg, a.count, &a.out)?;
            println!("wrote {} trajectories of length {} to {}", a.count, a.seq_len, a.out.display());
            if a.val_count > 0 {
                let path = a.val_out.as_ref().context("--val-count needs --val-out")?;
                let seed = rng::derive_seed(a.seed, stream::VALIDATION);
                trajgen::gen_dataset(seed, &traj_cfg, a.val_count, path)?;
                println!("wrote {} validation trajectories to {}", a.val_count, path.display());
            }
        }
        DataKind::Scenes => {
            let scene_cfg = SceneConfig {
                n_sources: a.n_sources,
                seq_len: a.seq_len,
                occlusion_rate: a.occlusion_rate,
                noise_scale: a.noise_scale,
            };
            if a.gap_length > 0 {
                ensure!(
                    (1..=a.n_sources).contains(&a.gap_source),
                    "--gap-source must lie in 1..={}",
                    a.n_sources
                );
                ensure!(
                    a.gap_start >= 2 && a.gap_start - 1 + a.gap_length <= a.seq_len,
                    "the gap must start after frame 1 and end inside the sequence"
                );
            }
            let scenes = (0..a.count)
                .into_par_iter()
                .map(|i| {
                    let mut r = rng::rng_for(a.seed, &[stream::SCENE, i as u64]);
                    let mut scene = trajgen::gen_multisource_scene(&mut r, &traj_cfg, &scene_cfg)?;
                    if a.gap_length > 0 {
                        let start = a.gap_start - 1;
                        trajgen::remove_detections(&mut scene.obs, a.gap_source - 1, start..start + a.gap_length);
                    }
                    Ok(scene)
                })
                .collect::<mixdvae::Result<Vec<Scene>>>()?;
            formats::write_scene_file(&a.out, &scenes)?;
            println!(
                "wrote {} scenes with {} sources and {} frames to {}",
                a.count,
                a.n_sources,
                a.seq_len,
                a.out.display()
            );
        }
    }
    Ok(())
}

fn read_sequences(path: &Path) -> Result<Vec<Vec<Vec4>>> {
    let data = formats::read_trajectory_file(path)?;
    ensure!(!data.is_empty(), "{}: no trajectories", path.display());
    Ok(data.into_iter().map(|tr| tr.into_iter().map(|b| b.0).collect()).collect())
}

fn history_path(a: &PretrainArgs) -> PathBuf {
    a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    })
}

fn pretrain(a: &PretrainArgs) -> Result<()> {
    let train_set = read_sequences(&a.train)?;
    let val_set = read_sequences(&a.val)?;
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        patience: a.patience,
        max_epochs: a.max_epochs,
        seed: a.seed,
        schedule: (!a.schedule.is_empty()).then(|| a.schedule.clone()),
        validation_teacher_forcing: a.validation_teacher_forcing,
    };
    cfg.validate()?;
    let history = history_path(a);
    // the history is rewritten after every epoch so a failed run keeps it
    let mut write_err = None;
    let mut rows: Vec<EpochRecord> = Vec::new();
    let mut on_epoch = |r: &EpochRecord| {
        info!("epoch {} train {:.4} val {:.4}", r.epoch, r.train_elbo, r.val_elbo);
        rows.push(*r);
        if let Err(e) = formats::write_atomic(&history, train::format_history(&rows).as_bytes()) {
            write_err.get_or_insert(e);
        }
    };
    let (best_epoch, best_val, epochs) = match a.model {
        PretrainModel::Srnn => {
            let init = SrnnParams::init(a.seed);
            let out = train::train_with(init, &train_set, &val_set, &cfg, &mut on_epoch)?;
            out.best.save(&a.out)?;
            (out.best_epoch, out.best_val_elbo, out.history.len())
        }
        PretrainModel::Deepar => {
            let init = DeepArParams::init(a.seed);
            let out = train::train_with(init, &train_set, &val_set, &cfg, &mut on_epoch)?;
            out.best.save(&a.out)?;
            (out.best_epoch, out.best_val_elbo, out.history.len())
        }
    };
    if let Some(e) = write_err {
        return Err(e).context("writing the training history");
    }
    println!(
        "trained {epochs} epochs; best validation objective {best_val:.6} at epoch {best_epoch}; checkpoint {}",
        a.out.display()
    );
    Ok(())
}

fn vem_config(a: &TrackArgs) -> VemConfig {
    VemConfig {
        n_sources: a.n_sources,
        r_phi: a.r_phi,
        iterations: a.iterations,
        init_subseq_len: a.init_subseq_len,
        init_iterations: a.init_iterations,
        fine_tune: a.fine_tune,
        m_step_phi: a.m_step_phi,
        fine_tune_lr: a.fine_tune_lr,
        encoder_input: match a.encoder_input {
            EncoderInputArg::Samples => EncoderInput::Samples,
            EncoderInputArg::Means => EncoderInput::Means,
        },
        seed: a.seed,
    }
}

fn load_model(a: &TrackArgs) -> Result<Dynamics> {
    let checkpoint = || {
        a.checkpoint
            .as_deref()
            .context("--checkpoint is required for this model")
    };
    Ok(match a.model {
        TrackModel::Mixdvae => {
            let path = checkpoint()?;
            Dynamics::Srnn(vec![
                SrnnParams::load(path).with_context(|| format!("loading {}", path.display()))?
            ])
        }
        TrackModel::Deepar => {
            let path = checkpoint()?;
            Dynamics::DeepAr(DeepArParams::load(path).with_context(|| format!("loading {}", path.display()))?)
        }
        TrackModel::Vkf => Dynamics::Vkf(LinearDynParams::default()),
    })
}

/// Seed of sequence `i`; independent of how sequences are scheduled.
pub fn sequence_seed(root: u64, i: usize) -> u64 {
    rng::derive_path(root, &[stream::SEQUENCE, i as u64])
}

fn track(a: &TrackArgs) -> Result<()> {
    ensure!(a.jobs >= 1, "--jobs must be at least 1");
    let base = vem_config(a);
    base.validate()?;
    let model = load_model(a)?;
    let scenes = formats::read_scene_file(&a.scenes)?;
    ensure!(!scenes.is_empty(), "{}: no sequences", a.scenes.display());
    let run_one = |(i, scene): (usize, &Scene)| -> Result<VemOutput> {
        let cfg = VemConfig {
            seed: sequence_seed(a.seed, i),
            ..base.clone()
        };
        let out = match &model {
            Dynamics::Vkf(p) => baselines::vkf_run(&scene.obs, p, &cfg),
            Dynamics::DeepAr(p) => baselines::deep_ar_run(&scene.obs, p, &cfg),
            m => vem::run(&scene.obs, m.clone(), &cfg),
        };
        out.with_context(|| format!("sequence {}", i + 1))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .context("building the worker pool")?;
    let outputs: Vec<VemOutput> =
        pool.install(|| scenes.par_iter().enumerate().map(run_one).collect::<Result<_>>())?;
    let results: Vec<TrackingResult> = outputs.iter().map(VemOutput::to_result).collect();
    formats::write_results_file(&a.out, &results)?;
    if let Some(path) = &a.diagnostics {
        let mut text = String::from("sequence,iteration,mean_eta_entropy,mean_V_trace\n");
        for (i, out) in outputs.iter().enumerate() {
            for d in &out.diagnostics {
                let _ = writeln!(text, "{},{},{},{}", i + 1, d.iteration, d.mean_eta_entropy, d.mean_v_trace);
            }
        }
        formats::write_atomic(path, text.as_bytes())?;
    }
    println!("tracked {} sequences; results in {}", results.len(), a.out.display());
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    ensure!(
        (0.0..=1.0).contains(&a.iou_threshold),
        "--iou-threshold must lie in [0, 1]"
    );
    let results = formats::read_results_file(&a.results)?;
    let scenes = formats::read_scene_file(&a.scenes)?;
    ensure!(
        results.len() == scenes.len(),
        "{} holds {} sequences but {} holds {}",
        a.results.display(),
        results.len(),
        a.scenes.display(),
        scenes.len()
    );
    let mut total = MetricCounts::default();
    let mut mota_sum = 0.0;
    let mut text = String::new();
    for (i, (r, s)) in results.iter().zip(&scenes).enumerate() {
        let counts = metrics::evaluate_counts(
            &TrackSet::from_tracks(&s.truth),
            &TrackSet::from_tracks(&r.tracks),
            a.iou_threshold,
        )
        .with_context(|| format!("sequence {}", i + 1))?;
        let report = counts.report().with_context(|| format!("sequence {}", i + 1))?;
        mota_sum += report.mota;
        if a.per_sequence {
            let _ = writeln!(text, "sequence {}\n{}", i + 1, report.table());
        }
        total += counts;
    }
    let report = total.report()?;
    let mean = mota_sum / results.len() as f64;
    let kv = format!("{}sequences={}\nmean_sequence_MOTA={mean}\n", report.key_values(), results.len());
    print!("{text}{}\n{kv}", report.table());
    if let Some(path) = &a.out {
        formats::write_atomic(path, kv.as_bytes())?;
    }
    Ok(())
}

fn make_mot3t(a: &MakeMot3tArgs) -> Result<()> {
    let mut all: Vec<Mot3tSequence> = Vec::new();
    let (mut windows, mut skipped) = (0, 0);
    for (v, dir) in a.sequence_dir.iter().enumerate() {
        let gt = dataio::parse_mot_csv(&dir.join("gt").join("gt.txt"))?;
        let gt: Vec<_> = gt.into_iter().filter(|g| g.is_evaluated_gt()).collect();
        let det = dataio::parse_mot_csv(&dir.join("det").join("det.txt"))?;
        let info_path = dir.join("seqinfo.ini");
        let info = if info_path.exists() {
            Some(dataio::parse_seqinfo(&formats::read_to_string(&info_path)?, &info_path.display().to_string())?)
        } else {
            None
        };
        let (w, h) = match (&info, a.image_width, a.image_height) {
            (Some(i), _, _) => (i.im_width, i.im_height),
            (None, Some(w), Some(h)) => (w, h),
            _ => bail!(
                "{}: no seqinfo.ini; pass --image-width and --image-height",
                dir.display()
            ),
        };
        ensure!(w > 0.0 && h > 0.0, "image size must be positive");
        let labeled = dataio::match_det_to_gt(&det, &gt, a.iou_threshold);
        let num_frames = info.and_then(|i| i.seq_length);
        let (seqs, report) = dataio::build_mot3t(&labeled, &gt, num_frames, a.seq_len, a.n_tracks, a.seed, v as u64)?;
        info!(
            "{}: {} windows, {} sequences, {} skipped",
            dir.display(),
            report.windows,
            report.emitted,
            report.skipped
        );
        windows += report.windows;
        skipped += report.skipped;
        for s in seqs {
            all.push(Mot3tSequence {
                scene: dataio::normalize_scene(&s.scene, w, h)?,
                ..s
            });
        }
    }
    let usable: Vec<Scene> = all.into_iter().map(|s| s.scene).collect();
    formats::write_scene_file(&a.out, &usable)?;
    println!(
        "emitted {} sequences from {windows} windows ({skipped} skipped) to {}",
        usable.len(),
        a.out.display()
    );
    Ok(())
}

fn plot(a: &PlotArgs) -> Result<()> {
    let results = formats::read_results_file(&a.results)?;
    ensure!(!results.is_empty(), "{}: no results", a.results.display());
    ensure!(
        (1..=results.len()).contains(&a.sequence),
        "--sequence must lie in 1..={}",
        results.len()
    );
    let idx = a.sequence - 1;
    let scenes = a.scenes.as_deref().map(formats::read_scene_file).transpose()?;
    let scene = match &scenes {
        Some(s) => Some(s.get(idx).with_context(|| format!("scene file has no sequence {}", a.sequence))?),
        None => None,
    };
    ensure!(a.frames.iter().all(|f| *f >= 1), "frames are 1-based");
    let frames: Vec<usize> = a.frames.iter().map(|f| f - 1).collect();
    let svg = plot::render_svg(&PlotInput {
        estimates: &results[idx].tracks,
        truth: scene.map(|s| s.truth.as_slice()),
        obs: scene.map(|s| &s.obs),
        frames: &frames,
    })?;
    formats::write_atomic(&a.out, svg.as_bytes())?;
    println!("wrote {}", a.out.display());
    Ok(())
}
