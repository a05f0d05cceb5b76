//! Full experiment driver: two training phases, held-out probes, history CSV,
//! reliability artifacts, and resumable checkpoints.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{
    compute_ece, records_to_csv, reliability_export, CalibrationReport, Label, PredictionRecord,
    DEFAULT_NUM_BINS,
};
use crate::error::{DifaugError, Result};
use crate::imaging::{psnr, ssim, Image, ImagePair};
use crate::models::{
    discriminator_forward, generator_forward, DiscriminatorSpec, GeneratorSpec,
};
use crate::rng::derive_rng;
use crate::tensor::{ParamStore, Tape, Tensor};

use super::{items_from_pairs, AdamState, Phase, TrainConfig, TrainItem, Trainer};

pub const CKPT_VERSION: &str = "difaug-ckpt-v1";
/// Preferred probe crop side; shrunk to fit small validation patches.
pub const PROBE_CROP: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: u64,
    pub phase: Phase,
    pub pixel_loss: f64,
    pub percep_loss: f64,
    pub adv_loss: f64,
    pub d_loss: f64,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
    pub ece: Option<f64>,
    pub disc_acc: Option<f64>,
}

pub const HISTORY_HEADER: &str =
    "iter,phase,pixel_loss,percep_loss,adv_loss,d_loss,val_psnr,val_ssim,ece,disc_acc";

fn phase_str(p: Phase) -> &'static str {
    match p {
        Phase::Pretrain => "pretrain",
        Phase::Adversarial => "adversarial",
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn history_to_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.iter,
            phase_str(r.phase),
            r.pixel_loss,
            r.percep_loss,
            r.adv_loss,
            r.d_loss,
            opt_cell(r.val_psnr),
            opt_cell(r.val_ssim),
            opt_cell(r.ece),
            opt_cell(r.disc_acc),
        ));
    }
    out
}

pub fn parse_history_csv(text: &str) -> Result<Vec<HistoryRow>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let got: Vec<&str> = header.split(',').map(str::trim).collect();
    let want: Vec<&str> = HISTORY_HEADER.split(',').collect();
    for col in &want {
        if !got.contains(col) {
            return Err(DifaugError::Parse {
                offset: 1,
                detail: format!("history CSV missing column {col:?}"),
            });
        }
    }
    if got != want {
        return Err(DifaugError::Parse {
            offset: 1,
            detail: format!("history CSV columns out of order: {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != want.len() {
            return Err(DifaugError::Parse {
                offset: lineno + 2,
                detail: format!("line {}: expected {} cells", lineno + 2, want.len()),
            });
        }
        let req = |i: usize| -> Result<f64> {
            cells[i].parse().map_err(|e| DifaugError::Parse {
                offset: lineno + 2,
                detail: format!("line {}: bad {} value: {e}", lineno + 2, want[i]),
            })
        };
        let opt = |i: usize| -> Result<Option<f64>> {
            if cells[i].is_empty() { Ok(None) } else { req(i).map(Some) }
        };
        let phase = match cells[1] {
            "pretrain" => Phase::Pretrain,
            "adversarial" => Phase::Adversarial,
            other => {
                return Err(DifaugError::Parse {
                    offset: lineno + 2,
                    detail: format!("line {}: bad phase {other:?}", lineno + 2),
                })
            }
        };
        rows.push(HistoryRow {
            iter: cells[0].parse().map_err(|e| DifaugError::Parse {
                offset: lineno + 2,
                detail: format!("line {}: bad iter: {e}", lineno + 2),
            })?,
            phase,
            pixel_loss: req(2)?,
            percep_loss: req(3)?,
            adv_loss: req(4)?,
            d_loss: req(5)?,
            val_psnr: opt(6)?,
            val_ssim: opt(7)?,
            ece: opt(8)?,
            disc_acc: opt(9)?,
        });
    }
    Ok(rows)
}

/// Generator inference without gradient tracking.
pub fn super_resolve(spec: &GeneratorSpec, gen: &ParamStore, lr: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = gen.bind_frozen(&mut tape);
    let lr_var = tape.leaf(lr.clone());
    let out = generator_forward(spec, gen, &mut tape, &bound, lr_var)?;
    Ok(tape.value(out).clone())
}

/// Discriminator logit for one image tensor, no gradient tracking.
pub fn disc_logit(spec: &DiscriminatorSpec, disc: &ParamStore, x: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = disc.bind_frozen(&mut tape);
    let xv = tape.leaf(x.clone());
    let logit = discriminator_forward(spec, disc, &mut tape, &bound, xv)?;
    Ok(tape.value(logit).data()[0])
}

fn crop_tensor(t: &Tensor, y0: usize, x0: usize, size: usize) -> Result<Tensor> {
    Ok(Image::from_tensor(t)?.crop(y0, x0, size, size)?.to_tensor())
}

fn clamped_image(t: &Tensor) -> Result<Image> {
    let mut img = Image::from_tensor(t)?;
    img.clamp_unit();
    Ok(img)
}

/// Probe crop side for a validation set: at most [`PROBE_CROP`], shrunk to
/// the smallest patch and rounded down to the discriminator's divisor.
pub fn probe_crop_size(val: &[TrainItem], disc_spec: &DiscriminatorSpec) -> Result<usize> {
    let div = 1 << disc_spec.num_downsamples;
    let min_side = val
        .iter()
        .map(|it| it.hr.shape()[1].min(it.hr.shape()[2]))
        .min()
        .ok_or_else(|| DifaugError::InvalidArgument("empty validation set".into()))?;
    let crop = PROBE_CROP.min(min_side) / div * div;
    if crop == 0 {
        return Err(DifaugError::Shape(format!(
            "validation patches ({min_side} px) smaller than discriminator divisor {div}"
        )));
    }
    Ok(crop)
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub val_psnr: f64,
    pub val_ssim: f64,
    pub report: CalibrationReport,
    pub records: Vec<PredictionRecord>,
}

/// Held-out evaluation: mean PSNR/SSIM of clamped SR outputs, plus a
/// calibration report from paired HR/SR crops fed to the discriminator
/// uncorrupted. Crop positions come from a dedicated counter-derived stream,
/// so probing never perturbs training.
pub fn evaluate_probe(
    gen_spec: &GeneratorSpec,
    gen: &ParamStore,
    disc_spec: &DiscriminatorSpec,
    disc: &ParamStore,
    val: &[TrainItem],
    crops: usize,
    seed: u64,
    iter: u64,
) -> Result<ProbeResult> {
    if val.is_empty() || crops == 0 {
        return Err(DifaugError::InvalidArgument("probe needs validation items and crops".into()));
    }
    let crop = probe_crop_size(val, disc_spec)?;
    let srs: Vec<Tensor> = val
        .par_iter()
        .map(|it| super_resolve(gen_spec, gen, &it.lr))
        .collect::<Result<_>>()?;
    let metrics: Vec<(f64, f64)> = val
        .par_iter()
        .zip(&srs)
        .map(|(it, sr)| {
            let hr = Image::from_tensor(&it.hr)?;
            let sr = clamped_image(sr)?;
            Ok((psnr(&sr, &hr)?, ssim(&sr, &hr)?))
        })
        .collect::<Result<_>>()?;
    let n = metrics.len() as f64;
    let val_psnr = metrics.iter().map(|(p, _)| p).sum::<f64>() / n;
    let val_ssim = metrics.iter().map(|(_, s)| s).sum::<f64>() / n;

    let mut rng = derive_rng(seed, "probe", &[iter]);
    let positions: Vec<(usize, usize, usize)> = (0..crops)
        .map(|_| {
            let ix = rng.gen_range(0..val.len());
            let (h, w) = (val[ix].hr.shape()[1], val[ix].hr.shape()[2]);
            let y0 = rng.gen_range(0..=h - crop);
            let x0 = rng.gen_range(0..=w - crop);
            (ix, y0, x0)
        })
        .collect();
    let pairs: Vec<[PredictionRecord; 2]> = positions
        .par_iter()
        .map(|&(ix, y0, x0)| {
            let real = crop_tensor(&val[ix].hr, y0, x0, crop)?;
            let fake = crop_tensor(&srs[ix], y0, x0, crop)?;
            Ok([
                PredictionRecord { logit: disc_logit(disc_spec, disc, &real)?, label: Label::Real },
                PredictionRecord { logit: disc_logit(disc_spec, disc, &fake)?, label: Label::Fake },
            ])
        })
        .collect::<Result<_>>()?;
    let records: Vec<PredictionRecord> = pairs.into_iter().flatten().collect();
    let report = compute_ece(&records, DEFAULT_NUM_BINS)?;
    Ok(ProbeResult { val_psnr, val_ssim, report, records })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: String,
    /// Next iteration to run.
    pub iteration: u64,
    pub phase: Phase,
    pub gen_spec: GeneratorSpec,
    pub disc_spec: DiscriminatorSpec,
    pub history: Vec<HistoryRow>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DifaugError + '_ {
    move |e| DifaugError::io(path.display().to_string(), e)
}

pub fn save_checkpoint(dir: &Path, trainer: &Trainer, history: &[HistoryRow]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    trainer.gen.save(&dir.join("gen.params"))?;
    trainer.disc.save(&dir.join("disc.params"))?;
    trainer.opt_g.save(&trainer.gen, &dir.join("opt_g.params"))?;
    trainer.opt_d.save(&trainer.disc, &dir.join("opt_d.params"))?;
    let meta = CheckpointMeta {
        version: CKPT_VERSION.to_string(),
        iteration: trainer.iter,
        phase: trainer.cfg.phase,
        gen_spec: trainer.gen_spec,
        disc_spec: trainer.disc_spec,
        history: history.to_vec(),
    };
    let path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| DifaugError::Other(format!("meta encode: {e}")))?;
    std::fs::write(&path, json).map_err(io_err(&path))
}

pub fn load_checkpoint_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join("meta.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| DifaugError::Config(format!("checkpoint meta {}: {e}", path.display())))?;
    if meta.version != CKPT_VERSION {
        return Err(DifaugError::Config(format!(
            "unsupported checkpoint version {:?}",
            meta.version
        )));
    }
    Ok(meta)
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions {
    /// Checkpoint directory to resume from.
    pub resume: Option<PathBuf>,
    /// Print a summary line at every probe.
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub final_iter: u64,
    pub history: Vec<HistoryRow>,
    pub final_checkpoint: PathBuf,
    pub final_report: Option<CalibrationReport>,
}

/// Run the two-phase protocol end to end. Deterministic given the configs'
/// seeds; resuming from any written checkpoint reproduces the remaining
/// history bit-identically.
pub fn run_experiment(
    gen_spec: GeneratorSpec,
    disc_spec: DiscriminatorSpec,
    cfg_pre: &TrainConfig,
    cfg_adv: &TrainConfig,
    dataset: &[ImagePair],
    out_dir: &Path,
    opts: &ExperimentOptions,
) -> Result<ExperimentSummary> {
    if cfg_pre.phase != Phase::Pretrain || cfg_adv.phase != Phase::Adversarial {
        return Err(DifaugError::Config(
            "run_experiment needs one Pretrain and one Adversarial config, in that order".into(),
        ));
    }
    cfg_pre.validate()?;
    cfg_adv.validate()?;
    if cfg_adv.lambda2 <= 0.0 {
        return Err(DifaugError::Config("adversarial phase requires lambda2 > 0".into()));
    }
    let val_count = (dataset.len() / 10).max(4);
    if dataset.len() <= val_count {
        return Err(DifaugError::InvalidArgument(format!(
            "dataset of {} pairs too small for a {val_count}-pair validation split",
            dataset.len()
        )));
    }
    let (train_pairs, val_pairs) = dataset.split_at(dataset.len() - val_count);
    let val_items = items_from_pairs(val_pairs);
    let total = (cfg_pre.total_iters + cfg_adv.total_iters) as u64;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut trainer =
        Trainer::new(gen_spec, disc_spec, cfg_pre.clone(), items_from_pairs(train_pairs))?;
    let mut history: Vec<HistoryRow> = Vec::new();

    if let Some(resume_dir) = &opts.resume {
        let meta = load_checkpoint_meta(resume_dir)?;
        if meta.gen_spec != gen_spec || meta.disc_spec != disc_spec {
            return Err(DifaugError::Config(
                "checkpoint model specs do not match the requested experiment".into(),
            ));
        }
        trainer.gen = ParamStore::load(&resume_dir.join("gen.params"))?;
        trainer.disc = ParamStore::load(&resume_dir.join("disc.params"))?;
        trainer.iter = meta.iteration;
        history = meta.history;
        let crossed_boundary =
            meta.phase == Phase::Pretrain && trainer.iter >= cfg_pre.total_iters as u64;
        if trainer.iter >= cfg_pre.total_iters as u64 {
            trainer.switch_config(cfg_adv.clone())?;
        }
        // a checkpoint saved exactly at the phase boundary carries moments the
        // phase switch would have reset; keep the fresh ones in that case
        if !crossed_boundary {
            trainer.opt_g = AdamState::load(
                trainer.cfg.adam(),
                &trainer.gen,
                &resume_dir.join("opt_g.params"),
            )?;
            trainer.opt_d = AdamState::load(
                trainer.cfg.adam(),
                &trainer.disc,
                &resume_dir.join("opt_d.params"),
            )?;
        }
    }

    let mut final_report = None;
    while trainer.iter < total {
        if trainer.iter == cfg_pre.total_iters as u64 && trainer.cfg.phase == Phase::Pretrain {
            trainer.switch_config(cfg_adv.clone())?;
        }
        let at_iter = trainer.iter;
        let stats = match trainer.step() {
            Ok(s) => s,
            Err(DifaugError::NonFinite { op_id, detail }) => {
                let diag = out_dir.join(format!("ckpt_diag_{at_iter}"));
                save_checkpoint(&diag, &trainer, &history)?;
                std::fs::write(out_dir.join("history.csv"), history_to_csv(&history))
                    .map_err(io_err(out_dir))?;
                return Err(DifaugError::NonFinite {
                    op_id,
                    detail: format!("{detail}; diagnostic checkpoint at {}", diag.display()),
                });
            }
            Err(e) => return Err(e),
        };
        let mut row = HistoryRow {
            iter: stats.iter,
            phase: stats.phase,
            pixel_loss: stats.pixel_loss,
            percep_loss: stats.percep_loss,
            adv_loss: stats.adv_loss,
            d_loss: stats.d_loss,
            val_psnr: None,
            val_ssim: None,
            ece: None,
            disc_acc: None,
        };
        let done = trainer.iter == total;
        let probe_due =
            (stats.iter + 1) % trainer.cfg.calib_probe_interval as u64 == 0 || done;
        if probe_due {
            let probe = evaluate_probe(
                &trainer.gen_spec,
                &trainer.gen,
                &trainer.disc_spec,
                &trainer.disc,
                &val_items,
                trainer.cfg.calib_probe_crops,
                trainer.cfg.seed,
                stats.iter,
            )?;
            row.val_psnr = Some(probe.val_psnr);
            row.val_ssim = Some(probe.val_ssim);
            row.ece = Some(probe.report.ece);
            row.disc_acc = Some(probe.report.overall_accuracy);
            reliability_export(&probe.report, out_dir, &format!("calib_{}", stats.iter))?;
            let rec_path = out_dir.join(format!("records_{}.csv", stats.iter));
            std::fs::write(&rec_path, records_to_csv(&probe.records)).map_err(io_err(&rec_path))?;
            if opts.verbose {
                println!(
                    "iter {} [{}] pixel {:.5} d {:.5} psnr {:.3} ssim {:.4} ece {:.4} acc {:.3}",
                    stats.iter,
                    phase_str(stats.phase),
                    stats.pixel_loss,
                    stats.d_loss,
                    probe.val_psnr,
                    probe.val_ssim,
                    probe.report.ece,
                    probe.report.overall_accuracy,
                );
            }
            if done {
                final_report = Some(probe.report);
            }
        }
        history.push(row);
        if probe_due {
            save_checkpoint(&out_dir.join(format!("ckpt_{}", stats.iter)), &trainer, &history)?;
        }
    }

    let hist_path = out_dir.join("history.csv");
    std::fs::write(&hist_path, history_to_csv(&history)).map_err(io_err(&hist_path))?;
    Ok(ExperimentSummary {
        final_iter: total,
        history,
        final_checkpoint: out_dir.join(format!("ckpt_{}", total - 1)),
        final_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{AugmentConfig, AugmentMode, DEFAULT_ETA};
    use crate::imaging::{gen_synthetic_dataset, DatasetManifest};
    use crate::models::init_params;
    use crate::schedule::NoiseSchedule;

    fn tiny_specs() -> (GeneratorSpec, DiscriminatorSpec) {
        (
            GeneratorSpec { base_channels: 8, num_blocks: 1 },
            DiscriminatorSpec { base_channels: 8, num_downsamples: 2 },
        )
    }

    fn tiny_dataset(seed: u64, count: usize) -> Vec<ImagePair> {
        let m = DatasetManifest::generate(seed, 16, count).unwrap();
        gen_synthetic_dataset(&m).unwrap()
    }

    fn tiny_cfgs(seed: u64, pre: usize, adv: usize) -> (TrainConfig, TrainConfig) {
        let augment =
            AugmentConfig::new(NoiseSchedule::default(), DEFAULT_ETA, AugmentMode::LrMean).unwrap();
        let mut a = TrainConfig::pretrain(seed, pre);
        a.batch_size = 2;
        a.calib_probe_interval = 3;
        a.calib_probe_crops = 20;
        let mut b = TrainConfig::adversarial(seed, adv, Some(augment));
        b.batch_size = 2;
        b.calib_probe_interval = 3;
        b.calib_probe_crops = 20;
        (a, b)
    }

    #[test]
    fn zero_disc_probe_is_degenerate() {
        let (gs, ds) = tiny_specs();
        let gen = init_params(&gs.param_defs(), 1);
        let mut disc = init_params(&ds.param_defs(), 2);
        for i in 0..disc.len() {
            disc.tensor_mut(i).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let val = items_from_pairs(&tiny_dataset(1, 5));
        let probe = evaluate_probe(&gs, &gen, &ds, &disc, &val, 50, 0, 0).unwrap();
        assert!(probe.records.iter().all(|r| r.logit == 0.0));
        assert!((probe.report.overall_accuracy - 0.5).abs() < 1e-12);
        // all mass in the lowest bin at confidence 0.5; |acc - conf| = 0
        assert!(probe.report.ece.abs() < 1e-12);
    }

    #[test]
    fn history_csv_roundtrip_and_schema() {
        let rows = vec![
            HistoryRow {
                iter: 0,
                phase: Phase::Pretrain,
                pixel_loss: 0.25,
                percep_loss: 0.0,
                adv_loss: 0.0,
                d_loss: 0.0,
                val_psnr: None,
                val_ssim: None,
                ece: None,
                disc_acc: None,
            },
            HistoryRow {
                iter: 1,
                phase: Phase::Adversarial,
                pixel_loss: 0.125,
                percep_loss: 0.5,
                adv_loss: 0.6931471805599453,
                d_loss: 1.3862943611198906,
                val_psnr: Some(27.5),
                val_ssim: Some(0.91),
                ece: Some(0.11),
                disc_acc: Some(0.62),
            },
        ];
        let csv = history_to_csv(&rows);
        assert_eq!(parse_history_csv(&csv).unwrap(), rows);

        let broken = csv.replace("d_loss", "dloss");
        let err = parse_history_csv(&broken).unwrap_err().to_string();
        assert!(err.contains("d_loss"), "{err}");
    }

    #[test]
    fn experiment_writes_artifacts_and_is_deterministic() {
        let (gs, ds) = tiny_specs();
        let dataset = tiny_dataset(2, 10);
        let (pre, adv) = tiny_cfgs(5, 3, 3);
        let dir = tempfile::tempdir().unwrap();
        let run = |name: &str| {
            let out = dir.path().join(name);
            run_experiment(gs, ds, &pre, &adv, &dataset, &out, &ExperimentOptions::default())
                .unwrap();
            std::fs::read_to_string(out.join("history.csv")).unwrap()
        };
        let h1 = run("a");
        let h2 = run("b");
        assert_eq!(h1, h2);
        let rows = parse_history_csv(&h1).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows[2].ece.is_some() && rows[5].ece.is_some());
        assert!(rows.iter().all(|r| r.pixel_loss.is_finite()));
        let out = dir.path().join("a");
        assert!(out.join("calib_2.csv").exists());
        assert!(out.join("calib_5.svg").exists());
        assert!(out.join("ckpt_5/meta.json").exists());
        assert!(out.join("records_5.csv").exists());
    }

    #[test]
    fn resume_reproduces_history_bit_identically() {
        let (gs, ds) = tiny_specs();
        let dataset = tiny_dataset(3, 10);
        let (pre, adv) = tiny_cfgs(6, 3, 3);
        let dir = tempfile::tempdir().unwrap();

        let full_out = dir.path().join("full");
        run_experiment(gs, ds, &pre, &adv, &dataset, &full_out, &ExperimentOptions::default())
            .unwrap();
        let full = std::fs::read_to_string(full_out.join("history.csv")).unwrap();

        // restart from the probe checkpoint at iteration 2
        let resumed_out = dir.path().join("resumed");
        run_experiment(
            gs,
            ds,
            &pre,
            &adv,
            &dataset,
            &resumed_out,
            &ExperimentOptions { resume: Some(full_out.join("ckpt_2")), verbose: false },
        )
        .unwrap();
        let resumed = std::fs::read_to_string(resumed_out.join("history.csv")).unwrap();
        assert_eq!(full, resumed);
    }

    #[test]
    fn nan_abort_writes_diagnostic_checkpoint() {
        let (gs, ds) = tiny_specs();
        let dataset = tiny_dataset(4, 10);
        let (mut pre, adv) = tiny_cfgs(7, 5, 2);
        pre.lr = f64::MAX; // guarantees overflow within a few steps
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("boom");
        let err = run_experiment(gs, ds, &pre, &adv, &dataset, &out, &ExperimentOptions::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("ckpt_diag_"), "{err}");
        let diag = std::fs::read_dir(&out)
            .unwrap()
            .filter_map(|e| e.ok())
            .find(|e| e.file_name().to_string_lossy().starts_with("ckpt_diag_"));
        assert!(diag.is_some());
    }

    #[test]
    fn invalid_phase_pairing_rejected() {
        let (gs, ds) = tiny_specs();
        let dataset = tiny_dataset(5, 10);
        let (pre, adv) = tiny_cfgs(8, 2, 2);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x");
        assert!(run_experiment(gs, ds, &adv, &pre, &dataset, &out, &Default::default()).is_err());
        let mut bad_adv = adv.clone();
        bad_adv.lambda2 = 0.0;
        assert!(
            run_experiment(gs, ds, &pre, &bad_adv, &dataset, &out, &Default::default()).is_err()
        );
    }
}
