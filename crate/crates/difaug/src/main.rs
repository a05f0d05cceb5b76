use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use difaug::augment::{AugmentConfig, AugmentMode};
use difaug::calib::{
    compute_ece, parse_records_csv, records_to_csv, reliability_export, CalibrationReport,
};
use difaug::config::ExperimentConfigFile;
use difaug::error::{DifaugError, Result};
use difaug::imaging::{gen_synthetic_dataset, load_image, save_image, DatasetManifest, Image};
use difaug::rng::derive_rng;
use difaug::train::{
    evaluate_probe, items_from_pairs, load_checkpoint_meta, parse_history_csv, run_experiment,
    ExperimentOptions, HistoryRow, Phase,
};

#[derive(Parser)]
#[command(name = "difaug", version, about = "Desk-scale GAN super-resolution laboratory with diffusion-style discriminator augmentation and calibration measurement")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic HR/LR dataset described by a config.
    GenData {
        /// Experiment config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for PNG pairs and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Run the two-phase training experiment.
    Train {
        /// Experiment config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides the config's output.dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Checkpoint directory (out_dir/ckpt_<iter>) to resume from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Suppress per-probe summary lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Calibration analysis of a logit CSV or a checkpointed discriminator.
    EvalCalib {
        /// CSV of "logit,label" records to analyze directly.
        #[arg(long, conflicts_with_all = ["checkpoint", "dataset"])]
        records: Option<PathBuf>,
        /// Checkpoint directory holding the networks to probe.
        #[arg(long, requires = "dataset")]
        checkpoint: Option<PathBuf>,
        /// Dataset directory (gen-data output) supplying HR/LR pairs.
        #[arg(long, requires = "checkpoint")]
        dataset: Option<PathBuf>,
        /// Number of confidence bins.
        #[arg(long, default_value_t = 15)]
        bins: usize,
        /// Number of probe crop positions (checkpoint mode).
        #[arg(long, default_value_t = 1000)]
        crops: usize,
        /// Seed for probe crop positions (checkpoint mode).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for reliability CSV/SVG artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a corruption ladder: both modes at steps {0, T/4, T/2, 3T/4, T}.
    AugmentDemo {
        /// HR input image (PNG or PPM).
        #[arg(long)]
        image: PathBuf,
        /// Matching LR input; required for the LR-mean row.
        #[arg(long)]
        lr_image: Option<PathBuf>,
        /// Experiment config JSON supplying schedule and eta.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output image path for the 2x5 tile grid.
        #[arg(long)]
        out: PathBuf,
        /// Seed for the corruption noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Join two run histories into an ablation report.
    Compare {
        /// First run directory (holding history.csv).
        #[arg(long)]
        run_a: PathBuf,
        /// Second run directory (holding history.csv).
        #[arg(long)]
        run_b: PathBuf,
        /// Output directory for compare.md and compare.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &DifaugError) -> u8 {
    match e {
        DifaugError::NonFinite { .. } => 3,
        DifaugError::Io { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("DIFAUG_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfigFile> {
    match path {
        Some(p) => ExperimentConfigFile::load(p),
        None => Ok(ExperimentConfigFile::default()),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DifaugError + '_ {
    move |e| DifaugError::io(path.display().to_string(), e)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { config, out, force } => cmd_gen_data(&load_config(&config)?, &out, force),
        Cmd::Train { config, out, resume, quiet } => {
            cmd_train(&load_config(&config)?, out.as_deref(), resume, quiet)
        }
        Cmd::EvalCalib { records, checkpoint, dataset, bins, crops, seed, out } => cmd_eval_calib(
            records.as_deref(),
            checkpoint.as_deref(),
            dataset.as_deref(),
            bins,
            crops,
            seed,
            out.as_deref(),
        ),
        Cmd::AugmentDemo { image, lr_image, config, out, seed } => {
            cmd_augment_demo(&image, lr_image.as_deref(), &load_config(&config)?, &out, seed)
        }
        Cmd::Compare { run_a, run_b, out } => cmd_compare(&run_a, &run_b, &out),
    }
}

fn cmd_gen_data(cfg: &ExperimentConfigFile, out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let non_empty = std::fs::read_dir(out).map_err(io_err(out))?.next().is_some();
        if non_empty && !force {
            return Err(DifaugError::InvalidArgument(format!(
                "output directory {} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let manifest =
        DatasetManifest::generate(cfg.dataset.seed, cfg.dataset.patch_size, cfg.dataset.count)?;
    let pairs = gen_synthetic_dataset(&manifest)?;
    manifest.save(&out.join("manifest.json"))?;
    for (i, pair) in pairs.iter().enumerate() {
        save_image(&pair.hr, &out.join(format!("hr_{i:04}.png")))?;
        save_image(&pair.lr, &out.join(format!("lr_{i:04}.png")))?;
    }
    println!("wrote {} HR/LR pairs to {}", pairs.len(), out.display());
    Ok(())
}

fn cmd_train(
    cfg: &ExperimentConfigFile,
    out: Option<&Path>,
    resume: Option<PathBuf>,
    quiet: bool,
) -> Result<()> {
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let pre = cfg.train_config(Phase::Pretrain)?;
    let adv = cfg.train_config(Phase::Adversarial)?;
    let manifest =
        DatasetManifest::generate(cfg.dataset.seed, cfg.dataset.patch_size, cfg.dataset.count)?;
    let dataset = gen_synthetic_dataset(&manifest)?;
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    cfg.save(&out_dir.join("config.json"))?;
    let summary = run_experiment(
        cfg.model.generator,
        cfg.model.discriminator,
        &pre,
        &adv,
        &dataset,
        &out_dir,
        &ExperimentOptions { resume, verbose: !quiet },
    )?;
    println!(
        "completed {} iterations; history at {}",
        summary.final_iter,
        out_dir.join("history.csv").display()
    );
    Ok(())
}

fn print_report(report: &CalibrationReport) {
    println!("ece {:.4}", report.ece);
    println!("accuracy {:.4}", report.overall_accuracy);
    println!("samples {}", report.total_samples);
}

fn cmd_eval_calib(
    records: Option<&Path>,
    checkpoint: Option<&Path>,
    dataset: Option<&Path>,
    bins: usize,
    crops: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let (report, records) = match (records, checkpoint, dataset) {
        (Some(path), None, None) => {
            let text =
                std::fs::read_to_string(path).map_err(io_err(path))?;
            let records = parse_records_csv(&text)?;
            (compute_ece(&records, bins)?, records)
        }
        (None, Some(ckpt), Some(data_dir)) => {
            let meta = load_checkpoint_meta(ckpt)?;
            let gen = difaug::tensor::ParamStore::load(&ckpt.join("gen.params"))?;
            let disc = difaug::tensor::ParamStore::load(&ckpt.join("disc.params"))?;
            let manifest = DatasetManifest::load(&data_dir.join("manifest.json"))?;
            let pairs = gen_synthetic_dataset(&manifest)?;
            let items = items_from_pairs(&pairs);
            let probe = evaluate_probe(
                &meta.gen_spec,
                &gen,
                &meta.disc_spec,
                &disc,
                &items,
                crops,
                seed,
                meta.iteration,
            )?;
            (compute_ece(&probe.records, bins)?, probe.records)
        }
        _ => {
            return Err(DifaugError::InvalidArgument(
                "pass either --records, or --checkpoint with --dataset".into(),
            ))
        }
    };
    print_report(&report);
    if let Some(dir) = out {
        reliability_export(&report, dir, "calib_eval")?;
        let rec_path = dir.join("calib_eval_records.csv");
        std::fs::write(&rec_path, records_to_csv(&records)).map_err(io_err(&rec_path))?;
    }
    Ok(())
}

fn cmd_augment_demo(
    image: &Path,
    lr_image: Option<&Path>,
    cfg: &ExperimentConfigFile,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let hr = load_image(image)?;
    let Some(lr_path) = lr_image else {
        return Err(DifaugError::InvalidArgument(
            "the LR-mean row needs --lr-image (matching LR input)".into(),
        ));
    };
    let lr = load_image(lr_path)?;
    let schedule = cfg.schedule()?;
    let total = schedule.total_steps();
    let steps = [0, total / 4, total / 2, 3 * total / 4, total];
    let base = AugmentConfig::new(schedule, cfg.augment.eta, AugmentMode::GaussianOnly)?;
    let hr_t = hr.to_tensor();
    let lr_t = lr.to_tensor();
    let (h, w) = (hr.height(), hr.width());
    let mut grid = Image::zeros(2 * h, 5 * w);
    for (row, mode) in [AugmentMode::GaussianOnly, AugmentMode::LrMean].into_iter().enumerate() {
        let mut acfg = base;
        acfg.mode = mode;
        for (col, &step) in steps.iter().enumerate() {
            let mut rng = derive_rng(seed, "demo", &[row as u64, col as u64]);
            let sample = match mode {
                AugmentMode::GaussianOnly => {
                    difaug::augment::diffuse_standard(&hr_t, step, &acfg, &mut rng)?
                }
                AugmentMode::LrMean => {
                    difaug::augment::diffuse_lr_mean(&hr_t, &lr_t, step, &acfg, &mut rng)?
                }
            };
            let mut tile = Image::from_tensor(&sample.corrupted)?;
            tile.clamp_unit();
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        grid.set(c, row * h + y, col * w + x, tile.get(c, y, x));
                    }
                }
            }
        }
    }
    save_image(&grid, out)?;
    println!("wrote corruption ladder ({}x{} tiles) to {}", 2, 5, out.display());
    Ok(())
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

struct RunMetrics {
    probe_iters: Vec<u64>,
    final_psnr: f64,
    final_ssim: f64,
    final_ece: f64,
    median_psnr: f64,
    median_ssim: f64,
    median_ece: f64,
}

fn probe_rows(history: &[HistoryRow]) -> Vec<&HistoryRow> {
    history.iter().filter(|r| r.ece.is_some()).collect()
}

fn run_metrics(history: &[HistoryRow], label: &Path) -> Result<RunMetrics> {
    let probes = probe_rows(history);
    let last = probes.last().ok_or_else(|| {
        DifaugError::InvalidArgument(format!("{}: history has no probe rows", label.display()))
    })?;
    let mut psnrs: Vec<f64> = probes.iter().filter_map(|r| r.val_psnr).collect();
    let mut ssims: Vec<f64> = probes.iter().filter_map(|r| r.val_ssim).collect();
    let mut eces: Vec<f64> = probes.iter().filter_map(|r| r.ece).collect();
    Ok(RunMetrics {
        probe_iters: probes.iter().map(|r| r.iter).collect(),
        final_psnr: last.val_psnr.unwrap_or(f64::NAN),
        final_ssim: last.val_ssim.unwrap_or(f64::NAN),
        final_ece: last.ece.unwrap_or(f64::NAN),
        median_psnr: median(&mut psnrs),
        median_ssim: median(&mut ssims),
        median_ece: median(&mut eces),
    })
}

fn cmd_compare(run_a: &Path, run_b: &Path, out: &Path) -> Result<()> {
    let read_history = |dir: &Path| -> Result<Vec<HistoryRow>> {
        let path = dir.join("history.csv");
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        parse_history_csv(&text)
    };
    let ha = read_history(run_a)?;
    let hb = read_history(run_b)?;
    let ma = run_metrics(&ha, run_a)?;
    let mb = run_metrics(&hb, run_b)?;
    if ma.probe_iters != mb.probe_iters {
        return Err(DifaugError::InvalidArgument(format!(
            "probe intervals differ ({} vs {} probe rows at different iterations); \
             rerun both experiments with the same calib_probe_interval and total_iters",
            ma.probe_iters.len(),
            mb.probe_iters.len()
        )));
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;

    let mut csv = String::from("iter,psnr_a,ssim_a,ece_a,acc_a,psnr_b,ssim_b,ece_b,acc_b\n");
    let pa = probe_rows(&ha);
    let pb = probe_rows(&hb);
    for (a, b) in pa.iter().zip(&pb) {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            a.iter,
            a.val_psnr.unwrap_or(f64::NAN),
            a.val_ssim.unwrap_or(f64::NAN),
            a.ece.unwrap_or(f64::NAN),
            a.disc_acc.unwrap_or(f64::NAN),
            b.val_psnr.unwrap_or(f64::NAN),
            b.val_ssim.unwrap_or(f64::NAN),
            b.ece.unwrap_or(f64::NAN),
            b.disc_acc.unwrap_or(f64::NAN),
        ));
    }
    let csv_path = out.join("compare.csv");
    std::fs::write(&csv_path, &csv).map_err(io_err(&csv_path))?;

    let row = |name: &str, a: f64, b: f64| {
        format!("| {name} | {a:.4} | {b:.4} | {:+.4} |\n", b - a)
    };
    let mut md = String::new();
    md.push_str("# Run comparison\n\n");
    md.push_str(&format!("- run_a: {}\n- run_b: {}\n\n", run_a.display(), run_b.display()));
    md.push_str("| metric | run_a | run_b | delta (b - a) |\n|---|---|---|---|\n");
    md.push_str(&row("final PSNR (dB)", ma.final_psnr, mb.final_psnr));
    md.push_str(&row("median PSNR (dB)", ma.median_psnr, mb.median_psnr));
    md.push_str(&row("final SSIM", ma.final_ssim, mb.final_ssim));
    md.push_str(&row("median SSIM", ma.median_ssim, mb.median_ssim));
    md.push_str(&row("final ECE", ma.final_ece, mb.final_ece));
    md.push_str(&row("median ECE", ma.median_ece, mb.median_ece));
    md.push_str(&format!(
        "\nJoined on {} probe iterations; per-probe values in compare.csv.\n",
        pa.len()
    ));
    let md_path = out.join("compare.md");
    std::fs::write(&md_path, &md).map_err(io_err(&md_path))?;
    println!(
        "final ECE {:.4} -> {:.4}, final PSNR {:.3} -> {:.3}; report at {}",
        ma.final_ece,
        mb.final_ece,
        ma.final_psnr,
        mb.final_psnr,
        md_path.display()
    );
    Ok(())
}
