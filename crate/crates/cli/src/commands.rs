use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use volsr_core::arch::{
    discriminator_parameter_count, first_layer_parameter_delta, load_checkpoint, spec_parameter_report, Dimensionality,
    Family, NetworkSpec,
};
use volsr_core::eval::{plot_detection, plot_psnr_bars, write_detection_csv, write_psnr_csv, PsnrBar};
use volsr_core::experiment::{load_test_part, run_comparison, score_volume, super_resolve_part, ModelResult};
use volsr_core::phantom::{degrade, generate_phantom, DegradationSpec, Manifest};
use volsr_core::slidewin::estimate_activation_memory;
use volsr_core::train::train;
use volsr_core::volume::{normalize_pair, normalize_volume, upsample_all, Interp, SliceAxis, Volume};

use crate::config::ExperimentConfig;
use crate::{Cli, Command, Common, Failure, OUT_ENV};

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    overwrite: bool,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self, Failure> {
        let mut cfg = match &common.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        let out = common
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("volsr-out"));
        Ok(Self {
            cfg,
            out,
            overwrite: common.overwrite,
        })
    }

    fn out_dir(&self) -> Result<&Path, Failure> {
        fs::create_dir_all(&self.out).map_err(|e| runtime(format!("cannot create {}: {e}", self.out.display())))?;
        Ok(&self.out)
    }

    /// Refuse to replace `path` unless `--overwrite` was given.
    fn fresh(&self, path: &Path) -> Result<(), Failure> {
        if path.exists() && !self.overwrite {
            return Err(Failure::validation(format!(
                "{} exists; pass --overwrite to replace it",
                path.display()
            )));
        }
        Ok(())
    }

    fn record(&self, command: &str, seeds: Value, extra: Value) -> Result<(), Failure> {
        let record = json!({
            "command": command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "config_hash": self.cfg.hash(),
            "config": self.cfg,
            "master_seed": self.cfg.seed,
            "seeds": seeds,
            "versions": {
                "volsr": env!("CARGO_PKG_VERSION"),
                "checkpoint_format": "VOLSR-CHECKPOINT/1",
                "manifest_format": "volsr-manifest/1",
            },
            "details": extra,
        });
        let path = self.out_dir()?.join(format!("{command}.record.json"));
        write_text(&path, &serde_json::to_string_pretty(&record).expect("json values serialize"))
    }
}

fn runtime(message: String) -> Failure {
    Failure {
        code: crate::EXIT_RUNTIME,
        message,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

pub(crate) fn dispatch(cli: Cli) -> Result<(), Failure> {
    let ctx = Ctx::new(&cli.common)?;
    match cli.command {
        Command::Phantom => phantom(&ctx),
        Command::Degrade { input } => degrade_cmd(&ctx, &input),
        Command::Dataset => dataset(&ctx),
        Command::Train { manifest } => train_cmd(&ctx, &manifest),
        Command::Infer {
            checkpoint,
            input,
            manifest,
            part,
        } => infer(&ctx, &checkpoint, input.as_deref(), manifest.as_deref(), part.as_deref()),
        Command::Eval { manifest, checkpoint } => eval(&ctx, &manifest, &checkpoint),
        Command::Params {
            family,
            mode,
            slices,
            patch,
        } => params(&ctx, family, mode, slices, patch),
        Command::Report { skip_training } => report(&ctx, skip_training),
    }
}

fn phantom(ctx: &Ctx) -> Result<(), Failure> {
    let seed = ctx.cfg.phantom_seed();
    let spec = ctx.cfg.phantom.instantiate(seed)?;
    let dir = ctx.out_dir()?;
    let header = dir.join("phantom.hr.json");
    ctx.fresh(&header)?;
    let (vol, records) = generate_phantom(&spec)?;
    vol.save(&header)?;
    let defects = dir.join("phantom.defects.json");
    write_text(&defects, &serde_json::to_string_pretty(&records).expect("records serialize"))?;
    println!("wrote {} with {} defects", header.display(), records.len());
    ctx.record("phantom", json!({ "phantom": seed }), json!({ "defects": records.len() }))
}

fn degrade_cmd(ctx: &Ctx, input: &Path) -> Result<(), Failure> {
    let seed = ctx.cfg.degrade_seed();
    let spec = DegradationSpec {
        seed,
        ..ctx.cfg.degradation
    };
    let hr = Volume::load(input)?;
    let header = ctx.out_dir()?.join("degraded.json");
    ctx.fresh(&header)?;
    let lr = degrade(&hr, &spec)?;
    lr.save(&header)?;
    println!("wrote {} {:?}", header.display(), lr.dims());
    ctx.record("degrade", json!({ "degrade": seed }), json!({ "input": input }))
}

fn dataset(ctx: &Ctx) -> Result<(), Failure> {
    let cfg = ctx.cfg.dataset_config();
    let manifest = volsr_core::phantom::make_dataset(&cfg, ctx.out_dir()?, ctx.overwrite)?;
    println!("wrote {} parts to {}", manifest.entries.len(), ctx.out.display());
    ctx.record("dataset", json!({ "dataset": cfg.seed }), json!({ "parts": manifest.entries.len() }))
}

fn train_cmd(ctx: &Ctx, manifest_path: &Path) -> Result<(), Failure> {
    let spec = ctx.cfg.network()?.clone();
    let tcfg = ctx.cfg.train_config();
    let manifest = Manifest::load(manifest_path)?;
    let out = ctx.out_dir()?;
    ctx.fresh(&out.join(volsr_core::train::MODEL_FILE))?;
    let outcome = train(&spec, &manifest, &tcfg, out)?;
    let last = outcome.history.last();
    println!(
        "trained {} {} for {} steps; final loss {}; checkpoint {}",
        spec.family,
        spec.dimensionality,
        tcfg.steps,
        last.map_or("n/a".into(), |r| format!("{:.6}", r.total)),
        outcome.checkpoint.display()
    );
    ctx.record(
        "train",
        json!({ "train": tcfg.seed }),
        json!({ "manifest": manifest_path, "n_train": outcome.n_train, "n_validation": outcome.n_validation }),
    )
}

fn infer(ctx: &Ctx, checkpoint: &Path, input: Option<&Path>, manifest: Option<&Path>, part: Option<&str>) -> Result<(), Failure> {
    let net = load_checkpoint(checkpoint)?.network;
    let lr = match (input, manifest, part) {
        (_, Some(m), Some(id)) => {
            let m = Manifest::load(m)?;
            let entry = m
                .entries
                .iter()
                .find(|e| e.id == id)
                .ok_or_else(|| Failure::validation(format!("manifest has no part `{id}`")))?;
            let (lr, hr) = m.load_pair(entry)?;
            normalize_pair(&lr, &hr)?.0
        }
        (Some(path), _, _) => {
            let lr = Volume::load(path)?;
            let (lo, hi) = match ctx.cfg.infer.normalization {
                Some(b) => (b.lo, b.hi),
                None => {
                    let (lo, hi) = lr.min_max();
                    (lo as f64, hi as f64)
                }
            };
            normalize_volume(&lr, lo, hi)?
        }
        _ => return Err(Failure::validation("give --input, or --manifest with --part".into())),
    };
    let header = ctx.out_dir()?.join("sr.json");
    ctx.fresh(&header)?;
    let sr = super_resolve_part(&net, &lr, &ctx.cfg.tiles)?;
    sr.save(&header)?;
    println!("wrote {} {:?}", header.display(), sr.dims());
    ctx.record("infer", json!({}), json!({ "checkpoint": checkpoint }))
}

fn bars(results: &[ModelResult]) -> Vec<PsnrBar> {
    results
        .iter()
        .map(|r| PsnrBar {
            label: r.label.clone(),
            axis: SliceAxis::XZ,
            mean_db: r.xz_psnr_mean_db,
            std_db: r.xz_psnr_std_db,
        })
        .collect()
}

fn write_scores(dir: &Path, results: &[ModelResult]) -> Result<(), Failure> {
    let b = bars(results);
    write_psnr_csv(&dir.join("psnr.csv"), &b)?;
    plot_psnr_bars(&dir.join("psnr.png"), &b)?;
    let det: Vec<_> = results.iter().map(|r| (r.label.clone(), r.detection.clone())).collect();
    write_detection_csv(&dir.join("detection.csv"), &det)?;
    plot_detection(&dir.join("detection.png"), &det)?;
    Ok(())
}

fn eval(ctx: &Ctx, manifest_path: &Path, checkpoints: &[PathBuf]) -> Result<(), Failure> {
    let manifest = Manifest::load(manifest_path)?;
    let part = load_test_part(&manifest, &ctx.cfg.eval)?;
    let hash = ctx.cfg.hash();
    let up = upsample_all(&part.lr, manifest.config.degradation.bin_factor, Interp::Cubic)?;
    let mut results = vec![score_volume(&up, &part, &ctx.cfg.eval, "cubic", &hash)?];
    for (i, path) in checkpoints.iter().enumerate() {
        let net = load_checkpoint(path)?.network;
        let sr = super_resolve_part(&net, &part.lr, &ctx.cfg.tiles)?;
        let label = format!("{}-{}-{i}", net.spec().family, net.spec().dimensionality);
        let mut r = score_volume(&sr, &part, &ctx.cfg.eval, &label, &hash)?;
        r.family = Some(net.spec().family);
        r.mode = Some(net.spec().dimensionality);
        results.push(r);
    }
    let dir = ctx.out_dir()?;
    write_scores(dir, &results)?;
    for r in &results {
        println!(
            "{:<20} XZ PSNR {:>7.3} dB  smallest-bin F1 {}",
            r.label,
            r.xz_psnr_mean_db,
            r.smallest_bin_f1.map_or("n/a".into(), |f| format!("{f:.3}"))
        );
    }
    ctx.record("eval", json!({}), json!({ "manifest": manifest_path, "checkpoints": checkpoints }))
}

fn spec_for(family: Family, mode: Dimensionality, slices: Option<usize>) -> Result<NetworkSpec, Failure> {
    let spec = NetworkSpec {
        in_slices: slices,
        ..NetworkSpec::new(family, mode)
    };
    spec.validate()?;
    Ok(spec)
}

fn params(ctx: &Ctx, family: Family, mode: Dimensionality, slices: Option<usize>, patch: usize) -> Result<(), Failure> {
    let spec = spec_for(family, mode, slices)?;
    let report = spec_parameter_report(&spec)?;
    let mut text = String::new();
    for (name, n) in &report.per_layer {
        let _ = writeln!(text, "{name:<32} {n:>12}");
    }
    let _ = writeln!(text, "{:<32} {:>12}", "total", report.total);
    let delta = match mode {
        Dimensionality::D25 => first_layer_parameter_delta(&NetworkSpec::new(family, Dimensionality::D2), &spec)?,
        _ => report.first_layer_delta_vs_2d,
    };
    let _ = writeln!(
        text,
        "first-layer delta vs 2D: {delta} (kernel {}x{}, {} features)",
        report.kernel_m, report.kernel_n, report.first_layer_features_k
    );
    let mut details = json!({ "report": report, "delta": delta });
    if family == Family::Esrgan {
        let d = discriminator_parameter_count(mode == Dimensionality::D3, patch);
        let _ = writeln!(text, "discriminator at {patch}: {d}");
        let _ = writeln!(text, "generator + discriminator: {}", report.total + d);
        details["discriminator"] = json!(d);
    }
    print!("{text}");
    ctx.record("params", json!({}), details)
}

/// Memory of one sample at the usual 128-voxel output patch.
fn memory_row(spec: &NetworkSpec) -> Result<(u64, u64), Failure> {
    let p = 128 / if spec.family.pre_upsampled() { 1 } else { spec.scale };
    let extent = if spec.dimensionality.is_volumetric() { [p, p, p] } else { [1, p, p] };
    let m = estimate_activation_memory(spec, extent, 1)?;
    Ok((m.total, m.peak_activation_bytes))
}

fn report(ctx: &Ctx, skip_training: bool) -> Result<(), Failure> {
    let mut md = String::from("# volsr comparison\n\n## Parameters and forward memory (one 128-voxel patch, f32)\n\n");
    md.push_str("| family | mode | parameters | delta vs 2D | total memory (MiB) | peak pair (MiB) |\n|---|---|---:|---:|---:|---:|\n");
    let mib = |b: u64| b as f64 / (1024.0 * 1024.0);
    let mut table = BTreeMap::new();
    for family in Family::ALL {
        for mode in Dimensionality::ALL {
            let spec = spec_for(family, mode, None)?;
            let r = spec_parameter_report(&spec)?;
            let (total, peak) = memory_row(&spec)?;
            let _ = writeln!(
                md,
                "| {family} | {mode} | {} | {} | {:.1} | {:.1} |",
                r.total,
                r.first_layer_delta_vs_2d,
                mib(total),
                mib(peak)
            );
            table.insert(format!("{family}-{mode}"), json!({ "parameters": r.total, "memory_bytes": total }));
        }
    }
    let dir = ctx.out_dir()?.to_path_buf();
    let mut details = json!({ "table": table });
    if !skip_training {
        let cfg = ctx.cfg.comparison_config();
        let result = run_comparison(&cfg, &dir, |m| log::info!("{m}"))?;
        md.push_str("\n## Held-out part\n\n| model | XZ PSNR (dB) | smallest-bin F1 |\n|---|---:|---:|\n");
        let mut all = vec![result.cubic.clone()];
        all.extend(result.runs.iter().cloned());
        for r in &all {
            let _ = writeln!(
                md,
                "| {} | {:.3} | {} |",
                r.label,
                r.xz_psnr_mean_db,
                r.smallest_bin_f1.map_or("n/a".into(), |f| format!("{f:.3}"))
            );
        }
        md.push_str("\n| family | 2.5D PSNR wins | 2.5D F1 wins | median 2D | median 2.5D | cubic |\n|---|---:|---:|---:|---:|---:|\n");
        for t in &result.trends {
            let _ = writeln!(
                md,
                "| {} | {}/{} | {}/{} | {:.3} | {:.3} | {:.3} |",
                t.family, t.psnr_wins_25d, t.n_seeds, t.f1_wins_25d, t.n_seeds, t.median_psnr_2d_db, t.median_psnr_25d_db, t.cubic_psnr_db
            );
        }
        write_scores(&dir, &all)?;
        details["comparison_hash"] = json!(result.config_hash);
    }
    let path = dir.join("report.md");
    write_text(&path, &md)?;
    print!("{md}");
    ctx.record("report", json!({ "master": ctx.cfg.seed }), details)
}
