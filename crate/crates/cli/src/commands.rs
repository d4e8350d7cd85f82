use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use maip::fem::{add_noise, synthesize_measurements, PhantomSpec, SensorModel};
use maip::io;
use maip::metrics::{evaluate, MetricReport};
use maip::model::{build_circular_mask, build_projection, ConductivityStack, ImagingMode, PixelGrid};
use maip::net::{best_conditioned_seed, MBANetConfig, NormKind};
use maip::recon::{loss_trace_csv, run_maip_observed, LossKind, ReconConfig};
use maip::{Frames, Jacobian, Matrix, Reconstruction, Stack};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::error::{CliError, CliResult, ExitCode};
use crate::manifest::{version, Inputs, RunManifest};
use crate::output::{check_out, Staging};

/// Runs a parsed command and returns the committed output directory.
pub fn run(mut command: Command) -> CliResult<PathBuf> {
    command
        .absolutize()
        .map_err(|e| CliError::bad_input(format!("cannot resolve paths: {e}")))?;
    if let Command::Rerun(args) = command {
        return rerun(&args);
    }
    let out = command.output_mut().clone();
    check_out(&out.out, out.force)?;
    let start = Instant::now();
    let mut ctx = Context::default();
    let staging = match &mut command {
        Command::Simulate(a) => simulate(a, &mut ctx)?,
        Command::Reconstruct(a) => reconstruct(a, &mut ctx)?,
        Command::Evaluate(a) => evaluate_cmd(a, &mut ctx)?,
        Command::NoiseSweep(a) => noise_sweep(a, &mut ctx)?,
        Command::Ablate(a) => ablate(a, &mut ctx)?,
        Command::Rerun(_) => unreachable!("handled above"),
    };
    let manifest = RunManifest {
        command: command.name().into(),
        args: serde_json::to_value(&command).expect("arguments serialize"),
        resolved: ctx.resolved,
        seeds: ctx.seeds,
        inputs: ctx.inputs.0,
        version: version(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    manifest.write(staging.path())?;
    staging.commit()
}

fn rerun(args: &RerunArgs) -> CliResult<PathBuf> {
    let manifest = RunManifest::load(&args.manifest)?;
    manifest.verify_inputs()?;
    let mut command: Command = serde_json::from_value(manifest.args.clone())
        .map_err(|e| CliError::bad_input(format!("{}: unusable arguments: {e}", args.manifest.display())))?;
    if matches!(command, Command::Rerun(_)) {
        return Err(CliError::bad_input("a manifest cannot record a rerun"));
    }
    *command.output_mut() = args.output.clone();
    run(command)
}

#[derive(Default)]
struct Context {
    inputs: Inputs,
    seeds: BTreeMap<String, u64>,
    resolved: serde_json::Value,
}

fn quiet() -> bool {
    std::env::var_os("MAIP_QUIET").is_some_and(|v| !v.is_empty() && v != "0")
}

fn progress(msg: impl AsRef<str>) {
    if !quiet() {
        eprintln!("{}", msg.as_ref());
    }
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_matrix(path: &Path, m: &Matrix) -> CliResult<()> {
    io::write_matrix(path, m).map_err(CliError::from)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    write(path, &serde_json::to_string_pretty(value).expect("serializable"))
}

fn simulate(a: &mut SimulateArgs, ctx: &mut Context) -> CliResult<Staging> {
    ctx.inputs.add("phantom", &a.phantom)?;
    let text = io::read_text(&a.phantom).map_err(CliError::from_input)?;
    let phantom = PhantomSpec::from_json(&text)?;
    let sensor = SensorModel {
        radius: a.radius,
        electrode_count: a.electrodes,
        electrode_coverage: a.coverage,
        background_conductivity: phantom.background,
        current: a.current,
        mesh_rings: a.mesh_rings,
    };
    let mode = match a.mode {
        ModeArg::Td => ImagingMode::TimeDifference,
        ModeArg::Fd => {
            let reference_hz = *a.reference_frequency.get_or_insert(phantom.frequencies[0]);
            ImagingMode::FrequencyDifference { reference_hz }
        }
    };
    let grid = build_circular_mask(a.height, a.width)?;
    progress(format!("simulating {} frequencies on a {}x{} grid", phantom.frequencies.len(), a.height, a.width));
    let sim = synthesize_measurements(&phantom, &sensor, &grid, mode)?;
    let frames = match a.snr {
        Some(snr) => add_noise(&sim.frames, snr, a.noise_seed)?,
        None => sim.frames,
    };
    if a.snr.is_some() {
        ctx.seeds.insert("noise".into(), a.noise_seed);
    }
    ctx.resolved = serde_json::json!({ "sensor": sensor, "mode": a.mode, "phantom": phantom });

    let staging = Staging::begin(&a.output.out, a.output.force)?;
    let jname = if a.binary { "jacobian.bin" } else { "jacobian.csv" };
    write_matrix(&staging.join(jname), sim.jacobian.matrix())?;
    io::write_measurements(&staging.join("measurements.csv"), &frames)?;
    io::write_mask(&staging.join("mask.txt"), &grid)?;
    write_matrix(&staging.join("truth.csv"), sim.truth.values())?;
    write_json(&staging.join("sensor.json"), &sensor)?;
    Ok(staging)
}

/// Optional JSON configuration for reconstruction commands.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub recon: ReconConfig,
    pub net: MBANetConfig,
}

/// Fully resolved reconstruction settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub recon: ReconConfig,
    pub net: MBANetConfig,
}

fn resolve(opts: &mut ReconOpts, frames: usize, height: usize, width: usize, inputs: &mut Inputs) -> CliResult<Resolved> {
    let mut file_seed = None;
    let cfg = match &opts.config {
        Some(path) => {
            inputs.add("config", path)?;
            let raw: serde_json::Value = io::read_json(path).map_err(CliError::from_input)?;
            for (key, data) in [("frames", frames), ("height", height), ("width", width)] {
                if let Some(v) = raw.pointer(&format!("/net/{key}")) {
                    if v.as_u64() != Some(data as u64) {
                        return Err(CliError::new(
                            ExitCode::DimensionMismatch,
                            format!("config net.{key} = {v} but the inputs have {data}"),
                        ));
                    }
                }
            }
            file_seed = raw.pointer("/recon/seed").and_then(serde_json::Value::as_u64);
            serde_json::from_value::<RunConfig>(raw)
                .map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    let mut recon = cfg.recon;
    let mut net = MBANetConfig {
        frames,
        height,
        width,
        ..cfg.net
    };
    if let Some(t) = opts.iterations {
        recon.iterations = t;
    }
    if let Some(lr) = opts.lr {
        recon.lr = lr;
    }
    if let Some(loss) = opts.loss {
        recon.loss = loss;
    }
    if let Some(norm) = opts.norm {
        net.norm = norm;
    }
    if opts.no_attention {
        net.branch_attention = false;
    }
    if opts.single_branch {
        net.multi_branch = false;
    }
    net.validate()?;
    recon.seed = match opts.seed.or(file_seed) {
        Some(s) => s,
        None => {
            if opts.seed_candidates == 0 {
                return Err(CliError::bad_input("--seed-candidates must be positive"));
            }
            best_conditioned_seed(&net, 0..opts.seed_candidates)?
        }
    };
    recon.validate()?;
    opts.seed = Some(recon.seed);
    Ok(Resolved { recon, net })
}

fn load_data(d: &DataArgs, inputs: &mut Inputs) -> CliResult<(Jacobian, Frames)> {
    inputs.add("jacobian", &d.jacobian)?;
    inputs.add("measurements", &d.measurements)?;
    inputs.add("measurements_sidecar", &io::sidecar_path(&d.measurements))?;
    inputs.add("mask", &d.mask)?;
    let grid = io::read_mask(&d.mask).map_err(CliError::from_input)?;
    let j = io::read_matrix(&d.jacobian).map_err(CliError::from_input)?;
    let v = io::read_measurements(&d.measurements).map_err(CliError::from_input)?;
    let j = Jacobian::new(j, build_projection(&grid))?;
    if v.measurement_count() != j.measurement_count() {
        return Err(CliError::new(
            ExitCode::DimensionMismatch,
            format!(
                "sensitivity matrix has {} rows but measurements have {}",
                j.measurement_count(),
                v.measurement_count()
            ),
        ));
    }
    Ok((j, v))
}

fn load_stack(path: &Path, grid: &PixelGrid, name: &str, inputs: &mut Inputs) -> CliResult<Stack> {
    inputs.add(name, path)?;
    let m = io::read_matrix(path).map_err(CliError::from_input)?;
    Ok(ConductivityStack::new(grid.clone(), m)?)
}

fn reconstruct_once(j: &Jacobian, v: &Frames, r: &Resolved, label: &str) -> CliResult<Reconstruction> {
    let every = (r.recon.iterations / 10).max(1);
    let result = run_maip_observed(j, v, &r.net, &r.recon, |i, loss| {
        if i == 0 || (i + 1) % every == 0 {
            progress(format!("{label}iteration {}/{} loss {loss:.6e}", i + 1, r.recon.iterations));
        }
    })?;
    Ok(result)
}

/// Writes the stack, previews, loss trace, attention and optional metrics.
fn write_reconstruction(
    dir: &Path,
    result: &Reconstruction,
    png_scale: usize,
    truth: Option<&Stack>,
) -> CliResult<Option<MetricReport>> {
    write_matrix(&dir.join("sigma.csv"), result.stack.values())?;
    write(&dir.join("loss.csv"), &loss_trace_csv(&result.loss_trace))?;
    maip::render::render_stack(&result.stack, dir, png_scale)?;
    if let Some(att) = &result.attention {
        write_matrix(&dir.join("attention_a.csv"), &att.a)?;
        write_matrix(&dir.join("attention_mixing.csv"), &att.mixing())?;
        let l = att.w.len();
        write_matrix(&dir.join("attention_w.csv"), &Matrix::from_vec(l, 1, att.w.clone())?)?;
    }
    let report = match truth {
        Some(t) => {
            let report = evaluate(&result.stack, t)?;
            write_json(&dir.join("metrics.json"), &report)?;
            write(&dir.join("metrics.csv"), &report.to_csv())?;
            Some(report)
        }
        None => None,
    };
    Ok(report)
}

fn reconstruct(a: &mut ReconstructArgs, ctx: &mut Context) -> CliResult<Staging> {
    let (j, v) = load_data(&a.data, &mut ctx.inputs)?;
    let grid = j.projection().grid().clone();
    let r = resolve(&mut a.recon, v.frame_count(), grid.height(), grid.width(), &mut ctx.inputs)?;
    ctx.seeds.insert("init".into(), r.recon.seed);
    ctx.seeds.insert("noise_input".into(), r.recon.noise_seed());
    ctx.resolved = serde_json::to_value(&r).expect("serializable");
    let result = reconstruct_once(&j, &v, &r, "")?;
    let staging = Staging::begin(&a.output.out, a.output.force)?;
    write_reconstruction(staging.path(), &result, a.recon.png_scale, None)?;
    write_json(&staging.join("config.json"), &r)?;
    Ok(staging)
}

const SUMMARY_HEADER: &str = "rie,cc,psnr,mssim,pa_mssim";

/// Frame means of each metric, comma separated.
fn summary(report: &MetricReport) -> String {
    format!(
        "{},{},{},{},{}",
        MetricReport::mean(&report.rie),
        MetricReport::mean(&report.cc),
        MetricReport::mean(&report.psnr),
        MetricReport::mean(&report.mssim),
        report.pa_mssim.map(|v| v.to_string()).unwrap_or_default()
    )
}

fn evaluate_cmd(a: &mut EvaluateArgs, ctx: &mut Context) -> CliResult<Staging> {
    ctx.inputs.add("mask", &a.mask)?;
    let grid = io::read_mask(&a.mask).map_err(CliError::from_input)?;
    let truth = load_stack(&a.truth, &grid, "truth", &mut ctx.inputs)?;
    if let Some(pred_path) = &a.pred {
        let pred = load_stack(pred_path, &grid, "pred", &mut ctx.inputs)?;
        let report = evaluate(&pred, &truth)?;
        let staging = Staging::begin(&a.output.out, a.output.force)?;
        write_json(&staging.join("metrics.json"), &report)?;
        write(&staging.join("metrics.csv"), &report.to_csv())?;
        return Ok(staging);
    }
    let runs = a.runs.as_ref().expect("clap requires --pred or --runs");
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(runs)
        .map_err(|e| CliError::bad_input(format!("{}: {e}", runs.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("sigma.csv").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::bad_input(format!("no run directories with sigma.csv under {}", runs.display())));
    }
    let mut csv = format!("run,{SUMMARY_HEADER}\n");
    let mut reports = BTreeMap::new();
    for dir in &dirs {
        let name = dir.file_name().expect("directory entry").to_string_lossy().into_owned();
        let pred = load_stack(&dir.join("sigma.csv"), &grid, &format!("pred:{name}"), &mut ctx.inputs)?;
        let report = evaluate(&pred, &truth)?;
        writeln!(csv, "{name},{}", summary(&report)).expect("string write");
        reports.insert(name, report);
    }
    let staging = Staging::begin(&a.output.out, a.output.force)?;
    write(&staging.join("batch.csv"), &csv)?;
    write_json(&staging.join("batch.json"), &reports)?;
    Ok(staging)
}

/// Noise seed for one SNR level; independent of the order of the list.
pub fn sweep_noise_seed(base: u64, snr_db: f64) -> u64 {
    base ^ snr_db.to_bits()
}

/// One line of an aggregate table: `status,final_loss,metrics...`.
fn outcome_row(outcome: &CliResult<(Reconstruction, Option<MetricReport>)>) -> String {
    match outcome {
        Ok((result, report)) => format!(
            "ok,{},{}",
            result.loss_trace.last().copied().unwrap_or(f64::NAN),
            report.as_ref().map(summary).unwrap_or_else(|| ",,,,".into())
        ),
        Err(e) => format!("\"failed: {}\",,,,,,", e.message.replace('"', "'")),
    }
}

fn noise_sweep(a: &mut NoiseSweepArgs, ctx: &mut Context) -> CliResult<Staging> {
    if a.snr_list.is_empty() || a.snr_list.iter().any(|s| !s.is_finite()) {
        return Err(CliError::bad_input("--snr-list needs finite SNR values"));
    }
    let (j, v) = load_data(&a.data, &mut ctx.inputs)?;
    let grid = j.projection().grid().clone();
    let truth = match &a.truth {
        Some(p) => Some(load_stack(p, &grid, "truth", &mut ctx.inputs)?),
        None => None,
    };
    let r = resolve(&mut a.recon, v.frame_count(), grid.height(), grid.width(), &mut ctx.inputs)?;
    ctx.seeds.insert("init".into(), r.recon.seed);
    ctx.seeds.insert("noise_base".into(), a.noise_seed);
    ctx.resolved = serde_json::to_value(&r).expect("serializable");

    let staging = Staging::begin(&a.output.out, a.output.force)?;
    let mut csv = format!("snr_db,status,final_loss,{SUMMARY_HEADER}\n");
    for &snr in &a.snr_list {
        let dir = staging.join(format!("snr_{snr}"));
        std::fs::create_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
        let outcome = add_noise(&v, snr, sweep_noise_seed(a.noise_seed, snr))
            .map_err(CliError::from)
            .and_then(|noisy| reconstruct_once(&j, &noisy, &r, &format!("[{snr} dB] ")))
            .and_then(|result| {
                let report = write_reconstruction(&dir, &result, a.recon.png_scale, truth.as_ref())?;
                Ok((result, report))
            });
        if let Err(e) = &outcome {
            progress(format!("[{snr} dB] failed: {e}"));
            write(&dir.join("error.txt"), &format!("{}\n", e.message))?;
        }
        writeln!(csv, "{snr},{}", outcome_row(&outcome)).expect("string write");
    }
    write(&staging.join("sweep.csv"), &csv)?;
    Ok(staging)
}

/// Full model followed by one variant per removed component.
pub fn ablation_variants(base: &Resolved) -> Vec<(&'static str, Resolved)> {
    let with = |f: &dyn Fn(&mut Resolved)| {
        let mut r = base.clone();
        f(&mut r);
        r
    };
    vec![
        ("full", base.clone()),
        ("no-ba", with(&|r| r.net.branch_attention = false)),
        ("single-branch", with(&|r| r.net.multi_branch = false)),
        ("batch-norm", with(&|r| r.net.norm = NormKind::Batch)),
        ("frobenius", with(&|r| r.recon.loss = LossKind::Frobenius)),
    ]
}

fn ablate(a: &mut AblateArgs, ctx: &mut Context) -> CliResult<Staging> {
    let (j, v) = load_data(&a.data, &mut ctx.inputs)?;
    let grid = j.projection().grid().clone();
    let truth = match &a.truth {
        Some(p) => Some(load_stack(p, &grid, "truth", &mut ctx.inputs)?),
        None => None,
    };
    let r = resolve(&mut a.recon, v.frame_count(), grid.height(), grid.width(), &mut ctx.inputs)?;
    ctx.seeds.insert("init".into(), r.recon.seed);
    let variants = ablation_variants(&r);
    ctx.resolved = serde_json::to_value(variants.iter().map(|(n, v)| (*n, v)).collect::<BTreeMap<_, _>>())
        .expect("serializable");

    let staging = Staging::begin(&a.output.out, a.output.force)?;
    let mut csv = format!("variant,status,final_loss,{SUMMARY_HEADER}\n");
    for (name, variant) in &variants {
        let dir = staging.join(name);
        std::fs::create_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
        let outcome = reconstruct_once(&j, &v, variant, &format!("[{name}] ")).and_then(|result| {
            let report = write_reconstruction(&dir, &result, a.recon.png_scale, truth.as_ref())?;
            Ok((result, report))
        });
        if let Err(e) = &outcome {
            progress(format!("[{name}] failed: {e}"));
            write(&dir.join("error.txt"), &format!("{}\n", e.message))?;
        }
        writeln!(csv, "{name},{}", outcome_row(&outcome)).expect("string write");
    }
    write(&staging.join("ablation.csv"), &csv)?;
    Ok(staging)
}
