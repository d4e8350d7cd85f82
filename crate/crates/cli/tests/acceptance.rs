//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria 5 to 8 share reconstructions of one reference phantom; each run
//! is computed once and reused.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use maip::autodiff::check::{check_network, op_suite};
use maip::fem::{
    add_noise, element_jacobian, solve_fields, solve_forward, synthesize_measurements, FemMesh, Inclusion,
    PhantomSpec, PixelMap, SensorModel, Shape, Simulation,
};
use maip::linalg::Matrix;
use maip::metrics::{self, evaluate, MetricReport};
use maip::model::{
    build_circular_mask, build_projection, embed, extract, forward, forward_modified, GridStack, ImagingMode,
    PixelGrid, SensitivityMatrix,
};
use maip::net::{best_conditioned_seed, MBANetConfig, NormKind};
use maip::recon::{moving_average, run_maip, tikhonov_lambda_grid, LossKind, ReconConfig, TikhonovSolver};
use maip::{Frames, Reconstruction};
use maip_cli::commands::sweep_noise_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

const SEED_CANDIDATES: std::ops::Range<u64> = 0..16;
const SNRS: [f64; 8] = [20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0];

fn reference_phantom() -> PhantomSpec {
    let circle = |center, radius, conductivity| Inclusion {
        shape: Shape::Circle { center, radius },
        conductivity,
    };
    PhantomSpec {
        background: 2.0,
        frequencies: vec![1e4, 2e4, 5e4, 1e5],
        inclusions: vec![
            circle([-0.4, 0.2], 0.3, vec![2.5, 3.0, 3.5, 4.0]),
            circle([0.35, -0.3], 0.2, vec![3.0, 2.8, 2.6, 2.4]),
        ],
    }
}

/// Reference data plus every reconstruction requested so far.
struct Lab {
    sim: Simulation,
    net: MBANetConfig,
    recon: ReconConfig,
    runs: HashMap<String, Reconstruction>,
}

impl Lab {
    fn new() -> Self {
        let grid = build_circular_mask(32, 32).unwrap();
        let sim = synthesize_measurements(&reference_phantom(), &SensorModel::default(), &grid, ImagingMode::TimeDifference)
            .unwrap();
        let net = MBANetConfig::new(4, 32, 32);
        let seed = best_conditioned_seed(&net, SEED_CANDIDATES).unwrap();
        println!("reference phantom: seed {seed} selected from {SEED_CANDIDATES:?}");
        let recon = ReconConfig {
            seed,
            ..ReconConfig::default()
        };
        Self {
            sim,
            net,
            recon,
            runs: HashMap::new(),
        }
    }

    fn run(&mut self, key: &str, v: &Frames, net: &MBANetConfig, recon: &ReconConfig) -> &Reconstruction {
        if !self.runs.contains_key(key) {
            let r = run_maip(&self.sim.jacobian, v, net, recon).unwrap();
            println!("  run {key}: {:.0} s, final loss {:.4e}", r.wall_time, r.loss_trace.last().unwrap());
            self.runs.insert(key.to_string(), r);
        }
        &self.runs[key]
    }

    fn full(&mut self) -> Reconstruction {
        let (v, net, recon) = (self.sim.frames.clone(), self.net.clone(), self.recon.clone());
        self.run("full", &v, &net, &recon).clone()
    }

    fn noisy(&mut self, snr: f64) -> Reconstruction {
        let v = add_noise(&self.sim.frames, snr, sweep_noise_seed(0, snr)).unwrap();
        let (net, recon) = (self.net.clone(), self.recon.clone());
        self.run(&format!("snr {snr}"), &v, &net, &recon).clone()
    }

    fn score(&self, r: &Reconstruction) -> MetricReport {
        evaluate(&r.stack, &self.sim.truth).unwrap()
    }
}

fn means(r: &MetricReport) -> [(&'static str, f64); 5] {
    [
        ("RIE", MetricReport::mean(&r.rie)),
        ("CC", MetricReport::mean(&r.cc)),
        ("PSNR", MetricReport::mean(&r.psnr)),
        ("MSSIM", MetricReport::mean(&r.mssim)),
        ("PA-MSSIM", r.pa_mssim.unwrap_or(f64::NAN)),
    ]
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let suite = op_suite(1).unwrap();
    let (op_name, op_worst) = suite
        .iter()
        .map(|(n, r)| (n.clone(), r.max_rel_error))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let small = MBANetConfig {
        frames: 2,
        height: 8,
        width: 8,
        base_channels: 4,
        fu_channels: 4,
        ..MBANetConfig::default()
    };
    let mut net_worst: f64 = 0.0;
    let mut probes = 0;
    for (cfg, seed) in [
        (small.clone(), 31),
        (
            MBANetConfig {
                norm: NormKind::Batch,
                ..small.clone()
            },
            41,
        ),
    ] {
        let r = check_network(&cfg, 12, seed).unwrap();
        net_worst = net_worst.max(r.max_rel_error);
        probes += r.probes;
    }
    let secs = start.elapsed().as_secs_f64();
    let min_probes = suite.iter().map(|(_, r)| r.probes).min().unwrap();
    Verdict::new(
        op_worst <= 1e-3 && net_worst <= 1e-3 && secs < 120.0,
        format!(
            "{} ops (>= {min_probes} probes each), worst op {op_name} {op_worst:.2e}; network {probes} probes, worst {net_worst:.2e}; {secs:.1} s",
            suite.len()
        ),
    )
}

fn random_grid(rng: &mut ChaCha8Rng) -> PixelGrid {
    let (h, w) = (rng.random_range(2..12), rng.random_range(2..12));
    let mut mask: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.7)).collect();
    mask[0] = true;
    PixelGrid::from_mask(h, w, mask).unwrap()
}

fn projection_algebra() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut identity_ok = true;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let grid = random_grid(&mut rng);
        let p = build_projection(&grid);
        let (rows, n) = p.shape();
        for a in 0..n {
            for b in 0..n {
                let dot: u32 = (0..rows).map(|r| u32::from(p.entry(r, a) * p.entry(r, b))).sum();
                identity_ok &= dot == u32::from(a == b);
            }
        }
        let m = rng.random_range(1..20);
        let l = rng.random_range(1..4);
        let j = SensitivityMatrix::new(Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0)), p.clone()).unwrap();
        let sigma = Matrix::from_fn(n, l, |_, _| rng.random_range(-1.0..1.0));
        let stack: GridStack<f64> = embed(&sigma, &p).unwrap();
        let a = forward_modified(&j, &stack).unwrap();
        let b = forward(&j, &extract(&stack, &p).unwrap()).unwrap();
        worst = worst.max(a.sub(&b).unwrap().max_abs());
    }
    Verdict::new(
        identity_ok && worst <= 1e-12,
        format!("PᵀP = I exactly: {identity_ok}; max |forward_modified − forward∘extract| = {worst:.1e} over 100 instances"),
    )
}

fn fem_sanity() -> Verdict {
    let s = SensorModel::default();
    let mesh = FemMesh::build(&s).unwrap();
    let v = solve_forward(&s, &mesh).unwrap();
    let protocol = s.protocol();
    let index: HashMap<(usize, usize), usize> =
        protocol.iter().enumerate().map(|(i, m)| ((m.drive, m.sense), i)).collect();
    let scale = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let reciprocity = protocol
        .iter()
        .map(|m| (v[index[&(m.drive, m.sense)]] - v[index[&(m.sense, m.drive)]]).abs() / scale)
        .fold(0.0, f64::max);

    let grid = build_circular_mask(32, 32).unwrap();
    let map = PixelMap::new(&mesh, &grid, s.radius);
    let j = map.aggregate(&element_jacobian(&s, &mesh, &solve_fields(&s, &mesh).unwrap()));
    let mut worst: f64 = 0.0;
    for (r, c) in [(16, 3), (10, 12), (20, 25), (5, 16)] {
        let k = grid.pixel_at_slot(r * 32 + c).unwrap();
        let delta = 0.01 * s.background_conductivity;
        let mut pix = vec![0.0; grid.pixel_count()];
        pix[k] = delta;
        let sigma: Vec<f64> = map.to_elements(&pix).iter().zip(mesh.conductivity()).map(|(d, s0)| s0 + d).collect();
        let v1 = solve_forward(&s, &mesh.with_conductivity(sigma).unwrap()).unwrap();
        let col = j.column(k);
        let mut order: Vec<usize> = (0..col.len()).collect();
        order.sort_by(|&a, &b| col[b].abs().total_cmp(&col[a].abs()));
        for &i in &order[..20] {
            let predicted = col[i] * delta;
            worst = worst.max(((v1[i] - v[i]) - predicted).abs() / predicted.abs());
        }
    }
    Verdict::new(
        reciprocity <= 1e-10 && worst <= 0.05 && protocol.len() == 208 && v.len() == 208,
        format!(
            "reciprocity {reciprocity:.1e}; Jacobian vs perturbation worst {:.2}% on top-20 entries; {} readings",
            worst * 100.0,
            protocol.len()
        ),
    )
}

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let a: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lib = metrics::mssim(&a, &b, 16, 16).unwrap();
        worst = worst.max((lib - metrics::mssim_reference(&a, &b, 16, 16)).abs());
    }
    // dyadic data keeps every intermediate exactly representable
    let g = [0.5, 1.0, -0.5, 2.0];
    let affine: Vec<f64> = g.iter().map(|v| 2.0 * v + 3.0).collect();
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    let twice: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
    let mut exact = vec![
        ("rie(g,g)=0", metrics::rie(&g, &g).unwrap() == 0.0),
        ("rie(0,g)=1", metrics::rie(&[0.0; 4], &g).unwrap() == 1.0),
        ("rie(2g,g)=1", metrics::rie(&twice, &g).unwrap() == 1.0),
        ("cc(2g+3,g)=1", metrics::cc(&affine, &g).unwrap() == 1.0),
        ("cc(-g,g)=-1", metrics::cc(&neg, &g).unwrap() == -1.0),
        ("psnr unit error=0", metrics::psnr(&[1.0; 4], &[0.0; 4], 2, 2).unwrap() == 0.0),
        ("psnr equal=cap", metrics::psnr(&g, &g, 2, 2).unwrap() == metrics::PSNR_CAP),
    ];
    // 0.4 has no exact binary representation, so this case is within one ulp
    let e = 0.1f64.sqrt();
    exact.push(("psnr ‖e‖²=0.4 → 0.25", (metrics::psnr(&[e; 4], &[0.0; 4], 2, 2).unwrap() - 0.25).abs() <= 1e-15));
    let failed: Vec<&str> = exact.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    Verdict::new(
        worst <= 1e-8 && failed.is_empty(),
        format!(
            "MSSIM vs naive max diff {worst:.1e} on 50 pairs; closed forms {}/{} exact{}",
            exact.len() - failed.len(),
            exact.len(),
            if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") }
        ),
    )
}

fn reconstruction_quality(lab: &mut Lab) -> Verdict {
    let full = lab.full();
    let report = lab.score(&full);
    let ratio = full.loss_trace.last().unwrap() / full.loss_trace[0];
    let solver = TikhonovSolver::new(&lab.sim.jacobian, &lab.sim.frames).unwrap();
    let mut best = (f64::NEG_INFINITY, 0.0, Vec::new());
    for lambda in tikhonov_lambda_grid(&solver, -6, 0) {
        let stack = solver.solve(lambda).unwrap();
        let cc = evaluate(&stack, &lab.sim.truth).unwrap().cc;
        let mean = MetricReport::mean(&cc);
        if mean > best.0 {
            best = (mean, lambda, cc);
        }
    }
    let mean_cc = MetricReport::mean(&report.cc);
    let min_cc = report.cc.iter().copied().fold(f64::INFINITY, f64::min);
    Verdict::new(
        min_cc >= 0.8 && ratio <= 0.1 && mean_cc > best.0 && full.wall_time <= 900.0,
        format!(
            "CC {} (mean {mean_cc:.3}); loss ratio {ratio:.4}; Tikhonov best mean CC {:.3} at λ={:.2e} {}; {:.0} s",
            fmt_list(&report.cc),
            best.0,
            best.1,
            fmt_list(&best.2),
            full.wall_time
        ),
    )
}

fn inter_frequency_consistency(lab: &mut Lab) -> Verdict {
    let v = lab.sim.frames.replicate_frame(0, 4).unwrap();
    let (net, recon) = (lab.net.clone(), lab.recon.clone());
    let r = lab.run("replicated", &v, &net, &recon).clone();
    let (norm, _) = metrics::max_normalize(r.stack.values()).unwrap();
    let grid = r.stack.grid().clone();
    let g = maip::model::ConductivityStack::new(grid.clone(), norm).unwrap().to_grid();
    let frames: Vec<&[f64]> = (0..4).map(|l| g.frame(l)).collect();
    let pa = metrics::pa_mssim(&frames, grid.height(), grid.width()).unwrap();
    Verdict::new(pa >= 0.95, format!("PA-MSSIM {pa:.4} over 4 frames fitted to one replicated column"))
}

/// Windows of `moving_average` starting in the final two-thirds must not
/// increase.
fn smooth_tail(trace: &[f64]) -> (bool, usize) {
    let ma = moving_average(trace, 50);
    let from = trace.len() / 3;
    let rises = ma.windows(2).skip(from).filter(|w| w[1] > w[0]).count();
    (rises == 0, rises)
}

fn noise_robustness(lab: &mut Lab) -> Verdict {
    let clean = lab.full();
    let base = means(&lab.score(&clean));
    let mut detail = String::new();
    let mut pass = true;
    let (ok, rises) = smooth_tail(&clean.loss_trace);
    writeln!(detail, "      noise-free: {base:.3?}, moving-average rises {rises}").unwrap();
    pass &= ok;
    let mut at = HashMap::new();
    for snr in SNRS {
        let r = lab.noisy(snr);
        let m = means(&lab.score(&r));
        let worst = m
            .iter()
            .zip(&base)
            .map(|((_, x), (_, b))| (x - b).abs() / b.abs())
            .fold(0.0, f64::max);
        let (ok, rises) = smooth_tail(&r.loss_trace);
        pass &= ok && worst <= 0.15;
        writeln!(detail, "      {snr} dB: worst relative change {:.1}%, moving-average rises {rises}", worst * 100.0)
            .unwrap();
        at.insert(snr as u64, m);
    }
    let drift = at[&40]
        .iter()
        .zip(&at[&90])
        .map(|((_, x), (_, y))| (x - y).abs() / y.abs())
        .fold(0.0, f64::max);
    write!(detail, "      40 dB vs 90 dB: worst relative difference {:.1}%", drift * 100.0).unwrap();
    Verdict::new(pass, format!("SNR 20-90 dB within 15% and smooth loss tails\n{detail}"))
}

fn ablation_directionality(lab: &mut Lab) -> Verdict {
    let full = lab.full();
    let full_report = lab.score(&full);
    let full_rie = MetricReport::mean(&full_report.rie);
    let full_mssim = MetricReport::mean(&full_report.mssim);
    let mut pass = true;
    let mut parts = vec![format!("full RIE {full_rie:.3}")];
    let v = lab.sim.frames.clone();
    for (name, net) in [
        (
            "no-ba",
            MBANetConfig {
                branch_attention: false,
                ..lab.net.clone()
            },
        ),
        (
            "single-branch",
            MBANetConfig {
                multi_branch: false,
                ..lab.net.clone()
            },
        ),
        (
            "batch-norm",
            MBANetConfig {
                norm: NormKind::Batch,
                ..lab.net.clone()
            },
        ),
    ] {
        let recon = lab.recon.clone();
        let r = lab.run(name, &v, &net, &recon).clone();
        let rie = MetricReport::mean(&lab.score(&r).rie);
        pass &= rie >= full_rie * 0.98;
        parts.push(format!("{name} {rie:.3}"));
    }
    let recon = ReconConfig {
        loss: LossKind::Frobenius,
        ..lab.recon.clone()
    };
    let net = lab.net.clone();
    let fro = lab.run("frobenius", &v, &net, &recon).clone();
    let fro_mssim = MetricReport::mean(&lab.score(&fro).mssim);
    pass &= full_mssim >= fro_mssim;
    Verdict::new(
        pass,
        format!("{}; MSSIM l1 {full_mssim:.3} vs frobenius {fro_mssim:.3}", parts.join(", ")),
    )
}

fn maip_bin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_maip"))
        .args(args)
        .env("MAIP_QUIET", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Paths of differing files, ignoring the manifests' wall time.
fn differences(a: &Path, b: &Path, out: &mut Vec<String>) {
    for entry in std::fs::read_dir(a).unwrap() {
        let name = entry.unwrap().file_name();
        let (x, y) = (a.join(&name), b.join(&name));
        if x.is_dir() {
            differences(&x, &y, out);
        } else if name == "manifest.json" {
            let strip = |p: &Path| {
                let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
                v.as_object_mut().unwrap().remove("wall_time");
                v["args"].as_object_mut().unwrap().remove("out");
                v
            };
            if !y.exists() || strip(&x) != strip(&y) {
                out.push(x.display().to_string());
            }
        } else if std::fs::read(&x).ok() != std::fs::read(&y).ok() {
            out.push(x.display().to_string());
        }
    }
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    std::fs::write(p("phantom.json"), serde_json::to_string(&reference_phantom()).unwrap()).unwrap();
    std::fs::write(
        p("net.json"),
        r#"{"net": {"base_channels": 4, "fu_channels": 4, "encoder_depth": 2, "aspp_dilations": [1, 2]}}"#,
    )
    .unwrap();
    let sim = |f: &str| format!("{}/{f}", p("sim"));
    let data = [
        "--jacobian".to_string(),
        sim("jacobian.csv"),
        "--measurements".into(),
        sim("measurements.csv"),
        "--mask".into(),
        sim("mask.txt"),
        "--config".into(),
        p("net.json"),
    ];
    let with = |cmd: &str, extra: &[&str], out: &str| {
        let mut v: Vec<String> = vec![cmd.into()];
        v.extend(data.iter().cloned());
        v.extend(extra.iter().map(|s| s.to_string()));
        v.extend(["--out".into(), p(out)]);
        v
    };
    let truth = sim("truth.csv");
    let commands: Vec<(String, Vec<String>)> = vec![
        (
            "simulate".into(),
            ["simulate", "--phantom", &p("phantom.json"), "--snr", "40", "--mesh-rings", "16", "--out", &p("sim")]
                .map(String::from)
                .to_vec(),
        ),
        ("reconstruct".into(), with("reconstruct", &["--iterations", "40"], "rec")),
        (
            "evaluate".into(),
            ["evaluate", "--pred", &format!("{}/sigma.csv", p("rec")), "--truth", &truth, "--mask", &sim("mask.txt"), "--out", &p("ev")]
                .map(String::from)
                .to_vec(),
        ),
        (
            "noise-sweep".into(),
            with("noise-sweep", &["--snr-list", "30,60", "--iterations", "10", "--truth", &truth], "sweep"),
        ),
        ("ablate".into(), with("ablate", &["--iterations", "10", "--truth", &truth], "abl")),
    ];
    let mut failures = Vec::new();
    for (name, args) in &commands {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = args.last().unwrap().clone();
        let again = format!("{out}-rerun");
        let result = maip_bin(&refs).and_then(|_| {
            maip_bin(&["rerun", "--manifest", &format!("{out}/manifest.json"), "--out", &again])
        });
        match result {
            Ok(()) => {
                let mut diff = Vec::new();
                differences(Path::new(&out), Path::new(&again), &mut diff);
                if !diff.is_empty() {
                    failures.push(format!("{name}: {diff:?}"));
                }
            }
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    Verdict::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} commands rerun from their manifests, outputs identical", commands.len())
        } else {
            failures.join("; ")
        },
    )
}

fn lab(slot: &mut Option<Lab>) -> &mut Lab {
    slot.get_or_insert_with(Lab::new)
}

fn main() {
    let mut slot: Option<Lab> = None;
    let mut results = Vec::new();
    let mut run = |i: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {i}: {} - {name} ({:.0} s): {}",
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
        results.push(v.pass);
    };
    run(1, "gradient correctness", &mut gradients);
    run(2, "projection algebra", &mut projection_algebra);
    run(3, "FEM sanity", &mut fem_sanity);
    run(4, "metric oracle equivalence", &mut metric_oracles);
    run(5, "desk-scale reconstruction quality", &mut || reconstruction_quality(lab(&mut slot)));
    run(6, "inter-frequency consistency", &mut || inter_frequency_consistency(lab(&mut slot)));
    run(7, "noise robustness", &mut || noise_robustness(lab(&mut slot)));
    run(8, "ablation directionality", &mut || ablation_directionality(lab(&mut slot)));
    run(9, "determinism", &mut determinism);
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
