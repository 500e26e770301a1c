//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsfc::config::RunConfig;
use tsfc::fuzzy::{build_vertex_models, compute_bounds, StateRanges, TsModel};
use tsfc::numerics::{sym_eigen, SymMatrix, DEFAULT_EIGEN_TOL};
use tsfc::plant::{Plant, RobotState, STATE_DIM};
use tsfc::sim::{lyapunov_check, settling_time, simulate, SimConfig, Trajectory};
use tsfc::synth::{
    flip_largest, load_certificate, synthesize, verify_certificate, Certificate, CertificateDocument,
    Q_POSITIVE_LABEL,
};

const SAMPLES: usize = 1000;
const SAMPLE_SEED: u64 = 20_240_601;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sample_states(ranges: &StateRanges) -> Vec<RobotState> {
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
    (0..SAMPLES)
        .map(|_| {
            let mut x = [0.0; STATE_DIM];
            for (i, v) in x.iter_mut().enumerate() {
                let [lo, hi] = if i < 3 { ranges.position } else { ranges.velocity };
                *v = rng.gen_range(lo..=hi);
            }
            RobotState(x)
        })
        .collect()
}

fn default_model(plant: &Plant) -> TsModel {
    let bounds = compute_bounds(&StateRanges::default(), plant).unwrap().bounds;
    build_vertex_models(&bounds, plant).unwrap()
}

fn sector_exactness() -> Outcome {
    let plant = Plant::default();
    let model = default_model(&plant);
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED + 1);
    let mut worst = 0.0f64;
    for x in sample_states(&StateRanges::default()) {
        let tau = rng.gen_range(-1e3..1e3);
        let f = plant.dynamics(&x, tau);
        let mut lin = model.blend(&x, &plant).mul_vec(&x.0);
        lin[3] += model.input_column[(3, 0)] * tau;
        let fnorm = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let res = lin.iter().zip(f).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(res / (1.0 + fnorm));
    }
    check(worst <= 1e-9, format!("max relative residual {worst:.3e} (limit 1e-9)"))
}

fn partition_of_unity() -> Outcome {
    let plant = Plant::default();
    let model = default_model(&plant);
    let (mut dev, mut min_w) = (0.0f64, f64::INFINITY);
    for x in sample_states(&StateRanges::default()) {
        let w = model.weights(&x, &plant);
        dev = dev.max((w.sum() - 1.0).abs());
        min_w = w.0.iter().fold(min_w, |m, v| m.min(*v));
    }
    check(
        dev <= 1e-12 && min_w >= -1e-15,
        format!("max |sum - 1| {dev:.3e}, min weight {min_w:.3e}"),
    )
}

/// The certificate as reloaded from disk, shared by criteria 3 to 8.
struct Loaded {
    doc: CertificateDocument,
    cfg: RunConfig,
    cert: Certificate,
    model: TsModel,
    shrink_steps: usize,
}

fn certificate_validity(dir: &Path, slot: &mut Option<Loaded>) -> Outcome {
    let cfg = RunConfig::default();
    let outcome = synthesize(&cfg, &mut |m| eprintln!("  synthesize: {m}")).map_err(|e| e.to_string())?;
    let path = dir.join("certificate.json");
    fs::write(&path, outcome.document.to_json()).map_err(|e| e.to_string())?;

    let doc = CertificateDocument::from_json(&fs::read_to_string(&path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let (cert, model) = load_certificate(&doc, &doc.config).map_err(|e| e.to_string())?;
    let s = model.vertex_matrices.iter().map(|a| a.norm_inf()).fold(0.0, f64::max);
    let threshold = 1e-6 * s;
    let report = verify_certificate(&cert, &model, threshold);
    let blocks = report.margins.iter().filter(|m| m.label != Q_POSITIVE_LABEL).count();
    let detail = format!(
        "{blocks} blocks, worst {:.4e}, lambda_min(Q) {:.4e}, threshold 1e-6*s = {threshold:.4e}, {} range contraction(s)",
        report.worst_block(),
        report.q_margin(),
        outcome.shrink_steps
    );
    let ok = report.passed && blocks == 136 && (doc.solver.threshold() - threshold).abs() <= 1e-12 * threshold;
    *slot = Some(Loaded {
        cfg: doc.config.clone(),
        doc,
        cert,
        model,
        shrink_steps: outcome.shrink_steps,
    });
    check(ok, detail)
}

/// Simulation settings with x0 pulled into the certified box when needed.
fn sim_config(l: &Loaded) -> SimConfig {
    let mut sim = l.cfg.sim.clone();
    if l.shrink_steps > 0 {
        let r = &l.doc.state_ranges;
        let full = StateRanges::default();
        let factor = ((r.position[1] - r.position[0]) / (full.position[1] - full.position[0]))
            .min((r.velocity[1] - r.velocity[0]) / (full.velocity[1] - full.velocity[0]));
        println!("  note: certificate needed shrunk ranges; x0 scaled by {factor:.6}");
        sim.x0 = RobotState(sim.x0.0.map(|v| v * factor));
    }
    sim
}

fn closed_loop(l: &Loaded, slot: &mut Option<Trajectory>) -> Outcome {
    let traj = simulate(&l.cfg.plant(), &l.cert, &l.model, &sim_config(l)).map_err(|e| e.to_string())?;
    let settle = settling_time(&traj, 1e-3);
    let detail = match settle {
        Some(t) => format!("settled at {t:.4} s (limit 1.5 s), peak |u| {:.4e}", traj.peak_input()),
        None => "not settled".to_string(),
    };
    *slot = Some(traj);
    check(settle.is_some_and(|t| t <= 1.5), detail)
}

fn lyapunov(l: &Loaded, traj: &Trajectory) -> Outcome {
    let r = lyapunov_check(traj, &l.model, &l.cfg.plant());
    check(
        r.passed,
        format!(
            "max increase {:.3e} vs tolerance {:.3e} over {} in-box steps ({} flagged outside)",
            r.max_increase, r.tolerance, r.checked_steps, r.out_of_box_steps
        ),
    )
}

fn integrator_order(l: &Loaded) -> Outcome {
    let plant = l.cfg.plant();
    let base = sim_config(l);
    let run = |div: usize| {
        let mut s = base.clone();
        s.h = base.h / div as f64;
        simulate(&plant, &l.cert, &l.model, &s).map_err(|e| e.to_string())
    };
    let reference = run(8)?;
    let mut errors = Vec::new();
    for div in [1, 2, 4] {
        let traj = run(div)?;
        let stride = 8 / div;
        let err = traj
            .states
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let r = &reference.states[k * stride];
                x.0.iter().zip(r.0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            })
            .fold(0.0f64, f64::max);
        errors.push(err);
    }
    let ratios = [errors[0] / errors[1], errors[1] / errors[2]];
    check(
        ratios.iter().all(|r| (8.0..=32.0).contains(r)),
        format!(
            "errors {:.3e}, {:.3e}, {:.3e}; ratios {:.2}, {:.2} (band [8, 32])",
            errors[0], errors[1], errors[2], ratios[0], ratios[1]
        ),
    )
}

/// Roots of det(λI − S) for a symmetric 2×2 or 3×3 matrix, ascending.
fn char_poly_roots(s: &SymMatrix) -> Vec<f64> {
    let a = |i, j| s[(i, j)];
    if s.order() == 2 {
        let (tr, det) = (a(0, 0) + a(1, 1), a(0, 0) * a(1, 1) - a(0, 1) * a(0, 1));
        let d = (tr * tr / 4.0 - det).max(0.0).sqrt();
        return vec![tr / 2.0 - d, tr / 2.0 + d];
    }
    // λ³ + b λ² + c λ + d with all roots real; trigonometric solution
    let b = -(a(0, 0) + a(1, 1) + a(2, 2));
    let c = a(0, 0) * a(1, 1) + a(0, 0) * a(2, 2) + a(1, 1) * a(2, 2)
        - a(0, 1) * a(0, 1)
        - a(0, 2) * a(0, 2)
        - a(1, 2) * a(1, 2);
    let d = -(a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(1, 2)) - a(0, 1) * (a(0, 1) * a(2, 2) - a(1, 2) * a(0, 2))
        + a(0, 2) * (a(0, 1) * a(1, 2) - a(1, 1) * a(0, 2)));
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let shift = -b / 3.0;
    if p.abs() < 1e-300 {
        return vec![shift + (-q).cbrt(); 3];
    }
    let m = 2.0 * (-p / 3.0).sqrt();
    let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
    let theta = arg.acos() / 3.0;
    let mut roots: Vec<f64> = (0..3)
        .map(|k| shift + m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
        .collect();
    roots.sort_by(f64::total_cmp);
    roots
}

fn eigen_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED + 7);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let n = 2 + i % 2;
        let mut data = vec![0.0; n * n];
        for r in 0..n {
            for c in r..n {
                let v = rng.gen_range(-5.0..5.0);
                data[r * n + c] = v;
                data[c * n + r] = v;
            }
        }
        let s = SymMatrix::new(n, data).map_err(|e| e.to_string())?;
        let e = sym_eigen(&s, DEFAULT_EIGEN_TOL).map_err(|e| e.to_string())?;
        for (a, b) in e.values.iter().zip(char_poly_roots(&s)) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-9, format!("max |eig - root| {worst:.3e} over 100 matrices (limit 1e-9)"))
}

fn negative_control(l: &Loaded) -> Outcome {
    let plant = l.cfg.plant();
    let threshold = l.doc.solver.threshold();
    let sim = sim_config(l);
    let mut caught_by_verify = 0;
    let mut caught_by_lyapunov = 0;
    let mut missed = Vec::new();
    for j in 0..l.cert.k.len() {
        let mut cert = l.cert.clone();
        flip_largest(&mut cert.k[j]);
        if !verify_certificate(&cert, &l.model, threshold).passed {
            caught_by_verify += 1;
            continue;
        }
        let lyap_fails = match simulate(&plant, &cert, &l.model, &sim) {
            Ok(t) => !lyapunov_check(&t, &l.model, &plant).passed,
            Err(_) => true,
        };
        if lyap_fails {
            caught_by_lyapunov += 1;
        } else {
            missed.push(j + 1);
        }
    }
    check(
        missed.is_empty(),
        format!(
            "{caught_by_verify} flips rejected by verification, {caught_by_lyapunov} by the Lyapunov check, missed {missed:?}"
        ),
    )
}

fn tsfc(dir: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_tsfc"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?
        .status;
    match status.code() {
        Some(0) => Ok(()),
        other => Err(format!("tsfc {} exited with {other:?}", args.join(" "))),
    }
}

fn determinism(dir: &Path) -> Outcome {
    let mut files = Vec::new();
    for run in ["run1", "run2"] {
        let d = dir.join(run);
        fs::create_dir_all(&d).map_err(|e| e.to_string())?;
        tsfc(&d, &["synthesize", "--seed", "0", "--out", "cert.json"])?;
        tsfc(&d, &["simulate", "--cert", "cert.json", "--out", "traj.csv"])?;
        let read = |name: &str| fs::read(d.join(name)).map_err(|e| e.to_string());
        files.push((read("cert.json")?, read("traj.csv")?));
    }
    let same_cert = files[0].0 == files[1].0;
    let same_traj = files[0].1 == files[1].1;
    check(
        same_cert && same_traj,
        format!(
            "certificate identical: {same_cert} ({} bytes), trajectory identical: {same_traj} ({} bytes)",
            files[0].0.len(),
            files[0].1.len()
        ),
    )
}

struct Runner {
    failures: usize,
}

impl Runner {
    fn report(&mut self, id: u32, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let over = budget.is_some_and(|b| elapsed > b);
        let (verdict, mut detail) = match outcome {
            Ok(d) if !over => ("PASS", d),
            Ok(d) => ("FAIL", d),
            Err(d) => ("FAIL", d),
        };
        if verdict == "FAIL" {
            self.failures += 1;
        }
        detail.push_str(&format!("; {:.2} s", elapsed.as_secs_f64()));
        if let Some(b) = budget {
            detail.push_str(&format!(" (budget {} s)", b.as_secs_f64()));
        }
        println!("{verdict} [{id}] {name}: {detail}");
    }

    fn skip(&mut self, id: u32, name: &str, why: &str) {
        self.failures += 1;
        println!("FAIL [{id}] {name}: {why}");
    }
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut r = Runner { failures: 0 };
    r.report(1, "sector exactness", Some(Duration::from_secs(1)), sector_exactness);
    r.report(2, "partition of unity", None, partition_of_unity);

    let mut loaded = None;
    r.report(3, "LMI certificate validity", Some(Duration::from_secs(60)), || {
        certificate_validity(dir.path(), &mut loaded)
    });
    match &loaded {
        Some(l) => {
            let mut traj = None;
            r.report(4, "closed-loop regulation", Some(Duration::from_secs(5)), || {
                closed_loop(l, &mut traj)
            });
            match &traj {
                Some(t) => r.report(5, "Lyapunov monotonicity", None, || lyapunov(l, t)),
                None => r.skip(5, "Lyapunov monotonicity", "no trajectory from criterion 4"),
            }
            r.report(6, "integrator order", None, || integrator_order(l));
        }
        None => {
            for (id, name) in [(4, "closed-loop regulation"), (5, "Lyapunov monotonicity"), (6, "integrator order")] {
                r.skip(id, name, "no certificate from criterion 3");
            }
        }
    }
    r.report(7, "eigensolver oracle", None, eigen_oracle);
    match &loaded {
        Some(l) => r.report(8, "negative control", None, || negative_control(l)),
        None => r.skip(8, "negative control", "no certificate from criterion 3"),
    }
    r.report(9, "determinism", None, || determinism(dir.path()));

    if r.failures == 0 {
        println!("acceptance: all 9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} of 9 criteria failed", r.failures);
        ExitCode::FAILURE
    }
}
