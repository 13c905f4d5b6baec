use std::fs;
use std::path::Path;

use serde_json::json;
use stripe_core::detect::detect;
use stripe_core::io::{box_resize, normalize_max};
use stripe_core::oracle::{
    convergence_study, default_setup, tensor_checks, validate_topo_gradient, ConvergenceKind, DEFAULT_EPS,
};
use stripe_core::qpat::{add_noise, default_phantom_spec, forward, make_phantom, PhantomSpec, QpatData};
use stripe_core::{Grid, ScalarField};

use crate::config::{Check, RunConfig};
use crate::error::{CliError, CliResult};
use crate::imageio::{overlay, read_field, write_csv, write_pgm16, write_png};

/// Pixel sizes of the default convergence study.
pub const DEFAULT_H: [f64; 4] = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0];

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    write(path, text)
}

fn prepare_out_dir(cfg: &RunConfig) -> CliResult<std::path::PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn noise_percent(cfg: &RunConfig) -> CliResult<f64> {
    let p = cfg.noise_percent.unwrap_or(0.0);
    if p >= 0.0 && p.is_finite() {
        Ok(p)
    } else {
        Err(CliError::Config(format!("noise percent must be non-negative, got {p}")))
    }
}

/// The configuration with defaults made explicit, for echoing.
fn effective(cfg: &RunConfig) -> RunConfig {
    RunConfig {
        seed: Some(cfg.seed()),
        out_dir: Some(cfg.out_dir()),
        noise_percent: Some(cfg.noise_percent.unwrap_or(0.0)),
        ..cfg.clone()
    }
}

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(effective(cfg)).unwrap_or_default()
}

/// Renders the phantom, solves the forward problem, and writes the maps.
pub fn simulate(cfg: &RunConfig) -> CliResult<()> {
    let spec = match &cfg.phantom {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            PhantomSpec::from_toml(&text)?
        }
        None => default_phantom_spec(),
    };
    let percent = noise_percent(cfg)?;
    let dir = prepare_out_dir(cfg)?;

    let phantom = make_phantom(&spec)?;
    let mut data = forward(&phantom, &spec.illumination)?;
    if percent > 0.0 {
        data = add_noise(&data, percent, cfg.seed())?;
    }

    let mut scales = serde_json::Map::new();
    let mut emit = |name: &str, f: &ScalarField| -> CliResult<()> {
        let scale = f.max().max(0.0);
        write_pgm16(f, scale, &dir.join(format!("{name}.pgm")))?;
        write_csv(f, &dir.join(format!("{name}.csv")))?;
        scales.insert(name.to_string(), json!(scale));
        Ok(())
    };
    emit("mu", &phantom.mu)?;
    emit("d", &phantom.d)?;
    emit("energy", &data.energy)?;
    if let Some(noisy) = &data.noisy_energy {
        emit("noisy", noisy)?;
    }
    write_csv(&data.fluence, &dir.join("fluence.csv"))?;
    write(&dir.join("phantom.toml"), spec.to_toml()?)?;

    let meta = json!({
        "config": config_json(cfg),
        "phantom": spec,
        "grid": { "nx": spec.nx, "ny": spec.ny, "h": spec.h },
        "noise": { "percent": percent, "sigma": data.noise_sigma, "seed": cfg.seed() },
        "pgm_scale": scales,
    });
    write_json(&dir.join("simulate.json"), &meta)?;
    println!(
        "simulated {}x{} phantom, energy max {:.6e}, noise sigma {:.6e} -> {}",
        spec.nx,
        spec.ny,
        data.energy.max(),
        data.noise_sigma,
        dir.display()
    );
    Ok(())
}

/// Reads, resizes, perturbs and normalizes the detector input.
pub fn load_input(cfg: &RunConfig) -> CliResult<ScalarField> {
    let path = cfg.input.as_ref().ok_or_else(|| CliError::Config("detect needs an input file".into()))?;
    let mut f = read_field(path)?;
    if let Some(n) = cfg.resize {
        let r = box_resize(&f, n)?;
        f = ScalarField::new(Grid::new(n, n, 1.0)?, r.into_data())?;
    }
    let percent = noise_percent(cfg)?;
    if percent > 0.0 {
        let clean = QpatData { fluence: f.clone(), energy: f, noisy_energy: None, noise_sigma: 0.0 };
        f = add_noise(&clean, percent, cfg.seed())?.observed().clone();
    }
    if cfg.normalize.unwrap_or(true) {
        f = normalize_max(&f)?;
    }
    Ok(f)
}

pub fn detect_cmd(cfg: &RunConfig) -> CliResult<()> {
    let det = cfg.detector()?;
    let algorithm = cfg.algorithm()?;
    let f = load_input(cfg)?;
    let dir = prepare_out_dir(cfg)?;

    let result = detect(&f, &det, algorithm)?;

    write(&dir.join("segments.csv"), result.segments_csv()?)?;
    let mut summary = result.to_json(&det, algorithm);
    summary["input"] = json!({
        "path": cfg.input,
        "nx": f.grid().nx,
        "ny": f.grid().ny,
    });
    write_json(&dir.join("segments.json"), &summary)?;
    write(&dir.join("trace.csv"), result.trace_csv())?;
    write_json(&dir.join("config.json"), &config_json(cfg))?;
    if cfg.overlay.unwrap_or(true) {
        write_png(&overlay(&f, result.segments.mask()), &dir.join("overlay.png"))?;
    }
    println!(
        "{} segments, threshold {:.4e}, {} smoother solves -> {}",
        result.stripes().len(),
        result.threshold_used,
        result.solves.len(),
        dir.display()
    );
    Ok(())
}

fn topo(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let mut setup = default_setup();
    if let Some(m) = cfg.m {
        setup.m = m;
    }
    if let Some(a) = cfg.alpha {
        setup.alpha = a;
    }
    if let Some(k) = cfg.kappa {
        setup.kappa = k;
    }
    let eps = cfg.eps_list.clone().unwrap_or_else(|| DEFAULT_EPS.to_vec());
    let report = validate_topo_gradient(&setup, &eps)?;
    write(&dir.join("asymptotics.csv"), report.to_csv()?)?;
    write_json(&dir.join("asymptotics.json"), &serde_json::to_value(&report).unwrap_or_default())?;
    println!("{:>8} {:>10} {:>14} {:>14} {:>8}", "eps", "h", "measured dJ", "predicted dJ", "ratio");
    for r in &report.rows {
        println!("{:>8} {:>10.3e} {:>14.6e} {:>14.6e} {:>8.4}", r.eps, r.h, r.measured_dj, r.predicted_dj, r.ratio);
    }
    Ok(())
}

fn convergence(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let kinds = match cfg.m {
        None => vec![ConvergenceKind::SmootherM1, ConvergenceKind::SmootherM2, ConvergenceKind::DiffusionTwoSlab],
        Some(1) => vec![ConvergenceKind::SmootherM1],
        Some(2) => vec![ConvergenceKind::SmootherM2],
        Some(m) => return Err(CliError::Config(format!("no convergence study for m = {m}"))),
    };
    let hs = cfg.h_list.clone().unwrap_or_else(|| DEFAULT_H.to_vec());
    let mut csv = String::from("kind,h,error,order\n");
    for kind in kinds {
        let name = serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        println!("{name}");
        println!("{:>12} {:>14} {:>8}", "h", "L2 error", "order");
        for row in convergence_study(kind, &hs)? {
            let order = row.order.map(|o| o.to_string()).unwrap_or_default();
            csv.push_str(&format!("{name},{},{},{order}\n", row.h, row.error));
            let shown = row.order.map(|o| format!("{o:.3}")).unwrap_or_else(|| "-".into());
            println!("{:>12.6e} {:>14.6e} {:>8}", row.h, row.error, shown);
        }
    }
    write(&dir.join("convergence.csv"), csv)
}

fn tensor(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let outcomes = tensor_checks(cfg.seed())?;
    write_json(&dir.join("tensor_checks.json"), &serde_json::to_value(&outcomes).unwrap_or_default())?;
    for o in &outcomes {
        let verdict = if o.passed { "pass" } else { "FAIL" };
        println!("{verdict} {:<28} n={:<6} worst {:.3e} (tol {:.1e})", o.name, o.samples, o.worst, o.tolerance);
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(failed.join(", ")))
    }
}

pub fn validate(cfg: &RunConfig) -> CliResult<()> {
    let dir = prepare_out_dir(cfg)?;
    let check = cfg.check.unwrap_or(Check::All);
    if matches!(check, Check::Tensor | Check::All) {
        tensor(cfg, &dir)?;
    }
    if matches!(check, Check::Convergence | Check::All) {
        convergence(cfg, &dir)?;
    }
    if matches!(check, Check::Topo | Check::All) {
        topo(cfg, &dir)?;
    }
    Ok(())
}

pub fn tensor_check(cfg: &RunConfig) -> CliResult<()> {
    let dir = prepare_out_dir(cfg)?;
    tensor(cfg, &dir)
}
