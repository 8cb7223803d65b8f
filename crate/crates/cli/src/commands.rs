use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::json;
use tmres::energy::{energy_sweep, scatter_table, ModeScatteringTable, SweepAxis};
use tmres::quasifreq::{closed_form_single, det_root_quasifrequencies, floquet_quasifrequencies, folded_distance};
use tmres::scattering::{pole_pencil, scattered_field_approx, solve, PoleOptions, PolePencilData, ScatteringSolution};
use tmres::{NumericalError, QuasifrequencySet, SimulationConfig};

use crate::output::{config_hash, f, opt, RunManifest, Table};

/// Command-line misuse that is not caught by the argument parser.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Complete,
    Partial(usize),
}

pub struct Context {
    pub cfg: SimulationConfig,
    pub config_path: PathBuf,
    pub out: PathBuf,
    pub hash: String,
}

impl Context {
    pub fn load(config: &Path, out: &Path) -> Result<Self> {
        let text = fs::read_to_string(config).map_err(|e| usage(format!("reading {}: {e}", config.display())))?;
        let cfg = SimulationConfig::from_json(&text).map_err(tmres::Error::from)?;
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let hash = config_hash(&cfg);
        Ok(Self { cfg, config_path: config.to_path_buf(), out: out.to_path_buf(), hash })
    }

    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, &self.config_path, self.hash.clone())
    }

    fn finish(&self, mut manifest: RunManifest, failures: usize) -> Result<Status> {
        manifest.failures = failures;
        if failures > 0 {
            manifest.status = "partial";
        }
        let path = manifest.write(&self.out)?;
        log::info!("wrote {}", path.display());
        Ok(if failures > 0 { Status::Partial(failures) } else { Status::Complete })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    Floquet,
    Closed,
    DetRoot,
    All,
}

fn sweep_points(cfg: &SimulationConfig, axis: Option<SweepAxis>, grid: Option<&[f64]>) -> Result<Vec<(f64, SimulationConfig)>> {
    match (axis, grid) {
        (None, None) => Ok(vec![(f64::NAN, cfg.clone())]),
        (Some(axis), Some(grid)) => grid.iter().map(|&v| Ok((v, axis.apply(cfg, v)?))).collect(),
        (Some(_), None) => Err(usage("--axis needs --grid")),
        (None, Some(_)) => Err(usage("--grid needs --axis")),
    }
}

fn axis_name(axis: Option<SweepAxis>) -> &'static str {
    axis.map_or("none", |a| a.as_str())
}

fn axis_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        f(v)
    }
}

struct QuasifreqPoint {
    sets: Vec<QuasifrequencySet>,
    cross_dev: Option<f64>,
    errors: Vec<String>,
}

fn quasifreq_point(cfg: &SimulationConfig, method: MethodChoice) -> QuasifreqPoint {
    let mut sets = Vec::new();
    let mut errors = Vec::new();
    let wants = |m: MethodChoice| method == m || method == MethodChoice::All;
    let floquet = match floquet_quasifrequencies(cfg) {
        Ok(s) => Some(s),
        Err(e) => {
            errors.push(format!("floquet: {e}"));
            None
        }
    };
    if wants(MethodChoice::Floquet) {
        sets.extend(floquet.clone());
    }
    if wants(MethodChoice::Closed) && cfg.n() == 1 {
        match closed_form_single(cfg) {
            Ok(c) => sets.push(c.set),
            Err(e) => errors.push(format!("closed: {e}")),
        }
    }
    if wants(MethodChoice::DetRoot) {
        if let Some(fl) = &floquet {
            match det_root_quasifrequencies(cfg, &fl.values) {
                Ok(r) => {
                    for s in &r.failures {
                        errors.push(format!("detroot seed {}: {}", s.seed, s.reason));
                    }
                    sets.push(r.set);
                }
                Err(e) => errors.push(format!("detroot: {e}")),
            }
        }
    }
    let cross_dev = match (&floquet, method) {
        (Some(fl), MethodChoice::All) if !fl.values.is_empty() => {
            let om = cfg.omega_mod();
            let dev = sets
                .iter()
                .filter(|s| s.method != tmres::Method::Floquet)
                .flat_map(|s| s.values.iter())
                .map(|w| fl.values.iter().map(|v| folded_distance(*w, *v, om)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max);
            Some(dev)
        }
        _ => None,
    };
    QuasifreqPoint { sets, cross_dev, errors }
}

pub fn quasifreq(ctx: &Context, method: MethodChoice, axis: Option<SweepAxis>, grid: Option<&[f64]>) -> Result<Status> {
    if axis == Some(SweepAxis::Omega) {
        return Err(usage("quasifrequencies do not depend on the operating frequency; use --axis eps or length"));
    }
    if method == MethodChoice::Closed && ctx.cfg.n() != 1 {
        return Err(usage(format!("--method closed needs a single resonator, config has N = {}", ctx.cfg.n())));
    }
    let mut manifest = ctx.manifest("quasifreq");
    manifest.param("method", format!("{method:?}").to_lowercase());
    manifest.param("axis", axis_name(axis));
    manifest.param("grid", grid.unwrap_or(&[]));
    let points = sweep_points(&ctx.cfg, axis, grid)?;
    let results: Vec<QuasifreqPoint> =
        manifest.time("solve", || points.par_iter().map(|(_, c)| quasifreq_point(c, method)).collect());

    let mut table = Table::new(["axis", "value", "method", "branch", "re", "im", "residual", "cross_dev", "error"]);
    let mut failures = 0;
    for ((value, _), point) in points.iter().zip(&results) {
        for set in &point.sets {
            for (b, (w, r)) in set.values.iter().zip(&set.residuals).enumerate() {
                table.push(vec![
                    axis_name(axis).into(),
                    axis_value(*value),
                    set.method.as_str().into(),
                    b.to_string(),
                    f(w.re),
                    f(w.im),
                    f(*r),
                    opt(point.cross_dev),
                    String::new(),
                ]);
            }
        }
        for e in &point.errors {
            log::warn!("{} = {value}: {e}", axis_name(axis));
            failures += 1;
            let blank = String::new;
            table.push(vec![
                axis_name(axis).into(),
                axis_value(*value),
                e.split(':').next().unwrap_or("").trim().into(),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                e.clone(),
            ]);
        }
    }
    let path = ctx.out.join("quasifreq.csv");
    table.write(&path, &ctx.hash)?;
    manifest.output(&path);
    ctx.finish(manifest, failures)
}

fn default_x_grid(cfg: &SimulationConfig) -> Vec<f64> {
    let lo = cfg.array.left(0) - 20.0;
    let hi = cfg.array.right(cfg.n() - 1) + 20.0;
    (0..=400).map(|i| lo + (hi - lo) * i as f64 / 400.0).collect()
}

fn relative_difference(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm()
}

fn pole_data(cfg: &SimulationConfig) -> Result<(Vec<PolePencilData>, usize)> {
    let seeds = floquet_quasifrequencies(cfg)?.values;
    let roots = det_root_quasifrequencies(cfg, &seeds)?;
    let mut failures = roots.failures.len();
    let mut data = Vec::new();
    for p in &roots.set.values {
        match pole_pencil(cfg, *p) {
            Ok(d) => data.push(d),
            Err(e) => {
                log::warn!("pole pencil at {p}: {e}");
                failures += 1;
            }
        }
    }
    Ok((data, failures))
}

fn is_singular(e: &tmres::Error) -> bool {
    matches!(e, tmres::Error::Numerical(NumericalError::Singular { .. } | NumericalError::Residual { .. }))
}

pub fn scatter(
    ctx: &Context,
    omega: Option<Complex64>,
    xs: Option<&[f64]>,
    times: &[f64],
    pencil: bool,
) -> Result<Status> {
    let cfg = &ctx.cfg;
    let omega = omega.unwrap_or(Complex64::new(cfg.incident.omega, 0.0));
    let xs = xs.map(<[f64]>::to_vec).unwrap_or_else(|| default_x_grid(cfg));
    let mut manifest = ctx.manifest("scatter");
    manifest.param("omega", [omega.re, omega.im]);
    manifest.param("x", &xs);
    manifest.param("t", times);
    manifest.param("pole_pencil", pencil);

    let direct: Option<ScatteringSolution> = match manifest.time("solve", || solve(cfg, omega)) {
        Ok(sol) => Some(sol),
        Err(e) if pencil && is_singular(&e) => {
            log::warn!("direct solve failed ({e}); emitting the pole-pencil field only");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let (poles, mut failures) = if pencil { manifest.time("pole_pencil", || pole_data(cfg))? } else { (Vec::new(), 0) };
    if direct.is_none() {
        failures += 1;
    }

    let mut header = vec!["t", "x", "re_u", "im_u", "re_usc", "im_usc"];
    if pencil {
        header.extend(["re_usc_pencil", "im_usc_pencil", "rel_diff"]);
    }
    let mut table = Table::new(header);
    let opts = PoleOptions::default();
    for &t in times {
        for &x in &xs {
            let mut row = vec![f(t), f(x)];
            let usc = direct.as_ref().map(|s| s.evaluate_field(x, t));
            let u = direct.as_ref().map(|s| s.total_field(x, t));
            row.extend([opt(u.map(|z| z.re)), opt(u.map(|z| z.im)), opt(usc.map(|z| z.re)), opt(usc.map(|z| z.im))]);
            if pencil {
                let approx = scattered_field_approx(cfg, omega, &poles, x, t, opts)?;
                row.extend([f(approx.re), f(approx.im), opt(usc.map(|d| relative_difference(approx, d)))]);
            }
            table.push(row);
        }
    }
    let field_path = ctx.out.join("field.csv");
    table.write(&field_path, &ctx.hash)?;
    manifest.output(&field_path);

    let mut doc = json!({
        "config_hash": ctx.hash,
        "omega": [omega.re, omega.im],
    });
    if let Some(sol) = &direct {
        let modes = ModeScatteringTable::from_solution(sol);
        doc["rcond"] = json!(sol.interior.rcond);
        doc["residual"] = json!(sol.interior.residual);
        doc["interior"] = json!(sol.interior.w);
        doc["exterior"] = json!(sol.exterior);
        doc["modes"] = json!(modes.modes);
        doc["energy"] = json!(modes.energy);
        doc["regime"] = json!(modes.regime);
    }
    if pencil {
        doc["poles"] = json!(poles
            .iter()
            .map(|p| json!({
                "pole": [p.pole.re, p.pole.im],
                "denominator": [p.denominator.re, p.denominator.im],
                "right_residual": p.right_residual,
                "left_residual": p.left_residual,
            }))
            .collect::<Vec<_>>());
    }
    let json_path = ctx.out.join("scatter.json");
    fs::write(&json_path, serde_json::to_string_pretty(&doc)? + "\n")?;
    manifest.output(&json_path);
    ctx.finish(manifest, failures)
}

fn cross_section_header(k: usize) -> Vec<String> {
    (-(k as i64)..=k as i64).map(|n| format!("cs_{n}")).collect()
}

pub fn energy(ctx: &Context, axis: Option<SweepAxis>, grid: Option<&[f64]>) -> Result<Status> {
    let cfg = &ctx.cfg;
    let k = cfg.truncation.k;
    let mut manifest = ctx.manifest("energy");
    manifest.param("axis", axis_name(axis));
    manifest.param("grid", grid.unwrap_or(&[]));

    let mut header: Vec<String> = ["axis", "value", "energy", "regime"].map(String::from).to_vec();
    header.extend(cross_section_header(k));
    header.extend(["negative_frequency_modes", "nearest_marker", "error"].map(String::from));
    let mut table = Table::new(header);
    let width = k * 2 + 1;

    let failures = match (axis, grid) {
        (Some(axis), Some(grid)) => {
            let sweep = manifest.time("sweep", || energy_sweep(cfg, axis, grid))?;
            manifest.param("markers", &sweep.markers);
            for row in &sweep.rows {
                let mut r = vec![axis.as_str().to_string(), f(row.value)];
                match &row.table {
                    Some(t) => {
                        r.extend([f(t.energy), t.regime.as_str().into()]);
                        r.extend(t.modes.iter().map(|m| f(m.cross_section)));
                        r.push(t.modes.iter().filter(|m| m.negative_frequency).count().to_string());
                    }
                    None => r.extend(std::iter::repeat_n(String::new(), width + 3)),
                }
                r.push(opt(row.nearest_marker));
                r.push(row.error.clone().unwrap_or_default());
                table.push(r);
            }
            sweep.failures()
        }
        (None, None) => {
            let t = manifest.time("solve", || scatter_table(cfg))?;
            let mut r = vec!["none".to_string(), f(cfg.incident.omega), f(t.energy), t.regime.as_str().into()];
            r.extend(t.modes.iter().map(|m| f(m.cross_section)));
            r.extend([t.modes.iter().filter(|m| m.negative_frequency).count().to_string(), String::new(), String::new()]);
            table.push(r);

            let mut modes = Table::new(["n", "re_r", "im_r", "re_t", "im_t", "cross_section", "negative_frequency"]);
            for m in &t.modes {
                modes.push(vec![
                    m.n.to_string(),
                    f(m.reflection.re),
                    f(m.reflection.im),
                    f(m.transmission.re),
                    f(m.transmission.im),
                    f(m.cross_section),
                    m.negative_frequency.to_string(),
                ]);
            }
            let path = ctx.out.join("modes.csv");
            modes.write(&path, &ctx.hash)?;
            manifest.output(&path);
            0
        }
        (Some(_), None) => return Err(usage("--axis needs --grid")),
        (None, Some(_)) => return Err(usage("--grid needs --axis")),
    };
    let path = ctx.out.join("energy.csv");
    table.write(&path, &ctx.hash)?;
    manifest.output(&path);
    ctx.finish(manifest, failures)
}

/// Quasifrequency with the largest real part; the nonzero one when all
/// real parts vanish.
fn principal(set: &QuasifrequencySet, omega_mod: f64) -> Option<Complex64> {
    if set.values.iter().all(|w| w.re.abs() < 1e-12 * omega_mod) {
        set.values.iter().cloned().max_by(|a, b| a.norm().total_cmp(&b.norm()))
    } else {
        set.largest_real_part()
    }
}

pub fn converge(ctx: &Context, ks: &[usize]) -> Result<Status> {
    if ks.is_empty() || ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(usage("--k must be a strictly ascending, nonempty list"));
    }
    let cfg = &ctx.cfg;
    let mut manifest = ctx.manifest("converge");
    manifest.param("k", ks);
    let configs: Vec<SimulationConfig> = ks.iter().map(|&k| cfg.with_k(k)).collect::<Result<_, _>>().map_err(tmres::Error::from)?;

    let seeds = manifest.time("floquet", || floquet_quasifrequencies(cfg))?.values;
    let rows: Vec<(Complex64, ModeScatteringTable)> = manifest.time("solve", || {
        configs
            .par_iter()
            .map(|c| {
                let set = det_root_quasifrequencies(c, &seeds)?.set;
                let w = principal(&set, c.omega_mod()).ok_or_else(|| anyhow!("no quasifrequency found"))?;
                Ok((w, scatter_table(c)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut header: Vec<String> = ["K", "re_omega1", "im_omega1", "energy"].map(String::from).to_vec();
    header.extend((-2..=2).map(|n| format!("abs_r_{n}")));
    header.extend(["d_omega1", "d_energy", "d_r"].map(String::from));
    let mut table = Table::new(header);
    let r_at = |t: &ModeScatteringTable, n: i64| (n.unsigned_abs() as usize <= t.k()).then(|| t.mode(n).reflection);
    for (i, (k, (w, t))) in ks.iter().zip(&rows).enumerate() {
        let mut r = vec![k.to_string(), f(w.re), f(w.im), f(t.energy)];
        r.extend((-2..=2).map(|n| opt(r_at(t, n).map(|z| z.norm()))));
        if i == 0 {
            r.extend([String::new(), String::new(), String::new()]);
        } else {
            let (pw, pt) = &rows[i - 1];
            let dr = (-2..=2)
                .filter_map(|n| Some((r_at(t, n)? - r_at(pt, n)?).norm()))
                .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
            r.extend([f((w - pw).norm()), f((t.energy - pt.energy).abs()), opt(dr)]);
        }
        table.push(r);
    }
    let path = ctx.out.join("converge.csv");
    table.write(&path, &ctx.hash)?;
    manifest.output(&path);
    ctx.finish(manifest, 0)
}

/// Exit code for an error: 1 for configuration and usage problems, 2 for
/// numerical failures.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tmres::Error>() {
            return match e {
                tmres::Error::Config(_) => 1,
                tmres::Error::Numerical(_) => 2,
            };
        }
        if cause.downcast_ref::<tmres::ConfigError>().is_some() {
            return 1;
        }
        if cause.downcast_ref::<NumericalError>().is_some() {
            return 2;
        }
    }
    1
}

pub fn check_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TMRES_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| usage(format!("TMRES_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    Ok(())
}
