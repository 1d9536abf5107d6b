//! Subcommand execution and output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use neurtv::io::{read_image, read_image_stack, read_named_table, read_observation_table, write_image, write_table};
use neurtv::metrics::{mse, mse_rsquare, psnr, ssim, MetricsReport};
use neurtv::sampling::Points;
use neurtv::tasks::{self, FitResult, ObservationTable, TaskConfig, TraceRow};
use neurtv::varlab;
use neurtv::DenseArray;
use serde_json::json;

use crate::settings::{self, Settings};
use crate::{CliError, TaskArgs};

/// What one run produced, besides the files it wrote itself.
struct RunRecord {
    metrics: MetricsReport,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn merged_settings(task: &TaskArgs) -> Result<Settings, CliError> {
    let mut s = match &task.config {
        Some(path) => settings::read_config(path)?,
        None => Settings::new(),
    };
    s.extend(task.overrides());
    Ok(s)
}

fn worker_cap(jobs: usize) -> usize {
    let env = std::env::var("NEURTV_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1);
    env.map_or(jobs, |cap| jobs.min(cap)).max(1)
}

/// Resolved runs of one command: a single configuration, or one per seed and
/// λ of a sweep, each with its output directory.
struct Plan {
    runs: Vec<(TaskConfig, PathBuf)>,
    workers: usize,
}

/// Resolves and validates the configuration before any data is read.
fn plan(preset: TaskConfig, task: &TaskArgs) -> Result<Plan, CliError> {
    let s = merged_settings(task)?;
    let base = settings::apply(preset, &s)?;
    let seeds = settings::list::<u64>(&s, "seeds")?;
    let lambdas = settings::list::<f64>(&s, "lambdas")?;
    if let Some(l) = &lambdas {
        if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(CliError::Usage("--lambdas entries must be finite numbers >= 0".into()));
        }
    }
    let jobs: usize = match s.get("jobs") {
        Some(v) => v
            .parse()
            .ok()
            .filter(|&j| j >= 1)
            .ok_or_else(|| CliError::Usage(format!("invalid value `{v}` for --jobs")))?,
        None => 1,
    };

    let mut runs: Vec<(TaskConfig, PathBuf)> = Vec::new();
    if seeds.is_none() && lambdas.is_none() {
        runs.push((base.clone(), task.out.clone()));
    } else {
        let seeds = seeds.unwrap_or_else(|| vec![base.seed]);
        let lambdas = lambdas.unwrap_or_else(|| vec![base.lambda]);
        for &seed in &seeds {
            for &lambda in &lambdas {
                let mut cfg = base.clone().with_seed(seed);
                cfg.lambda = lambda;
                runs.push((cfg, task.out.join(format!("seed{seed}_lambda{lambda}"))));
            }
        }
    }

    let workers = worker_cap(jobs).min(runs.len());
    Ok(Plan { runs, workers })
}

/// Runs `body` once per planned configuration and writes metrics and
/// manifest beside each run's outputs.
fn execute<F>(command: &str, plan: Plan, task: &TaskArgs, body: F) -> Result<(), CliError>
where
    F: Fn(&TaskConfig, &Path) -> Result<RunRecord, CliError> + Sync,
{
    let Plan { runs, workers } = plan;
    let one = |cfg: &TaskConfig, dir: &Path| -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        let rec = body(cfg, dir)?;
        fs::write(dir.join("metrics.txt"), rec.metrics.to_text())?;
        fs::write(dir.join("metrics.json"), rec.metrics.to_json())?;
        let mut outputs = rec.outputs;
        outputs.extend(["metrics.txt", "metrics.json", "manifest.json"].map(String::from));
        let manifest = json!({
            "command": command,
            "config": task.config.as_deref().map(display),
            "seed": cfg.seed,
            "inputs": rec.inputs.iter().map(|p| display(p)).collect::<Vec<_>>(),
            "outputs": outputs,
            "resolved": settings::echo(cfg),
        });
        let text = serde_json::to_string_pretty(&manifest).expect("serializable");
        fs::write(dir.join("manifest.json"), text + "\n")?;
        for (k, v) in rec.metrics.entries() {
            println!("{}: {k}={v}", dir.display());
        }
        Ok(())
    };

    if workers <= 1 {
        return runs.iter().try_for_each(|(cfg, dir)| one(cfg, dir));
    }
    let next = Mutex::new(0usize);
    let first_err: Mutex<Option<CliError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some((cfg, dir)) = runs.get(i) else { break };
                if let Err(e) = one(cfg, dir) {
                    first_err.lock().expect("lock").get_or_insert(e);
                    break;
                }
            });
        }
    });
    match first_err.into_inner().expect("lock") {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn write_trace(path: &Path, fits: &[FitResult]) -> Result<(), CliError> {
    let mut out = String::new();
    if fits.len() == 1 {
        let _ = writeln!(out, "{}", TraceRow::CSV_HEADER);
        for r in &fits[0].trace {
            let _ = writeln!(out, "{}", r.csv_line());
        }
    } else {
        let _ = writeln!(out, "channel,{}", TraceRow::CSV_HEADER);
        for (c, f) in fits.iter().enumerate() {
            for r in &f.trace {
                let _ = writeln!(out, "{c},{}", r.csv_line());
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn add_fit_metrics(m: &mut MetricsReport, fits: &[FitResult]) {
    let iters = fits.iter().map(|f| f.iterations).max().unwrap_or(0);
    let loss = fits.iter().map(|f| f.final_loss).sum::<f64>() / fits.len().max(1) as f64;
    m.set("iterations", iters as f64);
    m.set("final_loss", loss);
}

/// Channel `c` of a `[rows, cols, channels]` array, or the array itself.
fn channel(a: &DenseArray, c: usize) -> DenseArray {
    match a.shape() {
        [r, k, n] => {
            let data = (0..r * k).map(|p| a.data()[p * n + c]).collect();
            DenseArray::new(vec![*r, *k], data).expect("sized")
        }
        _ => a.clone(),
    }
}

fn channels(a: &DenseArray) -> usize {
    if a.shape().len() == 3 {
        a.shape()[2]
    } else {
        1
    }
}

/// Image-quality metrics; SSIM is averaged over channels.
fn image_metrics(m: &mut MetricsReport, reference: &DenseArray, est: &DenseArray, prefix: &str) -> Result<(), CliError> {
    if reference.shape() != est.shape() {
        return Err(CliError::Data(format!(
            "reference shape {:?} differs from data shape {:?}",
            reference.shape(),
            est.shape()
        )));
    }
    m.set(format!("psnr{prefix}"), psnr(reference.data(), est.data(), 1.0)?);
    let n = channels(est);
    let mut total = 0.0;
    for c in 0..n {
        total += ssim(&channel(reference, c), &channel(est, c), 1.0)?;
    }
    m.set(format!("ssim{prefix}"), total / n as f64);
    Ok(())
}

fn grid_header(dims: usize) -> &'static [&'static str] {
    if dims == 2 {
        &["row", "col", "value"]
    } else {
        &["row", "col", "channel", "value"]
    }
}

/// Writes the array as a table plus one PNG per channel.
fn write_grid(dir: &Path, stem: &str, a: &DenseArray, outputs: &mut Vec<String>) -> Result<(), CliError> {
    let csv = format!("{stem}.csv");
    write_table(&dir.join(&csv), grid_header(a.shape().len()), &ObservationTable::from_array(a)?)?;
    outputs.push(csv);
    for c in 0..channels(a) {
        let name = if a.shape().len() == 2 {
            format!("{stem}.png")
        } else {
            format!("{stem}_{c}.png")
        };
        write_image(&dir.join(&name), &channel(a, c))?;
        outputs.push(name);
    }
    Ok(())
}

fn read_grid(path: &Path, dim: usize) -> Result<DenseArray, CliError> {
    let table = read_observation_table(path, dim)?;
    let extents = table
        .grid_extents()
        .ok_or_else(|| CliError::Data(format!("{}: not a complete integer grid", path.display())))?;
    Ok(table.canonical().to_array(&extents)?)
}

fn is_csv(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_picture(path: &Path, dim: usize) -> Result<DenseArray, CliError> {
    if is_csv(path) {
        read_grid(path, dim)
    } else {
        Ok(read_image(path)?)
    }
}

fn parse_shape(shape: &str) -> Result<Vec<usize>, CliError> {
    let v: Vec<usize> = shape
        .split(',')
        .map(|x| x.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("invalid value `{shape}` for --shape")))?;
    if !(2..=3).contains(&v.len()) || v.contains(&0) {
        return Err(CliError::Usage("--shape needs 2 or 3 positive extents".into()));
    }
    Ok(v)
}

pub fn denoise(input: &Path, reference: Option<&Path>, dim: usize, task: &TaskArgs) -> Result<(), CliError> {
    if !(2..=3).contains(&dim) {
        return Err(CliError::Usage("--dim must be 2 or 3".into()));
    }
    let plan = plan(TaskConfig::denoise(), task)?;
    let noisy = read_picture(input, dim)?;
    let clean = reference.map(|r| read_picture(r, noisy.shape().len())).transpose()?;
    let obs = ObservationTable::from_array(&noisy)?;
    execute("denoise", plan, task, |cfg, dir| {
        let rec = match &clean {
            Some(c) if c.shape() == noisy.shape() => tasks::denoise_image_traced(&obs, cfg, c)?,
            _ => tasks::denoise_image(&obs, cfg)?,
        };
        let mut outputs = Vec::new();
        write_grid(dir, "denoised", &rec.array, &mut outputs)?;
        write_trace(&dir.join("trace.csv"), &rec.fits)?;
        outputs.push("trace.csv".into());
        let mut m = MetricsReport::new();
        add_fit_metrics(&mut m, &rec.fits);
        if let Some(c) = &clean {
            image_metrics(&mut m, c, &rec.array, "")?;
            image_metrics(&mut m, c, &noisy, "_noisy")?;
        }
        let mut inputs = vec![input.to_path_buf()];
        inputs.extend(reference.map(Path::to_path_buf));
        Ok(RunRecord { metrics: m, inputs, outputs })
    })
}

pub fn inpaint(input: &Path, shape: &str, reference: Option<&Path>, task: &TaskArgs) -> Result<(), CliError> {
    let extents = parse_shape(shape)?;
    let plan = plan(TaskConfig::inpaint(), task)?;
    let obs = read_observation_table(input, extents.len())?;
    let clean = reference.map(|r| read_picture(r, extents.len())).transpose()?;
    execute("inpaint", plan, task, |cfg, dir| {
        let rec = tasks::inpaint_image(&obs, &extents, cfg)?;
        let mut outputs = Vec::new();
        write_grid(dir, "inpainted", &rec.array, &mut outputs)?;
        write_trace(&dir.join("trace.csv"), &rec.fits)?;
        outputs.push("trace.csv".into());
        let mut m = MetricsReport::new();
        add_fit_metrics(&mut m, &rec.fits);
        m.set("observed", obs.len() as f64);
        if let Some(c) = &clean {
            image_metrics(&mut m, c, &rec.array, "")?;
        }
        let mut inputs = vec![input.to_path_buf()];
        inputs.extend(reference.map(Path::to_path_buf));
        Ok(RunRecord { metrics: m, inputs, outputs })
    })
}

fn read_cube(paths: &[PathBuf]) -> Result<DenseArray, CliError> {
    match paths {
        [one] if is_csv(one) => read_grid(one, 3),
        _ => Ok(read_image_stack(paths)?),
    }
}

pub fn hsi(input: &[PathBuf], reference: &[PathBuf], task: &TaskArgs) -> Result<(), CliError> {
    let plan = plan(TaskConfig::hsi(), task)?;
    let cube = read_cube(input)?;
    let clean = if reference.is_empty() {
        None
    } else {
        Some(read_cube(reference)?)
    };
    execute("hsi", plan, task, |cfg, dir| {
        let out = match &clean {
            Some(c) if c.shape() == cube.shape() => tasks::hsi_mixed_denoise_traced(&cube, cfg, c)?,
            _ => tasks::hsi_mixed_denoise(&cube, cfg)?,
        };
        let mut outputs = Vec::new();
        write_grid(dir, "recovered", &out.cube, &mut outputs)?;
        let s = &out.sparse.array;
        write_table(&dir.join("sparse.csv"), grid_header(3), &ObservationTable::from_array(s)?)?;
        outputs.push("sparse.csv".into());
        write_trace(&dir.join("trace.csv"), std::slice::from_ref(&out.fit))?;
        outputs.push("trace.csv".into());
        let mut m = MetricsReport::new();
        add_fit_metrics(&mut m, std::slice::from_ref(&out.fit));
        let support = out.sparse.support();
        m.set(
            "sparse_fraction",
            support.iter().filter(|&&b| b).count() as f64 / support.len() as f64,
        );
        if let Some(c) = &clean {
            image_metrics(&mut m, c, &out.cube, "")?;
            image_metrics(&mut m, c, &cube, "_noisy")?;
        }
        let mut inputs = input.to_vec();
        inputs.extend(reference.iter().cloned());
        Ok(RunRecord { metrics: m, inputs, outputs })
    })
}

#[derive(Clone, Copy, Debug)]
pub enum Scatter {
    Pointcloud,
    Transcriptomics,
}

impl Scatter {
    fn name(self) -> &'static str {
        match self {
            Scatter::Pointcloud => "pointcloud",
            Scatter::Transcriptomics => "transcriptomics",
        }
    }

    fn columns(self) -> &'static [&'static str] {
        match self {
            Scatter::Pointcloud => &["x", "y", "z", "C", "v"],
            Scatter::Transcriptomics => &["x", "y", "g", "v"],
        }
    }
}

/// Query rows with or without the value column.
fn read_queries(path: &Path, columns: &[&str]) -> Result<(Points, Option<Vec<f64>>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let header: Vec<&str> = text
        .lines()
        .next()
        .unwrap_or("")
        .split(',')
        .map(str::trim)
        .collect();
    if header == columns {
        let t = read_named_table(path, columns)?;
        return Ok((t.coords().clone(), Some(t.values().to_vec())));
    }
    let dim = columns.len() - 1;
    if header != columns[..dim] {
        return Err(CliError::Data(format!(
            "{}:1: expected header `{}` (value column optional)",
            path.display(),
            columns.join(",")
        )));
    }
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Data(format!("{}:{}: malformed number", path.display(), i + 1)))?;
        if row.len() != dim {
            return Err(CliError::Data(format!(
                "{}:{}: expected {dim} fields, got {}",
                path.display(),
                i + 1,
                row.len()
            )));
        }
        data.extend(row);
    }
    if data.is_empty() {
        return Err(CliError::Data(format!("{}: no query rows", path.display())));
    }
    Ok((Points::new(dim, data)?, None))
}

pub fn scattered(kind: Scatter, input: &Path, query: &Path, task: &TaskArgs) -> Result<(), CliError> {
    let preset = match kind {
        Scatter::Pointcloud => TaskConfig::pointcloud(),
        Scatter::Transcriptomics => TaskConfig::transcriptomics(),
    };
    let plan = plan(preset, task)?;
    let columns = kind.columns();
    let obs = read_named_table(input, columns)?;
    let (queries, truth) = read_queries(query, columns)?;
    execute(kind.name(), plan, task, |cfg, dir| {
        let out = match kind {
            Scatter::Pointcloud => tasks::recover_pointcloud(&obs, &queries, cfg)?,
            Scatter::Transcriptomics => tasks::reconstruct_transcriptomics(&obs, &queries, cfg)?,
        };
        let table = ObservationTable::new(queries.clone(), out.predictions.clone())?;
        write_table(&dir.join("predictions.csv"), columns, &table)?;
        write_trace(&dir.join("trace.csv"), std::slice::from_ref(&out.fit))?;
        let mut m = MetricsReport::new();
        add_fit_metrics(&mut m, std::slice::from_ref(&out.fit));
        if let Some(t) = &truth {
            let (nrmse, r2) = mse_rsquare(t, &out.predictions)?;
            m.set("mse", mse(t, &out.predictions)?);
            m.set("nrmse", nrmse);
            m.set("r2", r2);
        }
        Ok(RunRecord {
            metrics: m,
            inputs: vec![input.to_path_buf(), query.to_path_buf()],
            outputs: vec!["predictions.csv".into(), "trace.csv".into()],
        })
    })
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn varlab(
    study: &str,
    function: &str,
    nmax: usize,
    n: usize,
    j: usize,
    delta: f64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let func = varlab::lookup(function).map_err(|e| CliError::Usage(format!("--fn: {e}")))?;
    match study {
        "truncation" | "monotone" => {
            if nmax < 8 {
                return Err(CliError::Usage("--nmax must be >= 8".into()));
            }
            let ns: Vec<usize> = std::iter::successors(Some(8usize), |&k| k.checked_mul(2))
                .take_while(|&k| k <= nmax)
                .collect();
            let report = varlab::truncation_error_study(&func, &ns)?;
            emit(&report.to_csv(), out)?;
            let summary = if study == "truncation" {
                format!(
                    "{}: exact {:e}, slope {}, bound violations {:?}",
                    report.function,
                    report.exact,
                    report.slope.map_or("n/a".into(), |s| format!("{s:.4}")),
                    report.bound_violations
                )
            } else {
                format!(
                    "{}: refinement violations {:?}",
                    report.function, report.refinement_violations
                )
            };
            if out.is_some() {
                println!("{summary}");
            } else {
                eprintln!("{summary}");
            }
        }
        "exact" => {
            let exact = varlab::exact_tv_1d(&func)?;
            let mut text = String::from("quantity,value\n");
            let _ = writeln!(text, "exact,{exact:e}");
            for mode in [varlab::QuadMode::Derivative, varlab::QuadMode::Difference] {
                let v = varlab::quadrature_tv(&func, nmax, mode)?;
                let _ = writeln!(text, "{}_n{nmax},{v:e}", mode.as_str());
            }
            emit(&text, out)?;
        }
        "shift" => {
            let o = varlab::nonuniform_shift_experiment(&func, n, j, delta)?;
            let crit = varlab::critical_shift(&func, n, j)?;
            let mut text = String::from("n,j,delta,r_uniform,r_shifted,critical_delta\n");
            let _ = writeln!(
                text,
                "{n},{j},{delta:e},{:e},{:e},{}",
                o.r_uniform,
                o.r_shifted,
                crit.map_or("none".into(), |c| format!("{c:e}"))
            );
            emit(&text, out)?;
        }
        other => {
            return Err(CliError::Usage(format!(
                "invalid value `{other}` for --study (truncation, monotone, exact, shift)"
            )))
        }
    }
    Ok(())
}

pub const PARAM_TOLERANCE: f64 = 1e-4;
pub const FIRST_TOLERANCE: f64 = 1e-5;
pub const SECOND_TOLERANCE: f64 = 1e-3;

pub fn gradcheck(samples: usize, points: usize, seed: u64) -> Result<(), CliError> {
    if samples == 0 || points == 0 {
        return Err(CliError::Usage("--samples and --points must be >= 1".into()));
    }
    let mut outcomes = neurtv::gradcheck::parameter_gradient_suite(samples, PARAM_TOLERANCE, seed)?;
    outcomes.extend(neurtv::gradcheck::input_derivative_suite(
        points,
        FIRST_TOLERANCE,
        SECOND_TOLERANCE,
        seed,
    )?);
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("gradient check failed: {}", failed.join(", "))))
    }
}
