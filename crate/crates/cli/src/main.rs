use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use stcns_core::config::{parse_config, ConfigError, SimConfig, VariantKind};
use stcns_core::harness::{
    self, checkpoint_load, checkpoint_save, decode_checkpoint, ensemble_run, eps_sweep,
    refinement_study, resume, twin_run, Axis, Checkpoint, HarnessError, Perturbation,
    CHECKPOINT_MAGIC,
};
use stcns_core::integrator::{run, StepError, TerminalStatus};
use stcns_core::output::{emit_diagnostics, format_real, unix_time, write_json, RunManifest};
use stcns_core::verify::{run_verification, VerifyOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "stcns", version, about = "Stochastic tamed chemotaxis-Navier-Stokes simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "stcns-out")]
    out: PathBuf,
    /// System variant, overriding the configuration.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Exact,
    Mollified,
    Truncated,
}

impl From<VariantArg> for VariantKind {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Exact => VariantKind::Exact,
            VariantArg::Mollified => VariantKind::Mollified,
            VariantArg::Truncated => VariantKind::Truncated,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate a single trajectory.
    Run {
        #[command(flatten)]
        common: Common,
        /// Brownian path id.
        #[arg(long, default_value_t = 0)]
        path_id: u64,
        /// Continue from a checkpoint instead of the configured initial state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Monte-Carlo ensemble of independent paths.
    Ensemble {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 32)]
        paths: usize,
        /// Moment orders p for E[sup F^p] and E[(int G)^p].
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        p: Vec<f64>,
        /// Repeat the ensemble at each mollifier width.
        #[arg(long, value_delimiter = ',')]
        eps_sweep: Option<Vec<f64>>,
    },
    /// Refinement study along one parameter axis.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "k")]
        axis: Axis,
        /// Levels; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
    },
    /// Twin runs from nearby initial data on a shared noise path.
    Twin {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-6)]
        delta: f64,
        #[arg(long, default_value = "velocity")]
        perturb: Perturbation,
        /// Steps between divergence samples.
        #[arg(long, default_value_t = 10)]
        every: u64,
    },
    /// Identity, inequality, and taming-construction checks on random fields.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 32)]
        grid: usize,
        #[arg(long, default_value_t = 100)]
        fields: usize,
    },
    /// Convert a checkpoint or JSON report to CSV or JSON.
    Export {
        #[command(flatten)]
        common: Common,
        /// Checkpoint or report file.
        input: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Error carrying the process exit code.
#[derive(Debug)]
struct Exit(u8, anyhow::Error);

fn classify(err: anyhow::Error) -> Exit {
    let code = if err.chain().any(|e| e.is::<ConfigError>()) {
        EXIT_CONFIG
    } else if err.chain().any(|e| {
        matches!(e.downcast_ref::<HarnessError>(), Some(HarnessError::Config(_)))
    }) {
        EXIT_CONFIG
    } else if err.chain().any(|e| {
        e.is::<StepError>()
            || matches!(
                e.downcast_ref::<HarnessError>(),
                Some(HarnessError::AllPathsFailed { .. } | HarnessError::Step(_))
            )
    }) {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    };
    Exit(code, err)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_USAGE);
    }
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Exit(code, err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("STCNS_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("STCNS_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn load_config(common: &Common) -> Result<SimConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_config(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => SimConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(v) = common.variant {
        cfg.variant = v.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn dispatch(cmd: Command) -> Result<u8, Exit> {
    let started = unix_time();
    match cmd {
        Command::Run { common, path_id, resume: from } => {
            let cfg = load_config(&common).map_err(classify)?;
            cmd_run(&cfg, &common.out, path_id, from.as_deref(), started).map_err(classify)
        }
        Command::Ensemble { common, paths, p, eps_sweep: sweep } => {
            let cfg = load_config(&common).map_err(classify)?;
            cmd_ensemble(&cfg, &common.out, paths, &p, sweep.as_deref(), started).map_err(classify)
        }
        Command::Converge { common, axis, levels } => {
            let cfg = load_config(&common).map_err(classify)?;
            let levels = levels.unwrap_or_else(|| axis.default_levels(&cfg));
            cmd_converge(&cfg, &common.out, axis, &levels, started).map_err(classify)
        }
        Command::Twin { common, delta, perturb, every } => {
            let cfg = load_config(&common).map_err(classify)?;
            cmd_twin(&cfg, &common.out, delta, perturb, every, started).map_err(classify)
        }
        Command::Verify { common, grid, fields } => {
            let cfg = load_config(&common).map_err(classify)?;
            let opts = VerifyOptions {
                grid,
                fields,
                seed: cfg.seed,
                ..VerifyOptions::default()
            };
            cmd_verify(&cfg, &common.out, &opts, started).map_err(classify)
        }
        Command::Export { common, input, format } => {
            let cfg = load_config(&common).map_err(classify)?;
            cmd_export(&cfg, &common.out, &input, format, started).map_err(classify)
        }
    }
}

fn cmd_run(cfg: &SimConfig, out: &Path, path_id: u64, from: Option<&Path>, started: f64) -> Result<u8> {
    let exp = cfg.build()?;
    prepare_out(out)?;
    let opts = exp.run_options();
    let traj = match from {
        Some(p) => {
            let ck = checkpoint_load(p, Some(&exp.grid))?;
            resume(&exp, &ck, exp.steps(), &opts)?
        }
        None => run(&exp.stepper, &exp.initial, &exp.path(path_id), 0, exp.steps(), &opts)?,
    };
    for w in &traj.warnings {
        eprintln!("warning: {w}");
    }
    let csv = out.join("diagnostics.csv");
    emit_diagnostics(&traj.records, &csv)?;
    let ck_path = out.join("final.stcn");
    let ck = Checkpoint::from_trajectory(&traj, &exp, path_id);
    checkpoint_save(&ck, &ck_path)?;
    let summary = serde_json::json!({
        "status": traj.status,
        "failure_time": traj.failure_time,
        "final_time": traj.final_state.t,
        "final_step": traj.final_step,
        "noise_checksum": format!("{:08x}", traj.noise_checksum),
        "warnings": traj.warnings,
    });
    let summary_path = out.join("run.json");
    write_json(&summary, &summary_path)?;
    RunManifest::new("run", cfg, started).finish(out, &[csv, ck_path, summary_path])?;
    println!(
        "{:?} at t = {} after {} steps, {} diagnostics rows",
        traj.status,
        traj.final_state.t,
        traj.final_step,
        traj.records.len()
    );
    Ok(match traj.status {
        TerminalStatus::Completed => 0,
        _ => EXIT_NUMERICAL,
    })
}

fn cmd_ensemble(
    cfg: &SimConfig,
    out: &Path,
    paths: usize,
    p: &[f64],
    sweep: Option<&[f64]>,
    started: f64,
) -> Result<u8> {
    prepare_out(out)?;
    let report_path = out.join("ensemble.json");
    let csv_path = out.join("ensemble_paths.csv");
    let reports = match sweep {
        Some(eps) => {
            let r = eps_sweep(cfg, eps, paths, p)?;
            write_json(&r, &report_path)?;
            println!(
                "E[sup F] variation {:.3e}, E[int G] variation {:.3e}",
                r.sup_f_variation, r.int_g_variation
            );
            r.reports
        }
        None => {
            let r = ensemble_run(&cfg.build()?, paths, p)?;
            write_json(&r, &report_path)?;
            vec![r]
        }
    };
    let mut csv = String::from("eps,path_id,status,sup_f,int_g,sup_u_h1,finite\n");
    for r in &reports {
        for s in &r.paths {
            csv += &format!(
                "{},{},{},{},{},{},{}\n",
                format_real(r.eps),
                s.path_id,
                status_name(s.status),
                format_real(s.sup_f),
                format_real(s.int_g),
                format_real(s.sup_u_h1),
                s.finite
            );
        }
        for m in &r.sup_f {
            println!(
                "eps {}: E[sup F^{}] = {:.6e} +- {:.2e} ({} of {} paths completed)",
                r.eps, m.p, m.mean, m.half_width, r.completed, r.path_count
            );
        }
    }
    write_file(&csv_path, csv.as_bytes())?;
    RunManifest::new("ensemble", cfg, started).finish(out, &[report_path, csv_path])?;
    Ok(0)
}

fn cmd_converge(cfg: &SimConfig, out: &Path, axis: Axis, levels: &[f64], started: f64) -> Result<u8> {
    prepare_out(out)?;
    let r = refinement_study(cfg, axis, levels)?;
    let path = out.join("refinement.json");
    write_json(&r, &path)?;
    let csv_path = out.join("refinement.csv");
    write_file(&csv_path, refinement_csv(&r).as_bytes())?;
    RunManifest::new("converge", cfg, started).finish(out, &[path, csv_path])?;
    println!("differences {:?}, observed order {:?}", r.differences, r.observed_order);
    for f in &r.failures {
        eprintln!("warning: {f}");
    }
    Ok(if r.failures.is_empty() { 0 } else { EXIT_NUMERICAL })
}

fn refinement_csv(r: &harness::RefinementReport) -> String {
    let mut s = String::from("level,next_level,difference\n");
    for (i, d) in r.differences.iter().enumerate() {
        s += &format!("{},{},{}\n", format_real(r.levels[i]), format_real(r.levels[i + 1]), format_real(*d));
    }
    s
}

fn cmd_twin(cfg: &SimConfig, out: &Path, delta: f64, mode: Perturbation, every: u64, started: f64) -> Result<u8> {
    let exp = cfg.build()?;
    prepare_out(out)?;
    let r = twin_run(&exp, delta, mode, every)?;
    let path = out.join("twin.json");
    write_json(&r, &path)?;
    let csv_path = out.join("twin.csv");
    write_file(&csv_path, twin_csv(&r.times, &r.divergence).as_bytes())?;
    RunManifest::new("twin", cfg, started).finish(out, &[path, csv_path])?;
    let max_d = r.divergence.iter().copied().fold(0.0, f64::max);
    println!(
        "delta {delta}: max d = {max_d:.6e}, rate {:?}, bit-identical {}",
        r.rate, r.bit_identical
    );
    Ok(if r.status.iter().all(|s| *s == TerminalStatus::Completed) { 0 } else { EXIT_NUMERICAL })
}

fn twin_csv(times: &[f64], d: &[f64]) -> String {
    let mut s = String::from("t,divergence\n");
    for (t, v) in times.iter().zip(d) {
        s += &format!("{},{}\n", format_real(*t), format_real(*v));
    }
    s
}

fn cmd_verify(cfg: &SimConfig, out: &Path, opts: &VerifyOptions, started: f64) -> Result<u8> {
    if opts.grid < 8 || opts.grid % 2 != 0 || opts.fields == 0 {
        bail!(ConfigError::Invalid {
            key: "grid".into(),
            message: "verification needs an even grid of at least 8 and one or more fields".into(),
        });
    }
    prepare_out(out)?;
    let report = run_verification(opts);
    for c in &report.checks {
        println!(
            "{} {:<42} worst {:.3e} (tolerance {:.1e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.worst,
            c.tolerance
        );
    }
    let path = out.join("verify.json");
    write_json(&report, &path)?;
    RunManifest::new("verify", cfg, started).finish(out, &[path])?;
    Ok(if report.passed() { 0 } else { EXIT_VERIFY })
}

fn cmd_export(cfg: &SimConfig, out: &Path, input: &Path, format: Format, started: f64) -> Result<u8> {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    prepare_out(out)?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "export".into());
    let written = if bytes.starts_with(&CHECKPOINT_MAGIC) {
        let ck = decode_checkpoint(&bytes, None)?;
        export_checkpoint(&ck, out, &stem, format)?
    } else {
        let value: Value = serde_json::from_slice(&bytes)
            .with_context(|| format!("{} is neither a checkpoint nor a JSON report", input.display()))?;
        export_report(&value, out, &stem, format)?
    };
    println!("wrote {}", written.display());
    RunManifest::new("export", cfg, started).finish(out, &[written])?;
    Ok(0)
}

fn export_checkpoint(ck: &Checkpoint, out: &Path, stem: &str, format: Format) -> Result<PathBuf> {
    let s = &ck.state;
    let grid = s.grid();
    let fields = [&s.n, &s.c, s.u.component(0), s.u.component(1), s.u.component(2)];
    match format {
        Format::Csv => {
            let path = out.join(format!("{stem}.csv"));
            let mut buf = String::from("x1,x2,x3,n,c,u1,u2,u3\n");
            for i in 0..grid.len() {
                let p = grid.point(i);
                buf += &format!("{},{},{}", format_real(p[0]), format_real(p[1]), format_real(p[2]));
                for f in fields {
                    buf.push(',');
                    buf += &format_real(f.samples()[i]);
                }
                buf.push('\n');
            }
            write_file(&path, buf.as_bytes())?;
            Ok(path)
        }
        Format::Json => {
            let path = out.join(format!("{stem}.json"));
            let value = serde_json::json!({
                "dims": grid.dims(),
                "lengths": grid.lengths(),
                "t": s.t,
                "step": ck.step,
                "dt": ck.dt,
                "variant": ck.variant,
                "seed": ck.seed,
                "path_id": ck.path_id,
                "n": s.n.samples(),
                "c": s.c.samples(),
                "u": [s.u.component(0).samples(), s.u.component(1).samples(), s.u.component(2).samples()],
            });
            write_json(&value, &path)?;
            Ok(path)
        }
    }
}

fn export_report(v: &Value, out: &Path, stem: &str, format: Format) -> Result<PathBuf> {
    if format == Format::Json {
        let path = out.join(format!("{stem}.export.json"));
        write_json(v, &path)?;
        return Ok(path);
    }
    let nums = |key: &str| -> Vec<f64> {
        v.get(key)
            .and_then(Value::as_array)
            .map(|a| a.iter().map(|x| x.as_f64().unwrap_or(f64::NAN)).collect())
            .unwrap_or_default()
    };
    let csv = if v.get("divergence").is_some() {
        twin_csv(&nums("times"), &nums("divergence"))
    } else if v.get("differences").is_some() {
        let (levels, diffs) = (nums("levels"), nums("differences"));
        let mut s = String::from("level,next_level,difference\n");
        for (i, d) in diffs.iter().enumerate() {
            if i + 1 < levels.len() {
                s += &format!("{},{},{}\n", format_real(levels[i]), format_real(levels[i + 1]), format_real(*d));
            }
        }
        s
    } else if let Some(checks) = v.get("checks").and_then(Value::as_array) {
        let mut s = String::from("name,passed,worst,tolerance\n");
        for c in checks {
            s += &format!(
                "\"{}\",{},{},{}\n",
                c["name"].as_str().unwrap_or(""),
                c["passed"].as_bool().unwrap_or(false),
                format_real(c["worst"].as_f64().unwrap_or(f64::NAN)),
                format_real(c["tolerance"].as_f64().unwrap_or(f64::NAN))
            );
        }
        s
    } else if v.get("paths").is_some() || v.get("reports").is_some() {
        let reports: Vec<&Value> = match v.get("reports").and_then(Value::as_array) {
            Some(rs) => rs.iter().collect(),
            None => vec![v],
        };
        let mut s = String::from("eps,p,sup_f_mean,sup_f_half_width,int_g_mean,int_g_half_width\n");
        for r in reports {
            let eps = r["eps"].as_f64().unwrap_or(f64::NAN);
            let (sf, ig) = (r["sup_f"].as_array(), r["int_g"].as_array());
            for (a, b) in sf.into_iter().flatten().zip(ig.into_iter().flatten()) {
                let f = |x: &Value, k: &str| format_real(x[k].as_f64().unwrap_or(f64::NAN));
                s += &format!(
                    "{},{},{},{},{},{}\n",
                    format_real(eps),
                    f(a, "p"),
                    f(a, "mean"),
                    f(a, "half_width"),
                    f(b, "mean"),
                    f(b, "half_width")
                );
            }
        }
        s
    } else {
        bail!("unrecognized report layout");
    };
    let path = out.join(format!("{stem}.csv"));
    write_file(&path, csv.as_bytes())?;
    Ok(path)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes).with_context(|| format!("writing {}", path.display()))
}

fn status_name(s: TerminalStatus) -> &'static str {
    match s {
        TerminalStatus::Completed => "completed",
        TerminalStatus::BlowUp => "blow-up",
        TerminalStatus::NaN => "nan",
    }
}
