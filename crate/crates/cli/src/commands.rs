use crate::config::{self, ConfigError, SimulateConfig, SupportConfig, TuneConfig, VerifyConfig, SCHEMA_VERSION};
use serde::Serialize;
use serde_json::{json, Value};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use tissf_core::plants::case_study;
use tissf_core::sim::{run_scenario, ScenarioConfig, SimError, TrajectoryLog};
use tissf_core::synthesis::{sample_covering, synthesize, verify_compatibility};
use tissf_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_EMPTY: i32 = 3;
pub const EXIT_SCENARIO_FAILURE: i32 = 4;
pub const EXIT_NON_FINITE: i32 = 5;
pub const EXIT_VIOLATIONS: i32 = 6;

/// Diagnostic plus the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::config(e.0)
    }
}

pub struct Context {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

impl Context {
    fn config_path(&self) -> Result<&Path, Failure> {
        self.config
            .as_deref()
            .ok_or_else(|| Failure::config("--config is required for this command"))
    }

    fn config_dir(&self) -> PathBuf {
        self.config
            .as_deref()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }

    fn out_dir(&self) -> Result<&Path, Failure> {
        fs::create_dir_all(&self.out)
            .map_err(|e| Failure::config(format!("cannot create {}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}

fn metadata(command: &str) -> Value {
    json!({
        "command": command,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "generated_at": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
}

fn core_failure(e: Error) -> Failure {
    let code = match e {
        Error::TuningInfeasible | Error::TuningUnbounded => EXIT_INFEASIBLE,
        Error::EmptySampleSet | Error::AllDegenerate => EXIT_EMPTY,
        _ => EXIT_CONFIG,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

pub fn tune(ctx: &Context) -> Result<i32, Failure> {
    let path = ctx.config_path()?;
    let mut cfg: TuneConfig = config::load(path)?;
    if let Some(seed) = ctx.seed {
        cfg.synthesis.seed = seed;
    }
    cfg.validate()?;
    let case = case_study(&cfg.plant, cfg.alpha).map_err(|e| Failure::config(e.to_string()))?;
    let domain = cfg.domain.clone().unwrap_or_else(|| case.domain.clone());
    let set = cfg.input_set.clone().unwrap_or_else(|| case.input_set.clone());
    if set.dim() != case.plant.input_dim() {
        return Err(Failure::config(format!(
            "input set has dimension {}, plant {} has {} inputs",
            set.dim(),
            cfg.plant,
            case.plant.input_dim()
        )));
    }
    let out = ctx.out_dir()?;
    let result = synthesize(&domain, &case.plant, &case.barrier, &set, &cfg.synthesis).map_err(core_failure)?;
    for w in &result.warnings {
        log::warn!("{w}");
    }
    log::info!(
        "ln eps0 = {:.6}, lambda = {:.6}, {} samples, min verification margin {:.3e}",
        result.params.ln_eps0,
        result.params.lambda,
        result.n_samples,
        result.min_margin
    );
    write_json(
        &out.join("tuning_result.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "plant": cfg.plant,
            "alpha": cfg.alpha,
            "domain": domain,
            "input_set": set,
            "synthesis": cfg.synthesis,
            "result": result,
            "metadata": metadata("tune"),
        }),
    )?;
    Ok(EXIT_OK)
}

fn write_trajectory(path: &Path, log: &TrajectoryLog) -> Result<(), Failure> {
    let io = |e: csv::Error| Failure::config(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    if log.records.is_empty() {
        w.write_record(["t"]).map_err(io)?;
    } else {
        w.write_record(log.csv_header()).map_err(io)?;
    }
    for r in &log.records {
        w.write_record(r.csv_fields()).map_err(io)?;
    }
    w.flush().map_err(|e| Failure::config(e.to_string()))
}

struct Outcome {
    name: String,
    code: i32,
    status: &'static str,
}

fn run_one(out: &Path, name: &str, cfg: &ScenarioConfig) -> Result<Outcome, Failure> {
    let (case, spec) = cfg.resolve().map_err(|e| Failure::config(e.to_string()))?;
    let (log, status, code, failure) = match run_scenario(cfg) {
        Ok(log) => (log, "completed", EXIT_OK, Value::Null),
        Err(SimError::Config(e)) => return Err(Failure::config(format!("scenario {name}: {e}"))),
        Err(SimError::ScenarioFailure { t, state, log }) => (
            *log,
            "scenario_failure",
            EXIT_SCENARIO_FAILURE,
            json!({"t": t, "state": state, "reason": "safety QP infeasible"}),
        ),
        Err(SimError::NonFiniteState { t, log }) => (
            *log,
            "non_finite_state",
            EXIT_NON_FINITE,
            json!({"t": t, "reason": "state became non-finite"}),
        ),
    };
    write_trajectory(&out.join(format!("{name}_trajectory.csv")), &log)?;
    let summary = log.summary(&case.input_set);
    write_json(
        &out.join(format!("{name}_summary.json")),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "name": name,
            "plant": cfg.plant,
            "controller": cfg.controller,
            "alpha": cfg.alpha,
            "x0": spec.x0,
            "t_end": spec.t_end,
            "dt": spec.dt,
            "record_every": spec.record_every,
            "status": status,
            "failure": failure,
            "summary": summary,
            "metadata": metadata("simulate"),
        }),
    )?;
    Ok(Outcome {
        name: name.to_string(),
        code,
        status,
    })
}

pub fn simulate(ctx: &Context) -> Result<i32, Failure> {
    let path = ctx.config_path()?;
    let cfg: SimulateConfig = config::load(path)?;
    let scenarios = cfg.resolve(&ctx.config_dir())?;
    let out = ctx.out_dir()?;
    let outcomes: Vec<Result<Outcome, Failure>> = std::thread::scope(|s| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|(name, sc)| s.spawn(move || run_one(out, name, sc)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Failure::config("scenario thread panicked"))))
            .collect()
    });
    let mut code = EXIT_OK;
    for o in outcomes {
        let o = o?;
        log::info!("scenario {}: {}", o.name, o.status);
        if o.code != EXIT_OK {
            eprintln!("scenario {}: {}", o.name, o.status);
        }
        code = code.max(o.code);
    }
    Ok(code)
}

pub fn verify(ctx: &Context) -> Result<i32, Failure> {
    let path = ctx.config_path()?;
    let mut cfg: VerifyConfig = config::load(path)?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    cfg.floors.validate().map_err(|e| Failure::config(e.to_string()))?;
    let params = cfg.params.resolve(&ctx.config_dir())?;
    let case = case_study(&cfg.plant, cfg.alpha).map_err(|e| Failure::config(e.to_string()))?;
    let domain = cfg.domain.clone().unwrap_or_else(|| case.domain.clone());
    let set = cfg.input_set.clone().unwrap_or_else(|| case.input_set.clone());
    let out = ctx.out_dir()?;
    let samples = sample_covering(&domain, &case.barrier, &cfg.sampling, cfg.seed).map_err(core_failure)?;
    let report = verify_compatibility(&params, &case.plant, &case.barrier, &set, &samples.points, cfg.floors)
        .map_err(core_failure)?;
    let code = if report.violations.is_empty() {
        EXIT_OK
    } else {
        EXIT_VIOLATIONS
    };
    log::info!(
        "{} samples checked, {} violations, min margin {:.4e}",
        report.n_checked,
        report.violations.len(),
        report.min_margin
    );
    write_json(
        &out.join("verify.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "plant": cfg.plant,
            "params": params,
            "min_margin": report.min_margin,
            "worst_state": report.worst_state,
            "violations": report.violations,
            "n_checked": report.n_checked,
            "n_degenerate": report.n_degenerate,
            "kappa_nominal": samples.kappa_nominal,
            "kappa_effective": samples.kappa_effective,
            "metadata": metadata("verify"),
        }),
    )?;
    Ok(code)
}

pub fn support(ctx: &Context) -> Result<i32, Failure> {
    let path = ctx.config_path()?;
    let cfg: SupportConfig = config::load(path)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for d in &cfg.directions {
        let (sigma, u_star) = cfg.set.support(d).map_err(|e| Failure::config(e.to_string()))?;
        let line = json!({"d": d, "sigma": sigma, "u_star": u_star});
        writeln!(lock, "{line}").map_err(|e| Failure::config(e.to_string()))?;
    }
    Ok(EXIT_OK)
}

/// Collects the artifacts found in the output directory into `report.json`.
pub fn report(ctx: &Context) -> Result<i32, Failure> {
    let out = ctx.out_dir()?;
    let mut entries: Vec<PathBuf> = fs::read_dir(out)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", out.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    let read = |p: &Path| -> Option<Value> { serde_json::from_str(&fs::read_to_string(p).ok()?).ok() };
    let mut scenarios = Vec::new();
    for p in &entries {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(stem) = name.strip_suffix("_summary.json") {
            if let Some(v) = read(p) {
                scenarios.push(json!({
                    "name": stem,
                    "status": v["status"],
                    "controller": v["controller"],
                    "summary": v["summary"],
                }));
            }
        }
    }
    let tuning = read(&out.join("tuning_result.json")).map(|v| {
        json!({
            "plant": v["plant"],
            "params": v["result"]["params"],
            "eps0": v["result"]["eps0"],
            "min_margin": v["result"]["min_margin"],
            "warnings": v["result"]["warnings"],
        })
    });
    let verification = read(&out.join("verify.json")).map(|v| {
        json!({
            "plant": v["plant"],
            "min_margin": v["min_margin"],
            "n_violations": v["violations"].as_array().map_or(0, Vec::len),
        })
    });
    for s in &scenarios {
        println!(
            "{:<28} {:<18} min h+zeta {:>12} max|u| {:>12} violations {}",
            s["name"].as_str().unwrap_or("?"),
            s["status"].as_str().unwrap_or("?"),
            fmt_num(&s["summary"]["min_h_plus_zeta"]),
            fmt_num(&s["summary"]["max_abs_u"][0]),
            s["summary"]["input_violations"]
        );
    }
    write_json(
        &out.join("report.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "tuning": tuning,
            "verification": verification,
            "scenarios": scenarios,
            "metadata": metadata("report"),
        }),
    )?;
    Ok(EXIT_OK)
}

fn fmt_num(v: &Value) -> String {
    v.as_f64().map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}
