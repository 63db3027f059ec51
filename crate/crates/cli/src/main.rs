mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use manifest::Recorder;
use nonlin::flows::realized_endpoint;
use nonlin::*;

#[derive(Parser)]
#[command(name = "nonlin", version, about = "Nonlinear control systems through integrator extension")]
struct Cli {
    /// Where to write the run manifest. Defaults to `<first output>.manifest.json`,
    /// or `nonlin-manifest.json` when the command writes no file.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a system file and print its normalized text.
    Parse { path: PathBuf },
    /// Append one integrator per input.
    Extend {
        path: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Extension record (JSON); defaults to `<out>.json`.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Strip pure-integrator states until none is left.
    Reduce {
        path: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reduction certificate (JSON); defaults to `<out>.json`.
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Kalman rank or Lie-algebra rank check.
    Check {
        path: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Comma-separated evaluation point for larc; origin by default.
        #[arg(long, allow_hyphen_values = true)]
        point: Option<String>,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate under a piecewise-constant control.
    Simulate {
        path: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        #[arg(long)]
        control_file: PathBuf,
        #[arg(long, default_value_t = flows::DEFAULT_STEP)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sampled reachable-cell coverage.
    Reach {
        path: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        #[arg(long)]
        out_csv: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Coverage of a system against its projected extension.
    Compare {
        path: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Endpoint error of large-gain plan realization across a gain sweep.
    Realize {
        path: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// `lo:hi:count`, geometric spacing.
        #[arg(long, default_value = "10:80:4", allow_hyphen_values = true)]
        gain_sweep: String,
        /// Start in the extended coordinates; origin by default.
        #[arg(long, allow_hyphen_values = true)]
        p0: Option<String>,
        #[arg(long, default_value_t = flows::DEFAULT_STEP)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Kalman,
    Larc,
}

enum Fail {
    /// Bad file, flag or configuration.
    Input(String),
    /// The analysis ran and the answer is no.
    Verdict(String),
    /// Integration blew up.
    Numerical(String),
}

impl Fail {
    fn code(&self) -> u8 {
        match self {
            Fail::Input(_) => 1,
            Fail::Verdict(_) => 2,
            Fail::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Fail::Input(m) | Fail::Verdict(m) | Fail::Numerical(m) => m,
        }
    }
}

impl From<String> for Fail {
    fn from(s: String) -> Self {
        Fail::Input(s)
    }
}

fn flow_fail(e: FlowError) -> Fail {
    match e {
        FlowError::BlowUp { .. } | FlowError::Eval { .. } => Fail::Numerical(e.to_string()),
        e => Fail::Input(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Parse { .. } => "parse",
        Command::Extend { .. } => "extend",
        Command::Reduce { .. } => "reduce",
        Command::Check { .. } => "check",
        Command::Simulate { .. } => "simulate",
        Command::Reach { .. } => "reach",
        Command::Compare { .. } => "compare",
        Command::Realize { .. } => "realize",
    };
    let mut rec = Recorder::start(name);
    let result = run(cli.command, &mut rec);
    let (code, error) = match &result {
        Ok(()) => (0, None),
        Err(f) => {
            eprintln!("error: {}", f.message());
            (f.code(), Some(f.message().to_string()))
        }
    };
    let path = cli.manifest.unwrap_or_else(|| match rec.first_output() {
        Some(p) => append_ext(&p, "manifest.json"),
        None => PathBuf::from("nonlin-manifest.json"),
    });
    if let Err(e) = rec.finish(&path, code as i32, error) {
        eprintln!("error: manifest {}: {e}", path.display());
        return ExitCode::from(1);
    }
    ExitCode::from(code)
}

fn append_ext(p: &Path, ext: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn load_system(rec: &mut Recorder, path: &Path) -> Result<ControlSystem, Fail> {
    let text = rec.read(path)?;
    parse(&text).map_err(|e| Fail::Input(format!("{}: {e}", path.display())))
}

fn load_json<T: for<'de> Deserialize<'de>>(rec: &mut Recorder, path: &Path) -> Result<T, Fail> {
    let text = rec.read(path)?;
    serde_json::from_str(&text).map_err(|e| Fail::Input(format!("{}: {e}", path.display())))
}

fn parse_vector(s: Option<&str>, n: usize, what: &str) -> Result<Vec<f64>, Fail> {
    let Some(s) = s else { return Ok(vec![0.0; n]) };
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Fail::Input(format!("--{what}: {e}")))?;
    if v.len() != n {
        return Err(Fail::Input(format!("--{what}: expected {n} values, got {}", v.len())));
    }
    Ok(v)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn run(cmd: Command, rec: &mut Recorder) -> Result<(), Fail> {
    match cmd {
        Command::Parse { path } => {
            let sys = load_system(rec, &path)?;
            print!("{}", serialize(&sys));
            Ok(())
        }
        Command::Extend { path, out, record } => {
            let sys = load_system(rec, &path)?;
            let ext = extend(&sys).map_err(|e| Fail::Input(e.to_string()))?;
            rec.write(&out, &serialize(&ext.extended))?;
            rec.write(&record.unwrap_or_else(|| append_ext(&out, "json")), &to_json(&ext))?;
            println!(
                "extended {}: {} states, {} inputs -> {} states",
                sys.name(),
                sys.n(),
                sys.m(),
                ext.extended.n()
            );
            Ok(())
        }
        Command::Reduce { path, out, certificate } => {
            let sys = load_system(rec, &path)?;
            let cert = reduce_integrator(&sys);
            rec.write(&out, &serialize(&cert.reduced))?;
            let cert_path = certificate.unwrap_or_else(|| append_ext(&out, "json"));
            rec.write(&cert_path, &(cert.to_json() + "\n"))?;
            let stripped: Vec<&str> = cert.steps.iter().map(|s| s.stripped_state.as_str()).collect();
            println!(
                "reduced {}: {} step(s) [{}], {} -> {} states",
                sys.name(),
                cert.count(),
                stripped.join(", "),
                sys.n(),
                cert.reduced.n()
            );
            Ok(())
        }
        Command::Check {
            path,
            method,
            point,
            depth,
            out,
        } => {
            let sys = load_system(rec, &path)?;
            rec.config(json!({"method": method, "point": point, "depth": depth}));
            let (report, negative) = check(&sys, method, point.as_deref(), depth)?;
            let text = to_json(&report);
            match &out {
                Some(p) => rec.write(p, &text)?,
                None => print!("{text}"),
            }
            if out.is_some() {
                println!("{}", report["verdict"].as_str().unwrap_or(""));
            }
            match negative {
                Some(msg) => Err(Fail::Verdict(msg)),
                None => Ok(()),
            }
        }
        Command::Simulate {
            path,
            x0,
            control_file,
            step,
            out,
        } => {
            let sys = load_system(rec, &path)?;
            let ctrl: PiecewiseControl = load_json(rec, &control_file)?;
            let x0 = parse_vector(x0.as_deref(), sys.n(), "x0")?;
            rec.config(json!({"x0": x0, "step": step}));
            let traj = integrate(&sys, &x0, &ctrl, step).map_err(flow_fail)?;
            rec.write(&out, &traj.to_csv(sys.state_names()))?;
            println!("t = {}: {:?}", traj.times.last().copied().unwrap_or(0.0), traj.final_state());
            Ok(())
        }
        Command::Reach {
            path,
            config,
            x0,
            out_csv,
            summary,
        } => {
            let sys = load_system(rec, &path)?;
            let cfg: ReachConfig = load_json(rec, &config)?;
            let x0 = parse_vector(x0.as_deref(), sys.n(), "x0")?;
            rec.config(json!({"reach": cfg, "x0": x0}));
            rec.seed(cfg.seed);
            let est = sample_reach(&sys, &x0, &cfg).map_err(|e| Fail::Input(e.to_string()))?;
            let names = &sys.state_names()[..cfg.window.len().min(sys.n())];
            if let Some(p) = out_csv {
                rec.write(&p, &est.to_csv(names))?;
            }
            if let Some(p) = summary {
                rec.write(&p, &to_json(&est.summary()))?;
            }
            println!(
                "coverage {:.4} ({} of {} cells), {} of {} samples kept",
                est.coverage, est.visited, est.total_cells, est.retained, est.samples
            );
            Ok(())
        }
        Command::Compare { path, config, x0, out } => {
            let sys = load_system(rec, &path)?;
            let cfg: CompareConfig = load_json(rec, &config)?;
            let x0 = parse_vector(x0.as_deref(), sys.n(), "x0")?;
            rec.config(json!({"compare": cfg, "x0": x0}));
            rec.seed(cfg.reach.seed);
            let ext_cfg = cfg.extended(sys.m())?;
            let report = coverage_compare(&sys, &x0, &cfg.reach, &ext_cfg).map_err(|e| Fail::Input(e.to_string()))?;
            let text = to_json(&report);
            match &out {
                Some(p) => rec.write(p, &text)?,
                None => print!("{text}"),
            }
            println!(
                "{}: original {:.4}, extension {:.4}, difference {:.4}",
                report.verdict, report.coverage_original, report.coverage_extended_projected, report.difference
            );
            if report.consistent() {
                Ok(())
            } else {
                Err(Fail::Verdict(format!("coverage difference {} exceeds {}", report.difference, report.threshold)))
            }
        }
        Command::Realize {
            path,
            plan,
            gain_sweep,
            p0,
            step,
            out,
        } => {
            let sys = load_system(rec, &path)?;
            let plan = match load_json::<PlanFile>(rec, &plan)? {
                PlanFile::Plan(p) => p,
                PlanFile::Bare(segments) => FlowPlan::new(segments),
            };
            let gains = gain_sweep_values(&gain_sweep)?;
            let ext = extend(&sys).map_err(|e| Fail::Input(e.to_string()))?;
            let p0 = parse_vector(p0.as_deref(), ext.n() + ext.m(), "p0")?;
            rec.config(json!({"gains": gains, "p0": p0, "step": step}));
            let table = realize_table(&ext, &plan, &gains, &p0, step)?;
            rec.write(&out, &table)?;
            print!("{table}");
            Ok(())
        }
    }
}

/// A reach configuration for the original system plus, optionally, the
/// extension's `y` window and `v` box. By default `y` is kept inside the
/// original input box and `v` ranges twenty times wider, so `y` can sweep its
/// box within one segment.
#[derive(Debug, Serialize, Deserialize)]
struct CompareConfig {
    #[serde(flatten)]
    reach: ReachConfig,
    #[serde(default)]
    y_window: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    extended_input_box: Option<Vec<[f64; 2]>>,
}

impl CompareConfig {
    fn extended(&self, m: usize) -> Result<ReachConfig, Fail> {
        let y_window = self.y_window.clone().unwrap_or_else(|| self.reach.input_box.clone());
        let input_box = self
            .extended_input_box
            .clone()
            .unwrap_or_else(|| self.reach.input_box.iter().map(|&[lo, hi]| [20.0 * lo, 20.0 * hi]).collect());
        if y_window.len() != m {
            return Err(Fail::Input(format!("y_window: expected {m} axes, got {}", y_window.len())));
        }
        let mut window = self.reach.window.clone();
        window.extend(y_window);
        Ok(ReachConfig {
            input_box,
            window,
            ..self.reach.clone()
        })
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PlanFile {
    Plan(FlowPlan),
    Bare(Vec<PlanSegment>),
}

fn gain_sweep_values(sweep: &str) -> Result<Vec<f64>, Fail> {
    let bad = || Fail::Input(format!("--gain-sweep `{sweep}`: expected lo:hi:count with 0 < lo <= hi"));
    let parts: Vec<&str> = sweep.split(':').collect();
    let [lo, hi, count] = parts[..] else { return Err(bad()) };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let count: usize = count.trim().parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 {
        return Err(bad());
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    let mut gains: Vec<f64> = (0..count).map(|k| lo * ratio.powi(k as i32)).collect();
    gains[count - 1] = hi;
    Ok(gains)
}

fn realize_table(ext: &ExtensionRecord, plan: &FlowPlan, gains: &[f64], p0: &[f64], step: f64) -> Result<String, Fail> {
    let ideal = ideal_plan_endpoint(ext, plan, p0, step).map_err(flow_fail)?;
    let names = ext.extended.state_names();
    let mut out = String::from("gain,error");
    for s in names {
        out.push(',');
        out.push_str(s);
    }
    out.push('\n');
    // nothing to realize: the endpoint is the start for every gain
    let gains = if plan.segments.is_empty() { &gains[..1] } else { gains };
    for &g in gains {
        let ctrl = realize_plan(ext, plan, g).map_err(flow_fail)?;
        let p = realized_endpoint(ext, &ctrl, p0, step).map_err(flow_fail)?;
        let err = p.iter().zip(&ideal).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        out.push_str(&format!("{g:.16e},{err:.16e}"));
        for v in &p {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    Ok(out)
}

fn check(
    sys: &ControlSystem,
    method: Method,
    point: Option<&str>,
    depth: usize,
) -> Result<(serde_json::Value, Option<String>), Fail> {
    let aff = match to_affine(sys) {
        Ok(a) => a,
        Err(e) => {
            let verdict = format!("{e}; extend the system first");
            let report = json!({"method": method, "system": sys.name(), "status": "not_affine", "detail": e, "verdict": verdict});
            return Ok((report, Some(verdict)));
        }
    };
    match method {
        Method::Kalman => {
            let lin = match linear_of(&aff) {
                Ok(l) => l,
                Err(e) => {
                    let verdict = e.to_string();
                    let report = json!({"method": method, "system": sys.name(), "status": "not_linear", "detail": e, "verdict": verdict});
                    return Ok((report, Some(verdict)));
                }
            };
            let k = kalman_rank(&lin);
            let verdict = if k.controllable {
                format!("controllable: Kalman rank {} of {}", k.rank, k.n)
            } else {
                format!("not controllable: Kalman rank {} of {}", k.rank, k.n)
            };
            let mut report = json!({
                "method": method,
                "system": sys.name(),
                "status": "ok",
                "rank": k.rank,
                "n": k.n,
                "controllable": k.controllable,
                "verdict": verdict,
            });
            // single input entering only the last of three states
            let b = lin.b.as_slice();
            if k.n == 3 && b == [0.0, 0.0, 1.0] {
                let a = nalgebra::Matrix3::from_fn(|i, j| lin.a[(i, j)]);
                report["three_to_two"] = serde_json::to_value(kalman_reduce_3to2(&a)).expect("serializable");
            }
            let negative = (!k.controllable).then_some(verdict);
            Ok((report, negative))
        }
        Method::Larc => {
            let x = parse_vector(point, sys.n(), "point")?;
            let r = larc(&aff, &x, depth).map_err(|e| Fail::Input(e.to_string()))?;
            let mut report = serde_json::to_value(&r).expect("serializable");
            report["method"] = json!(method);
            report["system"] = json!(sys.name());
            report["status"] = json!("ok");
            let negative = (!r.full_rank).then(|| r.verdict.clone());
            Ok((report, negative))
        }
    }
}
