//! Experiment runner: JSON configs in, JSON reports and CSV tables out.
//!
//! Every artifact starts with a provenance record (tool version, subcommand,
//! config hash, seed). Wall-clock data goes to a `.run.json` sidecar so that
//! reports are byte-identical across reruns.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analyze::ConeParams;
use crate::domain::{CoefficientField, GraphDomain, MeasureKind};
use crate::error::{invalid, Error, Result};
use crate::geometry::{ball_volume_monte_carlo, measure_quasi_metric_constants, GroupConstants, PhasePoint};
use crate::grid::{
    solve_elliptic, solve_kolmogorov, solve_parabolic, EllipticOptions, GridFunction, KolmogorovBox, KolmogorovSteps,
    SolveReport,
};
use crate::homogenize::{effective_matrix, epsilon_sweep, SweepConfig};
use crate::simulate::{estimate_measure, ExitRefine, MeasureHistogram, Partition, SdeConfig, StepPolicy};
use crate::verify::{run_suite, SuiteReport, SUITES};

/// Environment variable overriding the output directory when `--out` is absent.
pub const OUT_DIR_ENV: &str = "KOLMO_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "kolmo", version, about = "Kolmogorov-operator boundary experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to $KOLMO_OUT_DIR, then the working directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel module work.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Group calculus, ball volumes, quasi-metric constants and domain checks.
    GeomCheck,
    /// Effective tensor of a periodic coefficient field.
    Cell,
    /// Monte Carlo boundary measure histogram.
    Measure,
    /// Dirichlet grid solve (elliptic, parabolic or Kolmogorov).
    Solve,
    /// Epsilon sweep of the homogenization error.
    Homogenize,
    /// Self-check suite with a pass/fail report.
    Verify {
        /// One of the suite names, or `all`.
        suite: String,
        /// Sample budget; each suite has its own default.
        #[arg(long)]
        samples: Option<u64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GeomCheck => "geom-check",
            Command::Cell => "cell",
            Command::Measure => "measure",
            Command::Solve => "solve",
            Command::Homogenize => "homogenize",
            Command::Verify { .. } => "verify",
        }
    }
}

/// Boundary or initial data as a closed-form function of the grid coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Datum {
    Constant {
        value: f64,
    },
    /// `offset + coeffs . c`.
    Affine {
        #[serde(default)]
        offset: f64,
        coeffs: Vec<f64>,
    },
    /// `amp * prod_i sin(freq_i c_i + phase_i)`.
    SineProduct {
        amp: f64,
        freq: Vec<f64>,
        #[serde(default)]
        phase: Vec<f64>,
    },
    /// `amp * prod_i (1 - ((c_i - center_i) / radius_i)^2)_+^2`.
    Bump {
        amp: f64,
        center: Vec<f64>,
        radius: Vec<f64>,
    },
    /// `1` where `c[axis] <= at`, else `0`.
    Step {
        axis: usize,
        at: f64,
    },
    Product {
        factors: Vec<Datum>,
    },
}

impl Datum {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let len = |what: &str, n: usize| {
            if n == dim {
                Ok(())
            } else {
                Err(invalid(format!("datum {what} has length {n}, expected {dim}")))
            }
        };
        match self {
            Datum::Constant { .. } => Ok(()),
            Datum::Affine { coeffs, .. } => len("coeffs", coeffs.len()),
            Datum::SineProduct { freq, phase, .. } => {
                len("freq", freq.len())?;
                if phase.is_empty() {
                    Ok(())
                } else {
                    len("phase", phase.len())
                }
            }
            Datum::Bump { center, radius, .. } => {
                len("center", center.len())?;
                len("radius", radius.len())?;
                if radius.iter().any(|r| !(*r > 0.0)) {
                    return Err(invalid("bump radii must be > 0"));
                }
                Ok(())
            }
            Datum::Step { axis, .. } => {
                if *axis < dim {
                    Ok(())
                } else {
                    Err(invalid(format!("step axis {axis} out of range for {dim} coordinates")))
                }
            }
            Datum::Product { factors } => factors.iter().try_for_each(|f| f.validate(dim)),
        }
    }

    pub fn eval(&self, c: &[f64]) -> f64 {
        match self {
            Datum::Constant { value } => *value,
            Datum::Affine { offset, coeffs } => offset + coeffs.iter().zip(c).map(|(a, b)| a * b).sum::<f64>(),
            Datum::SineProduct { amp, freq, phase } => {
                amp * c
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (freq[i] * v + phase.get(i).copied().unwrap_or(0.0)).sin())
                    .product::<f64>()
            }
            Datum::Bump { amp, center, radius } => {
                amp * c
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let s = (v - center[i]) / radius[i];
                        (1.0 - s * s).max(0.0).powi(2)
                    })
                    .product::<f64>()
            }
            Datum::Step { axis, at } => {
                if c[*axis] <= *at {
                    1.0
                } else {
                    0.0
                }
            }
            Datum::Product { factors } => factors.iter().map(|f| f.eval(c)).product(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeomCheckConfig {
    pub m: usize,
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default = "default_volume_samples")]
    pub volume_samples: u64,
    #[serde(default)]
    pub domain: Option<GraphDomain>,
    #[serde(default)]
    pub cone: Option<ConeParams>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_samples() -> u64 {
    10_000
}

fn default_volume_samples() -> u64 {
    200_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub field: CoefficientField,
    #[serde(default = "default_cell_grid")]
    pub grid: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_cell_grid() -> usize {
    256
}

/// Monte Carlo settings; the seed comes from the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSpec {
    #[serde(default)]
    pub dt: f64,
    pub max_time: f64,
    pub n_paths: u64,
    #[serde(default)]
    pub exit_refine: ExitRefine,
    #[serde(default)]
    pub step: StepPolicy,
    #[serde(default = "default_batch")]
    pub batch: u64,
}

fn default_batch() -> u64 {
    1024
}

impl SdeSpec {
    fn config(&self, seed: u64) -> SdeConfig {
        let mut c = SdeConfig::new(self.dt, self.max_time, self.n_paths, seed);
        c.exit_refine = self.exit_refine;
        c.step = self.step;
        c.batch = self.batch;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    pub domain: GraphDomain,
    pub field: CoefficientField,
    pub pole: PhasePoint,
    pub kind: MeasureKind,
    #[serde(default)]
    pub adjoint: bool,
    pub partition: Partition,
    pub sde: SdeSpec,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverSpec {
    /// Coordinates `x`.
    Elliptic {
        lo: Vec<f64>,
        hi: Vec<f64>,
        h: f64,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
    /// Coordinates `(x, t)`, `m = 1`.
    Parabolic {
        x: (f64, f64),
        t: (f64, f64),
        hx: f64,
        ht: f64,
    },
    /// Coordinates `(x, y, t)`, `m = 1`; `ht` defaults to `cfl` times the transport limit.
    Kolmogorov {
        #[serde(rename = "box")]
        bx: KolmogorovBox,
        hx: f64,
        hy: f64,
        #[serde(default)]
        ht: Option<f64>,
        #[serde(default = "default_cfl")]
        cfl: f64,
        #[serde(default = "default_stride")]
        store_stride: usize,
        #[serde(default)]
        eps: Option<f64>,
    },
}

fn default_tol() -> f64 {
    EllipticOptions::default().tol
}

fn default_max_iter() -> usize {
    EllipticOptions::default().max_iter
}

fn default_cfl() -> f64 {
    0.9
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub domain: GraphDomain,
    pub field: CoefficientField,
    pub solver: SolverSpec,
    pub data: Datum,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogenizeConfig {
    pub domain: GraphDomain,
    pub field: CoefficientField,
    pub sweep: SweepConfig,
    /// Function of `(x, y, t)`.
    pub data: Datum,
    /// Replaces the computed effective coefficient (negative controls).
    #[serde(default)]
    pub a_bar: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// What a subcommand produced.
struct Output {
    report: Value,
    csv: Option<String>,
    extra: Vec<(String, String)>,
    summary: String,
    failed: bool,
}

/// Parses `argv` (including the program name), runs the subcommand and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(failed) => {
            if failed {
                EXIT_NUMERICAL
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("kolmo {}: {e}", cli.command.name());
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INVALID
            }
        }
    }
}

fn read_config<C: DeserializeOwned>(path: Option<&Path>) -> Result<C> {
    let path = path.ok_or_else(|| invalid("missing required flag --config"))?;
    let text =
        std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))
}

fn out_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn config_hash(config: &Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn execute(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be >= 1"));
        }
        // A pool may already exist when run() is called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let started = SystemTime::now();
    let cfg_path = cli.config.as_deref();
    let (stem, config, seed, output) = match &cli.command {
        Command::GeomCheck => {
            let c: GeomCheckConfig = read_config(cfg_path)?;
            let seed = cli.seed.or(c.seed).unwrap_or(0);
            (
                "geom-check".to_string(),
                serde_json::to_value(&c),
                seed,
                geom_check(&c, seed)?,
            )
        }
        Command::Cell => {
            let c: CellConfig = read_config(cfg_path)?;
            let seed = cli.seed.or(c.seed).unwrap_or(0);
            ("cell".to_string(), serde_json::to_value(&c), seed, cell(&c)?)
        }
        Command::Measure => {
            let c: MeasureConfig = read_config(cfg_path)?;
            let seed = cli.seed.or(c.seed).unwrap_or(0);
            (
                "measure".to_string(),
                serde_json::to_value(&c),
                seed,
                measure(&c, seed)?,
            )
        }
        Command::Solve => {
            let c: SolveConfig = read_config(cfg_path)?;
            let seed = cli.seed.or(c.seed).unwrap_or(0);
            ("solve".to_string(), serde_json::to_value(&c), seed, solve(&c)?)
        }
        Command::Homogenize => {
            let c: HomogenizeConfig = read_config(cfg_path)?;
            let seed = cli.seed.or(c.seed).unwrap_or(0);
            (
                "homogenize".to_string(),
                serde_json::to_value(&c),
                seed,
                homogenize(&c)?,
            )
        }
        Command::Verify { suite, samples } => {
            let seed = cli.seed.unwrap_or(0);
            let c = json!({ "suite": suite, "samples": samples });
            (format!("verify-{suite}"), Ok(c), seed, verify(suite, *samples, seed)?)
        }
    };
    let config = config.map_err(|e| Error::Format(e.to_string()))?;
    let hash = config_hash(&config);
    let provenance = json!({
        "tool": "kolmo",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": cli.command.name(),
        "config_sha256": hash,
        "seed": seed,
    });
    let header = format!(
        "# kolmo {} {} config_sha256={} seed={}",
        env!("CARGO_PKG_VERSION"),
        cli.command.name(),
        hash,
        seed
    );
    let dir = out_dir(cli.out.as_deref());
    std::fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    if cli.format != Format::Csv {
        let doc = json!({ "provenance": provenance, "config": config, "result": output.report });
        let path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&path, text + "\n")?;
        written.push(path);
    }
    if cli.format != Format::Json {
        if let Some(csv) = &output.csv {
            let path = dir.join(format!("{stem}.csv"));
            std::fs::write(&path, format!("{header}\n{csv}"))?;
            written.push(path);
        }
    }
    for (name, body) in &output.extra {
        let path = dir.join(format!("{stem}.{name}"));
        std::fs::write(&path, format!("{header}\n{body}"))?;
        written.push(path);
    }
    let secs = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let finished = SystemTime::now();
    let sidecar = json!({
        "config_sha256": hash,
        "started_unix": secs(started),
        "finished_unix": secs(finished),
        "threads": rayon::current_num_threads(),
    });
    std::fs::write(
        dir.join(format!("{stem}.run.json")),
        serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Format(e.to_string()))? + "\n",
    )?;
    print!("{}", output.summary);
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(output.failed)
}

fn geom_check(c: &GeomCheckConfig, seed: u64) -> Result<Output> {
    let q = GroupConstants::new(c.m)?.q;
    let axioms = run_suite("group-axioms", Some(c.samples), seed)?;
    let (v1, s1) = ball_volume_monte_carlo(c.m, 1.0, c.volume_samples, seed)?;
    let (v2, s2) = ball_volume_monte_carlo(c.m, 2.0, c.volume_samples, seed.wrapping_add(1))?;
    let qm = measure_quasi_metric_constants(c.m, c.samples, seed);
    let mut summary = axioms.lines();
    let _ = writeln!(summary, "vol(B2)/vol(B1) = {:.4} (2^q = {})", v2 / v1, 1u64 << q);
    let mut report = json!({
        "q": q,
        "group_axioms": axioms,
        "ball_volumes": { "r1": v1, "r1_stderr": s1, "r2": v2, "r2_stderr": s2, "ratio": v2 / v1, "expected": 2f64.powi(q as i32) },
        "quasi_metric": qm,
    });
    let mut failed = !axioms.passed();
    if let Some(dom) = &c.domain {
        dom.validate()?;
        if dom.m != c.m {
            return Err(Error::DimensionMismatch {
                expected: c.m,
                found: dom.m,
            });
        }
        let cone = c.cone.unwrap_or_else(|| ConeParams::for_domain(dom));
        let cone_ok = cone.validate(dom);
        let sampled = dom.sampled_lipschitz(c.samples, 4.0, seed);
        failed |= cone_ok.is_err() || sampled > dom.lipschitz_m() * (1.0 + 1e-9);
        report["domain"] = json!({
            "declared_lipschitz": dom.lipschitz_m(),
            "sampled_lipschitz": sampled,
            "cone": cone,
            "cone_valid": cone_ok.is_ok(),
            "cone_error": cone_ok.err().map(|e| e.to_string()),
        });
    }
    let csv = format!(
        "check,value,threshold,pass\n{}",
        checks_csv(std::slice::from_ref(&axioms))
    );
    Ok(Output {
        report,
        csv: Some(csv),
        extra: Vec::new(),
        summary,
        failed,
    })
}

fn checks_csv(reports: &[SuiteReport]) -> String {
    let mut out = String::new();
    for r in reports {
        for c in &r.checks {
            let _ = writeln!(
                out,
                "{}: {},{},{},{}",
                r.suite,
                c.name.replace(',', ";"),
                c.value,
                c.threshold,
                c.pass
            );
        }
    }
    out
}

fn cell(c: &CellConfig) -> Result<Output> {
    c.field.validate()?;
    let t = effective_matrix(&c.field, c.grid)?;
    let eig = t.eigenvalues();
    let summary = format!("effective tensor {:?}\n", t.matrix);
    Ok(Output {
        report: json!({
            "a_bar": t.matrix,
            "grid": t.grid,
            "asymmetry": t.asymmetry(),
            "eigenvalues": eig,
            "kappa_check": t.check(c.field.kappa, 1e-8).is_ok(),
        }),
        csv: Some(t.to_csv()),
        extra: Vec::new(),
        summary,
        failed: false,
    })
}

fn checked_point(p: &PhasePoint) -> Result<PhasePoint> {
    PhasePoint::new(p.x().to_vec(), p.y().to_vec(), p.t())
}

/// Runs the Monte Carlo estimate described by a measure config.
pub fn run_measure(c: &MeasureConfig, seed: u64) -> Result<MeasureHistogram> {
    let pole = checked_point(&c.pole)?;
    let sde = c.sde.config(seed);
    estimate_measure(&c.domain, &c.field, &pole, &c.partition, &sde, c.kind, c.adjoint)
}

fn measure(c: &MeasureConfig, seed: u64) -> Result<Output> {
    let h = run_measure(c, seed)?;
    let summary = format!(
        "{} paths, captured {:.4}, censored {:.4}\n",
        h.n_paths,
        h.captured_fraction(),
        h.censored_fraction()
    );
    Ok(Output {
        report: h.to_json(&c.domain)?,
        csv: Some(h.to_csv(&c.domain)?),
        extra: Vec::new(),
        summary,
        failed: false,
    })
}

fn grid_csv(gf: &GridFunction) -> String {
    let d = gf.axes.len();
    let mut out: String = (0..d).map(|k| format!("c{k},")).collect();
    out.push_str("value\n");
    for p in 0..gf.values.len() {
        for v in gf.coords(p) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{}", gf.values[p]);
    }
    out
}

/// Runs the grid solve described by a solve config.
pub fn run_solve(c: &SolveConfig) -> Result<(GridFunction, SolveReport)> {
    c.domain.validate()?;
    c.field.validate()?;
    match &c.solver {
        SolverSpec::Elliptic {
            lo,
            hi,
            h,
            tol,
            max_iter,
        } => {
            c.data.validate(c.domain.m)?;
            let opts = EllipticOptions {
                tol: *tol,
                max_iter: *max_iter,
            };
            solve_elliptic(&c.domain, &c.field, lo, hi, *h, &|x| c.data.eval(x), &opts)
        }
        SolverSpec::Parabolic { x, t, hx, ht } => {
            c.data.validate(2)?;
            solve_parabolic(&c.domain, &c.field, *x, *t, *hx, *ht, &|x, t| c.data.eval(&[x, t]))
        }
        SolverSpec::Kolmogorov {
            bx,
            hx,
            hy,
            ht,
            cfl,
            store_stride,
            eps,
        } => {
            c.data.validate(3)?;
            let mut steps = KolmogorovSteps::with_cfl(bx, *hx, *hy, *cfl);
            if let Some(ht) = ht {
                steps.ht = *ht;
            }
            steps.store_stride = *store_stride;
            solve_kolmogorov(
                &c.domain,
                &c.field,
                bx,
                &steps,
                &|x, y, t| c.data.eval(&[x, y, t]),
                *eps,
            )
        }
    }
}

fn solve(c: &SolveConfig) -> Result<Output> {
    let (gf, rep) = run_solve(c)?;
    let (lo, hi) = gf
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let summary = format!(
        "{} nodes, range [{lo:.6e}, {hi:.6e}], max-principle violation {:.3e}\n",
        gf.values.len(),
        rep.max_principle_violation
    );
    Ok(Output {
        report: json!({ "solve": rep, "axes": gf.axes, "min": lo, "max": hi }),
        csv: Some(grid_csv(&gf)),
        extra: vec![("grid.txt".to_string(), gf.to_text())],
        summary,
        failed: false,
    })
}

fn homogenize(c: &HomogenizeConfig) -> Result<Output> {
    c.domain.validate()?;
    c.data.validate(3)?;
    let table = epsilon_sweep(
        &c.domain,
        &c.field,
        &|x, y, t| c.data.eval(&[x, y, t]),
        &c.sweep,
        c.a_bar,
    )?;
    let summary = format!(
        "a_bar = {:.6}, strictly decreasing: {}, max ratio {:.4}\n",
        table.a_bar,
        table.strictly_decreasing(),
        table.max_ratio()
    );
    Ok(Output {
        report: json!({
            "table": table,
            "strictly_decreasing": table.strictly_decreasing(),
            "max_ratio": table.max_ratio(),
        }),
        csv: Some(table.to_csv()),
        extra: Vec::new(),
        summary,
        failed: false,
    })
}

fn verify(suite: &str, samples: Option<u64>, seed: u64) -> Result<Output> {
    let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite] };
    let reports: Vec<SuiteReport> = names
        .iter()
        .map(|n| run_suite(n, samples, seed))
        .collect::<Result<_>>()?;
    let failed = reports.iter().any(|r| !r.passed());
    let summary: String = reports.iter().map(|r| r.lines()).collect();
    Ok(Output {
        report: json!({ "passed": !failed, "suites": reports }),
        csv: Some(format!("check,value,threshold,pass\n{}", checks_csv(&reports))),
        extra: Vec::new(),
        summary,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datum_families() {
        let d: Datum = serde_json::from_str(
            r#"{"family":"product","factors":[
                {"family":"affine","offset":1,"coeffs":[0,0.5,0]},
                {"family":"step","axis":2,"at":0}]}"#,
        )
        .unwrap();
        d.validate(3).unwrap();
        assert_eq!(d.eval(&[0.0, 2.0, -1.0]), 2.0);
        assert_eq!(d.eval(&[0.0, 2.0, 1.0]), 0.0);
        let b = Datum::Bump {
            amp: 2.0,
            center: vec![0.0],
            radius: vec![1.0],
        };
        assert_eq!(b.eval(&[0.0]), 2.0);
        assert_eq!(b.eval(&[1.5]), 0.0);
        assert!(Datum::Affine {
            offset: 0.0,
            coeffs: vec![1.0]
        }
        .validate(2)
        .is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = serde_json::from_str::<CellConfig>(
            r#"{"field":{"m":1,"family":"constant","matrix":[[1]],"kappa":1},"gird":8}"#,
        );
        assert!(e.unwrap_err().to_string().contains("gird"));
    }

    #[test]
    fn missing_key_is_named() {
        let e = serde_json::from_str::<GeomCheckConfig>(r#"{"samples": 10}"#).unwrap_err();
        assert!(e.to_string().contains("`m`"), "{e}");
    }
}
