//! Batch interface: read a CSV file, run one analysis, emit a JSON report and
//! optionally a CSV table for plotting.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use medsens_core::benchmarking::{
    benchmark_moments, benchmark_worst_on, critical_delta, reference_r2, BenchmarkSpec,
};
use medsens_core::inference::{bootstrap_moments, effect_reports};
use medsens_core::mediation::{fit_observed, EffectKind, MediationData, NaturalSensitivity, Z_95};
use medsens_core::oracle::{rv_ratio_study, RvRatioRow, RatioDesign};
use medsens_core::robustness::{robustness_value_on, ConfounderMode, RVReport, SearchOptions, TSurface};
use medsens_core::{Mat, Vector};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("numerical error: {0}")]
    Numerical(medsens_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<medsens_core::Error> for CliError {
    fn from(e: medsens_core::Error) -> Self {
        use medsens_core::Error as E;
        match e {
            E::InvalidInput(_)
            | E::DimensionMismatch(_)
            | E::BoundaryR { .. }
            | E::NonFinite(_)
            | E::InsufficientSamples { .. }
            | E::BudgetTooSmall { .. }
            | E::InfeasibleTarget(_) => CliError::Input(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "medsens", version, about = "Sensitivity analysis for mediation under unmeasured confounding")]
pub struct Cli {
    #[command(subcommand)]
    pub config: RunConfig,
}

/// One command and its settings; echoed into every report.
#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunConfig {
    /// Adjusted direct and indirect effects at given sensitivity parameters.
    Effects(EffectsArgs),
    /// Robustness values and minimum-t curves.
    Rv(RvArgs),
    /// Worst cases relative to observed covariates.
    Benchmark(BenchmarkArgs),
    /// Robustness values under scalar and vector confounders on simulated data.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub exposure: String,
    /// Comma-separated mediator columns.
    #[arg(long, value_delimiter = ',', required = true)]
    pub mediators: Vec<String>,
    /// Comma-separated covariate columns; the intercept is added automatically.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Bootstrap resamples.
    #[arg(long = "bootstrap", default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV table path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EffectsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// R_{y~u|a,m,c}.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub ry: f64,
    /// R_{m~u|a,c}, one entry per mediator; zeros when absent.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub rm: Vec<f64>,
    /// R_{a~u|c}.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub ra: f64,
    /// The exposure is randomized; requires `--ra 0`.
    #[arg(long)]
    pub randomized: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `lo:hi:step` grid of squared bounds.
    #[arg(long = "rho-grid", default_value = "0.01:0.99:0.01")]
    pub rho_grid: String,
    #[arg(long)]
    pub randomized: bool,
    /// Allow a vector confounder (affects the indirect effect only).
    #[arg(long = "vector-u")]
    pub vector_u: bool,
    /// Objective evaluations per worst-case search.
    #[arg(long, default_value_t = medsens_core::robustness::DEFAULT_BUDGET)]
    pub budget: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Covariate for the critical-multiplier search.
    #[arg(long)]
    pub j: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub ka: f64,
    #[arg(long, default_value_t = 1.0)]
    pub km: f64,
    #[arg(long, default_value_t = 1.0)]
    pub ky: f64,
    /// `lo:hi:step` grid of multipliers.
    #[arg(long = "delta-grid", default_value = "0.1:10:0.1")]
    pub delta_grid: String,
    /// Pins the exposure cap to zero.
    #[arg(long)]
    pub randomized: bool,
    #[arg(long, default_value_t = medsens_core::robustness::DEFAULT_BUDGET)]
    pub budget: usize,
    /// CSV of worst t against the multiplier for `--j`.
    #[arg(long = "delta-csv")]
    pub delta_csv: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long = "dim-m", value_delimiter = ',', default_value = "2")]
    pub dim_m: Vec<usize>,
    #[arg(long = "r2-am", value_delimiter = ',', default_value = "0.3")]
    pub r2_am: Vec<f64>,
    #[arg(long = "r2-ym", value_delimiter = ',', default_value = "0.3")]
    pub r2_ym: Vec<f64>,
    #[arg(long, default_value_t = medsens_core::oracle::RATIO_DEFAULT_N)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub replications: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = medsens_core::robustness::DEFAULT_BUDGET)]
    pub budget: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Output of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Value,
    /// CSV files to write, keyed by path.
    pub tables: Vec<(PathBuf, String)>,
}

/// Parsed columns in the order of the roles that asked for them.
pub struct LoadedData {
    pub data: MediationData,
    pub covariates: Vec<String>,
}

/// Reads a numeric CSV with a header row. Rows with missing or non-numeric
/// cells are rejected.
pub fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(bytes.as_slice());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("data header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| CliError::Input(format!("data line {line}: {e}")))?;
        let row = record
            .iter()
            .zip(&headers)
            .map(|(cell, name)| {
                let cell = cell.trim();
                if cell.is_empty() {
                    return Err(CliError::Input(format!("data line {line}: missing value in column '{name}'")));
                }
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::Input(format!("data line {line}: column '{name}' value '{cell}' is not a finite number")))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Input("data has no rows".into()));
    }
    Ok((headers, rows))
}

/// Builds the mediation data set from column roles.
pub fn load_data(args: &DataArgs) -> CliResult<LoadedData> {
    let (headers, rows) = read_csv(&args.data)?;
    let mut seen = std::collections::BTreeSet::new();
    let roles = [("outcome", vec![args.outcome.clone()]), ("exposure", vec![args.exposure.clone()])];
    for (role, names) in roles.iter().chain([("mediators", args.mediators.clone()), ("covariates", args.covariates.clone())].iter()) {
        for name in names {
            if name.is_empty() {
                return Err(CliError::Input(format!("empty column name in --{role}")));
            }
            if !seen.insert(name.clone()) {
                return Err(CliError::Input(format!("column '{name}' is assigned to more than one role")));
            }
        }
    }
    if args.mediators.is_empty() {
        return Err(CliError::Input("--mediators needs at least one column".into()));
    }
    let index = |role: &str, name: &str| -> CliResult<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("--{role}: column '{name}' not found in data")))
    };
    let n = rows.len();
    let column = |j: usize| Vector::from_iterator(n, rows.iter().map(|r| r[j]));
    let block = |role: &str, names: &[String]| -> CliResult<Mat> {
        let idx = names.iter().map(|nm| index(role, nm)).collect::<CliResult<Vec<_>>>()?;
        Ok(Mat::from_fn(n, idx.len(), |i, k| rows[i][idx[k]]))
    };
    let y = column(index("outcome", &args.outcome)?);
    let a = column(index("exposure", &args.exposure)?);
    let m = block("mediators", &args.mediators)?;
    let c = block("covariates", &args.covariates)?;
    for (k, name) in args.covariates.iter().enumerate() {
        let col = c.column(k);
        if col.iter().all(|v| *v == col[0]) {
            return Err(CliError::Input(format!(
                "--covariates: column '{name}' is constant; the intercept is added automatically"
            )));
        }
    }
    if args.bootstrap < 2 {
        return Err(CliError::Input("--bootstrap must be at least 2".into()));
    }
    let data = MediationData::new(y, a, m, c)?;
    Ok(LoadedData { data, covariates: args.covariates.clone() })
}

/// Parses `lo:hi:step` into an increasing grid.
pub fn parse_grid(spec: &str, flag: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || CliError::Input(format!("{flag}: expected lo:hi:step, got '{spec}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums = parts.iter().map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<CliResult<Vec<f64>>>()?;
    let (lo, hi, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0 && lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(bad());
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    // rounding keeps decimal grids such as 0.01:0.99:0.01 exact in print
    Ok((0..count).map(|k| ((lo + k as f64 * step) * 1e12).round() / 1e12).collect())
}

fn header(config: &RunConfig) -> serde_json::Map<String, Value> {
    let mut map = serde_json::Map::new();
    map.insert("schema_version".into(), json!(SCHEMA_VERSION));
    map.insert("config".into(), serde_json::to_value(config).expect("config serializes"));
    map
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

pub fn cmd_effects(config: &RunConfig, args: &EffectsArgs) -> CliResult<Outcome> {
    let loaded = load_data(&args.data)?;
    let q = loaded.data.q();
    let r_m = if args.rm.is_empty() { vec![0.0; q] } else { args.rm.clone() };
    if r_m.len() != q {
        return Err(CliError::Input(format!("--rm has {} entries, expected one per mediator ({q})", r_m.len())));
    }
    if args.randomized && args.ra != 0.0 {
        return Err(CliError::Input("--ra must be 0 with --randomized".into()));
    }
    let s = NaturalSensitivity::new(args.ry, Vector::from_vec(r_m), args.ra)?;
    let mm = fit_observed(&loaded.data)?;
    let plan = bootstrap_moments(&loaded.data, args.data.bootstrap, args.data.seed)?;
    let [obs_d, obs_i] = effect_reports(&mm, &plan, &NaturalSensitivity::zero(q))?;
    let [adj_d, adj_i] = effect_reports(&mm, &plan, &s)?;
    let mut out = header(config);
    out.insert(
        "sensitivity".into(),
        json!({ "r_y": s.r_y, "r_m": s.r_m.as_slice(), "r_a": s.r_a }),
    );
    out.insert("observed".into(), json!({ "direct": to_value(&obs_d), "indirect": to_value(&obs_i) }));
    out.insert("adjusted".into(), json!({ "direct": to_value(&adj_d), "indirect": to_value(&adj_i) }));
    out.insert("bootstrap_redraws".into(), json!(plan.redraws));
    Ok(Outcome { report: Value::Object(out), tables: vec![] })
}

/// Rows `rho,min_t_direct,min_t_indirect`.
pub fn curve_csv(direct: &RVReport, indirect: &RVReport) -> String {
    let mut s = String::from("rho,min_t_direct,min_t_indirect\n");
    for ((rho, td), (_, ti)) in direct.curve.iter().zip(&indirect.curve) {
        s.push_str(&format!("{rho},{td},{ti}\n"));
    }
    s
}

pub fn cmd_rv(config: &RunConfig, args: &RvArgs) -> CliResult<Outcome> {
    let grid = parse_grid(&args.rho_grid, "--rho-grid")?;
    let loaded = load_data(&args.data)?;
    let mm = fit_observed(&loaded.data)?;
    let plan = bootstrap_moments(&loaded.data, args.data.bootstrap, args.data.seed)?;
    let opts = SearchOptions { budget: args.budget, randomized: args.randomized };
    let mode = if args.vector_u { ConfounderMode::VectorU } else { ConfounderMode::ScalarU };
    let direct = robustness_value_on(&TSurface::new(&mm, &plan, EffectKind::Direct)?, Z_95, &grid, mode, &opts)?;
    let indirect = robustness_value_on(&TSurface::new(&mm, &plan, EffectKind::Indirect)?, Z_95, &grid, mode, &opts)?;
    let mut out = header(config);
    out.insert("direct".into(), to_value(&direct));
    out.insert("indirect".into(), to_value(&indirect));
    let tables = args.output.csv.iter().map(|p| (p.clone(), curve_csv(&direct, &indirect))).collect();
    Ok(Outcome { report: Value::Object(out), tables })
}

pub fn cmd_benchmark(config: &RunConfig, args: &BenchmarkArgs) -> CliResult<Outcome> {
    let deltas = parse_grid(&args.delta_grid, "--delta-grid")?;
    if deltas.iter().any(|d| *d <= 0.0) {
        return Err(CliError::Input("--delta-grid values must be positive".into()));
    }
    let loaded = load_data(&args.data)?;
    if loaded.covariates.is_empty() {
        return Err(CliError::Input("benchmarking needs at least one --covariates column".into()));
    }
    let target = match &args.j {
        Some(name) => Some(
            loaded
                .covariates
                .iter()
                .position(|c| c == name)
                .map(|k| k + 1)
                .ok_or_else(|| CliError::Input(format!("--j: '{name}' is not one of --covariates")))?,
        ),
        None => None,
    };
    let k_a = if args.randomized { 0.0 } else { args.ka };
    let data = &loaded.data;
    let mm = fit_observed(data)?;
    let plan = bootstrap_moments(data, args.data.bootstrap, args.data.seed)?;
    let surfaces = [
        TSurface::new(&mm, &plan, EffectKind::Direct)?,
        TSurface::new(&mm, &plan, EffectKind::Indirect)?,
    ];
    let mut rows = Vec::new();
    let mut bars = String::from("covariate,effect,worst_estimate,worst_t\n");
    for (k, name) in loaded.covariates.iter().enumerate() {
        let j = k + 1;
        let bm = benchmark_moments(data, j)?;
        let spec = BenchmarkSpec::new(j, k_a, args.km, args.ky);
        let mut row = serde_json::Map::new();
        row.insert("covariate".into(), json!(name));
        row.insert(
            "anchors".into(),
            json!({ "r_a_cj": bm.r_a_cj, "r_m_cj": bm.r_m_cj.as_slice(), "r_y_cj": bm.r_y_cj }),
        );
        row.insert("r2_y_cj".into(), json!(bm.r2_y_cj));
        row.insert("r2_m_cj".into(), json!(bm.r2_m_cj));
        for surface in &surfaces {
            let w = benchmark_worst_on(surface, &bm, &spec, args.budget)?;
            let label = effect_label(surface.effect_kind);
            bars.push_str(&format!("{name},{label},{},{}\n", w.worst_estimate, w.worst_t));
            row.insert(
                label.into(),
                json!({
                    "worst_estimate": w.worst_estimate,
                    "worst_t": w.worst_t,
                    "sign_flipped": w.sign_flipped,
                    "touches_infeasible": w.touches_infeasible,
                }),
            );
        }
        rows.push(Value::Object(row));
    }
    let (max_r2_y, max_r2_m) = reference_r2(data)?;
    let mut out = header(config);
    out.insert("caps".into(), json!({ "k_a": k_a, "k_m": args.km, "k_y": args.ky }));
    out.insert("reference_r2".into(), json!({ "max_r2_y_cj": max_r2_y, "max_r2_m_cj": max_r2_m }));
    out.insert("covariates".into(), Value::Array(rows));
    let mut tables: Vec<(PathBuf, String)> = args.output.csv.iter().map(|p| (p.clone(), bars.clone())).collect();

    if let Some(j) = target {
        let bm = benchmark_moments(data, j)?;
        let mut crit = serde_json::Map::new();
        crit.insert("covariate".into(), json!(args.j));
        for surface in &surfaces {
            let est = critical_delta(surface, &bm, 0.0, args.randomized, &deltas, args.budget)?;
            let ci = critical_delta(surface, &bm, Z_95, args.randomized, &deltas, args.budget)?;
            crit.insert(
                effect_label(surface.effect_kind).into(),
                json!({ "delta_estimate": est, "delta_ci": ci }),
            );
        }
        // worst t in the observed direction against the multiplier
        let mut curve = Vec::with_capacity(deltas.len());
        let mut csv = String::from("delta,worst_t_direct,worst_t_indirect\n");
        for &delta in &deltas {
            let spec = BenchmarkSpec::new(j, if args.randomized { 0.0 } else { delta }, delta, delta);
            let mut ts = [0.0; 2];
            for (slot, surface) in ts.iter_mut().zip(&surfaces) {
                let m = medsens_core::benchmarking::benchmark_search(
                    surface,
                    &bm,
                    &spec,
                    medsens_core::Criterion::TStat,
                    args.budget,
                )?;
                *slot = m.value;
            }
            csv.push_str(&format!("{delta},{},{}\n", ts[0], ts[1]));
            curve.push(json!([delta, ts[0], ts[1]]));
        }
        crit.insert("curve".into(), Value::Array(curve));
        out.insert("critical_delta".into(), Value::Object(crit));
        if let Some(p) = &args.delta_csv {
            tables.push((p.clone(), csv));
        }
    } else if args.delta_csv.is_some() {
        return Err(CliError::Input("--delta-csv needs --j".into()));
    }
    Ok(Outcome { report: Value::Object(out), tables })
}

fn effect_label(kind: EffectKind) -> &'static str {
    match kind {
        EffectKind::Direct => "direct",
        EffectKind::Indirect => "indirect",
    }
}

pub fn simulation_csv(rows: &[RvRatioRow]) -> String {
    let mut s = String::from("dim_m,r2_am,r2_ym,replication,rv_scalar_u,rv_vector_u,ratio\n");
    for r in rows {
        let ratio = r.ratio.map(|x| x.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.dim_m, r.r2_am, r.r2_ym, r.replication, r.rv_scalar_u, r.rv_vector_u, ratio
        ));
    }
    s
}

pub fn cmd_simulate(config: &RunConfig, args: &SimulateArgs) -> CliResult<Outcome> {
    if args.replications == 0 {
        return Err(CliError::Input("--replications must be positive".into()));
    }
    let mut designs = Vec::new();
    for &d in &args.dim_m {
        for &a in &args.r2_am {
            for &y in &args.r2_ym {
                designs.push(RatioDesign { dim_m: d, r2_am: a, r2_ym: y, n: args.n, seed: args.seed });
            }
        }
    }
    let opts = SearchOptions { budget: args.budget, randomized: false };
    let rows = rv_ratio_study(&designs, args.replications, &opts)?;
    let cells: Vec<Value> = designs
        .iter()
        .map(|d| {
            let cell: Vec<&RvRatioRow> =
                rows.iter().filter(|r| r.dim_m == d.dim_m && r.r2_am == d.r2_am && r.r2_ym == d.r2_ym).collect();
            let mean = |v: Vec<f64>| if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) };
            json!({
                "dim_m": d.dim_m,
                "r2_am": d.r2_am,
                "r2_ym": d.r2_ym,
                "mean_rv_scalar_u": mean(cell.iter().map(|r| r.rv_scalar_u).collect()),
                "mean_rv_vector_u": mean(cell.iter().map(|r| r.rv_vector_u).collect()),
                "mean_ratio": mean(cell.iter().filter_map(|r| r.ratio).collect()),
            })
        })
        .collect();
    let mut out = header(config);
    out.insert("cells".into(), Value::Array(cells));
    let tables = args.output.csv.iter().map(|p| (p.clone(), simulation_csv(&rows))).collect();
    Ok(Outcome { report: Value::Object(out), tables })
}

/// Runs the configured command without touching the file system for output.
pub fn run(config: &RunConfig) -> CliResult<Outcome> {
    match config {
        RunConfig::Effects(a) => cmd_effects(config, a),
        RunConfig::Rv(a) => cmd_rv(config, a),
        RunConfig::Benchmark(a) => cmd_benchmark(config, a),
        RunConfig::Simulate(a) => cmd_simulate(config, a),
    }
}

pub fn output_args(config: &RunConfig) -> &OutputArgs {
    match config {
        RunConfig::Effects(a) => &a.output,
        RunConfig::Rv(a) => &a.output,
        RunConfig::Benchmark(a) => &a.output,
        RunConfig::Simulate(a) => &a.output,
    }
}

/// Pretty JSON with a trailing newline.
pub fn render(report: &Value) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Runs the command and writes its outputs; returns the JSON text when no
/// `--out` path was given.
pub fn execute(config: &RunConfig) -> CliResult<Option<String>> {
    let outcome = run(config)?;
    let write = |path: &Path, text: &str| {
        std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
    };
    for (path, text) in &outcome.tables {
        write(path, text)?;
    }
    let json = render(&outcome.report);
    match &output_args(config).out {
        Some(path) => {
            write(path, &json)?;
            Ok(None)
        }
        None => Ok(Some(json)),
    }
}
