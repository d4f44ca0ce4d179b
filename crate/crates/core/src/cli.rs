//! `faasfit` command line: validate, select, simulate, cost, bench.
//!
//! Exit codes are a stable contract: 0 success, 1 domain failure
//! (validation, selection, error-ratio threshold), 2 usage or configuration
//! error.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::catalog::{
    load_catalog, select_model_explained, CatalogError, ModelArtifact, SelectionConstraints,
};
use crate::cost::{
    billed_duration, cost_from_simulation, cost_report, find_pricing, load_pricing,
    render_cost_table, Money, PricingModel, VmBaseline,
};
use crate::fixtures::{self, read_profile_file};
use crate::harness::{
    self, BenchRun, BenchTarget, HarnessError, StubConfig, StubDelay, StubServer,
};
use crate::metrics::{read_csv_file, render_summary_table, write_csv_file, Summary};
use crate::packaging::{find_runtime, load_runtimes, PackageManifest, RuntimeLibrary};
use crate::providers::{validate_plan, CpuScaling, DeploymentPlan, ProviderLimits, ProviderSet};
use crate::simulator::{
    memory_sweep, simulate, LatencyProfile, LatencyTable, SimulationConfig, SimulationResult,
    TrafficPattern, DEFAULT_COLD_START_MS, DEFAULT_KEEP_ALIVE_S,
};
use crate::units::{format_mb, gb, mb, MB};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "faasfit",
    version,
    about = "Plan, simulate, cost and benchmark ML inference on serverless platforms"
)]
pub struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Directory with providers.json, runtimes.json, pricing.json and
    /// latency_table.json overriding the built-in profiles.
    #[arg(long, global = true)]
    pub profile_dir: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario's deployment package and memory against provider limits.
    Validate(ValidateArgs),
    /// Pick the best catalogued model that fits a provider.
    Select(SelectArgs),
    /// Simulate a scenario's traffic against a latency profile.
    Simulate(SimulateArgs),
    /// Serverless bill, VM baseline and break-even.
    Cost(CostArgs),
    /// Open-loop load test against an HTTP endpoint or the built-in stub.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub scenario: PathBuf,
    /// Validate against this provider instead of the scenario's.
    #[arg(long)]
    pub provider: Option<String>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Catalog JSON path, or builtin:sentiment / builtin:sts.
    #[arg(long)]
    pub catalog: String,
    #[arg(long, default_value = "aws")]
    pub provider: String,
    /// Package cap in MB; defaults to the provider's function-size limit.
    #[arg(long)]
    pub max_package_mb: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub code_mb: u64,
    #[arg(long, default_value = "onnxruntime")]
    pub runtime: String,
    #[arg(long, default_value = "f1_macro")]
    pub metric: String,
    #[arg(long)]
    pub min_score: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    /// Comma-separated memory sizes in MB; one summary per size.
    #[arg(long, value_delimiter = ',')]
    pub memory_sweep: Option<Vec<u64>>,
    /// Records CSV (single run) or sweep CSV (with --memory-sweep).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Full simulation result as JSON, usable by `cost --result`.
    #[arg(long)]
    pub result_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    pub scenario: Option<PathBuf>,
    /// Simulation result JSON written by `simulate --result-json`.
    #[arg(long)]
    pub result: Option<PathBuf>,
    #[arg(long)]
    pub requests: Option<u64>,
    #[arg(long)]
    pub exec_ms: Option<f64>,
    #[arg(long)]
    pub memory_mb: Option<u64>,
    /// Pricing profile name.
    #[arg(long)]
    pub pricing: Option<String>,
    /// Monthly VM price to compare against.
    #[arg(long)]
    pub vm: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PatternKind {
    Fixed,
    Poisson,
    Burst,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Target URL; omit to benchmark the built-in stub responder.
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long)]
    pub payload_file: Option<PathBuf>,
    #[arg(long, default_value = "POST")]
    pub method: String,
    /// Extra request header, `Name: value`. Repeatable.
    #[arg(long = "header")]
    pub headers: Vec<String>,
    /// Requests per second (high rate for burst patterns).
    #[arg(long, default_value_t = 10.0)]
    pub rate: f64,
    /// Seconds.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    #[arg(long, value_enum, default_value_t = PatternKind::Fixed)]
    pub pattern: PatternKind,
    #[arg(long, default_value_t = 0.0)]
    pub low_rate: f64,
    #[arg(long, default_value_t = 10.0)]
    pub period: f64,
    #[arg(long, default_value_t = 0.5)]
    pub duty: f64,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_WARMUP)]
    pub warmup: usize,
    /// Provider profile whose request-size limit the payload must respect.
    #[arg(long)]
    pub limits_profile: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub max_error_ratio: f64,
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
    /// Response header with server-side execution time in ms.
    #[arg(long)]
    pub exec_time_header: Option<String>,
    #[arg(long, default_value_t = 50.0)]
    pub stub_delay_ms: f64,
    #[arg(long)]
    pub stub_fail_every: Option<u64>,
}

/// Where execution-time samples for a simulation come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Constant {
        reference_memory_bytes: u64,
        ms: f64,
    },
    /// A row of the latency table, expanded to `samples` points.
    Table {
        platform: String,
        model: String,
        #[serde(default = "default_profile_samples")]
        samples: usize,
    },
    /// Durations from a metrics CSV.
    SamplesFile {
        reference_memory_bytes: u64,
        path: PathBuf,
    },
}

fn default_profile_samples() -> usize {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSettings {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_keep_alive")]
    pub keep_alive_s: f64,
    #[serde(default = "default_cold_start")]
    pub cold_start_ms: f64,
    #[serde(default)]
    pub max_instances: Option<u32>,
    /// Defaults to the provider profile's scaling law.
    #[serde(default)]
    pub scaling: Option<CpuScaling>,
}

fn default_keep_alive() -> f64 {
    DEFAULT_KEEP_ALIVE_S
}

fn default_cold_start() -> f64 {
    DEFAULT_COLD_START_MS
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            seed: 0,
            keep_alive_s: DEFAULT_KEEP_ALIVE_S,
            cold_start_ms: DEFAULT_COLD_START_MS,
            max_instances: None,
            scaling: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    pub requests: u64,
    pub exec_ms: f64,
}

/// Everything a command needs, in one committed file. Relative paths are
/// resolved against the scenario file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub provider: String,
    #[serde(default = "default_pricing")]
    pub pricing: String,
    #[serde(default = "default_memory")]
    pub memory_bytes: u64,
    #[serde(default)]
    pub package: Option<PackageManifest>,
    #[serde(default)]
    pub catalog: Option<String>,
    #[serde(default)]
    pub profile: Option<ProfileSpec>,
    #[serde(default)]
    pub traffic: Option<TrafficPattern>,
    #[serde(default)]
    pub simulation: Option<SimulationSettings>,
    #[serde(default)]
    pub memory_sweep_mb: Option<Vec<u64>>,
    #[serde(default)]
    pub workload: Option<Workload>,
    #[serde(default)]
    pub vm: Option<VmBaseline>,
}

fn default_pricing() -> String {
    "aws".into()
}

fn default_memory() -> u64 {
    gb(1)
}

/// Provider, runtime, pricing and latency-table profiles.
pub struct Profiles {
    pub providers: ProviderSet,
    pub runtimes: Vec<RuntimeLibrary>,
    pub pricing: Vec<PricingModel>,
    pub latency: LatencyTable,
}

impl Profiles {
    pub fn load(dir: Option<&Path>) -> anyhow::Result<Self> {
        let read = |name: &str, builtin: &str| {
            read_profile_file(dir, name, builtin).with_context(|| format!("reading {name}"))
        };
        Ok(Profiles {
            providers: ProviderSet::from_json(&read("providers.json", fixtures::PROVIDERS_JSON)?)
                .context("providers.json")?,
            runtimes: load_runtimes(&read("runtimes.json", fixtures::RUNTIMES_JSON)?)
                .context("runtimes.json")?,
            pricing: load_pricing(&read("pricing.json", fixtures::PRICING_JSON)?)
                .context("pricing.json")?,
            latency: LatencyTable::from_json(&read(
                "latency_table.json",
                fixtures::LATENCY_TABLE_JSON,
            )?)
            .context("latency_table.json")?,
        })
    }
}

struct LoadedScenario {
    scenario: Scenario,
    base_dir: PathBuf,
}

impl LoadedScenario {
    fn load(path: &Path, profiles: &Profiles) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading scenario {}", path.display()))?;
        let scenario: Scenario = serde_json::from_str(&text)
            .with_context(|| format!("parsing scenario {}", path.display()))?;
        profiles.providers.get(&scenario.provider)?;
        find_pricing(&profiles.pricing, &scenario.pricing)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedScenario { scenario, base_dir })
    }

    fn catalog(&self) -> anyhow::Result<Vec<ModelArtifact>> {
        let spec = self
            .scenario
            .catalog
            .as_deref()
            .ok_or_else(|| anyhow!("scenario has no catalog"))?;
        load_catalog_spec(spec, &self.base_dir)
    }

    fn profile(&self, profiles: &Profiles) -> anyhow::Result<LatencyProfile> {
        let spec = self
            .scenario
            .profile
            .as_ref()
            .ok_or_else(|| anyhow!("scenario has no latency profile"))?;
        Ok(match spec {
            ProfileSpec::Constant {
                reference_memory_bytes,
                ms,
            } => LatencyProfile::constant(*reference_memory_bytes, *ms),
            ProfileSpec::Table {
                platform,
                model,
                samples,
            } => profiles.latency.profile(platform, model, *samples)?,
            ProfileSpec::SamplesFile {
                reference_memory_bytes,
                path,
            } => {
                let samples = read_csv_file(&self.base_dir.join(path))?;
                LatencyProfile::from_samples(*reference_memory_bytes, &samples)
            }
        })
    }

    fn sim_config(
        &self,
        profiles: &Profiles,
        seed: Option<u64>,
    ) -> anyhow::Result<SimulationConfig> {
        let settings = self.scenario.simulation.clone().unwrap_or_default();
        let provider = profiles.providers.get(&self.scenario.provider)?;
        Ok(SimulationConfig {
            seed: seed.unwrap_or(settings.seed),
            keep_alive_s: settings.keep_alive_s,
            cold_start_ms: settings.cold_start_ms,
            scaling: settings.scaling.unwrap_or(provider.cpu_scaling),
            memory_bytes: self.scenario.memory_bytes,
            max_instances: settings.max_instances,
        })
    }
}

fn load_catalog_spec(spec: &str, base_dir: &Path) -> anyhow::Result<Vec<ModelArtifact>> {
    match spec {
        "builtin:sentiment" => Ok(fixtures::sentiment_models()),
        "builtin:sts" => Ok(fixtures::sts_models()),
        path => {
            let full = base_dir.join(path);
            let text = fs::read_to_string(&full)
                .with_context(|| format!("reading catalog {}", full.display()))?;
            load_catalog(&text).with_context(|| format!("catalog {}", full.display()))
        }
    }
}

/// Failure with the exit code it maps to.
#[derive(Debug)]
enum Failure {
    Domain(String),
    Config(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Config(e.into())
    }
}

type CmdResult = Result<String, Failure>;

/// Parses `args` (including the program name) and runs the command, writing
/// the rendered result to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
            } else {
                let _ = write!(out, "{rendered}");
            }
            return code;
        }
    };
    execute(&cli, out, err)
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = Profiles::load(cli.profile_dir.as_deref())
        .map_err(Failure::Config)
        .and_then(|profiles| match &cli.command {
            Command::Validate(a) => cmd_validate(cli, &profiles, a),
            Command::Select(a) => cmd_select(cli, &profiles, a),
            Command::Simulate(a) => cmd_simulate(cli, &profiles, a),
            Command::Cost(a) => cmd_cost(cli, &profiles, a),
            Command::Bench(a) => cmd_bench(cli, &profiles, a),
        });
    match result {
        Ok(text) => {
            let _ = out.write_all(text.as_bytes());
            EXIT_OK
        }
        Err(Failure::Domain(text)) => {
            let _ = out.write_all(text.as_bytes());
            EXIT_DOMAIN
        }
        Err(Failure::Config(e)) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_CONFIG
        }
    }
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn cmd_validate(cli: &Cli, profiles: &Profiles, args: &ValidateArgs) -> CmdResult {
    let loaded = LoadedScenario::load(&args.scenario, profiles)?;
    let provider_name = args
        .provider
        .as_deref()
        .unwrap_or(&loaded.scenario.provider);
    let limits = profiles.providers.get(provider_name)?;
    let manifest = loaded
        .scenario
        .package
        .as_ref()
        .ok_or_else(|| anyhow!("scenario has no package manifest"))?;
    let catalog = loaded.catalog()?;
    let package = manifest.resolve(&profiles.runtimes, &catalog, &loaded.base_dir)?;
    let plan = DeploymentPlan {
        memory_bytes: loaded.scenario.memory_bytes,
        package,
    };
    let report = validate_plan(&plan, limits);

    let text = match cli.format {
        Format::Json => json(&report),
        Format::Table => {
            let mut s = String::new();
            let p = &plan.package;
            let _ = writeln!(s, "provider   {}", limits.name);
            let _ = writeln!(
                s,
                "package    {} = code {} + {} {} + {} {}",
                format_mb(p.total_bytes),
                format_mb(p.code_bytes),
                p.runtime.name,
                format_mb(p.runtime.size_bytes),
                p.model.name,
                format_mb(p.model.size_bytes)
            );
            let _ = writeln!(s, "memory     {}", format_mb(plan.memory_bytes));
            for v in &report.violations {
                let _ = writeln!(
                    s,
                    "VIOLATION  {}: {} > limit {}",
                    v.limit_name,
                    format_mb(v.actual_value),
                    format_mb(v.limit_value)
                );
            }
            let _ = writeln!(
                s,
                "result     {}",
                if report.passed { "PASS" } else { "FAIL" }
            );
            s
        }
    };
    if report.passed {
        Ok(text)
    } else {
        Err(Failure::Domain(text))
    }
}

fn cmd_select(cli: &Cli, profiles: &Profiles, args: &SelectArgs) -> CmdResult {
    let catalog = load_catalog_spec(&args.catalog, Path::new(""))?;
    let limits = profiles.providers.get(&args.provider)?;
    let runtime = find_runtime(&profiles.runtimes, &args.runtime)?.clone();
    let max_package_bytes = match args.max_package_mb {
        Some(m) => mb(m),
        None => limits.max_package_bytes.cap(),
    };
    let constraints = SelectionConstraints {
        max_package_bytes,
        code_bytes: mb(args.code_mb),
        runtime,
        objective_metric: args.metric.clone(),
        min_score: args.min_score,
    };
    match select_model_explained(&catalog, &constraints) {
        Ok(sel) => Ok(match cli.format {
            Format::Json => json(&sel),
            Format::Table => {
                let mut s = String::new();
                let _ = writeln!(
                    s,
                    "selected   {} ({} = {}, package {})",
                    sel.model.name,
                    args.metric,
                    sel.score,
                    format_mb(sel.package_bytes)
                );
                for r in &sel.rejected {
                    let _ = writeln!(s, "rejected   {r}");
                }
                s
            }
        }),
        Err(CatalogError::NoFeasibleModel(rejections)) => Err(Failure::Domain(match cli.format {
            Format::Json => json(&rejections),
            Format::Table => {
                let mut s = String::from("no feasible model\n");
                for r in &rejections {
                    let _ = writeln!(s, "rejected   {r}");
                }
                s
            }
        })),
        Err(e) => Err(e.into()),
    }
}

/// One memory size's simulation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub memory_bytes: u64,
    pub invocations: usize,
    pub cold_fraction: f64,
    pub total_billed_gb_s: f64,
    pub summary: Option<Summary>,
}

impl SweepRow {
    fn from_result(r: &SimulationResult) -> Self {
        SweepRow {
            memory_bytes: r.memory_bytes,
            invocations: r.records.len(),
            cold_fraction: r.cold_fraction,
            total_billed_gb_s: r.total_billed_gb_s,
            summary: r.latency_summary,
        }
    }
}

fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([
        "memory_mb",
        "invocations",
        "cold_fraction",
        "billed_gb_s",
        "mean_ms",
        "q50_ms",
        "q95_ms",
        "q99_ms",
    ])?;
    for r in rows {
        let s = r.summary;
        let f = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
        w.write_record([
            (r.memory_bytes / MB).to_string(),
            r.invocations.to_string(),
            format!("{:.4}", r.cold_fraction),
            format!("{:.6}", r.total_billed_gb_s),
            f(s.map(|s| s.mean)),
            f(s.map(|s| s.q50)),
            f(s.map(|s| s.q95)),
            f(s.map(|s| s.q99)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn render_sweep(rows: &[SweepRow]) -> String {
    let table: Vec<(String, Summary)> = rows
        .iter()
        .filter_map(|r| {
            r.summary
                .map(|s| (format!("{} MB", r.memory_bytes / MB), s))
        })
        .collect();
    let mut s = render_summary_table(&table);
    for r in rows {
        let _ = writeln!(
            s,
            "{} MB: {} invocations, cold {:.2}%, {:.4} GB-s billed",
            r.memory_bytes / MB,
            r.invocations,
            r.cold_fraction * 100.0,
            r.total_billed_gb_s
        );
    }
    s
}

fn cmd_simulate(cli: &Cli, profiles: &Profiles, args: &SimulateArgs) -> CmdResult {
    let loaded = LoadedScenario::load(&args.scenario, profiles)?;
    let profile = loaded.profile(profiles)?;
    let pattern = loaded
        .scenario
        .traffic
        .clone()
        .ok_or_else(|| anyhow!("scenario has no traffic pattern"))?;
    let config = loaded.sim_config(profiles, cli.seed)?;
    let pricing = find_pricing(&profiles.pricing, &loaded.scenario.pricing)?;

    let sweep = args
        .memory_sweep
        .clone()
        .or_else(|| loaded.scenario.memory_sweep_mb.clone());
    let rows = match sweep {
        Some(mbs) => {
            if mbs.is_empty() || mbs.contains(&0) {
                return Err(anyhow!("memory sweep sizes must be positive").into());
            }
            let memories: Vec<u64> = mbs.iter().map(|&m| mb(m)).collect();
            let results = memory_sweep(&profile, &pattern, &config, pricing, &memories)?;
            let rows: Vec<SweepRow> = results.iter().map(SweepRow::from_result).collect();
            if let Some(path) = &args.out {
                write_sweep_csv(&rows, path)?;
            }
            rows
        }
        None => {
            let result = simulate(&profile, &pattern, &config, pricing)?;
            if let Some(path) = &args.out {
                write_csv_file(&result.to_samples(), path)?;
            }
            if let Some(path) = &args.result_json {
                fs::write(path, json(&result))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            vec![SweepRow::from_result(&result)]
        }
    };
    Ok(match cli.format {
        Format::Json => json(&rows),
        Format::Table => render_sweep(&rows),
    })
}

fn cmd_cost(cli: &Cli, profiles: &Profiles, args: &CostArgs) -> CmdResult {
    let loaded = match &args.scenario {
        Some(p) => Some(LoadedScenario::load(p, profiles)?),
        None => None,
    };
    let scenario = loaded.as_ref().map(|l| &l.scenario);
    let pricing_name = args
        .pricing
        .clone()
        .or_else(|| scenario.map(|s| s.pricing.clone()))
        .unwrap_or_else(default_pricing);
    let pricing = find_pricing(&profiles.pricing, &pricing_name)?;
    let memory_bytes = args
        .memory_mb
        .map(mb)
        .or_else(|| scenario.map(|s| s.memory_bytes))
        .unwrap_or_else(default_memory);
    let vm = match &args.vm {
        Some(price) => Some(VmBaseline {
            monthly_price: price.parse::<Money>()?,
            memory_bytes,
        }),
        None => scenario.and_then(|s| s.vm.clone()),
    };
    if let Some(vm) = &vm {
        vm.validate()?;
    }

    let report = if let Some(path) = &args.result {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let result: SimulationResult =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cost_from_simulation(&result, pricing, vm.as_ref())
    } else {
        let workload = scenario.and_then(|s| s.workload.clone());
        let requests = args.requests.or(workload.as_ref().map(|w| w.requests));
        let exec_ms = args.exec_ms.or(workload.as_ref().map(|w| w.exec_ms));
        match (requests, exec_ms, &loaded) {
            (Some(n), Some(ms), _) => {
                if !(ms.is_finite() && ms >= 0.0) {
                    return Err(anyhow!("exec_ms must be >= 0").into());
                }
                cost_report(
                    n,
                    billed_duration(ms, pricing.billing_granularity_ms),
                    memory_bytes,
                    pricing,
                    vm.as_ref(),
                )
            }
            (None, None, Some(l)) if l.scenario.traffic.is_some() => {
                let profile = l.profile(profiles)?;
                let mut config = l.sim_config(profiles, cli.seed)?;
                config.memory_bytes = memory_bytes;
                let result = simulate(
                    &profile,
                    l.scenario.traffic.as_ref().expect("checked"),
                    &config,
                    pricing,
                )?;
                cost_from_simulation(&result, pricing, vm.as_ref())
            }
            _ => return Err(anyhow!(
                "cost needs --requests and --exec-ms, a scenario workload or traffic, or --result"
            )
            .into()),
        }
    };
    Ok(match cli.format {
        Format::Json => json(&report),
        Format::Table => render_cost_table(&report),
    })
}

fn parse_header(h: &str) -> anyhow::Result<(String, String)> {
    let (k, v) = h
        .split_once(':')
        .ok_or_else(|| anyhow!("header {h:?} is not `Name: value`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn bench_pattern(args: &BenchArgs) -> TrafficPattern {
    match args.pattern {
        PatternKind::Fixed => TrafficPattern::fixed_rate(args.rate, args.duration),
        PatternKind::Poisson => TrafficPattern::PoissonConstant {
            rate_rps: args.rate,
            duration_s: args.duration,
        },
        PatternKind::Burst => TrafficPattern::OnOffBurst {
            high_rate: args.rate,
            low_rate: args.low_rate,
            period_s: args.period,
            duty: args.duty,
            duration_s: args.duration,
        },
    }
}

fn cmd_bench(cli: &Cli, profiles: &Profiles, args: &BenchArgs) -> CmdResult {
    let limits: Option<ProviderLimits> = match &args.limits_profile {
        Some(name) => Some(profiles.providers.get(name)?.clone()),
        None => None,
    };
    let payload = match &args.payload_file {
        Some(p) => fs::read(p).with_context(|| format!("reading payload {}", p.display()))?,
        None => Vec::new(),
    };
    let headers = args
        .headers
        .iter()
        .map(|h| parse_header(h))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if !(0.0..=1.0).contains(&args.max_error_ratio) {
        return Err(anyhow!("--max-error-ratio must be in [0, 1]").into());
    }
    let pattern = bench_pattern(args);

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    let outcome = rt.block_on(async {
        let stub = match &args.url {
            Some(_) => None,
            None => Some(
                StubServer::start(StubConfig {
                    delay: StubDelay::Fixed {
                        ms: args.stub_delay_ms,
                    },
                    fail_every: args.stub_fail_every,
                    seed: cli.seed.unwrap_or(0),
                })
                .await?,
            ),
        };
        let url = args
            .url
            .clone()
            .unwrap_or_else(|| stub.as_ref().expect("stub started").url());
        let run = BenchRun {
            target: BenchTarget {
                url,
                method: args.method.clone(),
                headers,
                payload,
                timeout_ms: args.timeout_ms,
                exec_time_header: args.exec_time_header.clone(),
            },
            pattern,
            n_warmup: args.warmup,
            provider_limits: limits,
            seed: cli.seed.unwrap_or(0),
        };
        let outcome = harness::run_bench(&run).await;
        if let Some(stub) = stub {
            stub.stop().await;
        }
        outcome
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(HarnessError::Preflight(report)) => {
            return Err(Failure::Domain(match cli.format {
                Format::Json => json(&report),
                Format::Table => {
                    let mut s = String::from("preflight failed\n");
                    for v in &report.violations {
                        let _ = writeln!(
                            s,
                            "VIOLATION  {}: {} > limit {}",
                            v.limit_name,
                            format_mb(v.actual_value),
                            format_mb(v.limit_value)
                        );
                    }
                    s
                }
            }))
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(path) = &args.out {
        harness::export_run(&outcome, path)?;
    }

    let text = match cli.format {
        Format::Json => json(&outcome),
        Format::Table => {
            let mut s = match crate::metrics::summarize(&outcome.samples) {
                Ok(sum) => render_summary_table(&[("client latency".into(), sum)]),
                Err(_) => "no samples\n".into(),
            };
            if let Ok(sum) = crate::metrics::summarize(&outcome.server_samples) {
                s.push_str(&render_summary_table(&[("server exec".into(), sum)]));
            }
            let e = &outcome.errors;
            let _ = writeln!(
                s,
                "attempted {}, ok {}, warm-up excluded {}, errors {} (timeout {}, connect {}, status {}, other {})",
                outcome.attempted,
                outcome.recorded,
                outcome.warmup_excluded,
                e.total(),
                e.timeout,
                e.connect,
                e.http_status,
                e.other
            );
            let _ = writeln!(s, "max send lag {:.2} ms", outcome.max_send_lag_ms());
            s
        }
    };
    if outcome.error_ratio() > args.max_error_ratio {
        return Err(Failure::Domain(format!(
            "{text}error ratio {:.4} exceeds {}\n",
            outcome.error_ratio(),
            args.max_error_ratio
        )));
    }
    Ok(text)
}
