//! `dwols`: simulate, pool, summarize, aggregate, estimate, dose, bench.
//!
//! Exit codes: 0 success, 2 configuration or I/O error, 3 numerical
//! failure (singular design, non-convergence), 4 protocol error
//! (fingerprint mismatch, duplicate site, malformed summary).

use clap::{Args, Parser, Subcommand, ValueEnum};
use dwols_privacy::config::AnalysisConfig;
use dwols_privacy::data::Dataset;
use dwols_privacy::distributed::{
    aggregate_summaries, compute_site_summary, deserialize_summary, serialize_summary,
    solve_distributed,
};
use dwols_privacy::gdwols::{
    fit_gdwols, optimal_dose, BlipEstimate, BlipOrder, DesignSpec, DoseRange,
};
use dwols_privacy::harness::{
    compare_to_reference, run_grid, AnalysisScenario, GridSpec, HarnessOptions, ReferenceTable,
    WeightLocality,
};
use dwols_privacy::pooling::{aggregate, assign_pools, fit_pooled_gdwols, PoolSizes, PoolStrategy};
use dwols_privacy::simgen::{
    generate_application_style, generate_replicate, ApplicationConfig, ScenarioConfig,
};
use dwols_privacy::weights::estimate_weights;
use dwols_privacy::{gdwols::Method, Error, ErrorClass, Result};
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dwols",
    version,
    about = "Individualized treatment rules by dynamic weighted OLS, with pooled and distributed estimation",
    after_help = "Exit codes: 0 ok, 2 configuration/IO error, 3 numerical failure, 4 protocol error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset as CSV.
    Simulate(SimulateArgs),
    /// Aggregate a dataset into pools and write the pooled rows as CSV.
    Pool(PoolArgs),
    /// Compute one site's XᵀWX / XᵀWy summary as JSON.
    SiteSummary(SiteSummaryArgs),
    /// Sum site summaries and solve for the blip parameters.
    Aggregate(AggregateArgs),
    /// Estimate blip parameters from a dataset.
    Estimate(EstimateArgs),
    /// Optimal dose (quadratic blip) or treatment (linear blip) from an estimate.
    Dose(DoseArgs),
    /// Monte Carlo study of one scenario.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in scenario id (a-t, a.bis-j.bis, a.ter-j.ter).
    #[arg(
        long,
        conflicts_with = "application",
        required_unless_present = "application"
    )]
    scenario: Option<String>,
    /// Application-style generator parameters (TOML).
    #[arg(long, value_name = "CONFIG")]
    application: Option<PathBuf>,
    /// Total subjects (scenario mode).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PoolArgs {
    #[arg(long)]
    data: PathBuf,
    /// Analysis config (TOML or JSON) naming the terms to aggregate.
    #[arg(long)]
    config: PathBuf,
    /// 1 = across centres, 2 = per centre with common g, 3 = per centre with g_k.
    #[arg(long, default_value = "1")]
    strategy: String,
    /// Common pool size (strategies 1 and 2).
    #[arg(long, conflicts_with = "g_per_site")]
    g: Option<usize>,
    /// Per-site pool sizes for strategy 3, e.g. `1=4,2=3`.
    #[arg(long)]
    g_per_site: Option<String>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SiteSummaryArgs {
    /// This site's rows (CSV).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Keep only rows of this site when the CSV holds several.
    #[arg(long)]
    site: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AggregateArgs {
    /// Summary JSON files, or directories of them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Analysis config to check against; the design is read from the summaries otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimateMethod {
    Gold,
    Pooled,
    DistributedLocal,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    method: EstimateMethod,
    /// Pool size (pooled method).
    #[arg(long)]
    g: Option<usize>,
    /// Pooling strategy (pooled method).
    #[arg(long, default_value = "1")]
    strategy: String,
    /// Per-site pool sizes for strategy 3, e.g. `1=4,2=3`.
    #[arg(long)]
    g_per_site: Option<String>,
    /// Required for the pooled method.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DoseArgs {
    /// Estimate JSON written by `estimate` or `aggregate`.
    #[arg(long)]
    psi: PathBuf,
    /// Covariates of one subject, e.g. `x=10.2` or `age=6,weight=70`.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    x: Option<String>,
    /// Dataset whose every row gets a recommendation (CSV out).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Admissible dose range `a_min,a_max` (quadratic blips).
    #[arg(long, allow_hyphen_values = true)]
    range: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum BenchMethod {
    Gold,
    Pooled,
    Distributed,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    scenario: String,
    /// Analysis scenarios 1-4 (comma-separated); all when absent.
    #[arg(long, value_delimiter = ',')]
    analysis: Vec<u8>,
    /// Methods (comma-separated); all when absent.
    #[arg(long, value_enum, value_delimiter = ',')]
    method: Vec<BenchMethod>,
    #[arg(long, default_value_t = 6000)]
    n: usize,
    #[arg(long, default_value_t = 300)]
    reps: u64,
    #[arg(long)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Compare ψ₀ with the published results for the scenario.
    #[arg(long)]
    reference: bool,
    /// Fit the distributed treatment model separately at each site.
    #[arg(long)]
    per_site_weights: bool,
    /// Use one column per treatment-free term instead of their sum.
    #[arg(long)]
    separate_tf: bool,
    /// Report CSV; a table is printed to stdout either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Numerical => 3,
                ErrorClass::Protocol => 4,
            })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Pool(a) => pool(a),
        Command::SiteSummary(a) => site_summary(a),
        Command::Aggregate(a) => aggregate_cmd(a),
        Command::Estimate(a) => estimate(a),
        Command::Dose(a) => dose(a),
        Command::Bench(a) => bench(a),
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_json(path: &Option<PathBuf>, value: &Value) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::read_csv(File::open(path)?)
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn echo_line(config: &Value) -> String {
    format!("config: {config}")
}

fn parse_sizes(
    strategy: PoolStrategy,
    g: Option<usize>,
    per_site: &Option<String>,
) -> Result<PoolSizes> {
    match (strategy, g, per_site) {
        (PoolStrategy::PerCentreVaryingG3, _, Some(s)) => {
            let mut m = BTreeMap::new();
            for part in s.split(',') {
                let (site, g) = part.split_once('=').ok_or_else(|| {
                    Error::config("g-per-site", format!("`{part}` is not site=g"))
                })?;
                let g = g
                    .trim()
                    .parse()
                    .map_err(|_| Error::config("g-per-site", format!("`{g}` is not a count")))?;
                m.insert(site.trim().to_string(), g);
            }
            Ok(PoolSizes::PerCentre(m))
        }
        (PoolStrategy::PerCentreVaryingG3, _, None) => Err(Error::config(
            "g-per-site",
            "strategy 3 needs per-site pool sizes",
        )),
        (_, Some(g), None) => Ok(PoolSizes::Common(g)),
        (_, None, _) => Err(Error::config("g", "pool size required")),
        (_, Some(_), Some(_)) => Err(Error::config("g-per-site", "only valid with strategy 3")),
    }
}

fn parse_strategy(s: &str) -> Result<PoolStrategy> {
    PoolStrategy::parse(s)
        .ok_or_else(|| Error::config("strategy", format!("unknown strategy `{s}`")))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let (dataset, echo) = match (&a.scenario, &a.application) {
        (Some(id), _) => {
            let mut cfg = ScenarioConfig::by_id(id)?.with_seed(a.seed);
            if let Some(n) = a.n {
                cfg = cfg.with_n(n);
            }
            let rep = generate_replicate(&cfg, a.replicate)?;
            let echo = json!({"command": "simulate", "scenario": cfg, "replicate": a.replicate});
            (rep.dataset, echo)
        }
        (None, Some(path)) => {
            let cfg = ApplicationConfig::from_toml(&std::fs::read_to_string(path)?)?;
            let d = generate_application_style(Some(&cfg), a.seed, a.replicate)?;
            let echo = json!({"command": "simulate", "application": cfg, "seed": a.seed, "replicate": a.replicate});
            (d, echo)
        }
        (None, None) => {
            return Err(Error::config(
                "scenario",
                "give --scenario or --application",
            ))
        }
    };
    let mut w = output(&a.out)?;
    dataset.write_csv(&mut w, &[echo_line(&echo)])?;
    w.flush()?;
    Ok(())
}

fn pool(a: PoolArgs) -> Result<()> {
    let cfg = AnalysisConfig::load(&a.config)?;
    let data = read_dataset(&a.data)?;
    let strategy = parse_strategy(&a.strategy)?;
    let sizes = parse_sizes(strategy, a.g, &a.g_per_site)?;
    let assignment = assign_pools(&data, strategy, &sizes, a.seed)?;
    let pooled = aggregate(
        &data,
        &assignment,
        &cfg.design,
        &cfg.treatment.covariate_basis,
    )?;
    let echo = json!({
        "command": "pool",
        "analysis": cfg,
        "strategy": strategy.as_str(),
        "pool_sizes": sizes,
        "seed": a.seed,
        "excluded": assignment.excluded.len(),
    });
    let mut w = output(&a.out)?;
    pooled.write_csv(&mut w, &[echo_line(&echo)])?;
    w.flush()?;
    Ok(())
}

fn site_summary(a: SiteSummaryArgs) -> Result<()> {
    let cfg = AnalysisConfig::load(&a.config)?;
    let mut data = read_dataset(&a.data)?;
    if let Some(site) = &a.site {
        let idx = data
            .site_indices()
            .remove(site)
            .ok_or_else(|| Error::config("site", format!("no rows for site `{site}`")))?;
        data = data.subset(&idx);
    }
    let summary = compute_site_summary(&data, &cfg.design, &cfg.treatment, cfg.ipw_cap)?;
    let mut v: Value = serde_json::from_slice(&serialize_summary(&summary)?)?;
    v["config"] = json!({"command": "site-summary", "analysis": cfg});
    write_json(&a.out, &v)
}

fn collect_summary_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut in_dir: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|e| e == "json"))
                .collect();
            in_dir.sort();
            files.extend(in_dir);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::config("inputs", "no summary files found"));
    }
    Ok(files)
}

fn aggregate_cmd(a: AggregateArgs) -> Result<()> {
    let files = collect_summary_files(&a.inputs)?;
    let summaries = files
        .iter()
        .map(|f| deserialize_summary(&std::fs::read(f)?))
        .collect::<Result<Vec<_>>>()?;
    let agg = aggregate_summaries(&summaries)?;
    let spec = match &a.config {
        Some(path) => AnalysisConfig::load(path)?.design,
        None => {
            let mut spec = DesignSpec::from_column_names(&agg.columns)?;
            spec.blip_order = agg.blip_order;
            spec
        }
    };
    let est = solve_distributed(&agg, &spec)?;
    let echo = json!({
        "command": "aggregate",
        "design": spec,
        "fingerprint": agg.fingerprint,
        "sites": agg.sites,
        "inputs": files,
    });
    write_json(&a.out, &json!({"estimate": est, "config": echo}))
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let cfg = AnalysisConfig::load(&a.config)?;
    let data = read_dataset(&a.data)?;
    let mut echo = json!({"command": "estimate", "analysis": cfg});
    let est = match a.method {
        EstimateMethod::Gold => {
            echo["method"] = json!("gold");
            let w = estimate_weights(&data, &cfg.treatment, cfg.ipw_cap)?;
            fit_gdwols(&data, &cfg.design, &w)?
        }
        EstimateMethod::Pooled => {
            let seed = a
                .seed
                .ok_or_else(|| Error::config("seed", "--seed is required for pooled estimation"))?;
            let strategy = parse_strategy(&a.strategy)?;
            let sizes = parse_sizes(strategy, a.g, &a.g_per_site)?;
            let assignment = assign_pools(&data, strategy, &sizes, seed)?;
            let pooled = aggregate(
                &data,
                &assignment,
                &cfg.design,
                &cfg.treatment.covariate_basis,
            )?;
            echo["method"] = json!("pooled");
            echo["strategy"] = json!(strategy.as_str());
            echo["pool_sizes"] = to_value(&sizes)?;
            echo["seed"] = json!(seed);
            echo["excluded"] = json!(assignment.excluded.len());
            fit_pooled_gdwols(
                &pooled,
                &cfg.design,
                &cfg.treatment.clone().pooled(),
                cfg.ipw_cap,
            )?
        }
        EstimateMethod::DistributedLocal => {
            echo["method"] = json!("distributed-local");
            let summaries = data
                .split_by_site()
                .iter()
                .map(|(_, site)| {
                    compute_site_summary(site, &cfg.design, &cfg.treatment, cfg.ipw_cap)
                })
                .collect::<Result<Vec<_>>>()?;
            solve_distributed(&aggregate_summaries(&summaries)?, &cfg.design)?
        }
    };
    write_json(&a.out, &json!({"estimate": est, "config": echo}))
}

fn load_estimate(path: &Path) -> Result<BlipEstimate> {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let inner = v.get("estimate").cloned().unwrap_or(v);
    serde_json::from_value(inner).map_err(|e| Error::config("psi", e.to_string()))
}

fn parse_range(s: &str) -> Result<DoseRange> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| Error::config("range", "expected a_min,a_max"))?;
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| Error::config("range", format!("`{v}` is not a number")))
    };
    DoseRange::new(num(lo)?, num(hi)?)
}

fn parse_point(s: &str) -> Result<(Vec<String>, Vec<f64>)> {
    let mut names = Vec::new();
    let mut values = Vec::new();
    for part in s.split(',') {
        let (n, v) = part
            .split_once('=')
            .ok_or_else(|| Error::config("x", format!("`{part}` is not name=value")))?;
        names.push(n.trim().to_string());
        values.push(
            v.trim()
                .parse()
                .map_err(|_| Error::config("x", format!("`{v}` is not a number")))?,
        );
    }
    Ok((names, values))
}

/// Recommendation for one subject: a dose for quadratic blips, 0/1 otherwise.
fn recommend(
    est: &BlipEstimate,
    range: Option<DoseRange>,
    names: &[String],
    values: &[f64],
) -> Result<Value> {
    let x_psi = est.blip_covariates(names, values)?;
    match est.blip_order {
        BlipOrder::QuadraticInA => {
            let range = range.ok_or_else(|| {
                Error::config("range", "a dose range is required for a quadratic blip")
            })?;
            let d = optimal_dose(&est.quadratic()?, &x_psi, range);
            Ok(json!({"dose": d.dose, "kind": d.kind}))
        }
        BlipOrder::LinearInA => Ok(json!({"treat": est.optimal_binary_rule(&x_psi)})),
    }
}

fn dose(a: DoseArgs) -> Result<()> {
    let est = load_estimate(&a.psi)?;
    let range = a.range.as_deref().map(parse_range).transpose()?;
    let echo =
        json!({"command": "dose", "psi": a.psi, "range": range, "blip_order": est.blip_order});
    match (&a.x, &a.data) {
        (Some(x), _) => {
            let (names, values) = parse_point(x)?;
            let mut rec = recommend(&est, range, &names, &values)?;
            rec["x"] = json!(names.iter().zip(&values).collect::<BTreeMap<_, _>>());
            rec["config"] = echo;
            write_json(&a.out, &rec)
        }
        (None, Some(path)) => {
            let data = read_dataset(path)?;
            let mut w = output(&a.out)?;
            writeln!(w, "# {}", echo_line(&echo))?;
            let mut csv = csv::Writer::from_writer(w);
            let quadratic = est.blip_order == BlipOrder::QuadraticInA;
            csv.write_record(if quadratic {
                ["row", "site", "observed_a", "dose", "kind"]
            } else {
                ["row", "site", "observed_a", "treat", ""]
            })?;
            for (i, r) in data.records().iter().enumerate() {
                let rec = recommend(&est, range, data.covariate_names(), &r.covariates)?;
                let (v, k) = if quadratic {
                    (
                        rec["dose"].to_string(),
                        rec["kind"].as_str().unwrap_or("").to_string(),
                    )
                } else {
                    (rec["treat"].to_string(), String::new())
                };
                csv.write_record([i.to_string(), r.site.clone(), r.treatment.to_string(), v, k])?;
            }
            csv.flush()?;
            Ok(())
        }
        (None, None) => Err(Error::config("x", "give --x or --data")),
    }
}

fn bench(a: BenchArgs) -> Result<()> {
    let scenario = ScenarioConfig::by_id(&a.scenario)?
        .with_n(a.n)
        .with_seed(a.seed);
    let analyses = if a.analysis.is_empty() {
        AnalysisScenario::ALL.to_vec()
    } else {
        a.analysis
            .iter()
            .map(|&id| {
                AnalysisScenario::from_id(id)
                    .ok_or_else(|| Error::config("analysis", format!("{id} is not in 1-4")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let methods: Vec<Method> = if a.method.is_empty() {
        vec![Method::GoldStandard, Method::Pooled, Method::Distributed]
    } else {
        a.method
            .iter()
            .map(|m| match m {
                BenchMethod::Gold => Method::GoldStandard,
                BenchMethod::Pooled => Method::Pooled,
                BenchMethod::Distributed => Method::Distributed,
            })
            .collect()
    };
    let grid = GridSpec {
        scenario,
        analyses,
        methods,
        replicates: a.reps,
        jobs: a.jobs,
        options: HarnessOptions {
            combined_tf_column: !a.separate_tf,
            distributed_weights: if a.per_site_weights {
                WeightLocality::PerSite
            } else {
                WeightLocality::Global
            },
            ipw_cap: None,
        },
    };
    let report = run_grid(&grid)?;
    let mut grid_echo = to_value(&grid)?;
    grid_echo["jobs"] = json!(null);
    let echo = echo_line(&json!({"command": "bench", "grid": grid_echo}));
    print!("{}", report.to_table());
    if let Some(path) = &a.out {
        let mut w = output(&Some(path.clone()))?;
        report.write_csv(&mut w, std::slice::from_ref(&echo))?;
        w.flush()?;
    }
    if a.reference {
        let table =
            ReferenceTable::builtin(grid.scenario.treatment_kind, grid.scenario.covariate_mode);
        let cmp = compare_to_reference(&report, &table)?;
        println!();
        print!("{}", cmp.to_table());
        if let Some(path) = &a.out {
            let cmp_path = path.with_extension("reference.csv");
            let mut w = output(&Some(cmp_path))?;
            cmp.write_csv(&mut w, &[echo])?;
            w.flush()?;
        }
    }
    Ok(())
}
