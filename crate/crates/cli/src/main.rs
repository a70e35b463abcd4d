mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use scalefit::allocate::{find_crossover, log_grid, solve_allocation, trace_frontier, AllocationPoint, AllocationQuery, EpochMode};
use scalefit::analysis::{
    bootstrap_fit, compare_bases, compute_residuals, fit_shared_power_with_delta, phase1_procedure, phase2_procedure,
    ComparisonRow, ComparisonTable,
};
use scalefit::data::{load_muennighoff_csv, load_native_csv, save_native_csv, Dataset, GridPreset};
use scalefit::published::Setting;
use scalefit::report::{parse_records, render_table, sig4};
use scalefit::{
    fit_phase1, fit_phase2, generate_synthetic, ChinchillaParams, FitConfig, FitReport, Format, LawKind, LawSpec, Phase,
    Report, ReportKind, SyntheticSpec,
};

/// Fit data-constrained scaling laws and derive compute-optimal allocations.
#[derive(Parser, Debug)]
#[command(name = "scalefit", version, args_override_self = true)]
struct Cli {
    /// TOML file whose keys are flag names; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the base law on single-epoch runs, then a repetition law on top.
    Fit(FitArgs),
    /// Fit several repetition laws on one shared base and tabulate their metrics.
    Compare(CompareArgs),
    /// Excess loss over the base law per (N, U_D) cell, with a shared power-law fit.
    Residuals(ResidualsArgs),
    /// Loss-minimizing model size and epoch count at one compute budget.
    Allocate(AllocateArgs),
    /// Allocation over a log-spaced range of compute budgets.
    Frontier(FrontierArgs),
    /// Smallest compute at which the second spec's optimum overtakes the first's.
    Crossover(CrossoverArgs),
    /// Generate synthetic run records from a known law.
    Synth(SynthArgs),
    /// Published-versus-refit base comparison plus both allocation frontiers.
    Reanalyze(ReanalyzeArgs),
    /// Re-render a records file.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Schema {
    /// n_params,u_tokens,epochs,loss_nats[,group][,perplexity]
    Native,
    /// Public run table with parameter, unique-token and epoch/token columns
    Muennighoff,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutFormat {
    Table,
    Records,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Table => Format::Table,
            OutFormat::Records => Format::Records,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PhaseArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Fit,
    Frontier,
    Comparison,
    Residuals,
    SharedPower,
    Bootstrap,
}

impl From<KindArg> for ReportKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Fit => ReportKind::Fit,
            KindArg::Frontier => ReportKind::Frontier,
            KindArg::Comparison => ReportKind::Comparison,
            KindArg::Residuals => ReportKind::Residuals,
            KindArg::SharedPower => ReportKind::SharedPower,
            KindArg::Bootstrap => ReportKind::Bootstrap,
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Run-record CSV.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Column layout of --data.
    #[arg(long, value_enum, default_value = "native")]
    schema: Schema,
    /// Drop runs with more epochs than this (public-table schema only).
    #[arg(long, default_value_t = 64.0)]
    epochs_max: f64,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let ds = match self.schema {
            Schema::Native => load_native_csv(&self.data),
            Schema::Muennighoff => load_muennighoff_csv(&self.data, self.epochs_max),
        }
        .with_context(|| format!("loading {}", self.data.display()))?;
        if !ds.rejected.is_empty() {
            eprintln!("{}: kept {} of {} rows ({})", self.data.display(), ds.len(), ds.rows_read, ds.provenance.filter);
        }
        Ok(ds)
    }
}

#[derive(Args, Debug)]
struct FitCfgArgs {
    /// Huber threshold on log-loss residuals.
    #[arg(long, default_value_t = 1e-3)]
    huber_delta: f64,
    /// L-BFGS iteration cap per start.
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    /// Projected-gradient norm at which a start counts as converged.
    #[arg(long, default_value_t = 1e-14)]
    tol: f64,
}

impl FitCfgArgs {
    fn config(&self) -> FitConfig {
        FitConfig {
            huber_delta: self.huber_delta,
            max_iterations: self.max_iter,
            convergence_tol: self.tol,
            ..FitConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Write the output here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Aligned text table (4 significant digits) or JSON lines (full precision).
    #[arg(long, value_enum, default_value = "table")]
    format: OutFormat,
}

impl OutArgs {
    fn emit(&self, report: &Report) -> Result<()> {
        emit_to(self.out.as_deref(), self.format, report)
    }
}

fn emit_to(path: Option<&Path>, format: OutFormat, report: &Report) -> Result<()> {
    let text = report.render(format.into())?;
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Repetition law to fit on top of the base.
    #[arg(long, default_value = "chinchilla")]
    law: LawKind,
    /// Phase 1 only, Phase 2 only (needs --published), or both.
    #[arg(long, value_enum, default_value = "both")]
    phase: PhaseArg,
    /// Base constants as JSON ({"E", "A", "alpha", "B", "beta"}) for --phase 2.
    #[arg(long, value_name = "FILE")]
    published: Option<PathBuf>,
    /// Bootstrap resamples of the last fitted phase (0 disables).
    #[arg(long, default_value_t = 0)]
    boot: usize,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the fitted law as a JSON spec for allocate/frontier/crossover.
    #[arg(long, value_name = "FILE")]
    save_spec: Option<PathBuf>,
    #[command(flatten)]
    fit: FitCfgArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Laws to compare, in output order.
    #[arg(long, value_delimiter = ',', default_value = "exp-decay,eff-param,add1,add2,add4")]
    law: Vec<LawKind>,
    #[command(flatten)]
    fit: FitCfgArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ResidualsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Base constants as JSON; refit on the single-epoch runs when omitted.
    #[arg(long, value_name = "FILE")]
    published: Option<PathBuf>,
    /// Write the shared power-law fit here (residual cells go to --out).
    #[arg(long, value_name = "FILE")]
    power_out: Option<PathBuf>,
    #[command(flatten)]
    fit: FitCfgArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct AllocArgs {
    /// Unique-token budget U_D.
    #[arg(long = "U", value_name = "TOKENS")]
    u_tokens: f64,
    /// Largest whole epoch count considered.
    #[arg(long, default_value_t = 64)]
    epochs_max: u32,
    /// Refine over real-valued epochs around the best whole count.
    #[arg(long)]
    continuous: bool,
    /// Fail instead of clamping N to [--n-min, --n-max].
    #[arg(long)]
    strict: bool,
    /// Smallest model size considered.
    #[arg(long, default_value_t = 1e6)]
    n_min: f64,
    /// Largest model size considered.
    #[arg(long, default_value_t = 1e13)]
    n_max: f64,
}

impl AllocArgs {
    fn query(&self, compute: f64) -> AllocationQuery {
        AllocationQuery {
            n_bounds: (self.n_min, self.n_max),
            mode: if self.continuous { EpochMode::Continuous } else { EpochMode::Integer },
            strict: self.strict,
            ..AllocationQuery::new(compute, self.u_tokens).with_max_epochs(self.epochs_max)
        }
    }
}

#[derive(Args, Debug)]
struct RangeArgs {
    /// Smallest compute budget (FLOPs).
    #[arg(long, default_value_t = 1e17)]
    c_min: f64,
    /// Largest compute budget (FLOPs).
    #[arg(long, default_value_t = 1e21)]
    c_max: f64,
    /// Number of log-spaced budgets.
    #[arg(long, default_value_t = 41)]
    points: usize,
}

#[derive(Args, Debug)]
struct AllocateArgs {
    /// Fitted law as JSON (see `fit --save-spec`).
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,
    /// Compute budget in FLOPs.
    #[arg(long = "C", value_name = "FLOPS")]
    compute: f64,
    #[command(flatten)]
    alloc: AllocArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct FrontierArgs {
    /// Fitted law as JSON.
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,
    /// Explicit budgets (repeatable); overrides the range flags.
    #[arg(long = "C", value_name = "FLOPS")]
    compute: Vec<f64>,
    #[command(flatten)]
    range: RangeArgs,
    #[command(flatten)]
    alloc: AllocArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct CrossoverArgs {
    /// Two fitted laws: the incumbent, then the challenger.
    #[arg(long, value_name = "FILE", num_args = 2, required = true)]
    spec: Vec<PathBuf>,
    /// Smallest compute budget searched.
    #[arg(long, default_value_t = 1e17)]
    c_min: f64,
    /// Largest compute budget searched.
    #[arg(long, default_value_t = 1e21)]
    c_max: f64,
    #[command(flatten)]
    alloc: AllocArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Generating law family.
    #[arg(long, default_value = "add4")]
    law: LawKind,
    /// Published constants to generate from.
    #[arg(long, default_value = "std")]
    setting: Setting,
    /// Generate from this JSON spec instead of published constants.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Grid presets to include, concatenated in order.
    #[arg(long, value_delimiter = ',', default_value = "grid-std-single,grid-std-multi")]
    grid: Vec<GridPreset>,
    /// Standard deviation of multiplicative log-normal noise.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (native schema).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReanalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Published base constants as JSON.
    #[arg(long, value_name = "FILE")]
    published: PathBuf,
    /// Repetition law fitted on top of each base.
    #[arg(long, default_value = "eff-param")]
    law: LawKind,
    /// Unique-token budget for the two frontiers.
    #[arg(long = "U", value_name = "TOKENS")]
    u_tokens: f64,
    #[command(flatten)]
    range: RangeArgs,
    /// Write both frontiers here as records tagged by base.
    #[arg(long, value_name = "FILE")]
    frontier_out: Option<PathBuf>,
    #[command(flatten)]
    fit: FitCfgArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Records file produced with --format records.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// What the file holds.
    #[arg(long, value_enum)]
    kind: KindArg,
    #[command(flatten)]
    out: OutArgs,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_spec(path: &Path) -> Result<LawSpec> {
    let spec: LawSpec = read_json(path)?;
    spec.validate().with_context(|| format!("invalid spec in {}", path.display()))?;
    Ok(spec)
}

fn read_base(path: &Path) -> Result<ChinchillaParams> {
    let base: ChinchillaParams = read_json(path)?;
    base.validate().with_context(|| format!("invalid base constants in {}", path.display()))?;
    Ok(base)
}

fn summary_row(report: &FitReport) -> String {
    let params: Vec<String> = ChinchillaParams::NAMES
        .iter()
        .zip(report.spec.base.to_vec())
        .chain(report.spec.kind().param_names().iter().zip(report.spec.rep.params()))
        .map(|(n, v)| format!("{n}={}", sig4(v)))
        .collect();
    let r2 = |x: Option<f64>| x.map(sig4).unwrap_or_else(|| "n/a".into());
    format!(
        "{}: {}  R2={} R2_multi={} huber={}",
        report.spec.kind().label(),
        params.join(" "),
        r2(report.metrics.r2_all),
        r2(report.metrics.r2_multi),
        sig4(report.metrics.huber)
    )
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let ds = args.data.load()?;
    let cfg = args.fit.config();
    let runs = &ds.records;

    let (mut report, phase) = match args.phase {
        PhaseArg::One => (fit_phase1(runs, &cfg).context("phase 1 fit")?, Phase::One),
        PhaseArg::Two => {
            let path = args.published.as_ref().context("--phase 2 needs --published base constants")?;
            let base = read_base(path)?;
            (fit_phase2(&base, args.law, runs, &cfg).context("phase 2 fit")?, Phase::Two)
        }
        PhaseArg::Both => {
            let p1 = fit_phase1(runs, &cfg).context("phase 1 fit")?;
            if args.law == LawKind::Chinchilla {
                (p1, Phase::One)
            } else {
                (fit_phase2(&p1.spec.base, args.law, runs, &cfg).context("phase 2 fit")?, Phase::Two)
            }
        }
    };

    if args.boot > 0 {
        let full = report.fitted_params(phase);
        let anchored = cfg.anchored_at(&full);
        let boot = match phase {
            Phase::One => bootstrap_fit(runs, &phase1_procedure(anchored), args.boot, args.seed),
            Phase::Two => {
                bootstrap_fit(runs, &phase2_procedure(report.spec.base, args.law, anchored), args.boot, args.seed)
            }
        }
        .context("bootstrap")?;
        report.bootstrap = Some(boot);
    }

    if let Some(path) = &args.save_spec {
        fs::write(path, serde_json::to_string_pretty(&report.spec)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if args.out.out.is_some() {
        println!("{}", summary_row(&report));
    }
    args.out.emit(&Report::Fit(report))
}

fn cmd_compare(args: &CompareArgs) -> Result<bool> {
    let ds = args.data.load()?;
    let cfg = args.fit.config();
    let runs = &ds.records;
    let base = fit_phase1(runs, &cfg).context("phase 1 fit")?;
    let reference = base.metrics.r2_all;
    let mut rows = Vec::new();
    let mut all_ok = true;
    for &kind in &args.law {
        let fitted = if kind == LawKind::Chinchilla {
            Ok(base.clone())
        } else {
            fit_phase2(&base.spec.base, kind, runs, &cfg)
        };
        match fitted {
            Ok(r) => rows.push(ComparisonRow {
                condition: kind.label().to_string(),
                base: "refit".into(),
                law: kind,
                r2_all: r.metrics.r2_all,
                delta_r2: reference.zip(r.metrics.r2_all).map(|(a, b)| b - a),
                r2_single: r.metrics.r2_single,
                r2_multi: r.metrics.r2_multi,
                huber: r.metrics.huber,
                spec: r.spec,
            }),
            Err(e) => {
                eprintln!("error: {kind}: {e}");
                all_ok = false;
            }
        }
    }
    args.out.emit(&Report::Comparison(ComparisonTable { rows }))?;
    Ok(all_ok)
}

fn cmd_residuals(args: &ResidualsArgs) -> Result<()> {
    let ds = args.data.load()?;
    let cfg = args.fit.config();
    let base = match &args.published {
        Some(p) => read_base(p)?,
        None => fit_phase1(&ds.records, &cfg).context("phase 1 fit")?.spec.base,
    };
    let cells = compute_residuals(&base, &ds.records);
    let power = fit_shared_power_with_delta(&cells, cfg.huber_delta).context("shared power fit")?;
    args.out.emit(&Report::Residuals(cells))?;
    match &args.power_out {
        Some(p) => emit_to(Some(p), args.out.format, &Report::SharedPower(power)),
        None => {
            eprint!("{}", render_table(&Report::SharedPower(power)));
            Ok(())
        }
    }
}

fn cmd_allocate(args: &AllocateArgs) -> Result<()> {
    let spec = read_spec(&args.spec)?;
    let point = solve_allocation(&spec, &args.alloc.query(args.compute))?;
    args.out.emit(&Report::Frontier(vec![point]))
}

fn cmd_frontier(args: &FrontierArgs) -> Result<()> {
    let spec = read_spec(&args.spec)?;
    let grid = if args.compute.is_empty() {
        log_grid(args.range.c_min, args.range.c_max, args.range.points)
    } else {
        args.compute.clone()
    };
    let points = trace_frontier(&spec, &args.alloc.query(1.0), &grid)?;
    args.out.emit(&Report::Frontier(points))
}

#[derive(Serialize)]
struct CrossoverRecord {
    u_tokens: f64,
    c_min: f64,
    c_max: f64,
    crossover: Option<f64>,
}

fn cmd_crossover(args: &CrossoverArgs) -> Result<()> {
    let (a, b) = (read_spec(&args.spec[0])?, read_spec(&args.spec[1])?);
    let found = find_crossover(&a, &b, &args.alloc.query(1.0), (args.c_min, args.c_max))?;
    let record = CrossoverRecord { u_tokens: args.alloc.u_tokens, c_min: args.c_min, c_max: args.c_max, crossover: found };
    let text = match args.out.format {
        OutFormat::Records => serde_json::to_string(&record)? + "\n",
        OutFormat::Table => match found {
            Some(c) => format!("crossover at C = {} FLOPs (U_D = {})\n", sig4(c), sig4(record.u_tokens)),
            None => format!(
                "no crossover in [{}, {}] FLOPs (U_D = {})\n",
                sig4(args.c_min),
                sig4(args.c_max),
                sig4(record.u_tokens)
            ),
        },
    };
    match &args.out.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let law = match &args.spec {
        Some(p) => read_spec(p)?,
        None => args.setting.law(args.law),
    };
    let grid = args.grid.iter().flat_map(|g| g.points()).collect();
    let ds = generate_synthetic(&SyntheticSpec { generating_law: law, grid, noise_sigma: args.sigma, seed: args.seed })?;
    save_native_csv(&ds.records, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!("wrote {} runs to {}", ds.len(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TaggedPoint<'a> {
    base: &'a str,
    #[serde(flatten)]
    point: AllocationPoint,
}

fn cmd_reanalyze(args: &ReanalyzeArgs) -> Result<()> {
    let ds = args.data.load()?;
    let published = read_base(&args.published)?;
    let cfg = args.fit.config();
    let (table, _) = compare_bases(&published, &ds.records, args.law, &cfg)?;

    let grid = log_grid(args.range.c_min, args.range.c_max, args.range.points);
    let template = AllocationQuery::new(1.0, args.u_tokens);
    let mut tagged = Vec::new();
    let mut frontiers = Vec::new();
    for label in ["published", "refit"] {
        // The extended row when a law was fitted, otherwise the base-only row.
        let row = table.rows.iter().rev().find(|r| r.base == label).context("missing comparison row")?;
        let points = trace_frontier(&row.spec, &template, &grid)?;
        tagged.extend(points.iter().map(|p| TaggedPoint { base: label, point: *p }));
        frontiers.push((label, points));
    }

    args.out.emit(&Report::Comparison(table))?;
    match &args.frontier_out {
        Some(path) => {
            let text = match args.out.format {
                OutFormat::Records => {
                    let mut s = String::new();
                    for t in &tagged {
                        s.push_str(&serde_json::to_string(t)?);
                        s.push('\n');
                    }
                    s
                }
                OutFormat::Table => frontier_tables(&frontiers),
            };
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        None => print!("\n{}", frontier_tables(&frontiers)),
    }
    Ok(())
}

fn frontier_tables(frontiers: &[(&str, Vec<AllocationPoint>)]) -> String {
    frontiers
        .iter()
        .map(|(label, pts)| format!("frontier ({label} base)\n{}", render_table(&Report::Frontier(pts.clone()))))
        .collect::<Vec<_>>()
        .join("\n")
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let report = parse_records(&text, args.kind.into()).with_context(|| format!("parsing {}", args.input.display()))?;
    args.out.emit(&report)
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a).map(|_| true),
        Command::Compare(a) => cmd_compare(a),
        Command::Residuals(a) => cmd_residuals(a).map(|_| true),
        Command::Allocate(a) => cmd_allocate(a).map(|_| true),
        Command::Frontier(a) => cmd_frontier(a).map(|_| true),
        Command::Crossover(a) => cmd_crossover(a).map(|_| true),
        Command::Synth(a) => cmd_synth(a).map(|_| true),
        Command::Reanalyze(a) => cmd_reanalyze(a).map(|_| true),
        Command::Report(a) => cmd_report(a).map(|_| true),
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn later_flags_override_earlier_ones() {
        let cli = Cli::parse_from(["scalefit", "allocate", "--spec", "s.json", "--C", "1e18", "--U", "1e8", "--C", "5e18"]);
        let Command::Allocate(a) = cli.command else { panic!() };
        assert_eq!(a.compute, 5e18);
    }

    #[test]
    fn unknown_setting_is_rejected() {
        assert!(Cli::try_parse_from(["scalefit", "synth", "--setting", "nope", "--out", "x.csv"]).is_err());
    }
}
