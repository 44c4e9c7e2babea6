use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use treelcm_core::lcm::simulate_lcm_given_tree;
use treelcm_core::{ddtlcm_fit, PosteriorChain, PosteriorSummary, SamplerConfig, SummaryConfig};

use crate::bundle::{read_json, resolve_groups, GroupingFile, ParameterBundle};
use crate::error::{CliError, CliResult};
use crate::io::{read_responses, write_responses, Truth};
use crate::report::{build_plot, render_svg, PlotInput, PlotOption};

#[derive(Debug, Parser)]
#[command(name = "treelcm", version, about = "Tree-regularized Bayesian latent class analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate responses from a parameter bundle.
    Simulate(SimulateArgs),
    /// Run the posterior sampler on a response file.
    Fit(FitArgs),
    /// Summarize a stored chain.
    Summarize(SummarizeArgs),
    /// Draw the MAP tree and class profiles from a summary.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Parameter bundle (JSON).
    #[arg(long)]
    pub params: PathBuf,
    /// Number of observations.
    #[arg(short = 'N', long = "n-obs")]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed_parameter: u64,
    #[arg(long, default_value_t = 1)]
    pub seed_response: u64,
    /// Output directory for responses.csv, truth.json, tree.nwk and grouping.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Response CSV with header `id,<item>,...`.
    #[arg(long)]
    pub data: PathBuf,
    /// Grouping JSON (a `groups` array; a parameter bundle also works).
    #[arg(long)]
    pub grouping: PathBuf,
    /// Number of latent classes.
    #[arg(short = 'K', long = "classes")]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub total_iters: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Hold the divergence parameter at 1.
    #[arg(long)]
    pub fix_c: bool,
    /// Independent chains; chain i uses seed + i - 1 and writes to chain_i/.
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    /// Prune/regraft proposals per sweep.
    #[arg(long, default_value_t = 1)]
    pub topology_moves: usize,
    /// Logit-scale location of the origin.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub root_location: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Chain directory written by `fit`.
    #[arg(long)]
    pub chain: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub burnin: usize,
    /// Resolve label switching (ECR).
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub relabel: bool,
    /// Credible level of the equal-tailed intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Output file (default: <chain>/summary.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Do not print the summary report.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// summary.json written by `summarize`.
    #[arg(long)]
    pub summary: PathBuf,
    /// Item names, one per line (default: labels stored in the summary).
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PlotOption::All)]
    pub plot_option: PlotOption,
    /// Output directory for report.svg and plot_data.json.
    #[arg(long)]
    pub out: PathBuf,
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::new("E_INTERNAL", e.to_string()))
}

pub fn simulate(args: &SimulateArgs) -> CliResult<String> {
    let bundle = ParameterBundle::load(&args.params)?;
    let b = bundle.validate()?;
    if args.n == 0 {
        return Err(CliError::new("E_PARAMETER", "N must be at least 1"));
    }
    let mut sim = simulate_lcm_given_tree(
        &b.tree,
        args.n,
        &b.class_probability,
        &b.grouping,
        &b.variances,
        &b.root_location,
        args.seed_parameter,
        args.seed_response,
    )?;
    sim.response_matrix.col_ids = b.item_labels.clone();
    create_dir(&args.out)?;
    write_responses(&args.out.join("responses.csv"), &sim.response_matrix)?;
    let truth = Truth::from_dataset(&sim, b.variances.as_slice(), &b.group_names);
    write_file(&args.out.join("truth.json"), &to_json(&truth)?)?;
    write_file(&args.out.join("tree.nwk"), &format!("{}\n", b.tree.to_newick()))?;
    let grouping = GroupingFile { schema_version: bundle.schema_version, groups: bundle.groups.clone() };
    write_file(&args.out.join("grouping.json"), &to_json(&grouping)?)?;
    Ok(format!(
        "Simulated {} observations of {} items in {} groups from {} latent classes.\nWrote {}\n",
        sim.response_matrix.n_rows(),
        sim.response_matrix.n_cols(),
        b.grouping.n_groups(),
        b.tree.n_leaves(),
        args.out.display()
    ))
}

pub fn fit(args: &FitArgs) -> CliResult<String> {
    if args.chains == 0 {
        return Err(CliError::usage("--chains must be at least 1"));
    }
    let data = read_responses(&args.data)?;
    let groups = GroupingFile::load(&args.grouping)?;
    let (grouping, group_names, _) = resolve_groups(&groups.groups)?;
    if grouping.n_items() != data.n_cols() {
        return Err(CliError::new(
            "E_DIMENSION",
            format!(
                "grouping covers {} items but {} has {}",
                grouping.n_items(),
                args.data.display(),
                data.n_cols()
            ),
        ));
    }
    if args.k > data.n_rows() {
        return Err(CliError::new(
            "E_PARAMETER",
            format!("K = {} exceeds the number of observations N = {}", args.k, data.n_rows()),
        ));
    }
    let config_for = |seed: u64| {
        let mut c = SamplerConfig::new(args.k, args.total_iters);
        c.seed = seed;
        c.fix_c = args.fix_c;
        c.topology_moves = args.topology_moves;
        c.root_location = args.root_location;
        c.group_names = group_names.clone();
        c
    };
    let runs: Vec<(PathBuf, u64)> = if args.chains == 1 {
        vec![(args.out.clone(), args.seed)]
    } else {
        (1..=args.chains)
            .map(|i| (args.out.join(format!("chain_{i}")), args.seed + i as u64 - 1))
            .collect()
    };
    let chains: Vec<PosteriorChain> = runs
        .par_iter()
        .map(|(_, seed)| ddtlcm_fit(args.k, &data, &grouping, &config_for(*seed)).map_err(CliError::from))
        .collect::<CliResult<_>>()?;
    let mut out = String::new();
    for ((dir, _), chain) in runs.iter().zip(&chains) {
        chain.save(dir)?;
        out.push_str(&chain.meta.run_header());
        out.push('\n');
    }
    Ok(out)
}

pub fn summarize(args: &SummarizeArgs) -> CliResult<String> {
    let chain = PosteriorChain::load(&args.chain)?;
    let cfg = SummaryConfig { burnin: args.burnin, relabel: args.relabel, level: args.level, quiet: args.quiet };
    let summary = treelcm_core::summary::summarize(&chain, &cfg)?;
    let path = args.out.clone().unwrap_or_else(|| args.chain.join("summary.json"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&path, &to_json(&summary)?)?;
    Ok(if cfg.quiet { String::new() } else { summary.report() })
}

fn read_item_names(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

pub fn report(args: &ReportArgs) -> CliResult<String> {
    let summary: PosteriorSummary = read_json(&args.summary, "summary")?;
    let names = args.items.as_deref().map(read_item_names).transpose()?;
    let input = PlotInput::from_summary(&summary, names)?;
    let plot = build_plot(&input, args.plot_option)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("plot_data.json"), &to_json(&plot)?)?;
    write_file(&args.out.join("report.svg"), &render_svg(&plot))?;
    Ok(format!("Wrote {}\n", args.out.display()))
}

pub fn execute(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Summarize(a) => summarize(a),
        Command::Report(a) => report(a),
    }
}
