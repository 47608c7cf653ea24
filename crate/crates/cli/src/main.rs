use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{ArgAction, Parser, Subcommand};
use edgesim::engine::{self, output};
use edgesim::factorial::{self, FactorialDesign, Metric};
use edgesim::policies::PolicyKind;
use edgesim::scenario::Scenario;
use edgesim::stats;
use edgesim::suites::{self, Family, RateMap, SuiteOptions};
use serde_json::json;

#[derive(Parser)]
#[command(name = "edgesim", version, about = "Simulate dispatching of serverless functions at the edge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its outputs.
    Run {
        /// Scenario JSON file.
        config: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "EDGESIM_OUT", default_value = "out")]
        out: PathBuf,
        /// Overrides the simulated duration, seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Overrides the dispatching policy.
        #[arg(long)]
        policy: Option<PolicyKind>,
    },
    /// Run a bundled experiment family across its policies.
    Suite {
        family: Family,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// Monte Carlo drops of the fat-tree family.
        #[arg(long, default_value_t = 50)]
        drops: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        parallel: bool,
        #[arg(long, env = "EDGESIM_OUT", default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        duration: Option<f64>,
        /// Restricts the comparison to these policies (repeatable).
        #[arg(long)]
        policy: Vec<PolicyKind>,
        /// City activity map for the fat-tree family (JSON); synthetic if absent.
        #[arg(long)]
        rate_map: Option<PathBuf>,
    },
    /// Analyze a 2^k r factorial experiment.
    Factorial {
        /// Design JSON file; the bundled sensitivity design if absent.
        #[arg(long)]
        design: Option<PathBuf>,
        /// Responses CSV to analyze.
        #[arg(long, conflicts_with = "run")]
        results: Option<PathBuf>,
        /// Produce the responses by simulating every cell of the design.
        #[arg(long)]
        run: bool,
        #[arg(long, default_value = "p90_delay")]
        metric: Metric,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        parallel: bool,
        #[arg(long, env = "EDGESIM_OUT", default_value = "out")]
        out: PathBuf,
        /// Print the design as JSON and exit.
        #[arg(long)]
        print_design: bool,
    },
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn config(e: impl Into<anyhow::Error>) -> Self {
        Self::Config(e.into())
    }

    fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Self::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            duration,
            policy,
        } => cmd_run(&config, seed, &out, duration, policy),
        Command::Suite {
            family,
            reps,
            drops,
            seed,
            parallel,
            out,
            duration,
            policy,
            rate_map,
        } => {
            let opts = SuiteOptions {
                reps,
                drops,
                seed,
                parallel,
                duration,
                policies: (!policy.is_empty()).then_some(policy),
            };
            cmd_suite(family, &opts, rate_map.as_deref(), &out)
        }
        Command::Factorial {
            design,
            results,
            run,
            metric,
            seed,
            duration,
            parallel,
            out,
            print_design,
        } => cmd_factorial(FactorialArgs {
            design,
            results,
            run,
            metric,
            seed,
            duration,
            parallel,
            out,
            print_design,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Runtime)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::Runtime)
}

fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    out: &Path,
    duration: Option<f64>,
    policy: Option<PolicyKind>,
) -> Result<(), Failure> {
    let text = read(config)?;
    let mut scenario = Scenario::from_json(&text)
        .with_context(|| format!("in {}", config.display()))
        .map_err(Failure::Config)?;
    if let Some(d) = duration {
        scenario.duration = d;
    }
    if let Some(p) = policy {
        scenario.policy.kind = p;
    }
    scenario
        .validate()
        .with_context(|| format!("in {}", config.display()))
        .map_err(Failure::Config)?;
    let seed = seed.unwrap_or(scenario.seed);
    let result = engine::run(&scenario, seed).map_err(Failure::runtime)?;
    output::write(out, &result).map_err(Failure::runtime)?;
    let c = result.counts;
    println!(
        "{}: seed {seed}, issued {}, ok {}, no destination {}, dropped {}",
        result.scenario.name, c.issued, c.ok, c.no_destination, c.dropped
    );
    match result.delay_percentile(90.0) {
        Some(p90) => println!("90th percentile delay {:.6} s over {} jobs", p90, result.delays.len()),
        None => println!("no tagged jobs completed"),
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn ci_json(samples: &[f64]) -> serde_json::Value {
    match stats::confidence_interval(samples, 0.95) {
        Ok(ci) => json!({ "mean": ci.mean, "low": ci.low(), "high": ci.high() }),
        Err(_) => json!({ "mean": stats::mean(samples), "low": null, "high": null }),
    }
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut push = |record: &[String]| w.write_record(record).map_err(Failure::runtime);
    push(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>())?;
    for row in rows {
        push(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::runtime(anyhow!("{e}")))?;
    String::from_utf8(bytes).map_err(Failure::runtime)
}

fn cmd_suite(family: Family, opts: &SuiteOptions, rate_map: Option<&Path>, out: &Path) -> Result<(), Failure> {
    if opts.reps == 0 || (family == Family::Fattree && opts.drops == 0) {
        return Err(Failure::config(anyhow!("--reps and --drops must be positive")));
    }
    let options = json!({
        "family": family.to_string(),
        "reps": opts.reps,
        "drops": opts.drops,
        "seed": opts.seed,
        "duration": opts.duration,
        "policies": opts.policies.as_ref().map(|p| p.iter().map(|k| k.to_string()).collect::<Vec<_>>()),
    });
    let (report, header, rows): (serde_json::Value, Vec<&str>, Vec<Vec<String>>) = match family {
        Family::Limitations => {
            let result = suites::limitations(opts).map_err(Failure::runtime)?;
            let rows = result
                .iter()
                .map(|r| {
                    let lhs: Vec<f64> = r.load.iter().map(|l| l[0]).collect();
                    let rhs: Vec<f64> = r.load.iter().map(|l| l[1]).collect();
                    vec![
                        r.case.to_string(),
                        r.policy.to_string(),
                        r.p90_ci.mean.to_string(),
                        r.p90_ci.low().to_string(),
                        r.p90_ci.high().to_string(),
                        stats::mean(&lhs).to_string(),
                        stats::mean(&rhs).to_string(),
                        r.tagged_executions[0].to_string(),
                        r.tagged_executions[1].to_string(),
                    ]
                })
                .collect();
            (
                json!({ "options": options, "rows": result }),
                vec!["case", "policy", "p90", "p90_low", "p90_high", "load_lhs", "load_rhs", "tagged_lhs", "tagged_rhs"],
                rows,
            )
        }
        Family::Clique => {
            let result = suites::clique(opts).map_err(Failure::runtime)?;
            let rows = result
                .iter()
                .map(|r| {
                    let mut row = vec![
                        r.others.to_string(),
                        r.policy.to_string(),
                        r.p90_ci.mean.to_string(),
                        r.p90_ci.low().to_string(),
                        r.p90_ci.high().to_string(),
                    ];
                    for k in 0..4 {
                        let busy: Vec<f64> = r.busy_cores.iter().map(|b| b[k]).collect();
                        row.push(stats::mean(&busy).to_string());
                    }
                    row.push(suites::load_core_correlation(r).to_string());
                    row.push(suites::load_spread(r).to_string());
                    row
                })
                .collect();
            (
                json!({ "options": options, "rows": result }),
                vec![
                    "others", "policy", "p90", "p90_low", "p90_high", "busy_e0", "busy_e1", "busy_e2", "busy_e3",
                    "load_core_rho", "load_cv",
                ],
                rows,
            )
        }
        Family::Fattree => {
            let map = match rate_map {
                Some(path) => {
                    let map: RateMap = serde_json::from_str(&read(path)?)
                        .with_context(|| format!("in {}", path.display()))
                        .map_err(Failure::Config)?;
                    map.validate().map_err(|e| Failure::config(anyhow!("{}: {e}", path.display())))?;
                    map
                }
                None => RateMap::synthetic(10, 10, opts.seed),
            };
            let result = suites::fattree(opts, &map).map_err(Failure::runtime)?;
            let rows = result
                .iter()
                .map(|r| {
                    let tpt = ci_json(&r.throughput);
                    let valid: Vec<f64> = r.p90.iter().copied().filter(|p| !p.is_nan()).collect();
                    vec![
                        r.policy.to_string(),
                        r.p90.len().to_string(),
                        r.over_target.to_string(),
                        stats::percentile(&valid, 50.0).map(|p| p.to_string()).unwrap_or_default(),
                        r.mean_throughput.to_string(),
                        tpt["low"].to_string(),
                        tpt["high"].to_string(),
                    ]
                })
                .collect();
            (
                json!({ "options": options, "rate_map": map, "rows": result }),
                vec!["policy", "drops", "over_target", "p90_median", "throughput", "throughput_low", "throughput_high"],
                rows,
            )
        }
    };
    create_dir(out)?;
    let csv = csv_text(&header, &rows)?;
    write(&out.join(format!("{family}.csv")), &csv)?;
    let mut text = serde_json::to_string_pretty(&report).map_err(Failure::runtime)?;
    text.push('\n');
    write(&out.join(format!("{family}.json")), &text)?;
    print!("{csv}");
    Ok(())
}

struct FactorialArgs {
    design: Option<PathBuf>,
    results: Option<PathBuf>,
    run: bool,
    metric: Metric,
    seed: u64,
    duration: Option<f64>,
    parallel: bool,
    out: PathBuf,
    print_design: bool,
}

fn cmd_factorial(args: FactorialArgs) -> Result<(), Failure> {
    let design: FactorialDesign = match &args.design {
        Some(path) => {
            let d: FactorialDesign = serde_json::from_str(&read(path)?)
                .with_context(|| format!("in {}", path.display()))
                .map_err(Failure::Config)?;
            d.validate()
                .with_context(|| format!("in {}", path.display()))
                .map_err(Failure::Config)?;
            d
        }
        None => factorial::sensitivity_design(),
    };
    if args.print_design {
        println!("{}", serde_json::to_string_pretty(&design).map_err(Failure::runtime)?);
        return Ok(());
    }
    let responses = match (&args.results, args.run) {
        (Some(path), _) => {
            let file = fs::File::open(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::Config)?;
            factorial::read_responses(&design, file)
                .with_context(|| format!("in {}", path.display()))
                .map_err(Failure::Config)?
        }
        (None, true) => {
            for cell in [0, design.cells() - 1] {
                factorial::sensitivity_scenario(&design, cell)
                    .map_err(Failure::config)?
                    .validate()
                    .map_err(Failure::config)?;
            }
            factorial::run_sensitivity(&design, args.metric, args.seed, args.duration, args.parallel)
                .map_err(Failure::runtime)?
        }
        (None, false) => return Err(Failure::config(anyhow!("pass --results <csv> or --run"))),
    };
    let analysis = factorial::effects(&design, &responses).map_err(Failure::runtime)?;
    let diagnostics = factorial::residual_diagnostics(&design, &responses, &analysis.q()).map_err(Failure::runtime)?;
    create_dir(&args.out)?;
    let file = |name: &str| {
        let path = args.out.join(name);
        fs::File::create(&path)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::Runtime)
    };
    factorial::write_responses(&design, &responses, file("responses.csv")?).map_err(Failure::runtime)?;
    let mut effects = Vec::new();
    factorial::write_effects(&analysis, &mut effects).map_err(Failure::runtime)?;
    write(&args.out.join("effects.csv"), &String::from_utf8_lossy(&effects))?;
    factorial::write_residuals(&diagnostics, file("residuals.csv")?).map_err(Failure::runtime)?;
    factorial::write_qq(&diagnostics, file("qq.csv")?).map_err(Failure::runtime)?;
    let report = json!({
        "design": design,
        "metric": args.run.then_some(args.metric),
        "seed": args.run.then_some(args.seed),
        "analysis": analysis,
    });
    let mut text = serde_json::to_string_pretty(&report).map_err(Failure::runtime)?;
    text.push('\n');
    write(&args.out.join("analysis.json"), &text)?;
    if !analysis.cis_available {
        eprintln!("one replication per cell: confidence intervals unavailable");
    }
    print!("{}", String::from_utf8_lossy(&effects));
    Ok(())
}
