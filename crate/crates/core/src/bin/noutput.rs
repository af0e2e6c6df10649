use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use noutput::analytical::{design_analytical, design_for_n};
use noutput::baselines::PmParams;
use noutput::estimation::{
    em_estimate, mean_estimate, theta_continuous, theta_discrete, variance_from_histogram, EmConfig, ReportBatch,
    ReportSource, TransitionMatrix,
};
use noutput::harness::{
    config_hash, ingest_csv, run_suite, CacheKey, DesignCache, ExperimentConfig, MechanismId, Suite,
};
use noutput::numerical::{select_n, solve, Objective, SolverConfig};
use noutput::{Error, MechanismDesign, PrivacyBudget, Result};

/// N-output local differential privacy for numerical data.
#[derive(Parser)]
#[command(name = "noutput", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a mechanism design and write it as JSON.
    Design(DesignArgs),
    /// Perturb values in [-1, 1] and write the reports as CSV.
    Perturb(PerturbArgs),
    /// Estimate the mean of perturbed reports.
    EstimateMean(EstimateArgs),
    /// Estimate a histogram of the inputs from perturbed reports by EM.
    EstimateDist(DistArgs),
    /// Estimate the variance of the inputs from the EM histogram.
    EstimateVar(DistArgs),
    /// Run benchmark suites and write trials.csv, summary.csv and failures.csv.
    Bench(BenchArgs),
    /// Inspect or empty the design cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long, conflicts_with = "numerical", required_unless_present = "numerical")]
    analytical: bool,
    #[arg(long)]
    numerical: bool,
    #[arg(long, default_value = "worst")]
    objective: Objective,
    #[arg(long)]
    epsilon: f64,
    /// Fixed output count.
    #[arg(long = "N", conflicts_with = "select_n")]
    n_outputs: Option<usize>,
    /// Scan N = 2..=n-max and keep the best (numerical designs).
    #[arg(long)]
    select_n: bool,
    #[arg(long, default_value_t = 16)]
    n_max: usize,
    /// Solver settings as TOML; defaults otherwise.
    #[arg(long)]
    solver_config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

/// The mechanism that produced (or will produce) a set of reports.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct MechanismArgs {
    /// Design JSON file.
    #[arg(long)]
    design: Option<PathBuf>,
    /// Piecewise Mechanism at this budget.
    #[arg(long)]
    pm: Option<f64>,
    /// Sub-optimal Piecewise Mechanism at this budget.
    #[arg(long)]
    pm_sub: Option<f64>,
}

enum Source {
    Design(MechanismDesign),
    Pm(PmParams),
}

impl MechanismArgs {
    fn load(&self) -> Result<Source> {
        if let Some(path) = &self.design {
            return Ok(Source::Design(MechanismDesign::load(path)?));
        }
        if let Some(eps) = self.pm {
            return Ok(Source::Pm(PmParams::standard(PrivacyBudget::new(eps)?)));
        }
        let eps = self.pm_sub.expect("clap enforces one mechanism");
        Ok(Source::Pm(PmParams::sub(PrivacyBudget::new(eps)?)))
    }

    fn label(&self, source: &Source) -> String {
        match source {
            Source::Design(d) => d.variant().as_str().into(),
            Source::Pm(_) if self.pm.is_some() => "pm".into(),
            Source::Pm(_) => "pm-sub".into(),
        }
    }
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    mechanism: MechanismArgs,
    /// CSV file with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Column to perturb; the first column when omitted.
    #[arg(long)]
    column: Option<String>,
    /// Min-max normalize the column onto [-1, 1] first.
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    mechanism: MechanismArgs,
    #[arg(long)]
    reports: PathBuf,
}

#[derive(Args)]
struct DistArgs {
    #[command(flatten)]
    mechanism: MechanismArgs,
    #[arg(long)]
    reports: PathBuf,
    #[arg(long, default_value_t = 64)]
    bins: usize,
    /// Output bins for continuous reports; defaults to `bins`.
    #[arg(long)]
    output_bins: Option<usize>,
    #[arg(long, default_value_t = 1e-5)]
    tau: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    /// Also write the transition matrix as CSV.
    #[arg(long)]
    theta_out: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML experiment configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Suites by name or letter a-e.
    #[arg(long = "suite")]
    suites: Vec<Suite>,
    #[arg(long = "mechanism")]
    mechanisms: Vec<MechanismId>,
    #[arg(long = "epsilon")]
    epsilons: Vec<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CacheAction {
    Ls,
    Clear,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io_error(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| io_error(path, e))?))
}

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs `f` on the named file, or on stdout.
fn with_output(out: &Option<PathBuf>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = create(path)?;
            f(&mut w)?;
            w.flush().map_err(|e| io_error(path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)
        }
    }
}

fn design(args: DesignArgs) -> Result<()> {
    let budget = PrivacyBudget::new(args.epsilon)?;
    let design = if args.analytical {
        let (cand, scanned) = match args.n_outputs {
            Some(n) => {
                let cand = design_for_n(budget, n)?
                    .ok_or_else(|| Error::Infeasible(format!("no analytical design with N = {n}")))?;
                (cand, Vec::new())
            }
            None => {
                let sel = design_analytical(budget)?;
                (sel.selected, sel.scanned)
            }
        };
        let p = &cand.params;
        eprintln!("N = {}", cand.n_outputs);
        eprintln!("p = {}", p.p);
        eprintln!("p0 = {}", p.p0);
        eprintln!("a = {:?}", cand.design.outputs());
        eprintln!("worst-case variance = {}", cand.worst_case_variance);
        for (n, v) in scanned {
            eprintln!("  candidate N = {n}: {v}");
        }
        cand.design
    } else {
        let mut solver = match &args.solver_config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
                toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
            }
            None => SolverConfig::default(),
        };
        solver.objective = args.objective;
        let design = match args.n_outputs {
            Some(n) if !args.select_n => solve(budget, n, &solver)?,
            _ => {
                let key = CacheKey {
                    variant: args.objective.variant().as_str().into(),
                    objective: args.objective.as_str().into(),
                    epsilon: args.epsilon,
                    n_max: args.n_max,
                    config_hash: config_hash(&solver),
                };
                DesignCache::from_env().get_or_compute(&key, || Ok(select_n(budget, &solver, args.n_max)?.design))?
            }
        };
        eprintln!("N = {}", design.n_outputs());
        eprintln!("objective = {}", design.objective_value());
        eprintln!("worst-case variance = {}", design.worst_case_variance());
        design
    };
    with_output(&args.out, |w| {
        writeln!(w, "{}", design.to_json()?).map_err(|e| io_error(Path::new("<output>"), e))
    })
}

fn read_column(args: &PerturbArgs) -> Result<Vec<f64>> {
    let columns: Vec<String> = args.column.iter().cloned().collect();
    if args.normalize {
        let ds = ingest_csv(&args.input, &columns)?;
        return Ok(ds.columns.into_iter().next().unwrap_or_default());
    }
    let mut reader = csv::Reader::from_reader(open(&args.input)?);
    let headers = reader.headers()?.clone();
    let pos = match &args.column {
        Some(c) => headers
            .iter()
            .position(|h| h.trim() == c)
            .ok_or_else(|| Error::Data(format!("no column named {c:?}")))?,
        None => 0,
    };
    let mut xs = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = record.get(pos).unwrap_or("").trim();
        let x: f64 = field
            .parse()
            .map_err(|_| Error::Data(format!("not numeric: {field:?}")))?;
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::Domain(x));
        }
        xs.push(x);
    }
    Ok(xs)
}

fn perturb(args: PerturbArgs) -> Result<()> {
    let source = args.mechanism.load()?;
    let label = args.mechanism.label(&source);
    let xs = read_column(&args)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let batch = match &source {
        Source::Design(d) => ReportBatch::from_design(label, d, &xs, &mut rng)?,
        Source::Pm(p) => ReportBatch::from_pm(label, p, &xs, &mut rng)?,
    };
    with_output(&args.out, |w| batch.write_csv(w))
}

fn read_reports(mechanism: &MechanismArgs, path: &Path) -> Result<(Source, ReportBatch)> {
    let source = mechanism.load()?;
    let batch = match &source {
        Source::Design(d) => ReportBatch::read_csv(open(path)?, ReportSource::Design(d))?,
        Source::Pm(p) => {
            let (lo, hi) = p.domain();
            ReportBatch::read_csv(open(path)?, ReportSource::Range(lo, hi))?
        }
    };
    Ok((source, batch))
}

fn estimate_mean(args: EstimateArgs) -> Result<()> {
    let (_, batch) = read_reports(&args.mechanism, &args.reports)?;
    let mean = mean_estimate(&batch)?;
    println!("mechanism,epsilon,n,mean");
    println!("{},{},{},{}", batch.mechanism, batch.epsilon, batch.len(), mean);
    Ok(())
}

fn em_histogram(args: &DistArgs) -> Result<(ReportBatch, noutput::estimation::EmResult, TransitionMatrix)> {
    let (source, batch) = read_reports(&args.mechanism, &args.reports)?;
    let theta = match &source {
        Source::Design(d) => theta_discrete(d, args.bins)?,
        Source::Pm(p) => theta_continuous(p, args.bins, args.output_bins.unwrap_or(args.bins))?,
    };
    if let Some(path) = &args.theta_out {
        let mut w = create(path)?;
        theta.write_csv(&mut w, &batch.mechanism, batch.epsilon)?;
        w.flush().map_err(|e| io_error(path, e))?;
    }
    let counts = batch.binned_counts(theta.rows())?;
    let config = EmConfig {
        tau: args.tau,
        max_iters: args.max_iters,
    };
    let result = em_estimate(&counts, &theta, &config)?;
    if !result.converged {
        eprintln!("warning: EM stopped after {} iterations without converging", result.iterations);
    }
    Ok((batch, result, theta))
}

fn estimate_dist(args: DistArgs) -> Result<()> {
    let (batch, result, _) = em_histogram(&args)?;
    with_output(&args.out, |w| result.histogram.write_csv(w, &batch.mechanism, batch.epsilon))
}

fn estimate_var(args: DistArgs) -> Result<()> {
    let (batch, result, _) = em_histogram(&args)?;
    let var = variance_from_histogram(&result.histogram);
    with_output(&args.out, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["mechanism", "epsilon", "n", "bins", "iterations", "variance"])?;
        csv.write_record([
            batch.mechanism.clone(),
            batch.epsilon.to_string(),
            batch.len().to_string(),
            result.histogram.d().to_string(),
            result.iterations.to_string(),
            var.to_string(),
        ])?;
        csv.flush().map_err(|e| io_error(Path::new("<output>"), e))
    })
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if !args.suites.is_empty() {
        cfg.suites = args.suites;
    }
    if !args.mechanisms.is_empty() {
        cfg.mechanisms = args.mechanisms;
    }
    if !args.epsilons.is_empty() {
        cfg.epsilons = args.epsilons;
    }
    cfg.trials = args.trials.unwrap_or(cfg.trials);
    cfg.users = args.users.or(cfg.users);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.bins = args.bins.unwrap_or(cfg.bins);
    if let Some(out) = args.output {
        cfg.output = out;
    }
    let report = run_suite(&cfg, &DesignCache::from_env())?;
    report.write(&cfg.output)?;
    eprintln!(
        "{} summary rows, {} failures written to {}",
        report.summaries.len(),
        report.failures.len(),
        cfg.output.display()
    );
    for f in &report.failures {
        eprintln!("  {} {} eps={}: {}", f.suite.as_str(), f.mechanism, f.epsilon, f.error);
    }
    Ok(())
}

fn cache(action: CacheAction) -> Result<()> {
    let cache = DesignCache::from_env();
    match action {
        CacheAction::Ls => {
            println!("name,bytes");
            for e in cache.list()? {
                println!("{},{}", e.name, e.bytes);
            }
        }
        CacheAction::Clear => {
            let n = cache.clear()?;
            eprintln!("removed {n} designs from {}", cache.dir().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Design(a) => design(a),
        Command::Perturb(a) => perturb(a),
        Command::EstimateMean(a) => estimate_mean(a),
        Command::EstimateDist(a) => estimate_dist(a),
        Command::EstimateVar(a) => estimate_var(a),
        Command::Bench(a) => bench(a),
        Command::Cache { action } => cache(action),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
