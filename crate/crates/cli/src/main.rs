//! `misvb`: command-line driver over the library.
//!
//! Subcommands cover the pieces of a simulation study individually
//! (`theta-star`, `fit`, `mcmc`, `diagnose`) and as a whole (`experiment`,
//! which runs a replication grid from a key-value config file and writes
//! a results table, its summary, the population reference record, and a
//! manifest that reruns the experiment bit for bit).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use misvb_core::report::{
    fmt_f64, matrix_to_vec, population_to_doc, read_results_csv, summarize, summary_to_csv,
    write_results_csv, KvDoc,
};
use misvb_core::scenario::{
    canonical_q_for, compute_reference, fit_replication, run_scenario, sample_replication,
    McmcSettings, Reference, RunConfig, ScenarioSpec,
};
use misvb_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "misvb",
    version,
    about = "Mean-field variational Bayes on misspecified models: \
             population references, fits, exact-posterior baselines, and \
             replication experiments"
)]
struct Cli {
    /// Worker threads for data-parallel sections (0 keeps the default pool).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a scenario's population reference: the pseudo-true
    /// parameter with curvature and sandwich matrices, or the limit
    /// posterior of the fixed-group scenario.
    ThetaStar {
        /// Scenario name (an unknown name lists the choices).
        #[arg(long)]
        scenario: String,
        /// Monte Carlo pool size behind the reference quantities.
        #[arg(long, default_value_t = 200_000)]
        pool: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the reference record to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one dataset and run the variational fit on it, with the
    /// same seed derivation the experiment runner uses.
    Fit {
        #[arg(long)]
        scenario: String,
        /// Observations (units for the grouped scenario).
        #[arg(long)]
        n: usize,
        /// Replication index; changes the data and fit streams.
        #[arg(long, default_value_t = 0)]
        rep: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the fit record to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one dataset, fit it, and run the random-walk reference
    /// sampler on the marginalised posterior (the fit provides proposal
    /// scales and overdispersed starting points).
    Mcmc {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        rep: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        chains: usize,
        #[arg(long, default_value_t = 5_000)]
        burn_in: usize,
        /// Kept draws per chain.
        #[arg(long, default_value_t = 2_500)]
        keep: usize,
        #[arg(long, default_value_t = 1)]
        thin: usize,
        /// Also write the run record to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the pooled draws as CSV to this file.
        #[arg(long)]
        draws_out: Option<PathBuf>,
    },
    /// Run the replication grid described by a config file.
    Experiment {
        /// Key-value config file; `scenario` is the only required key.
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reduce a results table to per (scenario, n, method, metric)
    /// quartile summaries.
    Diagnose {
        /// A results.csv written by `experiment`.
        #[arg(long)]
        results: PathBuf,
        /// Write the summary here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads(cli.jobs);
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(jobs: usize) {
    if jobs > 0 {
        // A pool may already exist (e.g. under a test harness); results do
        // not depend on thread count, so a failure here is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_jobs: usize) {}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::ThetaStar {
            scenario,
            pool,
            seed,
            out,
        } => theta_star(&scenario, pool, seed, out.as_deref()),
        Command::Fit {
            scenario,
            n,
            rep,
            seed,
            out,
        } => fit(&scenario, n, rep, seed, out.as_deref()),
        Command::Mcmc {
            scenario,
            n,
            rep,
            seed,
            chains,
            burn_in,
            keep,
            thin,
            out,
            draws_out,
        } => {
            let settings = McmcSettings {
                chains,
                burn_in,
                keep,
                thin,
            };
            mcmc(
                &scenario,
                n,
                rep,
                seed,
                settings,
                out.as_deref(),
                draws_out.as_deref(),
            )
        }
        Command::Experiment { config, out } => experiment(&config, &out),
        Command::Diagnose { results, out } => diagnose(&results, out.as_deref()),
    }
}

fn theta_star(name: &str, pool: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let spec = ScenarioSpec::from_name(name)?;
    let mut cfg = RunConfig::default();
    cfg.mc_pool = pool;
    cfg.base_seed = seed;
    let reference = compute_reference(spec, &cfg)?;
    match &reference {
        Reference::Iid(p) => {
            println!("scenario {}", spec.name());
            println!("theta_star {}", fmt_vec(&p.theta_star));
            println!("theta_star_se {}", fmt_vec(&p.theta_star_se));
            println!("kl_at_star {}", fmt_f64(p.kl_at_star));
            println!("multimodal {}", p.multimodal);
        }
        Reference::Grouped(l) => {
            println!("scenario {}", spec.name());
            println!("theta_star {}", fmt_vec(&l.theta_star));
            println!("group_log_means {}", fmt_vec(&l.log_means));
        }
    }
    if let Some(path) = out {
        reference_doc(spec, &reference).write_file(path, &["population reference record"])?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn fit(name: &str, n: usize, rep: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let spec = ScenarioSpec::from_name(name)?;
    let mut cfg = RunConfig::default();
    cfg.base_seed = seed;
    let (data, report) = fit_replication(spec, n, rep, &cfg)?;
    let q = canonical_q_for(spec, &report.q);
    println!("scenario {} n {} rep {}", spec.name(), data.n(), rep);
    println!("steps {} converged {}", report.steps, report.converged);
    println!(
        "bound {} se {}",
        fmt_f64(report.final_elbo),
        fmt_f64(report.final_elbo_se)
    );
    println!("mu {}", fmt_vec(&q.mu));
    println!("sigma {}", fmt_vec(&q.sigma()));
    if let Some(path) = out {
        let mut doc = KvDoc::new();
        doc.push("format", "vb-fit-v1");
        doc.push("scenario", spec.name());
        doc.push("n", n.to_string());
        doc.push("rep", rep.to_string());
        doc.push("seed", seed.to_string());
        doc.push("steps", report.steps.to_string());
        doc.push("converged", bool_str(report.converged));
        doc.push_f64("bound", report.final_elbo);
        doc.push_f64("bound_se", report.final_elbo_se);
        doc.push_vec("mu", &q.mu);
        doc.push_vec("log_sigma", &q.log_sigma);
        doc.write_file(path, &[])?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn mcmc(
    name: &str,
    n: usize,
    rep: usize,
    seed: u64,
    settings: McmcSettings,
    out: Option<&Path>,
    draws_out: Option<&Path>,
) -> Result<()> {
    let spec = ScenarioSpec::from_name(name)?;
    let mut cfg = RunConfig::default();
    cfg.base_seed = seed;
    cfg.mcmc = settings;
    let (q, run) = sample_replication(spec, n, rep, &cfg)?;
    let draws = run.pooled_vec();
    let post_mean = mean_columns(&draws, run.dim);
    println!("scenario {} n {} rep {}", spec.name(), n, rep);
    println!("chains {} kept {} each", run.chains, run.kept_per_chain);
    println!("acceptance {}", fmt_vec(&run.acceptance));
    println!("r_hat {}", fmt_vec(&run.r_hat));
    println!("mixed {}", run.mixed);
    println!("posterior_mean {}", fmt_vec(&post_mean));
    println!("vb_mean {}", fmt_vec(&q.mu));
    if let Some(path) = out {
        let mut doc = KvDoc::new();
        doc.push("format", "mcmc-run-v1");
        doc.push("scenario", spec.name());
        doc.push("n", n.to_string());
        doc.push("rep", rep.to_string());
        doc.push("seed", seed.to_string());
        doc.push("chains", run.chains.to_string());
        doc.push("kept_per_chain", run.kept_per_chain.to_string());
        doc.push("mixed", bool_str(run.mixed));
        doc.push_vec("acceptance", &run.acceptance);
        doc.push_vec("r_hat", &run.r_hat);
        doc.push_vec("posterior_mean", &post_mean);
        doc.push_vec("vb_mean", &q.mu);
        doc.write_file(path, &[])?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = draws_out {
        write_draws_csv(path, &draws, run.dim)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn experiment(config_path: &Path, out_dir: &Path) -> Result<()> {
    let doc = KvDoc::read_file(config_path)?;
    let (spec, cfg) = parse_experiment_config(&doc)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let run = run_scenario(spec, &cfg)?;
    let flagged = run.rows.iter().filter(|r| r.failed).count();

    let results_path = out_dir.join("results.csv");
    write_results_csv(&results_path, &run.rows)?;
    let summary_path = out_dir.join("summary.csv");
    std::fs::write(&summary_path, summary_to_csv(&summarize(&run.rows)))
        .map_err(|e| Error::io(summary_path.display().to_string(), e))?;
    let reference_path = out_dir.join("reference.txt");
    reference_doc(spec, &run.reference)
        .write_file(&reference_path, &["population reference behind the metric rows"])?;
    let manifest_path = out_dir.join("manifest.txt");
    resolved_config(spec, &cfg).write_file(
        &manifest_path,
        &["fully resolved configuration; passing this file back to `misvb experiment --config` reproduces results.csv byte for byte"],
    )?;

    println!(
        "scenario {}: {} rows, {} flagged failed",
        spec.name(),
        run.rows.len(),
        flagged
    );
    for path in [&results_path, &summary_path, &reference_path, &manifest_path] {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn diagnose(results: &Path, out: Option<&Path>) -> Result<()> {
    let rows = read_results_csv(results)?;
    let text = summary_to_csv(&summarize(&rows));
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Serialises either kind of population reference.
fn reference_doc(spec: ScenarioSpec, reference: &Reference) -> KvDoc {
    match reference {
        Reference::Iid(p) => population_to_doc(spec.name(), p),
        Reference::Grouped(l) => {
            let mut doc = KvDoc::new();
            doc.push("format", "grouped-limit-v1");
            doc.push("kind", spec.name());
            doc.push("dim", l.theta_star.len().to_string());
            doc.push_vec("theta_star", &l.theta_star);
            doc.push_vec("group_log_means", &l.log_means);
            doc.push_vec("curvature", &matrix_to_vec(&l.curvature));
            doc.push_vec("cov", &matrix_to_vec(&l.cov));
            doc
        }
    }
}

/// Every key `experiment` accepts; `resolved_config` writes exactly these.
const CONFIG_KEYS: &[&str] = &[
    "scenario",
    "ns",
    "reps",
    "seed",
    "pool",
    "vb.samples",
    "vb.max_steps",
    "vb.step_base",
    "vb.step_decay",
    "vb.clip",
    "vb.window",
    "vb.check_every",
    "vb.final_samples",
    "vb.trace_points",
    "vb.inner_gh",
    "vb.inner_tol",
    "vb.inner_evals",
    "mcmc.chains",
    "mcmc.burn_in",
    "mcmc.keep",
    "mcmc.thin",
    "pred.draws",
    "pred.held_out",
    "limit.draws",
];

fn parse_experiment_config(doc: &KvDoc) -> Result<(ScenarioSpec, RunConfig)> {
    for key in doc.keys() {
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
    }
    let spec = ScenarioSpec::from_name(doc.require("scenario")?)?;
    let mut cfg = RunConfig::default();
    if let Some(text) = doc.get("ns") {
        let ns = text
            .split_whitespace()
            .map(|tok| {
                tok.parse::<usize>()
                    .map_err(|_| Error::Config(format!("field \"ns\": bad size {tok:?}")))
            })
            .collect::<Result<Vec<usize>>>()?;
        if ns.is_empty() {
            return Err(Error::Config("field \"ns\": need at least one size".into()));
        }
        cfg.ns = Some(ns);
    }
    if let Some(v) = doc.get_usize("reps")? {
        cfg.reps = v;
    }
    if let Some(v) = doc.get_u64("seed")? {
        cfg.base_seed = v;
    }
    if let Some(v) = doc.get_usize("pool")? {
        cfg.mc_pool = v;
    }
    if let Some(v) = doc.get_usize("vb.samples")? {
        cfg.vb.mc_samples_per_step = v;
    }
    if let Some(v) = doc.get_usize("vb.max_steps")? {
        cfg.vb.max_steps = v;
    }
    if let Some(v) = doc.get_f64("vb.step_base")? {
        cfg.vb.step_base = v;
    }
    if let Some(v) = doc.get_f64("vb.step_decay")? {
        cfg.vb.step_decay = v;
    }
    if let Some(v) = doc.get_f64("vb.clip")? {
        cfg.vb.clip = v;
    }
    if let Some(v) = doc.get_usize("vb.window")? {
        cfg.vb.window = v;
    }
    if let Some(v) = doc.get_usize("vb.check_every")? {
        cfg.vb.check_every = v;
    }
    if let Some(v) = doc.get_usize("vb.final_samples")? {
        cfg.vb.final_elbo_samples = v;
    }
    if let Some(v) = doc.get_usize("vb.trace_points")? {
        cfg.vb.trace_points = v;
    }
    if let Some(v) = doc.get_usize("vb.inner_gh")? {
        cfg.vb.inner.gh_points = v;
    }
    if let Some(v) = doc.get_f64("vb.inner_tol")? {
        cfg.vb.inner.tol = v;
    }
    if let Some(v) = doc.get_usize("vb.inner_evals")? {
        cfg.vb.inner.max_evals = v;
    }
    if let Some(v) = doc.get_usize("mcmc.chains")? {
        cfg.mcmc.chains = v;
    }
    if let Some(v) = doc.get_usize("mcmc.burn_in")? {
        cfg.mcmc.burn_in = v;
    }
    if let Some(v) = doc.get_usize("mcmc.keep")? {
        cfg.mcmc.keep = v;
    }
    if let Some(v) = doc.get_usize("mcmc.thin")? {
        cfg.mcmc.thin = v;
    }
    if let Some(v) = doc.get_usize("pred.draws")? {
        cfg.pred_draws = v;
    }
    if let Some(v) = doc.get_usize("pred.held_out")? {
        cfg.held_out = v;
    }
    if let Some(v) = doc.get_usize("limit.draws")? {
        cfg.limit_draws = v;
    }
    Ok((spec, cfg))
}

/// Writes back every config key with its resolved value (including the
/// default size ladder), so the output parses to the identical run.
fn resolved_config(spec: ScenarioSpec, cfg: &RunConfig) -> KvDoc {
    let ns = cfg.ns.clone().unwrap_or_else(|| spec.default_ns());
    let ns_text = ns
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let mut doc = KvDoc::new();
    doc.push("scenario", spec.name());
    doc.push("ns", ns_text);
    doc.push("reps", cfg.reps.to_string());
    doc.push("seed", cfg.base_seed.to_string());
    doc.push("pool", cfg.mc_pool.to_string());
    doc.push("vb.samples", cfg.vb.mc_samples_per_step.to_string());
    doc.push("vb.max_steps", cfg.vb.max_steps.to_string());
    doc.push_f64("vb.step_base", cfg.vb.step_base);
    doc.push_f64("vb.step_decay", cfg.vb.step_decay);
    doc.push_f64("vb.clip", cfg.vb.clip);
    doc.push("vb.window", cfg.vb.window.to_string());
    doc.push("vb.check_every", cfg.vb.check_every.to_string());
    doc.push("vb.final_samples", cfg.vb.final_elbo_samples.to_string());
    doc.push("vb.trace_points", cfg.vb.trace_points.to_string());
    doc.push("vb.inner_gh", cfg.vb.inner.gh_points.to_string());
    doc.push_f64("vb.inner_tol", cfg.vb.inner.tol);
    doc.push("vb.inner_evals", cfg.vb.inner.max_evals.to_string());
    doc.push("mcmc.chains", cfg.mcmc.chains.to_string());
    doc.push("mcmc.burn_in", cfg.mcmc.burn_in.to_string());
    doc.push("mcmc.keep", cfg.mcmc.keep.to_string());
    doc.push("mcmc.thin", cfg.mcmc.thin.to_string());
    doc.push("pred.draws", cfg.pred_draws.to_string());
    doc.push("pred.held_out", cfg.held_out.to_string());
    doc.push("limit.draws", cfg.limit_draws.to_string());
    doc
}

fn write_draws_csv(path: &Path, draws: &[Vec<f64>], dim: usize) -> Result<()> {
    let mut text = String::new();
    let header: Vec<String> = (0..dim).map(|j| format!("theta{j}")).collect();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in draws {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn fmt_vec(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| fmt_f64(*v))
        .collect::<Vec<_>>()
        .join(" ")
}

fn mean_columns(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows.len().max(1) as f64;
    }
    mean
}

fn bool_str(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}
