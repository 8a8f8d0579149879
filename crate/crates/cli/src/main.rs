use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use lctd_cli::config::{parse_range, ExperimentConfig};
use lctd_cli::experiment::{full_run, learner_config, thread_pool, Problem};
use lctd_cli::output::{header, write_report};
use lctd_cli::plot::{load_trace, render_svg};
use lctd_cli::scaling::k_scaling;
use lctd_cli::search::{probe_rows, result_row, search_all, PROBE_HEADER, RESULT_HEADER};
use lctd_cli::verify::{scaled_features, verify};
use lctd_core::{Algorithm, SampleMode};

const SCHEMAS: &str = "\
Output files (each begins with the full configuration as `# key = value` lines):

  trace_<algorithm>_K<k>_seed<seed>.csv      (run)
    t,loss_l2_mu,loss_w1_mu,theta_norm,diverged,neg_log10_loss
    Losses are of the tail average over iterations t/2..t against the exact
    fixed point. neg_log10_loss = -log10((1/K)|θ̄_t - θ*|²_{I⊗Σφ}); for
    linear_td it is -log10 of the squared μπ-weighted value error.
    diverged is 0 or 1.

  run_summary.csv                            (run)
    algorithm,k,seed,alpha,steps,diverged,final_loss_l2_mu,final_neg_log10_loss

  alpha_search.csv                           (alpha-search, k-scaling)
    algorithm,k,lower,upper,alpha_inf,iterations_at_fifth
    lower: largest α that converged, upper: smallest α that did not,
    alpha_inf: geometric midpoint, iterations_at_fifth: median iterations
    to reach epsilon at α = 0.2·lower (empty if most seeds failed).

  alpha_probes.csv                           (alpha-search, k-scaling)
    algorithm,k,alpha,seed,verdict,t,final_loss
    verdict is converged, diverged or stalled.

  k_scaling_fit.txt                          (k-scaling)
    key=value lines: quadratic fit of 1/α∞ against K for ssgd_pmf and
    linear_ctd, R², and the linear_ctd max/min α∞ ratio.

  verify.txt                                 (verify)
    k=<K> check=\"<name>\" status=pass|fail|skipped value= bound= margin= tolerance=

  loss.svg                                   (plot)";

#[derive(Parser)]
#[command(name = "lctd", version, about = "Distributional TD policy-evaluation experiments", after_long_help = SCHEMAS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run learners and log tail-averaged losses at checkpoints.
    Run(Common),
    /// Bisect for the largest step size that reaches epsilon within T.
    AlphaSearch(Common),
    /// Step-size searches for ssgd_pmf and linear_ctd over the K list, with a quadratic fit of 1/α∞.
    KScaling(Common),
    /// Check the matrix properties and bounds on the configured model.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Multiply Φ by 3 without renormalising, so that ‖φ(s)‖ > 1.
        #[arg(long)]
        unnormalized_features: bool,
    },
    /// Plot trace CSVs as loss-versus-iteration lines.
    Plot {
        files: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML file of `key = value` settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the single learner seed N.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "DISTRIB_TD_THREADS")]
    threads: Option<usize>,
    /// linear_ctd, ssgd_pmf, linear_td or tabular_ctd.
    #[arg(long)]
    algorithm: Option<Algorithm>,
    /// Comma-separated resolutions K.
    #[arg(long, value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Search bracket LO:HI.
    #[arg(long)]
    alpha_range: Option<String>,
    /// Convergence threshold on (1/K)‖θ̄ − θ*‖²_{I⊗Σφ}.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Iterations T (even).
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// generative or markovian.
    #[arg(long)]
    mode: Option<SampleMode>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seeds = vec![v];
        }
        if let Some(v) = self.threads {
            cfg.threads = Some(v);
        }
        if let Some(v) = self.algorithm {
            cfg.algorithm = v;
        }
        if let Some(v) = &self.k_list {
            cfg.k_list = v.clone();
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = &self.alpha_range {
            cfg.alpha_range = Some(parse_range(v)?);
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.max_iter {
            cfg.t_max = v;
        }
        if let Some(v) = self.batch {
            cfg.batch = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(c) => cmd_run(&c.config()?),
        Command::AlphaSearch(c) => cmd_alpha_search(&c.config()?),
        Command::KScaling(c) => cmd_k_scaling(&c.config()?),
        Command::Verify { common, unnormalized_features } => {
            let mut cfg = common.config()?;
            if unnormalized_features {
                cfg.feature_scale = Some(3.0);
            }
            cmd_verify(&cfg)
        }
        Command::Plot { files, out } => cmd_plot(&files, &out),
    }
}

fn neg_log10(x: f64) -> f64 {
    -x.log10()
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let problem = Problem::from_config(cfg)?;
    let jobs: Vec<(usize, u64)> = cfg.k_list.iter().flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s))).collect();
    let pool = thread_pool(cfg.threads)?;
    let results = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, seed)| -> Result<_> {
                let grid = problem.grid(k)?;
                let reference = problem.reference(cfg.algorithm, &grid)?;
                let learner = learner_config(cfg, cfg.algorithm, cfg.alpha, seed, k as u64);
                Ok((k, seed, full_run(&problem, &grid, &reference, &learner, cfg.checkpoint_every)?))
            })
            .collect::<Vec<_>>()
    });
    let mut summary = String::from("algorithm,k,seed,alpha,steps,diverged,final_loss_l2_mu,final_neg_log10_loss\n");
    for r in results {
        let (k, seed, out) = r?;
        let mut body = String::from("t,loss_l2_mu,loss_w1_mu,theta_norm,diverged,neg_log10_loss\n");
        for row in &out.trace.rows {
            body.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.t,
                row.loss_l2_mu,
                row.loss_w1_mu,
                row.theta_norm,
                row.diverged as u8,
                neg_log10(row.scaled_loss)
            ));
        }
        let h = header(
            cfg,
            &[("trace_algorithm", cfg.algorithm.to_string()), ("trace_k", k.to_string()), ("trace_seed", seed.to_string())],
        );
        let name = format!("trace_{}_K{k}_seed{seed}.csv", cfg.algorithm);
        write_report(&cfg.out, &name, &h, &body)?;
        let last = out.trace.rows.last().context("empty trace")?;
        summary.push_str(&format!(
            "{},{k},{seed},{},{},{},{},{}\n",
            cfg.algorithm,
            cfg.alpha,
            out.steps,
            out.diverged as u8,
            last.loss_l2_mu,
            neg_log10(last.scaled_loss)
        ));
        println!(
            "{} K={k} seed={seed}: steps={} diverged={} -log10 loss={:.3}",
            cfg.algorithm,
            out.steps,
            out.diverged,
            neg_log10(last.scaled_loss)
        );
    }
    write_report(&cfg.out, "run_summary.csv", &header(cfg, &[]), &summary)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_alpha_search(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let problem = Problem::from_config(cfg)?;
    let results = thread_pool(cfg.threads)?.install(|| search_all(cfg, &problem, cfg.algorithm));
    let mut rows = format!("{RESULT_HEADER}\n");
    let mut probes = format!("{PROBE_HEADER}\n");
    let mut failed = false;
    for (r, k) in results.iter().zip(&cfg.k_list) {
        match r {
            Ok(r) => {
                rows.push_str(&result_row(r));
                rows.push('\n');
                probes.push_str(&probe_rows(r));
                println!("{} K={k}: α∞ ∈ [{:e}, {:e}]", cfg.algorithm, r.lower, r.upper);
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                failed = true;
            }
        }
    }
    let h = header(cfg, &[]);
    write_report(&cfg.out, "alpha_search.csv", &h, &rows)?;
    write_report(&cfg.out, "alpha_probes.csv", &h, &probes)?;
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn cmd_k_scaling(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let problem = Problem::from_config(cfg)?;
    let report = thread_pool(cfg.threads)?.install(|| k_scaling(cfg, &problem))?;
    let mut rows = format!("{RESULT_HEADER}\n");
    let mut probes = format!("{PROBE_HEADER}\n");
    for r in report.baseline.iter().chain(&report.ctd) {
        rows.push_str(&result_row(r));
        rows.push('\n');
        probes.push_str(&probe_rows(r));
    }
    let h = header(cfg, &[]);
    write_report(&cfg.out, "alpha_search.csv", &h, &rows)?;
    write_report(&cfg.out, "alpha_probes.csv", &h, &probes)?;
    let text = report.to_text();
    write_report(&cfg.out, "k_scaling_fit.txt", &h, &text)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let mut problem = Problem::from_config(cfg)?;
    if let Some(scale) = cfg.feature_scale {
        problem.features = scaled_features(&problem.features, scale);
    }
    let report = verify(&problem, &cfg.k_list);
    let text = report.to_text();
    write_report(&cfg.out, "verify.txt", &header(cfg, &[]), &text)?;
    print!("{text}");
    Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_plot(files: &[PathBuf], out: &std::path::Path) -> Result<ExitCode> {
    let series = files.iter().map(|p| load_trace(p)).collect::<Result<Vec<_>>>()?;
    let svg = render_svg(&series, "iteration t", "-log10 loss");
    let path = write_report(out, "loss.svg", "", &svg)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}
