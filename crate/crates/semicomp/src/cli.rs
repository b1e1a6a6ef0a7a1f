//! Command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use semicomp_core::causal::quantile_grid;
use semicomp_core::copula::Family;
use semicomp_core::datagen::{simulate_with_oracle, Scenario, SimSpec};
use semicomp_core::mcem::FrailtySpec;
use semicomp_core::npmle::FitOptions;
use semicomp_core::Dataset;

use crate::bootstrap::{bootstrap, BootstrapConfig, CiMethod};
use crate::error::{Error, Result};
use crate::fitfile::{read_fit, write_fit, write_mcem_report};
use crate::pipeline::{available_width, effect_curve, fit_model, DEFAULT_N_GAMMA};
use crate::study::{run_study, write_replicates, write_summary, StudyConfig, DEFAULT_N_MC};
use crate::table::{read_dataset, write_dataset, write_potential_outcomes, write_rows, write_sce, Schema};

#[derive(Debug, Parser)]
#[command(name = "semicomp", version, about = "Copula semi-competing risks models and survivor causal effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset from one of the built-in designs.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.3)]
        tau: f64,
        /// Upper bound of the uniform censoring time (design default if absent).
        #[arg(long)]
        cu: Option<f64>,
        /// Frailty variance (Ex4 only; design default if absent).
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write both-world event times.
        #[arg(long)]
        oracle: Option<PathBuf>,
    },
    /// Fit the copula model; sigma > 0 adds a shared gamma frailty.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "frank")]
        copula: String,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Survivor causal effects of a fitted model.
    Sce {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `autoK` for K event-time quantiles, or comma-separated times.
        #[arg(long, default_value = "auto30")]
        grid: String,
        #[arg(long, default_value_t = DEFAULT_N_GAMMA)]
        n_gamma: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Effects across a list of assumed frailty variances.
    Sensitivity {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5")]
        sigmas: Vec<f64>,
        #[arg(long, default_value = "frank")]
        copula: String,
        #[arg(long, default_value = "auto30")]
        grid: String,
        #[arg(long, default_value_t = DEFAULT_N_GAMMA)]
        n_gamma: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Bootstrap bands for the effects and standard errors for the parameters.
    Bootstrap {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "B", default_value_t = 100)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "percentile")]
        ci: String,
        /// Worker threads (defaults to the available cores).
        #[arg(long)]
        width: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value = "frank")]
        copula: String,
        #[arg(long, default_value = "auto30")]
        grid: String,
        #[arg(long, default_value_t = DEFAULT_N_GAMMA)]
        n_gamma: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo study of one design.
    Study {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0.3)]
        tau: f64,
        #[arg(long)]
        cu: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Bootstrap replicates per study replicate (0 skips ASE and coverage).
        #[arg(long = "B", default_value_t = 0)]
        replicates: usize,
        #[arg(long, default_value = "percentile")]
        ci: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated times.
        #[arg(long, default_value = "3,6")]
        grid: String,
        #[arg(long, default_value_t = DEFAULT_N_MC)]
        n_mc: usize,
        #[arg(long)]
        width: Option<usize>,
        /// Summary CSV; per-replicate rows go next to it as `<stem>.replicates.csv`.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses argv and runs; returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}

fn family(name: &str) -> Result<Family> {
    Family::from_name(name).ok_or_else(|| Error::Config(format!("unknown copula {name:?} (frank or clayton)")))
}

fn fit_options(copula: &str) -> Result<FitOptions> {
    Ok(FitOptions { family: family(copula)?, ..FitOptions::default() })
}

fn frailty(sigma: f64) -> Result<Option<FrailtySpec>> {
    Ok(if sigma > 0.0 { Some(FrailtySpec::new(sigma)?) } else { FrailtySpec::new(sigma).map(|_| None)? })
}

fn sim_spec(scenario: &str, n: usize, tau: f64, cu: Option<f64>, sigma: Option<f64>, seed: u64) -> Result<SimSpec> {
    let sc = Scenario::from_name(scenario)
        .ok_or_else(|| Error::Config(format!("unknown scenario {scenario:?} (Ex1, Ex2, Ex3 or Ex4)")))?;
    let mut spec = SimSpec::new(sc, n, tau, seed);
    if let Some(c) = cu {
        spec = spec.with_censor_bound(c);
    }
    if let Some(s) = sigma {
        spec = spec.with_sigma(s);
    }
    spec.validate()?;
    Ok(spec)
}

/// `auto` or `autoK` (event-time quantiles of `data`), or a list of times.
pub fn parse_grid(spec: &str, data: &Dataset) -> Result<Vec<f64>> {
    let s = spec.trim();
    if let Some(k) = s.strip_prefix("auto") {
        let points = if k.is_empty() {
            semicomp_core::causal::DEFAULT_GRID_POINTS
        } else {
            k.parse().map_err(|_| Error::Config(format!("bad grid {spec:?}")))?
        };
        return Ok(quantile_grid(data, points)?);
    }
    parse_times(s)
}

fn parse_times(s: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad grid time {t:?}"))))
        .collect::<Result<_>>()?;
    if grid.is_empty() || grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("grid {s:?} must be increasing nonnegative times")));
    }
    Ok(grid)
}

fn load(path: &Path) -> Result<Dataset> {
    let (data, rep) = read_dataset(path, &Schema::default())?;
    log::info!(
        "{}: {} rows ({} control, {} treated), censoring d1 {:.3}, d2 {:.3}",
        path.display(),
        rep.rows,
        rep.arm_sizes[0],
        rep.arm_sizes[1],
        rep.censoring.0,
        rep.censoring.1
    );
    Ok(data)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `fit.json` becomes `fit.mcem.json`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn fit_and_write(
    data: &Dataset,
    opts: &FitOptions,
    sigma: f64,
    seed: u64,
    out: &Path,
) -> Result<semicomp_core::ModelFit> {
    let fr = frailty(sigma)?;
    let (fit, diag) = fit_model(data, opts, fr.as_ref(), seed)?;
    if !fit.converged() {
        log::warn!("fit did not meet its convergence criterion");
    }
    write_fit(out, &fit)?;
    if let (Some(spec), Some(diag)) = (fr, diag) {
        let spec = spec.with_seed(semicomp_core::numeric::derive_seed(seed, 0));
        write_mcem_report(&sidecar(out, "mcem.json"), &spec, &diag)?;
    }
    Ok(fit)
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { scenario, n, tau, cu, sigma, seed, out, oracle } => {
            let spec = sim_spec(&scenario, n, tau, cu, sigma, seed)?;
            let (data, pos) = simulate_with_oracle(&spec)?;
            write_dataset(&out, &data)?;
            if let Some(p) = oracle {
                write_potential_outcomes(&p, &pos, data.covariate_names())?;
            }
            let (c1, c2) = data.censoring_rates();
            log::info!("wrote {} rows, censoring d1 {c1:.3}, d2 {c2:.3}", data.len());
        }
        Command::Fit { data, copula, sigma, seed, out } => {
            let d = load(&data)?;
            fit_and_write(&d, &fit_options(&copula)?, sigma, seed, &out)?;
        }
        Command::Sce { fit, data, grid, n_gamma, seed, out } => {
            let f = read_fit(&fit)?;
            let d = load(&data)?;
            if d.covariate_names() != f.covariate_names.as_slice() {
                return Err(Error::Schema {
                    path: data,
                    msg: format!("covariates {:?} differ from the fit's {:?}", d.covariate_names(), f.covariate_names),
                });
            }
            let g = parse_grid(&grid, &d)?;
            write_sce(&out, &effect_curve(&f, &d, &g, n_gamma, seed)?)?;
        }
        Command::Sensitivity { data, sigmas, copula, grid, n_gamma, seed, out } => {
            let d = load(&data)?;
            let g = parse_grid(&grid, &d)?;
            let opts = fit_options(&copula)?;
            create_dir(&out)?;
            for s in sigmas {
                let f = fit_and_write(&d, &opts, s, seed, &out.join(format!("fit_sigma_{s}.json")))?;
                write_sce(&out.join(format!("sce_sigma_{s}.csv")), &effect_curve(&f, &d, &g, n_gamma, seed)?)?;
            }
        }
        Command::Bootstrap { data, replicates, seed, ci, width, sigma, copula, grid, n_gamma, out } => {
            let d = load(&data)?;
            let g = parse_grid(&grid, &d)?;
            let cfg = BootstrapConfig {
                replicates,
                seed,
                ci_method: ci.parse::<CiMethod>()?,
                parallel_width: width.unwrap_or_else(available_width),
                fit: fit_options(&copula)?,
                n_gamma,
            };
            let fr = frailty(sigma)?;
            let r = bootstrap(&d, &g, &cfg, fr.as_ref())?;
            create_dir(&out)?;
            write_fit(&out.join("fit.json"), &r.fit)?;
            write_sce(&out.join("sce.csv"), &r.curve)?;
            let rows: Vec<Vec<String>> = r
                .parameters
                .iter()
                .map(|p| {
                    vec![p.name.clone(), p.estimate.to_string(), p.se.to_string(), p.lo.to_string(), p.hi.to_string()]
                })
                .collect();
            write_rows(&out.join("parameters.csv"), &["parameter", "estimate", "se", "lo", "hi"], &rows)?;
            log::info!("bootstrap: {} of {} resamples succeeded", r.succeeded, replicates);
        }
        Command::Study { scenario, reps, n, tau, cu, sigma, replicates, ci, seed, grid, n_mc, width, out } => {
            let spec = sim_spec(&scenario, n, tau, cu, sigma, seed)?;
            let mut cfg = StudyConfig::new(spec, reps, parse_times(&grid)?);
            cfg.n_mc = n_mc;
            cfg.parallel_width = width.unwrap_or_else(available_width);
            if replicates > 0 {
                cfg.bootstrap =
                    Some(BootstrapConfig { replicates, ci_method: ci.parse()?, ..BootstrapConfig::default() });
            }
            let res = run_study(&cfg)?;
            write_summary(&out, &res.summary)?;
            write_replicates(&sidecar(&out, "replicates.csv"), &res)?;
            log::info!("study: {} of {reps} replicates succeeded", res.summary.succeeded);
        }
    }
    Ok(())
}
