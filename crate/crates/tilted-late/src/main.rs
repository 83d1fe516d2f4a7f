//! Command-line front end: estimation, curves, profiling, sensitivity, and
//! simulation studies with reproducible, self-describing outputs.
//!
//! Every run writes `<output>.json` (results plus the resolved config and
//! its hash), `<output>.csv` (plot-ready table), and `<output>.meta.json`
//! (timestamps and version, segregated so the data files stay byte-stable
//! across reruns). Errors go to stderr as one JSON object; exit codes are
//! 0 on success, 1 for validation problems, 2 for estimation failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tilted_late::data::{make_folds, CsvSchema, Dataset};
use tilted_late::error::{Error, Result};
use tilted_late::estimators::{
    estimate_curve, estimate_if, estimate_plugin, estimate_two_tilt, test_homogeneity,
};
use tilted_late::nuisance::{fit_nuisances, LearnerKind, LearnerSpec};
use tilted_late::profiling::{
    defier_bounds, marginal_strata, profile_stratum, ProfileKernel, ProfileKind, StrataQuery,
    Stratum,
};
use tilted_late::sensitivity::{default_gamma1, default_gamma2, sensitivity_surface};
use tilted_late::simulation::{run_study1, run_study2};
use tilted_late::{exec, EPSILON_ZERO};

#[derive(Parser)]
#[command(name = "tilted-late", version, about = "Tilted local effects of continuous instruments")]
struct Cli {
    /// Worker threads for parallel sections (default: TILTED_LATE_WORKERS
    /// env var, else all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct IoArgs {
    /// Input CSV with one header row.
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated covariate column names.
    #[arg(long, default_value = "x1,x2,x3,x4", value_delimiter = ',')]
    x: Vec<String>,
    /// Instrument column name.
    #[arg(long, default_value = "z")]
    z: String,
    /// Treatment column name (binary).
    #[arg(long, default_value = "a")]
    a: String,
    /// Outcome column name.
    #[arg(long, default_value = "y")]
    y: String,
}

#[derive(Args, Clone)]
struct LearnerArgs {
    #[arg(long, value_enum, default_value_t = LearnerChoice::Forest)]
    learner: LearnerChoice,
    /// Ridge penalty for the linear learner.
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Kernel learner bandwidth (default: Silverman's rule).
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 20)]
    min_leaf: usize,
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
    #[arg(long, default_value_t = 1.0)]
    feature_fraction: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LearnerChoice {
    Linear,
    Kernel,
    Forest,
}

impl LearnerArgs {
    fn spec(&self, seed: u64) -> LearnerSpec {
        let kind = match self.learner {
            LearnerChoice::Linear => LearnerKind::Linear { ridge: self.ridge },
            LearnerChoice::Kernel => LearnerKind::Kernel { bandwidth: self.bandwidth },
            LearnerChoice::Forest => LearnerKind::Forest {
                trees: self.trees,
                min_leaf: self.min_leaf,
                max_depth: self.max_depth,
                feature_fraction: self.feature_fraction,
            },
        };
        LearnerSpec { kind, seed }
    }

    fn describe(&self) -> serde_json::Value {
        match self.learner {
            LearnerChoice::Linear => json!({"learner": "linear", "ridge": self.ridge}),
            LearnerChoice::Kernel => json!({"learner": "kernel", "bandwidth": self.bandwidth}),
            LearnerChoice::Forest => json!({
                "learner": "forest",
                "trees": self.trees,
                "min_leaf": self.min_leaf,
                "max_depth": self.max_depth,
                "feature_fraction": self.feature_fraction,
            }),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Point estimate at one tilt (optionally a two-tilt contrast).
    Estimate {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        learner: LearnerArgs,
        #[arg(long)]
        delta: f64,
        /// Second tilt of a contrast psi(delta, delta2); must be below delta.
        #[arg(long)]
        delta2: Option<f64>,
        /// Also report the plug-in estimate alongside the IF one.
        #[arg(long, default_value_t = false)]
        with_plugin: bool,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "estimate")]
        output: PathBuf,
    },
    /// Estimate over a tilt grid with a uniform confidence band.
    Curve {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        learner: LearnerArgs,
        /// Grid as lo:hi:count (inclusive, equispaced).
        #[arg(long, allow_hyphen_values = true)]
        deltas: String,
        /// Drop grid points with |delta| below this width.
        #[arg(long, default_value_t = 0.05)]
        exclude_zero: f64,
        #[arg(long, default_value_t = 1000)]
        bootstrap_reps: usize,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "curve")]
        output: PathBuf,
    },
    /// Principal-strata covariate profiles at one tilt.
    Profile {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        learner: LearnerArgs,
        #[arg(long)]
        delta: f64,
        /// Covariate column to profile.
        #[arg(long)]
        column: String,
        /// Comma-separated query values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value_t = KindChoice::Discrete)]
        kind: KindChoice,
        /// Bandwidth for continuous profiles.
        #[arg(long)]
        profile_bandwidth: Option<f64>,
        #[arg(long, value_enum, default_value_t = KernelChoice::Gaussian)]
        kernel: KernelChoice,
        /// Treated shares c1, c2 for defier bounds (optional, as "c1,c2").
        #[arg(long, value_delimiter = ',', num_args = 2)]
        defier_shares: Option<Vec<f64>>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "profile")]
        output: PathBuf,
    },
    /// Monotonicity sensitivity surface at one tilt.
    Sensitivity {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        learner: LearnerArgs,
        #[arg(long)]
        delta: f64,
        /// Defier-proportion grid as lo:hi:count (default 0:0.2:41).
        #[arg(long, allow_hyphen_values = true)]
        gamma1: Option<String>,
        /// Discrepancy grid as lo:hi:count (default spans +-2|psi|).
        #[arg(long, allow_hyphen_values = true)]
        gamma2: Option<String>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sensitivity")]
        output: PathBuf,
    },
    /// Monte Carlo study on the built-in data-generating process.
    Simulate {
        #[command(flatten)]
        learner: LearnerArgs,
        /// 1 = bias/RMSE over sample sizes, 2 = CI coverage.
        #[arg(long, default_value_t = 1)]
        study: u8,
        /// Sample sizes for study 1.
        #[arg(long, default_value = "500,1000,5000", value_delimiter = ',')]
        ns: Vec<usize>,
        /// Sample size for study 2.
        #[arg(long, default_value_t = 5000)]
        n: usize,
        /// Grid as lo:hi:count.
        #[arg(long, default_value = "-0.85:0.85:12", allow_hyphen_values = true)]
        deltas: String,
        #[arg(long, default_value_t = 0.05)]
        exclude_zero: f64,
        /// Replications per cell.
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "study")]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindChoice {
    Discrete,
    Continuous,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelChoice {
    Gaussian,
    Epanechnikov,
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidInput(format!("grid `{spec}` is not lo:hi:count")));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad grid bound `{}`", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad grid bound `{}`", parts[1])))?;
    let count: usize = parts[2]
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad grid count `{}`", parts[2])))?;
    if count == 0 || hi < lo {
        return Err(Error::InvalidInput(format!("empty grid `{spec}`")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (count - 1) as f64;
    Ok((0..count).map(|i| lo + i as f64 * step).collect())
}

fn exclude_zero(grid: Vec<f64>, width: f64) -> Result<Vec<f64>> {
    let kept: Vec<f64> = grid
        .into_iter()
        .filter(|d| d.abs() >= width.max(EPSILON_ZERO))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyGrid);
    }
    Ok(kept)
}

/// FNV-1a over the resolved config text; embedded in every output so runs
/// can be matched to their exact configuration.
fn config_hash(config: &serde_json::Value) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in config.to_string().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

fn load(io: &IoArgs) -> Result<Dataset> {
    let schema = CsvSchema {
        x: io.x.clone(),
        z: io.z.clone(),
        a: io.a.clone(),
        y: io.y.clone(),
    };
    Dataset::load_csv(&io.input, &schema)
}

fn write_outputs(
    output: &Path,
    config: serde_json::Value,
    results: serde_json::Value,
    csv: String,
) -> Result<()> {
    let hash = config_hash(&config);
    let doc = json!({
        "config": config,
        "config_hash": hash,
        "results": results,
    });
    let base = output.to_string_lossy();
    std::fs::write(format!("{base}.json"), format!("{:#}\n", doc))?;
    std::fs::write(format!("{base}.csv"), csv)?;
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = json!({
        "config_hash": hash,
        "artifact_version": env!("CARGO_PKG_VERSION"),
        "written_unix_seconds": now,
    });
    std::fs::write(format!("{base}.meta.json"), format!("{:#}\n", meta))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers.or_else(|| {
        std::env::var("TILTED_LATE_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::InvalidInput("workers must be >= 1".into()));
        }
        exec::configure_workers(w);
    }
    match cli.command {
        Command::Estimate {
            io,
            learner,
            delta,
            delta2,
            with_plugin,
            folds,
            seed,
            output,
        } => {
            let data = load(&io)?;
            let spec = learner.spec(seed);
            let config = json!({
                "command": "estimate",
                "input": io.input.to_string_lossy(),
                "delta": delta,
                "delta2": delta2,
                "with_plugin": with_plugin,
                "learner": learner.describe(),
                "folds": folds,
                "seed": seed,
            });
            let (results, csv) = if let Some(d2) = delta2 {
                let est = estimate_two_tilt(&data, delta, d2, &spec, folds, seed)?;
                let csv = format!(
                    "delta,delta2,psi_hat,se,ci_lo,ci_hi\n{},{},{},{},{},{}\n",
                    delta, d2, est.psi_hat, est.std_error, est.ci_lo, est.ci_hi
                );
                (json!({"two_tilt": est.to_json()}), csv)
            } else {
                let fold_assignment = make_folds(data.n(), folds, seed)?;
                let fit = fit_nuisances(&data, delta, &spec, &fold_assignment)?;
                let est = estimate_if(&data, &fit)?;
                let mut csv = String::from("method,delta,psi_hat,se,ci_lo,ci_hi\n");
                csv.push_str(&format!(
                    "influence_function,{},{},{},{},{}\n",
                    delta, est.psi_hat, est.std_error, est.ci_lo, est.ci_hi
                ));
                let mut results = json!({"influence_function": est.to_json()});
                if with_plugin {
                    let plug = estimate_plugin(&data, &fit)?;
                    csv.push_str(&format!(
                        "plugin,{},{},{},{},{}\n",
                        delta, plug.psi_hat, plug.std_error, plug.ci_lo, plug.ci_hi
                    ));
                    results["plugin"] = plug.to_json();
                }
                (results, csv)
            };
            write_outputs(&output, config, results, csv)
        }
        Command::Curve {
            io,
            learner,
            deltas,
            exclude_zero: width,
            bootstrap_reps,
            folds,
            seed,
            output,
        } => {
            let data = load(&io)?;
            let grid = exclude_zero(parse_grid(&deltas)?, width)?;
            let spec = learner.spec(seed);
            let config = json!({
                "command": "curve",
                "input": io.input.to_string_lossy(),
                "deltas": deltas,
                "exclude_zero": width,
                "resolved_grid": grid,
                "bootstrap_reps": bootstrap_reps,
                "learner": learner.describe(),
                "folds": folds,
                "seed": seed,
            });
            let curve = estimate_curve(&data, &grid, &spec, folds, seed, bootstrap_reps)?;
            if curve.estimates.iter().all(|e| e.is_none()) {
                return Err(Error::WeakInstrument { denominator: 0.0 });
            }
            let homogeneity = test_homogeneity(&curve)?;
            let mut csv =
                String::from("delta,psi_hat,se,ci_lo,ci_hi,uniform_lo,uniform_hi,flags\n");
            for (i, &d) in curve.grid.iter().enumerate() {
                match &curve.estimates[i] {
                    Some(est) => csv.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        d,
                        est.psi_hat,
                        est.std_error,
                        est.ci_lo,
                        est.ci_hi,
                        curve.uniform_lo[i],
                        curve.uniform_hi[i],
                        curve.flags[i].join(";")
                    )),
                    None => csv.push_str(&format!(
                        "{},,,,,,,{}\n",
                        d,
                        curve.flags[i].join(";")
                    )),
                }
            }
            let results = json!({
                "curve": curve.to_json(),
                "homogeneity": homogeneity,
            });
            write_outputs(&output, config, results, csv)
        }
        Command::Profile {
            io,
            learner,
            delta,
            column,
            values,
            kind,
            profile_bandwidth,
            kernel,
            defier_shares,
            folds,
            seed,
            output,
        } => {
            let data = load(&io)?;
            let col = data
                .covariate_index(&column)
                .ok_or_else(|| Error::MissingColumn(column.clone()))?;
            if values.is_empty() {
                return Err(Error::InvalidInput("profile needs at least one value".into()));
            }
            let spec = learner.spec(seed);
            let config = json!({
                "command": "profile",
                "input": io.input.to_string_lossy(),
                "delta": delta,
                "column": column,
                "values": values,
                "kind": if kind == KindChoice::Discrete { "discrete" } else { "continuous" },
                "profile_bandwidth": profile_bandwidth,
                "learner": learner.describe(),
                "folds": folds,
                "seed": seed,
            });
            let fold_assignment = make_folds(data.n(), folds, seed)?;
            let fit = fit_nuisances(&data, delta, &spec, &fold_assignment)?;
            let marginal = marginal_strata(&data, &fit);
            let mut csv = String::from("stratum,value,estimate,se,ci_lo,ci_hi\n");
            let mut rows = Vec::new();
            for &v in &values {
                for stratum in [Stratum::Complier, Stratum::Always, Stratum::Never] {
                    let query = StrataQuery {
                        column: col,
                        value: v,
                        kind: if kind == KindChoice::Discrete {
                            ProfileKind::Discrete
                        } else {
                            ProfileKind::Continuous
                        },
                        bandwidth: profile_bandwidth.unwrap_or(0.0),
                        kernel: if kernel == KernelChoice::Gaussian {
                            ProfileKernel::Gaussian
                        } else {
                            ProfileKernel::Epanechnikov
                        },
                        delta,
                    };
                    let est = profile_stratum(&data, &fit, &query, stratum, &spec)?;
                    csv.push_str(&format!(
                        "{:?},{},{},{},{},{}\n",
                        stratum, v, est.estimate, est.std_error, est.ci_lo, est.ci_hi
                    ));
                    rows.push(serde_json::to_value(&est).unwrap());
                }
            }
            let mut results = json!({
                "profiles": rows,
                "marginal": marginal,
            });
            if let Some(shares) = defier_shares {
                results["defier_bounds"] =
                    serde_json::to_value(defier_bounds(shares[0], shares[1])?).unwrap();
            }
            write_outputs(&output, config, results, csv)
        }
        Command::Sensitivity {
            io,
            learner,
            delta,
            gamma1,
            gamma2,
            folds,
            seed,
            output,
        } => {
            let data = load(&io)?;
            let spec = learner.spec(seed);
            let config = json!({
                "command": "sensitivity",
                "input": io.input.to_string_lossy(),
                "delta": delta,
                "gamma1": gamma1,
                "gamma2": gamma2,
                "learner": learner.describe(),
                "folds": folds,
                "seed": seed,
            });
            let fold_assignment = make_folds(data.n(), folds, seed)?;
            let fit = fit_nuisances(&data, delta, &spec, &fold_assignment)?;
            let psi = estimate_if(&data, &fit)?;
            let g1 = match &gamma1 {
                Some(s) => parse_grid(s)?,
                None => default_gamma1(),
            };
            let g2 = match &gamma2 {
                Some(s) => parse_grid(s)?,
                None => default_gamma2(psi.psi_hat),
            };
            let surface = sensitivity_surface(&data, &fit, &psi, &g1, &g2)?;
            let mut csv = String::from("gamma1,gamma2,xi\n");
            for (i, &a) in surface.gamma1_values.iter().enumerate() {
                for (j, &b) in surface.gamma2_values.iter().enumerate() {
                    csv.push_str(&format!("{},{},{}\n", a, b, surface.xi[i][j]));
                }
            }
            let results = json!({
                "psi": psi.to_json(),
                "surface": surface.to_json(),
            });
            write_outputs(&output, config, results, csv)
        }
        Command::Simulate {
            learner,
            study,
            ns,
            n,
            deltas,
            exclude_zero: width,
            reps,
            folds,
            seed,
            output,
        } => {
            let grid = exclude_zero(parse_grid(&deltas)?, width)?;
            let spec = learner.spec(seed);
            let config = json!({
                "command": "simulate",
                "study": study,
                "ns": ns,
                "n": n,
                "deltas": deltas,
                "exclude_zero": width,
                "resolved_grid": grid,
                "reps": reps,
                "learner": learner.describe(),
                "folds": folds,
                "seed": seed,
            });
            let result = match study {
                1 => run_study1(&ns, &grid, reps, &spec, seed, folds)?,
                2 => run_study2(n, &grid, reps, &spec, seed, folds)?,
                other => {
                    return Err(Error::InvalidInput(format!("unknown study {other}")))
                }
            };
            write_outputs(&output, config, result.aggregates_json(), result.raw_csv())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = json!({
                "code": e.code(),
                "message": e.to_string(),
                "context": {"exit_code": e.exit_code()},
            });
            eprintln!("{err}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
