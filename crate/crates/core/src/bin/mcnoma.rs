use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mcnoma::allocator::{self, SolverOptions};
use mcnoma::channel::{generate_channels, reference_tx_power_for_snr, save_channels, ScenarioConfig};
use mcnoma::duality::dual_mac;
use mcnoma::harness::{
    dbm_to_watts, emit_all, run_experiment, ExperimentKind, ExperimentSpec, Method, ResultTable, Tolerances,
};
use mcnoma::{Error, Result};

#[derive(Parser)]
#[command(name = "mcnoma", version, about = "Downlink power allocation, SIC ordering and time sharing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one broadcast channel realization and save it.
    GenerateChannels {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output file for the binary channel container.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one realization: energy mode with --min-rates, else sum rate.
    Solve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Per-user rate floors, bits/s/Hz over the band, comma separated.
        #[arg(long, value_delimiter = ',')]
        min_rates: Option<Vec<f64>>,
        /// Per-user weights, comma separated (default all 1).
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        /// Receive SNR fixing the sum-rate budget; default is the config's transmit power.
        #[arg(long)]
        snr_db: Option<f64>,
        #[command(flatten)]
        tol: TolArgs,
        /// Also write solution.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment spec and write result files.
    Sweep {
        /// Experiment spec (TOML).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the experiment's method list.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Override the replicate count.
        #[arg(long)]
        seeds: Option<usize>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Time-share the sum-rate vertices toward the OMA rates and dump per-tone blocks.
    Timeshare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 30.0)]
        snr_db: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Compare methods on one realization at one SNR.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 30.0)]
        snr_db: f64,
        #[arg(long, value_delimiter = ',', default_value = "proposed,mc_noma,noma,oma,oma_orthogonal")]
        methods: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tol: TolArgs,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario config (TOML); reference deployment when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::from_toml_str(&read(p)?)?,
            None => ScenarioConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TolArgs {
    #[arg(long)]
    tie_tol: Option<f64>,
    #[arg(long)]
    gap_tol: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
}

impl TolArgs {
    fn apply(&self, t: &mut Tolerances) {
        if let Some(v) = self.tie_tol {
            t.tie_tol = v;
        }
        if let Some(v) = self.gap_tol {
            t.gap_tol = v;
        }
        if let Some(v) = self.max_iterations {
            t.max_iterations = v;
        }
    }

    fn options(&self) -> SolverOptions {
        let mut t = Tolerances::default();
        self.apply(&mut t);
        t.solver_options()
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|s| Method::parse(s.trim())).collect()
}

enum Failure {
    Usage(Error),
    Solver(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Infeasible(_) | Error::NotConverged { .. } | Error::Numeric(_) | Error::OutsideHull { .. } => {
                Failure::Solver(e)
            }
            other => Failure::Usage(other),
        }
    }
}

fn finish_table(table: &ResultTable, out: &Path) -> std::result::Result<(), Failure> {
    for path in emit_all(table, out)? {
        println!("wrote {}", path.display());
    }
    let failures = table.failures();
    if failures > 0 {
        for r in table.rows.iter().filter(|r| !r.is_ok()) {
            eprintln!("{} seed {} value {}: {}", r.method.label(), r.seed, r.sweep_value, r.status);
        }
        return Err(Failure::Solver(Error::Validation(format!("{failures} rows failed"))));
    }
    Ok(())
}

fn single_point(
    kind: ExperimentKind,
    scenario: &ScenarioArgs,
    snr_db: f64,
    methods: Vec<Method>,
    tol: &TolArgs,
) -> Result<ResultTable> {
    let base = scenario.load()?;
    let mut spec = ExperimentSpec::new(kind, vec![snr_db], methods, 1);
    spec.base_seed = base.seed;
    spec.base = base;
    tol.apply(&mut spec.tolerances);
    run_experiment(&spec)
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::GenerateChannels { scenario, out } => {
            let cfg = scenario.load()?;
            save_channels(&generate_channels(&cfg)?, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Solve {
            scenario,
            min_rates,
            weights,
            snr_db,
            tol,
            out,
        } => {
            let cfg = scenario.load()?;
            let bc = generate_channels(&cfg)?;
            let users = bc.num_users();
            let n = bc.num_subcarriers() as f64;
            let weights = weights.unwrap_or_else(|| vec![1.0; users]);
            let opts = tol.options();
            let report = match min_rates {
                Some(se) => {
                    let floors: Vec<f64> = se.iter().map(|s| s * n).collect();
                    let d = allocator::solve_bc_design_with(&bc, &weights, &floors, &opts)?;
                    json!({
                        "mode": "energy",
                        "power_w": d.power,
                        "user_se_bps_hz": d.rates.totals().iter().map(|r| r / n).collect::<Vec<_>>(),
                        "duals": d.mac.duals,
                        "kkt_residual": d.mac.kkt_residual,
                        "decoding_order": d.mac.order.to_string(),
                        "blocks": d.blocks.iter().map(|b| json!({
                            "fraction": b.fraction,
                            "encoding_order": b.encoding.to_string(),
                            "user_se_bps_hz": b.rates.totals().iter().map(|r| r / n).collect::<Vec<_>>(),
                        })).collect::<Vec<_>>(),
                    })
                }
                None => {
                    let power = match snr_db {
                        Some(s) => reference_tx_power_for_snr(&bc, s, 0)?,
                        None => dbm_to_watts(cfg.transmit_power),
                    };
                    let mac = dual_mac(&bc)?;
                    let sol = allocator::maximize_sum_rate_with(&mac, power, &weights, &opts)?;
                    json!({
                        "mode": "sum_rate",
                        "power_w": power,
                        "sum_se_bps_hz": sol.rates.sum() / n,
                        "user_se_bps_hz": sol.rates.totals().iter().map(|r| r / n).collect::<Vec<_>>(),
                        "power_dual": sol.power_dual,
                        "kkt_residual": sol.kkt_residual,
                        "decoding_order": sol.order.to_string(),
                    })
                }
            };
            let text = serde_json::to_string_pretty(&report).expect("json values serialize");
            println!("{text}");
            if let Some(dir) = out {
                write(&dir.join("solution.json"), &text)?;
            }
        }
        Command::Sweep {
            spec,
            out,
            methods,
            seeds,
            seed,
            tol,
        } => {
            let mut spec = ExperimentSpec::from_toml_str(&read(&spec)?)?;
            if let Some(m) = methods {
                spec.methods = parse_methods(&m)?;
            }
            if let Some(s) = seeds {
                spec.num_seeds = s;
            }
            if let Some(s) = seed {
                spec.base_seed = s;
            }
            tol.apply(&mut spec.tolerances);
            let table = run_experiment(&spec)?;
            finish_table(&table, &out)?;
        }
        Command::Timeshare {
            scenario,
            snr_db,
            out,
            tol,
        } => {
            let table = single_point(
                ExperimentKind::TimeshareDemo,
                &scenario,
                snr_db,
                vec![Method::Proposed, Method::Oma],
                &tol,
            )?;
            if let Some(dump) = table.tones.first() {
                for b in &dump.blocks {
                    println!("block {:.4} of the symbol, order {}", b.fraction, b.order);
                }
            }
            finish_table(&table, &out)?;
        }
        Command::Compare {
            scenario,
            snr_db,
            methods,
            out,
            tol,
        } => {
            let methods = parse_methods(&methods)?;
            let table = single_point(ExperimentKind::SnrSweep, &scenario, snr_db, methods, &tol)?;
            println!("{:<16} {:>14} {:>12} {:>10}", "method", "sum bits/s/Hz", "sum Mbps", "power dBm");
            for r in &table.rows {
                if r.is_ok() {
                    println!("{:<16} {:>14.4} {:>12.2} {:>10.2}", r.method.label(), r.sum_se, r.sum_mbps, r.power_dbm);
                } else {
                    println!("{:<16} {}", r.method.label(), r.status);
                }
            }
            match out {
                Some(dir) => finish_table(&table, &dir)?,
                None if table.failures() > 0 => {
                    return Err(Failure::Solver(Error::Validation("some methods failed".into())))
                }
                None => {}
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("solver failure: {e}");
            ExitCode::from(2)
        }
    }
}
