//! Experiment sweeps over seeded channel realizations.
//!
//! An [`ExperimentSpec`] names a sweep axis, its values, the methods to
//! compare and how many seeded replicates to average. Each (value,
//! replicate) point draws one broadcast realization with seed
//! `base_seed + sweep_index + replicate`, maps it to the dual uplink and
//! runs every method on it. Points run in parallel; rows come back in
//! (value, replicate, method) order regardless of scheduling.
//!
//! Receive SNR is the reference user's total receive power over its total
//! noise power when the transmit power is spread evenly over subcarriers
//! and ports. Sweeps that fix the SNR rescale the transmit power per
//! realization to hit it.

mod output;

pub use output::{emit_all, emit_results, parse_csv, OutputFormat, SCHEMA_VERSION};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocator::{self, AllocationProblem, AllocationSolution, SolverOptions};
use crate::baselines::{self, NomaObjective, PowerBudget};
use crate::channel::{generate_channels, reference_tx_power_for_snr, ChannelSet, ScenarioConfig};
use crate::duality::dual_mac;
use crate::error::{Error, Result};
use crate::sic::RateAllocation;
use crate::timeshare::{self, TimeShareSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Proposed,
    McNoma,
    Noma,
    /// Shared band, linear receiver, crosstalk treated as noise.
    Oma,
    /// Disjoint subcarriers per user.
    OmaOrthogonal,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Proposed,
        Method::McNoma,
        Method::Noma,
        Method::Oma,
        Method::OmaOrthogonal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::McNoma => "mc_noma",
            Method::Noma => "noma",
            Method::Oma => "oma",
            Method::OmaOrthogonal => "oma_orthogonal",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Values are receive SNRs in dB.
    SnrSweep,
    /// Values are base-station port counts.
    NtSweep,
    /// Values are user counts.
    UserSweep,
    /// Values are subcarrier counts.
    SubcarrierSweep,
    /// Values are user distances in meters; energy mode against OMA rates.
    DistanceSweep,
    /// Values are receive SNRs; the proposed row time-shares the sum-rate
    /// vertices toward the OMA rates.
    TimeshareDemo,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::SnrSweep => "snr_sweep",
            ExperimentKind::NtSweep => "nt_sweep",
            ExperimentKind::UserSweep => "user_sweep",
            ExperimentKind::SubcarrierSweep => "subcarrier_sweep",
            ExperimentKind::DistanceSweep => "distance_sweep",
            ExperimentKind::TimeshareDemo => "timeshare_demo",
        }
    }

    fn integral(self) -> bool {
        matches!(
            self,
            ExperimentKind::NtSweep | ExperimentKind::UserSweep | ExperimentKind::SubcarrierSweep
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "defaults::tie_tol")]
    pub tie_tol: f64,
    #[serde(default = "defaults::gap_tol")]
    pub gap_tol: f64,
    #[serde(default = "defaults::max_iterations")]
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let d = SolverOptions::default();
        Tolerances {
            tie_tol: d.tie_tol,
            gap_tol: d.gap_tol,
            max_iterations: d.max_iterations,
        }
    }
}

impl Tolerances {
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tie_tol: self.tie_tol,
            gap_tol: self.gap_tol,
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Sorted ascending, at least one.
    pub values: Vec<f64>,
    #[serde(default = "defaults::methods")]
    pub methods: Vec<Method>,
    #[serde(default = "defaults::num_seeds")]
    pub num_seeds: usize,
    #[serde(default = "defaults::base_seed")]
    pub base_seed: u64,
    /// Receive SNR for sweeps whose axis is not the SNR.
    #[serde(default = "defaults::snr_db")]
    pub snr_db: f64,
    #[serde(default)]
    pub reference_user: usize,
    /// Place every user at the first user's position (user sweeps).
    #[serde(default = "defaults::colocated")]
    pub colocated: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub base: ScenarioConfig,
}

mod defaults {
    use super::Method;

    pub fn methods() -> Vec<Method> {
        vec![Method::Proposed, Method::McNoma, Method::Noma, Method::Oma]
    }
    pub fn num_seeds() -> usize {
        1
    }
    pub fn base_seed() -> u64 {
        1
    }
    pub fn snr_db() -> f64 {
        30.0
    }
    pub fn colocated() -> bool {
        true
    }
    pub fn tie_tol() -> f64 {
        super::SolverOptions::default().tie_tol
    }
    pub fn gap_tol() -> f64 {
        super::SolverOptions::default().gap_tol
    }
    pub fn max_iterations() -> usize {
        super::SolverOptions::default().max_iterations
    }
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, values: Vec<f64>, methods: Vec<Method>, num_seeds: usize) -> Self {
        ExperimentSpec {
            kind,
            values,
            methods,
            num_seeds,
            base_seed: defaults::base_seed(),
            snr_db: defaults::snr_db(),
            reference_user: 0,
            colocated: defaults::colocated(),
            tolerances: Tolerances::default(),
            base: ScenarioConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep values must be nonempty".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) || self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("sweep values must be finite and strictly increasing".into()));
        }
        if self.kind.integral() && self.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
            return Err(Error::Config(format!("{} values must be positive integers", self.kind.label())));
        }
        if self.kind == ExperimentKind::DistanceSweep && self.values.iter().any(|v| *v <= 0.0) {
            return Err(Error::Config("distances must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::Config("method list has duplicates".into()));
        }
        if self.num_seeds < 1 {
            return Err(Error::Config("num_seeds must be at least 1".into()));
        }
        if !(self.tolerances.tie_tol >= 0.0) || !(self.tolerances.gap_tol > 0.0) || self.tolerances.max_iterations == 0 {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        self.base.validate()?;
        let users = if self.kind == ExperimentKind::UserSweep {
            self.values.iter().fold(0.0f64, |a, &b| a.max(b)) as usize
        } else {
            self.base.num_users
        };
        if self.reference_user >= users.min(self.min_users()) {
            return Err(Error::Config(format!("reference_user {} out of range", self.reference_user)));
        }
        Ok(())
    }

    fn min_users(&self) -> usize {
        if self.kind == ExperimentKind::UserSweep {
            self.values[0] as usize
        } else {
            self.base.num_users
        }
    }

    pub fn seed_for(&self, sweep_index: usize, replicate: usize) -> u64 {
        self.base_seed + sweep_index as u64 + replicate as u64
    }

    /// The scenario realized at one sweep point.
    pub fn scenario_for(&self, sweep_index: usize, replicate: usize) -> Result<ScenarioConfig> {
        let value = self.values[sweep_index];
        let mut s = self.base.clone();
        s.seed = self.seed_for(sweep_index, replicate);
        match self.kind {
            ExperimentKind::SnrSweep | ExperimentKind::TimeshareDemo => {}
            ExperimentKind::NtSweep => s.bs_antennas = value as usize,
            ExperimentKind::UserSweep => {
                s = s.with_num_users(value as usize);
                if self.colocated {
                    let az = crate::channel::user_azimuths(&s)[0];
                    s.azimuths = Some(vec![az; s.num_users]);
                    s.distances = vec![s.distances[0]; s.num_users];
                }
            }
            ExperimentKind::SubcarrierSweep => s.num_subcarriers = value as usize,
            ExperimentKind::DistanceSweep => s.distances = vec![value; s.num_users],
        }
        s.validate()?;
        Ok(s)
    }

    fn snr_at(&self, sweep_index: usize) -> f64 {
        match self.kind {
            ExperimentKind::SnrSweep | ExperimentKind::TimeshareDemo => self.values[sweep_index],
            _ => self.snr_db,
        }
    }
}

/// Per-tone spectral efficiency of one time-sharing block, `se[u][n]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToneBlock {
    pub fraction: f64,
    pub order: String,
    pub se: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToneDump {
    pub sweep_index: usize,
    pub replicate: usize,
    pub blocks: Vec<ToneBlock>,
}

/// One (sweep value, replicate, method) outcome. Rates are bits/s/Hz over
/// the whole band; `status` is `"ok"` or the solver error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub kind: ExperimentKind,
    pub sweep_index: usize,
    pub sweep_value: f64,
    pub replicate: usize,
    pub seed: u64,
    pub method: Method,
    pub status: String,
    pub sum_se: f64,
    pub sum_mbps: f64,
    pub user_se: Vec<f64>,
    pub user_mbps: Vec<f64>,
    /// Total transmit power, watts.
    pub power_w: f64,
    pub power_dbm: f64,
    /// Transmit power of each user's signal, watts (uplink dual).
    pub user_power_w: Vec<f64>,
    /// Power over the OMA power at the same rates (distance sweeps).
    pub power_ratio: Option<f64>,
    pub order: String,
    /// `fraction:order` per time-sharing block, `;`-separated.
    pub blocks: String,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub spec: ExperimentSpec,
    pub rows: Vec<ResultRow>,
    pub tones: Vec<ToneDump>,
}

impl ResultTable {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }

    /// Mean of `f` over the ok rows of one method at one sweep point.
    pub fn mean(&self, method: Method, sweep_index: usize, f: impl Fn(&ResultRow) -> f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.sweep_index == sweep_index && r.is_ok())
            .map(f)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Run every point of the sweep. Solver failures become rows with an error
/// status; only an invalid spec fails the whole run.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let points: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|i| (0..spec.num_seeds).map(move |r| (i, r)))
        .collect();
    let results: Vec<(Vec<ResultRow>, Option<ToneDump>)> =
        points.par_iter().map(|&(i, r)| run_point(spec, i, r)).collect();
    let mut rows = Vec::new();
    let mut tones = Vec::new();
    for (r, t) in results {
        rows.extend(r);
        tones.extend(t);
    }
    Ok(ResultTable {
        spec: spec.clone(),
        rows,
        tones,
    })
}

struct Point<'a> {
    spec: &'a ExperimentSpec,
    sweep_index: usize,
    replicate: usize,
    seed: u64,
    bandwidth: f64,
    num_subcarriers: usize,
}

impl Point<'_> {
    fn row(&self, method: Method) -> ResultRow {
        ResultRow {
            kind: self.spec.kind,
            sweep_index: self.sweep_index,
            sweep_value: self.spec.values[self.sweep_index],
            replicate: self.replicate,
            seed: self.seed,
            method,
            status: "ok".into(),
            sum_se: f64::NAN,
            sum_mbps: f64::NAN,
            user_se: Vec::new(),
            user_mbps: Vec::new(),
            power_w: f64::NAN,
            power_dbm: f64::NAN,
            user_power_w: Vec::new(),
            power_ratio: None,
            order: String::new(),
            blocks: String::new(),
            kkt_residual: f64::NAN,
            iterations: 0,
        }
    }

    fn failed(&self, method: Method, err: &Error) -> ResultRow {
        let mut row = self.row(method);
        row.status = format!("error: {err}");
        row
    }

    fn fill_rates(&self, row: &mut ResultRow, rates: &RateAllocation) {
        let n = self.num_subcarriers as f64;
        row.user_se = rates.totals().iter().map(|r| r / n).collect();
        row.user_mbps = row.user_se.iter().map(|s| s * self.bandwidth / 1e6).collect();
        row.sum_se = row.user_se.iter().sum();
        row.sum_mbps = row.sum_se * self.bandwidth / 1e6;
    }

    fn fill_power(&self, row: &mut ResultRow, per_user: Vec<f64>) {
        row.power_w = per_user.iter().sum();
        row.power_dbm = watts_to_dbm(row.power_w);
        row.user_power_w = per_user;
    }

    fn from_solution(&self, method: Method, sol: &AllocationSolution) -> ResultRow {
        let mut row = self.row(method);
        self.fill_rates(&mut row, &sol.rates);
        let per_user = (0..sol.covariances.num_users()).map(|u| sol.covariances.user_trace(u)).collect();
        self.fill_power(&mut row, per_user);
        row.order = sol.order.to_string();
        row.blocks = blocks_label(&sol.schedule);
        row.kkt_residual = sol.kkt_residual;
        row.iterations = sol.iterations;
        row
    }

    fn from_oma(&self, method: Method, out: &baselines::OmaOutcome) -> ResultRow {
        let mut row = self.row(method);
        self.fill_rates(&mut row, &out.rates);
        let per_user = (0..out.covariances.num_users()).map(|u| out.covariances.user_trace(u)).collect();
        self.fill_power(&mut row, per_user);
        row.kkt_residual = 0.0;
        row
    }
}

fn blocks_label(schedule: &TimeShareSchedule) -> String {
    schedule
        .blocks
        .iter()
        .map(|b| format!("{}:{}", b.fraction, b.vertex.order))
        .collect::<Vec<_>>()
        .join(";")
}

fn run_point(spec: &ExperimentSpec, sweep_index: usize, replicate: usize) -> (Vec<ResultRow>, Option<ToneDump>) {
    let scenario = spec.scenario_for(sweep_index, replicate);
    let point = Point {
        spec,
        sweep_index,
        replicate,
        seed: spec.seed_for(sweep_index, replicate),
        bandwidth: scenario.as_ref().map_or(spec.base.bandwidth, |s| s.bandwidth),
        num_subcarriers: scenario.as_ref().map_or(spec.base.num_subcarriers, |s| s.num_subcarriers),
    };
    let channels = scenario.and_then(|s| {
        let bc = generate_channels(&s)?;
        let mac = dual_mac(&bc)?;
        Ok((s, bc, mac))
    });
    let (scenario, bc, mac) = match channels {
        Ok(c) => c,
        Err(e) => return (spec.methods.iter().map(|&m| point.failed(m, &e)).collect(), None),
    };
    match spec.kind {
        ExperimentKind::DistanceSweep => (energy_rows(&point, &scenario, &mac), None),
        _ => rate_rows(&point, &bc, &mac),
    }
}

fn rate_rows(point: &Point, bc: &ChannelSet, mac: &ChannelSet) -> (Vec<ResultRow>, Option<ToneDump>) {
    let spec = point.spec;
    let power = match reference_tx_power_for_snr(bc, spec.snr_at(point.sweep_index), spec.reference_user) {
        Ok(p) => p,
        Err(e) => return (spec.methods.iter().map(|&m| point.failed(m, &e)).collect(), None),
    };
    let opts = spec.tolerances.solver_options();
    let users = mac.num_users();
    let ones = vec![1.0; users];
    let demo = spec.kind == ExperimentKind::TimeshareDemo;
    let mut tones = None;
    let oma = if demo || spec.methods.contains(&Method::Oma) {
        Some(baselines::oma_linear_allocate(mac, &PowerBudget::Total(power)))
    } else {
        None
    };
    let rows = spec
        .methods
        .iter()
        .map(|&m| {
            let res: Result<ResultRow> = match m {
                Method::Proposed => allocator::maximize_sum_rate_with(mac, power, &ones, &opts).and_then(|sol| {
                    let mut row = point.from_solution(m, &sol);
                    if demo {
                        let target = match oma.as_ref().expect("computed for demos") {
                            Ok(o) => o.rates.totals(),
                            Err(e) => return Err(Error::Validation(format!("no OMA target: {e}"))),
                        };
                        let sched = demo_schedule(mac, &sol, &target)?;
                        point.fill_rates(&mut row, &timeshare::average_allocation(&sched));
                        row.blocks = blocks_label(&sched);
                        tones = Some(ToneDump {
                            sweep_index: point.sweep_index,
                            replicate: point.replicate,
                            blocks: sched
                                .blocks
                                .iter()
                                .map(|b| ToneBlock {
                                    fraction: b.fraction,
                                    order: b.vertex.order.to_string(),
                                    se: (0..users)
                                        .map(|u| b.vertex.allocation.user_rates(u).to_vec())
                                        .collect(),
                                })
                                .collect(),
                        });
                    }
                    Ok(row)
                }),
                Method::McNoma => baselines::mc_noma_allocate(mac, &NomaObjective::SumRate { power })
                    .map(|s| point.from_solution(m, &s)),
                Method::Noma => {
                    baselines::noma_allocate(mac, &NomaObjective::SumRate { power }).map(|s| point.from_solution(m, &s))
                }
                Method::Oma => match oma.as_ref().expect("computed when requested") {
                    Ok(o) => Ok(point.from_oma(m, o)),
                    Err(e) => return point.failed(m, e),
                },
                Method::OmaOrthogonal => {
                    baselines::oma_allocate(mac, &PowerBudget::Total(power)).map(|o| point.from_oma(m, &o))
                }
            };
            res.unwrap_or_else(|e| point.failed(m, &e))
        })
        .collect();
    (rows, tones)
}

/// Time-share the sum-capacity vertices of all users toward `target`.
fn demo_schedule(mac: &ChannelSet, sol: &AllocationSolution, target: &[f64]) -> Result<TimeShareSchedule> {
    let everyone = vec![(0..mac.num_users()).collect::<Vec<_>>()];
    let vertices = timeshare::enumerate_vertices(&everyone, mac, &sol.covariances)?;
    timeshare::nearest_hull_point(&vertices, target)
}

fn energy_rows(point: &Point, scenario: &ScenarioConfig, mac: &ChannelSet) -> Vec<ResultRow> {
    let spec = point.spec;
    let users = mac.num_users();
    let per_user = dbm_to_watts(scenario.transmit_power) / users as f64;
    let oma = match baselines::oma_linear_allocate(mac, &PowerBudget::PerUser(vec![per_user; users])) {
        Ok(o) => o,
        Err(e) => return spec.methods.iter().map(|&m| point.failed(m, &e)).collect(),
    };
    let floors = oma.rates.totals();
    let oma_power = oma.covariances.total_trace();
    let weights = vec![1.0; users];
    let opts = spec.tolerances.solver_options();
    let objective = NomaObjective::Energy {
        min_rates: floors.clone(),
        weights: weights.clone(),
    };
    spec.methods
        .iter()
        .map(|&m| {
            let res = match m {
                Method::Proposed => AllocationProblem::new(mac.clone(), weights.clone(), floors.clone())
                    .and_then(|p| allocator::minimize_energy_with(&p, &opts))
                    .map(|s| point.from_solution(m, &s)),
                Method::McNoma => baselines::mc_noma_allocate(mac, &objective).map(|s| point.from_solution(m, &s)),
                Method::Noma => baselines::noma_allocate(mac, &objective).map(|s| point.from_solution(m, &s)),
                Method::Oma => Ok(point.from_oma(m, &oma)),
                Method::OmaOrthogonal => {
                    baselines::oma_allocate(mac, &PowerBudget::PerUser(vec![per_user; users]))
                        .map(|o| point.from_oma(m, &o))
                }
            };
            match res {
                Ok(mut row) => {
                    row.power_ratio = Some(row.power_w / oma_power);
                    row
                }
                Err(e) => point.failed(m, &e),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind, values: Vec<f64>) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(kind, values, Method::ALL.to_vec(), 2);
        spec.base.num_subcarriers = 8;
        spec
    }

    #[test]
    fn spec_validation() {
        let mut s = small(ExperimentKind::SnrSweep, vec![10.0, 20.0]);
        assert!(s.validate().is_ok());
        s.methods.clear();
        assert!(s.validate().is_err());
        let s = small(ExperimentKind::SnrSweep, vec![20.0, 10.0]);
        assert!(s.validate().is_err());
        let s = small(ExperimentKind::NtSweep, vec![2.5]);
        assert!(s.validate().is_err());
        let mut s = small(ExperimentKind::SnrSweep, vec![10.0]);
        s.num_seeds = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_toml_round_trip() {
        let s = small(ExperimentKind::UserSweep, vec![2.0, 3.0]);
        let back = ExperimentSpec::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, back);
        let minimal = ExperimentSpec::from_toml_str("kind = \"snr_sweep\"\nvalues = [30.0]\n").unwrap();
        assert_eq!(minimal.methods, defaults::methods());
        assert_eq!(minimal.base, ScenarioConfig::default());
    }

    #[test]
    fn seeds_follow_index_sum() {
        let s = small(ExperimentKind::SnrSweep, vec![10.0, 20.0]);
        assert_eq!(s.seed_for(0, 0), 1);
        assert_eq!(s.seed_for(1, 1), 3);
    }

    #[test]
    fn colocated_users_share_position() {
        let s = small(ExperimentKind::UserSweep, vec![4.0]);
        let sc = s.scenario_for(0, 0).unwrap();
        let az = sc.azimuths.unwrap();
        assert_eq!(az.len(), 4);
        assert!(az.iter().all(|&a| a == az[0]));
        assert!(sc.distances.iter().all(|&d| d == sc.distances[0]));
    }

    #[test]
    fn snr_sweep_rows_are_canonical() {
        let s = small(ExperimentKind::SnrSweep, vec![10.0, 30.0]);
        let t = run_experiment(&s).unwrap();
        assert_eq!(t.rows.len(), 2 * 2 * Method::ALL.len());
        assert_eq!(t.failures(), 0, "{:?}", t.rows.iter().find(|r| !r.is_ok()));
        let keys: Vec<(usize, usize)> = t.rows.iter().map(|r| (r.sweep_index, r.replicate)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        for i in 0..2 {
            let p = t.mean(Method::Proposed, i, |r| r.sum_se).unwrap();
            for m in [Method::McNoma, Method::Noma, Method::Oma, Method::OmaOrthogonal] {
                assert!(t.mean(m, i, |r| r.sum_se).unwrap() <= p * (1.0 + 1e-6));
            }
        }
        for r in &t.rows {
            assert!((r.sum_mbps - r.sum_se * s.base.bandwidth / 1e6).abs() < 1e-9 * r.sum_mbps.max(1.0));
        }
    }

    #[test]
    fn distance_sweep_matches_oma_rates_with_less_power() {
        let s = small(ExperimentKind::DistanceSweep, vec![500.0, 1000.0]);
        let t = run_experiment(&s).unwrap();
        assert_eq!(t.failures(), 0, "{:?}", t.rows.iter().find(|r| !r.is_ok()));
        for r in t.rows.iter().filter(|r| r.method == Method::Proposed) {
            let oma = t
                .rows
                .iter()
                .find(|o| o.method == Method::Oma && o.sweep_index == r.sweep_index && o.replicate == r.replicate)
                .unwrap();
            for (a, b) in r.user_se.iter().zip(&oma.user_se) {
                assert!(a >= &(b - 1e-6 * b.max(1.0)));
            }
            assert!(r.power_ratio.unwrap() <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn timeshare_demo_dumps_blocks() {
        let mut s = small(ExperimentKind::TimeshareDemo, vec![30.0]);
        s.methods = vec![Method::Proposed, Method::Oma];
        s.num_seeds = 1;
        let t = run_experiment(&s).unwrap();
        assert_eq!(t.failures(), 0);
        let dump = &t.tones[0];
        let total: f64 = dump.blocks.iter().map(|b| b.fraction).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(dump.blocks[0].se.len(), 3);
        assert_eq!(dump.blocks[0].se[0].len(), 8);
    }
}
