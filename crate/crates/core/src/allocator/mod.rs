//! Weighted energy-sum minimization on the dual uplink, optimal decoding
//! order from the rate-floor duals, and a weighted sum-rate mode.
//!
//! The energy problem is
//!
//! ```text
//! minimize   Σ_u w_u Σ_n tr R_{u,n}
//! subject to Σ_{u∈T} b_min,u ≤ Σ_n log2 |I + Σ_{u∈T} H_{u,n} R_{u,n} H_{u,n}^*|   for every T
//!            R_{u,n} ⪰ 0
//! ```
//!
//! i.e. the rate floors must lie in the capacity region of the chosen
//! covariances. The floor dual of user `u` is `θ_u = Σ_{T∋u} λ_T`, the
//! marginal energy of one more bit for that user. Users are decoded in
//! ascending θ; users with equal θ share time between their orders.

mod barrier;

use nalgebra::DVector;

use crate::channel::{ChannelSet, LinkSide};
use crate::duality::{self, dual_mac};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::sic::{self, CovarianceSet, DecodingOrder, RateAllocation};
use crate::timeshare::{self, TimeShareSchedule, DEFAULT_TIE_TOL};

/// Largest user count for which all subset constraints are enumerated.
pub const MAX_USERS: usize = 8;

#[derive(Debug, Clone)]
pub struct AllocationProblem {
    channels: ChannelSet,
    weights: Vec<f64>,
    min_rates: Vec<f64>,
}

impl AllocationProblem {
    /// `channels` must be a multiple-access set; `min_rates` are bits per
    /// subcarrier use summed over the band.
    pub fn new(channels: ChannelSet, weights: Vec<f64>, min_rates: Vec<f64>) -> Result<Self> {
        if channels.side() != LinkSide::MultipleAccess {
            return Err(Error::InvalidInput(
                "allocation runs on the multiple-access side; use solve_bc_design for broadcast sets".into(),
            ));
        }
        let u = channels.num_users();
        if weights.len() != u || min_rates.len() != u {
            return Err(Error::InvalidInput(format!(
                "need {u} weights and rate floors, got {} and {}",
                weights.len(),
                min_rates.len()
            )));
        }
        if weights.iter().chain(&min_rates).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("weights and rate floors must be finite and non-negative".into()));
        }
        if u > MAX_USERS {
            return Err(Error::InvalidInput(format!("at most {MAX_USERS} users are supported")));
        }
        Ok(AllocationProblem {
            channels,
            weights,
            min_rates,
        })
    }

    pub fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn min_rates(&self) -> &[f64] {
        &self.min_rates
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Relative tolerance for treating two duals as equal.
    pub tie_tol: f64,
    /// Newton iteration cap.
    pub max_iterations: usize,
    /// Stop once the duality gap falls below this fraction of the objective.
    pub gap_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tie_tol: DEFAULT_TIE_TOL,
            max_iterations: 500,
            gap_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AllocationSolution {
    /// Uplink covariances.
    pub covariances: CovarianceSet,
    /// Time-averaged rates of the schedule.
    pub rates: RateAllocation,
    /// θ_u. In sum-rate mode these are the rate weights.
    pub duals: Vec<f64>,
    /// Marginal weighted rate per watt (sum-rate mode only).
    pub power_dual: Option<f64>,
    /// `Σ_u w_u Σ_n tr R_{u,n}`; total transmit power in sum-rate mode.
    pub energy: f64,
    pub kkt_residual: f64,
    /// User clusters in descending θ.
    pub tie_groups: Vec<Vec<usize>>,
    /// Decoding order with ties broken by user index.
    pub order: DecodingOrder,
    pub schedule: TimeShareSchedule,
    pub iterations: usize,
}

impl AllocationSolution {
    pub fn has_ties(&self) -> bool {
        self.tie_groups.iter().any(|c| c.len() > 1)
    }
}

/// Sort users by ascending θ (smallest decoded first) and flag ties.
pub fn extract_decoding_order(solution: &AllocationSolution, tie_tol: f64) -> (DecodingOrder, bool) {
    order_from_duals(&solution.duals, tie_tol)
}

pub fn order_from_duals(duals: &[f64], tie_tol: f64) -> (DecodingOrder, bool) {
    let clusters = timeshare::cluster_users(duals, tie_tol);
    let tie = clusters.iter().any(|c| c.len() > 1);
    (timeshare::cluster_order(&clusters), tie)
}

/// Whitened, per-user scaled channels for the active users.
struct Scaled {
    g: Vec<Vec<CMat>>,
    kappa: Vec<f64>,
    dims: Vec<usize>,
}

fn scale_channels(channels: &ChannelSet, active: &[usize]) -> Result<Scaled> {
    let n_sc = channels.num_subcarriers();
    let whiten = channels
        .noise_matrices()
        .iter()
        .map(linalg::whitening_matrix)
        .collect::<Result<Vec<_>>>()?;
    let mut g: Vec<Vec<CMat>> = (0..n_sc)
        .map(|n| {
            let w = if whiten.len() == 1 { &whiten[0] } else { &whiten[n] };
            active.iter().map(|&u| w * channels.user_matrix(u, n)).collect()
        })
        .collect();
    let dims: Vec<usize> = active.iter().map(|&u| channels.user_dim(u)).collect();
    let mut kappa = Vec::with_capacity(active.len());
    for (k, &u) in active.iter().enumerate() {
        let energy: f64 = g.iter().map(|row| linalg::frobenius_sq(&row[k])).sum();
        let kap = energy / (n_sc * dims[k]) as f64;
        if !(kap > 0.0) {
            return Err(Error::Infeasible(format!(
                "user {u} has an all-zero channel and a positive rate requirement"
            )));
        }
        for row in g.iter_mut() {
            row[k] /= linalg::c64(kap.sqrt(), 0.0);
        }
        kappa.push(kap);
    }
    Ok(Scaled { g, kappa, dims })
}

fn scaled_identity_start(dims: &[usize], n_sc: usize, alpha: f64) -> DVector<f64> {
    let p: usize = dims.iter().map(|d| d * d).sum();
    let mut x = DVector::zeros(n_sc * p);
    for n in 0..n_sc {
        let mut off = n * p;
        for &d in dims {
            for j in 0..d {
                x[off + j] = alpha;
            }
            off += d * d;
        }
    }
    x
}

fn unscale(channels: &ChannelSet, active: &[usize], sc: &Scaled, covs: &[Vec<CMat>]) -> Result<CovarianceSet> {
    let dims = channels.user_dims();
    let mats = covs
        .iter()
        .map(|row| {
            let mut out: Vec<CMat> = dims.iter().map(|&d| linalg::zeros(d, d)).collect();
            for (k, &u) in active.iter().enumerate() {
                out[u] = linalg::hermitian_part(&row[k]) / linalg::c64(sc.kappa[k], 0.0);
            }
            out
        })
        .collect();
    CovarianceSet::new(LinkSide::MultipleAccess, dims, mats)
}

fn zero_solution(channels: &ChannelSet, tie_tol: f64) -> Result<AllocationSolution> {
    let u = channels.num_users();
    let covs = CovarianceSet::zeros(LinkSide::MultipleAccess, channels.user_dims(), channels.num_subcarriers());
    let duals = vec![0.0; u];
    let (order, _) = order_from_duals(&duals, tie_tol);
    let alloc = sic::sic_rates(channels, &covs, &order)?;
    Ok(AllocationSolution {
        covariances: covs,
        rates: alloc.clone(),
        duals,
        power_dual: None,
        energy: 0.0,
        kkt_residual: 0.0,
        tie_groups: timeshare::cluster_users(&vec![0.0; u], tie_tol),
        order: order.clone(),
        schedule: TimeShareSchedule::single(timeshare::Vertex::new(order, alloc)),
        iterations: 0,
    })
}

/// Merge the two adjacent clusters whose duals are closest.
fn merge_closest(clusters: &mut Vec<Vec<usize>>, duals: &[f64]) -> bool {
    if clusters.len() < 2 {
        return false;
    }
    let lo = |c: &Vec<usize>| c.iter().map(|&u| duals[u]).fold(f64::INFINITY, f64::min);
    let hi = |c: &Vec<usize>| c.iter().map(|&u| duals[u]).fold(f64::NEG_INFINITY, f64::max);
    let i = (0..clusters.len() - 1)
        .min_by(|&a, &b| {
            let ga = lo(&clusters[a]) - hi(&clusters[a + 1]);
            let gb = lo(&clusters[b]) - hi(&clusters[b + 1]);
            ga.total_cmp(&gb)
        })
        .expect("at least two clusters");
    let next = clusters.remove(i + 1);
    clusters[i].extend(next);
    clusters[i].sort_unstable();
    true
}

/// Schedule meeting `target` with the given covariances, widening clusters
/// when the target falls just outside the face spanned by the current ones.
fn schedule_for_target(
    channels: &ChannelSet,
    covs: &CovarianceSet,
    duals: &[f64],
    mut clusters: Vec<Vec<usize>>,
    target: &[f64],
) -> Result<(Vec<Vec<usize>>, TimeShareSchedule)> {
    loop {
        let vertices = timeshare::enumerate_vertices(&clusters, channels, covs)?;
        match timeshare::convex_hull_fractions(&vertices, target) {
            Ok(s) => return Ok((clusters, s)),
            Err(e @ Error::OutsideHull { .. }) => {
                if !merge_closest(&mut clusters, duals) {
                    return Err(e);
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Minimum weighted energy meeting every rate floor.
pub fn minimize_energy(problem: &AllocationProblem) -> Result<AllocationSolution> {
    minimize_energy_with(problem, &SolverOptions::default())
}

pub fn minimize_energy_with(problem: &AllocationProblem, opts: &SolverOptions) -> Result<AllocationSolution> {
    let channels = &problem.channels;
    let b_min = &problem.min_rates;
    let w = &problem.weights;
    let active: Vec<usize> = (0..channels.num_users()).filter(|&u| b_min[u] > 0.0).collect();
    if active.is_empty() {
        return zero_solution(channels, opts.tie_tol);
    }
    if let Some(&u) = active.iter().find(|&&u| !(w[u] > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "user {u} has a rate floor but zero weight; the minimum is not attained"
        )));
    }
    let sc = scale_channels(channels, &active)?;
    let n_sc = channels.num_subcarriers();
    let a = active.len();
    let terms: Vec<barrier::Term> = (1usize..(1 << a))
        .map(|mask| {
            let users: Vec<usize> = (0..a).filter(|k| mask >> k & 1 == 1).collect();
            let floor = users.iter().map(|&k| b_min[active[k]]).sum();
            barrier::Term {
                users,
                floor: Some(floor),
                reward: 0.0,
            }
        })
        .collect();
    let raw_cost: Vec<f64> = active.iter().zip(&sc.kappa).map(|(&u, k)| w[u] / k).collect();
    let cost_scale = raw_cost.iter().cloned().fold(0.0, f64::max);
    let pb = barrier::Problem {
        g: &sc.g,
        dims: sc.dims.clone(),
        cost: raw_cost.iter().map(|c| c / cost_scale).collect(),
        terms,
        power: None,
    };

    let mut alpha = 1.0;
    let mut start = None;
    for _ in 0..400 {
        let x = scaled_identity_start(&sc.dims, n_sc, alpha);
        if barrier::is_strictly_feasible(&pb, &x) {
            start = Some(scaled_identity_start(&sc.dims, n_sc, 2.0 * alpha));
            break;
        }
        alpha *= 2.0;
    }
    let start = start.ok_or_else(|| Error::Infeasible("no finite power meets the rate floors".into()))?;
    let out = barrier::solve(
        &pb,
        start,
        &barrier::Options {
            gap_tol: opts.gap_tol,
            max_newton: opts.max_iterations,
        },
    )?;

    let covs = unscale(channels, &active, &sc, &out.covs)?;
    let mut duals = vec![0.0; channels.num_users()];
    for (term, lambda) in pb.terms.iter().zip(&out.floor_duals) {
        for &k in &term.users {
            duals[active[k]] += cost_scale * lambda;
        }
    }
    let energy = covs.weighted_trace(w);

    // Inactive users carry no power; decode them first, one per cluster.
    let active_duals: Vec<f64> = active.iter().map(|&u| duals[u]).collect();
    let mut clusters: Vec<Vec<usize>> = timeshare::cluster_users(&active_duals, opts.tie_tol)
        .into_iter()
        .map(|c| c.into_iter().map(|k| active[k]).collect())
        .collect();
    clusters.extend((0..channels.num_users()).rev().filter(|u| b_min[*u] == 0.0).map(|u| vec![u]));
    let (clusters, schedule) = schedule_for_target(channels, &covs, &duals, clusters, b_min)?;
    Ok(AllocationSolution {
        rates: timeshare::average_allocation(&schedule),
        covariances: covs,
        duals,
        power_dual: None,
        energy,
        kkt_residual: out.residual,
        order: timeshare::cluster_order(&clusters),
        tie_groups: clusters,
        schedule,
        iterations: out.iterations,
    })
}

/// Maximize `Σ_u w_u b_u` subject to `Σ tr R ≤ budget`.
pub fn maximize_sum_rate(channels: &ChannelSet, budget: f64, weights: &[f64]) -> Result<AllocationSolution> {
    maximize_sum_rate_with(channels, budget, weights, &SolverOptions::default())
}

pub fn maximize_sum_rate_with(
    channels: &ChannelSet,
    budget: f64,
    weights: &[f64],
    opts: &SolverOptions,
) -> Result<AllocationSolution> {
    if channels.side() != LinkSide::MultipleAccess {
        return Err(Error::InvalidInput("sum-rate mode runs on the multiple-access side".into()));
    }
    let u_count = channels.num_users();
    if weights.len() != u_count || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidInput("need one finite non-negative weight per user".into()));
    }
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::InvalidInput("power budget must be positive".into()));
    }
    let mut active: Vec<usize> = (0..u_count).filter(|&u| weights[u] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::InvalidInput("at least one weight must be positive".into()));
    }
    // Users without any channel cannot contribute rate.
    active.retain(|&u| channels.user_gain(u) > 0.0);
    if active.is_empty() {
        let mut sol = zero_solution(channels, opts.tie_tol)?;
        sol.duals = weights.to_vec();
        return Ok(sol);
    }
    let sc = scale_channels(channels, &active)?;
    let n_sc = channels.num_subcarriers();
    let w_max = active.iter().map(|&u| weights[u]).fold(0.0, f64::max);

    // Greedy vertex value: ascending weights, nested suffix sets.
    let mut by_weight: Vec<usize> = (0..active.len()).collect();
    by_weight.sort_by(|&a, &b| weights[active[a]].total_cmp(&weights[active[b]]).then(a.cmp(&b)));
    let mut terms = Vec::new();
    let mut prev = 0.0;
    for (i, &k) in by_weight.iter().enumerate() {
        let wk = weights[active[k]];
        let step = (wk - prev) / w_max;
        prev = wk;
        if step > 0.0 {
            terms.push(barrier::Term {
                users: by_weight[i..].to_vec(),
                floor: None,
                reward: step,
            });
        }
    }
    let raw_power: Vec<f64> = sc.kappa.iter().map(|k| 1.0 / k).collect();
    let p_scale = raw_power.iter().cloned().fold(0.0, f64::max);
    let power: Vec<f64> = raw_power.iter().map(|p| p / p_scale).collect();
    let scaled_budget = budget / p_scale;
    let spread: f64 = power.iter().zip(&sc.dims).map(|(p, &d)| p * d as f64).sum::<f64>() * n_sc as f64;
    let pb = barrier::Problem {
        g: &sc.g,
        dims: sc.dims.clone(),
        cost: vec![0.0; active.len()],
        terms,
        power: Some((power, scaled_budget)),
    };
    let start = scaled_identity_start(&sc.dims, n_sc, scaled_budget / (2.0 * spread));
    let out = barrier::solve(
        &pb,
        start,
        &barrier::Options {
            gap_tol: opts.gap_tol,
            max_newton: opts.max_iterations,
        },
    )?;
    let covs = unscale(channels, &active, &sc, &out.covs)?;

    // Equal weights leave the order free; break ties weakest-first.
    let clusters = timeshare::cluster_users(weights, opts.tie_tol);
    let gains: Vec<f64> = (0..u_count).map(|u| channels.user_gain(u)).collect();
    let seq: Vec<usize> = clusters
        .iter()
        .rev()
        .flat_map(|c| {
            let mut c = c.clone();
            c.sort_by(|&a, &b| gains[a].total_cmp(&gains[b]).then(a.cmp(&b)));
            c
        })
        .collect();
    let order = DecodingOrder::from_sequence(seq)?;
    let alloc = sic::sic_rates(channels, &covs, &order)?;
    Ok(AllocationSolution {
        energy: covs.total_trace(),
        covariances: covs,
        rates: alloc.clone(),
        duals: weights.to_vec(),
        power_dual: Some(out.power_dual * w_max / p_scale),
        kkt_residual: out.residual,
        tie_groups: clusters,
        schedule: TimeShareSchedule::single(timeshare::Vertex::new(order.clone(), alloc)),
        order,
        iterations: out.iterations,
    })
}

/// One time-sharing block of a downlink design.
#[derive(Debug, Clone)]
pub struct BcBlock {
    pub fraction: f64,
    /// First entry is encoded first and sees every later user as interference.
    pub encoding: DecodingOrder,
    pub covariances: CovarianceSet,
    pub rates: RateAllocation,
}

#[derive(Debug, Clone)]
pub struct BcDesign {
    pub mac_channels: ChannelSet,
    pub mac: AllocationSolution,
    pub blocks: Vec<BcBlock>,
    /// Time-averaged dirty-paper rates.
    pub rates: RateAllocation,
    /// Time-averaged total transmit power.
    pub power: f64,
}

/// Downlink design through the dual uplink: map channels, minimize energy,
/// order by θ and map covariances back for every time-sharing block.
pub fn solve_bc_design(bc: &ChannelSet, weights: &[f64], min_rates: &[f64]) -> Result<BcDesign> {
    solve_bc_design_with(bc, weights, min_rates, &SolverOptions::default())
}

pub fn solve_bc_design_with(
    bc: &ChannelSet,
    weights: &[f64],
    min_rates: &[f64],
    opts: &SolverOptions,
) -> Result<BcDesign> {
    let mac_channels = dual_mac(bc)?;
    let problem = AllocationProblem::new(mac_channels.clone(), weights.to_vec(), min_rates.to_vec())?;
    let mac = minimize_energy_with(&problem, opts)?;
    let mut blocks = Vec::with_capacity(mac.schedule.blocks.len());
    for b in &mac.schedule.blocks {
        let covariances = duality::mac_to_bc_covariances(bc, &mac.covariances, &b.vertex.order)?;
        let encoding = b.vertex.order.reversed();
        let rates = duality::bc_dpc_rates(bc, &covariances, &encoding)?;
        blocks.push(BcBlock {
            fraction: b.fraction,
            encoding,
            covariances,
            rates,
        });
    }
    let parts: Vec<(f64, &RateAllocation)> = blocks.iter().map(|b| (b.fraction, &b.rates)).collect();
    let rates = RateAllocation::convex_combination(&parts);
    let power = blocks.iter().map(|b| b.fraction * b.covariances.total_trace()).sum();
    Ok(BcDesign {
        mac_channels,
        mac,
        blocks,
        rates,
        power,
    })
}
