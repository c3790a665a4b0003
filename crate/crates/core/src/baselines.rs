//! Reference schemes: water-filling, orthogonal access, shared-band linear
//! reception, single-order NOMA and per-subcarrier MC-NOMA.
//!
//! Every scheme works on a multiple-access channel set (the dual uplink of
//! a broadcast design) so results compare directly with the allocator.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::allocator::{self, AllocationSolution};
use crate::channel::{ChannelSet, LinkSide};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::sic::{self, CovarianceSet, DecodingOrder, RateAllocation};
use crate::timeshare::{TimeShareSchedule, Vertex};

const SWEEP_TOL: f64 = 1e-11;
const MAX_SWEEPS: usize = 5000;
const LINEAR_SWEEPS: usize = 300;

/// Powers `p_i = (μ - 1/g_i)^+` with `Σ p_i = budget`.
pub fn waterfill(gains: &[f64], budget: f64) -> Vec<f64> {
    let mut p = vec![0.0; gains.len()];
    if budget <= 0.0 {
        return p;
    }
    let idx = descending_positive(gains);
    let mut level = None;
    let mut inv_sum = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        inv_sum += 1.0 / gains[i];
        let mu = (budget + inv_sum) / (k + 1) as f64;
        if mu > 1.0 / gains[i] {
            level = Some((mu, k + 1));
        }
    }
    if let Some((mu, k)) = level {
        for &i in &idx[..k] {
            p[i] = (mu - 1.0 / gains[i]).max(0.0);
        }
    }
    p
}

/// Least total power with `Σ log2(1 + g_i p_i) = bits`.
pub fn min_power_waterfill(gains: &[f64], bits: f64) -> Result<Vec<f64>> {
    let mut p = vec![0.0; gains.len()];
    if bits <= 0.0 {
        return Ok(p);
    }
    let idx = descending_positive(gains);
    if idx.is_empty() {
        return Err(Error::Infeasible(format!("{bits} bits requested over an all-zero channel")));
    }
    let mut level = None;
    let mut log_sum = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        log_sum += gains[i].log2();
        let mu = ((bits - log_sum) / (k + 1) as f64).exp2();
        if mu > 1.0 / gains[i] {
            level = Some((mu, k + 1));
        }
    }
    let (mu, k) = level.expect("the strongest mode is always active");
    for &i in &idx[..k] {
        p[i] = (mu - 1.0 / gains[i]).max(0.0);
    }
    Ok(p)
}

fn descending_positive(gains: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0 && gains[i].is_finite()).collect();
    idx.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
    idx
}

/// Eigenmodes of one user against a given interference-plus-noise level on
/// each subcarrier: `(subcarrier, gain, eigenvectors)`.
struct Modes {
    gains: Vec<f64>,
    owner: Vec<(usize, usize)>,
    vectors: Vec<CMat>,
}

impl Modes {
    fn new(g: &[CMat], interference: &[Option<CMat>]) -> Result<Self> {
        let mut modes = Modes {
            gains: Vec::new(),
            owner: Vec::new(),
            vectors: Vec::with_capacity(g.len()),
        };
        for (n, gn) in g.iter().enumerate() {
            let e = match &interference[n] {
                Some(z) => linalg::whitening_matrix(z)? * gn,
                None => gn.clone(),
            };
            let (vals, vecs) = linalg::herm_eig(&(e.adjoint() * &e));
            for (i, v) in vals.into_iter().enumerate() {
                modes.gains.push(v.max(0.0));
                modes.owner.push((n, i));
            }
            modes.vectors.push(vecs);
        }
        Ok(modes)
    }

    fn covariances(&self, powers: &[f64]) -> Vec<CMat> {
        let mut diag: Vec<Vec<f64>> = self.vectors.iter().map(|v| vec![0.0; v.ncols()]).collect();
        for (&(n, i), &p) in self.owner.iter().zip(powers) {
            diag[n][i] = p;
        }
        self.vectors
            .iter()
            .zip(diag)
            .map(|(v, d)| {
                let d = DVector::from_iterator(d.len(), d.into_iter().map(|x| linalg::c64(x, 0.0)));
                v * DMatrix::from_diagonal(&d) * v.adjoint()
            })
            .collect()
    }
}

fn require_mac(channels: &ChannelSet) -> Result<()> {
    if channels.side() != LinkSide::MultipleAccess {
        return Err(Error::InvalidInput("baselines run on the multiple-access side".into()));
    }
    Ok(())
}

/// Transpose `[n][u]` whitened matrices into `[u][n]`.
fn per_user(channels: &ChannelSet) -> Result<Vec<Vec<CMat>>> {
    let w = sic::whitened_users(channels)?;
    Ok((0..channels.num_users())
        .map(|u| w.iter().map(|row| row[u].clone()).collect())
        .collect())
}

/// `I + Σ_{v ∈ others} G_v R_v G_v^*` in the whitened receiver domain.
fn interference(g: &[Vec<CMat>], covs: &[Vec<CMat>], others: impl Iterator<Item = usize>, n: usize) -> CMat {
    let dim = g[0][n].nrows();
    let mut z = linalg::identity(dim);
    for v in others {
        z += &g[v][n] * &covs[v][n] * g[v][n].adjoint();
    }
    z
}

fn covariance_set(channels: &ChannelSet, by_user: Vec<Vec<CMat>>) -> Result<CovarianceSet> {
    let n_sc = channels.num_subcarriers();
    let mut mats: Vec<Vec<CMat>> = (0..n_sc).map(|_| Vec::with_capacity(by_user.len())).collect();
    for user in by_user {
        for (n, m) in user.into_iter().enumerate() {
            mats[n].push(m);
        }
    }
    CovarianceSet::new(LinkSide::MultipleAccess, channels.user_dims(), mats)
}

fn zero_user(channels: &ChannelSet, u: usize) -> Vec<CMat> {
    let d = channels.user_dim(u);
    vec![linalg::zeros(d, d); channels.num_subcarriers()]
}

/// How the band is shared between users.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ResourcePartition {
    /// Owner of each subcarrier.
    Assigned(Vec<usize>),
    /// Every user transmits on every subcarrier.
    Shared,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PowerBudget {
    Total(f64),
    PerUser(Vec<f64>),
}

impl PowerBudget {
    fn per_user(&self, users: usize) -> Result<Vec<f64>> {
        let v = match self {
            PowerBudget::Total(p) => vec![p / users as f64; users],
            PowerBudget::PerUser(v) => v.clone(),
        };
        if v.len() != users || v.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput("power budgets must be finite, non-negative, one per user".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone)]
pub struct OmaOutcome {
    pub partition: ResourcePartition,
    pub covariances: CovarianceSet,
    pub rates: RateAllocation,
}

/// Greedy subcarrier assignment: in index order, each subcarrier goes to the
/// strongest user among those with the fewest subcarriers so far.
pub fn oma_partition(channels: &ChannelSet) -> Result<Vec<usize>> {
    require_mac(channels)?;
    let (users, n_sc) = (channels.num_users(), channels.num_subcarriers());
    if n_sc < users {
        return Err(Error::InvalidInput(format!(
            "orthogonal access needs at least one subcarrier per user ({n_sc} < {users})"
        )));
    }
    let w = sic::whitened_users(channels)?;
    let mut counts = vec![0usize; users];
    let mut owner = Vec::with_capacity(n_sc);
    for row in &w {
        let least = *counts.iter().min().expect("at least one user");
        let best = (0..users)
            .filter(|&u| counts[u] == least)
            .map(|u| (u, linalg::frobenius_sq(&row[u])))
            .fold(None, |acc: Option<(usize, f64)>, (u, g)| match acc {
                Some((_, bg)) if bg >= g => acc,
                _ => Some((u, g)),
            })
            .expect("some user has the least count")
            .0;
        counts[best] += 1;
        owner.push(best);
    }
    Ok(owner)
}

/// Orthogonal access: each subcarrier carries one user, who water-fills over
/// its own subcarriers. A total budget is water-filled jointly.
pub fn oma_allocate(channels: &ChannelSet, power: &PowerBudget) -> Result<OmaOutcome> {
    let owner = oma_partition(channels)?;
    let users = channels.num_users();
    let g = per_user(channels)?;
    let modes = (0..users)
        .map(|u| {
            let masked: Vec<CMat> = g[u]
                .iter()
                .enumerate()
                .map(|(n, m)| if owner[n] == u { m.clone() } else { m * linalg::c64(0.0, 0.0) })
                .collect();
            Modes::new(&masked, &vec![None; masked.len()])
        })
        .collect::<Result<Vec<_>>>()?;
    let powers: Vec<Vec<f64>> = match power {
        PowerBudget::Total(p) => {
            let all: Vec<f64> = modes.iter().flat_map(|m| m.gains.iter().copied()).collect();
            let joint = waterfill(&all, *p);
            let mut out = Vec::with_capacity(users);
            let mut at = 0;
            for m in &modes {
                out.push(joint[at..at + m.gains.len()].to_vec());
                at += m.gains.len();
            }
            out
        }
        PowerBudget::PerUser(_) => {
            let budgets = power.per_user(users)?;
            modes.iter().zip(&budgets).map(|(m, &b)| waterfill(&m.gains, b)).collect()
        }
    };
    let by_user = modes.iter().zip(&powers).map(|(m, p)| m.covariances(p)).collect();
    let covariances = covariance_set(channels, by_user)?;
    let rates = sic::sic_rates(channels, &covariances, &DecodingOrder::identity(users))?;
    Ok(OmaOutcome {
        partition: ResourcePartition::Assigned(owner),
        covariances,
        rates,
    })
}

/// Shared band with single-user linear MMSE reception: every user treats
/// the others as noise and water-fills its own budget against them, iterated
/// to a fixed point. A total budget is split equally.
pub fn oma_linear_allocate(channels: &ChannelSet, power: &PowerBudget) -> Result<OmaOutcome> {
    require_mac(channels)?;
    let users = channels.num_users();
    let n_sc = channels.num_subcarriers();
    let budgets = power.per_user(users)?;
    let g = per_user(channels)?;
    let mut covs: Vec<Vec<CMat>> = (0..users).map(|u| zero_user(channels, u)).collect();
    for _ in 0..LINEAR_SWEEPS {
        let mut change: f64 = 0.0;
        for u in 0..users {
            let z: Vec<Option<CMat>> = (0..n_sc)
                .map(|n| Some(interference(&g, &covs, (0..users).filter(|&v| v != u), n)))
                .collect();
            let modes = Modes::new(&g[u], &z)?;
            let next = modes.covariances(&waterfill(&modes.gains, budgets[u]));
            let scale = budgets[u].max(f64::MIN_POSITIVE);
            for (a, b) in next.iter().zip(&covs[u]) {
                change = change.max((a - b).norm() / scale);
            }
            covs[u] = next;
        }
        if change < SWEEP_TOL {
            break;
        }
    }
    let mut rates = vec![vec![0.0; n_sc]; users];
    for n in 0..n_sc {
        for u in 0..users {
            let z = interference(&g, &covs, (0..users).filter(|&v| v != u), n);
            let s = &g[u][n] * &covs[u][n] * g[u][n].adjoint();
            rates[u][n] = linalg::logdet_ratio_bits(&z, &s)?;
        }
    }
    Ok(OmaOutcome {
        partition: ResourcePartition::Shared,
        covariances: covariance_set(channels, covs)?,
        rates: RateAllocation::new(rates)?,
    })
}

/// What a NOMA-family baseline optimizes.
#[derive(Debug, Clone, PartialEq)]
pub enum NomaObjective {
    /// Maximize the unweighted sum rate under a total power budget.
    SumRate { power: f64 },
    /// Meet per-user rate floors (bits summed over the band); energy is
    /// reported as `Σ w_u tr R_u`.
    Energy { min_rates: Vec<f64>, weights: Vec<f64> },
}

/// Uplink decoding order used by NOMA: strongest user decoded first, so the
/// weakest is decoded interference-free.
pub fn noma_order(channels: &ChannelSet) -> DecodingOrder {
    sic::channel_gain_order(channels).0.reversed()
}

/// NOMA order evaluated separately on each subcarrier.
pub fn mc_noma_orders(channels: &ChannelSet) -> Result<Vec<DecodingOrder>> {
    Ok(sic::whitened_users(channels)?
        .iter()
        .map(|row| {
            let gains: Vec<f64> = row.iter().map(linalg::frobenius_sq).collect();
            sic::gain_order(&gains).0.reversed()
        })
        .collect())
}

/// Single-order NOMA. In sum-rate mode each user spreads its power flat
/// over the band and only the per-user totals are optimized; in energy mode
/// each user water-fills against the users decoded after it.
pub fn noma_allocate(channels: &ChannelSet, objective: &NomaObjective) -> Result<AllocationSolution> {
    require_mac(channels)?;
    let order = noma_order(channels);
    match objective {
        NomaObjective::SumRate { power } => {
            check_budget(*power)?;
            let (covs, residual, iterations) = flat_power_sum_rate(channels, *power)?;
            baseline_solution(channels, covs, &[order.clone()], order, None, residual, iterations)
        }
        NomaObjective::Energy { min_rates, weights } => {
            check_floors(channels, min_rates, weights)?;
            let (covs, residual, iterations) = sequential_waterfill(channels, &[order.clone()], min_rates)?;
            baseline_solution(channels, covs, &[order.clone()], order, Some(weights), residual, iterations)
        }
    }
}

/// NOMA with an independent channel-gain order on every subcarrier and
/// per-subcarrier power.
pub fn mc_noma_allocate(channels: &ChannelSet, objective: &NomaObjective) -> Result<AllocationSolution> {
    require_mac(channels)?;
    let orders = mc_noma_orders(channels)?;
    let global = noma_order(channels);
    match objective {
        NomaObjective::SumRate { power } => {
            check_budget(*power)?;
            // The sum rate does not depend on the order, so the per-subcarrier
            // powers are the sum-capacity ones; the orders only split rates.
            let users = channels.num_users();
            let sol = allocator::maximize_sum_rate(channels, *power, &vec![1.0; users])?;
            baseline_solution(channels, sol.covariances, &orders, global, None, sol.kkt_residual, sol.iterations)
        }
        NomaObjective::Energy { min_rates, weights } => {
            check_floors(channels, min_rates, weights)?;
            let (covs, residual, iterations) = sequential_waterfill(channels, &orders, min_rates)?;
            baseline_solution(channels, covs, &orders, global, Some(weights), residual, iterations)
        }
    }
}

fn check_budget(power: f64) -> Result<()> {
    if !power.is_finite() || power < 0.0 {
        return Err(Error::InvalidInput(format!("power budget must be finite and non-negative, got {power}")));
    }
    Ok(())
}

fn check_floors(channels: &ChannelSet, min_rates: &[f64], weights: &[f64]) -> Result<()> {
    let u = channels.num_users();
    if min_rates.len() != u || weights.len() != u {
        return Err(Error::InvalidInput(format!("need {u} rate floors and weights")));
    }
    if min_rates.iter().chain(weights).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput("rate floors and weights must be finite and non-negative".into()));
    }
    Ok(())
}

fn baseline_solution(
    channels: &ChannelSet,
    covariances: CovarianceSet,
    orders: &[DecodingOrder],
    order: DecodingOrder,
    weights: Option<&[f64]>,
    kkt_residual: f64,
    iterations: usize,
) -> Result<AllocationSolution> {
    let rates = sic::sic_rates_per_subcarrier(channels, &covariances, orders)?;
    let energy = match weights {
        Some(w) => covariances.weighted_trace(w),
        None => covariances.total_trace(),
    };
    let tie_groups = order.reversed().sequence().iter().map(|&u| vec![u]).collect();
    Ok(AllocationSolution {
        duals: vec![0.0; channels.num_users()],
        power_dual: None,
        energy,
        kkt_residual,
        tie_groups,
        schedule: TimeShareSchedule::single(Vertex::new(order.clone(), rates.clone())),
        order,
        rates,
        covariances,
        iterations,
    })
}

/// Per-user minimum-power water-filling against the users decoded after it,
/// swept until no covariance moves. With one shared order a single sweep
/// from the last-decoded user is exact.
pub fn sequential_waterfill(
    channels: &ChannelSet,
    orders: &[DecodingOrder],
    min_rates: &[f64],
) -> Result<(CovarianceSet, f64, usize)> {
    require_mac(channels)?;
    let users = channels.num_users();
    let n_sc = channels.num_subcarriers();
    if orders.len() != 1 && orders.len() != n_sc {
        return Err(Error::InvalidInput("need one order or one per subcarrier".into()));
    }
    let order_at = |n: usize| if orders.len() == 1 { &orders[0] } else { &orders[n] };
    let g = per_user(channels)?;
    // Visit users from the latest average decoding position to the earliest.
    let mut visit: Vec<usize> = (0..users).collect();
    let mean_pos: Vec<usize> = (0..users)
        .map(|u| orders.iter().map(|o| o.position_of(u)).sum())
        .collect();
    visit.sort_by(|&a, &b| mean_pos[b].cmp(&mean_pos[a]).then(a.cmp(&b)));

    let mut covs: Vec<Vec<CMat>> = (0..users).map(|u| zero_user(channels, u)).collect();
    let mut change = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        change = 0.0;
        for &u in &visit {
            let z: Vec<Option<CMat>> = (0..n_sc)
                .map(|n| {
                    let o = order_at(n);
                    let later = o.sequence()[o.position_of(u) + 1..].iter().copied();
                    Some(interference(&g, &covs, later, n))
                })
                .collect();
            let modes = Modes::new(&g[u], &z)?;
            let p = min_power_waterfill(&modes.gains, min_rates[u])
                .map_err(|_| Error::Infeasible(format!("user {u} has no usable channel for its rate floor")))?;
            let next = modes.covariances(&p);
            let before: f64 = covs[u].iter().map(linalg::re_trace).sum();
            let after: f64 = next.iter().map(linalg::re_trace).sum();
            change = change.max((after - before).abs() / after.max(f64::MIN_POSITIVE));
            covs[u] = next;
        }
        if orders.len() == 1 || change < SWEEP_TOL {
            break;
        }
    }
    if orders.len() != 1 && change >= SWEEP_TOL {
        return Err(Error::NotConverged {
            iterations: sweeps,
            residual: change,
            gap: change,
        });
    }
    let residual = if orders.len() == 1 { 0.0 } else { change };
    Ok((covariance_set(channels, covs)?, residual, sweeps))
}

/// Flat per-user power `R_{u,n} = p_u / (N d_u) I` maximizing the sum rate
/// subject to `Σ p_u ≤ P`, by a log-barrier Newton method on `p / P`.
fn flat_power_sum_rate(channels: &ChannelSet, budget: f64) -> Result<(CovarianceSet, f64, usize)> {
    let users = channels.num_users();
    let n_sc = channels.num_subcarriers();
    let g = per_user(channels)?;
    let active: Vec<usize> = (0..users)
        .filter(|&u| g[u].iter().any(|m| linalg::frobenius_sq(m) > 0.0))
        .collect();
    let mut flat = vec![0.0; users];
    let mut residual = 0.0;
    let mut iterations = 0;
    if budget > 0.0 && !active.is_empty() {
        // a[n][k] = P G G^* / (N d), the received covariance per unit of x_k.
        let a: Vec<Vec<CMat>> = (0..n_sc)
            .map(|n| {
                active
                    .iter()
                    .map(|&u| {
                        let scale = budget / (n_sc * channels.user_dim(u)) as f64;
                        &g[u][n] * g[u][n].adjoint() * linalg::c64(scale, 0.0)
                    })
                    .collect()
            })
            .collect();
        let (x, gap, it) = simplex_barrier(&a)?;
        for (k, &u) in active.iter().enumerate() {
            flat[u] = x[k] * budget;
        }
        residual = gap;
        iterations = it;
    }
    let by_user = (0..users)
        .map(|u| {
            let d = channels.user_dim(u);
            let level = flat[u] / (n_sc * d) as f64;
            vec![linalg::identity(d) * linalg::c64(level, 0.0); n_sc]
        })
        .collect();
    Ok((covariance_set(channels, by_user)?, residual, iterations))
}

/// Maximize `Σ_n ln|I + Σ_k x_k A_{n,k}|` over `x ≥ 0, Σ x ≤ 1`.
/// Returns the point, the final relative gap and the Newton step count.
fn simplex_barrier(a: &[Vec<CMat>]) -> Result<(Vec<f64>, f64, usize)> {
    const GAP_TOL: f64 = 1e-10;
    const MAX_NEWTON: usize = 400;
    let k = a[0].len();
    let dim = a[0][0].nrows();
    let m = (k + 1) as f64;
    let value = |x: &[f64]| -> Result<f64> {
        let mut f = 0.0;
        for an in a {
            let mut s = linalg::identity(dim);
            for (xi, ai) in x.iter().zip(an) {
                s += ai * linalg::c64(*xi, 0.0);
            }
            f += linalg::logdet_hpd(&s)?;
        }
        Ok(f)
    };
    let barrier = |x: &[f64], t: f64| -> Result<f64> {
        let slack = 1.0 - x.iter().sum::<f64>();
        if slack <= 0.0 || x.iter().any(|&v| v <= 0.0) {
            return Ok(f64::INFINITY);
        }
        Ok(-t * value(x)? - x.iter().map(|v| v.ln()).sum::<f64>() - slack.ln())
    };
    let mut x = vec![0.5 / k as f64; k];
    let mut t = 1.0;
    let mut steps = 0;
    loop {
        let scale = 1.0 + t * value(&x)?.abs();
        loop {
            let slack = 1.0 - x.iter().sum::<f64>();
            let mut grad = DVector::<f64>::zeros(k);
            let mut hess = DMatrix::<f64>::zeros(k, k);
            for an in a {
                let mut s = linalg::identity(dim);
                for (xi, ai) in x.iter().zip(an) {
                    s += ai * linalg::c64(*xi, 0.0);
                }
                let inv = linalg::cholesky(&s)
                    .ok_or_else(|| Error::Numeric("singular received covariance".into()))?
                    .inverse();
                let b: Vec<CMat> = an.iter().map(|ai| &inv * ai).collect();
                for i in 0..k {
                    grad[i] -= t * linalg::re_trace(&b[i]);
                    for j in i..k {
                        let h = t * linalg::re_trace_prod(&b[i], &b[j]);
                        hess[(i, j)] += h;
                        if i != j {
                            hess[(j, i)] += h;
                        }
                    }
                }
            }
            for i in 0..k {
                grad[i] += -1.0 / x[i] + 1.0 / slack;
                hess[(i, i)] += 1.0 / (x[i] * x[i]);
            }
            hess.add_scalar_mut(1.0 / (slack * slack));
            let step = hess
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Numeric("barrier Hessian is not positive definite".into()))?
                .solve(&(-&grad));
            let dec = -grad.dot(&step);
            steps += 1;
            if steps > MAX_NEWTON {
                return Err(Error::NotConverged {
                    iterations: steps,
                    residual: dec,
                    gap: m / t,
                });
            }
            if dec / 2.0 < 1e-12 * scale {
                break;
            }
            let f0 = barrier(&x, t)?;
            let mut s = 1.0;
            loop {
                let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, di)| xi + s * di).collect();
                let f1 = barrier(&cand, t)?;
                if f1 <= f0 - 0.25 * s * dec || (dec < 1e-6 && f1.is_finite()) {
                    x = cand;
                    break;
                }
                s *= 0.5;
                if s < 1e-12 {
                    break;
                }
            }
            if s < 1e-12 {
                break;
            }
        }
        let gap = m / t / value(&x)?.max(1e-3);
        if gap < GAP_TOL {
            return Ok((x, gap, steps));
        }
        t *= 20.0;
    }
}
