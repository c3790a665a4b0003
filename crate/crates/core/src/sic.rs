//! SIC chain-rule rates, subset capacities and the channel-strength order.
//!
//! Rates are in bits per subcarrier use. A [`DecodingOrder`] lists users in
//! the order a joint (uplink) receiver decodes them: the user decoded first
//! treats every not-yet-decoded user as noise, the user decoded last sees
//! only noise. Summed over users the rates telescope to the full log-det.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSet, LinkSide};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};

/// Permutation of users with its inverse.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecodingOrder {
    /// `sequence[k]` is the user decoded at position `k` (π⁻¹).
    sequence: Vec<usize>,
    /// `position[u]` is where user `u` is decoded (π).
    position: Vec<usize>,
}

impl DecodingOrder {
    pub fn from_sequence(sequence: Vec<usize>) -> Result<Self> {
        let n = sequence.len();
        let mut position = vec![usize::MAX; n];
        for (k, &u) in sequence.iter().enumerate() {
            if u >= n || position[u] != usize::MAX {
                return Err(Error::InvalidInput(format!(
                    "{sequence:?} is not a permutation of 0..{n}"
                )));
            }
            position[u] = k;
        }
        Ok(DecodingOrder { sequence, position })
    }

    pub fn identity(num_users: usize) -> Self {
        DecodingOrder {
            sequence: (0..num_users).collect(),
            position: (0..num_users).collect(),
        }
    }

    pub fn sequence(&self) -> &[usize] {
        &self.sequence
    }

    pub fn position_of(&self, user: usize) -> usize {
        self.position[user]
    }

    pub fn positions(&self) -> &[usize] {
        &self.position
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// Same users, opposite order.
    pub fn reversed(&self) -> Self {
        let mut seq = self.sequence.clone();
        seq.reverse();
        DecodingOrder::from_sequence(seq).expect("reversal of a permutation")
    }

    /// Users decoded at or after position `k`.
    pub fn suffix(&self, k: usize) -> &[usize] {
        &self.sequence[k..]
    }
}

impl std::fmt::Display for DecodingOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s: Vec<String> = self.sequence.iter().map(|u| u.to_string()).collect();
        write!(f, "{}", s.join(">"))
    }
}

/// Per-user, per-subcarrier transmit covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    side: LinkSide,
    dims: Vec<usize>,
    /// `mats[n][u]`.
    mats: Vec<Vec<CMat>>,
}

impl CovarianceSet {
    /// Validates Hermitian symmetry (1e-10) and clips eigenvalues in
    /// `[-1e-9, 0)` to zero.
    pub fn new(side: LinkSide, dims: Vec<usize>, mats: Vec<Vec<CMat>>) -> Result<Self> {
        let mut clean = Vec::with_capacity(mats.len());
        for (n, row) in mats.into_iter().enumerate() {
            if row.len() != dims.len() {
                return Err(Error::InvalidInput(format!(
                    "subcarrier {n} has {} covariances for {} users",
                    row.len(),
                    dims.len()
                )));
            }
            let mut out = Vec::with_capacity(row.len());
            for (u, m) in row.into_iter().enumerate() {
                if m.shape() != (dims[u], dims[u]) {
                    return Err(Error::InvalidInput(format!(
                        "covariance ({u},{n}) must be {0}x{0}",
                        dims[u]
                    )));
                }
                if !linalg::is_hermitian(&m, 1e-10) {
                    return Err(Error::Validation(format!("covariance ({u},{n}) is not Hermitian")));
                }
                out.push(linalg::clip_psd(&m, 1e-9)?);
            }
            clean.push(out);
        }
        Ok(CovarianceSet {
            side,
            dims,
            mats: clean,
        })
    }

    pub fn zeros(side: LinkSide, dims: Vec<usize>, num_subcarriers: usize) -> Self {
        let mats = (0..num_subcarriers)
            .map(|_| dims.iter().map(|&d| linalg::zeros(d, d)).collect())
            .collect();
        CovarianceSet { side, dims, mats }
    }

    pub(crate) fn from_parts_unchecked(side: LinkSide, dims: Vec<usize>, mats: Vec<Vec<CMat>>) -> Self {
        CovarianceSet { side, dims, mats }
    }

    pub fn side(&self) -> LinkSide {
        self.side
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_users(&self) -> usize {
        self.dims.len()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.mats.len()
    }

    pub fn get(&self, user: usize, n: usize) -> &CMat {
        &self.mats[n][user]
    }

    pub fn subcarrier(&self, n: usize) -> &[CMat] {
        &self.mats[n]
    }

    pub fn user_trace(&self, user: usize) -> f64 {
        self.mats.iter().map(|row| linalg::re_trace(&row[user])).sum()
    }

    pub fn total_trace(&self) -> f64 {
        (0..self.num_users()).map(|u| self.user_trace(u)).sum()
    }

    /// `Σ_u w_u Σ_n tr R(u, n)`.
    pub fn weighted_trace(&self, weights: &[f64]) -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(u, w)| w * self.user_trace(u))
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        CovarianceSet {
            side: self.side,
            dims: self.dims.clone(),
            mats: self
                .mats
                .iter()
                .map(|row| row.iter().map(|m| m.scale(factor)).collect())
                .collect(),
        }
    }
}

/// Rates `b_{u,n}` in bits per subcarrier use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateAllocation {
    /// `rates[u][n]`.
    rates: Vec<Vec<f64>>,
}

impl RateAllocation {
    /// Entries above `-1e-9` are clipped to zero; anything lower is rejected.
    pub fn new(rates: Vec<Vec<f64>>) -> Result<Self> {
        let mut rates = rates;
        for row in rates.iter_mut() {
            for v in row.iter_mut() {
                if !v.is_finite() || *v < -1e-9 {
                    return Err(Error::Numeric(format!("rate {v} is negative or not finite")));
                }
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Ok(RateAllocation { rates })
    }

    pub fn zeros(num_users: usize, num_subcarriers: usize) -> Self {
        RateAllocation {
            rates: vec![vec![0.0; num_subcarriers]; num_users],
        }
    }

    pub fn num_users(&self) -> usize {
        self.rates.len()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.rates.first().map_or(0, |r| r.len())
    }

    pub fn get(&self, user: usize, n: usize) -> f64 {
        self.rates[user][n]
    }

    pub fn user_rates(&self, user: usize) -> &[f64] {
        &self.rates[user]
    }

    /// `b_u = Σ_n b_{u,n}`.
    pub fn totals(&self) -> Vec<f64> {
        self.rates.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn sum(&self) -> f64 {
        self.totals().iter().sum()
    }

    /// Σ_u b_{u,n} for each subcarrier.
    pub fn per_subcarrier_sum(&self) -> Vec<f64> {
        (0..self.num_subcarriers())
            .map(|n| self.rates.iter().map(|r| r[n]).sum())
            .collect()
    }

    /// Per-user throughput in bits/s given the band and subcarrier count.
    pub fn totals_bps(&self, bandwidth: f64) -> Vec<f64> {
        let per_sc = bandwidth / self.num_subcarriers() as f64;
        self.totals().iter().map(|b| b * per_sc).collect()
    }

    /// `Σ_k ρ_k · rates_k` with the caller guaranteeing matching shapes.
    pub fn convex_combination(parts: &[(f64, &RateAllocation)]) -> RateAllocation {
        let (u, n) = (parts[0].1.num_users(), parts[0].1.num_subcarriers());
        let mut out = vec![vec![0.0; n]; u];
        for (rho, r) in parts {
            for (dst, src) in out.iter_mut().zip(&r.rates) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += rho * s;
                }
            }
        }
        RateAllocation { rates: out }
    }
}

fn require_mac(channels: &ChannelSet, covs: &CovarianceSet) -> Result<()> {
    if channels.side() != LinkSide::MultipleAccess {
        return Err(Error::InvalidInput(
            "SIC rates are defined on the multiple-access side; map BC sets through duality first".into(),
        ));
    }
    if covs.num_users() != channels.num_users() || covs.num_subcarriers() != channels.num_subcarriers() {
        return Err(Error::InvalidInput(format!(
            "covariances for {} users x {} subcarriers, channels have {} x {}",
            covs.num_users(),
            covs.num_subcarriers(),
            channels.num_users(),
            channels.num_subcarriers()
        )));
    }
    for u in 0..channels.num_users() {
        if covs.dims()[u] != channels.user_dim(u) {
            return Err(Error::InvalidInput(format!(
                "user {u} covariance is {0}x{0} but the channel has {1} inputs",
                covs.dims()[u],
                channels.user_dim(u)
            )));
        }
    }
    Ok(())
}

/// `L_n^{-1} H_{u,n}` for every subcarrier and user, with `L_n L_n^*` the
/// receiver noise, so the whitened receiver sees identity noise.
pub(crate) fn whitened_users(channels: &ChannelSet) -> Result<Vec<Vec<CMat>>> {
    let whiten = channels
        .noise_matrices()
        .iter()
        .map(linalg::whitening_matrix)
        .collect::<Result<Vec<_>>>()?;
    Ok((0..channels.num_subcarriers())
        .map(|n| {
            let w = if whiten.len() == 1 { &whiten[0] } else { &whiten[n] };
            (0..channels.num_users()).map(|u| w * channels.user_matrix(u, n)).collect()
        })
        .collect())
}

/// `H R H^*` for one user on one subcarrier.
pub(crate) fn received_covariance(channels: &ChannelSet, covs: &CovarianceSet, user: usize, n: usize) -> CMat {
    let h = channels.user_matrix(user, n);
    &h * covs.get(user, n) * h.adjoint()
}

fn subcarrier_rates(
    channels: &ChannelSet,
    covs: &CovarianceSet,
    order: &DecodingOrder,
    n: usize,
) -> Result<Vec<f64>> {
    let u_count = channels.num_users();
    let noise = channels.noise(n);
    let dim = channels.receiver_dim();
    let mut rates = vec![0.0; u_count];
    let mut cumulative = linalg::zeros(dim, dim);
    // Walk from the last decoded user (cleanest) to the first.
    let mut previous = 0.0;
    for k in (0..u_count).rev() {
        let u = order.sequence()[k];
        cumulative += received_covariance(channels, covs, u, n);
        let total = linalg::logdet_ratio_bits(noise, &cumulative)?;
        rates[u] = total - previous;
        previous = total;
    }
    Ok(rates)
}

/// SIC rates under a single band-wide decoding order.
pub fn sic_rates(channels: &ChannelSet, covs: &CovarianceSet, order: &DecodingOrder) -> Result<RateAllocation> {
    sic_rates_per_subcarrier(channels, covs, std::slice::from_ref(order))
}

/// SIC rates with one order per subcarrier (`orders.len() == N`) or one
/// shared order (`orders.len() == 1`).
pub fn sic_rates_per_subcarrier(
    channels: &ChannelSet,
    covs: &CovarianceSet,
    orders: &[DecodingOrder],
) -> Result<RateAllocation> {
    require_mac(channels, covs)?;
    let n_sc = channels.num_subcarriers();
    if orders.len() != 1 && orders.len() != n_sc {
        return Err(Error::InvalidInput("need one order or one per subcarrier".into()));
    }
    if orders.iter().any(|o| o.len() != channels.num_users()) {
        return Err(Error::InvalidInput("decoding order length differs from user count".into()));
    }
    let mut rates = vec![vec![0.0; n_sc]; channels.num_users()];
    for n in 0..n_sc {
        let order = if orders.len() == 1 { &orders[0] } else { &orders[n] };
        for (u, r) in subcarrier_rates(channels, covs, order, n)?.into_iter().enumerate() {
            rates[u][n] = r;
        }
    }
    RateAllocation::new(rates)
}

/// `log2 |R_nn + Σ_{u∈T} H R H^*| / |R_nn|` on subcarrier `n`.
pub fn subset_capacity(channels: &ChannelSet, covs: &CovarianceSet, subset: &[usize], n: usize) -> Result<f64> {
    require_mac(channels, covs)?;
    if subset.is_empty() || subset.iter().any(|&u| u >= channels.num_users()) {
        return Err(Error::InvalidInput(format!("invalid user subset {subset:?}")));
    }
    let dim = channels.receiver_dim();
    let mut s = linalg::zeros(dim, dim);
    for &u in subset {
        s += received_covariance(channels, covs, u, n);
    }
    linalg::logdet_ratio_bits(channels.noise(n), &s)
}

/// Subset capacity summed over all subcarriers.
pub fn subset_capacity_total(channels: &ChannelSet, covs: &CovarianceSet, subset: &[usize]) -> Result<f64> {
    (0..channels.num_subcarriers())
        .map(|n| subset_capacity(channels, covs, subset, n))
        .sum()
}

/// Sort users by ascending `Σ_n ‖H_{u,n}‖_F²` (weakest first), ties by
/// index. The flag reports whether any two gains are exactly equal.
pub fn channel_gain_order(channels: &ChannelSet) -> (DecodingOrder, bool) {
    let gains: Vec<f64> = (0..channels.num_users()).map(|u| channels.user_gain(u)).collect();
    gain_order(&gains)
}

pub(crate) fn gain_order(gains: &[f64]) -> (DecodingOrder, bool) {
    let mut seq: Vec<usize> = (0..gains.len()).collect();
    seq.sort_by(|&a, &b| gains[a].total_cmp(&gains[b]).then(a.cmp(&b)));
    let tie = seq.windows(2).any(|w| gains[w[0]] == gains[w[1]]);
    (DecodingOrder::from_sequence(seq).expect("sorted indices"), tie)
}
