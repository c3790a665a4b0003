//! Broadcast ↔ multiple-access duality.
//!
//! The downlink (BC) design is solved on its dual uplink (MAC): channels are
//! conjugate-transposed and block-reversed, and MAC covariances are mapped
//! back to BC covariances that achieve the same per-user rates with the same
//! total power.
//!
//! Order convention used throughout the crate: the BC user encoded first is
//! the MAC user decoded last, so the BC encoding order is the MAC decoding
//! order reversed.

use crate::channel::{ChannelSet, LinkSide, UserBlock};
use crate::error::{Error, Result};
use crate::linalg::{self, c64, CMat};
use crate::sic::{CovarianceSet, DecodingOrder, RateAllocation};

/// Block-reversal permutations between the two link representations.
#[derive(Debug, Clone, PartialEq)]
pub struct DualityMaps {
    tx_dims: Vec<usize>,
    rx_dims: Vec<usize>,
    tx_permutation: CMat,
    rx_permutation: CMat,
}

/// `J` with `J · [x_1; …; x_U] = [x_U; …; x_1]` for blocks of sizes `dims`.
fn block_reversal(dims: &[usize]) -> CMat {
    let total: usize = dims.iter().sum();
    let mut j = linalg::zeros(total, total);
    let mut col = 0;
    for (u, &d) in dims.iter().enumerate() {
        let row: usize = dims[u + 1..].iter().sum();
        for i in 0..d {
            j[(row + i, col + i)] = c64(1.0, 0.0);
        }
        col += d;
    }
    j
}

/// Transmit-side reversal `𝒫_T` and receive-side reversal `𝒫_R` for the
/// given per-user block sizes.
pub fn permutation_matrices(tx_dims: &[usize], rx_dims: &[usize]) -> Result<DualityMaps> {
    if tx_dims.is_empty() || rx_dims.is_empty() || tx_dims.iter().chain(rx_dims).any(|&d| d == 0) {
        return Err(Error::InvalidInput("block dimensions must be positive".into()));
    }
    Ok(DualityMaps {
        tx_dims: tx_dims.to_vec(),
        rx_dims: rx_dims.to_vec(),
        tx_permutation: block_reversal(tx_dims),
        rx_permutation: block_reversal(rx_dims).transpose(),
    })
}

impl DualityMaps {
    /// Maps for a BC set with a single co-located transmitter.
    pub fn for_broadcast(bc: &ChannelSet) -> Self {
        permutation_matrices(&[bc.bs_dim()], &bc.user_dims()).expect("channel sets have positive dims")
    }

    pub fn tx_permutation(&self) -> &CMat {
        &self.tx_permutation
    }

    pub fn rx_permutation(&self) -> &CMat {
        &self.rx_permutation
    }

    pub fn tx_dims(&self) -> &[usize] {
        &self.tx_dims
    }

    pub fn rx_dims(&self) -> &[usize] {
        &self.rx_dims
    }

    /// Maps for the reverse direction. Applying [`Self::transform`] with
    /// `self` and then with `self.swapped()` is the identity.
    pub fn swapped(&self) -> Self {
        let mut tx = self.rx_dims.clone();
        tx.reverse();
        let mut rx = self.tx_dims.clone();
        rx.reverse();
        permutation_matrices(&tx, &rx).expect("dims already validated")
    }

    /// `𝒫_T · H^* · 𝒫_R`.
    pub fn transform(&self, h: &CMat) -> Result<CMat> {
        let n_t: usize = self.tx_dims.iter().sum();
        let n_r: usize = self.rx_dims.iter().sum();
        if h.shape() != (n_r, n_t) {
            return Err(Error::InvalidInput(format!(
                "matrix is {}x{}, maps expect {n_r}x{n_t}",
                h.nrows(),
                h.ncols()
            )));
        }
        Ok(&self.tx_permutation * h.adjoint() * &self.rx_permutation)
    }
}

/// Dual MAC channel of a BC set. Each user's rows are whitened against its
/// own noise block first, so the MAC receiver sees identity noise.
pub fn bc_to_mac_channel(bc: &ChannelSet, maps: &DualityMaps) -> Result<ChannelSet> {
    if bc.side() != LinkSide::Broadcast {
        return Err(Error::InvalidInput("expected a broadcast channel set".into()));
    }
    if maps.rx_dims != bc.user_dims() {
        return Err(Error::InvalidInput(format!(
            "maps partition users as {:?}, channels as {:?}",
            maps.rx_dims,
            bc.user_dims()
        )));
    }
    let white = bc.whitened_broadcast()?;
    let matrices = white
        .matrices()
        .iter()
        .map(|h| maps.transform(h))
        .collect::<Result<Vec<_>>>()?;
    // Column blocks come out in reversed user order.
    let mut start = 0;
    let blocks = (0..bc.num_users())
        .rev()
        .map(|user| {
            let len = maps.rx_dims[user];
            let b = UserBlock { user, start, len };
            start += len;
            b
        })
        .collect();
    let n_t = bc.bs_dim();
    let set = ChannelSet::new(LinkSide::MultipleAccess, matrices, blocks, vec![linalg::identity(n_t)])?;
    Ok(set.with_provenance(bc.seed(), bc.scenario_hash()))
}

/// [`bc_to_mac_channel`] with [`DualityMaps::for_broadcast`].
pub fn dual_mac(bc: &ChannelSet) -> Result<ChannelSet> {
    bc_to_mac_channel(bc, &DualityMaps::for_broadcast(bc))
}

/// BC covariances reaching the MAC rates of `mac_covs` under `order`.
pub fn mac_to_bc_covariances(bc: &ChannelSet, mac_covs: &CovarianceSet, order: &DecodingOrder) -> Result<CovarianceSet> {
    mac_to_bc_covariances_per_subcarrier(bc, mac_covs, std::slice::from_ref(order))
}

/// Per-subcarrier variant; `orders` holds one order or one per subcarrier.
pub fn mac_to_bc_covariances_per_subcarrier(
    bc: &ChannelSet,
    mac_covs: &CovarianceSet,
    orders: &[DecodingOrder],
) -> Result<CovarianceSet> {
    if bc.side() != LinkSide::Broadcast {
        return Err(Error::InvalidInput("expected a broadcast channel set".into()));
    }
    let u_count = bc.num_users();
    let n_sc = bc.num_subcarriers();
    if mac_covs.num_users() != u_count || mac_covs.num_subcarriers() != n_sc || mac_covs.dims() != bc.user_dims() {
        return Err(Error::InvalidInput("MAC covariances do not match the channel partition".into()));
    }
    if orders.len() != 1 && orders.len() != n_sc {
        return Err(Error::InvalidInput("need one order or one per subcarrier".into()));
    }
    if orders.iter().any(|o| o.len() != u_count) {
        return Err(Error::InvalidInput("decoding order length differs from user count".into()));
    }
    let white = bc.whitened_broadcast()?;
    let n_t = bc.bs_dim();
    let mut out = Vec::with_capacity(n_sc);
    for n in 0..n_sc {
        let order = if orders.len() == 1 { &orders[0] } else { &orders[n] };
        let h: Vec<CMat> = (0..u_count).map(|u| white.user_matrix(u, n)).collect();
        let mut sigma = vec![linalg::zeros(n_t, n_t); u_count];
        // Users decoded earlier on the MAC are encoded later on the BC, so
        // everything already mapped interferes with the current user.
        let mut bc_interference = linalg::zeros(n_t, n_t);
        for (k, &u) in order.sequence().iter().enumerate() {
            let q = mac_covs.get(u, n);
            if linalg::re_trace(q) == 0.0 {
                continue;
            }
            let mut b = linalg::identity(n_t);
            for &v in order.suffix(k + 1) {
                b += h[v].adjoint() * mac_covs.get(v, n) * &h[v];
            }
            let d = h[u].nrows();
            let a = linalg::identity(d) + &h[u] * &bc_interference * h[u].adjoint();
            let b_is = linalg::herm_inv_sqrt(&b);
            let a_s = linalg::herm_sqrt(&a);
            let a_is = linalg::herm_inv_sqrt(&a);
            let eff = &b_is * h[u].adjoint() * &a_is;
            let svd = eff.svd(true, true);
            let f = svd.u.expect("left vectors requested");
            let g_adj = svd.v_t.expect("right vectors requested");
            let t = &b_is * f * g_adj * &a_s;
            let s = linalg::hermitian_part(&(&t * q * t.adjoint()));
            bc_interference += &s;
            sigma[u] = s;
        }
        out.push(sigma);
    }
    Ok(CovarianceSet::from_parts_unchecked(
        LinkSide::Broadcast,
        vec![n_t; u_count],
        out,
    ))
}

/// Dirty-paper rates on a BC set. `encoding` lists users from first
/// encoded (sees every later user as interference) to last (clean).
pub fn bc_dpc_rates(bc: &ChannelSet, covs: &CovarianceSet, encoding: &DecodingOrder) -> Result<RateAllocation> {
    if bc.side() != LinkSide::Broadcast {
        return Err(Error::InvalidInput("expected a broadcast channel set".into()));
    }
    let u_count = bc.num_users();
    let n_sc = bc.num_subcarriers();
    if covs.num_users() != u_count || covs.num_subcarriers() != n_sc || encoding.len() != u_count {
        return Err(Error::InvalidInput("covariances or order do not match the channel set".into()));
    }
    let n_t = bc.bs_dim();
    if covs.dims().iter().any(|&d| d != n_t) {
        return Err(Error::InvalidInput(format!("BC covariances must be {n_t}x{n_t}")));
    }
    let mut rates = vec![vec![0.0; n_sc]; u_count];
    for n in 0..n_sc {
        let mut later = linalg::zeros(n_t, n_t);
        for &u in encoding.sequence().iter().rev() {
            let h = bc.user_matrix(u, n);
            let noise = bc.user_noise(u, n);
            let with = &later + covs.get(u, n);
            let full = linalg::logdet_ratio_bits(&noise, &(&h * &with * h.adjoint()))?;
            let rest = linalg::logdet_ratio_bits(&noise, &(&h * &later * h.adjoint()))?;
            rates[u][n] = full - rest;
            later = with;
        }
    }
    RateAllocation::new(rates)
}
