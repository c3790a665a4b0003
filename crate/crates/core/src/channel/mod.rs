//! Channel realizations: per-subcarrier complex matrices with a per-user
//! partition, a seeded synthetic generator for the fixed-wireless scenario and
//! a versioned binary container.

mod generate;
mod io;
mod pathloss;
mod pattern;
mod scenario;

pub(crate) use generate::user_azimuths;
pub use generate::{generate_channels, receive_snr_linear, reference_tx_power_for_snr, subcarrier_noise_power};
pub use io::{decode_channels, encode_channels, load_channels, save_channels, FORMAT_VERSION};
pub use pathloss::{rma_pathloss, PATHLOSS_EXPONENT, SPEED_OF_LIGHT};
pub use pattern::{element_pattern, BACKLOBE_FLOOR_DB, HALF_POWER_BEAMWIDTH_DEG};
pub use scenario::{AntennaConfig, PolarizationIndicator, ScenarioConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};

/// Which end of the link the matrices describe.
///
/// Broadcast matrices are `n_R × n_T` with users partitioning the rows; the
/// dual multiple-access matrices are `n_T × n_R` with users partitioning the
/// columns. In both cases each subcarrier has a single joint receiver whose
/// dimension is [`ChannelSet::receiver_dim`] for MAC sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkSide {
    Broadcast,
    MultipleAccess,
}

/// A contiguous range along the user axis owned by one user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserBlock {
    pub user: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    side: LinkSide,
    matrices: Vec<CMat>,
    blocks: Vec<UserBlock>,
    /// One matrix shared by every subcarrier, or one per subcarrier.
    noise: Vec<CMat>,
    seed: Option<u64>,
    scenario_hash: [u8; 32],
}

impl ChannelSet {
    /// Builds and validates a channel set. `blocks` lists users in the order
    /// they appear along the user axis.
    pub fn new(
        side: LinkSide,
        matrices: Vec<CMat>,
        blocks: Vec<UserBlock>,
        noise: Vec<CMat>,
    ) -> Result<Self> {
        let set = ChannelSet {
            side,
            matrices,
            blocks,
            noise,
            seed: None,
            scenario_hash: [0; 32],
        };
        set.validate()?;
        Ok(set)
    }

    /// Convenience constructor for users with contiguous blocks in index order.
    pub fn from_user_dims(
        side: LinkSide,
        matrices: Vec<CMat>,
        user_dims: &[usize],
        noise: Vec<CMat>,
    ) -> Result<Self> {
        let mut start = 0;
        let blocks = user_dims
            .iter()
            .enumerate()
            .map(|(user, &len)| {
                let b = UserBlock { user, start, len };
                start += len;
                b
            })
            .collect();
        Self::new(side, matrices, blocks, noise)
    }

    pub fn with_provenance(mut self, seed: Option<u64>, scenario_hash: [u8; 32]) -> Self {
        self.seed = seed;
        self.scenario_hash = scenario_hash;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.matrices.first() else {
            return Err(Error::Validation("channel set has no subcarriers".into()));
        };
        let (rows, cols) = first.shape();
        if self.matrices.iter().any(|m| m.shape() != (rows, cols)) {
            return Err(Error::Validation("subcarrier matrices differ in shape".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::Validation("no users in partition".into()));
        }
        let axis = self.user_axis_len_for(rows, cols);
        let mut seen = vec![false; self.blocks.len()];
        let mut cursor = 0;
        for b in &self.blocks {
            if b.user >= seen.len() || seen[b.user] {
                return Err(Error::Validation(format!(
                    "partition user indices must be a permutation of 0..{}",
                    seen.len()
                )));
            }
            seen[b.user] = true;
            if b.len == 0 || b.start != cursor {
                return Err(Error::Validation(format!(
                    "user {} block must start at {cursor} with positive length",
                    b.user
                )));
            }
            cursor += b.len;
        }
        if cursor != axis {
            return Err(Error::Validation(format!(
                "partition covers {cursor} user dimensions but matrices have {axis}"
            )));
        }
        let rx = self.receiver_dim_for(rows, cols);
        if self.noise.len() != 1 && self.noise.len() != self.matrices.len() {
            return Err(Error::Validation(
                "noise must hold one matrix or one per subcarrier".into(),
            ));
        }
        for noise in &self.noise {
            if noise.shape() != (rx, rx) {
                return Err(Error::Validation(format!(
                    "noise covariance must be {rx}x{rx}, got {:?}",
                    noise.shape()
                )));
            }
            if !linalg::is_hermitian(noise, 1e-10) {
                return Err(Error::Validation("noise covariance is not Hermitian".into()));
            }
            if noise.diagonal().iter().any(|z| !(z.re > 0.0)) {
                return Err(Error::Validation(
                    "noise covariance needs a strictly positive diagonal".into(),
                ));
            }
            linalg::clip_psd(noise, 1e-9)?;
        }
        Ok(())
    }

    fn user_axis_len_for(&self, rows: usize, cols: usize) -> usize {
        match self.side {
            LinkSide::Broadcast => rows,
            LinkSide::MultipleAccess => cols,
        }
    }

    // Both sides keep the receiver on the row axis.
    fn receiver_dim_for(&self, rows: usize, _cols: usize) -> usize {
        rows
    }

    pub fn side(&self) -> LinkSide {
        self.side
    }

    pub fn num_users(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrices(&self) -> &[CMat] {
        &self.matrices
    }

    pub fn matrix(&self, n: usize) -> &CMat {
        &self.matrices[n]
    }

    pub fn blocks(&self) -> &[UserBlock] {
        &self.blocks
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn scenario_hash(&self) -> [u8; 32] {
        self.scenario_hash
    }

    pub fn noise_matrices(&self) -> &[CMat] {
        &self.noise
    }

    pub fn noise(&self, n: usize) -> &CMat {
        if self.noise.len() == 1 {
            &self.noise[0]
        } else {
            &self.noise[n]
        }
    }

    pub fn block_of(&self, user: usize) -> UserBlock {
        *self
            .blocks
            .iter()
            .find(|b| b.user == user)
            .expect("user index out of range")
    }

    /// Antenna count of `user` on the user side (rows on BC, columns on MAC).
    pub fn user_dim(&self, user: usize) -> usize {
        self.block_of(user).len
    }

    /// User dimensions indexed by user.
    pub fn user_dims(&self) -> Vec<usize> {
        (0..self.num_users()).map(|u| self.user_dim(u)).collect()
    }

    /// Total user-side dimension (`n_R`).
    pub fn total_user_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.len).sum()
    }

    /// Base-station dimension (`n_T`).
    pub fn bs_dim(&self) -> usize {
        let (r, c) = self.matrices[0].shape();
        match self.side {
            LinkSide::Broadcast => c,
            LinkSide::MultipleAccess => r,
        }
    }

    /// Dimension of a single joint receiver: `n_R` on BC, `n_T` on MAC.
    pub fn receiver_dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    /// `H_{u,n}`: the user's rows on BC (`n_{R,u} × n_T`) or columns on MAC
    /// (`n_T × n_{R,u}`).
    pub fn user_matrix(&self, user: usize, n: usize) -> CMat {
        let b = self.block_of(user);
        let m = &self.matrices[n];
        match self.side {
            LinkSide::Broadcast => m.rows(b.start, b.len).into_owned(),
            LinkSide::MultipleAccess => m.columns(b.start, b.len).into_owned(),
        }
    }

    /// `Σ_n ‖H_{u,n}‖_F²`.
    pub fn user_gain(&self, user: usize) -> f64 {
        (0..self.num_subcarriers())
            .map(|n| linalg::frobenius_sq(&self.user_matrix(user, n)))
            .sum()
    }

    /// Noise block seen by one user's own antennas on a BC set.
    pub fn user_noise(&self, user: usize, n: usize) -> CMat {
        let b = self.block_of(user);
        let noise = self.noise(n);
        noise.view((b.start, b.start), (b.len, b.len)).into_owned()
    }

    /// Same set with every user's BC rows whitened against its own noise
    /// block, leaving identity noise. Cross-user noise correlation is ignored:
    /// users are separate receivers.
    pub fn whitened_broadcast(&self) -> Result<ChannelSet> {
        if self.side != LinkSide::Broadcast {
            return Err(Error::InvalidInput("whitening expects a broadcast set".into()));
        }
        let mut matrices = self.matrices.clone();
        for (n, m) in matrices.iter_mut().enumerate() {
            for b in &self.blocks {
                let w = linalg::whitening_matrix(&self.user_noise(b.user, n))?;
                let rows = m.rows(b.start, b.len).into_owned();
                m.rows_mut(b.start, b.len).copy_from(&(w * rows));
            }
        }
        let n_r = self.total_user_dim();
        Ok(ChannelSet {
            side: self.side,
            matrices,
            blocks: self.blocks.clone(),
            noise: vec![linalg::identity(n_r)],
            seed: self.seed,
            scenario_hash: self.scenario_hash,
        })
    }

    /// Restrict to a subset of subcarriers (used by per-subcarrier baselines).
    pub fn subcarrier(&self, n: usize) -> ChannelSet {
        ChannelSet {
            side: self.side,
            matrices: vec![self.matrices[n].clone()],
            blocks: self.blocks.clone(),
            noise: vec![self.noise(n).clone()],
            seed: self.seed,
            scenario_hash: self.scenario_hash,
        }
    }

    pub(crate) fn from_parts_unchecked(
        side: LinkSide,
        matrices: Vec<CMat>,
        blocks: Vec<UserBlock>,
        noise: Vec<CMat>,
        seed: Option<u64>,
        scenario_hash: [u8; 32],
    ) -> Self {
        ChannelSet {
            side,
            matrices,
            blocks,
            noise,
            seed,
            scenario_hash,
        }
    }
}
