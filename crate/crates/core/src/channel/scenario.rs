use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Polarization indicator as configured for the base-station array. Stored
/// and persisted, but channels are always realized single-polarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolarizationIndicator(pub u8);

/// Base-station panel description (3GPP 3D element model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntennaConfig {
    /// Vertical elements per port.
    #[serde(default = "defaults::vertical_elements")]
    pub vertical_elements: usize,
    #[serde(default = "defaults::horizontal_elements")]
    pub horizontal_elements: usize,
    #[serde(default = "defaults::polarization")]
    pub polarization_indicator: PolarizationIndicator,
    /// Electric downtilt in degrees below the horizon.
    #[serde(default = "defaults::downtilt")]
    pub electric_downtilt: f64,
    /// Element spacing in wavelengths.
    #[serde(default = "defaults::spacing")]
    pub element_spacing: f64,
    /// Element gain at boresight, dBi.
    #[serde(default = "defaults::bs_gain")]
    pub boresight_gain: f64,
}

impl Default for AntennaConfig {
    fn default() -> Self {
        AntennaConfig {
            vertical_elements: defaults::vertical_elements(),
            horizontal_elements: defaults::horizontal_elements(),
            polarization_indicator: defaults::polarization(),
            electric_downtilt: defaults::downtilt(),
            element_spacing: defaults::spacing(),
            boresight_gain: defaults::bs_gain(),
        }
    }
}

impl AntennaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vertical_elements < 1 || self.horizontal_elements < 1 {
            return Err(Error::Config("antenna element counts must be >= 1".into()));
        }
        if !(self.element_spacing > 0.0) || !self.element_spacing.is_finite() {
            return Err(Error::Config("element_spacing must be positive".into()));
        }
        if !self.boresight_gain.is_finite() || !self.electric_downtilt.is_finite() {
            return Err(Error::Config("antenna gains and tilt must be finite".into()));
        }
        Ok(())
    }
}

/// Physical scenario. Every field defaults to the reference deployment
/// (3 single-antenna homes at 500 m from a 2-port, 30 m mast, 100 MHz at
/// 3.5 GHz over 64 subcarriers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "defaults::num_users")]
    pub num_users: usize,
    /// `n_T`, horizontal ports at the base station.
    #[serde(default = "defaults::bs_antennas")]
    pub bs_antennas: usize,
    /// `n_{R,u}` per user.
    #[serde(default = "defaults::user_antennas")]
    pub user_antennas: Vec<usize>,
    #[serde(default = "defaults::bs_height")]
    pub bs_height: f64,
    #[serde(default = "defaults::ue_height")]
    pub ue_height: f64,
    /// Ground distance of each user from the mast, meters.
    #[serde(default = "defaults::distances")]
    pub distances: Vec<f64>,
    /// Hz.
    #[serde(default = "defaults::bandwidth")]
    pub bandwidth: f64,
    /// Hz.
    #[serde(default = "defaults::carrier_freq")]
    pub carrier_freq: f64,
    #[serde(default = "defaults::num_subcarriers")]
    pub num_subcarriers: usize,
    /// Total transmit power, dBm.
    #[serde(default = "defaults::transmit_power")]
    pub transmit_power: f64,
    /// Noise power spectral density, dBm/Hz.
    #[serde(default = "defaults::noise_psd")]
    pub noise_psd: f64,
    #[serde(default = "defaults::bs_gain")]
    pub bs_gain: f64,
    #[serde(default = "defaults::ue_gain")]
    pub ue_gain: f64,
    #[serde(default)]
    pub antenna: AntennaConfig,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    /// Azimuth of each user relative to boresight, degrees. Drawn uniformly
    /// from `±azimuth_sector` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub azimuths: Option<Vec<f64>>,
    #[serde(default = "defaults::azimuth_sector")]
    pub azimuth_sector: f64,
    /// RMS azimuth offset of the scattered taps around each user, degrees.
    #[serde(default = "defaults::angular_spread")]
    pub angular_spread: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_users: defaults::num_users(),
            bs_antennas: defaults::bs_antennas(),
            user_antennas: defaults::user_antennas(),
            bs_height: defaults::bs_height(),
            ue_height: defaults::ue_height(),
            distances: defaults::distances(),
            bandwidth: defaults::bandwidth(),
            carrier_freq: defaults::carrier_freq(),
            num_subcarriers: defaults::num_subcarriers(),
            transmit_power: defaults::transmit_power(),
            noise_psd: defaults::noise_psd(),
            bs_gain: defaults::bs_gain(),
            ue_gain: defaults::ue_gain(),
            antenna: AntennaConfig::default(),
            seed: defaults::seed(),
            azimuths: None,
            azimuth_sector: defaults::azimuth_sector(),
            angular_spread: defaults::angular_spread(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let u = self.num_users;
        if u < 1 || self.bs_antennas < 1 || self.num_subcarriers < 1 {
            return Err(Error::Config(
                "num_users, bs_antennas and num_subcarriers must be >= 1".into(),
            ));
        }
        if self.user_antennas.len() != u || self.distances.len() != u {
            return Err(Error::Config(format!(
                "user_antennas ({}) and distances ({}) must both have num_users = {u} entries",
                self.user_antennas.len(),
                self.distances.len()
            )));
        }
        if self.user_antennas.iter().any(|&n| n < 1) {
            return Err(Error::Config("every user needs at least one antenna".into()));
        }
        if self.distances.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::Config("distances must be positive".into()));
        }
        if !(self.bandwidth > 0.0) || !(self.carrier_freq > 0.0) {
            return Err(Error::Config("bandwidth and carrier_freq must be positive".into()));
        }
        if !(self.bs_height > 0.0) || !(self.ue_height > 0.0) {
            return Err(Error::Config("heights must be positive".into()));
        }
        if let Some(az) = &self.azimuths {
            if az.len() != u {
                return Err(Error::Config("azimuths must have num_users entries".into()));
            }
            if az.iter().any(|a| !(-180.0..=180.0).contains(a)) {
                return Err(Error::Config("azimuths must lie in [-180, 180]".into()));
            }
        }
        if !(self.azimuth_sector >= 0.0 && self.azimuth_sector <= 180.0) {
            return Err(Error::Config("azimuth_sector must lie in [0, 180]".into()));
        }
        if !(self.angular_spread >= 0.0) {
            return Err(Error::Config("angular_spread must be non-negative".into()));
        }
        self.antenna.validate()
    }

    /// Resize the per-user lists to `num_users`, repeating the last entry.
    pub fn with_num_users(mut self, num_users: usize) -> Self {
        fn resize<T: Clone>(v: &mut Vec<T>, n: usize) {
            let last = v.last().cloned();
            if let Some(last) = last {
                v.resize(n, last);
            }
        }
        self.num_users = num_users;
        resize(&mut self.user_antennas, num_users);
        resize(&mut self.distances, num_users);
        if let Some(az) = self.azimuths.as_mut() {
            resize(az, num_users);
        }
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario always serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }

    pub fn wavelength(&self) -> f64 {
        super::SPEED_OF_LIGHT / self.carrier_freq
    }
}

mod defaults {
    use super::PolarizationIndicator;

    pub fn num_users() -> usize {
        3
    }
    pub fn bs_antennas() -> usize {
        2
    }
    pub fn user_antennas() -> Vec<usize> {
        vec![1; 3]
    }
    pub fn bs_height() -> f64 {
        30.0
    }
    pub fn ue_height() -> f64 {
        6.0
    }
    pub fn distances() -> Vec<f64> {
        vec![500.0; 3]
    }
    pub fn bandwidth() -> f64 {
        100e6
    }
    pub fn carrier_freq() -> f64 {
        3.5e9
    }
    pub fn num_subcarriers() -> usize {
        64
    }
    pub fn transmit_power() -> f64 {
        50.0
    }
    pub fn noise_psd() -> f64 {
        -174.0
    }
    pub fn bs_gain() -> f64 {
        13.0
    }
    pub fn ue_gain() -> f64 {
        0.0
    }
    pub fn seed() -> u64 {
        1
    }
    pub fn vertical_elements() -> usize {
        4
    }
    pub fn horizontal_elements() -> usize {
        2
    }
    pub fn polarization() -> PolarizationIndicator {
        PolarizationIndicator(4)
    }
    pub fn downtilt() -> f64 {
        12.0
    }
    pub fn spacing() -> f64 {
        0.5
    }
    pub fn azimuth_sector() -> f64 {
        60.0
    }
    pub fn angular_spread() -> f64 {
        5.0
    }
}
