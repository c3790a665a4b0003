use super::AntennaConfig;
use crate::error::{Error, Result};

/// 3 dB beamwidth of the element, both planes, degrees.
pub const HALF_POWER_BEAMWIDTH_DEG: f64 = 65.0;
/// Front-to-back ratio and vertical side-lobe limit, dB.
pub const BACKLOBE_FLOOR_DB: f64 = 30.0;

/// 3GPP 3D element gain in dBi toward (`zenith`, `azimuth`), both degrees.
///
/// Zenith is measured from the vertical (90° is the horizon); the pattern
/// peaks at `90 + electric_downtilt`.
pub fn element_pattern(zenith: f64, azimuth: f64, config: &AntennaConfig) -> Result<f64> {
    if !(0.0..=180.0).contains(&zenith) || !(-180.0..=180.0).contains(&azimuth) {
        return Err(Error::InvalidInput(format!(
            "angles out of range: zenith {zenith}, azimuth {azimuth}"
        )));
    }
    let vertical = {
        let off = (zenith - 90.0 - config.electric_downtilt) / HALF_POWER_BEAMWIDTH_DEG;
        -(12.0 * off * off).min(BACKLOBE_FLOOR_DB)
    };
    let horizontal = {
        let off = azimuth / HALF_POWER_BEAMWIDTH_DEG;
        -(12.0 * off * off).min(BACKLOBE_FLOOR_DB)
    };
    Ok(config.boresight_gain - (-(vertical + horizontal)).min(BACKLOBE_FLOOR_DB))
}
