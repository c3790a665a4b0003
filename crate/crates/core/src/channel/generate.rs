//! Seeded synthetic realizations of the fixed-wireless downlink.
//!
//! Each user row block is
//!
//! ```text
//! H_u[n] = a_u · v(θ_u) · Σ_l c_{u,l} · e^{-j2π n l / N} · s(θ_u, φ_u + δ_{u,l})ᵀ
//! ```
//!
//! with `a_u` the large-scale amplitude (path loss, element pattern toward
//! the user and terminal gain), `v` the normalized vertical sub-array factor
//! of each port (electric tilt as a phase progression), `s` the horizontal
//! steering vector across the `n_T` ports, and `c_{u,l}` circularly
//! symmetric Gaussian taps on an 8-tap exponential delay profile (3 dB/tap).
//! Every tap leaves at a small azimuth offset `δ_{u,l}` so co-located users
//! see correlated, but not identical, spatial signatures.
//!
//! Randomness is drawn from ChaCha8 streams keyed by (seed, user) so a user's
//! realization does not depend on how many other users or ports exist.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{element_pattern, rma_pathloss, ChannelSet, LinkSide, ScenarioConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, c64};

pub(crate) const NUM_TAPS: usize = 8;
pub(crate) const TAP_DECAY_DB: f64 = 3.0;

/// Noise power per subcarrier in watts.
pub fn subcarrier_noise_power(scenario: &ScenarioConfig) -> f64 {
    let dbm = scenario.noise_psd + 10.0 * (scenario.bandwidth / scenario.num_subcarriers as f64).log10();
    10f64.powf((dbm - 30.0) / 10.0)
}

fn tap_powers() -> [f64; NUM_TAPS] {
    let mut p = [0.0; NUM_TAPS];
    for (l, v) in p.iter_mut().enumerate() {
        *v = 10f64.powf(-TAP_DECAY_DB * l as f64 / 10.0);
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

fn complex_gaussian(rng: &mut ChaCha8Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64(s * re, s * im)
}

fn wrap_degrees(a: f64) -> f64 {
    let mut x = (a + 180.0).rem_euclid(360.0) - 180.0;
    if x == -180.0 && a > 0.0 {
        x = 180.0;
    }
    x
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// User azimuths in degrees: the configured ones, or uniform draws.
pub(crate) fn user_azimuths(scenario: &ScenarioConfig) -> Vec<f64> {
    if let Some(az) = &scenario.azimuths {
        return az.clone();
    }
    let mut rng = stream(scenario.seed, 0);
    (0..scenario.num_users)
        .map(|_| {
            let x: f64 = rng.random();
            (2.0 * x - 1.0) * scenario.azimuth_sector
        })
        .collect()
}

/// Generate the broadcast channel set for a scenario. Pure in `scenario`.
pub fn generate_channels(scenario: &ScenarioConfig) -> Result<ChannelSet> {
    scenario.validate()?;
    let n_sc = scenario.num_subcarriers;
    let n_t = scenario.bs_antennas;
    let n_r: usize = scenario.user_antennas.iter().sum();
    let spacing = scenario.antenna.element_spacing;
    let taps = tap_powers();
    let azimuths = user_azimuths(scenario);

    let mut matrices = vec![linalg::zeros(n_r, n_t); n_sc];
    let mut row = 0;
    for u in 0..scenario.num_users {
        let d = scenario.distances[u];
        let zenith = 90.0 + (scenario.bs_height - scenario.ue_height).atan2(d).to_degrees();
        if !(0.0..=180.0).contains(&zenith) {
            return Err(Error::Config(format!("user {u} geometry gives zenith {zenith}")));
        }
        let azimuth = azimuths[u];
        let pattern = element_pattern(zenith, azimuth, &scenario.antenna)?;
        let pl = rma_pathloss(d, scenario.bs_height, scenario.ue_height, scenario.carrier_freq)?;
        let amplitude = 10f64.powf((pattern - pl + scenario.ue_gain) / 20.0);

        // Vertical sub-array factor, normalized to 1 at the tilt direction.
        let tilt_cos = (90.0 + scenario.antenna.electric_downtilt).to_radians().cos();
        let a_v = scenario.antenna.vertical_elements;
        let phase = 2.0 * std::f64::consts::PI * spacing * (zenith.to_radians().cos() - tilt_cos);
        let vertical = (0..a_v)
            .map(|k| Complex64::from_polar(1.0, phase * k as f64))
            .sum::<Complex64>()
            / a_v as f64;

        let mut rng = stream(scenario.seed, 1 + u as u64);
        let offsets: Vec<f64> = (0..NUM_TAPS)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                wrap_degrees(azimuth + scenario.angular_spread * z)
            })
            .collect();
        // Steering per tap across the horizontal ports.
        let sin_z = zenith.to_radians().sin();
        let steering: Vec<Vec<Complex64>> = offsets
            .iter()
            .map(|&az| {
                let k = 2.0 * std::f64::consts::PI * spacing * sin_z * az.to_radians().sin();
                (0..n_t).map(|m| Complex64::from_polar(1.0, k * m as f64)).collect()
            })
            .collect();

        for _ in 0..scenario.user_antennas[u] {
            let gains: Vec<Complex64> = taps.iter().map(|&p| complex_gaussian(&mut rng, p)).collect();
            for (n, h) in matrices.iter_mut().enumerate() {
                for (l, g) in gains.iter().enumerate() {
                    let delay = Complex64::from_polar(
                        1.0,
                        -2.0 * std::f64::consts::PI * (n * l) as f64 / n_sc as f64,
                    );
                    let coef = *g * delay * vertical * amplitude;
                    for m in 0..n_t {
                        h[(row, m)] += coef * steering[l][m];
                    }
                }
            }
            row += 1;
        }
    }

    let sigma2 = subcarrier_noise_power(scenario);
    let noise = linalg::identity(n_r).scale(sigma2);
    let set = ChannelSet::from_user_dims(LinkSide::Broadcast, matrices, &scenario.user_antennas, vec![noise])?;
    Ok(set.with_provenance(Some(scenario.seed), scenario.hash()))
}

/// Receive SNR (linear) of `reference_user` on a broadcast set when `power`
/// watts are spread evenly over all subcarriers and base-station ports.
pub fn receive_snr_linear(channels: &ChannelSet, power: f64, reference_user: usize) -> f64 {
    let n_sc = channels.num_subcarriers() as f64;
    let n_t = channels.bs_dim() as f64;
    let signal = power / (n_sc * n_t) * channels.user_gain(reference_user);
    let noise: f64 = (0..channels.num_subcarriers())
        .map(|n| linalg::re_trace(&channels.user_noise(reference_user, n)))
        .sum();
    signal / noise
}

/// Transmit power (watts) that puts `reference_user` at `snr_db`.
pub fn reference_tx_power_for_snr(channels: &ChannelSet, snr_db: f64, reference_user: usize) -> Result<f64> {
    let unit = receive_snr_linear(channels, 1.0, reference_user);
    if !(unit > 0.0) {
        return Err(Error::InvalidInput(format!(
            "reference user {reference_user} has a zero channel"
        )));
    }
    Ok(10f64.powf(snr_db / 10.0) / unit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_dimensions() {
        let set = generate_channels(&ScenarioConfig::default()).unwrap();
        assert_eq!(set.num_subcarriers(), 64);
        assert!(set.matrices().iter().all(|m| m.shape() == (3, 2)));
        assert_eq!(set.user_dims(), vec![1, 1, 1]);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = ScenarioConfig::default();
        assert_eq!(generate_channels(&cfg).unwrap(), generate_channels(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 2;
        assert_ne!(generate_channels(&cfg).unwrap(), generate_channels(&other).unwrap());
    }

    #[test]
    fn transmit_power_does_not_touch_channels() {
        let cfg = ScenarioConfig::default();
        let mut louder = cfg.clone();
        louder.transmit_power += 20.0;
        let a = generate_channels(&cfg).unwrap();
        let b = generate_channels(&louder).unwrap();
        assert_eq!(a.matrices(), b.matrices());
        assert_eq!(a.noise_matrices(), b.noise_matrices());
    }

    #[test]
    fn doubling_distance_lowers_every_row_norm_on_average() {
        let mut near = vec![0.0; 3];
        let mut far = vec![0.0; 3];
        for seed in 0..100 {
            let cfg = ScenarioConfig { seed, ..Default::default() };
            let mut cfg2 = cfg.clone();
            cfg2.distances.iter_mut().for_each(|d| *d *= 2.0);
            let a = generate_channels(&cfg).unwrap();
            let b = generate_channels(&cfg2).unwrap();
            for u in 0..3 {
                near[u] += a.user_gain(u);
                far[u] += b.user_gain(u);
            }
        }
        for u in 0..3 {
            assert!(far[u] < near[u], "user {u}: {} !< {}", far[u], near[u]);
        }
    }

    #[test]
    fn noise_matches_table_budget() {
        let cfg = ScenarioConfig::default();
        let total = subcarrier_noise_power(&cfg) * cfg.num_subcarriers as f64;
        let dbm = 10.0 * total.log10() + 30.0;
        assert!((dbm + 94.0).abs() < 1e-9);
    }

    #[test]
    fn users_keep_their_draws_when_ports_change() {
        let cfg = ScenarioConfig::default();
        let mut wide = cfg.clone();
        wide.bs_antennas = 4;
        let a = generate_channels(&cfg).unwrap();
        let b = generate_channels(&wide).unwrap();
        // Port 0 carries no steering phase, so it is unchanged.
        for n in 0..cfg.num_subcarriers {
            for r in 0..3 {
                assert_eq!(a.matrix(n)[(r, 0)], b.matrix(n)[(r, 0)]);
            }
        }
    }

    #[test]
    fn snr_power_inverts() {
        let set = generate_channels(&ScenarioConfig::default()).unwrap();
        let p = reference_tx_power_for_snr(&set, 30.0, 0).unwrap();
        let snr = receive_snr_linear(&set, p, 0);
        assert!((10.0 * snr.log10() - 30.0).abs() < 1e-9);
    }
}
