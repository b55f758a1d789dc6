//! Generative large-scale channel model.
//!
//! One draw of the model yields, for a TX-RX pair at distance `d`, a link
//! state (LOS / NLOS / outage), an omnidirectional path loss with lognormal
//! shadowing, and a set of path clusters with power fractions, central
//! angles and rms angular spreads.  All samplers take an explicit RNG so a
//! fixed seed reproduces the draw bit-exactly.

use crate::error::{Error, Result};
use crate::params::BandParameters;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use std::f64::consts::TAU;

/// Condition of a TX-RX link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkState {
    Los,
    Nlos,
    /// No detectable path; path loss is infinite.
    Outage,
}

/// One path cluster of a link.  Angles in radians, azimuths in [0, 2π).
#[derive(Debug, Clone, PartialEq)]
pub struct PathCluster {
    /// Fraction of the link's total power carried by this cluster, in (0, 1].
    pub power_fraction: f64,
    pub aod_az: f64,
    pub aod_el: f64,
    pub aoa_az: f64,
    pub aoa_el: f64,
    /// rms angular spreads, radians.
    pub spread_aod_az: f64,
    pub spread_aod_el: f64,
    pub spread_aoa_az: f64,
    pub spread_aoa_el: f64,
}

/// One large-scale draw of a TX-RX link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkRealization {
    pub distance: f64,
    pub state: LinkState,
    /// Omnidirectional path loss in dB, shadowing included.  Infinite in outage.
    pub omni_path_loss: f64,
    /// Empty exactly when the link is in outage.
    pub clusters: Vec<PathCluster>,
}

impl LinkRealization {
    /// Total linear power gain of the link, `10^(-PL/10)`.  Zero in outage.
    pub fn linear_gain(&self) -> f64 {
        if self.state == LinkState::Outage {
            0.0
        } else {
            10f64.powf(-0.1 * self.omni_path_loss)
        }
    }
}

/// Optional forcing knobs for [`sample_link`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LinkOverrides {
    /// Force the link state instead of drawing it.
    pub force_state: Option<LinkState>,
    /// Evaluate the outage curve at `d + d_shift`, moving blockage onset closer.
    pub d_shift: f64,
    /// Reassign all LOS probability mass to NLOS.
    pub suppress_los: bool,
}

/// State probabilities `(p_out, p_los, p_nlos)` at distance `d`.
///
/// The three values are in [0, 1] and sum to 1 exactly: the NLOS term is
/// defined as the complement of the other two.
pub fn link_state_probabilities(d: f64, band: &BandParameters) -> (f64, f64, f64) {
    link_state_probabilities_shifted(d, 0.0, band)
}

/// State probabilities with the outage curve shifted `shift` meters closer:
/// only `p_out` is evaluated at `d + shift`; the LOS decay keeps the true
/// distance.
pub fn link_state_probabilities_shifted(
    d: f64,
    shift: f64,
    band: &BandParameters,
) -> (f64, f64, f64) {
    debug_assert!(d >= 0.0);
    let p_out = (1.0 - (-band.a_out * (d + shift) + band.b_out).exp()).max(0.0);
    let p_los = (1.0 - p_out) * (-band.a_los * d).exp();
    let p_nlos = 1.0 - p_out - p_los;
    (p_out, p_los.min(1.0), p_nlos.max(0.0))
}

/// Smallest distance beyond which the outage probability is positive,
/// `b_out / a_out`.
pub fn outage_onset_distance(band: &BandParameters) -> f64 {
    band.b_out / band.a_out
}

/// Categorical draw of the link state at distance `d`.
pub fn sample_link_state<R: Rng + ?Sized>(d: f64, band: &BandParameters, rng: &mut R) -> LinkState {
    let (p_out, p_los, _) = link_state_probabilities(d, band);
    let u: f64 = rng.gen();
    if u < p_out {
        LinkState::Outage
    } else if u < p_out + p_los {
        LinkState::Los
    } else {
        LinkState::Nlos
    }
}

/// Median path loss `α + 10 β log10(d)` in dB for the given state.
pub fn median_path_loss(d: f64, state: LinkState, band: &BandParameters) -> Result<f64> {
    let (alpha, beta) = match state {
        LinkState::Los => (band.los_alpha, band.los_beta),
        LinkState::Nlos => (band.nlos_alpha, band.nlos_beta),
        LinkState::Outage => return Err(Error::OutageLink),
    };
    Ok(alpha + 10.0 * beta * d.log10())
}

/// Path loss draw: median plus a zero-mean Gaussian shadowing term with the
/// state's σ.  Shadowing is i.i.d. across calls.
pub fn sample_path_loss<R: Rng + ?Sized>(
    d: f64,
    state: LinkState,
    band: &BandParameters,
    rng: &mut R,
) -> Result<f64> {
    let median = median_path_loss(d, state, band)?;
    let sigma = match state {
        LinkState::Los => band.los_sigma,
        LinkState::Nlos => band.nlos_sigma,
        LinkState::Outage => unreachable!(),
    };
    let shadow = if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("sigma > 0").sample(rng)
    } else {
        0.0
    };
    Ok(median + shadow)
}

/// Cluster count draw, `K = max(Poisson(λ), 1)`.
pub fn sample_num_clusters<R: Rng + ?Sized>(band: &BandParameters, rng: &mut R) -> usize {
    let k = Poisson::new(band.lambda_k).expect("lambda > 0").sample(rng);
    (k as usize).max(1)
}

/// Cluster power fractions for `K` clusters.
///
/// Unnormalized weights are `U_k^(r_τ - 1) · 10^(-0.1 Z_k)` with
/// `U_k ~ U[0,1]` and `Z_k ~ N(0, ζ²)`; the returned fractions are those
/// weights normalized to unit sum.
pub fn sample_cluster_power_fractions<R: Rng + ?Sized>(
    k: usize,
    band: &BandParameters,
    rng: &mut R,
) -> Vec<f64> {
    assert!(k >= 1);
    let mut w: Vec<f64> = (0..k)
        .map(|_| {
            let u: f64 = rng.gen();
            let z = if band.zeta > 0.0 {
                Normal::new(0.0, band.zeta).expect("zeta > 0").sample(rng)
            } else {
                0.0
            };
            u.powf(band.r_tau - 1.0) * 10f64.powf(-0.1 * z)
        })
        .collect();
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        for x in &mut w {
            *x /= sum;
        }
    } else {
        // All weights underflowed to zero; fall back to an even split.
        w.iter_mut().for_each(|x| *x = 1.0 / k as f64);
    }
    w
}

/// Exponential draw with the given mean; a zero mean yields exactly zero.
fn sample_exponential_spread<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if mean <= 0.0 {
        0.0
    } else {
        let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        -mean * u.ln()
    }
}

/// Central angles and rms spreads for `k` clusters.
///
/// Azimuths are drawn i.i.d. uniform on [0, 2π) independently at the BS and
/// UE; elevation central angles equal the geometric LOS elevation seen from
/// each end (`-los_elevation` at the BS looking down, `+los_elevation` at
/// the UE looking up).  Spreads are exponential with the card's mean,
/// converted from degrees to radians.
pub fn sample_cluster_geometry<R: Rng + ?Sized>(
    k: usize,
    los_elevation: f64,
    band: &BandParameters,
    rng: &mut R,
) -> Vec<PathCluster> {
    assert!(k >= 1);
    let deg = std::f64::consts::PI / 180.0;
    (0..k)
        .map(|_| {
            let aod_az = rng.gen::<f64>() * TAU;
            let aoa_az = rng.gen::<f64>() * TAU;
            PathCluster {
                power_fraction: 1.0 / k as f64,
                aod_az,
                aod_el: -los_elevation,
                aoa_az,
                aoa_el: los_elevation,
                spread_aod_az: sample_exponential_spread(band.bs_az_spread_mean * deg, rng),
                spread_aod_el: sample_exponential_spread(band.bs_el_spread_mean * deg, rng),
                spread_aoa_az: sample_exponential_spread(band.ue_az_spread_mean * deg, rng),
                spread_aoa_el: sample_exponential_spread(band.ue_el_spread_mean * deg, rng),
            }
        })
        .collect()
}

/// One full large-scale link draw: state, shadowed path loss, clusters.
pub fn sample_link<R: Rng + ?Sized>(
    d: f64,
    los_elevation: f64,
    band: &BandParameters,
    rng: &mut R,
    overrides: LinkOverrides,
) -> Result<LinkRealization> {
    assert!(d > 0.0, "distance must be positive");
    let state = match overrides.force_state {
        Some(s) => s,
        None => {
            let (p_out, p_los, _) =
                link_state_probabilities_shifted(d, overrides.d_shift, band);
            let p_los = if overrides.suppress_los { 0.0 } else { p_los };
            let u: f64 = rng.gen();
            if u < p_out {
                LinkState::Outage
            } else if u < p_out + p_los {
                LinkState::Los
            } else {
                LinkState::Nlos
            }
        }
    };
    if state == LinkState::Outage {
        return Ok(LinkRealization {
            distance: d,
            state,
            omni_path_loss: f64::INFINITY,
            clusters: Vec::new(),
        });
    }
    let pl = sample_path_loss(d, state, band, rng)?;
    let k = sample_num_clusters(band, rng);
    let fractions = sample_cluster_power_fractions(k, band, rng);
    let mut clusters = sample_cluster_geometry(k, los_elevation, band, rng);
    for (c, f) in clusters.iter_mut().zip(&fractions) {
        c.power_fraction = *f;
    }
    Ok(LinkRealization {
        distance: d,
        state,
        omni_path_loss: pl,
        clusters,
    })
}

/// 3GPP UMi hexagonal-deployment path loss,
/// `22.7 + 36.7 log10(d) + 26 log10(f_c)` dB, used as a comparison baseline.
pub fn umi_path_loss(d: f64, fc_ghz: f64) -> f64 {
    assert!(d > 0.0 && fc_ghz > 0.0);
    22.7 + 36.7 * d.log10() + 26.0 * fc_ghz.log10()
}

/// LOS elevation angle (radians, at the UE looking toward the BS) for the
/// given antenna heights and horizontal distance.
pub fn los_elevation(bs_height: f64, ue_height: f64, d: f64) -> f64 {
    ((bs_height - ue_height) / d.max(1e-9)).atan()
}
