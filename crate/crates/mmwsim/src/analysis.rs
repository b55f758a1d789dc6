//! Link-level beamforming statistics over random link draws: serving and
//! interfering eigen-beam gains and low-rank energy-capture fractions.

use crate::channel::{los_elevation, sample_link, LinkOverrides, LinkState};
use crate::error::Result;
use crate::mimo::{
    beamforming_vectors, bf_gain_long_term, covariances, power_fraction, synthesize_subpaths,
    ArrayGeometry, SpatialCovariancePair,
};
use crate::params::BandParameters;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// One random link's beamforming figures, all in dB except `phi`.
#[derive(Debug, Clone)]
pub struct BfSample {
    /// Serving-beam RX/TX/total long-term gains over the omnidirectional
    /// average.
    pub rx_db: f64,
    pub tx_db: f64,
    pub total_db: f64,
    /// Gains when an independent same-distance link's eigenbeams are applied
    /// to this link.
    pub rx_interf_db: f64,
    pub tx_interf_db: f64,
    /// Energy fraction captured by rank r = 1..=4 at both ends.
    pub phi: [f64; 4],
}

/// Draw a non-outage link at distance `d` together with its sector-visible
/// covariances.  Infinite front-to-back isolation at the BS panel (boresight
/// az = 0): departure directions behind the sector do not couple, and a link
/// whose every subpath lands behind the panel is invisible, so the draw
/// conditions on at least one coupled subpath.
fn draw_visible_link<R: Rng + ?Sized>(
    d: f64,
    band: &BandParameters,
    ue: &ArrayGeometry,
    bs: &ArrayGeometry,
    rng: &mut R,
) -> Result<SpatialCovariancePair> {
    loop {
        let link = sample_link(
            d,
            los_elevation(10.0, 2.0, d),
            band,
            rng,
            LinkOverrides::default(),
        )?;
        if link.state == LinkState::Outage {
            continue;
        }
        let mut sub = synthesize_subpaths(&link, 20, rng)?;
        sub.subpaths.retain(|s| s.aod_az.cos() > 0.0);
        if !sub.subpaths.is_empty() {
            return Ok(covariances(&sub, ue, bs));
        }
    }
}

fn gain_over_omni(q: &DMatrix<Complex64>, v: &DVector<Complex64>) -> f64 {
    let trace: f64 = q.diagonal().iter().map(|x| x.re).sum();
    let qf = (v.adjoint() * q * v)[(0, 0)].re.max(0.0);
    10.0 * (qf / (trace / q.nrows() as f64)).log10()
}

/// Draw `n` independent links (distance uniform on [10, 200] m, conditioned
/// non-outage) and evaluate their beamforming statistics.  Deterministic in
/// `seed` and thread count.
pub fn bf_statistics(
    band: &BandParameters,
    bs_array: &ArrayGeometry,
    ue_array: &ArrayGeometry,
    n: usize,
    seed: u64,
) -> Result<Vec<BfSample>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            // Uniform over the annulus area (pdf proportional to d), the
            // distance law of a UE dropped uniformly around a site.
            let (d_min2, d_max2) = (10.0f64.powi(2), 200.0f64.powi(2));
            let d = (d_min2 + rng.gen::<f64>() * (d_max2 - d_min2)).sqrt();
            let cov = draw_visible_link(d, band, ue_array, bs_array, &mut rng)?;
            let (rx_db, tx_db, total_db) = bf_gain_long_term(&cov)?;
            let mut phi = [0.0; 4];
            for (r, slot) in phi.iter_mut().enumerate() {
                *slot = power_fraction(&cov, r + 1)?;
            }
            // Elevation-matched interferer: independent link, same distance.
            let other_cov = draw_visible_link(d, band, ue_array, bs_array, &mut rng)?;
            let (v_ue, v_bs) = beamforming_vectors(&other_cov)?;
            Ok(BfSample {
                rx_db,
                tx_db,
                total_db,
                rx_interf_db: gain_over_omni(&cov.q_rx, &v_ue),
                tx_interf_db: gain_over_omni(&cov.q_tx, &v_bs),
                phi,
            })
        })
        .collect()
}

/// Median of a sample (average of the two central order statistics).
pub fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Standard normal CDF via the Abramowitz–Stegun 7.1.26 erf approximation
/// (absolute error < 1.5e-7), enough for plotted model-CDF columns.
pub fn normal_cdf(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * z.abs());
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-z * z).exp();
    let erf = if z < 0.0 { -erf } else { erf };
    0.5 * (1.0 + erf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_basics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-7);
        assert!((normal_cdf(1.0) - 0.8413447).abs() < 1e-6);
        assert!((normal_cdf(-1.96) - 0.0249979).abs() < 1e-6);
    }

    #[test]
    fn statistics_deterministic_and_bounded() {
        let band = BandParameters::preset_28ghz_nyc();
        let bs = ArrayGeometry::upa(4, 4);
        let ue = ArrayGeometry::upa(2, 2);
        let a = bf_statistics(&band, &bs, &ue, 20, 99).unwrap();
        let b = bf_statistics(&band, &bs, &ue, 20, 99).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.total_db.to_bits(), y.total_db.to_bits());
        }
        for s in &a {
            assert!(s.rx_db <= 10.0 * 4f64.log10() + 1e-9);
            assert!(s.tx_db <= 10.0 * 16f64.log10() + 1e-9);
            // The serving eigenbeam maximizes the Rayleigh quotient, so any
            // foreign beam can only do worse.
            assert!(s.rx_interf_db <= s.rx_db + 1e-9);
            assert!(s.tx_interf_db <= s.tx_db + 1e-9);
            assert!((0.0..=1.0).contains(&s.phi[0]));
            assert!(s.phi[0] <= s.phi[1] && s.phi[1] <= s.phi[2] && s.phi[2] <= s.phi[3]);
        }
    }
}
