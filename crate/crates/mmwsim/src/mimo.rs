//! Spatial synthesis and analysis.
//!
//! Turns a large-scale [`LinkRealization`] into subpaths, narrowband channel
//! matrices and spatial covariance matrices, and provides the beamforming
//! gain and spatial-degrees-of-freedom statistics computed from them.
//!
//! Array responses here are normalized to unit Euclidean norm, so the trace
//! of either covariance matrix equals the total linear link power
//! `10^(-PL/10)`.  Under this convention the aperture gain of the arrays is
//! the explicit factor `n_rx * n_tx` on top of [`expected_link_gain`]; the
//! eigenvalue-ratio beamforming gains are normalization invariant.

use crate::channel::{LinkRealization, LinkState};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::TAU;

/// Uniform planar array: `n_horizontal * n_vertical` elements on a regular
/// grid with the given spacing in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    pub n_horizontal: usize,
    pub n_vertical: usize,
    /// Element spacing in wavelengths.
    pub element_spacing: f64,
    /// Azimuth the array faces, radians.
    pub boresight_azimuth: f64,
}

impl ArrayGeometry {
    /// Half-wavelength UPA facing azimuth 0.
    pub fn upa(n_horizontal: usize, n_vertical: usize) -> Self {
        assert!(n_horizontal * n_vertical >= 1);
        ArrayGeometry {
            n_horizontal,
            n_vertical,
            element_spacing: 0.5,
            boresight_azimuth: 0.0,
        }
    }

    pub fn with_boresight(mut self, az: f64) -> Self {
        self.boresight_azimuth = az;
        self
    }

    pub fn n(&self) -> usize {
        self.n_horizontal * self.n_vertical
    }
}

/// One synthesized subpath.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subpath {
    pub aod_az: f64,
    pub aod_el: f64,
    pub aoa_az: f64,
    pub aoa_el: f64,
    /// Variance of the complex small-scale gain on this subpath (linear
    /// power); the `1/sqrt(L)` prefactor is already folded in.
    pub gain_var: f64,
    /// Angle of the subpath relative to the direction of motion, radians.
    pub doppler_angle: f64,
}

/// Subpath expansion of one link: `L` subpaths per cluster with frozen
/// angles; only the complex gains are small-scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SubpathSet {
    pub subpaths: Vec<Subpath>,
    pub subpaths_per_cluster: usize,
}

impl SubpathSet {
    /// Total linear link power, `sum of gain variances = 10^(-PL/10)`.
    pub fn total_power(&self) -> f64 {
        self.subpaths.iter().map(|s| s.gain_var).sum()
    }
}

/// Narrowband channel matrix at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    /// `n_rx x n_tx` complex gain matrix.
    pub h: DMatrix<Complex64>,
    pub t: f64,
    pub max_doppler_hz: f64,
}

/// Hermitian PSD second-moment matrices of one link.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCovariancePair {
    pub q_rx: DMatrix<Complex64>,
    pub q_tx: DMatrix<Complex64>,
}

/// Unit-norm UPA response to a plane wave from `(az, el)`.
///
/// Element `(p, q)` (horizontal index `p`, vertical index `q`) has phase
/// `2π·spacing·(p·sin(az - boresight)·cos(el) + q·sin(el))`, and the vector
/// is scaled by `1/sqrt(n)`.
pub fn array_response(geom: &ArrayGeometry, az: f64, el: f64) -> DVector<Complex64> {
    let mut out = DVector::zeros(geom.n());
    write_array_response(geom, az, el, &mut out);
    out
}

/// Fill a preallocated buffer of length `geom.n()` with the array response;
/// the allocation-free core of [`array_response`].
fn write_array_response(geom: &ArrayGeometry, az: f64, el: f64, out: &mut DVector<Complex64>) {
    let n = geom.n();
    debug_assert_eq!(out.len(), n);
    let scale = 1.0 / (n as f64).sqrt();
    let u = (az - geom.boresight_azimuth).sin() * el.cos();
    let v = el.sin();
    // The phase factor is separable: two unit phasors advanced by complex
    // recurrence cover the whole grid with just two sin/cos evaluations.
    let step_h = Complex64::from_polar(1.0, TAU * geom.element_spacing * u);
    let step_v = Complex64::from_polar(1.0, TAU * geom.element_spacing * v);
    let mut row = Complex64::new(scale, 0.0);
    for q in 0..geom.n_vertical {
        let mut cur = row;
        for p in 0..geom.n_horizontal {
            out[q * geom.n_horizontal + p] = cur;
            cur *= step_h;
        }
        row *= step_v;
    }
}

/// `u^H v` against the response at `(az, el)`, walking the phase recurrence
/// directly so no response vector is materialized.
fn response_dot(geom: &ArrayGeometry, az: f64, el: f64, v: &DVector<Complex64>) -> Complex64 {
    let n = geom.n();
    debug_assert_eq!(v.len(), n);
    let scale = 1.0 / (n as f64).sqrt();
    let uu = (az - geom.boresight_azimuth).sin() * el.cos();
    let vv = el.sin();
    let step_h = Complex64::from_polar(1.0, TAU * geom.element_spacing * uu);
    let step_v = Complex64::from_polar(1.0, TAU * geom.element_spacing * vv);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut row = Complex64::new(scale, 0.0);
    let mut idx = 0;
    for _ in 0..geom.n_vertical {
        let mut cur = row;
        for _ in 0..geom.n_horizontal {
            acc += cur.conj() * v[idx];
            idx += 1;
            cur *= step_h;
        }
        row *= step_v;
    }
    acc
}

fn wrap_azimuth(az: f64) -> f64 {
    az.rem_euclid(TAU)
}

/// Expand a non-outage link into `l` subpaths per cluster.
///
/// Subpath angles are wrapped Gaussians around the cluster central angles
/// with the cluster rms spreads; each subpath carries gain variance
/// `γ_k · 10^(-PL/10) / l`.  Doppler angles are uniform on [0, 2π).
pub fn synthesize_subpaths<R: Rng + ?Sized>(
    link: &LinkRealization,
    l: usize,
    rng: &mut R,
) -> Result<SubpathSet> {
    if link.state == LinkState::Outage {
        return Err(Error::OutageLink);
    }
    assert!(l >= 1);
    let total = link.linear_gain();
    let mut subpaths = Vec::with_capacity(link.clusters.len() * l);
    for c in &link.clusters {
        let var = c.power_fraction * total / l as f64;
        for _ in 0..l {
            let dev = |spread: f64, rng: &mut R| -> f64 {
                if spread > 0.0 {
                    Normal::new(0.0, spread).expect("spread > 0").sample(rng)
                } else {
                    0.0
                }
            };
            subpaths.push(Subpath {
                aod_az: wrap_azimuth(c.aod_az + dev(c.spread_aod_az, rng)),
                aod_el: c.aod_el + dev(c.spread_aod_el, rng),
                aoa_az: wrap_azimuth(c.aoa_az + dev(c.spread_aoa_az, rng)),
                aoa_el: c.aoa_el + dev(c.spread_aoa_el, rng),
                gain_var: var,
                doppler_angle: rng.gen::<f64>() * TAU,
            });
        }
    }
    Ok(SubpathSet {
        subpaths,
        subpaths_per_cluster: l,
    })
}

/// Draw one small-scale realization: a complex Gaussian gain per subpath
/// with the subpath's variance.
pub fn draw_small_scale_gains<R: Rng + ?Sized>(sub: &SubpathSet, rng: &mut R) -> Vec<Complex64> {
    sub.subpaths
        .iter()
        .map(|s| {
            let sd = (s.gain_var / 2.0).sqrt();
            Complex64::new(sd * standard_normal(rng), sd * standard_normal(rng))
        })
        .collect()
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

/// Assemble the channel matrix at time `t` from frozen subpaths and one
/// small-scale gain draw.  The Doppler phase is deterministic in `t`.
pub fn channel_matrix(
    sub: &SubpathSet,
    rx_geom: &ArrayGeometry,
    tx_geom: &ArrayGeometry,
    gains: &[Complex64],
    t: f64,
    max_doppler_hz: f64,
) -> Result<ChannelMatrix> {
    if gains.len() != sub.subpaths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} gains for {} subpaths",
            gains.len(),
            sub.subpaths.len()
        )));
    }
    let mut h = DMatrix::zeros(rx_geom.n(), tx_geom.n());
    for (s, g) in sub.subpaths.iter().zip(gains) {
        let doppler = TAU * t * max_doppler_hz * s.doppler_angle.cos();
        let g = g * Complex64::from_polar(1.0, doppler);
        let u_rx = array_response(rx_geom, s.aoa_az, s.aoa_el);
        let u_tx = array_response(tx_geom, s.aod_az, s.aod_el);
        // h += g * u_rx * u_tx^H
        for (j, tx) in u_tx.iter().enumerate() {
            let gt = g * tx.conj();
            for (i, rx) in u_rx.iter().enumerate() {
                h[(i, j)] += gt * rx;
            }
        }
    }
    Ok(ChannelMatrix {
        h,
        t,
        max_doppler_hz,
    })
}

/// Closed-form spatial covariances: the expectation over the small-scale
/// gains is analytic, `Q_rx = Σ_s var_s · u_rx u_rx^H` (and mirrored for TX).
pub fn covariances(
    sub: &SubpathSet,
    rx_geom: &ArrayGeometry,
    tx_geom: &ArrayGeometry,
) -> SpatialCovariancePair {
    let mut q_rx = DMatrix::zeros(rx_geom.n(), rx_geom.n());
    let mut q_tx = DMatrix::zeros(tx_geom.n(), tx_geom.n());
    for s in &sub.subpaths {
        accumulate_outer(&mut q_rx, &array_response(rx_geom, s.aoa_az, s.aoa_el), s.gain_var);
        accumulate_outer(&mut q_tx, &array_response(tx_geom, s.aod_az, s.aod_el), s.gain_var);
    }
    SpatialCovariancePair { q_rx, q_tx }
}

fn accumulate_outer(q: &mut DMatrix<Complex64>, u: &DVector<Complex64>, w: f64) {
    let n = u.len();
    for j in 0..n {
        let uj = u[j].conj() * w;
        for i in 0..n {
            q[(i, j)] += u[i] * uj;
        }
    }
}

/// Quadratic form `v^H Q v` of a unit vector against the RX-side covariance,
/// computed directly from the subpaths without materializing `Q`.
pub fn quadratic_form_rx(sub: &SubpathSet, geom: &ArrayGeometry, v: &DVector<Complex64>) -> f64 {
    sub.subpaths
        .iter()
        .map(|s| s.gain_var * response_dot(geom, s.aoa_az, s.aoa_el, v).norm_sqr())
        .sum()
}

/// Batched TX-side quadratic forms: each subpath response is built once and
/// dotted against every beam, which is much cheaper than one
/// [`quadratic_form_tx`] call per beam.
pub fn quadratic_forms_tx(
    sub: &SubpathSet,
    geom: &ArrayGeometry,
    beams: &[&DVector<Complex64>],
) -> Vec<f64> {
    let mut out = vec![0.0; beams.len()];
    let mut u = DVector::zeros(geom.n());
    for s in &sub.subpaths {
        write_array_response(geom, s.aod_az, s.aod_el, &mut u);
        for (o, v) in out.iter_mut().zip(beams) {
            *o += s.gain_var * u.dotc(v).norm_sqr();
        }
    }
    out
}

/// TX-side counterpart of [`quadratic_form_rx`].
pub fn quadratic_form_tx(sub: &SubpathSet, geom: &ArrayGeometry, v: &DVector<Complex64>) -> f64 {
    sub.subpaths
        .iter()
        .map(|s| s.gain_var * response_dot(geom, s.aod_az, s.aod_el, v).norm_sqr())
        .sum()
}

/// Eigenvalues of a Hermitian PSD matrix, descending, negatives clamped at 0.
fn hermitian_eigenvalues(q: &DMatrix<Complex64>) -> Vec<f64> {
    let eig = q.clone().symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().map(|x| x.max(0.0)).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

/// Phase-normalize an eigenvector so its first nonzero component is real
/// positive, making the output deterministic up to the eigensolver.
fn normalize_phase(v: &mut DVector<Complex64>) {
    let thresh = 1e-12 * v.norm();
    if let Some(first) = v.iter().find(|x| x.norm() > thresh) {
        let rot = first.conj() / first.norm();
        for x in v.iter_mut() {
            *x *= rot;
        }
    }
}

fn dominant_eigenvector(q: &DMatrix<Complex64>) -> Result<(f64, DVector<Complex64>)> {
    let trace: f64 = q.diagonal().iter().map(|x| x.re).sum();
    if !(trace > 0.0) {
        return Err(Error::DegenerateCovariance("zero trace".into()));
    }
    let eig = q.clone().symmetric_eigen();
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        // Ties within 1e-10 relative resolve to the lower index, which the
        // phase normalization below then makes deterministic.
        if eig.eigenvalues[i] > eig.eigenvalues[best] * (1.0 + 1e-10) {
            best = i;
        }
    }
    let mut v: DVector<Complex64> = eig.eigenvectors.column(best).into_owned();
    v /= Complex64::from(v.norm());
    normalize_phase(&mut v);
    Ok((eig.eigenvalues[best].max(0.0), v))
}

/// Long-term beamforming gains in dB: the ratio of the maximal eigenvalue to
/// the average eigenvalue of each covariance, and their sum.
pub fn bf_gain_long_term(cov: &SpatialCovariancePair) -> Result<(f64, f64, f64)> {
    let gain = |q: &DMatrix<Complex64>| -> Result<f64> {
        let vals = hermitian_eigenvalues(q);
        let trace: f64 = vals.iter().sum();
        if !(trace > 0.0) {
            return Err(Error::DegenerateCovariance("zero trace".into()));
        }
        let n = vals.len() as f64;
        Ok(10.0 * (vals[0] / (trace / n)).log10())
    };
    let rx = gain(&cov.q_rx)?;
    let tx = gain(&cov.q_tx)?;
    Ok((rx, tx, rx + tx))
}

/// Instantaneous beamforming gain of one channel realization in dB:
/// `σ_max(H)²` against the omnidirectional average `‖H‖²_F / (n_rx n_tx)`.
pub fn bf_gain_instantaneous(h: &ChannelMatrix) -> Result<f64> {
    let frob2 = h.h.iter().map(|x| x.norm_sqr()).sum::<f64>();
    if !(frob2 > 0.0) {
        return Err(Error::DegenerateCovariance("zero channel matrix".into()));
    }
    let svd = h.h.clone().svd(false, false);
    let smax = svd
        .singular_values
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    let omni = frob2 / (h.h.nrows() * h.h.ncols()) as f64;
    Ok(10.0 * (smax * smax / omni).log10())
}

/// Dominant unit eigenvectors of the two covariances, with deterministic
/// phase normalization.
pub fn beamforming_vectors(
    cov: &SpatialCovariancePair,
) -> Result<(DVector<Complex64>, DVector<Complex64>)> {
    let (_, v_rx) = dominant_eigenvector(&cov.q_rx)?;
    let (_, v_tx) = dominant_eigenvector(&cov.q_tx)?;
    Ok((v_rx, v_tx))
}

/// Dominant eigenvectors computed from the subpaths by power iteration,
/// without materializing the covariance matrices.  Used on the hot path of
/// the network simulation; agrees with [`beamforming_vectors`] to within the
/// iteration tolerance.
pub fn beamforming_vectors_implicit(
    sub: &SubpathSet,
    rx_geom: &ArrayGeometry,
    tx_geom: &ArrayGeometry,
) -> Result<(DVector<Complex64>, DVector<Complex64>)> {
    Ok((
        power_iteration(sub, rx_geom, Side::Rx)?,
        power_iteration(sub, tx_geom, Side::Tx)?,
    ))
}

#[derive(Clone, Copy)]
enum Side {
    Rx,
    Tx,
}

fn power_iteration(
    sub: &SubpathSet,
    geom: &ArrayGeometry,
    side: Side,
) -> Result<DVector<Complex64>> {
    let total = sub.total_power();
    if !(total > 0.0) {
        return Err(Error::DegenerateCovariance("zero trace".into()));
    }
    let n = geom.n();
    let n_sub = sub.subpaths.len();
    // Q = U diag(w) U^H applied implicitly through the two thin factors.
    let mut u = DMatrix::zeros(n, n_sub);
    let mut col = DVector::zeros(n);
    for (j, s) in sub.subpaths.iter().enumerate() {
        let (az, el) = match side {
            Side::Rx => (s.aoa_az, s.aoa_el),
            Side::Tx => (s.aod_az, s.aod_el),
        };
        write_array_response(geom, az, el, &mut col);
        u.set_column(j, &col);
    }
    let mut b = u.clone();
    for (j, s) in sub.subpaths.iter().enumerate() {
        let mut c = b.column_mut(j);
        c *= Complex64::from(s.gain_var);
    }
    // Deterministic start: the strongest subpath's response.
    let start = sub
        .subpaths
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.gain_var.total_cmp(&b.1.gain_var))
        .expect("nonempty")
        .0;
    let mut v = u.column(start).into_owned();
    for _ in 0..80 {
        let mut next = &b * u.ad_mul(&v);
        let norm = next.norm();
        if norm < 1e-300 {
            break;
        }
        next /= Complex64::from(norm);
        let delta = (&next - &v).norm();
        v = next;
        // Gain errors are quadratic in the eigenvector error, so this
        // tolerance leaves ~1e-14 relative gain error.
        if delta < 1e-7 {
            break;
        }
    }
    normalize_phase(&mut v);
    Ok(v)
}

/// Expected effective SISO gain `E|v_rx^H H v_tx|²` under the Kronecker
/// approximation: `(v_rx^H Q_rx v_rx)(v_tx^H Q_tx v_tx) / tr(Q_rx)`.
///
/// With serving eigenbeams this reproduces the eigenvalue product; with a
/// foreign link's beams it gives the typical interfering-link gain.
pub fn expected_link_gain(
    v_rx: &DVector<Complex64>,
    v_tx: &DVector<Complex64>,
    cov: &SpatialCovariancePair,
) -> Result<f64> {
    if v_rx.len() != cov.q_rx.nrows() || v_tx.len() != cov.q_tx.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "beams ({}, {}) vs covariances ({}, {})",
            v_rx.len(),
            v_tx.len(),
            cov.q_rx.nrows(),
            cov.q_tx.nrows()
        )));
    }
    let trace: f64 = cov.q_rx.diagonal().iter().map(|x| x.re).sum();
    if !(trace > 0.0) {
        return Err(Error::DegenerateCovariance("zero trace".into()));
    }
    let qf = |q: &DMatrix<Complex64>, v: &DVector<Complex64>| -> f64 {
        let qv = q * v;
        v.dotc(&qv).re.max(0.0)
    };
    Ok(qf(&cov.q_rx, v_rx) * qf(&cov.q_tx, v_tx) / trace)
}

/// Subpath-level evaluation of [`expected_link_gain`] for foreign beams,
/// used by the network simulation.
pub fn expected_link_gain_implicit(
    sub: &SubpathSet,
    rx_geom: &ArrayGeometry,
    tx_geom: &ArrayGeometry,
    v_rx: &DVector<Complex64>,
    v_tx: &DVector<Complex64>,
) -> f64 {
    let trace = sub.total_power();
    if !(trace > 0.0) {
        return 0.0;
    }
    quadratic_form_rx(sub, rx_geom, v_rx) * quadratic_form_tx(sub, tx_geom, v_tx) / trace
}

/// Fraction of channel energy captured by optimal rank-`r` precoding at both
/// ends: the product of the top-`r` eigenvalue mass fractions of the two
/// covariances.
pub fn power_fraction(cov: &SpatialCovariancePair, r: usize) -> Result<f64> {
    let max = cov.q_rx.nrows().min(cov.q_tx.nrows());
    if r == 0 || r > max {
        return Err(Error::RankOutOfRange { rank: r, max });
    }
    let mass = |q: &DMatrix<Complex64>| -> Result<f64> {
        let vals = hermitian_eigenvalues(q);
        let total: f64 = vals.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateCovariance("zero trace".into()));
        }
        Ok(vals.iter().take(r).sum::<f64>() / total)
    };
    Ok((mass(&cov.q_rx)? * mass(&cov.q_tx)?).min(1.0))
}
