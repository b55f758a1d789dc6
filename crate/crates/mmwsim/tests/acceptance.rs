//! End-to-end acceptance suite: one test (= one pass/fail line in the output)
//! per release criterion, at the stated tolerances.

use mmwsim::analysis::{bf_statistics, median};
use mmwsim::channel::{
    link_state_probabilities, median_path_loss, outage_onset_distance,
    sample_cluster_geometry, sample_cluster_power_fractions, sample_link, sample_link_state,
    sample_num_clusters, sample_path_loss, umi_path_loss, LinkOverrides, LinkRealization,
    LinkState, PathCluster,
};
use mmwsim::estimation::{
    detect_clusters, fit_cluster_power, fit_link_state, fit_path_loss, synthesize_map_from_link,
    PathLossSample,
};
use mmwsim::mimo::{
    bf_gain_instantaneous, channel_matrix, covariances, draw_small_scale_gains,
    synthesize_subpaths, ArrayGeometry,
};
use mmwsim::netsim::{run_simulation, NetworkConfig, RateReport};
use mmwsim::params::BandParameters;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::sync::OnceLock;

fn b28() -> BandParameters {
    BandParameters::preset_28ghz_nyc()
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Criterion 1: three-state link model closed form and outage onset.
// ---------------------------------------------------------------------------
#[test]
fn criterion_1_link_state_model() {
    let band = b28();
    // Independent direct evaluation with the published constants.
    let (a_out, b_out, a_los) = (0.0334f64, 5.2f64, 0.0149f64);
    for d in [50.0, 100.0, 155.7, 200.0, 400.0] {
        let p_out = (1.0 - (-a_out * d + b_out).exp()).max(0.0);
        let p_los = (1.0 - p_out) * (-a_los * d).exp();
        let p_nlos = 1.0 - p_out - p_los;
        let (po, pl, pn) = link_state_probabilities(d, &band);
        assert!((po - p_out).abs() < 1e-12, "p_out at {d} m");
        assert!((pl - p_los).abs() < 1e-12, "p_los at {d} m");
        assert!((pn - p_nlos).abs() < 1e-12, "p_nlos at {d} m");
    }
    assert!((outage_onset_distance(&band) - 155.7).abs() < 0.1);
}

// ---------------------------------------------------------------------------
// Criterion 2: path-loss golden values and the sub-6 GHz comparison gap.
// ---------------------------------------------------------------------------
#[test]
fn criterion_2_path_loss_goldens() {
    let b73 = BandParameters::preset_73ghz_nyc();
    assert!((median_path_loss(100.0, LinkState::Nlos, &b28()).unwrap() - 130.4).abs() < 0.05);
    assert!((median_path_loss(1.0, LinkState::Los, &b28()).unwrap() - 61.4).abs() < 0.05);
    assert!((median_path_loss(1.0, LinkState::Los, &b73).unwrap() - 69.8).abs() < 0.05);
    let gap =
        median_path_loss(100.0, LinkState::Nlos, &b28()).unwrap() - umi_path_loss(100.0, 2.5);
    assert!((20.0..=25.0).contains(&gap), "gap to 2.5 GHz urban-micro baseline: {gap} dB");
}

// ---------------------------------------------------------------------------
// Criterion 3: generative-law goodness of fit at the 1% level, 10^5 samples.
// ---------------------------------------------------------------------------
#[test]
fn criterion_3_distribution_fits() {
    let band = b28();
    let n = 100_000usize;

    // Cluster count: chi-square against the censored-Poisson pmf.
    let mut rng = rng_for(1001);
    let mut hist = vec![0usize; 9]; // k = 1..=7, index 8 = tail
    for _ in 0..n {
        let k = sample_num_clusters(&band, &mut rng);
        hist[k.min(8)] += 1;
    }
    let lam = band.lambda_k;
    let mut expected = vec![0.0f64; 9];
    let mut pk = (-lam).exp(); // P(N = 0)
    expected[1] = pk; // censoring folds N = 0 into K = 1
    let mut tail = 1.0 - pk;
    for k in 1..=7usize {
        pk *= lam / k as f64;
        expected[k.min(8)] += pk;
        tail -= pk;
    }
    expected[8] += tail;
    let chi2: f64 = (1..=8)
        .map(|k| {
            let e = n as f64 * expected[k];
            (hist[k] as f64 - e).powi(2) / e
        })
        .sum();
    let crit = ChiSquared::new(7.0).unwrap().inverse_cdf(0.99);
    assert!(chi2 < crit, "cluster-count chi2 {chi2} vs crit {crit}");

    // Published pmf constants inside 3-sigma binomial bands.
    for (k, p) in [(1usize, 0.4628), (2, 0.2678)] {
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hist[k] as f64 - n as f64 * p).abs() <= 3.0 * sd, "pmf at K = {k}");
    }

    // Angular spread: one-sample KS against the exponential law, 1% level.
    let mut rng = rng_for(1002);
    let mut spreads: Vec<f64> = (0..n)
        .map(|_| sample_cluster_geometry(1, 0.05, &band, &mut rng)[0].spread_aod_az.to_degrees())
        .collect();
    spreads.sort_by(f64::total_cmp);
    let mut ks = 0.0f64;
    for (i, x) in spreads.iter().enumerate() {
        let f = 1.0 - (-x / band.bs_az_spread_mean).exp();
        ks = ks.max((f - i as f64 / n as f64).abs());
        ks = ks.max((f - (i + 1) as f64 / n as f64).abs());
    }
    let crit = 1.628 / (n as f64).sqrt();
    assert!(ks < crit, "spread KS {ks} vs crit {crit}");

    // Cluster power fractions: two-sample KS against an independent oracle
    // that draws the unnormalized weights exactly as defined.
    let mut rng = rng_for(1003);
    let mut sampled: Vec<f64> = (0..n)
        .map(|_| {
            let f = sample_cluster_power_fractions(2, &band, &mut rng);
            f[0].min(f[1])
        })
        .collect();
    let mut oracle: Vec<f64> = (0..n)
        .map(|_| {
            let draw = |rng: &mut ChaCha8Rng| -> f64 {
                let u: f64 = rng.gen();
                let z = {
                    // Box-Muller, independent of the library's normal sampler.
                    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
                    let u2: f64 = rng.gen();
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                };
                u.powf(band.r_tau - 1.0) * 10f64.powf(-0.1 * band.zeta * z)
            };
            let (g1, g2) = (draw(&mut rng), draw(&mut rng));
            g1.min(g2) / (g1 + g2)
        })
        .collect();
    sampled.sort_by(f64::total_cmp);
    oracle.sort_by(f64::total_cmp);
    let (mut i, mut j, mut ks) = (0usize, 0usize, 0.0f64);
    while i < n && j < n {
        if sampled[i] <= oracle[j] {
            i += 1;
        } else {
            j += 1;
        }
        ks = ks.max((i as f64 / n as f64 - j as f64 / n as f64).abs());
    }
    let crit = 1.628 * (2.0 / n as f64).sqrt();
    assert!(ks < crit, "power-fraction KS {ks} vs crit {crit}");
}

// ---------------------------------------------------------------------------
// Criterion 4: estimation round-trips on 10^4 synthetic locations.
// ---------------------------------------------------------------------------
#[test]
fn criterion_4_estimation_round_trips() {
    let band = b28();
    let n = 10_000usize;

    // Link-state curve parameters within 10%.
    let mut rng = rng_for(2001);
    let states: Vec<(f64, LinkState)> = (0..n)
        .map(|_| {
            let d = 30.0 + rng.gen::<f64>() * 370.0;
            (d, sample_link_state(d, &band, &mut rng))
        })
        .collect();
    let (ao, bo, al) = fit_link_state(&states).unwrap();
    assert!((ao - band.a_out).abs() / band.a_out < 0.10, "a_out {ao}");
    assert!((bo - band.b_out).abs() / band.b_out < 0.10, "b_out {bo}");
    assert!((al - band.a_los).abs() / band.a_los < 0.10, "a_los {al}");

    // Path-loss regression: alpha +-2 dB, beta +-0.15, sigma +-1 dB.
    let mut rng = rng_for(2002);
    for (state, alpha, beta, sigma) in [
        (LinkState::Nlos, band.nlos_alpha, band.nlos_beta, band.nlos_sigma),
        (LinkState::Los, band.los_alpha, band.los_beta, band.los_sigma),
    ] {
        let samples: Vec<PathLossSample> = (0..n)
            .map(|_| {
                let d = 10.0 + rng.gen::<f64>() * 290.0;
                PathLossSample {
                    distance: d,
                    path_loss_db: sample_path_loss(d, state, &band, &mut rng).unwrap(),
                    state,
                }
            })
            .collect();
        let (a, b, s) = fit_path_loss(&samples, state).unwrap();
        assert!((a - alpha).abs() < 2.0, "alpha {a} vs {alpha}");
        assert!((b - beta).abs() < 0.15, "beta {b} vs {beta}");
        assert!((s - sigma).abs() < 1.0, "sigma {s} vs {sigma}");
    }

    // Cluster power parameters: r_tau +-0.3, zeta +-0.5.
    let mut rng = rng_for(2003);
    let weak: Vec<f64> = (0..n)
        .map(|_| {
            let f = sample_cluster_power_fractions(2, &band, &mut rng);
            f[0].min(f[1])
        })
        .collect();
    let (r_tau, zeta) = fit_cluster_power(&weak).unwrap();
    assert!((r_tau - band.r_tau).abs() < 0.3, "r_tau {r_tau}");
    assert!((zeta - band.zeta).abs() < 0.5, "zeta {zeta}");

    // Cluster detection on a well-separated synthetic map: K recovered and
    // every center within one 10-degree grid step.
    let deg = std::f64::consts::PI / 180.0;
    let mk = |aod: f64, aoa: f64, frac: f64| PathCluster {
        power_fraction: frac,
        aod_az: aod * deg,
        aod_el: -3.0 * deg,
        aoa_az: aoa * deg,
        aoa_el: 3.0 * deg,
        spread_aod_az: 8.0 * deg,
        spread_aod_el: 1.0 * deg,
        spread_aoa_az: 12.0 * deg,
        spread_aoa_el: 2.0 * deg,
    };
    let link = LinkRealization {
        distance: 80.0,
        state: LinkState::Nlos,
        omni_path_loss: 110.0,
        clusters: vec![
            mk(20.0, 310.0, 0.4),
            mk(110.0, 40.0, 0.3),
            mk(200.0, 130.0, 0.2),
            mk(290.0, 220.0, 0.1),
        ],
    };
    let map = synthesize_map_from_link(&link, &[3.0], -3.0, -30.0);
    let clusters = detect_clusters(&map).unwrap();
    assert_eq!(clusters.len(), 4, "detected {} clusters", clusters.len());
    let wrap = |x: f64| {
        let mut d = x % 360.0;
        if d > 180.0 {
            d -= 360.0;
        }
        if d < -180.0 {
            d += 360.0;
        }
        d
    };
    for truth in &link.clusters {
        let (taod, taoa) = (truth.aod_az.to_degrees(), truth.aoa_az.to_degrees());
        let hit = clusters.iter().any(|c| {
            wrap(c.center_deg[0] - taod).abs() <= 10.0 && wrap(c.center_deg[2] - taoa).abs() <= 10.0
        });
        assert!(hit, "no cluster near ({taod}, {taoa}) deg");
    }
}

// ---------------------------------------------------------------------------
// Criterion 5: beamforming gain bound, rank-one attainment, covariance
// closed form vs Monte-Carlo.
// ---------------------------------------------------------------------------
#[test]
fn criterion_5_beamforming_invariants() {
    let band = b28();
    let ue = ArrayGeometry::upa(4, 4);
    let bs = ArrayGeometry::upa(8, 8);
    let bound = 10.0 * ((ue.n() * bs.n()) as f64).log10();

    // Instantaneous gain bound over 10^4 random links.
    (0..10_000usize).into_par_iter().for_each(|i| {
        let mut rng = rng_for(3001);
        rng.set_stream(i as u64 + 1);
        let link = loop {
            let d = 20.0 + rng.gen::<f64>() * 180.0;
            let l = sample_link(d, 0.05, &band, &mut rng, LinkOverrides::default()).unwrap();
            if l.state != LinkState::Outage {
                break l;
            }
        };
        let sub = synthesize_subpaths(&link, 20, &mut rng).unwrap();
        let gains = draw_small_scale_gains(&sub, &mut rng);
        let h = channel_matrix(&sub, &ue, &bs, &gains, 0.0, 0.0).unwrap();
        let g = bf_gain_instantaneous(&h).unwrap();
        assert!(g <= bound + 1e-9, "gain {g} above bound {bound}");
    });

    // Rank-one (single cluster, zero spread) attains the bound to 1e-6 dB.
    let rank_one = LinkRealization {
        distance: 50.0,
        state: LinkState::Los,
        omni_path_loss: 90.0,
        clusters: vec![PathCluster {
            power_fraction: 1.0,
            aod_az: 0.9,
            aod_el: -0.03,
            aoa_az: 2.4,
            aoa_el: 0.03,
            spread_aod_az: 0.0,
            spread_aod_el: 0.0,
            spread_aoa_az: 0.0,
            spread_aoa_el: 0.0,
        }],
    };
    let mut rng = rng_for(3002);
    let sub = synthesize_subpaths(&rank_one, 20, &mut rng).unwrap();
    let gains = draw_small_scale_gains(&sub, &mut rng);
    let h = channel_matrix(&sub, &ue, &bs, &gains, 0.0, 0.0).unwrap();
    assert!((bf_gain_instantaneous(&h).unwrap() - bound).abs() < 1e-6);

    // Covariance closed form vs Monte-Carlo second moments on 3 links.
    let mut rng = rng_for(3003);
    for _ in 0..3 {
        let link = loop {
            let d = 30.0 + rng.gen::<f64>() * 170.0;
            let l = sample_link(d, 0.05, &band, &mut rng, LinkOverrides::default()).unwrap();
            if l.state != LinkState::Outage {
                break l;
            }
        };
        let sub = synthesize_subpaths(&link, 20, &mut rng).unwrap();
        let cov = covariances(&sub, &ue, &bs);
        let mut mc: DMatrix<Complex64> = DMatrix::zeros(ue.n(), ue.n());
        let n_draws = 10_000;
        for _ in 0..n_draws {
            let gains = draw_small_scale_gains(&sub, &mut rng);
            let h = channel_matrix(&sub, &ue, &bs, &gains, 0.0, 0.0).unwrap();
            mc += &h.h * h.h.adjoint();
        }
        mc /= Complex64::from(n_draws as f64);
        let err = (&mc - &cov.q_rx).norm() / cov.q_rx.norm();
        assert!(err < 0.03, "relative Frobenius error {err}");
    }
}

// ---------------------------------------------------------------------------
// Criterion 6: long-term beamforming statistics at 28 GHz, 8x8 BS / 4x4 UE.
// ---------------------------------------------------------------------------
#[test]
fn criterion_6_bf_statistics() {
    let stats = bf_statistics(
        &b28(),
        &ArrayGeometry::upa(8, 8),
        &ArrayGeometry::upa(4, 4),
        10_000,
        4001,
    )
    .unwrap();
    let col = |f: &dyn Fn(&mmwsim::analysis::BfSample) -> f64| -> Vec<f64> {
        stats.iter().map(f).collect()
    };
    let total = median(&col(&|s| s.total_db));
    assert!((25.0..=29.0).contains(&total), "median total gain {total} dB");
    let rx_gap = median(&col(&|s| s.rx_db - s.rx_interf_db));
    let tx_gap = median(&col(&|s| s.tx_db - s.tx_interf_db));
    assert!((rx_gap - 6.0).abs() <= 2.0, "RX serving-minus-interfering {rx_gap} dB");
    assert!((tx_gap - 9.0).abs() <= 2.0, "TX serving-minus-interfering {tx_gap} dB");
    let phi = |r: usize| median(&col(&|s| s.phi[r]));
    assert!((0.4..=0.6).contains(&phi(0)), "median phi(1) {}", phi(0));
    assert!((0.7..=0.9).contains(&phi(1)), "median phi(2) {}", phi(1));
    assert!((0.9..=1.0).contains(&phi(2)), "median phi(3) {}", phi(2));
}

// ---------------------------------------------------------------------------
// Criteria 7 and 8 share one benchmark run set (20 drops per configuration).
// ---------------------------------------------------------------------------
struct Bench {
    base28: RateReport,
    d50: RateReport,
    d75: RateReport,
    nolos_d50: RateReport,
    b73_8x8: RateReport,
}

static BENCH: OnceLock<Bench> = OnceLock::new();

fn bench() -> &'static Bench {
    BENCH.get_or_init(|| {
        let seed = 7u64;
        let drops = 20usize;
        let run = |cfg: &NetworkConfig| run_simulation(cfg, seed, drops).unwrap().0;
        let base = NetworkConfig::default_for_band(BandParameters::preset_28ghz_nyc());
        let mut d50 = base.clone();
        d50.d_shift = 50.0;
        let mut d75 = base.clone();
        d75.d_shift = 75.0;
        let mut nolos = base.clone();
        nolos.d_shift = 50.0;
        nolos.suppress_los = true;
        let mut b73 = NetworkConfig::default_for_band(BandParameters::preset_73ghz_nyc());
        b73.ue_array = ArrayGeometry::upa(8, 8);
        Bench {
            base28: run(&base),
            d50: run(&d50),
            d75: run(&d75),
            nolos_d50: run(&nolos),
            b73_8x8: run(&b73),
        }
    })
}

fn within(actual: f64, reference: f64, rel: f64) -> bool {
    (actual - reference).abs() <= rel * reference.abs()
}

#[test]
fn criterion_7_capacity_table() {
    let b = bench();
    // 28 GHz, 4x4 UE baseline row.
    assert!(within(b.base28.dl_spectral_efficiency, 3.03, 0.15), "DL SE {}", b.base28.dl_spectral_efficiency);
    assert!(within(b.base28.ul_spectral_efficiency, 2.94, 0.15), "UL SE {}", b.base28.ul_spectral_efficiency);
    assert!(within(b.base28.dl_cell_throughput_bps / 1e6, 1514.0, 0.15), "DL tput {}", b.base28.dl_cell_throughput_bps / 1e6);
    assert!(within(b.base28.ul_cell_throughput_bps / 1e6, 1468.0, 0.15), "UL tput {}", b.base28.ul_cell_throughput_bps / 1e6);
    // 73 GHz, 8x8 UE row.
    assert!(within(b.b73_8x8.dl_spectral_efficiency, 2.93, 0.15), "73 GHz DL SE {}", b.b73_8x8.dl_spectral_efficiency);
    assert!(within(b.b73_8x8.ul_spectral_efficiency, 2.88, 0.15), "73 GHz UL SE {}", b.b73_8x8.ul_spectral_efficiency);
    // Shifted-blockage robustness: < 10% throughput change at 50 m shift.
    let change = (b.d50.dl_cell_throughput_bps - b.base28.dl_cell_throughput_bps).abs()
        / b.base28.dl_cell_throughput_bps;
    assert!(change < 0.10, "d_shift 50 m throughput change {change}");
    // 75 m shift collapses the 5% edge rate below 1 Mbps.
    assert!(b.d75.dl_edge_rate_bps < 1e6, "DL edge {}", b.d75.dl_edge_rate_bps);
    assert!(b.d75.ul_edge_rate_bps < 1e6, "UL edge {}", b.d75.ul_edge_rate_bps);
    // No-LOS, 50 m shift row.
    assert!(within(b.nolos_d50.dl_spectral_efficiency, 2.16, 0.15), "no-LOS DL SE {}", b.nolos_d50.dl_spectral_efficiency);
}

#[test]
fn criterion_8_sinr_interference_properties() {
    let b = bench();
    let f = b.base28.dl_sinr_below_zero_fraction;
    assert!((0.03..=0.12).contains(&f), "DL SINR < 0 dB fraction {f}");
    let nd = b.base28.noise_dominated_fraction;
    assert!(nd >= 0.8, "noise-dominated fraction {nd}");
    // Constant-aperture equivalence: 28 GHz 4x4 vs 73 GHz 8x8 rate deciles.
    for p in (10..=90).step_by(10) {
        let a = b.base28.dl_rate_percentiles_bps[p];
        let c = b.b73_8x8.dl_rate_percentiles_bps[p];
        let gap = (a - c).abs() / (0.5 * (a + c));
        assert!(gap < 0.15, "decile {p} gap {gap} ({a} vs {c})");
    }
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical output at any thread count.
// ---------------------------------------------------------------------------
#[test]
fn criterion_9_thread_count_determinism() {
    let mut cfg = NetworkConfig::default_for_band(b28());
    cfg.area = (600.0, 600.0);
    cfg.ues_per_cell = 2;
    cfg.slots = 4;
    let serialize = |threads: usize| -> Vec<u8> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let (_, records) = pool.install(|| run_simulation(&cfg, 11, 3).unwrap());
        let mut out = Vec::new();
        for r in &records {
            out.extend_from_slice(
                format!(
                    "{},{},{},{},{},{},{}\n",
                    r.ue,
                    r.drop,
                    mmwsim::io::fmt_f64(r.dl_sinr_db),
                    mmwsim::io::fmt_f64(r.ul_sinr_db),
                    mmwsim::io::fmt_f64(r.dl_rate_bps),
                    mmwsim::io::fmt_f64(r.ul_rate_bps),
                    r.served as u8
                )
                .as_bytes(),
            );
        }
        out
    };
    let one = serialize(1);
    let four = serialize(4);
    assert_eq!(one, four, "per-UE CSV differs between 1 and 4 threads");
    assert_eq!(one, serialize(2), "per-UE CSV differs between 1 and 2 threads");
}
