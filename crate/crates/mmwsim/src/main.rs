//! Batch experiment front-end: seeded, file-oriented runs of the channel
//! statistics, beamforming analysis, network capacity simulation, and
//! parameter estimation round-trips.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use mmwsim::analysis::{self, median, normal_cdf};
use mmwsim::channel::{
    link_state_probabilities, median_path_loss, sample_cluster_power_fractions, sample_link_state,
    sample_num_clusters, sample_path_loss, LinkRealization, LinkState, PathCluster,
};
use mmwsim::estimation::{
    detect_clusters, fit_angular_spread, fit_cluster_count, fit_cluster_power, fit_link_state,
    fit_path_loss, path_loss_samples_from_csv, synthesize_map_from_link, AngularPowerMap,
};
use mmwsim::io::{fmt_f64, write_csv};
use mmwsim::netsim::{parse_array_spec, run_simulation, NetworkConfig, RateReport, UeRecord};
use mmwsim::params::BandParameters;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Txt,
}

#[derive(Parser)]
#[command(
    name = "mmwsim",
    version,
    about = "Millimeter-wave channel simulator and cellular capacity evaluator"
)]
struct Cli {
    /// Master seed; every run is deterministic in (seed, flags).
    #[arg(long)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Empirical-vs-model grids for the channel statistics.
    ChannelStats {
        /// Band preset name or parameter-card path.
        #[arg(long, default_value = "28ghz-nyc")]
        band: String,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Serving/interfering beamforming-gain and low-rank energy CDFs.
    BfAnalysis {
        #[arg(long, default_value = "28ghz-nyc")]
        band: String,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// BS planar array as HxV.
        #[arg(long, default_value = "8x8")]
        bs_array: String,
        #[arg(long, default_value = "4x4")]
        ue_array: String,
    },
    /// Multi-cell capacity simulation.
    Netsim {
        /// Network card path; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        band: Option<String>,
        #[arg(long, default_value_t = 20)]
        drops: usize,
        /// Area as WxH meters.
        #[arg(long)]
        area: Option<String>,
        #[arg(long)]
        bs_array: Option<String>,
        #[arg(long)]
        ue_array: Option<String>,
        #[arg(long)]
        d_shift: Option<f64>,
        /// Treat would-be LOS links as NLOS.
        #[arg(long)]
        no_los: bool,
        /// Run the full benchmark configuration set side by side with the
        /// published reference constants.
        #[arg(long)]
        benchmark: bool,
    },
    /// Parameter fitting from measurement-style CSVs or a synthetic
    /// round-trip self-test.
    Estimation {
        /// Band preset to self-test against.
        #[arg(long)]
        self_test: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Angular power map CSV to cluster.
        #[arg(long)]
        power_map: Option<PathBuf>,
        /// Path-loss sample CSV to fit.
        #[arg(long)]
        path_loss: Option<PathBuf>,
    },
}

fn resolve_band(spec: &str) -> anyhow::Result<BandParameters> {
    if let Some(b) = BandParameters::preset(spec) {
        return Ok(b);
    }
    let text = std::fs::read_to_string(spec)
        .with_context(|| format!("`{spec}` is neither a band preset nor a readable card"))?;
    Ok(BandParameters::from_card(&text)?)
}

/// Write a table in the selected format; returns the path written.
fn write_table(
    dir: &Path,
    name: &str,
    fmt: Format,
    header: &[&str],
    rows: &[Vec<String>],
) -> anyhow::Result<PathBuf> {
    let path = dir.join(format!(
        "{name}.{}",
        if fmt == Format::Csv { "csv" } else { "txt" }
    ));
    match fmt {
        Format::Csv => write_csv(&path, header, rows)?,
        Format::Txt => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(f, "{}", header.join(" "))?;
            for row in rows {
                writeln!(f, "{}", row.join(" "))?;
            }
            f.flush()?;
        }
    }
    Ok(path)
}

fn pctl(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = (p / 100.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    let frac = pos - pos.floor();
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("cannot create output directory {:?}", cli.out))?;
    match &cli.cmd {
        Cmd::ChannelStats { band, samples } => {
            run_channel_stats(&cli, &resolve_band(band)?, *samples)
        }
        Cmd::BfAnalysis {
            band,
            samples,
            bs_array,
            ue_array,
        } => run_bf_analysis(&cli, &resolve_band(band)?, *samples, bs_array, ue_array),
        Cmd::Netsim {
            config,
            band,
            drops,
            area,
            bs_array,
            ue_array,
            d_shift,
            no_los,
            benchmark,
        } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("cannot read config {path:?}"))?;
                    NetworkConfig::from_card(&text)?
                }
                None => NetworkConfig::default_for_band(
                    resolve_band(band.as_deref().unwrap_or("28ghz-nyc"))?,
                ),
            };
            if config.is_some() {
                if let Some(b) = band {
                    cfg.band = resolve_band(b)?;
                }
            }
            if let Some(a) = area {
                let (w, h) = a
                    .split_once(['x', 'X'])
                    .and_then(|(w, h)| Some((w.parse::<f64>().ok()?, h.parse::<f64>().ok()?)))
                    .context("--area expects WxH in meters, e.g. 2000x2000")?;
                cfg.area = (w, h);
            }
            if let Some(s) = bs_array {
                cfg.bs_array = parse_array_spec(s)?;
            }
            if let Some(s) = ue_array {
                cfg.ue_array = parse_array_spec(s)?;
            }
            if let Some(d) = d_shift {
                cfg.d_shift = *d;
            }
            if *no_los {
                cfg.suppress_los = true;
            }
            if *benchmark {
                run_benchmark(&cli, *drops)
            } else {
                run_netsim(&cli, &cfg, *drops)
            }
        }
        Cmd::Estimation {
            self_test,
            samples,
            power_map,
            path_loss,
        } => run_estimation(
            &cli,
            self_test.as_deref(),
            *samples,
            power_map.as_deref(),
            path_loss.as_deref(),
        ),
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn empirical_cdf(sorted: &[f64], x: f64) -> f64 {
    let idx = sorted.partition_point(|&v| v <= x);
    idx as f64 / sorted.len() as f64
}

fn run_channel_stats(cli: &Cli, band: &BandParameters, samples: usize) -> anyhow::Result<()> {
    let dir = &cli.out;
    // 1. Link-state probabilities over distance.
    let mut rng = stream_rng(cli.seed, 1);
    let n_per = (samples / 40).max(100);
    let mut rows = Vec::new();
    for d in (10..=400).step_by(10) {
        let d = d as f64;
        let (po, pl, pn) = link_state_probabilities(d, band);
        let mut counts = [0usize; 3];
        for _ in 0..n_per {
            match sample_link_state(d, band, &mut rng) {
                LinkState::Outage => counts[0] += 1,
                LinkState::Los => counts[1] += 1,
                LinkState::Nlos => counts[2] += 1,
            }
        }
        let f = |c: usize| fmt_f64(c as f64 / n_per as f64);
        rows.push(vec![
            fmt_f64(d),
            fmt_f64(po),
            fmt_f64(pl),
            fmt_f64(pn),
            f(counts[0]),
            f(counts[1]),
            f(counts[2]),
        ]);
    }
    write_table(
        dir,
        "state_probabilities",
        cli.format,
        &[
            "d_m",
            "p_out_model",
            "p_los_model",
            "p_nlos_model",
            "p_out_emp",
            "p_los_emp",
            "p_nlos_emp",
        ],
        &rows,
    )?;

    // 2. Shadowed path-loss CDF at the 100 m reference distance (worse-state).
    let mut rng = stream_rng(cli.seed, 2);
    let med = median_path_loss(100.0, LinkState::Nlos, band)?;
    let mut draws: Vec<f64> = (0..samples)
        .map(|_| sample_path_loss(100.0, LinkState::Nlos, band, &mut rng).unwrap())
        .collect();
    draws.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    let lo = med - 4.0 * band.nlos_sigma;
    let steps = (16.0 * band.nlos_sigma / 0.5) as usize;
    for i in 0..=steps {
        let x = lo + i as f64 * 0.5;
        rows.push(vec![
            fmt_f64(x),
            fmt_f64(empirical_cdf(&draws, x)),
            fmt_f64(normal_cdf((x - med) / band.nlos_sigma)),
        ]);
    }
    write_table(
        dir,
        "path_loss_cdf",
        cli.format,
        &["pl_db", "empirical_cdf", "model_cdf"],
        &rows,
    )?;

    // 3. Cluster-count pmf.
    let mut rng = stream_rng(cli.seed, 3);
    let mut counts = vec![0usize; 9];
    for _ in 0..samples {
        let k = sample_num_clusters(band, &mut rng);
        if k < counts.len() {
            counts[k] += 1;
        }
    }
    let lam = band.lambda_k;
    let mut rows = Vec::new();
    let mut pmf = (-lam).exp(); // P(N = 0), folded into K = 1
    for k in 1..=8usize {
        pmf *= lam / k as f64;
        let model = if k == 1 { (-lam).exp() + pmf } else { pmf };
        rows.push(vec![
            k.to_string(),
            fmt_f64(counts[k] as f64 / samples as f64),
            fmt_f64(model),
        ]);
    }
    write_table(
        dir,
        "cluster_count_pmf",
        cli.format,
        &["k", "empirical_pmf", "model_pmf"],
        &rows,
    )?;

    // 4. Two-cluster weak-power-fraction CDF; the model column is a
    // high-resolution independent simulation of the same law.
    let mut rng = stream_rng(cli.seed, 4);
    let mut weak: Vec<f64> = (0..samples)
        .map(|_| {
            let f = sample_cluster_power_fractions(2, band, &mut rng);
            f[0].min(f[1])
        })
        .collect();
    weak.sort_by(f64::total_cmp);
    let mut rng = stream_rng(cli.seed, 104);
    let mut model: Vec<f64> = (0..samples * 4)
        .map(|_| {
            let f = sample_cluster_power_fractions(2, band, &mut rng);
            f[0].min(f[1])
        })
        .collect();
    model.sort_by(f64::total_cmp);
    let rows: Vec<Vec<String>> = (0..=50)
        .map(|i| {
            let w = i as f64 * 0.01;
            vec![
                fmt_f64(w),
                fmt_f64(empirical_cdf(&weak, w)),
                fmt_f64(empirical_cdf(&model, w)),
            ]
        })
        .collect();
    write_table(
        dir,
        "power_fraction_cdf",
        cli.format,
        &["weak_fraction", "empirical_cdf", "model_cdf"],
        &rows,
    )?;

    // 5. BS azimuth angular-spread CDF against the exponential law.
    let mut rng = stream_rng(cli.seed, 5);
    let mean = band.bs_az_spread_mean;
    let mut spreads: Vec<f64> = (0..samples)
        .map(|_| -mean * (1.0 - rng.gen::<f64>()).ln())
        .collect();
    spreads.sort_by(f64::total_cmp);
    let rows: Vec<Vec<String>> = (0..=100)
        .map(|i| {
            let x = i as f64 * mean / 20.0;
            vec![
                fmt_f64(x),
                fmt_f64(empirical_cdf(&spreads, x)),
                fmt_f64(1.0 - (-x / mean).exp()),
            ]
        })
        .collect();
    write_table(
        dir,
        "angular_spread_cdf",
        cli.format,
        &["spread_deg", "empirical_cdf", "model_cdf"],
        &rows,
    )?;

    println!(
        "channel-stats: wrote 5 distribution grids for {} GHz to {:?}",
        band.carrier_freq_ghz, cli.out
    );
    Ok(())
}

fn run_bf_analysis(
    cli: &Cli,
    band: &BandParameters,
    samples: usize,
    bs_array: &str,
    ue_array: &str,
) -> anyhow::Result<()> {
    let bs = parse_array_spec(bs_array)?;
    let ue = parse_array_spec(ue_array)?;
    let stats = analysis::bf_statistics(band, &bs, &ue, samples, cli.seed)?;
    let sorted = |f: &dyn Fn(&analysis::BfSample) -> f64| -> Vec<f64> {
        let mut v: Vec<f64> = stats.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let rx = sorted(&|s| s.rx_db);
    let tx = sorted(&|s| s.tx_db);
    let total = sorted(&|s| s.total_db);
    let rx_i = sorted(&|s| s.rx_interf_db);
    let tx_i = sorted(&|s| s.tx_interf_db);
    let rows: Vec<Vec<String>> = (0..=100)
        .map(|p| {
            let p = p as f64;
            vec![
                fmt_f64(p),
                fmt_f64(pctl(&rx, p)),
                fmt_f64(pctl(&tx, p)),
                fmt_f64(pctl(&total, p)),
                fmt_f64(pctl(&rx_i, p)),
                fmt_f64(pctl(&tx_i, p)),
            ]
        })
        .collect();
    write_table(
        &cli.out,
        "bf_gains",
        cli.format,
        &[
            "percentile",
            "rx_serving_db",
            "tx_serving_db",
            "total_db",
            "rx_interfering_db",
            "tx_interfering_db",
        ],
        &rows,
    )?;

    let phis: Vec<Vec<f64>> = (0..4)
        .map(|r| {
            let mut v: Vec<f64> = stats.iter().map(|s| s.phi[r]).collect();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let rows: Vec<Vec<String>> = (0..=100)
        .map(|p| {
            let mut row = vec![fmt_f64(p as f64)];
            for v in &phis {
                row.push(fmt_f64(pctl(v, p as f64)));
            }
            row
        })
        .collect();
    write_table(
        &cli.out,
        "power_fraction_rank",
        cli.format,
        &["percentile", "phi_1", "phi_2", "phi_3", "phi_4"],
        &rows,
    )?;

    println!(
        "bf-analysis: median total gain {:.2} dB; serving-minus-interfering {:.2} dB (RX), {:.2} dB (TX); median phi(1) {:.3}",
        median(&total),
        median(&rx) - median(&rx_i),
        median(&tx) - median(&tx_i),
        median(&phis[0]),
    );
    Ok(())
}

fn record_rows(records: &[UeRecord]) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| {
            vec![
                r.ue.to_string(),
                r.drop.to_string(),
                fmt_f64(r.dl_sinr_db),
                fmt_f64(r.ul_sinr_db),
                fmt_f64(r.dl_rate_bps),
                fmt_f64(r.ul_rate_bps),
                (r.served as u8).to_string(),
            ]
        })
        .collect()
}

fn write_report_files(cli: &Cli, label: &str, report: &RateReport, records: &[UeRecord]) -> anyhow::Result<()> {
    write_table(
        &cli.out,
        "per_ue",
        cli.format,
        &[
            "ue_id",
            "drop",
            "dl_sinr_db",
            "ul_sinr_db",
            "dl_rate_bps",
            "ul_rate_bps",
            "served_flag",
        ],
        &record_rows(records),
    )?;
    let rows: Vec<Vec<String>> = (0..=100)
        .map(|p| {
            vec![
                p.to_string(),
                fmt_f64(report.dl_rate_percentiles_bps[p]),
                fmt_f64(report.ul_rate_percentiles_bps[p]),
                fmt_f64(report.dl_sinr_percentiles_db[p]),
                fmt_f64(report.ul_sinr_percentiles_db[p]),
            ]
        })
        .collect();
    write_table(
        &cli.out,
        "cdf_grid",
        cli.format,
        &["percentile", "dl_rate_bps", "ul_rate_bps", "dl_sinr_db", "ul_sinr_db"],
        &rows,
    )?;
    std::fs::write(cli.out.join("summary.txt"), report.summary_text(label))?;
    Ok(())
}

fn run_netsim(cli: &Cli, cfg: &NetworkConfig, drops: usize) -> anyhow::Result<()> {
    let (report, records) = run_simulation(cfg, cli.seed, drops)?;
    let label = format!(
        "{} GHz, BS {}x{}, UE {}x{}, d_shift {} m{}",
        cfg.band.carrier_freq_ghz,
        cfg.bs_array.n_horizontal,
        cfg.bs_array.n_vertical,
        cfg.ue_array.n_horizontal,
        cfg.ue_array.n_vertical,
        cfg.d_shift,
        if cfg.suppress_los { ", no LOS" } else { "" }
    );
    write_report_files(cli, &label, &report, &records)?;
    print!("{}", report.summary_text(&label));
    Ok(())
}

struct BenchRow {
    label: &'static str,
    cfg: Option<NetworkConfig>,
    /// (dl_se, ul_se, dl_tput_mbps, ul_tput_mbps, dl_edge_mbps, ul_edge_mbps).
    reference: [f64; 6],
}

fn benchmark_rows() -> Vec<BenchRow> {
    let b28 = BandParameters::preset_28ghz_nyc();
    let b73 = BandParameters::preset_73ghz_nyc();
    let base28 = NetworkConfig::default_for_band(b28);
    let base73 = NetworkConfig::default_for_band(b73);
    let with = |base: &NetworkConfig, f: &dyn Fn(&mut NetworkConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    vec![
        BenchRow {
            label: "28 GHz, UE 8x8",
            cfg: Some(with(&base28, &|c| c.ue_array = parse_array_spec("8x8").unwrap())),
            reference: [3.34, 3.16, 1668.0, 1580.0, 52.28, 34.78],
        },
        BenchRow {
            label: "28 GHz, UE 4x4",
            cfg: Some(base28.clone()),
            reference: [3.03, 2.94, 1514.0, 1468.0, 28.47, 19.90],
        },
        BenchRow {
            label: "28 GHz, UE 4x4, d_shift 50 m",
            cfg: Some(with(&base28, &|c| c.d_shift = 50.0)),
            reference: [2.90, 2.91, 1450.0, 1454.0, 17.62, 17.49],
        },
        BenchRow {
            label: "28 GHz, UE 4x4, d_shift 75 m",
            cfg: Some(with(&base28, &|c| c.d_shift = 75.0)),
            reference: [2.58, 2.60, 1289.0, 1298.0, 0.54, 0.09],
        },
        BenchRow {
            label: "28 GHz, UE 4x4, no LOS, d_shift 50 m",
            cfg: Some(with(&base28, &|c| {
                c.d_shift = 50.0;
                c.suppress_los = true;
            })),
            reference: [2.16, 2.34, 1081.0, 1168.0, 11.14, 15.19],
        },
        BenchRow {
            label: "73 GHz, UE 4x4",
            cfg: Some(base73.clone()),
            reference: [2.58, 2.58, 1288.0, 1291.0, 10.02, 8.92],
        },
        BenchRow {
            label: "73 GHz, UE 8x8",
            cfg: Some(with(&base73, &|c| c.ue_array = parse_array_spec("8x8").unwrap())),
            reference: [2.93, 2.88, 1465.0, 1439.0, 24.08, 19.76],
        },
        BenchRow {
            label: "2.5 GHz cellular (cited, not simulated)",
            cfg: None,
            reference: [2.69, 2.36, 53.8, 47.2, 1.80, 1.94],
        },
    ]
}

fn run_benchmark(cli: &Cli, drops: usize) -> anyhow::Result<()> {
    let mut out = String::new();
    out.push_str(&format!("capacity benchmark, {} drops per row\n", drops));
    out.push_str(
        "row                                      se_dl  se_ul  ref_dl ref_ul | tput_dl tput_ul ref_dl  ref_ul | edge_dl edge_ul ref_dl ref_ul\n",
    );
    for row in benchmark_rows() {
        match &row.cfg {
            Some(cfg) => {
                let (r, _) = run_simulation(cfg, cli.seed, drops)?;
                out.push_str(&format!(
                    "{:<40} {:>6.2} {:>6.2} {:>6.2} {:>6.2} | {:>7.0} {:>7.0} {:>7.0} {:>7.0} | {:>7.2} {:>7.2} {:>6.2} {:>6.2}\n",
                    row.label,
                    r.dl_spectral_efficiency,
                    r.ul_spectral_efficiency,
                    row.reference[0],
                    row.reference[1],
                    r.dl_cell_throughput_bps / 1e6,
                    r.ul_cell_throughput_bps / 1e6,
                    row.reference[2],
                    row.reference[3],
                    r.dl_edge_rate_bps / 1e6,
                    r.ul_edge_rate_bps / 1e6,
                    row.reference[4],
                    row.reference[5],
                ));
            }
            None => {
                out.push_str(&format!(
                    "{:<40} {:>6} {:>6} {:>6.2} {:>6.2} | {:>7} {:>7} {:>7.1} {:>7.1} | {:>7} {:>7} {:>6.2} {:>6.2}\n",
                    row.label,
                    "-",
                    "-",
                    row.reference[0],
                    row.reference[1],
                    "-",
                    "-",
                    row.reference[2],
                    row.reference[3],
                    "-",
                    "-",
                    row.reference[4],
                    row.reference[5],
                ));
            }
        }
    }
    std::fs::write(cli.out.join("benchmark.txt"), &out)?;
    print!("{out}");
    Ok(())
}

fn four_cluster_link() -> LinkRealization {
    let deg = std::f64::consts::PI / 180.0;
    let mk = |aod: f64, aoa: f64| PathCluster {
        power_fraction: 0.25,
        aod_az: aod * deg,
        aod_el: -3.0 * deg,
        aoa_az: aoa * deg,
        aoa_el: 3.0 * deg,
        spread_aod_az: 4.0 * deg,
        spread_aod_el: 1.0 * deg,
        spread_aoa_az: 4.0 * deg,
        spread_aoa_el: 1.0 * deg,
    };
    LinkRealization {
        distance: 100.0,
        state: LinkState::Nlos,
        omni_path_loss: 120.0,
        clusters: vec![
            mk(20.0, 200.0),
            mk(110.0, 290.0),
            mk(200.0, 20.0),
            mk(290.0, 110.0),
        ],
    }
}

fn run_estimation(
    cli: &Cli,
    self_test: Option<&str>,
    samples: usize,
    power_map: Option<&Path>,
    path_loss: Option<&Path>,
) -> anyhow::Result<()> {
    let mut did_something = false;
    if let Some(path) = power_map {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read power map {path:?}"))?;
        let map = AngularPowerMap::from_csv(&text)?;
        let clusters = detect_clusters(&map)?;
        let rows: Vec<Vec<String>> = clusters
            .iter()
            .map(|c| {
                vec![
                    fmt_f64(c.center_deg[0]),
                    fmt_f64(c.center_deg[1]),
                    fmt_f64(c.center_deg[2]),
                    fmt_f64(c.center_deg[3]),
                    fmt_f64(c.spread_deg[0]),
                    fmt_f64(c.spread_deg[2]),
                    fmt_f64(c.power_fraction),
                ]
            })
            .collect();
        write_table(
            &cli.out,
            "clusters",
            cli.format,
            &[
                "tx_az_deg",
                "tx_el_deg",
                "rx_az_deg",
                "rx_el_deg",
                "tx_az_spread_deg",
                "rx_az_spread_deg",
                "power_fraction",
            ],
            &rows,
        )?;
        println!("estimation: detected {} clusters", clusters.len());
        did_something = true;
    }
    if let Some(path) = path_loss {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read path-loss samples {path:?}"))?;
        let samples_pl = path_loss_samples_from_csv(&text)?;
        let mut card = String::from("[fitted]\n");
        for (name, state) in [("nlos", LinkState::Nlos), ("los", LinkState::Los)] {
            if let Ok((a, b, s)) = fit_path_loss(&samples_pl, state) {
                card.push_str(&format!(
                    "{name}_alpha = {a:.4}\n{name}_beta = {b:.4}\n{name}_sigma = {s:.4}\n"
                ));
            }
        }
        let states: Vec<(f64, LinkState)> =
            samples_pl.iter().map(|s| (s.distance, s.state)).collect();
        if let Ok((ao, bo, al)) = fit_link_state(&states) {
            card.push_str(&format!("a_out = {ao:.6}\nb_out = {bo:.6}\na_los = {al:.6}\n"));
        }
        std::fs::write(cli.out.join("fitted_card.txt"), &card)?;
        print!("{card}");
        did_something = true;
    }
    if let Some(band_name) = self_test {
        run_self_test(cli, &resolve_band(band_name)?, samples)?;
        did_something = true;
    }
    if !did_something {
        bail!("estimation: pass --self-test, --power-map, or --path-loss");
    }
    Ok(())
}

fn run_self_test(cli: &Cli, band: &BandParameters, n: usize) -> anyhow::Result<()> {
    let mut failures: Vec<String> = Vec::new();
    let mut card = String::from("[fitted]\n");
    let mut deltas = String::new();
    let mut check = |name: &str, fitted: f64, truth: f64, tol: f64, card_out: &mut String, deltas_out: &mut String| {
        card_out.push_str(&format!("{name} = {fitted:.6}\n"));
        deltas_out.push_str(&format!(
            "{name}: fitted {fitted:.4}, truth {truth:.4}, |delta| {:.4}, tol {tol:.4}\n",
            (fitted - truth).abs()
        ));
        if (fitted - truth).abs() > tol {
            failures.push(format!(
                "{name}: fitted {fitted:.4} vs truth {truth:.4} (tol {tol:.4})"
            ));
        }
    };

    // Link-state curve parameters from categorical draws.
    let mut rng = stream_rng(cli.seed, 11);
    let states: Vec<(f64, LinkState)> = (0..n)
        .map(|_| {
            let d = 30.0 + rng.gen::<f64>() * 370.0;
            (d, sample_link_state(d, band, &mut rng))
        })
        .collect();
    let (ao, bo, al) = fit_link_state(&states)?;
    check("a_out", ao, band.a_out, 0.10 * band.a_out, &mut card, &mut deltas);
    check("b_out", bo, band.b_out, 0.10 * band.b_out, &mut card, &mut deltas);
    check("a_los", al, band.a_los, 0.10 * band.a_los, &mut card, &mut deltas);

    // Path-loss regressions: n locations per state over a wide distance
    // range, keeping the intercept extrapolation well conditioned.
    let mut rng = stream_rng(cli.seed, 12);
    let mut pls = Vec::with_capacity(2 * n);
    for state in [LinkState::Nlos, LinkState::Los] {
        for _ in 0..n {
            let d = 10.0 + rng.gen::<f64>() * 290.0;
            pls.push(mmwsim::estimation::PathLossSample {
                distance: d,
                path_loss_db: sample_path_loss(d, state, band, &mut rng)?,
                state,
            });
        }
    }
    for (name, state, alpha, beta, sigma) in [
        ("nlos", LinkState::Nlos, band.nlos_alpha, band.nlos_beta, band.nlos_sigma),
        ("los", LinkState::Los, band.los_alpha, band.los_beta, band.los_sigma),
    ] {
        let (a, b, s) = fit_path_loss(&pls, state)?;
        check(&format!("{name}_alpha"), a, alpha, 2.0, &mut card, &mut deltas);
        check(&format!("{name}_beta"), b, beta, 0.15, &mut card, &mut deltas);
        check(&format!("{name}_sigma"), s, sigma, 1.0, &mut card, &mut deltas);
    }

    // Cluster-power parameters from two-cluster weak fractions.
    let mut rng = stream_rng(cli.seed, 13);
    let weak: Vec<f64> = (0..n)
        .map(|_| {
            let f = sample_cluster_power_fractions(2, band, &mut rng);
            f[0].min(f[1])
        })
        .collect();
    let (r_tau, zeta) = fit_cluster_power(&weak)?;
    check("r_tau", r_tau, band.r_tau, 0.3, &mut card, &mut deltas);
    check("zeta", zeta, band.zeta, 0.5, &mut card, &mut deltas);

    // Angular-spread mean and cluster-count estimators.
    let mut rng = stream_rng(cli.seed, 14);
    let spreads: Vec<f64> = (0..n)
        .map(|_| -band.ue_az_spread_mean * (1.0 - rng.gen::<f64>()).ln())
        .collect();
    check(
        "ue_az_spread_mean",
        fit_angular_spread(&spreads),
        band.ue_az_spread_mean,
        0.05 * band.ue_az_spread_mean,
        &mut card,
        &mut deltas,
    );
    let counts: Vec<usize> = (0..n).map(|_| sample_num_clusters(band, &mut rng)).collect();
    let biased_truth = band.lambda_k + (-band.lambda_k).exp();
    check(
        "mean_cluster_count",
        fit_cluster_count(&counts),
        biased_truth,
        0.1,
        &mut card,
        &mut deltas,
    );

    // Cluster detection on a synthetic well-separated map.
    let link = four_cluster_link();
    let map = synthesize_map_from_link(&link, &[3.0], -3.0, -30.0);
    let clusters = detect_clusters(&map)?;
    deltas.push_str(&format!("detected_clusters: {}\n", clusters.len()));
    if clusters.len() != 4 {
        failures.push(format!("cluster detection found {} of 4", clusters.len()));
    } else {
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
            let t = truth.aod_az.to_degrees();
            let found = clusters
                .iter()
                .any(|c| wrap(c.center_deg[0] - t).abs() <= 10.0);
            if !found {
                failures.push(format!("no detected cluster near TX azimuth {t:.0} deg"));
            }
        }
    }

    std::fs::write(cli.out.join("fitted_card.txt"), &card)?;
    std::fs::write(cli.out.join("fit_deltas.txt"), &deltas)?;
    print!("{deltas}");
    if !failures.is_empty() {
        bail!("self-test tolerance violations:\n{}", failures.join("\n"));
    }
    println!("estimation self-test passed");
    Ok(())
}
