//! Parameter estimation from angular power maps and link-budget samples.
//!
//! The measurement side of the model: detect path clusters in a 4-D angular
//! power map with power-weighted K-means, and fit every parameter of a
//! [`BandParameters`](crate::params::BandParameters) card from (synthetic or
//! real) data.

mod fits;
mod kmeans;

pub use fits::{
    fit_angular_spread, fit_cluster_count, fit_cluster_power, fit_link_state, fit_path_loss,
};

use crate::channel::{LinkRealization, LinkState};
use crate::error::{Error, Result};

/// State of one angular grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellStatus {
    /// The sweep never visited this offset.
    NotMeasured,
    /// Visited, but no path cleared the SNR threshold.
    BelowThreshold,
    /// Valid detection with total received power in mW.
    Power(f64),
}

/// One cell of the 4-D (tx_az, tx_el, rx_az, rx_el) sweep, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapCell {
    pub tx_az_deg: f64,
    pub tx_el_deg: f64,
    pub rx_az_deg: f64,
    pub rx_el_deg: f64,
    pub status: CellStatus,
}

/// Subsampled angular power measurement at one TX-RX location.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AngularPowerMap {
    pub cells: Vec<MapCell>,
}

impl AngularPowerMap {
    /// Cells with a valid power detection, as (angles, power mW).
    pub fn valid_cells(&self) -> Vec<([f64; 4], f64)> {
        self.cells
            .iter()
            .filter_map(|c| match c.status {
                CellStatus::Power(p) if p > 0.0 => {
                    Some(([c.tx_az_deg, c.tx_el_deg, c.rx_az_deg, c.rx_el_deg], p))
                }
                _ => None,
            })
            .collect()
    }

    pub fn total_power(&self) -> f64 {
        self.valid_cells().iter().map(|(_, p)| p).sum()
    }

    /// Parse from CSV with columns
    /// `tx_az_deg,tx_el_deg,rx_az_deg,rx_el_deg,status,power_dbm`
    /// where status is one of `M` (not measured), `B` (below threshold),
    /// `P` (power present, `power_dbm` valid).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut cells = Vec::new();
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
        if !header.starts_with("tx_az_deg") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unexpected header {header:?}"),
            });
        }
        for (idx, raw) in lines {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected 6 fields, got {}", fields.len()),
                });
            }
            let num = |i: usize| -> Result<f64> {
                fields[i].trim().parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("invalid number {:?}", fields[i]),
                })
            };
            let status = match fields[4].trim() {
                "M" => CellStatus::NotMeasured,
                "B" => CellStatus::BelowThreshold,
                "P" => CellStatus::Power(10f64.powf(0.1 * num(5)?)),
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("invalid status {other:?}"),
                    })
                }
            };
            cells.push(MapCell {
                tx_az_deg: num(0)?,
                tx_el_deg: num(1)?,
                rx_az_deg: num(2)?,
                rx_el_deg: num(3)?,
                status,
            });
        }
        Ok(AngularPowerMap { cells })
    }
}

/// One detected cluster in the 4-D angular space, angles in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEstimate {
    /// (tx_az, tx_el, rx_az, rx_el) center.
    pub center_deg: [f64; 4],
    /// rms spreads per dimension, after low-power clipping.
    pub spread_deg: [f64; 4],
    pub power_mw: f64,
    pub power_fraction: f64,
}

/// One path-loss observation with its manually labelled state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossSample {
    pub distance: f64,
    pub path_loss_db: f64,
    pub state: LinkState,
}

/// Parse path-loss samples from CSV with columns `distance_m,pl_db,state`
/// where state is `L`, `N` or `O`.
pub fn path_loss_samples_from_csv(text: &str) -> Result<Vec<PathLossSample>> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    if !header.starts_with("distance_m") {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unexpected header {header:?}"),
        });
    }
    for (idx, raw) in lines {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid number {:?}", fields[i]),
            })
        };
        let state = match fields[2].trim() {
            "L" => LinkState::Los,
            "N" => LinkState::Nlos,
            "O" => LinkState::Outage,
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("invalid state {other:?}"),
                })
            }
        };
        // Outage rows have no finite path loss; an empty pl_db is accepted.
        let path_loss_db = if state == LinkState::Outage && fields[1].trim().is_empty() {
            f64::INFINITY
        } else {
            num(1)?
        };
        out.push(PathLossSample {
            distance: num(0)?,
            path_loss_db,
            state,
        });
    }
    Ok(out)
}

/// Detect path clusters in an angular power map.
///
/// Runs power-weighted K-means for K = 1, 2, 3, ... and keeps the clustering
/// for the largest K before a stopping condition fires: two clusters within
/// two pooled standard deviations of each other in every angular dimension
/// (granting one grid step of center resolution in azimuth), or an empty
/// cluster.  Spreads are estimated after discarding the
/// lowest-power cells holding 10% of each cluster's power.
pub fn detect_clusters(map: &AngularPowerMap) -> Result<Vec<ClusterEstimate>> {
    let cells = map.valid_cells();
    if cells.is_empty() {
        return Err(Error::MapInOutage);
    }
    let total: f64 = cells.iter().map(|(_, p)| p).sum();

    let mut accepted = kmeans::run(&cells, 1);
    let k_max = cells.len().min(kmeans::K_CAP);
    for k in 2..=k_max {
        let candidate = kmeans::run(&cells, k);
        if kmeans::should_stop(&candidate, &cells) {
            break;
        }
        accepted = candidate;
    }

    let mut out: Vec<ClusterEstimate> = accepted
        .iter()
        .map(|cl| {
            let (spread, _) = kmeans::clipped_spread(cl, &cells);
            ClusterEstimate {
                center_deg: cl.center,
                spread_deg: spread,
                power_mw: cl.power,
                power_fraction: cl.power / total,
            }
        })
        .collect();
    // Strongest cluster first.
    out.sort_by(|a, b| b.power_mw.total_cmp(&a.power_mw));
    Ok(out)
}

/// Build a synthetic angular power map from a large-scale link draw, on a
/// 10-degree azimuth grid.  Each cluster deposits a separable Gaussian power
/// footprint around its central angles; cells below `floor_db` of the peak
/// cell are reported as below threshold.  Used by self-test mode and the
/// round-trip tests.
pub fn synthesize_map_from_link(
    link: &LinkRealization,
    rx_el_grid_deg: &[f64],
    tx_el_deg: f64,
    floor_db: f64,
) -> AngularPowerMap {
    const STEP: f64 = 10.0;
    let gauss = |x: f64, sigma_deg: f64| -> f64 {
        // A narrow floor keeps zero-spread clusters on a single grid cell.
        let s = sigma_deg.max(1.0);
        (-0.5 * (x / s).powi(2)).exp() / s
    };
    let wrap = |x: f64| -> f64 {
        let mut d = x % 360.0;
        if d > 180.0 {
            d -= 360.0;
        }
        if d < -180.0 {
            d += 360.0;
        }
        d
    };
    let total = link.linear_gain().max(1e-12) * 1e3; // arbitrary mW scale
    let mut cells = Vec::new();
    let n_az = (360.0 / STEP) as usize;
    for it in 0..n_az {
        let tx_az = it as f64 * STEP;
        for ir in 0..n_az {
            let rx_az = ir as f64 * STEP;
            for &rx_el in rx_el_grid_deg {
                let mut p = 0.0;
                for c in &link.clusters {
                    p += total
                        * c.power_fraction
                        * gauss(wrap(tx_az - c.aod_az.to_degrees()), c.spread_aod_az.to_degrees())
                        * gauss(wrap(rx_az - c.aoa_az.to_degrees()), c.spread_aoa_az.to_degrees())
                        * gauss(rx_el - c.aoa_el.to_degrees(), c.spread_aoa_el.to_degrees());
                }
                cells.push(MapCell {
                    tx_az_deg: tx_az,
                    tx_el_deg,
                    rx_az_deg: rx_az,
                    rx_el_deg: rx_el,
                    status: CellStatus::Power(p),
                });
            }
        }
    }
    let peak = cells
        .iter()
        .map(|c| match c.status {
            CellStatus::Power(p) => p,
            _ => 0.0,
        })
        .fold(0.0f64, f64::max);
    let floor = peak * 10f64.powf(0.1 * floor_db);
    for c in &mut cells {
        if let CellStatus::Power(p) = c.status {
            if p < floor {
                c.status = CellStatus::BelowThreshold;
            }
        }
    }
    AngularPowerMap { cells }
}
