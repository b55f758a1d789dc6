//! Power-weighted K-means in the 4-D angular space.
//!
//! Azimuth dimensions (tx_az, rx_az) use circular differences with a 360
//! degree period; elevation dimensions are linear.  Weights are linear
//! received powers.

/// Largest cluster count probed by the stepping search.
pub const K_CAP: usize = 10;

const AZ_DIMS: [bool; 4] = [true, false, true, false];
const RESTARTS: usize = 10;
const MAX_ITERS: usize = 200;

#[derive(Debug, Clone)]
pub struct Cluster {
    /// Power-weighted centroid, degrees; azimuth components in [0, 360).
    pub center: [f64; 4],
    /// Total member power.
    pub power: f64,
    /// Indices into the cell list.
    pub members: Vec<usize>,
}

/// Signed angular difference `a - b` in the given dimension.
fn diff(dim: usize, a: f64, b: f64) -> f64 {
    let d = a - b;
    if AZ_DIMS[dim] {
        let mut d = d.rem_euclid(360.0);
        if d > 180.0 {
            d -= 360.0;
        }
        d
    } else {
        d
    }
}

fn dist2(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    (0..4).map(|i| diff(i, a[i], b[i]).powi(2)).sum()
}

/// Power-weighted centroid; circular mean in the azimuth dimensions.
fn centroid(members: &[usize], cells: &[([f64; 4], f64)]) -> [f64; 4] {
    let mut out = [0.0; 4];
    let total: f64 = members.iter().map(|&i| cells[i].1).sum();
    for dim in 0..4 {
        if AZ_DIMS[dim] {
            let (mut s, mut c) = (0.0, 0.0);
            for &i in members {
                let (ang, w) = (cells[i].0[dim].to_radians(), cells[i].1);
                s += w * ang.sin();
                c += w * ang.cos();
            }
            out[dim] = s.atan2(c).to_degrees().rem_euclid(360.0);
        } else {
            let m: f64 = members.iter().map(|&i| cells[i].1 * cells[i].0[dim]).sum();
            out[dim] = if total > 0.0 { m / total } else { 0.0 };
        }
    }
    out
}

fn objective(clusters: &[Cluster], cells: &[([f64; 4], f64)]) -> f64 {
    clusters
        .iter()
        .flat_map(|cl| cl.members.iter().map(move |&i| cells[i].1 * dist2(&cells[i].0, &cl.center)))
        .sum()
}

/// Farthest-point seeding: the first center is fixed by the restart index
/// over the power-sorted cells, the rest maximize the power-weighted
/// distance to the chosen set.
fn seed(cells: &[([f64; 4], f64)], k: usize, restart: usize) -> Vec<[f64; 4]> {
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| cells[b].1.total_cmp(&cells[a].1).then(a.cmp(&b)));
    let mut centers = vec![cells[order[restart % cells.len()]].0];
    while centers.len() < k {
        let next = (0..cells.len())
            .max_by(|&a, &b| {
                let da = cells[a].1
                    * centers.iter().map(|c| dist2(&cells[a].0, c)).fold(f64::INFINITY, f64::min);
                let db = cells[b].1
                    * centers.iter().map(|c| dist2(&cells[b].0, c)).fold(f64::INFINITY, f64::min);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("nonempty cells");
        centers.push(cells[next].0);
    }
    centers
}

fn lloyd(cells: &[([f64; 4], f64)], mut centers: Vec<[f64; 4]>) -> Vec<Cluster> {
    let k = centers.len();
    let mut assign = vec![usize::MAX; cells.len()];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, (x, _)) in cells.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| dist2(x, &centers[a]).total_cmp(&dist2(x, &centers[b])))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (j, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> =
                (0..cells.len()).filter(|&i| assign[i] == j).collect();
            if !members.is_empty() {
                *center = centroid(&members, cells);
            }
        }
    }
    (0..k)
        .map(|j| {
            let members: Vec<usize> = (0..cells.len()).filter(|&i| assign[i] == j).collect();
            let power = members.iter().map(|&i| cells[i].1).sum();
            let center = if members.is_empty() {
                centers[j]
            } else {
                centroid(&members, cells)
            };
            Cluster {
                center,
                power,
                members,
            }
        })
        .collect()
}

/// Best-of-restarts power-weighted K-means; ties resolve to the earliest
/// restart, so the result is deterministic.
pub fn run(cells: &[([f64; 4], f64)], k: usize) -> Vec<Cluster> {
    let mut best: Option<(f64, Vec<Cluster>)> = None;
    for restart in 0..RESTARTS.min(cells.len()) {
        let clusters = lloyd(cells, seed(cells, k, restart));
        let obj = objective(&clusters, cells);
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, clusters));
        }
    }
    best.expect("at least one restart").1
}

/// Raw (unclipped) power-weighted rms spread of a cluster per dimension.
fn raw_spread(cl: &Cluster, cells: &[([f64; 4], f64)]) -> [f64; 4] {
    spread_of(&cl.members, &cl.center, cells)
}

fn spread_of(members: &[usize], center: &[f64; 4], cells: &[([f64; 4], f64)]) -> [f64; 4] {
    let total: f64 = members.iter().map(|&i| cells[i].1).sum();
    let mut out = [0.0; 4];
    if total <= 0.0 {
        return out;
    }
    for dim in 0..4 {
        let ss: f64 = members
            .iter()
            .map(|&i| cells[i].1 * diff(dim, cells[i].0[dim], center[dim]).powi(2))
            .sum();
        out[dim] = (ss / total).sqrt();
    }
    out
}

/// Measurement grid step in the azimuth dimensions, degrees.  Centers are
/// only resolved to this step, so the stopping test grants one step of slack
/// before comparing separations against spreads.
pub const AZ_GRID_STEP: f64 = 10.0;

/// Stopping test: an empty cluster, or some pair of clusters mutually within
/// two pooled standard deviations in all four dimensions (after one grid
/// step of azimuth resolution slack).
pub fn should_stop(clusters: &[Cluster], cells: &[([f64; 4], f64)]) -> bool {
    if clusters.iter().any(|c| c.members.is_empty()) {
        return true;
    }
    let spreads: Vec<[f64; 4]> = clusters.iter().map(|c| raw_spread(c, cells)).collect();
    for a in 0..clusters.len() {
        for b in (a + 1)..clusters.len() {
            let (wa, wb) = (clusters[a].power, clusters[b].power);
            let close = (0..4).all(|dim| {
                let pooled = ((wa * spreads[a][dim].powi(2) + wb * spreads[b][dim].powi(2))
                    / (wa + wb))
                    .sqrt();
                let slack = if AZ_DIMS[dim] { AZ_GRID_STEP } else { 0.0 };
                let sep = diff(dim, clusters[a].center[dim], clusters[b].center[dim]).abs();
                (sep - slack).max(0.0) <= 2.0 * pooled
            });
            if close {
                return true;
            }
        }
    }
    false
}

/// Spread estimate after discarding the lowest-power cells carrying 10% of
/// the cluster's power; returns (per-dimension rms spread, retained power).
pub fn clipped_spread(cl: &Cluster, cells: &[([f64; 4], f64)]) -> ([f64; 4], f64) {
    let mut members = cl.members.clone();
    members.sort_by(|&a, &b| cells[a].1.total_cmp(&cells[b].1).then(a.cmp(&b)));
    let budget = 0.1 * cl.power;
    let mut dropped = 0.0;
    let mut keep_from = 0;
    for (idx, &i) in members.iter().enumerate() {
        if dropped + cells[i].1 <= budget && idx + 1 < members.len() {
            dropped += cells[i].1;
            keep_from = idx + 1;
        } else {
            break;
        }
    }
    let kept: Vec<usize> = members[keep_from..].to_vec();
    let center = centroid(&kept, cells);
    let retained: f64 = kept.iter().map(|&i| cells[i].1).sum();
    (spread_of(&kept, &center, cells), retained)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circular_difference() {
        assert_eq!(diff(0, 350.0, 10.0), -20.0);
        assert_eq!(diff(0, 10.0, 350.0), 20.0);
        assert_eq!(diff(1, 10.0, -20.0), 30.0);
    }

    #[test]
    fn circular_centroid_wraps() {
        let cells = vec![([350.0, 0.0, 0.0, 0.0], 1.0), ([10.0, 0.0, 0.0, 0.0], 1.0)];
        let c = centroid(&[0, 1], &cells);
        assert!(c[0] < 1e-9 || c[0] > 359.999, "centroid {c:?}");
    }

    #[test]
    fn objective_nonincreasing_over_k() {
        let cells: Vec<([f64; 4], f64)> = (0..20)
            .map(|i| {
                let az = (i * 17 % 360) as f64;
                ([az, 0.0, (az * 2.0) % 360.0, 0.0], 1.0 + (i % 3) as f64)
            })
            .collect();
        let mut prev = f64::INFINITY;
        for k in 1..=4 {
            let obj = objective(&run(&cells, k), &cells);
            assert!(obj <= prev + 1e-9, "objective grew at k={k}");
            prev = obj;
        }
    }

    #[test]
    fn clipping_discards_low_power_tail() {
        // One strong cell plus far-away dust below the 10% budget.
        let mut cells = vec![([100.0, 0.0, 200.0, 0.0], 96.0)];
        for i in 0..4 {
            cells.push(([(140.0 + i as f64), 0.0, 200.0, 0.0], 1.0));
        }
        let cl = run(&cells, 1).remove(0);
        let (spread, retained) = clipped_spread(&cl, &cells);
        assert!(retained >= 0.9 * cl.power - 1e-12);
        // With the dust clipped, spread collapses onto the strong cell.
        assert!(spread[0] < 1.0, "spread {spread:?}");
    }
}
