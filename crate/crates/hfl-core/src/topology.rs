//! Server-side view of the client population: density-based clustering over
//! 2-D positions and per-round core-client selection.
//!
//! Core selection follows a rotating-threshold rule: each round, every
//! cluster member gets a threshold
//!
//! `T = [p / (1 - p * (u mod ceil(1/p)))] * (E_rest / E_avg) * (1 - d_cen / d_avg)`
//!
//! and draws a seeded uniform `s` in `[0, 1)`. Members with `s < T` are
//! candidates; the one with the largest margin becomes core. A member that
//! already served as core in the current rotation epoch gets `T = 0`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Stable client identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A client as the server sees it: position in km and residual energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientSite {
    pub id: ClientId,
    pub x_km: f64,
    pub y_km: f64,
    pub residual_energy_j: f64,
}

impl ClientSite {
    pub fn distance_km(&self, other_x: f64, other_y: f64) -> f64 {
        (self.x_km - other_x).hypot(self.y_km - other_y)
    }
}

/// One cluster: sorted member ids, centroid of member positions, and the
/// current core client once selected.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub members: Vec<ClientId>,
    pub centroid_km: (f64, f64),
    pub core: Option<ClientId>,
}

/// The full clustering. Every live client appears in exactly one cluster;
/// DBSCAN noise points appear as singleton clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMap {
    pub clusters: Vec<Cluster>,
}

impl ClusterMap {
    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_of(&self, id: ClientId) -> Option<usize> {
        self.clusters.iter().position(|c| c.members.binary_search(&id).is_ok())
    }

    /// Drop dead members and empty clusters, recomputing centroids from the
    /// surviving members. Cluster order (and hence index identity for the
    /// compression bank) is preserved together with the original index.
    pub fn retain_live(
        &self,
        live: &BTreeSet<ClientId>,
        sites: &BTreeMap<ClientId, ClientSite>,
    ) -> Vec<(usize, Cluster)> {
        let mut out = Vec::new();
        for (idx, cluster) in self.clusters.iter().enumerate() {
            let members: Vec<ClientId> = cluster
                .members
                .iter()
                .copied()
                .filter(|id| live.contains(id))
                .collect();
            if members.is_empty() {
                continue;
            }
            out.push((idx, make_cluster(members, sites)));
        }
        out
    }
}

fn make_cluster(members: Vec<ClientId>, sites: &BTreeMap<ClientId, ClientSite>) -> Cluster {
    let n = members.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for id in &members {
        let s = &sites[id];
        cx += s.x_km;
        cy += s.y_km;
    }
    Cluster {
        members,
        centroid_km: (cx / n, cy / n),
        core: None,
    }
}

pub fn site_index(sites: &[ClientSite]) -> BTreeMap<ClientId, ClientSite> {
    sites.iter().map(|s| (s.id, *s)).collect()
}

/// Standard DBSCAN over client positions with Euclidean distance. A point's
/// neighborhood includes itself. Noise points become singleton clusters so
/// every client can still reach the server through some core.
///
/// Deterministic: clusters are discovered in input order, members sorted by
/// id, noise singletons appended in id order.
pub fn dbscan_cluster(sites: &[ClientSite], r_neighbor_km: f64, p_min: usize) -> Result<ClusterMap> {
    if sites.is_empty() {
        return Err(Error::usage("dbscan_cluster requires at least one site"));
    }
    if !(r_neighbor_km > 0.0) {
        return Err(Error::usage("r_neighbor must be > 0"));
    }
    if p_min == 0 {
        return Err(Error::usage("p_min must be >= 1"));
    }
    let n = sites.len();
    let neighborhoods: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| {
                    sites[i].distance_km(sites[j].x_km, sites[j].y_km) <= r_neighbor_km
                })
                .collect()
        })
        .collect();

    const UNVISITED: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let mut label = vec![UNVISITED; n];
    let mut next_cluster = 0usize;

    for start in 0..n {
        if label[start] != UNVISITED {
            continue;
        }
        if neighborhoods[start].len() < p_min {
            label[start] = NOISE;
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        label[start] = cluster;
        let mut queue: Vec<usize> = neighborhoods[start].clone();
        let mut head = 0;
        while head < queue.len() {
            let point = queue[head];
            head += 1;
            if label[point] == NOISE {
                label[point] = cluster; // border point
            }
            if label[point] != UNVISITED {
                continue;
            }
            label[point] = cluster;
            if neighborhoods[point].len() >= p_min {
                queue.extend_from_slice(&neighborhoods[point]);
            }
        }
    }

    let site_map = site_index(sites);
    let mut clusters = Vec::new();
    for c in 0..next_cluster {
        let mut members: Vec<ClientId> = (0..n)
            .filter(|&i| label[i] == c)
            .map(|i| sites[i].id)
            .collect();
        members.sort_unstable();
        clusters.push(make_cluster(members, &site_map));
    }
    for i in 0..n {
        if label[i] == NOISE {
            clusters.push(make_cluster(vec![sites[i].id], &site_map));
        }
    }
    Ok(ClusterMap { clusters })
}

/// Per-cluster averages feeding the threshold: mean residual energy, mean
/// member-to-centroid distance, and the centroid itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterStats {
    pub e_avg_j: f64,
    pub d_avg_km: f64,
    pub centroid_km: (f64, f64),
}

/// Compute the cluster averages over its members.
pub fn cluster_stats(cluster: &Cluster, sites: &BTreeMap<ClientId, ClientSite>) -> Result<ClusterStats> {
    if cluster.members.is_empty() {
        return Err(Error::Internal("cluster has no members".into()));
    }
    let n = cluster.members.len() as f64;
    let mut e_sum = 0.0;
    let mut d_sum = 0.0;
    for id in &cluster.members {
        let site = sites
            .get(id)
            .ok_or_else(|| Error::Internal(format!("no site for client {id}")))?;
        e_sum += site.residual_energy_j;
        d_sum += site.distance_km(cluster.centroid_km.0, cluster.centroid_km.1);
    }
    Ok(ClusterStats {
        e_avg_j: e_sum / n,
        d_avg_km: d_sum / n,
        centroid_km: cluster.centroid_km,
    })
}

/// The rotating core-selection threshold for one client.
///
/// Degenerate conventions: a client that served this epoch gets 0; if the
/// cluster's `d_avg` is 0 the distance factor is 1; if `E_avg` is 0 the
/// energy factor is 1; a negative product clamps to 0 (a uniform draw in
/// `[0, 1)` can never beat a negative threshold anyway).
pub fn core_threshold(
    site: &ClientSite,
    stats: &ClusterStats,
    round: u64,
    core_fraction: f64,
    served_in_epoch: bool,
) -> Result<f64> {
    let p = core_fraction;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::usage(format!("core fraction must be in (0, 1), got {p}")));
    }
    if served_in_epoch {
        return Ok(0.0);
    }
    let epoch_len = (1.0 / p).ceil() as u64;
    let phase = (round % epoch_len) as f64;
    let randomization = p / (1.0 - p * phase);
    let energy_factor = if stats.e_avg_j == 0.0 {
        1.0
    } else {
        site.residual_energy_j / stats.e_avg_j
    };
    let distance_factor = if stats.d_avg_km == 0.0 {
        1.0
    } else {
        1.0 - site.distance_km(stats.centroid_km.0, stats.centroid_km.1) / stats.d_avg_km
    };
    Ok((randomization * energy_factor * distance_factor).max(0.0))
}

/// Rotation epoch length in rounds, `ceil(1/p)`.
pub fn epoch_len(core_fraction: f64) -> u64 {
    (1.0 / core_fraction).ceil() as u64
}

/// Select one core per cluster for the given round.
///
/// Per member, a uniform draw `s` is derived from `(rng_seed, round, id)`;
/// members with `s < T` compete by margin `T - s`. If none passes, the
/// member with maximum `T` wins; if every threshold is 0, the member with
/// maximum residual energy wins, ties toward the lowest id.
pub fn select_cores(
    map: &ClusterMap,
    sites: &BTreeMap<ClientId, ClientSite>,
    round: u64,
    core_fraction: f64,
    served: &BTreeSet<ClientId>,
    rng_seed: u64,
) -> Result<ClusterMap> {
    let mut out = map.clone();
    for cluster in out.clusters.iter_mut() {
        if cluster.members.is_empty() {
            return Err(Error::Internal("select_cores hit an empty cluster".into()));
        }
        let stats = cluster_stats(cluster, sites)?;
        let mut best_margin: Option<(f64, ClientId)> = None;
        let mut best_threshold: Option<(f64, ClientId)> = None;
        for id in &cluster.members {
            let site = &sites[id];
            let t = core_threshold(site, &stats, round, core_fraction, served.contains(id))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(rng_seed, round, id.0 as u64));
            let s: f64 = rng.gen_range(0.0..1.0);
            if s < t && best_margin.as_ref().is_none_or(|(m, _)| t - s > *m) {
                best_margin = Some((t - s, *id));
            }
            if best_threshold.as_ref().is_none_or(|(m, _)| t > *m) {
                best_threshold = Some((t, *id));
            }
        }
        let core = match (best_margin, best_threshold) {
            (Some((_, id)), _) => id,
            (None, Some((t, id))) if t > 0.0 => id,
            _ => {
                // Everyone at T = 0: richest member serves, ties to lowest id.
                let mut best = cluster.members[0];
                for id in &cluster.members[1..] {
                    if sites[id].residual_energy_j > sites[&best].residual_energy_j {
                        best = *id;
                    }
                }
                best
            }
        };
        cluster.core = Some(core);
    }
    Ok(out)
}

/// Uniformly random core per cluster (the selection-ablation baseline).
pub fn select_cores_random(
    map: &ClusterMap,
    round: u64,
    rng_seed: u64,
) -> Result<ClusterMap> {
    let mut out = map.clone();
    for (idx, cluster) in out.clusters.iter_mut().enumerate() {
        if cluster.members.is_empty() {
            return Err(Error::Internal("select_cores_random hit an empty cluster".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(rng_seed, round, idx as u64));
        let pick = rng.gen_range(0..cluster.members.len());
        cluster.core = Some(cluster.members[pick]);
    }
    Ok(out)
}

/// Parse a positions file: one `id x_km y_km` triple per whitespace-separated
/// line; blank lines ignored.
pub fn load_positions(path: impl AsRef<Path>) -> Result<Vec<(ClientId, f64, f64)>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "positions line {}: expected `id x_km y_km`, got {} fields",
                lineno + 1,
                fields.len()
            )));
        }
        let id: u32 = fields[0]
            .parse()
            .map_err(|_| Error::Format(format!("positions line {}: bad id", lineno + 1)))?;
        let x: f64 = fields[1]
            .parse()
            .map_err(|_| Error::Format(format!("positions line {}: bad x", lineno + 1)))?;
        let y: f64 = fields[2]
            .parse()
            .map_err(|_| Error::Format(format!("positions line {}: bad y", lineno + 1)))?;
        out.push((ClientId(id), x, y));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn site(id: u32, x: f64, y: f64) -> ClientSite {
        ClientSite {
            id: ClientId(id),
            x_km: x,
            y_km: y,
            residual_energy_j: 1.0,
        }
    }

    /// Independent reference DBSCAN: textbook pseudocode over a precomputed
    /// distance matrix, with the same visit-order semantics.
    fn reference_dbscan(sites: &[ClientSite], r: f64, p_min: usize) -> Vec<i64> {
        let n = sites.len();
        let mut dist = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                dist[i][j] =
                    ((sites[i].x_km - sites[j].x_km).powi(2) + (sites[i].y_km - sites[j].y_km).powi(2)).sqrt();
            }
        }
        let range = |i: usize| -> Vec<usize> { (0..n).filter(|&j| dist[i][j] <= r).collect() };
        let mut labels = vec![0i64; n]; // 0 undefined, -1 noise, >= 1 cluster
        let mut c = 0i64;
        for p in 0..n {
            if labels[p] != 0 {
                continue;
            }
            let nb = range(p);
            if nb.len() < p_min {
                labels[p] = -1;
                continue;
            }
            c += 1;
            labels[p] = c;
            let mut stack = nb;
            let mut i = 0;
            while i < stack.len() {
                let q = stack[i];
                i += 1;
                if labels[q] == -1 {
                    labels[q] = c;
                }
                if labels[q] != 0 {
                    continue;
                }
                labels[q] = c;
                let nq = range(q);
                if nq.len() >= p_min {
                    stack.extend(nq);
                }
            }
        }
        labels
    }

    #[test]
    fn coincident_points_form_one_cluster() {
        let sites: Vec<ClientSite> = (0..5).map(|i| site(i, 3.0, 4.0)).collect();
        let map = dbscan_cluster(&sites, 1.0, 5).unwrap();
        assert_eq!(map.cluster_count(), 1);
        assert_eq!(map.clusters[0].members.len(), 5);
        assert_eq!(map.clusters[0].centroid_km, (3.0, 4.0));
    }

    #[test]
    fn distant_groups_split_into_two_clusters() {
        // Two tight 5-point groups 100 km apart at the r_neighbor = 5 km,
        // p_min = 5 operating point.
        let mut sites = Vec::new();
        for i in 0..5 {
            sites.push(site(i, i as f64 * 0.5, 0.0));
        }
        for i in 5..10 {
            sites.push(site(i, 100.0 + (i - 5) as f64 * 0.5, 0.0));
        }
        let map = dbscan_cluster(&sites, 5.0, 5).unwrap();
        assert_eq!(map.cluster_count(), 2);
        assert!(map.clusters.iter().all(|c| c.members.len() == 5));
    }

    #[test]
    fn isolated_point_becomes_singleton_cluster() {
        let mut sites: Vec<ClientSite> = (0..5).map(|i| site(i, 0.1 * i as f64, 0.0)).collect();
        sites.push(site(99, 500.0, 500.0));
        let map = dbscan_cluster(&sites, 5.0, 5).unwrap();
        assert_eq!(map.cluster_count(), 2);
        let singleton = map.clusters.iter().find(|c| c.members.len() == 1).unwrap();
        assert_eq!(singleton.members[0], ClientId(99));
    }

    #[test]
    fn centroid_is_mean_of_member_positions() {
        let sites = vec![site(0, 0.0, 0.0), site(1, 2.0, 0.0), site(2, 1.0, 3.0)];
        let map = dbscan_cluster(&sites, 10.0, 1).unwrap();
        assert_eq!(map.cluster_count(), 1);
        let (cx, cy) = map.clusters[0].centroid_km;
        assert!((cx - 1.0).abs() < 1e-12);
        assert!((cy - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn dbscan_matches_reference_up_to_relabeling(
            seed in any::<u64>(),
            r in 0.5f64..6.0,
            p_min in 1usize..6,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sites: Vec<ClientSite> = (0..30)
                .map(|i| site(i, rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0)))
                .collect();
            let map = dbscan_cluster(&sites, r, p_min).unwrap();

            // Partition property: every client exactly once.
            let mut seen = BTreeSet::new();
            for c in &map.clusters {
                for id in &c.members {
                    prop_assert!(seen.insert(*id));
                }
            }
            prop_assert_eq!(seen.len(), 30);

            // Same co-membership relation as the reference labels (noise
            // points are singletons on our side).
            let reference = reference_dbscan(&sites, r, p_min);
            for i in 0..30usize {
                for j in 0..30usize {
                    let ours_same =
                        map.cluster_of(ClientId(i as u32)) == map.cluster_of(ClientId(j as u32));
                    let ref_same = if reference[i] == -1 || reference[j] == -1 {
                        i == j
                    } else {
                        reference[i] == reference[j]
                    };
                    prop_assert_eq!(ours_same, ref_same, "pair ({}, {})", i, j);
                }
            }
        }
    }

    fn stats(e_avg: f64, d_avg: f64) -> ClusterStats {
        ClusterStats {
            e_avg_j: e_avg,
            d_avg_km: d_avg,
            centroid_km: (0.0, 0.0),
        }
    }

    fn site_at(d_cen: f64, energy: f64) -> ClientSite {
        ClientSite {
            id: ClientId(0),
            x_km: d_cen,
            y_km: 0.0,
            residual_energy_j: energy,
        }
    }

    #[test]
    fn threshold_round_zero_balanced_client() {
        // u = 0, E_rest = E_avg, d_cen = 0, p = 0.1 -> T = 0.1.
        let t = core_threshold(&site_at(0.0, 5.0), &stats(5.0, 2.0), 0, 0.1, false).unwrap();
        assert!((t - 0.1).abs() < 1e-12);
    }

    #[test]
    fn threshold_late_epoch_example() {
        // u = 9, p = 0.1: randomization = 0.1 / (1 - 0.9) = 1;
        // 1 * 0.8 * (1 - 0.25) = 0.6.
        let t = core_threshold(&site_at(0.5, 0.8), &stats(1.0, 2.0), 9, 0.1, false).unwrap();
        assert!((t - 0.6).abs() < 1e-12);
    }

    #[test]
    fn threshold_vanishes_at_average_distance() {
        let t = core_threshold(&site_at(2.0, 1.0), &stats(1.0, 2.0), 0, 0.1, false).unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn threshold_degenerate_conventions() {
        // d_avg = 0: distance factor 1. E_avg = 0: energy factor 1.
        let t = core_threshold(&site_at(0.0, 2.0), &stats(1.0, 0.0), 0, 0.1, false).unwrap();
        assert!((t - 0.2).abs() < 1e-12);
        let t = core_threshold(&site_at(0.0, 7.0), &stats(0.0, 2.0), 0, 0.1, false).unwrap();
        assert!((t - 0.1).abs() < 1e-12);
        // Served this epoch: 0 regardless.
        let t = core_threshold(&site_at(0.0, 7.0), &stats(1.0, 2.0), 0, 0.1, true).unwrap();
        assert_eq!(t, 0.0);
        // Beyond-average distance clamps to 0 instead of going negative.
        let t = core_threshold(&site_at(3.0, 1.0), &stats(1.0, 2.0), 0, 0.1, false).unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn threshold_rejects_bad_core_fraction() {
        assert!(core_threshold(&site_at(0.0, 1.0), &stats(1.0, 1.0), 0, 0.0, false).is_err());
        assert!(core_threshold(&site_at(0.0, 1.0), &stats(1.0, 1.0), 0, 1.0, false).is_err());
    }

    #[test]
    fn threshold_monotone_in_energy_and_distance() {
        let s = stats(1.0, 2.0);
        let low = core_threshold(&site_at(0.5, 0.5), &s, 3, 0.1, false).unwrap();
        let high = core_threshold(&site_at(0.5, 0.9), &s, 3, 0.1, false).unwrap();
        assert!(high > low);
        let near = core_threshold(&site_at(0.2, 0.7), &s, 3, 0.1, false).unwrap();
        let far = core_threshold(&site_at(1.5, 0.7), &s, 3, 0.1, false).unwrap();
        assert!(near > far);
    }

    #[test]
    fn cluster_stats_match_brute_force_means() {
        let sites = vec![
            ClientSite { id: ClientId(0), x_km: 0.0, y_km: 0.0, residual_energy_j: 1.0 },
            ClientSite { id: ClientId(1), x_km: 4.0, y_km: 0.0, residual_energy_j: 3.0 },
            ClientSite { id: ClientId(2), x_km: 2.0, y_km: 3.0, residual_energy_j: 5.0 },
        ];
        let index = site_index(&sites);
        let cluster = make_cluster(vec![ClientId(0), ClientId(1), ClientId(2)], &index);
        let s = cluster_stats(&cluster, &index).unwrap();
        let e_brute = (1.0 + 3.0 + 5.0) / 3.0;
        let (cx, cy) = (2.0, 1.0);
        let d_brute = (sites[0].distance_km(cx, cy)
            + sites[1].distance_km(cx, cy)
            + sites[2].distance_km(cx, cy))
            / 3.0;
        assert!((s.e_avg_j - e_brute).abs() < 1e-12);
        assert!((s.d_avg_km - d_brute).abs() < 1e-12);
    }

    #[test]
    fn singleton_cluster_always_cores_its_member() {
        let sites = vec![ClientSite { id: ClientId(7), x_km: 1.0, y_km: 1.0, residual_energy_j: 0.0 }];
        let index = site_index(&sites);
        let map = dbscan_cluster(&sites, 1.0, 5).unwrap();
        for round in 0..20 {
            let sel = select_cores(&map, &index, round, 0.1, &BTreeSet::new(), round).unwrap();
            assert_eq!(sel.clusters[0].core, Some(ClientId(7)));
        }
    }

    #[test]
    fn only_passing_member_is_selected() {
        // Coincident pair (d_avg = 0 -> distance factor 1). Client 0 holds
        // all the energy: at u = 8 its threshold is 0.1/(1-0.8) * 2 = 1.0,
        // so its draw always passes; client 1 has T = 0 and never passes.
        let sites = vec![
            ClientSite { id: ClientId(0), x_km: 1.0, y_km: 1.0, residual_energy_j: 4.0 },
            ClientSite { id: ClientId(1), x_km: 1.0, y_km: 1.0, residual_energy_j: 0.0 },
        ];
        let index = site_index(&sites);
        let map = dbscan_cluster(&sites, 1.0, 2).unwrap();
        for seed in 0..50 {
            let sel = select_cores(&map, &index, 8, 0.1, &BTreeSet::new(), seed).unwrap();
            assert_eq!(sel.clusters[0].core, Some(ClientId(0)));
        }
    }

    #[test]
    fn rotation_shares_duty_evenly() {
        // 10 identical members, state refreshed each round: over 500 rounds
        // each client's core-duty share should be within 30% of 1/10.
        let sites: Vec<ClientSite> = (0..10)
            .map(|i| ClientSite { id: ClientId(i), x_km: 0.0, y_km: 0.0, residual_energy_j: 1.0 })
            .collect();
        let index = site_index(&sites);
        let map = dbscan_cluster(&sites, 1.0, 5).unwrap();
        let p = 0.1;
        let mut served = BTreeSet::new();
        let mut duty: BTreeMap<ClientId, usize> = BTreeMap::new();
        for u in 0..500u64 {
            if u % epoch_len(p) == 0 {
                served.clear();
            }
            let sel = select_cores(&map, &index, u, p, &served, 42).unwrap();
            let core = sel.clusters[0].core.unwrap();
            served.insert(core);
            *duty.entry(core).or_default() += 1;
        }
        for i in 0..10u32 {
            let share = *duty.get(&ClientId(i)).unwrap_or(&0) as f64 / 500.0;
            assert!(
                (share - 0.1).abs() <= 0.03,
                "client {i} duty share {share}"
            );
        }
    }

    #[test]
    fn selection_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sites: Vec<ClientSite> = (0..12)
            .map(|i| ClientSite {
                id: ClientId(i),
                x_km: rng.gen_range(0.0..4.0),
                y_km: rng.gen_range(0.0..4.0),
                residual_energy_j: rng.gen_range(0.5..1.5),
            })
            .collect();
        let index = site_index(&sites);
        let map = dbscan_cluster(&sites, 5.0, 3).unwrap();
        let a = select_cores(&map, &index, 4, 0.1, &BTreeSet::new(), 11).unwrap();
        let b = select_cores(&map, &index, 4, 0.1, &BTreeSet::new(), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn positions_file_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pos.txt");
        std::fs::write(&path, "0 1.5 -2.0\n\n3 0.25 10.0\n").unwrap();
        let got = load_positions(&path).unwrap();
        assert_eq!(got, vec![(ClientId(0), 1.5, -2.0), (ClientId(3), 0.25, 10.0)]);

        std::fs::write(&path, "0 1.5\n").unwrap();
        assert!(matches!(load_positions(&path), Err(Error::Format(_))));
        std::fs::write(&path, "zero 1.5 2.0\n").unwrap();
        assert!(matches!(load_positions(&path), Err(Error::Format(_))));
    }
}
