//! Per-round metrics (one CSV row per round) and the topology log.

use crate::topology::ClientId;

pub const CSV_HEADER: &str = "round,mean_accuracy,mean_loss,recovery_residual_mean,\
recovery_residual_max,recovery_nonconverged,guard_warnings,cost_client_j,cost_core_j,\
cost_total_j,cumulative_cost_j,dead_clients,clusters";

/// One round's observable state. Cumulative cost and dead count never
/// decrease across rounds; the cluster count is at least 1 while anyone is
/// alive.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    /// Mean over live clients of holdout accuracy with the client's private
    /// output layer on the new global body.
    pub mean_accuracy: f64,
    pub mean_loss: f64,
    /// Mean/max over clusters of the recovery feasibility residual
    /// `||phi x - y|| / max(1, ||y||)`; zero for schemes without recovery.
    pub recovery_residual_mean: f64,
    pub recovery_residual_max: f64,
    /// Layer recoveries that hit the iteration cap this round.
    pub recovery_nonconverged: usize,
    /// (cluster, layer) pairs whose aggregate sparsity estimate exceeded
    /// half the projected length.
    pub guard_warnings: usize,
    pub cost_client_j: f64,
    pub cost_core_j: f64,
    pub cost_total_j: f64,
    pub cumulative_cost_j: f64,
    pub dead_clients: usize,
    pub clusters: usize,
}

impl RoundMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.round,
            self.mean_accuracy,
            self.mean_loss,
            self.recovery_residual_mean,
            self.recovery_residual_max,
            self.recovery_nonconverged,
            self.guard_warnings,
            self.cost_client_j,
            self.cost_core_j,
            self.cost_total_j,
            self.cumulative_cost_j,
            self.dead_clients,
            self.clusters
        )
    }
}

/// The topology decisions of one round, as written to `topology.log`.
/// Identical seeds must produce identical logs across schemes that share
/// the clustering path, so nothing scheme-specific may appear here.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: u64,
    pub reclustered: bool,
    pub clusters: Vec<ClusterLogEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLogEntry {
    /// Index into the clustering that produced this cluster (stable across
    /// member deaths, so it also identifies the projection matrices).
    pub index: usize,
    pub core: ClientId,
    pub members: Vec<ClientId>,
}

impl RoundLog {
    pub fn render(&self) -> String {
        let mut out = format!(
            "round {} reclustered={} clusters={}\n",
            self.round,
            self.reclustered,
            self.clusters.len()
        );
        for c in &self.clusters {
            let members: Vec<String> = c.members.iter().map(|m| m.to_string()).collect();
            out.push_str(&format!(
                "  cluster {} core={} members={}\n",
                c.index,
                c.core,
                members.join(",")
            ));
        }
        out
    }
}
