//! Wireless transmission cost model and per-client energy ledger.
//!
//! Uplinks are charged as power times airtime: a cluster member pays
//! `p_cluster * S_ij / v_cluster` to reach its core, and the core pays
//! `p_server * S_i / v_server` to reach the server, where the link rates are
//! Shannon rates `v = B * log2(1 + h^2 p / N0)`. Downlink broadcasts are not
//! charged; neither is computation.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::topology::{ClientId, ClusterMap};

/// Channel and power constants. Defaults: 40 Mb/s bandwidth, 1e-10 W noise,
/// unit gain, 1e-4 W intra-cluster and 1e-2 W core-to-server transmit power.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub bandwidth_bps: f64,
    pub noise_w: f64,
    pub channel_gain: f64,
    pub p_cluster_w: f64,
    pub p_server_w: f64,
    /// Starting energy per client, joules.
    pub initial_energy_j: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            bandwidth_bps: 40e6,
            noise_w: 1e-10,
            channel_gain: 1.0,
            p_cluster_w: 1e-4,
            p_server_w: 1e-2,
            initial_energy_j: 1e-2,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("bandwidth_bps", self.bandwidth_bps),
            ("noise_w", self.noise_w),
            ("channel_gain", self.channel_gain),
            ("p_cluster_w", self.p_cluster_w),
            ("p_server_w", self.p_server_w),
            ("initial_energy_j", self.initial_energy_j),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("radio.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Member-to-core link rate, bits/s.
    pub fn cluster_rate_bps(&self) -> f64 {
        tx_rate(self.bandwidth_bps, self.channel_gain, self.p_cluster_w, self.noise_w)
            .expect("validated config")
    }

    /// Core-to-server link rate, bits/s.
    pub fn server_rate_bps(&self) -> f64 {
        tx_rate(self.bandwidth_bps, self.channel_gain, self.p_server_w, self.noise_w)
            .expect("validated config")
    }
}

/// Shannon rate `v = B * log2(1 + h^2 p / N0)` in bits/s.
pub fn tx_rate(bandwidth_bps: f64, gain: f64, power_w: f64, noise_w: f64) -> Result<f64> {
    for (name, v) in [
        ("bandwidth", bandwidth_bps),
        ("gain", gain),
        ("power", power_w),
        ("noise", noise_w),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::usage(format!("tx_rate {name} must be positive, got {v}")));
        }
    }
    Ok(bandwidth_bps * (1.0 + gain * gain * power_w / noise_w).log2())
}

/// Per-round transmission costs, split by role.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub member_costs: Vec<(ClientId, f64)>,
    pub core_costs: Vec<(ClientId, f64)>,
    pub cost_client_j: f64,
    pub cost_core_j: f64,
    pub cost_total_j: f64,
}

/// Charge one round of uplinks over a cluster map with cores assigned.
///
/// `member_bits` is the payload a non-core member sends to its core;
/// `core_bits` is the aggregated payload a core sends to the server.
pub fn round_cost(
    member_bits: f64,
    core_bits: f64,
    map: &ClusterMap,
    radio: &RadioConfig,
) -> Result<CostBreakdown> {
    if member_bits < 0.0 || core_bits < 0.0 {
        return Err(Error::usage("transmitted sizes must be >= 0"));
    }
    radio.validate()?;
    let v_cluster = radio.cluster_rate_bps();
    let v_server = radio.server_rate_bps();

    let mut member_costs = Vec::new();
    let mut core_costs = Vec::new();
    let mut cost_client_j = 0.0;
    let mut cost_core_j = 0.0;
    for cluster in &map.clusters {
        let core = cluster
            .core
            .ok_or_else(|| Error::Internal("round_cost requires cores to be selected".into()))?;
        for &id in &cluster.members {
            if id == core {
                continue;
            }
            let cost = radio.p_cluster_w * member_bits / v_cluster;
            cost_client_j += cost;
            member_costs.push((id, cost));
        }
        let cost = radio.p_server_w * core_bits / v_server;
        cost_core_j += cost;
        core_costs.push((core, cost));
    }
    Ok(CostBreakdown {
        member_costs,
        core_costs,
        cost_client_j,
        cost_core_j,
        cost_total_j: cost_client_j + cost_core_j,
    })
}

/// Residual-energy bookkeeping. Residuals never increase; a client whose
/// residual reaches zero joins the dead set and is excluded from later
/// rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    residual_j: BTreeMap<ClientId, f64>,
    dead: BTreeSet<ClientId>,
    initial_total_j: f64,
    /// Sum of all breakdown totals charged so far (reporting quantity).
    cumulative_cost_j: f64,
    /// Energy actually drained; differs from `cumulative_cost_j` only when a
    /// charge overshoots a dying client's remaining energy.
    drained_j: f64,
}

impl EnergyLedger {
    pub fn new(clients: impl IntoIterator<Item = ClientId>, initial_energy_j: f64) -> Self {
        let residual_j: BTreeMap<ClientId, f64> =
            clients.into_iter().map(|id| (id, initial_energy_j)).collect();
        let initial_total_j = initial_energy_j * residual_j.len() as f64;
        Self {
            residual_j,
            dead: BTreeSet::new(),
            initial_total_j,
            cumulative_cost_j: 0.0,
            drained_j: 0.0,
        }
    }

    pub fn residual_j(&self, id: ClientId) -> Option<f64> {
        self.residual_j.get(&id).copied()
    }

    pub fn is_dead(&self, id: ClientId) -> bool {
        self.dead.contains(&id)
    }

    pub fn live(&self) -> BTreeSet<ClientId> {
        self.residual_j
            .keys()
            .filter(|id| !self.dead.contains(id))
            .copied()
            .collect()
    }

    pub fn dead_count(&self) -> usize {
        self.dead.len()
    }

    pub fn cumulative_cost_j(&self) -> f64 {
        self.cumulative_cost_j
    }

    pub fn drained_j(&self) -> f64 {
        self.drained_j
    }

    pub fn initial_total_j(&self) -> f64 {
        self.initial_total_j
    }

    pub fn total_residual_j(&self) -> f64 {
        self.residual_j.values().sum()
    }

    /// Subtract one round's costs; clients crossing zero are clamped there,
    /// moved to the dead set, and returned.
    pub fn charge_and_reap(&mut self, breakdown: &CostBreakdown) -> Result<Vec<ClientId>> {
        let mut newly_dead = Vec::new();
        for &(id, cost) in breakdown.member_costs.iter().chain(&breakdown.core_costs) {
            if cost < 0.0 {
                return Err(Error::Internal(format!("negative cost for client {id}")));
            }
            let residual = self
                .residual_j
                .get_mut(&id)
                .ok_or_else(|| Error::Internal(format!("charge for unknown client {id}")))?;
            if self.dead.contains(&id) {
                return Err(Error::Internal(format!("charge for dead client {id}")));
            }
            self.cumulative_cost_j += cost;
            let drained = cost.min(*residual);
            self.drained_j += drained;
            *residual -= drained;
            if *residual <= 0.0 {
                *residual = 0.0;
                self.dead.insert(id);
                newly_dead.push(id);
            }
        }
        Ok(newly_dead)
    }
}
