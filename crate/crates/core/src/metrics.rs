//! Per-round, per-client measurement log and its CSV/JSON export formats.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::ActionKind;
use crate::graph::ClientId;

/// One executed exchange, recorded on the initiating client's row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub kind: ActionKind,
    /// Destination client.
    pub peer: ClientId,
    /// Bytes on the wire (always the packet size of the payload).
    pub cost: u64,
    /// Destination's accuracy delta observed one round later; `None` for
    /// actions executed in the final round.
    pub realized_reward: Option<f64>,
}

/// Per-(round, live client) measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundRecord {
    pub round: u32,
    pub client: ClientId,
    pub accuracy: f64,
    pub best_accuracy: f64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Actions this client initiated this round.
    pub actions: Vec<ActionRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnTotals {
    pub joins: u32,
    pub leaves: u32,
    pub rewires: u32,
}

/// Full run log: one record per live client per round, ordered by
/// (round, client id).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub rows: Vec<ClientRoundRecord>,
    /// Earliest round index at which each client's accuracy window settled.
    pub convergence_rounds: BTreeMap<ClientId, Option<u32>>,
    /// Round at which every live client had converged, if any.
    pub network_converged_round: Option<u32>,
    pub rounds_executed: u32,
    pub total_bytes: u64,
    pub churn: ChurnTotals,
}

pub const CSV_HEADER: &str = "round,client_id,accuracy,best_accuracy,bytes_sent,bytes_received,action_kind,action_peer,action_cost,realized_reward";

impl MetricsLog {
    /// Serializes the documented CSV schema. Multi-action rounds join the
    /// four action columns with `;`; unrealized rewards print as `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let kinds: Vec<String> = row.actions.iter().map(|a| a.kind.to_string()).collect();
            let peers: Vec<String> = row.actions.iter().map(|a| a.peer.to_string()).collect();
            let costs: Vec<String> = row.actions.iter().map(|a| a.cost.to_string()).collect();
            let rewards: Vec<String> = row
                .actions
                .iter()
                .map(|a| a.realized_reward.map_or_else(|| "NA".into(), |r| r.to_string()))
                .collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                row.round,
                row.client,
                row.accuracy,
                row.best_accuracy,
                row.bytes_sent,
                row.bytes_received,
                kinds.join(";"),
                peers.join(";"),
                costs.join(";"),
                rewards.join(";"),
            ));
        }
        out
    }

    /// Count of executed actions by kind.
    pub fn action_counts(&self) -> BTreeMap<String, u64> {
        let mut counts = BTreeMap::new();
        for row in &self.rows {
            for a in &row.actions {
                *counts.entry(a.kind.to_string()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Rows belonging to one round, in client order.
    pub fn round_rows(&self, round: u32) -> impl Iterator<Item = &ClientRoundRecord> {
        self.rows.iter().filter(move |r| r.round == round)
    }

    /// Mean accuracy and mean best accuracy over the final round's rows.
    pub fn final_means(&self) -> Option<(f64, f64)> {
        let last = self.rows.last()?.round;
        let rows: Vec<&ClientRoundRecord> = self.round_rows(last).collect();
        let n = rows.len() as f64;
        let acc = rows.iter().map(|r| r.accuracy).sum::<f64>() / n;
        let best = rows.iter().map(|r| r.best_accuracy).sum::<f64>() / n;
        Some((acc, best))
    }
}

/// Per-client roll-up stored in `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub id: ClientId,
    pub final_accuracy: f64,
    pub final_best_accuracy: f64,
    pub convergence_round: Option<u32>,
    pub bytes_sent_total: u64,
    pub bytes_received_total: u64,
}

/// Whole-run roll-up stored in `summary.json` and consumed by `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub preset: Option<String>,
    pub rounds_executed: u32,
    pub converged_round: Option<u32>,
    pub final_live_clients: u32,
    pub final_mean_accuracy: f64,
    pub final_mean_best_accuracy: f64,
    pub total_bytes: u64,
    pub action_counts: BTreeMap<String, u64>,
    pub churn: ChurnTotals,
    pub per_client: Vec<ClientSummary>,
}

impl MetricsLog {
    pub fn summary(&self, config_hash: String, seed: u64, preset: Option<String>) -> RunSummary {
        let last_round = self.rows.last().map(|r| r.round);
        let mut per_client: BTreeMap<ClientId, ClientSummary> = BTreeMap::new();
        for row in &self.rows {
            let entry = per_client.entry(row.client).or_insert_with(|| ClientSummary {
                id: row.client,
                final_accuracy: 0.0,
                final_best_accuracy: 0.0,
                convergence_round: None,
                bytes_sent_total: 0,
                bytes_received_total: 0,
            });
            entry.final_accuracy = row.accuracy;
            entry.final_best_accuracy = row.best_accuracy;
            entry.bytes_sent_total += row.bytes_sent;
            entry.bytes_received_total += row.bytes_received;
        }
        for (id, conv) in &self.convergence_rounds {
            if let Some(entry) = per_client.get_mut(id) {
                entry.convergence_round = *conv;
            }
        }
        let (final_mean_accuracy, final_mean_best_accuracy) =
            self.final_means().unwrap_or((0.0, 0.0));
        let final_live_clients = last_round.map_or(0, |r| self.round_rows(r).count() as u32);
        RunSummary {
            config_hash,
            seed,
            preset,
            rounds_executed: self.rounds_executed,
            converged_round: self.network_converged_round,
            final_live_clients,
            final_mean_accuracy,
            final_mean_best_accuracy,
            total_bytes: self.total_bytes,
            action_counts: self.action_counts(),
            churn: self.churn,
            per_client: per_client.into_values().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> MetricsLog {
        MetricsLog {
            rows: vec![
                ClientRoundRecord {
                    round: 0,
                    client: ClientId(0),
                    accuracy: 0.5,
                    best_accuracy: 0.5,
                    bytes_sent: 100,
                    bytes_received: 0,
                    actions: vec![
                        ActionRecord {
                            kind: ActionKind::ShareModel,
                            peer: ClientId(1),
                            cost: 60,
                            realized_reward: Some(0.125),
                        },
                        ActionRecord {
                            kind: ActionKind::ShareRawData,
                            peer: ClientId(1),
                            cost: 40,
                            realized_reward: None,
                        },
                    ],
                },
                ClientRoundRecord {
                    round: 0,
                    client: ClientId(1),
                    accuracy: 0.25,
                    best_accuracy: 0.5,
                    bytes_sent: 0,
                    bytes_received: 100,
                    actions: vec![],
                },
            ],
            convergence_rounds: BTreeMap::new(),
            network_converged_round: None,
            rounds_executed: 1,
            total_bytes: 100,
            churn: ChurnTotals::default(),
        }
    }

    #[test]
    fn csv_schema_and_joining() {
        let csv = sample_log().to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "0,0,0.5,0.5,100,0,ShareModel;ShareRawData,1;1,60;40,0.125;NA"
        );
        assert_eq!(lines.next().unwrap(), "0,1,0.25,0.5,0,100,,,,");
        assert!(lines.next().is_none());
    }

    #[test]
    fn summary_rollup() {
        let log = sample_log();
        let s = log.summary("abc".into(), 7, Some("iid_s1".into()));
        assert_eq!(s.final_live_clients, 2);
        assert!((s.final_mean_accuracy - 0.375).abs() < 1e-15);
        assert_eq!(s.total_bytes, 100);
        assert_eq!(s.action_counts["ShareModel"], 1);
        assert_eq!(s.per_client.len(), 2);
        assert_eq!(s.per_client[0].bytes_sent_total, 100);
    }
}
