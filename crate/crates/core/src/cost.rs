//! Device capability and communication cost model.
//!
//! Capability is the product of normalized battery and memory levels; the
//! cost of moving a message is proportional to its size and inversely
//! proportional to the sender's channel bandwidth. Packet sizes are linear
//! in sample count for data exchanges and in (compressed) parameter count
//! for model exchanges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-device resource levels. `bandwidth` doubles as the per-round byte
/// budget for outgoing exchanges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceResources {
    /// Battery level, normalized to [0, 1].
    pub power: f64,
    /// Available memory, normalized to [0, 1].
    pub mem: f64,
    /// Channel bandwidth in bytes per round; strictly positive.
    pub bandwidth: f64,
}

impl DeviceResources {
    pub fn new(power: f64, mem: f64, bandwidth: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&power) || !power.is_finite() {
            return Err(Error::config(format!("power must be in [0,1], got {power}")));
        }
        if !(0.0..=1.0).contains(&mem) || !mem.is_finite() {
            return Err(Error::config(format!("mem must be in [0,1], got {mem}")));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::config(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        Ok(DeviceResources { power, mem, bandwidth })
    }
}

/// Byte-size model for the packets produced by each exchange kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeModel {
    /// Bytes per transmitted (raw or synthetic) sample.
    pub bytes_per_sample: u64,
    /// Bytes per transmitted model parameter.
    pub bytes_per_param: u64,
    /// Compression factor applied to model packets, in (0, 1].
    pub model_compression: f64,
    /// Channel-time scaling constant of the communication cost.
    pub alpha: f64,
}

impl Default for SizeModel {
    fn default() -> Self {
        SizeModel {
            // 32x32x3 one-byte-per-channel image.
            bytes_per_sample: 3072,
            bytes_per_param: 4,
            model_compression: 1.0,
            alpha: 1.0,
        }
    }
}

impl SizeModel {
    pub fn validate(&self) -> Result<()> {
        if self.bytes_per_sample == 0 {
            return Err(Error::config("bytes_per_sample must be positive"));
        }
        if self.bytes_per_param == 0 {
            return Err(Error::config("bytes_per_param must be positive"));
        }
        if !(self.model_compression > 0.0 && self.model_compression <= 1.0) {
            return Err(Error::config(format!(
                "model_compression must be in (0,1], got {}",
                self.model_compression
            )));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// What an exchange carries: model parameters or labeled samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    /// Parameter count of a (possibly partial) model packet.
    Params { count: u64 },
    /// Sample count of a (raw or synthetic) data packet.
    Samples { count: u64 },
}

/// On-device training capability: battery level times available memory.
pub fn compute_capacity(resources: &DeviceResources) -> f64 {
    resources.power * resources.mem
}

/// Channel time consumed by transmitting `size` bytes at `bandwidth`
/// bytes/round: `alpha * size / bandwidth`.
pub fn comm_cost(bandwidth: f64, size: f64, alpha: f64) -> Result<f64> {
    if !(bandwidth > 0.0) {
        return Err(Error::config(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    if size < 0.0 {
        return Err(Error::config(format!("size must be >= 0, got {size}")));
    }
    Ok(alpha * size / bandwidth)
}

/// Bytes on the wire for a payload. Data packets are exactly linear in
/// sample count; model packets scale with compressed parameter bytes
/// (rounded up so non-empty models never cost zero).
pub fn packet_size(payload: Payload, size_model: &SizeModel) -> u64 {
    match payload {
        Payload::Params { count } => {
            let raw = (count * size_model.bytes_per_param) as f64;
            (raw * size_model.model_compression).ceil() as u64
        }
        Payload::Samples { count } => count * size_model.bytes_per_sample,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_direct_cases() {
        let r = |p, m| DeviceResources::new(p, m, 1.0).unwrap();
        assert_eq!(compute_capacity(&r(1.0, 1.0)), 1.0);
        assert_eq!(compute_capacity(&r(0.5, 0.4)), 0.2);
        assert_eq!(compute_capacity(&r(0.0, 0.9)), 0.0);
    }

    #[test]
    fn capacity_monotone() {
        let base = compute_capacity(&DeviceResources::new(0.4, 0.6, 1.0).unwrap());
        assert!(compute_capacity(&DeviceResources::new(0.5, 0.6, 1.0).unwrap()) >= base);
        assert!(compute_capacity(&DeviceResources::new(0.4, 0.7, 1.0).unwrap()) >= base);
    }

    #[test]
    fn comm_cost_direct_cases() {
        assert_eq!(comm_cost(1e6, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(comm_cost(5e6, 1e7, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn comm_cost_rejects_nonpositive_bandwidth() {
        assert!(comm_cost(0.0, 10.0, 1.0).is_err());
        assert!(comm_cost(-5.0, 10.0, 1.0).is_err());
    }

    #[test]
    fn doubling_bandwidth_halves_cost() {
        for (size, alpha) in [(123.0, 1.0), (9999.0, 2.5), (1.0, 0.3)] {
            let c1 = comm_cost(1e4, size, alpha).unwrap();
            let c2 = comm_cost(2e4, size, alpha).unwrap();
            assert!((c2 - c1 / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn comm_cost_homogeneous_in_size() {
        for lambda in [0.0, 0.5, 2.0, 7.25] {
            let c = comm_cost(3e5, 1234.0, 1.5).unwrap();
            let cl = comm_cost(3e5, lambda * 1234.0, 1.5).unwrap();
            assert!((cl - lambda * c).abs() <= 1e-12 * c.abs().max(1.0));
        }
    }

    #[test]
    fn packet_sizes() {
        let sm = SizeModel::default();
        assert_eq!(packet_size(Payload::Samples { count: 0 }, &sm), 0);
        assert_eq!(packet_size(Payload::Samples { count: 10 }, &sm), 30720);
        let sm2 = SizeModel { bytes_per_param: 4, model_compression: 0.5, ..sm };
        assert_eq!(packet_size(Payload::Params { count: 1000 }, &sm2), 2000);
    }

    #[test]
    fn data_packets_additive() {
        let sm = SizeModel::default();
        for (a, b) in [(0u64, 5u64), (3, 7), (100, 1)] {
            let joint = packet_size(Payload::Samples { count: a + b }, &sm);
            let split = packet_size(Payload::Samples { count: a }, &sm)
                + packet_size(Payload::Samples { count: b }, &sm);
            assert_eq!(joint, split);
        }
    }

    #[test]
    fn table_linearity_ratio_is_exactly_two() {
        // 20% of a dataset is twice the bytes of 10% of the same dataset.
        let sm = SizeModel::default();
        let n = 2000u64;
        let ten = packet_size(Payload::Samples { count: n / 10 }, &sm);
        let twenty = packet_size(Payload::Samples { count: n / 5 }, &sm);
        assert_eq!(twenty, 2 * ten);
    }

    #[test]
    fn partial_packet_never_exceeds_full() {
        let sm = SizeModel { model_compression: 0.37, ..SizeModel::default() };
        for total in [1u64, 10, 999] {
            for unfrozen in 0..=total.min(20) {
                let partial = packet_size(Payload::Params { count: unfrozen }, &sm);
                let full = packet_size(Payload::Params { count: total }, &sm);
                assert!(partial <= full);
            }
        }
    }
}
