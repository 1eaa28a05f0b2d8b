//! Link cost model for the edge ↔ remote transfer.
//!
//! Latencies in this crate are modeled, not measured: a transfer of `b`
//! bytes costs `rtt + b / bandwidth` seconds. That keeps every policy
//! comparison deterministic; wall-clock time is reported separately as an
//! auxiliary observation in socket mode.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
    #[error("rtt must be non-negative and finite, got {0}")]
    BadRtt(f64),
}

/// How the edge reaches the tail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ChannelMode {
    /// Same process, no sockets: the reference path.
    #[default]
    LoopbackInProcess,
    /// Framed TCP to a tail server.
    TcpSocket,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelModel {
    bandwidth_bytes_per_s: f64,
    rtt_s: f64,
    pub mode: ChannelMode,
}

impl ChannelModel {
    pub fn new(
        bandwidth_bytes_per_s: f64,
        rtt_s: f64,
        mode: ChannelMode,
    ) -> Result<Self, ChannelError> {
        if !(bandwidth_bytes_per_s.is_finite() && bandwidth_bytes_per_s > 0.0) {
            return Err(ChannelError::BadBandwidth(bandwidth_bytes_per_s));
        }
        if !(rtt_s.is_finite() && rtt_s >= 0.0) {
            return Err(ChannelError::BadRtt(rtt_s));
        }
        Ok(ChannelModel { bandwidth_bytes_per_s, rtt_s, mode })
    }

    pub fn bandwidth_bytes_per_s(&self) -> f64 {
        self.bandwidth_bytes_per_s
    }

    pub fn rtt_s(&self) -> f64 {
        self.rtt_s
    }

    /// Seconds to move one `bytes`-sized transfer: `rtt + bytes/bandwidth`.
    /// Zero bytes means no transfer happened, which costs nothing.
    pub fn modeled_latency_s(&self, bytes: u64) -> f64 {
        if bytes == 0 {
            return 0.0;
        }
        self.rtt_s + bytes as f64 / self.bandwidth_bytes_per_s
    }
}

impl Default for ChannelModel {
    /// 1 MB/s with a 10 ms round trip, in process.
    fn default() -> Self {
        ChannelModel {
            bandwidth_bytes_per_s: 1e6,
            rtt_s: 0.01,
            mode: ChannelMode::LoopbackInProcess,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_is_affine_in_bytes_with_slope_reciprocal_bandwidth() {
        for &(bw, rtt) in &[(1e6, 0.01), (2.5e5, 0.0), (1.25e8, 0.04)] {
            let ch = ChannelModel::new(bw, rtt, ChannelMode::LoopbackInProcess).unwrap();
            let l1 = ch.modeled_latency_s(1000);
            let l2 = ch.modeled_latency_s(2000);
            let l3 = ch.modeled_latency_s(3000);
            assert!((l2 - l1 - 1000.0 / bw).abs() < 1e-15);
            assert!(((l3 - l2) - (l2 - l1)).abs() < 1e-15);
            assert!((l1 - (rtt + 1000.0 / bw)).abs() < 1e-15);
        }
    }

    #[test]
    fn example_transfer_cost() {
        let ch = ChannelModel::new(1e6, 0.01, ChannelMode::TcpSocket).unwrap();
        assert!((ch.modeled_latency_s(178) - (0.01 + 178.0 / 1e6)).abs() < 1e-12);
        assert_eq!(ch.modeled_latency_s(0), 0.0);
    }

    #[test]
    fn constructor_rejects_degenerate_links() {
        assert!(ChannelModel::new(0.0, 0.01, ChannelMode::TcpSocket).is_err());
        assert!(ChannelModel::new(-1.0, 0.01, ChannelMode::TcpSocket).is_err());
        assert!(ChannelModel::new(f64::INFINITY, 0.01, ChannelMode::TcpSocket).is_err());
        assert!(ChannelModel::new(1e6, -0.001, ChannelMode::TcpSocket).is_err());
        assert!(ChannelModel::new(1e6, f64::NAN, ChannelMode::TcpSocket).is_err());
    }
}
