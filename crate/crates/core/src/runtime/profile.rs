use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetMode {
    /// Wall-clock timing over the actual socket.
    Real,
    /// Deterministic accounting: network delay from the link model plus
    /// edge compute from FLOP counts.
    Simulated,
}

impl fmt::Display for NetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetMode::Real => "real",
            NetMode::Simulated => "simulated",
        })
    }
}

impl FromStr for NetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(NetMode::Real),
            "simulated" => Ok(NetMode::Simulated),
            _ => Err(Error::Config(format!("unknown network mode {s:?} (real, simulated)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetProfile {
    pub mode: NetMode,
    pub rtt_ms: f64,
    pub bandwidth_bytes_per_s: f64,
    /// Edge device throughput used to charge student inference in
    /// simulated mode.
    pub edge_flops_per_s: f64,
}

impl Default for NetProfile {
    fn default() -> Self {
        NetProfile {
            mode: NetMode::Real,
            rtt_ms: 0.0,
            bandwidth_bytes_per_s: 1e6,
            edge_flops_per_s: 1e9,
        }
    }
}

impl NetProfile {
    pub fn simulated(rtt_ms: f64, bandwidth_bytes_per_s: f64) -> NetProfile {
        NetProfile {
            mode: NetMode::Simulated,
            rtt_ms,
            bandwidth_bytes_per_s,
            ..NetProfile::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtt_ms >= 0.0 && self.rtt_ms.is_finite()) {
            return Err(Error::Config(format!("rtt_ms must be nonnegative, got {}", self.rtt_ms)));
        }
        if !(self.bandwidth_bytes_per_s > 0.0 && self.bandwidth_bytes_per_s.is_finite()) {
            return Err(Error::Config("bandwidth_bytes_per_s must be positive".into()));
        }
        if !(self.edge_flops_per_s > 0.0 && self.edge_flops_per_s.is_finite()) {
            return Err(Error::Config("edge_flops_per_s must be positive".into()));
        }
        Ok(())
    }
}

/// Link time for one request/response exchange carrying `message_bytes`
/// in total: `rtt + bytes / bandwidth`.
pub fn simulate_delay(profile: &NetProfile, message_bytes: usize) -> Result<f64> {
    if profile.mode != NetMode::Simulated {
        return Err(Error::State("delay simulation requires a simulated profile".into()));
    }
    profile.validate()?;
    Ok(profile.rtt_ms / 1000.0 + message_bytes as f64 / profile.bandwidth_bytes_per_s)
}
