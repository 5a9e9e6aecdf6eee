//! VPN tunnel between the edge routers, modeled as a size transform and a
//! processing delay. Nothing is really compressed or encrypted.

use serde::{Deserialize, Serialize};

use crate::packet::PacketRecord;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunnelConfig {
    pub encap_overhead_bits: u64,
    pub compression_ratio: f64,
    pub crypto_cost_us_per_kbit: f64,
    pub per_packet_cost_us: f64,
    pub enabled: bool,
}

impl Default for TunnelConfig {
    fn default() -> Self {
        TunnelConfig {
            encap_overhead_bits: 296,
            compression_ratio: 0.7,
            crypto_cost_us_per_kbit: 8.0,
            per_packet_cost_us: 25.0,
            enabled: false,
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TunnelError {
    #[error("tunnel is disabled")]
    Disabled,
    #[error("packet {0} is already encapsulated")]
    AlreadyWrapped(u64),
    #[error("packet {0} is not encapsulated")]
    NotWrapped(u64),
    #[error("compression_ratio must be in (0, 1], got {0}")]
    BadRatio(f64),
    #[error("`{0}` must be finite and non-negative")]
    BadCost(&'static str),
}

impl TunnelConfig {
    pub fn validate(&self) -> Result<(), TunnelError> {
        let r = self.compression_ratio;
        if !(r > 0.0 && r <= 1.0) {
            return Err(TunnelError::BadRatio(r));
        }
        for (name, v) in [
            ("crypto_cost_us_per_kbit", self.crypto_cost_us_per_kbit),
            ("per_packet_cost_us", self.per_packet_cost_us),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(TunnelError::BadCost(name));
            }
        }
        Ok(())
    }

    /// ceil(payload × ratio), ignoring float noise right at an integer.
    pub fn compressed_bits(&self, payload_bits: u64) -> u64 {
        let x = payload_bits as f64 * self.compression_ratio;
        let r = x.round();
        if (x - r).abs() < 1e-6 {
            r as u64
        } else {
            x.ceil() as u64
        }
    }

    pub fn processing_us(&self, compressed_bits: u64) -> f64 {
        self.per_packet_cost_us + self.crypto_cost_us_per_kbit * compressed_bits as f64 / 1000.0
    }
}

/// Compresses the payload, then adds the tunnel header. Returns the
/// processing delay in microseconds.
pub fn encapsulate(packet: &mut PacketRecord, cfg: &TunnelConfig) -> Result<f64, TunnelError> {
    if !cfg.enabled {
        return Err(TunnelError::Disabled);
    }
    if packet.tunnel_wrapped {
        return Err(TunnelError::AlreadyWrapped(packet.packet_id));
    }
    let compressed = cfg.compressed_bits(packet.payload_bits);
    packet.inner_payload_bits = Some(packet.payload_bits);
    packet.payload_bits = compressed + cfg.encap_overhead_bits;
    packet.tunnel_wrapped = true;
    Ok(cfg.processing_us(compressed))
}

pub fn decapsulate(packet: &mut PacketRecord, cfg: &TunnelConfig) -> Result<f64, TunnelError> {
    if !packet.tunnel_wrapped {
        return Err(TunnelError::NotWrapped(packet.packet_id));
    }
    let Some(inner) = packet.inner_payload_bits.take() else {
        return Err(TunnelError::NotWrapped(packet.packet_id));
    };
    let compressed = packet.payload_bits.saturating_sub(cfg.encap_overhead_bits);
    packet.payload_bits = inner;
    packet.tunnel_wrapped = false;
    Ok(cfg.processing_us(compressed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn on(ratio: f64) -> TunnelConfig {
        TunnelConfig {
            compression_ratio: ratio,
            enabled: true,
            ..TunnelConfig::default()
        }
    }

    #[test]
    fn overhead_only() {
        let mut p = PacketRecord::new(1, 1, 2, 0, 8000);
        encapsulate(&mut p, &on(1.0)).unwrap();
        assert_eq!(p.payload_bits, 8296);
    }

    #[test]
    fn half_ratio_size_and_delay() {
        let mut p = PacketRecord::new(1, 1, 2, 0, 8000);
        let d = encapsulate(&mut p, &on(0.5)).unwrap();
        assert_eq!(p.payload_bits, 4296);
        assert!((d - 57.0).abs() < 1e-12);
    }

    #[test]
    fn seven_tenths_is_exact() {
        assert_eq!(on(0.7).compressed_bits(8000), 5600);
        assert_eq!(on(0.7).compressed_bits(11), 8);
    }

    #[test]
    fn wrap_state_errors() {
        let cfg = on(0.5);
        let mut p = PacketRecord::new(1, 1, 2, 0, 8000);
        assert_eq!(decapsulate(&mut p, &cfg), Err(TunnelError::NotWrapped(1)));
        encapsulate(&mut p, &cfg).unwrap();
        assert_eq!(encapsulate(&mut p, &cfg), Err(TunnelError::AlreadyWrapped(1)));
        let mut q = PacketRecord::new(2, 1, 2, 0, 8000);
        assert_eq!(
            encapsulate(&mut q, &TunnelConfig::default()),
            Err(TunnelError::Disabled)
        );
    }

    #[test]
    fn delay_is_symmetric() {
        let cfg = on(0.7);
        let mut p = PacketRecord::new(1, 1, 2, 0, 12_000);
        let e = encapsulate(&mut p, &cfg).unwrap();
        let d = decapsulate(&mut p, &cfg).unwrap();
        assert_eq!(e.to_bits(), d.to_bits());
    }

    #[test]
    fn bad_ratio_rejected() {
        assert!(on(0.0).validate().is_err());
        assert!(on(1.5).validate().is_err());
        assert!(on(1.0).validate().is_ok());
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(
            payload in 8u64..200_000,
            ratio in 0.01f64..=1.0,
            dst in any::<u32>(),
        ) {
            let cfg = on(ratio);
            let mut p = PacketRecord::new(9, 7, dst, 0xB8, payload);
            let original = p.clone();
            encapsulate(&mut p, &cfg).unwrap();
            prop_assert!(p.tunnel_wrapped);
            decapsulate(&mut p, &cfg).unwrap();
            prop_assert_eq!(p, original);
        }
    }
}
