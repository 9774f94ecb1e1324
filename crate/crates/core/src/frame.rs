//! Frame geometry and rate arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::DmtConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub samples_per_symbol: usize,
    pub samples_per_frame: usize,
    /// s
    pub symbol_duration: f64,
    /// s
    pub frame_duration: f64,
}

pub fn frame_geometry(cfg: &DmtConfig) -> FrameGeometry {
    let samples_per_symbol = cfg.fft_size + cfg.cp_len();
    let samples_per_frame = samples_per_symbol * cfg.n_symbols();
    FrameGeometry {
        samples_per_symbol,
        samples_per_frame,
        symbol_duration: samples_per_symbol as f64 / cfg.dac_rate,
        frame_duration: samples_per_frame as f64 / cfg.dac_rate,
    }
}

/// Bits per data symbol needed to carry `net_rate` (bit/s) after training and
/// prefix overhead, rounded up.
pub fn target_bits_per_symbol(net_rate: f64, cfg: &DmtConfig) -> Result<usize> {
    if !(net_rate > 0.0 && net_rate.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "net rate must be positive, got {net_rate}"
        )));
    }
    let geo = frame_geometry(cfg);
    let exact =
        net_rate * geo.samples_per_frame as f64 / (cfg.dac_rate * cfg.n_data_symbols as f64);
    // Guard against x.0000000001 from the float product.
    let required = (exact - 1e-9).ceil().max(1.0) as usize;
    let capacity = cfg.n_data_subcarriers * cfg.max_bits_per_subcarrier;
    if required > capacity {
        return Err(Error::RateInfeasible { required, capacity });
    }
    Ok(required)
}

/// Net rate actually carried by `bits_per_symbol`.
pub fn achieved_net_rate(bits_per_symbol: usize, cfg: &DmtConfig) -> f64 {
    let geo = frame_geometry(cfg);
    bits_per_symbol as f64 * cfg.n_data_symbols as f64 / geo.frame_duration
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let g = frame_geometry(&DmtConfig::default());
        assert_eq!(g.samples_per_symbol, 2080);
        assert_eq!(g.samples_per_frame, 2080 * 124);
        assert!((g.symbol_duration - 32.5e-9).abs() < 1e-18);
        assert!((g.frame_duration - 4.03e-6).abs() < 1e-15);
    }

    #[test]
    fn zero_prefix() {
        let cfg = DmtConfig {
            cp_ratio: 0.0,
            ..DmtConfig::default()
        };
        assert_eq!(frame_geometry(&cfg).samples_per_symbol, 2048);
    }

    #[test]
    fn aggregate_rates() {
        let cfg = DmtConfig::default();
        // 2080 * 124 / (64e9 * 119) s per bit-per-symbol; values computed by hand.
        let expect = [
            (112e9, 3793),
            (89.6e9, 3035),
            (74.7e9, 2530),
            (64e9, 2168),
            (56e9, 1897),
        ];
        for (rate, bits) in expect {
            let b = target_bits_per_symbol(rate, &cfg).unwrap();
            assert_eq!(b, bits, "{rate}");
            assert!(achieved_net_rate(b, &cfg) >= rate);
            assert!(achieved_net_rate(b - 1, &cfg) < rate);
        }
    }

    #[test]
    fn infeasible_rate() {
        let cfg = DmtConfig::default();
        let too_fast = achieved_net_rate(974 * 8 + 1, &cfg);
        assert!(matches!(
            target_bits_per_symbol(too_fast, &cfg),
            Err(Error::RateInfeasible { capacity: 7792, .. })
        ));
        assert_eq!(
            target_bits_per_symbol(achieved_net_rate(7792, &cfg), &cfg).unwrap(),
            7792
        );
    }
}
