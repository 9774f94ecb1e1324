//! Value types shared by every stage of the link.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly sampled real waveform: the electrical-domain signal.
#[derive(Clone, Debug, PartialEq)]
pub struct RealWaveform {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl RealWaveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidConfig("waveform has no samples".into()));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.mean_power().sqrt()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    /// Same sample rate, new samples.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        debug_assert!(!samples.is_empty());
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Uniformly sampled complex field envelope.
///
/// `center_offset` is the optical frequency of the envelope's zero frequency,
/// relative to the simulation reference (the grid slot of the channel under test).
#[derive(Clone, Debug, PartialEq)]
pub struct OpticalField {
    samples: Vec<Complex64>,
    sample_rate: f64,
    center_offset: f64,
}

impl OpticalField {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64, center_offset: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidConfig("field has no samples".into()));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
            center_offset,
        })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn center_offset(&self) -> f64 {
        self.center_offset
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|x| x.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x.norm_sqr()).sum()
    }

    pub(crate) fn with_samples(&self, samples: Vec<Complex64>) -> Self {
        debug_assert!(!samples.is_empty());
        Self {
            samples,
            sample_rate: self.sample_rate,
            center_offset: self.center_offset,
        }
    }
}

/// Modulation format of one DMT channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmtConfig {
    pub fft_size: usize,
    pub n_data_subcarriers: usize,
    pub cp_ratio: f64,
    pub n_data_symbols: usize,
    pub n_training_symbols: usize,
    /// Hz
    pub dac_rate: f64,
    /// dB; `f64::INFINITY` disables clipping.
    #[serde(with = "inf_as_null")]
    pub clipping_ratio_db: f64,
    pub max_bits_per_subcarrier: usize,
}

impl Default for DmtConfig {
    fn default() -> Self {
        Self {
            fft_size: 2048,
            n_data_subcarriers: 974,
            cp_ratio: 1.0 / 64.0,
            n_data_symbols: 119,
            n_training_symbols: 5,
            dac_rate: 64e9,
            clipping_ratio_db: 10.0,
            max_bits_per_subcarrier: 8,
        }
    }
}

impl DmtConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.fft_size < 8 || !self.fft_size.is_multiple_of(2) {
            return bad(format!("fft_size {} must be even and >= 8", self.fft_size));
        }
        if self.n_data_subcarriers == 0 || self.n_data_subcarriers > self.fft_size / 2 - 1 {
            return bad(format!(
                "n_data_subcarriers {} must be in 1..={}",
                self.n_data_subcarriers,
                self.fft_size / 2 - 1
            ));
        }
        let cp = self.cp_ratio * self.fft_size as f64;
        if !(self.cp_ratio >= 0.0) || (cp - cp.round()).abs() > 1e-9 {
            return bad(format!(
                "cp_ratio {} x fft_size {} is not an integer sample count",
                self.cp_ratio, self.fft_size
            ));
        }
        if self.n_training_symbols < 2 {
            return bad("need at least one sync and one estimation training symbol".into());
        }
        if self.n_data_symbols == 0 {
            return bad("n_data_symbols must be positive".into());
        }
        if !(self.dac_rate > 0.0) {
            return bad(format!("dac_rate {} must be positive", self.dac_rate));
        }
        if !(self.clipping_ratio_db > 0.0) {
            return bad(format!(
                "clipping_ratio_db {} must be positive or infinite",
                self.clipping_ratio_db
            ));
        }
        if !(1..=8).contains(&self.max_bits_per_subcarrier) {
            return bad(format!(
                "max_bits_per_subcarrier {} outside 1..=8",
                self.max_bits_per_subcarrier
            ));
        }
        Ok(())
    }

    pub fn cp_len(&self) -> usize {
        (self.cp_ratio * self.fft_size as f64).round() as usize
    }

    pub fn n_symbols(&self) -> usize {
        self.n_data_symbols + self.n_training_symbols
    }

    /// FFT bin carrying data subcarrier `i` (subcarriers occupy bins 1..=n).
    pub fn bin_of(&self, subcarrier: usize) -> usize {
        subcarrier + 1
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.dac_rate / self.fft_size as f64
    }
}

/// Per-subcarrier bit count and power weight produced by loading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubcarrierPlan {
    pub bits: Vec<u8>,
    pub powers: Vec<f64>,
}

impl SubcarrierPlan {
    /// Validates lengths, the zero-bit/zero-power pairing and the
    /// `sum(powers) == n_active` normalization.
    pub fn new(bits: Vec<u8>, powers: Vec<f64>) -> Result<Self> {
        if bits.len() != powers.len() {
            return Err(Error::LengthMismatch {
                what: "plan powers",
                expected: bits.len(),
                actual: powers.len(),
            });
        }
        for (i, (&b, &p)) in bits.iter().zip(&powers).enumerate() {
            if b > 8 || !(p >= 0.0) || ((b == 0) != (p == 0.0)) {
                return Err(Error::InvalidConfig(format!(
                    "subcarrier {i}: {b} bits with power {p}"
                )));
            }
        }
        let plan = Self { bits, powers };
        let n_active = plan.n_active() as f64;
        let total: f64 = plan.powers.iter().sum();
        if (total - n_active).abs() > 1e-9 * n_active.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "plan powers sum to {total}, expected {n_active}"
            )));
        }
        Ok(plan)
    }

    /// Every subcarrier carries `bits` at unit power.
    pub fn uniform(n: usize, bits: u8) -> Self {
        let p = if bits == 0 { 0.0 } else { 1.0 };
        Self {
            bits: vec![bits; n],
            powers: vec![p; n],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn n_active(&self) -> usize {
        self.bits.iter().filter(|&&b| b > 0).count()
    }

    pub fn total_bits(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }
}

/// Error count of one measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerReport {
    pub bit_errors: u64,
    pub bits_total: u64,
    pub ber: f64,
    pub per_subcarrier_errors: Vec<u64>,
}

impl BerReport {
    /// Accumulates another measurement taken with the same plan.
    pub fn merge(&mut self, other: &BerReport) {
        self.bit_errors += other.bit_errors;
        self.bits_total += other.bits_total;
        self.ber = self.bit_errors as f64 / self.bits_total as f64;
        for (a, b) in self
            .per_subcarrier_errors
            .iter_mut()
            .zip(&other.per_subcarrier_errors)
        {
            *a += b;
        }
    }
}

/// Serializes `f64::INFINITY` as JSON `null` and reads `null` back as infinity.
pub(crate) mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = DmtConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.cp_len(), 32);
        let oversampling = (cfg.fft_size / 2) as f64 / cfg.n_data_subcarriers as f64;
        assert!((oversampling - 1.05).abs() < 0.01);
    }

    #[test]
    fn rejects_too_many_subcarriers() {
        let cfg = DmtConfig {
            n_data_subcarriers: 1024,
            ..DmtConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_fractional_prefix() {
        let cfg = DmtConfig {
            cp_ratio: 0.01,
            ..DmtConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_waveform_rejected() {
        assert!(RealWaveform::new(vec![], 1.0).is_err());
        assert!(RealWaveform::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn plan_checks_normalization() {
        assert!(SubcarrierPlan::new(vec![2, 0, 4], vec![0.5, 0.0, 1.5]).is_ok());
        assert!(SubcarrierPlan::new(vec![2, 0, 4], vec![0.5, 0.0, 1.0]).is_err());
        assert!(SubcarrierPlan::new(vec![2, 0], vec![1.0, 1.0]).is_err());
    }
}
