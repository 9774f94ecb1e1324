//! JSON scenario files. Every key carries its unit; absent keys keep the
//! command's defaults and unknown keys are rejected. `null` means "none" for
//! optional settings and "infinite" for `osnr_db` and `clipping_ratio_db`.

use std::path::Path;

use dmtlink::channel::FilterSpec;
use dmtlink::harness::{LinkMode, Neighborhood, ScenarioConfig, SpanBudget};
use serde::{Deserialize, Deserializer, Serialize};

/// Distinguishes an explicit `null` (`Some(None)`) from an absent key (`None`).
fn explicit<'de, D, T>(d: D) -> Result<Option<Option<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(d).map(Some)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterFile {
    pub order: u32,
    pub fwhm_ghz: f64,
    /// Periodic response; absent or `null` for a single passband.
    #[serde(default)]
    pub fsr_ghz: Option<f64>,
    /// Passband centre relative to the channel's grid slot.
    #[serde(default)]
    pub center_ghz: f64,
}

impl FilterFile {
    fn to_spec(self) -> FilterSpec {
        FilterSpec {
            order: self.order,
            fwhm_3db: self.fwhm_ghz * 1e9,
            fsr: self.fsr_ghz.map(|f| f * 1e9),
            center: self.center_ghz * 1e9,
        }
    }

    fn from_spec(s: &FilterSpec) -> Self {
        Self {
            order: s.order,
            fwhm_ghz: s.fwhm_3db / 1e9,
            fsr_ghz: s.fsr.map(|f| f / 1e9),
            center_ghz: s.center / 1e9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanBudgetFile {
    pub loss_db_per_km: f64,
    pub excess_loss_db: f64,
    pub reference_loss_db: f64,
}

macro_rules! config_file {
    ($( $(#[$m:meta])* $name:ident : $ty:ty ),* $(,)?) => {
        /// A scenario file. Every field is optional.
        #[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct ConfigFile {
            $( $(#[$m])* #[serde(default, skip_serializing_if = "Option::is_none")] pub $name: Option<$ty>, )*
        }
    };
}

config_file! {
    mode: LinkMode,
    neighborhood: Neighborhood,
    n_channels: usize,
    #[serde(deserialize_with = "explicit")]
    channel_under_test: Option<usize>,
    net_rate_gbps: f64,
    target_ber: f64,
    grid_spacing_ghz: f64,
    detuning_ghz: f64,
    span_lengths_km: Vec<f64>,
    dispersion_ps_per_nm_km: f64,
    center_wavelength_nm: f64,
    #[serde(deserialize_with = "explicit")]
    osnr_db: Option<f64>,
    #[serde(deserialize_with = "explicit")]
    span_budget: Option<SpanBudgetFile>,
    rx_bandwidth_ghz: f64,
    rx_sample_rate_gsps: f64,
    launch_power_dbm: f64,
    #[serde(deserialize_with = "explicit")]
    interleaver: Option<FilterFile>,
    #[serde(deserialize_with = "explicit")]
    demux: Option<FilterFile>,
    fft_size: usize,
    n_data_subcarriers: usize,
    cp_ratio: f64,
    n_data_symbols: usize,
    n_training_symbols: usize,
    dac_rate_gsps: f64,
    #[serde(deserialize_with = "explicit")]
    clipping_ratio_db: Option<f64>,
    max_bits_per_subcarrier: usize,
    mzm_vpi_v: f64,
    mzm_drive_swing: f64,
    #[serde(deserialize_with = "explicit")]
    mzm_bias_v: Option<f64>,
    #[serde(deserialize_with = "explicit")]
    rx_quantize_bits: Option<u32>,
    #[serde(deserialize_with = "explicit")]
    rx_thermal_noise: Option<f64>,
    eq_step: f64,
    fine_timing_span_samples: usize,
    min_bits: u64,
    min_errors: u64,
    max_frames: usize,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl ConfigFile {
    /// Every key set from a scenario; the canonical full file.
    pub fn from_scenario(sc: &ScenarioConfig) -> Self {
        let l = &sc.link;
        let d = &sc.dmt;
        Self {
            mode: Some(sc.mode),
            neighborhood: Some(sc.neighborhood),
            n_channels: Some(l.n_channels),
            channel_under_test: Some(sc.channel_under_test),
            net_rate_gbps: Some(sc.net_rate / 1e9),
            target_ber: Some(sc.target_ber),
            grid_spacing_ghz: Some(l.grid_spacing / 1e9),
            detuning_ghz: Some(l.detuning / 1e9),
            span_lengths_km: Some(l.span_lengths_km.clone()),
            dispersion_ps_per_nm_km: Some(l.dispersion),
            center_wavelength_nm: Some(l.center_wavelength),
            osnr_db: Some(finite(l.osnr_db)),
            span_budget: Some(sc.osnr_budget.map(|b| SpanBudgetFile {
                loss_db_per_km: b.loss_db_per_km,
                excess_loss_db: b.excess_loss_db,
                reference_loss_db: b.reference_loss_db,
            })),
            rx_bandwidth_ghz: Some(l.rx_bandwidth / 1e9),
            rx_sample_rate_gsps: Some(l.rx_sample_rate / 1e9),
            launch_power_dbm: Some(l.launch_power_dbm),
            interleaver: Some(l.interleaver.as_ref().map(FilterFile::from_spec)),
            demux: Some(l.demux.as_ref().map(FilterFile::from_spec)),
            fft_size: Some(d.fft_size),
            n_data_subcarriers: Some(d.n_data_subcarriers),
            cp_ratio: Some(d.cp_ratio),
            n_data_symbols: Some(d.n_data_symbols),
            n_training_symbols: Some(d.n_training_symbols),
            dac_rate_gsps: Some(d.dac_rate / 1e9),
            clipping_ratio_db: Some(finite(d.clipping_ratio_db)),
            max_bits_per_subcarrier: Some(d.max_bits_per_subcarrier),
            mzm_vpi_v: Some(sc.mzm.vpi),
            mzm_drive_swing: Some(sc.mzm.drive_swing),
            mzm_bias_v: Some(sc.mzm.bias),
            rx_quantize_bits: Some(sc.rx_quantize_bits),
            rx_thermal_noise: Some(sc.rx_thermal_noise),
            eq_step: Some(sc.eq_step),
            fine_timing_span_samples: Some(sc.fine_timing_span),
            min_bits: Some(sc.min_bits),
            min_errors: Some(sc.min_errors),
            max_frames: Some(sc.max_frames),
        }
    }

    /// Overlays the keys present in this file onto `sc`.
    pub fn apply(&self, sc: &mut ScenarioConfig) {
        macro_rules! set {
            ($field:ident => $target:expr) => {
                if let Some(v) = self.$field.clone() {
                    $target = v;
                }
            };
            ($field:ident => $target:expr, $conv:expr) => {
                if let Some(v) = self.$field.clone() {
                    $target = $conv(v);
                }
            };
        }
        let giga = |v: f64| v * 1e9;
        let inf = |v: Option<f64>| v.unwrap_or(f64::INFINITY);
        set!(mode => sc.mode);
        set!(neighborhood => sc.neighborhood);
        set!(n_channels => sc.link.n_channels);
        set!(channel_under_test => sc.channel_under_test);
        set!(net_rate_gbps => sc.net_rate, giga);
        set!(target_ber => sc.target_ber);
        set!(grid_spacing_ghz => sc.link.grid_spacing, giga);
        set!(detuning_ghz => sc.link.detuning, giga);
        set!(span_lengths_km => sc.link.span_lengths_km);
        set!(dispersion_ps_per_nm_km => sc.link.dispersion);
        set!(center_wavelength_nm => sc.link.center_wavelength);
        set!(osnr_db => sc.link.osnr_db, inf);
        set!(span_budget => sc.osnr_budget, |b: Option<SpanBudgetFile>| b.map(|b| SpanBudget {
            loss_db_per_km: b.loss_db_per_km,
            excess_loss_db: b.excess_loss_db,
            reference_loss_db: b.reference_loss_db,
        }));
        set!(rx_bandwidth_ghz => sc.link.rx_bandwidth, giga);
        set!(rx_sample_rate_gsps => sc.link.rx_sample_rate, giga);
        set!(launch_power_dbm => sc.link.launch_power_dbm);
        set!(interleaver => sc.link.interleaver, |f: Option<FilterFile>| f.map(FilterFile::to_spec));
        set!(demux => sc.link.demux, |f: Option<FilterFile>| f.map(FilterFile::to_spec));
        set!(fft_size => sc.dmt.fft_size);
        set!(n_data_subcarriers => sc.dmt.n_data_subcarriers);
        set!(cp_ratio => sc.dmt.cp_ratio);
        set!(n_data_symbols => sc.dmt.n_data_symbols);
        set!(n_training_symbols => sc.dmt.n_training_symbols);
        set!(dac_rate_gsps => sc.dmt.dac_rate, giga);
        set!(clipping_ratio_db => sc.dmt.clipping_ratio_db, inf);
        set!(max_bits_per_subcarrier => sc.dmt.max_bits_per_subcarrier);
        set!(mzm_vpi_v => sc.mzm.vpi);
        set!(mzm_drive_swing => sc.mzm.drive_swing);
        set!(mzm_bias_v => sc.mzm.bias);
        set!(rx_quantize_bits => sc.rx_quantize_bits);
        set!(rx_thermal_noise => sc.rx_thermal_noise);
        set!(eq_step => sc.eq_step);
        set!(fine_timing_span_samples => sc.fine_timing_span);
        set!(min_bits => sc.min_bits);
        set!(min_errors => sc.min_errors);
        set!(max_frames => sc.max_frames);
    }
}

/// A config file that could not be read or parsed.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Parses a scenario file; diagnostics carry `path:line:column`.
pub fn load(path: &Path) -> Result<ConfigFile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| ConfigError(format!("{}:{e}", path.display())))
}

/// `line:column: message` on failure.
pub fn parse(text: &str) -> Result<ConfigFile, String> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        // serde_json appends " at line L column C"; restate it up front.
        let msg = msg.rsplit_once(" at line ").map_or(msg.as_str(), |(m, _)| m).to_string();
        format!("{}:{}: {msg}", e.line(), e.column())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_file_round_trips() {
        let sc = dmtlink::harness::table_base();
        let text = serde_json::to_string_pretty(&ConfigFile::from_scenario(&sc)).unwrap();
        let mut back = ScenarioConfig::default();
        parse(&text).unwrap().apply(&mut back);
        assert_eq!(back, sc);
    }

    #[test]
    fn null_means_infinite_or_none() {
        let f = parse(r#"{"osnr_db": null, "interleaver": null, "channel_under_test": null}"#).unwrap();
        let mut sc = ScenarioConfig::default();
        sc.link.osnr_db = 30.0;
        f.apply(&mut sc);
        assert!(sc.link.osnr_db.is_infinite());
        assert!(sc.link.interleaver.is_none());
        assert!(sc.channel_under_test.is_none());
    }

    #[test]
    fn absent_keys_keep_defaults() {
        let mut sc = ScenarioConfig::default();
        parse(r#"{"detuning_ghz": 12.5}"#).unwrap().apply(&mut sc);
        assert_eq!(sc.link.detuning, 12.5e9);
        assert_eq!(sc.link.demux, ScenarioConfig::default().link.demux);
    }

    #[test]
    fn unknown_key_reports_position() {
        let err = parse("{\n  \"detuning\": 19\n}").unwrap_err();
        assert!(err.starts_with("2:"), "{err}");
        assert!(err.contains("unknown field `detuning`"), "{err}");
    }
}
