//! Linear optical channel: MZM field transfer, WDM multiplexing, periodic
//! interleaver and demultiplexer filtering, chromatic dispersion, ASE noise
//! loading, square-law detection and the receiver analog front end.
//!
//! Frequencies of optical filters are absolute: relative to the simulation
//! reference, which is the grid slot of the channel under test. A field's
//! `center_offset` says where its baseband zero sits on that axis.
//!
//! Dispersion uses `H(f) = exp(+j π D L λ² f² / c)` with the `e^{+j2πft}` time
//! convention, so for `D > 0` higher frequencies arrive earlier (anomalous
//! regime of SSMF at 1550 nm).

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, bin_frequency, RationalResampler};
use crate::error::{Error, Result};
use crate::types::{OpticalField, RealWaveform};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// OSNR noise reference bandwidth (0.1 nm at 1550 nm).
pub const OSNR_REFERENCE_BANDWIDTH: f64 = 12.5e9;

/// Default bias sits this fraction of the drive peak above the field null.
pub const BIAS_HEADROOM: f64 = 0.05;

/// Super-Gaussian optical filter. `fwhm_3db` is the full width at exactly -3 dB
/// power; `fsr` makes the response periodic (interleaver).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: u32,
    /// Hz
    pub fwhm_3db: f64,
    /// Hz
    pub fsr: Option<f64>,
    /// Hz
    pub center: f64,
}

impl FilterSpec {
    /// 50/100 GHz interleaver port: order 2, 42 GHz wide, 100 GHz period.
    pub fn interleaver(center: f64) -> Self {
        Self {
            order: 2,
            fwhm_3db: 42e9,
            fsr: Some(100e9),
            center,
        }
    }

    /// Demultiplexer port selecting one channel of the 100 GHz sub-grid.
    pub fn demux(center: f64) -> Self {
        Self {
            order: 2,
            fwhm_3db: 80e9,
            fsr: None,
            center,
        }
    }

    pub fn centered_at(&self, center: f64) -> Self {
        Self { center, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.order >= 1
            && self.fwhm_3db > 0.0
            && self.fsr.is_none_or(|fsr| self.fwhm_3db < fsr);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad filter spec {self:?}")))
        }
    }

    /// Power transmission at absolute frequency `f`.
    pub fn power_response(&self, f: f64) -> f64 {
        let mut d = f - self.center;
        if let Some(fsr) = self.fsr {
            d -= fsr * (d / fsr).round();
        }
        let x = (d / (self.fwhm_3db / 2.0)).abs();
        // ln(10^0.3): exactly -3 dB at the half width.
        let k = 0.3 * std::f64::consts::LN_10;
        (-k * x.powi(2 * self.order as i32)).exp()
    }

    pub fn amplitude_response(&self, f: f64) -> f64 {
        self.power_response(f).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub n_channels: usize,
    /// Hz
    pub grid_spacing: f64,
    /// Laser offset from its interleaver passband centre, Hz (signed).
    pub detuning: f64,
    pub span_lengths_km: Vec<f64>,
    /// ps/(nm km)
    pub dispersion: f64,
    /// nm
    pub center_wavelength: f64,
    /// dB in 12.5 GHz; infinite disables noise loading.
    #[serde(with = "crate::types::inf_as_null")]
    pub osnr_db: f64,
    /// Hz
    pub rx_bandwidth: f64,
    /// Hz
    pub rx_sample_rate: f64,
    /// Carried for bookkeeping; the channel is linear.
    pub launch_power_dbm: f64,
    /// Interleaver shape; its centre is relative to each channel's grid slot.
    pub interleaver: Option<FilterSpec>,
    /// Demultiplexer shape; centre relative to the grid slot.
    pub demux: Option<FilterSpec>,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            n_channels: 8,
            grid_spacing: 50e9,
            detuning: 19e9,
            span_lengths_km: vec![],
            dispersion: 17.0,
            center_wavelength: 1550.0,
            osnr_db: f64::INFINITY,
            rx_bandwidth: 29.4e9,
            rx_sample_rate: 80e9,
            launch_power_dbm: 5.5,
            interleaver: Some(FilterSpec::interleaver(0.0)),
            demux: Some(FilterSpec::demux(0.0)),
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(4..=8).contains(&self.n_channels) {
            return bad(format!("n_channels {} outside 4..=8", self.n_channels));
        }
        if !(self.grid_spacing > 0.0) {
            return bad("grid spacing must be positive".into());
        }
        if self.span_lengths_km.iter().any(|&l| !(l > 0.0)) {
            return bad(format!("span lengths must be positive: {:?}", self.span_lengths_km));
        }
        if !(self.rx_bandwidth > 0.0 && self.rx_sample_rate > 0.0) {
            return bad("receiver bandwidth and sample rate must be positive".into());
        }
        if self.osnr_db.is_nan() {
            return bad("OSNR is NaN".into());
        }
        for f in self.interleaver.iter().chain(&self.demux) {
            f.validate()?;
        }
        Ok(())
    }

    pub fn total_length_km(&self) -> f64 {
        self.span_lengths_km.iter().sum()
    }
}

/// Default MZM bias: the drive peak plus [`BIAS_HEADROOM`].
pub fn default_bias(vpi: f64, drive_swing: f64) -> f64 {
    drive_swing * vpi * (1.0 + BIAS_HEADROOM)
}

/// Push-pull MZM near the field null: `E = sin(π (v + bias) / (2 vπ))`, with the
/// drive scaled so its peak is `drive_swing * vpi`.
pub fn mzm(drive: &RealWaveform, vpi: f64, bias: f64, drive_swing: f64) -> OpticalField {
    let peak = drive.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { drive_swing * vpi / peak } else { 0.0 };
    let samples = drive
        .samples()
        .iter()
        .map(|&x| Complex64::new((PI * (x * scale + bias) / (2.0 * vpi)).sin(), 0.0))
        .collect();
    OpticalField::new(samples, drive.sample_rate(), 0.0).expect("drive is a valid waveform")
}

/// Applies `h(f)` in the frequency domain, `f` being the absolute frequency
/// (bin frequency plus the field's centre offset).
pub fn apply_response(field: &OpticalField, h: impl Fn(f64) -> Complex64) -> OpticalField {
    let n = field.len();
    let mut buf = field.samples().to_vec();
    dsp::fft(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        *v *= h(bin_frequency(k, n, field.sample_rate()) + field.center_offset());
    }
    dsp::ifft(&mut buf);
    field.with_samples(buf)
}

fn shift_bins(offset: f64, n: usize, rate: f64) -> i64 {
    (offset * n as f64 / rate).round() as i64
}

/// Moves a field by `offset` Hz on its own grid. The offset is rounded to the
/// frame's frequency resolution (`rate / len`) so the frame stays periodic.
pub fn frequency_shift(field: &OpticalField, offset: f64) -> OpticalField {
    let n = field.len();
    let mut buf = field.samples().to_vec();
    dsp::fft(&mut buf);
    buf.rotate_right(shift_bins(offset, n, field.sample_rate()).rem_euclid(n as i64) as usize);
    dsp::ifft(&mut buf);
    OpticalField::new(buf, field.sample_rate(), field.center_offset() - offset)
        .expect("non-empty field")
}

fn check_fits(offset: f64, bandwidth: f64, grid_rate: f64) -> Result<()> {
    if 2.0 * (offset.abs() + bandwidth / 2.0) >= grid_rate {
        return Err(Error::Aliasing {
            offset,
            bandwidth,
            grid_rate,
        });
    }
    Ok(())
}

/// Composite WDM field `Σ field_k(t) exp(j 2π offset_k t)` on a `grid_rate`
/// grid. Channels are resampled to the grid first; `occupied_bandwidth` is the
/// two-sided optical bandwidth of one channel used for the aliasing check.
/// Offsets are rounded to the frame's frequency resolution.
pub fn wdm_mux(
    channels: &[OpticalField],
    offsets: &[f64],
    occupied_bandwidth: f64,
    grid_rate: f64,
) -> Result<OpticalField> {
    if channels.len() != offsets.len() || channels.is_empty() {
        return Err(Error::LengthMismatch {
            what: "channel offsets",
            expected: channels.len(),
            actual: offsets.len(),
        });
    }
    for &o in offsets {
        check_fits(o, occupied_bandwidth, grid_rate)?;
    }
    let mut spectrum: Option<Vec<Complex64>> = None;
    for (ch, &offset) in channels.iter().zip(offsets) {
        let mut buf = if (ch.sample_rate() - grid_rate).abs() > 1e-6 * grid_rate {
            RationalResampler::new(ch.sample_rate(), grid_rate)?
                .process_periodic_complex(ch.samples())
        } else {
            ch.samples().to_vec()
        };
        let n = buf.len();
        dsp::fft(&mut buf);
        buf.rotate_right(shift_bins(offset, n, grid_rate).rem_euclid(n as i64) as usize);
        match &mut spectrum {
            None => spectrum = Some(buf),
            Some(acc) => {
                if acc.len() != n {
                    return Err(Error::LengthMismatch {
                        what: "channel frame length",
                        expected: acc.len(),
                        actual: n,
                    });
                }
                acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
            }
        }
    }
    let mut buf = spectrum.expect("at least one channel");
    dsp::ifft(&mut buf);
    OpticalField::new(buf, grid_rate, 0.0)
}

/// Zero-phase super-Gaussian filtering.
pub fn optical_filter(field: &OpticalField, spec: &FilterSpec) -> OpticalField {
    apply_response(field, |f| Complex64::new(spec.amplitude_response(f), 0.0))
}

/// Second-order dispersion coefficient `D L λ² / c` in s².
pub fn dispersion_coefficient(length_km: f64, dispersion: f64, wavelength_nm: f64) -> f64 {
    let d = dispersion * 1e-6; // ps/(nm km) -> s/m²
    let l = length_km * 1e3;
    let lambda = wavelength_nm * 1e-9;
    d * l * lambda * lambda / SPEED_OF_LIGHT
}

/// All-pass dispersion `exp(+j π D L λ² f² / c)` around the field's own centre.
pub fn cd_response(length_km: f64, dispersion: f64, wavelength_nm: f64) -> impl Fn(f64) -> Complex64 {
    let k = dispersion_coefficient(length_km, dispersion, wavelength_nm);
    move |f| Complex64::from_polar(1.0, PI * k * f * f)
}

pub fn fiber_cd(field: &OpticalField, length_km: f64, dispersion: f64, wavelength_nm: f64) -> OpticalField {
    if length_km == 0.0 {
        return field.clone();
    }
    let h = cd_response(length_km, dispersion, wavelength_nm);
    let offset = field.center_offset();
    apply_response(field, |f| h(f - offset))
}

/// Per-sample standard deviation (per real dimension) of white complex noise
/// giving `osnr_db` for `signal_power`.
pub fn noise_sigma(signal_power: f64, osnr_db: f64, sample_rate: f64) -> f64 {
    let psd = signal_power / (OSNR_REFERENCE_BANDWIDTH * 10f64.powf(osnr_db / 10.0));
    (psd * sample_rate / 2.0).sqrt()
}

fn white_noise(n: usize, sigma: f64, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * sigma, im * sigma)
        })
        .collect()
}

/// Adds co-polarized circular white Gaussian noise so that the field's power
/// over the noise power in 12.5 GHz equals `osnr_db`.
pub fn load_noise_to_osnr(field: &OpticalField, osnr_db: f64, seed: u64) -> Result<OpticalField> {
    load_noise_with_reference(field, field.mean_power(), osnr_db, seed)
}

/// As [`load_noise_to_osnr`], with the signal power given explicitly (one
/// channel of a composite).
pub fn load_noise_with_reference(
    field: &OpticalField,
    signal_power: f64,
    osnr_db: f64,
    seed: u64,
) -> Result<OpticalField> {
    if osnr_db == f64::INFINITY {
        return Ok(field.clone());
    }
    if !(signal_power > 0.0) || osnr_db.is_nan() {
        return Err(Error::ZeroPowerField);
    }
    let sigma = noise_sigma(signal_power, osnr_db, field.sample_rate());
    let noise = white_noise(field.len(), sigma, seed);
    Ok(field.with_samples(
        field
            .samples()
            .iter()
            .zip(noise)
            .map(|(s, n)| s + n)
            .collect(),
    ))
}

/// Square-law detection with unit responsivity.
pub fn photodiode(field: &OpticalField) -> RealWaveform {
    RealWaveform::new(
        field.samples().iter().map(|e| e.norm_sqr()).collect(),
        field.sample_rate(),
    )
    .expect("non-empty field")
}

/// 4th-order Butterworth low-pass `1 / Π (s/ωc - p_k)` evaluated at `j 2π f`.
pub fn butterworth4(f: f64, cutoff: f64) -> Complex64 {
    let s = Complex64::new(0.0, f / cutoff);
    let mut den = Complex64::new(1.0, 0.0);
    for k in 0..4 {
        let theta = PI * (2 * k + 4 + 1) as f64 / 8.0;
        den *= s - Complex64::from_polar(1.0, theta);
    }
    den.inv()
}

/// Receiver electrical front end: optional thermal noise, 4th-order
/// Butterworth low-pass, band-limited sampling at `out_rate` and optional
/// uniform quantization over ±4σ around the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RxFrontend {
    /// Hz
    pub bandwidth: f64,
    /// Hz
    pub out_rate: f64,
    pub quantize_bits: Option<u32>,
    /// Standard deviation of white thermal noise added before the filter, in
    /// photocurrent units relative to the mean photocurrent.
    pub thermal_noise: Option<f64>,
}

pub fn rx_frontend(
    w: &RealWaveform,
    bandwidth: f64,
    out_rate: f64,
    quantize_bits: Option<u32>,
) -> Result<RealWaveform> {
    let fe = RxFrontend {
        bandwidth,
        out_rate,
        quantize_bits,
        thermal_noise: None,
    };
    fe.process(w, 0)
}

impl RxFrontend {
    pub fn process(&self, w: &RealWaveform, seed: u64) -> Result<RealWaveform> {
        if self.out_rate > w.sample_rate() * (1.0 + 1e-12) {
            return Err(Error::UnsupportedRatio {
                from: w.sample_rate(),
                to: self.out_rate,
            });
        }
        let mut x = w.samples().to_vec();
        if let Some(rel) = self.thermal_noise {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in &mut x {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v += n * rel * mean;
            }
        }
        let cutoff = self.bandwidth;
        let filtered = dsp::filter_real(&x, w.sample_rate(), |f| butterworth4(f, cutoff));
        let mut y = RationalResampler::new(w.sample_rate(), self.out_rate)?.process_periodic(&filtered);
        if let Some(bits) = self.quantize_bits {
            quantize(&mut y, bits);
        }
        RealWaveform::new(y, self.out_rate)
    }
}

/// Uniform mid-rise quantizer over mean ± 4σ, saturating outside.
fn quantize(x: &mut [f64], bits: u32) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return;
    }
    let levels = (1u64 << bits.min(52)) as f64;
    let lo = mean - 4.0 * sd;
    let step = 8.0 * sd / levels;
    for v in x {
        let q = ((*v - lo) / step).floor().clamp(0.0, levels - 1.0);
        *v = lo + (q + 0.5) * step;
    }
}

/// Small-signal RF response of the link at one tone frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FadingPoint {
    /// Hz
    pub frequency: f64,
    pub response_db: f64,
}

/// Tone spacing of [`end_to_end_fading_profile`], Hz.
pub const FADING_TONE_SPACING: f64 = 31.25e6;

/// Measures the small-signal power response of MZM → interleaver → fiber →
/// interleaver → demux → photodiode with single tones up to 32 GHz, normalized to
/// the same chain with zero fiber length.
pub fn end_to_end_fading_profile(link: &LinkConfig, detuning: f64) -> Vec<FadingPoint> {
    const RATE: f64 = 128e9;
    let n = (RATE / FADING_TONE_SPACING).round() as usize;
    let n_tones = (32e9 / FADING_TONE_SPACING).round() as usize;
    let length = link.total_length_km();
    let vpi = 1.0;
    let swing = 0.2;
    // Modulation depth of the probe tone, radians of drive phase.
    let depth = 1e-3;

    let chain = |tone_bin: usize, with_fiber: bool| -> f64 {
        let drive: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * (tone_bin * i) as f64 / n as f64).cos())
            .collect();
        let bias = default_bias(vpi, swing);
        let field: Vec<Complex64> = drive
            .iter()
            .map(|&x| Complex64::new((PI * bias / (2.0 * vpi) + depth * x).sin(), 0.0))
            .collect();
        let field = OpticalField::new(field, RATE, detuning).expect("probe field");
        let k = dispersion_coefficient(length, link.dispersion, link.center_wavelength);
        let tx_il = link.interleaver;
        let demux = link.demux;
        let field = apply_response(&field, |f| {
            let mut h = Complex64::new(1.0, 0.0);
            if let Some(il) = tx_il {
                // Transmit and receive interleaver ports are both centred on the slot.
                h *= il.power_response(f);
            }
            if let Some(d) = demux {
                h *= d.amplitude_response(f);
            }
            if with_fiber {
                let fb = f - detuning;
                h *= Complex64::from_polar(1.0, PI * k * fb * fb);
            }
            h
        });
        let current = photodiode(&field);
        let mut buf: Vec<Complex64> = current
            .samples()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        dsp::fft(&mut buf);
        buf[tone_bin].norm_sqr()
    };

    (1..=n_tones)
        .into_par_iter()
        .map(|bin| {
            let reference = chain(bin, false);
            let measured = chain(bin, true);
            FadingPoint {
                frequency: bin as f64 * FADING_TONE_SPACING,
                response_db: 10.0 * (measured / reference).log10(),
            }
        })
        .collect()
}

/// Fading profile as CSV: `frequency_hz,response_db`.
pub fn write_fading_csv<W: Write>(profile: &[FadingPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frequency_hz", "response_db"])?;
    for p in profile {
        w.write_record([format!("{:.1}", p.frequency), format!("{:.6}", p.response_db)])?;
    }
    w.flush()?;
    Ok(())
}
