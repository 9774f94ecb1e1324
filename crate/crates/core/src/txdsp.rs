//! Transmit DSP: training symbols, loaded data symbols, Hermitian IFFT, cyclic
//! prefix, clipping, DAC interpolation and the group decorrelation shift.
//!
//! Symbol order in a frame is TS1 (synchronization), TS2..TSn (channel
//! estimation), then the data symbols. TS1 carries √2-scaled QPSK on even FFT
//! bins only, which makes its body two identical halves.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, RationalResampler};
use crate::error::{Error, Result};
use crate::frame::frame_geometry;
use crate::qam::{bits_to_label, Constellation};
use crate::types::{DmtConfig, RealWaveform, SubcarrierPlan};

/// One generated frame.
#[derive(Clone, Debug)]
pub struct DmtFrame {
    /// Payload in transmission order: symbol by symbol, subcarrier by subcarrier.
    pub tx_bits: Vec<u8>,
    /// Subcarrier values of every symbol (training first), before the IFFT.
    pub frequency_symbols: Vec<Vec<Complex64>>,
    pub waveform: RealWaveform,
}

fn random_qpsk(rng: &mut ChaCha8Rng) -> Complex64 {
    let qpsk = Constellation::get(2).expect("QPSK table");
    qpsk.point(rng.random_range(0..4))
}

/// Training symbols: TS1 for synchronization, the rest for channel estimation.
/// Deterministic in `seed`.
pub fn build_training_symbols(cfg: &DmtConfig, seed: u64) -> Vec<Vec<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_data_subcarriers;
    let mut out = Vec::with_capacity(cfg.n_training_symbols);
    let sync = (0..n)
        .map(|i| {
            let p = random_qpsk(&mut rng);
            if cfg.bin_of(i).is_multiple_of(2) {
                p * std::f64::consts::SQRT_2
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    out.push(sync);
    for _ in 1..cfg.n_training_symbols {
        out.push((0..n).map(|_| random_qpsk(&mut rng)).collect());
    }
    out
}

/// Places data subcarriers on their bins, mirrors the conjugates and applies a
/// unitary IFFT. The result is real up to rounding.
pub fn symbol_to_time(subcarriers: &[Complex64], cfg: &DmtConfig) -> Vec<Complex64> {
    let n = cfg.fft_size;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (i, &x) in subcarriers.iter().enumerate() {
        let k = cfg.bin_of(i);
        buf[k] = x;
        buf[n - k] = x.conj();
    }
    dsp::ifft(&mut buf);
    let s = (n as f64).sqrt();
    buf.iter_mut().for_each(|v| *v *= s);
    buf
}

/// Maps the payload onto the plan and assembles the full frame waveform at the
/// DAC rate. `seed` selects the training symbols.
pub fn modulate_frame(
    payload_bits: &[u8],
    plan: &SubcarrierPlan,
    cfg: &DmtConfig,
    seed: u64,
) -> Result<DmtFrame> {
    cfg.validate()?;
    if plan.len() != cfg.n_data_subcarriers {
        return Err(Error::LengthMismatch {
            what: "subcarrier plan",
            expected: cfg.n_data_subcarriers,
            actual: plan.len(),
        });
    }
    let bits_per_symbol = plan.total_bits();
    let expected = bits_per_symbol * cfg.n_data_symbols;
    if payload_bits.len() != expected {
        return Err(Error::LengthMismatch {
            what: "payload bits",
            expected,
            actual: payload_bits.len(),
        });
    }

    let mut symbols = build_training_symbols(cfg, seed);
    let tables: Vec<Option<(&Constellation, f64)>> = plan
        .bits
        .iter()
        .zip(&plan.powers)
        .map(|(&b, &p)| (b > 0).then(|| (Constellation::get(b as usize).unwrap(), p.sqrt())))
        .collect();
    for chunk in payload_bits.chunks(bits_per_symbol.max(1)).take(cfg.n_data_symbols) {
        let mut pos = 0;
        let sym = tables
            .iter()
            .map(|t| match t {
                Some((c, amp)) => {
                    let b = c.bits();
                    let label = bits_to_label(&chunk[pos..pos + b]);
                    pos += b;
                    c.point(label) * *amp
                }
                None => Complex64::new(0.0, 0.0),
            })
            .collect();
        symbols.push(sym);
    }
    // An all-zero plan still produces the data symbols (silent).
    while symbols.len() < cfg.n_symbols() {
        symbols.push(vec![Complex64::new(0.0, 0.0); cfg.n_data_subcarriers]);
    }

    let geo = frame_geometry(cfg);
    let cp = cfg.cp_len();
    let mut samples = Vec::with_capacity(geo.samples_per_frame);
    for sym in &symbols {
        let t = symbol_to_time(sym, cfg);
        samples.extend(t[cfg.fft_size - cp..].iter().map(|v| v.re));
        samples.extend(t.iter().map(|v| v.re));
    }
    Ok(DmtFrame {
        tx_bits: payload_bits.to_vec(),
        frequency_symbols: symbols,
        waveform: RealWaveform::new(samples, cfg.dac_rate)?,
    })
}

/// Symmetric hard clipping at `rms * 10^(CR/20)`, with the RMS taken on the input.
pub fn clip(w: &RealWaveform, clipping_ratio_db: f64) -> RealWaveform {
    if clipping_ratio_db.is_infinite() {
        return w.clone();
    }
    let a = w.rms() * 10f64.powf(clipping_ratio_db / 20.0);
    w.with_samples(w.samples().iter().map(|x| x.clamp(-a, a)).collect())
}

/// Cyclic rotation (delay) by `shift` samples; shifts wrap modulo the length.
pub fn decorrelate_shift(w: &RealWaveform, shift: usize) -> RealWaveform {
    let mut s = w.samples().to_vec();
    s.rotate_right(shift % w.len());
    w.with_samples(s)
}

/// Optional DAC impairments; both off by default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DacOptions {
    /// Uniform quantization over the signal peak range.
    pub quantize_bits: Option<u32>,
    /// Zero-order-hold sinc roll-off.
    pub sinc_rolloff: bool,
}

/// Band-limited interpolation of the DAC samples onto the simulation grid.
pub fn dac(w: &RealWaveform, grid_rate: f64) -> Result<RealWaveform> {
    dac_with(w, grid_rate, &DacOptions::default())
}

pub fn dac_with(w: &RealWaveform, grid_rate: f64, opts: &DacOptions) -> Result<RealWaveform> {
    if grid_rate < w.sample_rate() * (1.0 - 1e-12) {
        return Err(Error::UnsupportedRatio {
            from: w.sample_rate(),
            to: grid_rate,
        });
    }
    let resampler = RationalResampler::new(w.sample_rate(), grid_rate)?;
    let mut x = w.samples().to_vec();
    if let Some(bits) = opts.quantize_bits {
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            let levels = (1u64 << bits.min(52)) as f64;
            let step = 2.0 * peak / levels;
            for v in &mut x {
                let q = ((*v + peak) / step).floor().min(levels - 1.0);
                *v = -peak + (q + 0.5) * step;
            }
        }
    }
    let mut y = resampler.process_periodic(&x);
    if opts.sinc_rolloff {
        let fs = w.sample_rate();
        y = dsp::filter_real(&y, grid_rate, |f| {
            let u = std::f64::consts::PI * f / fs;
            let g = if u == 0.0 { 1.0 } else { u.sin() / u };
            Complex64::new(g, 0.0)
        });
    }
    RealWaveform::new(y, grid_rate)
}
