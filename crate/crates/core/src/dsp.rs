//! FFT plumbing, band-limited rational resampling and seed derivation.
//!
//! Every waveform in the simulator is one period of a cyclically repeated frame
//! (the arbitrary waveform generator loops it), so filtering and resampling use
//! periodic boundaries throughout.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Unnormalized forward DFT, in place.
pub fn fft(buf: &mut [Complex64]) {
    plan(buf.len(), false).process(buf);
}

/// Inverse DFT scaled by `1/N`, in place.
pub fn ifft(buf: &mut [Complex64]) {
    plan(buf.len(), true).process(buf);
    let s = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|x| *x *= s);
}

/// Signed frequency of DFT bin `k` for an `n`-point transform at `rate`.
pub fn bin_frequency(k: usize, n: usize, rate: f64) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    k * rate / n as f64
}

/// Applies a frequency response to a real signal (treated as periodic). The
/// response must be Hermitian, `h(-f) = conj(h(f))`, for the result to be real.
pub fn filter_real(x: &[f64], rate: f64, h: impl Fn(f64) -> Complex64) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        *v *= h(bin_frequency(k, n, rate));
    }
    ifft(&mut buf);
    buf.into_iter().map(|v| v.re).collect()
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Polyphase windowed-sinc resampler by the rational factor `up / down`.
///
/// The prototype low-pass is a Kaiser-windowed sinc designed at `up * f_in` with
/// passband edge `0.95 * min(f_in, f_out) / 2` and stopband edge
/// `min(f_in, f_out) - passband edge`, 80 dB stopband. It is centred, so the
/// resampler has zero group delay.
#[derive(Clone, Debug)]
pub struct RationalResampler {
    up: usize,
    down: usize,
    /// Prototype taps at the upsampled rate, centred on index `half`.
    taps: Vec<f64>,
    half: usize,
}

impl RationalResampler {
    pub const MAX_FACTOR: u64 = 4096;

    pub fn new(in_rate: f64, out_rate: f64) -> Result<Self> {
        let unsupported = || Error::UnsupportedRatio {
            from: in_rate,
            to: out_rate,
        };
        if !(in_rate > 0.0 && out_rate > 0.0) {
            return Err(unsupported());
        }
        // Rates are handled in whole hertz; anything else is not a rational ratio
        // we can realise.
        let (a, b) = (in_rate.round(), out_rate.round());
        if (a - in_rate).abs() > 1e-6 * in_rate || (b - out_rate).abs() > 1e-6 * out_rate {
            return Err(unsupported());
        }
        let (a, b) = (a as u64, b as u64);
        let g = gcd(a, b);
        let (up, down) = (b / g, a / g);
        if up > Self::MAX_FACTOR || down > Self::MAX_FACTOR {
            return Err(unsupported());
        }
        let (up, down) = (up as usize, down as usize);

        let narrow = in_rate.min(out_rate);
        let pass = 0.95 * narrow / 2.0;
        let stop = narrow - pass;
        let cutoff = 0.5 * (pass + stop);
        let fs_up = in_rate * up as f64;
        let atten = 80.0;
        let beta = 0.1102 * (atten - 8.7);
        let width = 2.0 * PI * (stop - pass) / fs_up;
        let order = ((atten - 7.95) / (2.285 * width)).ceil() as usize;
        let half = order / 2 + 1;
        let fc = cutoff / fs_up;
        let taps = (0..=2 * half)
            .map(|i| {
                let t = i as f64 - half as f64;
                let sinc = if t == 0.0 {
                    2.0 * fc
                } else {
                    (2.0 * PI * fc * t).sin() / (PI * t)
                };
                let r = t / half as f64;
                let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta);
                // Gain `up` restores amplitude after zero-stuffing.
                sinc * w * up as f64
            })
            .collect();
        Ok(Self {
            up,
            down,
            taps,
            half,
        })
    }

    pub fn factors(&self) -> (usize, usize) {
        (self.up, self.down)
    }

    /// Group delay in output samples. Zero: the prototype is centred.
    pub fn group_delay(&self) -> f64 {
        0.0
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        input_len * self.up / self.down
    }

    /// Resamples one period of a periodic signal.
    pub fn process_periodic(&self, x: &[f64]) -> Vec<f64> {
        if self.up == 1 && self.down == 1 {
            return x.to_vec();
        }
        let n = x.len() as i64;
        let (up, half) = (self.up as i64, self.half as i64);
        (0..self.output_len(x.len()))
            .map(|m| {
                let t = m as i64 * self.down as i64;
                let k_lo = (t - half).div_euclid(up) + i64::from((t - half).rem_euclid(up) != 0);
                let k_hi = (t + half).div_euclid(up);
                let mut acc = 0.0;
                let mut k = k_lo;
                while k <= k_hi {
                    let tap = (t - k * up + half) as usize;
                    acc += self.taps[tap] * x[k.rem_euclid(n) as usize];
                    k += 1;
                }
                acc
            })
            .collect()
    }

    pub fn process_periodic_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        let re: Vec<f64> = x.iter().map(|v| v.re).collect();
        let im: Vec<f64> = x.iter().map(|v| v.im).collect();
        self.process_periodic(&re)
            .into_iter()
            .zip(self.process_periodic(&im))
            .map(|(r, i)| Complex64::new(r, i))
            .collect()
    }
}

/// Decorrelated 64-bit sub-seed for stream `stream` of a run seed (SplitMix64).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize, rate: f64, f: f64, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * f * i as f64 / rate + phase).cos())
            .collect()
    }

    /// Amplitude and phase of the component at `f` (assumed on a DFT bin).
    fn measure(x: &[f64], rate: f64, f: f64) -> (f64, f64) {
        let n = x.len();
        let k = (f * n as f64 / rate).round() as usize;
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft(&mut buf);
        let c = buf[k] * 2.0 / n as f64;
        (c.norm(), c.arg())
    }

    #[test]
    fn identity_ratio() {
        let r = RationalResampler::new(64e9, 64e9).unwrap();
        let x = tone(100, 64e9, 5e9, 0.3);
        assert_eq!(r.process_periodic(&x), x);
    }

    #[test]
    fn ratios_reduce() {
        assert_eq!(RationalResampler::new(80e9, 64e9).unwrap().factors(), (4, 5));
        assert_eq!(RationalResampler::new(128e9, 80e9).unwrap().factors(), (5, 8));
        assert_eq!(RationalResampler::new(64e9, 256e9).unwrap().factors(), (4, 1));
    }

    #[test]
    fn unsupported_ratios() {
        assert!(RationalResampler::new(64e9, 64e9 * std::f64::consts::SQRT_2).is_err());
        assert!(RationalResampler::new(64e9, 0.0).is_err());
        assert!(RationalResampler::new(1.0, 10007.0 * 4099.0).is_err());
    }

    #[test]
    fn tone_through_80_to_64() {
        // 5 GHz sits on a bin for both 4000 samples at 80 GS/s and 3200 at 64 GS/s.
        let x = tone(4000, 80e9, 5e9, 0.7);
        let r = RationalResampler::new(80e9, 64e9).unwrap();
        let y = r.process_periodic(&x);
        assert_eq!(y.len(), 3200);
        let (a, p) = measure(&y, 64e9, 5e9);
        assert!((20.0 * a.log10()).abs() < 0.1, "amplitude {a}");
        assert!((p - 0.7).abs().to_degrees() < 1.0, "phase {p}");
    }

    #[test]
    fn passband_is_flat() {
        let r = RationalResampler::new(64e9, 128e9).unwrap();
        for f in [1e9, 10e9, 20e9, 30e9] {
            let x = tone(2048, 64e9, f, 0.0);
            let (a, _) = measure(&r.process_periodic(&x), 128e9, f);
            assert!((20.0 * a.log10()).abs() < 0.05, "{f}: {a}");
        }
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
