//! Receiver DSP: square-root linearization, resampling to the DMT clock,
//! Schmidl-Cox timing, demodulation, channel estimation, decision-directed
//! one-tap equalization and bit error counting.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, RationalResampler};
use crate::error::{Error, Result};
use crate::frame::frame_geometry;
use crate::qam::{label_to_bits, Constellation};
use crate::types::{BerReport, DmtConfig, RealWaveform, SubcarrierPlan};

/// Default decision-directed adaptation constant.
pub const DEFAULT_STEP: f64 = 0.05;

/// Timing metric floor below which no frame is declared.
pub const SYNC_FLOOR: f64 = 0.1;

/// Plateau threshold relative to the metric peak.
pub const PLATEAU_FRACTION: f64 = 0.9;

/// Negative samples (noise excursions) clamp to zero before the root.
pub fn sqrt_linearize(w: &RealWaveform) -> RealWaveform {
    w.with_samples(w.samples().iter().map(|&x| x.max(0.0).sqrt()).collect())
}

/// Subtracts the sample mean.
pub fn remove_dc(w: &RealWaveform) -> RealWaveform {
    let mean = w.samples().iter().sum::<f64>() / w.len() as f64;
    w.with_samples(w.samples().iter().map(|x| x - mean).collect())
}

/// Band-limited rational resampling of a periodic record. The interpolator is
/// zero phase, so sample `k` of the output is at time `k / out_rate` of the
/// input's time base (group delay 0).
pub fn resample(w: &RealWaveform, out_rate: f64) -> Result<RealWaveform> {
    if (out_rate - w.sample_rate()).abs() <= 1e-9 * out_rate {
        return Ok(w.clone());
    }
    let r = RationalResampler::new(w.sample_rate(), out_rate)?;
    RealWaveform::new(r.process_periodic(w.samples()), out_rate)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncResult {
    /// First sample of the synchronization symbol's body (after its CP).
    pub start_index: usize,
    pub metric_peak: f64,
    pub plateau_width: usize,
}

/// Timing metric `M(d) = P(d)² / R(d)²` with
/// `P(d) = Σ w(d+m) w(d+m+L)` and `R(d) = ½ Σ (w(d+m)² + w(d+m+L)²)`,
/// `L = fft_size / 2`. The symmetric energy term bounds `M` by 1 and equals the
/// one-sided energy on the plateau.
pub fn timing_metric(x: &[f64], half: usize) -> Vec<f64> {
    if x.len() < 2 * half {
        return Vec::new();
    }
    let n = x.len() - 2 * half + 1;
    let mut out = Vec::with_capacity(n);
    let exact = |d: usize| {
        let mut p = 0.0;
        let mut r = 0.0;
        for m in 0..half {
            let a = x[d + m];
            let b = x[d + m + half];
            p += a * b;
            r += a * a + b * b;
        }
        (p, 0.5 * r)
    };
    let (mut p, mut r) = (0.0, 0.0);
    for d in 0..n {
        // Refresh the running sums periodically to bound rounding drift.
        if d % 4096 == 0 {
            (p, r) = exact(d);
        } else {
            let (a0, b0) = (x[d - 1], x[d - 1 + half]);
            let (a1, b1) = (x[d - 1 + half], x[d - 1 + 2 * half]);
            p += a1 * b1 - a0 * b0;
            r += 0.5 * (b1 * b1 - a0 * a0);
        }
        out.push(if r > 0.0 { (p * p / (r * r)).min(1.0) } else { 0.0 });
    }
    out
}

/// Locates the first frame in `w` (DC removed). The peak is searched over the
/// first frame length of candidate positions; the plateau is the contiguous
/// run around it with `M ≥ 0.9 max`, and the body start is its midpoint plus
/// half a CP.
pub fn schmidl_cox_sync(w: &RealWaveform, cfg: &DmtConfig) -> Result<SyncResult> {
    let half = cfg.fft_size / 2;
    let cp = cfg.cp_len();
    let metric = timing_metric(w.samples(), half);
    if metric.is_empty() {
        return Err(Error::FrameTruncated {
            start: 0,
            needed: cfg.fft_size,
            available: w.len(),
        });
    }
    let search = metric.len().min(frame_geometry(cfg).samples_per_frame);
    let (peak_at, peak) = metric[..search]
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &m)| if m > best.1 { (i, m) } else { best });
    if !(peak >= SYNC_FLOOR) {
        return Err(Error::SyncNotFound {
            peak,
            floor: SYNC_FLOOR,
        });
    }
    let thr = PLATEAU_FRACTION * peak;
    let mut lo = peak_at;
    while lo > 0 && metric[lo - 1] >= thr {
        lo -= 1;
    }
    let mut hi = peak_at;
    while hi + 1 < metric.len() && metric[hi + 1] >= thr {
        hi += 1;
    }
    Ok(SyncResult {
        start_index: (lo + hi) / 2 + cp / 2,
        metric_peak: peak,
        plateau_width: hi - lo + 1,
    })
}

/// Subcarrier values of one received frame, `[symbol][subcarrier]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DemodulatedFrame {
    pub training: Vec<Vec<Complex64>>,
    pub data: Vec<Vec<Complex64>>,
}

/// FFT windows start half a CP before each symbol body.
pub fn demodulate(w: &RealWaveform, sync: &SyncResult, cfg: &DmtConfig) -> Result<DemodulatedFrame> {
    demodulate_with_backoff(w, sync, cfg, cfg.cp_len() / 2)
}

/// As [`demodulate`] with an explicit window backoff into the CP, in samples.
pub fn demodulate_with_backoff(
    w: &RealWaveform,
    sync: &SyncResult,
    cfg: &DmtConfig,
    backoff: usize,
) -> Result<DemodulatedFrame> {
    let n = cfg.fft_size;
    let sps = n + cfg.cp_len();
    let n_sym = cfg.n_symbols();
    let needed = (n_sym - 1) * sps + n;
    let truncated = Error::FrameTruncated {
        start: sync.start_index,
        needed,
        available: w.len(),
    };
    let first = sync.start_index.checked_sub(backoff).ok_or(truncated)?;
    if first + needed > w.len() {
        return Err(Error::FrameTruncated {
            start: sync.start_index,
            needed,
            available: w.len(),
        });
    }
    let scale = 1.0 / (n as f64).sqrt();
    let x = w.samples();
    let mut symbols: Vec<Vec<Complex64>> = (0..n_sym)
        .map(|s| {
            let at = first + s * sps;
            let mut buf: Vec<Complex64> = x[at..at + n].iter().map(|&v| Complex64::new(v, 0.0)).collect();
            dsp::fft(&mut buf);
            (0..cfg.n_data_subcarriers)
                .map(|i| buf[cfg.bin_of(i)] * scale)
                .collect()
        })
        .collect();
    let data = symbols.split_off(cfg.n_training_symbols);
    Ok(DemodulatedFrame {
        training: symbols,
        data,
    })
}

/// Fine timing around a coarse estimate: tries body starts `start + k * step`
/// for `|k * step| ≤ span` and keeps the one whose channel-estimation symbols
/// (`ts_tx[1..]`) give the most consistent per-subcarrier estimate, i.e. the
/// least inter-symbol interference plus noise. Ties go to the smallest shift
/// magnitude, then to the earlier position.
pub fn refine_timing(
    w: &RealWaveform,
    sync: &SyncResult,
    cfg: &DmtConfig,
    ts_tx: &[Vec<Complex64>],
    span: usize,
    step: usize,
) -> Result<SyncResult> {
    let n = cfg.fft_size;
    let sps = n + cfg.cp_len();
    let backoff = cfg.cp_len() / 2;
    let step = step.max(1) as i64;
    let span = span as i64;
    let scale = 1.0 / (n as f64).sqrt();
    let x = w.samples();
    let last = (cfg.n_symbols() - 1) * sps + n;
    let mut best: Option<(f64, i64)> = None;
    let mut k = -(span / step) * step;
    while k <= span {
        let start = sync.start_index as i64 + k;
        let first = start - backoff as i64;
        if first >= 0 && first as usize + last <= w.len() {
            let ratios: Vec<Vec<Complex64>> = (1..cfg.n_training_symbols)
                .map(|s| {
                    let at = first as usize + s * sps;
                    let mut buf: Vec<Complex64> =
                        x[at..at + n].iter().map(|&v| Complex64::new(v, 0.0)).collect();
                    dsp::fft(&mut buf);
                    (0..cfg.n_data_subcarriers)
                        .map(|i| buf[cfg.bin_of(i)] * scale / ts_tx[s][i])
                        .collect()
                })
                .collect();
            let m = ratios.len() as f64;
            let (mut scatter, mut gain) = (0.0, 0.0);
            for i in 0..cfg.n_data_subcarriers {
                let mean = ratios.iter().map(|r| r[i]).sum::<Complex64>() / m;
                scatter += ratios.iter().map(|r| (r[i] - mean).norm_sqr()).sum::<f64>();
                gain += mean.norm_sqr();
            }
            let score = if gain > 0.0 { scatter / gain } else { f64::INFINITY };
            let better = match best {
                None => true,
                Some((b, bk)) => score < b || (score == b && k.abs() < bk.abs()),
            };
            if better {
                best = Some((score, k));
            }
        }
        k += step;
    }
    let (_, k) = best.ok_or(Error::FrameTruncated {
        start: sync.start_index,
        needed: last,
        available: w.len(),
    })?;
    Ok(SyncResult {
        start_index: (sync.start_index as i64 + k) as usize,
        ..*sync
    })
}

/// Per-subcarrier channel taps `H_i` and the adaptation constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EqualizerState {
    pub taps: Vec<Complex64>,
    pub step: f64,
    /// Symbols already averaged into the taps. While `1 / (observations + 1)`
    /// exceeds `step`, updates use that weight instead, so the first data
    /// symbols extend the training average rather than being discounted
    /// against it. Zero disables the warm-up.
    #[serde(default)]
    pub observations: usize,
}

/// `H_i` = mean over the given training symbols of `Y_i / X_i`, skipping
/// symbols where `X_i = 0`. Pass TS2..TSn: TS1 leaves odd bins empty.
pub fn channel_estimate(
    ts_rx: &[Vec<Complex64>],
    ts_tx: &[Vec<Complex64>],
    step: f64,
) -> Result<EqualizerState> {
    if ts_rx.is_empty() || ts_rx.len() != ts_tx.len() {
        return Err(Error::LengthMismatch {
            what: "training symbols",
            expected: ts_tx.len(),
            actual: ts_rx.len(),
        });
    }
    let n = ts_tx[0].len();
    if ts_rx.iter().chain(ts_tx).any(|s| s.len() != n) {
        return Err(Error::LengthMismatch {
            what: "training subcarriers",
            expected: n,
            actual: ts_rx.iter().map(Vec::len).find(|&l| l != n).unwrap_or(n),
        });
    }
    let all_zero = |s: &[Vec<Complex64>]| s.iter().flatten().all(|v| v.norm_sqr() == 0.0);
    if all_zero(ts_rx) || all_zero(ts_tx) {
        return Err(Error::ZeroTraining);
    }
    let taps = (0..n)
        .map(|i| {
            let (sum, count) = ts_rx
                .iter()
                .zip(ts_tx)
                .filter(|(_, t)| t[i].norm_sqr() > 0.0)
                .fold((Complex64::new(0.0, 0.0), 0usize), |(s, c), (r, t)| (s + r[i] / t[i], c + 1));
            if count == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                sum / count as f64
            }
        })
        .collect();
    Ok(EqualizerState {
        taps,
        step,
        observations: ts_rx.len(),
    })
}

/// Output of [`dd_equalize`].
#[derive(Clone, Debug)]
pub struct Equalized {
    /// `Y_i / H_i` per data symbol, on the power-scaled constellation.
    pub symbols: Vec<Vec<Complex64>>,
    /// Hard-decision bits in transmission order.
    pub bits: Vec<u8>,
    pub state: EqualizerState,
}

/// Per data symbol and loaded subcarrier: `Z = Y / H`, decide the nearest
/// `sqrt(P)`-scaled point `X̂`, then `H ← (1 - w) H + w Y / X̂` with
/// `w = max(μ, 1 / (n + 1))` after `n` observations (`w = 0` when `μ = 0`).
pub fn dd_equalize(
    symbols: &[Vec<Complex64>],
    state: &EqualizerState,
    plan: &SubcarrierPlan,
) -> Result<Equalized> {
    if state.taps.len() != plan.len() {
        return Err(Error::LengthMismatch {
            what: "equalizer taps",
            expected: plan.len(),
            actual: state.taps.len(),
        });
    }
    let mu = state.step;
    let mut observations = state.observations;
    let mut taps = state.taps.clone();
    let tables: Vec<Option<(&Constellation, f64)>> = plan
        .bits
        .iter()
        .zip(&plan.powers)
        .map(|(&b, &p)| (b > 0).then(|| (Constellation::get(b as usize).expect("valid order"), p.sqrt())))
        .collect();
    let mut bits = Vec::with_capacity(symbols.len() * plan.total_bits());
    let mut out = Vec::with_capacity(symbols.len());
    for y in symbols {
        if y.len() != plan.len() {
            return Err(Error::LengthMismatch {
                what: "data subcarriers",
                expected: plan.len(),
                actual: y.len(),
            });
        }
        let w = if mu > 0.0 && observations > 0 {
            mu.max(1.0 / (observations + 1) as f64)
        } else {
            mu
        };
        let mut z_row = Vec::with_capacity(y.len());
        for (i, t) in tables.iter().enumerate() {
            let h = taps[i];
            let z = if h.norm_sqr() > 0.0 { y[i] / h } else { Complex64::new(0.0, 0.0) };
            z_row.push(z);
            let Some((c, amp)) = t else { continue };
            let label = c.nearest(z / *amp);
            label_to_bits(label, c.bits(), &mut bits);
            let decided = c.point(label) * *amp;
            taps[i] = h * (1.0 - w) + y[i] / decided * w;
        }
        out.push(z_row);
        if observations > 0 {
            observations += 1;
        }
    }
    Ok(Equalized {
        symbols: out,
        bits,
        state: EqualizerState {
            taps,
            step: mu,
            observations,
        },
    })
}

/// Hamming distance between the sequences, attributed to subcarriers through
/// the plan's bit layout (symbol-major, subcarriers ascending).
pub fn count_errors(rx_bits: &[u8], tx_bits: &[u8], plan: &SubcarrierPlan) -> Result<BerReport> {
    if rx_bits.len() != tx_bits.len() {
        return Err(Error::LengthMismatch {
            what: "bit sequences",
            expected: tx_bits.len(),
            actual: rx_bits.len(),
        });
    }
    let per_symbol = plan.total_bits();
    if per_symbol > 0 && !tx_bits.len().is_multiple_of(per_symbol) {
        return Err(Error::LengthMismatch {
            what: "bits per symbol multiple",
            expected: tx_bits.len() - tx_bits.len() % per_symbol,
            actual: tx_bits.len(),
        });
    }
    let owner: Vec<usize> = plan
        .bits
        .iter()
        .enumerate()
        .flat_map(|(i, &b)| std::iter::repeat_n(i, b as usize))
        .collect();
    let mut per = vec![0u64; plan.len()];
    let mut errors = 0u64;
    for (k, (a, b)) in rx_bits.iter().zip(tx_bits).enumerate() {
        if (a ^ b) & 1 == 1 {
            errors += 1;
            if per_symbol > 0 {
                per[owner[k % per_symbol]] += 1;
            }
        }
    }
    let total = tx_bits.len() as u64;
    Ok(BerReport {
        bit_errors: errors,
        bits_total: total,
        ber: if total == 0 { 0.0 } else { errors as f64 / total as f64 },
        per_subcarrier_errors: per,
    })
}

/// Equalized constellation dump: `symbol,subcarrier,bits,re,im`, normalized to
/// unit average energy per subcarrier. Unloaded subcarriers are omitted.
pub fn write_constellation_csv<W: Write>(
    symbols: &[Vec<Complex64>],
    plan: &SubcarrierPlan,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["symbol", "subcarrier", "bits", "re", "im"])?;
    for (s, row) in symbols.iter().enumerate() {
        for (i, z) in row.iter().enumerate() {
            let b = plan.bits[i];
            if b == 0 {
                continue;
            }
            let z = z / plan.powers[i].sqrt();
            w.write_record([
                s.to_string(),
                i.to_string(),
                b.to_string(),
                format!("{:.6}", z.re),
                format!("{:.6}", z.im),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::target_bits_per_symbol;
    use crate::loading::{chow_load, GapConfig, SnrProfile};
    use crate::txdsp::{build_training_symbols, modulate_frame, DmtFrame};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn small_cfg() -> DmtConfig {
        DmtConfig {
            fft_size: 256,
            n_data_subcarriers: 100,
            cp_ratio: 1.0 / 8.0,
            n_data_symbols: 20,
            n_training_symbols: 5,
            dac_rate: 64e9,
            clipping_ratio_db: f64::INFINITY,
            max_bits_per_subcarrier: 8,
        }
    }

    fn random_bits(n: usize, seed: u64) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0..2u8)).collect()
    }

    fn frame(plan: &SubcarrierPlan, cfg: &DmtConfig, seed: u64) -> DmtFrame {
        let bits = random_bits(plan.total_bits() * cfg.n_data_symbols, seed);
        modulate_frame(&bits, plan, cfg, seed ^ 0xA5).unwrap()
    }

    /// Periodic frame read from `-offset`, long enough for sync and one frame.
    fn capture(w: &RealWaveform, offset: usize, extra: usize) -> RealWaveform {
        let n = w.len();
        let s = w.samples();
        let x = (0..n + extra).map(|k| s[(k + n - offset % n) % n]).collect();
        RealWaveform::new(x, w.sample_rate()).unwrap()
    }

    fn add_awgn(w: &RealWaveform, snr_db: f64, seed: u64) -> RealWaveform {
        let sigma = (w.mean_power() / 10f64.powf(snr_db / 10.0)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        w.with_samples(
            w.samples()
                .iter()
                .map(|&x| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    x + sigma * n
                })
                .collect(),
        )
    }

    fn receive(
        rx: &RealWaveform,
        sync: &SyncResult,
        plan: &SubcarrierPlan,
        cfg: &DmtConfig,
        ts_seed: u64,
        backoff: usize,
    ) -> Vec<u8> {
        let demod = demodulate_with_backoff(rx, sync, cfg, backoff).unwrap();
        let ts = build_training_symbols(cfg, ts_seed);
        let st = channel_estimate(&demod.training[1..], &ts[1..], DEFAULT_STEP).unwrap();
        dd_equalize(&demod.data, &st, plan).unwrap().bits
    }

    #[test]
    fn sqrt_linearize_cases() {
        let w = RealWaveform::new(vec![4.0; 5], 1e9).unwrap();
        assert!(sqrt_linearize(&w).samples().iter().all(|&v| v == 2.0));
        let z = RealWaveform::new(vec![0.0; 5], 1e9).unwrap();
        assert!(sqrt_linearize(&z).samples().iter().all(|&v| v == 0.0));
        let neg = RealWaveform::new(vec![-1.0, 9.0], 1e9).unwrap();
        assert_eq!(sqrt_linearize(&neg).samples(), &[0.0, 3.0]);
        let field = crate::types::OpticalField::new(
            (0..64).map(|i| Complex64::from_polar(0.5 + (i as f64 * 0.1).sin().abs(), i as f64)).collect(),
            1e9,
            0.0,
        )
        .unwrap();
        let back = sqrt_linearize(&crate::channel::photodiode(&field));
        for (a, b) in back.samples().iter().zip(field.samples()) {
            assert!((a - b.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_identity_and_white_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 80 * 1024;
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let w = RealWaveform::new(x, 80e9).unwrap();
        assert_eq!(resample(&w, 80e9).unwrap(), w);
        let y = resample(&w, 64e9).unwrap();
        assert_eq!(y.len(), n * 4 / 5);
        let band_psd = |w: &RealWaveform| {
            let mut b: Vec<Complex64> = w.samples().iter().map(|&v| Complex64::new(v, 0.0)).collect();
            dsp::fft(&mut b);
            let len = b.len();
            let df = w.sample_rate() / len as f64;
            let k_max = (30e9 / df) as usize;
            // Power spectral density of the unitary transform, per Hz.
            (1..=k_max).map(|k| b[k].norm_sqr() / len as f64).sum::<f64>() / k_max as f64 / w.sample_rate()
        };
        let ratio = band_psd(&y) / band_psd(&w);
        assert!((ratio - 1.0).abs() < 0.02, "PSD ratio {ratio}");
    }

    #[test]
    fn sync_noiseless_known_offset() {
        let cfg = DmtConfig::default();
        let plan = SubcarrierPlan::uniform(cfg.n_data_subcarriers, 2);
        let f = frame(&plan, &cfg, 1);
        let rx = capture(&f.waveform, 1234, 2 * cfg.fft_size);
        let sync = schmidl_cox_sync(&remove_dc(&rx), &cfg).unwrap();
        let truth = 1234 + cfg.cp_len();
        assert!(sync.start_index.abs_diff(truth) <= cfg.cp_len(), "{sync:?}");
        assert!(sync.metric_peak <= 1.0 + 1e-9 && sync.metric_peak > 0.99);
        assert!(sync.plateau_width >= cfg.cp_len());
    }

    #[test]
    fn sync_rejects_noise() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let err = schmidl_cox_sync(&RealWaveform::new(x, 64e9).unwrap(), &cfg).unwrap_err();
        assert!(matches!(err, Error::SyncNotFound { .. }));
    }

    #[test]
    fn sync_at_10db_snr() {
        let cfg = small_cfg();
        let plan = SubcarrierPlan::uniform(cfg.n_data_subcarriers, 2);
        let spf = frame_geometry(&cfg).samples_per_frame;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let trials = 300;
        let mut hits = 0;
        for t in 0..trials {
            let f = frame(&plan, &cfg, t);
            let offset = rng.random_range(0..spf);
            let rx = add_awgn(&capture(&f.waveform, offset, 2 * cfg.fft_size), 10.0, 1000 + t);
            if let Ok(s) = schmidl_cox_sync(&remove_dc(&rx), &cfg) {
                hits += (s.start_index.abs_diff(offset + cfg.cp_len()) <= cfg.cp_len()) as usize;
            }
        }
        assert!(hits as f64 >= 0.99 * trials as f64, "{hits}/{trials}");
    }

    #[test]
    fn demodulate_inverts_modulation() {
        let cfg = small_cfg();
        let plan = SubcarrierPlan::uniform(cfg.n_data_subcarriers, 4);
        let f = frame(&plan, &cfg, 4);
        let sync = SyncResult {
            start_index: cfg.cp_len(),
            metric_peak: 1.0,
            plateau_width: 1,
        };
        let d = demodulate_with_backoff(&f.waveform, &sync, &cfg, 0).unwrap();
        assert_eq!(d.training.len(), 5);
        assert_eq!(d.data.len(), 20);
        for (got, want) in d.training.iter().chain(&d.data).zip(&f.frequency_symbols) {
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).norm() <= 1e-9 * w.norm().max(1.0));
            }
        }
        let late = SyncResult { start_index: cfg.cp_len() + 1, ..sync };
        assert!(matches!(
            demodulate_with_backoff(&f.waveform, &late, &cfg, 0),
            Err(Error::FrameTruncated { .. })
        ));
    }

    #[test]
    fn timing_error_within_guard_is_harmless_and_beyond_is_not() {
        let cfg = small_cfg();
        let cp = cfg.cp_len();
        let plan = SubcarrierPlan::uniform(cfg.n_data_subcarriers, 6);
        let f = frame(&plan, &cfg, 8);
        let rx = capture(&f.waveform, 100, 2 * cfg.fft_size);
        let truth = 100 + cp;
        for err in -(cp as i64)..=0 {
            let sync = SyncResult {
                start_index: (truth as i64 + err) as usize,
                metric_peak: 1.0,
                plateau_width: 1,
            };
            let bits = receive(&rx, &sync, &plan, &cfg, 8 ^ 0xA5, 0);
            assert_eq!(count_errors(&bits, &f.tx_bits, &plan).unwrap().bit_errors, 0, "err {err}");
        }
        for err in [-(cp as i64) / 2, cp as i64 / 2] {
            let sync = SyncResult {
                start_index: (truth as i64 + err) as usize,
                metric_peak: 1.0,
                plateau_width: 1,
            };
            let bits = receive(&rx, &sync, &plan, &cfg, 8 ^ 0xA5, cp / 2);
            assert_eq!(count_errors(&bits, &f.tx_bits, &plan).unwrap().bit_errors, 0, "err {err}");
        }
        let sync = SyncResult {
            start_index: truth + cp + 5,
            metric_peak: 1.0,
            plateau_width: 1,
        };
        let bits = receive(&rx, &sync, &plan, &cfg, 8 ^ 0xA5, cp / 2);
        assert!(count_errors(&bits, &f.tx_bits, &plan).unwrap().bit_errors > 0);
    }

    #[test]
    fn refine_timing_pulls_a_late_estimate_into_the_guard() {
        let cfg = small_cfg();
        let cp = cfg.cp_len();
        let plan = SubcarrierPlan::uniform(cfg.n_data_subcarriers, 6);
        let f = frame(&plan, &cfg, 8);
        let rx = capture(&f.waveform, 100, 2 * cfg.fft_size);
        let truth = 100 + cp;
        let ts = build_training_symbols(&cfg, 8 ^ 0xA5);
        for late in [0, 6, 20, 30] {
            let coarse = SyncResult {
                start_index: truth + late,
                metric_peak: 1.0,
                plateau_width: 1,
            };
            let fine = refine_timing(&rx, &coarse, &cfg, &ts, cp, 2).unwrap();
            // The window (start minus the cp/2 backoff) must begin inside the guard.
            let first = fine.start_index - cp / 2;
            assert!(first <= truth && first + cp >= truth, "late {late}: {fine:?}");
            let bits = receive(&rx, &fine, &plan, &cfg, 8 ^ 0xA5, cp / 2);
            assert_eq!(count_errors(&bits, &f.tx_bits, &plan).unwrap().bit_errors, 0, "late {late}");
        }
        let short = RealWaveform::new(rx.samples()[..cfg.fft_size].to_vec(), rx.sample_rate()).unwrap();
        let coarse = SyncResult {
            start_index: truth,
            metric_peak: 1.0,
            plateau_width: 1,
        };
        assert!(matches!(
            refine_timing(&short, &coarse, &cfg, &ts, cp, 2),
            Err(Error::FrameTruncated { .. })
        ));
    }

    #[test]
    fn channel_estimate_recovers_taps() {
        let cfg = small_cfg();
        let ts = build_training_symbols(&cfg, 5);
        let st = channel_estimate(&ts[1..], &ts[1..], 0.05).unwrap();
        assert!(st.taps.iter().all(|h| (h - 1.0).norm() < 1e-9));

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h: Vec<Complex64> = (0..cfg.n_data_subcarriers)
            .map(|_| Complex64::from_polar(rng.random_range(0.2..2.0), rng.random_range(-3.0..3.0)))
            .collect();
        let rx: Vec<Vec<Complex64>> = ts[1..]
            .iter()
            .map(|s| s.iter().zip(&h).map(|(x, h)| x * h).collect())
            .collect();
        let st = channel_estimate(&rx, &ts[1..], 0.05).unwrap();
        for (got, want) in st.taps.iter().zip(&h) {
            assert!((got - want).norm() < 1e-6);
        }
        let zeros = vec![vec![Complex64::new(0.0, 0.0); cfg.n_data_subcarriers]; 4];
        assert!(matches!(channel_estimate(&zeros, &ts[1..], 0.05), Err(Error::ZeroTraining)));
    }

    #[test]
    fn averaging_four_training_symbols_reduces_tap_variance() {
        let cfg = small_cfg();
        let ts = build_training_symbols(&cfg, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sigma = 0.1;
        let mut noisy = |s: &Vec<Complex64>| -> Vec<Complex64> {
            s.iter()
                .map(|x| {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    x + Complex64::new(a, b) * sigma
                })
                .collect()
        };
        let (mut v1, mut v4) = (0.0, 0.0);
        for _ in 0..50 {
            let rx: Vec<Vec<Complex64>> = ts[1..].iter().map(&mut noisy).collect();
            let one = channel_estimate(&rx[..1], &ts[1..2], 0.05).unwrap();
            let four = channel_estimate(&rx, &ts[1..], 0.05).unwrap();
            v1 += one.taps.iter().map(|h| (h - 1.0).norm_sqr()).sum::<f64>();
            v4 += four.taps.iter().map(|h| (h - 1.0).norm_sqr()).sum::<f64>();
        }
        assert!(v4 < 0.5 * v1, "{v4} vs {v1}");
        assert!((v1 / v4 - 4.0).abs() < 0.5);
    }

    #[test]
    fn equalizer_update_rule() {
        let plan = SubcarrierPlan::uniform(3, 2);
        let c = Constellation::get(2).unwrap();
        let x: Vec<Complex64> = (0..3).map(|i| c.point(i)).collect();
        let state = EqualizerState {
            taps: vec![Complex64::new(1.0, 0.0); 3],
            step: 0.0,
            observations: 4,
        };
        let out = dd_equalize(&[x.clone(), x.clone()], &state, &plan).unwrap();
        assert_eq!(out.state.taps, state.taps);
        let h = Complex64::from_polar(0.8, 0.3);
        let y: Vec<Complex64> = x.iter().map(|v| v * h * Complex64::from_polar(1.0, 0.05)).collect();
        let fast = EqualizerState {
            taps: vec![h; 3],
            step: 1.0,
            observations: 4,
        };
        let out = dd_equalize(std::slice::from_ref(&y), &fast, &plan).unwrap();
        for (t, (yv, xv)) in out.state.taps.iter().zip(y.iter().zip(&x)) {
            assert!((t - yv / xv).norm() < 1e-12);
        }
    }

    #[test]
    fn warm_up_continues_the_training_mean() {
        let plan = SubcarrierPlan::uniform(1, 2);
        let x = Constellation::get(2).unwrap().point(0);
        let start = EqualizerState {
            taps: vec![Complex64::new(1.0, 0.0)],
            step: 0.05,
            observations: 4,
        };
        // Observed ratios 1.1, 1.2: running mean over 4 + 2 observations.
        let ys = [vec![x * 1.1], vec![x * 1.2]];
        let out = dd_equalize(&ys, &start, &plan).unwrap();
        assert!((out.state.taps[0].re - (4.0 + 1.1 + 1.2) / 6.0).abs() < 1e-12);
        assert_eq!(out.state.observations, 6);
        // Past 1 / μ observations the constant step takes over.
        let late = EqualizerState { observations: 40, ..start.clone() };
        let out = dd_equalize(&ys[..1], &late, &plan).unwrap();
        assert!((out.state.taps[0].re - (0.95 + 0.05 * 1.1)).abs() < 1e-12);
        let plain = EqualizerState { observations: 0, ..start };
        let out = dd_equalize(&ys[..1], &plain, &plan).unwrap();
        assert!((out.state.taps[0].re - (0.95 + 0.05 * 1.1)).abs() < 1e-12);
    }

    #[test]
    fn decision_directed_taps_track_phase_drift() {
        let cfg = DmtConfig {
            n_data_symbols: 200,
            ..small_cfg()
        };
        let plan = SubcarrierPlan::uniform(cfg.n_data_subcarriers, 6);
        let f = frame(&plan, &cfg, 21);
        let sync = SyncResult {
            start_index: cfg.cp_len(),
            metric_peak: 1.0,
            plateau_width: 1,
        };
        let d = demodulate_with_backoff(&f.waveform, &sync, &cfg, 0).unwrap();
        let drift: Vec<Vec<Complex64>> = d
            .data
            .iter()
            .enumerate()
            .map(|(s, row)| {
                let rot = Complex64::from_polar(1.0, (0.1 * (s + 1) as f64).to_radians());
                row.iter().map(|v| v * rot).collect()
            })
            .collect();
        let ts = build_training_symbols(&cfg, 21 ^ 0xA5);
        let tracking = channel_estimate(&d.training[1..], &ts[1..], DEFAULT_STEP).unwrap();
        let frozen = EqualizerState { step: 0.0, ..tracking.clone() };
        let ber = |st: &EqualizerState| {
            let bits = dd_equalize(&drift, st, &plan).unwrap().bits;
            count_errors(&bits, &f.tx_bits, &plan).unwrap().ber
        };
        let (b_track, b_frozen) = (ber(&tracking), ber(&frozen));
        assert!(b_track < b_frozen, "{b_track} vs {b_frozen}");
        assert_eq!(b_track, 0.0);
    }

    #[test]
    fn error_counting() {
        let plan = SubcarrierPlan::new(vec![2, 0, 3], vec![1.0, 0.0, 1.0]).unwrap();
        let tx = random_bits(50, 1);
        assert_eq!(count_errors(&tx, &tx, &plan).unwrap().ber, 0.0);
        let inv: Vec<u8> = tx.iter().map(|b| b ^ 1).collect();
        let r = count_errors(&inv, &tx, &plan).unwrap();
        assert_eq!(r.ber, 1.0);
        assert_eq!(r.per_subcarrier_errors, vec![20, 0, 30]);
        let mut flipped = tx.clone();
        for k in [0, 7, 13, 44] {
            flipped[k] ^= 1;
        }
        let r = count_errors(&flipped, &tx, &plan).unwrap();
        assert_eq!(r.bit_errors, 4);
        // Positions modulo 5: 0 -> sc 0; 2, 3, 4 -> sc 2.
        assert_eq!(r.per_subcarrier_errors, vec![1, 0, 3]);
        assert!(count_errors(&tx[1..], &tx, &plan).is_err());
    }

    #[test]
    fn constellation_csv_header() {
        let plan = SubcarrierPlan::new(vec![2, 0], vec![1.0, 0.0]).unwrap();
        let mut out = Vec::new();
        let z = vec![vec![Complex64::new(1.0, -1.0), Complex64::new(5.0, 5.0)]];
        write_constellation_csv(&z, &plan, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "symbol,subcarrier,bits,re,im");
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "0,0,2,1.000000,-1.000000");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn full_chain_identity(rate_idx in 0usize..5, seed in 0u64..1_000_000, offset in 0usize..257_920) {
            let cfg = DmtConfig::default();
            let rate = [112e9, 89.6e9, 74.7e9, 64e9, 56e9][rate_idx];
            let b = target_bits_per_symbol(rate, &cfg).unwrap();
            let gap = GapConfig::from_target_ber(4e-3).unwrap();
            let snr = SnrProfile::new(vec![1e4; cfg.n_data_subcarriers]).unwrap();
            let plan = chow_load(&snr, b, &gap, cfg.max_bits_per_subcarrier).unwrap();
            let f = frame(&plan, &cfg, seed);
            let rx = capture(&f.waveform, offset, f.waveform.len() + 2 * cfg.fft_size);
            let sync = schmidl_cox_sync(&remove_dc(&rx), &cfg).unwrap();
            let bits = receive(&rx, &sync, &plan, &cfg, seed ^ 0xA5, cfg.cp_len() / 2);
            prop_assert_eq!(count_errors(&bits, &f.tx_bits, &plan).unwrap().bit_errors, 0);
        }
    }
}
