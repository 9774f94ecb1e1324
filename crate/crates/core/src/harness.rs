//! End-to-end link runner and experiment engine: two-pass (probe, then loaded)
//! link runs, required-OSNR bisection, detuning sweeps and the rate/reach table.
//!
//! Frames are simulated as periodic records, so every linear element is applied
//! exactly by FFT. The receiver captures the periodic photocurrent at a random
//! cyclic offset on the optical grid, which exercises sub-sample timing.
//!
//! Every random quantity derives from the run seed through [`derive_seed`]
//! with a fixed stream number, and parallel work is merged by index, so a
//! scenario and seed determine every reported number.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{
    self, dispersion_coefficient, mzm, noise_sigma, photodiode, FilterSpec, LinkConfig, RxFrontend,
};
use crate::dsp::{self, bin_frequency, derive_seed};
use crate::error::{Error, Result};
use crate::frame::target_bits_per_symbol;
use crate::loading::{chow_load, estimate_snr, overload_load, GapConfig, SnrProfile};
use crate::rxdsp::{
    channel_estimate, count_errors, dd_equalize, demodulate, refine_timing, remove_dc, resample, schmidl_cox_sync,
    sqrt_linearize, DemodulatedFrame, DEFAULT_STEP,
};
use crate::txdsp::{build_training_symbols, clip, dac, decorrelate_shift, modulate_frame, DmtFrame};
use crate::types::{BerReport, DmtConfig, OpticalField, RealWaveform, SubcarrierPlan};

/// The 448 Gb/s aggregate split over 4..=8 wavelengths: `(n_channels, net rate)`.
pub const AGGREGATE_RATES: [(usize, f64); 5] = [
    (4, 112e9),
    (5, 89.6e9),
    (6, 74.7e9),
    (7, 64e9),
    (8, 56e9),
];

/// Lower and upper OSNR brackets of [`required_osnr`], dB.
pub const OSNR_BRACKET_DB: (f64, f64) = (10.0, 50.0);

/// Evaluation OSNR of the rate/reach table, dB in 12.5 GHz, after one
/// reference span (see [`SpanBudget`]).
pub const TABLE_OSNR_DB: f64 = 38.0;

/// Target BER of the hard-decision FEC.
pub const FEC_LIMIT: f64 = 4e-3;

/// Seed streams.
mod stream {
    pub const TRAINING: u64 = 1;
    pub const ODD_SHIFT: u64 = 2;
    pub const PROBE: u64 = 3;
    pub const CHANNEL: u64 = 0x100;
    pub const FRAME: u64 = 0x1_0000;
    pub const PAYLOAD: u64 = 0;
    pub const NOISE: u64 = 1;
    pub const CAPTURE: u64 = 2;
    pub const THERMAL: u64 = 3;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMode {
    /// Transmit waveform straight into the receiver DSP.
    Loopback,
    Optical,
}

/// Which wavelengths share the optical grid with the channel under test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    Single,
    /// The channel under test and its adjacent grid neighbors.
    Three,
    Full,
}

impl Neighborhood {
    /// Optical simulation rate, Hz.
    pub fn grid_rate(self) -> f64 {
        match self {
            Neighborhood::Single => 128e9,
            Neighborhood::Three => 256e9,
            Neighborhood::Full => 640e9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MzmConfig {
    pub vpi: f64,
    /// Drive peak as a fraction of `vpi`.
    pub drive_swing: f64,
    /// Bias voltage; `None` selects [`channel::default_bias`].
    pub bias: Option<f64>,
}

impl Default for MzmConfig {
    fn default() -> Self {
        Self {
            vpi: 1.0,
            drive_swing: 0.2,
            bias: None,
        }
    }
}

impl MzmConfig {
    pub fn bias_voltage(&self) -> f64 {
        self.bias
            .unwrap_or_else(|| channel::default_bias(self.vpi, self.drive_swing))
    }
}

/// Amplified-link OSNR budget. Each span is followed by an amplifier that
/// restores the span loss, so ASE power scales with the loss and adds over
/// spans: `OSNR = OSNR_ref + L_ref - L_span - 10 log10(N)`, with
/// `L_span = loss_db_per_km * length + excess_loss_db`. Back-to-back uses
/// `OSNR_ref` unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanBudget {
    pub loss_db_per_km: f64,
    pub excess_loss_db: f64,
    /// Loss of the span at which the configured OSNR holds, dB.
    pub reference_loss_db: f64,
}

impl Default for SpanBudget {
    fn default() -> Self {
        Self {
            loss_db_per_km: 0.2,
            excess_loss_db: 2.0,
            reference_loss_db: 18.0,
        }
    }
}

impl SpanBudget {
    /// Receiver OSNR for a chain of spans. Uses the worst (longest) span when
    /// lengths differ.
    pub fn receiver_osnr_db(&self, reference_osnr_db: f64, spans_km: &[f64]) -> f64 {
        if spans_km.is_empty() || reference_osnr_db.is_infinite() {
            return reference_osnr_db;
        }
        let longest = spans_km.iter().copied().fold(0.0, f64::max);
        let loss = self.loss_db_per_km * longest + self.excess_loss_db;
        reference_osnr_db + self.reference_loss_db - loss - 10.0 * (spans_km.len() as f64).log10()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub mode: LinkMode,
    pub neighborhood: Neighborhood,
    pub link: LinkConfig,
    /// When set, `link.osnr_db` is the reference-span OSNR and the receiver
    /// OSNR follows the span budget.
    pub osnr_budget: Option<SpanBudget>,
    pub dmt: DmtConfig,
    /// Net rate per wavelength, bit/s.
    pub net_rate: f64,
    /// `None` evaluates every channel of the comb.
    pub channel_under_test: Option<usize>,
    pub target_ber: f64,
    pub mzm: MzmConfig,
    pub rx_quantize_bits: Option<u32>,
    /// Thermal noise standard deviation relative to the mean photocurrent.
    pub rx_thermal_noise: Option<f64>,
    pub eq_step: f64,
    /// Half-range of the training-based fine timing search, samples; 0 keeps
    /// the coarse estimate.
    pub fine_timing_span: usize,
    pub min_bits: u64,
    pub min_errors: u64,
    pub max_frames: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mode: LinkMode::Optical,
            neighborhood: Neighborhood::Single,
            link: LinkConfig::default(),
            osnr_budget: None,
            dmt: DmtConfig::default(),
            net_rate: 112e9,
            channel_under_test: Some(1),
            target_ber: FEC_LIMIT,
            mzm: MzmConfig::default(),
            rx_quantize_bits: None,
            rx_thermal_noise: None,
            eq_step: DEFAULT_STEP,
            fine_timing_span: 32,
            min_bits: 1_000_000,
            min_errors: 100,
            max_frames: 8,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.dmt.validate()?;
        self.link.validate()?;
        GapConfig::from_target_ber(self.target_ber)?;
        target_bits_per_symbol(self.net_rate, &self.dmt)?;
        if let Some(c) = self.channel_under_test {
            if c >= self.link.n_channels {
                return Err(Error::InvalidConfig(format!(
                    "channel under test {c} outside 0..{}",
                    self.link.n_channels
                )));
            }
        }
        if !(self.eq_step >= 0.0 && self.eq_step <= 1.0) {
            return Err(Error::InvalidConfig(format!("equalizer step {} outside [0, 1]", self.eq_step)));
        }
        if self.max_frames == 0 {
            return Err(Error::InvalidConfig("max_frames must be at least 1".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the serialized scenario, truncated to 16 digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn channels(&self) -> Vec<usize> {
        match self.channel_under_test {
            Some(c) => vec![c],
            None => (0..self.link.n_channels).collect(),
        }
    }

    /// OSNR at the receiver input after applying the span budget, dB.
    pub fn receiver_osnr_db(&self) -> f64 {
        match &self.osnr_budget {
            Some(b) => b.receiver_osnr_db(self.link.osnr_db, &self.link.span_lengths_km),
            None => self.link.osnr_db,
        }
    }

    fn with_osnr(&self, osnr_db: f64) -> Self {
        let mut sc = self.clone();
        sc.link.osnr_db = osnr_db;
        sc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelStatus {
    Measured,
    /// The probed SNR cannot carry the target bits per symbol at the gap; the
    /// BER, if any, was measured with a best-effort plan.
    Infeasible,
    /// The receiver found no training symbol; no BER is available.
    SyncLost,
}

/// Outcome for one channel under test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelResult {
    pub channel: usize,
    pub status: ChannelStatus,
    pub snr: SnrProfile,
    pub plan: Option<SubcarrierPlan>,
    pub ber: Option<BerReport>,
    /// Common SNR margin of the loaded plan over the gap, dB.
    pub margin_db: Option<f64>,
}

impl ChannelResult {
    /// Measured BER; 0.5 when no plan could be transmitted at all.
    pub fn ber_value(&self) -> f64 {
        self.ber.as_ref().map_or(0.5, |b| b.ber)
    }

    pub fn passes(&self, target_ber: f64) -> bool {
        self.status == ChannelStatus::Measured && self.ber_value() < target_ber
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario_hash: String,
    pub seed: u64,
    pub channels: Vec<ChannelResult>,
    /// Seconds; excluded from result tables.
    pub wall_time_s: f64,
}

impl RunRecord {
    /// Worst channel: unmeasured channels rank below measured ones, then the
    /// highest BER; ties to the lowest index.
    pub fn worst(&self) -> &ChannelResult {
        let key = |c: &ChannelResult| (c.status != ChannelStatus::Measured, c.ber_value());
        self.channels
            .iter()
            .fold(None::<&ChannelResult>, |w, c| match w {
                Some(w) if key(w).0.cmp(&key(c).0).then(key(w).1.total_cmp(&key(c).1)).is_ge() => Some(w),
                _ => Some(c),
            })
            .expect("at least one channel")
    }

    pub fn passes(&self, target_ber: f64) -> bool {
        self.channels.iter().all(|c| c.passes(target_ber))
    }
}

/// One wavelength placed on the simulation axis.
struct Carrier {
    /// Laser frequency relative to the simulation reference, Hz.
    offset: f64,
    /// Interleaver port centre relative to the reference, Hz.
    slot: f64,
    odd: bool,
}

/// Wavelengths simulated for channel `cut` and the position of its slot.
fn carriers(sc: &ScenarioConfig, cut: usize) -> (Vec<Carrier>, f64) {
    let link = &sc.link;
    let spacing = link.grid_spacing;
    let members: Vec<usize> = match sc.neighborhood {
        Neighborhood::Single => vec![cut],
        Neighborhood::Three => (cut.saturating_sub(1)..=(cut + 1).min(link.n_channels - 1)).collect(),
        Neighborhood::Full => (0..link.n_channels).collect(),
    };
    // Full combs are referenced to the comb centre to minimize the grid span.
    let reference = match sc.neighborhood {
        Neighborhood::Full => spacing * (link.n_channels - 1) as f64 / 2.0,
        _ => spacing * cut as f64,
    };
    let list = members
        .into_iter()
        .map(|k| {
            let slot = spacing * k as f64 - reference;
            Carrier {
                offset: slot + link.detuning,
                slot,
                odd: k % 2 == 1,
            }
        })
        .collect();
    (list, spacing * cut as f64 - reference)
}

fn random_bits(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

fn filter_at(spec: &Option<FilterSpec>, center: f64) -> Option<FilterSpec> {
    spec.map(|s| s.centered_at(s.center + center))
}

/// Channel, detection and receiver front end for one transmitted frame. Returns
/// the photocurrent after the front end at the receiver sample rate.
fn optical_path(
    sc: &ScenarioConfig,
    drive: &RealWaveform,
    cut: usize,
    odd_shift: usize,
    frame_seed: u64,
) -> Result<RealWaveform> {
    let grid = sc.neighborhood.grid_rate();
    let link = &sc.link;
    let (list, cut_slot) = carriers(sc, cut);
    let occupied = 2.0 * (sc.dmt.n_data_subcarriers + 1) as f64 * sc.dmt.subcarrier_spacing();
    for c in &list {
        if 2.0 * (c.offset.abs() + occupied / 2.0) >= grid {
            return Err(Error::Aliasing {
                offset: c.offset,
                bandwidth: occupied,
                grid_rate: grid,
            });
        }
    }

    let up = dac(drive, grid)?;
    let bias = sc.mzm.bias_voltage();
    let spectrum_of = |w: &RealWaveform| {
        let mut s = mzm(w, sc.mzm.vpi, bias, sc.mzm.drive_swing).into_samples();
        dsp::fft(&mut s);
        s
    };
    let even = spectrum_of(&up);
    let odd = if list.iter().any(|c| c.odd) {
        Some(spectrum_of(&decorrelate_shift(&up, odd_shift)))
    } else {
        None
    };
    let n = even.len();
    let nf = n as f64;

    // Multiplex: each wavelength passes its transmit interleaver port, then
    // moves to its laser offset (rounded to the frame's frequency resolution).
    let mut composite = vec![Complex64::new(0.0, 0.0); n];
    let mut cut_power = 0.0;
    for c in &list {
        let src = if c.odd { odd.as_ref().expect("odd spectrum") } else { &even };
        let shift = (c.offset * nf / grid).round() as i64;
        let il = filter_at(&link.interleaver, c.slot);
        let is_cut = (c.slot - cut_slot).abs() < 1.0;
        for (k, &v) in src.iter().enumerate() {
            let dst = (k as i64 + shift).rem_euclid(n as i64) as usize;
            let f = bin_frequency(dst, n, grid);
            let h = il.map_or(1.0, |s| s.amplitude_response(f));
            let out = v * h;
            if is_cut {
                cut_power += out.norm_sqr();
            }
            composite[dst] += out;
        }
    }
    let cut_power = cut_power / (nf * nf);

    // Fiber, ASE loading, receive interleaver and demultiplexer in one pass.
    let k_cd = dispersion_coefficient(link.total_length_km(), link.dispersion, link.center_wavelength);
    let osnr = sc.receiver_osnr_db();
    let sigma = osnr
        .is_finite()
        .then(|| noise_sigma(cut_power, osnr, grid) * nf.sqrt());
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(frame_seed, stream::NOISE));
    let rx_il = filter_at(&link.interleaver, cut_slot);
    let demux = filter_at(&link.demux, cut_slot);
    for (k, v) in composite.iter_mut().enumerate() {
        let f = bin_frequency(k, n, grid);
        if k_cd != 0.0 {
            *v *= Complex64::from_polar(1.0, PI * k_cd * f * f);
        }
        if let Some(s) = sigma {
            let re: f64 = StandardNormal.sample(&mut noise_rng);
            let im: f64 = StandardNormal.sample(&mut noise_rng);
            *v += Complex64::new(re, im) * s;
        }
        let h = rx_il.map_or(1.0, |s| s.amplitude_response(f)) * demux.map_or(1.0, |s| s.amplitude_response(f));
        *v *= h;
    }
    dsp::ifft(&mut composite);
    let field = OpticalField::new(composite, grid, 0.0)?;
    let mut current = photodiode(&field).into_samples();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(frame_seed, stream::CAPTURE));
    current.rotate_left(rng.random_range(0..n));
    let frontend = RxFrontend {
        bandwidth: link.rx_bandwidth,
        out_rate: link.rx_sample_rate,
        quantize_bits: sc.rx_quantize_bits,
        thermal_noise: sc.rx_thermal_noise,
    };
    frontend.process(
        &RealWaveform::new(current, grid)?,
        derive_seed(frame_seed, stream::THERMAL),
    )
}

/// Builds, transmits and demodulates one frame for channel `cut`.
fn transceive(
    sc: &ScenarioConfig,
    plan: &SubcarrierPlan,
    cut: usize,
    run_seed: u64,
    frame_seed: u64,
) -> Result<(DmtFrame, DemodulatedFrame)> {
    let cfg = &sc.dmt;
    let bits = random_bits(
        plan.total_bits() * cfg.n_data_symbols,
        derive_seed(frame_seed, stream::PAYLOAD),
    );
    let frame = modulate_frame(&bits, plan, cfg, derive_seed(run_seed, stream::TRAINING))?;
    let drive = clip(&frame.waveform, cfg.clipping_ratio_db);

    let rx = match sc.mode {
        LinkMode::Loopback => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(frame_seed, stream::CAPTURE));
            let mut s = drive.into_samples();
            let len = s.len();
            s.rotate_left(rng.random_range(0..len));
            RealWaveform::new(s, cfg.dac_rate)?
        }
        LinkMode::Optical => {
            let grid_len = frame.waveform.len() as f64 * sc.neighborhood.grid_rate() / cfg.dac_rate;
            let shift_seed = derive_seed(run_seed, stream::ODD_SHIFT);
            let odd_shift = ChaCha8Rng::seed_from_u64(shift_seed)
                .random_range(grid_len as usize / 4..3 * grid_len as usize / 4);
            let current = optical_path(sc, &drive, cut, odd_shift, frame_seed)?;
            resample(&sqrt_linearize(&current), cfg.dac_rate)?
        }
    };

    // Two periods give a complete frame after any sync position in the first.
    let rx = remove_dc(&rx);
    let spf = rx.len();
    let tiled: Vec<f64> = rx
        .samples()
        .iter()
        .cycle()
        .take(2 * spf + cfg.fft_size)
        .copied()
        .collect();
    let rx = RealWaveform::new(tiled, cfg.dac_rate)?;
    let mut sync = schmidl_cox_sync(&rx, cfg)?;
    if sc.fine_timing_span > 0 {
        let ts = build_training_symbols(cfg, derive_seed(run_seed, stream::TRAINING));
        sync = refine_timing(&rx, &sync, cfg, &ts, sc.fine_timing_span, 2)?;
    }
    let demod = demodulate(&rx, &sync, cfg)?;
    Ok((frame, demod))
}

/// Common margin over the gap of a loaded plan, dB (mean over loaded carriers).
fn plan_margin_db(plan: &SubcarrierPlan, snr: &SnrProfile, gap: &GapConfig) -> f64 {
    let (sum, n) = plan
        .bits
        .iter()
        .zip(&plan.powers)
        .zip(&snr.snr_linear)
        .filter(|((&b, _), _)| b > 0)
        .fold((0.0, 0usize), |(s, n), ((&b, &p), &snr)| {
            let need = ((1u64 << b) - 1) as f64 * gap.gap_linear;
            (s + 10.0 * (p * snr / need).log10(), n + 1)
        });
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn run_channel(sc: &ScenarioConfig, cut: usize, seed: u64) -> Result<ChannelResult> {
    let cfg = &sc.dmt;
    let ch_seed = derive_seed(seed, stream::CHANNEL + cut as u64);
    let gap = GapConfig::from_target_ber(sc.target_ber)?;

    let lost = |snr: SnrProfile| ChannelResult {
        channel: cut,
        status: ChannelStatus::SyncLost,
        snr,
        plan: None,
        ber: None,
        margin_db: None,
    };

    let probe_plan = SubcarrierPlan::uniform(cfg.n_data_subcarriers, 2);
    let (probe, demod) = match transceive(sc, &probe_plan, cut, seed, derive_seed(ch_seed, stream::PROBE)) {
        Err(Error::SyncNotFound { .. }) => {
            return Ok(lost(SnrProfile {
                snr_linear: vec![0.0; cfg.n_data_subcarriers],
            }))
        }
        r => r?,
    };
    let tx_data = &probe.frequency_symbols[cfg.n_training_symbols..];
    let snr = estimate_snr(&demod.data, tx_data, cfg)?;

    let b_target = target_bits_per_symbol(sc.net_rate, cfg)?;
    let (status, plan) = match chow_load(&snr, b_target, &gap, cfg.max_bits_per_subcarrier) {
        Ok(p) => (ChannelStatus::Measured, p),
        Err(Error::LoadingInfeasible { .. }) => {
            match overload_load(&snr, b_target, &gap, cfg.max_bits_per_subcarrier) {
                Ok(p) => (ChannelStatus::Infeasible, p),
                Err(Error::LoadingInfeasible { .. }) => {
                    return Ok(ChannelResult {
                        channel: cut,
                        status: ChannelStatus::Infeasible,
                        snr,
                        plan: None,
                        ber: None,
                        margin_db: None,
                    })
                }
                Err(e) => return Err(e),
            }
        }
        Err(e) => return Err(e),
    };

    let training = build_training_symbols(cfg, derive_seed(seed, stream::TRAINING));
    let mut total: Option<BerReport> = None;
    for f in 0..sc.max_frames {
        let frame_seed = derive_seed(ch_seed, stream::FRAME + f as u64);
        let (frame, demod) = match transceive(sc, &plan, cut, seed, frame_seed) {
            Err(Error::SyncNotFound { .. }) => return Ok(lost(snr)),
            r => r?,
        };
        let state = channel_estimate(&demod.training[1..], &training[1..], sc.eq_step)?;
        let eq = dd_equalize(&demod.data, &state, &plan)?;
        let report = count_errors(&eq.bits, &frame.tx_bits, &plan)?;
        match &mut total {
            None => total = Some(report),
            Some(t) => t.merge(&report),
        }
        let t = total.as_ref().expect("merged");
        if t.bits_total >= sc.min_bits || t.bit_errors >= sc.min_errors {
            break;
        }
    }
    let margin = plan_margin_db(&plan, &snr, &gap);
    Ok(ChannelResult {
        channel: cut,
        status,
        snr,
        plan: Some(plan),
        ber: total,
        margin_db: Some(margin),
    })
}

/// Probe frame, SNR estimate and loading, then loaded frames until the
/// error-count rule is met, for every channel under test.
pub fn run_link(sc: &ScenarioConfig, seed: u64) -> Result<RunRecord> {
    sc.validate()?;
    let start = Instant::now();
    let hash = sc.hash();
    let channels = sc
        .channels()
        .into_par_iter()
        .map(|c| run_channel(sc, c, seed).map_err(|e| e.context(format!("scenario {hash} channel {c}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunRecord {
        scenario_hash: hash,
        seed,
        channels,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// One evaluated OSNR during [`required_osnr`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OsnrPoint {
    pub osnr_db: f64,
    pub ber: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequiredOsnr {
    pub osnr_db: f64,
    /// Evaluated points in evaluation order.
    pub trace: Vec<OsnrPoint>,
}

/// Lowest OSNR in [10, 50] dB at which every channel under test meets
/// `target_ber`, by bisection to a bracket of `tol_db`. All points share the
/// seed, so noise realizations scale coherently with OSNR.
pub fn required_osnr(sc: &ScenarioConfig, target_ber: f64, tol_db: f64, seed: u64) -> Result<RequiredOsnr> {
    // No bit decision does worse than guessing.
    if target_ber >= 0.5 {
        return Ok(RequiredOsnr {
            osnr_db: OSNR_BRACKET_DB.0,
            trace: Vec::new(),
        });
    }
    let mut sc = sc.clone();
    sc.target_ber = target_ber;
    sc.validate()?;
    let mut trace = Vec::new();
    let mut eval = |osnr: f64| -> Result<bool> {
        let rec = run_link(&sc.with_osnr(osnr), seed)?;
        let pass = rec.passes(target_ber);
        trace.push(OsnrPoint {
            osnr_db: osnr,
            ber: rec.worst().ber_value(),
            pass,
        });
        Ok(pass)
    };
    let (mut lo, mut hi) = OSNR_BRACKET_DB;
    if !eval(hi)? {
        return Err(Error::InfeasibleAtAnyOsnr {
            ber: trace[0].ber,
            osnr_db: hi,
        });
    }
    if eval(lo)? {
        return Ok(RequiredOsnr { osnr_db: lo, trace });
    }
    while hi - lo > tol_db {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(RequiredOsnr {
        osnr_db: 0.5 * (lo + hi),
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Sweep coordinate (Hz for detuning, dB for OSNR, km for reach).
    pub value: f64,
    pub ber: f64,
    pub status: ChannelStatus,
    pub margin_db: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetuningSweep {
    pub points: Vec<SweepPoint>,
    /// Index of the lowest BER; ties go to the larger loading margin, then to
    /// the lower index.
    pub argmin: usize,
}

fn sweep_point(value: f64, rec: &RunRecord) -> SweepPoint {
    let w = rec.worst();
    SweepPoint {
        value,
        ber: w.ber_value(),
        status: w.status,
        margin_db: w.margin_db,
    }
}

/// Runs the scenario at each laser offset in parallel; results keep the order
/// of `offsets`.
pub fn sweep_detuning(sc: &ScenarioConfig, offsets: &[f64], seed: u64) -> Result<DetuningSweep> {
    let points = offsets
        .par_iter()
        .map(|&d| {
            let mut s = sc.clone();
            s.link.detuning = d;
            run_link(&s, seed).map(|r| sweep_point(d, &r))
        })
        .collect::<Result<Vec<_>>>()?;
    if points.is_empty() {
        return Err(Error::InvalidConfig("empty detuning sweep".into()));
    }
    let key = |p: &SweepPoint| (p.ber, -p.margin_db.unwrap_or(f64::NEG_INFINITY));
    let argmin = (0..points.len())
        .min_by(|&a, &b| {
            let (ka, kb) = (key(&points[a]), key(&points[b]));
            ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
        })
        .expect("non-empty");
    Ok(DetuningSweep { points, argmin })
}

/// Runs the scenario at each OSNR in parallel.
pub fn sweep_osnr(sc: &ScenarioConfig, osnrs_db: &[f64], seed: u64) -> Result<Vec<SweepPoint>> {
    osnrs_db
        .par_iter()
        .map(|&o| run_link(&sc.with_osnr(o), seed).map(|r| sweep_point(o, &r)))
        .collect()
}

/// OSNR at which the BER of an ascending OSNR sweep first drops below
/// `target`, by linear interpolation of log10(BER). `None` if it never does,
/// or if it already does at the first point.
pub fn osnr_crossing(points: &[SweepPoint], target: f64) -> Option<f64> {
    let lg = |b: f64| b.max(1e-12).log10();
    points.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        (a.ber >= target && b.ber < target).then(|| {
            let t = (lg(target) - lg(a.ber)) / (lg(b.ber) - lg(a.ber));
            a.value + t * (b.value - a.value)
        })
    })
}

/// Runs the scenario at each single-span reach in parallel; 0 is back-to-back.
pub fn sweep_reach(sc: &ScenarioConfig, reaches_km: &[f64], seed: u64) -> Result<Vec<SweepPoint>> {
    reaches_km
        .par_iter()
        .map(|&l| {
            let mut s = sc.clone();
            s.link.span_lengths_km = spans_for(l);
            run_link(&s, seed).map(|r| sweep_point(l, &r))
        })
        .collect()
}

/// Splits a reach into spans of at most 80 km; 0 gives back-to-back.
pub fn spans_for(reach_km: f64) -> Vec<f64> {
    if reach_km <= 0.0 {
        return vec![];
    }
    let n = (reach_km / 80.0).ceil() as usize;
    vec![reach_km / n as f64; n]
}

/// The wavelength-count/rate/reach operating points of the 448 Gb/s link.
pub const TABLE_SCENARIOS: [(usize, f64, f64); 5] = [
    (4, 112e9, 0.0),
    (5, 89.6e9, 40.0),
    (6, 74.7e9, 80.0),
    (7, 64e9, 160.0),
    (8, 56e9, 240.0),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub reach_km: f64,
    pub n_channels: usize,
    pub net_rate: f64,
    pub worst_channel: usize,
    pub worst_ber: f64,
    pub status: ChannelStatus,
    pub pass: bool,
}

/// Evaluates every channel of an `n_channels × net_rate` comb over `reach_km`.
pub fn evaluate_operating_point(
    base: &ScenarioConfig,
    n_channels: usize,
    net_rate: f64,
    reach_km: f64,
    seed: u64,
) -> Result<TableRow> {
    let mut sc = base.clone();
    sc.link.n_channels = n_channels;
    sc.link.span_lengths_km = spans_for(reach_km);
    sc.net_rate = net_rate;
    sc.channel_under_test = None;
    let rec = run_link(&sc, seed)?;
    let w = rec.worst();
    Ok(TableRow {
        reach_km,
        n_channels,
        net_rate,
        worst_channel: w.channel,
        worst_ber: w.ber_value(),
        status: w.status,
        pass: rec.passes(sc.target_ber),
    })
}

/// Base scenario of the rate/reach table: 3-channel neighborhood, default
/// 19 GHz detuning, span-budget OSNR referenced to [`TABLE_OSNR_DB`].
pub fn table_base() -> ScenarioConfig {
    let mut sc = ScenarioConfig {
        neighborhood: Neighborhood::Three,
        osnr_budget: Some(SpanBudget::default()),
        channel_under_test: None,
        ..ScenarioConfig::default()
    };
    sc.link.osnr_db = TABLE_OSNR_DB;
    sc
}

/// Rows for [`TABLE_SCENARIOS`] in reach order, at the base scenario's OSNR.
pub fn rate_reach_table(base: &ScenarioConfig, seed: u64) -> Result<Vec<TableRow>> {
    TABLE_SCENARIOS
        .iter()
        .map(|&(n, rate, reach)| evaluate_operating_point(base, n, rate, reach, seed))
        .collect()
}

/// Small-signal double-sideband fading `cos²(π D L λ² f² / c)`.
pub fn analytic_fading(f: f64, length_km: f64, dispersion: f64, wavelength_nm: f64) -> f64 {
    let k = dispersion_coefficient(length_km, dispersion, wavelength_nm);
    (PI * k * f * f).cos().powi(2)
}

/// Frequency of the `m`-th fading null (m ≥ 1): `sqrt((2m - 1) c / (2 D L λ²))`.
pub fn fading_null(m: usize, length_km: f64, dispersion: f64, wavelength_nm: f64) -> f64 {
    let k = dispersion_coefficient(length_km, dispersion, wavelength_nm);
    ((2 * m - 1) as f64 / (2.0 * k)).sqrt()
}

/// Analytic profile on the simulated tone grid, as [`channel::FadingPoint`]s.
pub fn analytic_fading_profile(link: &LinkConfig) -> Vec<channel::FadingPoint> {
    let n = (32e9 / channel::FADING_TONE_SPACING).round() as usize;
    (1..=n)
        .map(|k| {
            let f = k as f64 * channel::FADING_TONE_SPACING;
            let p = analytic_fading(f, link.total_length_km(), link.dispersion, link.center_wavelength);
            channel::FadingPoint {
                frequency: f,
                response_db: 10.0 * p.max(1e-30).log10(),
            }
        })
        .collect()
}
