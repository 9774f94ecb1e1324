//! SNR estimation from a probe frame and margin-adaptive bit/power loading.
//!
//! Loading follows the Chow-Cioffi-Bingham practical algorithm: a common margin
//! is iterated until the rounded bit allocation hits the target, remaining
//! mismatch is removed by moving single bits according to the rounding residue,
//! and powers are set so every loaded subcarrier sits at the same BER. The
//! Levin-Campello greedy allocation is kept alongside as the optimal reference.
//!
//! SNR-gap model: a subcarrier with SNR `s` carries `log2(1 + s / Γ)` bits at
//! the target BER, with `Γ = Q⁻¹(BER/2)² / 3`.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::types::{DmtConfig, SubcarrierPlan};

/// Estimates are capped here (+50 dB).
pub const SNR_CAP: f64 = 1e5;

/// Margin iterations before the forced bit adjustment.
pub const DEFAULT_MAX_ITERATIONS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrProfile {
    pub snr_linear: Vec<f64>,
}

impl SnrProfile {
    pub fn new(snr_linear: Vec<f64>) -> Result<Self> {
        if let Some(bad) = snr_linear.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::InvalidConfig(format!("negative or NaN SNR {bad}")));
        }
        Ok(Self { snr_linear })
    }

    pub fn len(&self) -> usize {
        self.snr_linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snr_linear.is_empty()
    }

    pub fn db(&self) -> Vec<f64> {
        self.snr_linear.iter().map(|s| 10.0 * s.log10()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    pub target_ber: f64,
    pub gap_linear: f64,
    /// Starting margin of the iteration, dB.
    pub margin_db: f64,
    pub max_iterations: usize,
}

impl GapConfig {
    pub fn from_target_ber(target_ber: f64) -> Result<Self> {
        Ok(Self {
            target_ber,
            gap_linear: gap_from_ber(target_ber)?,
            margin_db: 0.0,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        })
    }
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn q_inverse(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Square-QAM SNR gap for a target BER.
pub fn gap_from_ber(target_ber: f64) -> Result<f64> {
    if !(target_ber > 0.0 && target_ber < 0.5) {
        return Err(Error::InvalidBer(target_ber));
    }
    let q = q_inverse(target_ber / 2.0);
    Ok(q * q / 3.0)
}

/// Per-subcarrier SNR from a probe frame with known transmitted symbols.
///
/// `rx` and `tx` are indexed `[symbol][subcarrier]`. The channel is the
/// least-squares estimate over the same symbols. Silent subcarriers report 0.
pub fn estimate_snr(
    rx: &[Vec<Complex64>],
    tx: &[Vec<Complex64>],
    cfg: &DmtConfig,
) -> Result<SnrProfile> {
    if rx.len() != tx.len() || rx.is_empty() {
        return Err(Error::LengthMismatch {
            what: "probe symbols",
            expected: tx.len(),
            actual: rx.len(),
        });
    }
    let n = cfg.n_data_subcarriers;
    for (r, t) in rx.iter().zip(tx) {
        if r.len() != n || t.len() != n {
            return Err(Error::LengthMismatch {
                what: "probe subcarriers",
                expected: n,
                actual: r.len().min(t.len()),
            });
        }
    }
    let snr = (0..n)
        .map(|i| {
            let mut cross = Complex64::new(0.0, 0.0);
            let (mut tx_pow, mut rx_pow) = (0.0, 0.0);
            for (r, t) in rx.iter().zip(tx) {
                cross += r[i] * t[i].conj();
                tx_pow += t[i].norm_sqr();
                rx_pow += r[i].norm_sqr();
            }
            if tx_pow == 0.0 || rx_pow == 0.0 || cross.norm_sqr() == 0.0 {
                return 0.0;
            }
            let h = cross / tx_pow;
            let err: f64 = rx.iter().zip(tx).map(|(r, t)| (r[i] / h - t[i]).norm_sqr()).sum();
            if err == 0.0 {
                SNR_CAP
            } else {
                (tx_pow / err).min(SNR_CAP)
            }
        })
        .collect();
    SnrProfile::new(snr)
}

fn capacity_bits(snr: f64, gap: f64, max_bits: usize) -> usize {
    ((1.0 + snr / gap).log2().floor() as usize).min(max_bits)
}

/// Sum over subcarriers of `min(max_bits, floor(log2(1 + SNR/Γ)))`: the largest
/// target that loading accepts.
pub fn max_achievable_bits(snr: &SnrProfile, gap: &GapConfig, max_bits: usize) -> usize {
    snr.snr_linear
        .iter()
        .map(|&s| capacity_bits(s, gap.gap_linear, max_bits))
        .sum()
}

fn check_request(snr: &SnrProfile, b_target: usize, gap: &GapConfig, max_bits: usize) -> Result<()> {
    if b_target == 0 {
        return Err(Error::InvalidConfig("target bit count must be at least 1".into()));
    }
    if !(1..=8).contains(&max_bits) {
        return Err(Error::InvalidOrder(max_bits));
    }
    if !(gap.gap_linear >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "gap {} must be at least 1",
            gap.gap_linear
        )));
    }
    let max_achievable = max_achievable_bits(snr, gap, max_bits);
    if max_achievable < b_target {
        return Err(Error::LoadingInfeasible {
            target: b_target,
            max_achievable,
        });
    }
    Ok(())
}

/// Power each subcarrier needs to carry its bits exactly at the target BER,
/// `(2^b - 1) Γ / SNR`; zero for unloaded subcarriers.
pub fn required_powers(bits: &[u8], snr: &SnrProfile, gap: &GapConfig) -> Vec<f64> {
    bits.iter()
        .zip(&snr.snr_linear)
        .map(|(&b, &s)| {
            if b == 0 {
                0.0
            } else {
                ((1u32 << b) - 1) as f64 * gap.gap_linear / s
            }
        })
        .collect()
}

/// Equal-BER powers renormalized to `sum = n_active`.
fn plan_from_bits(bits: Vec<u8>, snr: &SnrProfile, gap: &GapConfig) -> Result<SubcarrierPlan> {
    let mut powers = required_powers(&bits, snr, gap);
    let n_active = bits.iter().filter(|&&b| b > 0).count() as f64;
    let total: f64 = powers.iter().sum();
    if total > 0.0 {
        powers.iter_mut().for_each(|p| *p *= n_active / total);
    }
    SubcarrierPlan::new(bits, powers)
}

/// Margin-adaptive loading: exactly `b_target` bits per symbol at equal BER.
///
/// Ties in the forced adjustment go to the lowest subcarrier index.
pub fn chow_load(
    snr: &SnrProfile,
    b_target: usize,
    gap: &GapConfig,
    max_bits: usize,
) -> Result<SubcarrierPlan> {
    check_request(snr, b_target, gap, max_bits)?;
    let s = &snr.snr_linear;
    let n = s.len();
    let target = b_target as i64;
    let mut margin_db = gap.margin_db;
    let mut exact = vec![0.0; n];
    let mut bits = vec![0u8; n];

    for _ in 0..gap.max_iterations.max(1) {
        let g = gap.gap_linear * 10f64.powf(margin_db / 10.0);
        let mut total = 0i64;
        let mut used = 0usize;
        for i in 0..n {
            exact[i] = (1.0 + s[i] / g).log2();
            bits[i] = exact[i].round().clamp(0.0, max_bits as f64) as u8;
            total += bits[i] as i64;
            used += usize::from(bits[i] > 0);
        }
        if total == target {
            break;
        }
        let used = if used == 0 {
            s.iter().filter(|&&v| v > 0.0).count().max(1)
        } else {
            used
        };
        margin_db += 10.0 * (2f64.powf((total - target) as f64 / used as f64)).log10();
    }

    let mut diff: Vec<f64> = exact.iter().zip(&bits).map(|(e, &b)| e - b as f64).collect();
    let mut total: i64 = bits.iter().map(|&b| b as i64).sum();
    while total > target {
        let i = (0..n)
            .filter(|&i| bits[i] > 0)
            .min_by(|&a, &b| diff[a].total_cmp(&diff[b]))
            .expect("loaded subcarrier exists while over target");
        bits[i] -= 1;
        diff[i] += 1.0;
        total -= 1;
    }
    while total < target {
        let i = (0..n)
            .filter(|&i| (bits[i] as usize) < max_bits && s[i] > 0.0)
            .max_by(|&a, &b| diff[a].total_cmp(&diff[b]).then(b.cmp(&a)))
            .expect("feasibility check guarantees spare capacity");
        bits[i] += 1;
        diff[i] -= 1.0;
        total += 1;
    }
    plan_from_bits(bits, snr, gap)
}

/// Greedy minimum-power allocation: each bit goes to the subcarrier whose next
/// bit costs the least power, `Γ 2^b / SNR`. Optimal for this discrete problem.
pub fn levin_campello_oracle(
    snr: &SnrProfile,
    b_target: usize,
    gap: &GapConfig,
    max_bits: usize,
) -> Result<SubcarrierPlan> {
    check_request(snr, b_target, gap, max_bits)?;
    let bits = greedy_bits(&snr.snr_linear, b_target, gap, max_bits)
        .expect("feasibility check guarantees spare capacity");
    plan_from_bits(bits, snr, gap)
}

/// Best-effort plan for a target above the SNR capacity: the greedy
/// minimum-power allocation without the gap constraint, so the link runs below
/// its target margin. Fails only when the target exceeds `max_bits` on every
/// live subcarrier.
pub fn overload_load(
    snr: &SnrProfile,
    b_target: usize,
    gap: &GapConfig,
    max_bits: usize,
) -> Result<SubcarrierPlan> {
    let live = snr.snr_linear.iter().filter(|&&v| v > 0.0).count();
    let bits = greedy_bits(&snr.snr_linear, b_target, gap, max_bits).ok_or(Error::LoadingInfeasible {
        target: b_target,
        max_achievable: live * max_bits,
    })?;
    plan_from_bits(bits, snr, gap)
}

fn greedy_bits(s: &[f64], b_target: usize, gap: &GapConfig, max_bits: usize) -> Option<Vec<u8>> {
    let mut bits = vec![0u8; s.len()];
    for _ in 0..b_target {
        let mut best: Option<(usize, f64)> = None;
        for (i, &si) in s.iter().enumerate() {
            if si <= 0.0 || bits[i] as usize >= max_bits {
                continue;
            }
            let cost = gap.gap_linear * (1u32 << bits[i]) as f64 / si;
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((i, cost));
            }
        }
        bits[best?.0] += 1;
    }
    Some(bits)
}

/// Loading profile as CSV: `subcarrier,snr_db,bits,power`.
pub fn write_loading_csv<W: Write>(snr: &SnrProfile, plan: &SubcarrierPlan, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subcarrier", "snr_db", "bits", "power"])?;
    for (i, ((s, b), p)) in snr
        .snr_linear
        .iter()
        .zip(&plan.bits)
        .zip(&plan.powers)
        .enumerate()
    {
        w.write_record([
            i.to_string(),
            format!("{:.6}", 10.0 * s.log10()),
            b.to_string(),
            format!("{p:.9}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}
