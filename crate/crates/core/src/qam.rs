//! Unit-energy QAM constellations with Gray labelling.
//!
//! Bit groups are read MSB first. Labels and point tables:
//!
//! * `b = 1`: BPSK, `0 -> +1`, `1 -> -1`.
//! * even `b`: square `2^(b/2)`-QAM. The first `b/2` bits select the in-phase
//!   level, the rest the quadrature level. On each axis the Gray code `g` of
//!   level index `j` (`g = j ^ (j >> 1)`) maps to amplitude `M - 1 - 2j`, so code 0
//!   is the most positive level.
//! * `b = 3`: rectangular 4 x 2 (two in-phase bits, one quadrature bit), Gray on
//!   both axes.
//! * `b = 5, 7`: cross constellations. Start from the Gray rectangular grid with
//!   `2^((b+1)/2)` in-phase and `M_q = 2^((b-1)/2)` quadrature levels; every point
//!   whose in-phase amplitude `i` exceeds `3 M_q / 2` is moved to
//!   `(sign(i) (M_q - |q|), sign(q) (|i| - M_q / 2))`. This fills the cross arms
//!   (`+-5` rows of 32-QAM, `+-9/+-11` rows of 128-QAM) and keeps labels of the
//!   untouched points Gray.
//!
//! All tables are scaled to unit mean energy.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 8;

#[derive(Debug)]
enum Layout {
    /// Product of two Gray PAM axes.
    Grid { i_bits: usize, q_bits: usize },
    Cross,
}

/// Point table of one constellation order, indexed by the label read MSB first.
#[derive(Debug)]
pub struct Constellation {
    bits: usize,
    points: Vec<Complex64>,
    scale: f64,
    layout: Layout,
}

fn gray(j: usize) -> usize {
    j ^ (j >> 1)
}

fn gray_inverse(mut g: usize) -> usize {
    let mut j = g;
    while g > 0 {
        g >>= 1;
        j ^= g;
    }
    j
}

fn pam_level(code: usize, levels: usize) -> f64 {
    (levels as f64 - 1.0) - 2.0 * gray_inverse(code) as f64
}

/// Nearest PAM level to `x` (unscaled amplitude); ties go to the smaller code.
fn pam_slice(x: f64, levels: usize) -> usize {
    if levels == 1 {
        return 0;
    }
    let pos = ((levels as f64 - 1.0) - x) / 2.0;
    let lo = pos.floor().clamp(0.0, levels as f64 - 1.0) as usize;
    let hi = (lo + 1).min(levels - 1);
    let d_lo = (x - ((levels as f64 - 1.0) - 2.0 * lo as f64)).abs();
    let d_hi = (x - ((levels as f64 - 1.0) - 2.0 * hi as f64)).abs();
    let (g_lo, g_hi) = (gray(lo), gray(hi));
    if d_lo < d_hi || (d_lo == d_hi && g_lo <= g_hi) {
        g_lo
    } else {
        g_hi
    }
}

impl Constellation {
    fn build(bits: usize) -> Self {
        let (raw, layout) = match bits {
            1 => (
                vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
                Layout::Grid {
                    i_bits: 1,
                    q_bits: 0,
                },
            ),
            b if b % 2 == 0 || b == 3 => {
                let q_bits = b / 2;
                let i_bits = b - q_bits;
                let (mi, mq) = (1usize << i_bits, 1usize << q_bits);
                let pts = (0..1usize << b)
                    .map(|label| {
                        let ci = label >> q_bits;
                        let cq = label & (mq - 1);
                        Complex64::new(pam_level(ci, mi), pam_level(cq, mq))
                    })
                    .collect();
                (pts, Layout::Grid { i_bits, q_bits })
            }
            b => {
                let q_bits = (b - 1) / 2;
                let i_bits = b - q_bits;
                let (mi, mq) = (1usize << i_bits, 1usize << q_bits);
                let limit = (3 * mq / 2) as f64;
                let pts = (0..1usize << b)
                    .map(|label| {
                        let i = pam_level(label >> q_bits, mi);
                        let q = pam_level(label & (mq - 1), mq);
                        if i.abs() > limit {
                            Complex64::new(
                                i.signum() * (mq as f64 - q.abs()),
                                q.signum() * (i.abs() - (mq / 2) as f64),
                            )
                        } else {
                            Complex64::new(i, q)
                        }
                    })
                    .collect();
                (pts, Layout::Cross)
            }
        };
        let energy = raw.iter().map(|p: &Complex64| p.norm_sqr()).sum::<f64>() / raw.len() as f64;
        let scale = energy.sqrt().recip();
        Self {
            bits,
            points: raw.iter().map(|p| p * scale).collect(),
            scale,
            layout,
        }
    }

    pub fn get(bits: usize) -> Result<&'static Constellation> {
        static TABLES: OnceLock<Vec<Constellation>> = OnceLock::new();
        if !(1..=MAX_ORDER).contains(&bits) {
            return Err(Error::InvalidOrder(bits));
        }
        let tables = TABLES.get_or_init(|| (1..=MAX_ORDER).map(Constellation::build).collect());
        Ok(&tables[bits - 1])
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, label: usize) -> Complex64 {
        self.points[label]
    }

    /// Label of the nearest point; ties resolve to the smallest label.
    pub fn nearest(&self, z: Complex64) -> usize {
        match self.layout {
            Layout::Grid { i_bits, q_bits } => {
                let ci = pam_slice(z.re / self.scale, 1 << i_bits);
                let cq = pam_slice(z.im / self.scale, 1 << q_bits);
                (ci << q_bits) | cq
            }
            Layout::Cross => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (label, p) in self.points.iter().enumerate() {
                    let d = (z - p).norm_sqr();
                    if d < best_d {
                        best_d = d;
                        best = label;
                    }
                }
                best
            }
        }
    }
}

/// Packs MSB-first bits into a label.
pub fn bits_to_label(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | (b & 1) as usize)
}

pub fn label_to_bits(label: usize, b: usize, out: &mut Vec<u8>) {
    for k in (0..b).rev() {
        out.push(((label >> k) & 1) as u8);
    }
}

/// Maps a group of `b` bits onto the unit-energy `2^b` constellation.
pub fn qam_map(bit_group: &[u8], b: usize) -> Result<Complex64> {
    let c = Constellation::get(b)?;
    if bit_group.len() != b {
        return Err(Error::LengthMismatch {
            what: "bit group",
            expected: b,
            actual: bit_group.len(),
        });
    }
    Ok(c.point(bits_to_label(bit_group)))
}

/// Hard-decision demapping to the nearest point's bit group.
pub fn qam_demap(point: Complex64, b: usize) -> Result<Vec<u8>> {
    let c = Constellation::get(b)?;
    let mut out = Vec::with_capacity(b);
    label_to_bits(c.nearest(point), b, &mut out);
    Ok(out)
}
