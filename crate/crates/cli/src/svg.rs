//! Standalone SVG line plots. Plots are a convenience; the CSV is the contract.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum YScale {
    Linear,
    /// Base-10 logarithmic; values at or below `floor` are drawn at `floor`.
    Log { floor: f64 },
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub y_scale: YScale,
    pub series: Vec<Series>,
    /// Dashed horizontal reference line with its label.
    pub reference: Option<(f64, String)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Axis range padded to at least a nonzero width.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// About five round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn label(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

impl Plot {
    fn y_value(&self, y: f64) -> f64 {
        match self.y_scale {
            YScale::Linear => y,
            YScale::Log { floor } => y.max(floor).log10(),
        }
    }

    pub fn render(&self) -> String {
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = range(all().map(|p| p.0));
        let (mut y0, mut y1) = range(all().map(|p| self.y_value(p.1)).chain(self.reference.as_ref().map(|r| self.y_value(r.0))));
        if let YScale::Log { .. } = self.y_scale {
            y0 = y0.floor();
            y1 = y1.ceil().max(y0 + 1.0);
        }
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );

        for t in ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/>"##, TOP + ph);
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, label(t));
        }
        let y_ticks: Vec<f64> = match self.y_scale {
            YScale::Linear => ticks(y0, y1),
            YScale::Log { .. } => (y0 as i64..=y1 as i64).map(|k| k as f64).collect(),
        };
        for t in y_ticks {
            let y = sy(t);
            let text = match self.y_scale {
                YScale::Linear => label(t),
                YScale::Log { .. } => format!("1e{}", t as i64),
            };
            let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, LEFT + pw);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{text}</text>"#, LEFT - 6.0, y + 4.0);
        }
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(20 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        if let Some((v, name)) = &self.reference {
            let y = sy(self.y_value(*v));
            let _ = writeln!(
                s,
                r#"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="black" stroke-dasharray="6 4"/>"#,
                LEFT + pw
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, LEFT + pw + 8.0, y + 4.0, escape(name));
        }

        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = series
                .points
                .iter()
                .filter(|p| p.0.is_finite() && self.y_value(p.1).is_finite())
                .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(self.y_value(y))))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
            for p in &pts {
                let (x, y) = p.split_once(',').expect("formatted pair");
                let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
            }
            let ly = TOP + 16.0 + 18.0 * i as f64;
            let lx = LEFT + pw + 8.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
                lx + 20.0
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&series.name));
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plot(scale: YScale) -> Plot {
        Plot {
            title: "BER vs OSNR".into(),
            x_label: "OSNR (dB)".into(),
            y_label: "BER".into(),
            y_scale: scale,
            series: vec![
                Series {
                    name: "a".into(),
                    points: vec![(20.0, 1e-2), (30.0, 1e-4), (40.0, 0.0)],
                },
                Series {
                    name: "b<c".into(),
                    points: vec![(20.0, 2e-2), (30.0, 1e-3)],
                },
            ],
            reference: Some((4e-3, "FEC".into())),
        }
    }

    #[test]
    fn one_polyline_per_series_and_escaped_labels() {
        let svg = plot(YScale::Log { floor: 1e-7 }).render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;c"));
        assert!(svg.contains("1e-7"));
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn ticks_are_round_and_inside() {
        let t = ticks(0.0, 25.0);
        assert_eq!(t, vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0]);
        assert!(ticks(-3.2, 7.9).iter().all(|&v| (-3.2..=7.9).contains(&v)));
    }

    #[test]
    fn flat_data_still_renders() {
        let p = Plot {
            series: vec![Series {
                name: "x".into(),
                points: vec![(1.0, 2.0)],
            }],
            reference: None,
            ..plot(YScale::Linear)
        };
        let svg = p.render();
        assert!(!svg.contains("NaN"));
    }
}
