//! Static SVG figures of simulated trajectories.

use std::fmt::Write as _;

use crate::rollout::RolloutBatch;

pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
}

/// Circle drawn in data coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Circle {
    pub center: (f64, f64),
    pub radius: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub circles: Vec<Circle>,
    /// Use the same scale on both axes.
    pub equal_aspect: bool,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

fn bounds(fig: &Figure) -> ((f64, f64), (f64, f64)) {
    let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
    let mut yr = xr;
    let mut grow = |x: f64, y: f64| {
        if x.is_finite() && y.is_finite() {
            xr = (xr.0.min(x), xr.1.max(x));
            yr = (yr.0.min(y), yr.1.max(y));
        }
    };
    for s in &fig.series {
        for &(x, y) in &s.points {
            grow(x, y);
        }
    }
    for c in &fig.circles {
        grow(c.center.0 - c.radius, c.center.1 - c.radius);
        grow(c.center.0 + c.radius, c.center.1 + c.radius);
    }
    if !xr.0.is_finite() {
        return ((0.0, 1.0), (0.0, 1.0));
    }
    let pad = |(lo, hi): (f64, f64)| {
        let w = (hi - lo).max(1e-9);
        (lo - 0.05 * w, hi + 0.05 * w)
    };
    let (mut xr, mut yr) = (pad(xr), pad(yr));
    if fig.equal_aspect {
        let w = (xr.1 - xr.0).max(yr.1 - yr.0);
        let cx = 0.5 * (xr.0 + xr.1);
        let cy = 0.5 * (yr.0 + yr.1);
        xr = (cx - 0.5 * w, cx + 0.5 * w);
        yr = (cy - 0.5 * w, cy + 0.5 * w);
    }
    (xr, yr)
}

impl Figure {
    pub fn to_svg(&self) -> String {
        let ((x0, x1), (y0, y1)) = bounds(self);
        let (pw, ph) = if self.equal_aspect {
            let side = (WIDTH - 2.0 * MARGIN).min(HEIGHT - 2.0 * MARGIN);
            (side, side)
        } else {
            (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN)
        };
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            MARGIN + 0.5 * pw,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.2}</text>"#,
                sx(xv),
                MARGIN + ph + 16.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.2}</text>"#,
                MARGIN - 6.0,
                sy(yv) + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN + 0.5 * pw,
            MARGIN + ph + 36.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            MARGIN + 0.5 * ph,
            MARGIN + 0.5 * ph,
            escape(&self.y_label)
        );
        for c in &self.circles {
            let rx = c.radius / (x1 - x0) * pw;
            let ry = c.radius / (y1 - y0) * ph;
            let _ = writeln!(
                s,
                r##"<ellipse cx="{:.2}" cy="{:.2}" rx="{rx:.2}" ry="{ry:.2}" fill="#cccccc" fill-opacity="0.5" stroke="black"/>"##,
                sx(c.center.0),
                sy(c.center.1)
            );
        }
        for series in &self.series {
            let pts: Vec<String> = series
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
                series.color,
                pts.join(" "),
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// First position coordinate of every player against time, for sample `m`.
pub fn time_series(batch: &RolloutBatch, m: usize, colors: &[String]) -> Vec<Series> {
    (0..batch.players)
        .map(|i| Series {
            label: format!("vehicle {i}"),
            color: colors[i % colors.len()].clone(),
            points: (0..=batch.steps)
                .map(|l| (batch.times[l], batch.state(m, i, l)[0]))
                .collect(),
        })
        .collect()
}

/// Planar paths `(x_0, x_1)` of every player for sample `m`.
pub fn planar_paths(batch: &RolloutBatch, m: usize, colors: &[String]) -> Vec<Series> {
    (0..batch.players)
        .map(|i| Series {
            label: format!("vehicle {i}"),
            color: colors[i % colors.len()].clone(),
            points: (0..=batch.steps)
                .map(|l| {
                    let x = batch.state(m, i, l);
                    (x[0], x[1])
                })
                .collect(),
        })
        .collect()
}

/// One palette color per player.
pub fn player_colors(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| PALETTE[i % PALETTE.len()].to_string())
        .collect()
}

/// Colors by group index.
pub fn group_colors(groups: &[usize]) -> Vec<String> {
    groups
        .iter()
        .map(|&g| PALETTE[g % PALETTE.len()].to_string())
        .collect()
}
