//! Standalone SVG renderings of result files.
//!
//! Contour plots fill the grid with the empirical gap when every point has
//! one (the predicted gap otherwise), banded at eight equal steps between
//! `−M` and `M` where `M` is the largest absolute value. Predicted contours
//! at the same nonzero levels are dashed; the predicted zero level is solid.

use std::collections::BTreeMap;
use std::fmt::Write;

use w2s_core::experiments::{ExperimentKind, ResultRecord};

const WIDTH: f64 = 680.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const BANDS: usize = 8;

const DIVERGING: [&str; BANDS] = [
    "#2166ac", "#4393c3", "#92c5de", "#d1e5f0", "#fddbc7", "#f4a582", "#d6604d", "#b2182b",
];
const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
    pixel_lo: f64,
    pixel_hi: f64,
}

impl Axis {
    fn new(
        values: impl Iterator<Item = f64>,
        log: bool,
        pixel_lo: f64,
        pixel_hi: f64,
        pad: f64,
    ) -> Option<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return None;
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let extra = pad * (hi - lo);
        Some(Axis {
            lo: lo - extra,
            hi: hi + extra,
            log,
            pixel_lo,
            pixel_hi,
        })
    }

    fn map(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        self.pixel_lo + (v - self.lo) / (self.hi - self.lo) * (self.pixel_hi - self.pixel_lo)
    }

    fn contains(&self, v: f64) -> bool {
        let v = if self.log { v.log10() } else { v };
        v >= self.lo && v <= self.hi
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            (self.lo.ceil() as i32..=self.hi.floor() as i32)
                .map(|k| (10f64.powi(k), format!("1e{k}")))
                .collect()
        } else {
            (0..=4)
                .map(|i| {
                    let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                    (v, format!("{v:.3}"))
                })
                .collect()
        }
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn axes(out: &mut String, x: &Axis, y: &Axis, x_label: &str, y_label: &str) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    for (v, label) in x.ticks() {
        let px = x.map(v);
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            y0 + 18.0
        );
    }
    for (v, label) in y.ticks() {
        let py = y.map(v);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
            x0 - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 18.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn sorted_unique(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn index_of(axis: &[f64], v: f64) -> usize {
    axis.binary_search_by(|a| a.total_cmp(&v))
        .expect("value taken from the same records")
}

type Field = Vec<Vec<Option<f64>>>;

/// Segments of the `level` set of a vertex field by marching squares, in
/// pixel coordinates.
fn level_segments(
    field: &Field,
    xs: &[f64],
    ys: &[f64],
    x: &Axis,
    y: &Axis,
    level: f64,
) -> Vec<[(f64, f64); 2]> {
    let mut segments = Vec::new();
    for i in 0..xs.len().saturating_sub(1) {
        for j in 0..ys.len().saturating_sub(1) {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let Some(vals) = corners
                .iter()
                .map(|&(a, b)| field[a][b].map(|v| v - level))
                .collect::<Option<Vec<f64>>>()
            else {
                continue;
            };
            let mut points = Vec::new();
            for e in 0..4 {
                let (a, b) = (e, (e + 1) % 4);
                let (va, vb) = (vals[a], vals[b]);
                if (va < 0.0) != (vb < 0.0) {
                    let t = va / (va - vb);
                    let (ia, ja) = corners[a];
                    let (ib, jb) = corners[b];
                    let px = x.map(xs[ia]) + t * (x.map(xs[ib]) - x.map(xs[ia]));
                    let py = y.map(ys[ja]) + t * (y.map(ys[jb]) - y.map(ys[ja]));
                    points.push((px, py));
                }
            }
            match points.len() {
                2 => segments.push([points[0], points[1]]),
                4 => {
                    let center = vals.iter().sum::<f64>() / 4.0;
                    if (center < 0.0) == (vals[0] < 0.0) {
                        segments.push([points[0], points[1]]);
                        segments.push([points[2], points[3]]);
                    } else {
                        segments.push([points[3], points[0]]);
                        segments.push([points[1], points[2]]);
                    }
                }
                _ => {}
            }
        }
    }
    segments
}

fn path_data(segments: &[[(f64, f64); 2]]) -> String {
    let mut d = String::new();
    for [a, b] in segments {
        let _ = write!(d, "M{:.2} {:.2}L{:.2} {:.2}", a.0, a.1, b.0, b.1);
    }
    d
}

fn band(v: f64, max: f64) -> usize {
    let step = 2.0 * max / BANDS as f64;
    (((v + max) / step).floor().max(0.0) as usize).min(BANDS - 1)
}

/// Gap field over `(λ_t, λ_s)` for the first experiment/`ζ` group.
pub fn contour(records: &[ResultRecord]) -> Result<String, String> {
    let first = records.first().ok_or("no records to plot")?;
    let group: Vec<&ResultRecord> = records
        .iter()
        .filter(|r| {
            r.experiment == first.experiment && r.zeta == first.zeta && r.gamma_t == first.gamma_t
        })
        .collect();
    let xs = sorted_unique(group.iter().map(|r| r.lambda_t));
    let ys = sorted_unique(group.iter().map(|r| r.lambda_s));
    if xs.len() < 2 || ys.len() < 2 || xs.iter().chain(&ys).any(|v| *v <= 0.0) {
        return Err("contour plots need at least a 2×2 grid of positive λ_t and λ_s".into());
    }
    let mut emp: Field = vec![vec![None; ys.len()]; xs.len()];
    let mut theory: Field = vec![vec![None; ys.len()]; xs.len()];
    for r in &group {
        let (i, j) = (index_of(&xs, r.lambda_t), index_of(&ys, r.lambda_s));
        emp[i][j] = r.gap_emp_mean();
        theory[i][j] = r.gap_theory;
    }
    let emp_complete = emp.iter().flatten().all(Option::is_some);
    let filled = if emp_complete { &emp } else { &theory };
    let max = filled
        .iter()
        .flatten()
        .flatten()
        .fold(0f64, |m, v| m.max(v.abs()));
    let max = if max > 0.0 { max } else { 1.0 };

    let x =
        Axis::new(xs.iter().copied(), true, LEFT, WIDTH - RIGHT, 0.0).ok_or("empty λ_t axis")?;
    let y =
        Axis::new(ys.iter().copied(), true, HEIGHT - BOTTOM, TOP, 0.0).ok_or("empty λ_s axis")?;
    let mut out = String::new();
    let source = if emp_complete {
        "simulated"
    } else {
        "predicted"
    };
    header(
        &mut out,
        &format!("{}: {source} L_s − L_t", first.experiment),
    );

    // Cells span the midpoints between neighbouring grid values.
    let edges = |v: &[f64], k: usize| -> (f64, f64) {
        let lo = if k == 0 {
            v[0]
        } else {
            (v[k - 1] * v[k]).sqrt()
        };
        let hi = if k + 1 == v.len() {
            v[k]
        } else {
            (v[k] * v[k + 1]).sqrt()
        };
        (lo, hi)
    };
    let _ = writeln!(out, r#"<g class="filled">"#);
    for (i, col) in filled.iter().enumerate() {
        for (j, v) in col.iter().enumerate() {
            let Some(v) = v else { continue };
            let (xl, xh) = edges(&xs, i);
            let (yl, yh) = edges(&ys, j);
            let (px0, px1) = (x.map(xl), x.map(xh));
            let (py0, py1) = (y.map(yh), y.map(yl));
            let _ = writeln!(
                out,
                r#"<rect x="{px0:.2}" y="{py0:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                px1 - px0,
                py1 - py0,
                DIVERGING[band(*v, max)]
            );
        }
    }
    let _ = writeln!(out, "</g>");

    let lines_from = if theory.iter().flatten().all(Option::is_some) {
        &theory
    } else {
        filled
    };
    let step = 2.0 * max / BANDS as f64;
    for k in 1..BANDS {
        let level = -max + k as f64 * step;
        if (k as isize - (BANDS / 2) as isize) == 0 {
            continue;
        }
        let segs = level_segments(lines_from, &xs, &ys, &x, &y, level);
        if !segs.is_empty() {
            let _ = writeln!(
                out,
                r#"<path class="theory-level" data-level="{level:.6e}" d="{}" fill="none" stroke="firebrick" stroke-width="1.2" stroke-dasharray="6 4"/>"#,
                path_data(&segs)
            );
        }
    }
    let zero = level_segments(lines_from, &xs, &ys, &x, &y, 0.0);
    let _ = writeln!(
        out,
        r#"<path class="zero-level" d="{}" fill="none" stroke="black" stroke-width="2"/>"#,
        path_data(&zero)
    );

    let star = first.sigma_eps * first.sigma_eps * first.gamma_t;
    if star > 0.0 && x.contains(star) {
        let px = x.map(star);
        let _ = writeln!(
            out,
            r#"<line class="lambda-t-star" data-lambda="{star}" x1="{px:.2}" y1="{TOP:.2}" x2="{px:.2}" y2="{:.2}" stroke="black" stroke-width="1.5" stroke-dasharray="8 5"/>"#,
            HEIGHT - BOTTOM
        );
    }

    let lx = WIDTH - RIGHT + 20.0;
    for (b, color) in DIVERGING.iter().enumerate() {
        let ly = TOP + 20.0 * (BANDS - 1 - b) as f64;
        let lo = -max + b as f64 * step;
        let _ = writeln!(
            out,
            r#"<rect x="{lx:.2}" y="{ly:.2}" width="16" height="20" fill="{color}"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}">{lo:.3}</text>"#,
            lx + 22.0,
            ly + 24.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}">{:.3}</text>"#,
        lx + 22.0,
        TOP + 4.0,
        max
    );
    axes(&mut out, &x, &y, "lambda_t", "lambda_s");
    out.push_str("</svg>\n");
    Ok(out)
}

/// Student risk against `λ_s` (or `γ_t` for double-descent sweeps), one
/// series per `ζ`, `λ_s` or `λ_t` respectively.
pub fn curve(records: &[ResultRecord]) -> Result<String, String> {
    let first = records.first().ok_or("no records to plot")?;
    let sweep_gamma = first.kind == ExperimentKind::DoubleDescent;
    let x_of = |r: &ResultRecord| if sweep_gamma { r.gamma_t } else { r.lambda_s };
    let key_of = |r: &ResultRecord| match r.kind {
        ExperimentKind::DoubleDescent => r.lambda_s,
        ExperimentKind::ZetaSweep => r.zeta.unwrap_or(0.0),
        _ => r.lambda_t,
    };
    let series_name = match first.kind {
        ExperimentKind::DoubleDescent => "lambda_s",
        ExperimentKind::ZetaSweep => "zeta",
        _ => "lambda_t",
    };
    let mut series: BTreeMap<u64, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.experiment == first.experiment) {
        series.entry(key_of(r).to_bits()).or_default().push(r);
    }
    for s in series.values_mut() {
        s.sort_by(|a, b| x_of(a).total_cmp(&x_of(b)));
    }
    let ys = records.iter().flat_map(|r| {
        [
            r.loss_student_theory,
            r.loss_student_emp_mean,
            r.loss_teacher_theory,
        ]
    });
    let x = Axis::new(records.iter().map(x_of), true, LEFT, WIDTH - RIGHT, 0.02)
        .ok_or("no positive x values")?;
    let y = Axis::new(ys.flatten(), false, HEIGHT - BOTTOM, TOP, 0.05)
        .ok_or("no finite risk values")?;

    let mut out = String::new();
    header(&mut out, &format!("{}: student risk", first.experiment));
    let teacher_flat = !sweep_gamma && first.kind != ExperimentKind::ContourGrid;
    if let (true, Some(lt)) = (teacher_flat, first.loss_teacher_theory) {
        let py = y.map(lt);
        let _ = writeln!(
            out,
            r#"<line class="teacher-risk" x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="black" stroke-dasharray="8 5"/>"#,
            WIDTH - RIGHT
        );
    }
    for (n, (key, points)) in series.iter().enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        let theory: Vec<String> = points
            .iter()
            .filter_map(|r| {
                r.loss_student_theory
                    .map(|v| format!("{:.2},{:.2}", x.map(x_of(r)), y.map(v)))
            })
            .collect();
        if theory.len() > 1 {
            let dash = if sweep_gamma {
                ""
            } else {
                r#" stroke-dasharray="6 4""#
            };
            let _ = writeln!(
                out,
                r#"<polyline class="theory" points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                theory.join(" ")
            );
        }
        for r in points {
            if let Some(v) = r.loss_student_emp_mean {
                let _ = writeln!(
                    out,
                    r#"<circle class="simulated" cx="{:.2}" cy="{:.2}" r="3" fill="none" stroke="{color}"/>"#,
                    x.map(x_of(r)),
                    y.map(v)
                );
            }
        }
        let ly = TOP + 10.0 + 18.0 * n as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}">{series_name}={}</text>"#,
            lx + 24.0,
            ly + 4.0,
            f64::from_bits(*key)
        );
    }
    axes(
        &mut out,
        &x,
        &y,
        if sweep_gamma { "gamma_t" } else { "lambda_s" },
        "L_s",
    );
    out.push_str("</svg>\n");
    Ok(out)
}
