//! Static SVG line plots of sweep results: x = sweep value, y = mean ICL
//! error over runs, error bars = across-run standard deviation, one series
//! per model. Output depends only on the input rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use icl_core::stats;

use crate::error::{LabError, Result};
use crate::io::CsvRow;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const LOG_Y_RATIO: f64 = 100.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPoint {
    pub x: f64,
    pub mean: f64,
    pub std: f64,
}

/// Per-model points in sweep-value order; models keep first-appearance order.
pub fn series(rows: &[CsvRow]) -> Vec<(String, Vec<SeriesPoint>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, u64), (f64, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let idx = match order.iter().position(|m| *m == r.model) {
            Some(i) => i,
            None => {
                order.push(r.model.clone());
                order.len() - 1
            }
        };
        groups
            .entry((idx, ordered_bits(r.sweep_value)))
            .or_insert_with(|| (r.sweep_value, Vec::new()))
            .1
            .push(r.icl_error);
    }
    order
        .into_iter()
        .enumerate()
        .map(|(i, model)| {
            let pts = groups
                .range((i, 0)..=(i, u64::MAX))
                .map(|(_, (x, errs))| SeriesPoint {
                    x: *x,
                    mean: stats::mean(errs),
                    std: stats::sample_std(errs),
                })
                .collect();
            (model, pts)
        })
        .collect()
}

/// Bit pattern that sorts like the float.
fn ordered_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
    from: f64,
    to: f64,
}

impl Axis {
    fn map(&self, v: f64) -> f64 {
        let (v, lo, hi) = if self.log {
            (v.log10(), self.lo.log10(), self.hi.log10())
        } else {
            (v, self.lo, self.hi)
        };
        let span = if hi > lo { hi - lo } else { 1.0 };
        self.from + (v - lo) / span * (self.to - self.from)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.log10().floor() as i32, self.hi.log10().ceil() as i32);
            return (a..=b)
                .map(|e| 10f64.powi(e))
                .filter(|v| *v >= self.lo * (1.0 - 1e-9) && *v <= self.hi * (1.0 + 1e-9))
                .collect();
        }
        let span = (self.hi - self.lo).max(f64::MIN_POSITIVE);
        let raw = span / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| span / s <= 6.0)
            .unwrap_or(10.0 * mag);
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi + step * 1e-9 {
            out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
            t += step;
        }
        out
    }
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{}", v.log10().round() as i32)
    } else if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the rows of one sweep CSV. Fails on empty input, mixed sweep
/// parameters, or non-positive values on a log axis.
pub fn render_svg(rows: &[CsvRow]) -> Result<String> {
    let first = rows
        .first()
        .ok_or_else(|| LabError::Invalid("no data rows to plot".into()))?;
    let param = first.sweep_param;
    if rows.iter().any(|r| r.sweep_param != param) {
        return Err(LabError::Invalid("rows mix several sweep parameters".into()));
    }
    let log = param.is_logarithmic();
    if log && rows.iter().any(|r| r.sweep_value <= 0.0) {
        return Err(LabError::Invalid(format!(
            "{param} values must be positive on a log axis"
        )));
    }
    let data = series(rows);
    let xs = data.iter().flat_map(|(_, p)| p.iter().map(|q| q.x));
    let (xlo, xhi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
        (a.min(x), b.max(x))
    });
    let means = data.iter().flat_map(|(_, p)| p.iter().map(|q| q.mean));
    let (mlo, mhi) = means.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| {
        (a.min(y), b.max(y))
    });
    // Interpolation peaks dwarf the rest of a curve; switch to a log y axis
    // once the means span more than two decades.
    let log_y = mlo > 0.0 && mhi / mlo > LOG_Y_RATIO;
    let ys = data
        .iter()
        .flat_map(|(_, p)| p.iter().flat_map(|q| [q.mean - q.std, q.mean + q.std]));
    let (ylo, yhi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| {
        (a.min(y), b.max(y))
    });
    if !(xlo.is_finite() && xhi.is_finite() && ylo.is_finite() && yhi.is_finite()) {
        return Err(LabError::Invalid("non-finite values in plot data".into()));
    }
    let xa = Axis {
        lo: xlo,
        hi: xhi,
        log,
        from: LEFT,
        to: WIDTH - RIGHT,
    };
    let ya = if log_y {
        Axis {
            lo: mlo / 2.0,
            hi: yhi * 1.5,
            log: true,
            from: HEIGHT - BOTTOM,
            to: TOP,
        }
    } else {
        let pad = if yhi > ylo {
            0.05 * (yhi - ylo)
        } else {
            0.5 * yhi.abs().max(1.0)
        };
        Axis {
            lo: if ylo >= 0.0 {
                (ylo - pad).max(0.0)
            } else {
                ylo - pad
            },
            hi: yhi + pad,
            log: false,
            from: HEIGHT - BOTTOM,
            to: TOP,
        }
    };
    let ymap = |v: f64| ya.map(v.max(ya.lo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        s,
        r#"<g id="x-axis" data-scale="{}">"#,
        if log { "log" } else { "linear" }
    );
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#
    );
    for t in xa.ticks() {
        let x = xa.map(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 20.0,
            tick_label(t, log)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{param}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<g id="y-axis" data-scale="{}">"#,
        if log_y { "log" } else { "linear" }
    );
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#
    );
    for t in ya.ticks() {
        let y = ya.map(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            y + 4.0,
            tick_label(t, log_y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">ICL error</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let _ = writeln!(s, "</g>");

    for (i, (model, pts)) in data.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(s, r#"<g class="series" data-model="{}">"#, escape(model));
        let vertices: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.2},{:.2}", xa.map(p.x), ymap(p.mean)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            vertices.join(" ")
        );
        for p in pts {
            let (x, lo, hi) = (xa.map(p.x), ymap(p.mean - p.std), ymap(p.mean + p.std));
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{lo:.2}" x2="{x:.2}" y2="{hi:.2}" stroke="{color}"/>"#
            );
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                ymap(p.mean)
            );
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(model)
        );
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::SweepParam;
    use crate::ridge::SolverPath;

    fn row(param: SweepParam, x: f64, model: &str, run: usize, err: f64) -> CsvRow {
        CsvRow {
            sweep_param: param,
            sweep_value: x,
            model: model.into(),
            run_index: run,
            icl_error: err,
            stderr: 0.01,
            null_risk: 0.5,
            solver_path: SolverPath::Primal,
            wall_time_seconds: None,
        }
    }

    #[test]
    fn one_series_two_vertices() {
        let rows = [
            row(SweepParam::N, 10.0, "linear", 0, 0.3),
            row(SweepParam::N, 20.0, "linear", 0, 0.2),
        ];
        let svg = render_svg(&rows).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 2);
        assert!(svg.contains(r#"id="x-axis" data-scale="linear""#));
        assert_eq!(svg, render_svg(&rows).unwrap());
    }

    #[test]
    fn lambda_axis_is_logarithmic() {
        let rows: Vec<CsvRow> = [1e-8, 1e-4, 1e-1]
            .iter()
            .map(|&l| row(SweepParam::Lambda, l, "mlp_relu", 0, 1.0 + l))
            .collect();
        let svg = render_svg(&rows).unwrap();
        assert!(svg.contains(r#"data-scale="log""#));
        assert!(svg.contains(">1e-8<"));
        // Log spacing: 1e-4 sits at 4/7 of the way from 1e-8 to 1e-1.
        let xs: Vec<f64> = svg
            .lines()
            .filter(|l| l.starts_with("<circle"))
            .map(|l| {
                l.split("cx=\"")
                    .nth(1)
                    .unwrap()
                    .split('"')
                    .next()
                    .unwrap()
                    .parse()
                    .unwrap()
            })
            .collect();
        let frac = (xs[1] - xs[0]) / (xs[2] - xs[0]);
        assert!((frac - 4.0 / 7.0).abs() < 1e-3);
    }

    #[test]
    fn aggregates_runs_per_point() {
        let rows = [
            row(SweepParam::M, 5.0, "a", 0, 0.2),
            row(SweepParam::M, 5.0, "a", 1, 0.4),
            row(SweepParam::M, 5.0, "b", 0, 1.0),
        ];
        let s = series(&rows);
        assert_eq!(s.len(), 2);
        assert!((s[0].1[0].mean - 0.3).abs() < 1e-15);
        assert!((s[0].1[0].std - 0.1 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s[1].1[0].std, 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(render_svg(&[]).is_err());
        let mixed = [
            row(SweepParam::N, 1.0, "a", 0, 0.1),
            row(SweepParam::M, 1.0, "a", 0, 0.1),
        ];
        assert!(render_svg(&mixed).is_err());
        assert!(render_svg(&[row(SweepParam::Lambda, 0.0, "a", 0, 0.1)]).is_err());
    }

    #[test]
    fn peaked_curves_get_a_log_y_axis() {
        let rows: Vec<CsvRow> = [(1.0, 0.5), (2.0, 1.0e4), (3.0, 0.6)]
            .iter()
            .map(|&(x, e)| row(SweepParam::M, x, "mlp_relu", 0, e))
            .collect();
        let svg = render_svg(&rows).unwrap();
        assert!(svg.contains(r#"id="y-axis" data-scale="log""#));
        assert!(render_svg(&rows[..1])
            .unwrap()
            .contains(r#"id="y-axis" data-scale="linear""#));
    }

    #[test]
    fn labels_are_escaped() {
        let svg = render_svg(&[row(SweepParam::N, 1.0, "a<b", 0, 0.1)]).unwrap();
        assert!(svg.contains("a&lt;b"));
    }
}
