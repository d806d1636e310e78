//! Static SVG emission, no plotting dependency. Output is a pure function
//! of the input rows, so regenerated figures are byte-identical.

use std::fmt::Write as _;

use crate::experiment::{AmariRow, DelayScatterRow};
use crate::HarnessError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 58.0;

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Axis {
    lo: f64,
    hi: f64,
    offset: f64,
    span: f64,
    flip: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, offset: f64, span: f64, flip: bool) -> Axis {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-12 {
            lo -= 1.0;
            hi += 1.0;
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Axis {
            lo,
            hi,
            offset,
            span,
            flip,
        }
    }

    fn place(&self, v: f64) -> f64 {
        let t = (v - self.lo) / (self.hi - self.lo);
        let t = if self.flip { 1.0 - t } else { t };
        self.offset + t * self.span
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=4)
            .map(|k| self.lo + k as f64 * (self.hi - self.lo) / 4.0)
            .collect()
    }
}

fn tick_label(v: f64) -> String {
    if v == v.round() && v.abs() < 1e12 {
        format!("{:.0}", v)
    } else {
        format!("{:.3}", v)
    }
}

fn open_svg(out: &mut String) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" \
         viewBox=\"0 0 {w:.0} {h:.0}\" font-family=\"sans-serif\" font-size=\"13\">\n\
         <rect width=\"{w:.0}\" height=\"{h:.0}\" fill=\"white\"/>\n",
        w = WIDTH,
        h = HEIGHT
    );
}

fn draw_axes(out: &mut String, x: &Axis, y: &Axis, x_label: &str, y_label: &str) {
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    let _ = write!(
        out,
        "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"black\"/>\n\
         <line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\" stroke=\"black\"/>\n"
    );
    for t in x.ticks() {
        let px = x.place(t);
        let _ = write!(
            out,
            "<line x1=\"{px:.2}\" y1=\"{y0:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n\
             <text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 5.0,
            y0 + 20.0,
            tick_label(t)
        );
    }
    for t in y.ticks() {
        let py = y.place(t);
        let _ = write!(
            out,
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{x0:.2}\" y2=\"{py:.2}\" stroke=\"black\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            x0 - 5.0,
            x0 - 9.0,
            py + 4.0,
            tick_label(t)
        );
    }
    let _ = write!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 14.0,
        x_label,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        y_label
    );
}

/// Mean score per (algorithm, level), algorithms in first-appearance order,
/// levels ascending. Rows with the error column set are skipped.
pub fn aggregate_lines(rows: &[AmariRow]) -> Vec<(String, Vec<(i64, f64)>)> {
    let mut algorithms: Vec<String> = Vec::new();
    for r in rows {
        if r.error.is_none() && !algorithms.contains(&r.algorithm) {
            algorithms.push(r.algorithm.clone());
        }
    }
    let mut series = Vec::new();
    for algo in algorithms {
        let mut levels: Vec<i64> = rows
            .iter()
            .filter(|r| r.algorithm == algo && r.error.is_none())
            .map(|r| r.delay_level)
            .collect();
        levels.sort_unstable();
        levels.dedup();
        let points: Vec<(i64, f64)> = levels
            .into_iter()
            .map(|level| {
                let scores: Vec<f64> = rows
                    .iter()
                    .filter(|r| {
                        r.algorithm == algo && r.delay_level == level && r.error.is_none()
                    })
                    .map(|r| r.amari_mean)
                    .collect();
                (level, scores.iter().sum::<f64>() / scores.len() as f64)
            })
            .collect();
        series.push((algo, points));
    }
    series
}

/// Mean Amari distance against delay level, one polyline per algorithm.
pub fn line_plot_svg(rows: &[AmariRow]) -> Result<String, HarnessError> {
    let series = aggregate_lines(rows);
    if series.is_empty() || series.iter().all(|(_, pts)| pts.is_empty()) {
        return Err(HarnessError::Plot("no rows to plot".into()));
    }
    let xs = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|&(level, _)| level as f64));
    let ys = series.iter().flat_map(|(_, pts)| pts.iter().map(|&(_, v)| v));
    let x = Axis::new(xs, MARGIN_L, WIDTH - MARGIN_L - MARGIN_R, false);
    let y = Axis::new(ys, MARGIN_T, HEIGHT - MARGIN_T - MARGIN_B, true);

    let mut out = String::new();
    open_svg(&mut out);
    draw_axes(&mut out, &x, &y, "delay level", "mean Amari distance");
    for (s, (algo, points)) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let coords: Vec<String> = points
            .iter()
            .map(|&(level, v)| format!("{:.2},{:.2}", x.place(level as f64), y.place(v)))
            .collect();
        let _ = write!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            coords.join(" "),
            color
        );
        for &(level, v) in points {
            let _ = write!(
                out,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
                x.place(level as f64),
                y.place(v),
                color
            );
        }
        let ly = MARGIN_T + 16.0 + 18.0 * s as f64;
        let _ = write!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"14\" height=\"4\" fill=\"{}\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
            WIDTH - MARGIN_R - 120.0,
            ly - 4.0,
            color,
            WIDTH - MARGIN_R - 100.0,
            ly + 2.0,
            algo
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn least_squares(rows: &[DelayScatterRow]) -> Option<(f64, f64)> {
    let n = rows.len() as f64;
    let mx = rows.iter().map(|r| r.true_delay_centered).sum::<f64>() / n;
    let my = rows.iter().map(|r| r.est_delay_centered).sum::<f64>() / n;
    let sxx: f64 = rows
        .iter()
        .map(|r| (r.true_delay_centered - mx).powi(2))
        .sum();
    if sxx < 1e-12 {
        return None;
    }
    let sxy: f64 = rows
        .iter()
        .map(|r| (r.true_delay_centered - mx) * (r.est_delay_centered - my))
        .sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Estimated against true delays, one point per pair, with the fitted line
/// when the truth has any spread.
pub fn scatter_plot_svg(rows: &[DelayScatterRow]) -> Result<String, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Plot("no rows to plot".into()));
    }
    let x = Axis::new(
        rows.iter().map(|r| r.true_delay_centered),
        MARGIN_L,
        WIDTH - MARGIN_L - MARGIN_R,
        false,
    );
    let y = Axis::new(
        rows.iter().map(|r| r.est_delay_centered),
        MARGIN_T,
        HEIGHT - MARGIN_T - MARGIN_B,
        true,
    );
    let mut out = String::new();
    open_svg(&mut out);
    draw_axes(
        &mut out,
        &x,
        &y,
        "true delay (centered)",
        "estimated delay (centered)",
    );
    if let Some((slope, intercept)) = least_squares(rows) {
        let _ = write!(
            out,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
             stroke=\"{}\" stroke-width=\"2\" stroke-dasharray=\"6 4\"/>\n",
            x.place(x.lo),
            y.place(slope * x.lo + intercept),
            x.place(x.hi),
            y.place(slope * x.hi + intercept),
            PALETTE[1]
        );
    }
    for r in rows {
        let _ = write!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.55\"/>\n",
            x.place(r.true_delay_centered),
            y.place(r.est_delay_centered),
            PALETTE[0]
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(level: i64, seed: u64, algo: &str, v: f64) -> AmariRow {
        AmariRow {
            delay_level: level,
            seed,
            algorithm: algo.into(),
            amari_mean: v,
            sweeps: 1,
            wall_time_s: 0.1,
            error: None,
        }
    }

    #[test]
    fn line_plot_has_one_polyline_per_algorithm() {
        let rows = vec![
            row(0, 1, "mvicad", 0.2),
            row(0, 1, "mvica", 0.2),
            row(10, 1, "mvicad", 0.3),
            row(10, 1, "mvica", 0.6),
        ];
        let svg = line_plot_svg(&rows).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("mean Amari distance"));
        assert!(svg.contains("delay level"));
    }

    #[test]
    fn aggregation_averages_over_seeds_and_skips_failures() {
        let mut rows = vec![
            row(0, 1, "mvicad", 0.2),
            row(0, 2, "mvicad", 0.4),
            row(0, 3, "mvicad", 9.0),
        ];
        rows[2].error = Some("boom".into());
        rows[2].amari_mean = f64::NAN;
        let series = aggregate_lines(&rows);
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].1, vec![(0, 0.30000000000000004)]);
    }

    #[test]
    fn scatter_plot_emits_every_point_and_a_fit_line() {
        let rows: Vec<DelayScatterRow> = (0..20)
            .map(|k| DelayScatterRow {
                view: k % 4,
                source: k / 4,
                true_delay_centered: k as f64 - 10.0,
                est_delay_centered: 0.9 * (k as f64 - 10.0) + 0.3,
            })
            .collect();
        let svg = scatter_plot_svg(&rows).unwrap();
        assert_eq!(svg.matches("<circle").count(), 20);
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
    }

    #[test]
    fn identical_input_gives_identical_bytes() {
        let rows = vec![row(0, 1, "mvicad", 0.25), row(10, 1, "mvicad", 0.5)];
        assert_eq!(line_plot_svg(&rows).unwrap(), line_plot_svg(&rows).unwrap());
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(line_plot_svg(&[]).is_err());
        assert!(scatter_plot_svg(&[]).is_err());
    }

    #[test]
    fn degenerate_scatter_still_renders_points() {
        let rows = vec![
            DelayScatterRow {
                view: 0,
                source: 0,
                true_delay_centered: 0.0,
                est_delay_centered: 0.0,
            };
            4
        ];
        let svg = scatter_plot_svg(&rows).unwrap();
        assert_eq!(svg.matches("<circle").count(), 4);
        assert_eq!(svg.matches("stroke-dasharray").count(), 0);
    }
}
