//! Dependency-free SVG plots: cell heatmaps, interval line plots and
//! summary whisker panels.

use smalldomain::DomainGrid;
use std::fmt::Write;

/// Nine-step sequential ramp, light to dark.
pub const RAMP: [&str; 9] = ["#ffffd9", "#edf8b1", "#c7e9b4", "#7fcdbb", "#41b6c4", "#1d91c0", "#225ea8", "#253494", "#081d58"];

const MISSING: &str = "#d9d9d9";
const SERIES: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn num(x: f64) -> String {
    let s = format!("{x:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

/// Ramp bin of `v` on `[lo, hi]`; a degenerate range maps to the middle bin.
pub fn ramp_index(v: f64, lo: f64, hi: f64) -> usize {
    let span = hi - lo;
    if !(span > 1e-9 * (1.0 + hi.abs().max(lo.abs()))) {
        return RAMP.len() / 2;
    }
    (((v - lo) / span * RAMP.len() as f64).floor().max(0.0) as usize).min(RAMP.len() - 1)
}

fn min_max(values: &[Option<f64>]) -> Option<(f64, f64)> {
    let mut it = values.iter().flatten().copied().filter(|v| v.is_finite());
    let first = it.next()?;
    Some(it.fold((first, first), |(a, b), v| (a.min(v), b.max(v))))
}

/// Heatmap with age on the vertical axis (oldest at the top), year on the
/// horizontal axis and exactly one `rect` per grid cell. Cells without a
/// value are grey. The legend is drawn with lines so that rects count cells.
pub fn heatmap(grid: &DomainGrid, values: &[Option<f64>], title: &str, unit: &str) -> String {
    assert_eq!(values.len(), grid.len(), "one value per grid cell");
    let (cw, ch) = (16.0, 9.0);
    let (left, top) = (48.0, 36.0);
    let (na, ny) = (grid.n_ages() as f64, grid.n_years() as f64);
    let plot_w = cw * ny;
    let plot_h = ch * na;
    let width = left + plot_w + 150.0;
    let height = top + plot_h + 48.0;
    let (lo, hi) = min_max(values).unwrap_or((0.0, 0.0));

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#).unwrap();
    writeln!(s, "<title>{}</title>", escape(title)).unwrap();
    writeln!(s, r#"<text x="{left}" y="20" font-size="13">{}</text>"#, escape(title)).unwrap();
    writeln!(s, r#"<g id="cells" stroke="none">"#).unwrap();
    for (i, v) in values.iter().enumerate() {
        let c = grid.cell(i);
        let x = left + cw * (c.year - grid.year_min) as f64;
        let y = top + ch * (grid.age_max - c.age) as f64;
        let fill = match v {
            Some(v) if v.is_finite() => RAMP[ramp_index(*v, lo, hi)],
            _ => MISSING,
        };
        writeln!(s, r#"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{fill}"/>"#).unwrap();
    }
    writeln!(s, "</g>").unwrap();

    // Axes.
    writeln!(s, r#"<g id="axes">"#).unwrap();
    for year in grid.years().filter(|y| (y - grid.year_min) % 5 == 0 || *y == grid.year_max) {
        let x = left + cw * ((year - grid.year_min) as f64 + 0.5);
        writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{year}</text>"#, top + plot_h + 14.0).unwrap();
    }
    for age in grid.ages().filter(|a| a % 5 == 0) {
        let y = top + ch * ((grid.age_max - age) as f64 + 0.5) + 3.0;
        writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{age}</text>"#, left - 4.0).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">year</text>"#, left + plot_w / 2.0, top + plot_h + 32.0).unwrap();
    writeln!(s, r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">age</text>"#, top + plot_h / 2.0, top + plot_h / 2.0).unwrap();
    writeln!(s, "</g>").unwrap();

    // Legend: one thick line per ramp step, ticks at every other boundary.
    let lx = left + plot_w + 24.0;
    let step_h = (plot_h / RAMP.len() as f64).min(18.0);
    writeln!(s, r#"<g id="legend">"#).unwrap();
    writeln!(s, r#"<text x="{lx}" y="{}">{}</text>"#, top - 6.0, escape(unit)).unwrap();
    for (k, color) in RAMP.iter().enumerate() {
        let y0 = top + step_h * (RAMP.len() - 1 - k) as f64;
        writeln!(s, r#"<line x1="{}" y1="{y0}" x2="{}" y2="{}" stroke="{color}" stroke-width="14"/>"#, lx + 7.0, lx + 7.0, y0 + step_h).unwrap();
    }
    let bottom = top + step_h * RAMP.len() as f64;
    for k in (0..=RAMP.len()).step_by(3) {
        let v = lo + (hi - lo) * k as f64 / RAMP.len() as f64;
        let y = bottom - step_h * k as f64;
        writeln!(s, r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="black"/>"#, lx + 14.0, lx + 18.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 21.0, y + 3.0, num(v)).unwrap();
    }
    writeln!(s, r#"<text x="{lx}" y="{}">min {}</text>"#, bottom + 16.0, num(lo)).unwrap();
    writeln!(s, r#"<text x="{lx}" y="{}">max {}</text>"#, bottom + 30.0, num(hi)).unwrap();
    writeln!(s, r##"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="{MISSING}" stroke-width="8"/><text x="{}" y="{}">no estimate</text>"##, bottom + 44.0, lx + 14.0, bottom + 44.0, lx + 18.0, bottom + 47.0).unwrap();
    writeln!(s, "</g>").unwrap();
    writeln!(s, "</svg>").unwrap();
    s
}

/// One line of an interval plot: `(x, mean, optional (lo, hi))` points.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64, Option<(f64, f64)>)>,
}

/// Mean lines with pointwise interval bands. `marker` draws a dashed
/// vertical line, e.g. at the last observed year.
pub fn interval_plot(series: &[Series], title: &str, x_label: &str, y_label: &str, marker: Option<f64>) -> String {
    let (left, top, pw, ph) = (60.0, 36.0, 420.0, 260.0);
    let width = left + pw + 120.0;
    let height = top + ph + 48.0;
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().flat_map(|p| [Some(p.1), p.2.map(|b| b.0), p.2.map(|b| b.1)]).flatten())
        .filter(|v| v.is_finite())
        .collect();
    let bounds = |v: &[f64]| -> (f64, f64) {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = bounds(&xs);
    let (y0, y1) = bounds(&ys);
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#).unwrap();
    writeln!(s, "<title>{}</title>", escape(title)).unwrap();
    writeln!(s, r#"<text x="{left}" y="20" font-size="13">{}</text>"#, escape(title)).unwrap();
    writeln!(s, r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#, top + ph, left + pw).unwrap();
    for k in 0..=4 {
        let v = y0 + (y1 - y0) * k as f64 / 4.0;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 4.0, py(v) + 3.0, num(v)).unwrap();
    }
    let span = (x1 - x0).max(1.0);
    let step = if span > 12.0 { 5.0 } else { 1.0 };
    let mut t = (x0 / step).ceil() * step;
    while t <= x1 + 1e-9 {
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, px(t), top + ph + 14.0, t).unwrap();
        t += step;
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, top + ph + 32.0, escape(x_label)).unwrap();
    writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#, top + ph / 2.0, top + ph / 2.0, escape(y_label)).unwrap();
    if let Some(m) = marker {
        writeln!(s, r#"<line x1="{}" y1="{top}" x2="{}" y2="{}" stroke="grey" stroke-dasharray="4 3"/>"#, px(m), px(m), top + ph).unwrap();
    }
    for (i, ser) in series.iter().enumerate() {
        let color = SERIES[i % SERIES.len()];
        let pts: Vec<_> = ser.points.iter().filter(|p| p.1.is_finite()).collect();
        let band: Vec<_> = pts.iter().filter_map(|p| p.2.map(|b| (p.0, b))).collect();
        if band.len() > 1 {
            let upper = band.iter().map(|(x, b)| format!("{},{}", num(px(*x)), num(py(b.1))));
            let lower = band.iter().rev().map(|(x, b)| format!("{},{}", num(px(*x)), num(py(b.0))));
            let poly: Vec<String> = upper.chain(lower).collect();
            writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, poly.join(" ")).unwrap();
        }
        let line: Vec<String> = pts.iter().map(|p| format!("{},{}", num(px(p.0)), num(py(p.1)))).collect();
        writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" ")).unwrap();
        let ly = top + 12.0 + 14.0 * i as f64;
        writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, left + pw + 12.0, left + pw + 28.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, left + pw + 32.0, ly + 3.0, escape(&ser.label)).unwrap();
    }
    writeln!(s, "</svg>").unwrap();
    s
}

/// Dot-and-whisker panel of labelled `(mean, lo, hi)` summaries.
pub fn whisker_panel(items: &[(String, f64, f64, f64)], title: &str, unit: &str) -> String {
    let (left, top, pw, row) = (180.0, 40.0, 320.0, 36.0);
    let height = top + row * items.len() as f64 + 40.0;
    let width = left + pw + 40.0;
    let lo = items.iter().map(|i| i.2).fold(0.0f64, f64::min);
    let hi = items.iter().map(|i| i.3).fold(0.0f64, f64::max);
    let (lo, hi) = if hi - lo < 1e-12 { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let px = |x: f64| left + (x - lo) / (hi - lo) * pw;

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#).unwrap();
    writeln!(s, "<title>{}</title>", escape(title)).unwrap();
    writeln!(s, r#"<text x="12" y="20" font-size="13">{}</text>"#, escape(title)).unwrap();
    let bottom = top + row * items.len() as f64;
    writeln!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{bottom}" stroke="grey" stroke-dasharray="4 3"/>"#, px(0.0), top - 10.0, px(0.0)).unwrap();
    for (i, (label, mean, l, h)) in items.iter().enumerate() {
        let y = top + row * i as f64 + row / 2.0;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 8.0, y + 3.0, escape(label)).unwrap();
        writeln!(s, r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="black" stroke-width="2"/>"#, num(px(*l)), num(px(*h))).unwrap();
        writeln!(s, r#"<circle cx="{}" cy="{y}" r="4" fill="{}"/>"#, num(px(*mean)), RAMP[6]).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{} [{}; {}]</text>"#, num(px(*mean)), y - 8.0, num(*mean), num(*l), num(*h)).unwrap();
    }
    writeln!(s, r#"<line x1="{left}" y1="{bottom}" x2="{}" y2="{bottom}" stroke="black"/>"#, left + pw).unwrap();
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, num(px(v)), bottom + 14.0, num(v)).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, bottom + 30.0, escape(unit)).unwrap();
    writeln!(s, "</svg>").unwrap();
    s
}
