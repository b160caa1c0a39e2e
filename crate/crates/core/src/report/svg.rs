use std::fmt::Write as _;
use std::path::Path;

use super::UserEval;
use crate::{Error, Result};

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const MODEL_COLOR: &str = "#1f77b4";
const EDA_COLOR: &str = "#d62728";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Model output and mean-pooled EDA against time, with level boundaries.
pub fn render_scatter(u: &UserEval) -> Result<String> {
    if u.trace.is_empty() {
        return Err(Error::EmptyInput("model trace"));
    }
    let bin = u.bin_ms();
    let last_trace = *u.trace.timestamp_ms.last().unwrap() as f64 + bin;
    let last_seg = u.segments.iter().map(|s| s.end_ms).fold(0.0, f64::max);
    let t_max = (last_trace.max(last_seg) / 1000.0).max(1.0);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |t_s: f64| LEFT + plot_w * t_s / t_max;
    let y = |v: f64| TOP + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<title>User {}: model output and EDA</title>"#, escape(&u.user));
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    // Axes and ticks.
    let _ = writeln!(s, r#"<g stroke="black" stroke-width="1">"#);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, TOP + plot_h, LEFT + plot_w, TOP + plot_h);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}"/>"#, TOP + plot_h);
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g text-anchor="end">"#);
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{v:.1}</text>"#, LEFT - 6.0, y(v) + 4.0);
    }
    let _ = writeln!(s, "</g>");
    let step = nice_step(t_max);
    let _ = writeln!(s, r#"<g text-anchor="middle">"#);
    let mut t = 0.0;
    while t <= t_max + 1e-9 {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{t:.0}</text>"#, x(t), TOP + plot_h + 16.0);
        t += step;
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Time (s)</text>"#, LEFT + plot_w / 2.0, HEIGHT - 12.0);
    let _ = writeln!(s, r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">Value</text>"#, TOP + plot_h / 2.0, TOP + plot_h / 2.0);

    // Level boundaries.
    let _ = writeln!(s, r##"<g stroke="#777777" stroke-dasharray="4 3">"##);
    for seg in &u.segments {
        for t in [seg.start_ms, seg.end_ms] {
            let _ = writeln!(s, r#"<line x1="{:.2}" y1="{TOP}" x2="{:.2}" y2="{:.2}"/>"#, x(t / 1000.0), x(t / 1000.0), TOP + plot_h);
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g fill="#444444" text-anchor="middle">"##);
    for seg in &u.segments {
        let mid = (seg.start_ms + seg.end_ms) / 2000.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">Level {}</text>"#, x(mid), TOP - 8.0, escape(&seg.label));
    }
    let _ = writeln!(s, "</g>");

    // Series.
    let _ = writeln!(s, r#"<g fill="{MODEL_COLOR}">"#);
    for (&t, &v) in u.trace.timestamp_ms.iter().zip(&u.trace.values) {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, x(t as f64 / 1000.0), y(v));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g fill="{EDA_COLOR}">"#);
    for &t in &u.trace.timestamp_ms {
        if let Some(v) = u.eda_bin(t as f64, bin) {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, x(t as f64 / 1000.0), y(v));
        }
    }
    let _ = writeln!(s, "</g>");

    // Legend.
    let lx = LEFT + plot_w - 110.0;
    let _ = writeln!(s, r#"<g>"#);
    let _ = writeln!(s, r#"<rect x="{lx:.2}" y="{:.2}" width="104" height="40" fill="white" stroke="black"/>"#, TOP + 4.0);
    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{MODEL_COLOR}"/>"#, lx + 12.0, TOP + 16.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">Model</text>"#, lx + 22.0, TOP + 20.0);
    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{EDA_COLOR}"/>"#, lx + 12.0, TOP + 32.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">EDA</text>"#, lx + 22.0, TOP + 36.0);
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 8.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

pub fn scatter_svg(bundle: &super::EvalBundle, user: &str, path: impl AsRef<Path>) -> Result<()> {
    let body = render_scatter(bundle.user(user)?)?;
    std::fs::write(path.as_ref(), body)?;
    Ok(())
}
