use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::summary::{load_run, Metric, RunResult, Stat};
use crate::policies::ArchKind;
use crate::Result;

pub const RETURN_FIGURE: &str = "return_curves.svg";
pub const ENTROPY_FIGURE: &str = "insect_entropy.svg";

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// Seed-averaged curve: `(update, stat)` per update.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, Stat)>,
}

/// Mean and spread across runs, per update index.
pub fn seed_curve(runs: &[&RunResult], metric: Metric) -> Vec<(f64, Stat)> {
    let mut by_update: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in runs {
        for m in &r.history {
            if let Some(v) = metric.value(m).filter(|v| v.is_finite()) {
                by_update.entry(m.update).or_default().push(v);
            }
        }
    }
    by_update.into_iter().filter_map(|(u, xs)| Stat::of(&xs).map(|s| (u as f64, s))).collect()
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

/// Renders line charts with ±1 std bands as a standalone SVG document.
pub fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, s) in pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(s.mean - s.std);
        y1 = y1.max(s.mean + s.std);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(title));
    for t in nice_ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, tick_label(t));
    }
    for t in nice_ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, tick_label(t));
    }
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 18.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let _ = writeln!(s, r#"<g class="series" data-label="{}">"#, escape(&ser.label));
        if ser.points.iter().any(|(_, st)| st.std > 0.0) {
            let upper = ser.points.iter().map(|(x, st)| format!("{:.2},{:.2}", sx(*x), sy(st.mean + st.std)));
            let lower = ser.points.iter().rev().map(|(x, st)| format!("{:.2},{:.2}", sx(*x), sy(st.mean - st.std)));
            let poly: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(s, r#"<polygon points="{}" fill="{}" fill-opacity="0.18" stroke="none"/>"#, poly.join(" "), ser.color);
        }
        let line: Vec<String> = ser.points.iter().map(|(x, st)| format!("{:.2},{:.2}", sx(*x), sy(st.mean))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, line.join(" "), ser.color);
        let ly = TOP + 16.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="3"/>"#, lx + 22.0, ser.color);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 28.0, ly + 4.0, escape(&ser.label));
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn color(kind: ArchKind) -> &'static str {
    match kind {
        ArchKind::Insect => "#d95f02",
        ArchKind::Gru => "#1b9e77",
        ArchKind::Mlp => "#7570b3",
    }
}

/// Writes the return figure (one series per architecture) and, if insect runs
/// are present, the mode/module entropy figure. Empty CSVs are skipped with a warning.
pub fn emit_plots(csv_paths: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut runs = Vec::new();
    for p in csv_paths {
        let r = load_run(p)?;
        if r.history.is_empty() {
            log::warn!("{}: no metric rows, skipped", p.display());
            continue;
        }
        runs.push(r);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let returns: Vec<Series> = ArchKind::ALL
        .iter()
        .filter_map(|&k| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.kind == k).collect();
            (!mine.is_empty()).then(|| Series {
                label: format!("{k} (n={})", mine.len()),
                color: color(k),
                points: seed_curve(&mine, Metric::MeanReturn),
            })
        })
        .collect();
    if !returns.is_empty() {
        let p = out_dir.join(RETURN_FIGURE);
        std::fs::write(&p, render_svg("Mean episodic return", "PPO update", "return", &returns))?;
        written.push(p);
    }
    let insect: Vec<&RunResult> = runs.iter().filter(|r| r.kind == ArchKind::Insect).collect();
    if !insect.is_empty() {
        let series = vec![
            Series { label: "mode".into(), color: "#1f78b4", points: seed_curve(&insect, Metric::ModeEntropy) },
            Series { label: "module".into(), color: "#e31a1c", points: seed_curve(&insect, Metric::ModuleEntropy) },
        ];
        let p = out_dir.join(ENTROPY_FIGURE);
        std::fs::write(&p, render_svg("Insect model entropies", "PPO update", "entropy (nats)", &series))?;
        written.push(p);
    }
    Ok(written)
}
