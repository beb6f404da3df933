use std::fmt::Write as _;

use super::ReportError;
use crate::protocols::{CurveKind, RunRecord};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

pub fn curve_color(kind: CurveKind) -> &'static str {
    match kind {
        CurveKind::D1OnD1 => "#1f4fd1",
        CurveKind::D2OnD2 => "#1a9a3a",
        CurveKind::D2OnUnion => "#d62020",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Accuracy-versus-iteration chart of a run as a standalone SVG document.
///
/// The x axis spans both phases (0 to 2·t_max) and the retraining half is
/// shaded grey. Only curves present in the record are drawn and listed in
/// the legend.
pub fn render_svg(record: &RunRecord) -> Result<String, ReportError> {
    let curves: Vec<_> = record.curves.iter().filter(|c| !c.iterations.is_empty()).collect();
    if curves.is_empty() {
        return Err(ReportError::EmptyCurves(record.run_id.clone()));
    }
    let t_max = record.key.settings.t_max as f64;
    let x_end = 2.0 * t_max;
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |it: f64| LEFT + pw * it / x_end;
    let sy = |acc: f64| TOP + ph * (1.0 - acc.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect class="retraining" x="{:.2}" y="{TOP}" width="{:.2}" height="{ph}" fill="#d9d9d9"/>"##,
        sx(t_max),
        sx(x_end) - sx(t_max)
    );

    for i in 0..=5 {
        let acc = i as f64 / 5.0;
        let y = sy(acc);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#eeeeee"/><text x="{:.2}" y="{:.2}" text-anchor="end">{acc:.1}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for i in 0..=4 {
        let it = x_end * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(it),
            TOP + ph + 18.0,
            it.round()
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333333"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">accuracy</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    let k = &record.key;
    let lr_d2 = k.lr_d2.map_or(String::new(), |r| format!(" ε_D2={r}"));
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="24" font-size="14">{}</text>"#,
        escape(&format!("{} on {} ({}): {} ε_D1={}{lr_d2}", k.model, k.task, k.paradigm, k.topology, k.lr_d1))
    );

    for c in &curves {
        let pts: Vec<String> = c
            .iterations
            .iter()
            .zip(&c.accuracy)
            .map(|(&it, &a)| format!("{:.2},{:.2}", sx(it as f64), sy(a)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="{}" fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            c.kind.name(),
            curve_color(c.kind),
            pts.join(" ")
        );
    }

    let lx = LEFT + 10.0;
    for (i, c) in curves.iter().enumerate() {
        let y = TOP + ph - 12.0 - 18.0 * (curves.len() - 1 - i) as f64;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 24.0,
            curve_color(c.kind),
            lx + 30.0,
            y + 4.0,
            escape(c.kind.label())
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
