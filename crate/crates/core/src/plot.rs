//! Minimal SVG charts for the `report` stage.

use std::fmt::Write as _;

use crate::cartography::{CartographyRecord, CorrectnessBin};

/// Colours for the seven correctness bins, from `0` (dark) to `1` (light).
const BIN_COLOURS: [&str; 7] = [
    "#1b1b5e", "#3b2f8f", "#5e4fa2", "#3288bd", "#66c2a5", "#abdda4", "#e6f598",
];

struct Canvas {
    svg: String,
}

impl Canvas {
    fn new(width: f64, height: f64) -> Self {
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        Canvas { svg }
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.svg,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.svg,
            r#"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="{stroke}"/>"#
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.svg,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{w:.1}" height="{h:.1}" fill="{fill}" stroke="black" stroke-width="0.5"/>"#
        );
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

struct Frame {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl Frame {
    fn map(&self, fx: f64, fy: f64) -> (f64, f64) {
        (self.x + fx * self.w, self.y + self.h - fy * self.h)
    }

    fn axes(&self, c: &mut Canvas, x_label: &str, y_label: &str, x_max: f64, y_max: f64) {
        c.line(
            self.x,
            self.y + self.h,
            self.x + self.w,
            self.y + self.h,
            "black",
        );
        c.line(self.x, self.y, self.x, self.y + self.h, "black");
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let (px, py) = self.map(f, 0.0);
            c.text(px, py + 14.0, "middle", &format!("{:.2}", f * x_max));
            let (qx, qy) = self.map(0.0, f);
            c.text(qx - 4.0, qy + 4.0, "end", &format!("{:.2}", f * y_max));
        }
        c.text(
            self.x + self.w / 2.0,
            self.y + self.h + 30.0,
            "middle",
            x_label,
        );
        c.text(self.x - 34.0, self.y - 8.0, "start", y_label);
    }
}

/// Variability (x) against confidence (y), coloured by correctness bin,
/// one panel per named group.
pub fn cartography_map(panels: &[(&str, &[CartographyRecord])]) -> String {
    let panel_w = 260.0;
    let width = 60.0 + panels.len() as f64 * (panel_w + 50.0);
    let mut c = Canvas::new(width, 380.0);
    for (i, (title, records)) in panels.iter().enumerate() {
        let frame = Frame {
            x: 60.0 + i as f64 * (panel_w + 50.0),
            y: 40.0,
            w: panel_w,
            h: 260.0,
        };
        frame.axes(&mut c, "variability", "confidence", 0.5, 1.0);
        c.text(
            frame.x + panel_w / 2.0,
            22.0,
            "middle",
            &format!("{title} (n={})", records.len()),
        );
        for r in records.iter() {
            let (px, py) = frame.map((r.variability / 0.5).clamp(0.0, 1.0), r.confidence);
            let _ = writeln!(
                c.svg,
                r#"<circle cx="{px:.1}" cy="{py:.1}" r="2" fill="{}" fill-opacity="0.7"/>"#,
                BIN_COLOURS[r.bin.index()]
            );
        }
    }
    for (k, bin) in CorrectnessBin::all().enumerate() {
        let x = 60.0 + k as f64 * 80.0;
        c.rect(x, 350.0, 10.0, 10.0, BIN_COLOURS[bin.index()]);
        c.text(x + 14.0, 359.0, "start", bin.label());
    }
    c.finish()
}

/// Five-number summary for one box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn box_plot(
    title: &str,
    y_label: &str,
    boxes: &[(String, Option<BoxStats>)],
    y_max: f64,
) -> String {
    let n = boxes.len().max(1) as f64;
    let slot = 90.0;
    let mut c = Canvas::new(100.0 + n * slot, 360.0);
    let frame = Frame {
        x: 60.0,
        y: 40.0,
        w: n * slot,
        h: 260.0,
    };
    c.text(frame.x + frame.w / 2.0, 22.0, "middle", title);
    frame.axes(&mut c, "", y_label, 0.0, y_max);
    let fy = |v: f64| frame.map(0.0, v / y_max).1;
    for (i, (label, stats)) in boxes.iter().enumerate() {
        let cx = frame.x + (i as f64 + 0.5) * slot;
        c.text(cx, frame.y + frame.h + 30.0, "middle", label);
        let Some(s) = stats else { continue };
        c.line(cx, fy(s.min), cx, fy(s.q1), "black");
        c.line(cx, fy(s.q3), cx, fy(s.max), "black");
        c.rect(
            cx - 20.0,
            fy(s.q3),
            40.0,
            (fy(s.q1) - fy(s.q3)).max(1.0),
            "#9ecae1",
        );
        c.line(cx - 20.0, fy(s.median), cx + 20.0, fy(s.median), "#d62728");
        c.line(cx - 10.0, fy(s.min), cx + 10.0, fy(s.min), "black");
        c.line(cx - 10.0, fy(s.max), cx + 10.0, fy(s.max), "black");
    }
    c.finish()
}

pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let n = bars.len().max(1) as f64;
    let slot = 50.0;
    let y_max = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(1e-12) * 1.1;
    let mut c = Canvas::new(100.0 + n * slot, 360.0);
    let frame = Frame {
        x: 60.0,
        y: 40.0,
        w: n * slot,
        h: 260.0,
    };
    c.text(frame.x + frame.w / 2.0, 22.0, "middle", title);
    frame.axes(&mut c, "", y_label, 0.0, y_max);
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = frame.x + i as f64 * slot + 8.0;
        let (_, top) = frame.map(0.0, v / y_max);
        c.rect(x, top, slot - 16.0, frame.y + frame.h - top, "#6baed6");
        c.text(
            x + (slot - 16.0) / 2.0,
            frame.y + frame.h + 30.0,
            "middle",
            label,
        );
    }
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed_svg() {
        let rec = CartographyRecord {
            id: "a<b".into(),
            gold: 0,
            confidence: 0.4,
            variability: 0.2,
            correctness: 0.5,
            bin: CorrectnessBin::of(0.5),
        };
        let svgs = [
            cartography_map(&[("pos", &[]), ("neg", std::slice::from_ref(&rec))]),
            box_plot(
                "t",
                "cardinality",
                &[
                    ("a".into(), None),
                    (
                        "b".into(),
                        Some(BoxStats {
                            min: 1.0,
                            q1: 1.0,
                            median: 2.0,
                            q3: 3.0,
                            max: 18.0,
                        }),
                    ),
                ],
                18.0,
            ),
            bar_chart("t", "loss", &[("1".into(), 0.2), ("2".into(), 0.5)]),
        ];
        for svg in svgs {
            assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        }
    }
}
