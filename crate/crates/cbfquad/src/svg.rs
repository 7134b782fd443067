//! Static SVG summaries of a run: the 3-D flight path inside the safe-box
//! wireframe, and nominal-vs-safe input traces. Hand-rolled; the plots are
//! batch artifacts, not an interactive UI.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::report::BOUNDS_TOLERANCE;
use crate::sim::LogRecord;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 560.0;
const MARGIN: f64 = 45.0;

/// Isometric-style projection onto the drawing plane.
fn project(p: [f64; 3]) -> (f64, f64) {
    let c = 0.5f64.sqrt();
    let x = (p[0] - p[1]) * c;
    let y = p[2] + (p[0] + p[1]) * c * 0.5;
    (x, y)
}

struct Frame {
    sx: f64,
    sy: f64,
    x0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Frame {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in points {
            lo.0 = lo.0.min(x);
            lo.1 = lo.1.min(y);
            hi.0 = hi.0.max(x);
            hi.1 = hi.1.max(y);
        }
        let span_x = (hi.0 - lo.0).max(1e-9);
        let span_y = (hi.1 - lo.1).max(1e-9);
        Frame {
            sx: (WIDTH - 2.0 * MARGIN) / span_x,
            sy: (HEIGHT - 2.0 * MARGIN) / span_y,
            x0: lo.0,
            y1: hi.1,
        }
    }

    fn map(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let s = self.sx.min(self.sy);
        (MARGIN + (x - self.x0) * s, MARGIN + (self.y1 - y) * s)
    }
}

fn polyline(out: &mut String, pts: &[(f64, f64)], style: &str) {
    let _ = write!(out, "<polyline fill=\"none\" {style} points=\"");
    for (i, (x, y)) in pts.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{x:.1},{y:.1}");
    }
    out.push_str("\"/>\n");
}

/// Flight path with the safe box drawn as a wireframe.
pub fn write_trajectory_svg<W: Write>(
    records: &[LogRecord],
    bounds_min: [f64; 3],
    bounds_max: [f64; 3],
    mut w: W,
) -> io::Result<()> {
    let corners: Vec<[f64; 3]> = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { bounds_min[0] } else { bounds_max[0] },
                if i & 2 == 0 { bounds_min[1] } else { bounds_max[1] },
                if i & 4 == 0 { bounds_min[2] } else { bounds_max[2] },
            ]
        })
        .collect();
    let edges: [(usize, usize); 12] = [
        (0, 1), (2, 3), (4, 5), (6, 7),
        (0, 2), (1, 3), (4, 6), (5, 7),
        (0, 4), (1, 5), (2, 6), (3, 7),
    ];
    let frame = Frame::fit(
        corners
            .iter()
            .map(|c| project(*c))
            .chain(records.iter().map(|r| project(r.position.into()))),
    );

    let mut body = String::new();
    for (a, b) in edges {
        let pts = [frame.map(project(corners[a])), frame.map(project(corners[b]))];
        polyline(&mut body, &pts, "stroke=\"#888\" stroke-width=\"1\" stroke-dasharray=\"4 3\"");
    }
    let path: Vec<(f64, f64)> = records
        .iter()
        .map(|r| frame.map(project(r.position.into())))
        .collect();
    polyline(&mut body, &path, "stroke=\"#0a56a8\" stroke-width=\"1.5\"");
    if let (Some(first), Some(last)) = (path.first(), path.last()) {
        let _ = write!(
            body,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"#2a2\"/>\n\
             <circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"#a22\"/>\n",
            first.0, first.1, last.0, last.1
        );
    }
    let _ = write!(
        body,
        "<text x=\"{MARGIN}\" y=\"22\" font-family=\"sans-serif\" font-size=\"13\">\
         flight path (isometric), box [{:.1} {:.1} {:.1}]..[{:.1} {:.1} {:.1}] m, \
         tolerance {BOUNDS_TOLERANCE} m</text>\n",
        bounds_min[0], bounds_min[1], bounds_min[2],
        bounds_max[0], bounds_max[1], bounds_max[2],
    );
    write_doc(&mut w, &body)
}

/// Four stacked panels: thrust and the three torques, nominal (gray)
/// against safe (colored).
pub fn write_inputs_svg<W: Write>(records: &[LogRecord], mut w: W) -> io::Result<()> {
    if records.is_empty() {
        return write_doc(&mut w, "");
    }
    let t0 = records[0].t;
    let t1 = records[records.len() - 1].t.max(t0 + 1e-9);
    let panel_h = (HEIGHT - 2.0 * MARGIN) / 4.0;
    let labels = ["thrust [N]", "torque x [N·m]", "torque y [N·m]", "torque z [N·m]"];
    let colors = ["#0a56a8", "#a8560a", "#0a8a3a", "#7a0aa8"];

    let mut body = String::new();
    for ch in 0..4 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in records {
            lo = lo.min(r.u_nominal[ch]).min(r.u_safe[ch]);
            hi = hi.max(r.u_nominal[ch]).max(r.u_safe[ch]);
        }
        let span = (hi - lo).max(1e-9);
        let top = MARGIN + ch as f64 * panel_h;
        let map = |t: f64, v: f64| {
            (
                MARGIN + (t - t0) / (t1 - t0) * (WIDTH - 2.0 * MARGIN),
                top + (hi - v) / span * (panel_h - 18.0),
            )
        };
        let nominal: Vec<(f64, f64)> =
            records.iter().map(|r| map(r.t, r.u_nominal[ch])).collect();
        let safe: Vec<(f64, f64)> = records.iter().map(|r| map(r.t, r.u_safe[ch])).collect();
        polyline(&mut body, &nominal, "stroke=\"#aaa\" stroke-width=\"1.3\"");
        polyline(
            &mut body,
            &safe,
            &format!("stroke=\"{}\" stroke-width=\"1.3\"", colors[ch]),
        );
        let _ = write!(
            body,
            "<text x=\"{MARGIN}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">\
             {} — nominal gray, safe colored</text>\n",
            top - 4.0,
            labels[ch]
        );
    }
    write_doc(&mut w, &body)
}

fn write_doc<W: Write>(w: &mut W, body: &str) -> io::Result<()> {
    writeln!(
        w,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>"
    )?;
    w.write_all(body.as_bytes())?;
    writeln!(w, "</svg>")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn record(t: f64, z: f64) -> LogRecord {
        LogRecord {
            t,
            position: Vector3::new(0.1 * t, -0.05 * t, z),
            velocity: Vector3::zeros(),
            quaternion: [1.0, 0.0, 0.0, 0.0],
            euler: [0.0; 3],
            body_rate: Vector3::zeros(),
            u_nominal: [14.7, 0.0, 0.0, 0.0],
            u_safe: [14.0, 0.0, -0.1, 0.0],
            slack_total: 0.0,
            filter_active: true,
            v_chain_min: [1.0; 3],
        }
    }

    #[test]
    fn svg_outputs_are_wellformed_enough() {
        let records: Vec<LogRecord> = (0..50).map(|k| record(k as f64 * 0.01, 3.0)).collect();
        let mut buf = Vec::new();
        write_trajectory_svg(&records, [-1.0, -1.0, 2.0], [1.0, 1.0, 6.0], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.ends_with("</svg>\n"));
        assert!(text.matches("<polyline").count() >= 13); // 12 edges + path

        let mut buf = Vec::new();
        write_inputs_svg(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("torque y"));
        assert_eq!(text.matches("<polyline").count(), 8);
    }
}
