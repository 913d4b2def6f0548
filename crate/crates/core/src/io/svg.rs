//! Self-contained SVG figures: partition rasters, histograms and neighbour
//! grids. Output depends only on the inputs, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::analysis::Histogram;
use crate::partition::Grid2DSpec;

/// Colour derived from a signature hash.
pub fn hash_color(h: u64) -> String {
    // splitmix finaliser spreads nearby hashes apart
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    let hue = (z % 360) as f64;
    let sat = 0.45 + ((z >> 16) % 40) as f64 / 100.0;
    let light = 0.45 + ((z >> 32) % 25) as f64 / 100.0;
    let (r, g, b) = hsl_to_rgb(hue, sat, light);
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> (u8, u8, u8) {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let to = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    (to(r), to(g), to(b))
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
}

/// Raster of the partition on `grid`: `hashes` is row-major from the bottom
/// row, as produced by `partition::grid_signature_hashes`. Each signature
/// becomes one `<g>` layer of row runs. `points` are overlaid as dots coloured
/// by label.
pub fn render_partition2d(hashes: &[u64], grid: &Grid2DSpec, points: &[(f64, f64, usize)]) -> String {
    let (nx, ny) = grid.resolution;
    let size = 512.0;
    let (sx, sy) = (size / nx as f64, size / ny as f64);
    let mut layers: BTreeMap<u64, String> = BTreeMap::new();
    for j in 0..ny {
        let row = &hashes[j * nx..(j + 1) * nx];
        let top = (ny - 1 - j) as f64 * sy;
        let mut i = 0;
        while i < nx {
            let h = row[i];
            let start = i;
            while i < nx && row[i] == h {
                i += 1;
            }
            let _ = write!(
                layers.entry(h).or_default(),
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}"/>"#,
                start as f64 * sx,
                top,
                (i - start) as f64 * sx,
                sy
            );
        }
    }
    let mut out = String::new();
    header(&mut out, size, size);
    let _ = writeln!(out, r#"<g shape-rendering="crispEdges" stroke="none">"#);
    for (h, rects) in &layers {
        let _ = writeln!(out, r#"<g data-signature="{h:016x}" fill="{}">{rects}</g>"#, hash_color(*h));
    }
    let _ = writeln!(out, "</g>");
    let (x0, x1) = grid.x_range;
    let (y0, y1) = grid.y_range;
    for (x, y, label) in points {
        let px = (x - x0) / (x1 - x0) * size;
        let py = (1.0 - (y - y0) / (y1 - y0)) * size;
        let _ = writeln!(
            out,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="2" fill="{}" stroke="white" stroke-width="0.5"/>"#,
            PALETTE[label % PALETTE.len()]
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Overlaid histograms sharing one axis. Series with no counts draw
/// nothing, so an empty input yields the axes alone.
pub fn render_histogram(title: &str, series: &[(&str, &Histogram)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (50.0, 20.0, 30.0, 40.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let mut out = String::new();
    header(&mut out, w, h);
    let _ = writeln!(out, r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<g stroke="black" stroke-width="1"><line x1="{left}" y1="{}" x2="{}" y2="{}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{}"/></g>"#,
        top + ph,
        left + pw,
        top + ph,
        top + ph
    );
    let nonempty: Vec<&(&str, &Histogram)> = series.iter().filter(|(_, s)| s.total() > 0).collect();
    if let Some(first) = nonempty.first() {
        let lo = nonempty.iter().map(|(_, s)| s.lo).fold(first.1.lo, f64::min);
        let hi = nonempty.iter().map(|(_, s)| s.hi).fold(first.1.hi, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let peak = nonempty.iter().flat_map(|(_, s)| s.counts.iter()).copied().max().unwrap_or(1).max(1) as f64;
        for (k, (label, s)) in nonempty.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let _ = write!(out, r#"<g fill="{color}" fill-opacity="0.55">"#);
            let edges = s.bin_edges();
            for (b, c) in s.counts.iter().enumerate() {
                if *c == 0 {
                    continue;
                }
                let x = left + (edges[b] - lo) / span * pw;
                let bw = (edges[b + 1] - edges[b]) / span * pw;
                let bh = *c as f64 / peak * ph;
                let _ = write!(out, r#"<rect x="{x:.2}" y="{:.2}" width="{bw:.2}" height="{bh:.2}"/>"#, top + ph - bh);
            }
            let _ = writeln!(out, "</g>");
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
                left + pw - 150.0,
                top + 15.0 + 15.0 * k as f64,
                escape(label)
            );
        }
        let _ = writeln!(
            out,
            r#"<g font-family="sans-serif" font-size="11" text-anchor="middle"><text x="{left}" y="{}">{lo:.3}</text><text x="{}" y="{}">{hi:.3}</text></g>"#,
            top + ph + 15.0,
            left + pw,
            top + ph + 15.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One query with its retrieved neighbours.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborRow {
    pub query: Vec<f64>,
    pub neighbors: Vec<Vec<f64>>,
}

fn tile(out: &mut String, x: f64, y: f64, size: f64, v: &[f64], image: Option<(usize, usize)>) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let _ = write!(out, r#"<rect x="{x}" y="{y}" width="{size}" height="{size}" fill="white" stroke="gray"/>"#);
    match image {
        Some((rows, cols)) if rows * cols == v.len() => {
            let (pw, ph) = (size / cols as f64, size / rows as f64);
            for r in 0..rows {
                for c in 0..cols {
                    let g = (((v[r * cols + c] - lo) / span) * 255.0).round() as u8;
                    let _ = write!(
                        out,
                        r##"<rect x="{:.2}" y="{:.2}" width="{pw:.2}" height="{ph:.2}" fill="#{g:02x}{g:02x}{g:02x}"/>"##,
                        x + c as f64 * pw,
                        y + r as f64 * ph
                    );
                }
            }
        }
        _ => {
            let bw = size / v.len().max(1) as f64;
            for (i, f) in v.iter().enumerate() {
                let bh = (f - lo) / span * (size - 4.0) + 2.0;
                let _ = write!(
                    out,
                    r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="#1f77b4"/>"##,
                    x + i as f64 * bw,
                    y + size - bh,
                    bw * 0.9
                );
            }
        }
    }
}

/// Query in the first column, neighbours to its right. Inputs are drawn as
/// grayscale images when `image` gives their `(rows, cols)`, otherwise as
/// bar glyphs of the feature values.
pub fn render_neighbor_grid(rows: &[NeighborRow], image: Option<(usize, usize)>) -> String {
    let size = 48.0;
    let gap = 6.0;
    let cols = rows.iter().map(|r| r.neighbors.len() + 1).max().unwrap_or(1);
    let w = cols as f64 * (size + gap) + 2.0 * gap;
    let h = rows.len().max(1) as f64 * (size + gap) + gap;
    let mut out = String::new();
    header(&mut out, w, h);
    for (r, row) in rows.iter().enumerate() {
        let y = gap + r as f64 * (size + gap);
        tile(&mut out, gap, y, size, &row.query, image);
        for (k, n) in row.neighbors.iter().enumerate() {
            tile(&mut out, 2.0 * gap + (k + 1) as f64 * (size + gap), y, size, n, image);
        }
        out.push('\n');
    }
    out.push_str("</svg>\n");
    out
}
