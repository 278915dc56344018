//! Per-patch contribution tables and scatter rasters.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use vern::graph::{knn_directed, WsiGraph};
use vern::VernOutput;

use crate::error::CliError;

const MAX_SIDE: f64 = 1024.0;
const MARGIN: f64 = 16.0;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const OUTLINE: Rgb<u8> = Rgb([0, 0, 0]);

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapRow {
    pub patch_id: u32,
    pub x: f64,
    pub y: f64,
    pub contribution: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapArtifact {
    pub slide_id: String,
    pub rows: Vec<HeatmapRow>,
    /// Patch ids, highest contribution first.
    pub top: Vec<u32>,
}

impl HeatmapArtifact {
    pub fn new(g: &WsiGraph, out: &VernOutput) -> Self {
        let rows = g
            .patch_ids
            .iter()
            .zip(&g.coords)
            .zip(&out.contributions)
            .map(|((&patch_id, c), &contribution)| HeatmapRow {
                patch_id,
                x: c[0],
                y: c[1],
                contribution,
            })
            .collect();
        Self {
            slide_id: g.slide_id.clone(),
            rows,
            top: out.top_patches.iter().map(|&i| g.patch_ids[i]).collect(),
        }
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("patch_id,x,y,contribution\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.patch_id, r.x, r.y, r.contribution);
        }
        s
    }

    pub fn top_csv(&self) -> String {
        let mut s = String::from("rank,patch_id,contribution\n");
        for (rank, id) in self.top.iter().enumerate() {
            let c = self.rows.iter().find(|r| r.patch_id == *id).map_or(0.0, |r| r.contribution);
            let _ = writeln!(s, "{},{id},{c}", rank + 1);
        }
        s
    }

    /// Filled discs at patch centres, coloured by contribution; the top
    /// patches get a black ring.
    pub fn render(&self) -> RgbImage {
        let xs = self.rows.iter().map(|r| r.x);
        let ys = self.rows.iter().map(|r| r.y);
        let (x0, x1) = bounds(xs);
        let (y0, y1) = bounds(ys);
        let span = (x1 - x0).max(y1 - y0);
        let scale = if span > 0.0 { (MAX_SIDE - 2.0 * MARGIN) / span } else { 1.0 };
        let coords: Vec<[f64; 2]> = self.rows.iter().map(|r| [r.x, r.y]).collect();
        let radius = (nearest_spacing(&coords) * scale * 0.45).clamp(2.0, 24.0);
        let pad = MARGIN + radius;
        let w = ((x1 - x0) * scale + 2.0 * pad).ceil() as u32;
        let h = ((y1 - y0) * scale + 2.0 * pad).ceil() as u32;
        let mut img = RgbImage::from_pixel(w.max(1), h.max(1), BACKGROUND);

        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by(|&a, &b| self.rows[a].contribution.total_cmp(&self.rows[b].contribution));
        for i in order {
            let r = &self.rows[i];
            let cx = (r.x - x0) * scale + pad;
            let cy = (r.y - y0) * scale + pad;
            let ring = self.top.contains(&r.patch_id);
            disc(&mut img, cx, cy, radius, ramp(r.contribution), ring);
        }
        img
    }

    pub fn write(&self, dir: &Path, png: bool) -> Result<Vec<std::path::PathBuf>, CliError> {
        let stem = sanitize(&self.slide_id);
        let mut written = Vec::new();
        for (name, body) in [
            (format!("{stem}_heatmap.csv"), self.csv()),
            (format!("{stem}_top9.csv"), self.top_csv()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| CliError::io(&p, e))?;
            written.push(p);
        }
        if png {
            let p = dir.join(format!("{stem}_heatmap.png"));
            self.render()
                .save_with_format(&p, image::ImageFormat::Png)
                .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            written.push(p);
        }
        Ok(written)
    }
}

/// Linear ramp from purple at 0 to red at 1.
pub fn ramp(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    Rgb([lerp(128.0, 255.0), 0, lerp(128.0, 0.0)])
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

/// Median distance from each patch to its nearest other patch.
fn nearest_spacing(coords: &[[f64; 2]]) -> f64 {
    let Ok(nn) = knn_directed(coords, 1) else { return 1.0 };
    let mut d: Vec<f64> = nn
        .iter()
        .enumerate()
        .filter_map(|(i, js)| js.first().map(|&j| (coords[i][0] - coords[j][0]).hypot(coords[i][1] - coords[j][1])))
        .filter(|d| *d > 0.0)
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

fn disc(img: &mut RgbImage, cx: f64, cy: f64, r: f64, fill: Rgb<u8>, ring: bool) {
    let (w, h) = img.dimensions();
    let x_lo = (cx - r).floor().max(0.0) as u32;
    let y_lo = (cy - r).floor().max(0.0) as u32;
    let x_hi = ((cx + r).ceil() as u32).min(w - 1);
    let y_hi = ((cy + r).ceil() as u32).min(h - 1);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let d = (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy);
            if d <= r {
                let edge = ring && d > r - 2.0;
                img.put_pixel(x, y, if edge { OUTLINE } else { fill });
            }
        }
    }
}

/// File-name-safe form of a slide id.
pub fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(1.0), Rgb([255, 0, 0]));
        assert_eq!(ramp(0.0), Rgb([128, 0, 128]));
        assert_eq!(ramp(0.5), Rgb([192, 0, 64]));
    }

    #[test]
    fn sanitize_replaces_separators() {
        assert_eq!(sanitize("a/b c.1"), "a_b_c.1");
    }
}
