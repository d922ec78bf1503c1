//! CSV tables and unlabelled bitmap charts; series order follows the CSV rows.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Serialize;

use super::BinnedDetectionReport;
use crate::volume::SliceAxis;
use crate::Result;

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsnrBar {
    pub label: String,
    pub axis: SliceAxis,
    pub mean_db: f64,
    pub std_db: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn write_psnr_csv(path: &Path, bars: &[PsnrBar]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for b in bars {
        w.serialize(b)?;
    }
    w.flush().map_err(crate::error::io_err(path))
}

/// One row per bin and label, then an `all` row per label.
pub fn write_detection_csv(path: &Path, reports: &[(String, BinnedDetectionReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label", "bin", "lo_um", "hi_um", "tp", "fp", "fn", "recall", "precision", "f1"])?;
    for (label, r) in reports {
        let rows = r.per_bin.iter().enumerate().map(|(i, b)| (i.to_string(), b));
        for (bin, b) in rows.chain(std::iter::once(("all".to_string(), &r.totals))) {
            w.write_record([
                label.clone(),
                bin,
                format!("{:.4}", b.lo_um),
                format!("{:.4}", b.hi_um),
                b.tp.to_string(),
                b.fp.to_string(),
                b.fn_.to_string(),
                opt(b.recall),
                opt(b.precision),
                opt(b.f1),
            ])?;
        }
    }
    w.flush().map_err(crate::error::io_err(path))
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Self {
            img: RgbImage::from_pixel(w, h, Rgb([255, 255, 255])),
        }
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: [u8; 3]) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, c);
            }
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for s in 0..=steps {
            let x = x0 + (x1 - x0) * s / steps;
            let y = y0 + (y1 - y0) * s / steps;
            self.rect(x, y, x + 1, y + 1, c);
        }
    }
}

/// Bars of mean PSNR with ±1 std whiskers.
pub fn plot_psnr_bars(path: &Path, bars: &[PsnrBar]) -> Result<()> {
    let (w, h, pad) = (80 + 40 * bars.len().max(1) as u32, 300u32, 20i64);
    let mut c = Canvas::new(w, h);
    let hi = bars.iter().map(|b| b.mean_db + b.std_db).fold(1.0, f64::max);
    let y_of = |v: f64| h as i64 - pad - ((v.max(0.0) / hi) * (h as f64 - 2.0 * pad as f64)) as i64;
    c.line((pad, h as i64 - pad), (w as i64 - pad, h as i64 - pad), [0; 3]);
    c.line((pad, pad), (pad, h as i64 - pad), [0; 3]);
    for (i, b) in bars.iter().enumerate() {
        let x = pad + 20 + 40 * i as i64;
        c.rect(x, y_of(b.mean_db), x + 24, h as i64 - pad - 1, PALETTE[i % PALETTE.len()]);
        let (lo, up) = (y_of(b.mean_db - b.std_db), y_of(b.mean_db + b.std_db));
        c.line((x + 12, lo), (x + 12, up), [0; 3]);
        c.line((x + 6, lo), (x + 18, lo), [0; 3]);
        c.line((x + 6, up), (x + 18, up), [0; 3]);
    }
    c.img.save(path)?;
    Ok(())
}

/// Three panels (recall, precision, F1) against bin centre, one line per report.
pub fn plot_detection(path: &Path, reports: &[(String, BinnedDetectionReport)]) -> Result<()> {
    let (pw, ph, pad) = (260i64, 220i64, 20i64);
    let mut c = Canvas::new(3 * pw as u32, ph as u32);
    for panel in 0..3 {
        let x0 = panel * pw;
        c.line((x0 + pad, ph - pad), (x0 + pw - pad, ph - pad), [0; 3]);
        c.line((x0 + pad, pad), (x0 + pad, ph - pad), [0; 3]);
        for (k, (_, r)) in reports.iter().enumerate() {
            let n = r.per_bin.len().max(1) as i64;
            let mut prev: Option<(i64, i64)> = None;
            for (i, b) in r.per_bin.iter().enumerate() {
                let v = [b.recall, b.precision, b.f1][panel as usize];
                let Some(v) = v else {
                    prev = None;
                    continue;
                };
                let x = x0 + pad + (2 * i as i64 + 1) * (pw - 2 * pad) / (2 * n);
                let y = ph - pad - (v * (ph - 2 * pad) as f64) as i64;
                let col = PALETTE[k % PALETTE.len()];
                c.rect(x - 2, y - 2, x + 2, y + 2, col);
                if let Some(p) = prev {
                    c.line(p, (x, y), col);
                }
                prev = Some((x, y));
            }
        }
    }
    c.img.save(path)?;
    Ok(())
}
