//! Result tables and static plots.
//!
//! Tables are tab-separated with a header row; floats use shortest
//! round-trip notation, so re-reading a table reproduces the in-memory values
//! exactly. `index.tsv` lists every emitted file.

use std::path::{Path, PathBuf};

use egosync_core::skeleton::{Joint, Skeleton};
use image::{Rgb, RgbImage};

use crate::error::{AppError, Result};
use crate::formats::{read_text, write_atomic};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.to_string(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join("\t");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn parse(name: &str, text: &str, path: &Path) -> Result<Table> {
        let mut lines = text.lines();
        let header: Vec<String> = lines.next().unwrap_or("").split('\t').map(str::to_string).collect();
        let mut t = Table { name: name.to_string(), header, rows: Vec::new() };
        for (i, line) in lines.enumerate() {
            let row: Vec<String> = line.split('\t').map(str::to_string).collect();
            if row.len() != t.header.len() {
                return Err(AppError::parse(path, i + 2, format!("expected {} fields, found {}", t.header.len(), row.len())));
            }
            t.rows.push(row);
        }
        Ok(t)
    }

    /// Column `c` of every row parsed as floats.
    pub fn column_f64(&self, c: usize) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.get(c)?.parse().ok()).collect()
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("table");
    Table::parse(name, &read_text(path)?, path)
}

pub fn matrix_table(name: &str, row_labels: &[&str], col_labels: &[&str], m: &[[f64; 4]; 4]) -> Table {
    let mut header = vec![""];
    header.extend_from_slice(col_labels);
    let mut t = Table::new(name, &header);
    for (label, row) in row_labels.iter().zip(m) {
        let mut r = vec![label.to_string()];
        r.extend(row.iter().map(|v| v.to_string()));
        t.push(r);
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub enum Plot {
    /// Points coloured by integer label.
    Scatter { name: String, points: Vec<[f64; 2]>, labels: Vec<u32> },
    /// Side-view stick figures, one panel per skeleton, left to right.
    Sticks { name: String, skeletons: Vec<Skeleton> },
}

impl Plot {
    fn name(&self) -> &str {
        match self {
            Plot::Scatter { name, .. } | Plot::Sticks { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub tables: Vec<Table>,
    pub plots: Vec<Plot>,
}

impl Report {
    pub fn is_empty(&self) -> bool {
        self.tables.is_empty() && self.plots.is_empty()
    }
}

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

fn line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), color: Rgb<u8>) {
    let (mut x, mut y) = a;
    let (dx, dy) = ((b.0 - x).abs(), -(b.1 - y).abs());
    let (sx, sy) = (if x < b.0 { 1 } else { -1 }, if y < b.1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn scatter(points: &[[f64; 2]], labels: &[u32]) -> RgbImage {
    const SIZE: u32 = 400;
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    if points.is_empty() {
        return img;
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let span = |k: usize| if hi[k] > lo[k] { hi[k] - lo[k] } else { 1.0 };
    for (p, &l) in points.iter().zip(labels) {
        let x = 10.0 + (p[0] - lo[0]) / span(0) * (SIZE as f64 - 20.0);
        let y = SIZE as f64 - 10.0 - (p[1] - lo[1]) / span(1) * (SIZE as f64 - 20.0);
        let c = Rgb(PALETTE[l as usize % PALETTE.len()]);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let (px, py) = (x as i64 + dx, y as i64 + dy);
                if px >= 0 && py >= 0 && px < SIZE as i64 && py < SIZE as i64 {
                    img.put_pixel(px as u32, py as u32, c);
                }
            }
        }
    }
    img
}

const BONES: [(Joint, Joint); 16] = [
    (Joint::Hip, Joint::Spine),
    (Joint::Spine, Joint::Thorax),
    (Joint::Thorax, Joint::Neck),
    (Joint::Neck, Joint::Head),
    (Joint::Thorax, Joint::LShoulder),
    (Joint::LShoulder, Joint::LElbow),
    (Joint::LElbow, Joint::LWrist),
    (Joint::Thorax, Joint::RShoulder),
    (Joint::RShoulder, Joint::RElbow),
    (Joint::RElbow, Joint::RWrist),
    (Joint::Hip, Joint::LKnee),
    (Joint::LKnee, Joint::LAnkle),
    (Joint::LAnkle, Joint::LFoot),
    (Joint::Hip, Joint::RKnee),
    (Joint::RKnee, Joint::RAnkle),
    (Joint::RAnkle, Joint::RFoot),
];

fn sticks(skeletons: &[Skeleton]) -> RgbImage {
    const PANEL: u32 = 120;
    const SCALE: f64 = 0.5; // px per cm
    let mut img = RgbImage::from_pixel(PANEL * skeletons.len().max(1) as u32, 2 * PANEL, Rgb([255, 255, 255]));
    for (k, s) in skeletons.iter().enumerate() {
        let origin = (k as f64 * PANEL as f64 + PANEL as f64 / 2.0, PANEL as f64 * 1.2);
        let at = |j: Joint| {
            let p = s.joint(j);
            ((origin.0 + SCALE * p[0]) as i64, (origin.1 - SCALE * p[2]) as i64)
        };
        for (n, (a, b)) in BONES.iter().enumerate() {
            let c = if n < 4 { PALETTE[7] } else if n < 10 { PALETTE[0] } else { PALETTE[1] };
            line(&mut img, at(*a), at(*b), Rgb(c));
        }
    }
    img
}

fn png_bytes(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| AppError::Io { path: PathBuf::from("<png>"), source: std::io::Error::other(e) })?;
    Ok(buf.into_inner())
}

/// Writes every table and plot of `report` into `out_dir`, overwriting
/// earlier output, plus `index.tsv`. Returns the written paths.
pub fn emit_report(report: &Report, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut index = String::new();
    for t in &report.tables {
        let path = out_dir.join(format!("{}.tsv", t.name));
        write_atomic(&path, t.render().as_bytes())?;
        index.push_str(&format!("table\t{}.tsv\n", t.name));
        written.push(path);
    }
    for p in &report.plots {
        let img = match p {
            Plot::Scatter { points, labels, .. } => scatter(points, labels),
            Plot::Sticks { skeletons, .. } => sticks(skeletons),
        };
        let path = out_dir.join(format!("{}.png", p.name()));
        write_atomic(&path, &png_bytes(&img)?)?;
        index.push_str(&format!("plot\t{}.png\n", p.name()));
        written.push(path);
    }
    let path = out_dir.join("index.tsv");
    write_atomic(&path, index.as_bytes())?;
    written.push(path);
    Ok(written)
}
