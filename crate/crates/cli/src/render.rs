//! Rasterizes replay records to PNG frames.

use anyhow::{Context, Result};
use herd_core::rollout::ReplayRecord;
use image::{Rgb, RgbImage};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy)]
pub struct Style {
    pub pixels_per_meter: f64,
    pub box_side: f64,
    pub robot_radius: f64,
}

impl Default for Style {
    fn default() -> Self {
        Self { pixels_per_meter: 60.0, box_side: 0.25, robot_radius: 0.15 }
    }
}

const BACKGROUND: Rgb<u8> = Rgb([250, 250, 250]);
const WALL: Rgb<u8> = Rgb([40, 40, 40]);
const OBSTACLE: Rgb<u8> = Rgb([90, 90, 90]);
const RECEPTACLE: Rgb<u8> = Rgb([170, 225, 170]);
const BOX: Rgb<u8> = Rgb([190, 130, 60]);
const ROBOT: Rgb<u8> = Rgb([50, 90, 200]);
const PATH: Rgb<u8> = Rgb([220, 40, 40]);
const DIFFUSION_PATH: Rgb<u8> = Rgb([150, 40, 200]);
const GOAL: Rgb<u8> = Rgb([20, 160, 20]);

struct Canvas {
    img: RgbImage,
    ppm: f64,
    height_m: f64,
}

impl Canvas {
    fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        (x * self.ppm, (self.height_m - y) * self.ppm)
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn fill_rect(&mut self, r: [f64; 4], c: Rgb<u8>) {
        let (x0, y1) = self.to_px(r[0], r[1]);
        let (x1, y0) = self.to_px(r[2], r[3]);
        for y in y0.round() as i64..y1.round() as i64 {
            for x in x0.round() as i64..x1.round() as i64 {
                self.put(x, y, c);
            }
        }
    }

    fn fill_circle(&mut self, cx: f64, cy: f64, r: f64, c: Rgb<u8>) {
        let (px, py) = self.to_px(cx, cy);
        let rp = r * self.ppm;
        let ri = rp.ceil() as i64;
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if ((dx * dx + dy * dy) as f64) <= rp * rp {
                    self.put(px.round() as i64 + dx, py.round() as i64 + dy, c);
                }
            }
        }
    }

    fn line(&mut self, a: [f64; 2], b: [f64; 2], c: Rgb<u8>) {
        let (x0, y0) = self.to_px(a[0], a[1]);
        let (x1, y1) = self.to_px(b[0], b[1]);
        let n = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            self.put((x0 + (x1 - x0) * t).round() as i64, (y0 + (y1 - y0) * t).round() as i64, c);
        }
    }
}

/// Draws one high-level step: the world before the step, the chosen goal and
/// the path that was driven.
pub fn render_record(rec: &ReplayRecord, width_m: f64, height_m: f64, style: &Style) -> RgbImage {
    let w = (width_m * style.pixels_per_meter).ceil() as u32;
    let h = (height_m * style.pixels_per_meter).ceil() as u32;
    let mut cv = Canvas { img: RgbImage::from_pixel(w.max(1), h.max(1), BACKGROUND), ppm: style.pixels_per_meter, height_m };
    let s = &rec.state;
    cv.fill_rect(s.receptacle, RECEPTACLE);
    for o in &s.obstacles {
        cv.fill_rect(*o, OBSTACLE);
    }
    let half = style.box_side / 2.0;
    for b in &s.boxes {
        cv.fill_rect([b[0] - half, b[1] - half, b[0] + half, b[1] + half], BOX);
    }
    if let Some(path) = &rec.path {
        let color = if rec.used_diffusion { DIFFUSION_PATH } else { PATH };
        for seg in path.windows(2) {
            cv.line(seg[0], seg[1], color);
        }
    }
    if let Some(g) = rec.goal {
        cv.fill_circle(g[0], g[1], 0.06, GOAL);
    }
    let [rx, ry, th] = s.robot;
    cv.fill_circle(rx, ry, style.robot_radius, ROBOT);
    let tip = [rx + style.robot_radius * th.cos(), ry + style.robot_radius * th.sin()];
    cv.line([rx, ry], tip, BACKGROUND);
    let corners = [[0.0, 0.0], [width_m, 0.0], [width_m, height_m], [0.0, height_m], [0.0, 0.0]];
    for seg in corners.windows(2) {
        cv.line(seg[0], seg[1], WALL);
    }
    cv.img
}

/// Writes `frame_0000.png`, ... into `out_dir` and returns the paths.
pub fn render_replay(records: &[ReplayRecord], width_m: f64, height_m: f64, out_dir: &Path, style: &Style) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = out_dir.join(format!("frame_{i:04}.png"));
            render_record(r, width_m, height_m, style).save(&p).with_context(|| format!("cannot write {}", p.display()))?;
            Ok(p)
        })
        .collect()
}

/// World extent implied by a replay: the far corner of everything drawn,
/// rounded up to half a meter.
pub fn infer_extent(records: &[ReplayRecord]) -> (f64, f64) {
    let (mut w, mut h) = (0.0f64, 0.0f64);
    for r in records {
        w = w.max(r.state.receptacle[2]);
        h = h.max(r.state.receptacle[3]);
        for o in &r.state.obstacles {
            w = w.max(o[2]);
            h = h.max(o[3]);
        }
    }
    ((w * 2.0).ceil() / 2.0, (h * 2.0).ceil() / 2.0)
}
