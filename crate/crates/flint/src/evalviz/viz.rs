//! Figure emitters: density renders, HSV flow images, arrow glyphs, and
//! difference maps.

use std::path::Path;

use crate::error::{FlintError, Result};
use crate::field::{FlowField, ScalarField};

#[derive(Clone, Debug)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB8.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn blank(width: usize, height: usize, fill: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn put(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        if y < self.height && x < self.width {
            let i = 3 * (y * self.width + x);
            self.data[i..i + 3].copy_from_slice(&rgb);
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Draw a line segment with a simple DDA rasterizer.
    pub fn line(&mut self, from: (f64, f64), to: (f64, f64), rgb: [u8; 3]) {
        let (y0, x0) = from;
        let (y1, x1) = to;
        let steps = ((y1 - y0).abs().max((x1 - x0).abs()).ceil() as usize).max(1);
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let y = y0 + (y1 - y0) * t;
            let x = x0 + (x1 - x0) * t;
            if y >= 0.0 && x >= 0.0 {
                self.put(y.round() as usize, x.round() as usize, rgb);
            }
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rgb_png(path.as_ref(), self.width as u32, self.height as u32, &self.data)
    }
}

pub fn write_rgb_png(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| FlintError::Data(format!("png header: {e}")))?;
    writer
        .write_image_data(rgb)
        .map_err(|e| FlintError::Data(format!("png payload: {e}")))?;
    Ok(())
}

/// Polynomial fit of the Turbo rainbow colormap.
pub fn turbo(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let r = 0.13572138
        + t * (4.61539260 + t * (-42.66032258 + t * (132.13108234 + t * (-152.94239396 + t * 59.28637943))));
    let g = 0.09140261
        + t * (2.19418839 + t * (4.84296658 + t * (-14.18503333 + t * (4.27729857 + t * 2.82956604))));
    let b = 0.10667330
        + t * (12.64194608 + t * (-60.58204836 + t * (110.36276771 + t * (-89.90310912 + t * 27.34824973))));
    [
        (r.clamp(0.0, 1.0) * 255.0).round() as u8,
        (g.clamp(0.0, 1.0) * 255.0).round() as u8,
        (b.clamp(0.0, 1.0) * 255.0).round() as u8,
    ]
}

/// Render a scalar field through the density colormap over `[lo, hi]`.
pub fn render_density(field: &ScalarField, lo: f32, hi: f32) -> Result<RgbImage> {
    let (h, w) = plane_dims(field)?;
    let span = (hi - lo).max(1e-12);
    let mut img = RgbImage::blank(w, h, [255, 255, 255]);
    for y in 0..h {
        for x in 0..w {
            let v = (field.data[y * w + x] - lo) / span;
            img.put(y, x, turbo(v as f64));
        }
    }
    Ok(img)
}

/// `|a - b| * magnify` through the density colormap, clamped.
pub fn diff_map(a: &ScalarField, b: &ScalarField, magnify: f64) -> Result<RgbImage> {
    if a.shape != b.shape {
        return Err(FlintError::ShapeMismatch(format!(
            "diff_map shapes {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let (h, w) = plane_dims(a)?;
    let mut img = RgbImage::blank(w, h, [255, 255, 255]);
    for y in 0..h {
        for x in 0..w {
            let d = (a.data[y * w + x] as f64 - b.data[y * w + x] as f64).abs() * magnify;
            img.put(y, x, turbo(d.clamp(0.0, 1.0)));
        }
    }
    Ok(img)
}

fn plane_dims(f: &ScalarField) -> Result<(usize, usize)> {
    if f.dims() != 2 {
        return Err(FlintError::Contract(
            "figure emitters take 2D fields; slice volumes first".into(),
        ));
    }
    Ok((f.shape[0], f.shape[1]))
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}

/// Direction angle of a flow vector in [0, 1) turns (hue convention used by
/// the HSV flow rendering).
pub fn flow_hue(vy: f64, vx: f64) -> f64 {
    (vy.atan2(vx) + std::f64::consts::PI) / std::f64::consts::TAU % 1.0
}

/// HSV flow visualization: hue encodes direction, saturation encodes
/// magnitude relative to the given percentile (clamped at 1), value is 1.
/// Zero flow renders white.
pub fn flow_to_hsv(flow: &FlowField, magnitude_percentile: f64) -> Result<RgbImage> {
    if flow.dims() != 2 {
        return Err(FlintError::Contract("hsv rendering takes 2D flow".into()));
    }
    let (h, w) = (flow.shape[0], flow.shape[1]);
    let n = h * w;
    let mags: Vec<f64> = (0..n)
        .map(|p| {
            let vy = flow.data[p] as f64;
            let vx = flow.data[n + p] as f64;
            (vy * vy + vx * vx).sqrt()
        })
        .collect();
    let mut sorted = mags.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite magnitudes"));
    let q = (magnitude_percentile / 100.0).clamp(0.0, 1.0);
    let pos = q * (n - 1) as f64;
    let cap = {
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    };
    let mut img = RgbImage::blank(w, h, [255, 255, 255]);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let vy = flow.data[p] as f64;
            let vx = flow.data[n + p] as f64;
            let mag = mags[p];
            let sat = if cap > 0.0 { (mag / cap).min(1.0) } else { 0.0 };
            let hue = flow_hue(vy, vx);
            img.put(y, x, hsv_to_rgb(hue, sat, 1.0));
        }
    }
    Ok(img)
}

#[derive(Clone, Copy, Debug)]
pub struct Glyph {
    pub y: f64,
    pub x: f64,
    pub vy: f64,
    pub vx: f64,
}

/// Arrow glyphs at every stride-th cell; length is magnitude x scale.
pub fn flow_to_glyphs(flow: &FlowField, stride: usize, scale: f64) -> Result<Vec<Glyph>> {
    if flow.dims() != 2 {
        return Err(FlintError::Contract("glyph rendering takes 2D flow".into()));
    }
    if stride < 1 {
        return Err(FlintError::Contract("glyph stride must be >= 1".into()));
    }
    let (h, w) = (flow.shape[0], flow.shape[1]);
    let n = h * w;
    let mut glyphs = Vec::new();
    for y in (0..h).step_by(stride) {
        for x in (0..w).step_by(stride) {
            let p = y * w + x;
            glyphs.push(Glyph {
                y: y as f64,
                x: x as f64,
                vy: flow.data[p] as f64 * scale,
                vx: flow.data[n + p] as f64 * scale,
            });
        }
    }
    Ok(glyphs)
}

/// Raster rendering of glyphs: zero-length arrows draw as dots.
pub fn render_glyphs(glyphs: &[Glyph], shape: &[usize]) -> RgbImage {
    let (h, w) = (shape[0], shape[1]);
    let mut img = RgbImage::blank(w, h, [255, 255, 255]);
    for g in glyphs {
        let mag = (g.vy * g.vy + g.vx * g.vx).sqrt();
        if mag < 1e-9 {
            img.put(g.y.round() as usize, g.x.round() as usize, [40, 40, 40]);
            continue;
        }
        let tip = (g.y + g.vy, g.x + g.vx);
        img.line((g.y, g.x), tip, [10, 10, 160]);
        // arrowhead: two short barbs at 150 degrees off the shaft
        let ang = g.vy.atan2(g.vx);
        let barb = (mag * 0.3).clamp(1.0, 4.0);
        for side in [-1.0, 1.0] {
            let a = ang + std::f64::consts::PI - side * 0.5;
            img.line(
                tip,
                (tip.0 + barb * a.sin(), tip.1 + barb * a.cos()),
                [10, 10, 160],
            );
        }
    }
    img
}

/// SVG rendering of glyphs (one line element per arrow).
pub fn glyphs_to_svg(glyphs: &[Glyph], shape: &[usize]) -> String {
    let (h, w) = (shape[0], shape[1]);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(
        "<defs><marker id=\"a\" markerWidth=\"6\" markerHeight=\"6\" refX=\"5\" refY=\"3\" orient=\"auto\"><path d=\"M0,0 L6,3 L0,6 z\" fill=\"navy\"/></marker></defs>\n",
    );
    for g in glyphs {
        let mag = (g.vy * g.vy + g.vx * g.vx).sqrt();
        if mag < 1e-9 {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"0.5\" fill=\"gray\"/>\n",
                g.x, g.y
            ));
        } else {
            svg.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"navy\" stroke-width=\"0.6\" marker-end=\"url(#a)\"/>\n",
                g.x,
                g.y,
                g.x + g.vx,
                g.y + g.vy
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Extract the middle slice along the slowest axis of a 3D field (the 2D
/// stand-in for volume rendering).
pub fn mid_slice(field: &ScalarField) -> Result<ScalarField> {
    if field.dims() == 2 {
        return Ok(field.clone());
    }
    let (d, h, w) = (field.shape[0], field.shape[1], field.shape[2]);
    let z = d / 2;
    let mut out = ScalarField::zeros(&[h, w]);
    out.data
        .copy_from_slice(&field.data[z * h * w..(z + 1) * h * w]);
    out.member_id = field.member_id.clone();
    out.time_index = field.time_index;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_renders_white() {
        let img = flow_to_hsv(&FlowField::zeros(&[6, 6]), 99.0).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(img.pixel(y, x), [255, 255, 255]);
            }
        }
    }

    #[test]
    fn uniform_flow_single_hue_and_saturation() {
        let mut f = FlowField::zeros(&[5, 5]);
        for p in 25..50 {
            f.data[p] = 2.0; // vx = +2
        }
        let img = flow_to_hsv(&f, 99.0).unwrap();
        let first = img.pixel(0, 0);
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(img.pixel(y, x), first, "constant field, constant color");
            }
        }
        assert_ne!(first, [255, 255, 255]);
    }

    #[test]
    fn rotational_field_hue_matches_atan2_oracle() {
        let n = 17usize;
        let c = (n / 2) as f64;
        let mut f = FlowField::zeros(&[n, n]);
        for y in 0..n {
            for x in 0..n {
                let p = y * n + x;
                f.data[p] = (x as f64 - c) as f32; // vy ~ (x - c)
                f.data[n * n + p] = -(y as f64 - c) as f32; // vx ~ -(y - c)
            }
        }
        let img = flow_to_hsv(&f, 100.0).unwrap();
        // hue must sweep the full wheel: sample ring cells, compare to oracle
        let mut seen = [false; 8];
        for y in 0..n {
            for x in 0..n {
                let p = y * n + x;
                let (vy, vx) = (f.data[p] as f64, f.data[n * n + p] as f64);
                if vy == 0.0 && vx == 0.0 {
                    continue;
                }
                let hue = flow_hue(vy, vx);
                seen[(hue * 8.0).floor().min(7.0) as usize] = true;
                // oracle: recompute the expected color independently
                let mag = (vy * vy + vx * vx).sqrt();
                let cap = {
                    // max magnitude at percentile 100
                    let m = (0..n * n)
                        .map(|q| {
                            let a = f.data[q] as f64;
                            let b = f.data[n * n + q] as f64;
                            (a * a + b * b).sqrt()
                        })
                        .fold(0.0, f64::max);
                    m
                };
                let expect = hsv_to_rgb(hue, (mag / cap).min(1.0), 1.0);
                assert_eq!(img.pixel(y, x), expect);
            }
        }
        assert!(seen.iter().all(|&s| s), "hue sweeps the full wheel");
    }

    #[test]
    fn hue_invariant_under_positive_scaling() {
        let mut f = FlowField::zeros(&[4, 4]);
        for p in 0..16 {
            f.data[p] = 1.0;
            f.data[16 + p] = -0.5;
        }
        let mut f2 = f.clone();
        for v in &mut f2.data {
            *v *= 7.0;
        }
        let a = flow_to_hsv(&f, 99.0).unwrap();
        let b = flow_to_hsv(&f2, 99.0).unwrap();
        assert_eq!(a.data, b.data, "saturation saturates, hue preserved");
    }

    #[test]
    fn glyph_count_matches_grid_arithmetic() {
        let f = FlowField::zeros(&[10, 7]);
        for (stride, expect) in [(1usize, 70usize), (2, 20), (3, 12), (16, 1)] {
            let g = flow_to_glyphs(&f, stride, 1.0).unwrap();
            assert_eq!(g.len(), expect, "ceil(10/{stride}) * ceil(7/{stride})");
        }
    }

    #[test]
    fn uniform_flow_parallel_arrows_and_svg() {
        let mut f = FlowField::zeros(&[8, 8]);
        for p in 0..64 {
            f.data[p] = 1.0;
            f.data[64 + p] = 2.0;
        }
        let glyphs = flow_to_glyphs(&f, 4, 1.5).unwrap();
        for g in &glyphs {
            assert_eq!((g.vy, g.vx), (1.5, 3.0));
        }
        let svg = glyphs_to_svg(&glyphs, &[8, 8]);
        assert_eq!(svg.matches("<line").count(), glyphs.len());
        // zero flow -> dots only
        let z = flow_to_glyphs(&FlowField::zeros(&[8, 8]), 4, 1.0).unwrap();
        let svg = glyphs_to_svg(&z, &[8, 8]);
        assert_eq!(svg.matches("<line").count(), 0);
        assert_eq!(svg.matches("<circle").count(), z.len());
    }

    #[test]
    fn diff_map_plain_cases() {
        let a = ScalarField::new(vec![3, 3], vec![0.5; 9]);
        let img = diff_map(&a, &a, 100.0).unwrap();
        let zero_color = turbo(0.0);
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(img.pixel(y, x), zero_color);
            }
        }
        let b = ScalarField::new(vec![3, 3], vec![0.502; 9]);
        let img = diff_map(&a, &b, 100.0).unwrap();
        // constant diff 0.002 magnified 100x renders as 0.2
        let expect = turbo(((0.502f32 - 0.5f32).abs() as f64) * 100.0);
        for y in 0..3 {
            assert_eq!(img.pixel(y, 0), expect);
        }
        assert!(diff_map(&a, &ScalarField::zeros(&[2, 2]), 1.0).is_err());
    }

    #[test]
    fn mid_slice_of_volume() {
        let mut f = ScalarField::zeros(&[4, 3, 3]);
        for (i, v) in f.data.iter_mut().enumerate() {
            *v = i as f32;
        }
        let s = mid_slice(&f).unwrap();
        assert_eq!(s.shape, vec![3, 3]);
        assert_eq!(s.data[0], (2 * 9) as f32);
    }
}
