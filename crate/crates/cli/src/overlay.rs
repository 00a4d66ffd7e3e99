//! Side-by-side match overlays.

use std::path::Path;

use epimatch::estimation::Correspondence;
use epimatch::geometry::{CameraIntrinsics, FundamentalMatrix};
use epimatch::metrics::is_epipolar_inlier;
use epimatch::image::Image as Gray;
use image::{Rgb, RgbImage};

const GREEN: Rgb<u8> = Rgb([40, 220, 60]);
const RED: Rgb<u8> = Rgb([230, 40, 40]);
const YELLOW: Rgb<u8> = Rgb([240, 210, 40]);

/// How overlay lines are coloured.
pub enum Colouring<'a> {
    /// Green below `threshold`, red above, by the squared symmetric
    /// epipolar distance under the ground-truth essential matrix.
    Epipolar { e: &'a FundamentalMatrix, k1: &'a CameraIntrinsics, k2: &'a CameraIntrinsics, threshold: f64 },
    Plain,
}

fn blit(canvas: &mut RgbImage, img: &Gray, x0: u32) {
    let bytes = img.to_u8();
    for y in 0..img.height {
        for x in 0..img.width {
            let v = bytes[y * img.width + x];
            canvas.put_pixel(x0 + x as u32, y as u32, Rgb([v, v, v]));
        }
    }
}

fn draw_line(canvas: &mut RgbImage, a: [f64; 2], b: [f64; 2], colour: Rgb<u8>) {
    let (mut x, mut y) = (a[0].floor() as i64, a[1].floor() as i64);
    let (x1, y1) = (b[0].floor() as i64, b[1].floor() as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x >= 0 && y >= 0 && (x as u32) < canvas.width() && (y as u32) < canvas.height() {
            canvas.put_pixel(x as u32, y as u32, colour);
        }
        if x == x1 && y == y1 {
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

/// Renders both images next to each other with one line per match.
pub fn render(image1: &Gray, image2: &Gray, matches: &[Correspondence], colouring: &Colouring) -> RgbImage {
    let width = (image1.width + image2.width) as u32;
    let height = image1.height.max(image2.height) as u32;
    let mut canvas = RgbImage::new(width, height);
    blit(&mut canvas, image1, 0);
    blit(&mut canvas, image2, image1.width as u32);
    let offset = image1.width as f64;
    for m in matches {
        let (Ok(p1), Ok(p2)) = (m.x1.xy(), m.x2.xy()) else {
            continue;
        };
        let colour = match colouring {
            Colouring::Epipolar { e, k1, k2, threshold } => {
                if is_epipolar_inlier(m, e, k1, k2, *threshold) {
                    GREEN
                } else {
                    RED
                }
            }
            Colouring::Plain => YELLOW,
        };
        draw_line(&mut canvas, p1, [p2[0] + offset, p2[1]], colour);
    }
    canvas
}

pub fn save(path: &Path, img: &RgbImage) -> anyhow::Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_hit_both_endpoints() {
        let mut c = RgbImage::new(20, 10);
        draw_line(&mut c, [1.5, 1.5], [18.2, 8.9], RED);
        assert_eq!(*c.get_pixel(1, 1), RED);
        assert_eq!(*c.get_pixel(18, 8), RED);
        draw_line(&mut c, [-5.0, -5.0], [30.0, 30.0], GREEN);
        assert_eq!(*c.get_pixel(3, 3), GREEN);
    }
}
