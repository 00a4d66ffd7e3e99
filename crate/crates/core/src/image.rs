//! Grayscale intensity grids.

/// Row-major `height x width` intensity image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Shifted copy: output pixel `(x, y)` reads input `(x - dx, y - dy)`,
    /// `fill` where that falls outside.
    pub fn shifted(&self, dx: isize, dy: isize, fill: f64) -> Image {
        Image::from_fn(self.width, self.height, |x, y| {
            let sx = x as isize - dx;
            let sy = y as isize - dy;
            if sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height {
                self.get(sx as usize, sy as usize)
            } else {
                fill
            }
        })
    }

    /// Mean magnitude of the forward-difference gradient.
    pub fn mean_gradient_magnitude(&self) -> f64 {
        if self.width < 2 || self.height < 2 {
            return 0.0;
        }
        let mut acc = 0.0;
        for y in 0..self.height - 1 {
            for x in 0..self.width - 1 {
                let gx = self.get(x + 1, y) - self.get(x, y);
                let gy = self.get(x, y + 1) - self.get(x, y);
                acc += gx.hypot(gy);
            }
        }
        acc / ((self.width - 1) * (self.height - 1)) as f64
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }
}
