//! Row-major 2D storage for images, masks and label maps.

/// Dense H×W grid stored row-major. Used for intensity and depth images,
/// flow components, validity masks and cluster label maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    /// Wrap an existing row-major buffer. Panics if the length does not
    /// match `width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid buffer size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_size<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Iterate `(x, y, &value)` in row-major order.
    pub fn iter_pixels(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (i % w, i / w, v))
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value;
    }
}

impl Grid<f64> {
    /// Bilinear sample at continuous coordinates. `(0, 0)` is the center of
    /// the top-left pixel. Returns `None` when the 2×2 support is not fully
    /// inside the image.
    #[inline]
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let x0 = u.floor() as usize;
        let y0 = v.floor() as usize;
        if x0 + 1 >= self.width || y0 + 1 >= self.height {
            // Exactly on the last row/column still has full support when the
            // fractional part is zero.
            if u == (self.width - 1) as f64 && v <= (self.height - 1) as f64 && v.fract() == 0.0 {
                return Some(self.get(self.width - 1, v as usize));
            }
            if v == (self.height - 1) as f64 && u <= (self.width - 1) as f64 && u.fract() == 0.0 {
                return Some(self.get(u as usize, self.height - 1));
            }
            return None;
        }
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let p00 = self.get(x0, y0);
        let p10 = self.get(x0 + 1, y0);
        let p01 = self.get(x0, y0 + 1);
        let p11 = self.get(x0 + 1, y0 + 1);
        Some(
            p00 * (1.0 - fx) * (1.0 - fy)
                + p10 * fx * (1.0 - fy)
                + p01 * (1.0 - fx) * fy
                + p11 * fx * fy,
        )
    }

    /// Bilinear sample of a depth image: all four taps must be valid
    /// (strictly positive), otherwise `None`.
    #[inline]
    pub fn sample_bilinear_depth(&self, u: f64, v: f64) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let x0 = u.floor() as usize;
        let y0 = v.floor() as usize;
        if x0 + 1 >= self.width || y0 + 1 >= self.height {
            return None;
        }
        let p00 = self.get(x0, y0);
        let p10 = self.get(x0 + 1, y0);
        let p01 = self.get(x0, y0 + 1);
        let p11 = self.get(x0 + 1, y0 + 1);
        if p00 <= 0.0 || p10 <= 0.0 || p01 <= 0.0 || p11 <= 0.0 {
            return None;
        }
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        Some(
            p00 * (1.0 - fx) * (1.0 - fy)
                + p10 * fx * (1.0 - fy)
                + p01 * (1.0 - fx) * fy
                + p11 * fx * fy,
        )
    }

    /// 2× downsampling by averaging each 2×2 block. Odd trailing rows and
    /// columns are dropped.
    pub fn downsample_mean(&self) -> Grid<f64> {
        let w = self.width / 2;
        let h = self.height / 2;
        Grid::from_fn(w, h, |x, y| {
            let (sx, sy) = (2 * x, 2 * y);
            0.25 * (self.get(sx, sy)
                + self.get(sx + 1, sy)
                + self.get(sx, sy + 1)
                + self.get(sx + 1, sy + 1))
        })
    }

    /// 2× downsampling of a depth image by the median of the valid entries
    /// in each 2×2 block (mean would blur across depth discontinuities).
    /// A block with no valid entry yields 0 (invalid).
    pub fn downsample_depth_median(&self) -> Grid<f64> {
        let w = self.width / 2;
        let h = self.height / 2;
        Grid::from_fn(w, h, |x, y| {
            let (sx, sy) = (2 * x, 2 * y);
            let mut vals = [0.0f64; 4];
            let mut n = 0;
            for v in [
                self.get(sx, sy),
                self.get(sx + 1, sy),
                self.get(sx, sy + 1),
                self.get(sx + 1, sy + 1),
            ] {
                if v > 0.0 {
                    vals[n] = v;
                    n += 1;
                }
            }
            if n == 0 {
                return 0.0;
            }
            let vals = &mut vals[..n];
            vals.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            if n % 2 == 1 {
                vals[n / 2]
            } else {
                0.5 * (vals[n / 2 - 1] + vals[n / 2])
            }
        })
    }

    /// Central-difference gradient images. Borders use one-sided differences.
    pub fn gradients(&self) -> (Grid<f64>, Grid<f64>) {
        let (w, h) = (self.width, self.height);
        let gx = Grid::from_fn(w, h, |x, y| {
            if w < 2 {
                0.0
            } else if x == 0 {
                self.get(1, y) - self.get(0, y)
            } else if x == w - 1 {
                self.get(w - 1, y) - self.get(w - 2, y)
            } else {
                0.5 * (self.get(x + 1, y) - self.get(x - 1, y))
            }
        });
        let gy = Grid::from_fn(w, h, |x, y| {
            if h < 2 {
                0.0
            } else if y == 0 {
                self.get(x, 1) - self.get(x, 0)
            } else if y == h - 1 {
                self.get(x, h - 1) - self.get(x, h - 2)
            } else {
                0.5 * (self.get(x, y + 1) - self.get(x, y - 1))
            }
        });
        (gx, gy)
    }

    /// Gradient images of a depth map: central differences where both
    /// neighbours are valid, one-sided where one is, zero otherwise.
    pub fn gradients_depth(&self) -> (Grid<f64>, Grid<f64>) {
        let (w, h) = (self.width, self.height);
        let diff = |a: f64, b: f64, two_sided: bool| -> f64 {
            match (a > 0.0, b > 0.0) {
                (true, true) => {
                    if two_sided {
                        0.5 * (b - a)
                    } else {
                        b - a
                    }
                }
                _ => 0.0,
            }
        };
        let gx = Grid::from_fn(w, h, |x, y| {
            if self.get(x, y) <= 0.0 || w < 2 {
                return 0.0;
            }
            if x == 0 {
                diff(self.get(0, y), self.get(1, y), false)
            } else if x == w - 1 {
                diff(self.get(w - 2, y), self.get(w - 1, y), false)
            } else {
                let (a, b) = (self.get(x - 1, y), self.get(x + 1, y));
                if a > 0.0 && b > 0.0 {
                    diff(a, b, true)
                } else if b > 0.0 {
                    diff(self.get(x, y), b, false)
                } else if a > 0.0 {
                    diff(a, self.get(x, y), false)
                } else {
                    0.0
                }
            }
        });
        let gy = Grid::from_fn(w, h, |x, y| {
            if self.get(x, y) <= 0.0 || h < 2 {
                return 0.0;
            }
            if y == 0 {
                diff(self.get(x, 0), self.get(x, 1), false)
            } else if y == h - 1 {
                diff(self.get(x, h - 2), self.get(x, h - 1), false)
            } else {
                let (a, b) = (self.get(x, y - 1), self.get(x, y + 1));
                if a > 0.0 && b > 0.0 {
                    diff(a, b, true)
                } else if b > 0.0 {
                    diff(self.get(x, y), b, false)
                } else if a > 0.0 {
                    diff(a, self.get(x, y), false)
                } else {
                    0.0
                }
            }
        });
        (gx, gy)
    }
}
