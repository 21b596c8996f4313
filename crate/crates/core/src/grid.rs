//! Row-major sample grids and resampling primitives.
//!
//! `Grid<T>` is the storage shared by panoramas, perspective captures,
//! label maps and bias lattices. Interpolation goes through [`Texel`] so
//! that color and scalar channels resample bilinearly while masks and
//! labels stay nearest-neighbor (preserving {0,1} and id sets).

/// Dense row-major grid of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Grid { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length mismatch");
        Grid { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> T {
        debug_assert!(u < self.width && v < self.height);
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: T) {
        debug_assert!(u < self.width && v < self.height);
        self.data[v * self.width + u] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&t| f(t)).collect(),
        }
    }
}

/// How out-of-range sample coordinates are folded back into the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrapMode {
    /// Clamp to the nearest valid texel (both axes).
    Clamp,
    /// Wrap horizontally (azimuth seam), clamp vertically (poles).
    WrapU,
}

fn fold(i: i64, n: usize, wrap: bool) -> usize {
    let n_i = n as i64;
    if wrap {
        (((i % n_i) + n_i) % n_i) as usize
    } else {
        i.clamp(0, n_i - 1) as usize
    }
}

/// Sample types that know how to blend for interpolation.
pub trait Texel: Copy {
    fn blend(samples: [Self; 4], wu: f64, wv: f64) -> Self;
}

impl Texel for f32 {
    fn blend(s: [f32; 4], wu: f64, wv: f64) -> f32 {
        let top = s[0] as f64 * (1.0 - wu) + s[1] as f64 * wu;
        let bot = s[2] as f64 * (1.0 - wu) + s[3] as f64 * wu;
        (top * (1.0 - wv) + bot * wv) as f32
    }
}

impl Texel for f64 {
    fn blend(s: [f64; 4], wu: f64, wv: f64) -> f64 {
        let top = s[0] * (1.0 - wu) + s[1] * wu;
        let bot = s[2] * (1.0 - wu) + s[3] * wu;
        top * (1.0 - wv) + bot * wv
    }
}

impl Texel for [u8; 3] {
    fn blend(s: [[u8; 3]; 4], wu: f64, wv: f64) -> [u8; 3] {
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = s[0][c] as f64 * (1.0 - wu) + s[1][c] as f64 * wu;
            let bot = s[2][c] as f64 * (1.0 - wu) + s[3][c] as f64 * wu;
            out[c] = (top * (1.0 - wv) + bot * wv).round().clamp(0.0, 255.0) as u8;
        }
        out
    }
}

impl Texel for [f32; 3] {
    fn blend(s: [[f32; 3]; 4], wu: f64, wv: f64) -> [f32; 3] {
        let mut out = [0f32; 3];
        for c in 0..3 {
            let top = s[0][c] as f64 * (1.0 - wu) + s[1][c] as f64 * wu;
            let bot = s[2][c] as f64 * (1.0 - wu) + s[3][c] as f64 * wu;
            out[c] = (top * (1.0 - wv) + bot * wv) as f32;
        }
        out
    }
}

impl<T: Texel> Grid<T> {
    /// Bilinear sample at continuous pixel coordinates (texel centers at
    /// integer + 0.5).
    pub fn sample_bilinear(&self, u: f64, v: f64, mode: WrapMode) -> T {
        let x = u - 0.5;
        let y = v - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let wu = x - x0;
        let wv = y - y0;
        let wrap_u = mode == WrapMode::WrapU;
        let u0 = fold(x0 as i64, self.width, wrap_u);
        let u1 = fold(x0 as i64 + 1, self.width, wrap_u);
        let v0 = fold(y0 as i64, self.height, false);
        let v1 = fold(y0 as i64 + 1, self.height, false);
        T::blend(
            [self.get(u0, v0), self.get(u1, v0), self.get(u0, v1), self.get(u1, v1)],
            wu,
            wv,
        )
    }
}

impl<T: Copy> Grid<T> {
    /// Nearest-neighbor sample at continuous pixel coordinates.
    pub fn sample_nearest(&self, u: f64, v: f64, mode: WrapMode) -> T {
        let wrap_u = mode == WrapMode::WrapU;
        let ui = fold(u.floor() as i64, self.width, wrap_u);
        let vi = fold(v.floor() as i64, self.height, false);
        self.get(ui, vi)
    }
}
