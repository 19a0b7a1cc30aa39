//! Periodic lattice `[0,L)^3` with `N` points per axis, real fields on it and
//! the `SWE3` binary dump.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Box side length.
    pub l: f64,
    /// Points per dimension.
    pub n: usize,
}

impl Grid {
    pub fn new(l: f64, n: usize) -> Result<Self> {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidGrid(format!("side length must be positive, got {l}")));
        }
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!("N must be even and >= 4, got {n}")));
        }
        Ok(Self { l, n })
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.l / self.n as f64
    }

    /// Number of lattice points, `N^3`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(3)
    }

    pub fn volume(&self) -> f64 {
        self.l.powi(3)
    }

    /// Row-major index with x fastest.
    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.n * (iy + self.n * iz)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx % n, (idx / n) % n, idx / (n * n)]
    }

    /// Index of the point displaced by `offset` lattice cells, wrapping.
    #[inline]
    pub fn shift(&self, idx: usize, offset: [i64; 3]) -> usize {
        let n = self.n as i64;
        let c = self.coords(idx);
        let w = |a: usize, d: i64| ((a as i64 + d).rem_euclid(n)) as usize;
        self.index(w(c[0], offset[0]), w(c[1], offset[1]), w(c[2], offset[2]))
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        let dx = self.dx();
        [c[0] as f64 * dx, c[1] as f64 * dx, c[2] as f64 * dx]
    }

    /// Signed integer frequency of array slot `i` along one axis, in
    /// `{-N/2, …, N/2-1}`.
    #[inline]
    pub fn freq(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    pub fn wavenumber(&self, idx: usize) -> [i64; 3] {
        let c = self.coords(idx);
        [self.freq(c[0]), self.freq(c[1]), self.freq(c[2])]
    }

    /// Frequency vector `ξ_k = 2πk/L`.
    pub fn xi(&self, idx: usize) -> [f64; 3] {
        let k = self.wavenumber(idx);
        let s = std::f64::consts::TAU / self.l;
        [k[0] as f64 * s, k[1] as f64 * s, k[2] as f64 * s]
    }

    pub fn xi_norm(&self, idx: usize) -> f64 {
        let x = self.xi(idx);
        (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
    }

    /// `|ξ_k|` for every lattice slot.
    pub fn xi_norms(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.xi_norm(i)).collect()
    }

    /// Slot holding the frequency `-k`.
    pub fn partner(&self, idx: usize) -> usize {
        let n = self.n;
        let c = self.coords(idx);
        let neg = |a: usize| (n - a) % n;
        self.index(neg(c[0]), neg(c[1]), neg(c[2]))
    }

    /// Minimum-image displacement between two lattice points, physical units.
    pub fn min_image(&self, a: usize, b: usize) -> [f64; 3] {
        let ca = self.coords(a);
        let cb = self.coords(b);
        let n = self.n as i64;
        let dx = self.dx();
        let mut out = [0.0; 3];
        for d in 0..3 {
            let mut k = (cb[d] as i64 - ca[d] as i64).rem_euclid(n);
            if k > n / 2 {
                k -= n;
            }
            out[d] = k as f64 * dx;
        }
        out
    }

    pub fn min_image_distance(&self, a: usize, b: usize) -> f64 {
        let d = self.min_image(a, b);
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    /// Minimum-image distance from lattice point `idx` to an arbitrary point.
    pub fn distance_to(&self, idx: usize, p: [f64; 3]) -> f64 {
        let x = self.position(idx);
        let mut s = 0.0;
        for d in 0..3 {
            let mut r = (x[d] - p[d]).rem_euclid(self.l);
            if r > self.l / 2.0 {
                r -= self.l;
            }
            s += r * r;
        }
        s.sqrt()
    }

    pub fn center(&self) -> [f64; 3] {
        let h = (self.n / 2) as f64 * self.dx();
        [h, h, h]
    }

    pub fn center_index(&self) -> usize {
        let h = self.n / 2;
        self.index(h, h, h)
    }
}

/// A real scalar snapshot on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
}

const MAGIC: &[u8; 4] = b"SWE3";
pub const DUMP_VERSION: u32 = 1;

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            values: vec![c; grid.len()],
            grid,
        }
    }

    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::param(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite field value at index {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.position(i))).collect();
        Self { grid, values }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `Σ_x f(x) g(x) dx^3`.
    pub fn inner(&self, other: &Field) -> f64 {
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        s * self.grid.cell_volume()
    }

    pub fn sub(&self, other: &Field) -> Field {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Field {
            grid: self.grid,
            values,
        }
    }

    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(self.grid.n as u32).to_le_bytes())?;
        w.write_all(&self.grid.l.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Field> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != DUMP_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let l = f64::from_le_bytes(b8);
        let grid = Grid::new(l, n).map_err(|e| Error::Format(e.to_string()))?;
        let mut payload = vec![0u8; grid.len() * 8];
        r.read_exact(&mut payload)?;
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Field { grid, values })
    }
}
