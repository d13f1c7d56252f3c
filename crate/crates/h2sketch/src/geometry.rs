//! Point sets in the unit cube and their axis-aligned bounding boxes.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng;

/// A set of `n` points in `dim` dimensions, coordinates stored point-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    /// Wraps raw point-major coordinates. Rejects empty or non-finite input.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidParameter(format!("dim must be 1..=3, got {dim}")));
        }
        if coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "coordinate buffer length {} is not a positive multiple of dim {dim}",
                coords.len()
            )));
        }
        if !coords.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFiniteCoordinates);
        }
        Ok(Self { dim, coords })
    }

    /// Regular lattice in the unit cube including the endpoints.
    /// `n` must be a perfect `dim`-th power.
    pub fn grid(n: usize, dim: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        let side = (n as f64).powf(1.0 / dim as f64).round() as usize;
        if side.pow(dim as u32) != n {
            return Err(Error::NotAGrid { n, dim });
        }
        let h = if side > 1 { 1.0 / (side - 1) as f64 } else { 0.0 };
        let mut coords = Vec::with_capacity(n * dim);
        for i in 0..n {
            let mut rest = i;
            for _ in 0..dim {
                coords.push((rest % side) as f64 * h);
                rest /= side;
            }
        }
        Self::new(dim, coords)
    }

    /// I.i.d. uniform points in `[0,1]^dim`, reproducible across runs and
    /// thread counts via the counter-based generator.
    pub fn uniform_random(n: usize, dim: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        let mut coords = Vec::with_capacity(n * dim);
        for i in 0..n {
            for d in 0..dim {
                coords.push(rng::uniform(seed, rng::stream::POINTS, 0, i as u64, d as u64));
            }
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Coordinates of point `i`.
    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Reorders points so that new index `k` holds old point `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(self.coords.len());
        for &p in perm {
            coords.extend_from_slice(self.point(p));
        }
        Self { dim: self.dim, coords }
    }

    /// Euclidean distance between points `i` and `j`.
    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let a = self.point(i);
        let b = self.point(j);
        let mut s = 0.0;
        for d in 0..self.dim {
            let t = a[d] - b[d];
            s += t * t;
        }
        s.sqrt()
    }

    /// Writes the binary layout `dim: u32, n: u64, coords: n*dim f64`, little-endian.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&(self.dim as u32).to_le_bytes())?;
        f.write_all(&(self.len() as u64).to_le_bytes())?;
        for c in &self.coords {
            f.write_all(&c.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    /// Reads the layout written by [`PointSet::write_file`].
    pub fn read_file(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        f.read_exact(&mut u32buf)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        f.read_exact(&mut u64buf)?;
        let n = u64::from_le_bytes(u64buf) as usize;
        if !(1..=3).contains(&dim) {
            return Err(Error::Format(format!("bad dim {dim} in point file")));
        }
        let mut coords = vec![0.0; n * dim];
        for c in coords.iter_mut() {
            f.read_exact(&mut u64buf)?;
            *c = f64::from_le_bytes(u64buf);
        }
        Self::new(dim, coords)
    }
}

/// Axis-aligned bounding box; unused trailing dimensions stay at zero width.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoundingBox {
    pub fn empty() -> Self {
        Self { min: [f64::INFINITY; 3], max: [f64::NEG_INFINITY; 3] }
    }

    pub fn of_points(points: &PointSet, indices: impl Iterator<Item = usize>) -> Self {
        let mut bb = Self::empty();
        for i in indices {
            let p = points.point(i);
            for d in 0..points.dim() {
                bb.min[d] = bb.min[d].min(p[d]);
                bb.max[d] = bb.max[d].max(p[d]);
            }
        }
        for d in points.dim()..3 {
            bb.min[d] = 0.0;
            bb.max[d] = 0.0;
        }
        bb
    }

    /// Length of the box diagonal.
    pub fn diameter(&self) -> f64 {
        let mut s = 0.0;
        for d in 0..3 {
            let t = self.max[d] - self.min[d];
            s += t * t;
        }
        s.sqrt()
    }

    /// Minimum Euclidean distance between two boxes; zero if they touch or overlap.
    pub fn distance(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for d in 0..3 {
            let gap = (self.min[d] - other.max[d]).max(other.min[d] - self.max[d]).max(0.0);
            s += gap * gap;
        }
        s.sqrt()
    }

    /// Index of the longest edge, ties broken toward the lowest dimension.
    pub fn longest_axis(&self) -> usize {
        let mut best = 0;
        let mut best_len = self.max[0] - self.min[0];
        for d in 1..3 {
            let len = self.max[d] - self.min[d];
            if len > best_len {
                best = d;
                best_len = len;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_corners() {
        let ps = PointSet::grid(8, 3).unwrap();
        assert_eq!(ps.len(), 8);
        for i in 0..8 {
            for c in ps.point(i) {
                assert!(*c == 0.0 || *c == 1.0);
            }
        }
    }

    #[test]
    fn grid_spacing() {
        let ps = PointSet::grid(27, 3).unwrap();
        for i in 0..27 {
            for c in ps.point(i) {
                assert!(*c == 0.0 || *c == 0.5 || *c == 1.0);
            }
        }
    }

    #[test]
    fn grid_rejects_non_powers() {
        assert!(matches!(PointSet::grid(10, 3), Err(Error::NotAGrid { .. })));
    }

    #[test]
    fn random_points_reproducible() {
        let a = PointSet::uniform_random(1000, 3, 11).unwrap();
        let b = PointSet::uniform_random(1000, 3, 11).unwrap();
        assert_eq!(a, b);
        let c = PointSet::uniform_random(1000, 3, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            PointSet::new(2, vec![0.0, f64::NAN]),
            Err(Error::NonFiniteCoordinates)
        ));
    }

    #[test]
    fn point_file_round_trip() {
        let ps = PointSet::uniform_random(123, 2, 5).unwrap();
        let dir = std::env::temp_dir().join("h2sketch_geom_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pts.bin");
        ps.write_file(&path).unwrap();
        let back = PointSet::read_file(&path).unwrap();
        assert_eq!(ps, back);
    }

    #[test]
    fn box_distance_and_diameter() {
        let a = BoundingBox { min: [0.0; 3], max: [1.0, 1.0, 0.0] };
        let b = BoundingBox { min: [3.0, 0.0, 0.0], max: [4.0, 1.0, 0.0] };
        assert_eq!(a.distance(&b), 2.0);
        assert_eq!(a.distance(&a), 0.0);
        assert!((a.diameter() - 2f64.sqrt()).abs() < 1e-15);
    }
}
