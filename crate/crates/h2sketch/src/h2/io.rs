//! Binary container for H^2 matrices and the square dense-matrix file format.
//!
//! Everything is little-endian. The matrix tree is rebuilt from the stored
//! tree and admissibility parameter, which reproduces the partition exactly
//! because bounding boxes are stored bit-for-bit.

use std::path::Path;

use ndarray::Array2;

use crate::cluster::{ClusterNode, ClusterTree};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::h2::{BlockStore, H2Matrix};
use crate::mtree::build_matrix_tree;

const MAGIC: &[u8; 8] = b"H2SKETCH";
const DENSE_MAGIC: &[u8; 4] = b"H2DF";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn matrix(&mut self, m: &Array2<f64>) {
        self.u64(m.nrows() as u64);
        self.u64(m.ncols() as u64);
        for v in m.iter() {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.buf.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self) -> Result<Array2<f64>> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Format(format!("bad matrix shape: {e}")))
    }
}

impl H2Matrix {
    /// Serializes to the single-file binary container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let tree = &self.tree;
        w.u64(tree.n() as u64);
        w.u64(tree.leaf_size() as u64);
        w.u64(tree.levels() as u64);
        w.f64(self.mtree.eta());
        for &p in tree.perm() {
            w.u64(p as u64);
        }
        for level in 1..=tree.levels() {
            for idx in 0..tree.level_len(level) {
                let node = tree.node(level, idx);
                w.u64(node.begin as u64);
                w.u64(node.end as u64);
                for d in 0..3 {
                    w.f64(node.bbox.min[d]);
                }
                for d in 0..3 {
                    w.f64(node.bbox.max[d]);
                }
            }
        }
        for id in 0..tree.num_clusters() {
            w.u64(self.ranks[id] as u64);
            for &s in &self.skeletons[id] {
                w.u64(s as u64);
            }
        }
        for base in &self.bases {
            w.matrix(base);
        }
        for t in &self.transfers {
            w.matrix(t);
        }
        for level in 1..=self.couplings.num_levels() {
            let upper: Vec<_> =
                self.couplings.level(level).iter().filter(|((s, t), _)| s <= t).collect();
            w.u64(upper.len() as u64);
            for (&(s, t), block) in upper {
                w.u64(s as u64);
                w.u64(t as u64);
                w.matrix(block);
            }
        }
        for level in 1..=self.dense.num_levels() {
            let items = self.dense.level(level);
            w.u64(items.len() as u64);
            for (&(s, t), block) in items {
                w.u64(s as u64);
                w.u64(t as u64);
                w.matrix(block);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n = r.u64()? as usize;
        let leaf_size = r.u64()? as usize;
        let levels = r.u64()? as usize;
        let eta = r.f64()?;
        let mut perm = Vec::with_capacity(n);
        for _ in 0..n {
            perm.push(r.u64()? as usize);
        }
        let mut nodes = Vec::new();
        for level in 1..=levels {
            for _ in 0..1usize << (levels - level) {
                let begin = r.u64()? as usize;
                let end = r.u64()? as usize;
                let mut bbox = BoundingBox::empty();
                for d in 0..3 {
                    bbox.min[d] = r.f64()?;
                }
                for d in 0..3 {
                    bbox.max[d] = r.f64()?;
                }
                nodes.push(ClusterNode { begin, end, bbox, level });
            }
        }
        let tree = ClusterTree::from_parts(n, leaf_size, levels, perm, nodes);
        let mtree = build_matrix_tree(&tree, eta)?;

        let num_clusters = tree.num_clusters();
        let mut ranks = Vec::with_capacity(num_clusters);
        let mut skeletons = Vec::with_capacity(num_clusters);
        for _ in 0..num_clusters {
            let rank = r.u64()? as usize;
            ranks.push(rank);
            let mut skel = Vec::with_capacity(rank);
            for _ in 0..rank {
                skel.push(r.u64()? as usize);
            }
            skeletons.push(skel);
        }
        let mut bases = Vec::with_capacity(tree.level_len(1));
        for _ in 0..tree.level_len(1) {
            bases.push(r.matrix()?);
        }
        let mut transfers = Vec::with_capacity(num_clusters);
        for _ in 0..num_clusters {
            transfers.push(r.matrix()?);
        }
        let mut couplings = BlockStore::new(levels);
        for level in 1..=levels {
            let count = r.u64()? as usize;
            for _ in 0..count {
                let s = r.u64()? as u32;
                let t = r.u64()? as u32;
                let block = r.matrix()?;
                couplings.insert(level, t, s, block.t().to_owned());
                couplings.insert(level, s, t, block);
            }
        }
        let mut dense = BlockStore::new(levels);
        for level in 1..=levels {
            let count = r.u64()? as usize;
            for _ in 0..count {
                let s = r.u64()? as u32;
                let t = r.u64()? as u32;
                dense.insert(level, s, t, r.matrix()?);
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok(H2Matrix::from_parts(tree, mtree, ranks, skeletons, bases, transfers, couplings, dense))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Writes a square dense matrix: magic, `n: u64`, then `n^2` row-major f64.
pub fn write_dense_file(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::InvalidParameter("dense file matrices must be square".into()));
    }
    let mut buf = Vec::with_capacity(12 + matrix.len() * 8);
    buf.extend_from_slice(DENSE_MAGIC);
    buf.extend_from_slice(&(matrix.nrows() as u64).to_le_bytes());
    for v in matrix.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_dense_file(path: &Path) -> Result<Array2<f64>> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes);
    if r.take(4)? != DENSE_MAGIC {
        return Err(Error::Format("bad dense file magic".into()));
    }
    let n = r.u64()? as usize;
    let mut data = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        data.push(r.f64()?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes in dense file".into()));
    }
    Array2::from_shape_vec((n, n), data).map_err(|e| Error::Format(format!("bad shape: {e}")))
}
