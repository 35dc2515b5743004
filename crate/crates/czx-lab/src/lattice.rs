//! Shifted dyadic lattices on the unit torus.
//!
//! A lattice is the standard dyadic grid translated scale-by-scale by binary
//! shift digits: an interval of length 2^-j is translated by
//! sum_{i > j} 2^-i w_i (mod 1). Shifts are truncated to the n active scales
//! of the grid, so every lattice interval is a union of grid cells and the
//! coarsest interval is the full torus. All interval arithmetic is exact
//! integer arithmetic in units of the finest cell.

use crate::error::{LabError, Result};
use crate::grid::{DomainMode, GridGeometry};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One binary shift digit per scale 2^-1 .. 2^-n.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftBits {
    bits: Vec<u8>,
}

impl ShiftBits {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(LabError::Parameter("shift bits must be 0 or 1".into()));
        }
        Ok(ShiftBits { bits })
    }

    pub fn zeros(n: u32) -> Self {
        ShiftBits { bits: vec![0; n as usize] }
    }

    pub fn random(n: u32, rng: &mut impl Rng) -> Self {
        ShiftBits { bits: (0..n).map(|_| rng.gen_range(0..2u8)).collect() }
    }

    pub fn n(&self) -> u32 {
        self.bits.len() as u32
    }

    /// Digit for scale 2^-i, 1-based.
    pub fn bit(&self, i: u32) -> u8 {
        self.bits[(i - 1) as usize]
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }
}

/// Interval of one lattice: side 2^-scale, index in 0..2^scale.
/// Interval identity is only meaningful together with its lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicInterval {
    pub scale: u32,
    pub index: usize,
}

impl DyadicInterval {
    pub fn new(scale: u32, index: usize) -> Self {
        debug_assert!(index < (1usize << scale));
        DyadicInterval { scale, index }
    }

    pub fn len(&self) -> f64 {
        0.5f64.powi(self.scale as i32)
    }
}

/// Axis-parallel dyadic rectangle; `first` lives on the first-coordinate
/// lattice, `second` on the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicRect {
    pub first: DyadicInterval,
    pub second: DyadicInterval,
}

impl DyadicRect {
    pub fn new(first: DyadicInterval, second: DyadicInterval) -> Self {
        DyadicRect { first, second }
    }

    pub fn is_square(&self) -> bool {
        self.first.scale == self.second.scale
    }

    /// Side-length ratio len(first)/len(second) as a power of two.
    pub fn eccentricity_exponent(&self) -> i32 {
        self.second.scale as i32 - self.first.scale as i32
    }

    pub fn area(&self) -> f64 {
        self.first.len() * self.second.len()
    }
}

/// One-dimensional shifted lattice: n scales plus precomputed per-scale
/// shifts in cell units.
#[derive(Debug, Clone)]
pub struct Lattice1d {
    n: u32,
    shift: ShiftBits,
    /// shift_cells[j] = sum_{i>j} 2^{n-i} w_i, for j = 0..=n.
    shift_cells: Vec<usize>,
}

impl Lattice1d {
    pub fn new(n: u32, shift: ShiftBits) -> Result<Self> {
        if n < 1 {
            return Err(LabError::Parameter("resolution exponent n must be >= 1".into()));
        }
        if shift.n() != n {
            return Err(LabError::Parameter(format!(
                "shift has {} bits, lattice needs {}",
                shift.n(),
                n
            )));
        }
        let mut shift_cells = vec![0usize; (n + 1) as usize];
        for j in (0..n).rev() {
            let i = j + 1;
            let add = (shift.bit(i) as usize) * (1usize << (n - i));
            shift_cells[j as usize] = shift_cells[(j + 1) as usize] + add;
        }
        Ok(Lattice1d { n, shift, shift_cells })
    }

    pub fn standard(n: u32) -> Self {
        Self::new(n, ShiftBits::zeros(n)).expect("zero shift is always valid")
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn shift(&self) -> &ShiftBits {
        &self.shift
    }

    #[inline]
    pub fn side(&self) -> usize {
        1usize << self.n
    }

    /// Length of a scale-j interval in cells.
    #[inline]
    pub fn len_cells(&self, scale: u32) -> usize {
        1usize << (self.n - scale)
    }

    /// Left endpoint in cell units, wrapped to [0, 2^n).
    #[inline]
    pub fn left_cells(&self, iv: DyadicInterval) -> usize {
        let base = iv.index << (self.n - iv.scale);
        (base + self.shift_cells[iv.scale as usize]) & (self.side() - 1)
    }

    /// Left endpoint as a coordinate in [0,1).
    pub fn left(&self, iv: DyadicInterval) -> f64 {
        self.left_cells(iv) as f64 / self.side() as f64
    }

    pub fn check_scale(&self, scale: u32) -> Result<()> {
        if scale > self.n {
            return Err(LabError::Resolution(format!(
                "scale {} finer than grid resolution {}",
                scale, self.n
            )));
        }
        Ok(())
    }

    pub fn intervals_at(&self, scale: u32) -> impl Iterator<Item = DyadicInterval> {
        (0..1usize << scale).map(move |m| DyadicInterval::new(scale, m))
    }

    /// Parent interval and the child's position within it (0 = left in
    /// lattice order, 1 = right).
    pub fn parent(&self, iv: DyadicInterval) -> Result<(DyadicInterval, u8)> {
        if iv.scale == 0 {
            return Err(LabError::Range("interval at coarsest scale has no parent".into()));
        }
        let count = 1usize << iv.scale;
        let w = self.shift.bit(iv.scale) as usize;
        let t = (iv.index + count - w) & (count - 1);
        Ok((DyadicInterval::new(iv.scale - 1, t >> 1), (t & 1) as u8))
    }

    /// Children in lattice order (left, right). Splitting follows lattice
    /// index, never raw coordinate, so wrapped intervals split correctly.
    pub fn children(&self, iv: DyadicInterval) -> Result<[DyadicInterval; 2]> {
        let scale = iv.scale + 1;
        self.check_scale(scale)?;
        let count = 1usize << scale;
        let w = self.shift.bit(scale) as usize;
        let l = (2 * iv.index + w) & (count - 1);
        let r = (2 * iv.index + 1 + w) & (count - 1);
        Ok([DyadicInterval::new(scale, l), DyadicInterval::new(scale, r)])
    }

    /// The unique lattice interval of scale `iv.scale - k` containing `iv`.
    pub fn ancestor(&self, iv: DyadicInterval, k: u32) -> Result<DyadicInterval> {
        if k > iv.scale {
            return Err(LabError::Range(format!(
                "ancestor {} levels above scale {} exceeds the coarsest scale",
                k, iv.scale
            )));
        }
        let mut cur = iv;
        for _ in 0..k {
            cur = self.parent(cur)?.0;
        }
        Ok(cur)
    }

    /// Distance (in cells) from `iv` to the boundary of its k-ancestor.
    /// On the torus this coincides with the in-lattice distance
    /// min(offset, ancestor_len - offset - len).
    pub fn boundary_distance_cells(&self, iv: DyadicInterval, k: u32) -> Result<usize> {
        let anc = self.ancestor(iv, k)?;
        let side = self.side();
        let offset = (self.left_cells(iv) + side - self.left_cells(anc)) & (side - 1);
        let len = self.len_cells(iv.scale);
        let anc_len = self.len_cells(anc.scale);
        debug_assert!(offset + len <= anc_len);
        Ok(offset.min(anc_len - offset - len))
    }

    /// k-goodness: distance to the boundary of the k-ancestor is at least a
    /// quarter of the ancestor's side, i.e. 2^{k-2} times the own side.
    pub fn is_k_good(&self, iv: DyadicInterval, k: u32) -> Result<bool> {
        if k < 2 {
            return Err(LabError::Parameter("k-goodness requires k >= 2".into()));
        }
        let d = self.boundary_distance_cells(iv, k)?;
        let threshold = self.len_cells(iv.scale) << (k - 2);
        Ok(d >= threshold)
    }

    /// Interval of the given scale containing cell `c`.
    #[inline]
    pub fn interval_of_cell(&self, scale: u32, c: usize) -> DyadicInterval {
        let side = self.side();
        let rel = (c + side - self.shift_cells[scale as usize]) & (side - 1);
        DyadicInterval::new(scale, rel >> (self.n - scale))
    }

    /// Cells of the interval in lattice order (wrapping on the torus).
    pub fn cells_of(&self, iv: DyadicInterval) -> impl Iterator<Item = usize> + '_ {
        let start = self.left_cells(iv);
        let len = self.len_cells(iv.scale);
        let mask = self.side() - 1;
        (0..len).map(move |t| (start + t) & mask)
    }
}

/// Two-dimensional shifted lattice, one independent shift per coordinate.
/// Immutable after construction; enumeration operations are pure.
#[derive(Debug, Clone)]
pub struct Lattice {
    geom: GridGeometry,
    first: Lattice1d,
    second: Lattice1d,
}

impl Lattice {
    pub fn new(geom: GridGeometry, sigma1: ShiftBits, sigma2: ShiftBits) -> Result<Self> {
        Ok(Lattice {
            geom,
            first: Lattice1d::new(geom.n, sigma1)?,
            second: Lattice1d::new(geom.n, sigma2)?,
        })
    }

    pub fn standard(geom: GridGeometry) -> Self {
        Lattice {
            geom,
            first: Lattice1d::standard(geom.n),
            second: Lattice1d::standard(geom.n),
        }
    }

    pub fn random(geom: GridGeometry, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s1 = ShiftBits::random(geom.n, &mut rng);
        let s2 = ShiftBits::random(geom.n, &mut rng);
        Self::new(geom, s1, s2).expect("random bits are valid")
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geom
    }

    pub fn n(&self) -> u32 {
        self.geom.n
    }

    pub fn axis(&self, i: usize) -> &Lattice1d {
        match i {
            0 => &self.first,
            1 => &self.second,
            _ => panic!("axis index must be 0 or 1"),
        }
    }

    pub fn first(&self) -> &Lattice1d {
        &self.first
    }

    pub fn second(&self) -> &Lattice1d {
        &self.second
    }

    /// All squares at the given scale.
    pub fn squares_at(&self, scale: u32) -> Vec<DyadicRect> {
        let count = 1usize << scale;
        let mut out = Vec::with_capacity(count * count);
        for m1 in 0..count {
            for m2 in 0..count {
                out.push(DyadicRect::new(
                    DyadicInterval::new(scale, m1),
                    DyadicInterval::new(scale, m2),
                ));
            }
        }
        out
    }

    /// All rectangles with len(first) = 2^ecc_exp * len(second) and the
    /// requested second-coordinate scale.
    pub fn enumerate_family(&self, ecc_exp: i32, scale2: u32) -> Result<Vec<DyadicRect>> {
        let j2 = scale2 as i64;
        let j1 = j2 - ecc_exp as i64;
        if j1 < 0 || j1 > self.geom.n as i64 || j2 > self.geom.n as i64 {
            return Err(LabError::Parameter(format!(
                "eccentricity 2^{} at second-scale {} is not representable with n = {}",
                ecc_exp, scale2, self.geom.n
            )));
        }
        let (j1, j2) = (j1 as u32, j2 as u32);
        let mut out = Vec::with_capacity(1usize << (j1 + j2));
        for m1 in 0..1usize << j1 {
            for m2 in 0..1usize << j2 {
                out.push(DyadicRect::new(
                    DyadicInterval::new(j1, m1),
                    DyadicInterval::new(j2, m2),
                ));
            }
        }
        Ok(out)
    }

    /// Componentwise ancestor of a rectangle.
    pub fn ancestor_rect(&self, rect: DyadicRect, k: (u32, u32)) -> Result<DyadicRect> {
        Ok(DyadicRect::new(
            self.first.ancestor(rect.first, k.0)?,
            self.second.ancestor(rect.second, k.1)?,
        ))
    }

    pub fn rect_square(&self, rect: DyadicRect) -> Result<()> {
        if !rect.is_square() {
            return Err(LabError::Parameter("rectangle must be a square".into()));
        }
        Ok(())
    }

    /// Cells of the rectangle as flat grid indices.
    pub fn cells_of_rect(&self, rect: DyadicRect) -> Vec<usize> {
        let mut out =
            Vec::with_capacity(self.first.len_cells(rect.first.scale) * self.second.len_cells(rect.second.scale));
        for c1 in self.first.cells_of(rect.first) {
            for c2 in self.second.cells_of(rect.second) {
                out.push(self.geom.index(c1, c2));
            }
        }
        out
    }

    /// The square of the lattice at `scale` containing the cell.
    pub fn square_of_cell(&self, scale: u32, c1: usize, c2: usize) -> DyadicRect {
        DyadicRect::new(
            self.first.interval_of_cell(scale, c1),
            self.second.interval_of_cell(scale, c2),
        )
    }
}

/// Monte Carlo estimate, over uniformly random shifts, of the probability
/// that a fixed base interval of the standard grid lands k-good in the
/// shifted lattice. The exact value is 1/2 for every base interval.
pub fn kgood_probability(j: u32, k: u32, n: u32, trials: u64, seed: u64) -> Result<f64> {
    if k < 2 {
        return Err(LabError::Parameter("k-goodness requires k >= 2".into()));
    }
    if j < k || j > n {
        return Err(LabError::Parameter(format!(
            "need k <= j <= n, got j={}, k={}, n={}",
            j, k, n
        )));
    }
    if trials == 0 {
        return Err(LabError::Parameter("need at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = DyadicInterval::new(j, 0);
    let mut good = 0u64;
    for _ in 0..trials {
        let bits = ShiftBits::random(n, &mut rng);
        let lattice = Lattice1d::new(n, bits)?;
        if lattice.is_k_good(base, k)? {
            good += 1;
        }
    }
    Ok(good as f64 / trials as f64)
}

/// Torus distance between interval left endpoints is irrelevant for
/// k-goodness, but box-mode callers sometimes need the raw metric.
pub fn wrapped_distance(a: f64, b: f64, mode: DomainMode) -> f64 {
    let d = (a - b).abs();
    match mode {
        DomainMode::Torus => d.min(1.0 - d),
        DomainMode::Box => d,
    }
}
