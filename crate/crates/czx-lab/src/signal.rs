//! Piecewise-constant signals on the cell grid and the Haar calculus:
//! tensor Haar functions, balanced differences H_{I,J}, conditional
//! expectations, martingale differences, and the block projections used by
//! the dyadic representation.
//!
//! All inner products are exact sums over cells times cell area, so every
//! Haar identity below is an exact linear-algebra statement up to f64
//! rounding.

use crate::error::{LabError, Result};
use crate::grid::{DomainMode, GridGeometry};
use crate::lattice::{DyadicRect, Lattice};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Cell-averaged real function on the 2^n x 2^n grid. Signals are immutable
/// values; operations return new signals.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal2D {
    geom: GridGeometry,
    values: Vec<f64>,
}

/// Haar signature per coordinate: 0 = averaging, 1 = oscillating.
pub type HaarSig = (u8, u8);

pub const CANCELLATIVE_SIGS: [HaarSig; 3] = [(0, 1), (1, 0), (1, 1)];
pub const ALL_SIGS: [HaarSig; 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// A square of a lattice together with a Haar signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HaarIndex {
    pub rect: DyadicRect,
    pub eta: HaarSig,
}

impl HaarIndex {
    pub fn is_cancellative(&self) -> bool {
        self.eta != (0, 0)
    }
}

impl Signal2D {
    pub fn zero(geom: GridGeometry) -> Self {
        Signal2D { geom, values: vec![0.0; geom.cells()] }
    }

    pub fn constant(geom: GridGeometry, c: f64) -> Self {
        Signal2D { geom, values: vec![c; geom.cells()] }
    }

    pub fn from_values(geom: GridGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geom.cells() {
            return Err(LabError::Parameter(format!(
                "expected {} cells, got {}",
                geom.cells(),
                values.len()
            )));
        }
        Ok(Signal2D { geom, values })
    }

    /// Cell values from a function of the cell center.
    pub fn from_fn(geom: GridGeometry, f: impl Fn(f64, f64) -> f64) -> Self {
        let side = geom.side();
        let mut values = vec![0.0; geom.cells()];
        for c1 in 0..side {
            for c2 in 0..side {
                values[geom.index(c1, c2)] = f(geom.center(c1), geom.center(c2));
            }
        }
        Signal2D { geom, values }
    }

    pub fn random_uniform(geom: GridGeometry, rng: &mut impl Rng) -> Self {
        let values = (0..geom.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Signal2D { geom, values }
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geom
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, c1: usize, c2: usize) -> f64 {
        self.values[self.geom.index(c1, c2)]
    }

    fn same_geometry(&self, other: &Signal2D) {
        assert_eq!(self.geom, other.geom, "signals live on different geometries");
    }

    pub fn add(&self, other: &Signal2D) -> Signal2D {
        self.same_geometry(other);
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Signal2D { geom: self.geom, values }
    }

    pub fn sub(&self, other: &Signal2D) -> Signal2D {
        self.same_geometry(other);
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Signal2D { geom: self.geom, values }
    }

    pub fn scale(&self, c: f64) -> Signal2D {
        Signal2D { geom: self.geom, values: self.values.iter().map(|a| a * c).collect() }
    }

    pub fn mul(&self, other: &Signal2D) -> Signal2D {
        self.same_geometry(other);
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Signal2D { geom: self.geom, values }
    }

    pub fn abs(&self) -> Signal2D {
        Signal2D { geom: self.geom, values: self.values.iter().map(|a| a.abs()).collect() }
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.geom.cell_area()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Subtract the global mean; the result integrates to zero exactly.
    pub fn mean_zero(&self) -> Signal2D {
        let m = self.mean();
        Signal2D { geom: self.geom, values: self.values.iter().map(|a| a - m).collect() }
    }

    pub fn inner(&self, other: &Signal2D) -> f64 {
        self.same_geometry(other);
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        s * self.geom.cell_area()
    }

    pub fn norm_l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn norm_lp(&self, p: f64) -> f64 {
        assert!(p >= 1.0);
        let s: f64 = self.values.iter().map(|a| a.abs().powf(p)).sum();
        (s * self.geom.cell_area()).powf(1.0 / p)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, a| m.max(a.abs()))
    }

    /// Average over the cells of a lattice rectangle.
    pub fn average_over(&self, lattice: &Lattice, rect: DyadicRect) -> f64 {
        let cells = lattice.cells_of_rect(rect);
        cells.iter().map(|&c| self.values[c]).sum::<f64>() / cells.len() as f64
    }

    /// Indicator of a lattice rectangle.
    pub fn indicator(lattice: &Lattice, rect: DyadicRect) -> Signal2D {
        let mut out = Signal2D::zero(lattice.geometry());
        for c in lattice.cells_of_rect(rect) {
            out.values[c] = 1.0;
        }
        out
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

const SIGNAL_MAGIC: &[u8; 8] = b"CZXSIG01";

impl Signal2D {
    /// Flat binary64 row-major export with a small header (n, domain mode).
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(SIGNAL_MAGIC)?;
        w.write_all(&self.geom.n.to_le_bytes())?;
        let mode = match self.geom.mode {
            DomainMode::Torus => 0u8,
            DomainMode::Box => 1u8,
        };
        w.write_all(&[mode, 0, 0, 0])?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Signal2D> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SIGNAL_MAGIC {
            return Err(LabError::Parameter("not a signal file (bad magic)".into()));
        }
        let mut nb = [0u8; 4];
        r.read_exact(&mut nb)?;
        let n = u32::from_le_bytes(nb);
        let mut mb = [0u8; 4];
        r.read_exact(&mut mb)?;
        let mode = match mb[0] {
            0 => DomainMode::Torus,
            1 => DomainMode::Box,
            other => return Err(LabError::Parameter(format!("unknown domain mode {}", other))),
        };
        let geom = GridGeometry::new(n, mode);
        let mut values = vec![0.0f64; geom.cells()];
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(Signal2D { geom, values })
    }

    /// CSV export: one row per first-coordinate index. Intended for small n.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "# n={} mode={}", self.geom.n, self.geom.mode.as_str())?;
        let side = self.geom.side();
        for c1 in 0..side {
            let row: Vec<String> = (0..side)
                .map(|c2| format!("{:.17e}", self.values[self.geom.index(c1, c2)]))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Per-lattice pyramid of square averages, one level per scale.
/// Level j holds 4^j entries indexed by (m1 << j) | m2.
pub struct ScalePyramid {
    levels: Vec<Vec<f64>>,
}

impl ScalePyramid {
    pub fn build(f: &Signal2D, lattice: &Lattice) -> ScalePyramid {
        let n = lattice.n();
        assert_eq!(f.geometry().n, n, "signal and lattice resolutions differ");
        let mut levels: Vec<Vec<f64>> = vec![Vec::new(); (n + 1) as usize];
        // at the finest scale interval index equals cell index
        levels[n as usize] = f.values.clone();
        for j in (0..n).rev() {
            let count = 1usize << j;
            let child_count = 1usize << (j + 1);
            let mut level = vec![0.0f64; count * count];
            for m1 in 0..count {
                let k1 = lattice
                    .first()
                    .children(crate::lattice::DyadicInterval::new(j, m1))
                    .expect("scale checked");
                for m2 in 0..count {
                    let k2 = lattice
                        .second()
                        .children(crate::lattice::DyadicInterval::new(j, m2))
                        .expect("scale checked");
                    let mut s = 0.0;
                    for a in k1 {
                        for b in k2 {
                            s += levels[(j + 1) as usize][a.index * child_count + b.index];
                        }
                    }
                    level[m1 * count + m2] = 0.25 * s;
                }
            }
            levels[j as usize] = level;
        }
        ScalePyramid { levels }
    }

    /// Average of the signal over the scale-j square (m1, m2).
    #[inline]
    pub fn avg(&self, scale: u32, m1: usize, m2: usize) -> f64 {
        let count = 1usize << scale;
        self.levels[scale as usize][m1 * count + m2]
    }

    pub fn level(&self, scale: u32) -> &[f64] {
        &self.levels[scale as usize]
    }

    /// Haar coefficient of the square (scale, m1, m2) with signature eta.
    /// Cancellative coefficients at the finest scale vanish (cells carry no
    /// sub-cell structure).
    pub fn haar_coefficient(
        &self,
        lattice: &Lattice,
        scale: u32,
        m1: usize,
        m2: usize,
        eta: HaarSig,
    ) -> f64 {
        let n = lattice.n();
        let side_sqrt = 0.5f64.powi(scale as i32); // |I|^{1/2} = 2^-scale
        if scale == n {
            return if eta == (0, 0) { side_sqrt * self.avg(scale, m1, m2) } else { 0.0 };
        }
        let k1 = lattice
            .first()
            .children(crate::lattice::DyadicInterval::new(scale, m1))
            .expect("scale checked");
        let k2 = lattice
            .second()
            .children(crate::lattice::DyadicInterval::new(scale, m2))
            .expect("scale checked");
        let mut s = 0.0;
        for (e1, a) in k1.iter().enumerate() {
            let s1 = if eta.0 == 1 && e1 == 1 { -1.0 } else { 1.0 };
            for (e2, b) in k2.iter().enumerate() {
                let s2 = if eta.1 == 1 && e2 == 1 { -1.0 } else { 1.0 };
                s += s1 * s2 * self.avg(scale + 1, a.index, b.index);
            }
        }
        0.25 * side_sqrt * s
    }
}

/// The tensor Haar function of a square: unit L^2 norm; cancellative
/// signatures have zero integral.
pub fn haar_function(lattice: &Lattice, idx: HaarIndex) -> Result<Signal2D> {
    lattice.rect_square(idx.rect)?;
    let scale = idx.rect.first.scale;
    lattice.first().check_scale(scale)?;
    if idx.eta != (0, 0) {
        // oscillation needs children one scale finer
        lattice.first().check_scale(scale + 1).map_err(|_| {
            LabError::Resolution(format!(
                "cancellative Haar at scale {} needs children finer than the grid (n = {})",
                scale,
                lattice.n()
            ))
        })?;
    }
    let amp = 2f64.powi(scale as i32); // |I|^{-1/2}
    let axis_values = |axis: usize, iv: crate::lattice::DyadicInterval, comp: u8| -> Vec<f64> {
        let lat1 = lattice.axis(axis);
        let mut vals = vec![0.0f64; lattice.geometry().side()];
        if comp == 0 {
            for c in lat1.cells_of(iv) {
                vals[c] = 1.0;
            }
        } else {
            let [l, r] = lat1.children(iv).expect("checked above");
            for c in lat1.cells_of(l) {
                vals[c] = 1.0;
            }
            for c in lat1.cells_of(r) {
                vals[c] = -1.0;
            }
        }
        vals
    };
    let v1 = axis_values(0, idx.rect.first, idx.eta.0);
    let v2 = axis_values(1, idx.rect.second, idx.eta.1);
    let geom = lattice.geometry();
    let mut out = Signal2D::zero(geom);
    for (c1, &a) in v1.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (c2, &b) in v2.iter().enumerate() {
            out.values[geom.index(c1, c2)] = amp * a * b;
        }
    }
    Ok(out)
}

/// Balanced difference H_{I,J} = h_I^0 - h_J^0 for equal-side squares:
/// mean zero, |H| <= |I|^{-1/2}, supported on the union, constant on
/// children.
pub fn balanced_haar(lattice: &Lattice, i: DyadicRect, j: DyadicRect) -> Result<Signal2D> {
    if i.first.scale != j.first.scale || i.second.scale != j.second.scale {
        return Err(LabError::Parameter("balanced difference needs equal side lengths".into()));
    }
    let hi = haar_function(lattice, HaarIndex { rect: i, eta: (0, 0) })?;
    let hj = haar_function(lattice, HaarIndex { rect: j, eta: (0, 0) })?;
    Ok(hi.sub(&hj))
}

/// Conditional expectation and martingale difference on one rectangle:
/// E_I f = <f>_I 1_I, and Delta_I f = sum over children of E f minus E_I f.
/// At the finest scale the difference is zero.
pub fn expectation_and_difference(
    f: &Signal2D,
    lattice: &Lattice,
    rect: DyadicRect,
) -> Result<(Signal2D, Signal2D)> {
    lattice.first().check_scale(rect.first.scale)?;
    lattice.second().check_scale(rect.second.scale)?;
    let geom = lattice.geometry();
    let avg = f.average_over(lattice, rect);
    let mut e = Signal2D::zero(geom);
    for c in lattice.cells_of_rect(rect) {
        e.values[c] = avg;
    }
    let mut d = Signal2D::zero(geom);
    if rect.first.scale < lattice.n() && rect.second.scale < lattice.n() {
        let k1 = lattice.first().children(rect.first)?;
        let k2 = lattice.second().children(rect.second)?;
        for a in k1 {
            for b in k2 {
                let child = DyadicRect::new(a, b);
                let ca = f.average_over(lattice, child);
                for c in lattice.cells_of_rect(child) {
                    d.values[c] = ca - avg;
                }
            }
        }
    }
    Ok((e, d))
}

/// Averages of f at a given square scale, broadcast back to cells.
pub fn expectation_at_scale(f: &Signal2D, lattice: &Lattice, scale: u32) -> Result<Signal2D> {
    lattice.first().check_scale(scale)?;
    let pyr = ScalePyramid::build(f, lattice);
    Ok(expectation_from_pyramid(&pyr, lattice, scale))
}

pub fn expectation_from_pyramid(pyr: &ScalePyramid, lattice: &Lattice, scale: u32) -> Signal2D {
    let geom = lattice.geometry();
    let side = geom.side();
    let mut out = Signal2D::zero(geom);
    for c1 in 0..side {
        let i1 = lattice.first().interval_of_cell(scale, c1);
        for c2 in 0..side {
            let i2 = lattice.second().interval_of_cell(scale, c2);
            out.values[geom.index(c1, c2)] = pyr.avg(scale, i1.index, i2.index);
        }
    }
    out
}

fn block_scales(lattice: &Lattice, k_block: DyadicRect, k1: u32, k2: u32) -> Result<(u32, u32)> {
    let j_fine = k_block.first.scale + k1;
    let j_fine2 = k_block.second.scale + k2;
    if j_fine != j_fine2 {
        return Err(LabError::Parameter(format!(
            "block scales disagree: {} + {} != {} + {}",
            k_block.first.scale, k1, k_block.second.scale, k2
        )));
    }
    if j_fine > lattice.n() {
        return Err(LabError::Resolution(format!(
            "block projection needs scale {} but the grid stops at {}",
            j_fine,
            lattice.n()
        )));
    }
    Ok((k_block.first.scale, j_fine))
}

/// Block projection gamma_{K,k1}: the part of f at square scales between
/// the coarser side of K and 2^{-k1} len(K^1), restricted to K. Reproduces
/// every pairing <f, H_{I,J}> for I, J with common k-ancestor K. The coarse
/// cutoff is the square hull of K so that the reproducing identity also
/// holds when the first coordinate is the shallow one.
pub fn block_projection(
    f: &Signal2D,
    lattice: &Lattice,
    k_block: DyadicRect,
    k1: u32,
) -> Result<Signal2D> {
    let k2 = (k_block.first.scale + k1).checked_sub(k_block.second.scale).ok_or_else(|| {
        LabError::Parameter("block coarser in the second coordinate than k1 allows".into())
    })?;
    let (_, fine) = block_scales(lattice, k_block, k1, k2)?;
    let coarse = k_block.first.scale.min(k_block.second.scale);
    let pyr = ScalePyramid::build(f, lattice);
    let fine_eff = (fine + 1).min(lattice.n());
    let e_fine = expectation_from_pyramid(&pyr, lattice, fine_eff);
    let e_coarse = expectation_from_pyramid(&pyr, lattice, coarse);
    let geom = lattice.geometry();
    let mut out = Signal2D::zero(geom);
    for c in lattice.cells_of_rect(k_block) {
        out.values[c] = e_fine.values[c] - e_coarse.values[c];
    }
    Ok(out)
}

/// Block difference Delta_{K,k}: the sum of martingale differences of the
/// squares whose componentwise k-ancestor is K. Supported in K.
pub fn block_difference(
    g: &Signal2D,
    lattice: &Lattice,
    k_block: DyadicRect,
    k: (u32, u32),
) -> Result<Signal2D> {
    let (_, fine) = block_scales(lattice, k_block, k.0, k.1)?;
    let pyr = ScalePyramid::build(g, lattice);
    let geom = lattice.geometry();
    let mut out = Signal2D::zero(geom);
    if fine == lattice.n() {
        return Ok(out); // finest-scale differences vanish on the grid
    }
    let e_fine = expectation_from_pyramid(&pyr, lattice, fine + 1);
    let e_at = expectation_from_pyramid(&pyr, lattice, fine);
    for c in lattice.cells_of_rect(k_block) {
        out.values[c] = e_fine.values[c] - e_at.values[c];
    }
    Ok(out)
}

/// Exact finite Haar reconstruction: global mean plus all cancellative
/// coefficients of one lattice.
pub fn reconstruct(f: &Signal2D, lattice: &Lattice) -> Result<Signal2D> {
    let pyr = ScalePyramid::build(f, lattice);
    let geom = lattice.geometry();
    let mut out = Signal2D::constant(geom, f.mean());
    for j in 0..lattice.n() {
        let count = 1usize << j;
        for m1 in 0..count {
            for m2 in 0..count {
                for eta in CANCELLATIVE_SIGS {
                    let coef = pyr.haar_coefficient(lattice, j, m1, m2, eta);
                    if coef == 0.0 {
                        continue;
                    }
                    let rect = DyadicRect::new(
                        crate::lattice::DyadicInterval::new(j, m1),
                        crate::lattice::DyadicInterval::new(j, m2),
                    );
                    let h = haar_function(lattice, HaarIndex { rect, eta })?;
                    for (v, hv) in out.values.iter_mut().zip(h.values()) {
                        *v += coef * hv;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::DyadicInterval;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sq(scale: u32, m1: usize, m2: usize) -> DyadicRect {
        DyadicRect::new(DyadicInterval::new(scale, m1), DyadicInterval::new(scale, m2))
    }

    #[test]
    fn noncancellative_haar_on_unit_square_is_one() {
        let lat = Lattice::standard(GridGeometry::torus(3));
        let h = haar_function(&lat, HaarIndex { rect: sq(0, 0, 0), eta: (0, 0) }).unwrap();
        assert!(h.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn oscillating_haar_has_unit_norm_and_zero_mean() {
        let lat = Lattice::standard(GridGeometry::torus(3));
        let h = haar_function(&lat, HaarIndex { rect: sq(1, 0, 1), eta: (1, 0) }).unwrap();
        // side 1/2: values +-|I|^{-1/2} = +-2 on the two halves
        assert!((h.max_abs() - 2.0).abs() < 1e-15);
        assert!(h.integral().abs() < 1e-15);
        assert!((h.norm_l2() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn haar_system_is_orthonormal_on_random_lattice() {
        let lat = Lattice::random(GridGeometry::torus(3), 5);
        let mut all = Vec::new();
        for j in 0..3u32 {
            let count = 1usize << j;
            for m1 in 0..count {
                for m2 in 0..count {
                    for eta in CANCELLATIVE_SIGS {
                        all.push(haar_function(&lat, HaarIndex { rect: sq(j, m1, m2), eta }).unwrap());
                    }
                }
            }
        }
        for (a, fa) in all.iter().enumerate() {
            for (b, fb) in all.iter().enumerate() {
                let ip = fa.inner(fb);
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-12, "pair {} {}: {}", a, b, ip);
            }
        }
    }

    #[test]
    fn balanced_haar_properties_hold_cellwise() {
        let lat = Lattice::random(GridGeometry::torus(4), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let j = rng.gen_range(1..=3u32);
            let count = 1usize << j;
            let i = sq(j, rng.gen_range(0..count), rng.gen_range(0..count));
            let jj = sq(j, rng.gen_range(0..count), rng.gen_range(0..count));
            let h = balanced_haar(&lat, i, jj).unwrap();
            // bounded by |I|^{-1/2}, mean zero, supported on the union
            let amp = 2f64.powi(j as i32);
            assert!(h.max_abs() <= amp + 1e-12);
            assert!(h.integral().abs() < 1e-14);
            let mut support: std::collections::HashSet<usize> =
                lat.cells_of_rect(i).into_iter().collect();
            support.extend(lat.cells_of_rect(jj));
            for (c, &v) in h.values().iter().enumerate() {
                if !support.contains(&c) {
                    assert_eq!(v, 0.0);
                }
            }
            // constant on children of both squares
            for rect in [i, jj] {
                for a in lat.first().children(rect.first).unwrap() {
                    for b in lat.second().children(rect.second).unwrap() {
                        let child = DyadicRect::new(a, b);
                        let cells = lat.cells_of_rect(child);
                        let v0 = h.values()[cells[0]];
                        assert!(cells.iter().all(|&c| (h.values()[c] - v0).abs() < 1e-15));
                    }
                }
            }
        }
        // identical squares give the zero signal
        let z = balanced_haar(&lat, sq(2, 1, 1), sq(2, 1, 1)).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        assert!(balanced_haar(&lat, sq(2, 0, 0), sq(1, 0, 0)).is_err());
    }

    #[test]
    fn disjoint_balanced_haar_is_signed_indicator() {
        let lat = Lattice::standard(GridGeometry::torus(2));
        let h = balanced_haar(&lat, sq(1, 0, 0), sq(1, 1, 1)).unwrap();
        for c in lat.cells_of_rect(sq(1, 0, 0)) {
            assert!((h.values()[c] - 2.0).abs() < 1e-15);
        }
        for c in lat.cells_of_rect(sq(1, 1, 1)) {
            assert!((h.values()[c] + 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn expectation_and_difference_basics() {
        let lat = Lattice::standard(GridGeometry::torus(3));
        let c = Signal2D::constant(lat.geometry(), 3.25);
        let (e, d) = expectation_and_difference(&c, &lat, sq(1, 0, 0)).unwrap();
        assert!((e.integral() - 3.25 * 0.25).abs() < 1e-14);
        assert_eq!(d.max_abs(), 0.0);

        // a cancellative Haar function is its own difference on its square
        let h = haar_function(&lat, HaarIndex { rect: sq(1, 1, 0), eta: (1, 0) }).unwrap();
        let (e, d) = expectation_and_difference(&h, &lat, sq(1, 1, 0)).unwrap();
        assert_eq!(e.max_abs(), 0.0);
        assert!(d.sub(&h).max_abs() < 1e-14);
        // difference of any signal has zero mean
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Signal2D::random_uniform(lat.geometry(), &mut rng);
        let (_, d) = expectation_and_difference(&f, &lat, sq(2, 1, 3)).unwrap();
        assert!(d.integral().abs() < 1e-14);
    }

    #[test]
    fn parseval_over_all_squares() {
        let geom = GridGeometry::torus(4);
        let lat = Lattice::random(geom, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Signal2D::random_uniform(geom, &mut rng);
        let centered = f.mean_zero();
        let mut sum_sq = 0.0;
        for j in 0..geom.n {
            let count = 1usize << j;
            for m1 in 0..count {
                for m2 in 0..count {
                    let (_, d) = expectation_and_difference(&f, &lat, sq(j, m1, m2)).unwrap();
                    sum_sq += d.inner(&d);
                }
            }
        }
        assert!((sum_sq - centered.inner(&centered)).abs() < 1e-10);
    }

    #[test]
    fn haar_reconstruction_is_exact() {
        let geom = GridGeometry::torus(4);
        let lat = Lattice::random(geom, 123);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Signal2D::random_uniform(geom, &mut rng);
        let r = reconstruct(&f, &lat).unwrap();
        assert!(r.sub(&f).max_abs() < 1e-12);
    }

    #[test]
    fn telescoping_of_expectations() {
        let geom = GridGeometry::torus(4);
        let lat = Lattice::random(geom, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = Signal2D::random_uniform(geom, &mut rng);
        for j in 0..geom.n {
            let e_j = expectation_at_scale(&f, &lat, j).unwrap();
            let e_next = expectation_at_scale(&f, &lat, j + 1).unwrap();
            let mut diff_sum = Signal2D::zero(geom);
            let count = 1usize << j;
            for m1 in 0..count {
                for m2 in 0..count {
                    let (_, d) = expectation_and_difference(&f, &lat, sq(j, m1, m2)).unwrap();
                    diff_sum = diff_sum.add(&d);
                }
            }
            assert!(e_next.sub(&e_j).sub(&diff_sum).max_abs() < 1e-13, "scale {}", j);
        }
    }

    #[test]
    fn block_projection_reproduces_balanced_pairings() {
        let geom = GridGeometry::torus(5);
        let lat = Lattice::random(geom, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = Signal2D::random_uniform(geom, &mut rng);
        for _ in 0..20 {
            let k1 = rng.gen_range(0..=2u32);
            let k2 = rng.gen_range(0..=2u32);
            let j = rng.gen_range(k1.max(k2)..=4u32);
            let count = 1usize << j;
            let i = sq(j, rng.gen_range(0..count), rng.gen_range(0..count));
            // J must share the k-ancestor with I
            let anc = lat.ancestor_rect(i, (k1, k2)).unwrap();
            let k_block = anc;
            let gamma = block_projection(&f, &lat, k_block, k1).unwrap();
            // pick J = any square with the same ancestor
            let mut j1 = anc.first;
            while j1.scale < j {
                let kids = lat.first().children(j1).unwrap();
                j1 = kids[rng.gen_range(0..2)];
            }
            let mut j2 = anc.second;
            while j2.scale < j {
                let kids = lat.second().children(j2).unwrap();
                j2 = kids[rng.gen_range(0..2)];
            }
            let jj = DyadicRect::new(j1, j2);
            let h = balanced_haar(&lat, i, jj).unwrap();
            let lhs = f.inner(&h);
            let rhs = gamma.inner(&h);
            assert!((lhs - rhs).abs() < 1e-12, "k=({},{}) j={}: {} vs {}", k1, k2, j, lhs, rhs);
        }
        // constants project to zero
        let c = Signal2D::constant(geom, 2.0);
        let k_block = sq(1, 0, 0);
        assert_eq!(block_projection(&c, &lat, k_block, 2).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn block_difference_energy_is_dominated() {
        let geom = GridGeometry::torus(4);
        let lat = Lattice::random(geom, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Signal2D::random_uniform(geom, &mut rng);
        let gg = g.inner(&g);
        for (k1, k2) in [(0u32, 0u32), (1, 0), (2, 1), (1, 1)] {
            let mut total = 0.0;
            // K ranges over all valid scale pairs for this k
            for j in k1.max(k2)..=geom.n {
                let q1 = j - k1;
                let q2 = j - k2;
                for m1 in 0..1usize << q1 {
                    for m2 in 0..1usize << q2 {
                        let k_block = DyadicRect::new(
                            DyadicInterval::new(q1, m1),
                            DyadicInterval::new(q2, m2),
                        );
                        let d = block_difference(&g, &lat, k_block, (k1, k2)).unwrap();
                        total += d.inner(&d);
                    }
                }
            }
            assert!(total <= gg + 1e-12, "k=({},{}): {} vs {}", k1, k2, total, gg);
        }
        // k = (0,0) on a square reduces to the plain difference
        let k_block = sq(2, 1, 2);
        let d = block_difference(&g, &lat, k_block, (0, 0)).unwrap();
        let (_, d_direct) = expectation_and_difference(&g, &lat, k_block).unwrap();
        assert!(d.sub(&d_direct).max_abs() < 1e-14);
    }

    #[test]
    fn block_projection_energy_grows_linearly_in_k() {
        let geom = GridGeometry::torus(5);
        let lat = Lattice::random(geom, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let f = Signal2D::random_uniform(geom, &mut rng);
        let ff = f.inner(&f);
        for (k1, k2) in [(1u32, 1u32), (2, 1), (3, 2)] {
            let mut total = 0.0;
            for j in k1.max(k2)..=geom.n {
                let q1 = j - k1;
                let q2 = j - k2;
                for m1 in 0..1usize << q1 {
                    for m2 in 0..1usize << q2 {
                        let k_block = DyadicRect::new(
                            DyadicInterval::new(q1, m1),
                            DyadicInterval::new(q2, m2),
                        );
                        let g = block_projection(&f, &lat, k_block, k1).unwrap();
                        total += g.inner(&g);
                    }
                }
            }
            // frozen constant 4.0: measured values stay below 2.2 (1+k1)
            assert!(
                total <= 4.0 * (1.0 + k1 as f64) * ff,
                "k=({},{}): {} vs {}",
                k1,
                k2,
                total,
                ff
            );
        }
    }

    #[test]
    fn binary_round_trip() {
        let geom = GridGeometry::boxed(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = Signal2D::random_uniform(geom, &mut rng);
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let g = Signal2D::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(f, g);
    }
}
