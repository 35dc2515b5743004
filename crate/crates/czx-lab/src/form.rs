//! Discretized bilinear forms B(f,g) = sum K(x,y) f(y) g(x) area^2 over
//! cell-center pairs, weak boundedness and T1 data, and the Haar
//! coefficient decay report with its four cube-position cases.
//!
//! The pure power kernel is undefined on cell pairs sharing a coordinate;
//! those entries are set to zero (the diagonal convention). Every identity
//! checked downstream is a rearrangement of the finite bilinear sum, so the
//! convention cannot corrupt the representation identity.

use crate::error::{LabError, Result};
use crate::grid::{DomainMode, GridGeometry};
use crate::kernel::{KernelKind, KernelSpec};
use crate::lattice::{DyadicRect, Lattice};
use crate::signal::{HaarIndex, Signal2D};
use crate::weights::bmo_norms;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagonalConvention {
    /// Zero out cell pairs sharing either coordinate (required for kernels
    /// undefined there).
    Zero,
    /// Evaluate the kernel everywhere (bump kernels).
    KernelDefined,
}

/// Cells per side above which the dense matrix is not materialized.
pub const DENSE_SIDE_LIMIT: usize = 32; // 4^5 cells, 8 MiB of entries

enum FormData {
    Dense(Vec<f64>),
    Lazy,
}

/// A bilinear form on grid signals with kernel values at cell-center pairs.
/// Dense up to the memory threshold, lazily evaluated beyond. Immutable
/// after assembly.
pub struct FormMatrix {
    geom: GridGeometry,
    convention: DiagonalConvention,
    thetas: Option<(f64, f64)>,
    entry_fn: Box<dyn Fn(usize, usize) -> f64 + Sync + Send>,
    data: FormData,
}

fn kernel_entry_fn(
    spec: KernelSpec,
    geom: GridGeometry,
    convention: DiagonalConvention,
) -> Box<dyn Fn(usize, usize) -> f64 + Sync + Send> {
    Box::new(move |x: usize, y: usize| {
        let (x1, x2) = geom.coords(x);
        let (y1, y2) = geom.coords(y);
        let z = [geom.center_gap(x1, y1), geom.center_gap(x2, y2)];
        if convention == DiagonalConvention::Zero && (z[0] == 0.0 || z[1] == 0.0) {
            return 0.0;
        }
        match (geom.mode, spec.kind) {
            (DomainMode::Torus, KernelKind::Bump { .. }) => {
                // periodize; for t <= 1 three images per axis suffice
                let mut s = 0.0;
                for i1 in -1..=1i32 {
                    for i2 in -1..=1i32 {
                        s += spec
                            .eval_displacement([z[0] + i1 as f64, z[1] + i2 as f64])
                            .unwrap_or(0.0);
                    }
                }
                s
            }
            _ => spec.eval_displacement(z).unwrap_or(0.0),
        }
    })
}

impl FormMatrix {
    /// Assemble from a kernel spec. Pure power kernels demand the zero
    /// diagonal convention.
    pub fn assemble(
        spec: &KernelSpec,
        geom: GridGeometry,
        convention: DiagonalConvention,
    ) -> Result<FormMatrix> {
        if matches!(spec.kind, KernelKind::PurePower) && convention != DiagonalConvention::Zero {
            return Err(LabError::Parameter(
                "pure power kernels require the zero diagonal convention".into(),
            ));
        }
        let entry_fn = kernel_entry_fn(*spec, geom, convention);
        let mut form = Self::with_entry_fn(geom, convention, entry_fn);
        form.thetas = Some((spec.theta1, spec.theta2));
        Ok(form)
    }

    /// Assemble from an arbitrary entry function K(x_cell, y_cell); used by
    /// tests and perturbation experiments.
    pub fn from_entries(
        geom: GridGeometry,
        f: impl Fn(usize, usize) -> f64 + Sync + Send + 'static,
    ) -> FormMatrix {
        Self::with_entry_fn(geom, DiagonalConvention::KernelDefined, Box::new(f))
    }

    fn with_entry_fn(
        geom: GridGeometry,
        convention: DiagonalConvention,
        entry_fn: Box<dyn Fn(usize, usize) -> f64 + Sync + Send>,
    ) -> FormMatrix {
        let cells = geom.cells();
        let data = if geom.side() <= DENSE_SIDE_LIMIT {
            let mut k = vec![0.0f64; cells * cells];
            k.par_chunks_mut(cells).enumerate().for_each(|(x, row)| {
                for (y, v) in row.iter_mut().enumerate() {
                    *v = entry_fn(x, y);
                }
            });
            FormData::Dense(k)
        } else {
            FormData::Lazy
        };
        FormMatrix { geom, convention, thetas: None, entry_fn, data }
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geom
    }

    pub fn convention(&self) -> DiagonalConvention {
        self.convention
    }

    /// Hölder exponents of the assembling kernel, when known.
    pub fn thetas(&self) -> Option<(f64, f64)> {
        self.thetas
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.data, FormData::Dense(_))
    }

    #[inline]
    pub fn entry(&self, x: usize, y: usize) -> f64 {
        match &self.data {
            FormData::Dense(k) => k[x * self.geom.cells() + y],
            FormData::Lazy => (self.entry_fn)(x, y),
        }
    }

    /// T f (x) = sum_y K(x,y) f(y) area.
    pub fn apply(&self, f: &Signal2D) -> Signal2D {
        assert_eq!(f.geometry(), self.geom);
        let cells = self.geom.cells();
        let area = self.geom.cell_area();
        let mut out = Signal2D::zero(self.geom);
        match &self.data {
            FormData::Dense(k) => {
                out.values_mut().par_iter_mut().enumerate().for_each(|(x, v)| {
                    let row = &k[x * cells..(x + 1) * cells];
                    *v = row.iter().zip(f.values()).map(|(a, b)| a * b).sum::<f64>() * area;
                });
            }
            FormData::Lazy => {
                out.values_mut().par_iter_mut().enumerate().for_each(|(x, v)| {
                    *v = (0..cells).map(|y| (self.entry_fn)(x, y) * f.values()[y]).sum::<f64>()
                        * area;
                });
            }
        }
        out
    }

    /// Adjoint application, T* g (y) = sum_x K(x,y) g(x) area.
    pub fn apply_adjoint(&self, g: &Signal2D) -> Signal2D {
        assert_eq!(g.geometry(), self.geom);
        let cells = self.geom.cells();
        let area = self.geom.cell_area();
        let mut out = Signal2D::zero(self.geom);
        match &self.data {
            FormData::Dense(k) => {
                out.values_mut().par_iter_mut().enumerate().for_each(|(y, v)| {
                    *v = (0..cells).map(|x| k[x * cells + y] * g.values()[x]).sum::<f64>() * area;
                });
            }
            FormData::Lazy => {
                out.values_mut().par_iter_mut().enumerate().for_each(|(y, v)| {
                    *v = (0..cells).map(|x| (self.entry_fn)(x, y) * g.values()[x]).sum::<f64>()
                        * area;
                });
            }
        }
        out
    }

    /// The bilinear pairing B(f, g) = <T f, g>.
    pub fn pair(&self, f: &Signal2D, g: &Signal2D) -> f64 {
        self.apply(f).inner(g)
    }

    /// Exact discrete Haar pairing B(h_I^beta, h_J^gamma); I pairs with the
    /// integration variable of f, J with g.
    pub fn haar_coefficient(
        &self,
        lattice: &Lattice,
        i: HaarIndex,
        j: HaarIndex,
    ) -> Result<f64> {
        if i.rect.first.scale != j.rect.first.scale {
            return Err(LabError::Parameter(
                "coefficient decay is stated for equal side lengths".into(),
            ));
        }
        let hi = crate::signal::haar_function(lattice, i)?;
        let hj = crate::signal::haar_function(lattice, j)?;
        Ok(self.pair(&hi, &hj))
    }

    /// Weak boundedness ratio |B(1_I, 1_I)| / |I| for a lattice square.
    pub fn wbp_check(&self, lattice: &Lattice, rect: DyadicRect) -> Result<f64> {
        lattice.rect_square(rect)?;
        let ind = Signal2D::indicator(lattice, rect);
        Ok(self.pair(&ind, &ind).abs() / rect.area())
    }

    /// Weak boundedness ratios for every square of the lattice at every
    /// scale, read off the pair-sum pyramid diagonal in one pass. Returns
    /// the per-scale maxima of |B(1_I, 1_I)| / |I|.
    pub fn wbp_sweep(&self, lattice: &Lattice) -> Result<Vec<(u32, f64)>> {
        let pyr = PairPyramid::build(self, lattice, 0)?;
        let mut out = Vec::new();
        for j in 0..=lattice.n() {
            let level = pyr.level(j).expect("all levels built");
            let count = 1usize << j;
            let sq = count * count;
            let area = 0.25f64.powi(j as i32);
            let mut max_ratio = 0.0f64;
            for s in 0..sq {
                max_ratio = max_ratio.max(level[s * sq + s].abs() / area);
            }
            out.push((j, max_ratio));
        }
        Ok(out)
    }

    /// T 1 and T* 1 with their BMO norms; convolution kernels on the torus
    /// give constants, hence zero norms.
    pub fn t1_functions(&self) -> Result<T1Data> {
        if self.geom.mode != DomainMode::Torus {
            return Err(LabError::Parameter(
                "T1 data needs the torus (the constant function must be integrable)".into(),
            ));
        }
        let one = Signal2D::constant(self.geom, 1.0);
        let t_one = self.apply(&one);
        let t_star_one = self.apply_adjoint(&one);
        let bmo_t_one = bmo_norms(&t_one, None).0;
        let bmo_t_star_one = bmo_norms(&t_star_one, None).0;
        Ok(T1Data { t_one, t_star_one, bmo_t_one, bmo_t_star_one })
    }
}

/// T applied to 1 and its adjoint counterpart. The pairing B(1, g) equals
/// the integral of (T 1) g for every g, exactly, by rearranging the finite
/// double sum.
#[derive(Debug, Clone)]
pub struct T1Data {
    pub t_one: Signal2D,
    pub t_star_one: Signal2D,
    pub bmo_t_one: f64,
    pub bmo_t_star_one: f64,
}

/// Pair sums of the kernel aggregated over lattice squares at one scale:
/// ps[(sx, sy)] = sum over x in square sx, y in square sy of K area^2.
/// Level n is the kernel matrix itself; coarser levels follow by summing
/// the sixteen child pairs.
pub struct PairPyramid {
    /// levels[j] has (4^j)^2 entries; level index (sx * 4^j + sy) with
    /// square index s = (m1 << j) | m2.
    levels: Vec<Option<Vec<f64>>>,
}

impl PairPyramid {
    /// Build every level from `min_scale + 1` up; needs the dense matrix
    /// for the bottom level unless streaming is used.
    pub fn build(form: &FormMatrix, lattice: &Lattice, min_level: u32) -> Result<PairPyramid> {
        let n = lattice.n();
        let mut levels: Vec<Option<Vec<f64>>> = vec![None; (n + 1) as usize];
        // bottom level: scale-n squares are cells (interval index = cell)
        let cells = form.geometry().cells();
        let area2 = form.geometry().cell_area() * form.geometry().cell_area();
        let mut bottom = vec![0.0f64; cells * cells];
        bottom.par_chunks_mut(cells).enumerate().for_each(|(x, row)| {
            for (y, v) in row.iter_mut().enumerate() {
                *v = form.entry(x, y) * area2;
            }
        });
        levels[n as usize] = Some(bottom);
        for j in (min_level..n).rev() {
            let fine = levels[(j + 1) as usize].as_ref().expect("built above");
            levels[j as usize] = Some(aggregate_level(fine, lattice, j));
        }
        Ok(PairPyramid { levels })
    }

    /// Single-level construction that streams over cell pairs without
    /// materializing the kernel matrix; for grids past the dense limit.
    pub fn stream_level(form: &FormMatrix, lattice: &Lattice, level: u32) -> Vec<f64> {
        let geom = form.geometry();
        let n = lattice.n();
        let side = geom.side();
        let count = 1usize << level;
        let sq = count * count;
        let area2 = geom.cell_area() * geom.cell_area();
        // map each cell to its level square index
        let mut cell_sq = vec![0usize; geom.cells()];
        for c1 in 0..side {
            let i1 = lattice.first().interval_of_cell(level, c1);
            for c2 in 0..side {
                let i2 = lattice.second().interval_of_cell(level, c2);
                cell_sq[geom.index(c1, c2)] = (i1.index << level) | i2.index;
            }
        }
        let _ = n;
        (0..geom.cells())
            .into_par_iter()
            .fold(
                || vec![0.0f64; sq * sq],
                |mut acc, x| {
                    let sx = cell_sq[x];
                    for y in 0..geom.cells() {
                        acc[sx * sq + cell_sq[y]] += form.entry(x, y) * area2;
                    }
                    acc
                },
            )
            .reduce(
                || vec![0.0f64; sq * sq],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            )
    }

    pub fn level(&self, j: u32) -> Option<&[f64]> {
        self.levels[j as usize].as_deref()
    }
}

fn aggregate_level(fine: &[f64], lattice: &Lattice, j: u32) -> Vec<f64> {
    let count = 1usize << j;
    let fine_count = count << 1;
    let sq = count * count;
    let child_index = |m1: usize, m2: usize| -> [usize; 4] {
        let k1 = lattice
            .first()
            .children(crate::lattice::DyadicInterval::new(j, m1))
            .expect("scale in range");
        let k2 = lattice
            .second()
            .children(crate::lattice::DyadicInterval::new(j, m2))
            .expect("scale in range");
        let mut out = [0usize; 4];
        let mut t = 0;
        for a in k1 {
            for b in k2 {
                out[t] = (a.index << (j + 1)) | b.index;
                t += 1;
            }
        }
        out
    };
    // precompute child square indices per coarse square
    let mut children = vec![[0usize; 4]; sq];
    for m1 in 0..count {
        for m2 in 0..count {
            children[(m1 << j) | m2] = child_index(m1, m2);
        }
    }
    let fine_sq = fine_count * fine_count;
    debug_assert_eq!(fine.len(), fine_sq * fine_sq);
    let mut coarse = vec![0.0f64; sq * sq];
    coarse.par_chunks_mut(sq).enumerate().for_each(|(sx, row)| {
        let cx = &children[sx];
        for (sy, v) in row.iter_mut().enumerate() {
            let cy = &children[sy];
            let mut s = 0.0;
            for &a in cx {
                for &b in cy {
                    s += fine[a * fine_sq + b];
                }
            }
            *v = s;
        }
    });
    coarse
}

/// Compute hc[beta * 4 + gamma] = B(h_I^beta, h_J^gamma) for one pair from
/// the block ps[cx * 4 + cy] of child pair sums (cx child of J on the x
/// side, cy child of I on the y side). Scale factor is |I|^{-1/2} |J|^{-1/2}
/// = 4^j for side 2^-j.
pub fn haar_pairings(ps: &[f64; 16], scale_factor: f64) -> [f64; 16] {
    let sign = |sig: usize, child: usize| -> f64 {
        // sig bit 0: first axis oscillates; child bit 1 is the right half
        // child encoding: (e1 << 1) | e2
        let e1 = (child >> 1) & 1;
        let e2 = child & 1;
        let s1 = if sig & 2 != 0 && e1 == 1 { -1.0 } else { 1.0 };
        let s2 = if sig & 1 != 0 && e2 == 1 { -1.0 } else { 1.0 };
        s1 * s2
    };
    let mut out = [0.0f64; 16];
    for beta in 0..4 {
        for gamma in 0..4 {
            let mut s = 0.0;
            for cx in 0..4 {
                let sg = sign(gamma, cx);
                for cy in 0..4 {
                    s += sg * sign(beta, cy) * ps[cx * 4 + cy];
                }
            }
            // children have a quarter of the parent area; the h values on
            // children are +-|I|^{-1/2}
            out[beta * 4 + gamma] = s * scale_factor;
        }
    }
    out
}

/// Position case of an equal-scale square pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairCase {
    Equal,
    Adjacent,
    SeparatedOne,
    SeparatedBoth,
}

impl PairCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            PairCase::Equal => "equal",
            PairCase::Adjacent => "adjacent",
            PairCase::SeparatedOne => "separated_one",
            PairCase::SeparatedBoth => "separated_both",
        }
    }
}

/// Wrapped index gap between two same-scale intervals on the 2^j ring.
#[inline]
fn ring_gap(a: usize, b: usize, count: usize) -> usize {
    let d = (b + count - a) % count;
    d.min(count - d)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseStat {
    pub case: String,
    pub max_ratio: f64,
    pub argmax_i: (usize, usize),
    pub argmax_j: (usize, usize),
    pub pairs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandStat {
    pub k1: u32,
    pub k2: u32,
    /// max |B(h_I^0, h_J^gamma)| over the band, gamma cancellative
    pub max_coef: f64,
    /// the same, normalized by the representation weight
    /// 2^{-theta2 (kmax - kmin)} 2^{-theta1 kmin} |I|/|K|
    pub max_normalized: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayReport {
    pub scale: u32,
    pub theta1: f64,
    pub theta2: f64,
    pub cases: Vec<CaseStat>,
    pub bands: Vec<BandStat>,
    /// diag_max[m] = worst coefficient over pairs displaced by (+-m, +-m),
    /// at least one cancellative signature; the clean abscissa for the
    /// decay regression since 1 + dist/len = m exactly.
    pub diag_max: Vec<f64>,
}

/// Scan all equal-scale square pairs: classify by position case, normalize
/// the worst Haar coefficient (at least one cancellative signature) by the
/// symmetric decay bound, and aggregate the representation bands.
pub fn decay_report(
    form: &FormMatrix,
    lattice: &Lattice,
    spec: &KernelSpec,
    scale: u32,
) -> Result<DecayReport> {
    let n = lattice.n();
    if scale + 1 > n {
        return Err(LabError::Resolution(format!(
            "decay report needs children at scale {} on a grid with n = {}",
            scale + 1,
            n
        )));
    }
    let level = scale + 1;
    let ps = if form.is_dense() {
        let pyr = PairPyramid::build(form, lattice, level)?;
        pyr.level(level).expect("built").to_vec()
    } else {
        PairPyramid::stream_level(form, lattice, level)
    };
    let count = 1usize << scale;
    let fine_count = count << 1;
    let fine_sq = fine_count * fine_count;
    let theta = spec.theta();
    let ell = 0.5f64.powi(scale as i32);
    let scale_factor = 4f64.powi(scale as i32);

    let child_cache: Vec<[usize; 4]> = {
        let mut v = vec![[0usize; 4]; count * count];
        for m1 in 0..count {
            let k1 = lattice.first().children(crate::lattice::DyadicInterval::new(scale, m1))?;
            for m2 in 0..count {
                let k2 =
                    lattice.second().children(crate::lattice::DyadicInterval::new(scale, m2))?;
                let mut out = [0usize; 4];
                let mut t = 0;
                for a in k1 {
                    for b in k2 {
                        out[t] = (a.index << level) | b.index;
                        t += 1;
                    }
                }
                v[(m1 << scale) | m2] = out;
            }
        }
        v
    };

    use std::collections::HashMap;
    struct Acc {
        cases: HashMap<PairCase, CaseStat>,
        bands: HashMap<(u32, u32), BandStat>,
        diag_max: Vec<f64>,
    }
    impl Acc {
        fn new(count: usize) -> Acc {
            Acc {
                cases: HashMap::new(),
                bands: HashMap::new(),
                diag_max: vec![0.0; count / 2 + 1],
            }
        }
        fn merge(mut self, other: Acc) -> Acc {
            for (a, b) in self.diag_max.iter_mut().zip(&other.diag_max) {
                *a = a.max(*b);
            }
            for (k, v) in other.cases {
                let e = self.cases.entry(k).or_insert_with(|| CaseStat {
                    case: k.as_str().into(),
                    max_ratio: 0.0,
                    argmax_i: (0, 0),
                    argmax_j: (0, 0),
                    pairs: 0,
                });
                e.pairs += v.pairs;
                if v.max_ratio > e.max_ratio {
                    e.max_ratio = v.max_ratio;
                    e.argmax_i = v.argmax_i;
                    e.argmax_j = v.argmax_j;
                }
            }
            for (k, v) in other.bands {
                let e = self.bands.entry(k).or_insert_with(|| BandStat {
                    k1: k.0,
                    k2: k.1,
                    max_coef: 0.0,
                    max_normalized: 0.0,
                    pairs: 0,
                });
                e.pairs += v.pairs;
                e.max_coef = e.max_coef.max(v.max_coef);
                e.max_normalized = e.max_normalized.max(v.max_normalized);
            }
            self
        }
    }

    let band_exp = |m: i64| -> u32 {
        if m == 0 {
            0
        } else {
            ((m.unsigned_abs() as f64).log2().ceil() as u32) + 2
        }
    };

    let acc = (0..count * count)
        .into_par_iter()
        .fold(|| Acc::new(count), |mut acc, iy| {
            // iy indexes I = f-side square; ix indexes J = g-side
            let (im1, im2) = (iy >> scale, iy & (count - 1));
            for ix in 0..count * count {
                let (jm1, jm2) = (ix >> scale, ix & (count - 1));
                let mut block = [0.0f64; 16];
                let cx = &child_cache[ix];
                let cy = &child_cache[iy];
                for (a, &sxc) in cx.iter().enumerate() {
                    for (b, &syc) in cy.iter().enumerate() {
                        block[a * 4 + b] = ps[sxc * fine_sq + syc];
                    }
                }
                let hc = haar_pairings(&block, scale_factor);
                let g1 = ring_gap(im1, jm1, count);
                let g2 = ring_gap(im2, jm2, count);
                let d1 = g1.saturating_sub(1) as f64 * ell;
                let d2 = g2.saturating_sub(1) as f64 * ell;
                let case = match (d1 > 0.0, d2 > 0.0) {
                    (true, true) => PairCase::SeparatedBoth,
                    (true, false) | (false, true) => PairCase::SeparatedOne,
                    (false, false) => {
                        if iy == ix {
                            PairCase::Equal
                        } else {
                            PairCase::Adjacent
                        }
                    }
                };
                let bound = (ell / (ell + d1)).powf(1.0 + theta)
                    * (ell / (ell + d2)).powf(1.0 + theta);
                // worst coefficient with at least one cancellative signature
                let mut worst = 0.0f64;
                for beta in 0..4 {
                    for gamma in 0..4 {
                        if beta == 0 && gamma == 0 {
                            continue;
                        }
                        worst = worst.max(hc[beta * 4 + gamma].abs());
                    }
                }
                let ratio = worst / bound;
                let e = acc.cases.entry(case).or_insert_with(|| CaseStat {
                    case: case.as_str().into(),
                    max_ratio: 0.0,
                    argmax_i: (0, 0),
                    argmax_j: (0, 0),
                    pairs: 0,
                });
                e.pairs += 1;
                if ratio > e.max_ratio {
                    e.max_ratio = ratio;
                    e.argmax_i = (im1, im2);
                    e.argmax_j = (jm1, jm2);
                }
                if g1 == g2 {
                    acc.diag_max[g1] = acc.diag_max[g1].max(worst);
                }

                // representation band of the displacement I -> J
                let signed = |a: usize, b: usize| -> i64 {
                    let half = (count / 2) as i64;
                    let mut d = (b as i64 - a as i64).rem_euclid(count as i64);
                    if d > half {
                        d -= count as i64;
                    }
                    d
                };
                let (k1, k2) = (band_exp(signed(im1, jm1)), band_exp(signed(im2, jm2)));
                let weight = 2f64.powf(
                    -spec.theta2 * (k1.max(k2) - k1.min(k2)) as f64
                        - spec.theta1 * k1.min(k2) as f64,
                ) * 2f64.powi(-((k1 + k2) as i32));
                let mut coef = 0.0f64;
                for gamma in 1..4 {
                    coef = coef.max(hc[gamma].abs()); // beta = 0 row
                }
                let b = acc.bands.entry((k1, k2)).or_insert_with(|| BandStat {
                    k1,
                    k2,
                    max_coef: 0.0,
                    max_normalized: 0.0,
                    pairs: 0,
                });
                b.pairs += 1;
                b.max_coef = b.max_coef.max(coef);
                b.max_normalized = b.max_normalized.max(coef / weight);
            }
            acc
        })
        .reduce(|| Acc::new(count), Acc::merge);

    let mut cases: Vec<CaseStat> = acc.cases.into_values().collect();
    cases.sort_by(|a, b| a.case.cmp(&b.case));
    let mut bands: Vec<BandStat> = acc.bands.into_values().collect();
    bands.sort_by_key(|b| (b.k1, b.k2));
    Ok(DecayReport {
        scale,
        theta1: spec.theta1,
        theta2: spec.theta2,
        cases,
        bands,
        diag_max: acc.diag_max,
    })
}

impl DecayReport {
    pub fn case(&self, c: PairCase) -> Option<&CaseStat> {
        self.cases.iter().find(|s| s.case == c.as_str())
    }

    /// Regression slope (per parameter) of log2 of the worst separated-in-
    /// both coefficient against log2(1 + dist/len) along the diagonal
    /// displacement family. Decay shows up as a positive value; the model
    /// kernel gives (2 + theta1)/2.
    pub fn diagonal_decay_slope(&self) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self
            .diag_max
            .iter()
            .enumerate()
            .filter(|(m, &v)| *m >= 2 && v > 0.0)
            .map(|(m, &v)| ((m as f64).log2(), v.log2()))
            .collect();
        if pts.len() < 2 {
            return Err(LabError::Parameter(
                "not enough separated diagonal displacements for a slope".into(),
            ));
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let (slope, _) = crate::numerics::linear_fit(&xs, &ys)?;
        Ok(-slope / 2.0)
    }

    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "case,scale,theta1,theta2,max_ratio,argmax_i,argmax_j")?;
        for c in &self.cases {
            writeln!(
                w,
                "{},{},{},{},{:.6e},{}:{},{}:{}",
                c.case,
                self.scale,
                self.theta1,
                self.theta2,
                c.max_ratio,
                c.argmax_i.0,
                c.argmax_i.1,
                c.argmax_j.0,
                c.argmax_j.1
            )?;
        }
        Ok(())
    }
}
