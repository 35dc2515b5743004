//! Dyadic model operators and the representation of a CZX form: shift
//! operators moving Haar data between cubes under a common ancestor,
//! one-parameter paraproducts, the exact finite collapse of B(f,g) into
//! expectation/difference blocks, and commutators.
//!
//! The collapse identity is the central exactness statement of the crate:
//! for mean-zero f and g and any fixed lattice, the three block sums
//! recombine to B(f,g) up to f64 rounding, because finite Haar completeness
//! makes the rearrangement a finite relabeling of the bilinear sum.

use crate::error::{LabError, Result};
use crate::form::{haar_pairings, FormMatrix, PairPyramid};
use crate::lattice::{DyadicInterval, DyadicRect, Lattice};
use crate::signal::{HaarSig, ScalePyramid, Signal2D, CANCELLATIVE_SIGS};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// splitmix64: cheap deterministic hash for reproducible random signs.
#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShiftFlavor {
    /// <Qf, g> = sum a <f, H_{I,J}> <g, h_J>.
    Balanced,
    /// <Qf, g> = sum a <f, h_I> <g, h_J>; at k = 0 a Haar multiplier.
    Symmetric,
}

/// Coefficients of a shift operator. Entry magnitudes are capped by
/// |I|/|K| = 2^{-(k1+k2)}.
pub enum CoeffSource {
    /// Independent signs +-|I|/|K| from a seeded hash of the indices.
    RandomSigns { seed: u64 },
    /// Explicit sparse list of (scale, I, J, value).
    Explicit(Vec<ExplicitCoeff>),
}

#[derive(Debug, Clone, Copy)]
pub struct ExplicitCoeff {
    pub scale: u32,
    pub i: (usize, usize),
    pub j: (usize, usize),
    pub value: f64,
}

/// A dyadic shift of complexity k = (k1, k2): blocks run over rectangles K
/// with side ratio 2^{k1-k2}, and I, J range over the squares whose
/// componentwise k-ancestor is K.
pub struct ShiftOperator {
    lattice: Lattice,
    k: (u32, u32),
    flavor: ShiftFlavor,
    eta: HaarSig,
    source: CoeffSource,
}

impl ShiftOperator {
    pub fn random_signs(
        lattice: Lattice,
        k: (u32, u32),
        flavor: ShiftFlavor,
        eta: HaarSig,
        seed: u64,
    ) -> Result<Self> {
        if eta == (0, 0) {
            return Err(LabError::Parameter("shift output signature must be cancellative".into()));
        }
        if k.0.max(k.1) > lattice.n() {
            return Err(LabError::Resolution("shift complexity exceeds the grid depth".into()));
        }
        Ok(ShiftOperator { lattice, k, flavor, eta, source: CoeffSource::RandomSigns { seed } })
    }

    pub fn explicit(
        lattice: Lattice,
        k: (u32, u32),
        flavor: ShiftFlavor,
        eta: HaarSig,
        coeffs: Vec<ExplicitCoeff>,
    ) -> Result<Self> {
        let cap = 2f64.powi(-((k.0 + k.1) as i32));
        for c in &coeffs {
            if c.value.abs() > cap * (1.0 + 1e-12) {
                return Err(LabError::Invariant(format!(
                    "coefficient {} exceeds the cap |I|/|K| = {}",
                    c.value, cap
                )));
            }
        }
        Ok(ShiftOperator { lattice, k, flavor, eta, source: CoeffSource::Explicit(coeffs) })
    }

    pub fn complexity(&self) -> (u32, u32) {
        self.k
    }

    fn coeff(&self, scale: u32, i: usize, j: usize) -> f64 {
        let cap = 2f64.powi(-((self.k.0 + self.k.1) as i32));
        match &self.source {
            CoeffSource::RandomSigns { seed } => {
                let h = splitmix(
                    seed ^ ((scale as u64) << 56) ^ ((i as u64) << 28) ^ j as u64,
                );
                if h & 1 == 0 {
                    cap
                } else {
                    -cap
                }
            }
            CoeffSource::Explicit(_) => unreachable!("explicit path handled separately"),
        }
    }

    /// Group the scale-j squares by their k-ancestor; returns for each
    /// block the member square indices (m1 << j | m2).
    fn blocks_at(&self, j: u32) -> Result<Vec<Vec<u32>>> {
        let (k1, k2) = self.k;
        let q1 = j - k1;
        let q2 = j - k2;
        let count = 1usize << j;
        let blocks_count = (1usize << q1) * (1usize << q2);
        let mut blocks: Vec<Vec<u32>> = vec![Vec::new(); blocks_count];
        // per-coordinate ancestor index tables
        let anc1: Vec<usize> = (0..count)
            .map(|m| self.lattice.first().ancestor(DyadicInterval::new(j, m), k1).map(|a| a.index))
            .collect::<Result<_>>()?;
        let anc2: Vec<usize> = (0..count)
            .map(|m| self.lattice.second().ancestor(DyadicInterval::new(j, m), k2).map(|a| a.index))
            .collect::<Result<_>>()?;
        for m1 in 0..count {
            for m2 in 0..count {
                let kb = anc1[m1] * (1usize << q2) + anc2[m2];
                blocks[kb].push(((m1 << j) | m2) as u32);
            }
        }
        Ok(blocks)
    }

    /// Add coef * h_s^eta over the cells of each square at one scale.
    fn emit_haar_layer(&self, scale: u32, coefs: &[f64], eta: HaarSig, out: &mut Signal2D) {
        let lat = &self.lattice;
        let geom = lat.geometry();
        let amp = 2f64.powi(scale as i32);
        let count = 1usize << scale;
        for m1 in 0..count {
            for m2 in 0..count {
                let c = coefs[(m1 << scale) | m2];
                if c == 0.0 {
                    continue;
                }
                let i1 = DyadicInterval::new(scale, m1);
                let i2 = DyadicInterval::new(scale, m2);
                let k1 = lat.first().children(i1).expect("scale < n");
                let k2 = lat.second().children(i2).expect("scale < n");
                for (e1, a) in k1.iter().enumerate() {
                    let s1 = if eta.0 == 1 && e1 == 1 { -1.0 } else { 1.0 };
                    for (e2, b) in k2.iter().enumerate() {
                        let s2 = if eta.1 == 1 && e2 == 1 { -1.0 } else { 1.0 };
                        let v = c * amp * s1 * s2;
                        for c1 in lat.first().cells_of(*a) {
                            for c2 in lat.second().cells_of(*b) {
                                out.values_mut()[geom.index(c1, c2)] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn apply_inner(&self, f: &Signal2D, adjoint: bool) -> Signal2D {
        let lat = &self.lattice;
        let n = lat.n();
        let (k1, k2) = self.k;
        let pyr = ScalePyramid::build(f, lat);
        let mut out = Signal2D::zero(lat.geometry());
        for j in k1.max(k2)..n {
            // scale n is excluded: cancellative output needs children
            let count = 1usize << j;
            let sq_count = count * count;
            let side_sqrt = 0.5f64.powi(j as i32);
            // input coefficients per square
            let fc0: Vec<f64> = (0..sq_count)
                .map(|s| side_sqrt * pyr.avg(j, s >> j, s & (count - 1)))
                .collect();
            let f_eta: Vec<f64> = (0..sq_count)
                .map(|s| pyr.haar_coefficient(lat, j, s >> j, s & (count - 1), self.eta))
                .collect();
            let mut out_eta = vec![0.0f64; sq_count];
            let mut out_h0 = vec![0.0f64; sq_count];
            match &self.source {
                CoeffSource::Explicit(coeffs) => {
                    for c in coeffs.iter().filter(|c| c.scale == j) {
                        let si = (c.i.0 << j) | c.i.1;
                        let sj = (c.j.0 << j) | c.j.1;
                        self.accumulate_pair(
                            c.value, si, sj, &fc0, &f_eta, &mut out_eta, &mut out_h0, adjoint,
                        );
                    }
                }
                CoeffSource::RandomSigns { .. } => {
                    let blocks = self.blocks_at(j).expect("scales validated");
                    let layers: Vec<(Vec<f64>, Vec<f64>)> = blocks
                        .par_iter()
                        .map(|members| {
                            let mut l_eta = vec![0.0f64; sq_count];
                            let mut l_h0 = vec![0.0f64; sq_count];
                            for &si in members {
                                for &sj in members {
                                    let a = self.coeff(j, si as usize, sj as usize);
                                    self.accumulate_pair(
                                        a,
                                        si as usize,
                                        sj as usize,
                                        &fc0,
                                        &f_eta,
                                        &mut l_eta,
                                        &mut l_h0,
                                        adjoint,
                                    );
                                }
                            }
                            (l_eta, l_h0)
                        })
                        .collect();
                    for (l_eta, l_h0) in layers {
                        for (a, b) in out_eta.iter_mut().zip(l_eta) {
                            *a += b;
                        }
                        for (a, b) in out_h0.iter_mut().zip(l_h0) {
                            *a += b;
                        }
                    }
                }
            }
            self.emit_haar_layer(j, &out_eta, self.eta, &mut out);
            // h^0 components are constants on squares
            let geom = lat.geometry();
            let amp = 2f64.powi(j as i32);
            for m1 in 0..count {
                for m2 in 0..count {
                    let c = out_h0[(m1 << j) | m2];
                    if c == 0.0 {
                        continue;
                    }
                    let rect =
                        DyadicRect::new(DyadicInterval::new(j, m1), DyadicInterval::new(j, m2));
                    for cell in lat.cells_of_rect(rect) {
                        out.values_mut()[cell] += c * amp;
                    }
                    let _ = geom;
                }
            }
        }
        out
    }

    /// One coefficient's contribution. Forward balanced:
    /// out_eta[J] += a (fc0[I] - fc0[J]); adjoint balanced:
    /// out_h0[I] += a f_eta[J], out_h0[J] -= a f_eta[J].
    #[allow(clippy::too_many_arguments)]
    fn accumulate_pair(
        &self,
        a: f64,
        si: usize,
        sj: usize,
        fc0: &[f64],
        f_eta: &[f64],
        out_eta: &mut [f64],
        out_h0: &mut [f64],
        adjoint: bool,
    ) {
        match (self.flavor, adjoint) {
            (ShiftFlavor::Balanced, false) => {
                out_eta[sj] += a * (fc0[si] - fc0[sj]);
            }
            (ShiftFlavor::Balanced, true) => {
                out_h0[si] += a * f_eta[sj];
                out_h0[sj] -= a * f_eta[sj];
            }
            (ShiftFlavor::Symmetric, false) => {
                out_eta[sj] += a * f_eta[si];
            }
            (ShiftFlavor::Symmetric, true) => {
                out_eta[si] += a * f_eta[sj];
            }
        }
    }

    pub fn apply(&self, f: &Signal2D) -> Signal2D {
        self.apply_inner(f, false)
    }

    pub fn apply_adjoint(&self, g: &Signal2D) -> Signal2D {
        self.apply_inner(g, true)
    }

    /// Operator norm on L^2 by power iteration.
    pub fn norm_l2(&self, iters: usize, seed: u64) -> f64 {
        let geom = self.lattice.geometry();
        let apply = |v: &[f64]| {
            let f = Signal2D::from_values(geom, v.to_vec()).expect("dim");
            self.apply(&f).values().to_vec()
        };
        let adjoint = |v: &[f64]| {
            let f = Signal2D::from_values(geom, v.to_vec()).expect("dim");
            self.apply_adjoint(&f).values().to_vec()
        };
        crate::numerics::operator_norm(&apply, &adjoint, geom.cells(), iters, 1e-6, seed)
    }

    /// Operator norm on L^2(w) via the similarity transform
    /// u -> w^{1/2} Q (w^{-1/2} u).
    pub fn norm_l2_weighted(&self, w: &crate::weights::Weight, iters: usize, seed: u64) -> f64 {
        let geom = self.lattice.geometry();
        let half: Vec<f64> = w.signal().values().iter().map(|v| v.sqrt()).collect();
        let apply = |v: &[f64]| {
            let scaled: Vec<f64> = v.iter().zip(&half).map(|(x, h)| x / h).collect();
            let f = Signal2D::from_values(geom, scaled).expect("dim");
            let qf = self.apply(&f);
            qf.values().iter().zip(&half).map(|(x, h)| x * h).collect()
        };
        let adjoint = |v: &[f64]| {
            let scaled: Vec<f64> = v.iter().zip(&half).map(|(x, h)| x * h).collect();
            let f = Signal2D::from_values(geom, scaled).expect("dim");
            let qf = self.apply_adjoint(&f);
            qf.values().iter().zip(&half).map(|(x, h)| x / h).collect()
        };
        crate::numerics::operator_norm(&apply, &adjoint, geom.cells(), iters, 1e-6, seed)
    }
}

/// One-parameter paraproduct pi_b f = sum_I <b, h_I> <f>_I h_I over all
/// cancellative signatures.
pub struct Paraproduct {
    lattice: Lattice,
    symbol: Signal2D,
}

impl Paraproduct {
    pub fn new(lattice: Lattice, symbol: Signal2D) -> Self {
        assert_eq!(lattice.geometry(), symbol.geometry());
        Paraproduct { lattice, symbol }
    }

    pub fn apply(&self, f: &Signal2D) -> Signal2D {
        let lat = &self.lattice;
        let n = lat.n();
        let b_pyr = ScalePyramid::build(&self.symbol, lat);
        let f_pyr = ScalePyramid::build(f, lat);
        let mut out = Signal2D::zero(lat.geometry());
        for j in 0..n {
            let count = 1usize << j;
            for eta in CANCELLATIVE_SIGS {
                let mut coefs = vec![0.0f64; count * count];
                for m1 in 0..count {
                    for m2 in 0..count {
                        let bc = b_pyr.haar_coefficient(lat, j, m1, m2, eta);
                        coefs[(m1 << j) | m2] = bc * f_pyr.avg(j, m1, m2);
                    }
                }
                emit_layer(lat, j, &coefs, eta, &mut out);
            }
        }
        out
    }

    /// Adjoint: pi* g = sum_I <b, h_I> <g, h_I> 1_I / |I|.
    pub fn apply_adjoint(&self, g: &Signal2D) -> Signal2D {
        let lat = &self.lattice;
        let n = lat.n();
        let b_pyr = ScalePyramid::build(&self.symbol, lat);
        let g_pyr = ScalePyramid::build(g, lat);
        let mut out = Signal2D::zero(lat.geometry());
        for j in 0..n {
            let count = 1usize << j;
            let inv_area = 4f64.powi(j as i32);
            for m1 in 0..count {
                for m2 in 0..count {
                    let mut c = 0.0;
                    for eta in CANCELLATIVE_SIGS {
                        c += b_pyr.haar_coefficient(lat, j, m1, m2, eta)
                            * g_pyr.haar_coefficient(lat, j, m1, m2, eta);
                    }
                    if c == 0.0 {
                        continue;
                    }
                    let rect =
                        DyadicRect::new(DyadicInterval::new(j, m1), DyadicInterval::new(j, m2));
                    for cell in lat.cells_of_rect(rect) {
                        out.values_mut()[cell] += c * inv_area;
                    }
                }
            }
        }
        out
    }
}

fn emit_layer(lat: &Lattice, scale: u32, coefs: &[f64], eta: HaarSig, out: &mut Signal2D) {
    let geom = lat.geometry();
    let amp = 2f64.powi(scale as i32);
    let count = 1usize << scale;
    for m1 in 0..count {
        for m2 in 0..count {
            let c = coefs[(m1 << scale) | m2];
            if c == 0.0 {
                continue;
            }
            let k1 = lat.first().children(DyadicInterval::new(scale, m1)).expect("scale < n");
            let k2 = lat.second().children(DyadicInterval::new(scale, m2)).expect("scale < n");
            for (e1, a) in k1.iter().enumerate() {
                let s1 = if eta.0 == 1 && e1 == 1 { -1.0 } else { 1.0 };
                for (e2, b) in k2.iter().enumerate() {
                    let s2 = if eta.1 == 1 && e2 == 1 { -1.0 } else { 1.0 };
                    let v = c * amp * s1 * s2;
                    for c1 in lat.first().cells_of(*a) {
                        for c2 in lat.second().cells_of(*b) {
                            out.values_mut()[geom.index(c1, c2)] += v;
                        }
                    }
                }
            }
        }
    }
}

/// The three paraproduct components of a pointwise product:
/// a1 = sum_I Delta_I b Delta_I f, a2 = sum_I Delta_I b <f>_I,
/// a3 = sum_I <b>_I Delta_I f. Together with the mean term they rebuild
/// b f exactly: a1 + a2 + a3 = b f - <b><f>.
pub fn paraproduct_triple(
    b: &Signal2D,
    f: &Signal2D,
    lattice: &Lattice,
) -> (Signal2D, Signal2D, Signal2D) {
    let lat = lattice;
    let n = lat.n();
    let geom = lat.geometry();
    let b_pyr = ScalePyramid::build(b, lat);
    let f_pyr = ScalePyramid::build(f, lat);
    let mut a1 = Signal2D::zero(geom);
    let mut a2 = Signal2D::zero(geom);
    let mut a3 = Signal2D::zero(geom);
    let mut e_b = crate::signal::expectation_from_pyramid(&b_pyr, lat, 0);
    let mut e_f = crate::signal::expectation_from_pyramid(&f_pyr, lat, 0);
    for j in 0..n {
        let e_b_next = crate::signal::expectation_from_pyramid(&b_pyr, lat, j + 1);
        let e_f_next = crate::signal::expectation_from_pyramid(&f_pyr, lat, j + 1);
        let d_b = e_b_next.sub(&e_b);
        let d_f = e_f_next.sub(&e_f);
        a1 = a1.add(&d_b.mul(&d_f));
        a2 = a2.add(&d_b.mul(&e_f));
        a3 = a3.add(&e_b.mul(&d_f));
        e_b = e_b_next;
        e_f = e_f_next;
    }
    (a1, a2, a3)
}

/// Commutator [b, T] f = b (T f) - T (b f).
pub fn commutator_apply(
    b: &Signal2D,
    op: &dyn crate::conv::LinearOperator,
    f: &Signal2D,
) -> Signal2D {
    let tf = op.apply(f);
    let b_tf = b.mul(&tf);
    let t_bf = op.apply(&b.mul(f));
    b_tf.sub(&t_bf)
}

/// Ledger row of the representation decomposition: one displacement class
/// m = J - I (wrapped, signed), its band (k1, k2), the sum of its balanced
/// terms over all scales, and the worst normalized coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerRow {
    pub k1: u32,
    pub k2: u32,
    pub m1: i64,
    pub m2: i64,
    pub band_sum: f64,
    pub coefficient_max: f64,
}

/// The collapse of B(f,g) over one lattice into expectation/difference
/// blocks, with the balanced part split from the paraproduct part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepDecomposition {
    /// balanced-shift part of sum B(E_I f, Delta_J g)
    pub sigma1_1: f64,
    /// paraproduct part: sum B(1, h_J) <f>_J <g, h_J>
    pub sigma1_2: f64,
    /// balanced-shift part of sum B(Delta_I f, E_J g)
    pub sigma2_1: f64,
    /// paraproduct part: sum B(h_I, 1) <f, h_I> <g>_I
    pub sigma2_2: f64,
    /// sum B(Delta_I f, Delta_J g)
    pub sigma3: f64,
    /// B(f, g) computed directly from the form
    pub b_direct: f64,
    /// means subtracted from the inputs before decomposing
    pub f_mean: f64,
    pub g_mean: f64,
    pub ledger: Vec<LedgerRow>,
}

impl RepDecomposition {
    pub fn total(&self) -> f64 {
        self.sigma1_1 + self.sigma1_2 + self.sigma2_1 + self.sigma2_2 + self.sigma3
    }

    pub fn residual(&self) -> f64 {
        (self.total() - self.b_direct).abs()
    }

    pub fn relative_residual(&self) -> f64 {
        self.residual() / self.b_direct.abs().max(1e-300)
    }

    pub fn write_ledger_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "k1,k2,m1,m2,band_sum,coefficient_max")?;
        for r in &self.ledger {
            writeln!(
                w,
                "{},{},{},{},{:.9e},{:.9e}",
                r.k1, r.k2, r.m1, r.m2, r.band_sum, r.coefficient_max
            )?;
        }
        Ok(())
    }
}

fn band_exp(m: i64) -> u32 {
    if m == 0 {
        0
    } else {
        ((m.unsigned_abs() as f64).log2().ceil() as u32) + 2
    }
}

/// Decompose B(f,g) over one lattice. Means are subtracted from both inputs
/// and recorded; the identity sigma1 + sigma2 + sigma3 = B(f0, g0) holds
/// for the centered signals f0, g0 regardless of the form's diagonal
/// convention.
pub fn decompose(
    form: &FormMatrix,
    lattice: &Lattice,
    f: &Signal2D,
    g: &Signal2D,
) -> Result<RepDecomposition> {
    Ok(decompose_batch(form, lattice, &[(f.clone(), g.clone())])?.pop().expect("one pair"))
}

/// Batch variant sharing the kernel pair pyramid across input pairs.
pub fn decompose_batch(
    form: &FormMatrix,
    lattice: &Lattice,
    pairs: &[(Signal2D, Signal2D)],
) -> Result<Vec<RepDecomposition>> {
    let n = lattice.n();
    if n < 1 {
        return Err(LabError::Parameter("need n >= 1".into()));
    }
    let pyramid = PairPyramid::build(form, lattice, 1)?;
    let centered: Vec<(Signal2D, Signal2D, f64, f64)> = pairs
        .iter()
        .map(|(f, g)| {
            let fm = f.mean();
            let gm = g.mean();
            (f.mean_zero(), g.mean_zero(), fm, gm)
        })
        .collect();
    let f_pyrs: Vec<ScalePyramid> =
        centered.iter().map(|(f, _, _, _)| ScalePyramid::build(f, lattice)).collect();
    let g_pyrs: Vec<ScalePyramid> =
        centered.iter().map(|(_, g, _, _)| ScalePyramid::build(g, lattice)).collect();

    struct PairAcc {
        s11: f64,
        s12: f64,
        s21: f64,
        s22: f64,
        s3: f64,
        ledger: std::collections::HashMap<(i64, i64), (f64, f64)>,
    }
    let mut accs: Vec<PairAcc> = pairs
        .iter()
        .map(|_| PairAcc {
            s11: 0.0,
            s12: 0.0,
            s21: 0.0,
            s22: 0.0,
            s3: 0.0,
            ledger: std::collections::HashMap::new(),
        })
        .collect();

    for j in 0..n {
        let count = 1usize << j;
        let sq_count = count * count;
        let level = pyramid.level(j + 1).expect("levels built from 1");
        let fine_count = count << 1;
        let fine_sq = fine_count * fine_count;
        let scale_factor = 4f64.powi(j as i32);
        let side_sqrt = 0.5f64.powi(j as i32);

        // children block indices per square
        let mut child_cache = vec![[0usize; 4]; sq_count];
        for m1 in 0..count {
            let k1 = lattice.first().children(DyadicInterval::new(j, m1))?;
            for m2 in 0..count {
                let k2 = lattice.second().children(DyadicInterval::new(j, m2))?;
                let mut out = [0usize; 4];
                let mut t = 0;
                for a in k1 {
                    for b in k2 {
                        out[t] = (a.index << (j + 1)) | b.index;
                        t += 1;
                    }
                }
                child_cache[(m1 << j) | m2] = out;
            }
        }

        // per-pair Haar data at this scale
        struct ScaleData {
            fc0: Vec<f64>,
            f_eta: [Vec<f64>; 3],
            gc0: Vec<f64>,
            g_eta: [Vec<f64>; 3],
        }
        let data: Vec<ScaleData> = (0..pairs.len())
            .map(|p| {
                let grab = |pyr: &ScalePyramid, eta: HaarSig| -> Vec<f64> {
                    (0..sq_count)
                        .map(|s| pyr.haar_coefficient(lattice, j, s >> j, s & (count - 1), eta))
                        .collect()
                };
                let favg = |pyr: &ScalePyramid| -> Vec<f64> {
                    (0..sq_count)
                        .map(|s| side_sqrt * pyr.avg(j, s >> j, s & (count - 1)))
                        .collect()
                };
                ScaleData {
                    fc0: favg(&f_pyrs[p]),
                    f_eta: [
                        grab(&f_pyrs[p], (0, 1)),
                        grab(&f_pyrs[p], (1, 0)),
                        grab(&f_pyrs[p], (1, 1)),
                    ],
                    gc0: favg(&g_pyrs[p]),
                    g_eta: [
                        grab(&g_pyrs[p], (0, 1)),
                        grab(&g_pyrs[p], (1, 0)),
                        grab(&g_pyrs[p], (1, 1)),
                    ],
                }
            })
            .collect();

        // eta order must match the hc index layout: (0,1) -> 1, (1,0) -> 2,
        // (1,1) -> 3
        let signed = |a: usize, b: usize| -> i64 {
            let half = (count / 2) as i64;
            let mut d = (b as i64 - a as i64).rem_euclid(count as i64);
            if count > 1 && d > half {
                d -= count as i64;
            }
            d
        };

        for iy in 0..sq_count {
            let cy = child_cache[iy];
            for ix in 0..sq_count {
                let cx = child_cache[ix];
                let mut block = [0.0f64; 16];
                for (a, &sxc) in cx.iter().enumerate() {
                    for (b, &syc) in cy.iter().enumerate() {
                        block[a * 4 + b] = level[sxc * fine_sq + syc];
                    }
                }
                let hc = haar_pairings(&block, scale_factor);
                let m1 = signed(iy >> j, ix >> j);
                let m2 = signed(iy & (count - 1), ix & (count - 1));
                let (k1, k2) = (band_exp(m1), band_exp(m2));
                let weight = 2f64.powf(
                    -form_weight_exponent(form, k1, k2),
                ) * 2f64.powi(-((k1 + k2) as i32));
                for (p, acc) in accs.iter_mut().enumerate() {
                    let d = &data[p];
                    // Sigma1: B(E_I f, Delta_J g) with I = iy, J = ix
                    let mut s1 = 0.0;
                    let mut s11 = 0.0;
                    let mut coef_max = 0.0f64;
                    for t in 0..3 {
                        let coef = hc[t + 1]; // beta = 0 row, gamma = t+1
                        s1 += coef * d.fc0[iy] * d.g_eta[t][ix];
                        s11 += coef * (d.fc0[iy] - d.fc0[ix]) * d.g_eta[t][ix];
                        coef_max = coef_max.max(coef.abs());
                    }
                    acc.s11 += s11;
                    acc.s12 += s1 - s11;
                    // Sigma2: B(Delta_I f, E_J g)
                    let mut s2 = 0.0;
                    let mut s21 = 0.0;
                    for t in 0..3 {
                        let coef = hc[(t + 1) * 4]; // gamma = 0 column
                        s2 += coef * d.f_eta[t][iy] * d.gc0[ix];
                        s21 += coef * d.f_eta[t][iy] * (d.gc0[ix] - d.gc0[iy]);
                    }
                    acc.s21 += s21;
                    acc.s22 += s2 - s21;
                    // Sigma3: both cancellative
                    let mut s3 = 0.0;
                    for bt in 0..3 {
                        for gt in 0..3 {
                            s3 += hc[(bt + 1) * 4 + (gt + 1)] * d.f_eta[bt][iy] * d.g_eta[gt][ix];
                        }
                    }
                    acc.s3 += s3;
                    let e = acc.ledger.entry((m1, m2)).or_insert((0.0, 0.0));
                    e.0 += s11;
                    e.1 = e.1.max(coef_max / weight);
                }
            }
        }
    }

    Ok(accs
        .into_iter()
        .enumerate()
        .map(|(p, acc)| {
            let (f0, g0, fm, gm) = &centered[p];
            let b_direct = form.pair(f0, g0);
            let mut ledger: Vec<LedgerRow> = acc
                .ledger
                .into_iter()
                .map(|((m1, m2), (band_sum, coefficient_max))| LedgerRow {
                    k1: band_exp(m1),
                    k2: band_exp(m2),
                    m1,
                    m2,
                    band_sum,
                    coefficient_max,
                })
                .collect();
            ledger.sort_by_key(|r| (r.k1, r.k2, r.m1, r.m2));
            RepDecomposition {
                sigma1_1: acc.s11,
                sigma1_2: acc.s12,
                sigma2_1: acc.s21,
                sigma2_2: acc.s22,
                sigma3: acc.s3,
                b_direct,
                f_mean: *fm,
                g_mean: *gm,
                ledger,
            }
        })
        .collect())
}

fn form_weight_exponent(form: &FormMatrix, k1: u32, k2: u32) -> f64 {
    // representation weight exponent theta2 (kmax - kmin) + theta1 kmin;
    // forms assembled from a kernel know their thetas, custom forms fall
    // back to theta = 1
    let (t1, t2) = form.thetas().unwrap_or((1.0, 1.0));
    t2 * (k1.max(k2) - k1.min(k2)) as f64 + t1 * k1.min(k2) as f64
}
