//! Maximal operators: the lattice maximal over fixed-eccentricity dyadic
//! rectangles, the strong maximal over all grid-aligned rectangles
//! (computed exactly by a shape sweep with sliding-window maxima), the
//! iterated one-dimensional bound, and the operator-adapted sharp maximal
//! that drives sparse domination.

use crate::error::{LabError, Result};
use crate::grid::{DomainMode, GridGeometry};
use crate::kernel::{phi, KernelKind, KernelSpec};
use crate::lattice::{DyadicInterval, Lattice};
use crate::numerics::{sliding_max, Prefix2d};
use crate::signal::Signal2D;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Cellwise sup of |f|-averages over the containing rectangles of the
/// fixed-eccentricity family: all scale pairs (j1, j2) with
/// j2 - j1 = ecc_exp.
pub fn lattice_maximal(f: &Signal2D, lattice: &Lattice, ecc_exp: i32) -> Result<Signal2D> {
    let geom = lattice.geometry();
    assert_eq!(f.geometry(), geom);
    let n = geom.n as i64;
    let side = geom.side();
    let abs = f.abs();
    let mut out = Signal2D::zero(geom);
    let mut any = false;
    for j1 in 0..=n {
        let j2 = j1 + ecc_exp as i64;
        if j2 < 0 || j2 > n {
            continue;
        }
        any = true;
        let (j1, j2) = (j1 as u32, j2 as u32);
        // average |f| over I^1 x I^2 for every lattice rectangle at this
        // scale pair, then broadcast to cells
        let c1_count = 1usize << j1;
        let c2_count = 1usize << j2;
        let len1 = side >> j1;
        let len2 = side >> j2;
        let mut avgs = vec![0.0f64; c1_count * c2_count];
        for m1 in 0..c1_count {
            let i1 = DyadicInterval::new(j1, m1);
            for m2 in 0..c2_count {
                let i2 = DyadicInterval::new(j2, m2);
                let mut s = 0.0;
                for c1 in lattice.first().cells_of(i1) {
                    for c2 in lattice.second().cells_of(i2) {
                        s += abs.values()[geom.index(c1, c2)];
                    }
                }
                avgs[m1 * c2_count + m2] = s / (len1 * len2) as f64;
            }
        }
        for c1 in 0..side {
            let m1 = lattice.first().interval_of_cell(j1, c1).index;
            for c2 in 0..side {
                let m2 = lattice.second().interval_of_cell(j2, c2).index;
                let v = avgs[m1 * c2_count + m2];
                let cell = geom.index(c1, c2);
                if v > out.values()[cell] {
                    out.values_mut()[cell] = v;
                }
            }
        }
    }
    if !any {
        return Err(LabError::Parameter(format!(
            "eccentricity 2^{} admits no scale pair with n = {}",
            ecc_exp, geom.n
        )));
    }
    Ok(out)
}

/// Exact strong maximal: sup over all axes-parallel grid rectangles
/// (cell-resolution corners) containing the cell. One pass per rectangle
/// shape: box averages by prefix sums, then two separable sliding-window
/// maxima to spread each average to all cells the rectangle covers.
/// Rectangles wrap in torus mode.
pub fn strong_maximal(f: &Signal2D) -> Signal2D {
    let geom = f.geometry();
    let side = geom.side();
    let abs = f.abs();
    let prefix = Prefix2d::build(abs.values(), side, side);
    let wrap = geom.mode == DomainMode::Torus;
    let shapes: Vec<(usize, usize)> = (1..=side)
        .flat_map(|h| (1..=side).map(move |w| (h, w)))
        .collect();
    let result = shapes
        .par_iter()
        .fold(
            || vec![0.0f64; geom.cells()],
            |mut best, &(h, w)| {
                accumulate_shape(&prefix, &mut best, side, h, w, wrap);
                best
            },
        )
        .reduce(
            || vec![0.0f64; geom.cells()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x = x.max(y);
                }
                a
            },
        );
    Signal2D::from_values(geom, result).expect("dimension preserved")
}

/// For one shape (h, w): averages at all anchor positions, then per row a
/// sliding max over anchors covering each column, then per column over
/// rows.
fn accumulate_shape(
    prefix: &Prefix2d,
    best: &mut [f64],
    side: usize,
    h: usize,
    w: usize,
    wrap: bool,
) {
    let cells = (h * w) as f64;
    let (r_anchors, c_anchors) = if wrap { (side, side) } else { (side - h + 1, side - w + 1) };
    // avg[r][c] for anchor (r, c)
    let mut avg = vec![0.0f64; r_anchors * c_anchors];
    for r in 0..r_anchors {
        for c in 0..c_anchors {
            let s = if wrap {
                prefix.box_sum_wrapped(r, h, c, w)
            } else {
                prefix.box_sum(r, r + h, c, c + w)
            };
            avg[r * c_anchors + c] = s / cells;
        }
    }
    // spread along columns: cell column j is covered by anchors c in
    // [j-w+1, j] (mod side when wrapping)
    let mut row_spread = vec![0.0f64; r_anchors * side];
    let mut buf: Vec<f64> = Vec::new();
    for r in 0..r_anchors {
        let row = &avg[r * c_anchors..(r + 1) * c_anchors];
        if wrap {
            // duplicate to cover cyclic windows
            buf.clear();
            buf.extend_from_slice(row);
            buf.extend_from_slice(&row[..w.min(side) - 0]);
            let sm = sliding_max(&buf[..side + w - 1], w);
            for j in 0..side {
                // anchors covering column j: j-w+1 .. j cyclic; in the
                // doubled array these are positions j-w+1+offset
                row_spread[r * side + j] = sm[(j + side - w + 1) % side];
            }
        } else {
            let sm = sliding_max(row, w.min(row.len()));
            // sm[i] = max over anchors [i, i+w-1]; column j covered by
            // anchors [max(0, j-w+1), min(j, c_anchors-1)]
            for j in 0..side {
                let lo = j.saturating_sub(w - 1).min(c_anchors - 1);
                let hi = j.min(c_anchors - 1);
                // window of length w starting at lo covers [lo, lo+w-1]
                // which contains hi since hi - lo <= w - 1
                let idx = lo.min(sm.len() - 1);
                let mut m = sm[idx];
                // exact: take max over the anchor range directly when the
                // window is clipped at the right edge
                if hi < lo + w - 1 && idx + w > c_anchors {
                    m = row[lo..=hi].iter().cloned().fold(f64::MIN, f64::max);
                }
                row_spread[r * side + j] = m;
            }
        }
    }
    // spread along rows
    for j in 0..side {
        let col: Vec<f64> = (0..r_anchors).map(|r| row_spread[r * side + j]).collect();
        if wrap {
            buf.clear();
            buf.extend_from_slice(&col);
            buf.extend_from_slice(&col[..h.min(side)]);
            let sm = sliding_max(&buf[..side + h - 1], h);
            for i in 0..side {
                let v = sm[(i + side - h + 1) % side];
                let cell = i * side + j;
                if v > best[cell] {
                    best[cell] = v;
                }
            }
        } else {
            for i in 0..side {
                let lo = i.saturating_sub(h - 1).min(r_anchors - 1);
                let hi = i.min(r_anchors - 1);
                let mut m = f64::MIN;
                for r in lo..=hi {
                    m = m.max(col[r]);
                }
                let cell = i * side + j;
                if m > best[cell] {
                    best[cell] = m;
                }
            }
        }
    }
}

/// One-dimensional maximal along one axis: per line, sup of averages over
/// all intervals containing the position.
fn maximal_1d_lines(values: &[f64], side: usize, along_second: bool) -> Vec<f64> {
    let mut out = vec![0.0f64; values.len()];
    let line = |i: usize, t: usize| -> usize {
        if along_second {
            i * side + t
        } else {
            t * side + i
        }
    };
    let mut vals = vec![0.0f64; side];
    for i in 0..side {
        for t in 0..side {
            vals[t] = values[line(i, t)].abs();
        }
        // prefix sums for window averages
        let mut pre = vec![0.0f64; side + 1];
        for t in 0..side {
            pre[t + 1] = pre[t] + vals[t];
        }
        let mut best = vec![0.0f64; side];
        for w in 1..=side {
            let avgs: Vec<f64> =
                (0..=side - w).map(|a| (pre[a + w] - pre[a]) / w as f64).collect();
            let sm = sliding_max(&avgs, w.min(avgs.len()));
            for t in 0..side {
                let lo = t.saturating_sub(w - 1).min(avgs.len() - 1);
                let hi = t.min(avgs.len() - 1);
                let idx = lo.min(sm.len() - 1);
                let mut m = sm[idx];
                if hi < lo + w - 1 && idx + w > avgs.len() {
                    m = avgs[lo..=hi].iter().cloned().fold(f64::MIN, f64::max);
                }
                if m > best[t] {
                    best[t] = m;
                }
            }
        }
        for t in 0..side {
            out[line(i, t)] = best[t];
        }
    }
    out
}

/// Iterated bound M^2 M^1 f: the one-dimensional maximal in the first
/// coordinate, then in the second. Dominates the strong maximal cellwise.
pub fn iterated_maximal(f: &Signal2D) -> Signal2D {
    let geom = f.geometry();
    let side = geom.side();
    let m1 = maximal_1d_lines(f.values(), side, false);
    let m2 = maximal_1d_lines(&m1, side, true);
    Signal2D::from_values(geom, m2).expect("dimension preserved")
}

/// Square maximal over all grid-aligned squares with dyadic side lengths at
/// every cell translate (the Hardy-Littlewood surrogate of the sparse
/// builder).
pub fn square_maximal(f: &Signal2D) -> Signal2D {
    let geom = f.geometry();
    let side = geom.side();
    let abs = f.abs();
    let prefix = Prefix2d::build(abs.values(), side, side);
    let wrap = geom.mode == DomainMode::Torus;
    let mut best = vec![0.0f64; geom.cells()];
    for j in 0..=geom.n {
        let len = 1usize << j;
        accumulate_shape(&prefix, &mut best, side, len, len, wrap);
    }
    Signal2D::from_values(geom, best).expect("dimension preserved")
}

/// Side limit for the sharp maximal's per-cell prefix tables (memory grows
/// like 16^n).
pub const SHARP_SIDE_LIMIT: usize = 64;

/// The operator-adapted sharp maximal: sup over grid-aligned dyadic-scale
/// squares J containing the cell of the oscillation of T(1_{(3J)^c} f)
/// over J. Box mode; T given by a bump kernel, discretized at cell centers
/// so that the masked convolutions are exact partial sums.
pub fn sharp_maximal(spec: &KernelSpec, f: &Signal2D) -> Result<Signal2D> {
    let geom = f.geometry();
    if geom.mode != DomainMode::Box {
        return Err(LabError::Parameter("sharp maximal runs in box mode".into()));
    }
    let (t1, t2) = match spec.kind {
        KernelKind::Bump { t1, t2 } => (t1, t2),
        KernelKind::PurePower => {
            return Err(LabError::Parameter(
                "sharp maximal needs an everywhere-defined bump kernel".into(),
            ))
        }
    };
    let side = geom.side();
    if side > SHARP_SIDE_LIMIT {
        return Err(LabError::Resource(format!(
            "sharp maximal stores per-cell prefix tables; side {} exceeds {}",
            side, SHARP_SIDE_LIMIT
        )));
    }
    let dl = geom.cell_len();
    let ecc = spec.eccentricity_weight();
    // 1D kernel factors at cell-center displacements
    let table: Vec<Vec<f64>> = [t1, t2]
        .iter()
        .map(|t| {
            (0..2 * side - 1)
                .map(|i| {
                    let d = i as i64 - (side as i64 - 1);
                    phi(d as f64 * dl / t) / t
                })
                .collect()
        })
        .collect();
    let k_at = |y: (usize, usize), u: (usize, usize)| -> f64 {
        let d1 = y.0 as i64 - u.0 as i64 + side as i64 - 1;
        let d2 = y.1 as i64 - u.1 as i64 + side as i64 - 1;
        ecc * table[0][d1 as usize] * table[1][d2 as usize]
    };
    // per-cell prefix tables of u -> K(y - u) f(u)
    let tables: Vec<Prefix2d> = (0..geom.cells())
        .into_par_iter()
        .map(|yc| {
            let y = geom.coords(yc);
            let mut vals = vec![0.0f64; geom.cells()];
            for u1 in 0..side {
                for u2 in 0..side {
                    vals[u1 * side + u2] = k_at(y, (u1, u2)) * f.values()[u1 * side + u2];
                }
            }
            Prefix2d::build(&vals, side, side)
        })
        .collect();
    let area = geom.cell_area();
    let full: Vec<f64> = tables.iter().map(|p| p.box_sum(0, side, 0, side) * area).collect();

    // sweep squares: dyadic side lengths, all inside-box translates
    let mut out = vec![0.0f64; geom.cells()];
    for j in 0..=geom.n {
        let len = 1usize << (geom.n - j);
        let anchors = side - len + 1;
        let layer: Vec<((usize, usize), f64)> = (0..anchors * anchors)
            .into_par_iter()
            .map(|a| {
                let (r0, c0) = (a / anchors, a % anchors);
                // 3J clipped to the box
                let tr0 = r0.saturating_sub(len);
                let tr1 = (r0 + 2 * len).min(side);
                let tc0 = c0.saturating_sub(len);
                let tc1 = (c0 + 2 * len).min(side);
                let mut lo = f64::MAX;
                let mut hi = f64::MIN;
                for r in r0..r0 + len {
                    for c in c0..c0 + len {
                        let yc = r * side + c;
                        let v = full[yc] - tables[yc].box_sum(tr0, tr1, tc0, tc1) * area;
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                ((r0, c0), hi - lo)
            })
            .collect();
        for ((r0, c0), osc) in layer {
            for r in r0..r0 + len {
                for c in c0..c0 + len {
                    let cell = r * side + c;
                    if osc > out[cell] {
                        out[cell] = osc;
                    }
                }
            }
        }
    }
    Signal2D::from_values(geom, out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaximalReport {
    pub operator: String,
    pub theta2: f64,
    pub t1: f64,
    pub t2: f64,
    /// sup over cells of sharp maximal / strong maximal
    pub max_ratio: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Measure the cellwise domination constant of the sharp maximal by the
/// strong maximal over random inputs.
pub fn sharp_domination_ratio(
    spec: &KernelSpec,
    geom: GridGeometry,
    trials: usize,
    seed: u64,
) -> Result<MaximalReport> {
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (t1, t2) = match spec.kind {
        KernelKind::Bump { t1, t2 } => (t1, t2),
        KernelKind::PurePower => {
            return Err(LabError::Parameter("bump kernels only".into()));
        }
    };
    let mut max_ratio = 0.0f64;
    for _ in 0..trials {
        let f = Signal2D::random_uniform(geom, &mut rng);
        let sharp = sharp_maximal(spec, &f)?;
        let strong = strong_maximal(&f);
        for (s, m) in sharp.values().iter().zip(strong.values()) {
            if *m > 0.0 {
                max_ratio = max_ratio.max(s / m);
            } else if *s > 0.0 {
                return Err(LabError::Invariant(
                    "sharp maximal positive where strong maximal vanishes".into(),
                ));
            }
        }
    }
    Ok(MaximalReport {
        operator: "sharp_vs_strong".into(),
        theta2: spec.theta2,
        t1,
        t2,
        max_ratio,
        trials,
        seed,
    })
}
