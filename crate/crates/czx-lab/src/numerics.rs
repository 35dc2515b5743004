//! Shared numerical machinery: adaptive quadrature (with singular-endpoint
//! handling), power iteration for operator norms, summed-area tables,
//! sliding-window maxima, and least-squares fits.

use crate::error::{LabError, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Adaptive Simpson quadrature on [a, b].
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(LabError::Numeric("quadrature endpoints must be finite".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let v = simpson_rec(f, a, b, fa, fm, fb, whole, tol, 52);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LabError::Numeric("quadrature did not converge".into()))
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Integrate f over [a, b] when f has an integrable singularity at `sing`
/// (outside or at an endpoint of [a, b] is fine). The window around the
/// singularity is excluded; the remaining pieces near it are integrated in
/// log-distance coordinates, where power singularities become smooth
/// exponentials.
pub fn integrate_near_singularity(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    sing: f64,
    window: f64,
    tol: f64,
) -> Result<f64> {
    debug_assert!(a <= b);
    let mut total = 0.0;
    // piece left of the singularity: y = sing - u with u = distance
    let lo = window.max(sing - b);
    let hi = sing - a;
    if hi > lo {
        let g = |s: f64| {
            let u = s.exp();
            f(sing - u) * u
        };
        total += adaptive_simpson(&g, lo.ln(), hi.ln(), tol)?;
    }
    // piece right of the singularity: y = sing + u
    let lo = window.max(a - sing);
    let hi = b - sing;
    if hi > lo {
        let g = |s: f64| {
            let u = s.exp();
            f(sing + u) * u
        };
        total += adaptive_simpson(&g, lo.ln(), hi.ln(), tol)?;
    }
    Ok(total)
}

/// Integrate over [a, b] with a set of singular points (interior or at the
/// endpoints), excluding a window around each and using log coordinates on
/// the segments that touch one.
pub fn integrate_with_singularities(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    sings: &[f64],
    window: f64,
    tol: f64,
) -> Result<f64> {
    let mut pts: Vec<f64> = vec![a, b];
    pts.extend(sings.iter().copied().filter(|s| *s >= a && *s <= b));
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    let is_sing = |x: f64| sings.contains(&x);
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        total += match (is_sing(x0), is_sing(x1)) {
            (true, true) => {
                let mid = 0.5 * (x0 + x1);
                integrate_near_singularity(f, x0, mid, x0, window, tol)?
                    + integrate_near_singularity(f, mid, x1, x1, window, tol)?
            }
            (true, false) => integrate_near_singularity(f, x0, x1, x0, window, tol)?,
            (false, true) => integrate_near_singularity(f, x0, x1, x1, window, tol)?,
            (false, false) => adaptive_simpson(f, x0, x1, tol)?,
        };
    }
    Ok(total)
}

/// Largest singular value of a linear operator given by apply/adjoint
/// closures, via power iteration on A*A with a seeded start vector.
pub fn operator_norm(
    apply: &impl Fn(&[f64]) -> Vec<f64>,
    adjoint: &impl Fn(&[f64]) -> Vec<f64>,
    dim: usize,
    max_iters: usize,
    rel_tol: f64,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut sigma = 0.0f64;
    for _ in 0..max_iters {
        let av = apply(&v);
        let mut w = adjoint(&av);
        let norm_w = l2(&w);
        if norm_w == 0.0 {
            return 0.0;
        }
        let new_sigma = l2(&av);
        for x in w.iter_mut() {
            *x /= norm_w;
        }
        v = w;
        if sigma > 0.0 && (new_sigma - sigma).abs() <= rel_tol * sigma {
            return new_sigma;
        }
        sigma = new_sigma;
    }
    sigma
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = l2(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Summed-area table over a rows x cols grid for O(1) box sums.
pub struct Prefix2d {
    rows: usize,
    cols: usize,
    table: Vec<f64>, // (rows+1) x (cols+1)
}

impl Prefix2d {
    pub fn build(values: &[f64], rows: usize, cols: usize) -> Prefix2d {
        assert_eq!(values.len(), rows * cols);
        let w = cols + 1;
        let mut table = vec![0.0f64; (rows + 1) * w];
        for r in 0..rows {
            let mut run = 0.0;
            for c in 0..cols {
                run += values[r * cols + c];
                table[(r + 1) * w + (c + 1)] = table[r * w + (c + 1)] + run;
            }
        }
        Prefix2d { rows, cols, table }
    }

    /// Sum over rows [r0, r1) x cols [c0, c1); no wrapping.
    #[inline]
    pub fn box_sum(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
        debug_assert!(r1 <= self.rows && c1 <= self.cols);
        let w = self.cols + 1;
        self.table[r1 * w + c1] - self.table[r0 * w + c1] - self.table[r1 * w + c0]
            + self.table[r0 * w + c0]
    }

    /// Sum over a possibly wrapping index range per axis (torus semantics).
    pub fn box_sum_wrapped(&self, r0: usize, rlen: usize, c0: usize, clen: usize) -> f64 {
        let mut total = 0.0;
        for (rr0, rr1) in split_wrapped(r0, rlen, self.rows) {
            for (cc0, cc1) in split_wrapped(c0, clen, self.cols) {
                total += self.box_sum(rr0, rr1, cc0, cc1);
            }
        }
        total
    }
}

/// Split a cyclic range (start, len) into at most two linear ranges.
pub fn split_wrapped(start: usize, len: usize, size: usize) -> Vec<(usize, usize)> {
    debug_assert!(len <= size && start < size);
    if start + len <= size {
        vec![(start, start + len)]
    } else {
        vec![(start, size), (0, start + len - size)]
    }
}

/// Sliding maximum of `values` over windows of width `w`; out[i] is the max
/// of values[i..i+w]. Output length is len - w + 1.
pub fn sliding_max(values: &[f64], w: usize) -> Vec<f64> {
    assert!(w >= 1 && w <= values.len());
    let mut out = Vec::with_capacity(values.len() - w + 1);
    let mut deque: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    for i in 0..values.len() {
        while let Some(&back) = deque.back() {
            if values[back] <= values[i] {
                deque.pop_back();
            } else {
                break;
            }
        }
        deque.push_back(i);
        if let Some(&front) = deque.front() {
            if front + w == i {
                deque.pop_front();
            }
        }
        if i + 1 >= w {
            out.push(values[*deque.front().unwrap()]);
        }
    }
    out
}

/// Least-squares line through (x, y) points; returns (slope, intercept).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(LabError::Parameter("need at least two points for a line fit".into()));
    }
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(LabError::Numeric("degenerate abscissas in line fit".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    Ok((slope, (sy - slope * sx) / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        let v = adaptive_simpson(&|x: f64| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 1e-12).unwrap();
        // antiderivative x^4/4 - x^2 + x
        let exact = (4.0 - 4.0 + 2.0) - (0.25 - 1.0 - 1.0);
        assert!((v - exact).abs() < 1e-10);
    }

    #[test]
    fn log_substitution_handles_power_singularity() {
        // int_0^1 x^{-1/2} dx = 2
        let v = integrate_near_singularity(&|x: f64| x.powf(-0.5), 0.0, 1.0, 0.0, 1e-14, 1e-12)
            .unwrap();
        assert!((v - 2.0).abs() < 1e-6, "{}", v);
    }

    #[test]
    fn interior_singularity_split() {
        // int_0^2 |x-1|^{-1/2} dx = 4
        let f = |x: f64| (x - 1.0f64).abs().powf(-0.5);
        let v = integrate_with_singularities(&f, 0.0, 2.0, &[1.0], 1e-14, 1e-12).unwrap();
        assert!((v - 4.0).abs() < 1e-6, "{}", v);
    }

    #[test]
    fn power_iteration_finds_top_singular_value() {
        // diagonal operator with entries 1..=5
        let d = [1.0, 2.0, 3.0, 4.0, 5.0];
        let apply = |v: &[f64]| v.iter().zip(d).map(|(x, s)| x * s).collect::<Vec<_>>();
        let norm = operator_norm(&apply, &apply, 5, 200, 1e-10, 3);
        assert!((norm - 5.0).abs() < 1e-6);
    }

    #[test]
    fn prefix_box_sums_match_naive() {
        let rows = 5;
        let cols = 7;
        let values: Vec<f64> = (0..rows * cols).map(|i| (i * i % 13) as f64).collect();
        let p = Prefix2d::build(&values, rows, cols);
        for r0 in 0..rows {
            for r1 in r0..=rows {
                for c0 in 0..cols {
                    for c1 in c0..=cols {
                        let mut exact = 0.0;
                        for r in r0..r1 {
                            for c in c0..c1 {
                                exact += values[r * cols + c];
                            }
                        }
                        assert_eq!(p.box_sum(r0, r1, c0, c1), exact);
                    }
                }
            }
        }
        // wrapped sum
        let wrapped = p.box_sum_wrapped(3, 4, 5, 4);
        let mut exact = 0.0;
        for dr in 0..4 {
            for dc in 0..4 {
                exact += values[((3 + dr) % rows) * cols + (5 + dc) % cols];
            }
        }
        assert_eq!(wrapped, exact);
    }

    #[test]
    fn sliding_max_matches_naive() {
        let v = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        for w in 1..=v.len() {
            let fast = sliding_max(&v, w);
            for (i, &m) in fast.iter().enumerate() {
                let naive = v[i..i + w].iter().cloned().fold(f64::MIN, f64::max);
                assert_eq!(m, naive);
            }
        }
    }

    #[test]
    fn line_fit_recovers_slope() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (s, b) = linear_fit(&xs, &ys).unwrap();
        assert!((s - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
    }
}
