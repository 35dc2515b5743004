//! CZX kernel evaluation and numerical verifiers for the size, mixed
//! Hölder, slice-integral and Hörmander estimates.
//!
//! Two kernel families are provided. The pure power model takes the CZX
//! size bound as an equality with positive sign, so it is the extremal
//! kernel for decay experiments. The bump family is the compactly
//! supported convolution kernel whose eccentricity prefactor carries the
//! theta_2 decay; it is defined everywhere and is the vehicle for the
//! weighted experiments.

use crate::error::{LabError, Result};
use crate::numerics::{adaptive_simpson, integrate_with_singularities};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// The standard smooth bump: exp(1 - 1/(1-t^2)) inside (-1, 1), zero
/// outside. Nonnegative, C-infinity, phi(0) = 1.
pub fn phi(t: f64) -> f64 {
    if t.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    } else {
        0.0
    }
}

/// Integral of phi over the line, computed once by quadrature.
pub fn phi_integral() -> f64 {
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| {
        2.0 * adaptive_simpson(&phi, 0.0, 1.0, 1e-14).expect("phi is smooth")
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelKind {
    /// K(x,y) = D(x,y) / (|x1-y1| |x2-y2|), defined off the coordinate
    /// lines.
    PurePower,
    /// Convolution kernel (t1/t2 + t2/t1)^{-theta2} prod phi(z_i/t_i)/t_i,
    /// defined everywhere, supported in |z_i| < t_i.
    Bump { t1: f64, t2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub theta1: f64,
    pub theta2: f64,
    /// Replace s^{-theta2} by s^{-1} log s in the decay profile; only
    /// meaningful at theta2 = 1.
    pub log_factor: bool,
    pub kind: KernelKind,
}

impl KernelSpec {
    pub fn pure(theta1: f64, theta2: f64) -> Result<Self> {
        check_theta(theta1)?;
        check_theta(theta2)?;
        Ok(KernelSpec { theta1, theta2, log_factor: false, kind: KernelKind::PurePower })
    }

    pub fn pure_log(theta1: f64) -> Result<Self> {
        check_theta(theta1)?;
        Ok(KernelSpec { theta1, theta2: 1.0, log_factor: true, kind: KernelKind::PurePower })
    }

    pub fn bump(theta2: f64, t1: f64, t2: f64) -> Result<Self> {
        check_theta(theta2)?;
        if t1 <= 0.0 || t2 <= 0.0 {
            return Err(LabError::Parameter("bump widths must be positive".into()));
        }
        Ok(KernelSpec { theta1: 1.0, theta2, log_factor: false, kind: KernelKind::Bump { t1, t2 } })
    }

    pub fn bump_log(t1: f64, t2: f64) -> Result<Self> {
        let mut spec = Self::bump(1.0, t1, t2)?;
        spec.log_factor = true;
        Ok(spec)
    }

    pub fn with_log(mut self) -> Result<Self> {
        if self.theta2 != 1.0 {
            return Err(LabError::Parameter("log profile requires theta2 = 1".into()));
        }
        self.log_factor = true;
        Ok(self)
    }

    /// theta = min(theta1, theta2)/2, the exponent of the symmetric
    /// regularity bound.
    pub fn theta(&self) -> f64 {
        0.5 * self.theta1.min(self.theta2)
    }

    pub fn is_bump(&self) -> bool {
        matches!(self.kind, KernelKind::Bump { .. })
    }

    /// Decay profile s -> s^{-theta2}, or s^{-1} log s in log mode.
    /// Defined for s >= 2 (s = r + 1/r).
    #[inline]
    pub fn profile(&self, s: f64) -> f64 {
        if self.log_factor {
            s.ln() / s
        } else {
            s.powf(-self.theta2)
        }
    }

    /// Eccentricity prefactor of the bump kernel.
    pub fn eccentricity_weight(&self) -> f64 {
        match self.kind {
            KernelKind::Bump { t1, t2 } => self.profile(t1 / t2 + t2 / t1),
            KernelKind::PurePower => 1.0,
        }
    }

    /// Evaluate at a displacement z = x - y.
    pub fn eval_displacement(&self, z: [f64; 2]) -> Result<f64> {
        match self.kind {
            KernelKind::PurePower => {
                let (d1, d2) = (z[0].abs(), z[1].abs());
                if d1 == 0.0 || d2 == 0.0 {
                    return Err(LabError::Singularity(
                        "pure kernel undefined on coordinate lines".into(),
                    ));
                }
                let s = d1 / d2 + d2 / d1;
                Ok(self.profile(s) / (d1 * d2))
            }
            KernelKind::Bump { t1, t2 } => {
                Ok(self.eccentricity_weight() * phi(z[0] / t1) * phi(z[1] / t2) / (t1 * t2))
            }
        }
    }

    pub fn eval(&self, x: [f64; 2], y: [f64; 2]) -> Result<f64> {
        self.eval_displacement([x[0] - y[0], x[1] - y[1]])
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta <= 1.0 {
        Ok(())
    } else {
        Err(LabError::Parameter(format!("theta must lie in (0, 1], got {}", theta)))
    }
}

/// The decay factor (r + 1/r)^{-theta2} with r the ratio of coordinate
/// gaps; the log variant is (r + 1/r)^{-1} log(r + 1/r).
pub fn decay_factor(x: [f64; 2], y: [f64; 2], theta2: f64, log_factor: bool) -> Result<f64> {
    let d1 = (x[0] - y[0]).abs();
    let d2 = (x[1] - y[1]).abs();
    if d1 == 0.0 || d2 == 0.0 {
        return Err(LabError::Singularity("decay factor needs x1 != y1 and x2 != y2".into()));
    }
    check_theta(theta2)?;
    let s = d1 / d2 + d2 / d1;
    Ok(if log_factor { s.ln() / s } else { s.powf(-theta2) })
}

/// Report of one estimate verification sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub estimate: String,
    pub max_ratio: f64,
    pub argmax_x: [f64; 2],
    pub argmax_y: [f64; 2],
    pub samples: usize,
    pub seed: u64,
    /// Range of coordinate gaps explored, as log2 exponents.
    pub scale_range: (f64, f64),
}

struct RatioTracker {
    name: &'static str,
    max_ratio: f64,
    argmax: ([f64; 2], [f64; 2]),
}

impl RatioTracker {
    fn new(name: &'static str) -> Self {
        RatioTracker { name, max_ratio: 0.0, argmax: ([0.0; 2], [0.0; 2]) }
    }

    fn update(&mut self, ratio: f64, x: [f64; 2], y: [f64; 2]) {
        if ratio > self.max_ratio {
            self.max_ratio = ratio;
            self.argmax = (x, y);
        }
    }

    fn report(self, samples: usize, seed: u64, scale_range: (f64, f64)) -> BoundReport {
        BoundReport {
            estimate: self.name.to_string(),
            max_ratio: self.max_ratio,
            argmax_x: self.argmax.0,
            argmax_y: self.argmax.1,
            samples,
            seed,
            scale_range,
        }
    }
}

const GAP_LOG2_MIN: f64 = -12.0;
const GAP_LOG2_MAX: f64 = 2.0;

/// Verify the size estimate and the four mixed Hölder estimates by random
/// sampling; all bounds taken with constant 1, so the reports carry the
/// empirical constants. Hölder perturbations respect |delta| <= gap/2 and
/// are swept down to delta/gap ~ 2^-8 to probe the limit regime.
pub fn verify_kernel_estimates(
    spec: &KernelSpec,
    samples: usize,
    seed: u64,
) -> Result<Vec<BoundReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut size = RatioTracker::new("size");
    let mut holder = [
        RatioTracker::new("holder_x1"),
        RatioTracker::new("holder_x2"),
        RatioTracker::new("holder_y1"),
        RatioTracker::new("holder_y2"),
    ];
    let draw_gap = |rng: &mut ChaCha8Rng, width: f64| -> f64 {
        // log-uniform magnitude; bump gaps live inside the support
        let e = rng.gen_range(GAP_LOG2_MIN..GAP_LOG2_MAX);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        sign * width * 2f64.powf(e - GAP_LOG2_MAX)
    };
    let (w1, w2) = match spec.kind {
        KernelKind::Bump { t1, t2 } => (t1 * 4.0, t2 * 4.0),
        KernelKind::PurePower => (4.0, 4.0),
    };
    for _ in 0..samples {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let z = [draw_gap(&mut rng, w1), draw_gap(&mut rng, w2)];
        let y = [x[0] - z[0], x[1] - z[1]];
        let d1 = z[0].abs();
        let d2 = z[1].abs();
        let dec = decay_factor(x, y, spec.theta2, spec.log_factor)?;
        let size_rhs = dec / (d1 * d2);
        let k = spec.eval(x, y)?;
        size.update(k.abs() / size_rhs, x, y);

        // mixed Hölder: perturb one coordinate by at most half its gap
        let frac = 2f64.powf(rng.gen_range(-8.0..-1.0));
        for (variant, tracker) in holder.iter_mut().enumerate() {
            let (xi, perturb_x) = match variant {
                0 => (0, true),
                1 => (1, true),
                2 => (0, false),
                _ => (1, false),
            };
            let gap = if xi == 0 { d1 } else { d2 };
            let delta = frac * gap * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let mut xp = x;
            let mut yp = y;
            if perturb_x {
                xp[xi] += delta;
            } else {
                yp[xi] += delta;
            }
            // the perturbed point may hit a coordinate line; skip those draws
            let kp = match spec.eval(xp, yp) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let lhs = (k - kp).abs();
            let rhs = delta.abs().powf(spec.theta1) / gap.powf(1.0 + spec.theta1)
                * (1.0 / if xi == 0 { d2 } else { d1 })
                * dec;
            tracker.update(lhs / rhs, x, y);
        }
    }
    let range = (GAP_LOG2_MIN - GAP_LOG2_MAX, 0.0);
    let mut out = vec![size.report(samples, seed, range)];
    for t in holder {
        out.push(t.report(samples, seed, range));
    }
    Ok(out)
}

/// Configuration for singular quadrature: exclusion window (typically half
/// the finest cell of the companion grid) and tolerance.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureConfig {
    pub window: f64,
    pub tol: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { window: 0.5 * 2f64.powi(-10), tol: 1e-10 }
    }
}

impl QuadratureConfig {
    pub fn for_resolution(n: u32) -> Self {
        QuadratureConfig { window: 0.5 * 0.5f64.powi(n as i32), tol: 1e-10 }
    }
}

/// Integral of |K(x, .)| over the first coordinate of y, optionally
/// restricted to |x1 - y1| <= L. For the pure kernel the singular window is
/// excluded and compensated by Richardson extrapolation across two window
/// sizes (local exponent theta2).
pub fn slice_integral(
    spec: &KernelSpec,
    x: [f64; 2],
    y2: f64,
    restrict: Option<f64>,
    quad: QuadratureConfig,
) -> Result<f64> {
    let h = (x[1] - y2).abs();
    if h == 0.0 {
        return Err(LabError::Singularity("slice integral needs x2 != y2".into()));
    }
    match spec.kind {
        KernelKind::Bump { t1, .. } => {
            let f = |y1: f64| spec.eval(x, [y1, y2]).unwrap_or(0.0).abs();
            let (lo, hi) = match restrict {
                Some(l) => ((x[0] - l).max(x[0] - t1), (x[0] + l).min(x[0] + t1)),
                None => (x[0] - t1, x[0] + t1),
            };
            if lo >= hi {
                return Ok(0.0);
            }
            adaptive_simpson(&f, lo, hi, quad.tol)
        }
        KernelKind::PurePower => {
            let upper = match restrict {
                Some(l) => {
                    if l <= 0.0 {
                        return Err(LabError::Parameter("restriction L must be positive".into()));
                    }
                    l
                }
                // profile decays like u^{-theta2}; pick the cutoff so the
                // tail is negligible at the quadrature tolerance
                None => {
                    let decades = 14.0;
                    h * 10f64.powf(decades / if spec.log_factor { 1.0 } else { spec.theta2 })
                }
            };
            let eval = |w: f64| -> Result<f64> {
                if w >= upper {
                    return Ok(0.0);
                }
                // u = |x1-y1| = h e^s; both sides of the singularity give
                // the same contribution
                let g = |s: f64| {
                    let u = h * s.exp();
                    let r = u / h + h / u;
                    2.0 / h * spec.profile(r)
                };
                adaptive_simpson(&g, (w / h).ln(), (upper / h).ln(), quad.tol)
            };
            let coarse = eval(quad.window)?;
            let fine = eval(0.5 * quad.window)?;
            // head mass scales like window^{theta2}
            let q = 2f64.powf(spec.theta2);
            Ok(fine + (fine - coarse) / (q - 1.0))
        }
    }
}

/// Axis-aligned square in the continuum, used by the Hörmander verifier.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Square {
    pub center: [f64; 2],
    pub side: f64,
}

impl Square {
    pub fn new(center: [f64; 2], side: f64) -> Self {
        Square { center, side }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.center[0]).abs() <= 0.5 * self.side
            && (p[1] - self.center[1]).abs() <= 0.5 * self.side
    }

    fn interval(&self, axis: usize, factor: f64) -> (f64, f64) {
        let half = 0.5 * factor * self.side;
        (self.center[axis] - half, self.center[axis] + half)
    }

    /// Distance from a coordinate value to the side interval of this square.
    fn dist_axis(&self, axis: usize, v: f64) -> f64 {
        let (lo, hi) = self.interval(axis, 1.0);
        if v < lo {
            lo - v
        } else if v > hi {
            v - hi
        } else {
            0.0
        }
    }
}

/// Value of the Hörmander integral over the complement of 3J, truncated to
/// [-m, 1+m]^2, plus an analytic bound for the truncated tail (from the
/// product regularity estimate with constant 1). The tail vanishes when
/// x = c_J, matching the identically-zero integrand.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HormanderValue {
    pub value: f64,
    pub tail_bound: f64,
}

/// Hörmander integral of |K(x,.) - K(c_J,.)| over (3J)^c in box mode.
pub fn hormander_integral(
    spec: &KernelSpec,
    j: Square,
    x: [f64; 2],
    truncation: f64,
    quad: QuadratureConfig,
) -> Result<HormanderValue> {
    if !j.contains(x) {
        return Err(LabError::Parameter("evaluation point must lie in the square".into()));
    }
    let c = j.center;
    if x == c {
        return Ok(HormanderValue { value: 0.0, tail_bound: 0.0 });
    }
    let (box_lo, box_hi) = (-truncation, 1.0 + truncation);
    let (j1_lo, j1_hi) = j.interval(0, 3.0);
    let (j2_lo, j2_hi) = j.interval(1, 3.0);
    let diff = |y: [f64; 2]| -> f64 {
        let a = spec.eval(x, y).unwrap_or(f64::NAN);
        let b = spec.eval(c, y).unwrap_or(f64::NAN);
        if a.is_nan() || b.is_nan() {
            0.0 // measure-zero coordinate lines
        } else {
            (a - b).abs()
        }
    };
    let tol = quad.tol;

    // inner integral over y2 in a fixed interval, singular at x2 and c2
    let inner_y2 = |y1: f64, lo: f64, hi: f64| -> f64 {
        let f = |y2: f64| diff([y1, y2]);
        integrate_with_singularities(&f, lo, hi, &[x[1], c[1]], quad.window, tol).unwrap_or(0.0)
    };
    let inner_y1 = |y2: f64, lo: f64, hi: f64| -> f64 {
        let f = |y1: f64| diff([y1, y2]);
        integrate_with_singularities(&f, lo, hi, &[x[0], c[0]], quad.window, tol).unwrap_or(0.0)
    };

    let mut value = 0.0;
    // region: y1 beyond 3J^1, y2 inside 3J^2
    for (lo1, hi1) in [(box_lo, j1_lo), (j1_hi, box_hi)] {
        if hi1 <= lo1 {
            continue;
        }
        let f = |y1: f64| inner_y2(y1, j2_lo, j2_hi);
        value += adaptive_simpson(&f, lo1, hi1, tol)?;
    }
    // region: y2 beyond 3J^2, y1 inside 3J^1
    for (lo2, hi2) in [(box_lo, j2_lo), (j2_hi, box_hi)] {
        if hi2 <= lo2 {
            continue;
        }
        let f = |y2: f64| inner_y1(y2, j1_lo, j1_hi);
        value += adaptive_simpson(&f, lo2, hi2, tol)?;
    }
    // region: beyond in both coordinates; smooth integrand
    for (lo1, hi1) in [(box_lo, j1_lo), (j1_hi, box_hi)] {
        for (lo2, hi2) in [(box_lo, j2_lo), (j2_hi, box_hi)] {
            if hi1 <= lo1 || hi2 <= lo2 {
                continue;
            }
            let f = |y1: f64| {
                let g = |y2: f64| diff([y1, y2]);
                adaptive_simpson(&g, lo2, hi2, tol * 10.0).unwrap_or(0.0)
            };
            value += adaptive_simpson(&f, lo1, hi1, tol * 10.0)?;
        }
    }

    // tail beyond the truncation box, bounded by the product regularity
    // estimate prod ell^theta / dist^{1+theta} with constant 1
    let tail_bound = if spec.is_bump() {
        0.0 // compact support: exact once the box covers the support
    } else {
        let theta = spec.theta();
        let ell = j.side;
        let d_far = truncation.min(box_hi - j1_hi).min(j1_lo - box_lo).max(ell);
        // one coordinate beyond the box (dist >= d_far), the other anywhere
        // outside 3J^i (dist >= ell): 2 * [2 ell^t/(t d_far^t)] * [2/t + 2]
        let beyond = 2.0 * (ell / d_far).powf(theta) / theta;
        let full = 2.0 / theta + 2.0;
        2.0 * beyond * full
    };
    Ok(HormanderValue { value, tail_bound })
}

/// Pointwise regularity-difference ratio |K(x,y) - K(c_J,y)| divided by the
/// sharper mixed bound. Used by sampling tests; y must be separated from J
/// in both coordinates.
pub fn center_difference_ratios(
    spec: &KernelSpec,
    j: Square,
    x: [f64; 2],
    y: [f64; 2],
) -> Result<(f64, f64)> {
    let d1 = j.dist_axis(0, y[0]);
    let d2 = j.dist_axis(1, y[1]);
    if d1 < j.side || d2 < j.side {
        return Err(LabError::Parameter("y must lie outside 3J in both coordinates".into()));
    }
    let lhs = (spec.eval(x, y)? - spec.eval(j.center, y)?).abs();
    let ell = j.side;
    let (dmin, dmax) = (d1.min(d2), d1.max(d2));
    let sharp = 1.0 / (d1 * d2) * ell.powf(spec.theta1) * dmin.powf(spec.theta2 - spec.theta1)
        / dmax.powf(spec.theta2);
    let theta = spec.theta();
    let symmetric = (ell.powf(theta) / d1.powf(1.0 + theta))
        * (ell.powf(theta) / d2.powf(1.0 + theta));
    Ok((lhs / sharp, lhs / symmetric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_factor_reference_values() {
        // equal gaps, theta2 = 1: r = 1 gives 2^{-1}
        let v = decay_factor([0.3, 0.4], [0.1, 0.2], 1.0, false).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        // r = 4, theta2 = 1/2: (4 + 1/4)^{-1/2}
        let v = decay_factor([0.4, 0.1], [0.0, 0.0], 0.5, false).unwrap();
        assert!((v - (4.25f64).powf(-0.5)).abs() < 1e-15);
        assert!((v - 0.48507125007266594).abs() < 1e-12);
        // symmetric under swapping the coordinates
        let a = decay_factor([0.5, 0.25], [0.0, 0.0], 0.7, false).unwrap();
        let b = decay_factor([0.25, 0.5], [0.0, 0.0], 0.7, false).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(decay_factor([0.1, 0.2], [0.1, 0.5], 1.0, false).is_err());
    }

    #[test]
    fn decay_factor_ranges() {
        // plain: (0, 2^{-theta2}]; log variant: (0, 1/e]
        for e in -20..=20 {
            let r = 2f64.powi(e);
            let x = [r, 1.0];
            let y = [0.0, 0.0];
            for theta2 in [0.1, 0.5, 1.0] {
                let v = decay_factor(x, y, theta2, false).unwrap();
                assert!(v > 0.0 && v <= 2f64.powf(-theta2) + 1e-15);
            }
            let v = decay_factor(x, y, 1.0, true).unwrap();
            assert!(v > 0.0 && v <= 1.0 / std::f64::consts::E + 1e-15);
        }
    }

    #[test]
    fn pure_kernel_reference_values() {
        let spec = KernelSpec::pure(1.0, 1.0).unwrap();
        for h in [0.5, 0.1, 0.01] {
            let v = spec.eval([h, h], [0.0, 0.0]).unwrap();
            assert!((v - 1.0 / (2.0 * h * h)).abs() / v < 1e-14);
        }
        assert!(spec.eval([0.0, 0.3], [0.0, 0.0]).is_err());
    }

    #[test]
    fn pure_kernel_dilation_covariance() {
        let spec = KernelSpec::pure(1.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = [rng.gen_range(-1.0..1.0f64), rng.gen_range(-1.0..1.0)];
            let y = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            if (x[0] - y[0]).abs() < 1e-6 || (x[1] - y[1]).abs() < 1e-6 {
                continue;
            }
            for s in [0.5, 2.0, 7.0] {
                let a = spec.eval([s * x[0], s * x[1]], [s * y[0], s * y[1]]).unwrap();
                let b = spec.eval(x, y).unwrap() / (s * s);
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn bump_kernel_support_and_balanced_value() {
        let spec = KernelSpec::bump(0.7, 0.25, 0.25).unwrap();
        // t1 = t2: eccentricity factor 2^{-theta2}
        let v = spec.eval_displacement([0.0, 0.0]).unwrap();
        let expect = 2f64.powf(-0.7) / (0.25 * 0.25);
        assert!((v - expect).abs() < 1e-12 * expect);
        // vanishes outside the support box
        assert_eq!(spec.eval_displacement([0.25, 0.1]).unwrap(), 0.0);
        assert_eq!(spec.eval_displacement([0.1, -0.3]).unwrap(), 0.0);
    }

    #[test]
    fn pure_size_ratio_is_identically_one() {
        for spec in [
            KernelSpec::pure(1.0, 1.0).unwrap(),
            KernelSpec::pure(1.0, 0.5).unwrap(),
            KernelSpec::pure_log(1.0).unwrap(),
        ] {
            let reports = verify_kernel_estimates(&spec, 2000, 11).unwrap();
            let size = &reports[0];
            assert_eq!(size.estimate, "size");
            assert!((size.max_ratio - 1.0).abs() < 1e-12, "{}", size.max_ratio);
        }
    }

    #[test]
    fn pure_holder_ratios_stay_bounded() {
        let spec = KernelSpec::pure(1.0, 0.5).unwrap();
        let reports = verify_kernel_estimates(&spec, 20_000, 7).unwrap();
        for r in &reports[1..] {
            assert!(r.max_ratio.is_finite());
            // frozen after calibration: observed ~2.8 across seeds
            assert!(r.max_ratio < 6.0, "{}: {}", r.estimate, r.max_ratio);
        }
    }

    #[test]
    fn bump_estimates_uniform_over_eccentricity() {
        // frozen after a preliminary sweep: ratios stay below 3
        for e in [-6i32, -3, 0, 3, 6] {
            let t1 = 2f64.powi(e) * 0.05;
            let t2 = 0.05;
            let spec = KernelSpec::bump(1.0, t1, t2).unwrap();
            let reports = verify_kernel_estimates(&spec, 4000, 23).unwrap();
            for r in &reports {
                assert!(r.max_ratio < 3.0, "ecc 2^{}: {} = {}", e, r.estimate, r.max_ratio);
            }
        }
    }

    #[test]
    fn slice_integral_matches_beta_closed_form() {
        // int |K| dy1 * h = B(theta2/2, theta2/2) for the pure kernel
        let cases = [(1.0, std::f64::consts::PI), (0.5, 7.41629870920548767), (0.25, 15.6553731512527241)];
        let quad = QuadratureConfig { window: 1e-7, tol: 1e-11 };
        for (theta2, expect) in cases {
            let spec = KernelSpec::pure(1.0, theta2).unwrap();
            for h in [0.5, 0.03125] {
                let v = slice_integral(&spec, [0.25, h], 0.0, None, quad).unwrap();
                assert!(
                    (v * h - expect).abs() < 2e-3 * expect,
                    "theta2={} h={}: {} vs {}",
                    theta2,
                    h,
                    v * h,
                    expect
                );
            }
        }
    }

    #[test]
    fn slice_integral_scale_invariance() {
        let spec = KernelSpec::pure(1.0, 1.0).unwrap();
        let quad = QuadratureConfig { window: 1e-9, tol: 1e-11 };
        let mut products = Vec::new();
        for e in 1..=8 {
            let h = 2f64.powi(-e);
            let v = slice_integral(&spec, [0.0, h], 0.0, None, quad).unwrap();
            products.push(v * h);
        }
        let base = products[0];
        for p in &products {
            assert!((p - base).abs() < 0.01 * base, "{:?}", products);
        }
    }

    #[test]
    fn restricted_slice_bound_and_doubling() {
        let spec = KernelSpec::pure(1.0, 0.5).unwrap();
        let quad = QuadratureConfig { window: 1e-9, tol: 1e-11 };
        let h = 0.25;
        // restricted to L = h: bounded by C L^{theta2} / h^{1+theta2} = C/h
        let v = slice_integral(&spec, [0.0, h], 0.0, Some(h), quad).unwrap();
        assert!(v <= 8.0 / h);
        // in the regime L << h doubling L multiplies by at most ~2^{theta2}
        let l = h / 256.0;
        let a = slice_integral(&spec, [0.0, h], 0.0, Some(l), quad).unwrap();
        let b = slice_integral(&spec, [0.0, h], 0.0, Some(2.0 * l), quad).unwrap();
        let q = 2f64.powf(0.5);
        assert!(b / a <= q * 1.02, "ratio {}", b / a);
        assert!(b / a >= q * 0.9);
    }

    #[test]
    fn bump_slice_matches_factorized_form() {
        let spec = KernelSpec::bump(0.5, 0.125, 0.5).unwrap();
        let quad = QuadratureConfig::default();
        let x = [0.3, 0.4];
        let y2 = 0.2;
        let v = slice_integral(&spec, x, y2, None, quad).unwrap();
        let expect = spec.eccentricity_weight() * phi((x[1] - y2) / 0.5) / 0.5 * phi_integral();
        assert!((v - expect).abs() < 1e-8 * expect.max(1e-30), "{} vs {}", v, expect);
    }

    #[test]
    fn hormander_vanishes_at_center_and_is_uniform_over_scales() {
        let spec = KernelSpec::pure(1.0, 1.0).unwrap();
        let quad = QuadratureConfig { window: 1e-8, tol: 1e-8 };
        let j = Square::new([0.5, 0.5], 0.25);
        let at_center = hormander_integral(&spec, j, j.center, 8.0, quad).unwrap();
        assert_eq!(at_center.value, 0.0);
        let mut values = Vec::new();
        for e in 1..=6 {
            let side = 2f64.powi(-e);
            let j = Square::new([0.5, 0.5], side);
            let x = [0.5 - 0.5 * side, 0.5 - 0.5 * side]; // corner
            let h = hormander_integral(&spec, j, x, 8.0, quad).unwrap();
            values.push(h.value + h.tail_bound);
        }
        let max = values.iter().cloned().fold(0.0, f64::max);
        let min = values.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max.is_finite() && min > 0.0);
        // uniformity: frozen constant after calibration
        assert!(max < 40.0, "{:?}", values);
        assert!(max / min < 4.0, "{:?}", values);
    }

    #[test]
    fn regularity_difference_bounds_hold_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for spec in [KernelSpec::pure(1.0, 1.0).unwrap(), KernelSpec::pure(1.0, 0.5).unwrap()] {
            let mut max_sharp = 0.0f64;
            let mut max_sym = 0.0f64;
            for _ in 0..20_000 {
                let side = 2f64.powf(rng.gen_range(-6.0..0.0));
                let j = Square::new([0.0, 0.0], side);
                let x = [
                    rng.gen_range(-0.5 * side..0.5 * side),
                    rng.gen_range(-0.5 * side..0.5 * side),
                ];
                let y = [
                    rng.gen_range(1.0..64.0) * side * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
                    rng.gen_range(1.0..64.0) * side * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
                ];
                if j.dist_axis(0, y[0]) < side || j.dist_axis(1, y[1]) < side {
                    continue;
                }
                let (sharp, sym) = center_difference_ratios(&spec, j, x, y).unwrap();
                max_sharp = max_sharp.max(sharp);
                max_sym = max_sym.max(sym);
            }
            // frozen empirical constants; the sharp form is tighter
            assert!(max_sharp < 4.0, "sharp {}", max_sharp);
            assert!(max_sym < 4.0, "sym {}", max_sym);
        }
    }

    #[test]
    fn phi_integral_value() {
        assert!((phi_integral() - 1.2069003224378762).abs() < 1e-10);
    }
}
