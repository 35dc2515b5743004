//! Grid geometry: the 2^n x 2^n cell grid on the unit square, with either
//! torus (wraparound) or box semantics for distances and convolutions.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainMode {
    /// Unit torus [0,1)^2; distances wrap, convolutions are cyclic.
    Torus,
    /// Unit box [0,1)^2; no wrap. Used for kernel-decay experiments where
    /// periodicity would contaminate distances.
    Box,
}

impl DomainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DomainMode::Torus => "torus",
            DomainMode::Box => "box",
        }
    }
}

/// Resolution exponent plus domain mode. Cell count is 4^n; all quadrature
/// nodes are cell centers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub n: u32,
    pub mode: DomainMode,
}

impl GridGeometry {
    pub fn new(n: u32, mode: DomainMode) -> Self {
        GridGeometry { n, mode }
    }

    pub fn torus(n: u32) -> Self {
        Self::new(n, DomainMode::Torus)
    }

    pub fn boxed(n: u32) -> Self {
        Self::new(n, DomainMode::Box)
    }

    /// Cells per side, 2^n.
    #[inline]
    pub fn side(&self) -> usize {
        1usize << self.n
    }

    /// Total cell count, 4^n.
    #[inline]
    pub fn cells(&self) -> usize {
        self.side() * self.side()
    }

    #[inline]
    pub fn cell_len(&self) -> f64 {
        1.0 / self.side() as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.cell_len() * self.cell_len()
    }

    /// Flat index of cell (c1, c2); first coordinate is the slow axis.
    #[inline]
    pub fn index(&self, c1: usize, c2: usize) -> usize {
        c1 * self.side() + c2
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx / self.side(), idx % self.side())
    }

    /// Center of the cell with index c along one coordinate.
    #[inline]
    pub fn center(&self, c: usize) -> f64 {
        (c as f64 + 0.5) * self.cell_len()
    }

    /// Signed gap between two cell centers along one coordinate, respecting
    /// the domain mode. Returns a multiple of the cell length.
    #[inline]
    pub fn center_gap(&self, cx: usize, cy: usize) -> f64 {
        let d = cx as f64 - cy as f64;
        match self.mode {
            DomainMode::Box => d * self.cell_len(),
            DomainMode::Torus => {
                let side = self.side() as f64;
                let mut w = d.rem_euclid(side);
                if w >= side / 2.0 {
                    w -= side;
                }
                w * self.cell_len()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_indexing_round_trips() {
        let g = GridGeometry::torus(4);
        for idx in 0..g.cells() {
            let (a, b) = g.coords(idx);
            assert_eq!(g.index(a, b), idx);
        }
    }

    #[test]
    fn wrapped_gap_is_minimal_image() {
        let g = GridGeometry::torus(3);
        // cells 0 and 7 are one cell apart across the seam
        assert!((g.center_gap(0, 7).abs() - g.cell_len()).abs() < 1e-15);
        let gb = GridGeometry::boxed(3);
        assert!((gb.center_gap(0, 7).abs() - 7.0 * gb.cell_len()).abs() < 1e-15);
    }
}
