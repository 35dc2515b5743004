use czx_lab::form::*;
use czx_lab::grid::GridGeometry;
use czx_lab::kernel::KernelSpec;
use czx_lab::lattice::{DyadicInterval, DyadicRect, Lattice};
use czx_lab::signal::HaarIndex;

#[test]
fn probe_single_coefficients() {
    let geom = GridGeometry::torus(6);
    let spec = KernelSpec::pure(1.0, 1.0).unwrap();
    let b = FormMatrix::assemble(&spec, geom, DiagonalConvention::Zero).unwrap();
    let lat = Lattice::standard(geom);
    let scale = 4u32;
    let sq = |m1: usize, m2: usize| DyadicRect::new(DyadicInterval::new(scale, m1), DyadicInterval::new(scale, m2));
    for m in [2usize, 3, 4, 5, 6, 7] {
        let i = HaarIndex { rect: sq(0, 0), eta: (0, 0) };
        for gamma in [(0u8,0u8),(1,0),(0,1),(1,1)] {
            let j = HaarIndex { rect: sq(m, m), eta: gamma };
            let c = b.haar_coefficient(&lat, i, j).unwrap();
            print!(" g{:?}={:+.3e}", gamma, c);
        }
        println!("  m={} d={}", m, m - 1);
    }
}
