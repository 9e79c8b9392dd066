use stark_dd::basis::ProductBasis;
use stark_dd::dynamics::{default_dt, evolve, EvolveOptions};
use stark_dd::geometry::AtomGeometry;
use stark_dd::hamiltonian::{assemble, AssemblyOptions};
use stark_dd::manifold::{mhz_to_rad_per_us, DipoleConfig, DipoleTable, ManifoldConfig, StarkManifold};
use stark_dd::sparse::spectral_bounds;
use std::time::Instant;

fn main() {
    for n_sub in [2usize, 4] {
        let m = StarkManifold::new(ManifoldConfig {
            cluster_spacing: mhz_to_rad_per_us(530.0),
            anharmonicity: mhz_to_rad_per_us(1.0),
            intra_offsets: (0..n_sub).map(|s| mhz_to_rad_per_us(40.0 * s as f64 / (n_sub.max(2) - 1) as f64)).collect(),
            n_clusters: 7,
        }).unwrap();
        let basis = ProductBasis::enumerate(&m, 3, None, m.cluster_spacing() / 2.0, 1 << 21).unwrap();
        let dipoles = DipoleTable::generate(&m, &DipoleConfig { inter_strength: 15.0, intra_inter_ratio: 10.0, jitter: 0.3 }, 1).unwrap();
        let geom = AtomGeometry::sample(3, 2.7e10, 2.0, 7).unwrap();
        let t0 = Instant::now();
        let (h, report) = assemble(&m, &dipoles, &geom, &basis, &AssemblyOptions::default()).unwrap();
        let t_asm = t0.elapsed();
        let t0 = Instant::now();
        let bounds = spectral_bounds(&h).unwrap();
        let t_bounds = t0.elapsed();
        let dt = default_dt(&bounds);
        println!("n_sub={n_sub}: dim={} nnz={} (per row {:.0}) paths={} asm={:?} bounds={:?} rho={:.0} dt={:.2e} steps(3us)={:.0}",
            basis.dim(), h.nnz(), h.nnz() as f64 / basis.dim() as f64, report.three_body_paths, t_asm, t_bounds,
            bounds.radius(), dt, 3.0 / dt);
        let psi0 = basis.initial_state().unwrap();
        let t0 = Instant::now();
        let options = EvolveOptions { t_total: 0.1, dt, sample_every: 1000, norm_drift_abort: 1e-6 };
        let (_, _) = evolve(&h, &basis, &psi0, &options).unwrap();
        let per_01us = t0.elapsed();
        println!("  evolve 0.1us: {:?}  → est 3us: {:?}", per_01us, per_01us * 30);
    }
}
