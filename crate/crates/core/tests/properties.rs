//! Property tests against brute-force oracles written independently of the
//! library's relabeling tables.

use proptest::prelude::*;

use tagdiff_core::als::eval_separable_a;
use tagdiff_core::functional::{eval_dense_a, eval_full_a, eval_level_a};
use tagdiff_core::fvm::{cell_coefficients, edge_flux, residual, AffineClosure, Mesh};
use tagdiff_core::lattice::Configuration;
use tagdiff_core::lsq::assemble_system;
use tagdiff_core::{CubicSpline, DenseFunction, Direction, LatticeSpec, SeparableFunction};

const JUMPS: [[i32; 2]; 4] = [[1, 0], [-1, 0], [0, 1], [0, -1]];

/// Brute-force functional on the 3x3 periodic box with unit jumps at rate 1/4.
struct Oracle {
    sites: Vec<[i32; 2]>,
}

impl Oracle {
    fn new(spec: &LatticeSpec) -> Self {
        let sites = (0..spec.n()).map(|s| [spec.coords(s)[0], spec.coords(s)[1]]).collect();
        Self { sites }
    }

    fn wrap(c: i32) -> i32 {
        (c + 1).rem_euclid(3) - 1
    }

    fn index(&self, p: [i32; 2]) -> Option<usize> {
        let p = [Self::wrap(p[0]), Self::wrap(p[1])];
        self.sites.iter().position(|&s| s == p)
    }

    fn occ(bits: u64, s: usize) -> bool {
        bits >> s & 1 == 1
    }

    fn functional(&self, f: &dyn Fn(u64) -> f64, u: [f64; 2], level: Option<usize>) -> f64 {
        let n = self.sites.len();
        let mut total = 0.0;
        for bits in 0u64..1 << n {
            if level.is_some_and(|l| bits.count_ones() as usize != l) {
                continue;
            }
            let here = f(bits);
            for v in JUMPS {
                let mut term = 0.0;
                let target = self.index(v).unwrap();
                if !Self::occ(bits, target) {
                    let mut moved = 0u64;
                    for (s, x) in self.sites.iter().enumerate() {
                        if *x == [-v[0], -v[1]] {
                            continue;
                        }
                        let t = self.index([x[0] + v[0], x[1] + v[1]]).unwrap();
                        if Self::occ(bits, t) {
                            moved |= 1 << s;
                        }
                    }
                    let c = v[0] as f64 * u[0] + v[1] as f64 * u[1];
                    term += (c + f(moved) - here).powi(2);
                }
                for (y, x) in self.sites.iter().enumerate() {
                    let Some(z) = self.index([x[0] + v[0], x[1] + v[1]]) else {
                        continue;
                    };
                    if Self::occ(bits, y) != Self::occ(bits, z) {
                        let swapped = bits ^ (1 << y) ^ (1 << z);
                        term += 0.5 * (f(swapped) - here).powi(2);
                    }
                }
                total += 0.25 * term;
            }
        }
        total
    }
}

fn dense_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 256)
}

fn factors() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec([0.1f64..1.5, 0.1f64..1.5], 8)
}

fn direction() -> impl Strategy<Value = [f64; 2]> {
    prop_oneof![Just([1.0, 0.0]), Just([0.0, 1.0]), Just([1.0, 1.0]), [-1.0f64..1.0, -1.0f64..1.0]]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dense_functional_matches_oracle(values in dense_values(), u in direction()) {
        let spec = LatticeSpec::square_2d();
        let oracle = Oracle::new(&spec);
        let psi = DenseFunction::new(values.clone());
        let got = eval_dense_a(&spec, &psi, &Direction::new(u).unwrap()).unwrap();
        let want = oracle.functional(&|b| values[b as usize], u, None);
        prop_assert!(rel(got, want) < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn level_functional_matches_oracle(values in dense_values(), l in 0usize..=8) {
        let spec = LatticeSpec::square_2d();
        let oracle = Oracle::new(&spec);
        let psi = DenseFunction::new(values.clone());
        let got = eval_level_a(&spec, &psi, &Direction::new([1.0, 0.0]).unwrap(), l).unwrap();
        let count = (0u64..256).filter(|b| b.count_ones() as usize == l).count() as f64;
        let want = oracle.functional(&|b| values[b as usize], [1.0, 0.0], Some(l)) / count;
        prop_assert!(rel(got, want) < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn separable_matches_oracle(f in factors(), u in direction()) {
        let spec = LatticeSpec::square_2d();
        let oracle = Oracle::new(&spec);
        let r = SeparableFunction::new(f.clone()).unwrap();
        let got = eval_separable_a(&spec, &r, &Direction::new(u).unwrap());
        let value = |b: u64| (0..8).map(|s| f[s][(b >> s & 1) as usize]).product::<f64>();
        let want = oracle.functional(&value, u, None);
        prop_assert!(rel(got, want) < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn functional_is_shift_invariant(values in dense_values(), c in -10.0f64..10.0) {
        let spec = LatticeSpec::square_2d();
        let u = Direction::new([1.0, 1.0]).unwrap();
        let psi = DenseFunction::new(values);
        let a = eval_dense_a(&spec, &psi, &u).unwrap();
        let b = eval_dense_a(&spec, &psi.shifted(c), &u).unwrap();
        prop_assert!(rel(a, b) < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn separable_gauge_scaling(f in factors(), s in 0usize..8, t in 0usize..8, c in 0.2f64..5.0) {
        prop_assume!(s != t);
        let spec = LatticeSpec::square_2d();
        let u = Direction::new([1.0, 0.0]).unwrap();
        let r = SeparableFunction::new(f).unwrap();
        let mut g = r.clone();
        g.scale_site(s, c);
        g.scale_site(t, 1.0 / c);
        let a = eval_separable_a(&spec, &r, &u);
        let b = eval_separable_a(&spec, &g, &u);
        prop_assert!(rel(a, b) < 1e-10, "{a} vs {b}");
        let full = eval_full_a(&spec, &g, &u).unwrap();
        prop_assert!(rel(b, full) < 1e-10, "{b} vs {full}");
    }

    #[test]
    fn lsq_objective_matches_dense(values in dense_values(), u in direction()) {
        let spec = LatticeSpec::square_2d();
        let u = Direction::new(u).unwrap();
        let system = assemble_system(&spec, &u, 24).unwrap();
        let a = system.objective(&values);
        let b = eval_dense_a(&spec, &DenseFunction::new(values), &u).unwrap();
        prop_assert!(rel(a, b) < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn relabelings_preserve_level(bits in 0u64..256, k in 0usize..4) {
        let spec = LatticeSpec::square_2d();
        let cfg = Configuration(bits);
        for pair in spec.swap_pairs(k) {
            let swapped = spec.apply_swap(cfg, pair.from, k).unwrap();
            prop_assert_eq!(swapped.level(), cfg.level());
            prop_assert_eq!(spec.swap_relabeling(pair.from, k).unwrap().apply(cfg), swapped);
        }
        let target = Oracle::new(&spec).index(JUMPS[k]).unwrap();
        let jumped = spec.tagged_relabeling(k).apply(cfg);
        prop_assert_eq!(jumped, spec.apply_tagged_jump(cfg, k));
        if !cfg.is_occupied(target) {
            prop_assert_eq!(jumped.level(), cfg.level());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn edge_flux_is_antisymmetric(
        sk in 0.01f64..3.0, sl in 0.01f64..3.0,
        dk in 0.05f64..1.0, dl in 0.05f64..1.0,
        m in 0.1f64..2.0, rk in 0.0f64..1.0, rl in 0.0f64..1.0,
    ) {
        let (f, _) = edge_flux(sk, sl, m, dk, dl, rk, rl);
        let (g, _) = edge_flux(sl, sk, m, dl, dk, rl, rk);
        prop_assert!((f + g).abs() <= 1e-14 * f.abs().max(1.0));
        // harmonic mean lies between the two one-sided values
        let t = f / (rl - rk);
        if (rl - rk).abs() > 1e-6 {
            prop_assert!(t <= m * sk.max(sl) / (dk + dl) * (1.0 + 1e-12));
            prop_assert!(t >= m * sk.min(sl) / (dk + dl) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn coefficient_identities(red in 0.01f64..0.5, blue in 0.01f64..0.49) {
        let closure = AffineClosure::reference();
        let c = cell_coefficients(red, blue, &closure, 1e-12).unwrap();
        let rho = red + blue;
        let t = 2.0 - 2.0 * rho;
        let [s11, s12, s21, s22] = c.s;
        // column sums are the bulk trace, the diagonal sums to T + t
        prop_assert!((s11 + s21 - 1.0).abs() < 1e-14);
        prop_assert!((s12 + s22 - 1.0).abs() < 1e-14);
        prop_assert!((s11 + s22 - (1.0 + t)).abs() < 1e-14);
        // cross terms are symmetric once weighted by the densities
        prop_assert!((red * s21 - blue * s12).abs() < 1e-14);
    }

    #[test]
    fn spline_reproduces_nodes(ys in prop::collection::vec(-3.0f64..3.0, 2..12)) {
        let n = ys.len();
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let s = CubicSpline::natural(xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            prop_assert!((s.eval(*x) - y).abs() < 1e-12);
        }
        let m = s.second_derivatives();
        prop_assert!(m[0].abs() < 1e-12 && m[n - 1].abs() < 1e-12);
    }

    #[test]
    fn mesh_text_round_trip(nx in 1usize..7, ny in 1usize..7) {
        let mesh = Mesh::cartesian(nx, ny).unwrap();
        let text = mesh.to_text();
        let back = Mesh::parse(&text).unwrap();
        prop_assert_eq!(back.to_text(), text);
        prop_assert_eq!(back.n_cells(), nx * ny);
        prop_assert!((back.total_measure() - 1.0).abs() < 1e-12);
        prop_assert_eq!(back.interior_edges().count(), (nx - 1) * ny + nx * (ny - 1));
    }

    #[test]
    fn residual_conserves_mass(values in prop::collection::vec(0.05f64..0.45, 2 * 16), dt in 1e-3f64..1.0) {
        let mesh = Mesh::cartesian(4, 4).unwrap();
        let prev = vec![0.2; 32];
        let h = residual(&mesh, &prev, &values, dt, &AffineClosure::reference(), 1e-12).unwrap();
        for s in 0..2 {
            let sum_h: f64 = (0..16).map(|k| h[2 * k + s]).sum();
            let storage: f64 = (0..16)
                .map(|k| mesh.cells()[k].measure * (values[2 * k + s] - prev[2 * k + s]) / dt)
                .sum();
            prop_assert!((sum_h - storage).abs() < 1e-12 * storage.abs().max(1.0));
        }
    }
}
