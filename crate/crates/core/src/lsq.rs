//! Exact minimisation of `A_M^u` over all `2^N` configuration values.
//!
//! Every nonzero term of the functional is a weighted squared difference
//! `w (Psi[plus] - Psi[minus] + offset)^2`, so the functional is the squared
//! norm of a sparse residual. No-op swaps (equal bits) and gated-off tagged
//! jumps (occupied landing site) contribute nothing and are not stored; what
//! remains is `N K 2^(N-1)` rows for lattices without origin collisions.
//!
//! The minimiser is found matrix-free by conjugate gradients on the normal
//! equations (CGLS) from the zero start. Constants lie in the kernel, so only
//! functional values of the result are meaningful.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::functional::{
    binomial, enumerate_level, CompensatedSum, DenseFunction, Direction, DEFAULT_DENSE_GUARD,
};
use crate::lattice::{Configuration, LatticeSpec, WrappedSite};

/// `weight * (x[plus] - x[minus] + offset)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRow {
    pub plus: usize,
    pub minus: usize,
    pub offset: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct ResidualSystem {
    unknowns: usize,
    rows: Vec<ResidualRow>,
}

#[derive(Debug, Clone, Copy)]
pub struct LsqSettings {
    pub tol: f64,
    /// `None` means `10 * unknowns`.
    pub max_iters: Option<usize>,
    pub dense_guard: usize,
}

impl Default for LsqSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: None,
            dense_guard: DEFAULT_DENSE_GUARD,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub psi: DenseFunction,
    pub iterations: usize,
    /// `||M^T r|| / ||M^T r_0||` at exit.
    pub relative_residual: f64,
    /// `||M psi + b||^2`, the attained functional value.
    pub objective: f64,
}

impl ResidualSystem {
    pub fn unknowns(&self) -> usize {
        self.unknowns
    }

    pub fn rows(&self) -> &[ResidualRow] {
        &self.rows
    }

    /// Residual vector `M x + b`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.weight * (x[r.plus] - x[r.minus] + r.offset))
            .collect()
    }

    /// `||M x + b||^2`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut acc = CompensatedSum::default();
        for r in &self.rows {
            let v = r.weight * (x[r.plus] - x[r.minus] + r.offset);
            acc.add(v * v);
        }
        acc.value()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(&self.rows) {
            *o = r.weight * (x[r.plus] - x[r.minus]);
        }
    }

    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (r, &v) in self.rows.iter().zip(y) {
            out[r.plus] += r.weight * v;
            out[r.minus] -= r.weight * v;
        }
    }

    /// Writes the system as sparse triplets.
    ///
    /// Format: a header line `# rows <Q> cols <unknowns>`, then one
    /// `A <row> <col> <value>` line per nonzero matrix entry and one
    /// `b <row> <offset>` line per nonzero offset (already weighted).
    pub fn write_triplets<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# rows {} cols {}", self.rows.len(), self.unknowns)?;
        for (i, r) in self.rows.iter().enumerate() {
            if r.plus != r.minus {
                writeln!(out, "A {i} {} {:.17e}", r.plus, r.weight)?;
                writeln!(out, "A {i} {} {:.17e}", r.minus, -r.weight)?;
            }
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.offset != 0.0 {
                writeln!(out, "b {i} {:.17e}", r.weight * r.offset)?;
            }
        }
        Ok(())
    }

    /// CGLS from the zero start until `||M^T r|| <= tol ||M^T r_0||`.
    pub fn solve(&self, tol: f64, max_iters: usize) -> Result<(Vec<f64>, usize, f64)> {
        let n = self.unknowns;
        let m = self.rows.len();
        let mut x = vec![0.0; n];
        let mut r: Vec<f64> = self.rows.iter().map(|row| -row.weight * row.offset).collect();
        let mut s = vec![0.0; n];
        self.apply_transpose(&r, &mut s);
        let s0 = norm(&s);
        if s0 == 0.0 {
            return Ok((x, 0, 0.0));
        }
        let mut p = s.clone();
        let mut q = vec![0.0; m];
        let mut gamma = dot(&s, &s);
        for it in 1..=max_iters {
            self.apply(&p, &mut q);
            let qq = dot(&q, &q);
            if qq == 0.0 {
                break;
            }
            let alpha = gamma / qq;
            for (xi, pi) in x.iter_mut().zip(&p) {
                *xi += alpha * pi;
            }
            for (ri, qi) in r.iter_mut().zip(&q) {
                *ri -= alpha * qi;
            }
            self.apply_transpose(&r, &mut s);
            let gamma_new = dot(&s, &s);
            let rel = gamma_new.sqrt() / s0;
            if rel <= tol {
                return Ok((x, it, rel));
            }
            let beta = gamma_new / gamma;
            gamma = gamma_new;
            for (pi, si) in p.iter_mut().zip(&s) {
                *pi = si + beta * *pi;
            }
        }
        let rel = norm(&s) / s0;
        if rel <= tol {
            return Ok((x, max_iters, rel));
        }
        Err(Error::LsqNotConverged {
            iterations: max_iters,
            relative_residual: rel,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_guard(spec: &LatticeSpec, guard: usize) -> Result<()> {
    spec.require_word_configurations()?;
    if spec.n() > guard {
        return Err(Error::SizeGuard {
            what: "dense least squares",
            size: 1u128 << spec.n().min(127),
            limit: 1u128 << guard,
        });
    }
    Ok(())
}

/// Rows contributed by one configuration, with unknowns addressed by `index`.
fn push_rows(
    spec: &LatticeSpec,
    u: &Direction,
    cfg: Configuration,
    index: &impl Fn(Configuration) -> usize,
    rows: &mut Vec<ResidualRow>,
) {
    let here = index(cfg);
    for (k, jump) in spec.jumps().iter().enumerate() {
        if let WrappedSite::Site(v) = spec.landing_site(k) {
            if !cfg.is_occupied(v) {
                rows.push(ResidualRow {
                    plus: index(spec.tagged_relabeling(k).apply(cfg)),
                    minus: here,
                    offset: jump.dot(u.as_slice()),
                    weight: jump.probability.sqrt(),
                });
            }
        }
        let w = (0.5 * jump.probability).sqrt();
        for pair in spec.swap_pairs(k) {
            if cfg.is_occupied(pair.from) != cfg.is_occupied(pair.to) {
                let swapped = cfg
                    .with(pair.from, !cfg.is_occupied(pair.from))
                    .with(pair.to, !cfg.is_occupied(pair.to));
                rows.push(ResidualRow {
                    plus: index(swapped),
                    minus: here,
                    offset: 0.0,
                    weight: w,
                });
            }
        }
    }
}

/// Builds the residual `M Psi + b` whose squared norm is `A_M^u(Psi)`.
pub fn assemble_system(spec: &LatticeSpec, u: &Direction, guard: usize) -> Result<ResidualSystem> {
    check_guard(spec, guard)?;
    u.check_dim(spec)?;
    let unknowns = 1usize << spec.n();
    let mut rows = Vec::with_capacity(spec.n() * spec.jumps().len() * unknowns / 2);
    for bits in 0..unknowns as u64 {
        push_rows(spec, u, Configuration(bits), &|c| c.index(), &mut rows);
    }
    Ok(ResidualSystem { unknowns, rows })
}

/// Minimises `A_M^u` over `H_M`.
pub fn solve_lsq(spec: &LatticeSpec, u: &Direction, settings: &LsqSettings) -> Result<LsqSolution> {
    let system = assemble_system(spec, u, settings.dense_guard)?;
    let max_iters = settings.max_iters.unwrap_or(10 * system.unknowns());
    let (x, iterations, relative_residual) = system.solve(settings.tol, max_iters)?;
    let objective = system.objective(&x);
    Ok(LsqSolution {
        psi: DenseFunction::new(x),
        iterations,
        relative_residual,
        objective,
    })
}

/// Solution of the problem restricted to one level `C_{M,l}`.
#[derive(Debug, Clone)]
pub struct LevelSolution {
    pub configurations: Vec<Configuration>,
    pub values: Vec<f64>,
    /// `min A_{M,l}^u`.
    pub optimum: f64,
    pub iterations: usize,
}

/// Minimises `A_{M,l}^u` directly with `binom(N, l)` unknowns.
pub fn solve_level_lsq(
    spec: &LatticeSpec,
    u: &Direction,
    level: usize,
    settings: &LsqSettings,
) -> Result<LevelSolution> {
    spec.require_word_configurations()?;
    u.check_dim(spec)?;
    let size = binomial(spec.n(), level);
    let limit = 1u128 << settings.dense_guard;
    if size > limit {
        return Err(Error::SizeGuard {
            what: "level least squares",
            size,
            limit,
        });
    }
    let configurations: Vec<Configuration> = enumerate_level(spec, level)?.collect();
    let lookup: HashMap<Configuration, usize> = configurations
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, i))
        .collect();
    let index = |c: Configuration| lookup[&c];
    let mut rows = Vec::new();
    for &cfg in &configurations {
        push_rows(spec, u, cfg, &index, &mut rows);
    }
    let system = ResidualSystem {
        unknowns: configurations.len(),
        rows,
    };
    let max_iters = settings.max_iters.unwrap_or(10 * system.unknowns().max(1));
    let (values, iterations, _) = system.solve(settings.tol, max_iters)?;
    let optimum = system.objective(&values) / configurations.len() as f64;
    Ok(LevelSolution {
        configurations,
        values,
        optimum,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::eval_dense_a;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn system_sizes() {
        let u = Direction::new([1.0, 0.0]).unwrap();
        let sys = assemble_system(&LatticeSpec::square_2d(), &u, 24).unwrap();
        assert_eq!(sys.unknowns(), 256);
        assert_eq!(sys.rows().len(), 4096);

        let line = LatticeSpec::nearest_neighbour(1, 1).unwrap();
        let sys = assemble_system(&line, &Direction::new([1.0]).unwrap(), 24).unwrap();
        assert_eq!(sys.unknowns(), 4);
        assert_eq!(sys.rows().len(), 8);
    }

    #[test]
    fn objective_matches_dense_functional() {
        let spec = LatticeSpec::square_2d();
        let u = Direction::new([1.0, 0.0]).unwrap();
        let sys = assemble_system(&spec, &u, 24).unwrap();
        assert_eq!(sys.objective(&vec![0.0; 256]), 64.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let x: Vec<f64> = (0..256).map(|_| rng.random_range(-2.0..2.0)).collect();
            let dense = eval_dense_a(&spec, &DenseFunction::new(x.clone()), &u).unwrap();
            let rows = sys.objective(&x);
            assert!((rows - dense).abs() <= 1e-10 * (1.0 + dense));
        }
    }

    #[test]
    fn zero_direction_is_trivial() {
        let spec = LatticeSpec::square_2d();
        let sol = solve_lsq(&spec, &Direction::new([0.0, 0.0]).unwrap(), &LsqSettings::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.objective, 0.0);
        assert!(sol.psi.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn guard_rejects_large_lattices() {
        let spec = LatticeSpec::nearest_neighbour(2, 2).unwrap();
        let u = Direction::new([1.0, 0.0]).unwrap();
        assert!(matches!(
            assemble_system(&spec, &u, 20),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn triplet_dump() {
        let line = LatticeSpec::nearest_neighbour(1, 1).unwrap();
        let sys = assemble_system(&line, &Direction::new([1.0]).unwrap(), 24).unwrap();
        let mut buf = Vec::new();
        sys.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# rows 8 cols 4\n"));
        assert!(text.lines().any(|l| l.starts_with("b ")));
    }

    #[test]
    fn reports_non_convergence() {
        let spec = LatticeSpec::square_2d();
        let u = Direction::new([1.0, 0.0]).unwrap();
        let settings = LsqSettings {
            max_iters: Some(2),
            ..LsqSettings::default()
        };
        assert!(matches!(
            solve_lsq(&spec, &u, &settings),
            Err(Error::LsqNotConverged { iterations: 2, .. })
        ));
    }
}
