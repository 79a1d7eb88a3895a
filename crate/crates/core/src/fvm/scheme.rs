//! Two-point flux scheme: cell coefficients, harmonic edge fluxes, the
//! backward Euler residual and its analytic Jacobian.
//!
//! Unknowns are interleaved per cell: index `2K` is `rho_red` and `2K + 1`
//! is `rho_blue`.

use rayon::prelude::*;

use super::mesh::{EdgeKind, Mesh};
use crate::error::{Error, Result};
use crate::selfdiff::SelfDiffusionModel;

/// Ratios `rho_red / rho` and `rho_blue / rho` become `1/2` at or below this.
pub const DEFAULT_RHO_FLOOR: f64 = 1e-12;

/// Relative size of the harmonic denominator below which an edge is degenerate.
pub const HARMONIC_TOL: f64 = 1e-14;

const PARALLEL_CELLS: usize = 4096;

/// Density closure entering the coefficients: `Tr D` and `Tr D_s(rho)`.
pub trait Closure: Sync {
    fn bulk_trace(&self) -> f64;
    /// `(Tr D_s(rho), d/drho Tr D_s(rho), clamped)`.
    fn self_trace(&self, rho: f64) -> (f64, f64, bool);
}

impl Closure for SelfDiffusionModel {
    fn bulk_trace(&self) -> f64 {
        SelfDiffusionModel::bulk_trace(self)
    }

    fn self_trace(&self, rho: f64) -> (f64, f64, bool) {
        self.trace_with_derivative(rho)
    }
}

/// `Tr D_s(rho) = intercept + slope * rho`, no clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineClosure {
    pub bulk: f64,
    pub intercept: f64,
    pub slope: f64,
}

impl AffineClosure {
    /// Exact-trace surrogate of the 2-D square lattice: `Tr D = 1`, `Tr D_s = 2 - 2 rho`.
    pub fn reference() -> Self {
        Self {
            bulk: 1.0,
            intercept: 2.0,
            slope: -2.0,
        }
    }

    pub fn constant(bulk: f64, self_trace: f64) -> Self {
        Self {
            bulk,
            intercept: self_trace,
            slope: 0.0,
        }
    }
}

impl Closure for AffineClosure {
    fn bulk_trace(&self) -> f64 {
        self.bulk
    }

    fn self_trace(&self, rho: f64) -> (f64, f64, bool) {
        (self.intercept + self.slope * rho, self.slope, false)
    }
}

/// `S11, S12, S21, S22` of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Coefficients {
    pub s: [f64; 4],
    /// `d s[i] / d rho_red` and `d s[i] / d rho_blue`.
    pub ds: [[f64; 2]; 4],
    pub clamped: bool,
    pub floored: bool,
}

pub fn cell_coefficients<C: Closure + ?Sized>(
    red: f64,
    blue: f64,
    closure: &C,
    rho_floor: f64,
) -> Result<Coefficients> {
    if !(red.is_finite() && blue.is_finite()) {
        return Err(Error::NonFinite("cell densities"));
    }
    let rho = red + blue;
    let (a, b, da, floored) = if rho <= rho_floor {
        (0.5, 0.5, [0.0, 0.0], true)
    } else {
        (red / rho, blue / rho, [blue / (rho * rho), -red / (rho * rho)], false)
    };
    let db = [-da[0], -da[1]];
    let big_t = closure.bulk_trace();
    let (t, dt, clamped) = closure.self_trace(rho);
    let mut ds = [[0.0; 2]; 4];
    for x in 0..2 {
        ds[0][x] = db[x] * t + b * dt + da[x] * big_t;
        ds[1][x] = da[x] * (big_t - t) - a * dt;
        ds[2][x] = db[x] * (big_t - t) - b * dt;
        ds[3][x] = da[x] * t + a * dt + db[x] * big_t;
    }
    Ok(Coefficients {
        s: [b * t + a * big_t, a * (big_t - t), b * (big_t - t), a * t + b * big_t],
        ds,
        clamped,
        floored,
    })
}

/// Harmonic transmissibility `|sigma| S_K S_L / (d_K S_L + d_L S_K)` and its
/// partial derivatives in `S_K`, `S_L`; `None` when the denominator is
/// degenerate.
pub fn transmissibility(s_k: f64, s_l: f64, measure: f64, d_k: f64, d_l: f64) -> Option<(f64, f64, f64)> {
    let den = d_k * s_l + d_l * s_k;
    let scale = d_k * s_l.abs() + d_l * s_k.abs();
    if den.abs() <= HARMONIC_TOL * scale || den == 0.0 {
        return None;
    }
    let h = measure * s_k * s_l / den;
    let den2 = den * den;
    Some((h, measure * d_k * s_l * s_l / den2, measure * d_l * s_k * s_k / den2))
}

/// Flux through an interior edge from `K` towards `L`; a degenerate
/// denominator yields `(0, true)`.
pub fn edge_flux(s_k: f64, s_l: f64, measure: f64, d_k: f64, d_l: f64, rho_k: f64, rho_l: f64) -> (f64, bool) {
    match transmissibility(s_k, s_l, measure, d_k, d_l) {
        Some((h, _, _)) => (h * (rho_l - rho_k), false),
        None => (0.0, true),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AssemblyStats {
    pub degenerate_edges: usize,
    pub clamped_cells: usize,
    pub floored_cells: usize,
}

/// Triplet sparse matrix; duplicates are summed on conversion.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for &(i, j, v) in &self.entries {
            m[i][j] += v;
        }
        m
    }
}

fn coefficients_all<C: Closure + ?Sized>(u: &[f64], closure: &C, rho_floor: f64) -> Result<Vec<Coefficients>> {
    let cells = u.len() / 2;
    let one = |k: usize| cell_coefficients(u[2 * k], u[2 * k + 1], closure, rho_floor);
    if cells >= PARALLEL_CELLS {
        (0..cells).into_par_iter().map(one).collect()
    } else {
        (0..cells).map(one).collect()
    }
}

/// Backward Euler residual `H(U)` and, on request, its Jacobian.
pub fn assemble<C: Closure + ?Sized>(
    mesh: &Mesh,
    prev: &[f64],
    cur: &[f64],
    dt: f64,
    closure: &C,
    rho_floor: f64,
    with_jacobian: bool,
) -> Result<(Vec<f64>, Option<Triplets>, AssemblyStats)> {
    let n = 2 * mesh.n_cells();
    if prev.len() != n || cur.len() != n {
        return Err(Error::Mesh(format!(
            "state has {} / {} unknowns, mesh needs {n}",
            prev.len(),
            cur.len()
        )));
    }
    let coef = coefficients_all(cur, closure, rho_floor)?;
    let mut stats = AssemblyStats {
        clamped_cells: coef.iter().filter(|c| c.clamped).count(),
        floored_cells: coef.iter().filter(|c| c.floored).count(),
        ..Default::default()
    };
    let mut h = vec![0.0; n];
    let mut jac = with_jacobian.then(|| Triplets {
        n,
        entries: Vec::with_capacity(n + 32 * mesh.interior_edges().count()),
    });
    for (k, cell) in mesh.cells().iter().enumerate() {
        let w = cell.measure / dt;
        for s in 0..2 {
            h[2 * k + s] = w * (cur[2 * k + s] - prev[2 * k + s]);
            if let Some(j) = jac.as_mut() {
                j.entries.push((2 * k + s, 2 * k + s, w));
            }
        }
    }
    for (_, e) in mesh.interior_edges() {
        let EdgeKind::Interior { k, l, d_k, d_l } = e.kind else {
            unreachable!()
        };
        let (ck, cl) = (&coef[k], &coef[l]);
        // equation i couples to species j through coefficient S^{i,j}
        for i in 0..2 {
            for j in 0..2 {
                let c = 2 * i + j;
                let Some((t, dt_k, dt_l)) = transmissibility(ck.s[c], cl.s[c], e.measure, d_k, d_l) else {
                    stats.degenerate_edges += 1;
                    log::debug!("degenerate harmonic average on edge {k}-{l}, coefficient S{}{}", i + 1, j + 1);
                    continue;
                };
                let diff = cur[2 * l + j] - cur[2 * k + j];
                let flux = t * diff;
                h[2 * k + i] -= 0.5 * flux;
                h[2 * l + i] += 0.5 * flux;
                if let Some(jm) = jac.as_mut() {
                    let mut push = |col: usize, dflux: f64| {
                        jm.entries.push((2 * k + i, col, -0.5 * dflux));
                        jm.entries.push((2 * l + i, col, 0.5 * dflux));
                    };
                    push(2 * l + j, t);
                    push(2 * k + j, -t);
                    for x in 0..2 {
                        push(2 * k + x, dt_k * ck.ds[c][x] * diff);
                        push(2 * l + x, dt_l * cl.ds[c][x] * diff);
                    }
                }
            }
        }
    }
    Ok((h, jac, stats))
}

pub fn residual<C: Closure + ?Sized>(
    mesh: &Mesh,
    prev: &[f64],
    cur: &[f64],
    dt: f64,
    closure: &C,
    rho_floor: f64,
) -> Result<Vec<f64>> {
    Ok(assemble(mesh, prev, cur, dt, closure, rho_floor, false)?.0)
}

pub fn jacobian<C: Closure + ?Sized>(
    mesh: &Mesh,
    prev: &[f64],
    cur: &[f64],
    dt: f64,
    closure: &C,
    rho_floor: f64,
) -> Result<Triplets> {
    Ok(assemble(mesh, prev, cur, dt, closure, rho_floor, true)?.1.expect("requested"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_examples() {
        let cl = AffineClosure::reference();
        let c = cell_coefficients(0.0, 0.6, &cl, DEFAULT_RHO_FLOOR).unwrap();
        assert!((c.s[0] - (2.0 - 1.2)).abs() < 1e-15);
        assert_eq!(c.s[1], 0.0);
        let c = cell_coefficients(0.5, 0.5, &cl, DEFAULT_RHO_FLOOR).unwrap();
        assert!((c.s[0] - 0.5).abs() < 1e-15);
        for (r, b) in [(0.1, 0.3), (0.7, 0.2), (0.0, 0.0)] {
            let c = cell_coefficients(r, b, &cl, DEFAULT_RHO_FLOOR).unwrap();
            assert!((c.s[0] + c.s[2] - 1.0).abs() < 1e-15);
            assert!((c.s[1] + c.s[3] - 1.0).abs() < 1e-15);
        }
        assert!(cell_coefficients(0.0, 0.0, &cl, DEFAULT_RHO_FLOOR).unwrap().floored);
        assert!(cell_coefficients(f64::NAN, 0.0, &cl, DEFAULT_RHO_FLOOR).is_err());
    }

    #[test]
    fn coefficient_derivatives() {
        let cl = AffineClosure::reference();
        let (r, b, h) = (0.3, 0.45, 1e-7);
        let c = cell_coefficients(r, b, &cl, DEFAULT_RHO_FLOOR).unwrap();
        let cr = cell_coefficients(r + h, b, &cl, DEFAULT_RHO_FLOOR).unwrap();
        let cb = cell_coefficients(r, b + h, &cl, DEFAULT_RHO_FLOOR).unwrap();
        for i in 0..4 {
            assert!(((cr.s[i] - c.s[i]) / h - c.ds[i][0]).abs() < 1e-6);
            assert!(((cb.s[i] - c.s[i]) / h - c.ds[i][1]).abs() < 1e-6);
        }
    }

    #[test]
    fn flux_examples() {
        let (f, deg) = edge_flux(0.8, 0.8, 0.5, 0.1, 0.1, 0.2, 0.6);
        assert!(!deg);
        assert!((f - 0.5 * 0.8 / 0.2 * 0.4).abs() < 1e-15);
        assert_eq!(edge_flux(0.0, 0.7, 0.5, 0.1, 0.2, 0.2, 0.6), (0.0, false));
        let a = edge_flux(0.3, 0.9, 0.5, 0.1, 0.2, 0.2, 0.6).0;
        let b = edge_flux(0.9, 0.3, 0.5, 0.2, 0.1, 0.6, 0.2).0;
        assert_eq!(a, -b);
        assert_eq!(edge_flux(1.0, -1.0, 1.0, 0.1, 0.1, 0.0, 1.0), (0.0, true));
    }

    #[test]
    fn two_cell_residual_by_hand() {
        let mesh = Mesh::cartesian(2, 1).unwrap();
        let cl = AffineClosure::constant(1.0, 1.0);
        // constant closure: S11 = S22 = 1, S12 = S21 = 0
        let prev = [0.2, 0.3, 0.4, 0.1];
        let cur = [0.25, 0.3, 0.35, 0.1];
        let h = residual(&mesh, &prev, &cur, 0.1, &cl, DEFAULT_RHO_FLOOR).unwrap();
        // |K| = 1/2, |sigma| = 1, d = 1/4 each: T = 1 * 1 / (1/4 + 1/4) = 2
        let flux = 2.0 * (0.35 - 0.25);
        assert!((h[0] - (0.5 * 0.05 / 0.1 - 0.5 * flux)).abs() < 1e-14);
        assert!((h[2] - (0.5 * -0.05 / 0.1 + 0.5 * flux)).abs() < 1e-14);
        // blue is frozen in time but differs across the edge
        let blue_flux = 2.0 * (0.1 - 0.3);
        assert!((h[1] + 0.5 * blue_flux).abs() < 1e-14);
        assert!((h[3] - 0.5 * blue_flux).abs() < 1e-14);
    }

    #[test]
    fn constant_state_is_fixed_point() {
        let mesh = Mesh::cartesian(4, 3).unwrap();
        let u: Vec<f64> = (0..24).map(|i| if i % 2 == 0 { 0.2 } else { 0.55 }).collect();
        let h = residual(&mesh, &u, &u, 1e-3, &AffineClosure::reference(), DEFAULT_RHO_FLOOR).unwrap();
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn time_block_on_diagonal() {
        let mesh = Mesh::cartesian(3, 3).unwrap();
        let u = vec![0.3; 18];
        let j = jacobian(&mesh, &u, &u, 1e-3, &AffineClosure::reference(), DEFAULT_RHO_FLOOR)
            .unwrap()
            .to_dense();
        // constant state: flux derivatives reduce to +-T on neighbours
        for k in 0..9 {
            let off: f64 = (0..18).filter(|&c| c != 2 * k).map(|c| j[2 * k][c]).sum();
            assert!((j[2 * k][2 * k] + off - mesh.cells()[k].measure / 1e-3).abs() < 1e-9);
        }
    }
}
