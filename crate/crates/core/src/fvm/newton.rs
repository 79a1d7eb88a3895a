//! Newton iteration for one backward Euler step.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use super::mesh::Mesh;
use super::scheme::{assemble, AssemblyStats, Closure, Triplets, DEFAULT_RHO_FLOOR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    /// Relative criterion `||H(U^k)|| / ||H(U^0)|| < eps_lin`.
    pub eps_lin: f64,
    pub max_newton: usize,
    /// Roundoff level, relative to `|| |K| U^k / dt ||`. An iterate at or
    /// below it that no longer halves the residual is accepted.
    pub roundoff_tol: f64,
    pub rho_floor: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            eps_lin: 1e-8,
            max_newton: 20,
            roundoff_tol: 1e-12,
            rho_floor: DEFAULT_RHO_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub state: Vec<f64>,
    pub iterations: usize,
    /// `||H||_2` for the start and after every iteration.
    pub history: Vec<f64>,
    /// Accepted on the roundoff rule rather than the relative criterion.
    pub roundoff_stop: bool,
    pub stats: AssemblyStats,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `J x = b` with a sparse LU factorization (partial pivoting).
pub fn solve_sparse(jac: &Triplets, b: &[f64]) -> Result<Vec<f64>> {
    let entries: Vec<Triplet<usize, usize, f64>> = jac
        .entries
        .iter()
        .map(|&(i, j, v)| Triplet::new(i, j, v))
        .collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(jac.n, jac.n, &entries)
        .map_err(|e| Error::SingularJacobian(format!("cannot build sparse matrix: {e:?}")))?;
    let lu = a
        .sp_lu()
        .map_err(|e| Error::SingularJacobian(format!("{e:?}")))?;
    let rhs = Mat::from_fn(jac.n, 1, |i, _| b[i]);
    let x = lu.solve(&rhs);
    let x: Vec<f64> = (0..jac.n).map(|i| x[(i, 0)]).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularJacobian("zero pivot in LU factorization".into()));
    }
    Ok(x)
}

/// One implicit step from `prev`, starting at `U^0 = prev` and solving
/// `J(U^k) (U^{k+1} - U^k) = -H(U^k)`.
pub fn newton_solve<C: Closure + ?Sized>(
    mesh: &Mesh,
    prev: &[f64],
    dt: f64,
    closure: &C,
    settings: &NewtonSettings,
) -> Result<NewtonOutcome> {
    if !(dt > 0.0 && settings.eps_lin > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need dt > 0 and eps_lin > 0 (got {dt}, {})",
            settings.eps_lin
        )));
    }
    let weights: Vec<f64> = mesh
        .cells()
        .iter()
        .flat_map(|c| [c.measure / dt; 2])
        .collect();
    let (mut h, mut jac, mut stats) = assemble(mesh, prev, prev, dt, closure, settings.rho_floor, true)?;
    let h0 = norm2(&h);
    let mut history = vec![h0];
    let mut u = prev.to_vec();
    if h0 == 0.0 {
        return Ok(NewtonOutcome {
            state: u,
            iterations: 0,
            history,
            roundoff_stop: false,
            stats,
        });
    }
    let mut best = (h0, u.clone());
    for iter in 1..=settings.max_newton {
        let rhs: Vec<f64> = h.iter().map(|x| -x).collect();
        let delta = solve_sparse(jac.as_ref().expect("jacobian requested"), &rhs)?;
        for (x, d) in u.iter_mut().zip(&delta) {
            *x += d;
        }
        (h, jac, stats) = assemble(mesh, prev, &u, dt, closure, settings.rho_floor, true)?;
        let hn = norm2(&h);
        if !hn.is_finite() {
            return Err(Error::NonFinite("Newton residual"));
        }
        let last = history[history.len() - 1];
        history.push(hn);
        if hn < best.0 {
            best = (hn, u.clone());
        }
        if hn / h0 < settings.eps_lin {
            return Ok(NewtonOutcome {
                state: u,
                iterations: iter,
                history,
                roundoff_stop: false,
                stats,
            });
        }
        let scale = norm2(&u.iter().zip(&weights).map(|(x, w)| x * w).collect::<Vec<_>>());
        if hn <= settings.roundoff_tol * scale && hn > 0.5 * last {
            log::debug!("Newton stopped at roundoff level {hn:e} (relative {:e})", hn / h0);
            return Ok(NewtonOutcome {
                state: best.1,
                iterations: iter,
                history,
                roundoff_stop: true,
                stats,
            });
        }
    }
    Err(Error::NewtonNotConverged {
        iterations: settings.max_newton,
        history,
        best: best.1,
    })
}
