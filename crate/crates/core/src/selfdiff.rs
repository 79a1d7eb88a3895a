//! Self-diffusion matrices `D_s^M(l/N)` and their interpolant over `rho`.
//!
//! For each direction `u`, `u^T D_s^M(l/N) u = 2 A_{M,l}^u(f)` where `f` is a
//! minimiser of the combined functional (exact or rank-1). The symmetric
//! matrix is recovered by polarization from the directions `e_i` and
//! `e_i + e_j`, and every entry is interpolated by a natural cubic spline on
//! the nodes `rho_l = l / N`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::{multi_start, AlsReport, AlsSettings, RestartStats};
use crate::error::{Error, Result};
use crate::functional::{eval_all_levels, ConfigFunction, Direction};
use crate::lattice::LatticeSpec;
use crate::lsq::{solve_lsq, LsqSettings};
use crate::spline::CubicSpline;

/// Eigenvalues in `[-PSD_TOL, 0)` are clipped to zero; below that is an error.
pub const PSD_TOL: f64 = 1e-8;

/// `D_ij = sum_k p_k (v_k)_i (v_k)_j`.
pub fn bulk_matrix(spec: &LatticeSpec) -> DMatrix<f64> {
    let d = spec.dim();
    let mut m = DMatrix::zeros(d, d);
    for jump in spec.jumps() {
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] += jump.probability * f64::from(jump.vector[i] * jump.vector[j]);
            }
        }
    }
    m
}

/// `2 A_{M,l}^u(f)` for `l = 0..=N`.
pub fn quad_form_levels<F: ConfigFunction + ?Sized>(
    spec: &LatticeSpec,
    u: &Direction,
    f: &F,
) -> Result<Vec<f64>> {
    Ok(eval_all_levels(spec, f, u)?
        .into_iter()
        .map(|a| 2.0 * a)
        .collect())
}

/// Directions `e_i` followed by `e_i + e_j` for `i < j`.
pub fn polarization_directions(dim: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        dirs.push(e);
    }
    for i in 0..dim {
        for j in i + 1..dim {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            e[j] = 1.0;
            dirs.push(e);
        }
    }
    dirs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Method {
    Lsq,
    Als { restarts: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AssembleSettings {
    pub lsq: LsqSettings,
    pub als: AlsSettings,
}

/// Quadratic-form values for one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionLevels {
    pub u: Vec<f64>,
    /// Combined functional `A_M^u` at the minimiser used.
    pub objective: f64,
    /// `u^T D_s(l/N) u` for each level.
    pub values: Vec<f64>,
    pub als_stats: Option<RestartStats>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub restart_reports: Vec<AlsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfDiffusionModel {
    pub dim: usize,
    pub method: Method,
    pub nodes: Vec<f64>,
    /// One symmetric `dim x dim` matrix per level, row-major nested.
    pub levels: Vec<Vec<Vec<f64>>>,
    pub bulk: Vec<Vec<f64>>,
    pub directions: Vec<DirectionLevels>,
    /// Spline for entry `(i, j)`, `i <= j`, in row-major upper-triangle order.
    pub splines: Vec<CubicSpline>,
    /// Levels whose matrix needed a small negative eigenvalue clipped.
    pub psd_repairs: Vec<usize>,
}

fn to_nested(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn from_nested(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.len();
    DMatrix::from_fn(d, d, |i, j| rows[i][j])
}

fn upper_entries(dim: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for i in 0..dim {
        for j in i..dim {
            e.push((i, j));
        }
    }
    e
}

/// Symmetric matrix from direction values ordered as in
/// [`polarization_directions`].
pub fn polarize(dim: usize, q: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        m[(i, i)] = q[i];
    }
    let mut idx = dim;
    for i in 0..dim {
        for j in i + 1..dim {
            let off = 0.5 * (q[idx] - q[i] - q[j]);
            m[(i, j)] = off;
            m[(j, i)] = off;
            idx += 1;
        }
    }
    m
}

/// Clips eigenvalues in `[-PSD_TOL, 0)`; returns whether a repair happened.
fn repair_psd(level: usize, m: &mut DMatrix<f64>) -> Result<bool> {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        return Ok(false);
    }
    if min < -PSD_TOL {
        return Err(Error::NotPsd {
            level,
            eigenvalue: min,
        });
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let mut r = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    r = 0.5 * (&r + r.transpose());
    *m = r;
    Ok(true)
}

impl SelfDiffusionModel {
    /// Builds the model from per-direction level values (polarization order).
    pub fn from_directions(
        spec: &LatticeSpec,
        method: Method,
        directions: Vec<DirectionLevels>,
    ) -> Result<Self> {
        let dim = spec.dim();
        let n = spec.n();
        if directions.len() != polarization_directions(dim).len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} directions, got {}",
                polarization_directions(dim).len(),
                directions.len()
            )));
        }
        let mut levels = Vec::with_capacity(n + 1);
        let mut psd_repairs = Vec::new();
        for l in 0..=n {
            let q: Vec<f64> = directions.iter().map(|d| d.values[l]).collect();
            let mut m = polarize(dim, &q);
            if repair_psd(l, &mut m)? {
                psd_repairs.push(l);
            }
            levels.push(to_nested(&m));
        }
        let nodes: Vec<f64> = (0..=n).map(|l| l as f64 / n as f64).collect();
        let splines = upper_entries(dim)
            .into_iter()
            .map(|(i, j)| {
                let y = levels.iter().map(|m| m[i][j]).collect();
                CubicSpline::natural(nodes.clone(), y)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim,
            method,
            nodes,
            levels,
            bulk: to_nested(&bulk_matrix(spec)),
            directions,
            splines,
            psd_repairs,
        })
    }

    pub fn level_matrix(&self, level: usize) -> DMatrix<f64> {
        from_nested(&self.levels[level])
    }

    pub fn bulk_matrix(&self) -> DMatrix<f64> {
        from_nested(&self.bulk)
    }

    fn spline_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // row-major upper triangle
        i * self.dim - i * (i + 1) / 2 + j
    }

    /// Interpolated `D_s(rho)` and its derivative; `rho` outside `[0, 1]` is
    /// clamped (derivative zero) and reported through the flag.
    pub fn eval(&self, rho: f64) -> (DMatrix<f64>, DMatrix<f64>, bool) {
        let mut value = DMatrix::zeros(self.dim, self.dim);
        let mut deriv = DMatrix::zeros(self.dim, self.dim);
        let mut clamped = false;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let (v, d, c) = self.splines[self.spline_index(i, j)].eval_with_derivative(rho);
                value[(i, j)] = v;
                deriv[(i, j)] = d;
                clamped |= c;
            }
        }
        (value, deriv, clamped)
    }

    pub fn eval_ds(&self, rho: f64) -> DMatrix<f64> {
        self.eval(rho).0
    }

    pub fn eval_ds_deriv(&self, rho: f64) -> DMatrix<f64> {
        self.eval(rho).1
    }

    /// `Tr D_s(rho)`, its derivative, and the clamping flag.
    pub fn trace_with_derivative(&self, rho: f64) -> (f64, f64, bool) {
        let mut t = 0.0;
        let mut dt = 0.0;
        let mut clamped = false;
        for i in 0..self.dim {
            let (v, d, c) = self.splines[self.spline_index(i, i)].eval_with_derivative(rho);
            t += v;
            dt += d;
            clamped |= c;
        }
        (t, dt, clamped)
    }

    pub fn bulk_trace(&self) -> f64 {
        (0..self.dim).map(|i| self.bulk[i][i]).sum()
    }

    /// CSV `l,rho,D11,D12,D22` (upper-triangle entries for general `dim`).
    pub fn write_table<W: Write>(&self, mut out: W) -> Result<()> {
        let entries = upper_entries(self.dim);
        let header: Vec<String> = entries
            .iter()
            .map(|(i, j)| format!("D{}{}", i + 1, j + 1))
            .collect();
        writeln!(out, "l,rho,{}", header.join(","))?;
        for (l, m) in self.levels.iter().enumerate() {
            let vals: Vec<String> = entries.iter().map(|&(i, j)| fmt17(m[i][j])).collect();
            writeln!(out, "{l},{},{}", fmt17(self.nodes[l]), vals.join(","))?;
        }
        Ok(())
    }

    pub fn export_table(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_table(std::io::BufWriter::new(file))
    }

    /// Gnuplot-style columns `rho TrDs(rho) 2-2rho` on `samples + 1` points.
    pub fn write_trace<W: Write>(&self, mut out: W, samples: usize) -> Result<()> {
        writeln!(out, "# rho trace_Ds reference_2_minus_2rho")?;
        for i in 0..=samples {
            let rho = i as f64 / samples as f64;
            let (t, _, _) = self.trace_with_derivative(rho);
            writeln!(out, "{} {} {}", fmt17(rho), fmt17(t), fmt17(2.0 - 2.0 * rho))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let model: Self = serde_json::from_str(&text)?;
        if model.splines.len() != upper_entries(model.dim).len()
            || model.levels.len() != model.nodes.len()
        {
            return Err(Error::Parse(format!(
                "{}: inconsistent self-diffusion model",
                path.display()
            )));
        }
        Ok(model)
    }
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Solves every polarization direction with the chosen method and builds
/// the model. Directions are solved in parallel.
pub fn assemble_levels(
    spec: &LatticeSpec,
    method: Method,
    settings: &AssembleSettings,
) -> Result<SelfDiffusionModel> {
    let directions = polarization_directions(spec.dim())
        .into_par_iter()
        .map(|u| direction_levels(spec, &Direction::new(u)?, method, settings))
        .collect::<Result<Vec<_>>>()?;
    SelfDiffusionModel::from_directions(spec, method, directions)
}

/// Level values for one direction.
pub fn direction_levels(
    spec: &LatticeSpec,
    u: &Direction,
    method: Method,
    settings: &AssembleSettings,
) -> Result<DirectionLevels> {
    match method {
        Method::Lsq => {
            let sol = solve_lsq(spec, u, &settings.lsq)?;
            Ok(DirectionLevels {
                u: u.to_vec(),
                objective: sol.objective,
                values: quad_form_levels(spec, u, &sol.psi)?,
                als_stats: None,
                restart_reports: Vec::new(),
            })
        }
        Method::Als { restarts, seed } => {
            let ms = multi_start(spec, u, restarts, seed, &settings.als)?;
            Ok(DirectionLevels {
                u: u.to_vec(),
                objective: ms.stats.min,
                values: quad_form_levels(spec, u, &ms.best)?,
                als_stats: Some(ms.stats),
                restart_reports: ms.reports,
            })
        }
    }
}
