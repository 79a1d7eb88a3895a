//! Simulation configuration, initial data and the backward Euler time loop.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mesh::Mesh;
use super::newton::{newton_solve, NewtonSettings};
use super::scheme::{Closure, DEFAULT_RHO_FLOOR};
use crate::error::{Error, Result};
use crate::selfdiff::fmt17;

/// Bound violations smaller than this are not reported.
pub const BOUNDS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MeshSource {
    Cartesian { nx: usize, ny: usize },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    /// Expression in `x`, `y` (constants `PI`, `E`; functions `cos`, `exp`, ...).
    pub red: String,
    pub blue: String,
}

fn default_max_newton() -> usize {
    20
}
fn default_roundoff_tol() -> f64 {
    NewtonSettings::default().roundoff_tol
}
fn default_rho_floor() -> f64 {
    DEFAULT_RHO_FLOOR
}
fn default_snapshot_every() -> usize {
    1000
}

/// TOML run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub eps_lin: f64,
    #[serde(default = "default_max_newton")]
    pub max_newton: usize,
    #[serde(default = "default_roundoff_tol")]
    pub roundoff_tol: f64,
    #[serde(default = "default_rho_floor")]
    pub rho_floor: f64,
    pub mesh: MeshSource,
    pub initial: InitialCondition,
    /// Self-diffusion model file; may be overridden on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ds_model: Option<PathBuf>,
    /// Snapshot every this many steps (the initial and final states are always kept).
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
}

impl SimConfig {
    /// Reference run: 18x18 Cartesian mesh, cosine initial data.
    pub fn reference() -> Self {
        Self {
            dt: 1e-3,
            t_final: 10.0,
            eps_lin: 1e-8,
            max_newton: default_max_newton(),
            roundoff_tol: default_roundoff_tol(),
            rho_floor: DEFAULT_RHO_FLOOR,
            mesh: MeshSource::Cartesian { nx: 18, ny: 18 },
            initial: InitialCondition {
                red: "0.25 + 0.25*cos(PI*x)*cos(PI*y)".into(),
                blue: "0.5 - 0.5*cos(PI*x)*cos(PI*y)".into(),
            },
            ds_model: None,
            snapshot_every: default_snapshot_every(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let MeshSource::File { path: p } = &mut cfg.mesh {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = cfg.ds_model.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("dt", self.dt), ("t_final", self.t_final), ("eps_lin", self.eps_lin)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_newton == 0 || self.snapshot_every == 0 {
            return Err(Error::InvalidParameter("max_newton and snapshot_every must be >= 1".into()));
        }
        self.steps().map(|_| ())
    }

    /// Number of constant steps; `t_final` must be a multiple of `dt`.
    pub fn steps(&self) -> Result<usize> {
        let p = (self.t_final / self.dt).round();
        if p < 1.0 || (p * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::InvalidParameter(format!(
                "t_final = {} is not a whole number of steps dt = {}",
                self.t_final, self.dt
            )));
        }
        Ok(p as usize)
    }

    pub fn newton(&self) -> NewtonSettings {
        NewtonSettings {
            eps_lin: self.eps_lin,
            max_newton: self.max_newton,
            roundoff_tol: self.roundoff_tol,
            rho_floor: self.rho_floor,
        }
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        match &self.mesh {
            MeshSource::Cartesian { nx, ny } => Mesh::cartesian(*nx, *ny),
            MeshSource::File { path } => Mesh::load(path),
        }
    }
}

/// Interleaved cell densities at time `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub time: f64,
    pub values: Vec<f64>,
}

impl SimState {
    pub fn red(&self, cell: usize) -> f64 {
        self.values[2 * cell]
    }

    pub fn blue(&self, cell: usize) -> f64 {
        self.values[2 * cell + 1]
    }

    pub fn masses(&self, mesh: &Mesh) -> [f64; 2] {
        let mut m = [0.0; 2];
        for (k, c) in mesh.cells().iter().enumerate() {
            m[0] += c.measure * self.red(k);
            m[1] += c.measure * self.blue(k);
        }
        m
    }
}

struct Expr {
    text: String,
    expr: exmex::FlatEx<f64>,
}

impl Expr {
    fn parse(text: &str) -> Result<Self> {
        use exmex::Express;
        let expr = exmex::parse::<f64>(text).map_err(|e| Error::Expression {
            expr: text.into(),
            reason: e.to_string(),
        })?;
        if let Some(v) = expr.var_names().iter().find(|v| *v != "x" && *v != "y") {
            return Err(Error::Expression {
                expr: text.into(),
                reason: format!("unknown variable `{v}` (only x and y are defined)"),
            });
        }
        Ok(Self { text: text.into(), expr })
    }

    fn eval(&self, p: [f64; 2]) -> Result<f64> {
        use exmex::Express;
        // variables are passed in sorted-name order
        let args: Vec<f64> = self
            .expr
            .var_names()
            .iter()
            .map(|v| if v == "x" { p[0] } else { p[1] })
            .collect();
        let v = self.expr.eval(&args).map_err(|e| Error::Expression {
            expr: self.text.clone(),
            reason: e.to_string(),
        })?;
        if !v.is_finite() {
            return Err(Error::Expression {
                expr: self.text.clone(),
                reason: format!("non-finite value at ({}, {})", p[0], p[1]),
            });
        }
        Ok(v)
    }
}

/// Pointwise evaluation of the initial data at the cell points.
pub fn initial_state(mesh: &Mesh, initial: &InitialCondition) -> Result<SimState> {
    let red = Expr::parse(&initial.red)?;
    let blue = Expr::parse(&initial.blue)?;
    let mut values = Vec::with_capacity(2 * mesh.n_cells());
    for c in mesh.cells() {
        values.push(red.eval(c.center)?);
        values.push(blue.eval(c.center)?);
    }
    Ok(SimState { time: 0.0, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub step: usize,
    pub time: f64,
    pub mass_red: f64,
    pub mass_blue: f64,
    pub min_red: f64,
    pub max_red: f64,
    pub min_blue: f64,
    pub max_blue: f64,
    pub max_rho: f64,
    pub newton_iters: usize,
    pub roundoff_stop: bool,
    pub degenerate_edges: usize,
}

impl Diagnostics {
    fn of(step: usize, state: &SimState, mesh: &Mesh) -> Self {
        let [mass_red, mass_blue] = state.masses(mesh);
        let n = mesh.n_cells();
        let fold = |f: &dyn Fn(usize) -> f64, min: bool| {
            (0..n).map(f).fold(if min { f64::INFINITY } else { f64::NEG_INFINITY }, |a, b| {
                if min { a.min(b) } else { a.max(b) }
            })
        };
        Self {
            step,
            time: state.time,
            mass_red,
            mass_blue,
            min_red: fold(&|k| state.red(k), true),
            max_red: fold(&|k| state.red(k), false),
            min_blue: fold(&|k| state.blue(k), true),
            max_blue: fold(&|k| state.blue(k), false),
            max_rho: fold(&|k| state.red(k) + state.blue(k), false),
            newton_iters: 0,
            roundoff_stop: false,
            degenerate_edges: 0,
        }
    }

    /// Largest amount by which `0 <= rho_red, rho_blue` or `rho <= 1` fails.
    pub fn bound_violation(&self) -> f64 {
        (-self.min_red).max(-self.min_blue).max(self.max_rho - 1.0).max(0.0)
    }

    pub const CSV_HEADER: &'static str = "step,time,mass_red,mass_blue,min_red,max_red,min_blue,max_blue,max_rho,newton_iters,roundoff_stop,degenerate_edges";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            fmt17(self.time),
            fmt17(self.mass_red),
            fmt17(self.mass_blue),
            fmt17(self.min_red),
            fmt17(self.max_red),
            fmt17(self.min_blue),
            fmt17(self.max_blue),
            fmt17(self.max_rho),
            self.newton_iters,
            u8::from(self.roundoff_stop),
            self.degenerate_edges
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub state: SimState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    /// Entry 0 describes the initial state.
    pub diagnostics: Vec<Diagnostics>,
    pub bound_violations: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &SimState {
        &self.snapshots[self.snapshots.len() - 1].state
    }

    /// Newton iterations of every step.
    pub fn newton_iterations(&self) -> Vec<usize> {
        self.diagnostics[1..].iter().map(|d| d.newton_iters).collect()
    }
}

/// Backward Euler with constant steps from `initial` up to `config.t_final`.
pub fn time_loop<C: Closure + ?Sized>(
    config: &SimConfig,
    mesh: &Mesh,
    closure: &C,
    initial: SimState,
) -> Result<Trajectory> {
    config.validate()?;
    let steps = config.steps()?;
    let settings = config.newton();
    let mut diagnostics = Vec::with_capacity(steps + 1);
    diagnostics.push(Diagnostics::of(0, &initial, mesh));
    let mut snapshots = vec![Snapshot {
        step: 0,
        state: initial.clone(),
    }];
    let mut bound_violations = 0;
    let mut state = initial;
    for step in 1..=steps {
        let time = step as f64 * config.dt;
        let out = newton_solve(mesh, &state.values, config.dt, closure, &settings).map_err(|e| Error::TimeStep {
            step,
            time,
            source: Box::new(e),
        })?;
        state = SimState {
            time,
            values: out.state,
        };
        let mut d = Diagnostics::of(step, &state, mesh);
        d.newton_iters = out.iterations;
        d.roundoff_stop = out.roundoff_stop;
        d.degenerate_edges = out.stats.degenerate_edges;
        if out.stats.clamped_cells > 0 {
            log::warn!("step {step}: {} cells outside the spline range", out.stats.clamped_cells);
        }
        let v = d.bound_violation();
        if v > BOUNDS_TOL {
            bound_violations += 1;
            log::warn!("step {step}: density bounds violated by {v:e}");
        }
        diagnostics.push(d);
        if step % config.snapshot_every == 0 || step == steps {
            snapshots.push(Snapshot {
                step,
                state: state.clone(),
            });
        }
    }
    Ok(Trajectory {
        snapshots,
        diagnostics,
        bound_violations,
    })
}

/// CSV `cell,x,y,rho_red,rho_blue`.
pub fn write_snapshot<W: Write>(mut out: W, mesh: &Mesh, state: &SimState) -> Result<()> {
    writeln!(out, "cell,x,y,rho_red,rho_blue")?;
    for (k, c) in mesh.cells().iter().enumerate() {
        writeln!(
            out,
            "{k},{},{},{},{}",
            fmt17(c.center[0]),
            fmt17(c.center[1]),
            fmt17(state.red(k)),
            fmt17(state.blue(k))
        )?;
    }
    Ok(())
}

pub fn write_diagnostics<W: Write>(mut out: W, rows: &[Diagnostics]) -> Result<()> {
    writeln!(out, "{}", Diagnostics::CSV_HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fvm::scheme::AffineClosure;

    #[test]
    fn reference_config_round_trips() {
        let cfg = SimConfig::reference();
        assert_eq!(cfg.steps().unwrap(), 10_000);
        assert_eq!(SimConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn config_rejections() {
        let mut cfg = SimConfig::reference();
        cfg.dt = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SimConfig::reference();
        cfg.dt = 0.3;
        cfg.t_final = 1.0;
        assert!(cfg.validate().is_err());
        let text = SimConfig::reference().to_toml() + "bogus = 1\n";
        assert!(SimConfig::parse(&text).is_err());
    }

    #[test]
    fn initial_data() {
        let mesh = Mesh::cartesian(3, 3).unwrap();
        let s = initial_state(&mesh, &SimConfig::reference().initial).unwrap();
        // cell 4 is centred at (0.5, 0.5)
        assert!((s.red(4) - 0.25).abs() < 1e-15);
        assert!((s.blue(4) - 0.5).abs() < 1e-15);
        let c = initial_state(
            &mesh,
            &InitialCondition {
                red: "0.3".into(),
                blue: "0.1 + 0*x".into(),
            },
        )
        .unwrap();
        assert!(c.values.chunks(2).all(|p| p == [0.3, 0.1]));
        assert!(initial_state(
            &mesh,
            &InitialCondition {
                red: "z".into(),
                blue: "0".into()
            }
        )
        .is_err());
    }

    #[test]
    fn initial_mean_by_quadrature() {
        // midpoint rule on a fine grid is exact enough for the cosine mean
        let mesh = Mesh::cartesian(64, 64).unwrap();
        let s = initial_state(&mesh, &SimConfig::reference().initial).unwrap();
        let [red, blue] = s.masses(&mesh);
        assert!((red - 0.25).abs() < 1e-12);
        assert!((blue - 0.5).abs() < 1e-12);
    }

    #[test]
    fn short_run_conserves_mass() {
        let mut cfg = SimConfig::reference();
        cfg.mesh = MeshSource::Cartesian { nx: 6, ny: 6 };
        cfg.t_final = 0.05;
        cfg.snapshot_every = 10;
        let mesh = cfg.build_mesh().unwrap();
        let init = initial_state(&mesh, &cfg.initial).unwrap();
        let traj = time_loop(&cfg, &mesh, &AffineClosure::reference(), init).unwrap();
        assert_eq!(traj.diagnostics.len(), 51);
        assert_eq!(traj.snapshots.len(), 6);
        let m0 = &traj.diagnostics[0];
        for d in &traj.diagnostics {
            assert!((d.mass_red - m0.mass_red).abs() <= 1e-12 * m0.mass_red);
            assert!((d.mass_blue - m0.mass_blue).abs() <= 1e-12 * m0.mass_blue);
        }
        // diffusion flattens the profile
        let last = traj.diagnostics.last().unwrap();
        assert!(last.max_red - last.min_red < m0.max_red - m0.min_red);
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &mesh, traj.final_state()).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 37);
    }
}
