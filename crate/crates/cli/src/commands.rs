use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tagdiff_core::als::{multi_start, AlsSettings};
use tagdiff_core::functional::{eval_all_levels, Direction};
use tagdiff_core::fvm::{initial_state, time_loop, write_diagnostics, write_snapshot, MeshSource, SimConfig};
use tagdiff_core::lattice::{Jump, LatticeSpec};
use tagdiff_core::lsq::{solve_lsq, LsqSettings};
use tagdiff_core::selfdiff::{assemble_levels, fmt17, polarization_directions, AssembleSettings, Method, SelfDiffusionModel};
use tagdiff_core::validate::{run_suite, SuiteOptions};

use crate::manifest::{beside, RunManifest};
use crate::{CliError, ComputeArgs, LatticeArgs, MatrixArgs, MethodArg, SimulateArgs, SolverArgs, ValidateArgs};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_jumps(text: &str, d: usize) -> Result<Vec<Jump>, CliError> {
    let items: Vec<&str> = text.split(';').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(usage("--jumps: empty jump list"));
    }
    let mut vectors = Vec::new();
    let mut rates = Vec::new();
    for item in &items {
        let (vec_part, rate) = match item.split_once(':') {
            Some((v, p)) => (
                v,
                Some(p.trim().parse::<f64>().map_err(|e| usage(format!("--jumps: bad rate in `{item}`: {e}")))?),
            ),
            None => (*item, None),
        };
        let v: Vec<i32> = vec_part
            .split(',')
            .map(|t| t.trim().parse::<i32>())
            .collect::<Result<_, _>>()
            .map_err(|e| usage(format!("--jumps: bad vector `{vec_part}`: {e}")))?;
        if v.len() != d {
            return Err(usage(format!("--jumps: `{vec_part}` has {} components, --d is {d}", v.len())));
        }
        vectors.push(v);
        rates.push(rate);
    }
    let uniform = 1.0 / items.len() as f64;
    if rates.iter().any(Option::is_some) && rates.iter().any(Option::is_none) {
        return Err(usage("--jumps: give a rate for every jump or for none"));
    }
    Ok(vectors
        .into_iter()
        .zip(rates)
        .map(|(v, p)| Jump::new(v, p.unwrap_or(uniform)))
        .collect())
}

pub fn build_spec(args: &LatticeArgs) -> Result<LatticeSpec, CliError> {
    match args.jumps.as_str() {
        "preset:square2d" => {
            if args.m != 1 || args.d != 2 {
                return Err(usage("preset:square2d fixes --M 1 --d 2; use preset:nn for other sizes"));
            }
            Ok(LatticeSpec::square_2d())
        }
        "preset:nn" => Ok(LatticeSpec::nearest_neighbour(args.m, args.d)?),
        other if other.starts_with("preset:") => Err(usage(format!("unknown jump preset `{other}`"))),
        list => Ok(LatticeSpec::new(args.m, args.d, parse_jumps(list, args.d)?)?),
    }
}

fn settings(solver: &SolverArgs) -> Result<AssembleSettings, CliError> {
    if !(solver.tol > 0.0) || !(solver.lsq_tol > 0.0) {
        return Err(usage("--tol and --lsq-tol must be positive"));
    }
    if solver.restarts == 0 {
        return Err(usage("--restarts must be at least 1"));
    }
    Ok(AssembleSettings {
        lsq: LsqSettings {
            tol: solver.lsq_tol,
            ..LsqSettings::default()
        },
        als: AlsSettings {
            tol: solver.tol,
            max_sweeps: solver.max_sweeps,
        },
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn show_u(u: &[f64]) -> String {
    let parts: Vec<String> = u.iter().map(|x| format!("{x}")).collect();
    format!("({})", parts.join(","))
}

struct LevelRow {
    u: Vec<f64>,
    method: &'static str,
    objective: f64,
    levels: Vec<f64>,
}

pub fn compute(args: &ComputeArgs, argv: &[String]) -> Result<(), CliError> {
    let spec = build_spec(&args.lattice)?;
    let st = settings(&args.solver)?;
    let dirs: Vec<Vec<f64>> = if args.u.is_empty() {
        polarization_directions(spec.dim())
    } else {
        args.u.iter().map(|u| u.0.clone()).collect()
    };
    let mut outputs = vec![args.out.clone()];
    outputs.extend(args.restart_report.clone());
    let uses_als = args.solver.method != MethodArg::Lsq;
    let manifest = RunManifest::start(
        "compute",
        argv,
        args,
        if uses_als { vec![args.solver.seed] } else { vec![] },
        outputs,
        beside(&args.out),
    )?;

    let mut rows = Vec::new();
    let mut restarts = Vec::new();
    for u in &dirs {
        let dir = Direction::new(u.clone())?;
        if args.solver.method != MethodArg::Als {
            let sol = solve_lsq(&spec, &dir, &st.lsq)?;
            log::info!("lsq u={}: {} CGLS iterations", show_u(u), sol.iterations);
            rows.push(LevelRow {
                u: u.clone(),
                method: "lsq",
                objective: sol.objective,
                levels: eval_all_levels(&spec, &sol.psi, &dir)?,
            });
        }
        if uses_als {
            let ms = multi_start(&spec, &dir, args.solver.restarts, args.solver.seed, &st.als)?;
            println!(
                "u={} als restarts={} seed={}: mean={:.6} min={:.6} max={:.6} (best restart {})",
                show_u(u),
                args.solver.restarts,
                args.solver.seed,
                ms.stats.mean,
                ms.stats.min,
                ms.stats.max,
                ms.best_index
            );
            let unconverged = ms.reports.iter().filter(|r| !r.converged).count();
            if unconverged > 0 {
                log::warn!("u={}: {unconverged} restarts hit --max-sweeps", show_u(u));
            }
            rows.push(LevelRow {
                u: u.clone(),
                method: "als",
                objective: ms.stats.min,
                levels: eval_all_levels(&spec, &ms.best, &dir)?,
            });
            restarts.push((u.clone(), ms.reports));
        }
    }

    let d = spec.dim();
    let mut out = create(&args.out)?;
    let mut header: Vec<String> = (1..=d).map(|i| format!("u_{i}")).collect();
    header.extend(["method".to_string(), "objective".to_string()]);
    header.extend((0..=spec.n()).map(|l| format!("A_{l}")));
    writeln!(out, "{}", header.join(","))?;
    for r in &rows {
        let mut cells: Vec<String> = r.u.iter().map(|x| format!("{x}")).collect();
        cells.push(r.method.into());
        cells.push(fmt17(r.objective));
        cells.extend(r.levels.iter().map(|&v| fmt17(v)));
        writeln!(out, "{}", cells.join(","))?;
        let short: Vec<String> = r.levels.iter().map(|v| format!("{v:.4}")).collect();
        println!("u={} {:<3} A={:.6} levels: {}", show_u(&r.u), r.method, r.objective, short.join(" "));
    }
    out.flush()?;

    if let Some(path) = &args.restart_report {
        if restarts.is_empty() {
            log::warn!("--restart-report ignored: no ALS runs");
        } else {
            let mut rep = create(path)?;
            let mut header: Vec<String> = (1..=d).map(|i| format!("u_{i}")).collect();
            header.extend(["restart", "seed", "final_value", "sweeps", "converged", "singular_slices"].map(String::from));
            writeln!(rep, "{}", header.join(","))?;
            for (u, reports) in &restarts {
                let us: Vec<String> = u.iter().map(|x| format!("{x}")).collect();
                for (i, r) in reports.iter().enumerate() {
                    writeln!(
                        rep,
                        "{},{i},{},{},{},{},{}",
                        us.join(","),
                        args.solver.seed,
                        fmt17(r.final_value),
                        r.sweeps,
                        u8::from(r.converged),
                        r.singular_slices
                    )?;
                }
            }
            rep.flush()?;
        }
    }
    manifest.finish("ok")
}

fn method_of(solver: &SolverArgs) -> Result<Method, CliError> {
    match solver.method {
        MethodArg::Lsq => Ok(Method::Lsq),
        MethodArg::Als => Ok(Method::Als {
            restarts: solver.restarts,
            seed: solver.seed,
        }),
        MethodArg::Both => Err(usage("matrix takes --method lsq or --method als")),
    }
}

pub fn matrix(args: &MatrixArgs, argv: &[String]) -> Result<(), CliError> {
    let spec = build_spec(&args.lattice)?;
    let st = settings(&args.solver)?;
    let method = method_of(&args.solver)?;
    if args.samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }
    let manifest = RunManifest::start(
        "matrix",
        argv,
        args,
        match method {
            Method::Als { seed, .. } => vec![seed],
            Method::Lsq => vec![],
        },
        vec![args.out.clone(), args.trace.clone(), args.model.clone()],
        beside(&args.out),
    )?;
    let model = assemble_levels(&spec, method, &st)?;
    model.write_table(create(&args.out)?)?;
    let reference = args.lattice.jumps == "preset:square2d";
    write_trace(&model, create(&args.trace)?, args.samples, reference)?;
    model.save(&args.model)?;

    let n = spec.n();
    println!("D_s(0) = {:?}", model.levels[0]);
    println!("D_s(1) = {:?}", model.levels[n]);
    if spec.dim() >= 2 {
        let off = model.levels.iter().map(|m| m[0][1].abs()).fold(0.0, f64::max);
        let diag = model.levels.iter().map(|m| (m[0][0] - m[1][1]).abs()).fold(0.0, f64::max);
        println!("max |D12| = {off:.3e}, max |D11 - D22| = {diag:.3e}");
    }
    let mut id_dev: f64 = 0.0;
    let mut zero_dev: f64 = 0.0;
    for i in 0..spec.dim() {
        for j in 0..spec.dim() {
            let delta = if i == j { 1.0 } else { 0.0 };
            id_dev = id_dev.max((model.levels[0][i][j] - delta).abs());
            zero_dev = zero_dev.max(model.levels[n][i][j].abs());
        }
    }
    println!("max |D_s(0) - I| = {id_dev:.3e}, max |D_s(1)| = {zero_dev:.3e}");
    if reference {
        let dev = (0..=n)
            .map(|l| {
                let rho = l as f64 / n as f64;
                (model.trace_with_derivative(rho).0 - (2.0 - 2.0 * rho)).abs()
            })
            .fold(0.0, f64::max);
        println!("max |Tr D_s - (2 - 2 rho)| at nodes = {dev:.4}");
    }
    if !model.psd_repairs.is_empty() {
        println!("PSD repair applied at levels {:?}", model.psd_repairs);
    }
    manifest.finish("ok")
}

fn write_trace<W: Write>(model: &SelfDiffusionModel, mut out: W, samples: usize, reference: bool) -> Result<(), CliError> {
    if reference {
        model.write_trace(&mut out, samples)?;
    } else {
        writeln!(out, "# rho trace_Ds")?;
        for i in 0..=samples {
            let rho = i as f64 / samples as f64;
            writeln!(out, "{} {}", fmt17(rho), fmt17(model.trace_with_derivative(rho).0))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn simulate(args: &SimulateArgs, argv: &[String]) -> Result<(), CliError> {
    if !args.config.is_file() {
        return Err(usage(format!("config file {} not found", args.config.display())));
    }
    let mut cfg = SimConfig::load(&args.config)?;
    let ds_path: PathBuf = match (&args.ds, &cfg.ds_model) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => p.clone(),
        (None, None) => return Err(usage("no self-diffusion model: pass --ds or set ds_model in the config")),
    };
    cfg.ds_model = Some(ds_path.clone());
    let model = SelfDiffusionModel::load(&ds_path)?;
    if model.dim != 2 {
        return Err(usage(format!("simulation needs a 2-D model, {} has dim {}", ds_path.display(), model.dim)));
    }
    let mesh = cfg.build_mesh()?;
    std::fs::create_dir_all(&args.out_dir)?;

    let steps = cfg.steps()?;
    let mut snapshot_steps: Vec<usize> = (0..=steps).step_by(cfg.snapshot_every).collect();
    if snapshot_steps.last() != Some(&steps) {
        snapshot_steps.push(steps);
    }
    let snap_path = |s: usize| args.out_dir.join(format!("snapshot_{s:06}.csv"));
    let mut outputs: Vec<PathBuf> = snapshot_steps.iter().map(|&s| snap_path(s)).collect();
    outputs.push(args.out_dir.join("diagnostics.csv"));
    outputs.push(args.out_dir.join("mesh.txt"));
    outputs.push(args.out_dir.join("config.toml"));
    let mut manifest = RunManifest::start(
        "simulate",
        argv,
        &serde_json::json!({ "config": &cfg, "mesh_cells": mesh.n_cells(), "ds_model": &model.method }),
        vec![],
        outputs,
        args.out_dir.join("manifest.json"),
    )?;
    if let MeshSource::Cartesian { nx, ny } = cfg.mesh {
        manifest
            .notes
            .push(format!("Cartesian {nx}x{ny} mesh on (0,1)^2 with cell-centre points; admissible by construction"));
        manifest.write()?;
    }
    std::fs::write(args.out_dir.join("config.toml"), cfg.to_toml())?;
    mesh.write(&args.out_dir.join("mesh.txt"))?;

    let init = initial_state(&mesh, &cfg.initial)?;
    let traj = match time_loop(&cfg, &mesh, &model, init) {
        Ok(t) => t,
        Err(e) => {
            manifest.finish(&format!("failed: {e}"))?;
            return Err(e.into());
        }
    };
    for snap in &traj.snapshots {
        let mut w = create(&snap_path(snap.step))?;
        write_snapshot(&mut w, &mesh, &snap.state)?;
        w.flush()?;
    }
    let mut w = create(&args.out_dir.join("diagnostics.csv"))?;
    write_diagnostics(&mut w, &traj.diagnostics)?;
    w.flush()?;

    let iters = traj.newton_iterations();
    let mut sorted = iters.clone();
    sorted.sort_unstable();
    let m0 = &traj.diagnostics[0];
    let drift = traj
        .diagnostics
        .iter()
        .map(|d| ((d.mass_red - m0.mass_red) / m0.mass_red).abs().max(((d.mass_blue - m0.mass_blue) / m0.mass_blue).abs()))
        .fold(0.0, f64::max);
    let last = &traj.diagnostics[traj.diagnostics.len() - 1];
    println!("steps: {steps}, cells: {}", mesh.n_cells());
    println!(
        "newton iterations: min {} median {} max {}",
        sorted[0],
        sorted[sorted.len() / 2],
        sorted[sorted.len() - 1]
    );
    println!("max relative mass drift: {drift:.3e}");
    println!(
        "final red in [{:.6}, {:.6}], blue in [{:.6}, {:.6}]",
        last.min_red, last.max_red, last.min_blue, last.max_blue
    );
    println!("steps with bound violations: {}", traj.bound_violations);
    manifest.finish("ok")
}

pub fn validate(args: &ValidateArgs, argv: &[String]) -> Result<(), CliError> {
    let _ = argv;
    let model = args.ds.as_deref().map(SelfDiffusionModel::load).transpose()?;
    let checks = run_suite(&SuiteOptions {
        seed: args.seed,
        model,
        conservation_steps: args.steps,
    })?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        return Err(CliError::Validation(failed));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jump_lists() {
        let j = parse_jumps("1,0;-1,0;0,1;0,-1", 2).unwrap();
        assert_eq!(j.len(), 4);
        assert!(j.iter().all(|j| j.probability == 0.25));
        let j = parse_jumps("1,0:0.7; -1,0:0.3", 2).unwrap();
        assert_eq!(j[0].probability, 0.7);
        assert!(parse_jumps("1,0:0.5;-1,0", 2).is_err());
        assert!(parse_jumps("1,0,0", 2).is_err());
        assert!(parse_jumps("", 2).is_err());
    }
}
