use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use serde::Serialize;
use serde_json::json;

use gepower_core::analysis::sweep::{representatives, sweep, SweepOptions, SweepParameter};
use gepower_core::analysis::{
    argmax_equivariance_violations, boundary_plane_policy, canonical_thresholds, check_contiguity_all,
    check_convexity, check_monotonicity, check_symmetry, decision_regions, Plane, CONVEXITY_TOL,
    MONOTONICITY_TOL, SYMMETRY_TOL,
};
use gepower_core::grid::{build_grid, BeliefGrid, ValueFunction};
use gepower_core::lp::{build_lp, write_lp, LpLimits};
use gepower_core::reachable::solve_reachable;
use gepower_core::sim::{evaluate_policy, horizon_for, myopic_policy, Baseline, PolicyLookup};
use gepower_core::solver::{extract_policy, value_iterate, Policy};
use gepower_core::{Belief, Error, ProblemSpec};

use crate::config::Resolved;
use crate::exit::{usage, CliError, CliResult};

fn create_out(cfg: &Resolved) -> CliResult<()> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| usage(format!("cannot create output directory {}: {e}", cfg.out.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn solve_grid(cfg: &Resolved) -> CliResult<(ValueFunction, Policy, serde_json::Value)> {
    let grid = build_grid(&cfg.spec, cfg.resolution)?;
    info!("value iteration on {} points (resolution {}, epsilon {:e})", grid.len(), cfg.resolution, cfg.epsilon);
    let start = Instant::now();
    let (v, stats) = value_iterate(&cfg.spec, &grid, cfg.epsilon)?;
    let policy = extract_policy(&cfg.spec, &v, cfg.tie_epsilon)?;
    let wall = start.elapsed().as_secs_f64();
    info!("converged after {} sweeps, residual {:e}, {wall:.2}s", stats.iterations, stats.residual);
    let meta = json!({
        "iterations": stats.iterations,
        "residual": stats.residual,
        "wall_time_s": wall,
    });
    Ok((v, policy, meta))
}

pub fn solve(cfg: &Resolved) -> CliResult<()> {
    create_out(cfg)?;
    let (v, policy, stats) = solve_grid(cfg)?;
    let n = cfg.spec.n_channels();
    let path = cfg.out.join("solution.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> = (1..=n).map(|j| format!("p{j}")).collect();
    header.extend(["value", "action_mask", "tie_count"].map(String::from));
    w.write_record(&header)?;
    for i in 0..v.grid.len() {
        let mut row: Vec<String> = v.grid.point(i).iter().map(|x| x.to_string()).collect();
        row.push(v.values[i].to_string());
        row.push(policy.choice[i].mask().to_string());
        row.push(policy.argmax[i].len().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    info!("wrote {}", path.display());
    write_json(
        &cfg.out.join("solve_meta.json"),
        &json!({
            "problem": cfg.spec,
            "resolution": cfg.resolution,
            "epsilon": cfg.epsilon,
            "tie_epsilon": cfg.tie_epsilon,
            "grid_points": v.grid.len(),
            "axis": v.grid.axis(0),
            "action_mask_bits": "bit N-1-j is channel j, so the mask reads as the binary tuple (a_1 ... a_N)",
            "stats": stats,
        }),
    )
}

/// Reads a `solution.csv` back into a value function.
pub fn read_values(path: &Path, n: usize) -> CliResult<ValueFunction> {
    let bad = |msg: String| usage(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() < n + 1 || (0..n).any(|j| header[j] != format!("p{}", j + 1)) || &header[n] != "value" {
        return Err(bad(format!("expected columns p1..p{n}, value")));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let nums: Vec<f64> = (0..=n)
            .map(|j| record[j].parse::<f64>().map_err(|e| bad(format!("{e} in {:?}", &record[j]))))
            .collect::<CliResult<_>>()?;
        rows.push(nums);
    }
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut axis: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            axis.sort_by(f64::total_cmp);
            axis.dedup();
            axis
        })
        .collect();
    let grid = BeliefGrid::from_axes(axes).map_err(|e| bad(e.to_string()))?;
    if grid.len() != rows.len() {
        return Err(bad(format!("{} rows do not form a product grid of {} points", rows.len(), grid.len())));
    }
    let mut values = vec![f64::NAN; grid.len()];
    for r in &rows {
        let i = grid.index_of(&r[..n]).ok_or_else(|| bad("point off the grid".into()))?;
        values[i] = r[n];
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(bad("duplicate grid points".into()));
    }
    ValueFunction::new(grid, values).map_err(|e| bad(e.to_string()))
}

#[derive(Serialize)]
struct Verdict {
    name: String,
    pass: bool,
    /// Failures of checks that are reported but not asserted do not change
    /// the exit code.
    asserted: bool,
    detail: serde_json::Value,
}

pub fn check(cfg: &Resolved) -> CliResult<()> {
    create_out(cfg)?;
    let spec = &cfg.spec;
    let n = spec.n_channels();
    let (v, policy) = match &cfg.check_values {
        Some(path) => {
            info!("reading values from {}", path.display());
            let v = read_values(path, n)?;
            let policy = extract_policy(spec, &v, cfg.tie_epsilon)?;
            (v, policy)
        }
        None => {
            let (v, policy, _) = solve_grid(cfg)?;
            (v, policy)
        }
    };
    let mut verdicts = Vec::new();
    let mut push = |name: &str, pass: bool, asserted: bool, detail: serde_json::Value| {
        verdicts.push(Verdict { name: name.into(), pass, asserted, detail });
    };

    let convex = check_convexity(&v, CONVEXITY_TOL);
    push("convexity", convex.pass, true, json!({ "worst_slack": convex.worst, "at": convex.worst_point, "axis": convex.worst_axis }));
    let mono = check_monotonicity(&v, MONOTONICITY_TOL);
    push("monotonicity", mono.pass, true, json!({ "worst_slack": mono.worst, "at": mono.worst_point, "axis": mono.worst_axis }));
    match check_symmetry(spec, &v, SYMMETRY_TOL) {
        Ok(sym) => push(
            "symmetry",
            sym.pass,
            true,
            json!({
                "worst_value_deviation": sym.worst_value_deviation,
                "worst_q_deviation": sym.worst_q_deviation,
                "at": sym.worst_point,
                "failing_permutations": sym.failing,
            }),
        ),
        Err(Error::AsymmetricGrid) => push("symmetry", false, true, json!({ "error": "grid axes differ" })),
        Err(e) => return Err(e.into()),
    }
    match argmax_equivariance_violations(&policy) {
        Ok(list) => push("argmax_equivariance", list.is_empty(), true, json!({ "violations": list.len() })),
        Err(e) => push("argmax_equivariance", false, true, json!({ "error": e.to_string() })),
    }
    let contiguity = check_contiguity_all(&policy);
    push(
        "contiguity",
        contiguity.iter().all(|r| r.pass()),
        true,
        json!({ "violations_per_axis": contiguity.iter().map(|r| r.violations.len()).collect::<Vec<_>>() }),
    );
    let regions = decision_regions(&policy);
    // Single connectivity is only established for three correlated channels.
    let asserted = n <= 3 && spec.channel.lambda0 < spec.channel.lambda1;
    push(
        "connectivity",
        regions.all_nonempty() && regions.all_singly_connected(),
        asserted,
        json!({
            "components_by_mask": regions.regions.iter().map(|r| r.connectivity.components()).collect::<Vec<_>>(),
        }),
    );
    push(
        "vertex_membership",
        regions.all_vertices_pass(),
        true,
        json!({
            "missing_masks": regions.regions.iter().filter(|r| !r.contains_vertex).map(|r| r.action.mask()).collect::<Vec<_>>(),
        }),
    );
    let mut face_violations = Vec::new();
    for plane in Plane::all(n) {
        let slice = boundary_plane_policy(&policy, plane)?;
        face_violations.push(json!({ "axis": plane.axis + 1, "value": plane.value, "violations": slice.violations.len() }));
    }
    let faces_pass = face_violations.iter().all(|f| f["violations"] == 0);
    push("boundary_planes", faces_pass, true, json!({ "faces": face_violations }));

    let thresholds = if n == 3 {
        match canonical_thresholds(spec, &v, &policy, 1e-10) {
            Ok(list) => serde_json::to_value(list)?,
            Err(e) => json!({ "error": e.to_string() }),
        }
    } else {
        serde_json::Value::Null
    };

    let pass = verdicts.iter().all(|c| c.pass || !c.asserted);
    for c in &verdicts {
        info!("{:<20} {}{}", c.name, if c.pass { "pass" } else { "FAIL" }, if c.asserted { "" } else { " (reported only)" });
    }
    write_json(
        &cfg.out.join("check.json"),
        &json!({
            "pass": pass,
            "grid_points": v.grid.len(),
            "region_volumes": regions.regions.iter().map(|r| json!({
                "action_mask": r.action.mask(),
                "point_fraction": r.volume,
                "volume": r.measure,
            })).collect::<Vec<_>>(),
            "checks": verdicts,
            "thresholds": thresholds,
        }),
    )?;
    if pass {
        Ok(())
    } else {
        Err(CliError::CheckFailed("see check.json".into()))
    }
}

pub fn sweep_cmd(cfg: &Resolved) -> CliResult<()> {
    let sweep_cfg = cfg.sweep.as_ref().ok_or_else(|| usage("config has no sweep section"))?;
    let param = SweepParameter::parse(&sweep_cfg.parameter).expect("validated at load");
    if sweep_cfg.values.is_empty() {
        return Err(usage("sweep.values is empty"));
    }
    create_out(cfg)?;
    let opts = SweepOptions { resolution: cfg.resolution, epsilon: cfg.epsilon, tie_epsilon: cfg.tie_epsilon };
    info!("sweeping {} over {} values", param.name(), sweep_cfg.values.len());
    let rows = sweep(&cfg.spec, param, &sweep_cfg.values, &opts);
    let k = representatives(cfg.spec.n_channels()).len();

    let path = cfg.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["param_value".to_string()];
    header.extend((0..k).map(|i| format!("vol_B{i}")));
    header.extend((0..k).map(|i| format!("components_B{i}")));
    header.extend(["contiguity_pass", "symmetry_pass", "vertex_pass"].map(String::from));
    header.extend((0..k).map(|i| format!("pts_B{i}")));
    header.push("skipped".into());
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![r.param_value.to_string()];
        match &r.skipped {
            Some(reason) => {
                rec.extend(std::iter::repeat_n(String::new(), 3 * k + 3));
                rec.push(reason.clone());
            }
            None => {
                rec.extend(r.volumes.iter().map(|x| x.to_string()));
                rec.extend(r.components.iter().map(|x| x.to_string()));
                rec.extend([r.contiguity_pass, r.symmetry_pass, r.vertex_pass].map(|b| b.to_string()));
                rec.extend(r.point_fractions.iter().map(|x| x.to_string()));
                rec.push(String::new());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    info!("wrote {}", path.display());

    let reparameterization = match param {
        SweepParameter::Lambda0 | SweepParameter::Lambda1 => "the named transition probability is replaced",
        SweepParameter::RewardPenaltyRatio => "C[k] = R[k] / value for every k; R unchanged",
        SweepParameter::RewardRatioK2K1 => {
            "k R[k] = R[1] value^(k-1); C[k] = R[k] / (R[1] / C[1]) with R[1], C[1] from the template"
        }
    };
    write_json(
        &cfg.out.join("sweep_meta.json"),
        &json!({
            "parameter": param.name(),
            "reparameterization": reparameterization,
            "template": cfg.spec,
            "resolution": cfg.resolution,
            "epsilon": cfg.epsilon,
            "representative_masks": representatives(cfg.spec.n_channels()).iter().map(|a| a.mask()).collect::<Vec<_>>(),
            "volume": "trapezoid-weighted share of [0,1]^N; pts_B* hold the share of grid points",
        }),
    )?;
    if rows.iter().all(|r| r.skipped.is_some()) {
        return Err(usage("every sweep value gave an invalid problem; see the skipped column"));
    }
    Ok(())
}

enum Named {
    Optimal,
    Reachable,
    Myopic,
    Baseline(Baseline),
}

fn parse_policy(name: &str) -> Option<Named> {
    match name {
        "optimal" => Some(Named::Optimal),
        "optimal_reachable" => Some(Named::Reachable),
        "myopic" => Some(Named::Myopic),
        other => Baseline::parse(other).map(Named::Baseline),
    }
}

pub fn simulate(cfg: &Resolved) -> CliResult<()> {
    let sim = cfg.simulate.as_ref().ok_or_else(|| usage("config has no simulate section"))?;
    if sim.policies.is_empty() {
        return Err(usage("simulate.policies is empty"));
    }
    let named: Vec<Named> = sim
        .policies
        .iter()
        .map(|name| {
            parse_policy(name).ok_or_else(|| {
                usage(format!(
                    "unknown policy {name:?}; expected optimal, optimal_reachable, myopic, all_on, best_single, uniform_random or none"
                ))
            })
        })
        .collect::<CliResult<_>>()?;
    create_out(cfg)?;
    let spec: &ProblemSpec = &cfg.spec;
    let p0 = Belief::new(sim.p0.clone())?;
    let horizon = sim.horizon.unwrap_or_else(|| horizon_for(spec, 1e-6));
    let (v, policy, _) = solve_grid(cfg)?;
    let solver_value = v.interpolate(p0.coords());
    let reachable = if named.iter().any(|n| matches!(n, Named::Reachable)) {
        info!("solving the reachable set at truncation {}", sim.truncation);
        Some(solve_reachable(spec, &p0, sim.truncation, cfg.epsilon)?)
    } else {
        None
    };
    let myopic = myopic_policy(spec);
    let mut summaries = Vec::new();
    for (name, which) in sim.policies.iter().zip(&named) {
        let lookup: &dyn PolicyLookup = match which {
            Named::Optimal => &policy,
            Named::Reachable => reachable.as_ref().expect("solved above"),
            Named::Myopic => &myopic,
            Named::Baseline(b) => b,
        };
        info!("simulating {name}: {} episodes of {horizon} slots", sim.episodes);
        let summary = evaluate_policy(spec, lookup, &p0, sim.episodes, horizon, cfg.seed)?;
        info!("{name}: mean {:.6} +- {:.6} (99% half-width)", summary.mean, summary.ci99);
        summaries.push(summary);
    }
    write_json(
        &cfg.out.join("simulate.json"),
        &json!({
            "p0": sim.p0,
            "episodes": sim.episodes,
            "horizon": horizon,
            "seed": cfg.seed,
            "resolution": cfg.resolution,
            "epsilon": cfg.epsilon,
            "solver_value_p0": solver_value,
            "reachable_value_p0": reachable.as_ref().map(|r| r.value_at_start),
            "summaries": summaries,
        }),
    )
}

/// Largest resolution below `resolution` whose LP fits the default caps.
fn suggest_resolution(spec: &ProblemSpec, resolution: usize) -> Option<usize> {
    let limits = LpLimits::default();
    let actions = 1usize << spec.n_channels();
    (2..resolution).rev().find(|&r| {
        let points = build_grid(spec, r).map(|g| g.len()).unwrap_or(usize::MAX);
        let constraints = points.saturating_mul(actions);
        constraints <= limits.max_constraints && constraints.saturating_mul(1 + actions) <= limits.max_nonzeros
    })
}

pub fn export_lp(cfg: &Resolved) -> CliResult<()> {
    let grid = build_grid(&cfg.spec, cfg.resolution)?;
    let lp = match build_lp(&cfg.spec, &grid) {
        Ok(lp) => lp,
        Err(e @ Error::LpTooLarge { .. }) => {
            let hint = match suggest_resolution(&cfg.spec, cfg.resolution) {
                Some(r) => format!("; try --resolution {r}"),
                None => String::new(),
            };
            return Err(usage(format!("{e}{hint}")));
        }
        Err(e) => return Err(e.into()),
    };
    create_out(cfg)?;
    let path = cfg.out.join("problem.lp");
    fs::write(&path, write_lp(&lp))?;
    info!("wrote {} ({} variables, {} constraints)", path.display(), lp.n_variables(), lp.n_constraints());
    let variables: Vec<_> = (0..grid.len()).map(|i| json!({ "name": format!("v_{i}"), "point": grid.point(i) })).collect();
    write_json(
        &cfg.out.join("lp_variables.json"),
        &json!({
            "n_variables": lp.n_variables(),
            "n_constraints": lp.n_constraints(),
            "constraint_names": "c_<point>_<action_mask>",
            "problem": cfg.spec,
            "resolution": cfg.resolution,
            "variables": variables,
        }),
    )
}
