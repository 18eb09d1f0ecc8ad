//! Dispatch from a validated config to the solvers, and report assembly.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use sqbsde::bsde::{self, Forward};
use sqbsde::finance::{self, Strategy, Utility};
use sqbsde::generators::{check_assumptions, GeneratorSpec};
use sqbsde::pde::{self, FdOptions, McOptions, ProbMethod, SolutionField};
use sqbsde::sde::{euler, euler_reflected};
use sqbsde::transforms::{solve_gclass_exact, CondExpectation};
use sqbsde::{make_paths, Error, Estimate, QuadratureRule, Terminal, TimeGrid};

use crate::config::{Config, Experiment, Numerics, PdeMethod};
use crate::CliError;

/// Report files, keyed by file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub files: BTreeMap<String, String>,
}

/// 17 significant digits; non-finite values become `null`.
pub fn num(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    serde_json::from_str(&format!("{x:.16e}")).expect("formatted float is valid JSON")
}

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn est(e: Estimate) -> Value {
    json!({ "value": num(e.value), "se": num(e.se) })
}

fn exact(v: f64) -> Value {
    json!({ "value": num(v), "exact": true })
}

fn core_err(e: Error) -> CliError {
    if e.is_numerical() {
        CliError::Numerical(e.to_string())
    } else {
        CliError::Invalid(e.to_string())
    }
}

fn numerics_json(n: &Numerics) -> Value {
    json!({
        "n_steps": n.n_steps,
        "n_paths": n.n_paths,
        "seed": n.seed,
        "degree": n.lsmc.degree,
        "picard": n.lsmc.n_picard,
        "clamp": n.lsmc.clamp_eps.map_or(Value::Null, num),
        "augment_exp": n.lsmc.augment_exp,
        "weighting": n.lsmc.weighting.name(),
        "quadrature": n.quadrature,
    })
}

fn generator_json(g: &GeneratorSpec) -> Value {
    json!({
        "delta": num(g.delta),
        "alpha": g.alpha.describe(),
        "beta": g.beta.describe(),
        "gamma": g.gamma.iter().map(|v| v.describe()).collect::<Vec<_>>(),
        "custom": g.custom.as_ref().map(|c| c.describe()),
        "branch": format!("{:?}", g.branch).to_lowercase(),
    })
}

fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn rel_err(v: f64, oracle: f64) -> f64 {
    (v - oracle) / oracle
}

/// Runs the experiment and returns the report files.
pub fn run(cfg: &Config) -> Result<Report, CliError> {
    let mut summary = Map::new();
    summary.insert("kind".into(), json!(cfg.kind));
    summary.insert("horizon".into(), num(cfg.horizon));
    summary.insert("numerics".into(), numerics_json(&cfg.numerics));
    let mut files = BTreeMap::new();
    match &cfg.experiment {
        Experiment::Bsde { generator, diffusion, x0, terminal, ladder } => {
            run_bsde(cfg, generator, diffusion.as_ref(), x0, terminal, ladder.as_ref(), &mut summary, &mut files)?
        }
        Experiment::Pde { problem, grid, method, dx, padding } => {
            let n = &cfg.numerics;
            let mc = McOptions {
                n_steps: n.n_steps,
                n_paths: n.n_paths,
                seed: n.seed,
                method: if *method == PdeMethod::Lsmc { ProbMethod::Lsmc } else { ProbMethod::Auto },
                lsmc: n.lsmc.clone(),
            };
            let fd_opts = || {
                let xs = grid.points.iter().map(|p| p[0]);
                let lo = xs.clone().fold(f64::INFINITY, f64::min);
                let hi = xs.fold(f64::NEG_INFINITY, f64::max);
                let mut o = FdOptions::new((lo, hi), *dx, grid.times.clone());
                o.padding = padding.clone();
                o
            };
            let field: SolutionField = match method {
                PdeMethod::Probabilistic | PdeMethod::Lsmc => pde::eval_probabilistic(problem, grid, &mc),
                PdeMethod::TransformExact => {
                    let rule = QuadratureRule::gauss_hermite(n.quadrature).map_err(core_err)?;
                    pde::eval_transform_exact(problem, grid, &rule, &mc)
                }
                PdeMethod::Fd => pde::solve_fd(problem, &fd_opts()),
                PdeMethod::FdTransformed => pde::solve_fd_transformed(problem, &fd_opts()),
                PdeMethod::Series => pde::eval_neumann_series(problem, grid),
            }
            .map_err(core_err)?;
            summary.insert("generator".into(), generator_json(&problem.generator));
            summary.insert("terminal".into(), json!(problem.terminal.describe()));
            summary.insert("neumann".into(), json!(problem.neumann));
            summary.insert("method".into(), json!(field.method));
            let head = field
                .nearest(grid.times[0], &grid.points[0])
                .ok_or_else(|| CliError::Numerical("empty solution field".into()))?;
            let headline = if head.se > 0.0 {
                est(Estimate { value: head.v, se: head.se })
            } else {
                json!({ "value": num(head.v), "exact": field.method == "series" })
            };
            summary.insert(
                "headline".into(),
                json!({ "t": num(head.t), "x": head.x.iter().map(|v| num(*v)).collect::<Vec<_>>(), "v": headline }),
            );
            summary.insert("n_points".into(), json!(field.points.len()));
            summary.insert("min_value".into(), num(field.min_value()));
            summary.insert("clamp_rate".into(), field.clamp_rate.map_or(Value::Null, num));
            files.insert("field.csv".into(), field.to_csv());
        }
        Experiment::Utility { market, problem, strategies } => {
            let n = &cfg.numerics;
            let paths = make_paths(TimeGrid::new(0.0, cfg.horizon, n.n_steps).map_err(core_err)?, market.dim, n.n_paths, n.seed)
                .map_err(core_err)?;
            let r = finance::solve_utility(market, problem, &paths, &n.lsmc).map_err(core_err)?;
            summary.insert("utility".into(), json!(problem.utility.name()));
            summary.insert("endowment".into(), json!(problem.endowment.describe()));
            summary.insert("wealth".into(), num(problem.wealth));
            summary.insert("generator".into(), json!(r.generator));
            summary.insert("value".into(), est(r.value));
            summary.insert("y0".into(), est(r.y0));
            summary.insert("strategy_median".into(), json!(r.median_strategy().into_iter().map(num).collect::<Vec<_>>()));
            let nodes = paths.grid().nodes();
            let theta = market.constant_theta(&nodes).map_err(core_err)?;
            let oracle = match (&theta, &problem.endowment) {
                (Some(th), Terminal::Constant(xi)) => {
                    let p_grid: Vec<f64> = (0..=600).map(|k| -2.0 + 0.01 * k as f64).collect();
                    let norm = th.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let o = finance::merton_grid_oracle(problem.utility, norm, cfg.horizon, problem.wealth, *xi, &p_grid);
                    json!({
                        "value": num(o.value),
                        "p": num(o.p),
                        "relative_error": num(rel_err(r.value.value, o.value)),
                    })
                }
                _ => Value::Null,
            };
            summary.insert("merton_oracle".into(), oracle);
            let mut list: Vec<Strategy> = strategies.iter().map(|p| Strategy::Constant(vec![*p])).collect();
            list.push(Strategy::Optimal);
            let checks = finance::supermartingale_check(problem, market, &r, &paths, &list).map_err(core_err)?;
            summary.insert(
                "supermartingale".into(),
                Value::Array(
                    checks
                        .iter()
                        .map(|c| {
                            let label = match &c.strategy {
                                Strategy::Constant(p) => json!(p.iter().map(|v| num(*v)).collect::<Vec<_>>()),
                                Strategy::Optimal => json!("optimal"),
                            };
                            json!({ "strategy": label, "drift": est(c.drift), "pass": c.pass })
                        })
                        .collect(),
                ),
            );
            let d = market.dim;
            let header = std::iter::once("node,t".to_string())
                .chain((1..=d).map(|k| format!("p{k}")))
                .collect::<Vec<_>>()
                .join(",");
            files.insert(
                "strategy.csv".into(),
                csv(
                    &header,
                    r.strategy_median.iter().enumerate().map(|(i, m)| {
                        let mut row = vec![i.to_string(), fmt(nodes[i])];
                        row.extend(m.iter().map(|v| fmt(*v)));
                        row
                    }),
                ),
            );
            if let Utility::Power(_) = problem.utility {
                summary.insert("clamp_rate".into(), num(r.solution.diagnostics.clamp_rate(paths.n_paths())));
            }
        }
        Experiment::Sdu { spec } => {
            let n = &cfg.numerics;
            let paths = make_paths(TimeGrid::new(0.0, cfg.horizon, n.n_steps).map_err(core_err)?, 1, n.n_paths, n.seed)
                .map_err(core_err)?;
            let r = finance::solve_sdu(spec, &paths, &n.lsmc).map_err(core_err)?;
            summary.insert(
                "parameters".into(),
                json!({
                    "alpha": num(spec.alpha),
                    "beta": num(spec.beta),
                    "rho": num(spec.rho),
                    "consumption": spec.consumption.describe(),
                    "terminal": spec.terminal.describe(),
                }),
            );
            summary.insert("method".into(), json!(r.method));
            summary.insert("u0".into(), if r.solution.is_none() { exact(r.u0.value) } else { est(r.u0) });
            summary.insert("notes".into(), json!(r.notes));
            files.insert(
                "sdu.csv".into(),
                csv("t,u_mean", r.times.iter().zip(&r.mean_path).map(|(t, u)| vec![fmt(*t), fmt(*u)])),
            );
        }
        Experiment::Study { generator, terminal, levels, reps } => {
            let n = &cfg.numerics;
            let oracle_paths = make_paths(TimeGrid::new(0.0, cfg.horizon, 1).map_err(core_err)?, generator.dim(), 2, n.seed)
                .map_err(core_err)?;
            let mode = CondExpectation::quadrature(n.quadrature).map_err(core_err)?;
            let oracle = solve_gclass_exact(generator, terminal, &oracle_paths, &mode).map_err(core_err)?.y0();
            let x0 = vec![0.0; generator.dim()];
            let mut rows = Vec::new();
            let mut table = Vec::new();
            for &(steps, m) in levels {
                let mut y0s = Vec::with_capacity(*reps);
                for rep in 0..*reps {
                    let paths = make_paths(TimeGrid::new(0.0, cfg.horizon, steps).map_err(core_err)?, generator.dim(), m, n.seed + rep as u64)
                        .map_err(core_err)?;
                    y0s.push(bsde::solve_lsmc(generator, terminal, Forward::Brownian(&x0), &paths, &n.lsmc).map_err(core_err)?.y0());
                }
                let e = Estimate::from_samples(&y0s);
                let rmse = (y0s.iter().map(|y| rel_err(*y, oracle).powi(2)).sum::<f64>() / y0s.len() as f64).sqrt();
                rows.push(vec![steps.to_string(), m.to_string(), fmt(e.value), fmt(e.se), fmt(rmse)]);
                table.push(json!({ "n_steps": steps, "n_paths": m, "y0": est(e), "rmse_relative": num(rmse) }));
            }
            summary.insert("generator".into(), generator_json(generator));
            summary.insert("terminal".into(), json!(terminal.describe()));
            summary.insert("oracle".into(), exact(oracle));
            summary.insert("reps".into(), json!(reps));
            summary.insert("levels".into(), Value::Array(table));
            files.insert("convergence.csv".into(), csv("n_steps,n_paths,y0,se,rmse_relative", rows));
        }
    }
    let text = serde_json::to_string_pretty(&Value::Object(summary)).expect("serializable") + "\n";
    files.insert("summary.json".into(), text);
    Ok(Report { files })
}

#[allow(clippy::too_many_arguments)]
fn run_bsde(
    cfg: &Config,
    generator: &GeneratorSpec,
    diffusion: Option<&sqbsde::sde::DiffusionSpec>,
    x0: &[f64],
    terminal: &Terminal,
    ladder: Option<&(bsde::Ladder, Vec<f64>)>,
    summary: &mut Map<String, Value>,
    files: &mut BTreeMap<String, String>,
) -> Result<(), CliError> {
    let n = &cfg.numerics;
    let grid = TimeGrid::new(0.0, cfg.horizon, n.n_steps).map_err(core_err)?;
    let paths = make_paths(grid, x0.len(), n.n_paths, n.seed).map_err(core_err)?;
    let states = match diffusion {
        Some(d) if d.domain.is_some() => Some(euler_reflected(d, 0.0, x0, &paths).map_err(core_err)?.states),
        Some(d) => Some(euler(d, 0.0, x0, &paths).map_err(core_err)?),
        None => None,
    };
    let forward = || match &states {
        Some(s) => Forward::States(s),
        None => Forward::Brownian(x0),
    };
    let sol = bsde::solve_lsmc(generator, terminal, forward(), &paths, &n.lsmc).map_err(core_err)?;
    let y0 = sol.y0_estimate();
    summary.insert("generator".into(), generator_json(generator));
    summary.insert("terminal".into(), json!(terminal.describe()));
    summary.insert("x0".into(), json!(x0.iter().map(|v| num(*v)).collect::<Vec<_>>()));
    summary.insert("y0".into(), est(y0));

    let brownian = diffusion.is_none() && x0.iter().all(|v| *v == 0.0);
    let oracle = if brownian && generator.is_gclass() {
        let mode = CondExpectation::quadrature(n.quadrature).map_err(core_err)?;
        let small = paths.take_paths(2).map_err(core_err)?;
        match solve_gclass_exact(generator, terminal, &small, &mode) {
            Ok(ex) => {
                let v = ex.y0();
                json!({ "value": num(v), "exact": true, "method": "transform-exact", "relative_error": num(rel_err(y0.value, v)) })
            }
            Err(Error::Unsupported(_)) => Value::Null,
            Err(e) => return Err(core_err(e)),
        }
    } else {
        Value::Null
    };
    summary.insert("oracle".into(), oracle);

    let d = &sol.diagnostics;
    summary.insert(
        "diagnostics".into(),
        json!({
            "clamp_rate": num(d.clamp_rate(sol.n_paths)),
            "clamp_eps": num(sol.clamp_eps),
            "max_condition": num(d.condition_numbers.iter().copied().fold(0.0, f64::max)),
            "min_y": num(sol.min_y()),
            "warnings": d.warnings,
        }),
    );
    if brownian && generator.is_gclass() {
        let rep = check_assumptions(generator, terminal, 2.0, 0.25, &paths).map_err(core_err)?;
        summary.insert(
            "assumptions".into(),
            json!({
                "p": num(rep.p),
                "q": num(rep.q),
                "r": num(rep.r),
                "all_pass": rep.all_pass(),
                "delta_half_caveat": rep.delta_half_caveat,
                "conditions": rep.conditions.iter().map(|c| json!({
                    "name": c.name,
                    "estimate": num(c.estimate),
                    "se": num(c.se),
                    "method": c.method,
                    "tail_index": c.tail_index.map_or(Value::Null, num),
                    "pass": c.pass,
                })).collect::<Vec<_>>(),
            }),
        );
    }
    let nodes = grid.nodes();
    files.insert(
        "nodes.csv".into(),
        csv(
            "node,t,y_mean,y_min,clamp_count,condition,residual",
            (0..grid.n_nodes()).map(|i| {
                let y = sol.y_node(i);
                vec![
                    i.to_string(),
                    fmt(nodes[i]),
                    fmt(sqbsde::stats::mean(y)),
                    fmt(y.iter().copied().fold(f64::INFINITY, f64::min)),
                    d.clamp_activations.get(i).copied().unwrap_or(0).to_string(),
                    fmt(d.condition_numbers.get(i).copied().unwrap_or(f64::NAN)),
                    fmt(d.residual_norms.get(i).copied().unwrap_or(f64::NAN)),
                ]
            }),
        ),
    );
    if let Some((kind, levels)) = ladder {
        let rep = bsde::solve_truncated_ladder(generator, terminal, forward(), &paths, levels, *kind, &n.lsmc).map_err(core_err)?;
        files.insert(
            "ladder.csv".into(),
            csv(
                "level,y0,se",
                rep.levels.iter().zip(&rep.y0).map(|(l, e)| vec![fmt(*l), fmt(e.value), fmt(e.se)]),
            ),
        );
        summary.insert(
            "ladder".into(),
            json!({
                "kind": format!("{kind:?}"),
                "monotone": rep.monotone(),
                "violations": rep.violations,
                "top": est(*rep.y0.last().expect("nonempty levels")),
            }),
        );
    }
    Ok(())
}
