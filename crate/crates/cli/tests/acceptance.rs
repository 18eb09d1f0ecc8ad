//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs single-threaded.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sqbsde::bsde::{
    dual_value, solve_lsmc, solve_truncated_ladder, subgradient_control, DualControl, Forward, Ladder, LsmcOptions,
};
use sqbsde::expr::{self, BinOp, Expr, Func};
use sqbsde::finance::{
    solve_sdu, solve_utility, supermartingale_check, MarketModel, SDUSpec, Strategy, Utility, UtilityProblem,
};
use sqbsde::generators::{lattice, Driver, GeneratorSpec};
use sqbsde::pde::{
    eval_neumann_series, eval_probabilistic, flow_continuity, solve_fd, solve_fd_transformed, EvalGrid, FdOptions,
    McOptions, PDEProblem, ProbMethod,
};
use sqbsde::sde::{ConvexDomain, DiffusionSpec};
use sqbsde::transforms::{solve_canonical, CondExpectation};
use sqbsde::{make_paths, Error, Estimate, FieldFn, PathBundle, Terminal, TimeFn, TimeGrid};
use sqbsde_cli::{parse, run, CliError};

mod common;

type Outcome = Result<String, String>;

fn paths(n: usize, m: usize, seed: u64) -> PathBundle {
    make_paths(TimeGrid::new(0.0, 1.0, n).unwrap(), 1, m, seed).unwrap()
}

fn lognormal() -> (GeneratorSpec, Terminal, f64) {
    (GeneratorSpec::canonical(1.0), Terminal::exp_affine(1.0, 1.0), 1.5f64.exp())
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

// 1. Canonical oracle: transform-exact, LSMC accuracy, error rate, runtime.
fn canonical_oracle() -> Outcome {
    let (spec, xi, exact) = lognormal();
    let q = solve_canonical(1.0, &xi, &paths(50, 16, 1), &CondExpectation::quadrature(40).unwrap()).unwrap();
    let q_rel = rel(q.y0(), exact);

    let start = Instant::now();
    let sol = solve_lsmc(&spec, &xi, Forward::Brownian(&[0.0]), &paths(50, 100_000, 1), &LsmcOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let l_rel = rel(sol.y0(), exact);

    let rmse = |n: usize, m: usize| {
        let sq: f64 = (1..=8)
            .map(|seed| {
                let s = solve_lsmc(&spec, &xi, Forward::Brownian(&[0.0]), &paths(n, m, seed), &LsmcOptions::default()).unwrap();
                (s.y0() / exact - 1.0).powi(2)
            })
            .sum();
        (sq / 8.0).sqrt()
    };
    let (coarse, fine) = (rmse(50, 100_000), rmse(100, 400_000));
    let ratio = fine / coarse;
    check(
        q_rel <= 1e-6 && l_rel <= 0.02 && (0.35..=0.65).contains(&ratio) && secs <= 60.0,
        format!(
            "quadrature rel {q_rel:.1e}; lsmc Y0 {:.5} rel {l_rel:.4} in {secs:.1}s; rmse {coarse:.4} -> {fine:.4} (ratio {ratio:.2})",
            sol.y0()
        ),
    )
}

fn heat(delta: f64, h: Terminal) -> PDEProblem {
    PDEProblem::new(DiffusionSpec::brownian(1), GeneratorSpec::canonical(delta), h, 1.0).unwrap()
}

// 2. Nonlinear FD against the inverse-transformed heat FD, and the
// probabilistic field against both.
fn transform_equivalence() -> Outcome {
    let p = heat(1.0, Terminal::exp_affine(1.0, 1.0));
    let mut o = FdOptions::new((-2.0, 2.0), 1.0 / 200.0, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    o.padding = Some(FieldFn::parse("exp(x + 1.5*(1 - t))", 1).unwrap());
    let f = solve_fd(&p, &o).unwrap();
    let g = solve_fd_transformed(&p, &o).unwrap();
    assert_eq!(f.points.len(), g.points.len());
    let sup = f.points.iter().zip(&g.points).map(|(a, b)| (a.v - b.v).abs()).fold(0.0, f64::max);

    let pts: Vec<Vec<f64>> = [-1.5, -0.5, 0.0, 0.5, 1.5].iter().map(|x| vec![*x]).collect();
    let grid = EvalGrid::new(vec![0.0, 0.5], pts).unwrap();
    let mut worst: f64 = 0.0;
    // Least squares: transform Monte Carlo averages e^{3W} here, whose tail
    // 40k paths do not resolve.
    let mc = McOptions { method: ProbMethod::Lsmc, n_paths: 40_000, ..Default::default() };
    let field = eval_probabilistic(&p, &grid, &mc).unwrap();
    for q in &field.points {
        for fd in [&f, &g] {
            let near = fd.nearest(q.t, &q.x).unwrap();
            assert!((near.t - q.t).abs() < 1e-9 && (near.x[0] - q.x[0]).abs() < 1e-9);
            worst = worst.max(rel(q.v, near.v));
        }
    }
    check(
        sup <= 2e-2 && worst <= 0.02,
        format!("fd vs transformed fd sup {sup:.2e} over {} points; probabilistic worst rel {worst:.4}", f.points.len()),
    )
}

// 3. Neumann problem on [0, 1]: series, reflected paths, ghost-node FD.
fn neumann_cross_validation() -> Outcome {
    let diff = DiffusionSpec::brownian(1).with_domain(ConvexDomain::interval(0.0, 1.0).unwrap()).unwrap();
    let p = PDEProblem::new(diff, GeneratorSpec::canonical(1.0), Terminal::Cosine(vec![2.0, 1.0]), 0.2)
        .unwrap()
        .with_neumann()
        .unwrap();
    let g = EvalGrid::new(vec![0.0], vec![vec![0.0]]).unwrap();
    let series = eval_neumann_series(&p, &g).unwrap().points[0].v;
    let mc = McOptions { n_steps: 200, n_paths: 40_000, ..Default::default() };
    let refl = eval_probabilistic(&p, &g, &mc).unwrap().points[0].v;
    let fd = solve_fd(&p, &FdOptions::new((0.0, 1.0), 0.01, vec![0.0])).unwrap().value(0.0, &[0.0]).unwrap();
    let worst = [rel(series, refl), rel(series, fd), rel(refl, fd)].into_iter().fold(0.0, f64::max);
    check(
        worst <= 0.02,
        format!("v(0,0): series {series:.5}, reflected {refl:.5}, fd {fd:.5}; worst pairwise rel {worst:.4}"),
    )
}

// 4. Dual bounds on the lognormal instance.
fn duality() -> Outcome {
    let (spec, xi, exact) = lognormal();
    let sol = solve_lsmc(&spec, &xi, Forward::Brownian(&[0.0]), &paths(50, 100_000, 1), &LsmcOptions::default()).unwrap();
    let y0 = sol.y0();
    let dual_paths = paths(50, 20_000, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let a: f64 = rng.gen_range(-3.0..3.0);
        let b = -a * a / 4.0 - rng.gen_range(0.0..1.0);
        let v = dual_value(&spec, &xi, &DualControl::Constant { a: vec![a], b }, &dual_paths, &[0.0]).unwrap();
        worst = worst.max(v.value.value - (y0 + 3.0 * v.value.se));
    }
    let tight = dual_value(&spec, &xi, &DualControl::Constant { a: vec![2.0], b: -1.0 }, &dual_paths, &[0.0]).unwrap();
    let feedback = dual_value(&spec, &xi, &subgradient_control(&sol, &spec).unwrap(), &dual_paths, &[0.0]).unwrap();
    // Infeasible from t = 0.5 onwards: node 25 of the 50-step grid.
    let late = DualControl::Deterministic {
        a: vec![TimeFn::Const(0.0)],
        b: TimeFn::native(|t| if t >= 0.5 { 0.1 } else { 0.0 }),
    };
    let rejected = dual_value(&spec, &xi, &late, &dual_paths, &[0.0]);
    let node_ok = matches!(rejected, Err(Error::Infeasible { node: 25, .. }));
    let (t_rel, f_rel) = (rel(tight.value.value, y0), rel(feedback.value.value, y0));
    check(
        worst <= 0.0 && t_rel <= 0.02 && f_rel <= 0.02 && node_ok,
        format!(
            "Y0 {y0:.5} (oracle {exact:.5}); max(dual - Y0 - 3SE) over 100 controls {worst:.4}; \
             (2,-1) rel {t_rel:.4}; feedback rel {f_rel:.4}; infeasible control -> {rejected:?}"
        ),
    )
}

// 5. Truncation ladders: monotone in n, close to the oracle, converge on the lattice.
fn ladders() -> Outcome {
    let (spec, xi, exact) = lognormal();
    let p = paths(50, 20_000, 8);
    let levels = [1.0, 2.0, 4.0, 8.0, 16.0];
    let mut detail = Vec::new();
    let mut ok = true;
    for (name, kind) in [("sup", Ladder::Sup), ("inf-convolution", Ladder::InfConvolution)] {
        let rep = solve_truncated_ladder(&spec, &xi, Forward::Brownian(&[0.0]), &p, &levels, kind, &LsmcOptions::default()).unwrap();
        let last = rep.y0.last().unwrap().value;
        ok &= rep.monotone() && rel(last, exact) <= 0.02;
        let ys: Vec<String> = rep.y0.iter().map(|e| format!("{:.4}", e.value)).collect();
        detail.push(format!("{name} Y0(n) [{}] rel {:.4}", ys.join(", "), rel(last, exact)));
    }
    let gap_levels = [10.0, 100.0, 1e3, 1e4, 1e5];
    let gap = |f: &dyn Fn(f64, &[f64]) -> f64| {
        lattice(1)
            .into_iter()
            .map(|(y, z)| (f(y, &z) - spec.eval_h(0.0, y, &z).unwrap()).abs())
            .fold(0.0, f64::max)
    };
    for name in ["sup", "inf-convolution"] {
        let gaps: Vec<f64> = gap_levels
            .iter()
            .map(|&n| {
                if name == "sup" {
                    let d = spec.truncate_sup(n).unwrap();
                    gap(&|y, z| d.eval(0.0, y, z))
                } else {
                    let d = spec.truncate_infconv(n).unwrap();
                    gap(&|y, z| d.eval(0.0, y, z))
                }
            })
            .collect();
        let n0 = gap_levels.iter().zip(&gaps).find(|(_, g)| **g < 1e-3).map(|(n, _)| *n);
        ok &= gaps.windows(2).all(|w| w[1] <= w[0]) && n0.is_some();
        detail.push(format!("{name} lattice gap < 1e-3 from n = {n0:?}"));
    }
    check(ok, detail.join("; "))
}

// 6. Comparison, positivity, and clamp activation under floor refinement.
fn comparison_positivity() -> Outcome {
    let spec = GeneratorSpec::canonical(1.0);
    let p = paths(50, 20_000, 6);
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, low) in [("exp-affine", Terminal::exp_affine(1.0, 1.0)), ("quadratic", Terminal::Polynomial(vec![0.1, 0.0, 1.0]))] {
        let high = low.plus(0.5);
        let a = solve_lsmc(&spec, &low, Forward::Brownian(&[0.0]), &p, &LsmcOptions::default()).unwrap();
        let b = solve_lsmc(&spec, &high, Forward::Brownian(&[0.0]), &p, &LsmcOptions::default()).unwrap();
        let mut worst = f64::INFINITY;
        for i in 0..=50 {
            let diff: Vec<f64> = a.y_node(i).iter().zip(b.y_node(i)).map(|(u, v)| v - u).collect();
            let e = Estimate::from_samples(&diff);
            worst = worst.min(e.value + 2.0 * e.se);
        }
        ok &= worst >= 0.0 && a.min_y() > 0.0 && b.min_y() > 0.0;
        detail.push(format!("{name}: min node gap + 2SE {worst:.4}, min Y {:.4}", a.min_y().min(b.min_y())));
    }
    let floored = Terminal::Polynomial(vec![0.1, 0.0, 1.0]);
    let rates: Vec<f64> = [1e-4, 1e-6, 1e-8]
        .iter()
        .map(|&eps| {
            let opts = LsmcOptions { clamp_eps: Some(eps), ..Default::default() };
            let s = solve_lsmc(&spec, &floored, Forward::Brownian(&[0.0]), &p, &opts).unwrap();
            ok &= s.min_y() > 0.0;
            s.diagnostics.clamp_rate(p.n_paths())
        })
        .collect();
    ok &= rates.windows(2).all(|w| w[1] <= w[0]) && *rates.last().unwrap() == 0.0;
    detail.push(format!("clamp rates at eps 1e-4/1e-6/1e-8: {rates:?}"));
    check(ok, detail.join("; "))
}

// 7. Utility maximization against the Merton closed forms.
fn finance() -> Outcome {
    let p = paths(50, 20_000, 3);
    let m = MarketModel::from_theta(&[0.3]).unwrap();
    let opts = LsmcOptions::default();

    let log = UtilityProblem::new(Utility::Log, Terminal::Constant(2.0), 1.0).unwrap();
    let r = solve_utility(&m, &log, &p, &opts).unwrap();
    let target = 2f64.ln() + 0.045;
    let (log_rel, log_p) = (rel(r.value.value, target), r.median_strategy()[0]);

    let power = UtilityProblem::new(Utility::Power(0.6), Terminal::Constant(1.0), 1.0).unwrap();
    let r = solve_utility(&m, &power, &p, &opts).unwrap();
    let target = 0.0675f64.exp() / 0.6;
    let (pow_rel, pow_p) = (rel(r.value.value, target), r.median_strategy()[0]);
    let strategies = [
        Strategy::Constant(vec![0.0]),
        Strategy::Constant(vec![0.3]),
        Strategy::Constant(vec![1.2]),
        Strategy::Optimal,
    ];
    let checks = supermartingale_check(&power, &m, &r, &p, &strategies).unwrap();
    let drifts: Vec<String> = checks.iter().map(|c| format!("{:.4}", c.drift.value)).collect();
    check(
        log_rel <= 0.01 && (log_p - 0.3).abs() <= 0.01 && pow_rel <= 0.01 && (pow_p - 0.75).abs() <= 0.01 && checks.iter().all(|c| c.pass),
        format!(
            "log V rel {log_rel:.4}, p* {log_p:.4}; power V rel {pow_rel:.4}, p* {pow_p:.4}; drifts [{}]",
            drifts.join(", ")
        ),
    )
}

// 8. Recursive utility.
fn sdu() -> Outcome {
    // Deterministic: w = u^ρ solves w' = β(c^ρ − w), so
    // U_0 = (c^ρ + (ξ^ρ − c^ρ) e^{βT})^{1/ρ}.
    let (alpha, beta, rho, c, xi) = (0.5, 0.1, 0.5, 1.0, 2.0);
    let spec = SDUSpec::new(alpha, beta, rho, c.into(), Terminal::Constant(xi)).unwrap();
    let r = solve_sdu(&spec, &paths(20, 10, 1), &LsmcOptions::default()).unwrap();
    let cr = f64::powf(c, rho);
    let exact = (cr + (xi.powf(rho) - cr) * beta.exp()).powf(1.0 / rho);
    let det_rel = rel(r.u0.value, exact);

    // α = ρ = 1 is linear: U_0 = e^{βT} E ξ − c(e^{βT} − 1).
    let xi = Terminal::exp_affine(1.0, 0.5).plus(1.0);
    let lin = SDUSpec::new(1.0, 0.1, 1.0, 0.5.into(), xi).unwrap();
    let l = solve_sdu(&lin, &paths(50, 40_000, 5), &LsmcOptions::default()).unwrap();
    let e = 0.1f64.exp();
    let oracle = e * (0.125f64.exp() + 1.0) - 0.5 * (e - 1.0);
    let z = (l.u0.value - oracle).abs() / l.u0.se;
    check(
        det_rel <= 1e-6 && z <= 3.0,
        format!(
            "deterministic U0 {:.8} vs {exact:.8} ({}, rel {det_rel:.1e}); linear U0 {:.5} vs {oracle:.5} ({z:.2} SE)",
            r.u0.value, r.method, l.u0.value
        ),
    )
}

// 9. Continuity of the flow along (t + 1/n², x + 1/n).
fn flow() -> Outcome {
    let diff = DiffusionSpec::scalar(FieldFn::parse("-0.5*x", 1).unwrap(), FieldFn::parse("1 + 0.2*sin(x)", 1).unwrap());
    let p = PDEProblem::new(diff, GeneratorSpec::canonical(1.0), Terminal::exp_affine(1.0, 1.0), 1.0).unwrap();
    let seq: Vec<(f64, Vec<f64>)> = [2.0, 4.0, 8.0, 16.0].iter().map(|n: &f64| (1.0 / (n * n), vec![1.0 / n])).collect();
    let mc = McOptions { n_steps: 256, n_paths: 20_000, seed: 9, ..Default::default() };
    let (v0, gaps) = flow_continuity(&p, (0.0, &[0.0]), &seq, &mc).unwrap();
    let g: Vec<f64> = gaps.iter().map(|r| r.gap).collect();
    let noise = 0.1 * v0.se;
    check(
        g.windows(2).all(|w| w[1] <= w[0] + noise),
        format!("v(0,0) {:.5}; gaps {:?}", v0.value, g.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>()),
    )
}

fn random_expr(rng: &mut ChaCha8Rng, depth: usize) -> Expr {
    if depth == 0 || rng.gen_bool(0.3) {
        return if rng.gen_bool(0.5) {
            Expr::Num(rng.gen_range(0u32..1000) as f64 / 8.0)
        } else {
            Expr::Var(["t", "x", "y", "z", "pi"][rng.gen_range(0..5)].to_string())
        };
    }
    match rng.gen_range(0..3) {
        0 => Expr::Neg(Box::new(random_expr(rng, depth - 1))),
        1 => {
            let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow][rng.gen_range(0..5)];
            Expr::Bin(op, Box::new(random_expr(rng, depth - 1)), Box::new(random_expr(rng, depth - 1)))
        }
        _ => {
            let f = Func::ALL[rng.gen_range(0..Func::ALL.len())];
            let args = (0..f.arity()).map(|_| random_expr(rng, depth - 1)).collect();
            Expr::Call(f, args)
        }
    }
}

const ALPHABET: &[u8] = b"x+-*/^()., 1e9tyzlogexp";

// 10. Reproducible reruns, parser fuzzing, rejected configs.
fn infrastructure() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    files.sort();
    let mut identical = 0;
    for f in &files {
        let cfg = sqbsde_cli::load(f).unwrap();
        if run(&cfg).unwrap() == run(&cfg).unwrap() {
            identical += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut round_trips = 0;
    let mut garbage_ok = true;
    for _ in 0..2000 {
        let e = random_expr(&mut rng, 6);
        if expr::parse(&e.to_string()).ok() == Some(e) {
            round_trips += 1;
        }
        // Arbitrary byte soup must be rejected or accepted, never panic.
        let soup: String = (0..rng.gen_range(0..24)).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char).collect();
        garbage_ok &= catch_unwind(|| expr::parse(&soup)).is_ok();
    }

    let invalid = common::invalid_configs();
    let rejected = invalid
        .iter()
        .filter(|(_, src)| matches!(parse(src), Err(CliError::Validation { line, column, .. }) if line >= 1 && column >= 1))
        .count();
    check(
        !files.is_empty() && identical == files.len() && round_trips == 2000 && garbage_ok && invalid.len() >= 20 && rejected == invalid.len(),
        format!(
            "{identical}/{} configs bit-identical; {round_trips}/2000 expression round trips; {rejected}/{} invalid configs rejected with positions",
            files.len(),
            invalid.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("canonical oracle", canonical_oracle),
        ("transform equivalence", transform_equivalence),
        ("neumann cross-validation", neumann_cross_validation),
        ("duality", duality),
        ("truncation ladders", ladders),
        ("comparison and positivity", comparison_positivity),
        ("finance", finance),
        ("recursive utility", sdu),
        ("flow continuity", flow),
        ("infrastructure", infrastructure),
    ];
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = pool.install(|| catch_unwind(AssertUnwindSafe(f))).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS {name} ({secs:.1}s): {d}", k + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} ({secs:.1}s): {d}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
