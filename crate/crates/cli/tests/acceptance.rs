//! Acceptance suite: one PASS/FAIL line per criterion, sub-checks indented
//! below it. Runs as a plain binary (`harness = false`) so the report is
//! always printed; exits non-zero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use flatcusp::caustics::{
    caustic_scan, trace_ray, CausticClass, CausticReport, DenseOracle, OracleLabel, ScanConfig,
    SoundSpeedModel, TraceOptions,
};
use flatcusp::composition::{
    compose_solve, model_composition_seeds, model_containment_distance, model_umbrella_chart,
    Branch, BranchRule, CompositionPoint, CompositionSeed, Coord, Pin, ReducedPhase, UmbrellaForm,
    BRANCH_TOL,
};
use flatcusp::jet::{det_f64, eval_point, finite_diff_check, jacobian, smooth_map, SmoothMap};
use flatcusp::linalg::{svd_sorted, to_matrix};
use flatcusp::ode::OdeOptions;
use flatcusp::phase::{
    builtin_chart, lambda1_chart, model_c0_chart, umbrella_u_chart, ChartKind, RelationChart, Side,
};
use flatcusp::radon::{
    chance_baseline, normal_image, predicted_locus, radon_adjoint_apply, radon_apply, ridge_match,
    CurveAverageSpec, GridSpec, LocusOptions, RidgeOptions, ScalarField3D,
};
use flatcusp::singularity::{
    classify_map, flat_two_sided_cusp_check, projection_jacobian, sigma11_solve, sigma1_solve,
    ClassifyTolerances, SamplePlan, SingularClass,
};
use flatcusp::symbol::{
    blowup_exponent, blowup_summary, diagonal_path_point, log_spaced, model_umbrella_point,
    symbol_factor, umbrella_path_point, CriticalBranch,
};
use flatcusp::symplectic::{isotropy_defect, umbrella_check, UmbrellaOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ------------------------------------------------------------------ report

struct Criterion {
    checks: Vec<(bool, String)>,
}

impl Criterion {
    fn new() -> Self {
        Criterion { checks: Vec::new() }
    }

    fn check(&mut self, ok: bool, msg: impl Into<String>) -> bool {
        self.checks.push((ok, msg.into()));
        ok
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.0)
    }
}

fn report(
    number: usize,
    title: &str,
    budget: Option<Duration>,
    elapsed: Duration,
    c: &Criterion,
) -> bool {
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let ok = c.passed() && in_time;
    let limit = budget
        .map(|b| format!(" / {} s", b.as_secs()))
        .unwrap_or_default();
    println!(
        "{} criterion {number}: {title} ({:.1} s{limit})",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    for (pass, msg) in &c.checks {
        println!("      {} {msg}", if *pass { "ok  " } else { "FAIL" });
    }
    if !in_time {
        println!("      FAIL runtime over budget");
    }
    ok
}

// ------------------------------------------------------- finite differences

fn fd_step(x: f64, h: f64) -> f64 {
    h * (1.0 + x.abs())
}

/// Central-difference Jacobian from plain evaluations (rows = outputs).
fn fd_jacobian(f: &dyn SmoothMap, p: &[f64], h: f64) -> Vec<Vec<f64>> {
    let m = f.dim_out();
    let mut out = vec![vec![0.0; p.len()]; m];
    for k in 0..p.len() {
        let s = fd_step(p[k], h);
        let (mut a, mut b) = (p.to_vec(), p.to_vec());
        a[k] += s;
        b[k] -= s;
        let (fa, fb) = (eval_point(f, &a).unwrap(), eval_point(f, &b).unwrap());
        for r in 0..m {
            out[r][k] = (fa[r] - fb[r]) / (2.0 * s);
        }
    }
    out
}

/// `(D, ∂_v D, ∂²_v D)` of a scalar `D` at `p` by Richardson-extrapolated
/// central differences along `v`.
fn fd_along(d: &dyn Fn(&[f64]) -> f64, p: &[f64], v: &[f64], h: f64) -> [f64; 3] {
    let at = |t: f64| d(&p.iter().zip(v).map(|(a, b)| a + t * b).collect::<Vec<_>>());
    let d0 = d(p);
    let pair = |h: f64| {
        let (a, b) = (at(h), at(-h));
        ((a - b) / (2.0 * h), (a - 2.0 * d0 + b) / (h * h))
    };
    let (d1h, d2h) = pair(h);
    let (d1q, d2q) = pair(h / 2.0);
    [d0, (4.0 * d1q - d1h) / 3.0, (4.0 * d2q - d2h) / 3.0]
}

fn rel_gap(jet: f64, fd: f64) -> f64 {
    (jet - fd).abs() / (1.0 + jet.abs())
}

/// Worst gap between the classifier's jet residuals and their FD values.
fn fd_cusp_gap(map: &dyn SmoothMap, p: &[f64], tol: &ClassifyTolerances) -> f64 {
    let rep = classify_map(map, Side::Left, p, tol).unwrap();
    let v = rep.kernel.clone().expect("singular point");
    let det = |q: &[f64]| det_f64(&fd_jacobian(map, q, 1e-6));
    let fd = fd_along(&det, p, &v, 2e-2);
    let r = |k: &str| rep.residuals[k];
    let mut worst = rel_gap(r("r1_det"), fd[0]);
    if let (Some(&r2), Some(&r3)) = (
        rep.residuals.get("r2_ddet_v"),
        rep.residuals.get("r3_d2det_vv"),
    ) {
        worst = worst.max(rel_gap(r2, fd[1])).max(rel_gap(r3, fd[2]));
    }
    // gradient of det, coordinate by coordinate
    for k in 0..p.len() {
        let mut e = vec![0.0; p.len()];
        e[k] = 1.0;
        let g = fd_along(&det, p, &e, 2e-2)[1];
        worst = worst.max(rel_gap(rep.grad_det[k], g));
    }
    worst
}

/// Isotropy defect from an FD differential, with the same pairing as the chart.
fn fd_isotropy(chart: &RelationChart, p: &[f64]) -> f64 {
    let dm = fd_jacobian(chart.map.as_ref(), p, 1e-6);
    let n = chart.n();
    let pair = |a: usize, b: usize, base: usize, cov: usize| -> f64 {
        (0..n)
            .map(|k| dm[cov + k][a] * dm[base + k][b] - dm[cov + k][b] * dm[base + k][a])
            .sum()
    };
    let mut worst: f64 = 0.0;
    for a in 0..p.len() {
        for b in a + 1..p.len() {
            let w = match chart.kind {
                ChartKind::Relation { .. } => pair(a, b, 0, n) - pair(a, b, 2 * n, 3 * n),
                ChartKind::Lagrangian { .. } => pair(a, b, 0, n),
            };
            worst = worst.max(w.abs());
        }
    }
    worst
}

/// `σ_min / σ_max` of the FD differential.
fn fd_rank_drop(chart: &RelationChart, p: &[f64]) -> f64 {
    let dm = fd_jacobian(chart.map.as_ref(), p, 1e-6);
    let (s, _) = svd_sorted(&to_matrix(&dm));
    s[s.len() - 1] / s[0]
}

/// Symbol factor from an FD Hessian of the phase values.
fn fd_symbol_factor(branch: &CriticalBranch, p: &[f64]) -> f64 {
    const FIBER: [usize; 3] = [6, 7, 8];
    let phi = |q: &[f64]| eval_point(branch.phase.as_ref(), q).unwrap()[0];
    let mixed = |i: usize, k: usize, h: f64| {
        let (hi, hk) = (fd_step(p[i], h), fd_step(p[k], h));
        let at = |si: f64, sk: f64| {
            let mut q = p.to_vec();
            q[i] += si * hi;
            q[k] += sk * hk;
            phi(&q)
        };
        (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * hi * hk)
    };
    let mut rows: Vec<Vec<f64>> = branch
        .lambda
        .iter()
        .map(|&i| (0..9).map(|k| f64::from(u8::from(k == i))).collect())
        .collect();
    for &f in &FIBER {
        rows.push(
            (0..9)
                .map(|k| (4.0 * mixed(f, k, 5e-4) - mixed(f, k, 1e-3)) / 3.0)
                .collect(),
        );
    }
    det_f64(&rows).abs().powf(-0.5)
}

// --------------------------------------------------------------- criterion 1

struct ModelData {
    random_points: Vec<Vec<f64>>,
    cusp_roots: Vec<(Side, Vec<f64>)>,
}

fn criterion_1(c: &mut Criterion) -> ModelData {
    let chart = model_c0_chart();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut random_points = Vec::new();
    for _ in 0..100 {
        let p: Vec<f64> = (0..6)
            .map(|k| {
                if k == 5 {
                    rng.random_range(0.2..2.0)
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        let (_, det) = projection_jacobian(&chart, Side::Left, &p).unwrap();
        let u = p[0] - p[3];
        let closed = 2.0 * p[4] + 12.0 * u * u * p[5];
        worst = worst.max((det - closed).abs() / closed.abs());
        random_points.push(p);
    }
    c.check(worst < 1e-8, format!("det dπ_L vs 2θ₂ + 12(x₁−y₁)²θ₃ at 100 random points: max relative gap {worst:.2e} (< 1e-8)"));

    let mut cusp_roots = Vec::new();
    let (mut worst_root, mut all_cusp, mut found) = (0.0f64, true, 0);
    for side in [Side::Left, Side::Right] {
        for _ in 0..20 {
            let x1 = rng.random_range(-0.8..0.8);
            let seed = [
                x1,
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                x1 + rng.random_range(-0.15..0.15),
                rng.random_range(-0.15..0.15),
                rng.random_range(0.5..1.5),
            ];
            let Ok(rep) = sigma11_solve(&chart, side, &seed, [3, 4]) else {
                continue;
            };
            found += 1;
            worst_root = worst_root
                .max(rep.point[4].abs())
                .max((rep.point[0] - rep.point[3]).abs());
            all_cusp &= rep.class == SingularClass::Cusp;
            cusp_roots.push((side, rep.point));
        }
    }
    c.check(
        found == 40 && worst_root < 1e-10,
        format!("Σ₁,₁ roots ({found}/40 seeds): max |θ₂|, |x₁−y₁| = {worst_root:.2e} (< 1e-10)"),
    );
    let left = cusp_roots.iter().any(|r| r.0 == Side::Left);
    let right = cusp_roots.iter().any(|r| r.0 == Side::Right);
    c.check(
        all_cusp && left && right,
        format!("cusp verdict at every root, left {left}, right {right}"),
    );

    let mut worst_img: f64 = 0.0;
    let mut on_sigma1 = 0;
    for _ in 0..50 {
        let x1 = rng.random_range(-0.8..0.8);
        let u = rng.random_range(-0.6..0.6);
        let t3 = rng.random_range(0.5..1.5);
        let seed = [
            x1,
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            x1 - u,
            -6.0 * u * u * t3 + rng.random_range(-0.05..0.05),
            t3,
        ];
        let Ok(p) = sigma1_solve(&chart, Side::Left, &seed, None) else {
            continue;
        };
        on_sigma1 += 1;
        let xi = chart.relation_point(&p).unwrap().left.covector;
        let scale = xi.iter().fold(0.0f64, |m, v| m.max(v.abs())).powi(3);
        worst_img =
            worst_img.max((xi[1].powi(3) + 27.0 / 8.0 * xi[0] * xi[0] * xi[2]).abs() / scale);
    }
    c.check(on_sigma1 >= 45 && worst_img < 1e-8, format!("Σ₁ image on ξ₂³ + (27/8)ξ₁²ξ₃ = 0 ({on_sigma1} points): max normalized residual {worst_img:.2e} (< 1e-8)"));
    ModelData {
        random_points,
        cusp_roots,
    }
}

// --------------------------------------------------------------- criterion 2

fn criterion_2(c: &mut Criterion) -> Vec<(String, Vec<Vec<f64>>)> {
    let mut cusp_sets = Vec::new();
    for name in ["model_c0", "menn_c1"] {
        let chart = builtin_chart(name, &[]).unwrap();
        let cert = flat_two_sided_cusp_check(&chart, &SamplePlan::for_builtin(name).unwrap());
        c.check(
            cert.condition_i.passed,
            format!("{name} (i): {}", cert.condition_i.detail),
        );
        c.check(
            cert.condition_ii.passed,
            format!("{name} (ii): residual {:.2e}", cert.condition_ii.residual),
        );
        c.check(
            cert.condition_iii.passed && cert.condition_iii.residual < 1e-9,
            format!(
                "{name} (iii): {} (bracket < 1e-9, nonradial rank test)",
                cert.condition_iii.detail
            ),
        );
        cusp_sets.push((name.to_string(), cert.cusp_points.clone()));
    }
    let chart = builtin_chart("fold_control", &[]).unwrap();
    let cert = flat_two_sided_cusp_check(&chart, &SamplePlan::for_builtin("fold_control").unwrap());
    c.check(
        !cert.condition_i.passed && cert.cusp_points.is_empty(),
        format!("fold control fails (i): {}", cert.condition_i.detail),
    );
    cusp_sets
}

// --------------------------------------------------------------- criterion 3

fn spot_seed() -> CompositionSeed {
    CompositionSeed {
        a_params: vec![2.0, 1.0, 1.0, 0.0, -10.0, 1.0],
        b_params: vec![2.0, 1.0, 1.0, 0.8, -10.0, 1.0],
        pins: vec![
            Pin::coord(Coord::X, 0, 0.0),
            Pin::coord(Coord::X, 1, 0.0),
            Pin::coord(Coord::X, 2, 0.0),
            Pin::coord(Coord::Y, 0, 1.0),
            Pin::coord(Coord::Z, 0, 2.0),
            Pin::coord(Coord::Zeta, 2, 1.0),
        ],
    }
}

fn criterion_3(c: &mut Criterion) -> Vec<CompositionPoint> {
    let chart = model_c0_chart();
    let seeds = model_composition_seeds(600, 2024);
    let solved = flatcusp::par_map(&seeds, |s| {
        compose_solve(&chart, &chart, s, BranchRule::ModelCusp)
    });
    let points: Vec<CompositionPoint> = solved.into_iter().flatten().take(500).collect();
    c.check(
        points.len() == 500,
        format!(
            "{} converged points from 600 seeds (need 500)",
            points.len()
        ),
    );
    let worst = points
        .iter()
        .map(|p| model_containment_distance(p).unwrap())
        .fold(0.0, f64::max);
    c.check(
        worst < 1e-7,
        format!("max distance to Δ ∪ C̃₀: {worst:.2e} (< 1e-7)"),
    );
    let mut consistent = true;
    let mut worst_factor: f64 = 0.0;
    let (mut diag, mut umb) = (0, 0);
    for p in &points {
        let f = BranchRule::ModelCusp.factors(&p.point, &p.intermediate);
        worst_factor = worst_factor.max(f[0].min(f[1]));
        consistent &= match p.branch {
            Branch::Diagonal => f[0] < BRANCH_TOL,
            Branch::Umbrella => f[1] < BRANCH_TOL,
            Branch::Intersection => f[0] < BRANCH_TOL && f[1] < BRANCH_TOL,
        };
        diag += usize::from(p.branch == Branch::Diagonal);
        umb += usize::from(p.branch == Branch::Umbrella);
    }
    c.check(
        consistent && worst_factor < BRANCH_TOL && diag > 0 && umb > 0,
        format!("one factor of (x₁−y₁)·(ξ₂ + 2qξ₃) vanishes at every point (max {worst_factor:.2e}); labels match; {diag} diagonal, {umb} umbrella"),
    );
    let img = model_umbrella_chart(UmbrellaForm::ModelZform)
        .chart
        .eval(&[0.0, 0.0, 0.0, 1.0, 2.0, 1.0])
        .unwrap();
    c.check(
        img[4] == -14.0 && img[3] == 24.0 && img[9] == 24.0 && img[6..9] == [1.0, 3.0, 15.0],
        format!(
            "closed form at x = 0, y₁ = 1, z₁ = 2, θ₃ = 1: θ₂ = {}, ξ₁ = {}, η₁ = {}, y = {:?}",
            img[4],
            img[3],
            img[9],
            &img[6..9]
        ),
    );
    let cp = compose_solve(&chart, &chart, &spot_seed(), BranchRule::ModelCusp).unwrap();
    let (l, r) = (&cp.point.left, &cp.point.right);
    let gap = (l.covector[1] + 14.0)
        .abs()
        .max((l.covector[0] - 24.0).abs())
        .max((r.covector[0] - 24.0).abs());
    c.check(
        gap < 1e-10 && cp.branch == Branch::Umbrella,
        format!("solver reproduces the spot value to {gap:.1e} on the umbrella branch"),
    );
    points
}

// --------------------------------------------------------------- criterion 4

struct UmbrellaData {
    isotropy_points: Vec<(RelationChart, Vec<f64>)>,
    singular_points: Vec<(String, RelationChart, Vec<f64>)>,
}

fn perturbed_psi() -> flatcusp::composition::UmbrellaChart {
    ReducedPhase::model()
        .with_p1(smooth_map(5, 1, "0.1 x1 theta3", |a| {
            vec![&a[0] * &a[4] * 0.1]
        }))
        .umbrella_chart()
}

fn criterion_4(c: &mut Criterion) -> UmbrellaData {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut isotropy_points = Vec::new();
    for chart in [umbrella_u_chart(), lambda1_chart()] {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let p: Vec<f64> = (0..chart.dim())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            worst = worst.max(isotropy_defect(&chart, &p).unwrap());
            isotropy_points.push((chart.clone(), p));
        }
        c.check(
            worst < 1e-12,
            format!(
                "{} isotropy defect at 100 points: {worst:.2e} (< 1e-12)",
                chart.name
            ),
        );
    }
    let opts = UmbrellaOptions::default();
    let mut singular_points = Vec::new();
    let cert = umbrella_check(&umbrella_u_chart(), &[0.1, 0.1], &opts).unwrap();
    c.check(cert.verdict, "U certifies as an open umbrella");
    singular_points.push(("U".to_string(), umbrella_u_chart(), cert.singular_point));
    let charts = [
        ("Υ z-form", model_umbrella_chart(UmbrellaForm::ModelZform)),
        ("Υ τ-form", model_umbrella_chart(UmbrellaForm::ModelTauform)),
        ("ψ model", model_umbrella_chart(UmbrellaForm::ReducedPhase)),
        ("ψ with P₁ = 0.1x₁θ₃", perturbed_psi()),
    ];
    for (name, u) in charts {
        let cert = umbrella_check(
            &u.chart,
            &u.params_at([0.1, 0.0, 0.0], 0.02, 0.03, 1.0),
            &opts,
        )
        .unwrap();
        let r = u.singular_locus_residual(&cert.singular_point);
        let locus = r[0].abs().max(r[1].abs());
        c.check(
            cert.verdict && locus < 1e-8,
            format!(
                "{name}: certified {}, singular point off the model locus by {locus:.1e} (< 1e-8)",
                cert.verdict
            ),
        );
        singular_points.push((
            name.to_string(),
            u.chart.clone(),
            cert.singular_point.clone(),
        ));
        isotropy_points.push((u.chart.clone(), cert.singular_point));
    }
    let plane = RelationChart::new(
        "immersed_plane",
        ChartKind::Lagrangian { n: 2 },
        smooth_map(2, 4, "plane", |p| {
            vec![p[0].clone(), p[1].clone(), p[0].lift(0.0), p[0].lift(0.0)]
        }),
        vec!["s".into(), "t".into()],
    );
    let control = umbrella_check(&plane, &[0.1, 0.1], &opts);
    let rejected = !matches!(&control, Ok(c) if c.verdict);
    c.check(
        rejected,
        format!(
            "immersed plane rejected: {}",
            control.err().map(|e| e.to_string()).unwrap_or_default()
        ),
    );
    UmbrellaData {
        isotropy_points,
        singular_points,
    }
}

// --------------------------------------------------------------- criterion 5

struct SymbolData {
    samples: Vec<(CriticalBranch, Vec<f64>)>,
}

fn criterion_5(c: &mut Criterion) -> SymbolData {
    let deltas = log_spaced(1e-4, 1e-1, 16);
    let x = [0.1, -0.2, 0.05];
    let rp = ReducedPhase::model();
    let diag = CriticalBranch::model(Branch::Diagonal);
    let umb = CriticalBranch::model(Branch::Umbrella);
    let dpath = |d: f64| diagonal_path_point(&rp, x, 0.0, 1.0, d);
    let upath = |d: f64| Ok(model_umbrella_point(x, x[0] - d, 1.0, 0.5));
    let fd = blowup_exponent(&diag, dpath, &deltas).unwrap();
    let fu = blowup_exponent(&umb, upath, &deltas).unwrap();
    let mut samples = Vec::new();
    let (mut rmin, mut rmax) = (f64::INFINITY, 0.0f64);
    for &d in &deltas {
        let (p, q) = (dpath(d).unwrap(), upath(d).unwrap());
        let r = symbol_factor(&diag, &p).unwrap() / symbol_factor(&umb, &q).unwrap();
        rmin = rmin.min(r);
        rmax = rmax.max(r);
        samples.push((diag.clone(), p));
        samples.push((umb.clone(), q));
    }
    c.check(
        (fd.exponent + 0.5).abs() < 0.02,
        format!("model diagonal exponent {:.4} (−0.5 ± 0.02)", fd.exponent),
    );
    c.check(
        (fu.exponent + 0.5).abs() < 0.02,
        format!("model umbrella exponent {:.4} (−0.5 ± 0.02)", fu.exponent),
    );
    c.check(
        rmax / rmin < 1.5,
        format!("model factor ratio along matched paths in [{rmin:.3}, {rmax:.3}]"),
    );

    let unit_n = rp
        .clone()
        .with_n(smooth_map(5, 1, "1", |a| vec![a[0].lift(1.0)]));
    let s = blowup_summary(&unit_n, &deltas).unwrap();
    c.check(
        (s.diagonal.exponent + 0.5).abs() < 0.05,
        format!(
            "N = 1 diagonal exponent {:.4} (−0.5 ± 0.05)",
            s.diagonal.exponent
        ),
    );
    c.check(
        (s.umbrella.exponent + 0.5).abs() < 0.05,
        format!(
            "N = 1 umbrella exponent {:.4} (−0.5 ± 0.05)",
            s.umbrella.exponent
        ),
    );
    c.check(
        s.ratio_max / s.ratio_min < 1.5 && (s.diagonal.exponent - s.umbrella.exponent).abs() < 0.05,
        format!(
            "N = 1 branches of equal order: ratio in [{:.3}, {:.3}]",
            s.ratio_min, s.ratio_max
        ),
    );
    let (ud, uu) = (
        CriticalBranch::reduced(&unit_n, Branch::Diagonal),
        CriticalBranch::reduced(&unit_n, Branch::Umbrella),
    );
    for &d in &deltas {
        samples.push((
            ud.clone(),
            diagonal_path_point(&unit_n, [0.1, -0.2, 0.05], 0.0, 1.0, d).unwrap(),
        ));
        samples.push((
            uu.clone(),
            umbrella_path_point(&unit_n, [0.1, -0.2, 0.05], 0.5, 1.0, d).unwrap(),
        ));
    }
    SymbolData { samples }
}

// --------------------------------------------------------------- criterion 6

fn random_field(grid: &GridSpec, rng: &mut ChaCha8Rng) -> ScalarField3D {
    let mut f = ScalarField3D::zeros(grid);
    f.data
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    f
}

fn criterion_6(c: &mut Criterion) {
    let grid = GridSpec::default();
    let spec = CurveAverageSpec::default();
    c.check(
        grid.n == 96,
        format!("grid {}³ on [{}, {}]³", grid.n, grid.lo, grid.hi),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (f, g) = (random_field(&grid, &mut rng), random_field(&grid, &mut rng));
    let lhs = radon_apply(&f, &spec).unwrap().dot(&g);
    let rhs = f.dot(&radon_adjoint_apply(&g, &spec).unwrap());
    let gap = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
    c.check(
        gap < 1e-6,
        format!("⟨Rf, g⟩ = {lhs:.6e}, ⟨f, R*g⟩ = {rhs:.6e}, relative gap {gap:.1e} (< 1e-6)"),
    );
    let image = normal_image([0.0; 3], &spec, &grid, 2.0).unwrap();
    let locus = predicted_locus([0.0; 3], &LocusOptions::default(), &spec, &grid);
    let ridge = RidgeOptions::default();
    let stats = ridge_match(&image, &locus, &ridge).unwrap();
    c.check(
        stats.coverage >= 0.8 && ridge.exclusion_cells == 6.0,
        format!(
            "ridge coverage {:.3} over {} locus samples outside the {}-cell exclusion (≥ 0.8)",
            stats.coverage, stats.tested, ridge.exclusion_cells
        ),
    );
    let baseline = chance_baseline(&grid, &locus, &ridge, 606, 4).unwrap();
    c.check(
        baseline < 0.2,
        format!("chance baseline {baseline:.3} (< 0.2)"),
    );
}

// --------------------------------------------------------------- criterion 7

fn criterion_7(c: &mut Criterion) -> (ScanConfig, Vec<CausticReport>) {
    let flat = ScanConfig {
        model: SoundSpeedModel::Constant { c: 1.0 },
        ..ScanConfig::default()
    };
    let s = caustic_scan(&flat).unwrap();
    c.check(
        s.reports.is_empty() && s.crossings == 0,
        format!(
            "constant speed: {} reports, {} crossings",
            s.reports.len(),
            s.crossings
        ),
    );
    let cfg = ScanConfig::default();
    let scan = caustic_scan(&cfg).unwrap();
    let folds = scan.count(CausticClass::Fold);
    let cusps: Vec<&CausticReport> = scan
        .reports
        .iter()
        .filter(|r| r.class == CausticClass::Cusp)
        .collect();
    c.check(
        folds > 0 && !cusps.is_empty(),
        format!(
            "default lens: {folds} folds, {} cusps, {} unclassified",
            cusps.len(),
            scan.unclassified
        ),
    );
    let rank_tol = cfg.tolerances.rank;
    let pattern = cusps.iter().all(|r| {
        r.residuals[0].abs() < 1e-8
            && r.residuals[1].abs() < 1e-8
            && r.residuals[2].abs() > 1e-3
            && r.rank2_margin.is_some_and(|m| m > rank_tol)
    });
    let r12 = cusps
        .iter()
        .map(|r| r.residuals[0].abs().max(r.residuals[1].abs()))
        .fold(0.0, f64::max);
    let r3 = cusps
        .iter()
        .map(|r| r.residuals[2].abs())
        .fold(f64::INFINITY, f64::min);
    let margin = cusps
        .iter()
        .filter_map(|r| r.rank2_margin)
        .fold(f64::INFINITY, f64::min);
    c.check(pattern, format!("every cusp: max |r₁|, |r₂| = {r12:.1e} (< 1e-8), min |r₃| = {r3:.2} (> 1e-3), rank-2 margin {margin:.3} (> {rank_tol:.0e})"));
    let ode = OdeOptions {
        rtol: 1e-10,
        atol: 1e-10,
        ..cfg.integrator
    };
    let oracle = DenseOracle::build(&cfg, cfg.grid.with_size(200, 200), ode).unwrap();
    let agree = scan
        .reports
        .iter()
        .filter(|r| {
            matches!(
                (r.class, oracle.label(r, 0.1)),
                (CausticClass::Fold, OracleLabel::Fold) | (CausticClass::Cusp, OracleLabel::Cusp)
            )
        })
        .count();
    c.check(
        agree == scan.reports.len(),
        format!(
            "200×200 dense oracle agrees on {agree}/{} polished roots",
            scan.reports.len()
        ),
    );
    c.check(
        scan.h_drift_max < 1e-8,
        format!("Hamiltonian drift {:.1e} (< 1e-8)", scan.h_drift_max),
    );
    (cfg, scan.reports)
}

// --------------------------------------------------------------- criterion 8

struct Collected {
    model: ModelData,
    cusp_sets: Vec<(String, Vec<Vec<f64>>)>,
    composition: Vec<CompositionPoint>,
    umbrella: UmbrellaData,
    symbol: SymbolData,
    caustics: (ScanConfig, Vec<CausticReport>),
}

fn criterion_8(c: &mut Criterion, data: &Collected) {
    const TOL: f64 = 1e-4;
    let chart = model_c0_chart();
    let tol = ClassifyTolerances::default();

    let left = chart.projection(Side::Left);
    let det_gap = data
        .model
        .random_points
        .iter()
        .map(|p| {
            let (_, det) = projection_jacobian(&chart, Side::Left, p).unwrap();
            rel_gap(det, det_f64(&fd_jacobian(left.as_ref(), p, 1e-6)))
        })
        .fold(0.0, f64::max);
    c.check(
        det_gap < TOL,
        format!("[1] det dπ_L at 100 points, FD Jacobian: {det_gap:.1e}"),
    );
    let root_gap = data
        .model
        .cusp_roots
        .iter()
        .map(|(side, p)| fd_cusp_gap(chart.projection(*side).as_ref(), p, &tol))
        .fold(0.0, f64::max);
    c.check(
        root_gap < TOL,
        format!(
            "[1] (det, d(det)(v), d²(det)(v,v), ∇det) at {} Σ₁,₁ roots: {root_gap:.1e}",
            data.model.cusp_roots.len()
        ),
    );

    for (name, points) in &data.cusp_sets {
        let ch = builtin_chart(name, &[]).unwrap();
        let gap = points
            .iter()
            .flat_map(|p| [Side::Left, Side::Right].map(|s| (s, p)))
            .filter_map(|(s, p)| {
                let proj = ch.projection(s);
                let rep = classify_map(proj.as_ref(), s, p, &tol).ok()?;
                (rep.class != SingularClass::Graph).then(|| fd_cusp_gap(proj.as_ref(), p, &tol))
            })
            .fold(0.0, f64::max);
        c.check(
            gap < TOL,
            format!(
                "[2] {name}: cusp residuals and ∇det at {} certificate points: {gap:.1e}",
                points.len()
            ),
        );
    }

    let mut comp_gap: f64 = 0.0;
    for p in data.composition.iter().step_by(10) {
        for params in [&p.a_params, &p.b_params] {
            let jet = jacobian(chart.map.as_ref(), params).unwrap();
            let fd = fd_jacobian(chart.map.as_ref(), params, 1e-6);
            for (a, b) in jet.iter().flatten().zip(fd.iter().flatten()) {
                comp_gap = comp_gap.max(rel_gap(*a, *b));
            }
            comp_gap = comp_gap.max(finite_diff_check(chart.map.as_ref(), params, 2, None));
        }
    }
    c.check(
        comp_gap < TOL,
        format!(
            "[3] chart differentials at 50 composition points (Newton Jacobians): {comp_gap:.1e}"
        ),
    );

    let iso = data
        .umbrella
        .isotropy_points
        .iter()
        .map(|(ch, p)| fd_isotropy(ch, p))
        .fold(0.0, f64::max);
    c.check(
        iso < TOL,
        format!(
            "[4] isotropy defects from FD differentials at {} points: {iso:.1e}",
            data.umbrella.isotropy_points.len()
        ),
    );
    for (name, ch, p) in &data.umbrella.singular_points {
        let drop = fd_rank_drop(ch, p);
        c.check(
            drop < TOL,
            format!(
                "[4] {name}: σ_min/σ_max of the FD differential at the singular point {drop:.1e}"
            ),
        );
    }

    let sym_gap = data
        .symbol
        .samples
        .iter()
        .map(|(b, p)| {
            let jet = symbol_factor(b, p).unwrap();
            let fd = fd_symbol_factor(b, p);
            (jet - fd).abs() / jet
        })
        .fold(0.0, f64::max);
    c.check(
        sym_gap < TOL,
        format!(
            "[5] symbol factors from FD phase Hessians at {} path points: relative {sym_gap:.1e}",
            data.symbol.samples.len()
        ),
    );

    let (cfg, reports) = &data.caustics;
    let map = cfg.ray_map();
    let ctol = ClassifyTolerances {
        singular: cfg.tolerances.singular,
        fold: cfg.tolerances.fold,
        cusp: cfg.tolerances.cusp,
        rank: cfg.tolerances.rank,
    };
    let opts = cfg.trace_options();
    let det_var = |q: &[f64]| -> f64 {
        let o = TraceOptions {
            t_max: q[2],
            ..opts
        };
        trace_ray(&cfg.model, cfg.source, [q[0], q[1]], &o)
            .unwrap()
            .samples
            .last()
            .unwrap()
            .det
    };
    let picked: Vec<&CausticReport> = reports
        .iter()
        .filter(|r| r.class == CausticClass::Cusp)
        .chain(
            reports
                .iter()
                .filter(|r| r.class == CausticClass::Fold)
                .step_by(6),
        )
        .collect();
    let mut ray_gap: f64 = 0.0;
    for r in &picked {
        let p = r.point();
        let rep = classify_map(&map, Side::Left, &p, &ctol).unwrap();
        let v = rep.kernel.clone().unwrap();
        let fd = fd_along(&det_var, &p, &v, 2e-2);
        ray_gap = ray_gap
            .max(rel_gap(rep.residuals["r1_det"], fd[0]))
            .max(rel_gap(rep.residuals["r2_ddet_v"], fd[1]))
            .max(rel_gap(rep.residuals["r3_d2det_vv"], fd[2]));
        let o = TraceOptions {
            t_max: p[2],
            ..opts
        };
        let jv = trace_ray(&cfg.model, cfg.source, r.launch, &o)
            .unwrap()
            .samples
            .last()
            .unwrap()
            .jacobian;
        let jj = jacobian(&map, &p).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                ray_gap = ray_gap.max(rel_gap(jj[i][k], jv[i][k]));
            }
        }
        ray_gap = ray_gap.max(finite_diff_check(&map, &p, 1, Some(1e-5)));
    }
    c.check(
        ray_gap < TOL,
        format!("[7] ray-map jets vs variational Jacobians and FD det derivatives at {} roots ({} cusps): {ray_gap:.1e}", picked.len(), reports.iter().filter(|r| r.class == CausticClass::Cusp).count()),
    );

    reproducibility(c);
}

fn reproducibility(c: &mut Criterion) {
    let tmp = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for sub in [
        "classify", "compose", "umbrella", "symbol", "radon", "caustics",
    ] {
        let run = |tag: &str| -> Vec<(String, Vec<u8>)> {
            let out = tmp.path().join(format!("{sub}_{tag}"));
            let status = Command::new(env!("CARGO_BIN_EXE_flatcusp"))
                .args([
                    sub,
                    "--config",
                    configs.join(format!("{sub}.json")).to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                ])
                .output()
                .unwrap()
                .status;
            assert!(status.success(), "{sub} run failed");
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
                .unwrap()
                .map(|e| e.unwrap().path())
                .map(|p| {
                    (
                        p.file_name().unwrap().to_string_lossy().into_owned(),
                        std::fs::read(&p).unwrap(),
                    )
                })
                .collect();
            files.sort();
            files
        };
        let (a, b) = (run("a"), run("b"));
        let names: Vec<&str> = a.iter().map(|f| f.0.as_str()).collect();
        let bytes: usize = a.iter().map(|f| f.1.len()).sum();
        c.check(
            a == b && !a.is_empty(),
            format!(
                "[repro] {sub}: {} files, {bytes} bytes identical across two runs ({})",
                a.len(),
                names.join(", ")
            ),
        );
    }
}

// ------------------------------------------------------------------- main

fn timed<T>(f: impl FnOnce(&mut Criterion) -> T) -> (T, Criterion, Duration) {
    let mut c = Criterion::new();
    let t = Instant::now();
    let out = f(&mut c);
    (out, c, t.elapsed())
}

fn main() {
    let secs = Duration::from_secs;
    let mut all = true;
    let (model, c, t) = timed(criterion_1);
    all &= report(1, "model classification", Some(secs(10)), t, &c);
    let (cusp_sets, c, t) = timed(criterion_2);
    all &= report(2, "flat-cusp certificates", Some(secs(30)), t, &c);
    let (composition, c, t) = timed(criterion_3);
    all &= report(3, "composition containment", Some(secs(60)), t, &c);
    let (umbrella, c, t) = timed(criterion_4);
    all &= report(4, "umbrella certificates", Some(secs(10)), t, &c);
    let (symbol, c, t) = timed(criterion_5);
    all &= report(5, "symbol blow-up", Some(secs(10)), t, &c);
    let ((), c, t) = timed(criterion_6);
    all &= report(6, "Radon artifact demo at 96³", Some(secs(15 * 60)), t, &c);
    let (caustics, c, t) = timed(criterion_7);
    all &= report(7, "caustic scan", Some(secs(5 * 60)), t, &c);
    let data = Collected {
        model,
        cusp_sets,
        composition,
        umbrella,
        symbol,
        caustics,
    };
    let ((), c, t) = timed(|c| criterion_8(c, &data));
    all &= report(
        8,
        "finite-difference re-verification and reproducibility",
        None,
        t,
        &c,
    );
    if !all {
        std::process::exit(1);
    }
}
