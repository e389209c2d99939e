//! Composition of canonical relations through a shared cotangent point, and
//! explicit charts of the composite `Δ ∪ C̃`: the model umbrella in two
//! parametrizations and the charts of a reduced degenerate phase.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, JetError, Result};
use crate::jet::{self, eval_with_gradient, FnMap, Jet, SmoothMap, SmoothMapHandle};
use crate::linalg::{self, max_abs, newton, NewtonOptions};
use crate::phase::{ChartKind, CotangentPoint, RelationChart, RelationPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Diagonal,
    Umbrella,
    Intersection,
}

/// Coordinates of a composition `Aᵗ ∘ B`: `(x, ξ; z, ζ) ∈ Aᵗ` and
/// `(z, ζ; y, η) ∈ B`, so `(z, ζ)` is the left point of both charts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coord {
    X,
    Xi,
    Z,
    Zeta,
    Y,
    Eta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "on", rename_all = "snake_case")]
pub enum PinTarget {
    Coord { coord: Coord, index: usize },
    AParam { index: usize },
    BParam { index: usize },
}

/// One extra equation `target = value` closing the matching system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pin {
    #[serde(flatten)]
    pub target: PinTarget,
    pub value: f64,
}

impl Pin {
    pub fn coord(coord: Coord, index: usize, value: f64) -> Pin {
        Pin {
            target: PinTarget::Coord { coord, index },
            value,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompositionSeed {
    pub a_params: Vec<f64>,
    pub b_params: Vec<f64>,
    pub pins: Vec<Pin>,
}

/// How the two factors of a composition point are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchRule {
    /// `x₁ − y₁` against `ξ₂ + 2(3z₁² − 3z₁(x₁+y₁) + x₁² + y₁² + x₁y₁)ξ₃`.
    ModelCusp,
    /// Distance to the diagonal only; everything else is off-diagonal.
    DiagonalOnly,
}

pub const BRANCH_TOL: f64 = 1e-6;

impl BranchRule {
    /// `[diagonal factor, umbrella factor]`, scale-normalized.
    pub fn factors(&self, p: &RelationPoint, z: &CotangentPoint) -> [f64; 2] {
        let (x, xi, y, eta) = (
            &p.left.base,
            &p.left.covector,
            &p.right.base,
            &p.right.covector,
        );
        match self {
            BranchRule::ModelCusp => {
                let (x1, y1, z1) = (x[0], y[0], z.base[0]);
                let q = 3.0 * z1 * z1 - 3.0 * z1 * (x1 + y1) + x1 * x1 + y1 * y1 + x1 * y1;
                let scale = xi[1]
                    .abs()
                    .max(xi[2].abs() * (1.0 + z1 * z1 + x1 * x1 + y1 * y1));
                [
                    (x1 - y1).abs(),
                    (xi[1] + 2.0 * q * xi[2]).abs() / scale.max(f64::MIN_POSITIVE),
                ]
            }
            BranchRule::DiagonalOnly => {
                let d = x
                    .iter()
                    .zip(y)
                    .chain(xi.iter().zip(eta))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                let scale = 1.0 + max_abs(xi);
                [d / scale, f64::INFINITY]
            }
        }
    }

    pub fn classify(&self, f: [f64; 2]) -> Branch {
        match (f[0] < BRANCH_TOL, f[1] < BRANCH_TOL) {
            (true, true) => Branch::Intersection,
            (true, false) => Branch::Diagonal,
            (false, true) => Branch::Umbrella,
            _ if f[0] <= f[1] => Branch::Diagonal,
            _ => Branch::Umbrella,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompositionPoint {
    pub point: RelationPoint,
    pub intermediate: CotangentPoint,
    pub branch: Branch,
    pub residuals: BTreeMap<String, f64>,
    pub a_params: Vec<f64>,
    pub b_params: Vec<f64>,
}

/// Flat CSV row of a composition point.
#[derive(Debug, Clone, Serialize)]
pub struct CompositionRow {
    pub branch: Branch,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
    pub y1: f64,
    pub y2: f64,
    pub y3: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub residual: f64,
}

impl CompositionPoint {
    pub fn row(&self) -> CompositionRow {
        let (l, r) = (&self.point.left, &self.point.right);
        CompositionRow {
            branch: self.branch,
            x1: l.base[0],
            x2: l.base[1],
            x3: l.base[2],
            xi1: l.covector[0],
            xi2: l.covector[1],
            xi3: l.covector[2],
            y1: r.base[0],
            y2: r.base[1],
            y3: r.base[2],
            eta1: r.covector[0],
            eta2: r.covector[1],
            eta3: r.covector[2],
            residual: self.residuals.get("matching").copied().unwrap_or(0.0),
        }
    }
}

/// Values and Jacobian (outputs × inputs) of a map.
pub(crate) fn value_and_jacobian(
    map: &dyn SmoothMap,
    p: &[f64],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let j = jet::jet_of_map(map, p, 1)?;
    let vals = j.iter().map(Jet::value).collect();
    let m = DMatrix::from_fn(j.len(), p.len(), |r, c| j[r].derivative(&[c]));
    Ok((vals, m))
}

fn coord_slot(coord: Coord, index: usize, n: usize) -> (bool, usize) {
    // (on A?, output index)
    match coord {
        Coord::Z => (true, index),
        Coord::Zeta => (true, n + index),
        Coord::X => (true, 2 * n + index),
        Coord::Xi => (true, 3 * n + index),
        Coord::Y => (false, 2 * n + index),
        Coord::Eta => (false, 3 * n + index),
    }
}

/// Solves for a point of `Aᵗ ∘ B`: the left points of `A(p)` and `B(q)`
/// agree, plus the pinned equations.
pub fn compose_solve(
    a: &RelationChart,
    b: &RelationChart,
    seed: &CompositionSeed,
    rule: BranchRule,
) -> Result<CompositionPoint> {
    let n = match (a.kind, b.kind) {
        (ChartKind::Relation { n }, ChartKind::Relation { n: m }) if n == m => n,
        _ => {
            return Err(Error::InvalidInput(
                "composition needs two relation charts on equal dimensions".into(),
            ))
        }
    };
    let (da, db) = (a.dim(), b.dim());
    if seed.a_params.len() != da || seed.b_params.len() != db {
        return Err(Error::InvalidInput(
            "seed parameter lengths do not match the charts".into(),
        ));
    }
    for pin in &seed.pins {
        let ok = match pin.target {
            PinTarget::Coord { index, .. } => index < n,
            PinTarget::AParam { index } => index < da,
            PinTarget::BParam { index } => index < db,
        };
        if !ok {
            return Err(Error::InvalidInput("pin index out of range".into()));
        }
    }
    let system = |v: &[f64]| -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (p, q) = v.split_at(da);
        let (fa, ja) = value_and_jacobian(a.map.as_ref(), p)?;
        let (fb, jb) = value_and_jacobian(b.map.as_ref(), q)?;
        let rows = 2 * n + seed.pins.len();
        let mut r = Vec::with_capacity(rows);
        let mut jm = DMatrix::zeros(rows, da + db);
        for k in 0..2 * n {
            r.push(fa[k] - fb[k]);
            for c in 0..da {
                jm[(k, c)] = ja[(k, c)];
            }
            for c in 0..db {
                jm[(k, da + c)] = -jb[(k, c)];
            }
        }
        for (i, pin) in seed.pins.iter().enumerate() {
            let row = 2 * n + i;
            match pin.target {
                PinTarget::Coord { coord, index } => {
                    let (on_a, k) = coord_slot(coord, index, n);
                    if on_a {
                        r.push(fa[k] - pin.value);
                        for c in 0..da {
                            jm[(row, c)] = ja[(k, c)];
                        }
                    } else {
                        r.push(fb[k] - pin.value);
                        for c in 0..db {
                            jm[(row, da + c)] = jb[(k, c)];
                        }
                    }
                }
                PinTarget::AParam { index } => {
                    r.push(v[index] - pin.value);
                    jm[(row, index)] = 1.0;
                }
                PinTarget::BParam { index } => {
                    r.push(v[da + index] - pin.value);
                    jm[(row, da + index)] = 1.0;
                }
            }
        }
        Ok((r, jm))
    };
    let x0: Vec<f64> = seed
        .a_params
        .iter()
        .chain(&seed.b_params)
        .copied()
        .collect();
    let opts = NewtonOptions {
        tol: 1e-11,
        max_iter: 80,
        ..NewtonOptions::default()
    };
    let out = newton(system, &x0, &opts)?;
    let (p, q) = out.x.split_at(da);
    let fa = a.eval(p)?;
    let fb = b.eval(q)?;
    let matching = (0..2 * n)
        .map(|k| (fa[k] - fb[k]).abs())
        .fold(0.0, f64::max);
    let cp = |v: &[f64], k: usize| CotangentPoint {
        base: v[k * n..(k + 1) * n].to_vec(),
        covector: v[(k + 1) * n..(k + 2) * n].to_vec(),
    };
    let point = RelationPoint {
        left: cp(&fa, 2),
        right: cp(&fb, 2),
    };
    let intermediate = cp(&fa, 0);
    let factors = rule.factors(&point, &intermediate);
    let mut residuals = BTreeMap::new();
    residuals.insert("matching".to_string(), matching);
    residuals.insert("newton".to_string(), out.residual);
    residuals.insert("factor_diagonal".to_string(), factors[0]);
    if factors[1].is_finite() {
        residuals.insert("factor_umbrella".to_string(), factors[1]);
    }
    Ok(CompositionPoint {
        point,
        intermediate,
        branch: rule.classify(factors),
        residuals,
        a_params: p.to_vec(),
        b_params: q.to_vec(),
    })
}

/// Pins `x`, `z₁`, `ζ₂`, `ζ₃` for the model composition `C₀ᵗ ∘ C₀`, with chart
/// seeds built from the pinned values and a trial `y₁`.
pub fn model_seed(x: [f64; 3], z1: f64, zeta2: f64, zeta3: f64, y1_guess: f64) -> CompositionSeed {
    let a = z1 - x[0];
    let z2 = x[1] + a * a;
    let z3 = x[2] + a.powi(4);
    CompositionSeed {
        a_params: vec![z1, z2, z3, x[0], zeta2, zeta3],
        b_params: vec![z1, z2, z3, y1_guess, zeta2, zeta3],
        pins: vec![
            Pin::coord(Coord::X, 0, x[0]),
            Pin::coord(Coord::X, 1, x[1]),
            Pin::coord(Coord::X, 2, x[2]),
            Pin::coord(Coord::Z, 0, z1),
            Pin::coord(Coord::Zeta, 1, zeta2),
            Pin::coord(Coord::Zeta, 2, zeta3),
        ],
    }
}

/// Deterministic random seeds for `C₀ᵗ ∘ C₀`; both branches are reachable.
pub fn model_composition_seeds(count: usize, rng_seed: u64) -> Vec<CompositionSeed> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..count)
        .map(|_| {
            let x = [
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ];
            let z1 = x[0] + rng.random_range(-1.0..1.0);
            let zeta3 = rng.random_range(0.5..2.0);
            let zeta2 = zeta3 * rng.random_range(-3.0..0.5);
            let y1 = x[0] + rng.random_range(-1.2..1.2);
            let mut s = model_seed(x, z1, zeta2, zeta3, y1);
            // perturb the unpinned intermediate coordinates
            s.a_params[1] += rng.random_range(-0.05..0.05);
            s.b_params[2] += rng.random_range(-0.05..0.05);
            s
        })
        .collect()
}

pub fn compose_scan(
    a: &RelationChart,
    b: &RelationChart,
    seeds: &[CompositionSeed],
    rule: BranchRule,
) -> Vec<Result<CompositionPoint>> {
    crate::par_map(seeds, |s| compose_solve(a, b, s, rule))
}

/// Distance of a model composition point to `Δ ∪ C̃₀`, the umbrella part
/// measured against the closed-form z-chart at the point's own `(x, y₁, z₁, ξ₃)`.
pub fn model_containment_distance(cp: &CompositionPoint) -> Result<f64> {
    let p = &cp.point;
    let flat: Vec<f64> = [
        &p.left.base,
        &p.left.covector,
        &p.right.base,
        &p.right.covector,
    ]
    .into_iter()
    .flatten()
    .copied()
    .collect();
    let diag = (0..3)
        .map(|i| {
            (flat[i] - flat[6 + i])
                .abs()
                .max((flat[3 + i] - flat[9 + i]).abs())
        })
        .fold(0.0, f64::max);
    let z = model_umbrella_chart(UmbrellaForm::ModelZform);
    let params = [
        flat[0],
        flat[1],
        flat[2],
        flat[6],
        cp.intermediate.base[0],
        flat[5],
    ];
    let img = z.chart.eval(&params)?;
    let umb = img
        .iter()
        .zip(&flat)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(diag.min(umb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UmbrellaForm {
    /// Parameters `(x₁, x₂, x₃, y₁, z₁, θ₃)`.
    ModelZform,
    /// Parameters `(x₁, x₂, x₃, y₁, θ₃, τ)`.
    ModelTauform,
    /// Parameters `(x₁, x₂, x₃, y₁, θ₃, τ)`, outputs from the reduced phase.
    ReducedPhase,
}

#[derive(Debug, Clone)]
pub struct UmbrellaChart {
    pub chart: RelationChart,
    pub form: UmbrellaForm,
}

impl UmbrellaChart {
    /// Parameters at base `x` with `x₁ − y₁ = u`, second singular coordinate
    /// (`z₁ − x₁` or `τ`) and `θ₃`.
    pub fn params_at(&self, x: [f64; 3], u: f64, second: f64, theta3: f64) -> Vec<f64> {
        match self.form {
            UmbrellaForm::ModelZform => vec![x[0], x[1], x[2], x[0] - u, x[0] + second, theta3],
            _ => vec![x[0], x[1], x[2], x[0] - u, theta3, second],
        }
    }

    /// The two coordinates whose common zero set is the model singular locus.
    pub fn singular_locus_residual(&self, p: &[f64]) -> [f64; 2] {
        match self.form {
            UmbrellaForm::ModelZform => [p[0] - p[3], p[4] - p[0]],
            _ => [p[0] - p[3], p[5]],
        }
    }
}

fn relation_names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Closed-form model umbrella `C̃₀`.
pub fn model_umbrella_chart(form: UmbrellaForm) -> UmbrellaChart {
    match form {
        UmbrellaForm::ModelZform => {
            let map = jet::smooth_map(6, 12, "model_umbrella_zform", |p| {
                let a = &p[4] - &p[0];
                let b = &p[4] - &p[3];
                let t3 = &p[5];
                let t2 = -((&a * &a + &a * &b + &b * &b) * t3 * 2.0);
                let xi1 = -(&a * &t2 * 2.0) - &a * &a * &a * t3 * 4.0;
                let a2 = &a * &a;
                let b2 = &b * &b;
                let y2 = &p[1] + &a2 - &b2;
                let y3 = &p[2] + &a2 * &a2 - &b2 * &b2;
                vec![
                    p[0].clone(),
                    p[1].clone(),
                    p[2].clone(),
                    xi1.clone(),
                    t2.clone(),
                    t3.clone(),
                    p[3].clone(),
                    y2,
                    y3,
                    xi1,
                    t2,
                    t3.clone(),
                ]
            });
            UmbrellaChart {
                chart: RelationChart::new(
                    "model_umbrella_zform",
                    ChartKind::Relation { n: 3 },
                    map,
                    relation_names(&["x1", "x2", "x3", "y1", "z1", "theta3"]),
                ),
                form,
            }
        }
        UmbrellaForm::ModelTauform => {
            let map = jet::smooth_map(6, 12, "model_umbrella_tauform", |p| {
                let u = &p[0] - &p[3];
                let (t3, tau) = (&p[4], &p[5]);
                let s = tau / t3;
                let u2 = &u * &u;
                let y2 = &p[1] + &s * &u;
                let y3 = &p[2] + (&s * &u2 * &u + &s * &s * &s * &u) * 0.5;
                let xi1 = (&u2 - &s * &s) * tau;
                let xi2 = -(&u2 * t3 * 0.5) - &s * tau * 1.5;
                vec![
                    p[0].clone(),
                    p[1].clone(),
                    p[2].clone(),
                    xi1.clone(),
                    xi2.clone(),
                    t3.clone(),
                    p[3].clone(),
                    y2,
                    y3,
                    xi1,
                    xi2,
                    t3.clone(),
                ]
            });
            UmbrellaChart {
                chart: RelationChart::new(
                    "model_umbrella_tauform",
                    ChartKind::Relation { n: 3 },
                    map,
                    relation_names(&["x1", "x2", "x3", "y1", "theta3", "tau"]),
                ),
                form,
            }
        }
        UmbrellaForm::ReducedPhase => ReducedPhase::model().umbrella_chart(),
    }
}

/// Gauss–Newton fit of chart parameters to a target image point; returns the
/// best residual over the seeds and its parameters.
pub fn membership_residual(
    chart: &RelationChart,
    target: &[f64],
    seeds: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in seeds {
        let system = |p: &[f64]| -> Result<(Vec<f64>, DMatrix<f64>)> {
            let (v, j) = value_and_jacobian(chart.map.as_ref(), p)?;
            Ok((v.iter().zip(target).map(|(a, b)| a - b).collect(), j))
        };
        let opts = NewtonOptions {
            tol: 1e-13,
            max_iter: 60,
            reject_singular_seed: false,
            ..NewtonOptions::default()
        };
        let (res, p) = match newton(system, s, &opts) {
            Ok(o) => (o.residual, o.x),
            Err(Error::NoConvergence { .. }) => {
                let v = chart.eval(s)?;
                (
                    max_abs(&v.iter().zip(target).map(|(a, b)| a - b).collect::<Vec<_>>()),
                    s.clone(),
                )
            }
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| res < b.0) {
            best = Some((res, p));
        }
    }
    best.ok_or_else(|| Error::InvalidInput("no membership seeds".into()))
}

/// Reads `(x, y₁, θ₃)` off an image point and solves the remaining z-chart or
/// τ-chart parameter from `y₂`; used to cross-check the two model forms.
pub fn read_off_params(form: UmbrellaForm, img: &[f64]) -> Vec<f64> {
    let (x1, x2, x3, y1, y2, t3) = (img[0], img[1], img[2], img[6], img[7], img[5]);
    let u = x1 - y1;
    match form {
        UmbrellaForm::ModelZform => {
            let z1 = if u.abs() > 1e-12 {
                ((y2 - x2) / (y1 - x1) + x1 + y1) / 2.0
            } else {
                x1
            };
            vec![x1, x2, x3, y1, z1, t3]
        }
        _ => {
            let tau = if u.abs() > 1e-12 {
                (y2 - x2) * t3 / u
            } else {
                0.0
            };
            vec![x1, x2, x3, y1, t3, tau]
        }
    }
}

/// Names of the variables of the reduced phase `φ̂`.
pub const PHASE_VARIABLES: [&str; 9] = [
    "x1", "x2", "x3", "y1", "y2", "y3", "theta2", "theta3", "tau",
];

/// Endpoint data `P₁, P₂, N` of a reduced degenerate phase
/// `φ̂ = (x₂−y₂)θ₂ + (x₃−y₃)θ₃ + u(τθ₂/θ₃ + P₂ − (τ/θ₃)P₁ + ½τ³/θ₃²) + u³τN/(2θ₃)`,
/// `u = x₁ − y₁`. Each function takes `(x₁, y₁, y₂, y₃, θ₃)`.
#[derive(Clone)]
pub struct ReducedPhase {
    pub p1: SmoothMapHandle,
    pub p2: SmoothMapHandle,
    pub n: SmoothMapHandle,
}

impl std::fmt::Debug for ReducedPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReducedPhase")
            .field("p1", &self.p1.label())
            .field("p2", &self.p2.label())
            .field("n", &self.n.label())
            .finish()
    }
}

/// `P₁`, `P₂`, `N` evaluated at the phase variables.
fn coefficients(rp: &ReducedPhase, v: &[Jet]) -> std::result::Result<[Jet; 3], JetError> {
    let args = [
        v[0].clone(),
        v[3].clone(),
        v[4].clone(),
        v[5].clone(),
        v[7].clone(),
    ];
    let p1 = rp.p1.eval(&args)?.remove(0);
    let p2 = rp.p2.eval(&args)?.remove(0);
    let n = rp.n.eval(&args)?.remove(0);
    Ok([p1, p2, n])
}

fn phase_value(rp: &ReducedPhase, v: &[Jet]) -> std::result::Result<Jet, JetError> {
    let [p1, p2, n] = coefficients(rp, v)?;
    let u = &v[0] - &v[3];
    let (t2, t3, tau) = (&v[6], &v[7], &v[8]);
    let s = tau / t3;
    let inner = &s * t2 + &p2 - &s * &p1 + &s * &s * &s * t3 * 0.5;
    Ok((&v[1] - &v[4]) * t2 + (&v[2] - &v[5]) * t3 + &u * &inner + &u * &u * &u * &s * &n * 0.5)
}

fn tau_factor_value(rp: &ReducedPhase, v: &[Jet]) -> std::result::Result<Jet, JetError> {
    let [p1, _, n] = coefficients(rp, v)?;
    let u = &v[0] - &v[3];
    let (t2, t3, tau) = (&v[6], &v[7], &v[8]);
    let s = tau / t3;
    Ok((t2 - &p1) / t3 + &s * &s * 1.5 + &u * &u * &n / t3 * 0.5)
}

/// Explicit covectors of the umbrella branch in terms of the bracket terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BracketRoute {
    pub xi: [f64; 3],
    pub eta: [f64; 3],
    /// Residual of `y₃ = x₃ − uτθ₂/θ₃² + u[[θ₃]]` at the point.
    pub y3_residual: f64,
}

impl ReducedPhase {
    pub fn new(p1: SmoothMapHandle, p2: SmoothMapHandle, n: SmoothMapHandle) -> Result<Self> {
        for f in [&p1, &p2, &n] {
            if f.dim_in() != 5 || f.dim_out() != 1 {
                return Err(Error::InvalidInput(
                    "P₁, P₂, N must be scalar functions of (x₁, y₁, y₂, y₃, θ₃)".into(),
                ));
            }
        }
        Ok(ReducedPhase { p1, p2, n })
    }

    /// `P₁ = P₂ = 0`, `N = θ₃`: the homogeneous model instance.
    pub fn model() -> Self {
        ReducedPhase {
            p1: jet::smooth_map(5, 1, "0", |a| vec![a[0].lift(0.0)]),
            p2: jet::smooth_map(5, 1, "0", |a| vec![a[0].lift(0.0)]),
            n: jet::smooth_map(5, 1, "theta3", |a| vec![a[4].clone()]),
        }
    }

    /// Model instance with `P₁` replaced.
    pub fn with_p1(mut self, p1: SmoothMapHandle) -> Self {
        self.p1 = p1;
        self
    }

    pub fn with_n(mut self, n: SmoothMapHandle) -> Self {
        self.n = n;
        self
    }

    /// `φ̂` on [`PHASE_VARIABLES`].
    pub fn phase(&self) -> SmoothMapHandle {
        let rp = self.clone();
        FnMap::new(9, 1, move |v| Ok(vec![phase_value(&rp, v)?]))
            .labeled("reduced_phase")
            .handle()
    }

    /// The second factor `Q` of `∂_τφ̂ = (x₁ − y₁)·Q`.
    pub fn tau_factor(&self) -> SmoothMapHandle {
        let rp = self.clone();
        FnMap::new(9, 1, move |v| Ok(vec![tau_factor_value(&rp, v)?]))
            .labeled("tau_factor")
            .handle()
    }

    /// `|∂_τφ̂ − (x₁ − y₁)Q|` at a point.
    pub fn factorization_residual(&self, vars: &[f64]) -> Result<f64> {
        let (_, g) = eval_with_gradient(self.phase().as_ref(), &Jet::plain(vars))?;
        let q = jet::eval_point(self.tau_factor().as_ref(), vars)?[0];
        Ok((g[0][8].value() - (vars[0] - vars[3]) * q).abs())
    }

    /// Smallest `|N|` over the points (phase-variable vectors).
    pub fn check_n(&self, points: &[Vec<f64>]) -> Result<f64> {
        let mut least = f64::INFINITY;
        for v in points {
            let n = jet::eval_point(self.n.as_ref(), &[v[0], v[3], v[4], v[5], v[7]])?[0];
            if !n.is_finite() || n.abs() < 1e-12 {
                return Err(Error::DegenerateN);
            }
            least = least.min(n.abs());
        }
        Ok(least)
    }

    /// `Δ` parametrized by `(x₁, x₂, x₃, τ, θ₂, θ₃)` with `y = x`.
    pub fn diagonal_chart(&self) -> DiagonalChart {
        let phase = self.phase();
        let ph = phase.clone();
        let map = FnMap::new(6, 12, move |p| {
            let vars = [
                &p[0], &p[1], &p[2], &p[0], &p[1], &p[2], &p[4], &p[5], &p[3],
            ]
            .map(Clone::clone);
            let (_, g) = eval_with_gradient(ph.as_ref(), &vars)?;
            let g = &g[0];
            Ok(vec![
                p[0].clone(),
                p[1].clone(),
                p[2].clone(),
                g[0].clone(),
                g[1].clone(),
                g[2].clone(),
                p[0].clone(),
                p[1].clone(),
                p[2].clone(),
                -&g[3],
                -&g[4],
                -&g[5],
            ])
        })
        .labeled("reduced_diagonal")
        .handle();
        let rp = self.clone();
        let residual = FnMap::new(6, 1, move |p| {
            let vars = [
                &p[0], &p[1], &p[2], &p[0], &p[1], &p[2], &p[4], &p[5], &p[3],
            ]
            .map(Clone::clone);
            Ok(vec![tau_factor_value(&rp, &vars)?])
        })
        .labeled("tau_factor_on_diagonal")
        .handle();
        DiagonalChart {
            chart: RelationChart::new(
                "reduced_diagonal",
                ChartKind::Relation { n: 3 },
                map,
                relation_names(&["x1", "x2", "x3", "tau", "theta2", "theta3"]),
            ),
            intersection_residual: residual,
        }
    }

    /// `ψ(x₁, x₂, x₃, y₁, θ₃, τ)`: the umbrella branch, with `(y₂, y₃, θ₂)`
    /// solved from `∂_{θ₂}φ̂ = ∂_{θ₃}φ̂ = Q = 0`.
    pub fn umbrella_chart(&self) -> UmbrellaChart {
        let solver = CriticalSolver {
            phase: self.phase(),
            rp: self.clone(),
        };
        let map = FnMap::new(6, 12, move |p| solver.eval(p))
            .labeled("reduced_umbrella_psi")
            .handle();
        UmbrellaChart {
            chart: RelationChart::new(
                "reduced_umbrella_psi",
                ChartKind::Relation { n: 3 },
                map,
                relation_names(&["x1", "x2", "x3", "y1", "theta3", "tau"]),
            ),
            form: UmbrellaForm::ReducedPhase,
        }
    }

    /// Phase variables of the umbrella point with chart parameters `p`.
    pub fn umbrella_variables(&self, p: &[f64]) -> Result<Vec<f64>> {
        let solver = CriticalSolver {
            phase: self.phase(),
            rp: self.clone(),
        };
        let w = solver.solve_values(p).map_err(Error::from)?;
        Ok(vec![p[0], p[1], p[2], p[3], w[0], w[1], w[2], p[4], p[5]])
    }

    /// Covectors from the explicit bracket-term formulas (independent of the
    /// gradient route used by the charts).
    pub fn bracket_route(&self, vars: &[f64]) -> Result<BracketRoute> {
        let (x1, y1, y2, y3, t2, t3, tau) = (
            vars[0], vars[3], vars[4], vars[5], vars[6], vars[7], vars[8],
        );
        let u = x1 - y1;
        let r = tau / t3;
        let args = [x1, y1, y2, y3, t3];
        let j = |f: &SmoothMapHandle| -> Result<Jet> {
            Ok(jet::jet_of_map(f.as_ref(), &args, 1)?.remove(0))
        };
        let (p1, p2, n) = (j(&self.p1)?, j(&self.p2)?, j(&self.n)?);
        // [[s]] for s = x₁, y₁, y₂, y₃ (argument slots 0..4)
        let br = |k: usize| {
            p2.derivative(&[k]) - r * p1.derivative(&[k]) + u * u * r * n.derivative(&[k]) / 2.0
        };
        let head = r * t2 + 1.5 * u * u * r * n.value() + p2.value() - r * p1.value()
            + 0.5 * r * r * r * t3;
        // [[θ₃]] by differentiating in θ₃ alone
        let lt = jet::Layout::get(1, 1);
        let th = Jet::variable(&lt, 0, t3);
        let cargs: Vec<Jet> = [x1, y1, y2, y3]
            .iter()
            .map(|&c| Jet::constant(&lt, c))
            .chain([th.clone()])
            .collect();
        let p1t = self.p1.eval(&cargs)?.remove(0);
        let p2t = self.p2.eval(&cargs)?.remove(0);
        let nt = self.n.eval(&cargs)?.remove(0);
        let rt = th.recip() * tau;
        let e = &p2t - &rt * &p1t
            + &rt * &nt * (u * u * 0.5)
            + th.recip() * th.recip() * (0.5 * tau * tau * tau);
        let br_t3 = e.derivative(&[0]);
        let y3_pred = vars[2] - u * tau * t2 / (t3 * t3) + u * br_t3;
        Ok(BracketRoute {
            xi: [head + u * br(0), t2, t3],
            eta: [head - u * br(1), t2 - u * br(2), t3 - u * br(3)],
            y3_residual: (y3 - y3_pred).abs(),
        })
    }
}

struct CriticalSolver {
    phase: SmoothMapHandle,
    rp: ReducedPhase,
}

impl CriticalSolver {
    fn vars(p: &[Jet], w: &[Jet]) -> Vec<Jet> {
        vec![
            p[0].clone(),
            p[1].clone(),
            p[2].clone(),
            p[3].clone(),
            w[0].clone(),
            w[1].clone(),
            w[2].clone(),
            p[4].clone(),
            p[5].clone(),
        ]
    }

    /// `[∂_{θ₂}φ̂, ∂_{θ₃}φ̂, Q]` and the phase gradient.
    fn equations(&self, vars: &[Jet]) -> std::result::Result<(Vec<Jet>, Vec<Jet>), JetError> {
        let (_, g) = eval_with_gradient(self.phase.as_ref(), vars)?;
        let q = tau_factor_value(&self.rp, vars)?;
        let g = g.into_iter().next().expect("scalar phase");
        Ok((vec![g[6].clone(), g[7].clone(), q], g))
    }

    fn residual_and_jacobian(
        &self,
        p: &[f64],
        w: &[f64],
    ) -> std::result::Result<(Vec<f64>, DMatrix<f64>), JetError> {
        let wj = Jet::variables(w, 1);
        let pj: Vec<Jet> = p.iter().map(|&c| wj[0].lift(c)).collect();
        let (f, _) = self.equations(&Self::vars(&pj, &wj))?;
        Ok((
            f.iter().map(Jet::value).collect(),
            DMatrix::from_fn(3, 3, |r, c| f[r].derivative(&[c])),
        ))
    }

    fn solve_values(&self, p: &[f64]) -> std::result::Result<Vec<f64>, JetError> {
        let (x2, x3, y1, t3, tau) = (p[1], p[2], p[3], p[4], p[5]);
        let u = p[0] - y1;
        let s = tau / t3;
        let seed = [
            x2 + s * u,
            x3 + 0.5 * s * u * u * u + 0.5 * s * s * s * u,
            -1.5 * s * tau - 0.5 * u * u * t3,
        ];
        let system = |w: &[f64]| -> Result<(Vec<f64>, DMatrix<f64>)> {
            Ok(self.residual_and_jacobian(p, w)?)
        };
        let opts = NewtonOptions {
            tol: 1e-13,
            max_iter: 50,
            ..NewtonOptions::default()
        };
        let out = newton(system, &seed, &opts)
            .map_err(|e| JetError::Domain(format!("critical solve: {e}")))?;
        Ok(out.x)
    }

    fn eval(&self, p: &[Jet]) -> std::result::Result<Vec<Jet>, JetError> {
        let pv: Vec<f64> = p.iter().map(Jet::value).collect();
        let w0 = self.solve_values(&pv)?;
        let (_, jac) = self.residual_and_jacobian(&pv, &w0)?;
        let jinv = jac
            .try_inverse()
            .ok_or_else(|| JetError::Domain("singular critical-point system".into()))?;
        let mut w: Vec<Jet> = w0.iter().map(|&c| p[0].lift(c)).collect();
        // chord iteration: each pass fixes one more Taylor order
        for _ in 0..=p[0].order() {
            let (f, _) = self.equations(&Self::vars(p, &w))?;
            for (i, wi) in w.iter_mut().enumerate() {
                for (k, fk) in f.iter().enumerate() {
                    *wi -= fk * jinv[(i, k)];
                }
            }
        }
        let vars = Self::vars(p, &w);
        let n = coefficients(&self.rp, &vars)?[2].value();
        if !n.is_finite() || n.abs() < 1e-12 {
            return Err(JetError::Domain("N vanishes".into()));
        }
        let (_, g) = self.equations(&vars)?;
        Ok(vec![
            p[0].clone(),
            p[1].clone(),
            p[2].clone(),
            g[0].clone(),
            g[1].clone(),
            g[2].clone(),
            p[3].clone(),
            w[0].clone(),
            w[1].clone(),
            -&g[3],
            -&g[4],
            -&g[5],
        ])
    }
}

/// A chart of `Δ` together with a scalar whose zero set is `Δ ∩ C̃` on it.
#[derive(Clone)]
pub struct DiagonalChart {
    pub chart: RelationChart,
    pub intersection_residual: SmoothMapHandle,
}

impl std::fmt::Debug for DiagonalChart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiagonalChart")
            .field("chart", &self.chart)
            .finish()
    }
}

/// Checks `N ≠ 0` near the base point and returns both charts.
pub fn reduced_phase_charts(rp: &ReducedPhase) -> Result<(DiagonalChart, UmbrellaChart)> {
    let mut pts = Vec::new();
    for &a in &[-0.3, 0.0, 0.3] {
        for &b in &[-0.3, 0.0, 0.3] {
            for &t3 in &[0.8, 1.0, 1.2] {
                pts.push(vec![a, 0.0, 0.0, b, a * b, -b, 0.0, t3, 0.0]);
            }
        }
    }
    rp.check_n(&pts)?;
    Ok((rp.diagonal_chart(), rp.umbrella_chart()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntersectionReport {
    pub codim_diagonal: Option<usize>,
    pub codim_umbrella: Option<usize>,
    pub points_diagonal: usize,
    pub points_umbrella: usize,
    /// All located points gave the same rank on each side.
    pub consistent: bool,
}

impl IntersectionReport {
    pub fn found(&self) -> bool {
        self.points_diagonal > 0 && self.points_umbrella > 0
    }
}

fn locate_and_rank(residual: &dyn SmoothMap, seeds: &[Vec<f64>]) -> Result<Vec<usize>> {
    let mut ranks = Vec::new();
    for s in seeds {
        let system = |p: &[f64]| value_and_jacobian(residual, p);
        let opts = NewtonOptions {
            tol: 1e-12,
            max_iter: 60,
            max_distance: Some(1.0),
            reject_singular_seed: false,
            ..NewtonOptions::default()
        };
        let Ok(out) = newton(system, s, &opts) else {
            continue;
        };
        let (_, jm) = value_and_jacobian(residual, &out.x)?;
        ranks.push(linalg::rank(&jm, 1e-6));
    }
    Ok(ranks)
}

/// Codimension of `Δ ∩ C̃` in each chart: the rank of the gradient of the
/// intersection's defining residual at located intersection points.
pub fn intersection_codim_check(
    diag: &DiagonalChart,
    umb: &UmbrellaChart,
    diag_seeds: &[Vec<f64>],
    umb_seeds: &[Vec<f64>],
) -> Result<IntersectionReport> {
    let inner = umb.chart.map.clone();
    let off_diagonal = FnMap::new(inner.dim_in(), 6, move |p| {
        let o = inner.eval(p)?;
        Ok((0..3)
            .map(|i| &o[i] - &o[6 + i])
            .chain((0..3).map(|i| &o[3 + i] - &o[9 + i]))
            .collect())
    })
    .handle();
    let rd = locate_and_rank(diag.intersection_residual.as_ref(), diag_seeds)?;
    let ru = locate_and_rank(off_diagonal.as_ref(), umb_seeds)?;
    let common = |r: &[usize]| r.first().copied().filter(|f| r.iter().all(|x| x == f));
    Ok(IntersectionReport {
        codim_diagonal: common(&rd),
        codim_umbrella: common(&ru),
        points_diagonal: rd.len(),
        points_umbrella: ru.len(),
        consistent: common(&rd).is_some() && common(&ru).is_some(),
    })
}

/// Seeds near `Δ ∩ C̃` for the shared diagonal parametrization and for an
/// umbrella chart.
pub fn default_intersection_seeds(umb: &UmbrellaChart) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let diag = vec![
        vec![0.1, -0.2, 0.3, 0.5, -0.2, 1.0],
        vec![-0.3, 0.1, 0.0, -0.8, 0.4, 1.5],
        vec![0.2, 0.2, -0.1, 1.0, -1.0, 1.0],
    ];
    let umbs = vec![
        umb.params_at([0.1, -0.2, 0.3], 0.05, 0.6, 1.0),
        umb.params_at([-0.3, 0.1, 0.0], -0.04, -0.7, 1.3),
        umb.params_at([0.0, 0.0, 0.0], 0.02, 0.4, 0.9),
    ];
    (diag, umbs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::model_c0_chart;
    use crate::symplectic::{umbrella_check, UmbrellaOptions};

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

    #[test]
    fn spot_value_of_the_model_composition() {
        let c = model_c0_chart();
        let cp = compose_solve(&c, &c, &spot_seed(), BranchRule::ModelCusp).unwrap();
        let (l, r) = (&cp.point.left, &cp.point.right);
        assert!((l.covector[1] + 14.0).abs() < 1e-10);
        assert!((r.base[1] - 3.0).abs() < 1e-10 && (r.base[2] - 15.0).abs() < 1e-10);
        assert!((l.covector[0] - 24.0).abs() < 1e-10 && (r.covector[0] - 24.0).abs() < 1e-10);
        assert_eq!(cp.branch, Branch::Umbrella);
        assert!(cp.residuals["matching"] < 1e-9);
        let img = model_umbrella_chart(UmbrellaForm::ModelZform)
            .chart
            .eval(&[0.0, 0.0, 0.0, 1.0, 2.0, 1.0])
            .unwrap();
        let flat: Vec<f64> = [&l.base, &l.covector, &r.base, &r.covector]
            .into_iter()
            .flatten()
            .copied()
            .collect();
        assert!(img.iter().zip(&flat).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn diagonal_and_intersection_branches() {
        let c = model_c0_chart();
        let cp = compose_solve(
            &c,
            &c,
            &model_seed([0.1, 0.2, -0.1], 0.7, 0.5, 1.0, 0.1 + 1e-3),
            BranchRule::ModelCusp,
        )
        .unwrap();
        assert_eq!(cp.branch, Branch::Diagonal);
        for i in 0..3 {
            assert!((cp.point.left.base[i] - cp.point.right.base[i]).abs() < 1e-9);
            assert!((cp.point.left.covector[i] - cp.point.right.covector[i]).abs() < 1e-9);
        }
        let mut s = model_seed([0.0, 0.0, 0.0], 0.0, 0.0, 1.0, 0.0);
        s.pins.push(Pin::coord(Coord::Y, 0, 0.0));
        let cp = compose_solve(&c, &c, &s, BranchRule::ModelCusp).unwrap();
        assert_eq!(cp.branch, Branch::Intersection);
    }

    #[test]
    fn scan_points_lie_on_diagonal_or_umbrella() {
        let c = model_c0_chart();
        let seeds = model_composition_seeds(40, 7);
        let pts = compose_scan(&c, &c, &seeds, BranchRule::ModelCusp);
        let ok: Vec<_> = pts.into_iter().filter_map(|r| r.ok()).collect();
        assert!(ok.len() >= 38);
        assert!(ok.iter().any(|p| p.branch == Branch::Umbrella));
        assert!(ok.iter().any(|p| p.branch == Branch::Diagonal));
        for p in &ok {
            assert!(model_containment_distance(p).unwrap() < 1e-7);
            assert!(p
                .point
                .left
                .covector
                .iter()
                .zip(&p.point.right.covector)
                .all(|(a, b)| (a - b).abs() < 1e-8));
        }
    }

    #[test]
    fn tauform_example_and_singular_point() {
        let t = model_umbrella_chart(UmbrellaForm::ModelTauform);
        let v = t.chart.eval(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(&v[3..6], &[0.0, -2.0, 1.0]);
        assert_eq!(&v[7..9], &[-1.0, -1.0]);
        assert_eq!(&v[3..6], &v[9..12]);
        let (s, _) = linalg::svd_sorted(
            &t.chart
                .differential(&[0.3, 0.1, 0.0, 0.3, 1.0, 0.0])
                .unwrap(),
        );
        assert!(s[5] < 1e-14 * s[0] && s[4] > 1e-3 * s[0]);
    }

    #[test]
    fn zform_and_tauform_agree_as_sets() {
        let z = model_umbrella_chart(UmbrellaForm::ModelZform);
        let t = model_umbrella_chart(UmbrellaForm::ModelTauform);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = [
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ];
            let u = rng.random_range(0.1..0.8) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let pz = z.params_at(
                x,
                u,
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..2.0),
            );
            let img = z.chart.eval(&pz).unwrap();
            let (res, _) = membership_residual(
                &t.chart,
                &img,
                &[read_off_params(UmbrellaForm::ModelTauform, &img)],
            )
            .unwrap();
            assert!(res < 1e-7, "z → τ residual {res}");
            let pt = t.params_at(
                x,
                u,
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..2.0),
            );
            let img = t.chart.eval(&pt).unwrap();
            let (res, _) = membership_residual(
                &z.chart,
                &img,
                &[read_off_params(UmbrellaForm::ModelZform, &img)],
            )
            .unwrap();
            assert!(res < 1e-7, "τ → z residual {res}");
        }
    }

    #[test]
    fn reduced_model_reproduces_the_tauform() {
        let psi = ReducedPhase::model().umbrella_chart();
        let t = model_umbrella_chart(UmbrellaForm::ModelTauform);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p: Vec<f64> = vec![
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.5..2.0),
                rng.random_range(-1.0..1.0),
            ];
            let a = psi.chart.eval(&p).unwrap();
            let b = t.chart.eval(&p).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10 * (1.0 + y.abs()), "{a:?} vs {b:?}");
            }
        }
        // N = 1 breaks homogeneity: on θ₃ = 1 only y₃ (from ∂_{θ₃}φ̂) differs
        let unit = ReducedPhase::model()
            .with_n(jet::smooth_map(5, 1, "1", |a| vec![a[0].lift(1.0)]))
            .umbrella_chart();
        let p = [0.1, 0.2, 0.0, -0.3, 1.0, 0.4];
        let (a, b) = (unit.chart.eval(&p).unwrap(), t.chart.eval(&p).unwrap());
        for (k, (x, y)) in a.iter().zip(&b).enumerate() {
            if k == 8 {
                let u: f64 = 0.4;
                assert!((x - y + 0.5 * u.powi(3) * 0.4).abs() < 1e-10);
            } else {
                assert!((x - y).abs() < 1e-10);
            }
        }
        let q = [0.1, 0.2, 0.0, -0.3, 1.7, 0.4];
        let (a, b) = (unit.chart.eval(&q).unwrap(), t.chart.eval(&q).unwrap());
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-3));
    }

    #[test]
    fn umbrella_jets_match_finite_differences() {
        let rp = ReducedPhase::model().with_p1(jet::smooth_map(5, 1, "0.1 x1 theta3", |a| {
            vec![&a[0] * &a[4] * 0.1]
        }));
        let psi = rp.umbrella_chart();
        let err = jet::finite_diff_check(
            psi.chart.map.as_ref(),
            &[0.2, 0.1, -0.1, -0.1, 1.1, 0.3],
            2,
            None,
        );
        assert!(err < 1e-5, "fd error {err}");
    }

    #[test]
    fn diagonal_chart_formula() {
        let rp = ReducedPhase::model().with_p1(jet::smooth_map(5, 1, "0.1 x1 theta3", |a| {
            vec![&a[0] * &a[4] * 0.1]
        }));
        let d = rp.diagonal_chart();
        let p = [0.3, -0.2, 0.1, 0.7, -0.4, 1.3];
        let v = d.chart.eval(&p).unwrap();
        let (tau, t2, t3) = (p[3], p[4], p[5]);
        let p1 = 0.1 * p[0] * t3;
        let xi1 = tau * t2 / t3 - tau / t3 * p1 + 0.5 * tau.powi(3) / (t3 * t3);
        assert!((v[3] - xi1).abs() < 1e-13);
        assert_eq!(&v[0..3], &v[6..9]);
        for i in 3..6 {
            assert!((v[i] - v[6 + i]).abs() < 1e-13);
        }
    }

    #[test]
    fn bracket_route_matches_gradient_route() {
        let rp = ReducedPhase::new(
            jet::smooth_map(5, 1, "P1", |a| {
                vec![&a[0] * &a[4] * 0.1 + &a[2] * &a[1] * 0.2]
            }),
            jet::smooth_map(5, 1, "P2", |a| vec![(&a[0] + &a[3] * 0.5) * &a[4] * 0.3]),
            jet::smooth_map(5, 1, "N", |a| vec![&a[4] * (&a[1] * &a[0] * 0.2 + 1.0)]),
        )
        .unwrap();
        let psi = rp.umbrella_chart();
        for p in [
            [0.2, 0.1, -0.1, -0.1, 1.1, 0.3],
            [-0.3, 0.0, 0.2, 0.1, 0.8, -0.5],
        ] {
            let vars = rp.umbrella_variables(&p).unwrap();
            let v = psi.chart.eval(&p).unwrap();
            let br = rp.bracket_route(&vars).unwrap();
            for i in 0..3 {
                assert!((br.xi[i] - v[3 + i]).abs() < 1e-12);
                assert!((br.eta[i] - v[9 + i]).abs() < 1e-12);
            }
            assert!(br.y3_residual < 1e-12);
            assert!(rp.factorization_residual(&vars).unwrap() < 1e-13);
        }
    }

    #[test]
    fn umbrella_charts_certify() {
        let opts = UmbrellaOptions::default();
        for form in [
            UmbrellaForm::ModelZform,
            UmbrellaForm::ModelTauform,
            UmbrellaForm::ReducedPhase,
        ] {
            let u = model_umbrella_chart(form);
            let seed = u.params_at([0.1, 0.0, 0.0], 0.02, 0.03, 1.0);
            let cert = umbrella_check(&u.chart, &seed, &opts).unwrap();
            assert!(cert.verdict, "{form:?}: {cert:?}");
            let r = u.singular_locus_residual(&cert.singular_point);
            assert!(r[0].abs() < 1e-8 && r[1].abs() < 1e-8, "{form:?}: {r:?}");
        }
        let rp = ReducedPhase::model().with_p1(jet::smooth_map(5, 1, "0.1 x1 theta3", |a| {
            vec![&a[0] * &a[4] * 0.1]
        }));
        let psi = rp.umbrella_chart();
        let cert = umbrella_check(
            &psi.chart,
            &psi.params_at([0.1, 0.0, 0.0], 0.02, 0.03, 1.0),
            &opts,
        )
        .unwrap();
        assert!(cert.verdict, "{cert:?}");
    }

    #[test]
    fn intersection_has_codimension_one() {
        let rp = ReducedPhase::model();
        let (d, _) = reduced_phase_charts(&rp).unwrap();
        for form in [
            UmbrellaForm::ModelZform,
            UmbrellaForm::ModelTauform,
            UmbrellaForm::ReducedPhase,
        ] {
            let u = model_umbrella_chart(form);
            let (sd, su) = default_intersection_seeds(&u);
            let rep = intersection_codim_check(&d, &u, &sd, &su).unwrap();
            assert_eq!(
                (rep.codim_diagonal, rep.codim_umbrella),
                (Some(1), Some(1)),
                "{form:?}: {rep:?}"
            );
        }
        // shift ξ₃ of the umbrella: no point can reach the diagonal
        let u = model_umbrella_chart(UmbrellaForm::ModelTauform);
        let inner = u.chart.map.clone();
        let shifted = jet::smooth_map(6, 12, "shifted", move |p| {
            let mut o = inner.eval(p).unwrap();
            o[5] = &o[5] + 0.5;
            o
        });
        let moved = UmbrellaChart {
            chart: RelationChart::new(
                "shifted",
                ChartKind::Relation { n: 3 },
                shifted,
                u.chart.param_names.clone(),
            ),
            form: u.form,
        };
        let (sd, su) = default_intersection_seeds(&moved);
        let rep = intersection_codim_check(&d, &moved, &sd, &su).unwrap();
        assert!(!rep.found() && rep.codim_umbrella.is_none());
    }

    #[test]
    fn vanishing_n_is_rejected() {
        let rp = ReducedPhase::model().with_n(jet::smooth_map(5, 1, "0", |a| vec![a[0].lift(0.0)]));
        assert!(matches!(reduced_phase_charts(&rp), Err(Error::DegenerateN)));
    }
}
