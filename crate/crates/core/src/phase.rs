//! Phase functions, cotangent points and parametrized canonical relations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{self, eval_with_gradient, smooth_map, FnMap, Jet, SmoothMap, SmoothMapHandle};
use crate::linalg::{max_abs, newton, NewtonOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotangentPoint {
    pub base: Vec<f64>,
    pub covector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationPoint {
    pub left: CotangentPoint,
    pub right: CotangentPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// How chart outputs are arranged and paired symplectically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChartKind {
    /// Outputs `(x, ξ, y, η)` in `T*X × T*Y`, paired by `ω_X − ω_Y`.
    Relation { n: usize },
    /// Outputs `(x, ξ)` in `T*ℝⁿ`, paired by `ω`.
    Lagrangian { n: usize },
}

/// Normalization of the fiber variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThetaSlice {
    /// Fiber variables are free parameters (the chart is conic).
    Conic,
    /// The last fiber variable is held at 1.
    LastFiberUnit,
    /// Fiber variables are rescaled to the unit sphere.
    UnitSphere,
}

/// A parametrized canonical relation (or Lagrangian) with jet access.
#[derive(Clone)]
pub struct RelationChart {
    pub name: String,
    pub kind: ChartKind,
    pub map: SmoothMapHandle,
    pub param_names: Vec<String>,
    pub slice: ThetaSlice,
}

impl std::fmt::Debug for RelationChart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RelationChart")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("params", &self.param_names)
            .finish()
    }
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl RelationChart {
    pub fn new(
        name: &str,
        kind: ChartKind,
        map: SmoothMapHandle,
        param_names: Vec<String>,
    ) -> Self {
        RelationChart {
            name: name.to_string(),
            kind,
            map,
            param_names,
            slice: ThetaSlice::Conic,
        }
    }

    /// Base dimension `n`.
    pub fn n(&self) -> usize {
        match self.kind {
            ChartKind::Relation { n } | ChartKind::Lagrangian { n } => n,
        }
    }

    /// Parameter dimension.
    pub fn dim(&self) -> usize {
        self.map.dim_in()
    }

    pub fn eval(&self, p: &[f64]) -> Result<Vec<f64>> {
        Ok(jet::eval_point(self.map.as_ref(), p)?)
    }

    pub fn relation_point(&self, p: &[f64]) -> Result<RelationPoint> {
        let v = self.eval(p)?;
        let n = self.n();
        let cp = |k: usize| CotangentPoint {
            base: v[k * n..(k + 1) * n].to_vec(),
            covector: v[(k + 1) * n..(k + 2) * n].to_vec(),
        };
        match self.kind {
            ChartKind::Relation { .. } => Ok(RelationPoint {
                left: cp(0),
                right: cp(2),
            }),
            ChartKind::Lagrangian { .. } => Err(Error::InvalidInput(
                "Lagrangian chart has no right factor".into(),
            )),
        }
    }

    /// Output indices of `π_side`.
    pub fn side_indices(&self, side: Side) -> Vec<usize> {
        let n = self.n();
        match (self.kind, side) {
            (ChartKind::Relation { .. }, Side::Right) => (2 * n..4 * n).collect(),
            _ => (0..2 * n).collect(),
        }
    }

    /// `π_side ∘ Φ` as a map from parameters to `T*`.
    pub fn projection(&self, side: Side) -> SmoothMapHandle {
        let label = format!("pi_{side:?}({})", self.name);
        jet::select_outputs(&self.map, self.side_indices(side), &label)
    }

    /// The transposed relation `{(y,η; x,ξ)}`.
    pub fn transpose(&self) -> RelationChart {
        let n = self.n();
        let pick: Vec<usize> = (2 * n..4 * n).chain(0..2 * n).collect();
        RelationChart {
            name: format!("{}^t", self.name),
            kind: self.kind,
            map: jet::select_outputs(&self.map, pick, &format!("{}^t", self.name)),
            param_names: self.param_names.clone(),
            slice: self.slice,
        }
    }

    /// Same image, parameters `q` with `p = A q + b`.
    pub fn reparametrize(&self, matrix: Vec<Vec<f64>>, offset: Vec<f64>) -> RelationChart {
        let d = matrix.first().map_or(0, Vec::len);
        RelationChart {
            name: format!("{}∘affine", self.name),
            kind: self.kind,
            map: jet::precompose_affine(&self.map, matrix, offset),
            param_names: (0..d).map(|i| format!("q{i}")).collect(),
            slice: self.slice,
        }
    }

    /// Differential of the chart map (rows = outputs).
    pub fn differential(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let rows = jet::jacobian(self.map.as_ref(), p)?;
        Ok(crate::linalg::to_matrix(&rows))
    }

    /// Largest `|ω(dΦ e_i, dΦ e_j)|` over coordinate pairs, with the twisted
    /// form on product spaces.
    pub fn symplectic_defect(&self, p: &[f64]) -> Result<f64> {
        let dm = self.differential(p)?;
        let n = self.n();
        let d = self.dim();
        let omega = |a: usize, b: usize| -> f64 {
            let pair = |base: usize, cov: usize| -> f64 {
                (0..n)
                    .map(|k| {
                        dm[(cov + k, a)] * dm[(base + k, b)] - dm[(cov + k, b)] * dm[(base + k, a)]
                    })
                    .sum()
            };
            match self.kind {
                ChartKind::Relation { .. } => pair(0, n) - pair(2 * n, 3 * n),
                ChartKind::Lagrangian { .. } => pair(0, n),
            }
        };
        let mut worst: f64 = 0.0;
        for a in 0..d {
            for b in a + 1..d {
                worst = worst.max(omega(a, b).abs());
            }
        }
        Ok(worst)
    }
}

/// A phase `φ(x, y, θ)` with variables ordered `(x, y, θ)`.
#[derive(Clone)]
pub struct PhaseFunction {
    pub nx: usize,
    pub ny: usize,
    pub ntheta: usize,
    pub map: SmoothMapHandle,
    /// Homogeneity degree in `θ`.
    pub degree: f64,
}

impl PhaseFunction {
    pub fn new(nx: usize, ny: usize, ntheta: usize, map: SmoothMapHandle) -> Result<Self> {
        if map.dim_in() != nx + ny + ntheta || map.dim_out() != 1 {
            return Err(Error::InvalidInput(
                "phase must be scalar on (x, y, θ)".into(),
            ));
        }
        Ok(PhaseFunction {
            nx,
            ny,
            ntheta,
            map,
            degree: 1.0,
        })
    }

    fn theta_range(&self) -> std::ops::Range<usize> {
        self.nx + self.ny..self.nx + self.ny + self.ntheta
    }

    /// Model phase `(x₂−y₂−u²)θ₂ + (x₃−y₃−u⁴)θ₃`, `u = x₁−y₁`.
    pub fn model_c0() -> Self {
        PhaseFunction {
            nx: 3,
            ny: 3,
            ntheta: 2,
            map: model_c0_phase_map(),
            degree: 1.0,
        }
    }

    /// Menn-surface phase `(x₃−y₃−a²b+b²)θ`, `a = x₁−y₁`, `b = x₂−y₂`.
    pub fn menn_c1() -> Self {
        let map = smooth_map(7, 1, "menn_c1_phase", |v| {
            let a = &v[0] - &v[3];
            let b = &v[1] - &v[4];
            let h = &a * &a * &b - &b * &b;
            vec![(&v[2] - &v[5] - h) * &v[6]]
        });
        PhaseFunction {
            nx: 3,
            ny: 3,
            ntheta: 1,
            map,
            degree: 1.0,
        }
    }

    /// Phase of translates of a graph-form curve `γ(t) = (t, γ₂, …, γ_n)`:
    /// `Σ_{k≥2} (x_k − y_k − γ_k(x₁ − y₁)) θ_k`.
    pub fn translate_curve(gamma: SmoothMapHandle) -> Self {
        let n = gamma.dim_out();
        let g = gamma.clone();
        let map = FnMap::new(3 * n - 1, 1, move |v| {
            let u = &v[0] - &v[n];
            let gv = g.eval(std::slice::from_ref(&u))?;
            let mut acc = v[0].lift(0.0);
            for k in 1..n {
                acc += (&v[k] - &v[n + k] - &gv[k]) * &v[2 * n + k - 1];
            }
            Ok(vec![acc])
        })
        .labeled("translate_curve_phase")
        .handle();
        PhaseFunction {
            nx: n,
            ny: n,
            ntheta: n - 1,
            map,
            degree: 1.0,
        }
    }

    pub fn fiber_gradient(&self, point: &[f64]) -> Result<Vec<f64>> {
        let j = jet::jet_of_map_any(self.map.as_ref(), point, 1)?;
        Ok(self.theta_range().map(|i| j[0].derivative(&[i])).collect())
    }
}

fn model_c0_phase_map() -> SmoothMapHandle {
    smooth_map(8, 1, "model_c0_phase", |v| {
        let u = &v[0] - &v[3];
        let u2 = &u * &u;
        let a = &v[1] - &v[4] - &u2;
        let b = &v[2] - &v[5] - &u2 * &u2;
        vec![a * &v[6] + b * &v[7]]
    })
}

/// Solves `d_θ φ = 0` for the listed unknown coordinates of `(x, y, θ)`,
/// holding the rest at the seed.
pub fn critical_point_solve(
    phase: &PhaseFunction,
    seed: &[f64],
    unknowns: &[usize],
    slice: ThetaSlice,
) -> Result<Vec<f64>> {
    if unknowns.len() != phase.ntheta {
        return Err(Error::InvalidInput(format!(
            "need {} unknowns for {} fiber equations",
            phase.ntheta, phase.ntheta
        )));
    }
    let theta = phase.theta_range();
    let system = |u: &[f64]| -> Result<(Vec<f64>, DMatrix<f64>)> {
        let mut full = seed.to_vec();
        for (k, &i) in unknowns.iter().enumerate() {
            full[i] = u[k];
        }
        let j = jet::jet_of_map_any(phase.map.as_ref(), &full, 2)?;
        let r: Vec<f64> = theta.clone().map(|t| j[0].derivative(&[t])).collect();
        let m = DMatrix::from_fn(r.len(), unknowns.len(), |a, b| {
            j[0].derivative(&[theta.start + a, unknowns[b]])
        });
        Ok((r, m))
    };
    let u0: Vec<f64> = unknowns.iter().map(|&i| seed[i]).collect();
    let out = newton(system, &u0, &NewtonOptions::default())?;
    let mut full = seed.to_vec();
    for (k, &i) in unknowns.iter().enumerate() {
        full[i] = out.x[k];
    }
    match slice {
        ThetaSlice::Conic => {}
        ThetaSlice::LastFiberUnit => {
            let last = full[theta.end - 1];
            if last.abs() < 1e-300 {
                return Err(Error::ZeroCovector);
            }
            for t in theta.clone() {
                full[t] /= last.abs();
            }
        }
        ThetaSlice::UnitSphere => {
            let r = full[theta.clone()]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if r < 1e-300 {
                return Err(Error::ZeroCovector);
            }
            for t in theta.clone() {
                full[t] /= r;
            }
        }
    }
    Ok(full)
}

/// `(x, d_xφ; y, −d_yφ)` at a critical point.
pub fn relation_point_from_phase(
    phase: &PhaseFunction,
    crit: &[f64],
    tol: f64,
) -> Result<RelationPoint> {
    let j = jet::jet_of_map_any(phase.map.as_ref(), crit, 1)?;
    let g = j[0].gradient();
    let scale = 1.0 + max_abs(&crit[phase.theta_range()]);
    let residual = max_abs(&g[phase.theta_range()]);
    if residual > tol * scale {
        return Err(Error::NotCritical { residual });
    }
    let (nx, ny) = (phase.nx, phase.ny);
    let xi: Vec<f64> = g[..nx].to_vec();
    let eta: Vec<f64> = g[nx..nx + ny].iter().map(|v| -v).collect();
    if max_abs(&xi) <= 1e-14 * scale || max_abs(&eta) <= 1e-14 * scale {
        return Err(Error::ZeroCovector);
    }
    Ok(RelationPoint {
        left: CotangentPoint {
            base: crit[..nx].to_vec(),
            covector: xi,
        },
        right: CotangentPoint {
            base: crit[nx..nx + ny].to_vec(),
            covector: eta,
        },
    })
}

/// Polynomial curve `t ↦ (Σ_j c_kj t^j)_k`.
pub fn polynomial_curve(coeffs: Vec<Vec<f64>>) -> SmoothMapHandle {
    let n = coeffs.len();
    smooth_map(1, n, "polynomial_curve", move |t| {
        coeffs
            .iter()
            .map(|c| {
                let mut acc = t[0].lift(*c.last().unwrap_or(&0.0));
                for &cj in c.iter().rev().skip(1) {
                    acc = acc * &t[0] + cj;
                }
                acc
            })
            .collect()
    })
}

fn monomial_curve(powers: &[usize]) -> SmoothMapHandle {
    let coeffs = powers
        .iter()
        .map(|&p| {
            let mut c = vec![0.0; p + 1];
            c[p] = 1.0;
            c
        })
        .collect();
    polynomial_curve(coeffs)
}

/// Minimum of `|det[γ', γ'', …, γ⁽ⁿ⁾]|` over `samples` points of `[a, b]`.
pub fn curve_nondegeneracy_check(
    gamma: &dyn SmoothMap,
    range: (f64, f64),
    samples: usize,
) -> Result<(f64, f64)> {
    let n = gamma.dim_out();
    if gamma.dim_in() != 1 || n > jet::MAX_ORDER {
        return Err(Error::InvalidInput(
            "curve must map ℝ into ℝⁿ with n ≤ 4".into(),
        ));
    }
    let samples = samples.max(200);
    let mut worst = (f64::INFINITY, range.0);
    for s in 0..samples {
        let t = range.0 + (range.1 - range.0) * s as f64 / (samples - 1) as f64;
        let j = jet::jet_of_map(gamma, &[t], n)?;
        let rows: Vec<Vec<f64>> = (1..=n)
            .map(|k| j.iter().map(|c| c.derivative(&vec![0; k])).collect())
            .collect();
        let d = jet::det_f64(&rows).abs();
        if d < worst.0 {
            worst = (d, t);
        }
    }
    Ok(worst)
}

/// Chart of the conormal relation of translates of a graph-form curve.
/// Parameters `(x₁..x_n, y₁, θ₂..θ_n)`.
pub fn curve_chart(name: &str, gamma: SmoothMapHandle) -> Result<RelationChart> {
    let n = gamma.dim_out();
    if gamma.dim_in() != 1 || n < 2 {
        return Err(Error::InvalidInput(
            "curve must map ℝ into ℝⁿ, n ≥ 2".into(),
        ));
    }
    for t in [-0.9, -0.3, 0.0, 0.4, 1.1] {
        let v = jet::eval_point(gamma.as_ref(), &[t])?;
        if (v[0] - t).abs() > 1e-12 {
            return Err(Error::InvalidInput(
                "curve must be in graph form with first component t".into(),
            ));
        }
    }
    let g = gamma.clone();
    let map = FnMap::new(2 * n, 4 * n, move |p| {
        let u = &p[0] - &p[n];
        let (vals, grads) = eval_with_gradient(g.as_ref(), std::slice::from_ref(&u))?;
        let theta = |k: usize| &p[n + k];
        let mut xi1 = p[0].lift(0.0);
        for k in 1..n {
            xi1 -= &grads[k][0] * theta(k);
        }
        let mut out: Vec<Jet> = p[..n].to_vec();
        let xi: Vec<Jet> = std::iter::once(xi1)
            .chain((1..n).map(|k| theta(k).clone()))
            .collect();
        out.extend(xi.iter().cloned());
        out.push(p[n].clone());
        for k in 1..n {
            out.push(&p[k] - &vals[k]);
        }
        out.extend(xi);
        Ok(out)
    })
    .labeled(name)
    .handle();
    let mut params: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    params.push("y1".into());
    params.extend((2..=n).map(|i| format!("theta{i}")));
    Ok(RelationChart::new(
        name,
        ChartKind::Relation { n },
        map,
        params,
    ))
}

/// Closed-form model chart over `(x₁, x₂, x₃, y₁, θ₂, θ₃)`.
pub fn model_c0_chart() -> RelationChart {
    let map = smooth_map(6, 12, "model_c0", |p| {
        let u = &p[0] - &p[3];
        let u2 = &u * &u;
        let (t2, t3) = (&p[4], &p[5]);
        let xi1 = -(&u * t2 * 2.0) - &u2 * &u * t3 * 4.0;
        vec![
            p[0].clone(),
            p[1].clone(),
            p[2].clone(),
            xi1.clone(),
            t2.clone(),
            t3.clone(),
            p[3].clone(),
            &p[1] - &u2,
            &p[2] - &u2 * &u2,
            xi1,
            t2.clone(),
            t3.clone(),
        ]
    });
    RelationChart::new(
        "model_c0",
        ChartKind::Relation { n: 3 },
        map,
        names(&["x1", "x2", "x3", "y1", "theta2", "theta3"]),
    )
}

/// Menn-surface chart over `(x₁, x₂, x₃, y₁, y₂, θ)`.
pub fn menn_c1_chart() -> RelationChart {
    let map = smooth_map(6, 12, "menn_c1", |p| {
        let a = &p[0] - &p[3];
        let b = &p[1] - &p[4];
        let th = &p[5];
        let h = &a * &a * &b - &b * &b;
        let xi1 = -(&a * &b * th * 2.0);
        let xi2 = -((&a * &a - &b * 2.0) * th);
        vec![
            p[0].clone(),
            p[1].clone(),
            p[2].clone(),
            xi1.clone(),
            xi2.clone(),
            th.clone(),
            p[3].clone(),
            p[4].clone(),
            &p[2] - &h,
            xi1,
            xi2,
            th.clone(),
        ]
    });
    RelationChart::new(
        "menn_c1",
        ChartKind::Relation { n: 3 },
        map,
        names(&["x1", "x2", "x3", "y1", "y2", "theta"]),
    )
}

/// Cross-cap unfolding `(x, y) ↦ (x², y; xy, ⅔x³)`.
pub fn umbrella_u_chart() -> RelationChart {
    let map = smooth_map(2, 4, "model_umbrella_U", |p| {
        let (x, y) = (&p[0], &p[1]);
        vec![x * x, y.clone(), x * y, x * x * x * (2.0 / 3.0)]
    });
    RelationChart::new(
        "model_umbrella_U",
        ChartKind::Lagrangian { n: 2 },
        map,
        names(&["x", "y"]),
    )
}

/// `(t, s, θ) ↦ (t², s, −⅔t³s; stθ, ⅔t³θ, θ)`.
pub fn lambda1_chart() -> RelationChart {
    let map = smooth_map(3, 6, "model_lambda1", |p| {
        let (t, s, th) = (&p[0], &p[1], &p[2]);
        let t3 = t * t * t;
        vec![
            t * t,
            s.clone(),
            -(&t3 * s * (2.0 / 3.0)),
            s * t * th,
            &t3 * th * (2.0 / 3.0),
            th.clone(),
        ]
    });
    RelationChart::new(
        "model_lambda1",
        ChartKind::Lagrangian { n: 3 },
        map,
        names(&["t", "s", "theta"]),
    )
}

/// Ingredients of the weak-normal-form phase
/// `(S₂ + w²S₄)(θ₂ − f) + (x₃ − y₃)θ₃ + w⁴S₃ − y₂θ₂`, `w = y₁ − g`.
/// Every function takes `(x₁, x₂, x₃, y₁, θ₂, θ₃)`.
#[derive(Clone)]
pub struct WeakNormalForm {
    pub s2: SmoothMapHandle,
    pub s3: SmoothMapHandle,
    pub s4: SmoothMapHandle,
    pub f: Option<SmoothMapHandle>,
    pub g: Option<SmoothMapHandle>,
}

impl WeakNormalForm {
    /// `S₂ = x₂`, `S₃ = c₃θ₃`, `S₄ = c₄`, `f = 0`, `g = x₁`.
    pub fn simple(c3: f64, c4: f64) -> Self {
        WeakNormalForm {
            s2: smooth_map(6, 1, "S2=x2", |p| vec![p[1].clone()]),
            s3: smooth_map(6, 1, "S3=c3*theta3", move |p| vec![&p[5] * c3]),
            s4: smooth_map(6, 1, "S4=c4", move |p| vec![p[0].lift(c4)]),
            f: None,
            g: None,
        }
    }

    /// The generating function `G(x, y₁, θ₂, θ₃)` with `φ = G − y₂θ₂ − y₃θ₃`.
    pub fn generating_function(&self) -> SmoothMapHandle {
        let w = self.clone();
        FnMap::new(6, 1, move |p| {
            let g = match &w.g {
                Some(g) => g.eval(p)?.remove(0),
                None => p[0].clone(),
            };
            let f = match &w.f {
                Some(f) => f.eval(p)?.remove(0),
                None => p[0].lift(0.0),
            };
            let wv = &p[3] - &g;
            let w2 = &wv * &wv;
            let s2 = w.s2.eval(p)?.remove(0);
            let s3 = w.s3.eval(p)?.remove(0);
            let s4 = w.s4.eval(p)?.remove(0);
            Ok(vec![
                (s2 + &w2 * s4) * (&p[4] - f) + &p[2] * &p[5] + &w2 * &w2 * s3,
            ])
        })
        .labeled("wnf_generating_function")
        .handle()
    }

    /// Full phase on `(x, y, θ₂, θ₃)`.
    pub fn phase(&self) -> PhaseFunction {
        let gen = self.generating_function();
        let map = FnMap::new(8, 1, move |v| {
            let args = [
                v[0].clone(),
                v[1].clone(),
                v[2].clone(),
                v[3].clone(),
                v[6].clone(),
                v[7].clone(),
            ];
            let g = gen.eval(&args)?.remove(0);
            Ok(vec![g - &v[4] * &v[6] - &v[5] * &v[7]])
        })
        .labeled("wnf_phase")
        .handle();
        PhaseFunction {
            nx: 3,
            ny: 3,
            ntheta: 2,
            map,
            degree: 1.0,
        }
    }

    /// Checks `∂_{x₂}S₂ ≠ 0` and `S₃, S₄ ≠ 0` at the sample points.
    pub fn check_conditions(&self, samples: &[Vec<f64>]) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for p in samples {
            let d2 = jet::jet_of_map(self.s2.as_ref(), p, 1)?[0].derivative(&[1]);
            let s3 = jet::eval_point(self.s3.as_ref(), p)?[0];
            let s4 = jet::eval_point(self.s4.as_ref(), p)?[0];
            worst = worst.min(d2.abs()).min(s3.abs()).min(s4.abs());
        }
        if worst <= 1e-12 {
            return Err(Error::InvalidInput(format!(
                "weak normal form condition fails (min {worst:.3e})"
            )));
        }
        Ok(worst)
    }

    /// Chart over `(x₁, x₂, x₃, y₁, θ₂, θ₃)`:
    /// `(x, ∂ₓG; y₁, ∂_{θ₂}G, ∂_{θ₃}G, −∂_{y₁}G, θ₂, θ₃)`.
    pub fn chart(&self) -> RelationChart {
        let gen = self.generating_function();
        let map = FnMap::new(6, 12, move |p| {
            let (_, grad) = eval_with_gradient(gen.as_ref(), p)?;
            let d = &grad[0];
            Ok(vec![
                p[0].clone(),
                p[1].clone(),
                p[2].clone(),
                d[0].clone(),
                d[1].clone(),
                d[2].clone(),
                p[3].clone(),
                d[4].clone(),
                d[5].clone(),
                -&d[3],
                p[4].clone(),
                p[5].clone(),
            ])
        })
        .labeled("weak_normal_form")
        .handle();
        RelationChart::new(
            "weak_normal_form",
            ChartKind::Relation { n: 3 },
            map,
            names(&["x1", "x2", "x3", "y1", "theta2", "theta3"]),
        )
    }
}

/// Names accepted by [`builtin_chart`].
pub const BUILTIN_CHARTS: &[&str] = &[
    "model_c0",
    "model_c0_curve",
    "menn_c1",
    "curve_r4",
    "fold_control",
    "model_umbrella_U",
    "model_lambda1",
    "weak_normal_form",
];

/// Built-in chart by name. `params` are family-specific:
/// `curve_r4` takes four equal-length coefficient groups (`c_kj` for `t^j`),
/// `weak_normal_form` takes `[c₃, c₄]`; the others take none.
pub fn builtin_chart(name: &str, params: &[f64]) -> Result<RelationChart> {
    match name {
        "model_c0" => Ok(model_c0_chart()),
        "model_c0_curve" => curve_chart(name, monomial_curve(&[1, 2, 4])),
        "menn_c1" => Ok(menn_c1_chart()),
        "fold_control" => curve_chart(name, monomial_curve(&[1, 2, 3])),
        "model_umbrella_U" => Ok(umbrella_u_chart()),
        "model_lambda1" => Ok(lambda1_chart()),
        "weak_normal_form" => {
            let (c3, c4) = match params {
                [] => (1.0, 1.0),
                [a, b] => (*a, *b),
                _ => {
                    return Err(Error::InvalidInput(
                        "weak_normal_form takes [c3, c4]".into(),
                    ))
                }
            };
            let w = WeakNormalForm::simple(c3, c4);
            w.check_conditions(&[vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]])?;
            Ok(w.chart())
        }
        "curve_r4" => {
            let gamma = if params.is_empty() {
                monomial_curve(&[1, 2, 3, 4])
            } else {
                if params.len() % 4 != 0 {
                    return Err(Error::InvalidInput(
                        "curve_r4 needs four equal coefficient groups".into(),
                    ));
                }
                let l = params.len() / 4;
                polynomial_curve(params.chunks(l).map(<[f64]>::to_vec).collect())
            };
            let (min_det, t) = curve_nondegeneracy_check(gamma.as_ref(), (-1.0, 1.0), 201)?;
            if min_det <= 1e-8 {
                return Err(Error::DegenerateCurve { t, det: min_det });
            }
            curve_chart(name, gamma)
        }
        other => Err(Error::UnknownName(other.to_string())),
    }
}
