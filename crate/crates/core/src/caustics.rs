//! Point-source ray tracing for `H(x, ξ) = ½(c(x)⁻² − |ξ|²)`, the flow
//! Jacobian of the launch map `(a₁, a₂, t) ↦ x`, and fold/cusp caustics found
//! as singularities of that map.
//!
//! Rays follow the flow of `−H`: `ẋ = ξ`, `ξ̇ = −c⁻³∇c`, starting from
//! `ξ = p(a)/c(s)` with `p(a) = (a₁, a₂, 1)/√(1 + |a|²)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, JetError, Result};
use crate::jet::{self, Jet, Layout, SmoothMap, SmoothMapHandle};
use crate::linalg;
use crate::ode::{self, Flow, OdeOptions, OwnedNode};
use crate::phase::Side;
use crate::singularity::{self, ClassifyTolerances, SingularClass, SingularityReport};

fn ones() -> [f64; 3] {
    [1.0; 3]
}

/// Background sound speed.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SoundSpeedModel {
    Constant {
        c: f64,
    },
    /// `c = background·(1 − amplitude·exp(−Σ (sᵢ(xᵢ − mᵢ))² / 2σ²))`; a zero
    /// stretch component makes the lens invariant along that axis.
    GaussianLens {
        background: f64,
        amplitude: f64,
        center: [f64; 3],
        width: f64,
        #[serde(default = "ones")]
        stretch: [f64; 3],
    },
    /// Any positive smooth map `ℝ³ → ℝ`.
    #[serde(skip)]
    Custom(SmoothMapHandle),
}

impl fmt::Debug for SoundSpeedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SoundSpeedModel::Constant { c } => write!(f, "Constant({c})"),
            SoundSpeedModel::GaussianLens {
                background,
                amplitude,
                center,
                width,
                stretch,
            } => f
                .debug_struct("GaussianLens")
                .field("background", background)
                .field("amplitude", amplitude)
                .field("center", center)
                .field("width", width)
                .field("stretch", stretch)
                .finish(),
            SoundSpeedModel::Custom(m) => write!(f, "Custom({})", m.label().unwrap_or("map")),
        }
    }
}

/// Value, gradient and Hessian of the speed at a point.
#[derive(Debug, Clone, Copy)]
pub struct SpeedLocal {
    pub c: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

impl SoundSpeedModel {
    pub fn gaussian_lens(background: f64, amplitude: f64, center: [f64; 3], width: f64) -> Self {
        SoundSpeedModel::GaussianLens {
            background,
            amplitude,
            center,
            width,
            stretch: ones(),
        }
    }

    /// Lens used by the default scan: a Gaussian tube along `x₂` in front of
    /// a unit-speed background.
    pub fn default_lens() -> Self {
        SoundSpeedModel::GaussianLens {
            background: 1.0,
            amplitude: 0.3,
            center: [0.0, 0.0, 1.0],
            width: 0.2,
            stretch: [1.0, 0.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SoundSpeedModel::Constant { c } if !(c > 0.0) => Err(Error::InvalidInput(
                "constant speed must be positive".into(),
            )),
            SoundSpeedModel::GaussianLens {
                background,
                amplitude,
                width,
                ..
            } if !(background > 0.0 && (0.0..1.0).contains(&amplitude) && width > 0.0) => {
                Err(Error::InvalidInput(
                    "lens needs background > 0, 0 ≤ amplitude < 1 and width > 0".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    /// Closed-form local data for the built-ins, jets for custom maps.
    pub fn local(&self, x: [f64; 3]) -> Result<SpeedLocal> {
        match *self {
            SoundSpeedModel::Constant { c } => Ok(SpeedLocal {
                c,
                grad: [0.0; 3],
                hess: [[0.0; 3]; 3],
            }),
            SoundSpeedModel::GaussianLens {
                background,
                amplitude,
                center,
                width,
                stretch,
            } => {
                let s2 = stretch.map(|s| s * s);
                let d = [0, 1, 2].map(|i| x[i] - center[i]);
                let w2 = width * width;
                let q: f64 = (0..3).map(|i| s2[i] * d[i] * d[i]).sum::<f64>() / (2.0 * w2);
                let e = background * amplitude * (-q).exp();
                let g = [0, 1, 2].map(|i| s2[i] * d[i] / w2);
                let mut hess = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        let diag = if i == j { s2[i] / w2 } else { 0.0 };
                        hess[i][j] = e * (diag - g[i] * g[j]);
                    }
                }
                Ok(SpeedLocal {
                    c: background - e,
                    grad: g.map(|v| e * v),
                    hess,
                })
            }
            SoundSpeedModel::Custom(ref m) => {
                let j = jet::jet_of_map(m.as_ref(), &x, 2)?;
                let h = j[0].hessian();
                let g = j[0].gradient();
                Ok(SpeedLocal {
                    c: j[0].value(),
                    grad: [g[0], g[1], g[2]],
                    hess: [0, 1, 2].map(|i| [h[i][0], h[i][1], h[i][2]]),
                })
            }
        }
    }

    /// Speed and its gradient on jets.
    pub fn jets(&self, x: &[Jet]) -> Result<(Jet, Vec<Jet>)> {
        match *self {
            SoundSpeedModel::Constant { c } => Ok((x[0].lift(c), vec![x[0].lift(0.0); 3])),
            SoundSpeedModel::GaussianLens {
                background,
                amplitude,
                center,
                width,
                stretch,
            } => {
                let w2 = width * width;
                let d: Vec<Jet> = (0..3).map(|i| &x[i] - center[i]).collect();
                let mut q = x[0].lift(0.0);
                for i in 0..3 {
                    q += &d[i] * &d[i] * (stretch[i] * stretch[i] / (2.0 * w2));
                }
                let e = (-q).exp() * (background * amplitude);
                let grad = (0..3)
                    .map(|i| &e * &d[i] * (stretch[i] * stretch[i] / w2))
                    .collect();
                Ok((background - e, grad))
            }
            SoundSpeedModel::Custom(ref m) => {
                let (v, g) = jet::eval_with_gradient(m.as_ref(), x)?;
                Ok((v[0].clone(), g[0].clone()))
            }
        }
    }

    /// The speed as a [`SmoothMap`].
    pub fn map(&self) -> SmoothMapHandle {
        if let SoundSpeedModel::Custom(m) = self {
            return m.clone();
        }
        let model = self.clone();
        jet::FnMap::new(3, 1, move |x| {
            model
                .jets(x)
                .map(|(c, _)| vec![c])
                .map_err(|e| JetError::Domain(e.to_string()))
        })
        .labeled("sound_speed")
        .handle()
    }

    pub fn hamiltonian(&self, x: [f64; 3], xi: [f64; 3]) -> Result<f64> {
        let c = self.local(x)?.c;
        Ok(0.5 * (c.powi(-2) - xi.iter().map(|v| v * v).sum::<f64>()))
    }
}

/// Takeoff direction `p(a)` and its derivatives `∂p/∂a₁`, `∂p/∂a₂`.
pub fn launch_direction(a: [f64; 2]) -> ([f64; 3], [[f64; 3]; 2]) {
    let r = (1.0 + a[0] * a[0] + a[1] * a[1]).sqrt();
    let v = [a[0], a[1], 1.0];
    let p = v.map(|c| c / r);
    let dp = [0, 1]
        .map(|k| [0, 1, 2].map(|i| (if i == k { 1.0 } else { 0.0 }) / r - v[i] * a[k] / r.powi(3)));
    (p, dp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceOptions {
    pub t_max: f64,
    /// Rays leaving `[lo, hi]³` stop with `LeftDomain`.
    pub domain: [f64; 2],
    pub ode: OdeOptions,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            t_max: 2.0,
            domain: [-4.0, 4.0],
            ode: OdeOptions::default(),
        }
    }
}

/// A point of the Lagrangian sheet with its flow Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaySample {
    pub t: f64,
    pub x: [f64; 3],
    pub xi: [f64; 3],
    /// `∂x/∂(a₁, a₂, t)`, rows are components of `x`.
    pub jacobian: [[f64; 3]; 3],
    pub det: f64,
    pub hamiltonian: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayTrajectory {
    pub launch: [f64; 2],
    pub direction: [f64; 3],
    pub samples: Vec<RaySample>,
    /// Largest `|H|` relative to `½c(s)⁻²`.
    pub h_drift: f64,
}

/// CSV row of a traced ray.
#[derive(Debug, Clone, Serialize)]
pub struct RayRow {
    pub a1: f64,
    pub a2: f64,
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
    pub det: f64,
    pub hamiltonian: f64,
}

impl RayTrajectory {
    pub fn rows(&self) -> Vec<RayRow> {
        self.samples
            .iter()
            .map(|s| RayRow {
                a1: self.launch[0],
                a2: self.launch[1],
                t: s.t,
                x1: s.x[0],
                x2: s.x[1],
                x3: s.x[2],
                xi1: s.xi[0],
                xi2: s.xi[1],
                xi3: s.xi[2],
                det: s.det,
                hamiltonian: s.hamiltonian,
            })
            .collect()
    }
}

/// State layout: `x, ξ, ∂₁x, ∂₂x, ∂₁ξ, ∂₂ξ`.
const STATE: usize = 18;

fn force(l: &SpeedLocal) -> [f64; 3] {
    let c3 = l.c.powi(-3);
    l.grad.map(|g| -c3 * g)
}

fn variational_rhs(model: &SoundSpeedModel, y: &[f64], dy: &mut [f64]) -> Result<()> {
    let x = [y[0], y[1], y[2]];
    let l = model.local(x)?;
    if !(l.c > 0.0) {
        return Err(Error::InvalidInput(format!(
            "speed is not positive at {x:?}"
        )));
    }
    let g = force(&l);
    // D(−c⁻³∇c) = 3c⁻⁴ ∇c∇cᵀ − c⁻³ ∇²c
    let (c3, c4) = (l.c.powi(-3), l.c.powi(-4));
    let dg =
        [0, 1, 2].map(|i| [0, 1, 2].map(|j| 3.0 * c4 * l.grad[i] * l.grad[j] - c3 * l.hess[i][j]));
    dy[..3].copy_from_slice(&y[3..6]);
    dy[3..6].copy_from_slice(&g);
    dy[6..12].copy_from_slice(&y[12..18]);
    for k in 0..2 {
        let dx = &y[6 + 3 * k..9 + 3 * k];
        for i in 0..3 {
            dy[12 + 3 * k + i] = (0..3).map(|j| dg[i][j] * dx[j]).sum();
        }
    }
    Ok(())
}

fn initial_state(model: &SoundSpeedModel, source: [f64; 3], a: [f64; 2]) -> Result<Vec<f64>> {
    let c = model.local(source)?.c;
    let (p, dp) = launch_direction(a);
    let mut y = vec![0.0; STATE];
    y[..3].copy_from_slice(&source);
    for i in 0..3 {
        y[3 + i] = p[i] / c;
        y[12 + i] = dp[0][i] / c;
        y[15 + i] = dp[1][i] / c;
    }
    Ok(y)
}

fn jacobian_of(y: &[f64]) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [y[6 + i], y[9 + i], y[3 + i]])
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn outside(x: &[f64], domain: [f64; 2]) -> bool {
    x[..3].iter().any(|&c| c < domain[0] || c > domain[1])
}

/// Accepted integrator nodes of the state plus variational system.
fn trace_nodes(
    model: &SoundSpeedModel,
    source: [f64; 3],
    a: [f64; 2],
    opts: &TraceOptions,
) -> Result<Vec<OwnedNode>> {
    let y0 = initial_state(model, source, a)?;
    let mut nodes = Vec::new();
    ode::integrate(
        |_, y, dy| variational_rhs(model, y, dy),
        0.0,
        &y0,
        opts.t_max,
        &opts.ode,
        |n| {
            if outside(n.y, opts.domain) {
                return Err(Error::LeftDomain { t: n.t });
            }
            nodes.push(OwnedNode::of(n));
            Ok(Flow::Continue)
        },
    )?;
    Ok(nodes)
}

fn sample_of(model: &SoundSpeedModel, t: f64, y: &[f64]) -> Result<RaySample> {
    let x = [y[0], y[1], y[2]];
    let xi = [y[3], y[4], y[5]];
    let jacobian = jacobian_of(y);
    Ok(RaySample {
        t,
        x,
        xi,
        jacobian,
        det: det3(&jacobian),
        hamiltonian: model.hamiltonian(x, xi)?,
    })
}

/// Traces one ray with its flow Jacobian.
pub fn trace_ray(
    model: &SoundSpeedModel,
    source: [f64; 3],
    a: [f64; 2],
    opts: &TraceOptions,
) -> Result<RayTrajectory> {
    model.validate()?;
    let nodes = trace_nodes(model, source, a, opts)?;
    let scale = 0.5 * model.local(source)?.c.powi(-2);
    let samples = nodes
        .iter()
        .map(|n| sample_of(model, n.t, &n.y))
        .collect::<Result<Vec<_>>>()?;
    let h_drift = samples
        .iter()
        .fold(0.0f64, |m, s| m.max(s.hamiltonian.abs()))
        / scale;
    Ok(RayTrajectory {
        launch: a,
        direction: launch_direction(a).0,
        samples,
        h_drift,
    })
}

fn embed(j: &Jet, target: &Arc<Layout>) -> Jet {
    let mut coeffs = vec![0.0; target.len()];
    let mut exps = vec![0u8; target.dim()];
    for (m, &c) in j.coeffs().iter().enumerate() {
        let e = j.layout().exponents(m);
        exps[..e.len()].copy_from_slice(e);
        if let Some(r) = target.index_of(&exps) {
            coeffs[r] = c;
        }
    }
    Jet::from_coeffs(target, coeffs)
}

fn jet_force(model: &SoundSpeedModel, x: &[Jet]) -> Result<Vec<Jet>> {
    let (c, grad) = model.jets(x)?;
    let c3 = c.powi(3).recip();
    Ok(grad.iter().map(|g| -(g * &c3)).collect())
}

/// Local Taylor jets of `x` in `(δa₁, δa₂, δt)` at `(a, t)` up to `order`.
///
/// Launch-parameter derivatives come from integrating the Taylor-coefficient
/// system with the same embedded Runge–Kutta scheme; time derivatives from
/// Picard iteration of Hamilton's equations at the endpoint.
pub fn ray_jets(
    model: &SoundSpeedModel,
    source: [f64; 3],
    a: [f64; 2],
    t: f64,
    order: usize,
    opts: &TraceOptions,
) -> Result<Vec<Jet>> {
    let l2 = Layout::get(2, order);
    let width = l2.len();
    let av = [Jet::variable(&l2, 0, a[0]), Jet::variable(&l2, 1, a[1])];
    let r = (&av[0] * &av[0] + &av[1] * &av[1] + 1.0).sqrt();
    let c0 = model.local(source)?.c;
    let p = [&av[0] / &r, &av[1] / &r, r.recip()];
    let mut y0 = vec![0.0; 6 * width];
    for i in 0..3 {
        y0[i * width] = source[i];
        let xi = &p[i] * (1.0 / c0);
        y0[(3 + i) * width..(4 + i) * width].copy_from_slice(xi.coeffs());
    }
    let unpack =
        |y: &[f64], k: usize| Jet::from_coeffs(&l2, y[k * width..(k + 1) * width].to_vec());
    let (_, y) = ode::integrate(
        |_, y, dy| {
            let x: Vec<Jet> = (0..3).map(|k| unpack(y, k)).collect();
            let g = jet_force(model, &x)?;
            dy[..3 * width].copy_from_slice(&y[3 * width..]);
            for (i, gi) in g.iter().enumerate() {
                dy[(3 + i) * width..(4 + i) * width].copy_from_slice(gi.coeffs());
            }
            Ok(())
        },
        0.0,
        &y0,
        t,
        &opts.ode,
        |n| {
            let x: Vec<f64> = (0..3).map(|k| n.y[k * width]).collect();
            if outside(&x, opts.domain) {
                return Err(Error::LeftDomain { t: n.t });
            }
            Ok(Flow::Continue)
        },
    )?;
    let l3 = Layout::get(3, order);
    let x0: Vec<Jet> = (0..3).map(|k| embed(&unpack(&y, k), &l3)).collect();
    let xi0: Vec<Jet> = (3..6).map(|k| embed(&unpack(&y, k), &l3)).collect();
    let (mut x, mut xi) = (x0.clone(), xi0.clone());
    for _ in 0..=order + 1 {
        let g = jet_force(model, &x)?;
        let next_x: Vec<Jet> = (0..3).map(|i| &x0[i] + xi[i].integrate(2)).collect();
        xi = (0..3).map(|i| &xi0[i] + g[i].integrate(2)).collect();
        x = next_x;
    }
    Ok(x)
}

/// The launch map `(a₁, a₂, t) ↦ x` as a [`SmoothMap`].
pub struct RayMap {
    pub model: SoundSpeedModel,
    pub source: [f64; 3],
    pub opts: TraceOptions,
}

impl SmoothMap for RayMap {
    fn dim_in(&self) -> usize {
        3
    }
    fn dim_out(&self) -> usize {
        3
    }
    fn eval(&self, q: &[Jet]) -> std::result::Result<Vec<Jet>, JetError> {
        if q.len() != 3 {
            return Err(JetError::Arity {
                expected: 3,
                got: q.len(),
            });
        }
        let local = ray_jets(
            &self.model,
            self.source,
            [q[0].value(), q[1].value()],
            q[2].value(),
            q[0].order(),
            &self.opts,
        )
        .map_err(|e| JetError::Domain(e.to_string()))?;
        Ok(local.iter().map(|l| l.compose(q)).collect())
    }
    fn label(&self) -> Option<&str> {
        Some("launch_map")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaunchGrid {
    pub a1: [f64; 2],
    pub a2: [f64; 2],
    pub n1: usize,
    pub n2: usize,
}

impl LaunchGrid {
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        let lin = |r: [f64; 2], k: usize, n: usize| {
            if n < 2 {
                0.5 * (r[0] + r[1])
            } else {
                r[0] + (r[1] - r[0]) * k as f64 / (n - 1) as f64
            }
        };
        [lin(self.a1, i, self.n1), lin(self.a2, j, self.n2)]
    }

    pub fn spacing(&self) -> [f64; 2] {
        [
            (self.a1[1] - self.a1[0]) / (self.n1.max(2) - 1) as f64,
            (self.a2[1] - self.a2[0]) / (self.n2.max(2) - 1) as f64,
        ]
    }

    pub fn with_size(&self, n1: usize, n2: usize) -> Self {
        LaunchGrid { n1, n2, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausticTolerances {
    /// `σ_min ≤ singular · scale` counts as singular.
    pub singular: f64,
    /// Normalized `|d(det)(v)|` above this is a fold.
    pub fold: f64,
    /// Normalized `|d²(det)(v, v)|` above this is needed for a cusp.
    pub cusp: f64,
    pub rank: f64,
    /// Crossings earlier than this are ignored (the source itself).
    pub t_min: f64,
    /// Cusp roots closer than this in `(a, t)` are merged.
    pub merge: f64,
}

impl Default for CausticTolerances {
    fn default() -> Self {
        CausticTolerances {
            singular: 1e-8,
            fold: 1e-3,
            cusp: 1e-3,
            rank: 1e-6,
            t_min: 0.05,
            merge: 1e-6,
        }
    }
}

impl CausticTolerances {
    fn classify(&self) -> ClassifyTolerances {
        ClassifyTolerances {
            singular: self.singular,
            fold: self.fold,
            cusp: self.cusp,
            rank: self.rank,
        }
    }
}

fn default_model() -> SoundSpeedModel {
    SoundSpeedModel::default_lens()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default = "default_model")]
    pub model: SoundSpeedModel,
    pub source: [f64; 3],
    pub grid: LaunchGrid,
    pub t_max: f64,
    #[serde(default)]
    pub tolerances: CausticTolerances,
    #[serde(default = "default_domain")]
    pub domain: [f64; 2],
    #[serde(default)]
    pub integrator: OdeOptions,
}

fn default_domain() -> [f64; 2] {
    [-4.0, 4.0]
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            model: SoundSpeedModel::default_lens(),
            source: [0.05, 0.0, 0.0],
            grid: LaunchGrid {
                a1: [-0.4, 0.4],
                a2: [-0.3, 0.3],
                n1: 17,
                n2: 5,
            },
            t_max: 2.0,
            tolerances: CausticTolerances::default(),
            domain: default_domain(),
            integrator: OdeOptions::default(),
        }
    }
}

impl ScanConfig {
    pub fn trace_options(&self) -> TraceOptions {
        TraceOptions {
            t_max: self.t_max,
            domain: self.domain,
            ode: self.integrator,
        }
    }

    pub fn ray_map(&self) -> RayMap {
        RayMap {
            model: self.model.clone(),
            source: self.source,
            opts: self.trace_options(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.tolerances;
        if [t.singular, t.fold, t.cusp, t.rank, t.t_min, t.merge]
            .iter()
            .any(|v| !(*v > 0.0))
        {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if !(self.t_max > t.t_min) || self.grid.n1 == 0 || self.grid.n2 == 0 {
            return Err(Error::InvalidInput(
                "need t_max > t_min and a nonempty launch grid".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CausticClass {
    None,
    Fold,
    Cusp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausticReport {
    pub launch: [f64; 2],
    pub t: f64,
    pub x: [f64; 3],
    /// Index of the `det J` sign change along the ray the root came from.
    pub crossing: usize,
    pub class: CausticClass,
    /// `(det, d(det)(v), d²(det)(v, v))`, normalized by the product of the two
    /// largest singular values of `J`.
    pub residuals: [f64; 3],
    /// Smallest singular value of the normalized `[∇det; ∇(d(det)(v))]`.
    pub rank2_margin: Option<f64>,
    /// Kernel direction of `J`, oriented with nonnegative `a₁` component.
    pub kernel: [f64; 3],
}

impl CausticReport {
    fn from_singularity(rep: &SingularityReport, crossing: usize, x: [f64; 3]) -> Self {
        let r = |k: &str| rep.residuals.get(k).copied().unwrap_or(f64::NAN);
        let kernel = rep.kernel.clone().unwrap_or_else(|| vec![0.0; 3]);
        let flip = if kernel[0] < 0.0 { -1.0 } else { 1.0 };
        let class = match rep.class {
            SingularClass::Fold => CausticClass::Fold,
            SingularClass::Cusp => CausticClass::Cusp,
            _ => CausticClass::None,
        };
        let r1 = r("r1_det") / r("normalizer");
        let r2 = r("r2_normalized") * flip;
        let r3 = r("r3_normalized");
        CausticReport {
            launch: [rep.point[0], rep.point[1]],
            t: rep.point[2],
            x,
            crossing,
            class,
            residuals: [r1, r2, r3],
            rank2_margin: rep.residuals.get("rank2_margin").copied(),
            kernel: [kernel[0] * flip, kernel[1] * flip, kernel[2] * flip],
        }
    }

    /// Launch-parameter and time coordinates.
    pub fn point(&self) -> [f64; 3] {
        [self.launch[0], self.launch[1], self.t]
    }
}

/// The residual triple of a report.
pub fn caustic_condition_residuals(report: &CausticReport) -> [f64; 3] {
    report.residuals
}

/// CSV row of a caustic point.
#[derive(Debug, Clone, Serialize)]
pub struct CausticRow {
    pub class: CausticClass,
    pub crossing: usize,
    pub a1: f64,
    pub a2: f64,
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

impl From<&CausticReport> for CausticRow {
    fn from(r: &CausticReport) -> Self {
        CausticRow {
            class: r.class,
            crossing: r.crossing,
            a1: r.launch[0],
            a2: r.launch[1],
            t: r.t,
            x1: r.x[0],
            x2: r.x[1],
            x3: r.x[2],
            r1: r.residuals[0],
            r2: r.residuals[1],
            r3: r.residuals[2],
        }
    }
}

/// A `det J` sign change located along one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub launch: [f64; 2],
    pub index: usize,
    pub t: f64,
    /// `∂_t det J` at the crossing.
    pub det_rate: f64,
    /// Unit kernel of `J`, oriented with nonnegative `a₁` component.
    pub kernel: [f64; 3],
}

fn det_rate(j: &[[f64; 3]; 3], jdot: &[[f64; 3]; 3]) -> f64 {
    (0..3)
        .map(|c| {
            let mut m = *j;
            for r in 0..3 {
                m[r][c] = jdot[r][c];
            }
            det3(&m)
        })
        .sum()
}

/// Sign changes of `det J` for `t ≥ t_min`, located by bisection on the
/// Hermite interpolant of the state between accepted steps.
fn ray_crossings(
    model: &SoundSpeedModel,
    source: [f64; 3],
    a: [f64; 2],
    opts: &TraceOptions,
    t_min: f64,
) -> Result<Vec<Crossing>> {
    let nodes = trace_nodes(model, source, a, opts)?;
    let det_at = |y: &[f64]| det3(&jacobian_of(y));
    let mut out = Vec::new();
    for w in nodes.windows(2) {
        let (n0, n1) = (&w[0], &w[1]);
        if n1.t < t_min {
            continue;
        }
        let (d0, d1) = (det_at(&n0.y), det_at(&n1.y));
        if d0 == 0.0 || d0.signum() == d1.signum() || n0.t < t_min {
            continue;
        }
        let (mut lo, mut hi) = (n0.t, n1.t);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let dm = det_at(&ode::hermite(&n0.view(), &n1.view(), mid));
            if dm.signum() == d0.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        let y = ode::hermite(&n0.view(), &n1.view(), t);
        let mut dy = vec![0.0; STATE];
        variational_rhs(model, &y, &mut dy)?;
        let j = jacobian_of(&y);
        let jdot = jacobian_of(&dy);
        let (k, _) = linalg::kernel_vector(&linalg::to_matrix(
            &j.iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        ));
        let flip = if k[0] < 0.0 { -1.0 } else { 1.0 };
        out.push(Crossing {
            launch: a,
            index: out.len(),
            t,
            det_rate: det_rate(&j, &jdot),
            kernel: [k[0] * flip, k[1] * flip, k[2] * flip],
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausticScan {
    pub reports: Vec<CausticReport>,
    pub rays: usize,
    /// Rays that left the domain or failed to integrate.
    pub rays_failed: usize,
    pub crossings: usize,
    /// Polished roots the classifier could not place as fold or cusp.
    pub unclassified: usize,
    pub h_drift_max: f64,
}

impl CausticScan {
    pub fn count(&self, class: CausticClass) -> usize {
        self.reports.iter().filter(|r| r.class == class).count()
    }

    pub fn rows(&self) -> Vec<CausticRow> {
        self.reports.iter().map(CausticRow::from).collect()
    }
}

fn classify_root(
    map: &RayMap,
    p: &[f64],
    crossing: usize,
    tol: &ClassifyTolerances,
) -> Result<CausticReport> {
    let rep = singularity::classify_map(map, Side::Left, p, tol)?;
    let x = jet::eval_point(map, p)?;
    Ok(CausticReport::from_singularity(
        &rep,
        crossing,
        [x[0], x[1], x[2]],
    ))
}

fn refine_cusp(
    map: &RayMap,
    seed: [f64; 3],
    crossing: usize,
    tol: &ClassifyTolerances,
) -> Option<CausticReport> {
    let rep = singularity::sigma11_solve_map(map, Side::Left, &seed, [0, 2]).ok()?;
    let out = classify_root(map, &rep.point, crossing, tol).ok()?;
    (out.class == CausticClass::Cusp).then_some(out)
}

/// Traces the launch grid, polishes every `det J` sign change with Newton in
/// `t`, classifies the roots and locates cusps between fold roots whose
/// kernel-directional derivative changes sign along `a₁`.
pub fn caustic_scan(cfg: &ScanConfig) -> Result<CausticScan> {
    cfg.validate()?;
    let opts = cfg.trace_options();
    let tol = cfg.tolerances.classify();
    let map = cfg.ray_map();
    let launches: Vec<(usize, usize)> = (0..cfg.grid.n2)
        .flat_map(|j| (0..cfg.grid.n1).map(move |i| (i, j)))
        .collect();
    let traced = crate::par_map(&launches, |&(i, j)| {
        let a = cfg.grid.point(i, j);
        let crossings = ray_crossings(&cfg.model, cfg.source, a, &opts, cfg.tolerances.t_min)?;
        let drift = trace_ray(&cfg.model, cfg.source, a, &opts)?.h_drift;
        Ok::<_, Error>((crossings, drift))
    });
    let mut rays_failed = 0;
    let mut h_drift_max = 0.0f64;
    let mut seeds = Vec::new();
    for (&(i, j), r) in launches.iter().zip(traced) {
        match r {
            Ok((cs, drift)) => {
                h_drift_max = h_drift_max.max(drift);
                seeds.extend(cs.into_iter().map(|c| (i, j, c)));
            }
            Err(_) => rays_failed += 1,
        }
    }
    let polished = crate::par_map(&seeds, |(_, _, c)| {
        let seed = [c.launch[0], c.launch[1], c.t];
        let root = singularity::sigma1_solve_map(&map, &seed, Some(&[0.0, 0.0, 1.0])).ok()?;
        classify_root(&map, &root, c.index, &tol).ok()
    });
    let mut reports = Vec::new();
    let mut unclassified = 0;
    let mut near_cusp = Vec::new();
    let mut folds: Vec<(usize, usize, CausticReport)> = Vec::new();
    for ((i, j, _), rep) in seeds.iter().zip(polished) {
        match rep {
            Some(r) if r.class == CausticClass::Fold => folds.push((*i, *j, r)),
            Some(r) if r.class == CausticClass::Cusp => near_cusp.push(r),
            _ => unclassified += 1,
        }
    }
    // neighbours along a₁ on the same row and crossing index
    let mut cusp_seeds: Vec<([f64; 3], usize)> =
        near_cusp.iter().map(|r| (r.point(), r.crossing)).collect();
    for (i, j, r) in &folds {
        if let Some((_, _, q)) = folds
            .iter()
            .find(|(i2, j2, q)| *i2 == i + 1 && j2 == j && q.crossing == r.crossing)
        {
            if r.residuals[1].signum() != q.residuals[1].signum() {
                let w = r.residuals[1].abs() / (r.residuals[1].abs() + q.residuals[1].abs());
                let p = r.point();
                let s = q.point();
                cusp_seeds.push((
                    [p[0] + w * (s[0] - p[0]), p[1], p[2] + w * (s[2] - p[2])],
                    r.crossing,
                ));
            }
        }
    }
    let cusps = crate::par_map(&cusp_seeds, |&(seed, crossing)| {
        refine_cusp(&map, seed, crossing, &tol)
    });
    let unresolved = near_cusp.len();
    let mut found: Vec<CausticReport> = Vec::new();
    for c in cusps.into_iter().flatten() {
        let p = c.point();
        if !found
            .iter()
            .any(|f| (0..3).all(|k| (f.point()[k] - p[k]).abs() < cfg.tolerances.merge))
        {
            found.push(c);
        }
    }
    // near-cusp roots that did not refine stay unclassified
    let refined_from_near = found.len().min(unresolved);
    unclassified += unresolved - refined_from_near;
    reports.extend(folds.into_iter().map(|(_, _, r)| r));
    reports.extend(found);
    reports.sort_by(|a, b| {
        a.class.cmp(&b.class).then(
            a.point()
                .partial_cmp(&b.point())
                .unwrap_or(std::cmp::Ordering::Equal),
        )
    });
    Ok(CausticScan {
        reports,
        rays: launches.len(),
        rays_failed,
        crossings: seeds.len(),
        unclassified,
        h_drift_max,
    })
}

/// Sign-change bookkeeping on a dense launch grid, independent of the jet
/// classifier: crossing times `t*(a)` of `det J`, and the kernel-directional
/// derivative `d(det)(v) = ∂ₜdet · (v_t − ∇t*·v_a)` with `∇t*` by finite
/// differences over the grid.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    pub grid: LaunchGrid,
    /// Per launch node (row-major in `a₁`), the crossings found.
    pub crossings: Vec<Option<Vec<Crossing>>>,
}

/// Label assigned by the oracle to a root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleLabel {
    Fold,
    Cusp,
    Unresolved,
}

impl DenseOracle {
    pub fn build(cfg: &ScanConfig, grid: LaunchGrid, ode: OdeOptions) -> Result<Self> {
        cfg.validate()?;
        let opts = TraceOptions {
            ode,
            ..cfg.trace_options()
        };
        let nodes: Vec<(usize, usize)> = (0..grid.n2)
            .flat_map(|j| (0..grid.n1).map(move |i| (i, j)))
            .collect();
        let crossings = crate::par_map(&nodes, |&(i, j)| {
            ray_crossings(
                &cfg.model,
                cfg.source,
                grid.point(i, j),
                &opts,
                cfg.tolerances.t_min,
            )
            .ok()
        });
        Ok(DenseOracle { grid, crossings })
    }

    fn at(&self, i: usize, j: usize) -> Option<&Vec<Crossing>> {
        self.crossings.get(i + self.grid.n1 * j)?.as_ref()
    }

    /// Total number of `det J` sign changes seen.
    pub fn sign_changes(&self) -> usize {
        self.crossings.iter().flatten().map(Vec::len).sum()
    }

    fn nearest(&self, i: usize, j: usize, index: usize, t: f64) -> Option<Crossing> {
        let cs = self.at(i, j)?;
        cs.iter()
            .filter(|c| c.index == index)
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .copied()
    }

    /// `d(det)(v)` at grid node `(i, j)` on the crossing nearest to `t`.
    pub fn kernel_rate(&self, i: usize, j: usize, index: usize, t: f64) -> Option<f64> {
        let c = self.nearest(i, j, index, t)?;
        let h = self.grid.spacing();
        let mut grad = [0.0; 2];
        for (k, g) in grad.iter_mut().enumerate() {
            let (n, pos) = if k == 0 {
                (self.grid.n1, i)
            } else {
                (self.grid.n2, j)
            };
            let at = |p: usize| {
                if k == 0 {
                    self.nearest(p, j, index, c.t)
                } else {
                    self.nearest(i, p, index, c.t)
                }
            };
            let (lo, hi) = (pos.saturating_sub(1), (pos + 1).min(n - 1));
            let (a, b) = (at(lo)?, at(hi)?);
            *g = (b.t - a.t) / ((hi - lo) as f64 * h[k]);
        }
        Some(c.det_rate * (c.kernel[2] - grad[0] * c.kernel[0] - grad[1] * c.kernel[1]))
    }

    /// Bilinear interpolation of `d(det)(v)` over the grid cell containing the
    /// root: a cusp when the corner signs differ and the interpolant at the
    /// root is within `band` of zero relative to the corner magnitudes.
    pub fn label(&self, report: &CausticReport, band: f64) -> OracleLabel {
        let h = self.grid.spacing();
        let u = (report.launch[0] - self.grid.a1[0]) / h[0];
        let v = (report.launch[1] - self.grid.a2[0]) / h[1];
        if u < 0.0 || v < 0.0 {
            return OracleLabel::Unresolved;
        }
        let (i, j) = (
            (u.floor() as usize).min(self.grid.n1 - 2),
            (v.floor() as usize).min(self.grid.n2 - 2),
        );
        let (fu, fv) = (u - i as f64, v - j as f64);
        let mut corners = [0.0; 4];
        for (k, c) in corners.iter_mut().enumerate() {
            match self.kernel_rate(i + (k & 1), j + (k >> 1), report.crossing, report.t) {
                Some(r) => *c = r,
                None => return OracleLabel::Unresolved,
            }
        }
        let interp = corners[0] * (1.0 - fu) * (1.0 - fv)
            + corners[1] * fu * (1.0 - fv)
            + corners[2] * (1.0 - fu) * fv
            + corners[3] * fu * fv;
        let big = corners.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let mixed = corners.iter().any(|c| c.signum() != corners[0].signum());
        if interp.abs() > band * big {
            OracleLabel::Fold
        } else if mixed {
            OracleLabel::Cusp
        } else {
            OracleLabel::Unresolved
        }
    }
}
