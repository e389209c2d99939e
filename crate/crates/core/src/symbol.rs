//! Principal-symbol magnitudes `E^{1/2}` from Hörmander's Jacobian formula on
//! the two branches of a degenerate critical set, and the blow-up exponent
//! near `Δ ∩ C̃`.

use serde::{Deserialize, Serialize};

use crate::composition::{Branch, ReducedPhase, PHASE_VARIABLES};
use crate::error::{Error, Result};
use crate::jet::{self, SmoothMapHandle};
use crate::linalg::max_abs;

/// Fiber variables `(θ₂, θ₃, τ)` inside [`PHASE_VARIABLES`].
pub const FIBER: [usize; 3] = [6, 7, 8];

/// Local coordinates `(x, τ, θ₂, θ₃)` on the diagonal branch.
pub const LAMBDA_DIAGONAL: [usize; 6] = [0, 1, 2, 8, 6, 7];
/// Local coordinates `(x, y₁, τ, θ₃)` on the umbrella branch.
pub const LAMBDA_UMBRELLA: [usize; 6] = [0, 1, 2, 3, 8, 7];
/// Alternative umbrella coordinates `(x, y₂, τ, θ₃)`.
pub const LAMBDA_UMBRELLA_Y2: [usize; 6] = [0, 1, 2, 4, 8, 7];

/// The model phase
/// `(x₂−y₂+(τ/θ₃)u)θ₂ + (x₃−y₃+½u(τ/θ₃)³+½(τ/θ₃)u³)θ₃`, `u = x₁ − y₁`,
/// written out directly.
pub fn model_phase() -> SmoothMapHandle {
    jet::smooth_map(9, 1, "model_phase", |v| {
        let u = &v[0] - &v[3];
        let (t2, t3, tau) = (&v[6], &v[7], &v[8]);
        let s = tau / t3;
        let a = &v[1] - &v[4] + &s * &u;
        let b = &v[2] - &v[5] + (&u * &s * &s * &s + &s * &u * &u * &u) * 0.5;
        vec![a * t2 + b * t3]
    })
}

/// A branch of the critical set of a phase on [`PHASE_VARIABLES`] with a
/// choice of local coordinates.
#[derive(Clone)]
pub struct CriticalBranch {
    pub phase: SmoothMapHandle,
    pub branch: Branch,
    pub lambda: Vec<usize>,
}

impl std::fmt::Debug for CriticalBranch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = self.lambda.iter().map(|&i| PHASE_VARIABLES[i]).collect();
        f.debug_struct("CriticalBranch")
            .field("branch", &self.branch)
            .field("lambda", &names)
            .finish()
    }
}

impl CriticalBranch {
    pub fn new(phase: SmoothMapHandle, branch: Branch, lambda: &[usize]) -> Result<Self> {
        let mut sorted = lambda.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if phase.dim_in() != 9 || phase.dim_out() != 1 {
            return Err(Error::InvalidInput(
                "phase must be scalar on (x, y, θ₂, θ₃, τ)".into(),
            ));
        }
        if sorted.len() != 6 || lambda.iter().any(|&i| i >= 9) {
            return Err(Error::InvalidInput(
                "six distinct local coordinates are required".into(),
            ));
        }
        Ok(CriticalBranch {
            phase,
            branch,
            lambda: lambda.to_vec(),
        })
    }

    pub fn model(branch: Branch) -> Self {
        let lambda = if branch == Branch::Diagonal {
            LAMBDA_DIAGONAL
        } else {
            LAMBDA_UMBRELLA
        };
        CriticalBranch {
            phase: model_phase(),
            branch,
            lambda: lambda.to_vec(),
        }
    }

    pub fn reduced(rp: &ReducedPhase, branch: Branch) -> Self {
        let lambda = if branch == Branch::Diagonal {
            LAMBDA_DIAGONAL
        } else {
            LAMBDA_UMBRELLA
        };
        CriticalBranch {
            phase: rp.phase(),
            branch,
            lambda: lambda.to_vec(),
        }
    }
}

/// Signed `det D(λ, ∂φ/∂θ)/D(all variables)` at a critical point.
pub fn critical_jacobian(branch: &CriticalBranch, point: &[f64]) -> Result<f64> {
    let j = jet::jet_of_map(branch.phase.as_ref(), point, 2)?.remove(0);
    let g = j.gradient();
    let fiber: Vec<f64> = FIBER.iter().map(|&k| g[k]).collect();
    let scale = 1.0 + max_abs(&g);
    let residual = max_abs(&fiber);
    if residual > 1e-9 * scale {
        return Err(Error::NotCritical { residual });
    }
    let h = j.hessian();
    let mut rows: Vec<Vec<f64>> = branch
        .lambda
        .iter()
        .map(|&i| (0..9).map(|k| if k == i { 1.0 } else { 0.0 }).collect())
        .collect();
    rows.extend(FIBER.iter().map(|&f| h[f].clone()));
    Ok(jet::det_f64(&rows))
}

/// `E^{1/2} = |det|^{-1/2}`.
pub fn symbol_factor(branch: &CriticalBranch, point: &[f64]) -> Result<f64> {
    let det = critical_jacobian(branch, point)?;
    let scale = 1.0 + max_abs(point).powi(2);
    if !(det.abs() > 1e-13 * scale) {
        return Err(Error::SingularJacobian { det });
    }
    Ok(det.abs().powf(-0.5))
}

/// Least-squares slope of `log factor` against `log δ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub branch: Branch,
    pub exponent: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

/// `count` log-spaced values in `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1).max(1) as f64).exp())
        .collect()
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    let stderr = if xs.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (slope, stderr)
}

/// Fits the blow-up exponent along `path(δ)`, a family of critical points at
/// distance `δ` from `Δ ∩ C̃`.
pub fn blowup_exponent<F>(branch: &CriticalBranch, path: F, deltas: &[f64]) -> Result<FitReport>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    if deltas.len() < 3 {
        return Err(Error::InvalidInput(
            "at least three path samples are required".into(),
        ));
    }
    let mut xs = Vec::with_capacity(deltas.len());
    let mut ys = Vec::with_capacity(deltas.len());
    for &d in deltas {
        let p = path(d)?;
        xs.push(d.ln());
        ys.push(symbol_factor(branch, &p)?.ln());
    }
    let (exponent, stderr) = linear_fit(&xs, &ys);
    Ok(FitReport {
        branch: branch.branch,
        exponent,
        stderr,
        n_samples: deltas.len(),
    })
}

/// Diagonal point with the diagonal distance `Q = θ₂/θ₃ + (3/2)τ²/θ₃² − P₁/θ₃`
/// equal to `delta`.
pub fn diagonal_path_point(
    rp: &ReducedPhase,
    x: [f64; 3],
    tau: f64,
    theta3: f64,
    delta: f64,
) -> Result<Vec<f64>> {
    let mut v = vec![x[0], x[1], x[2], x[0], x[1], x[2], 0.0, theta3, tau];
    let q0 = jet::eval_point(rp.tau_factor().as_ref(), &v)?[0];
    // Q is affine in θ₂ with slope 1/θ₃
    v[6] = (delta - q0) * theta3;
    Ok(v)
}

/// Umbrella point with `x₁ − y₁ = delta`.
pub fn umbrella_path_point(
    rp: &ReducedPhase,
    x: [f64; 3],
    tau: f64,
    theta3: f64,
    delta: f64,
) -> Result<Vec<f64>> {
    rp.umbrella_variables(&[x[0], x[1], x[2], x[0] - delta, theta3, tau])
}

/// Model umbrella point in closed form.
pub fn model_umbrella_point(x: [f64; 3], y1: f64, theta3: f64, tau: f64) -> Vec<f64> {
    let u = x[0] - y1;
    let s = tau / theta3;
    let y2 = x[1] + s * u;
    let y3 = x[2] + 0.5 * s * u.powi(3) + 0.5 * s.powi(3) * u;
    let t2 = -0.5 * u * u * theta3 - 1.5 * s * tau;
    vec![x[0], x[1], x[2], y1, y2, y3, t2, theta3, tau]
}

/// Fits on both branches along matched paths plus the factor ratio range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlowupSummary {
    pub diagonal: FitReport,
    pub umbrella: FitReport,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

pub fn blowup_summary(rp: &ReducedPhase, deltas: &[f64]) -> Result<BlowupSummary> {
    let x = [0.1, -0.2, 0.05];
    let diag = CriticalBranch::reduced(rp, Branch::Diagonal);
    let umb = CriticalBranch::reduced(rp, Branch::Umbrella);
    let dpath = |d: f64| diagonal_path_point(rp, x, 0.0, 1.0, d);
    let upath = |d: f64| umbrella_path_point(rp, x, 0.5, 1.0, d);
    let diagonal = blowup_exponent(&diag, dpath, deltas)?;
    let umbrella = blowup_exponent(&umb, upath, deltas)?;
    let mut ratio_min = f64::INFINITY;
    let mut ratio_max: f64 = 0.0;
    for &d in deltas {
        let r = symbol_factor(&diag, &dpath(d)?)? / symbol_factor(&umb, &upath(d)?)?;
        ratio_min = ratio_min.min(r);
        ratio_max = ratio_max.max(r);
    }
    Ok(BlowupSummary {
        diagonal,
        umbrella,
        ratio_min,
        ratio_max,
    })
}
