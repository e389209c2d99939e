//! Fold/cusp classification of projections, the critical sets `Σ₁` and
//! `Σ₁,₁`, and the flat two-sided cusp certificate.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{self, Jet, SmoothMap};
use crate::linalg::{self, newton, svd_sorted, NewtonOptions};
use crate::phase::{CotangentPoint, RelationChart, Side};
use crate::symplectic::{self, linear_function};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SingularClass {
    Graph,
    Fold,
    Cusp,
    Degenerate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingularityReport {
    pub side: Side,
    pub point: Vec<f64>,
    pub det: f64,
    pub grad_det: Vec<f64>,
    pub kernel: Option<Vec<f64>>,
    pub class: SingularClass,
    pub residuals: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct ClassifyTolerances {
    /// `σ_min ≤ singular · scale` counts as singular.
    pub singular: f64,
    /// Normalized `|d(det)(v)|` above this is a fold.
    pub fold: f64,
    /// Normalized `|d²(det)(v, v)|` above this is needed for a cusp.
    pub cusp: f64,
    /// Relative singular-value floor for the two-gradient rank test.
    pub rank: f64,
}

impl Default for ClassifyTolerances {
    fn default() -> Self {
        ClassifyTolerances {
            singular: 1e-8,
            fold: 1e-6,
            cusp: 1e-6,
            rank: 1e-6,
        }
    }
}

/// Jet data of a square map at a point.
struct Local {
    matrix: DMatrix<f64>,
    det: Jet,
    singular_values: Vec<f64>,
    kernel: Vec<f64>,
}

fn local(map: &dyn SmoothMap, p: &[f64], det_order: usize) -> Result<Local> {
    let d = p.len();
    if map.dim_out() != d {
        return Err(Error::InvalidInput(format!(
            "projection must be square, got {}→{}",
            d,
            map.dim_out()
        )));
    }
    let j = jet::jet_of_map_any(map, p, det_order + 1)?;
    let entries: Vec<Vec<Jet>> = j
        .iter()
        .map(|c| (0..d).map(|k| c.partial(k)).collect())
        .collect();
    let matrix = DMatrix::from_fn(d, d, |r, c| entries[r][c].value());
    let det = jet::det(&entries);
    let (kernel, singular_values) = linalg::kernel_vector(&matrix);
    Ok(Local {
        matrix,
        det,
        singular_values,
        kernel: kernel.iter().copied().collect(),
    })
}

/// Product of the `d − 1` largest singular values: converts determinant
/// derivatives into units of `σ_min`.
fn det_normalizer(s: &[f64]) -> f64 {
    s[..s.len().saturating_sub(1)]
        .iter()
        .product::<f64>()
        .max(f64::MIN_POSITIVE)
}

/// Differential of `π_side ∘ Φ` and its determinant.
pub fn projection_jacobian(
    chart: &RelationChart,
    side: Side,
    p: &[f64],
) -> Result<(DMatrix<f64>, f64)> {
    let rows = jet::jacobian(chart.projection(side).as_ref(), p)?;
    let m = linalg::to_matrix(&rows);
    let det = m.determinant();
    Ok((m, det))
}

/// Classifies a square map at `p`; `side` is only a label.
pub fn classify_map(
    map: &dyn SmoothMap,
    side: Side,
    p: &[f64],
    tol: &ClassifyTolerances,
) -> Result<SingularityReport> {
    let loc = local(map, p, 2)?;
    let d = p.len();
    let s = &loc.singular_values;
    let scale = loc
        .matrix
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let norm = det_normalizer(s);
    let det = loc.det.value();
    let grad_det = loc.det.gradient();
    let mut residuals = BTreeMap::new();
    residuals.insert("sigma_min".to_string(), s[d - 1]);
    residuals.insert("scale".to_string(), scale);
    residuals.insert("r1_det".to_string(), det);
    let mut report = SingularityReport {
        side,
        point: p.to_vec(),
        det,
        grad_det: grad_det.clone(),
        kernel: None,
        class: SingularClass::Graph,
        residuals,
    };
    if s[d - 1] > tol.singular * scale {
        return Ok(report);
    }
    let corank = s.iter().filter(|&&v| v <= tol.singular * scale).count();
    report.kernel = Some(loc.kernel.clone());
    report.residuals.insert("corank".to_string(), corank as f64);
    report.residuals.insert("normalizer".to_string(), norm);
    if corank >= 2 {
        report.class = SingularClass::Degenerate;
        return Ok(report);
    }
    let v = &loc.kernel;
    let r2_jet = loc.det.directional(v);
    let r2 = r2_jet.value();
    let r3 = r2_jet
        .gradient()
        .iter()
        .zip(v)
        .map(|(a, b)| a * b)
        .sum::<f64>();
    report.residuals.insert("r2_ddet_v".to_string(), r2);
    report.residuals.insert("r3_d2det_vv".to_string(), r3);
    report
        .residuals
        .insert("r2_normalized".to_string(), r2 / norm);
    report
        .residuals
        .insert("r3_normalized".to_string(), r3 / norm);
    let gnorm = linalg::norm(&grad_det) / norm;
    report
        .residuals
        .insert("grad_det_normalized".to_string(), gnorm);
    if gnorm <= tol.fold {
        report.class = SingularClass::Degenerate;
        return Ok(report);
    }
    if (r2 / norm).abs() > tol.fold {
        report.class = SingularClass::Fold;
        return Ok(report);
    }
    let g2 = r2_jet.gradient();
    let rank_margin = {
        let (a, b) = (
            linalg::norm(&grad_det).max(f64::MIN_POSITIVE),
            linalg::norm(&g2).max(f64::MIN_POSITIVE),
        );
        let m = DMatrix::from_fn(
            2,
            d,
            |i, k| if i == 0 { grad_det[k] / a } else { g2[k] / b },
        );
        svd_sorted(&m).0[1]
    };
    report
        .residuals
        .insert("rank2_margin".to_string(), rank_margin);
    report.class = if (r3 / norm).abs() > tol.cusp && rank_margin > tol.rank {
        SingularClass::Cusp
    } else {
        SingularClass::Degenerate
    };
    Ok(report)
}

pub fn classify_point(chart: &RelationChart, side: Side, p: &[f64]) -> Result<SingularityReport> {
    classify_map(
        chart.projection(side).as_ref(),
        side,
        p,
        &ClassifyTolerances::default(),
    )
}

/// Newton on `det` along a line through the seed (default: the gradient).
pub fn sigma1_solve_map(
    map: &dyn SmoothMap,
    seed: &[f64],
    direction: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let dir: Vec<f64> = match direction {
        Some(d) => d.to_vec(),
        None => local(map, seed, 1)?.det.gradient(),
    };
    let nd = linalg::norm(&dir);
    if nd == 0.0 {
        return Err(Error::NoConvergence {
            iterations: 0,
            residual: f64::NAN,
        });
    }
    let dir: Vec<f64> = dir.iter().map(|v| v / nd).collect();
    let at = |s: f64| -> Vec<f64> { seed.iter().zip(&dir).map(|(a, b)| a + s * b).collect() };
    let system = |s: &[f64]| -> Result<(Vec<f64>, DMatrix<f64>)> {
        let loc = local(map, &at(s[0]), 1)?;
        let g = loc.det.gradient();
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        Ok((vec![loc.det.value()], DMatrix::from_element(1, 1, slope)))
    };
    let opts = NewtonOptions {
        tol: 1e-11,
        max_distance: Some(5.0),
        ..NewtonOptions::default()
    };
    let out = newton(system, &[0.0], &opts)?;
    Ok(at(out.x[0]))
}

pub fn sigma1_solve(
    chart: &RelationChart,
    side: Side,
    seed: &[f64],
    direction: Option<&[f64]>,
) -> Result<Vec<f64>> {
    sigma1_solve_map(chart.projection(side).as_ref(), seed, direction)
}

/// `(det, d(det)(v))` with `v` the current kernel direction.
pub fn cusp_residuals(map: &dyn SmoothMap, p: &[f64]) -> Result<[f64; 2]> {
    let loc = local(map, p, 1)?;
    let r2: f64 = loc
        .det
        .gradient()
        .iter()
        .zip(&loc.kernel)
        .map(|(a, b)| a * b)
        .sum();
    Ok([loc.det.value(), r2])
}

/// Solves `det = d(det)(v) = 0` in two chosen coordinates.
pub fn sigma11_solve_map(
    map: &dyn SmoothMap,
    side: Side,
    seed: &[f64],
    unknowns: [usize; 2],
) -> Result<SingularityReport> {
    let place = |u: &[f64]| -> Vec<f64> {
        let mut p = seed.to_vec();
        p[unknowns[0]] = u[0];
        p[unknowns[1]] = u[1];
        p
    };
    let system = |u: &[f64]| -> Result<(Vec<f64>, DMatrix<f64>)> {
        let r = cusp_residuals(map, &place(u))?;
        let mut jm = DMatrix::zeros(2, 2);
        for c in 0..2 {
            let h = 1e-6 * (1.0 + u[c].abs());
            let mut up = u.to_vec();
            let mut um = u.to_vec();
            up[c] += h;
            um[c] -= h;
            let rp = cusp_residuals(map, &place(&up))?;
            let rm = cusp_residuals(map, &place(&um))?;
            for r_ in 0..2 {
                jm[(r_, c)] = (rp[r_] - rm[r_]) / (2.0 * h);
            }
        }
        Ok((r.to_vec(), jm))
    };
    let u0 = [seed[unknowns[0]], seed[unknowns[1]]];
    let opts = NewtonOptions {
        tol: 1e-11,
        max_distance: Some(2.0),
        ..NewtonOptions::default()
    };
    let out = newton(system, &u0, &opts)?;
    let root = place(&out.x);
    let rep = classify_map(map, side, &root, &ClassifyTolerances::default())?;
    if rep.class != SingularClass::Cusp {
        return Err(Error::NotACusp(format!(
            "root classifies as {:?}",
            rep.class
        )));
    }
    Ok(rep)
}

pub fn sigma11_solve(
    chart: &RelationChart,
    side: Side,
    seed: &[f64],
    unknowns: [usize; 2],
) -> Result<SingularityReport> {
    sigma11_solve_map(chart.projection(side).as_ref(), side, seed, unknowns)
}

/// Images of parameter points under `π_side`.
pub fn image_of_cusp_set(
    chart: &RelationChart,
    side: Side,
    points: &[Vec<f64>],
) -> Result<Vec<CotangentPoint>> {
    let n = chart.n();
    let proj = chart.projection(side);
    points
        .iter()
        .map(|p| {
            let v = jet::eval_point(proj.as_ref(), p)?;
            Ok(CotangentPoint {
                base: v[..n].to_vec(),
                covector: v[n..].to_vec(),
            })
        })
        .collect()
}

/// Where to look for `Σ₁` and `Σ₁,₁`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplePlan {
    pub sigma1_seeds: Vec<Vec<f64>>,
    pub sigma11_seeds: Vec<Vec<f64>>,
    pub sigma11_unknowns: [usize; 2],
    pub coisotropy_tol: f64,
    pub nonradial_tol: f64,
    pub coincidence_tol: f64,
}

impl SamplePlan {
    /// Deterministic plan for the built-in charts; `None` for unknown names.
    pub fn for_builtin(name: &str) -> Option<SamplePlan> {
        let grid = |f: &dyn Fn(f64, f64) -> Vec<f64>| -> Vec<Vec<f64>> {
            let mut out = Vec::new();
            for i in 0..5 {
                for j in 0..4 {
                    out.push(f(-0.6 + 0.3 * i as f64, -0.45 + 0.3 * j as f64));
                }
            }
            out
        };
        let (s1, s11, unknowns): (Vec<Vec<f64>>, Vec<Vec<f64>>, [usize; 2]) = match name {
            // (x1, x2, x3, y1, θ2, θ3)
            "model_c0" | "model_c0_curve" | "weak_normal_form" | "fold_control" => (
                grid(&|a, b| vec![a, 0.2 * b, -0.1, a - 0.5 * b - 0.1, -0.5 - b, 1.0 + 0.2 * a]),
                grid(&|a, b| {
                    vec![
                        a,
                        0.3 * b,
                        0.1 * a,
                        a + 0.08 * b,
                        0.05 - 0.1 * a * b,
                        1.0 + 0.1 * b,
                    ]
                }),
                [3, 4],
            ),
            // (x1, x2, x3, y1, y2, θ)
            "menn_c1" => (
                grid(&|a, b| vec![a, b, 0.1, a - 0.4 * b - 0.1, b + 0.05, 1.0 + 0.3 * a]),
                grid(&|a, b| {
                    vec![
                        a,
                        b,
                        0.2 * a,
                        a + 0.06 * b + 0.02,
                        b - 0.05 * a,
                        1.0 + 0.2 * b,
                    ]
                }),
                [3, 4],
            ),
            // (x1..x4, y1, θ2, θ3, θ4)
            "curve_r4" => (
                grid(&|a, b| vec![a, 0.1, b, -0.2, a - 0.3 * b - 0.1, -0.2 + b, 0.4 * a, 1.0]),
                grid(&|a, b| {
                    vec![
                        a,
                        0.1 * b,
                        0.0,
                        0.2,
                        a + 0.05 * b,
                        0.05,
                        0.1 * b,
                        1.0 + 0.1 * a,
                    ]
                }),
                [4, 6],
            ),
            _ => return None,
        };
        Some(SamplePlan {
            sigma1_seeds: s1,
            sigma11_seeds: s11,
            sigma11_unknowns: unknowns,
            coisotropy_tol: 1e-9,
            nonradial_tol: 1e-6,
            coincidence_tol: 1e-8,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionVerdict {
    pub passed: bool,
    pub residual: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatCuspCertificate {
    pub chart: String,
    pub sigma1_points: usize,
    pub fold_points: usize,
    pub cusp_points: Vec<Vec<f64>>,
    pub condition_i: ConditionVerdict,
    pub condition_ii: ConditionVerdict,
    pub condition_iii: ConditionVerdict,
    pub reports: Vec<SingularityReport>,
}

impl FlatCuspCertificate {
    pub fn passed(&self) -> bool {
        self.condition_i.passed && self.condition_ii.passed && self.condition_iii.passed
    }
}

fn dedup_points(points: Vec<Vec<f64>>, tol: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for p in points {
        if !out
            .iter()
            .any(|q| q.iter().zip(&p).all(|(a, b)| (a - b).abs() < tol))
        {
            out.push(p);
        }
    }
    out
}

/// Two conormals to `dπ(TΣ₁,₁)` at a cusp point, as linear defining functions.
fn cusp_image_definers(
    chart: &RelationChart,
    side: Side,
    p: &[f64],
) -> Result<(Vec<f64>, [crate::jet::SmoothMapHandle; 2])> {
    let proj = chart.projection(side);
    let loc = local(proj.as_ref(), p, 2)?;
    let g1 = loc.det.gradient();
    let g2 = loc.det.directional(&loc.kernel).gradient();
    let d = p.len();
    // Tangent space of Σ₁,₁: kernel of the two gradients.
    let constraints = DMatrix::from_fn(2, d, |i, k| if i == 0 { g1[k] } else { g2[k] });
    let (_, vecs) = svd_sorted(&constraints);
    let tangent: Vec<_> = vecs[2..].to_vec();
    let image_basis = DMatrix::from_fn(d, tangent.len(), |r, c| (&loc.matrix * &tangent[c])[r]);
    // Annihilator of the image = kernel of its transpose.
    let (_, left) = svd_sorted(&image_basis.transpose());
    let full_u = &left[d - 2..];
    let image = jet::eval_point(proj.as_ref(), p)?;
    let defs = [
        linear_function(full_u[0].iter().copied().collect(), image.clone()),
        linear_function(full_u[1].iter().copied().collect(), image.clone()),
    ];
    Ok((image, defs))
}

/// Certifies conditions (i)–(iii) of a flat two-sided cusp on the sample plan.
pub fn flat_two_sided_cusp_check(chart: &RelationChart, plan: &SamplePlan) -> FlatCuspCertificate {
    let tol = ClassifyTolerances::default();
    let mut reports = Vec::new();
    let mut sigma1_points = 0;
    let mut fold_points = 0;
    let mut bad_points = 0;
    let mut cusp_by_side: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for (si, side) in [Side::Left, Side::Right].into_iter().enumerate() {
        let proj = chart.projection(side);
        for seed in &plan.sigma1_seeds {
            if let Ok(p) = sigma1_solve_map(proj.as_ref(), seed, None) {
                if let Ok(rep) = classify_map(proj.as_ref(), side, &p, &tol) {
                    sigma1_points += 1;
                    match rep.class {
                        SingularClass::Fold => fold_points += 1,
                        SingularClass::Cusp => cusp_by_side[si].push(p.clone()),
                        _ => bad_points += 1,
                    }
                    reports.push(rep);
                }
            }
        }
        for seed in &plan.sigma11_seeds {
            match sigma11_solve_map(proj.as_ref(), side, seed, plan.sigma11_unknowns) {
                Ok(rep) => {
                    sigma1_points += 1;
                    cusp_by_side[si].push(rep.point.clone());
                    reports.push(rep);
                }
                Err(Error::NotACusp(_)) => bad_points += 1,
                Err(_) => {}
            }
        }
    }
    let left = dedup_points(std::mem::take(&mut cusp_by_side[0]), 1e-7);
    let right = dedup_points(std::mem::take(&mut cusp_by_side[1]), 1e-7);
    let cond_i = if left.is_empty() || right.is_empty() {
        ConditionVerdict {
            passed: false,
            residual: bad_points as f64,
            detail: format!(
                "no cusp points found (left {}, right {})",
                left.len(),
                right.len()
            ),
        }
    } else {
        ConditionVerdict {
            passed: bad_points == 0,
            residual: bad_points as f64,
            detail: format!(
                "{sigma1_points} singular points: {fold_points} fold, {} left cusp, {} right cusp, {bad_points} worse",
                left.len(),
                right.len()
            ),
        }
    };
    // (ii): the other side's cusp pair vanishes at each root.
    let mut worst_ii: f64 = 0.0;
    let mut ii_ok = !left.is_empty() && !right.is_empty();
    for (points, other) in [(&left, Side::Right), (&right, Side::Left)] {
        let proj = chart.projection(other);
        for p in points.iter() {
            match (
                cusp_residuals(proj.as_ref(), p),
                classify_map(proj.as_ref(), other, p, &tol),
            ) {
                (Ok(r), Ok(rep)) => {
                    let loc = local(proj.as_ref(), p, 1);
                    let scale = loc
                        .map(|l| det_normalizer(&l.singular_values))
                        .unwrap_or(1.0);
                    let res = (r[0] / scale).abs().max((r[1] / scale).abs());
                    worst_ii = worst_ii.max(res);
                    if res > plan.coincidence_tol || rep.class != SingularClass::Cusp {
                        ii_ok = false;
                    }
                }
                _ => ii_ok = false,
            }
        }
    }
    let cond_ii = ConditionVerdict {
        passed: ii_ok,
        residual: worst_ii,
        detail: "max normalized (det, d(det)(v)) of the opposite side at cusp roots".into(),
    };
    // (iii): coisotropy and nonradiality of both cusp images.
    let mut worst_bracket: f64 = 0.0;
    let mut min_radial = f64::INFINITY;
    let mut iii_ok = !left.is_empty() && !right.is_empty();
    for (points, side) in [(&left, Side::Left), (&right, Side::Right)] {
        for p in points.iter() {
            match cusp_image_definers(chart, side, p) {
                Ok((image, defs)) => {
                    let co = symplectic::coisotropic_check(
                        [defs[0].as_ref(), defs[1].as_ref()],
                        &image,
                        plan.coisotropy_tol,
                    );
                    let nr = symplectic::nonradial_check(
                        [defs[0].as_ref(), defs[1].as_ref()],
                        &image,
                        plan.nonradial_tol,
                    );
                    match (co, nr) {
                        (Ok(c), Ok(r)) => {
                            worst_bracket = worst_bracket.max(c.bracket.abs());
                            min_radial = min_radial.min(r.sigma_min);
                            iii_ok &= c.coisotropic && r.nonradial;
                        }
                        _ => iii_ok = false,
                    }
                }
                Err(_) => iii_ok = false,
            }
        }
    }
    let cond_iii = ConditionVerdict {
        passed: iii_ok,
        residual: worst_bracket,
        detail: format!("max |bracket| {worst_bracket:.3e}, min nonradial margin {min_radial:.3e}"),
    };
    let mut cusp_points = left;
    cusp_points.extend(right);
    FlatCuspCertificate {
        chart: chart.name.clone(),
        sigma1_points,
        fold_points,
        cusp_points,
        condition_i: cond_i,
        condition_ii: cond_ii,
        condition_iii: cond_iii,
        reports,
    }
}
