//! Poisson brackets, coisotropy and nonradiality of codimension-two sets,
//! isotropy defects and open-umbrella certificates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{self, smooth_map, Jet, SmoothMap, SmoothMapHandle};
use crate::linalg::{self, newton, svd_sorted, NewtonOptions};
use crate::phase::RelationChart;

/// `{f, g} = Σ (∂f/∂ξ_j ∂g/∂x_j − ∂f/∂x_j ∂g/∂ξ_j)` at `point = (x, ξ)`.
pub fn poisson_bracket(f: &dyn SmoothMap, g: &dyn SmoothMap, point: &[f64]) -> Result<f64> {
    let df = jet::jet_of_map_any(f, point, 1)?[0].gradient();
    let dg = jet::jet_of_map_any(g, point, 1)?[0].gradient();
    Ok(bracket_of_differentials(&df, &dg))
}

fn bracket_of_differentials(df: &[f64], dg: &[f64]) -> f64 {
    let n = df.len() / 2;
    (0..n).map(|j| df[n + j] * dg[j] - df[j] * dg[n + j]).sum()
}

/// `H_f = Σ (∂f/∂ξ_j ∂_{x_j} − ∂f/∂x_j ∂_{ξ_j})` as a vector in `(x, ξ)`.
pub fn hamiltonian_vector(df: &[f64]) -> Vec<f64> {
    let n = df.len() / 2;
    (0..n)
        .map(|j| df[n + j])
        .chain((0..n).map(|j| -df[j]))
        .collect()
}

/// Linear function `z ↦ α · (z − z₀)`.
pub fn linear_function(alpha: Vec<f64>, base: Vec<f64>) -> SmoothMapHandle {
    let d = alpha.len();
    smooth_map(d, 1, "linear", move |z| {
        let mut acc = z[0].lift(0.0);
        for k in 0..d {
            if alpha[k] != 0.0 {
                acc += (&z[k] - base[k]) * alpha[k];
            }
        }
        vec![acc]
    })
}

/// Coordinate function `z ↦ z_k` on `T*ℝⁿ`.
pub fn coordinate(dim: usize, k: usize) -> SmoothMapHandle {
    smooth_map(dim, 1, "coordinate", move |z| vec![z[k].clone()])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoisotropyReport {
    pub bracket: f64,
    pub coisotropic: bool,
}

fn definer_differentials(defining: [&dyn SmoothMap; 2], point: &[f64]) -> Result<[Vec<f64>; 2]> {
    let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (slot, f) in out.iter_mut().zip(defining) {
        let j = jet::jet_of_map_any(f, point, 1)?;
        let residual = j[0].value().abs();
        if residual > 1e-8 * (1.0 + linalg::max_abs(point)) {
            return Err(Error::NotOnSet { residual });
        }
        *slot = j[0].gradient();
    }
    let m = DMatrix::from_fn(2, point.len(), |i, k| out[i][k]);
    if linalg::rank(&m, 1e-10) < 2 {
        return Err(Error::DependentDefiners);
    }
    Ok(out)
}

/// Codimension-two coisotropy: `{f₁, f₂}` vanishes on the set.
pub fn coisotropic_check(
    defining: [&dyn SmoothMap; 2],
    point: &[f64],
    tol: f64,
) -> Result<CoisotropyReport> {
    let [d1, d2] = definer_differentials(defining, point)?;
    let bracket = bracket_of_differentials(&d1, &d2);
    Ok(CoisotropyReport {
        bracket,
        coisotropic: bracket.abs() < tol,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonradialReport {
    /// Smallest singular value of the normalized `[H_{f₁}, H_{f₂}, ρ]` system.
    pub sigma_min: f64,
    pub nonradial: bool,
}

/// Whether the radial field `Σ ξ_j ∂_{ξ_j}` escapes `span{H_{f₁}, H_{f₂}}`.
pub fn nonradial_check(
    defining: [&dyn SmoothMap; 2],
    point: &[f64],
    tol: f64,
) -> Result<NonradialReport> {
    let [d1, d2] = definer_differentials(defining, point)?;
    let n = point.len() / 2;
    let radial: Vec<f64> = (0..n)
        .map(|_| 0.0)
        .chain(point[n..].iter().copied())
        .collect();
    let h1 = hamiltonian_vector(&d1);
    let h2 = hamiltonian_vector(&d2);
    let cols = [h1, h2, radial];
    let m = DMatrix::from_fn(2 * n, 3, |i, c| {
        let nrm = linalg::norm(&cols[c]).max(f64::MIN_POSITIVE);
        cols[c][i] / nrm
    });
    let (s, _) = svd_sorted(&m);
    let sigma_min = s[2];
    Ok(NonradialReport {
        sigma_min,
        nonradial: sigma_min > tol,
    })
}

/// Largest pairing of pushed-forward coordinate vectors.
pub fn isotropy_defect(chart: &RelationChart, p: &[f64]) -> Result<f64> {
    chart.symplectic_defect(p)
}

#[derive(Debug, Clone)]
pub struct UmbrellaOptions {
    /// How many minors (ranked by gradient size) enter the pair search.
    pub candidates: usize,
    pub ring_radii: Vec<f64>,
    pub isotropy_tol: f64,
    pub rank_tol: f64,
    pub newton_tol: f64,
}

impl Default for UmbrellaOptions {
    fn default() -> Self {
        UmbrellaOptions {
            candidates: 30,
            ring_radii: vec![1e-3, 1e-2, 1e-1],
            isotropy_tol: 1e-9,
            rank_tol: 1e-6,
            newton_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UmbrellaCertificate {
    pub chart: String,
    pub singular_point: Vec<f64>,
    /// Rows of the two minors used to locate the rank drop.
    pub minor_rows: [Vec<usize>; 2],
    /// `σ_min / σ_max` of `dψ` at the singular point (should vanish).
    pub rank_drop_residual: f64,
    /// `σ_{k−1} / σ_max` (must stay away from zero: the drop is by one).
    pub corank_one_margin: f64,
    /// Independence of the two minor gradients (simple drop, codimension two).
    pub simplicity: f64,
    /// `|(∇m₁·v, ∇m₂·v)|` for the unit kernel vector `v`.
    pub transversality: f64,
    pub kernel: Vec<f64>,
    pub max_isotropy_defect: f64,
    pub verdict: bool,
    pub failed: Vec<String>,
}

struct Minor {
    rows: Vec<usize>,
    grad: Vec<f64>,
}

fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            if m - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    rec(0, m, k, &mut cur, &mut out);
    out
}

fn minor_jet(entries: &[Vec<Jet>], rows: &[usize]) -> Jet {
    let m: Vec<Vec<Jet>> = rows.iter().map(|&r| entries[r].clone()).collect();
    jet::det(&m)
}

/// Entries `∂_j ψ_i` as jets of order `order`.
fn differential_jets(map: &dyn SmoothMap, p: &[f64], order: usize) -> Result<Vec<Vec<Jet>>> {
    let j = jet::jet_of_map_any(map, p, order + 1)?;
    Ok(j.iter()
        .map(|c| (0..p.len()).map(|k| c.partial(k)).collect())
        .collect())
}

fn all_minors(map: &dyn SmoothMap, p: &[f64]) -> Result<Vec<Minor>> {
    let entries = differential_jets(map, p, 1)?;
    let k = p.len();
    Ok(subsets(entries.len(), k)
        .into_iter()
        .map(|rows| {
            let d = minor_jet(&entries, &rows);
            Minor {
                grad: d.gradient(),
                rows,
            }
        })
        .collect())
}

fn pair_independence(a: &[f64], b: &[f64]) -> f64 {
    let na = linalg::norm(a).max(f64::MIN_POSITIVE);
    let nb = linalg::norm(b).max(f64::MIN_POSITIVE);
    let m = DMatrix::from_fn(
        2,
        a.len(),
        |i, k| if i == 0 { a[k] / na } else { b[k] / nb },
    );
    let (s, _) = svd_sorted(&m);
    s[1]
}

/// Deterministic probe directions: coordinate axes and pairwise diagonals.
fn ring_directions(k: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..k {
        let mut e = vec![0.0; k];
        e[i] = 1.0;
        dirs.push(e.clone());
        e[i] = -1.0;
        dirs.push(e);
        for j in i + 1..k {
            let mut d = vec![0.0; k];
            d[i] = std::f64::consts::FRAC_1_SQRT_2;
            d[j] = -std::f64::consts::FRAC_1_SQRT_2;
            dirs.push(d);
        }
    }
    dirs
}

/// Locates a simple rank-one drop of `dψ` near `seed` via two maximal minors
/// and certifies the open-umbrella conditions there.
pub fn umbrella_check(
    chart: &RelationChart,
    seed: &[f64],
    opts: &UmbrellaOptions,
) -> Result<UmbrellaCertificate> {
    let map = chart.map.as_ref();
    let k = seed.len();
    let mut minors = all_minors(map, seed)?;
    let gscale = minors
        .iter()
        .map(|m| linalg::norm(&m.grad))
        .fold(0.0, f64::max);
    minors.retain(|m| linalg::norm(&m.grad) > 1e-8 * gscale.max(f64::MIN_POSITIVE));
    minors.sort_by(|a, b| linalg::norm(&b.grad).total_cmp(&linalg::norm(&a.grad)));
    minors.truncate(opts.candidates);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..minors.len() {
        for b in a + 1..minors.len() {
            let ind = pair_independence(&minors[a].grad, &minors[b].grad);
            if ind > opts.rank_tol {
                pairs.push((ind, a, b));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let negative = |condition: &str| Error::VerdictNegative {
        condition: condition.to_string(),
    };
    if pairs.is_empty() {
        return Err(negative(
            "rank drop: no pair of independent vanishing minors near the seed",
        ));
    }
    let mut last_err = None;
    for &(_, a, b) in pairs.iter().take(8) {
        let rows = [minors[a].rows.clone(), minors[b].rows.clone()];
        let system = |q: &[f64]| -> Result<(Vec<f64>, DMatrix<f64>)> {
            let entries = differential_jets(map, q, 1)?;
            let m1 = minor_jet(&entries, &rows[0]);
            let m2 = minor_jet(&entries, &rows[1]);
            let jm = DMatrix::from_fn(2, k, |i, c| {
                if i == 0 {
                    m1.derivative(&[c])
                } else {
                    m2.derivative(&[c])
                }
            });
            Ok((vec![m1.value(), m2.value()], jm))
        };
        let nopts = NewtonOptions {
            tol: opts.newton_tol,
            max_distance: Some(1.0),
            ..NewtonOptions::default()
        };
        let root = match newton(system, seed, &nopts) {
            Ok(r) => r.x,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let dpsi = chart.differential(&root)?;
        let (s, _) = svd_sorted(&dpsi);
        let smax = s[0].max(f64::MIN_POSITIVE);
        let rank_drop_residual = s[k - 1] / smax;
        let corank_one_margin = if k >= 2 { s[k - 2] / smax } else { 1.0 };
        if rank_drop_residual > 1e-9 {
            last_err = Some(negative(
                "rank drop: minors vanish but the differential keeps full rank",
            ));
            continue;
        }
        let (kernel, _) = linalg::kernel_vector(&dpsi);
        let entries = differential_jets(map, &root, 1)?;
        let g1 = minor_jet(&entries, &rows[0]).gradient();
        let g2 = minor_jet(&entries, &rows[1]).gradient();
        let simplicity = pair_independence(&g1, &g2);
        let dot = |g: &[f64]| {
            g.iter().zip(kernel.iter()).map(|(a, b)| a * b).sum::<f64>() / linalg::norm(g)
        };
        let transversality = dot(&g1).hypot(dot(&g2));
        let mut max_defect: f64 = 0.0;
        for &r in &opts.ring_radii {
            for dir in ring_directions(k) {
                let q: Vec<f64> = root.iter().zip(&dir).map(|(a, d)| a + r * d).collect();
                max_defect = max_defect.max(chart.symplectic_defect(&q)?);
            }
        }
        let mut failed = Vec::new();
        if corank_one_margin <= opts.rank_tol {
            failed.push("corank exceeds one".to_string());
        }
        if simplicity <= opts.rank_tol {
            failed.push("rank drop is not simple (dependent minor gradients)".to_string());
        }
        if transversality <= opts.rank_tol {
            failed.push("kernel is tangent to the singular set".to_string());
        }
        if max_defect >= opts.isotropy_tol {
            failed.push("image is not isotropic off the singular set".to_string());
        }
        return Ok(UmbrellaCertificate {
            chart: chart.name.clone(),
            singular_point: root,
            minor_rows: rows,
            rank_drop_residual,
            corank_one_margin,
            simplicity,
            transversality,
            kernel: kernel.iter().copied().collect(),
            max_isotropy_defect: max_defect,
            verdict: failed.is_empty(),
            failed,
        });
    }
    Err(last_err.unwrap_or_else(|| negative("rank drop not located")))
}
