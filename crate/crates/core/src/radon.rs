//! Discretized model Radon transform averaging over translates of the curve
//! `γ(t) = (t, t², t⁴)`, its adjoint, the normal operator on a point scatterer
//! and a ridge test against the predicted artifact surface.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples on the nodes of a uniform grid over `[lo, hi]³` (node-centred, so
/// both faces carry nodes). Index `i + n₀(j + n₁k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField3D {
    pub dims: [usize; 3],
    pub lo: f64,
    pub hi: f64,
    pub data: Vec<f64>,
}

impl ScalarField3D {
    pub fn new(dims: [usize; 3], lo: f64, hi: f64, data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 16) {
            return Err(Error::InvalidInput(
                "grids need at least 16 nodes per axis".into(),
            ));
        }
        if !(hi > lo) || data.len() != dims.iter().product::<usize>() {
            return Err(Error::InvalidInput(
                "box or sample count does not match the grid".into(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("field values must be finite".into()));
        }
        Ok(ScalarField3D { dims, lo, hi, data })
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        ScalarField3D {
            dims: [grid.n; 3],
            lo: grid.lo,
            hi: grid.hi,
            data: vec![0.0; grid.n.pow(3)],
        }
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 3]) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        let n = grid.n;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    out.data[i + n * (j + n * k)] = f(out.node([i, j, k]));
                }
            }
        }
        out
    }

    /// Spacing along each axis.
    pub fn spacing(&self) -> [f64; 3] {
        self.dims.map(|d| (self.hi - self.lo) / (d - 1) as f64)
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2])
    }

    pub fn node(&self, ijk: [usize; 3]) -> [f64; 3] {
        let h = self.spacing();
        [0, 1, 2].map(|a| self.lo + ijk[a] as f64 * h[a])
    }

    pub fn get(&self, ijk: [usize; 3]) -> f64 {
        self.data[self.index(ijk)]
    }

    /// Trilinear interpolation, zero outside the grid.
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        let h = self.spacing();
        let q = [0, 1, 2].map(|a| (p[a] - self.lo) / h[a]);
        let base = q.map(f64::floor);
        let frac = [0, 1, 2].map(|a| q[a] - base[a]);
        let mut acc = 0.0;
        for c in 0..8usize {
            let corner = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            let mut inside = true;
            for a in 0..3 {
                let ia = base[a] as i64 + corner[a] as i64;
                if ia < 0 || ia >= self.dims[a] as i64 {
                    inside = false;
                    break;
                }
                idx[a] = ia as usize;
                w *= if corner[a] == 1 {
                    frac[a]
                } else {
                    1.0 - frac[a]
                };
            }
            if inside && w != 0.0 {
                acc += w * self.get(idx);
            }
        }
        acc
    }

    pub fn dot(&self, other: &ScalarField3D) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn argmax(&self) -> [usize; 3] {
        let (mut best, mut at) = (f64::NEG_INFINITY, 0);
        for (i, &v) in self.data.iter().enumerate() {
            if v > best {
                best = v;
                at = i;
            }
        }
        let n0 = self.dims[0];
        let n1 = self.dims[1];
        [at % n0, (at / n0) % n1, at / (n0 * n1)]
    }
}

/// Cubic grid `n³` over `[lo, hi]³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n: 96,
            lo: -1.0,
            hi: 1.0,
        }
    }
}

impl GridSpec {
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }
}

pub fn gamma(t: f64) -> [f64; 3] {
    [t, t * t, t.powi(4)]
}

pub fn gamma_prime(t: f64) -> [f64; 3] {
    [1.0, 2.0 * t, 4.0 * t.powi(3)]
}

/// Averaging weights: cutoff `χ(t) = exp(1/((t/T)² − 1))` normalized to unit
/// integral, composite Simpson on `nodes` points of `[−T, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveAverageSpec {
    pub half_width: f64,
    pub nodes: usize,
    /// Scales `χ`; zero switches the operator off.
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for CurveAverageSpec {
    fn default() -> Self {
        CurveAverageSpec {
            half_width: 0.7,
            nodes: 129,
            amplitude: 1.0,
        }
    }
}

fn bump(t: f64, half: f64) -> f64 {
    let r = t / half;
    if r.abs() >= 1.0 {
        0.0
    } else {
        (1.0 / (r * r - 1.0)).exp()
    }
}

fn simpson(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let h = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let w = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (a + i as f64 * h, w * h / 3.0)
        })
        .collect()
}

impl CurveAverageSpec {
    fn validate(&self) -> Result<()> {
        if self.nodes < 3 || self.nodes % 2 == 0 || !(self.half_width > 0.0) {
            return Err(Error::InvalidInput(
                "Simpson quadrature needs an odd node count ≥ 3 and T > 0".into(),
            ));
        }
        Ok(())
    }

    /// Integral of the unnormalized bump, by a fine Simpson rule.
    fn bump_mass(&self) -> f64 {
        simpson(20_001, -self.half_width, self.half_width)
            .iter()
            .map(|&(t, w)| w * bump(t, self.half_width))
            .sum()
    }

    /// Normalized `χ(t)`.
    pub fn chi(&self, t: f64) -> f64 {
        self.amplitude * bump(t, self.half_width) / self.bump_mass()
    }

    /// Quadrature nodes `tᵢ` and combined weights `wᵢ χ(tᵢ)`.
    pub fn quadrature(&self) -> Result<Vec<(f64, f64)>> {
        self.validate()?;
        let mass = self.bump_mass();
        Ok(simpson(self.nodes, -self.half_width, self.half_width)
            .into_iter()
            .map(|(t, w)| (t, self.amplitude * w * bump(t, self.half_width) / mass))
            .collect())
    }
}

/// Shift of a gather in index units: integer part and trilinear fraction.
struct Offset {
    base: [i64; 3],
    frac: [f64; 3],
    weight: f64,
}

fn offsets(spec: &CurveAverageSpec, h: [f64; 3], sign: f64) -> Result<Vec<Offset>> {
    Ok(spec
        .quadrature()?
        .into_iter()
        .filter(|&(_, w)| w != 0.0)
        .map(|(t, w)| {
            let g = gamma(t);
            let d = [0, 1, 2].map(|a| sign * g[a] / h[a]);
            let base = d.map(|v| v.floor());
            Offset {
                base: base.map(|v| v as i64),
                frac: [0, 1, 2].map(|a| d[a] - base[a]),
                weight: w,
            }
        })
        .collect())
}

/// `out[m] = Σ wᵢ f(m + dᵢ)` with trilinear interpolation and zero extension.
fn gather(f: &ScalarField3D, offs: &[Offset]) -> ScalarField3D {
    let [n0, n1, n2] = f.dims;
    let pad =
        [0, 1, 2].map(|a| offs.iter().map(|o| o.base[a].abs() + 1).max().unwrap_or(1) as usize);
    let p = [n0 + 2 * pad[0], n1 + 2 * pad[1], n2 + 2 * pad[2]];
    let mut padded = vec![0.0; p[0] * p[1] * p[2]];
    for k in 0..n2 {
        for j in 0..n1 {
            let src = n0 * (j + n1 * k);
            let dst = pad[0] + p[0] * (j + pad[1] + p[1] * (k + pad[2]));
            padded[dst..dst + n0].copy_from_slice(&f.data[src..src + n0]);
        }
    }
    let sx = 1usize;
    let sy = p[0];
    let sz = p[0] * p[1];
    // per offset: start shift and the eight corner weights
    let plans: Vec<(isize, [f64; 8])> = offs
        .iter()
        .map(|o| {
            let shift = o.base[0] as isize * sx as isize
                + o.base[1] as isize * sy as isize
                + o.base[2] as isize * sz as isize;
            let mut w = [0.0; 8];
            for (c, wc) in w.iter_mut().enumerate() {
                let mut v = o.weight;
                for a in 0..3 {
                    v *= if (c >> a) & 1 == 1 {
                        o.frac[a]
                    } else {
                        1.0 - o.frac[a]
                    };
                }
                *wc = v;
            }
            (shift, w)
        })
        .collect();
    let corner = [0, sx, sy, sx + sy, sz, sx + sz, sy + sz, sx + sy + sz];
    let plane = |k: usize, out: &mut [f64]| {
        for j in 0..n1 {
            for i in 0..n0 {
                let m = (i + pad[0] + p[0] * (j + pad[1] + p[1] * (k + pad[2]))) as isize;
                let mut acc = 0.0;
                for (shift, w) in &plans {
                    let b = (m + shift) as usize;
                    for c in 0..8 {
                        acc += w[c] * padded[b + corner[c]];
                    }
                }
                out[i + n0 * j] = acc;
            }
        }
    };
    let mut data = vec![0.0; n0 * n1 * n2];
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(n0 * n1)
            .enumerate()
            .for_each(|(k, out)| plane(k, out));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(n0 * n1)
            .enumerate()
            .for_each(|(k, out)| plane(k, out));
    }
    ScalarField3D {
        dims: f.dims,
        lo: f.lo,
        hi: f.hi,
        data,
    }
}

/// `R₀f(x) = Σ wᵢχ(tᵢ) f(x − γ(tᵢ))`.
pub fn radon_apply(f: &ScalarField3D, spec: &CurveAverageSpec) -> Result<ScalarField3D> {
    Ok(gather(f, &offsets(spec, f.spacing(), -1.0)?))
}

/// `R₀*g(y) = Σ wᵢχ(tᵢ) g(y + γ(tᵢ))`, the exact transpose of [`radon_apply`].
pub fn radon_adjoint_apply(g: &ScalarField3D, spec: &CurveAverageSpec) -> Result<ScalarField3D> {
    Ok(gather(g, &offsets(spec, g.spacing(), 1.0)?))
}

/// Gaussian of standard deviation `width_cells` grid cells, unit mass.
pub fn point_scatterer(grid: &GridSpec, center: [f64; 3], width_cells: f64) -> ScalarField3D {
    let h = grid.spacing();
    let s = width_cells * h;
    let mut f = ScalarField3D::from_fn(grid, |p| {
        let r2: f64 = (0..3).map(|a| (p[a] - center[a]).powi(2)).sum();
        (-r2 / (2.0 * s * s)).exp()
    });
    let mass: f64 = f.data.iter().sum::<f64>() * h.powi(3);
    f.data.iter_mut().for_each(|v| *v /= mass);
    f
}

/// `R₀* R₀` applied to a narrow unit-mass bump at `source`.
pub fn normal_image(
    source: [f64; 3],
    spec: &CurveAverageSpec,
    grid: &GridSpec,
    width_cells: f64,
) -> Result<ScalarField3D> {
    let margin = 0.2 * (grid.hi - grid.lo);
    if source
        .iter()
        .any(|&c| c < grid.lo + margin || c > grid.hi - margin)
    {
        return Err(Error::SourceTooCloseToBoundary);
    }
    let f = point_scatterer(grid, source, width_cells);
    radon_adjoint_apply(&radon_apply(&f, spec)?, spec)
}

/// A sample of the predicted artifact surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocusSample {
    pub y1: f64,
    pub z1: f64,
    pub y: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactLocus {
    pub source: [f64; 3],
    pub samples: Vec<LocusSample>,
}

/// CSV row of a locus sample.
#[derive(Debug, Clone, Serialize)]
pub struct LocusRow {
    pub y1_param: f64,
    pub z1: f64,
    pub y1: f64,
    pub y2: f64,
    pub y3: f64,
}

impl ArtifactLocus {
    pub fn rows(&self) -> Vec<LocusRow> {
        self.samples
            .iter()
            .map(|s| LocusRow {
                y1_param: s.y1,
                z1: s.z1,
                y1: s.y[0],
                y2: s.y[1],
                y3: s.y[2],
            })
            .collect()
    }
}

/// Spatial part of the umbrella through `x⁰`:
/// `y₂ = x₂ + (y₁−x₁)(2z₁−x₁−y₁)`,
/// `y₃ = x₃ + (y₁−x₁)(2z₁−x₁−y₁)((z₁−x₁)² + (z₁−y₁)²)`.
pub fn locus_point(source: [f64; 3], y1: f64, z1: f64) -> [f64; 3] {
    let x = source;
    let p = (y1 - x[0]) * (2.0 * z1 - x[0] - y1);
    [
        y1,
        x[1] + p,
        x[2] + p * ((z1 - x[0]).powi(2) + (z1 - y1).powi(2)),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocusOptions {
    pub y1_range: [f64; 2],
    pub z1_range: [f64; 2],
    /// Samples per parameter axis.
    pub samples: usize,
    /// Curve parameters `z₁ − x₁`, `z₁ − y₁` are kept within this fraction of `T`.
    pub reach: f64,
}

impl Default for LocusOptions {
    fn default() -> Self {
        LocusOptions {
            y1_range: [-1.2, 1.2],
            z1_range: [-0.7, 0.7],
            samples: 61,
            reach: 0.9,
        }
    }
}

/// Closed-form samples over a `(y₁, z₁)` grid (ranges relative to `x₁`),
/// clipped to the box and to curve parameters inside the cutoff support.
pub fn predicted_locus(
    source: [f64; 3],
    opts: &LocusOptions,
    spec: &CurveAverageSpec,
    grid: &GridSpec,
) -> ArtifactLocus {
    let n = opts.samples.max(2);
    let lin = |r: [f64; 2], i: usize| r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64;
    let reach = opts.reach * spec.half_width;
    let mut samples = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let y1 = source[0] + lin(opts.y1_range, i);
            let z1 = source[0] + lin(opts.z1_range, j);
            if (z1 - source[0]).abs() > reach || (z1 - y1).abs() > reach {
                continue;
            }
            let y = locus_point(source, y1, z1);
            if y.iter().all(|&c| c >= grid.lo && c <= grid.hi) {
                samples.push(LocusSample { y1, z1, y });
            }
        }
    }
    ArtifactLocus { source, samples }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeOptions {
    pub exclusion_cells: f64,
    pub probe_cells: f64,
    pub step_cells: f64,
    pub hit_cells: f64,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        RidgeOptions {
            exclusion_cells: 6.0,
            probe_cells: 15.0,
            step_cells: 0.5,
            hit_cells: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeStats {
    pub tested: usize,
    pub covered: usize,
    pub coverage: f64,
    /// Median |offset| of the probe maximum from the surface, in cells.
    pub median_offset_cells: f64,
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// For every locus sample outside the exclusion ball, finds the maximum of the
/// field along the surface normal and counts it as covered when it lies within
/// `hit_cells` of the surface.
pub fn ridge_match(
    field: &ScalarField3D,
    locus: &ArtifactLocus,
    opts: &RidgeOptions,
) -> Result<RidgeStats> {
    let h = field.spacing()[0];
    let x = locus.source;
    let steps = (opts.probe_cells / opts.step_cells).round() as i64;
    let mut offsets = Vec::new();
    for s in &locus.samples {
        let dist = (0..3).map(|a| (s.y[a] - x[a]).powi(2)).sum::<f64>().sqrt();
        if dist <= opts.exclusion_cells * h {
            continue;
        }
        let a = s.z1 - x[0];
        let b = s.z1 - s.y1;
        let nrm = cross(gamma_prime(a), gamma_prime(b));
        let len = nrm.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len < 1e-9 {
            continue;
        }
        let nrm = nrm.map(|v| v / len);
        let (mut best, mut at) = (f64::NEG_INFINITY, 0.0);
        for k in -steps..=steps {
            let r = k as f64 * opts.step_cells;
            let v = field.sample([0, 1, 2].map(|c| s.y[c] + r * h * nrm[c]));
            if v > best {
                best = v;
                at = r;
            }
        }
        offsets.push(at.abs());
    }
    if offsets.is_empty() {
        return Err(Error::EmptyLocus);
    }
    let covered = offsets.iter().filter(|&&o| o <= opts.hit_cells).count();
    offsets.sort_by(f64::total_cmp);
    Ok(RidgeStats {
        tested: offsets.len(),
        covered,
        coverage: covered as f64 / offsets.len() as f64,
        median_offset_cells: offsets[offsets.len() / 2],
    })
}

/// Coverage of i.i.d. uniform noise fields, averaged over `trials`.
pub fn chance_baseline(
    grid: &GridSpec,
    locus: &ArtifactLocus,
    opts: &RidgeOptions,
    seed: u64,
    trials: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..trials.max(1) {
        let mut f = ScalarField3D::zeros(grid);
        f.data.iter_mut().for_each(|v| *v = rng.random::<f64>());
        total += ridge_match(&f, locus, opts)?.coverage;
    }
    Ok(total / trials.max(1) as f64)
}
