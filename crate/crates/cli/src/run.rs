//! Subcommand pipelines. Each runner computes everything first and returns
//! an [`Outcome`]; artifacts touch the disk only through [`Outcome::write`],
//! so a failed run leaves the output directory untouched.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use flatcusp::caustics::{
    caustic_scan, trace_ray, CausticClass, CausticReport, DenseOracle, OracleLabel, RayRow,
};
use flatcusp::composition::{
    compose_scan, default_intersection_seeds, intersection_codim_check, model_composition_seeds,
    model_containment_distance, model_umbrella_chart, reduced_phase_charts, BranchRule,
    CompositionRow, ReducedPhase, UmbrellaForm, BRANCH_TOL,
};
use flatcusp::export::{to_gray, write_csv, write_json, write_pgm, write_raw_f32};
use flatcusp::jet::smooth_map;
use flatcusp::ode::OdeOptions;
use flatcusp::phase::{
    builtin_chart, lambda1_chart, model_c0_chart, umbrella_u_chart, ChartKind, RelationChart, Side,
};
use flatcusp::radon::{
    chance_baseline, normal_image, predicted_locus, radon_adjoint_apply, radon_apply, ridge_match,
    ScalarField3D,
};
use flatcusp::singularity::{
    classify_map, flat_two_sided_cusp_check, ClassifyTolerances, SamplePlan, SingularClass,
};
use flatcusp::symbol::{blowup_summary, log_spaced, BlowupSummary};
use flatcusp::symplectic::{isotropy_defect, umbrella_check, UmbrellaCertificate, UmbrellaOptions};
use flatcusp::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    CausticsConfig, ClassifyConfig, ComposeConfig, ConfigError, RadonConfig, RunConfig,
    SymbolConfig, UmbrellaConfig,
};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
    pub detail: String,
}

impl Check {
    fn below(name: &str, value: f64, limit: f64) -> Check {
        Check {
            name: name.into(),
            passed: value < limit,
            value,
            limit,
            detail: format!("{value:.3e} < {limit:.1e}"),
        }
    }

    fn above(name: &str, value: f64, limit: f64) -> Check {
        Check {
            name: name.into(),
            passed: value >= limit,
            value,
            limit,
            detail: format!("{value:.4} ≥ {limit}"),
        }
    }

    fn flag(name: &str, passed: bool, detail: String) -> Check {
        Check {
            name: name.into(),
            passed,
            value: if passed { 1.0 } else { 0.0 },
            limit: 1.0,
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub subcommand: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub results: Value,
}

impl Summary {
    fn new(subcommand: &str, seed: u64, checks: Vec<Check>, results: Value) -> Self {
        Summary {
            subcommand: subcommand.into(),
            seed,
            passed: checks.iter().all(|c| c.passed),
            checks,
            results,
        }
    }
}

type Writer = Box<dyn FnOnce(&Path) -> Result<()>>;

pub struct Outcome {
    pub summary: Summary,
    writer: Writer,
}

impl Outcome {
    /// Writes the artifacts followed by `summary.json`.
    pub fn write(self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        (self.writer)(dir)?;
        write_json(&dir.join("summary.json"), &self.summary)
    }
}

/// Progress lines on stderr under `--verbose`.
#[derive(Debug, Clone, Copy)]
pub struct Log {
    pub verbose: bool,
    pub start: Instant,
}

impl Log {
    pub fn say(&self, msg: &str) {
        if self.verbose {
            eprintln!("[{:7.2}s] {msg}", self.start.elapsed().as_secs_f64());
        }
    }
}

/// CSV with an explicit header; for rows whose width depends on the chart.
fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::from)?;
    w.write_record(header).map_err(std::io::Error::from)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))
            .map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn side_name(s: Side) -> &'static str {
    match s {
        Side::Left => "left",
        Side::Right => "right",
    }
}

// ---------------------------------------------------------------- classify

/// Chart and sample plan of a classify run; failures are config errors.
pub fn classify_inputs(
    c: &ClassifyConfig,
) -> std::result::Result<(RelationChart, SamplePlan), ConfigError> {
    c.validate()?;
    let chart =
        builtin_chart(&c.chart, &c.params).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    if !matches!(chart.kind, ChartKind::Relation { .. }) {
        return Err(ConfigError::Invalid(format!(
            "`{}` is not a canonical relation chart",
            c.chart
        )));
    }
    let plan = SamplePlan::for_builtin(&c.chart)
        .ok_or_else(|| ConfigError::Invalid(format!("no sample plan for `{}`", c.chart)))?;
    Ok((chart, plan))
}

pub fn classify(cfg: &RunConfig<ClassifyConfig>, log: Log) -> Result<Outcome> {
    let c = &cfg.body;
    let (chart, plan) = classify_inputs(c).map_err(|e| Error::InvalidInput(e.to_string()))?;
    log.say(&format!("certifying `{}`", c.chart));
    let cert = flat_two_sided_cusp_check(&chart, &plan);
    let tol = ClassifyTolerances {
        singular: c.tolerances.singular,
        fold: c.tolerances.fold,
        cusp: c.tolerances.cusp,
        rank: c.tolerances.rank,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points: Vec<Vec<f64>> = (0..c.random_points)
        .map(|_| {
            (0..chart.dim())
                .map(|_| rng.random_range(-c.sample_box..c.sample_box))
                .collect()
        })
        .collect();
    log.say(&format!(
        "classifying {} random points on both sides",
        points.len()
    ));
    let mut reports = Vec::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for side in [Side::Left, Side::Right] {
        let proj = chart.projection(side);
        for rep in flatcusp::par_map(&points, |p| classify_map(proj.as_ref(), side, p, &tol))
            .into_iter()
            .flatten()
        {
            let class = match rep.class {
                SingularClass::Graph => "graph",
                SingularClass::Fold => "fold",
                SingularClass::Cusp => "cusp",
                SingularClass::Degenerate => "degenerate",
            };
            *counts
                .entry(format!("{}_{class}", side_name(side)))
                .or_default() += 1;
            reports.push(rep);
        }
    }
    let mut header: Vec<String> = chart.param_names.clone();
    for pre in ["x", "xi", "y", "eta"] {
        header.extend((1..=chart.n()).map(|i| format!("{pre}{i}")));
    }
    let mut rows = Vec::new();
    for p in &cert.cusp_points {
        let rp = chart.relation_point(p)?;
        rows.push(
            p.iter()
                .chain(&rp.left.base)
                .chain(&rp.left.covector)
                .chain(&rp.right.base)
                .chain(&rp.right.covector)
                .copied()
                .collect(),
        );
    }
    let checks = vec![
        Check {
            name: "condition_i".into(),
            passed: cert.condition_i.passed,
            value: cert.condition_i.residual,
            limit: 0.0,
            detail: cert.condition_i.detail.clone(),
        },
        Check {
            name: "condition_ii".into(),
            passed: cert.condition_ii.passed,
            value: cert.condition_ii.residual,
            limit: 0.0,
            detail: cert.condition_ii.detail.clone(),
        },
        Check {
            name: "condition_iii".into(),
            passed: cert.condition_iii.passed,
            value: cert.condition_iii.residual,
            limit: 0.0,
            detail: cert.condition_iii.detail.clone(),
        },
    ];
    let results = json!({
        "chart": c.chart,
        "sigma1_points": cert.sigma1_points,
        "fold_points": cert.fold_points,
        "cusp_points": cert.cusp_points.len(),
        "random_classes": counts,
    });
    let summary = Summary::new("classify", cfg.seed, checks, results);
    Ok(Outcome {
        summary,
        writer: Box::new(move |dir| {
            write_json(&dir.join("certificate.json"), &cert)?;
            write_json(&dir.join("reports.json"), &reports)?;
            write_table(&dir.join("cusp_points.csv"), &header, &rows)
        }),
    })
}

// ----------------------------------------------------------------- compose

pub fn compose(cfg: &RunConfig<ComposeConfig>, log: Log) -> Result<Outcome> {
    let c = &cfg.body;
    c.validate()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let chart = model_c0_chart();
    let seeds = model_composition_seeds(c.seeds, cfg.seed);
    log.say(&format!("solving {} composition seeds", seeds.len()));
    let solved = compose_scan(&chart, &chart, &seeds, BranchRule::ModelCusp);
    let mut rows: Vec<CompositionRow> = Vec::new();
    let mut worst_distance: f64 = 0.0;
    let mut worst_factor: f64 = 0.0;
    let mut branches: BTreeMap<String, usize> = BTreeMap::new();
    let mut failures: BTreeMap<String, usize> = BTreeMap::new();
    for r in &solved {
        match r {
            Ok(cp) => {
                worst_distance = worst_distance.max(model_containment_distance(cp)?);
                let f = BranchRule::ModelCusp.factors(&cp.point, &cp.intermediate);
                worst_factor = worst_factor.max(f[0].min(f[1]));
                *branches
                    .entry(
                        serde_json::to_value(cp.branch)?
                            .as_str()
                            .unwrap_or("?")
                            .to_string(),
                    )
                    .or_default() += 1;
                rows.push(cp.row());
            }
            Err(e) => *failures.entry(failure_kind(e)).or_default() += 1,
        }
    }
    let fraction = rows.len() as f64 / seeds.len() as f64;
    let mut checks = vec![
        Check::above("converged_fraction", fraction, c.min_converged),
        Check::below("containment", worst_distance, c.containment_tol),
        Check::below("branch_factorization", worst_factor, BRANCH_TOL),
    ];
    let mut intersection = Value::Null;
    if c.intersection {
        log.say("intersection codimension");
        let (diag, umb) = reduced_phase_charts(&ReducedPhase::model())?;
        let (ds, us) = default_intersection_seeds(&umb);
        let rep = intersection_codim_check(&diag, &umb, &ds, &us)?;
        checks.push(Check::flag(
            "intersection_codim",
            rep.found() && rep.consistent,
            format!(
                "codim {:?} on Δ, {:?} on the umbrella",
                rep.codim_diagonal, rep.codim_umbrella
            ),
        ));
        intersection = serde_json::to_value(&rep)?;
    }
    let results = json!({
        "seeds": seeds.len(),
        "converged": rows.len(),
        "branches": branches,
        "failures": failures,
        "max_containment_distance": worst_distance,
        "intersection": intersection,
    });
    Ok(Outcome {
        summary: Summary::new("compose", cfg.seed, checks, results),
        writer: Box::new(move |dir| write_csv(&dir.join("composition.csv"), &rows)),
    })
}

fn failure_kind(e: &Error) -> String {
    let s = format!("{e:?}");
    s.split([' ', '(', '{'])
        .next()
        .unwrap_or("error")
        .to_string()
}

// ---------------------------------------------------------------- umbrella

#[derive(Debug, Serialize)]
struct UmbrellaRecord {
    name: String,
    certified: bool,
    locus_residual: Option<f64>,
    certificate: Option<UmbrellaCertificate>,
    error: Option<String>,
}

/// The chart `(s, t) ↦ (s, t; 0, 0)`: a smooth immersed plane, never an umbrella.
pub fn immersed_plane_chart() -> RelationChart {
    RelationChart::new(
        "immersed_plane",
        ChartKind::Lagrangian { n: 2 },
        smooth_map(2, 4, "immersed_plane", |p| {
            vec![p[0].clone(), p[1].clone(), p[0].lift(0.0), p[0].lift(0.0)]
        }),
        vec!["s".into(), "t".into()],
    )
}

fn max_isotropy(chart: &RelationChart, samples: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let p: Vec<f64> = (0..chart.dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        worst = worst.max(isotropy_defect(chart, &p)?);
    }
    Ok(worst)
}

pub fn umbrella(cfg: &RunConfig<UmbrellaConfig>, log: Log) -> Result<Outcome> {
    let c = &cfg.body;
    c.validate()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let iso_u = max_isotropy(&umbrella_u_chart(), c.isotropy_samples, &mut rng)?;
    let iso_l = max_isotropy(&lambda1_chart(), c.isotropy_samples, &mut rng)?;
    let opts = UmbrellaOptions {
        ring_radii: c.ring_radii.clone(),
        ..UmbrellaOptions::default()
    };
    let coef = c.p1_coefficient;
    let perturbed = ReducedPhase::model()
        .with_p1(smooth_map(5, 1, "c x1 theta3", move |a| {
            vec![&a[0] * &a[4] * coef]
        }))
        .umbrella_chart();
    let base = [0.1, 0.0, 0.0];
    let mut targets: Vec<(
        String,
        RelationChart,
        Vec<f64>,
        Option<flatcusp::composition::UmbrellaChart>,
    )> = vec![(
        "model_umbrella_U".into(),
        umbrella_u_chart(),
        vec![0.1, 0.1],
        None,
    )];
    for (name, form) in [
        ("upsilon_zform", UmbrellaForm::ModelZform),
        ("upsilon_tauform", UmbrellaForm::ModelTauform),
        ("psi_model", UmbrellaForm::ReducedPhase),
    ] {
        let u = model_umbrella_chart(form);
        targets.push((
            name.into(),
            u.chart.clone(),
            u.params_at(base, 0.02, 0.03, 1.0),
            Some(u),
        ));
    }
    targets.push((
        "psi_perturbed".into(),
        perturbed.chart.clone(),
        perturbed.params_at(base, 0.02, 0.03, 1.0),
        Some(perturbed),
    ));
    let mut records = Vec::new();
    let mut checks = vec![
        Check::below("isotropy_U", iso_u, c.isotropy_tol),
        Check::below("isotropy_lambda1", iso_l, c.isotropy_tol),
    ];
    for (name, chart, seed, umb) in targets {
        log.say(&format!("certifying {name}"));
        let rec = match umbrella_check(&chart, &seed, &opts) {
            Ok(cert) => {
                let locus = umb.map(|u| {
                    let r = u.singular_locus_residual(&cert.singular_point);
                    r[0].abs().max(r[1].abs())
                });
                UmbrellaRecord {
                    name,
                    certified: cert.verdict,
                    locus_residual: locus,
                    certificate: Some(cert),
                    error: None,
                }
            }
            Err(e) => UmbrellaRecord {
                name,
                certified: false,
                locus_residual: None,
                certificate: None,
                error: Some(e.to_string()),
            },
        };
        let detail = match (&rec.error, &rec.certificate) {
            (Some(e), _) => e.clone(),
            (None, Some(cert)) if !cert.verdict => format!("failed: {}", cert.failed.join(", ")),
            _ => "open umbrella".into(),
        };
        checks.push(Check::flag(
            &format!("certify_{}", rec.name),
            rec.certified,
            detail,
        ));
        if let Some(l) = rec.locus_residual {
            checks.push(Check::below(
                &format!("singular_locus_{}", rec.name),
                l,
                c.locus_tol,
            ));
        }
        records.push(rec);
    }
    let control = umbrella_check(&immersed_plane_chart(), &[0.1, 0.1], &opts);
    let control_rejected = !matches!(&control, Ok(cert) if cert.verdict);
    checks.push(Check::flag(
        "control_immersed_plane_rejected",
        control_rejected,
        match &control {
            Err(e) => e.to_string(),
            Ok(cert) => format!("verdict {}", cert.verdict),
        },
    ));
    let results = json!({
        "isotropy_defect": { "model_umbrella_U": iso_u, "model_lambda1": iso_l },
        "certified": records.iter().map(|r| (r.name.clone(), r.certified)).collect::<BTreeMap<_, _>>(),
    });
    Ok(Outcome {
        summary: Summary::new("umbrella", cfg.seed, checks, results),
        writer: Box::new(move |dir| write_json(&dir.join("certificates.json"), &records)),
    })
}

// ------------------------------------------------------------------ symbol

#[derive(Debug, Serialize)]
struct FitRecord {
    instance: String,
    branch: flatcusp::composition::Branch,
    exponent: f64,
    stderr: f64,
    n_samples: usize,
}

/// `N = 1` instead of `N = θ₃`: a reduced phase that is not the model.
pub fn unit_n_phase() -> ReducedPhase {
    ReducedPhase::model().with_n(smooth_map(5, 1, "1", |a| vec![a[0].lift(1.0)]))
}

pub fn symbol(cfg: &RunConfig<SymbolConfig>, log: Log) -> Result<Outcome> {
    let c = &cfg.body;
    c.validate()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let deltas = log_spaced(c.delta_min, c.delta_max, c.samples);
    let mut checks = Vec::new();
    let mut fits = Vec::new();
    let mut results = serde_json::Map::new();
    for (name, rp, tol) in [
        ("model", ReducedPhase::model(), c.model_tol),
        ("unit_n", unit_n_phase(), c.instance_tol),
    ] {
        log.say(&format!("fitting {name}"));
        let s: BlowupSummary = blowup_summary(&rp, &deltas)?;
        for f in [&s.diagonal, &s.umbrella] {
            let branch = serde_json::to_value(f.branch)?;
            checks.push(Check::below(
                &format!("exponent_{name}_{}", branch.as_str().unwrap_or("?")),
                (f.exponent + 0.5).abs(),
                tol,
            ));
            fits.push(FitRecord {
                instance: name.into(),
                branch: f.branch,
                exponent: f.exponent,
                stderr: f.stderr,
                n_samples: f.n_samples,
            });
        }
        checks.push(Check::below(
            &format!("ratio_{name}"),
            s.ratio_max / s.ratio_min,
            c.ratio_bound,
        ));
        results.insert(name.into(), serde_json::to_value(&s)?);
    }
    Ok(Outcome {
        summary: Summary::new("symbol", cfg.seed, checks, Value::Object(results)),
        writer: Box::new(move |dir| write_json(&dir.join("fits.json"), &fits)),
    })
}

// ------------------------------------------------------------------- radon

#[derive(Debug, Serialize)]
struct SliceInfo {
    file: String,
    /// Axis held fixed.
    axis: usize,
    index: usize,
    /// Field values mapped to gray levels 0 and 255.
    lo: f64,
    hi: f64,
}

#[derive(Debug, Serialize)]
struct FieldSidecar {
    file: String,
    dims: [usize; 3],
    #[serde(rename = "box")]
    bounds: [[f64; 2]; 3],
    layout: &'static str,
    dtype: &'static str,
    slices: Vec<SliceInfo>,
}

fn slice(f: &ScalarField3D, axis: usize, index: usize) -> (usize, usize, Vec<f64>) {
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (w, h) = (f.dims[a], f.dims[b]);
    let mut out = Vec::with_capacity(w * h);
    for row in (0..h).rev() {
        for col in 0..w {
            let mut ijk = [0; 3];
            ijk[axis] = index;
            ijk[a] = col;
            ijk[b] = row;
            out.push(f.get(ijk));
        }
    }
    (w, h, out)
}

fn random_field(grid: &flatcusp::radon::GridSpec, rng: &mut ChaCha8Rng) -> ScalarField3D {
    let mut f = ScalarField3D::zeros(grid);
    f.data
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    f
}

pub fn radon(cfg: &RunConfig<RadonConfig>, log: Log) -> Result<Outcome> {
    let c = &cfg.body;
    c.validate()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    log.say(&format!("adjoint identity at {}³", c.grid.n));
    let f = random_field(&c.grid, &mut rng);
    let g = random_field(&c.grid, &mut rng);
    let lhs = radon_apply(&f, &c.curve)?.dot(&g);
    let rhs = f.dot(&radon_adjoint_apply(&g, &c.curve)?);
    let adjoint = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
    log.say("normal image of a point scatterer");
    let image = normal_image(c.source, &c.curve, &c.grid, c.width_cells)?;
    let locus = predicted_locus(c.source, &c.locus, &c.curve, &c.grid);
    let stats = ridge_match(&image, &locus, &c.ridge)?;
    log.say("chance baseline");
    let baseline = chance_baseline(&c.grid, &locus, &c.ridge, cfg.seed, c.baseline_trials)?;
    let checks = vec![
        Check::below("adjoint_identity", adjoint, c.adjoint_tol),
        Check::above("ridge_coverage", stats.coverage, c.coverage_min),
        Check::below("chance_baseline", baseline, c.baseline_max),
    ];
    let results = json!({
        "adjoint": { "forward": lhs, "adjoint": rhs, "relative_gap": adjoint },
        "ridge": stats,
        "chance_baseline": baseline,
        "locus_samples": locus.samples.len(),
    });
    let center = [0, 1, 2].map(|a| {
        let h = c.grid.spacing();
        (((c.source[a] - c.grid.lo) / h).round().max(0.0) as usize).min(c.grid.n - 1)
    });
    Ok(Outcome {
        summary: Summary::new("radon", cfg.seed, checks, results),
        writer: Box::new(move |dir| {
            let data: Vec<f32> = image.data.iter().map(|&v| v as f32).collect();
            write_raw_f32(&dir.join("normal_image.f32"), &data)?;
            let mut slices = Vec::new();
            for axis in 0..3 {
                let (w, h, vals) = slice(&image, axis, center[axis]);
                let (px, lo, hi) = to_gray(&vals);
                let file = format!("slice_{}.pgm", ["x", "y", "z"][axis]);
                write_pgm(&dir.join(&file), w, h, &px)?;
                slices.push(SliceInfo {
                    file,
                    axis,
                    index: center[axis],
                    lo,
                    hi,
                });
            }
            let sidecar = FieldSidecar {
                file: "normal_image.f32".into(),
                dims: image.dims,
                bounds: [[image.lo, image.hi]; 3],
                layout: "x fastest, then y, then z",
                dtype: "float32 little-endian",
                slices,
            };
            write_json(&dir.join("normal_image.json"), &sidecar)?;
            write_csv(&dir.join("locus.csv"), &locus.rows())
        }),
    })
}

// ---------------------------------------------------------------- caustics

#[derive(Debug, Serialize)]
struct LabelledReport<'a> {
    #[serde(flatten)]
    report: &'a CausticReport,
    oracle: Option<OracleLabel>,
}

pub fn caustics(cfg: &RunConfig<CausticsConfig>, log: Log) -> Result<Outcome> {
    let c = &cfg.body;
    c.validate()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let scan_cfg = c.scan();
    log.say(&format!("scanning {}×{} launch grid", c.grid.n1, c.grid.n2));
    let scan = caustic_scan(&scan_cfg)?;
    let launches: Vec<[f64; 2]> = (0..c.grid.n2)
        .flat_map(|j| (0..c.grid.n1).map(move |i| (i, j)))
        .map(|(i, j)| c.grid.point(i, j))
        .collect();
    let opts = scan_cfg.trace_options();
    let traced = flatcusp::par_map(&launches, |a| trace_ray(&c.model, c.source, *a, &opts));
    let rays: Vec<RayRow> = traced.iter().flatten().flat_map(|r| r.rows()).collect();
    let mut checks = vec![Check::below(
        "hamiltonian_drift",
        scan.h_drift_max,
        c.h_drift_tol,
    )];
    let cusps: Vec<&CausticReport> = scan
        .reports
        .iter()
        .filter(|r| r.class == CausticClass::Cusp)
        .collect();
    let worst_r12 = cusps
        .iter()
        .map(|r| r.residuals[0].abs().max(r.residuals[1].abs()))
        .fold(0.0, f64::max);
    let least_r3 = cusps
        .iter()
        .map(|r| r.residuals[2].abs())
        .fold(f64::INFINITY, f64::min);
    let least_margin = cusps
        .iter()
        .map(|r| r.rank2_margin.unwrap_or(0.0))
        .fold(f64::INFINITY, f64::min);
    if !cusps.is_empty() {
        checks.push(Check::below("cusp_r1_r2", worst_r12, c.cusp_residual_tol));
        checks.push(Check::above("cusp_r3", least_r3, c.cusp_curvature_min));
        checks.push(Check::above(
            "cusp_rank2_margin",
            least_margin,
            c.tolerances.rank,
        ));
    }
    let mut labels: Vec<Option<OracleLabel>> = vec![None; scan.reports.len()];
    let mut oracle = Value::Null;
    if let Some(o) = &c.oracle {
        log.say(&format!("dense oracle on {}×{}", o.n1, o.n2));
        let ode = OdeOptions {
            rtol: o.rtol,
            atol: o.rtol,
            ..c.integrator
        };
        let dense = DenseOracle::build(&scan_cfg, c.grid.with_size(o.n1, o.n2), ode)?;
        let mut agree = 0;
        for (slot, r) in labels.iter_mut().zip(&scan.reports) {
            let l = dense.label(r, o.band);
            let same = matches!(
                (r.class, l),
                (CausticClass::Fold, OracleLabel::Fold) | (CausticClass::Cusp, OracleLabel::Cusp)
            );
            agree += usize::from(same);
            *slot = Some(l);
        }
        let consistent = !scan.reports.is_empty() || dense.sign_changes() == 0;
        checks.push(Check::flag(
            "oracle_agreement",
            agree == scan.reports.len() && consistent,
            format!(
                "{agree}/{} roots agree; oracle sees {} sign changes",
                scan.reports.len(),
                dense.sign_changes()
            ),
        ));
        oracle = json!({ "agree": agree, "roots": scan.reports.len(), "sign_changes": dense.sign_changes() });
    }
    let results = json!({
        "rays": scan.rays,
        "rays_failed": scan.rays_failed,
        "crossings": scan.crossings,
        "unclassified": scan.unclassified,
        "folds": scan.count(CausticClass::Fold),
        "cusps": scan.count(CausticClass::Cusp),
        "h_drift_max": scan.h_drift_max,
        "oracle": oracle,
    });
    let caustic_rows = scan.rows();
    let reports = scan.reports.clone();
    Ok(Outcome {
        summary: Summary::new("caustics", cfg.seed, checks, results),
        writer: Box::new(move |dir| {
            write_csv(&dir.join("rays.csv"), &rays)?;
            write_csv(&dir.join("caustics.csv"), &caustic_rows)?;
            let labelled: Vec<LabelledReport> = reports
                .iter()
                .zip(labels)
                .map(|(report, oracle)| LabelledReport { report, oracle })
                .collect();
            write_json(&dir.join("reports.json"), &labelled)
        }),
    })
}
