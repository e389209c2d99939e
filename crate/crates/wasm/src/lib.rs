//! Browser bindings: three small interactive operations over the toolkit,
//! each returning a JSON string for the static page in `www/`.

use flatcusp::caustics::{caustic_scan, trace_ray, CausticClass, ScanConfig, SoundSpeedModel};
use flatcusp::composition::{Branch, ReducedPhase};
use flatcusp::phase::{model_c0_chart, Side};
use flatcusp::singularity::classify_point;
use flatcusp::symbol::{
    blowup_exponent, diagonal_path_point, log_spaced, symbol_factor, umbrella_path_point,
    CriticalBranch,
};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Singularity report of the model chart at `(x₁, x₂, x₃, y₁, θ₂, θ₃)` on one
/// side, with the closed-form determinant alongside.
pub fn classify_model(p: [f64; 6], right: bool) -> flatcusp::Result<Value> {
    let side = if right { Side::Right } else { Side::Left };
    let rep = classify_point(&model_c0_chart(), side, &p)?;
    let u = p[0] - p[3];
    Ok(json!({
        "class": rep.class,
        "det": rep.det,
        "closed_form_det": 2.0 * p[4] + 12.0 * u * u * p[5],
        "kernel": rep.kernel,
        "residuals": rep.residuals,
    }))
}

/// Symbol factors on both branches of the model composition along paths
/// approaching the intersection, with the fitted blow-up exponents.
pub fn symbol_profile(delta_min: f64, delta_max: f64, samples: usize) -> flatcusp::Result<Value> {
    if !(delta_min > 0.0 && delta_max > delta_min && samples >= 2) {
        return Err(flatcusp::Error::InvalidInput(
            "need 0 < δ_min < δ_max and at least 2 samples".into(),
        ));
    }
    let rp = ReducedPhase::model();
    let x = [0.1, -0.2, 0.05];
    let deltas = log_spaced(delta_min, delta_max, samples);
    let diag = CriticalBranch::reduced(&rp, Branch::Diagonal);
    let umb = CriticalBranch::reduced(&rp, Branch::Umbrella);
    let dpath = |d: f64| diagonal_path_point(&rp, x, 0.0, 1.0, d);
    let upath = |d: f64| umbrella_path_point(&rp, x, 0.5, 1.0, d);
    let mut rows = Vec::with_capacity(deltas.len());
    for &d in &deltas {
        rows.push(json!({
            "delta": d,
            "diagonal": symbol_factor(&diag, &dpath(d)?)?,
            "umbrella": symbol_factor(&umb, &upath(d)?)?,
        }));
    }
    Ok(json!({
        "samples": rows,
        "diagonal": blowup_exponent(&diag, dpath, &deltas)?,
        "umbrella": blowup_exponent(&umb, upath, &deltas)?,
    }))
}

fn lens(amplitude: f64) -> SoundSpeedModel {
    match SoundSpeedModel::default_lens() {
        SoundSpeedModel::GaussianLens {
            background,
            center,
            width,
            stretch,
            ..
        } => SoundSpeedModel::GaussianLens {
            background,
            amplitude,
            center,
            width,
            stretch,
        },
        other => other,
    }
}

/// Rays of the `a₂ = 0` fan through the tube lens projected to the
/// `(x₁, x₃)` plane, the points where `det J` changes sign along them, and
/// optionally the classified caustic points of a full launch-grid scan.
pub fn caustic_fan(amplitude: f64, rays: usize, classify: bool) -> flatcusp::Result<Value> {
    let cfg = ScanConfig {
        model: lens(amplitude),
        ..ScanConfig::default()
    };
    cfg.validate()?;
    let opts = cfg.trace_options();
    let mut paths = Vec::with_capacity(rays);
    let mut crossings = Vec::new();
    for i in 0..rays {
        let a1 = -0.5 + i as f64 / (rays - 1).max(1) as f64;
        let ray = trace_ray(&cfg.model, cfg.source, [a1, 0.0], &opts)?;
        paths.push(
            ray.samples
                .iter()
                .map(|s| [s.x[0], s.x[2]])
                .collect::<Vec<_>>(),
        );
        for w in ray.samples.windows(2) {
            if w[0].det.signum() != w[1].det.signum() && w[0].t > cfg.tolerances.t_min {
                let s = w[0].det / (w[0].det - w[1].det);
                crossings.push([
                    w[0].x[0] + s * (w[1].x[0] - w[0].x[0]),
                    w[0].x[2] + s * (w[1].x[2] - w[0].x[2]),
                ]);
            }
        }
    }
    let mut caustics = Vec::new();
    if classify {
        let scan = caustic_scan(&cfg)?;
        for r in scan
            .reports
            .iter()
            .filter(|r| r.class != CausticClass::None)
        {
            caustics.push(json!({ "x": r.x, "class": r.class, "residuals": r.residuals }));
        }
    }
    Ok(json!({ "source": cfg.source, "rays": paths, "crossings": crossings, "caustics": caustics }))
}

fn respond(v: flatcusp::Result<Value>) -> Result<String, JsError> {
    v.map(|v| v.to_string())
        .map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = classifyModel)]
pub fn classify_model_js(
    x1: f64,
    x2: f64,
    x3: f64,
    y1: f64,
    theta2: f64,
    theta3: f64,
    right: bool,
) -> Result<String, JsError> {
    respond(classify_model([x1, x2, x3, y1, theta2, theta3], right))
}

#[wasm_bindgen(js_name = symbolProfile)]
pub fn symbol_profile_js(
    delta_min: f64,
    delta_max: f64,
    samples: usize,
) -> Result<String, JsError> {
    respond(symbol_profile(delta_min, delta_max, samples))
}

#[wasm_bindgen(js_name = causticFan)]
pub fn caustic_fan_js(amplitude: f64, rays: usize, classify: bool) -> Result<String, JsError> {
    respond(caustic_fan(amplitude, rays, classify))
}
