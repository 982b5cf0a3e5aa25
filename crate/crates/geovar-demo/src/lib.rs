//! Browser bindings for the interactive demo page: simulate a spatial
//! field and fit its variogram, explore the negative-reweighting surface,
//! and draw the Equal Earth graticule. Each export returns JSON for the
//! page's canvas drawing; all computation happens in the wasm module.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use geovar::dataset::{generate_synthetic, LatLonBounds, SyntheticSpec};
use geovar::error::Error;
use geovar::geodesy::{equal_earth_project, GeoCoord};
use geovar::reweighting::{classify, raw_weight, DeltaScale, NegativeClass, ReweightConfig};
use geovar::semivariogram::{
    estimate_empirical_with_workers, evaluate_spherical, fit_spherical, SphericalModel,
};

#[derive(Serialize)]
struct DemoPoint {
    lat: f64,
    lon: f64,
    x: f64,
    y: f64,
    /// First feature component, for coloring the map by field value.
    c: f64,
}

#[derive(Serialize)]
struct DemoBin {
    h: f64,
    gamma: f64,
    count: u64,
}

#[derive(Serialize)]
struct DemoFit {
    nugget: f64,
    partial_sill: f64,
    range_km: f64,
    objective: f64,
    degenerate: bool,
}

#[derive(Serialize)]
struct SimulateResult {
    points: Vec<DemoPoint>,
    bins: Vec<DemoBin>,
    fit: DemoFit,
    curve: Vec<[f64; 2]>,
    h_max_km: f64,
}

fn simulate_and_fit_impl(
    n: usize,
    range_km: f64,
    sill: f64,
    nugget: f64,
    seed: u64,
    n_bins: usize,
    h_max_km: f64,
) -> Result<SimulateResult, Error> {
    let n = n.clamp(10, 1500);
    let n_bins = n_bins.clamp(4, 120);
    let h_max_km = h_max_km.clamp(200.0, 20000.0);
    let spec = SyntheticSpec {
        n,
        dim: 16,
        latent_dim: 8,
        cov_range_km: range_km.clamp(10.0, 10000.0),
        cov_sill: sill.clamp(0.0, 5.0),
        cov_nugget: nugget.clamp(0.0, 5.0),
        seed,
        region: LatLonBounds::new(-20.0, 20.0, -20.0, 20.0)?,
    };
    let dataset = generate_synthetic(&spec)?;
    let ev = estimate_empirical_with_workers(&dataset, n_bins, h_max_km, u64::MAX, seed, 1)?;
    let outcome = fit_spherical(&ev)?;

    let points = dataset
        .records()
        .iter()
        .map(|r| {
            let p = equal_earth_project(r.coord);
            DemoPoint {
                lat: r.coord.lat(),
                lon: r.coord.lon(),
                x: p.x,
                y: p.y,
                c: r.features[0] as f64,
            }
        })
        .collect();
    let bins = ev
        .bins
        .iter()
        .filter(|b| b.pair_count > 0)
        .map(|b| DemoBin {
            h: b.h_center,
            gamma: b.gamma_hat,
            count: b.pair_count,
        })
        .collect();
    let curve = (0..=120)
        .map(|k| {
            let h = h_max_km * k as f64 / 120.0;
            [h, evaluate_spherical(&outcome.model, h).expect("h >= 0")]
        })
        .collect();
    Ok(SimulateResult {
        points,
        bins,
        fit: DemoFit {
            nugget: outcome.model.nugget(),
            partial_sill: outcome.model.partial_sill(),
            range_km: outcome.model.range_km(),
            objective: outcome.objective,
            degenerate: outcome.degenerate,
        },
        curve,
        h_max_km,
    })
}

/// Simulates a spatial Gaussian process, estimates its embedding
/// semivariogram, fits the spherical model, and returns everything the
/// page needs to draw the map and the curve.
#[wasm_bindgen]
pub fn simulate_and_fit(
    n: usize,
    range_km: f64,
    sill: f64,
    nugget: f64,
    seed: u64,
    n_bins: usize,
    h_max_km: f64,
) -> Result<String, JsValue> {
    let out = simulate_and_fit_impl(n, range_km, sill, nugget, seed, n_bins, h_max_km)
        .map_err(|e| JsValue::from_str(&e.to_string()))?;
    serde_json::to_string(&out).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[derive(Serialize)]
struct WeightSurface {
    cols: usize,
    rows: usize,
    d_max_km: f64,
    dcos_max: f64,
    /// Row-major clamped weights, row 0 at d_cos = 0.
    weights: Vec<f64>,
    /// 0 = neutral, 1 = hard, 2 = false negative.
    classes: Vec<u8>,
    /// Expected-dissimilarity curve `delta_scale * gamma(d)`.
    expected: Vec<[f64; 2]>,
    theta1_km: f64,
    theta2_km: f64,
}

fn weight_surface_impl(
    nugget: f64,
    partial_sill: f64,
    range_km: f64,
    s1: f64,
    s2: f64,
    theta1_km: f64,
    theta2_km: f64,
    delta_scale: u8,
    d_max_km: f64,
    cols: usize,
    rows: usize,
) -> Result<WeightSurface, Error> {
    let cols = cols.clamp(16, 400);
    let rows = rows.clamp(16, 400);
    let d_max_km = d_max_km.clamp(100.0, 20000.0);
    let model = SphericalModel::new(nugget.max(0.0), partial_sill.max(0.0), range_km.max(1.0))?;
    let scale = DeltaScale::from_flag(delta_scale)?;
    let theta1 = theta1_km.max(theta2_km);
    let cfg = ReweightConfig::new(s1.max(1e-3), s2.max(1e-3), theta1, theta2_km.max(0.0), model, scale)?;

    let dcos_max = 2.0f64;
    let mut weights = Vec::with_capacity(cols * rows);
    let mut classes = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        let d_cos = dcos_max * r as f64 / (rows - 1) as f64;
        for c in 0..cols {
            let d = d_max_km * c as f64 / (cols - 1) as f64;
            let delta = d_cos - cfg.expected_dissimilarity(d);
            weights.push(raw_weight(&cfg, delta, d).clamp(
                geovar::reweighting::WEIGHT_MIN,
                geovar::reweighting::WEIGHT_MAX,
            ));
            classes.push(match classify(&cfg, delta, d) {
                NegativeClass::Neutral => 0,
                NegativeClass::Hard => 1,
                NegativeClass::FalseNegative => 2,
            });
        }
    }
    let expected = (0..=160)
        .map(|k| {
            let d = d_max_km * k as f64 / 160.0;
            [d, cfg.expected_dissimilarity(d)]
        })
        .collect();
    Ok(WeightSurface {
        cols,
        rows,
        d_max_km,
        dcos_max,
        weights,
        classes,
        expected,
        theta1_km: cfg.theta1_km(),
        theta2_km: cfg.theta2_km(),
    })
}

/// Evaluates the negative-pair weight over a (distance, cosine distance)
/// grid for heatmap rendering, along with the expected-dissimilarity
/// curve and the branch thresholds.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn weight_surface(
    nugget: f64,
    partial_sill: f64,
    range_km: f64,
    s1: f64,
    s2: f64,
    theta1_km: f64,
    theta2_km: f64,
    delta_scale: u8,
    d_max_km: f64,
    cols: usize,
    rows: usize,
) -> Result<String, JsValue> {
    let out = weight_surface_impl(
        nugget, partial_sill, range_km, s1, s2, theta1_km, theta2_km, delta_scale, d_max_km, cols,
        rows,
    )
    .map_err(|e| JsValue::from_str(&e.to_string()))?;
    serde_json::to_string(&out).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn graticule_impl(step_deg: usize) -> Vec<Vec<[f64; 2]>> {
    let step = step_deg.clamp(5, 45) as i64;
    let mut lines = Vec::new();
    // meridians
    let mut lon = -180i64;
    while lon <= 180 {
        let mut line = Vec::new();
        let mut lat = -90i64;
        while lat <= 90 {
            let p = equal_earth_project(GeoCoord::new(lat as f64, lon as f64).expect("grid"));
            line.push([p.x, p.y]);
            lat += 3;
        }
        lines.push(line);
        lon += step;
    }
    // parallels
    let mut lat = -90i64;
    while lat <= 90 {
        let mut line = Vec::new();
        let mut l = -180i64;
        while l <= 180 {
            let p = equal_earth_project(GeoCoord::new(lat as f64, l as f64).expect("grid"));
            line.push([p.x, p.y]);
            l += 3;
        }
        lines.push(line);
        lat += step;
    }
    lines
}

/// Equal Earth graticule polylines in projection coordinates.
#[wasm_bindgen]
pub fn equal_earth_graticule(step_deg: usize) -> Result<String, JsValue> {
    serde_json::to_string(&graticule_impl(step_deg)).map_err(|e| JsValue::from_str(&e.to_string()))
}
