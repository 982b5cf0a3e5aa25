//! Empirical embedding semivariogram estimation and spherical model fitting.
//!
//! The empirical curve bins half the mean cosine distance between feature
//! vectors by great-circle separation. A three-parameter spherical model
//! (nugget, partial sill, range) is then fit by weighted least squares,
//! seeded from a coarse grid and refined with Nelder-Mead.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dataset::Dataset;
use crate::error::Error;
use crate::geodesy::haversine_km;

/// One distance bin of the empirical semivariogram. `gamma_hat` is NaN
/// exactly when `pair_count` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VariogramBin {
    pub h_lo: f64,
    pub h_center: f64,
    pub h_hi: f64,
    pub gamma_hat: f64,
    pub pair_count: u64,
}

/// Binned estimate of half the mean cosine distance per separation bin.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalVariogram {
    /// Non-overlapping, contiguous bins in ascending distance order.
    pub bins: Vec<VariogramBin>,
    /// Number of unordered pairs evaluated (before the distance cutoff).
    pub total_pairs_sampled: u64,
    /// Seed used for pair subsampling (unused when exhaustive).
    pub seed: u64,
}

/// Fitted spherical variogram: nugget `c0`, partial sill `c`, range `a`.
///
/// `evaluate_spherical` gives `c0` at distance 0, rises as
/// `c0 + c (1.5 t - 0.5 t^3)` with `t = h/a`, and plateaus at `c0 + c`
/// for `h >= a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalModel {
    nugget: f64,
    partial_sill: f64,
    range_km: f64,
}

impl SphericalModel {
    pub fn new(nugget: f64, partial_sill: f64, range_km: f64) -> Result<Self, Error> {
        let ok = nugget.is_finite()
            && partial_sill.is_finite()
            && range_km.is_finite()
            && nugget >= 0.0
            && partial_sill >= 0.0
            && range_km > 0.0;
        if !ok {
            return Err(Error::InvalidParameter {
                name: "spherical model",
                reason: format!(
                    "need nugget >= 0, partial_sill >= 0, range > 0; got ({nugget}, {partial_sill}, {range_km})"
                ),
            });
        }
        Ok(SphericalModel {
            nugget,
            partial_sill,
            range_km,
        })
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn partial_sill(&self) -> f64 {
        self.partial_sill
    }

    pub fn range_km(&self) -> f64 {
        self.range_km
    }

    /// Total plateau value `nugget + partial_sill`.
    pub fn sill(&self) -> f64 {
        self.nugget + self.partial_sill
    }
}

/// Cosine distance `1 - u.v / (|u| |v|)`, computed in f64, clamped to [0, 2].
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64, Error> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    // identical vectors accumulate dot == nu == nv; short-circuit so the
    // identity law holds exactly instead of up to rounding
    if dot == nu && dot == nv {
        return Ok(0.0);
    }
    Ok((1.0 - dot / (nu.sqrt() * nv.sqrt())).clamp(0.0, 2.0))
}

/// Evaluates the spherical model at distance `h_km >= 0`.
pub fn evaluate_spherical(m: &SphericalModel, h_km: f64) -> Result<f64, Error> {
    if !(h_km >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "h_km",
            reason: format!("distance must be nonnegative, got {h_km}"),
        });
    }
    if h_km == 0.0 {
        return Ok(m.nugget);
    }
    Ok(m.nugget + m.partial_sill * spherical_shape(h_km, m.range_km))
}

/// The unit-sill spherical shape: 0 at h = 0, 1 for h >= a.
fn spherical_shape(h: f64, a: f64) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    let t = h / a;
    if t >= 1.0 {
        1.0
    } else {
        1.5 * t - 0.5 * t * t * t
    }
}

fn resolve_workers() -> usize {
    #[cfg(target_arch = "wasm32")]
    {
        1
    }
    #[cfg(not(target_arch = "wasm32"))]
    {
        match std::env::var("GEOVAR_THREADS")
            .ok()
            .and_then(|s| s.trim().parse::<usize>().ok())
        {
            Some(0) | None => std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            Some(n) => n,
        }
    }
}

/// Estimates the empirical embedding semivariogram.
///
/// Every unordered record pair with separation at most `h_max_km` adds its
/// cosine distance to the enclosing bin; each bin reports
/// `sum / (2 * pair_count)`. When the full pair count exceeds `max_pairs`,
/// that many distinct pairs are sampled uniformly with `seed`. Worker count
/// follows the `GEOVAR_THREADS` environment variable (0 or unset = auto);
/// results do not depend on it.
pub fn estimate_empirical(
    d: &Dataset,
    n_bins: usize,
    h_max_km: f64,
    max_pairs: u64,
    seed: u64,
) -> Result<EmpiricalVariogram, Error> {
    estimate_empirical_with_workers(d, n_bins, h_max_km, max_pairs, seed, resolve_workers())
}

/// `estimate_empirical` with an explicit worker count (1 = sequential).
pub fn estimate_empirical_with_workers(
    d: &Dataset,
    n_bins: usize,
    h_max_km: f64,
    max_pairs: u64,
    seed: u64,
    workers: usize,
) -> Result<EmpiricalVariogram, Error> {
    let n = d.len();
    if n < 2 {
        return Err(Error::EmptyDataset(format!(
            "variogram estimation needs at least 2 records, got {n}"
        )));
    }
    if n_bins == 0 {
        return Err(Error::InvalidParameter {
            name: "n_bins",
            reason: "must be positive".into(),
        });
    }
    if !(h_max_km > 0.0) || !h_max_km.is_finite() {
        return Err(Error::InvalidParameter {
            name: "h_max_km",
            reason: format!("must be positive, got {h_max_km}"),
        });
    }
    if max_pairs == 0 {
        return Err(Error::InvalidParameter {
            name: "max_pairs",
            reason: "must be positive".into(),
        });
    }

    let total = n as u64 * (n as u64 - 1) / 2;
    let sampled: Option<Vec<u64>> = if total > max_pairs {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut chosen = HashSet::with_capacity(max_pairs as usize);
        let mut order = Vec::with_capacity(max_pairs as usize);
        // Floyd's algorithm: k distinct draws from [0, total)
        for j in (total - max_pairs)..total {
            let t = rng.random_range(0..=j);
            let pick = if chosen.contains(&t) { j } else { t };
            chosen.insert(pick);
            order.push(pick);
        }
        order.sort_unstable();
        Some(order)
    } else {
        None
    };
    let units: u64 = sampled.as_ref().map(|s| s.len() as u64).unwrap_or(total);

    let width = h_max_km / n_bins as f64;
    let records = d.records();

    // fixed-size chunks keep the merge order independent of threading
    const CHUNK: u64 = 1 << 16;
    let n_chunks = units.div_ceil(CHUNK);
    let process_chunk = |chunk: u64| -> Result<(Vec<f64>, Vec<u64>), Error> {
        let lo = chunk * CHUNK;
        let hi = (lo + CHUNK).min(units);
        let mut sums = vec![0.0f64; n_bins];
        let mut counts = vec![0u64; n_bins];
        for u in lo..hi {
            let t = match &sampled {
                Some(s) => s[u as usize],
                None => u,
            };
            let (i, j) = unrank_pair(t, n as u64);
            let (ri, rj) = (&records[i as usize], &records[j as usize]);
            let dist = haversine_km(ri.coord, rj.coord);
            if dist > h_max_km {
                continue;
            }
            let bin = ((dist / width) as usize).min(n_bins - 1);
            sums[bin] += cosine_distance(&ri.features, &rj.features)?;
            counts[bin] += 1;
        }
        Ok((sums, counts))
    };

    let workers = workers.max(1).min(n_chunks.max(1) as usize);
    let mut partials: Vec<(u64, Result<(Vec<f64>, Vec<u64>), Error>)> =
        Vec::with_capacity(n_chunks as usize);
    if workers == 1 {
        for chunk in 0..n_chunks {
            partials.push((chunk, process_chunk(chunk)));
        }
    } else {
        #[cfg(not(target_arch = "wasm32"))]
        {
            use std::sync::atomic::{AtomicU64, Ordering};
            let next = AtomicU64::new(0);
            let collected = std::thread::scope(|scope| {
                let handles: Vec<_> = (0..workers)
                    .map(|_| {
                        scope.spawn(|| {
                            let mut local = Vec::new();
                            loop {
                                let chunk = next.fetch_add(1, Ordering::Relaxed);
                                if chunk >= n_chunks {
                                    break;
                                }
                                local.push((chunk, process_chunk(chunk)));
                            }
                            local
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("variogram worker panicked"))
                    .collect::<Vec<_>>()
            });
            partials = collected;
            partials.sort_by_key(|(chunk, _)| *chunk);
        }
        #[cfg(target_arch = "wasm32")]
        {
            for chunk in 0..n_chunks {
                partials.push((chunk, process_chunk(chunk)));
            }
        }
    }

    let mut sums = vec![0.0f64; n_bins];
    let mut counts = vec![0u64; n_bins];
    for (_, partial) in partials {
        let (s, c) = partial?;
        for b in 0..n_bins {
            sums[b] += s[b];
            counts[b] += c[b];
        }
    }

    let bins = (0..n_bins)
        .map(|b| {
            let h_lo = b as f64 * width;
            let h_hi = if b + 1 == n_bins { h_max_km } else { (b + 1) as f64 * width };
            VariogramBin {
                h_lo,
                h_center: 0.5 * (h_lo + h_hi),
                h_hi,
                gamma_hat: if counts[b] == 0 {
                    f64::NAN
                } else {
                    sums[b] / (2.0 * counts[b] as f64)
                },
                pair_count: counts[b],
            }
        })
        .collect();
    Ok(EmpiricalVariogram {
        bins,
        total_pairs_sampled: units,
        seed,
    })
}

/// Maps a lexicographic pair rank `t` to indices `(i, j)` with `i < j < n`.
fn unrank_pair(t: u64, n: u64) -> (u64, u64) {
    // pairs with first index < i: off(i) = i*(2n - i - 1)/2; invert by
    // the quadratic formula, then correct for rounding
    let tf = t as f64;
    let nf = n as f64;
    let mut i = ((2.0 * nf - 1.0 - ((2.0 * nf - 1.0) * (2.0 * nf - 1.0) - 8.0 * tf).sqrt()) / 2.0)
        .floor()
        .max(0.0) as u64;
    let off = |i: u64| i * (2 * n - i - 1) / 2;
    while i + 1 < n && off(i + 1) <= t {
        i += 1;
    }
    while i > 0 && off(i) > t {
        i -= 1;
    }
    let j = i + 1 + (t - off(i));
    (i, j)
}

/// Result of a spherical model fit.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: SphericalModel,
    /// Weighted sum of squared residuals at the returned parameters.
    pub objective: f64,
    /// Objective at the coarse-grid seed; refinement never exceeds it.
    pub grid_objective: f64,
    /// Set when every nonempty bin is exactly zero and the returned
    /// model is the flat zero curve.
    pub degenerate: bool,
}

/// Fits a spherical model to the nonempty bins, minimizing the
/// pair-count-weighted squared error. Deterministic: a profiled coarse
/// grid over the range seeds a bounded Nelder-Mead refinement.
pub fn fit_spherical(ev: &EmpiricalVariogram) -> Result<FitOutcome, Error> {
    let pts: Vec<(f64, f64, f64)> = ev
        .bins
        .iter()
        .filter(|b| b.pair_count > 0 && b.gamma_hat.is_finite())
        .map(|b| (b.h_center, b.gamma_hat, b.pair_count as f64))
        .collect();
    if pts.len() < 3 {
        return Err(Error::TooFewBins(pts.len()));
    }
    let h_max = ev.bins.last().map(|b| b.h_hi).unwrap_or(1.0);

    if pts.iter().all(|&(_, g, _)| g == 0.0) {
        return Ok(FitOutcome {
            model: SphericalModel::new(0.0, 0.0, h_max)?,
            objective: 0.0,
            grid_objective: 0.0,
            degenerate: true,
        });
    }

    let objective = |c0: f64, c: f64, a: f64| -> f64 {
        let c0 = c0.max(0.0);
        let c = c.max(0.0);
        let a = a.clamp(1e-9, h_max);
        pts.iter()
            .map(|&(h, g, w)| {
                let r = g - (c0 + c * spherical_shape(h, a));
                w * r * r
            })
            .sum()
    };

    // heuristic candidate: nugget from the first nonempty bin, sill from
    // the tail mean, range where the curve first reaches 95% of the sill
    let g_first = pts[0].1;
    let tail = pts.len().div_ceil(5);
    let sill0 = pts[pts.len() - tail..].iter().map(|p| p.1).sum::<f64>() / tail as f64;
    let a0 = pts
        .iter()
        .find(|&&(_, g, _)| g >= 0.95 * sill0)
        .map(|&(h, _, _)| h)
        .unwrap_or(pts[pts.len() - 1].0);
    let heuristic = (g_first.max(0.0), (sill0 - g_first).max(0.0), a0.max(1e-9));

    let mut best = (heuristic, objective(heuristic.0, heuristic.1, heuristic.2));
    // profile (c0, c) by weighted linear least squares on a log grid of
    // candidate ranges; keep the best seed (strict improvement only, so
    // exact ties stay on the heuristic)
    let a_lo = (pts[0].0 * 0.5).max(h_max * 1e-4);
    for k in 0..64 {
        let a = a_lo * (h_max / a_lo).powf(k as f64 / 63.0);
        let (c0, c) = profile_coeffs(&pts, a);
        let f = objective(c0, c, a);
        if f < best.1 {
            best = ((c0, c, a), f);
        }
    }
    let grid_objective = best.1;

    // Nelder-Mead refinement with two shrinking restarts
    let g_scale = pts.iter().map(|p| p.1).fold(0.0f64, f64::max).max(1e-9);
    let mut x = [best.0 .0, best.0 .1, best.0 .2];
    let mut fx = best.1;
    for (sc, sa) in [(0.08, 0.08), (0.005, 0.005), (2e-4, 2e-4)] {
        let steps = [
            (sc * g_scale).max(1e-12),
            (sc * g_scale).max(1e-12),
            (sa * h_max).max(1e-9),
        ];
        let (nx, nf) = nelder_mead(|p| objective(p[0], p[1], p[2]), x, steps, 400);
        if nf < fx {
            x = nx;
            fx = nf;
        }
    }

    let model = SphericalModel::new(x[0].max(0.0), x[1].max(0.0), x[2].clamp(1e-9, h_max))?;
    Ok(FitOutcome {
        model,
        objective: fx,
        grid_objective,
        degenerate: false,
    })
}

/// Weighted least squares for (c0, c) at a fixed range, clamped to be
/// nonnegative.
fn profile_coeffs(pts: &[(f64, f64, f64)], a: f64) -> (f64, f64) {
    let (mut sw, mut sws, mut swss, mut swg, mut swsg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(h, g, w) in pts {
        let s = spherical_shape(h, a);
        sw += w;
        sws += w * s;
        swss += w * s * s;
        swg += w * g;
        swsg += w * s * g;
    }
    let det = sw * swss - sws * sws;
    let (mut c0, mut c) = if det.abs() > 1e-12 * (sw * swss).abs().max(1e-300) {
        (
            (swss * swg - sws * swsg) / det,
            (sw * swsg - sws * swg) / det,
        )
    } else {
        (swg / sw, 0.0)
    };
    if c < 0.0 {
        c = 0.0;
        c0 = swg / sw;
    }
    if c0 < 0.0 {
        c0 = 0.0;
        c = if swss > 0.0 { (swsg / swss).max(0.0) } else { 0.0 };
    }
    (c0.max(0.0), c.max(0.0))
}

/// Plain Nelder-Mead on R^3 tracking the best point ever seen.
fn nelder_mead<F: Fn(&[f64; 3]) -> f64>(
    f: F,
    x0: [f64; 3],
    steps: [f64; 3],
    max_iter: usize,
) -> ([f64; 3], f64) {
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    simplex.push((x0, f(&x0)));
    for d in 0..3 {
        let mut v = x0;
        v[d] += steps[d];
        simplex.push((v, f(&v)));
    }
    let mut best = simplex[0];
    for &(v, fv) in &simplex {
        if fv < best.1 {
            best = (v, fv);
        }
    }

    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[0].1 < best.1 {
            best = simplex[0];
        }
        let spread = simplex[3].1 - simplex[0].1;
        if spread <= 1e-18 + 1e-14 * simplex[0].1.abs() {
            break;
        }
        let centroid = {
            let mut c = [0.0; 3];
            for (v, _) in &simplex[..3] {
                for d in 0..3 {
                    c[d] += v[d] / 3.0;
                }
            }
            c
        };
        let worst = simplex[3];
        let at = |t: f64| {
            let mut v = [0.0; 3];
            for d in 0..3 {
                v[d] = centroid[d] + t * (worst.0[d] - centroid[d]);
            }
            v
        };
        let xr = at(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = at(-2.0);
            let fe = f(&xe);
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (xr, fr);
        } else {
            let xc = if fr < worst.1 { at(-0.5) } else { at(0.5) };
            let fc = f(&xc);
            if fc < worst.1.min(fr) {
                simplex[3] = (xc, fc);
            } else {
                // shrink toward the best vertex
                let lo = simplex[0].0;
                for k in 1..4 {
                    let mut v = [0.0; 3];
                    for d in 0..3 {
                        v[d] = lo[d] + 0.5 * (simplex[k].0[d] - lo[d]);
                    }
                    simplex[k] = (v, f(&v));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    if simplex[0].1 < best.1 {
        best = simplex[0];
    }
    best
}

/// Writes `h_lo,h_center,h_hi,gamma_hat,pair_count`; empty bins carry an
/// empty gamma field.
pub fn write_variogram_csv(ev: &EmpiricalVariogram, path: &Path) -> Result<(), Error> {
    let mut out = String::from("h_lo,h_center,h_hi,gamma_hat,pair_count\n");
    for b in &ev.bins {
        let gamma = if b.pair_count == 0 {
            String::new()
        } else {
            format!("{}", b.gamma_hat)
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            b.h_lo, b.h_center, b.h_hi, gamma, b.pair_count
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_variogram_csv(path: &Path) -> Result<EmpiricalVariogram, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let p = path.display().to_string();
    let mut lines = text.lines();
    match lines.next().map(|l| l.trim_end_matches('\r')) {
        Some("h_lo,h_center,h_hi,gamma_hat,pair_count") => {}
        other => {
            return Err(Error::MalformedFile {
                path: p,
                reason: format!("unexpected variogram header {:?}", other.unwrap_or("")),
            })
        }
    }
    let mut bins: Vec<VariogramBin> = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| Error::MalformedRow {
            path: p.clone(),
            row: row + 1,
            reason,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", fields.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64, Error> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("unparsable {what} '{s}'")))
        };
        let h_lo = num(fields[0], "h_lo")?;
        let h_center = num(fields[1], "h_center")?;
        let h_hi = num(fields[2], "h_hi")?;
        let pair_count: u64 = fields[4]
            .trim()
            .parse()
            .map_err(|_| bad(format!("unparsable pair_count '{}'", fields[4])))?;
        let gamma_hat = if fields[3].trim().is_empty() {
            if pair_count != 0 {
                return Err(bad("empty gamma with nonzero pair_count".into()));
            }
            f64::NAN
        } else {
            num(fields[3], "gamma_hat")?
        };
        if !(h_lo <= h_center && h_center <= h_hi) {
            return Err(bad(format!("bin bounds out of order: {h_lo}, {h_center}, {h_hi}")));
        }
        if let Some(prev) = bins.last() {
            if h_lo < prev.h_hi {
                return Err(bad("bins overlap or are out of order".into()));
            }
        }
        bins.push(VariogramBin {
            h_lo,
            h_center,
            h_hi,
            gamma_hat,
            pair_count,
        });
    }
    let total = bins.iter().map(|b| b.pair_count).sum();
    Ok(EmpiricalVariogram {
        bins,
        total_pairs_sampled: total,
        seed: 0,
    })
}

/// Writes the fitted model as `nugget=`, `partial_sill=`, `range_km=`,
/// `objective=` lines.
pub fn write_model_file(outcome: &FitOutcome, path: &Path) -> Result<(), Error> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(
        f,
        "nugget={}\npartial_sill={}\nrange_km={}\nobjective={}\n",
        outcome.model.nugget(),
        outcome.model.partial_sill(),
        outcome.model.range_km(),
        outcome.objective
    )
    .map_err(|e| Error::io(path, e))
}

pub fn read_model_file(path: &Path) -> Result<(SphericalModel, f64), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let p = path.display().to_string();
    let mut nugget = None;
    let mut partial_sill = None;
    let mut range_km = None;
    let mut objective = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::MalformedFile {
            path: p.clone(),
            reason: format!("expected key=value, got '{line}'"),
        })?;
        let v: f64 = value.trim().parse().map_err(|_| Error::MalformedFile {
            path: p.clone(),
            reason: format!("unparsable value in '{line}'"),
        })?;
        match key.trim() {
            "nugget" => nugget = Some(v),
            "partial_sill" => partial_sill = Some(v),
            "range_km" => range_km = Some(v),
            "objective" => objective = Some(v),
            other => {
                return Err(Error::MalformedFile {
                    path: p,
                    reason: format!("unknown key '{other}'"),
                })
            }
        }
    }
    match (nugget, partial_sill, range_km, objective) {
        (Some(n), Some(c), Some(a), Some(o)) => Ok((SphericalModel::new(n, c, a)?, o)),
        _ => Err(Error::MalformedFile {
            path: p,
            reason: "missing one of nugget/partial_sill/range_km/objective".into(),
        }),
    }
}
