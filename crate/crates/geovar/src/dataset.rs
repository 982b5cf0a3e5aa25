//! Geo-tagged embedding datasets: the `.gemb` binary format, CSV ingest,
//! deterministic splits, and a spatial Gaussian-process generator used as
//! ground truth for the variogram-fitting pipeline.

use std::collections::HashSet;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::bytes::ByteCursor;
use crate::error::Error;
use crate::geodesy::{haversine_km, GeoCoord};

const GEMB_MAGIC: &[u8; 4] = b"GEMB";
const GEMB_VERSION: u16 = 1;

/// One sample: identifier, coordinate, and a fixed-dimension feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoTaggedEmbedding {
    pub id: u64,
    pub coord: GeoCoord,
    pub features: Vec<f32>,
}

/// An ordered collection of records sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<GeoTaggedEmbedding>,
    dim: u32,
    pub name: String,
}

impl Dataset {
    /// Validates the dataset invariants: unique ids, uniform dimension
    /// of at least 2, and finite features.
    pub fn new(records: Vec<GeoTaggedEmbedding>, dim: u32, name: String) -> Result<Self, Error> {
        if dim < 2 {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: format!("feature dimension must be >= 2, got {dim}"),
            });
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            if rec.features.len() != dim as usize {
                return Err(Error::DimensionMismatch {
                    expected: dim as usize,
                    got: rec.features.len(),
                });
            }
            if rec.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature { record: i });
            }
            if !seen.insert(rec.id) {
                return Err(Error::DuplicateId(rec.id));
            }
        }
        Ok(Dataset { records, dim, name })
    }

    pub fn records(&self) -> &[GeoTaggedEmbedding] {
        &self.records
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes the `.gemb` layout: magic `GEMB`, version u16, record count
    /// u64, dim u32, then per record id u64, lat f64, lon f64, dim x f32,
    /// all little-endian. The `name` field is a runtime label and is not
    /// persisted.
    pub fn save_binary(&self, path: &Path) -> Result<(), Error> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(GEMB_MAGIC).map_err(io)?;
        w.write_all(&GEMB_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.records.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&self.dim.to_le_bytes()).map_err(io)?;
        for rec in &self.records {
            w.write_all(&rec.id.to_le_bytes()).map_err(io)?;
            w.write_all(&rec.coord.lat().to_le_bytes()).map_err(io)?;
            w.write_all(&rec.coord.lon().to_le_bytes()).map_err(io)?;
            for &f in &rec.features {
                w.write_all(&f.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load_binary(path: &Path) -> Result<Self, Error> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cur = ByteCursor::new(&bytes, path);
        let magic = cur.take(4, "magic")?;
        if magic != GEMB_MAGIC {
            return Err(Error::BadMagic {
                path: path.display().to_string(),
                expected: "GEMB",
            });
        }
        let version = cur.u16("version")?;
        if version != GEMB_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.display().to_string(),
                got: version,
                offset: 4,
            });
        }
        let count = cur.u64("record count")?;
        let dim = cur.u32("dim")?;
        let mut records = Vec::with_capacity(count as usize);
        for row in 0..count as usize {
            let id = cur.u64("record id")?;
            let lat = cur.f64("latitude")?;
            let lon = cur.f64("longitude")?;
            let coord = GeoCoord::new(lat, lon).map_err(|e| Error::MalformedRow {
                path: path.display().to_string(),
                row,
                reason: e.to_string(),
            })?;
            let mut features = Vec::with_capacity(dim as usize);
            for _ in 0..dim {
                features.push(cur.f32("feature value")?);
            }
            records.push(GeoTaggedEmbedding { id, coord, features });
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Dataset::new(records, dim, name).map_err(|e| match e {
            Error::NonFiniteFeature { record } => Error::MalformedRow {
                path: path.display().to_string(),
                row: record,
                reason: "non-finite feature value".into(),
            },
            other => other,
        })
    }

    /// Joins a CSV coordinates file (`id,lat,lon` header) with an
    /// embeddings block (dim u32, count u64, count x dim f32 LE) by row
    /// order.
    pub fn load_csv(coords_path: &Path, embeddings_path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(coords_path).map_err(|e| Error::io(coords_path, e))?;
        let cpath = coords_path.display().to_string();
        let mut lines = text.lines();
        match lines.next().map(|l| l.trim_end_matches('\r')) {
            Some("id,lat,lon") => {}
            other => {
                return Err(Error::MalformedFile {
                    path: cpath,
                    reason: format!("expected header 'id,lat,lon', got {:?}", other.unwrap_or("")),
                })
            }
        }
        let mut rows = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| Error::MalformedRow {
                path: cpath.clone(),
                row: row + 1,
                reason,
            };
            let mut parts = line.split(',');
            let (id_s, lat_s, lon_s) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), Some(c), None) => (a, b, c),
                _ => return Err(bad(format!("expected 3 fields, got '{line}'"))),
            };
            let id: u64 = id_s
                .trim()
                .parse()
                .map_err(|_| bad(format!("unparsable id '{id_s}'")))?;
            let lat: f64 = lat_s
                .trim()
                .parse()
                .map_err(|_| bad(format!("unparsable latitude '{lat_s}'")))?;
            let lon: f64 = lon_s
                .trim()
                .parse()
                .map_err(|_| bad(format!("unparsable longitude '{lon_s}'")))?;
            if !(-90.0..=90.0).contains(&lat) {
                return Err(bad(format!("latitude {lat} outside [-90, 90]")));
            }
            if !(-180.0..=180.0).contains(&lon) {
                return Err(bad(format!("longitude {lon} outside [-180, 180]")));
            }
            let coord = GeoCoord::new(lat, lon).map_err(|e| bad(e.to_string()))?;
            rows.push((id, coord));
        }

        let bytes = std::fs::read(embeddings_path).map_err(|e| Error::io(embeddings_path, e))?;
        let mut cur = ByteCursor::new(&bytes, embeddings_path);
        let dim = cur.u32("dim")?;
        let count = cur.u64("count")?;
        if count != rows.len() as u64 {
            return Err(Error::RecordCountMismatch {
                path: embeddings_path.display().to_string(),
                coords: rows.len() as u64,
                embeddings: count,
            });
        }
        let mut records = Vec::with_capacity(rows.len());
        for (row, (id, coord)) in rows.into_iter().enumerate() {
            let mut features = Vec::with_capacity(dim as usize);
            for _ in 0..dim {
                features.push(cur.f32("feature value")?);
            }
            if features.iter().any(|v| !v.is_finite()) {
                return Err(Error::MalformedRow {
                    path: embeddings_path.display().to_string(),
                    row,
                    reason: "non-finite feature value".into(),
                });
            }
            records.push(GeoTaggedEmbedding { id, coord, features });
        }
        let name = coords_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Dataset::new(records, dim, name)
    }

    /// Seeded shuffle followed by a prefix cut; the validation size is
    /// `round(n * val_fraction)`. Both halves keep the original record
    /// order. Returns `(train, val)`.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), Error> {
        if !val_fraction.is_finite() || val_fraction <= 0.0 || val_fraction >= 1.0 {
            return Err(Error::InvalidParameter {
                name: "val_fraction",
                reason: format!("must lie in (0, 1), got {val_fraction}"),
            });
        }
        let n = self.records.len();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let n_val = (n as f64 * val_fraction).round() as usize;
        let mut val_idx: Vec<usize> = idx[..n_val].to_vec();
        let mut train_idx: Vec<usize> = idx[n_val..].to_vec();
        val_idx.sort_unstable();
        train_idx.sort_unstable();
        let pick = |ix: &[usize]| ix.iter().map(|&i| self.records[i].clone()).collect();
        let train = Dataset::new(pick(&train_idx), self.dim, format!("{}-train", self.name))?;
        let val = Dataset::new(pick(&val_idx), self.dim, format!("{}-val", self.name))?;
        Ok((train, val))
    }
}

/// Inclusive latitude/longitude bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLonBounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl LatLonBounds {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self, Error> {
        let ok = lat_min.is_finite()
            && lat_max.is_finite()
            && lon_min.is_finite()
            && lon_max.is_finite()
            && (-90.0..=90.0).contains(&lat_min)
            && (-90.0..=90.0).contains(&lat_max)
            && (-180.0..=180.0).contains(&lon_min)
            && (-180.0..=180.0).contains(&lon_max)
            && lat_min < lat_max
            && lon_min < lon_max;
        if !ok {
            return Err(Error::InvalidParameter {
                name: "region",
                reason: format!("invalid bounds [{lat_min}, {lat_max}] x [{lon_min}, {lon_max}]"),
            });
        }
        Ok(LatLonBounds {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        })
    }
}

/// Parameters of the synthetic spatial Gaussian process.
///
/// Coordinates are drawn uniformly in `region`; a latent field with
/// spherical covariance (`cov_range_km`, `cov_sill`, `cov_nugget`) is
/// sampled at those sites, mapped through a fixed seeded linear map to
/// `dim` dimensions, and L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub dim: usize,
    pub latent_dim: usize,
    pub cov_range_km: f64,
    pub cov_sill: f64,
    pub cov_nugget: f64,
    pub seed: u64,
    pub region: LatLonBounds,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), Error> {
        let bad = |name: &'static str, reason: String| Err(Error::InvalidParameter { name, reason });
        if self.n < 2 {
            return bad("n", format!("need at least 2 points, got {}", self.n));
        }
        if self.dim < 2 {
            return bad("dim", format!("feature dimension must be >= 2, got {}", self.dim));
        }
        if self.latent_dim < 1 {
            return bad("latent_dim", "must be >= 1".into());
        }
        if !(self.cov_range_km > 0.0) || !self.cov_range_km.is_finite() {
            return bad("cov_range_km", format!("must be positive, got {}", self.cov_range_km));
        }
        if !(self.cov_sill >= 0.0) || !(self.cov_nugget >= 0.0) {
            return bad("cov_sill/cov_nugget", "must be nonnegative".into());
        }
        if self.cov_sill == 0.0 && self.cov_nugget == 0.0 {
            return Err(Error::ZeroVariance);
        }
        Ok(())
    }
}

/// Spherical correlation: `1 - 1.5 t + 0.5 t^3` for `t <= 1`, else 0.
fn spherical_correlation(t: f64) -> f64 {
    if t <= 1.0 {
        1.0 - 1.5 * t + 0.5 * t * t * t
    } else {
        0.0
    }
}

fn draw_coords(spec: &SyntheticSpec, rng: &mut ChaCha20Rng) -> Vec<GeoCoord> {
    let r = &spec.region;
    (0..spec.n)
        .map(|_| {
            let lat = rng.random_range(r.lat_min..=r.lat_max);
            let lon = rng.random_range(r.lon_min..=r.lon_max);
            GeoCoord::new(lat, lon).expect("bounds are validated")
        })
        .collect()
}

/// Draws the latent field matrix (n x latent_dim) at the given sites.
/// Factorization jitter starts at 1e-10 and doubles up to 1e-6.
fn draw_latents(
    spec: &SyntheticSpec,
    coords: &[GeoCoord],
    rng: &mut ChaCha20Rng,
) -> Result<DMatrix<f64>, Error> {
    let n = spec.n;
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        cov[(i, i)] = spec.cov_sill + spec.cov_nugget;
        for j in i + 1..n {
            let d = haversine_km(coords[i], coords[j]);
            let v = spec.cov_sill * spherical_correlation(d / spec.cov_range_km);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let mut chol = None;
    let mut jitter = 0.0f64;
    loop {
        let mut attempt = cov.clone();
        if jitter > 0.0 {
            for i in 0..n {
                attempt[(i, i)] += jitter;
            }
        }
        if let Some(c) = attempt.cholesky() {
            chol = Some(c);
            break;
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 2.0 };
        if jitter > 1e-6 {
            break;
        }
    }
    let chol = chol.ok_or(Error::CovarianceNotFactorizable { max_jitter: 1e-6 })?;
    drop(cov);

    let normal = Normal::new(0.0, 1.0).expect("valid std");
    let mut eps = DMatrix::<f64>::zeros(n, spec.latent_dim);
    for j in 0..spec.latent_dim {
        for i in 0..n {
            eps[(i, j)] = normal.sample(rng);
        }
    }
    Ok(chol.l() * eps)
}

/// Deterministic synthetic dataset with known spatial covariance.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, Error> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let coords = draw_coords(spec, &mut rng);
    let latents = draw_latents(spec, &coords, &mut rng)?;

    // fixed seeded linear map latent_dim -> dim, then per-record L2 norm
    let normal = Normal::new(0.0, 1.0).expect("valid std");
    let mut map = DMatrix::<f64>::zeros(spec.dim, spec.latent_dim);
    for r in 0..spec.dim {
        for c in 0..spec.latent_dim {
            map[(r, c)] = normal.sample(&mut rng);
        }
    }

    let mut records = Vec::with_capacity(spec.n);
    for (i, &coord) in coords.iter().enumerate() {
        let mut feat = vec![0.0f64; spec.dim];
        for (d, f) in feat.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..spec.latent_dim {
                acc += map[(d, c)] * latents[(i, c)];
            }
            *f = acc;
        }
        let norm = feat.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::Numeric(format!(
                "degenerate zero-norm feature vector at record {i}"
            )));
        }
        let features: Vec<f32> = feat.iter().map(|v| (v / norm) as f32).collect();
        records.push(GeoTaggedEmbedding {
            id: i as u64,
            coord,
            features,
        });
    }
    Dataset::new(
        records,
        spec.dim as u32,
        format!("synthetic-n{}-seed{}", spec.n, spec.seed),
    )
}
