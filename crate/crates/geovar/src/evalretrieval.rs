//! Retrieval evaluation: a GPS gallery, maximum-cosine-similarity
//! prediction, and accuracy at the 25/200/750 km thresholds.

use crate::encoders::DualEncoder;
use crate::error::Error;
use crate::geodesy::{haversine_km, GeoCoord};

/// Accuracy thresholds in kilometers, finest first.
pub const THRESHOLDS_KM: [f64; 3] = [25.0, 200.0, 750.0];

/// Candidate coordinates with their location embeddings (unit rows).
#[derive(Debug, Clone, PartialEq)]
pub struct GpsGallery {
    coords: Vec<GeoCoord>,
    embeddings: Vec<Vec<f64>>,
}

impl GpsGallery {
    /// Builds a gallery from explicit rows; rows must be unit-norm.
    pub fn from_parts(coords: Vec<GeoCoord>, embeddings: Vec<Vec<f64>>) -> Result<Self, Error> {
        if coords.is_empty() {
            return Err(Error::EmptyDataset("gallery must be nonempty".into()));
        }
        if coords.len() != embeddings.len() {
            return Err(Error::DimensionMismatch {
                expected: coords.len(),
                got: embeddings.len(),
            });
        }
        let dim = embeddings[0].len();
        for (i, row) in embeddings.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Numeric(format!(
                    "gallery row {i} is not unit-norm (norm {norm})"
                )));
            }
        }
        Ok(GpsGallery { coords, embeddings })
    }

    pub fn coords(&self) -> &[GeoCoord] {
        &self.coords
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Encodes every coordinate with the frozen evaluation checkpoint.
pub fn build_gallery(coords: &[GeoCoord], encoder: &DualEncoder) -> Result<GpsGallery, Error> {
    if coords.is_empty() {
        return Err(Error::EmptyDataset("gallery must be nonempty".into()));
    }
    let embeddings = coords.iter().map(|&c| encoder.encode_location(c)).collect();
    Ok(GpsGallery {
        coords: coords.to_vec(),
        embeddings,
    })
}

/// Returns the gallery coordinate with the highest dot product against the
/// query, ties broken by the lowest index.
pub fn predict(gallery: &GpsGallery, query: &[f64]) -> Result<(GeoCoord, f64), Error> {
    if gallery.is_empty() {
        return Err(Error::EmptyDataset("gallery must be nonempty".into()));
    }
    if query.len() != gallery.embeddings[0].len() {
        return Err(Error::DimensionMismatch {
            expected: gallery.embeddings[0].len(),
            got: query.len(),
        });
    }
    let mut best = 0usize;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, row) in gallery.embeddings.iter().enumerate() {
        let sim: f64 = row.iter().zip(query).map(|(a, b)| a * b).sum();
        if sim > best_sim {
            best_sim = sim;
            best = i;
        }
    }
    Ok((gallery.coords[best], best_sim))
}

/// Retrieval accuracies at the distance thresholds plus the median error.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub acc25: f64,
    pub acc200: f64,
    pub acc750: f64,
    pub n_queries: usize,
    pub median_error_km: f64,
}

/// Scores each query by the haversine error of its argmax prediction.
/// A query counts at threshold N when its error is at most N km.
pub fn evaluate(gallery: &GpsGallery, queries: &[(Vec<f64>, GeoCoord)]) -> Result<EvalReport, Error> {
    if queries.is_empty() {
        return Err(Error::EmptyDataset("query set must be nonempty".into()));
    }
    let mut errors = Vec::with_capacity(queries.len());
    for (embedding, truth) in queries {
        let (pred, _) = predict(gallery, embedding)?;
        errors.push(haversine_km(pred, *truth));
    }
    let n = errors.len();
    let hits = |t: f64| errors.iter().filter(|&&e| e <= t).count() as f64 / n as f64;
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(EvalReport {
        acc25: hits(THRESHOLDS_KM[0]),
        acc200: hits(THRESHOLDS_KM[1]),
        acc750: hits(THRESHOLDS_KM[2]),
        n_queries: n,
        median_error_km: median,
    })
}
