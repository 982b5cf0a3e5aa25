//! Deviation from the fitted variogram and the piecewise negative-pair
//! weight that marks hard and false negatives.

use crate::error::Error;
use crate::geodesy::{haversine_km, GeoCoord};
use crate::semivariogram::{cosine_distance, evaluate_spherical, SphericalModel};

/// Weight clamp bounds. The exponential weight is unbounded as the
/// deviation grows with a small scale; clamping preserves ordering while
/// bounding gradient magnitude.
pub const WEIGHT_MIN: f64 = 0.05;
pub const WEIGHT_MAX: f64 = 20.0;

/// Scale applied to the fitted curve inside the deviation. The empirical
/// curve estimates *half* the mean cosine distance, while the deviation
/// compares against a raw cosine distance; `Two` undoes the half, `One`
/// uses the curve as fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaScale {
    One,
    Two,
}

impl DeltaScale {
    pub fn factor(self) -> f64 {
        match self {
            DeltaScale::One => 1.0,
            DeltaScale::Two => 2.0,
        }
    }

    pub fn from_flag(v: u8) -> Result<Self, Error> {
        match v {
            1 => Ok(DeltaScale::One),
            2 => Ok(DeltaScale::Two),
            other => Err(Error::InvalidParameter {
                name: "delta_scale",
                reason: format!("must be 1 or 2, got {other}"),
            }),
        }
    }
}

/// Classification of a negative pair by the weight branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeClass {
    /// Far apart yet more similar than expected: upweighted.
    Hard,
    /// Nearby and more similar than expected, likely the same place:
    /// downweighted.
    FalseNegative,
    Neutral,
}

impl std::fmt::Display for NegativeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NegativeClass::Hard => "hard",
            NegativeClass::FalseNegative => "false",
            NegativeClass::Neutral => "neutral",
        })
    }
}

/// The four reweighting hyperparameters plus the fitted reference curve.
///
/// `theta2_km <= theta1_km` keeps the two branches disjoint; pairs with
/// separation between the thresholds always get weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ReweightConfig {
    s1: f64,
    s2: f64,
    theta1_km: f64,
    theta2_km: f64,
    model: SphericalModel,
    delta_scale: DeltaScale,
}

impl ReweightConfig {
    pub fn new(
        s1: f64,
        s2: f64,
        theta1_km: f64,
        theta2_km: f64,
        model: SphericalModel,
        delta_scale: DeltaScale,
    ) -> Result<Self, Error> {
        if !(s1 > 0.0) || !s1.is_finite() || !(s2 > 0.0) || !s2.is_finite() {
            return Err(Error::InvalidParameter {
                name: "s1/s2",
                reason: format!("scales must be positive, got ({s1}, {s2})"),
            });
        }
        if !theta1_km.is_finite() || !theta2_km.is_finite() || theta1_km < 0.0 || theta2_km < 0.0 {
            return Err(Error::InvalidParameter {
                name: "theta1_km/theta2_km",
                reason: format!("thresholds must be nonnegative, got ({theta1_km}, {theta2_km})"),
            });
        }
        if theta2_km > theta1_km {
            return Err(Error::InvalidParameter {
                name: "theta2_km",
                reason: format!("theta2 ({theta2_km}) must not exceed theta1 ({theta1_km})"),
            });
        }
        Ok(ReweightConfig {
            s1,
            s2,
            theta1_km,
            theta2_km,
            model,
            delta_scale,
        })
    }

    /// Defaults: `theta1` at the fitted range (beyond the correlation
    /// range similarity is unexpected), `theta2` at the 25 km city
    /// radius, both scales 0.5, deviation against the doubled curve.
    pub fn defaults_for(model: SphericalModel) -> Result<Self, Error> {
        let theta1 = model.range_km().max(25.0);
        ReweightConfig::new(0.5, 0.5, theta1, 25.0, model, DeltaScale::Two)
    }

    pub fn s1(&self) -> f64 {
        self.s1
    }

    pub fn s2(&self) -> f64 {
        self.s2
    }

    pub fn theta1_km(&self) -> f64 {
        self.theta1_km
    }

    pub fn theta2_km(&self) -> f64 {
        self.theta2_km
    }

    pub fn model(&self) -> &SphericalModel {
        &self.model
    }

    pub fn delta_scale(&self) -> DeltaScale {
        self.delta_scale
    }

    /// The expected dissimilarity the deviation is measured against:
    /// `delta_scale * gamma(d)`.
    pub fn expected_dissimilarity(&self, d_km: f64) -> f64 {
        self.delta_scale.factor()
            * evaluate_spherical(&self.model, d_km).expect("distance is nonnegative")
    }
}

/// Deviation of an observed cosine distance from the expected curve:
/// `d_cos - delta_scale * gamma(d)`. Negative means "more similar than
/// the spatial separation predicts".
pub fn deviation(cfg: &ReweightConfig, d_cos: f64, d_km: f64) -> f64 {
    d_cos - cfg.expected_dissimilarity(d_km)
}

/// The piecewise weight before clamping:
/// `exp(-delta/s1)` when `delta < 0` and `d > theta1` (hard negative),
/// `exp(delta/s2)` when `delta < 0` and `d < theta2` (false negative),
/// `1` otherwise.
pub fn raw_weight(cfg: &ReweightConfig, delta: f64, d_km: f64) -> f64 {
    if delta < 0.0 && d_km > cfg.theta1_km {
        (-delta / cfg.s1).exp()
    } else if delta < 0.0 && d_km < cfg.theta2_km {
        (delta / cfg.s2).exp()
    } else {
        1.0
    }
}

/// `raw_weight` clamped to `[WEIGHT_MIN, WEIGHT_MAX]`.
pub fn weight(cfg: &ReweightConfig, delta: f64, d_km: f64) -> f64 {
    raw_weight(cfg, delta, d_km).clamp(WEIGHT_MIN, WEIGHT_MAX)
}

/// Which branch of the weight function a pair falls into.
pub fn classify(cfg: &ReweightConfig, delta: f64, d_km: f64) -> NegativeClass {
    if delta < 0.0 && d_km > cfg.theta1_km {
        NegativeClass::Hard
    } else if delta < 0.0 && d_km < cfg.theta2_km {
        NegativeClass::FalseNegative
    } else {
        NegativeClass::Neutral
    }
}

/// A borrowed (features, coordinate) view of one sample.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub features: &'a [f32],
    pub coord: GeoCoord,
}

/// Everything the weight computation derives for one anchor/negative pair.
#[derive(Debug, Clone, Copy)]
pub struct WeightEntry {
    pub d_km: f64,
    pub d_cos: f64,
    pub expected: f64,
    pub delta: f64,
    pub weight: f64,
    pub class: NegativeClass,
}

/// Scalar pipeline for one pair: cosine distance on the frozen features,
/// great-circle distance, deviation, clamped weight, class.
pub fn weight_entry(
    cfg: &ReweightConfig,
    anchor: Sample<'_>,
    negative: Sample<'_>,
) -> Result<WeightEntry, Error> {
    let d_km = haversine_km(anchor.coord, negative.coord);
    let d_cos = cosine_distance(anchor.features, negative.features)?;
    let expected = cfg.expected_dissimilarity(d_km);
    let delta = d_cos - expected;
    Ok(WeightEntry {
        d_km,
        d_cos,
        expected,
        delta,
        weight: weight(cfg, delta, d_km),
        class: classify(cfg, delta, d_km),
    })
}

/// Entry `(i, j)` is the scalar weight of anchor `i` against negative `j`,
/// computed on the frozen input features.
pub fn weight_matrix(
    cfg: &ReweightConfig,
    anchors: &[Sample<'_>],
    negatives: &[Sample<'_>],
) -> Result<Vec<Vec<f64>>, Error> {
    anchors
        .iter()
        .map(|&a| {
            negatives
                .iter()
                .map(|&n| weight_entry(cfg, a, n).map(|e| e.weight))
                .collect()
        })
        .collect()
}
