//! The trainable dual encoder: an image-feature projection head and a
//! hierarchical random-Fourier-feature location encoder, with exact
//! reverse-mode gradients.
//!
//! Everything is float64 internally; float32 appears only at file
//! boundaries. Forward passes record activations into tapes, and the
//! matching `backward_*` calls replay them exactly, so gradient identity
//! against finite differences is limited only by the difference step.

use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::bytes::ByteCursor;
use crate::error::Error;
use crate::geodesy::{equal_earth_project, GeoCoord};

/// Divisor that maps Equal Earth outputs into roughly [-1, 1]^2 before
/// the Fourier features (2.7 is close to the maximum abscissa).
pub const EEP_SCALE: f64 = 2.7;

/// Epsilon added under the root in L2 normalization so all-zero
/// activations stay defined. Small enough that outputs remain unit-norm
/// to 1e-12 even for small pre-normalization activations.
const NORM_EPS: f64 = 1e-24;

const GCKP_MAGIC: &[u8; 4] = b"GCKP";
const GCKP_VERSION: u16 = 1;

fn gelu(x: f64) -> f64 {
    const C1: f64 = 0.7978845608028654; // sqrt(2/pi)
    const C2: f64 = 0.044715;
    0.5 * x * (1.0 + (C1 * (x + C2 * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    const C1: f64 = 0.7978845608028654;
    const C2: f64 = 0.044715;
    let u = C1 * (x + C2 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C1 * (1.0 + 3.0 * C2 * x * x)
}

/// A dense layer; weights are row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    fn seeded(in_dim: usize, out_dim: usize, rng: &mut ChaCha20Rng) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("valid std");
        let scale = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| normal.sample(rng) * scale)
            .collect();
        Linear {
            w,
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut y = self.b.clone();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            *yo += acc;
        }
        y
    }

    /// Accumulates dW and db for upstream gradient `dy`, returning dx.
    fn backward(&self, x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            db[o] += g;
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let drow = &mut dw[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                drow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

/// Two dense layers with a smooth GELU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    fn seeded(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut ChaCha20Rng) -> Self {
        Mlp {
            l1: Linear::seeded(in_dim, hidden, rng),
            l2: Linear::seeded(hidden, out_dim, rng),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let z1 = self.l1.forward(x);
        let h: Vec<f64> = z1.iter().map(|&z| gelu(z)).collect();
        self.l2.forward(&h)
    }

    fn forward_traced(&self, x: &[f64]) -> (Vec<f64>, MlpTape) {
        let z1 = self.l1.forward(x);
        let h: Vec<f64> = z1.iter().map(|&z| gelu(z)).collect();
        let y = self.l2.forward(&h);
        (
            y,
            MlpTape {
                input: x.to_vec(),
                z1,
                hidden: h,
            },
        )
    }

    fn backward(&self, tape: &MlpTape, dy: &[f64], g: &mut MlpGrads) {
        let dh = self.l2.backward(&tape.hidden, dy, &mut g.w2, &mut g.b2);
        let dz1: Vec<f64> = dh
            .iter()
            .zip(&tape.z1)
            .map(|(&d, &z)| d * gelu_prime(z))
            .collect();
        self.l1.backward(&tape.input, &dz1, &mut g.w1, &mut g.b1);
    }
}

#[derive(Debug, Clone)]
struct MlpTape {
    input: Vec<f64>,
    z1: Vec<f64>,
    hidden: Vec<f64>,
}

/// Gradient buffers matching one [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpGrads {
    fn zeros_like(m: &Mlp) -> Self {
        MlpGrads {
            w1: vec![0.0; m.l1.w.len()],
            b1: vec![0.0; m.l1.b.len()],
            w2: vec![0.0; m.l2.w.len()],
            b2: vec![0.0; m.l2.b.len()],
        }
    }
}

/// One frequency band of the location encoder: a frozen Gaussian
/// projection whose entries are drawn with standard deviation `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct RffScale {
    pub sigma: f64,
    /// Row-major `f_pairs x 2`; frozen after initialization.
    pub projection: Vec<f64>,
    pub f_pairs: usize,
}

impl RffScale {
    fn seeded(sigma: f64, f_pairs: usize, rng: &mut ChaCha20Rng) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("valid std");
        let projection = (0..f_pairs * 2).map(|_| normal.sample(rng) * sigma).collect();
        RffScale {
            sigma,
            projection,
            f_pairs,
        }
    }

    /// `[cos(2 pi B v), sin(2 pi B v)]`, length `2 * f_pairs`.
    pub fn features(&self, v: [f64; 2]) -> Vec<f64> {
        let mut out = vec![0.0; 2 * self.f_pairs];
        for f in 0..self.f_pairs {
            let z = std::f64::consts::TAU
                * (self.projection[2 * f] * v[0] + self.projection[2 * f + 1] * v[1]);
            out[f] = z.cos();
            out[self.f_pairs + f] = z.sin();
        }
        out
    }
}

/// Layer sizes of the dual encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub d_in: usize,
    pub hidden: usize,
    pub d_emb: usize,
    /// Number of frequency bands; band k uses sigma = 2^k.
    pub scales: usize,
    /// Fourier pairs per band (the head input is twice this).
    pub f_pairs: usize,
}

impl Default for EncoderDims {
    /// Desk-scale defaults: 32-dim inputs, 64 hidden units, 16-dim
    /// embeddings, nine dyadic bands (2^0..2^8), 16 Fourier pairs.
    fn default() -> Self {
        EncoderDims {
            d_in: 32,
            hidden: 64,
            d_emb: 16,
            scales: 9,
            f_pairs: 16,
        }
    }
}

impl EncoderDims {
    fn validate(&self) -> Result<(), Error> {
        if self.d_in == 0 || self.hidden == 0 || self.d_emb == 0 || self.scales == 0 || self.f_pairs == 0
        {
            return Err(Error::InvalidParameter {
                name: "dims",
                reason: format!("all encoder dimensions must be positive, got {self:?}"),
            });
        }
        Ok(())
    }
}

/// Image projection head plus the multi-band location encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    pub dims: EncoderDims,
    pub image_head: Mlp,
    pub location_scales: Vec<RffScale>,
    pub location_heads: Vec<Mlp>,
    pub tau: f64,
}

/// Activation record of one `encode_image` call.
#[derive(Debug, Clone)]
pub struct ImageTape {
    mlp: MlpTape,
    raw: Vec<f64>,
    norm: f64,
}

/// Activation record of one `encode_location` call.
#[derive(Debug, Clone)]
pub struct LocationTape {
    per_scale: Vec<MlpTape>,
    raw: Vec<f64>,
    norm: f64,
}

/// Gradients of every trainable tensor. The frozen Fourier projections
/// deliberately have no slot here.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub image_head: MlpGrads,
    pub location_heads: Vec<MlpGrads>,
}

impl EncoderGrads {
    pub fn zeros_like(e: &DualEncoder) -> Self {
        EncoderGrads {
            image_head: MlpGrads::zeros_like(&e.image_head),
            location_heads: e.location_heads.iter().map(MlpGrads::zeros_like).collect(),
        }
    }

    /// Trainable tensors in declaration order; matches
    /// [`DualEncoder::trainable_tensors_mut`].
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = vec![
            &self.image_head.w1,
            &self.image_head.b1,
            &self.image_head.w2,
            &self.image_head.b2,
        ];
        for h in &self.location_heads {
            out.push(&h.w1);
            out.push(&h.b1);
            out.push(&h.w2);
            out.push(&h.b2);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![
            &mut self.image_head.w1,
            &mut self.image_head.b1,
            &mut self.image_head.w2,
            &mut self.image_head.b2,
        ];
        for h in &mut self.location_heads {
            out.push(&mut h.w1);
            out.push(&mut h.b1);
            out.push(&mut h.w2);
            out.push(&mut h.b2);
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }
}

fn normalize(raw: &[f64]) -> (Vec<f64>, f64) {
    let q: f64 = raw.iter().map(|v| v * v).sum();
    let s = (q + NORM_EPS).sqrt();
    (raw.iter().map(|v| v / s).collect(), s)
}

/// Backward through `out = raw / sqrt(|raw|^2 + eps)`.
fn normalize_backward(dout: &[f64], raw: &[f64], s: f64) -> Vec<f64> {
    let dot: f64 = dout.iter().zip(raw).map(|(d, y)| d * y).sum();
    let s3 = s * s * s;
    dout.iter()
        .zip(raw)
        .map(|(d, y)| d / s - y * dot / s3)
        .collect()
}

impl DualEncoder {
    /// Deterministic initialization: Gaussian weights scaled by
    /// 1/sqrt(fan-in), zero biases, band projections N(0, (2^k)^2).
    pub fn seeded(dims: EncoderDims, tau: f64, seed: u64) -> Result<Self, Error> {
        dims.validate()?;
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter {
                name: "tau",
                reason: format!("temperature must be positive, got {tau}"),
            });
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let image_head = Mlp::seeded(dims.d_in, dims.hidden, dims.d_emb, &mut rng);
        let location_scales: Vec<RffScale> = (0..dims.scales)
            .map(|k| RffScale::seeded((2.0f64).powi(k as i32), dims.f_pairs, &mut rng))
            .collect();
        let location_heads = (0..dims.scales)
            .map(|_| Mlp::seeded(2 * dims.f_pairs, dims.hidden, dims.d_emb, &mut rng))
            .collect();
        Ok(DualEncoder {
            dims,
            image_head,
            location_scales,
            location_heads,
            tau,
        })
    }

    /// Projects and rescales a coordinate into the Fourier-feature domain.
    pub fn location_input(g: GeoCoord) -> [f64; 2] {
        let p = equal_earth_project(g);
        [p.x / EEP_SCALE, p.y / EEP_SCALE]
    }

    pub fn encode_image(&self, features: &[f64]) -> Result<Vec<f64>, Error> {
        Ok(self.encode_image_traced(features)?.0)
    }

    pub fn encode_image_traced(&self, features: &[f64]) -> Result<(Vec<f64>, ImageTape), Error> {
        if features.len() != self.dims.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.dims.d_in,
                got: features.len(),
            });
        }
        let (raw, mlp) = self.image_head.forward_traced(features);
        let (out, norm) = normalize(&raw);
        Ok((out, ImageTape { mlp, raw, norm }))
    }

    pub fn encode_location(&self, g: GeoCoord) -> Vec<f64> {
        self.encode_location_traced(g).0
    }

    pub fn encode_location_traced(&self, g: GeoCoord) -> (Vec<f64>, LocationTape) {
        let v = Self::location_input(g);
        let mut sum = vec![0.0; self.dims.d_emb];
        let mut per_scale = Vec::with_capacity(self.dims.scales);
        for (scale, head) in self.location_scales.iter().zip(&self.location_heads) {
            let rff = scale.features(v);
            let (y, tape) = head.forward_traced(&rff);
            for (s, yi) in sum.iter_mut().zip(&y) {
                *s += yi;
            }
            per_scale.push(tape);
        }
        let (out, norm) = normalize(&sum);
        (
            out,
            LocationTape {
                per_scale,
                raw: sum,
                norm,
            },
        )
    }

    /// Accumulates exact gradients of the recorded image forward pass.
    pub fn backward_image(&self, tape: &ImageTape, dout: &[f64], grads: &mut EncoderGrads) {
        let draw = normalize_backward(dout, &tape.raw, tape.norm);
        self.image_head.backward(&tape.mlp, &draw, &mut grads.image_head);
    }

    /// Accumulates exact gradients of the recorded location forward pass.
    /// The Fourier projections are frozen and receive none.
    pub fn backward_location(&self, tape: &LocationTape, dout: &[f64], grads: &mut EncoderGrads) {
        let dsum = normalize_backward(dout, &tape.raw, tape.norm);
        for ((head, scale_tape), g) in self
            .location_heads
            .iter()
            .zip(&tape.per_scale)
            .zip(&mut grads.location_heads)
        {
            head.backward(scale_tape, &dsum, g);
        }
    }

    /// Trainable tensors in declaration order; matches
    /// [`EncoderGrads::tensors`].
    pub fn trainable_tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![
            &mut self.image_head.l1.w,
            &mut self.image_head.l1.b,
            &mut self.image_head.l2.w,
            &mut self.image_head.l2.b,
        ];
        for h in &mut self.location_heads {
            out.push(&mut h.l1.w);
            out.push(&mut h.l1.b);
            out.push(&mut h.l2.w);
            out.push(&mut h.l2.b);
        }
        out
    }

    pub fn num_trainable_params(&self) -> usize {
        let mlp = |m: &Mlp| m.l1.w.len() + m.l1.b.len() + m.l2.w.len() + m.l2.b.len();
        mlp(&self.image_head) + self.location_heads.iter().map(mlp).sum::<usize>()
    }

    /// Writes the `.gckpt` layout: magic `GCKP`, version u16, the five
    /// dims as u32, tau f64, then tensor blocks in declaration order
    /// (image head, per-band sigma + projection, location heads), f64 LE.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), Error> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(GCKP_MAGIC).map_err(io)?;
        w.write_all(&GCKP_VERSION.to_le_bytes()).map_err(io)?;
        for d in [
            self.dims.d_in,
            self.dims.hidden,
            self.dims.d_emb,
            self.dims.scales,
            self.dims.f_pairs,
        ] {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        w.write_all(&self.tau.to_le_bytes()).map_err(io)?;
        let tensor = |w: &mut BufWriter<std::fs::File>, t: &[f64]| -> Result<(), Error> {
            for v in t {
                w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
            }
            Ok(())
        };
        let mlp = |w: &mut BufWriter<std::fs::File>, m: &Mlp| -> Result<(), Error> {
            tensor(w, &m.l1.w)?;
            tensor(w, &m.l1.b)?;
            tensor(w, &m.l2.w)?;
            tensor(w, &m.l2.b)
        };
        mlp(&mut w, &self.image_head)?;
        for s in &self.location_scales {
            w.write_all(&s.sigma.to_le_bytes()).map_err(io)?;
            for v in &s.projection {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        for h in &self.location_heads {
            mlp(&mut w, h)?;
        }
        w.flush().map_err(io)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, Error> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cur = ByteCursor::new(&bytes, path);
        if cur.take(4, "magic")? != GCKP_MAGIC {
            return Err(Error::BadMagic {
                path: path.display().to_string(),
                expected: "GCKP",
            });
        }
        let version = cur.u16("version")?;
        if version != GCKP_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.display().to_string(),
                got: version,
                offset: 4,
            });
        }
        let d_in = cur.u32("d_in")? as usize;
        let hidden = cur.u32("hidden")? as usize;
        let d_emb = cur.u32("d_emb")? as usize;
        let scales = cur.u32("scales")? as usize;
        let f_pairs = cur.u32("f_pairs")? as usize;
        let dims = EncoderDims {
            d_in,
            hidden,
            d_emb,
            scales,
            f_pairs,
        };
        dims.validate()?;
        let tau = cur.f64("tau")?;
        let tensor = |cur: &mut ByteCursor, n: usize, what: &'static str| -> Result<Vec<f64>, Error> {
            let mut t = Vec::with_capacity(n);
            for _ in 0..n {
                t.push(cur.f64(what)?);
            }
            Ok(t)
        };
        let mlp = |cur: &mut ByteCursor, in_dim: usize| -> Result<Mlp, Error> {
            Ok(Mlp {
                l1: Linear {
                    w: tensor(cur, in_dim * hidden, "l1 weights")?,
                    b: tensor(cur, hidden, "l1 bias")?,
                    in_dim,
                    out_dim: hidden,
                },
                l2: Linear {
                    w: tensor(cur, hidden * d_emb, "l2 weights")?,
                    b: tensor(cur, d_emb, "l2 bias")?,
                    in_dim: hidden,
                    out_dim: d_emb,
                },
            })
        };
        let image_head = mlp(&mut cur, d_in)?;
        let mut location_scales = Vec::with_capacity(scales);
        for _ in 0..scales {
            let sigma = cur.f64("band sigma")?;
            let projection = tensor(&mut cur, f_pairs * 2, "band projection")?;
            location_scales.push(RffScale {
                sigma,
                projection,
                f_pairs,
            });
        }
        let mut location_heads = Vec::with_capacity(scales);
        for _ in 0..scales {
            location_heads.push(mlp(&mut cur, 2 * f_pairs)?);
        }
        if cur.remaining() != 0 {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                reason: format!("{} trailing bytes at offset {}", cur.remaining(), cur.position()),
            });
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                reason: format!("invalid temperature {tau}"),
            });
        }
        Ok(DualEncoder {
            dims,
            image_head,
            location_scales,
            location_heads,
            tau,
        })
    }
}
