//! Genre projection and ReLU fusion layer.
//!
//! ```text
//! p_g = W_g · gv + b_g
//! f   = ReLU(W_f · [e_d; p_g] + b_f)
//! ```
//!
//! `W_f` columns are laid out as `[text block | genre block]`. Dimensions
//! are taken from the parameter shapes, so the same code runs at reduced
//! size for gradient checks.

use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, fnv1a64, Reader, Writer};
use crate::error::{Error, Result};
use crate::{GENRE_DIM, TEXT_DIM};

const MAGIC: &[u8; 8] = b"LFRMDL1\0";

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParameters {
    /// text_dim × genre_dim
    pub w_g: Array2<f64>,
    pub b_g: Array1<f64>,
    /// text_dim × 2·text_dim
    pub w_f: Array2<f64>,
    pub b_f: Array1<f64>,
    pub seed: u64,
    pub epochs_trained: u32,
}

/// Gradients with the same block shapes as [`FusionParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGradients {
    pub w_g: Array2<f64>,
    pub b_g: Array1<f64>,
    pub w_f: Array2<f64>,
    pub b_f: Array1<f64>,
}

/// Intermediate values of a batched forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// n × 2·text_dim concatenated inputs `[e_d; p_g]`
    pub concat: Array2<f64>,
    /// n × text_dim pre-activations
    pub pre: Array2<f64>,
    /// n × text_dim fused outputs
    pub output: Array2<f64>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    // Sampled at single precision so a fresh model survives a checkpoint
    // round trip unchanged.
    let mut b = bound as f32;
    if f64::from(b) > bound {
        b = f32::from_bits(b.to_bits() - 1);
    }
    Array2::from_shape_simple_fn((rows, cols), || f64::from(rng.gen_range(-b..b)))
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

impl FusionParameters {
    /// Full-size parameters: 768-d text, 50-d genre.
    pub fn init(seed: u64) -> Self {
        Self::init_with_dims(TEXT_DIM, GENRE_DIM, seed)
    }

    /// Glorot-uniform weights and zero biases, deterministic per seed.
    pub fn init_with_dims(text_dim: usize, genre_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_g = glorot(&mut rng, text_dim, genre_dim);
        let w_f = glorot(&mut rng, text_dim, 2 * text_dim);
        Self {
            w_g,
            b_g: Array1::zeros(text_dim),
            w_f,
            b_f: Array1::zeros(text_dim),
            seed,
            epochs_trained: 0,
        }
    }

    pub fn text_dim(&self) -> usize {
        self.w_g.nrows()
    }

    pub fn genre_dim(&self) -> usize {
        self.w_g.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.w_g.len() + self.b_g.len() + self.w_f.len() + self.b_f.len()
    }

    pub fn project_genre(&self, gv: &[f64]) -> Result<Vec<f64>> {
        check_len("genre vector", self.genre_dim(), gv.len())?;
        let gv = ndarray::ArrayView1::from(gv);
        Ok((self.w_g.dot(&gv) + &self.b_g).to_vec())
    }

    pub fn fuse(&self, e_d: &[f64], p_g: &[f64]) -> Result<Vec<f64>> {
        let t = self.text_dim();
        check_len("text embedding", t, e_d.len())?;
        check_len("projected genre", t, p_g.len())?;
        let text_block = self.w_f.slice(s![.., ..t]);
        let genre_block = self.w_f.slice(s![.., t..]);
        let z = text_block.dot(&ndarray::ArrayView1::from(e_d))
            + genre_block.dot(&ndarray::ArrayView1::from(p_g))
            + &self.b_f;
        Ok(z.iter().map(|&v| v.max(0.0)).collect())
    }

    pub fn forward(&self, e_d: &[f64], gv: &[f64]) -> Result<Vec<f64>> {
        let p_g = self.project_genre(gv)?;
        self.fuse(e_d, &p_g)
    }

    /// Forward pass over a batch; row `i` of each input is one sample.
    pub fn forward_batch(&self, text: ArrayView2<f64>, genre: ArrayView2<f64>) -> Result<ForwardCache> {
        check_len("text batch width", self.text_dim(), text.ncols())?;
        check_len("genre batch width", self.genre_dim(), genre.ncols())?;
        check_len("genre batch rows", text.nrows(), genre.nrows())?;
        let projected = genre.dot(&self.w_g.t()) + &self.b_g;
        let concat = concatenate(Axis(1), &[text, projected.view()]).expect("matching row counts");
        // GEMM may hand back column-major results; callers read rows as slices.
        let pre = (concat.dot(&self.w_f.t()) + &self.b_f).as_standard_layout().into_owned();
        let output = pre.mapv(|v| v.max(0.0));
        Ok(ForwardCache { concat, pre, output })
    }

    /// Backward pass for a batch given dL/d(output). Returns parameter
    /// gradients summed over rows and dL/d(text input) per row.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        genre: ArrayView2<f64>,
        upstream: ArrayView2<f64>,
    ) -> Result<(FusionGradients, Array2<f64>)> {
        let t = self.text_dim();
        check_len("upstream width", t, upstream.ncols())?;
        check_len("upstream rows", cache.pre.nrows(), upstream.nrows())?;
        check_len("genre batch rows", cache.pre.nrows(), genre.nrows())?;
        // ReLU'(0) = 0
        let mut d_pre = upstream.to_owned();
        ndarray::Zip::from(&mut d_pre)
            .and(&cache.pre)
            .for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
        let grad_w_f = d_pre.t().dot(&cache.concat);
        let grad_b_f = d_pre.sum_axis(Axis(0));
        let d_concat = d_pre.dot(&self.w_f);
        let d_projected = d_concat.slice(s![.., t..]);
        let grad_w_g = d_projected.t().dot(&genre);
        let grad_b_g = d_projected.sum_axis(Axis(0));
        let d_text = d_concat.slice(s![.., ..t]).to_owned();
        Ok((
            FusionGradients {
                w_g: grad_w_g.as_standard_layout().into_owned(),
                b_g: grad_b_g,
                w_f: grad_w_f.as_standard_layout().into_owned(),
                b_f: grad_b_f,
            },
            d_text,
        ))
    }

    /// Single-sample backward pass.
    pub fn backward(&self, e_d: &[f64], gv: &[f64], upstream: &[f64]) -> Result<(FusionGradients, Vec<f64>)> {
        check_len("text embedding", self.text_dim(), e_d.len())?;
        check_len("genre vector", self.genre_dim(), gv.len())?;
        check_len("upstream gradient", self.text_dim(), upstream.len())?;
        let text = ArrayView2::from_shape((1, e_d.len()), e_d).unwrap();
        let genre = ArrayView2::from_shape((1, gv.len()), gv).unwrap();
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).unwrap();
        let cache = self.forward_batch(text, genre)?;
        let (grads, d_text) = self.backward_batch(&cache, genre, up)?;
        Ok((grads, d_text.into_raw_vec_and_offset().0))
    }

    /// Parameter blocks in checkpoint order: W_g, b_g, W_f, b_f.
    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w_g.as_slice_mut().expect("standard layout"),
            self.b_g.as_slice_mut().expect("standard layout"),
            self.w_f.as_slice_mut().expect("standard layout"),
            self.b_f.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [
            self.w_g.as_slice().expect("standard layout"),
            self.b_g.as_slice().expect("standard layout"),
            self.w_f.as_slice().expect("standard layout"),
            self.b_f.as_slice().expect("standard layout"),
        ]
    }

    /// Rounds every parameter to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for block in self.blocks_mut() {
            for v in block.iter_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(8 + 12 + self.param_count() * 4 + 12);
        w.bytes(MAGIC);
        w.u32(self.genre_dim() as u32);
        w.u32(self.text_dim() as u32);
        w.u32(self.w_f.ncols() as u32);
        for block in self.blocks() {
            w.f64s_as_f32(block.iter().copied());
        }
        w.u64(self.seed);
        w.u32(self.epochs_trained);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "fusion checkpoint");
        r.expect_magic(MAGIC)?;
        let genre_dim = r.u32()? as usize;
        let text_dim = r.u32()? as usize;
        let fused_dim = r.u32()? as usize;
        if genre_dim == 0 || text_dim == 0 || fused_dim != 2 * text_dim {
            return Err(r.corrupt(format!(
                "inconsistent dims genre={genre_dim} text={text_dim} concat={fused_dim}"
            )));
        }
        let mut read = |n: usize| -> Result<Vec<f64>> {
            Ok(r.f32s(n)?.into_iter().map(f64::from).collect())
        };
        let w_g = read(text_dim * genre_dim)?;
        let b_g = read(text_dim)?;
        let w_f = read(text_dim * fused_dim)?;
        let b_f = read(text_dim)?;
        let seed = r.u64()?;
        let epochs_trained = r.u32()?;
        r.finish()?;
        let params = Self {
            w_g: Array2::from_shape_vec((text_dim, genre_dim), w_g).unwrap(),
            b_g: Array1::from(b_g),
            w_f: Array2::from_shape_vec((text_dim, fused_dim), w_f).unwrap(),
            b_f: Array1::from(b_f),
            seed,
            epochs_trained,
        };
        if !params.is_finite() {
            return Err(Error::corrupt("fusion checkpoint", "non-finite parameter"));
        }
        Ok(params)
    }

    /// FNV-1a of the serialized checkpoint.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

impl FusionGradients {
    pub fn zeros_like(p: &FusionParameters) -> Self {
        Self {
            w_g: Array2::zeros(p.w_g.raw_dim()),
            b_g: Array1::zeros(p.b_g.raw_dim()),
            w_f: Array2::zeros(p.w_f.raw_dim()),
            b_f: Array1::zeros(p.b_f.raw_dim()),
        }
    }

    pub fn add_assign(&mut self, other: &FusionGradients) {
        self.w_g += &other.w_g;
        self.b_g += &other.b_g;
        self.w_f += &other.w_f;
        self.b_f += &other.b_f;
    }

    pub fn scale(&mut self, factor: f64) {
        self.w_g *= factor;
        self.b_g *= factor;
        self.w_f *= factor;
        self.b_f *= factor;
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [
            self.w_g.as_slice().expect("standard layout"),
            self.b_g.as_slice().expect("standard layout"),
            self.w_f.as_slice().expect("standard layout"),
            self.b_f.as_slice().expect("standard layout"),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w_g.as_slice_mut().expect("standard layout"),
            self.b_g.as_slice_mut().expect("standard layout"),
            self.w_f.as_slice_mut().expect("standard layout"),
            self.b_f.as_slice_mut().expect("standard layout"),
        ]
    }

    /// L2 norm over all four blocks together.
    pub fn global_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn shape_matches(&self, p: &FusionParameters) -> bool {
        self.w_g.dim() == p.w_g.dim()
            && self.b_g.dim() == p.b_g.dim()
            && self.w_f.dim() == p.w_f.dim()
            && self.b_f.dim() == p.b_f.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = FusionParameters::init(11);
        let b = FusionParameters::init(11);
        assert_eq!(a, b);
        assert_ne!(a.w_f, FusionParameters::init(12).w_f);
        assert!(a.b_g.iter().all(|&v| v == 0.0));
        assert!(a.b_f.iter().all(|&v| v == 0.0));
        assert_eq!(a.w_g.dim(), (768, 50));
        assert_eq!(a.w_f.dim(), (768, 1536));
    }

    #[test]
    fn init_respects_glorot_bound() {
        // sqrt(6 / (768 + 50)) = 0.08564...
        let bound_g = (6.0f64 / 818.0).sqrt();
        assert!((bound_g - 0.085_64).abs() < 1e-4);
        let p = FusionParameters::init(1);
        assert!(p.w_g.iter().all(|&v| v.abs() < 0.1 && v.abs() <= bound_g));
        let bound_f = (6.0f64 / (768.0 + 1536.0)).sqrt();
        assert!(p.w_f.iter().all(|&v| v.abs() <= bound_f));
    }

    #[test]
    fn projection_identities() {
        let mut p = FusionParameters::init_with_dims(6, 3, 2);
        assert!(p.project_genre(&[0.0; 3]).unwrap().iter().all(|&v| v == 0.0));
        let col = p.project_genre(&[0.0, 1.0, 0.0]).unwrap();
        for (i, &v) in col.iter().enumerate() {
            assert_eq!(v, p.w_g[[i, 1]]);
        }
        p.w_g.fill(0.0);
        p.b_g.fill(2.5);
        assert!(p.project_genre(&[1.0, -3.0, 7.0]).unwrap().iter().all(|&v| v == 2.5));
        assert!(matches!(p.project_genre(&[1.0; 4]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn fuse_identities() {
        let mut p = FusionParameters::init_with_dims(4, 2, 3);
        let e = [0.5, 0.0, 2.0, 1.0];
        let g = [-1.0, 3.0, 0.2, 0.4];
        p.w_f.fill(0.0);
        assert!(p.fuse(&e, &g).unwrap().iter().all(|&v| v == 0.0));
        p.b_f.fill(-10.0);
        assert!(p.fuse(&e, &g).unwrap().iter().all(|&v| v == 0.0));
        p.b_f.fill(0.0);
        for i in 0..4 {
            p.w_f[[i, i]] = 1.0;
        }
        assert_eq!(p.fuse(&e, &g).unwrap(), e.to_vec());
        assert!(p.fuse(&e[..3], &g).is_err());
    }

    #[test]
    fn forward_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = FusionParameters::init_with_dims(8, 3, 4);
        for _ in 0..20 {
            let out = p.forward(&randn(&mut rng, 8), &randn(&mut rng, 3)).unwrap();
            assert_eq!(out.len(), 8);
            assert!(out.iter().all(|&v| v >= 0.0 && v.is_finite()));
        }

        let mut z = p.clone();
        for b in z.blocks_mut() {
            b.fill(0.0);
        }
        assert!(z.forward(&randn(&mut rng, 8), &randn(&mut rng, 3)).unwrap().iter().all(|&v| v == 0.0));

        // positive homogeneity in e_d with the genre block off
        let mut h = p.clone();
        h.w_f.slice_mut(s![.., 8..]).fill(0.0);
        let e = randn(&mut rng, 8);
        let gv = randn(&mut rng, 3);
        let once = h.forward(&e, &gv).unwrap();
        let doubled: Vec<f64> = e.iter().map(|v| 2.0 * v).collect();
        let twice = h.forward(&doubled, &gv).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = FusionParameters::init_with_dims(10, 4, 7);
        let text = Array2::from_shape_vec((3, 10), randn(&mut rng, 30)).unwrap();
        let genre = Array2::from_shape_vec((3, 4), randn(&mut rng, 12)).unwrap();
        let cache = p.forward_batch(text.view(), genre.view()).unwrap();
        for i in 0..3 {
            let single = p
                .forward(text.row(i).as_slice().unwrap(), genre.row(i).as_slice().unwrap())
                .unwrap();
            for (a, b) in single.iter().zip(cache.output.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = FusionParameters::init_with_dims(6, 2, 9);
        let e = randn(&mut rng, 6);
        let gv = randn(&mut rng, 2);
        let (g, d_e) = p.backward(&e, &gv, &[0.0; 6]).unwrap();
        assert_eq!(g.global_norm(), 0.0);
        assert!(d_e.iter().all(|&v| v == 0.0));

        p.b_f.fill(-1e3);
        let (g, _) = p.backward(&e, &gv, &[1.0; 6]).unwrap();
        assert!(g.w_f.iter().all(|&v| v == 0.0));
        assert!(p.backward(&e, &gv, &[1.0; 5]).is_err());
    }

    // Central differences on L = <u, forward(e, gv)> for every parameter and
    // every text input coordinate.
    #[test]
    fn backward_matches_finite_differences() {
        let h = 1e-4;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let p = FusionParameters::init_with_dims(5, 3, seed);
            let e = randn(&mut rng, 5);
            let gv = randn(&mut rng, 3);
            let u = randn(&mut rng, 5);
            let loss = |p: &FusionParameters, e: &[f64]| -> f64 {
                p.forward(e, &gv).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum()
            };
            let (grads, d_e) = p.backward(&e, &gv, &u).unwrap();
            for (block, analytic) in grads.blocks().iter().enumerate() {
                for (k, &a) in analytic.iter().enumerate() {
                    let mut plus = p.clone();
                    plus.blocks_mut()[block][k] += h;
                    let mut minus = p.clone();
                    minus.blocks_mut()[block][k] -= h;
                    let numeric = (loss(&plus, &e) - loss(&minus, &e)) / (2.0 * h);
                    let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    assert!(err < 1e-3, "seed {seed} block {block}[{k}]: {a} vs {numeric}");
                }
            }
            for k in 0..5 {
                let mut ep = e.clone();
                ep[k] += h;
                let mut em = e.clone();
                em[k] -= h;
                let numeric = (loss(&p, &ep) - loss(&p, &em)) / (2.0 * h);
                assert!((d_e[k] - numeric).abs() <= 1e-3 * d_e[k].abs().max(numeric.abs()).max(1e-6));
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = FusionParameters::init_with_dims(12, 5, 21);
        p.b_f.fill(0.125);
        p.epochs_trained = 2;
        let bytes = p.to_bytes();
        assert_eq!(bytes.len(), 8 + 12 + (12 * 5 + 12 + 12 * 24 + 12) * 4 + 8 + 4);
        let back = FusionParameters::from_bytes(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.fingerprint(), p.fingerprint());

        let mut bad = bytes.clone();
        bad[7] = 1;
        assert!(FusionParameters::from_bytes(&bad).is_err());
        assert!(FusionParameters::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
