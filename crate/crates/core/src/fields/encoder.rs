//! Small convolutional image encoder and MLP building blocks.
//!
//! The encoder turns an `[h, w, 3]` image into an `[h, w, c]` feature map:
//! a few 3x3 convolutions (implemented as `unfold` + matrix product) with
//! ReLU activations, followed by bilinear upsampling back to the input
//! resolution so feature coordinates coincide with pixel coordinates.

use rand::Rng;

use crate::autodiff::{concat, Tensor, TensorError};

/// Affine layer: `x [n, din] @ w [din, dout] + b [1, dout]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    x.matmul(w)?.add(b)
}

/// 3x3-style convolution over an `[h, w, cin]` map via im2col:
/// `w` is `[k*k*cin, cout]` (patch entries ordered ky, kx, c), `b` is
/// `[1, cout]`. Returns `[oh, ow, cout]`.
pub fn conv_layer(
    img: &Tensor,
    w: &Tensor,
    b: &Tensor,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor, TensorError> {
    let shape = img.shape();
    let (h, wd) = (shape[0], shape[1]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let cout = w.shape()[1];
    let cols = img.unfold(k, stride, pad)?;
    linear(&cols, w, b)?.reshape(&[oh, ow, cout])
}

/// One encoder stage: weight, bias, and stride (kernel 3, padding 1).
pub struct ConvStage<'a> {
    pub w: &'a Tensor,
    pub b: &'a Tensor,
    pub stride: usize,
}

/// Run the conv stack over an `[h, w, cin]` image and bilinearly upsample
/// the result back to `[h, w, cout]`. With kernel 3 and padding 1, the
/// feature at grid cell `i` is centred on input pixel `i * total_stride`,
/// so the upsample grid reads the map at `(x / total_stride, y / total_stride)`.
pub fn encode_image(img: &Tensor, stages: &[ConvStage]) -> Result<Tensor, TensorError> {
    let shape = img.shape();
    let (h, w) = (shape[0], shape[1]);
    let mut feat = img.clone();
    let mut total_stride = 1usize;
    for stage in stages {
        feat = conv_layer(&feat, stage.w, stage.b, 3, stage.stride, 1)?.relu();
        total_stride *= stage.stride;
    }
    if total_stride == 1 {
        return Ok(feat);
    }
    let inv = 1.0 / total_stride as f64;
    let mut grid = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        for x in 0..w {
            grid.push(x as f64 * inv);
            grid.push(y as f64 * inv);
        }
    }
    let coords = Tensor::constant(grid, &[h * w, 2]);
    let c = feat.shape()[2];
    feat.bilinear_sample(&coords)?.reshape(&[h, w, c])
}

/// Sinusoidal positional encoding: `[n, d] -> [n, d * (1 + 2 * octaves)]`,
/// the raw coordinates followed by `sin` and `cos` at frequencies
/// `2^0 .. 2^(octaves-1)`.
pub fn positional_encoding(xs: &Tensor, octaves: usize) -> Result<Tensor, TensorError> {
    let mut parts = vec![xs.clone()];
    for o in 0..octaves {
        let scaled = xs.scale((1u64 << o) as f64);
        parts.push(scaled.sin());
        parts.push(scaled.cos());
    }
    concat(1, &parts)
}

/// Width of `positional_encoding` output for a `d`-dimensional input.
pub fn positional_encoding_dim(d: usize, octaves: usize) -> usize {
    d * (1 + 2 * octaves)
}

/// Xavier-uniform weights and zero biases for a `fan_in -> fan_out` layer
/// (also used for conv weights with `fan_in = k*k*cin`).
pub fn mlp_init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> (Vec<f64>, Vec<f64>) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let w = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    (w, vec![0.0; fan_out])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_identity_kernel_reproduces_image() {
        // A 3x3 kernel that just copies the centre pixel of channel 0.
        let img = Tensor::constant((0..24).map(|v| v as f64).collect(), &[4, 2, 3]);
        let mut w = vec![0.0; 9 * 3];
        w[4 * 3] = 1.0; // centre tap (ky=1, kx=1), channel 0 -> output 0
        let w = Tensor::constant(w, &[27, 1]);
        let b = Tensor::constant(vec![0.0], &[1, 1]);
        let out = conv_layer(&img, &w, &b, 3, 1, 1).unwrap();
        assert_eq!(out.shape(), &[4, 2, 1]);
        for y in 0..4 {
            for x in 0..2 {
                assert_eq!(out.values()[y * 2 + x], img.values()[(y * 2 + x) * 3]);
            }
        }
    }

    #[test]
    fn strided_conv_halves_resolution() {
        let img = Tensor::constant(vec![1.0; 8 * 6 * 3], &[8, 6, 3]);
        let w = Tensor::constant(vec![0.01; 27 * 5], &[27, 5]);
        let b = Tensor::constant(vec![0.0; 5], &[1, 5]);
        let out = conv_layer(&img, &w, &b, 3, 2, 1).unwrap();
        assert_eq!(out.shape(), &[4, 3, 5]);
    }

    #[test]
    fn encoder_output_matches_input_resolution_and_is_differentiable() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = Tensor::constant(
            (0..8 * 8 * 3).map(|_| rng.gen_range(0.0..1.0)).collect(),
            &[8, 8, 3],
        );
        let (w1, b1) = mlp_init(&mut rng, 27, 4);
        let (w2, b2) = mlp_init(&mut rng, 36, 6);
        let w1 = Tensor::param(w1, &[27, 4]);
        let b1 = Tensor::param(b1, &[1, 4]);
        let w2 = Tensor::param(w2, &[36, 6]);
        let b2 = Tensor::param(b2, &[1, 6]);
        let stages = [
            ConvStage { w: &w1, b: &b1, stride: 2 },
            ConvStage { w: &w2, b: &b2, stride: 2 },
        ];
        let feat = encode_image(&img, &stages).unwrap();
        assert_eq!(feat.shape(), &[8, 8, 6]);
        feat.sum_all().backward().unwrap();
        let g = w1.grad().unwrap();
        assert!(g.iter().any(|v| v.abs() > 0.0), "encoder weights receive gradient");
    }

    #[test]
    fn positional_encoding_shape_and_values() {
        let xs = Tensor::constant(vec![0.5, -1.0, 2.0], &[1, 3]);
        let enc = positional_encoding(&xs, 2).unwrap();
        assert_eq!(enc.shape(), &[1, positional_encoding_dim(3, 2)]);
        let v = enc.values();
        assert_eq!(&v[0..3], &[0.5, -1.0, 2.0]);
        assert!((v[3] - 0.5f64.sin()).abs() < 1e-12);
        assert!((v[6] - 0.5f64.cos()).abs() < 1e-12);
        assert!((v[9] - 1.0f64.sin()).abs() < 1e-12); // sin(2 * 0.5)
    }

    #[test]
    fn upsampled_features_interpolate_between_grid_cells() {
        // Identity-ish single conv with stride 2 on a ramp image: the
        // upsampled map must vary smoothly, not repeat blocks.
        let img = Tensor::constant((0..16).map(|v| v as f64).collect(), &[4, 4, 1]);
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let w = Tensor::constant(w, &[9, 1]);
        let b = Tensor::constant(vec![0.0], &[1, 1]);
        let stages = [ConvStage { w: &w, b: &b, stride: 2 }];
        let feat = encode_image(&img, &stages).unwrap();
        assert_eq!(feat.shape(), &[4, 4, 1]);
        let v = feat.values();
        // Grid cells hold pixels (0,0)=0 and (2,0)=2; halfway sits pixel 1.
        assert!((v[0] - 0.0).abs() < 1e-12);
        assert!((v[1] - 1.0).abs() < 1e-12);
        assert!((v[2] - 2.0).abs() < 1e-12);
    }
}
