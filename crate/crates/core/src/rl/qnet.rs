//! Fully convolutional value network producing one Q value per pixel.

use crate::error::{HerdError, Result};
use crate::nn::layers::{relu, relu_backward, Conv, ConvTranspose};
use crate::nn::{Grads, ParameterSet, Tensor};
use crate::observation::{StateImage, NUM_CHANNELS};
use rand::Rng;

/// Channel widths of the four encoder stages.
pub const ENCODER_CHANNELS: [usize; 4] = [16, 32, 64, 64];

/// Strided conv encoder (each stage halves resolution) followed by a
/// transposed-conv decoder with additive skips back to the input size.
#[derive(Debug, Clone)]
pub struct QNetwork {
    pub params: ParameterSet,
    enc: Vec<Conv>,
    dec: Vec<ConvTranspose>,
    head: Conv,
}

/// Activations kept for the backward pass.
#[derive(Debug)]
pub struct QCache {
    x: Tensor,
    enc_pre: Vec<Tensor>,
    enc_out: Vec<Tensor>,
    dec_pre: Vec<Tensor>,
    dec_out: Vec<Tensor>,
}

impl QNetwork {
    pub fn new(rng: &mut impl Rng) -> Self {
        let mut ps = ParameterSet::new();
        let c = ENCODER_CHANNELS;
        let mut enc = Vec::new();
        let mut cin = NUM_CHANNELS;
        for (i, &cout) in c.iter().enumerate() {
            enc.push(Conv::new_2d(&mut ps, &format!("enc{i}"), cin, cout, 3, 2, 1, rng));
            cin = cout;
        }
        // decoder widths mirror the encoder: 64 -> 64 -> 32 -> 16 -> 16.
        // 2x2 stride-2 up-convolutions keep the decoder cheap on one core.
        let widths = [c[3], c[2], c[1], c[0], c[0]];
        let dec = (0..4)
            .map(|i| ConvTranspose::new_2d(&mut ps, &format!("dec{i}"), widths[i], widths[i + 1], 2, 2, 0, rng))
            .collect();
        let head = Conv::new_2d(&mut ps, "head", c[0], 1, 1, 1, 0, rng);
        Self { params: ps, enc, dec, head }
    }

    /// Input side must be divisible by 16 (four stride-2 stages).
    pub fn check_size(size: usize) -> Result<()> {
        if size == 0 || size % 16 != 0 {
            return Err(HerdError::InvalidConfig(format!("state image size {size} must be a positive multiple of 16")));
        }
        Ok(())
    }

    pub fn batch(images: &[&StateImage]) -> Result<Tensor> {
        let size = images.first().map(|s| s.size).ok_or_else(|| HerdError::shape("qnet", "empty batch"))?;
        let mut data = Vec::with_capacity(images.len() * NUM_CHANNELS * size * size);
        for im in images {
            if im.size != size || im.data.len() != NUM_CHANNELS * size * size {
                return Err(HerdError::shape("qnet", "mixed image sizes in batch"));
            }
            data.extend_from_slice(&im.data);
        }
        Tensor::from_vec(&[images.len(), NUM_CHANNELS, size, size], data)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, QCache)> {
        if x.rank() != 4 {
            return Err(HerdError::shape("qnet", format!("input {:?}", x.shape)));
        }
        Self::check_size(x.shape[2]).and(Self::check_size(x.shape[3])).map_err(|e| HerdError::shape("qnet", e.to_string()))?;
        let mut enc_pre = Vec::with_capacity(4);
        let mut enc_out: Vec<Tensor> = Vec::with_capacity(4);
        let mut h = x.clone();
        for conv in &self.enc {
            let a = conv.forward(&self.params, &h)?;
            h = relu(&a);
            enc_pre.push(a);
            enc_out.push(h.clone());
        }
        let mut dec_pre = Vec::with_capacity(4);
        let mut dec_out = Vec::with_capacity(4);
        for (i, up) in self.dec.iter().enumerate() {
            let mut u = up.forward(&self.params, &h)?;
            if i < 3 {
                u.add_assign(&enc_out[2 - i])?;
            }
            h = relu(&u);
            dec_pre.push(u);
            dec_out.push(h.clone());
        }
        let q = self.head.forward(&self.params, &h)?;
        Ok((q, QCache { x: x.clone(), enc_pre, enc_out, dec_pre, dec_out }))
    }

    /// Q maps `[N, 1, H, W]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_cached(x).map(|(q, _)| q)
    }

    /// Accumulates parameter gradients for an upstream gradient on the Q maps.
    pub fn backward(&self, grads: &mut Grads, cache: &QCache, dq: &Tensor) -> Result<()> {
        let ps = &self.params;
        let mut dh = self.head.backward(ps, grads, &cache.dec_out[3], dq)?;
        let mut skip_grads: Vec<Tensor> = Vec::with_capacity(3);
        for i in (0..4).rev() {
            let du = relu_backward(&cache.dec_pre[i], &dh);
            if i < 3 {
                skip_grads.push(du.clone());
            }
            let input = if i == 0 { &cache.enc_out[3] } else { &cache.dec_out[i - 1] };
            dh = self.dec[i].backward(ps, grads, input, &du)?;
        }
        // skip_grads holds decoder stages 2, 1, 0, which feed encoder outputs 0, 1, 2
        for i in (0..4).rev() {
            if i < 3 {
                dh.add_assign(&skip_grads[i])?;
            }
            let da = relu_backward(&cache.enc_pre[i], &dh);
            let input = if i == 0 { &cache.x } else { &cache.enc_out[i - 1] };
            dh = self.enc[i].backward(ps, grads, input, &da)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::nn::checkpoint::save(path, &self.params)
    }

    /// Loads a checkpoint written by [`QNetwork::save`].
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let mut net = Self::new(&mut rng);
        crate::nn::checkpoint::load_into(path, &mut net.params)
            .map_err(|e| HerdError::Checkpoint(format!("{}: {e}", path.display())))?;
        Ok(net)
    }

    /// Q map of one state as a row-major `size × size` vector.
    pub fn q_map(&self, s: &StateImage) -> Result<Vec<f32>> {
        Ok(self.forward(&Self::batch(&[s])?)?.data)
    }
}
