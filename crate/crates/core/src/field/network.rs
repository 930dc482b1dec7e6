use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hash::{HashGrid, HashGridConfig, HashTape};
use super::mlp::{Mlp, MlpTape};
use super::sh::SH_COEFFS;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};

pub const FEATURE_CHANNELS: usize = 8;
/// Encoder outputs: eight features followed by opacity.
pub const ENCODER_OUTPUTS: usize = FEATURE_CHANNELS + 1;
pub const DECODER_INPUTS: usize = FEATURE_CHANNELS + SH_COEFFS;
pub const ENCODER_WIDTHS: [usize; 5] = [32, 64, 64, 64, ENCODER_OUTPUTS];
pub const DECODER_WIDTHS: [usize; 4] = [DECODER_INPUTS, 16, 16, 3];

/// Encoder output at one point: features and opacity, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSample {
    pub features: [f64; FEATURE_CHANNELS],
    pub alpha: f64,
}

impl FeatureSample {
    pub fn from_outputs(out: &[f64]) -> Self {
        let mut features = [0.0; FEATURE_CHANNELS];
        features.copy_from_slice(&out[..FEATURE_CHANNELS]);
        Self {
            features,
            alpha: out[FEATURE_CHANNELS],
        }
    }

    pub fn channels(&self) -> [f64; ENCODER_OUTPUTS] {
        let mut c = [0.0; ENCODER_OUTPUTS];
        c[..FEATURE_CHANNELS].copy_from_slice(&self.features);
        c[FEATURE_CHANNELS] = self.alpha;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub hash: HashGridConfig,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            hash: HashGridConfig::default(),
            seed: 0,
        }
    }
}

/// Quantizes a `[0,1]` value to the nearest of 256 levels.
#[inline]
pub fn quantize_unit(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

#[inline]
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Hash encoding, encoder and decoder of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldNetwork {
    pub aabb: Aabb,
    pub hash: HashGrid,
    pub encoder: Mlp,
    pub decoder: Mlp,
    /// Quantize encoder outputs to 8 bits in the forward pass (straight-through backward).
    pub quantize: bool,
}

/// Intermediates of a batched encoder pass.
#[derive(Debug, Clone, Default)]
pub struct EncoderTape {
    hash: HashTape,
    mlp: MlpTape,
    /// d(unit-cube coordinate) / d(world coordinate) per axis.
    world_scale: Vec3,
}

impl EncoderTape {
    pub fn len(&self) -> usize {
        self.hash.n
    }

    pub fn is_empty(&self) -> bool {
        self.hash.n == 0
    }
}

/// Intermediates of a batched decoder pass.
#[derive(Debug, Clone, Default)]
pub struct DecoderTape {
    mlp: MlpTape,
}

impl DecoderTape {
    pub fn len(&self) -> usize {
        self.mlp.n
    }

    pub fn is_empty(&self) -> bool {
        self.mlp.n == 0
    }
}

/// Dense gradient buffers matching a [`FieldNetwork`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGradients {
    pub hash: Vec<f64>,
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
}

impl FieldGradients {
    pub fn zeros_like(net: &FieldNetwork) -> Self {
        Self {
            hash: vec![0.0; net.hash.params().len()],
            encoder: vec![0.0; net.encoder.param_count()],
            decoder: vec![0.0; net.decoder.param_count()],
        }
    }

    pub fn clear(&mut self) {
        for v in [&mut self.hash, &mut self.encoder, &mut self.decoder] {
            v.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.hash
            .iter()
            .chain(&self.encoder)
            .chain(&self.decoder)
            .all(|g| g.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.hash
            .iter()
            .chain(&self.encoder)
            .chain(&self.decoder)
            .all(|&g| g == 0.0)
    }
}

impl FieldNetwork {
    pub fn new(aabb: Aabb, config: &FieldConfig) -> Result<Self> {
        if !aabb.is_valid() {
            return Err(Error::Config("field AABB must satisfy min < max".into()));
        }
        if config.hash.output_dim() != ENCODER_WIDTHS[0] {
            return Err(Error::Config(format!(
                "hash encoding width {} must equal the encoder input width {}",
                config.hash.output_dim(),
                ENCODER_WIDTHS[0]
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            aabb,
            hash: HashGrid::new(config.hash.clone(), &mut rng)?,
            encoder: Mlp::new(&ENCODER_WIDTHS, &mut rng)?,
            decoder: Mlp::new(&DECODER_WIDTHS, &mut rng)?,
            quantize: false,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.hash.params().iter().all(|v| v.is_finite())
            && self.encoder.is_finite()
            && self.decoder.is_finite()
    }

    fn unit_points(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|p| self.aabb.normalize(p)).collect()
    }

    /// Encoder at a world point (clamped into the block AABB).
    pub fn encoder_forward(&self, p: &Vec3) -> FeatureSample {
        self.encode_batch(std::slice::from_ref(p))[0]
    }

    /// Forward-only batched encoder.
    pub fn encode_batch(&self, points: &[Vec3]) -> Vec<FeatureSample> {
        let mut tape = EncoderTape::default();
        self.encode_recorded(points, &mut tape)
    }

    /// Batched encoder pass recording what [`Self::encoder_backward`] needs.
    pub fn encode_recorded(&self, points: &[Vec3], tape: &mut EncoderTape) -> Vec<FeatureSample> {
        let n = points.len();
        if n == 0 {
            tape.hash = HashTape::default();
            tape.mlp = MlpTape::default();
            return Vec::new();
        }
        let unit = self.unit_points(points);
        let mut enc = vec![0.0; n * self.hash.output_dim()];
        self.hash
            .encode_batch(&unit, &mut enc, Some(&mut tape.hash));
        self.encoder.forward_batch(&enc, n, &mut tape.mlp);
        let ext = self.aabb.extent();
        tape.world_scale = Vec3::new(1.0 / ext.x, 1.0 / ext.y, 1.0 / ext.z);
        tape.mlp
            .output()
            .chunks_exact(ENCODER_OUTPUTS)
            .map(|row| {
                let mut s = FeatureSample::from_outputs(row);
                if self.quantize {
                    s.features.iter_mut().for_each(|v| *v = quantize_unit(*v));
                    s.alpha = quantize_unit(s.alpha);
                }
                s
            })
            .collect()
    }

    /// Backpropagates `d_out` (per sample: 8 feature gradients then the opacity gradient).
    ///
    /// Parameter gradients (hash table and encoder weights) come from the first `param_rows`
    /// samples only. Returns world-space position gradients for every sample.
    pub fn encoder_backward(
        &self,
        tape: &EncoderTape,
        d_out: &[[f64; ENCODER_OUTPUTS]],
        param_rows: usize,
        grads: &mut FieldGradients,
    ) -> Vec<Vec3> {
        let n = tape.len();
        assert_eq!(d_out.len(), n);
        if n == 0 {
            return Vec::new();
        }
        let flat: Vec<f64> = d_out.iter().flatten().copied().collect();
        let d_enc = self.encoder.backward_batch(
            &tape.mlp,
            &flat,
            param_rows,
            Some(&mut grads.encoder),
            true,
        );
        let mut d_unit = vec![Vec3::zeros(); n];
        self.hash.backward(
            &tape.hash,
            &d_enc,
            param_rows,
            Some(&mut grads.hash),
            Some(&mut d_unit),
        );
        d_unit
            .iter()
            .map(|g| g.component_mul(&tape.world_scale))
            .collect()
    }

    /// Decoder on one 17-dimensional input.
    pub fn decoder_forward(
        &self,
        features: &[f64; FEATURE_CHANNELS],
        sh: &[f64; SH_COEFFS],
    ) -> [f64; 3] {
        self.decode_batch(&[decoder_input(features, sh)])[0]
    }

    pub fn decode_batch(&self, inputs: &[[f64; DECODER_INPUTS]]) -> Vec<[f64; 3]> {
        let mut tape = DecoderTape::default();
        self.decode_recorded(inputs, &mut tape)
    }

    pub fn decode_recorded(
        &self,
        inputs: &[[f64; DECODER_INPUTS]],
        tape: &mut DecoderTape,
    ) -> Vec<[f64; 3]> {
        let n = inputs.len();
        if n == 0 {
            tape.mlp = MlpTape::default();
            return Vec::new();
        }
        let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
        self.decoder.forward_batch(&flat, n, &mut tape.mlp);
        tape.mlp
            .output()
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect()
    }

    /// Backpropagates color gradients; returns gradients with respect to the eight features.
    pub fn decoder_backward(
        &self,
        tape: &DecoderTape,
        d_rgb: &[[f64; 3]],
        param_rows: usize,
        grads: &mut FieldGradients,
    ) -> Vec<[f64; FEATURE_CHANNELS]> {
        let n = tape.len();
        assert_eq!(d_rgb.len(), n);
        if n == 0 {
            return Vec::new();
        }
        let flat: Vec<f64> = d_rgb.iter().flatten().copied().collect();
        let d_in = self.decoder.backward_batch(
            &tape.mlp,
            &flat,
            param_rows,
            Some(&mut grads.decoder),
            true,
        );
        d_in.chunks_exact(DECODER_INPUTS)
            .map(|row| {
                let mut f = [0.0; FEATURE_CHANNELS];
                f.copy_from_slice(&row[..FEATURE_CHANNELS]);
                f
            })
            .collect()
    }

    /// Encoder then decoder parameters as little-endian f32 values, layer by layer.
    pub fn weights_f32(&self) -> Vec<f32> {
        self.encoder
            .params()
            .iter()
            .chain(self.decoder.params())
            .map(|&v| v as f32)
            .collect()
    }

    pub fn decoder_weights_f32(&self) -> Vec<f32> {
        self.decoder.params().iter().map(|&v| v as f32).collect()
    }

    pub fn set_weights_f32(&mut self, w: &[f32]) -> Result<()> {
        let ne = self.encoder.param_count();
        if w.len() != ne + self.decoder.param_count() {
            return Err(Error::Validation(format!(
                "expected {} weights, got {}",
                ne + self.decoder.param_count(),
                w.len()
            )));
        }
        for (d, s) in self.encoder.params_mut().iter_mut().zip(&w[..ne]) {
            *d = *s as f64;
        }
        for (d, s) in self.decoder.params_mut().iter_mut().zip(&w[ne..]) {
            *d = *s as f64;
        }
        Ok(())
    }

    pub fn set_hash_f32(&mut self, t: &[f32]) -> Result<()> {
        if t.len() != self.hash.params().len() {
            return Err(Error::Validation(format!(
                "expected {} hash entries, got {}",
                self.hash.params().len(),
                t.len()
            )));
        }
        for (d, s) in self.hash.params_mut().iter_mut().zip(t) {
            *d = *s as f64;
        }
        Ok(())
    }

    /// Rounds every parameter through f32, matching what serialization stores.
    pub fn round_to_f32(&mut self) {
        for v in self
            .hash
            .params_mut()
            .iter_mut()
            .chain(self.encoder.params_mut().iter_mut())
            .chain(self.decoder.params_mut().iter_mut())
        {
            *v = *v as f32 as f64;
        }
    }
}

/// Decoder input: eight features then nine SH values.
pub fn decoder_input(
    features: &[f64; FEATURE_CHANNELS],
    sh: &[f64; SH_COEFFS],
) -> [f64; DECODER_INPUTS] {
    let mut x = [0.0; DECODER_INPUTS];
    x[..FEATURE_CHANNELS].copy_from_slice(features);
    x[FEATURE_CHANNELS..].copy_from_slice(sh);
    x
}

/// Tapes of one recorded forward pass, for callers that backpropagate later.
#[derive(Debug, Default)]
pub struct FieldRecorder {
    encoder: Option<EncoderTape>,
    decoder: Option<DecoderTape>,
}

impl FieldRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn encode(&mut self, net: &FieldNetwork, points: &[Vec3]) -> Vec<FeatureSample> {
        let mut tape = EncoderTape::default();
        let out = net.encode_recorded(points, &mut tape);
        self.encoder = Some(tape);
        out
    }

    pub fn decode(
        &mut self,
        net: &FieldNetwork,
        inputs: &[[f64; DECODER_INPUTS]],
    ) -> Vec<[f64; 3]> {
        let mut tape = DecoderTape::default();
        let out = net.decode_recorded(inputs, &mut tape);
        self.decoder = Some(tape);
        out
    }

    /// Full-parameter backward of the recorded encoder pass.
    pub fn backward_encoder(
        &self,
        net: &FieldNetwork,
        d_out: &[[f64; ENCODER_OUTPUTS]],
        grads: &mut FieldGradients,
    ) -> Result<Vec<Vec3>> {
        let tape = self.encoder.as_ref().ok_or_else(|| {
            Error::State("encoder backward without a recorded forward pass".into())
        })?;
        Ok(net.encoder_backward(tape, d_out, tape.len(), grads))
    }

    pub fn backward_decoder(
        &self,
        net: &FieldNetwork,
        d_rgb: &[[f64; 3]],
        grads: &mut FieldGradients,
    ) -> Result<Vec<[f64; FEATURE_CHANNELS]>> {
        let tape = self.decoder.as_ref().ok_or_else(|| {
            Error::State("decoder backward without a recorded forward pass".into())
        })?;
        Ok(net.decoder_backward(tape, d_rgb, tape.len(), grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net(seed: u64) -> FieldNetwork {
        let cfg = FieldConfig {
            hash: HashGridConfig {
                levels: 16,
                features_per_level: 2,
                log2_table_size: 12,
                base_resolution: 2.0,
                max_resolution: 64.0,
            },
            seed,
        };
        FieldNetwork::new(Aabb::new([-1.0; 3], [1.0; 3]), &cfg).unwrap()
    }

    #[test]
    fn outputs_in_unit_range_and_deterministic() {
        let a = small_net(4);
        let b = small_net(4);
        let p = Vec3::new(0.1, -0.3, 0.7);
        let s = a.encoder_forward(&p);
        assert!(s
            .features
            .iter()
            .chain(std::iter::once(&s.alpha))
            .all(|v| *v > 0.0 && *v < 1.0));
        assert_eq!(s, b.encoder_forward(&p));
        assert_eq!(s, a.encoder_forward(&p));
    }

    #[test]
    fn outside_points_are_clamped() {
        let n = small_net(1);
        let s = n.encoder_forward(&Vec3::new(5.0, 0.0, 0.0));
        assert!(s.alpha.is_finite());
        assert_eq!(s, n.encoder_forward(&Vec3::new(1.0, 0.0, 0.0)));
    }

    #[test]
    fn zero_decoder_gives_grey() {
        let mut n = small_net(1);
        n.decoder.params_mut().iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(n.decoder_forward(&[0.7; 8], &[0.2; 9]), [0.5; 3]);
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let n = small_net(1);
        let rec = FieldRecorder::new();
        let mut g = FieldGradients::zeros_like(&n);
        assert!(matches!(
            rec.backward_encoder(&n, &[], &mut g),
            Err(Error::State(_))
        ));
        assert!(matches!(
            rec.backward_decoder(&n, &[], &mut g),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let n = small_net(2);
        let mut rec = FieldRecorder::new();
        let pts = [Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.5, 0.4, 0.0)];
        rec.encode(&n, &pts);
        rec.decode(&n, &[[0.3; DECODER_INPUTS]; 2]);
        let mut g = FieldGradients::zeros_like(&n);
        let dp = rec
            .backward_encoder(&n, &[[0.0; ENCODER_OUTPUTS]; 2], &mut g)
            .unwrap();
        let dm = rec.backward_decoder(&n, &[[0.0; 3]; 2], &mut g).unwrap();
        assert!(g.is_zero());
        assert!(dp.iter().all(|v| v.norm() == 0.0));
        assert!(dm.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn quantized_outputs_are_on_255_grid() {
        let mut n = small_net(3);
        n.quantize = true;
        let s = n.encoder_forward(&Vec3::new(0.2, 0.1, -0.4));
        for v in s.channels() {
            assert!(((v * 255.0) - (v * 255.0).round()).abs() < 1e-9);
        }
    }

    #[test]
    fn weights_round_trip_through_f32() {
        let mut n = small_net(5);
        n.round_to_f32();
        let w = n.weights_f32();
        let mut m = small_net(6);
        m.set_weights_f32(&w).unwrap();
        let h: Vec<f32> = n.hash.params().iter().map(|&v| v as f32).collect();
        m.set_hash_f32(&h).unwrap();
        assert_eq!(n, m);
    }
}
