use rand::Rng;

use crate::error::{Error, Result};

/// Dense feed-forward network with rectifier hidden layers and a logistic output layer.
///
/// Parameters live in one flat vector, layer by layer, each layer as its `outputs x inputs`
/// row-major weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_batch`].
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    pub(crate) n: usize,
    /// `acts[0]` is the input; `acts[i + 1]` the post-activation output of layer `i`.
    acts: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `c = a * b^T` style product with explicit strides; `beta` scales the prior `c`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    // SAFETY: the callers below size `a`, `b` and `c` to exactly cover the strided extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

impl Mlp {
    /// `widths = [in, hidden.., out]`. Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut mlp = Self::zeros(widths)?;
        for l in 0..mlp.layer_count() {
            let bound = (6.0 / widths[l] as f64).sqrt();
            let (w, _) = mlp.layer_params_mut(l);
            for v in w.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid MLP widths {widths:?}")));
        }
        let mut offsets = Vec::with_capacity(widths.len());
        let mut total = 0;
        for l in 0..widths.len() - 1 {
            offsets.push(total);
            total += widths[l] * widths[l + 1] + widths[l + 1];
        }
        offsets.push(total);
        Ok(Self {
            widths: widths.to_vec(),
            offsets,
            params: vec![0.0; total],
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn layer_range(&self, l: usize) -> (usize, usize, usize) {
        let w = self.offsets[l];
        let b = w + self.widths[l] * self.widths[l + 1];
        (w, b, self.offsets[l + 1])
    }

    pub fn layer_params(&self, l: usize) -> (&[f64], &[f64]) {
        let (w, b, e) = self.layer_range(l);
        (&self.params[w..b], &self.params[b..e])
    }

    pub fn layer_params_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (w, b, e) = self.layer_range(l);
        let (head, tail) = self.params[w..e].split_at_mut(b - w);
        (head, tail)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut tape = MlpTape::default();
        self.forward_batch(input, 1, &mut tape);
        tape.acts.pop().unwrap()
    }

    /// Forward pass over `n` row-major samples, recording all activations in `tape`.
    pub fn forward_batch(&self, input: &[f64], n: usize, tape: &mut MlpTape) {
        assert_eq!(input.len(), n * self.input_dim());
        let layers = self.layer_count();
        tape.n = n;
        tape.acts.resize_with(layers + 1, Vec::new);
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(input);
        for l in 0..layers {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let (w, b) = self.layer_params(l);
            let (prev, rest) = tape.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut rest[0];
            y.clear();
            y.resize(n * fan_out, 0.0);
            gemm(
                n,
                fan_in,
                fan_out,
                x,
                fan_in as isize,
                1,
                w,
                1,
                fan_in as isize,
                0.0,
                y,
                fan_out as isize,
            );
            let last = l + 1 == layers;
            for row in y.chunks_exact_mut(fan_out) {
                for (v, bias) in row.iter_mut().zip(b) {
                    let z = *v + bias;
                    *v = if last { logistic(z) } else { z.max(0.0) };
                }
            }
        }
    }

    /// Backpropagates `d_output` (gradient at the logistic outputs, `n x out`).
    ///
    /// Parameter gradients are accumulated into `d_params` from the first `param_rows` samples only.
    /// Returns the gradient with respect to the inputs of all `n` samples when `want_input` is set.
    pub fn backward_batch(
        &self,
        tape: &MlpTape,
        d_output: &[f64],
        param_rows: usize,
        d_params: Option<&mut [f64]>,
        want_input: bool,
    ) -> Vec<f64> {
        let n = tape.n;
        let layers = self.layer_count();
        assert_eq!(d_output.len(), n * self.output_dim());
        let param_rows = param_rows.min(n);
        let mut d_params = d_params;
        let mut delta: Vec<f64> = d_output.to_vec();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let y = &tape.acts[l + 1];
            let last = l + 1 == layers;
            for (d, &a) in delta.iter_mut().zip(y) {
                *d *= if last {
                    a * (1.0 - a)
                } else if a > 0.0 {
                    1.0
                } else {
                    0.0
                };
            }
            let x = &tape.acts[l];
            if let Some(grad) = d_params.as_deref_mut() {
                let (wo, bo, eo) = self.layer_range(l);
                let (gw, gb) = grad[wo..eo].split_at_mut(bo - wo);
                // dW (out x in) += delta^T (out x rows) * x (rows x in)
                gemm(
                    fan_out,
                    param_rows,
                    fan_in,
                    &delta,
                    1,
                    fan_out as isize,
                    x,
                    fan_in as isize,
                    1,
                    1.0,
                    gw,
                    fan_in as isize,
                );
                for row in delta[..param_rows * fan_out].chunks_exact(fan_out) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
            if l == 0 && !want_input {
                return Vec::new();
            }
            let (w, _) = self.layer_params(l);
            let mut next = vec![0.0; n * fan_in];
            gemm(
                n,
                fan_out,
                fan_in,
                &delta,
                fan_out as isize,
                1,
                w,
                fan_in as isize,
                1,
                0.0,
                &mut next,
                fan_in as isize,
            );
            delta = next;
        }
        delta
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_half() {
        let mlp = Mlp::zeros(&[17, 16, 16, 3]).unwrap();
        assert_eq!(mlp.forward(&[0.3; 17]), vec![0.5; 3]);
    }

    #[test]
    fn batch_rows_match_single_calls_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = Mlp::new(&[5, 7, 3], &mut rng).unwrap();
        let inputs: Vec<f64> = (0..5 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = MlpTape::default();
        mlp.forward_batch(&inputs, 9, &mut tape);
        for i in 0..9 {
            let single = mlp.forward(&inputs[i * 5..(i + 1) * 5]);
            assert_eq!(&tape.output()[i * 3..(i + 1) * 3], single.as_slice());
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut mlp = Mlp::new(&[4, 6, 6, 2], &mut rng).unwrap();
        for b in mlp.params_mut() {
            *b += 0.05;
        }
        let x: Vec<f64> = (0..4 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let upstream: Vec<f64> = (0..2 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |m: &Mlp, x: &[f64]| {
            let mut t = MlpTape::default();
            m.forward_batch(x, 3, &mut t);
            t.output()
                .iter()
                .zip(&upstream)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let mut tape = MlpTape::default();
        mlp.forward_batch(&x, 3, &mut tape);
        let mut grad = vec![0.0; mlp.param_count()];
        let dx = mlp.backward_batch(&tape, &upstream, 3, Some(&mut grad), true);
        let h = 1e-6;
        for i in 0..mlp.param_count() {
            let mut p = mlp.clone();
            p.params_mut()[i] += h;
            let mut m = mlp.clone();
            m.params_mut()[i] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-6 + 1e-4 * fd.abs(),
                "param {i}: {fd} vs {}",
                grad[i]
            );
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() <= 1e-6 + 1e-4 * fd.abs());
        }
    }

    #[test]
    fn param_rows_limits_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::new(&[3, 4, 2], &mut rng).unwrap();
        let x: Vec<f64> = (0..3 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up = vec![1.0; 2 * 4];
        let mut tape = MlpTape::default();
        mlp.forward_batch(&x, 4, &mut tape);
        let mut none = vec![0.0; mlp.param_count()];
        mlp.backward_batch(&tape, &up, 0, Some(&mut none), true);
        assert!(none.iter().all(|&g| g == 0.0));
    }
}
