//! Small fully connected networks with an explicit forward cache and a hand-written
//! reverse pass.
//!
//! Parameters live in one flat buffer, layer by layer: the `out x in` weight matrix
//! (row-major) followed by the `out` bias vector. Hidden layers use SiLU; the last
//! layer is affine and callers apply any output squashing themselves.

use rand::Rng;

use crate::error::{Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> (f64, f64) {
    let s = sigmoid(x);
    (x * s, s * (1.0 + x * (1.0 - s)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Per-evaluation intermediates needed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// Inputs to every layer, concatenated (the network input comes first).
    inputs: Vec<f64>,
    /// Derivative of each hidden activation at its pre-activation.
    slopes: Vec<f64>,
}

impl Mlp {
    /// Zero-valued network with the given layer widths (`[in, hidden.., out]`).
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "network needs at least input and output widths, got {sizes:?}"
            )));
        }
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Uniform fan-in initialisation of weights, zero biases.
    pub fn init_uniform<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for p in &mut mlp.params[off..off + w[0] * w[1]] {
                *p = rng.gen_range(-bound..bound);
            }
            off += w[0] * w[1] + w[1];
        }
        Ok(mlp)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        if params.len() != mlp.params.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} network parameters", mlp.params.len()),
                got: format!("{}", params.len()),
            });
        }
        mlp.params = params;
        Ok(mlp)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn max_width(&self) -> usize {
        *self.sizes.iter().max().unwrap()
    }

    /// Parameter offset range of the last layer (weights then bias).
    pub fn last_layer_range(&self) -> std::ops::Range<usize> {
        let w = &self.sizes[self.sizes.len() - 2..];
        let n = w[0] * w[1] + w[1];
        self.params.len() - n..self.params.len()
    }

    /// Sets the last layer to zero so the network outputs exactly zero.
    pub fn zero_last_layer(&mut self) {
        let r = self.last_layer_range();
        self.params[r].fill(0.0);
    }

    pub fn forward(&self, input: &[f64], out: &mut [f64]) {
        let mut cache = MlpCache::default();
        self.forward_cached(input, out, &mut cache);
    }

    pub fn forward_cached(&self, input: &[f64], out: &mut [f64], cache: &mut MlpCache) {
        debug_assert_eq!(input.len(), self.input_dim());
        debug_assert_eq!(out.len(), self.output_dim());
        cache.inputs.clear();
        cache.slopes.clear();
        cache.inputs.extend_from_slice(input);
        let layers = self.sizes.len() - 1;
        let mut off = 0;
        let mut in_start = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[off..off + n_in * n_out];
            let bias = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let last = l + 1 == layers;
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let x = &cache.inputs[in_start..in_start + n_in];
                let mut acc = bias[o];
                for (w, v) in row.iter().zip(x) {
                    acc += w * v;
                }
                if last {
                    out[o] = acc;
                } else {
                    let (y, dy) = silu(acc);
                    cache.inputs.push(y);
                    cache.slopes.push(dy);
                }
            }
            in_start += n_in;
            off += n_in * n_out + n_out;
        }
    }

    /// Accumulates `d loss / d params` into `grad` and writes `d loss / d input`.
    pub fn backward(&self, cache: &MlpCache, dout: &[f64], grad: &mut [f64], dinput: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let width = self.max_width();
        let mut upstream = vec![0.0; width];
        let mut next = vec![0.0; width];
        upstream[..dout.len()].copy_from_slice(dout);

        let mut off = self.params.len();
        let mut in_end = cache.inputs.len();
        let mut slope_end = cache.slopes.len();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            off -= n_in * n_out + n_out;
            let in_start = in_end - n_in;
            let x = &cache.inputs[in_start..in_end];
            let weights = &self.params[off..off + n_in * n_out];
            next[..n_in].fill(0.0);
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let g = upstream[o];
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    let row_g = &mut gw[o * n_in..(o + 1) * n_in];
                    let row_w = &weights[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        row_g[i] += g * x[i];
                        next[i] += g * row_w[i];
                    }
                }
            }
            if l > 0 {
                // back through the hidden activation that produced this layer's input
                let slopes = &cache.slopes[slope_end - n_in..slope_end];
                for i in 0..n_in {
                    next[i] *= slopes[i];
                }
                slope_end -= n_in;
            }
            std::mem::swap(&mut upstream, &mut next);
            in_end = in_start;
        }
        dinput.copy_from_slice(&upstream[..self.input_dim()]);
    }
}

/// Logistic squashing used for color outputs.
#[inline]
pub fn squash(x: f64) -> f64 {
    sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_evaluated_single_unit() {
        // 1 -> 1 -> 1: y = w2 * silu(w1 x + b1) + b2
        let mlp = Mlp::from_params(&[1, 1, 1], vec![2.0, 0.5, -3.0, 1.0]).unwrap();
        let mut out = [0.0];
        mlp.forward(&[1.0], &mut out);
        // pre = 2.5, silu(2.5) = 2.5 / (1 + e^-2.5)
        let h = 2.5 / (1.0 + (-2.5f64).exp());
        assert!((out[0] - (-3.0 * h + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn zero_last_layer_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mlp = Mlp::init_uniform(&[8, 16, 16, 3], &mut rng).unwrap();
        mlp.zero_last_layer();
        let mut out = [1.0; 3];
        mlp.forward(&[0.3; 8], &mut out);
        assert_eq!(out, [0.0; 3]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut mlp = Mlp::init_uniform(&[4, 6, 5, 3], &mut rng).unwrap();
        for p in mlp.params.iter_mut() {
            *p += rng.gen_range(-0.2..0.2);
        }
        let input = [0.3, -0.7, 1.1, 0.05];
        let dout = [0.4, -1.3, 0.9];
        let loss = |m: &Mlp, x: &[f64]| {
            let mut o = [0.0; 3];
            m.forward(x, &mut o);
            o.iter().zip(&dout).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut cache = MlpCache::default();
        let mut out = [0.0; 3];
        mlp.forward_cached(&input, &mut out, &mut cache);
        let mut grad = vec![0.0; mlp.num_params()];
        let mut dinput = [0.0; 4];
        mlp.backward(&cache, &dout, &mut grad, &mut dinput);

        let h = 1e-6;
        for i in 0..mlp.num_params() {
            let mut a = mlp.clone();
            let mut b = mlp.clone();
            a.params[i] += h;
            b.params[i] -= h;
            let fd = (loss(&a, &input) - loss(&b, &input)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "param {i}: {} vs {fd}", grad[i]);
        }
        for i in 0..4 {
            let mut a = input;
            let mut b = input;
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&mlp, &a) - loss(&mlp, &b)) / (2.0 * h);
            assert!((fd - dinput[i]).abs() < 1e-7);
        }
    }
}
