//! Minimal dense network over a flat parameter vector.

use rand::Rng;

/// Fully connected net with tanh hidden activations and a linear output
/// layer. Parameters live in one flat vector, laid out layer by layer as
/// row-major weights followed by biases, so optimizers, checkpoints, and
/// finite-difference probes all address the same storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Post-activation values cached by [`Mlp::forward_trace`] for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    /// Hidden layer outputs after tanh, in layer order.
    hidden: Vec<Vec<f64>>,
}

impl Mlp {
    /// Builds a network with orthogonally initialized weights and zero
    /// biases. The output layer is additionally scaled by `output_scale`;
    /// values well below 1 give near-uniform initial policies.
    pub fn new(dims: &[usize], output_scale: f64, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        assert!(dims.iter().all(|&d| d > 0), "zero-width layer");
        let mut params = Vec::with_capacity(Self::count_params(dims));
        for l in 0..dims.len() - 1 {
            let (rows, cols) = (dims[l + 1], dims[l]);
            let gain = if l == dims.len() - 2 { output_scale } else { 1.0 };
            params.extend(orthogonal(rows, cols, gain, rng));
            params.extend(std::iter::repeat(0.0).take(rows));
        }
        Mlp { dims: dims.to_vec(), params }
    }

    fn count_params(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.params.len());
        self.params.copy_from_slice(params);
    }

    pub(crate) fn from_parts(dims: Vec<usize>, params: Vec<f64>) -> Self {
        assert_eq!(params.len(), Self::count_params(&dims));
        Mlp { dims, params }
    }

    /// Offsets of the weight block and bias block for layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.dims[k + 1] * self.dims[k] + self.dims[k + 1];
        }
        (off, off + self.dims[l + 1] * self.dims[l])
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_trace(input).0
    }

    pub fn forward_trace(&self, input: &[f64]) -> (Vec<f64>, ForwardTrace) {
        assert_eq!(input.len(), self.dims[0], "input width mismatch");
        let layers = self.dims.len() - 1;
        let mut hidden = Vec::with_capacity(layers.saturating_sub(1));
        let mut act = input.to_vec();
        for l in 0..layers {
            let (w_off, b_off) = self.layer_offsets(l);
            let (rows, cols) = (self.dims[l + 1], self.dims[l]);
            let mut out = vec![0.0; rows];
            for r in 0..rows {
                let row = &self.params[w_off + r * cols..w_off + (r + 1) * cols];
                let mut z = self.params[b_off + r];
                for (wi, ai) in row.iter().zip(&act) {
                    z += wi * ai;
                }
                out[r] = if l + 1 < layers { z.tanh() } else { z };
            }
            if l + 1 < layers {
                hidden.push(out.clone());
            }
            act = out;
        }
        (act, ForwardTrace { input: input.to_vec(), hidden })
    }

    /// Backpropagates `d_out` (gradient of some scalar with respect to the
    /// network output) through the trace, adding parameter gradients into
    /// `grad`, which must be one flat vector of `param_count()` entries.
    pub fn backward(&self, trace: &ForwardTrace, d_out: &[f64], grad: &mut [f64]) {
        assert_eq!(d_out.len(), self.output_dim(), "output width mismatch");
        assert_eq!(grad.len(), self.params.len(), "grad buffer mismatch");
        let layers = self.dims.len() - 1;
        let mut delta = d_out.to_vec();
        for l in (0..layers).rev() {
            let (w_off, b_off) = self.layer_offsets(l);
            let (rows, cols) = (self.dims[l + 1], self.dims[l]);
            let below: &[f64] = if l == 0 { &trace.input } else { &trace.hidden[l - 1] };
            for r in 0..rows {
                let d = delta[r];
                grad[b_off + r] += d;
                let g = &mut grad[w_off + r * cols..w_off + (r + 1) * cols];
                for (gi, ai) in g.iter_mut().zip(below) {
                    *gi += d * ai;
                }
            }
            if l > 0 {
                let mut next = vec![0.0; cols];
                for r in 0..rows {
                    let d = delta[r];
                    let row = &self.params[w_off + r * cols..w_off + (r + 1) * cols];
                    for (ni, wi) in next.iter_mut().zip(row) {
                        *ni += d * wi;
                    }
                }
                // Chain through tanh: d/dz = 1 - tanh(z)^2.
                for (ni, hi) in next.iter_mut().zip(below) {
                    *ni *= 1.0 - hi * hi;
                }
                delta = next;
            }
        }
    }
}

/// Orthogonal(ish) initialization: rows (or columns, whichever side is
/// shorter) are Gram-Schmidt orthonormalized Gaussian draws, scaled by
/// `gain`.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Vec<f64> {
    if rows <= cols {
        let basis = gram_schmidt(rows, cols, rng);
        basis.into_iter().map(|v| v * gain).collect()
    } else {
        // Orthonormalize the transposed matrix, then transpose back.
        let basis = gram_schmidt(cols, rows, rng);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] = basis[c * rows + r] * gain;
            }
        }
        out
    }
}

/// `count` orthonormal rows of width `dim`, `count <= dim`.
fn gram_schmidt(count: usize, dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    debug_assert!(count <= dim);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    while rows.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for prev in &rows {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (vi, pi) in v.iter_mut().zip(prev) {
                *vi -= dot * pi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue; // astronomically unlikely degenerate draw; resample
        }
        v.iter_mut().for_each(|x| *x /= norm);
        rows.push(v);
    }
    rows.into_iter().flatten().collect()
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller on open-interval uniforms.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
