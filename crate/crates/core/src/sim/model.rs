//! A small multi-layer perceptron with hand-written backprop.
//!
//! Every engine (single device, data parallel, tensor parallel, pipeline)
//! is built from the per-layer primitives here, so with one device they
//! execute the same floating-point operations in the same order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense layers `dims[0] → dims[1] → … → dims[L]` with `tanh` after every
/// layer but the last.
///
/// Layer `l` stores its weight row-major as `out × in`, followed by its bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TinyModel {
    dims: Vec<usize>,
}

impl TinyModel {
    pub fn new(dims: Vec<usize>) -> Self {
        assert!(dims.len() >= 2, "a model needs at least one layer");
        assert!(dims.iter().all(|&d| d > 0), "layer widths must be positive");
        TinyModel { dims }
    }

    /// `layers` layers of width `hidden` between `input` and `output`.
    pub fn mlp(input: usize, hidden: usize, output: usize, layers: usize) -> Self {
        assert!(layers >= 1);
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(hidden, layers - 1));
        dims.push(output);
        TinyModel::new(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layer_in(&self, l: usize) -> usize {
        self.dims[l]
    }

    pub fn layer_out(&self, l: usize) -> usize {
        self.dims[l + 1]
    }

    pub fn layer_param_count(&self, l: usize) -> usize {
        self.dims[l + 1] * self.dims[l] + self.dims[l + 1]
    }

    pub fn param_count(&self) -> usize {
        (0..self.layers()).map(|l| self.layer_param_count(l)).sum()
    }

    /// Largest single layer, the gather unit for S* params.
    pub fn max_layer_param_count(&self) -> usize {
        (0..self.layers()).map(|l| self.layer_param_count(l)).max().unwrap_or(0)
    }

    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.layers() + 1);
        let mut acc = 0;
        out.push(0);
        for l in 0..self.layers() {
            acc += self.layer_param_count(l);
            out.push(acc);
        }
        out
    }

    pub fn is_last(&self, l: usize) -> bool {
        l + 1 == self.layers()
    }

    /// Seeded initial parameters, uniform in `±1/√fan_in`.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.layers() {
            let bound = 1.0 / (self.layer_in(l) as f64).sqrt();
            for _ in 0..self.layer_param_count(l) {
                out.push(rng.gen_range(-bound..bound));
            }
        }
        out
    }

    /// Split a flat parameter (or gradient) vector into per-layer vectors.
    pub fn split_layers(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        let off = self.layer_offsets();
        (0..self.layers()).map(|l| flat[off[l]..off[l + 1]].to_vec()).collect()
    }

    /// Output activation of layer `l` given its pre-activation.
    pub fn activate(&self, l: usize, z: Vec<f64>) -> Vec<f64> {
        if self.is_last(l) {
            z
        } else {
            z.into_iter().map(f64::tanh).collect()
        }
    }

    /// Gradient w.r.t. the pre-activation given the gradient w.r.t. the
    /// layer output `a`.
    pub fn activation_backward(&self, l: usize, a: &[f64], da: &[f64]) -> Vec<f64> {
        if self.is_last(l) {
            da.to_vec()
        } else {
            da.iter().zip(a).map(|(g, y)| g * (1.0 - y * y)).collect()
        }
    }

    /// Full layer forward: returns the layer output.
    pub fn layer_forward(&self, l: usize, params: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        let (inp, out) = (self.layer_in(l), self.layer_out(l));
        let (w, b) = params.split_at(out * inp);
        let mut z = matmul_rows(w, x, rows, inp, out);
        add_bias(&mut z, b, rows, out, 0);
        self.activate(l, z)
    }

    /// Full layer backward. `a` is this layer's output, `da` the gradient
    /// w.r.t. it. Returns the layer gradient (weight then bias) and, when
    /// requested, the gradient w.r.t. the layer input.
    pub fn layer_backward(
        &self,
        l: usize,
        params: &[f64],
        x: &[f64],
        a: &[f64],
        da: &[f64],
        rows: usize,
        want_dx: bool,
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let (inp, out) = (self.layer_in(l), self.layer_out(l));
        let dz = self.activation_backward(l, a, da);
        let w = &params[..out * inp];
        let (dw, db, dx) = linear_backward(w, x, &dz, rows, inp, out, want_dx);
        let mut grad = dw;
        grad.extend(db);
        (grad, dx)
    }
}

/// `z[r, o] = Σ_i w[o, i] · x[r, i]`, summed in ascending `i`.
pub fn matmul_rows(w: &[f64], x: &[f64], rows: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut z = vec![0.0; rows * out];
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        for o in 0..out {
            let wo = &w[o * inp..(o + 1) * inp];
            let mut acc = 0.0;
            for i in 0..inp {
                acc += wo[i] * xr[i];
            }
            z[r * out + o] = acc;
        }
    }
    z
}

/// Adds `bias` to output columns `start..start + bias.len()`.
pub fn add_bias(z: &mut [f64], bias: &[f64], rows: usize, out: usize, start: usize) {
    for r in 0..rows {
        for (k, b) in bias.iter().enumerate() {
            let v = &mut z[r * out + start + k];
            *v += b;
        }
    }
}

/// Weight gradient, bias gradient and (optionally) input gradient of
/// `z = W x + b` for a batch of `rows`.
pub fn linear_backward(
    w: &[f64],
    x: &[f64],
    dz: &[f64],
    rows: usize,
    inp: usize,
    out: usize,
    want_dx: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let mut dw = vec![0.0; out * inp];
    let mut db = vec![0.0; out];
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        for o in 0..out {
            let g = dz[r * out + o];
            db[o] += g;
            let row = &mut dw[o * inp..(o + 1) * inp];
            for i in 0..inp {
                row[i] += g * xr[i];
            }
        }
    }
    let dx = want_dx.then(|| {
        let mut dx = vec![0.0; rows * inp];
        for r in 0..rows {
            for i in 0..inp {
                let mut acc = 0.0;
                for o in 0..out {
                    acc += w[o * inp + i] * dz[r * out + o];
                }
                dx[r * inp + i] = acc;
            }
        }
        dx
    });
    (dw, db, dx)
}

/// Mean over rows of `½‖y − t‖²`, and its gradient w.r.t. `y`.
pub fn mse_loss(y: &[f64], t: &[f64], rows: usize) -> (f64, Vec<f64>) {
    let scale = 1.0 / rows as f64;
    let mut loss = 0.0;
    let mut dy = Vec::with_capacity(y.len());
    for (p, q) in y.iter().zip(t) {
        let e = p - q;
        loss += 0.5 * e * e;
        dy.push(e * scale);
    }
    (loss * scale, dy)
}

/// A global batch: `rows` inputs and targets, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub rows: usize,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Batch {
    /// Rows `range` as a new batch.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Batch {
        Batch {
            x: self.x[range.start * self.input_dim..range.end * self.input_dim].to_vec(),
            y: self.y[range.start * self.output_dim..range.end * self.output_dim].to_vec(),
            rows: range.len(),
            input_dim: self.input_dim,
            output_dim: self.output_dim,
        }
    }
}

/// Seeded synthetic regression data. Batch `t` depends only on the seed and
/// `t`, so every run sees the same global order.
#[derive(Clone, Debug)]
pub struct Dataset {
    seed: u64,
    input_dim: usize,
    output_dim: usize,
    teacher: Vec<f64>,
}

impl Dataset {
    pub fn new(seed: u64, input_dim: usize, output_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let teacher = (0..input_dim * output_dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Dataset {
            seed,
            input_dim,
            output_dim,
            teacher,
        }
    }

    pub fn batch(&self, step: usize, rows: usize) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step as u64 + 1);
        let x: Vec<f64> = (0..rows * self.input_dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let mut y = Vec::with_capacity(rows * self.output_dim);
        for r in 0..rows {
            let xr = &x[r * self.input_dim..(r + 1) * self.input_dim];
            for o in 0..self.output_dim {
                let t = &self.teacher[o * self.input_dim..(o + 1) * self.input_dim];
                let s: f64 = t.iter().zip(xr).map(|(a, b)| a * b).sum();
                y.push(s.sin() + 0.05 * rng.gen_range(-1.0..1.0));
            }
        }
        Batch {
            x,
            y,
            rows,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_loss(model: &TinyModel, params: &[f64], batch: &Batch) -> f64 {
        let layers = model.split_layers(params);
        let mut h = batch.x.clone();
        for (l, p) in layers.iter().enumerate() {
            h = model.layer_forward(l, p, &h, batch.rows);
        }
        mse_loss(&h, &batch.y, batch.rows).0
    }

    fn full_grad(model: &TinyModel, params: &[f64], batch: &Batch) -> Vec<f64> {
        let layers = model.split_layers(params);
        let mut inputs = vec![batch.x.clone()];
        for (l, p) in layers.iter().enumerate() {
            let next = model.layer_forward(l, p, inputs.last().unwrap(), batch.rows);
            inputs.push(next);
        }
        let (_, mut da) = mse_loss(inputs.last().unwrap(), &batch.y, batch.rows);
        let mut grads = vec![Vec::new(); model.layers()];
        for l in (0..model.layers()).rev() {
            let (g, dx) = model.layer_backward(l, &layers[l], &inputs[l], &inputs[l + 1], &da, batch.rows, l > 0);
            grads[l] = g;
            if let Some(dx) = dx {
                da = dx;
            }
        }
        grads.concat()
    }

    #[test]
    fn one_weight_linear_step() {
        // y = w·x, w = 0, sample (1, 1): d/dw ½(wx − y)² = (wx − y)x = −1
        let model = TinyModel::new(vec![1, 1]);
        let params = vec![0.0, 0.0];
        let batch = Batch { x: vec![1.0], y: vec![1.0], rows: 1, input_dim: 1, output_dim: 1 };
        let g = full_grad(&model, &params, &batch);
        assert_eq!(g[0], -1.0);
        // with lr = 1, one SGD step moves w to 1
        assert_eq!(params[0] - 1.0 * g[0], 1.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let model = TinyModel::mlp(3, 5, 2, 3);
        let params = model.init_params(7);
        let batch = Dataset::new(3, 3, 2).batch(0, 6);
        let g = full_grad(&model, &params, &batch);
        let h = 1e-6;
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] += h;
            let up = full_loss(&model, &p, &batch);
            p[k] -= 2.0 * h;
            let dn = full_loss(&model, &p, &batch);
            let fd = (up - dn) / (2.0 * h);
            let rel = (fd - g[k]).abs() / (fd.abs().max(g[k].abs()).max(1e-8));
            assert!(rel < 1e-6 || (fd - g[k]).abs() < 1e-10, "param {k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn counts_and_offsets() {
        let m = TinyModel::mlp(4, 8, 2, 3);
        assert_eq!(m.dims(), &[4, 8, 8, 2]);
        assert_eq!(m.layer_param_count(0), 40);
        assert_eq!(m.param_count(), 40 + 72 + 18);
        assert_eq!(m.layer_offsets(), vec![0, 40, 112, 130]);
        assert_eq!(m.max_layer_param_count(), 72);
    }

    #[test]
    fn data_is_deterministic_per_step() {
        let d = Dataset::new(11, 4, 2);
        assert_eq!(d.batch(5, 8), d.batch(5, 8));
        assert_ne!(d.batch(5, 8), d.batch(6, 8));
        let b = d.batch(0, 8);
        let s = b.slice(2..4);
        assert_eq!(s.x, b.x[8..16].to_vec());
        assert_eq!(s.rows, 2);
    }
}
