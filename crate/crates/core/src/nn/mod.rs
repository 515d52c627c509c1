//! Dense tanh networks with hand-written reverse mode.
//!
//! All parameters of an [`Mlp`] live in one flat buffer, layer after layer:
//! the `out x in` weight matrix in row-major order followed by the `out` bias
//! vector. Optimizers, soft updates, gradient checks and checkpoints all work
//! on that flat view.

mod adam;
mod check;
mod io;
mod tanh;

pub use adam::AdamState;
pub use check::{gradient_check, gradient_check_with, random_small_net, relative_error};
pub use io::{read_mlp, read_mlp_from, write_mlp};

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

fn fresh_tag() -> u64 {
    NEXT_TAG.fetch_add(1, Ordering::Relaxed)
}

/// Output head applied to the last affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Identity,
    Softmax,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::Identity => "identity",
            Head::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    head: Head,
    params: Vec<f64>,
    /// Start of each layer's weight block in `params`.
    offsets: Vec<usize>,
    /// Identifies the current parameter values; changes on every mutation.
    tag: u64,
}

/// Activations retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    tag: u64,
    batch: usize,
    /// Layer inputs: the network input followed by every hidden activation.
    inputs: Vec<Vec<f64>>,
    logits: Vec<f64>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Head output, `batch x out` row-major.
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Pre-head values of the last layer.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn output_row(&self, i: usize) -> &[f64] {
        let n = self.output.len() / self.batch;
        &self.output[i * n..(i + 1) * n]
    }
}

/// Parameter gradients, same flat layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

fn layer_offsets(sizes: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(sizes.len() - 1);
    let mut total = 0;
    for w in sizes.windows(2) {
        offsets.push(total);
        total += w[0] * w[1] + w[1];
    }
    (offsets, total)
}

/// `c = a * b + beta * c`; `a` and `b` strided, `c` dense row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-wise softmax of a `rows x cols` buffer.
pub fn softmax_rows(logits: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, dst) in logits.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, z) in dst.iter_mut().zip(row) {
            *d = (z - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], head: Head, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, head)?;
        for l in 0..net.num_layers() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let off = net.offsets[l];
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = rng.gen_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], head: Head) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        let (offsets, total) = layer_offsets(sizes);
        Ok(Self {
            sizes: sizes.to_vec(),
            head,
            params: vec![0.0; total],
            offsets,
            tag: fresh_tag(),
        })
    }

    pub fn from_params(sizes: &[usize], head: Head, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes, head)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters for {sizes:?}, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layer sizes")
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to the flat parameters. Invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.tag = fresh_tag();
        &mut self.params
    }

    /// `(weights, biases)` of layer `l`; weights are `out x in` row-major.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let off = self.offsets[l];
        let (w, rest) = self.params[off..].split_at(n_in * n_out);
        (w, &rest[..n_out])
    }

    fn same_shape(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes && self.head == other.head
    }

    /// Multiply the output layer's weights and bias by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let start = self.offsets[self.num_layers() - 1];
        self.params_mut()[start..].iter_mut().for_each(|p| *p *= factor);
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        if !self.same_shape(source) {
            return Err(Error::Shape(format!(
                "soft update from {:?} into {:?}",
                source.sizes, self.sizes
            )));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidArgument(format!("tau must be in [0, 1], got {tau}")));
        }
        if tau == 0.0 {
            return Ok(());
        }
        for (t, s) in self.params_mut().iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
        Ok(())
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<ForwardCache> {
        if batch == 0 || inputs.len() != batch * self.input_dim() {
            return Err(Error::Shape(format!(
                "input of length {} is not {batch} x {}",
                inputs.len(),
                self.input_dim()
            )));
        }
        let mut layer_inputs = Vec::with_capacity(self.num_layers());
        let mut x = inputs.to_vec();
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer(l);
            let mut z: Vec<f64> = Vec::with_capacity(batch * n_out);
            for _ in 0..batch {
                z.extend_from_slice(b);
            }
            // z += x (batch x in) * w^T (in x out)
            gemm(batch, n_in, n_out, &x, (n_in, 1), w, (1, n_in), 1.0, &mut z);
            layer_inputs.push(x);
            if l + 1 < self.num_layers() {
                tanh::tanh_in_place(&mut z);
            }
            x = z;
        }
        let output = match self.head {
            Head::Identity => x.clone(),
            Head::Softmax => softmax_rows(&x, self.output_dim()),
        };
        Ok(ForwardCache {
            tag: self.tag,
            batch,
            inputs: layer_inputs,
            logits: x,
            output,
        })
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let cache = self.forward_batch(input, 1)?;
        Ok((cache.output.clone(), cache))
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.output)
    }

    fn check_cache(&self, cache: &ForwardCache, grad_len: usize) -> Result<()> {
        if cache.tag != self.tag || cache.inputs.len() != self.num_layers() {
            return Err(Error::StaleCache);
        }
        if grad_len != cache.batch * self.output_dim() {
            return Err(Error::Shape(format!(
                "output gradient of length {grad_len} for batch {} x {}",
                cache.batch,
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Gradients of the parameters given the gradient of a scalar loss with
    /// respect to the head output (summed over the batch).
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Gradients> {
        self.check_cache(cache, output_grad.len())?;
        let grad_logits = match self.head {
            Head::Identity => output_grad.to_vec(),
            Head::Softmax => {
                let n = self.output_dim();
                let mut d = vec![0.0; output_grad.len()];
                for ((p, g), dz) in cache
                    .output
                    .chunks_exact(n)
                    .zip(output_grad.chunks_exact(n))
                    .zip(d.chunks_exact_mut(n))
                {
                    let dot: f64 = p.iter().zip(g).map(|(p, g)| p * g).sum();
                    for j in 0..n {
                        dz[j] = p[j] * (g[j] - dot);
                    }
                }
                d
            }
        };
        self.backward_logits(cache, &grad_logits)
    }

    /// Like [`Mlp::backward`] but starting from the gradient with respect to
    /// the pre-head values of the last layer.
    pub fn backward_logits(&self, cache: &ForwardCache, grad_logits: &[f64]) -> Result<Gradients> {
        self.check_cache(cache, grad_logits.len())?;
        let batch = cache.batch;
        let mut grads = vec![0.0; self.params.len()];
        let mut dz = grad_logits.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let x = &cache.inputs[l];
            let off = self.offsets[l];
            let (gw, gb) = grads[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            // gw (out x in) = dz^T (out x batch) * x (batch x in)
            gemm(n_out, batch, n_in, &dz, (1, n_out), x, (n_in, 1), 0.0, gw);
            for row in dz.chunks_exact(n_out) {
                for (b, d) in gb.iter_mut().zip(row) {
                    *b += d;
                }
            }
            if l > 0 {
                let (w, _) = self.layer(l);
                // dx (batch x in) = dz (batch x out) * w (out x in)
                let mut dx = vec![0.0; batch * n_in];
                gemm(batch, n_out, n_in, &dz, (n_out, 1), w, (n_in, 1), 0.0, &mut dx);
                for (d, a) in dx.iter_mut().zip(x) {
                    *d *= 1.0 - a * a;
                }
                dz = dx;
            }
        }
        Ok(Gradients(grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    #[test]
    fn identity_layer_is_identity() {
        let net = Mlp::from_params(&[3, 3], Head::Identity, vec![1., 0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0.])
            .unwrap();
        assert_eq!(net.predict(&[0.5, -2.0, 3.0]).unwrap(), vec![0.5, -2.0, 3.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let net = Mlp::zeros(&[2, 3], Head::Softmax).unwrap();
        let p = net.predict(&[0.3, 0.7]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn golden_forward() {
        // Weights written out by hand; expected output evaluated independently:
        // h = tanh([0.5*1 - 0.25*2 + 0.1, -0.3*1 + 0.8*2 - 0.2]) = tanh([0.1, 1.1])
        // y = 1.5*h0 - 0.5*h1 + 0.05
        let net = Mlp::from_params(
            &[2, 2, 1],
            Head::Identity,
            vec![0.5, -0.25, -0.3, 0.8, 0.1, -0.2, 1.5, -0.5, 0.05],
        )
        .unwrap();
        let y = net.predict(&[1.0, 2.0]).unwrap()[0];
        let expected = 1.5 * 0.1f64.tanh() - 0.5 * 1.1f64.tanh() + 0.05;
        assert!((y - expected).abs() < 1e-15);
        assert!((y - (-0.200_747_518_942_881_1)).abs() < 1e-12);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = Mlp::new(&[4, 8, 3], Head::Softmax, &mut stream(1, "init")).unwrap();
        let b = Mlp::new(&[4, 8, 3], Head::Softmax, &mut stream(1, "init")).unwrap();
        assert_eq!(a.params(), b.params());
        let limit = (6.0f64 / 12.0).sqrt();
        let (w, bias) = a.layer(0);
        assert!(w.iter().all(|v| v.abs() <= limit));
        assert!(bias.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_rows_match_single_forward() {
        let net = Mlp::new(&[3, 5, 4], Head::Softmax, &mut stream(2, "init")).unwrap();
        let xs = [0.1, -0.4, 0.9, 1.0, 0.0, -1.0];
        let cache = net.forward_batch(&xs, 2).unwrap();
        for i in 0..2 {
            let single = net.predict(&xs[i * 3..i * 3 + 3]).unwrap();
            for (a, b) in single.iter().zip(cache.output_row(i)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let net = Mlp::new(&[4, 8, 3], Head::Softmax, &mut stream(3, "init")).unwrap();
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let g = net.backward(&cache, &[0.0; 3]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn softmax_cross_entropy_gradient_identity() {
        let net = Mlp::new(&[3, 6, 4], Head::Softmax, &mut stream(4, "init")).unwrap();
        let (p, cache) = net.forward(&[0.5, -0.5, 0.25]).unwrap();
        let target = 2;
        // d(-log p_target)/dp = -1/p_target at the target, 0 elsewhere.
        let mut g = vec![0.0; 4];
        g[target] = -1.0 / p[target];
        let via_head = net.backward(&cache, &g).unwrap();
        let mut dz = p.clone();
        dz[target] -= 1.0;
        let via_logits = net.backward_logits(&cache, &dz).unwrap();
        for (a, b) in via_head.0.iter().zip(&via_logits.0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stale_and_mismatched_caches_are_rejected() {
        let mut net = Mlp::new(&[2, 4, 2], Head::Identity, &mut stream(5, "init")).unwrap();
        let (_, cache) = net.forward(&[1.0, 1.0]).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0]), Err(Error::Shape(_))));
        let other = Mlp::new(&[2, 4, 2], Head::Identity, &mut stream(6, "init")).unwrap();
        assert!(matches!(other.backward(&cache, &[1.0, 0.0]), Err(Error::StaleCache)));
        net.params_mut()[0] += 1.0;
        assert!(matches!(net.backward(&cache, &[1.0, 0.0]), Err(Error::StaleCache)));
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = Mlp::zeros(&[3, 2], Head::Identity).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
        assert!(Mlp::zeros(&[3], Head::Identity).is_err());
        assert!(Mlp::from_params(&[2, 1], Head::Identity, vec![0.0; 2]).is_err());
    }

    #[test]
    fn soft_update_examples() {
        let critic = Mlp::from_params(&[1, 1], Head::Identity, vec![4.0, 8.0]).unwrap();
        let mut target = Mlp::from_params(&[1, 1], Head::Identity, vec![2.0, 0.0]).unwrap();
        target.soft_update_from(&critic, 0.0).unwrap();
        assert_eq!(target.params(), &[2.0, 0.0]);
        target.soft_update_from(&critic, 0.5).unwrap();
        assert_eq!(target.params(), &[3.0, 4.0]);
        target.soft_update_from(&critic, 1.0).unwrap();
        assert_eq!(target.params(), critic.params());
        let wrong = Mlp::zeros(&[2, 1], Head::Identity).unwrap();
        assert!(target.soft_update_from(&wrong, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution_and_shift_invariant(
            logits in proptest::collection::vec(-30.0..30.0f64, 2..16),
            shift in -100.0..100.0f64,
        ) {
            let n = logits.len();
            let p = softmax_rows(&logits, n);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|v| *v >= 0.0 && *v <= 1.0));
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            let q = softmax_rows(&shifted, n);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn soft_update_stays_between_endpoints(a in -10.0..10.0f64, b in -10.0..10.0f64, tau in 0.0..=1.0f64) {
            let critic = Mlp::from_params(&[1, 1], Head::Identity, vec![a, b]).unwrap();
            let mut target = Mlp::from_params(&[1, 1], Head::Identity, vec![b, a]).unwrap();
            target.soft_update_from(&critic, tau).unwrap();
            let p = target.params();
            prop_assert!(p[0] >= a.min(b) - 1e-12 && p[0] <= a.max(b) + 1e-12);
            prop_assert!((p[0] - (tau * a + (1.0 - tau) * b)).abs() < 1e-12);
        }
    }
}
