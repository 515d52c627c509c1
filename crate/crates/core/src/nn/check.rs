//! Finite-difference verification of [`Mlp::backward`].

use rand::Rng;

use super::{ForwardCache, Gradients, Head, Mlp};
use crate::error::Result;
use crate::rng::stream;

const STEP: f64 = 1e-5;
const BATCH: usize = 3;
/// Gradients smaller than this are compared in absolute terms.
const DENOMINATOR_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Maximum relative error between [`Mlp::backward`] and central differences
/// over every parameter of `net`.
///
/// The scalar probe loss is `sum(c * f(x))` for a small batch of random inputs
/// `x` and random coefficients `c`, both drawn from `seed`.
pub fn gradient_check(net: &Mlp, seed: u64) -> Result<f64> {
    gradient_check_with(net, seed, |net, cache, g| net.backward(cache, g))
}

/// [`gradient_check`] against an arbitrary analytic gradient routine.
pub fn gradient_check_with<F>(net: &Mlp, seed: u64, backward: F) -> Result<f64>
where
    F: Fn(&Mlp, &ForwardCache, &[f64]) -> Result<Gradients>,
{
    let mut rng = stream(seed, "gradient-check");
    let inputs: Vec<f64> = (0..BATCH * net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let coeffs: Vec<f64> = (0..BATCH * net.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let loss = |n: &Mlp| -> Result<f64> {
        let cache = n.forward_batch(&inputs, BATCH)?;
        Ok(cache.output().iter().zip(&coeffs).map(|(y, c)| y * c).sum())
    };

    let cache = net.forward_batch(&inputs, BATCH)?;
    let analytic = backward(net, &cache, &coeffs)?;

    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for i in 0..net.num_params() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + STEP;
        let up = loss(&probe)?;
        probe.params_mut()[i] = orig - STEP;
        let down = loss(&probe)?;
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic.0[i], numeric));
    }
    Ok(worst)
}

/// A random small network: 1-6 inputs, one or two hidden layers of 1-8 units,
/// 1-5 outputs, random head. Weights drawn wider than Xavier so the tanh
/// units leave their linear regime.
pub fn random_small_net<R: Rng + ?Sized>(rng: &mut R) -> Mlp {
    let mut sizes = vec![rng.gen_range(1..=6)];
    for _ in 0..rng.gen_range(1..=2) {
        sizes.push(rng.gen_range(1..=8));
    }
    sizes.push(rng.gen_range(1..=5));
    let head = if rng.gen_bool(0.5) { Head::Softmax } else { Head::Identity };
    let n = Mlp::zeros(&sizes, head).expect("sizes are nonzero").num_params();
    let params = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Mlp::from_params(&sizes, head, params).expect("shape matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_4_8_3_net_passes() {
        let net = Mlp::new(&[4, 8, 3], Head::Softmax, &mut stream(1, "init")).unwrap();
        let err = gradient_check(&net, 1).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn wide_network_passes() {
        let net = Mlp::new(&[31, 64, 64, 15], Head::Softmax, &mut stream(2, "init")).unwrap();
        let err = gradient_check(&net, 2).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
        let critic = Mlp::new(&[31, 64, 64, 15], Head::Identity, &mut stream(3, "init")).unwrap();
        assert!(gradient_check(&critic, 3).unwrap() < 1e-4);
    }

    #[test]
    fn sign_flipped_backward_is_caught() {
        let net = Mlp::new(&[4, 8, 3], Head::Identity, &mut stream(4, "init")).unwrap();
        let err = gradient_check_with(&net, 4, |n, c, g| {
            let mut grads = n.backward(c, g)?;
            grads.0.iter_mut().for_each(|v| *v = -*v);
            Ok(grads)
        })
        .unwrap();
        assert!(err > 0.1, "mutation slipped through: {err}");
    }

    #[test]
    fn deterministic_under_seed() {
        let net = Mlp::new(&[3, 5, 2], Head::Softmax, &mut stream(5, "init")).unwrap();
        assert_eq!(gradient_check(&net, 9).unwrap(), gradient_check(&net, 9).unwrap());
    }

    #[test]
    fn twenty_random_small_nets() {
        let mut rng = stream(6, "nets");
        for _ in 0..20 {
            let net = random_small_net(&mut rng);
            let err = gradient_check(&net, rng.gen()).unwrap();
            assert!(err < 1e-4, "{:?}: {err}", net.sizes());
        }
    }
}
