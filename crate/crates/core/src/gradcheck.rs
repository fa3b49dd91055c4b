//! Central finite-difference verification of analytic gradients. Uses
//! only forward passes, so it is independent of the backward code it
//! checks. Run in 64-bit precision for meaningful tolerances.

use crate::error::Result;
use crate::layers::softmax_xent;
use crate::network::Network;
use crate::su::SuMode;
use crate::tensor::{FeatureMap, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Relative error with a floored denominator so near-zero pairs compare
/// absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

fn loss_of<T: Scalar>(net: &Network<T>, x: &FeatureMap<T>, label: usize) -> Result<f64> {
    let logits = net.forward(x)?;
    let (loss, _) = softmax_xent(logits.data(), label)?;
    Ok(loss.to_f64())
}

/// Outcome of a full-network check: the worst relative error seen over
/// every parameter and every input element.
#[derive(Debug, Clone, Copy)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub params_checked: usize,
    pub inputs_checked: usize,
}

/// Compare the analytic gradient of the softmax cross-entropy loss with
/// central differences, over all parameters and all input elements.
/// Shuffle layers apply their permutation deterministically.
pub fn check_network<T: Scalar>(
    net: &Network<T>,
    x: &FeatureMap<T>,
    label: usize,
    eps: f64,
) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (logits, caches) = net.forward_cached(x, SuMode::Infer, &mut rng)?;
    let (_, glogits) = softmax_xent(logits.data(), label)?;
    let gl = Tensor::from_vec(&[1, glogits.len()], glogits)?;
    let (gin, layer_grads) = net.backward(&caches, &gl)?;
    let analytic_params = net.flat_grads(&layer_grads)?;

    let mut max_err = 0.0f64;
    let base = net.flat_params();
    let mut probe = net.clone();
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + T::from_f64(eps);
        probe.set_flat_params(&p)?;
        let lp = loss_of(&probe, x, label)?;
        p[i] = base[i] - T::from_f64(eps);
        probe.set_flat_params(&p)?;
        let lm = loss_of(&probe, x, label)?;
        let numeric = (lp - lm) / (2.0 * eps);
        max_err = max_err.max(rel_err(analytic_params[i].to_f64(), numeric));
    }
    probe.set_flat_params(&base)?;

    let (h, w, c, s) = x.dims();
    let mut inputs_checked = 0usize;
    for b in 0..s {
        for i in 0..h {
            for j in 0..w {
                for k in 0..c {
                    let v = x.at(i, j, k, b);
                    let mut xp = x.clone();
                    xp.set(i, j, k, b, v + T::from_f64(eps));
                    let lp = loss_of(net, &xp, label)?;
                    xp.set(i, j, k, b, v - T::from_f64(eps));
                    let lm = loss_of(net, &xp, label)?;
                    let numeric = (lp - lm) / (2.0 * eps);
                    max_err = max_err.max(rel_err(gin.at(i, j, k, b).to_f64(), numeric));
                    inputs_checked += 1;
                }
            }
        }
    }
    Ok(CheckReport {
        max_rel_err: max_err,
        params_checked: base.len(),
        inputs_checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerSpec, NetworkSpec};

    fn small_input(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = FeatureMap::zeros(h, w, c, 1);
        use rand::Rng;
        for i in 0..h {
            for j in 0..w {
                for k in 0..c {
                    m.set(i, j, k, 0, rng.random_range(-1.0..1.0));
                }
            }
        }
        m
    }

    fn check_spec(spec: NetworkSpec, h: usize, w: usize, c: usize, label: usize) {
        let net = Network::<f64>::build(spec, 42).unwrap();
        let x = small_input(h, w, c, 7);
        let report = check_network(&net, &x, label, 1e-5).unwrap();
        assert!(
            report.max_rel_err <= 1e-5,
            "max rel err {} exceeds 1e-5",
            report.max_rel_err
        );
    }

    fn spec_of(input: (usize, usize, usize), layers: Vec<LayerSpec>) -> NetworkSpec {
        NetworkSpec {
            input,
            layers,
            strict_census: false,
        }
    }

    #[test]
    fn conv_fc_network_passes() {
        check_spec(
            spec_of(
                (6, 6, 2),
                vec![
                    LayerSpec::Conv {
                        out_channels: 3,
                        kernel: 3,
                        stride: 1,
                        pad: 1,
                    },
                    LayerSpec::Fc { out: 4, relu: true },
                    LayerSpec::Fc {
                        out: 3,
                        relu: false,
                    },
                ],
            ),
            6,
            6,
            2,
            1,
        );
    }

    #[test]
    fn lrn_network_passes() {
        check_spec(
            spec_of(
                (5, 5, 4),
                vec![
                    LayerSpec::Conv {
                        out_channels: 4,
                        kernel: 3,
                        stride: 1,
                        pad: 1,
                    },
                    LayerSpec::Lrn,
                    LayerSpec::Fc {
                        out: 2,
                        relu: false,
                    },
                ],
            ),
            5,
            5,
            4,
            0,
        );
    }

    #[test]
    fn subsample_and_su_network_passes() {
        check_spec(
            spec_of(
                (8, 8, 2),
                vec![
                    LayerSpec::Conv {
                        out_channels: 4,
                        kernel: 3,
                        stride: 1,
                        pad: 1,
                    },
                    LayerSpec::SubSample { window: 2 },
                    LayerSpec::Su {
                        blocks: 4,
                        prob: 1.0,
                    },
                    LayerSpec::Fc { out: 5, relu: true },
                    LayerSpec::Fc {
                        out: 3,
                        relu: false,
                    },
                ],
            ),
            8,
            8,
            2,
            2,
        );
    }

    #[test]
    fn maxpool_network_passes() {
        check_spec(
            spec_of(
                (6, 6, 1),
                vec![
                    LayerSpec::Conv {
                        out_channels: 2,
                        kernel: 3,
                        stride: 1,
                        pad: 0,
                    },
                    LayerSpec::MaxPool {
                        window: 2,
                        stride: 2,
                    },
                    LayerSpec::Fc {
                        out: 2,
                        relu: false,
                    },
                ],
            ),
            6,
            6,
            1,
            0,
        );
    }
}
