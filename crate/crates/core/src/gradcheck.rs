//! Central-difference gradient verification.
//!
//! The checker is the test oracle for every backward rule: it rebuilds the
//! forward graph from scratch at perturbed inputs, so it shares no code path
//! with the reverse pass it validates. Always runs in 64-bit.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

/// Maximum relative error between the tape gradient of `f` at `x` and a
/// central finite difference with step `eps`.
///
/// `f` must build a scalar-valued graph from the probe leaf it is given.
/// The error per component is `|analytic - cd| / max(|analytic|, |cd|, 1e-12)`.
///
/// An absolute floor of `1e-8 · max(1, |f(x)|)` guards against the
/// difference quotient's own resolution limit: each evaluation of `f`
/// accumulates hundreds of roundings, so the quotient carries noise of
/// order `n·ulp(f)/eps` plus `O(eps²)` truncation. Components where both
/// sides sit below the floor are agreeing zeros (a dead relu path, a bias
/// absorbed by batch-norm mean subtraction); components whose difference
/// sits below it agree at the oracle's resolution even when they are too
/// small for a meaningful ratio. A wrong backward rule disagrees at the
/// scale of the gradient itself and is unaffected by either use.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, VarId) -> Result<VarId>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(alloc::format!(
            "grad_check eps {eps} outside [1e-7, 1e-3]"
        )));
    }

    let mut tape = Tape::new();
    let probe = tape.param(x.clone());
    let root = f(&mut tape, probe)?;
    if tape.value(root).len() != 1 {
        return Err(Error::Dimension {
            op: "grad_check",
            detail: alloc::format!("f must be scalar, got {:?}", tape.value(root).shape()),
        });
    }
    let f0 = tape.value(root).item();
    if !f0.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    let noise_floor = 1e-8 * f0.abs().max(1.0);
    let grads = tape.backward(root)?;
    let analytic: Vec<f64> = match grads.get(probe) {
        Some(g) => g.data().to_vec(),
        // f does not depend on x at all; the analytic gradient is zero.
        None => alloc::vec![0.0; x.len()],
    };

    let eval = |point: &Tensor<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let leaf = t.param(point.clone());
        let r = f(&mut t, leaf)?;
        Ok(t.value(r).item())
    };

    let mut worst = 0.0f64;
    let mut bumped = x.clone();
    for i in 0..x.len() {
        let orig = bumped.data()[i];
        bumped.data_mut()[i] = orig + eps;
        let up = eval(&bumped)?;
        bumped.data_mut()[i] = orig - eps;
        let down = eval(&bumped)?;
        bumped.data_mut()[i] = orig;

        let cd = (up - down) / (2.0 * eps);
        if analytic[i].abs() < noise_floor && cd.abs() < noise_floor {
            continue;
        }
        if (analytic[i] - cd).abs() <= noise_floor {
            continue;
        }
        let denom = analytic[i].abs().max(cd.abs()).max(1e-12);
        let rel = (analytic[i] - cd).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

/// Worst observed relative error of one operation over the random battery.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

fn rand_tensor(rng: &mut RngState, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random values bounded away from zero (kinks, divisions).
fn rand_away_from_zero(rng: &mut RngState, shape: &[usize], margin: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
            sign * rng.uniform(margin, hi)
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Finite-difference battery over every differentiable primitive and layer,
/// `configs` seeded random configurations each, probing every differentiable
/// input of each operation. Runs in 64-bit.
pub fn op_suite(seed: u64, configs: usize) -> Result<Vec<OpCheck>> {
    use crate::layers::{
        BufStore, Dense, EncoderBlock, EncoderOptions, Mode, ParamStore, ResnetV, Session,
    };

    let mut rng = RngState::new(seed);
    let mut out: Vec<OpCheck> = Vec::new();
    let eps = 1e-5;

    let record = |name: &'static str, err: f64, out: &mut Vec<OpCheck>| {
        match out.iter_mut().find(|c| c.name == name) {
            Some(c) => c.max_rel_err = c.max_rel_err.max(err),
            None => out.push(OpCheck {
                name,
                max_rel_err: err,
            }),
        }
    };

    for _ in 0..configs {
        // elementwise binaries on matching shapes
        let a0 = rand_tensor(&mut rng, &[3, 4], -2.0, 2.0);
        let b0 = rand_away_from_zero(&mut rng, &[3, 4], 0.3, 2.0);
        for (name, which) in [("add", 0), ("sub", 1), ("mul", 2), ("div", 3)] {
            for probe_a in [true, false] {
                let (fixed_a, fixed_b) = (a0.clone(), b0.clone());
                let err = grad_check(
                    |t, p| {
                        let (a, b) = if probe_a {
                            (p, t.constant(fixed_b.clone()))
                        } else {
                            (t.constant(fixed_a.clone()), p)
                        };
                        let r = match which {
                            0 => t.add(a, b)?,
                            1 => t.sub(a, b)?,
                            2 => t.mul(a, b)?,
                            _ => t.div(a, b)?,
                        };
                        t.sum(r)
                    },
                    if probe_a { &a0 } else { &b0 },
                    eps,
                )?;
                record(name, err, &mut out);
            }
        }

        // elementwise unaries
        let x_relu = rand_away_from_zero(&mut rng, &[8], 5e-3, 2.0);
        let err = grad_check(|t, p| { let r = t.relu(p)?; t.sum(r) }, &x_relu, eps)?;
        record("relu", err, &mut out);

        let x = rand_tensor(&mut rng, &[8], -4.0, 4.0);
        let err = grad_check(|t, p| { let r = t.softplus(p)?; t.sum(r) }, &x, eps)?;
        record("softplus", err, &mut out);
        let err = grad_check(|t, p| { let r = t.exp(p)?; t.sum(r) }, &x, eps)?;
        record("exp", err, &mut out);
        let err = grad_check(|t, p| { let r = t.square(p)?; t.sum(r) }, &x, eps)?;
        record("square", err, &mut out);

        let x_log = rand_tensor(&mut rng, &[8], 0.1, 3.0);
        let err = grad_check(|t, p| { let r = t.log(p)?; t.sum(r) }, &x_log, eps)?;
        record("log", err, &mut out);

        // matmul, both operands
        let m0 = rand_tensor(&mut rng, &[3, 4], -1.5, 1.5);
        let n0 = rand_tensor(&mut rng, &[4, 2], -1.5, 1.5);
        for probe_a in [true, false] {
            let (fa, fb) = (m0.clone(), n0.clone());
            let err = grad_check(
                |t, p| {
                    let (a, b) = if probe_a {
                        (p, t.constant(fb.clone()))
                    } else {
                        (t.constant(fa.clone()), p)
                    };
                    let r = t.matmul(a, b)?;
                    t.sum(r)
                },
                if probe_a { &m0 } else { &n0 },
                eps,
            )?;
            record("matmul", err, &mut out);
        }

        // dense = matmul + bias row
        let mut params = ParamStore::<f64>::new();
        let dense = Dense::init(&mut params, &mut rng, "d", 4, 3);
        let dx0 = rand_tensor(&mut rng, &[5, 4], -1.0, 1.0);
        for probe in ["x", "w", "b"] {
            let x0 = match probe {
                "x" => dx0.clone(),
                "w" => params.get(dense.weight).clone(),
                _ => params.get(dense.bias).clone(),
            };
            let err = grad_check(
                |t, p| {
                    let mut bufs = BufStore::new();
                    let mut sess = Session::new(t, &params, &mut bufs, Mode::Infer);
                    match probe {
                        "x" => {
                            let y = dense.forward(&mut sess, p)?;
                            sess.tape.sum(y)
                        }
                        "w" => {
                            sess.override_param(dense.weight, p);
                            let xv = sess.tape.constant(dx0.clone());
                            let y = dense.forward(&mut sess, xv)?;
                            sess.tape.sum(y)
                        }
                        _ => {
                            sess.override_param(dense.bias, p);
                            let xv = sess.tape.constant(dx0.clone());
                            let y = dense.forward(&mut sess, xv)?;
                            sess.tape.sum(y)
                        }
                    }
                },
                &x0,
                eps,
            )?;
            record("dense", err, &mut out);
        }

        // dilated causal convolution, all three inputs
        let kernel = 2 + rng.below(2); // 2 or 3
        let dilation = 1 + rng.below(3);
        let cx0 = rand_tensor(&mut rng, &[2, 3, 9], -1.0, 1.0);
        let cw0 = rand_tensor(&mut rng, &[2, 3, kernel], -1.0, 1.0);
        let cb0 = rand_tensor(&mut rng, &[2], -0.5, 0.5);
        for probe in 0..3 {
            let x0 = [&cx0, &cw0, &cb0][probe].clone();
            let err = grad_check(
                |t, p| {
                    let x = if probe == 0 { p } else { t.constant(cx0.clone()) };
                    let w = if probe == 1 { p } else { t.constant(cw0.clone()) };
                    let b = if probe == 2 { p } else { t.constant(cb0.clone()) };
                    let y = t.causal_conv(x, w, b, dilation)?;
                    t.sum(y)
                },
                &x0,
                eps,
            )?;
            record("causal_conv", err, &mut out);
        }

        // Batch norm, train and infer, both layouts. A plain sum readout is
        // degenerate under train-mode normalization (both the mean and the
        // variance of xhat are pinned), so read out through fixed random
        // elementwise weights to break the symmetry.
        for layout3 in [false, true] {
            let shape: &[usize] = if layout3 { &[3, 2, 4] } else { &[6, 2] };
            let bx0 = rand_tensor(&mut rng, shape, -2.0, 2.0);
            let g0 = rand_tensor(&mut rng, &[2], 0.5, 1.5);
            let be0 = rand_tensor(&mut rng, &[2], -0.5, 0.5);
            let w0 = rand_away_from_zero(&mut rng, shape, 0.2, 1.5);
            let rm: Vec<f64> = (0..2).map(|_| rng.uniform(-0.5, 0.5)).collect();
            let rv: Vec<f64> = (0..2).map(|_| rng.uniform(0.5, 1.5)).collect();
            for train in [true, false] {
                for probe in 0..3 {
                    let x0 = [&bx0, &g0, &be0][probe].clone();
                    let err = grad_check(
                        |t, p| {
                            let x = if probe == 0 { p } else { t.constant(bx0.clone()) };
                            let g = if probe == 1 { p } else { t.constant(g0.clone()) };
                            let b = if probe == 2 { p } else { t.constant(be0.clone()) };
                            let y = if train {
                                t.batchnorm_train(x, g, b, 1e-5)?.0
                            } else {
                                t.batchnorm_infer(x, g, b, &rm, &rv, 1e-5)?
                            };
                            let w = t.constant(w0.clone());
                            let weighted = t.mul(y, w)?;
                            t.sum(weighted)
                        },
                        &x0,
                        eps,
                    )?;
                    record(if train { "batchnorm_train" } else { "batchnorm_infer" }, err, &mut out);
                }
            }
        }

        // embedding scatter
        let table0 = rand_tensor(&mut rng, &[5, 3], -1.0, 1.0);
        let idx: Vec<usize> = (0..6).map(|_| rng.below(5)).collect();
        let err = grad_check(
            |t, p| {
                let rows = t.embedding(p, &idx)?;
                let sq = t.square(rows)?;
                t.sum(sq)
            },
            &table0,
            eps,
        )?;
        record("embedding", err, &mut out);

        // structural ops
        let sx0 = rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0);
        let err = grad_check(
            |t, p| {
                let h = t.last_step(p)?;
                let sq = t.square(h)?;
                t.sum(sq)
            },
            &sx0,
            eps,
        )?;
        record("last_step", err, &mut out);

        let rx0 = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
        let err = grad_check(
            |t, p| {
                let r = t.repeat_rows(p, 3)?;
                let sq = t.square(r)?;
                t.sum(sq)
            },
            &rx0,
            eps,
        )?;
        record("repeat_rows", err, &mut out);

        let err = grad_check(
            |t, p| {
                let b = t.broadcast_time(p, 4)?;
                let sq = t.square(b)?;
                t.sum(sq)
            },
            &rx0,
            eps,
        )?;
        record("broadcast_time", err, &mut out);

        let cc0 = rand_tensor(&mut rng, &[2, 2, 3], -1.0, 1.0);
        let err = grad_check(
            |t, p| {
                let other = t.constant(cc0.clone());
                let c = t.concat_channels(p, other)?;
                let sq = t.square(c)?;
                t.sum(sq)
            },
            &cc0,
            eps,
        )?;
        record("concat_channels", err, &mut out);

        let col0 = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
        let err = grad_check(
            |t, p| {
                let other = t.constant(col0.clone());
                let c = t.concat_cols(p, other)?;
                let j = t.select_col(c, 4)?;
                let sq = t.square(j)?;
                t.sum(sq)
            },
            &col0,
            eps,
        )?;
        record("concat_select", err, &mut out);

        // losses away from kinks
        let levels = [0.1, 0.5, 0.9];
        let ty: Vec<f64> = (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let preds0: Vec<f64> = ty
            .iter()
            .flat_map(|&y| {
                levels
                    .iter()
                    .map(|_| y + rand_sign(&mut rng) * rng.uniform(0.05, 1.0))
                    .collect::<Vec<f64>>()
            })
            .collect();
        let preds0 = Tensor::new(alloc::vec![4, 3], preds0).unwrap();
        let tyv = ty.clone();
        let err = grad_check(
            |t, p| {
                let target = t.constant(Tensor::from_slice(&tyv));
                crate::loss::quantile_loss_graph(t, p, target, &levels)
            },
            &preds0,
            eps,
        )?;
        record("quantile_loss", err, &mut out);

        let mu0 = rand_tensor(&mut rng, &[5], -2.0, 2.0);
        let sg0 = rand_tensor(&mut rng, &[5], 0.3, 2.0);
        let yv: Vec<f64> = (0..5).map(|_| rng.uniform(-2.0, 2.0)).collect();
        for probe_mu in [true, false] {
            let err = grad_check(
                |t, p| {
                    let target = t.constant(Tensor::from_slice(&yv));
                    let (mu, sigma) = if probe_mu {
                        (p, t.constant(sg0.clone()))
                    } else {
                        (t.constant(mu0.clone()), p)
                    };
                    crate::loss::gaussian_nll_graph(t, mu, sigma, target)
                },
                if probe_mu { &mu0 } else { &sg0 },
                eps,
            )?;
            record("gaussian_nll", err, &mut out);
        }

        // encoder block and decoder composites (linear-safe configs rejected
        // for kink proximity)
        let mut params = ParamStore::<f64>::new();
        let mut buffers = BufStore::new();
        let block = EncoderBlock::init(&mut params, &mut buffers, &mut rng, "b", 2, 2, 2, 2)
            .map_err(|e| e)?;
        let ex0 = kink_free_block_input(&params, &buffers, &block, &mut rng)?;
        let err = grad_check(
            |t, p| {
                let mut bufs = buffers.clone();
                let mut sess = Session::new(t, &params, &mut bufs, Mode::Train);
                let y = block.forward(&mut sess, p, EncoderOptions::default())?;
                sess.tape.sum(y)
            },
            &ex0,
            eps,
        )?;
        record("encoder_block", err, &mut out);

        let mut params = ParamStore::<f64>::new();
        let mut buffers = BufStore::new();
        let dec = ResnetV::init(&mut params, &mut buffers, &mut rng, 3, 4, 4);
        let h0 = rand_tensor(&mut rng, &[2, 4], -1.0, 1.0);
        let f0 = rand_tensor(&mut rng, &[6, 3], -1.0, 1.0);
        for probe_h in [true, false] {
            let err = grad_check(
                |t, p| {
                    let mut bufs = buffers.clone();
                    let mut sess = Session::new(t, &params, &mut bufs, Mode::Train);
                    let (h, f) = if probe_h {
                        let f = sess.tape.constant(f0.clone());
                        (p, f)
                    } else {
                        let h = sess.tape.constant(h0.clone());
                        (h, p)
                    };
                    let d = dec.forward(&mut sess, h, f, 3)?;
                    sess.tape.sum(d)
                },
                if probe_h { &h0 } else { &f0 },
                eps,
            )?;
            record("resnet_v", err, &mut out);
        }

    }

    Ok(out)
}

fn rand_sign(rng: &mut RngState) -> f64 {
    if rng.next_f64() < 0.5 {
        -1.0
    } else {
        1.0
    }
}

/// Draw block inputs until no relu pre-activation sits near its kink.
fn kink_free_block_input(
    params: &crate::layers::ParamStore<f64>,
    buffers: &crate::layers::BufStore<f64>,
    block: &crate::layers::EncoderBlock,
    rng: &mut RngState,
) -> Result<Tensor<f64>> {
    use crate::layers::{EncoderOptions, Mode, Session};
    for _ in 0..200 {
        let candidate = rand_tensor(rng, &[2, 2, 6], -1.5, 1.5);
        let mut bufs = buffers.clone();
        let mut tape = Tape::new();
        let mut sess = Session::new(&mut tape, params, &mut bufs, Mode::Train);
        let x = sess.tape.constant(candidate.clone());
        block.forward(&mut sess, x, EncoderOptions::default())?;
        if tape.min_abs_relu_input().is_none_or(|m| m > 1e-3) {
            return Ok(candidate);
        }
    }
    Err(Error::Config(alloc::string::String::from(
        "no kink-free encoder block configuration found",
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        // f(x) = sum(x^2), analytic grad 2x
        let x = Tensor::from_slice(&[1.0, 2.0]);
        let err = grad_check(
            |t, v| {
                let sq = t.square(v)?;
                t.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let x = Tensor::from_slice(&[1.0, -2.0, 0.5, -0.25]);
        let err = grad_check(
            |t, v| {
                let r = t.relu(v)?;
                t.sum(r)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::from_slice(&[3.0, -1.0]);
        let err = grad_check(
            |t, _v| {
                let c = t.constant(Tensor::scalar(4.0));
                t.mul_scalar(c, 1.0)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn eps_outside_range_is_config_error() {
        let x = Tensor::from_slice(&[1.0]);
        let r = grad_check(|t, v| t.sum(v), &x, 1e-2);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
