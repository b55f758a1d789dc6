//! Least-squares and maximum-likelihood fitters for the parameter card.

use crate::channel::LinkState;
use crate::error::{Error, Result};
use crate::estimation::PathLossSample;
use rayon::prelude::*;

/// Ordinary least squares of path loss on `10 log10(d)` for one state;
/// returns `(alpha, beta, sigma)` with sigma the rms residual.
pub fn fit_path_loss(
    samples: &[PathLossSample],
    state: LinkState,
) -> Result<(f64, f64, f64)> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.state == state)
        .map(|s| (10.0 * s.distance.log10(), s.path_loss_db))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 samples in state {state:?}, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
    if sxx < 1e-12 {
        return Err(Error::InsufficientData(
            "all samples at the same distance".into(),
        ));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    let beta = sxy / sxx;
    let alpha = ym - beta * xm;
    let ss: f64 = pts
        .iter()
        .map(|p| (p.1 - alpha - beta * p.0).powi(2))
        .sum();
    Ok((alpha, beta, (ss / n).sqrt()))
}

/// Maximum-likelihood fit of the three-state probability curves from
/// `(distance, state)` observations; returns `(a_out, b_out, a_los)`.
pub fn fit_link_state(samples: &[(f64, LinkState)]) -> Result<(f64, f64, f64)> {
    if samples.len() < 3 {
        return Err(Error::InsufficientData("need at least 3 samples".into()));
    }
    for state in [LinkState::Los, LinkState::Nlos, LinkState::Outage] {
        if !samples.iter().any(|(_, s)| *s == state) {
            return Err(Error::InsufficientData(format!(
                "state {state:?} unobserved; parameters unidentifiable"
            )));
        }
    }
    // Log-parameterization keeps all three parameters positive.
    let nll = |x: &[f64]| -> f64 {
        let (a_out, b_out, a_los) = (x[0].exp(), x[1].exp(), x[2].exp());
        -samples
            .iter()
            .map(|&(d, state)| {
                let p_out = (1.0 - (-a_out * d + b_out).exp()).max(0.0);
                let p_los = (1.0 - p_out) * (-a_los * d).exp();
                let p = match state {
                    LinkState::Outage => p_out,
                    LinkState::Los => p_los,
                    LinkState::Nlos => 1.0 - p_out - p_los,
                };
                p.max(1e-300).ln()
            })
            .sum::<f64>()
    };
    let mut best: Option<([f64; 3], f64)> = None;
    for start in [
        [0.03f64, 5.0, 0.015],
        [0.01, 2.0, 0.005],
        [0.1, 10.0, 0.05],
    ] {
        let x0 = [start[0].ln(), start[1].ln(), start[2].ln()];
        let (x, f) = nelder_mead(&nll, &x0, 0.5, 4000, 1e-10);
        if best.as_ref().map_or(true, |(_, bf)| f < *bf) {
            best = Some(([x[0], x[1], x[2]], f));
        }
    }
    let (x, f) = best.expect("at least one start");
    if !f.is_finite() {
        return Err(Error::NoConvergence(
            "link-state likelihood did not evaluate to a finite value".into(),
        ));
    }
    Ok((x[0].exp(), x[1].exp(), x[2].exp()))
}

/// Scaled complementary error function `e^{x^2} erfc(x)` for `x >= 0`.
fn erfcx(x: f64) -> f64 {
    if x < 5.0 {
        (x * x).exp() * statrs::function::erf::erfc(x)
    } else {
        // Asymptotic series; relative error < 2e-5 at the crossover.
        let inv2x2 = 1.0 / (2.0 * x * x);
        (1.0 + inv2x2 * (-1.0 + inv2x2 * (3.0 - 15.0 * inv2x2)))
            / (x * std::f64::consts::PI.sqrt())
    }
}

/// Log-likelihood of observed K=2 weak-cluster fractions under the latent
/// cluster power model, with the uniform latents integrated out exactly.
pub fn cluster_power_log_likelihood(fractions: &[f64], r_tau: f64, zeta: f64) -> f64 {
    // Log-ratio of the two unnormalized cluster weights:
    //   R = (r_tau - 1) ln(U1/U2) + 0.1 ln(10) (Z2 - Z1)
    // and the weak fraction is w = 1 / (1 + e^|R|).  With U1, U2 iid
    // uniform, ln(U1/U2) is Laplace(0, 1), so R is a Laplace-Gaussian
    // convolution with the closed form
    //   p(r) = [e^{s^2/(2b^2) - r/b} erfc(s/(b sqrt2) - r/(s sqrt2))
    //         + e^{s^2/(2b^2) + r/b} erfc(s/(b sqrt2) + r/(s sqrt2))] / (4b)
    // where b = r_tau - 1 and s is the Gaussian sigma.  Parameter-free
    // factors (the w -> r Jacobian and the folding factor 2) are dropped.
    let b = (r_tau - 1.0).max(1e-9);
    let s = (0.1 * std::f64::consts::LN_10) * std::f64::consts::SQRT_2 * zeta.max(1e-3);
    let sqrt2 = std::f64::consts::SQRT_2;
    fractions
        .par_iter()
        .map(|&w| {
            // Fold so either cluster's fraction gives the same likelihood.
            let w = w.min(1.0 - w).max(1e-12);
            let r = ((1.0 - w) / w).ln();
            let x1 = s / (b * sqrt2) - r / (s * sqrt2);
            let x2 = s / (b * sqrt2) + r / (s * sqrt2);
            let p = if x1 >= 0.0 {
                // Both terms share the stable prefactor e^{-r^2/(2 s^2)}.
                (-r * r / (2.0 * s * s)).exp() * (erfcx(x1) + erfcx(x2))
            } else {
                // x1 < 0 implies the first exponent is negative: no overflow.
                (s * s / (2.0 * b * b) - r / b).exp() * statrs::function::erf::erfc(x1)
                    + (-r * r / (2.0 * s * s)).exp() * erfcx(x2)
            } / (4.0 * b);
            p.max(1e-300).ln()
        })
        .sum()
}

/// Approximate-ML fit of `(r_tau, zeta)` from K=2 weak-cluster power
/// fractions, marginalizing the unobserved uniform delay latents.
pub fn fit_cluster_power(fractions: &[f64]) -> Result<(f64, f64)> {
    if fractions.len() < 10 {
        return Err(Error::InsufficientData(
            "need at least 10 weak-fraction observations".into(),
        ));
    }
    // r_tau = 1 + e^x, zeta = e^y.
    let nll = |x: &[f64]| -> f64 {
        let r_tau = 1.0 + x[0].exp();
        let zeta = x[1].exp();
        if !(r_tau.is_finite() && zeta.is_finite()) {
            return f64::INFINITY;
        }
        -cluster_power_log_likelihood(fractions, r_tau, zeta)
    };
    let x0 = [(1.5f64).ln(), (3.0f64).ln()];
    let (x, f) = nelder_mead(&nll, &x0, 0.6, 500, 1e-10);
    if !f.is_finite() {
        return Err(Error::NoConvergence(
            "cluster-power likelihood did not evaluate to a finite value".into(),
        ));
    }
    Ok((1.0 + x[0].exp(), x[1].exp()))
}

/// Exponential-distribution MLE for angular spreads: the sample mean.
pub fn fit_angular_spread(spreads_deg: &[f64]) -> f64 {
    if spreads_deg.is_empty() {
        return 0.0;
    }
    spreads_deg.iter().sum::<f64>() / spreads_deg.len() as f64
}

/// Cluster-count parameter estimator: the empirical mean of K.  This is the
/// published estimator, not the censored-Poisson MLE, and is biased high for
/// small lambda.
pub fn fit_cluster_count(counts: &[usize]) -> f64 {
    assert!(counts.iter().all(|&k| k >= 1));
    if counts.is_empty() {
        return 0.0;
    }
    counts.iter().sum::<usize>() as f64 / counts.len() as f64
}

/// Derivative-free Nelder-Mead minimization.  Returns the best vertex and
/// its value after convergence of the simplex spread or `max_iter` steps.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    step: f64,
    max_iter: usize,
    tol: f64,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[n].1 - simplex[0].1).abs() <= tol * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|i| simplex[..n].iter().map(|(x, _)| x[i]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let at = |coef: f64| -> Vec<f64> {
            (0..n)
                .map(|i| centroid[i] + coef * (centroid[i] - worst.0[i]))
                .collect()
        };
        let refl = at(1.0);
        let f_refl = f(&refl);
        if f_refl < simplex[0].1 {
            let exp = at(2.0);
            let f_exp = f(&exp);
            simplex[n] = if f_exp < f_refl { (exp, f_exp) } else { (refl, f_refl) };
        } else if f_refl < simplex[n - 1].1 {
            simplex[n] = (refl, f_refl);
        } else {
            let contr = at(-0.5);
            let f_contr = f(&contr);
            if f_contr < worst.1 {
                simplex[n] = (contr, f_contr);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    for i in 0..n {
                        v.0[i] = best[i] + 0.5 * (v.0[i] - best[i]);
                    }
                    v.1 = f(&v.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0).into()
}
