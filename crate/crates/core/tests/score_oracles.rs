//! Independent numeric oracles for the Dirichlet-family scores: Monte
//! Carlo sampling for the differential entropy, simplex quadrature for the
//! KL divergence, and finite differences for the prior-network loss.

use fishy_core::numerics::Tensor;
use fishy_core::raster::{ClassRaster, LabelMask, LABEL_ID};
use fishy_core::scores::{
    dirichlet_differential_entropy, dirichlet_kl, prior_network_loss, DirichletMap,
};
use fishy_core::seed;

use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

fn dirichlet_log_pdf(alpha: &[f64], x: &[f64]) -> f64 {
    let a0: f64 = alpha.iter().sum();
    let ln_b: f64 = alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(a0);
    -ln_b
        + alpha
            .iter()
            .zip(x)
            .map(|(&a, &v)| (a - 1.0) * v.ln())
            .sum::<f64>()
}

#[test]
fn differential_entropy_matches_monte_carlo() {
    let alpha = [2.0, 3.0, 4.0];
    let d = DirichletMap::new(1, 1, 3, alpha.to_vec()).unwrap();
    let closed_form = dirichlet_differential_entropy(&d).values()[0];

    // Sample via normalized Gammas and average -log pdf.
    let mut rng = seed::rng_for(99, "dirichlet-mc");
    let gammas: Vec<Gamma<f64>> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
    let n = 400_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let mut x: Vec<f64> = gammas.iter().map(|g| g.sample(&mut rng)).collect();
        let sum: f64 = x.iter().sum();
        for v in &mut x {
            *v /= sum;
        }
        acc -= dirichlet_log_pdf(&alpha, &x);
    }
    let mc = acc / n as f64;
    assert!(
        (closed_form - mc).abs() < 0.02,
        "closed form {closed_form} vs MC {mc}"
    );
}

#[test]
fn dirichlet_kl_matches_quadrature_for_beta_case() {
    // C = 2 reduces to Beta distributions on [0, 1]; integrate
    // p(x) log(p(x)/q(x)) with Simpson's rule.
    let (ap, aq) = ([2.0, 1.0], [1.0, 1.0]);
    let closed_form = dirichlet_kl(&ap, &aq).unwrap();

    let beta_log_pdf = |a: f64, b: f64, x: f64| -> f64 {
        (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() + ln_gamma(a + b)
            - ln_gamma(a)
            - ln_gamma(b)
    };
    let integrand = |x: f64| -> f64 {
        if x <= 0.0 || x >= 1.0 {
            return 0.0; // p(x) log ratio vanishes at the ends for a=2,b=1
        }
        let lp = beta_log_pdf(ap[0], ap[1], x);
        let lq = beta_log_pdf(aq[0], aq[1], x);
        lp.exp() * (lp - lq)
    };
    let n = 100_000;
    let h = 1.0 / n as f64;
    let mut sum = integrand(0.0) + integrand(1.0);
    for i in 1..n {
        let x = i as f64 * h;
        sum += integrand(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let quad = sum * h / 3.0;
    assert!(
        (closed_form - quad).abs() < 1e-4,
        "closed form {closed_form} vs quadrature {quad}"
    );
}

#[test]
fn prior_loss_decreases_after_one_adam_step_on_fd_gradient() {
    use fishy_core::numerics::AdamState;

    let (h, w, c) = (4usize, 4usize, 3usize);
    let mut rng = seed::rng_for(7, "prior-grad");
    use rand::Rng;
    let mut logits = Tensor::from_vec(
        vec![h, w, c],
        (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let labels = ClassRaster::new(
        h,
        w,
        (0..h * w).map(|i| (i % c) as u8).collect(),
    )
    .unwrap();
    let mut mask_vals = vec![LABEL_ID; h * w];
    mask_vals[5] = 1;
    mask_vals[10] = 1;
    let mask = LabelMask::new(h, w, mask_vals).unwrap();

    let loss_of = |logits: &Tensor| {
        prior_network_loss(logits, &labels, &mask, 100.0, 0.01, (0.1, 0.1)).unwrap()
    };
    let before = loss_of(&logits);

    // Finite-difference gradient of the scalar loss w.r.t. every logit.
    let fd = 1e-5;
    let mut grad = Tensor::zeros(vec![h, w, c]);
    for i in 0..logits.numel() {
        let mut lp = logits.clone();
        lp.data_mut()[i] += fd;
        let mut lm = logits.clone();
        lm.data_mut()[i] -= fd;
        grad.data_mut()[i] = (loss_of(&lp) - loss_of(&lm)) / (2.0 * fd);
    }

    let mut adam = AdamState::for_params(&[&logits]);
    adam.update(&mut [&mut logits], &[&grad], 0.05).unwrap();
    let after = loss_of(&logits);
    assert!(after < before, "loss should drop: {before} -> {after}");
}
