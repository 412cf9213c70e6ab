mod common;

use swapsim::link::{Activation, Mlp};
use swapsim::trainer::{score_gradients, BatchStats, F_BOOT};

use common::{toy_gradient_error, toy_net, Toy};

#[test]
fn toy_probabilities_sum_to_one() {
    let net = toy_net(1);
    let total: f64 = Toy::enumerate(&net).iter().map(|(_, p)| p).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn toy_utility_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let net = toy_net(seed);
        let (j_f, _) = Toy::objectives(&net);
        assert!(j_f > F_BOOT, "toy must sit above the bootstrap threshold");
        let err = toy_gradient_error(&net);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}

#[test]
fn toy_stream_gradients_match_finite_differences() {
    let net = toy_net(11);
    let (records, weights): (Vec<_>, Vec<_>) = Toy::enumerate(&net).into_iter().unzip();
    let g = score_gradients(&net, &records, &weights).unwrap();
    let h = 1e-6;
    for i in 0..net.params().len() {
        let mut plus = net.clone();
        plus.params_mut()[i] += h;
        let mut minus = net.clone();
        minus.params_mut()[i] -= h;
        let (fp, tp) = Toy::objectives(&plus);
        let (fm, tm) = Toy::objectives(&minus);
        assert!(((fp - fm) / (2.0 * h) - g.jf[i]).abs() < 1e-7, "J_F param {i}");
        assert!(((tp - tm) / (2.0 * h) - g.jt[i]).abs() < 1e-7, "J_T param {i}");
    }
}

#[test]
fn uniform_policy_on_toy() {
    let net = Mlp::zeros(&[4, 3, 4], Activation::Relu).unwrap();
    let (j_f, j_t) = Toy::objectives(&net);
    let stats = BatchStats {
        j_f,
        j_t,
        batch_size: 1,
        deliveries: 1,
    };
    assert!(stats.utility() > 0.0);
    assert!(toy_gradient_error(&net) < 1e-3);
}
