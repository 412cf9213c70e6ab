//! Test-only oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use swapsim::link::{Activation, Mask, Mlp};
use swapsim::trainer::{EpisodeRecord, StepRecord};

pub type Mat = Vec<Vec<f64>>;

/// Werner state on two qubits, basis `|ab⟩` indexed `2a + b`.
pub fn werner(f: f64) -> Mat {
    let off = (1.0 - f) / 3.0;
    let mut rho = vec![vec![0.0; 4]; 4];
    for (i, row) in rho.iter_mut().enumerate() {
        row[i] = off;
    }
    // Add (F − off)|Φ+⟩⟨Φ+| with |Φ+⟩ = (|00⟩ + |11⟩)/√2.
    let w = (f - off) / 2.0;
    for i in [0, 3] {
        for j in [0, 3] {
            rho[i][j] += w;
        }
    }
    rho
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (n, m) = (a.len(), b.len());
    let mut out = vec![vec![0.0; n * m]; n * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[i * m + k][j * m + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

fn phi_plus_fidelity(rho: &Mat) -> f64 {
    (rho[0][0] + rho[0][3] + rho[3][0] + rho[3][3]) / 2.0
}

/// Bilateral CNOT distillation of two Werner pairs computed on the 16×16 density matrix.
///
/// Qubit order `(A1, B1, A2, B2)` from the most significant bit; returns `(p_success, F_out)`.
pub fn distill_density(f1: f64, f2: f64) -> (f64, f64) {
    let rho = kron(&werner(f1), &werner(f2));
    let perm = |s: usize| -> usize {
        let mut s = s;
        if s & 0b1000 != 0 {
            s ^= 0b0010;
        }
        if s & 0b0100 != 0 {
            s ^= 0b0001;
        }
        s
    };
    let mut after = vec![vec![0.0; 16]; 16];
    for i in 0..16 {
        for j in 0..16 {
            after[perm(i)][perm(j)] = rho[i][j];
        }
    }
    // Keep coinciding target outcomes, trace them out.
    let mut reduced = vec![vec![0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for t in [0b00, 0b11] {
                reduced[i][j] += after[(i << 2) | t][(j << 2) | t];
            }
        }
    }
    let p: f64 = (0..4).map(|i| reduced[i][i]).sum();
    (p, phi_plus_fidelity(&reduced) / p)
}

/// Entanglement swap of two Werner pairs on the density matrix, conditioned on a `Φ+` outcome
/// at the middle node. Qubit order `(A, B1, A2, C)`.
pub fn swap_density(f1: f64, f2: f64) -> f64 {
    let rho = kron(&werner(f1), &werner(f2));
    let idx = |a: usize, m: usize, c: usize| (a << 3) | (m << 1) | c;
    // ⟨Φ+|_{B1A2} ρ |Φ+⟩_{B1A2}, with the middle pair written as m = 2·b1 + a2 ∈ {0, 3}.
    let mut out = vec![vec![0.0; 4]; 4];
    for a in 0..2 {
        for c in 0..2 {
            for a2 in 0..2 {
                for c2 in 0..2 {
                    let mut s = 0.0;
                    for m in [0, 3] {
                        for m2 in [0, 3] {
                            s += rho[idx(a, m, c)][idx(a2, m2, c2)] / 2.0;
                        }
                    }
                    out[2 * a + c][2 * a2 + c2] = s;
                }
            }
        }
    }
    let p: f64 = (0..4).map(|i| out[i][i]).sum();
    phi_plus_fidelity(&out) / p
}

/// Every binary bracketing of `fs` folded with `op`.
pub fn all_bracketings(fs: &[f64], op: &dyn Fn(f64, f64) -> f64) -> Vec<f64> {
    if fs.len() == 1 {
        return vec![fs[0]];
    }
    let mut out = Vec::new();
    for split in 1..fs.len() {
        for l in all_bracketings(&fs[..split], op) {
            for r in all_bracketings(&fs[split..], op) {
                out.push(op(l, r));
            }
        }
    }
    out
}

/// Three-state toy decision process with an enumerable trajectory tree.
///
/// State 0 holds one pair: WAIT costs a tick and reaches state 1 with
/// probability 0.6; CONSUME delivers 0.90. State 1 holds two pairs: WAIT costs
/// a tick; DISCARD moves instantly to state 2; PURIFY costs a tick and
/// delivers 0.98 with probability 0.7, else falls back to state 0; CONSUME
/// delivers 0.95. State 2: WAIT costs a tick and returns to state 0; CONSUME
/// delivers 0.93. The third decision may only CONSUME.
pub struct Toy;

const OBS: [[f64; 4]; 3] = [[0.90, 0.0, 1.0, 0.0], [0.95, 0.90, 1.0, 0.5], [0.93, 0.0, 1.0, 0.8]];
const MASKS: [Mask; 3] = [[true, false, false, true], [true, true, true, true], [true, false, false, true]];
const LAST: Mask = [false, false, false, true];
const HORIZON: usize = 3;

/// `(next state or None when terminal, ticks, delivered fidelity, probability)`.
fn outcomes(state: usize, action: usize) -> Vec<(Option<usize>, f64, f64, f64)> {
    match (state, action) {
        (0, 0) => vec![(Some(1), 1.0, 0.0, 0.6), (Some(0), 1.0, 0.0, 0.4)],
        (0, 3) => vec![(None, 0.0, 0.90, 1.0)],
        (1, 0) => vec![(Some(1), 1.0, 0.0, 1.0)],
        (1, 1) => vec![(Some(2), 0.0, 0.0, 1.0)],
        (1, 2) => vec![(None, 1.0, 0.98, 0.7), (Some(0), 1.0, 0.0, 0.3)],
        (1, 3) => vec![(None, 0.0, 0.95, 1.0)],
        (2, 0) => vec![(Some(0), 1.0, 0.0, 1.0)],
        (2, 3) => vec![(None, 0.0, 0.93, 1.0)],
        _ => unreachable!("masked"),
    }
}

impl Toy {
    /// All trajectories from state 0 with their probabilities under `net`.
    pub fn enumerate(net: &Mlp) -> Vec<(EpisodeRecord, f64)> {
        let mut out = Vec::new();
        Self::walk(net, 0, 0.0, 1.0, Vec::new(), &mut out);
        out
    }

    fn walk(net: &Mlp, state: usize, elapsed: f64, prob: f64, steps: Vec<StepRecord>, out: &mut Vec<(EpisodeRecord, f64)>) {
        let mask = if steps.len() + 1 == HORIZON { LAST } else { MASKS[state] };
        let probs = net.forward(&OBS[state], &mask).unwrap().probs;
        for a in 0..4 {
            if !mask[a] {
                continue;
            }
            for (next, dt, g_f, p) in outcomes(state, a) {
                let mut s = steps.clone();
                s.push(StepRecord {
                    obs: OBS[state],
                    mask,
                    action: a,
                    elapsed,
                });
                let pr = prob * probs[a] * p;
                match next {
                    Some(n) => Self::walk(net, n, elapsed + dt, pr, s, out),
                    None => out.push((
                        EpisodeRecord {
                            steps: s,
                            g_f,
                            duration: elapsed + dt,
                        },
                        pr,
                    )),
                }
            }
        }
    }

    /// Exact `(J_F, J_T)` under `net`.
    pub fn objectives(net: &Mlp) -> (f64, f64) {
        Self::enumerate(net)
            .iter()
            .fold((0.0, 0.0), |(f, t), (r, p)| (f + p * r.g_f, t + p * r.duration))
    }
}

pub fn toy_net(seed: u64) -> Mlp {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Mlp::random(&[4, 6, 4], Activation::Tanh, &mut rng).unwrap()
}

/// Largest component-wise error between analytic and central-difference utility
/// gradients on the toy process, relative to the largest gradient component.
pub fn toy_gradient_error(net: &Mlp) -> f64 {
    use swapsim::trainer::{score_gradients, utility_gradient_combine, BatchStats, F_BOOT};
    let traj = Toy::enumerate(net);
    let (records, weights): (Vec<_>, Vec<_>) = traj.into_iter().unzip();
    let total: f64 = weights.iter().sum();
    assert!((total - 1.0).abs() < 1e-12, "trajectory probabilities sum to {total}");
    let (j_f, j_t) = Toy::objectives(net);
    let stats = BatchStats {
        j_f,
        j_t,
        batch_size: records.len(),
        deliveries: records.len(),
    };
    let g = score_gradients(net, &records, &weights).unwrap();
    let analytic = utility_gradient_combine(&g.jf, &g.jt, &stats, F_BOOT).unwrap();
    let u = |n: &Mlp| {
        let (f, t) = Toy::objectives(n);
        (1.0 - swapsim::physics::entropy(f).unwrap()) / t
    };
    let h = 1e-6;
    let mut max_err: f64 = 0.0;
    let mut max_g: f64 = 0.0;
    for i in 0..net.params().len() {
        let mut plus = net.clone();
        plus.params_mut()[i] += h;
        let mut minus = net.clone();
        minus.params_mut()[i] -= h;
        let fd = (u(&plus) - u(&minus)) / (2.0 * h);
        max_err = max_err.max((fd - analytic[i]).abs());
        max_g = max_g.max(fd.abs());
    }
    max_err / max_g
}
