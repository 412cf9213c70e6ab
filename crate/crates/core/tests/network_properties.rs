use proptest::prelude::*;
use swapsim::buffer::{Entry, LinkPair};
use swapsim::link::{LinkSource, SyntheticParams};
use swapsim::network::{main_loop, sequential_step, simultaneous_step, ChainTopology, Controller, Protocol};
use swapsim::physics::PhysicsConstants;
use swapsim::sweep::link_rngs;

fn sources(top: &ChainTopology, f_mean: f64, interval_ticks: f64, jitter: f64) -> Vec<LinkSource> {
    top.taus
        .iter()
        .map(|&tau| LinkSource::Synthetic {
            tau,
            params: SyntheticParams {
                mean_interval: interval_ticks * tau,
                f_mean,
                jitter,
            },
        })
        .collect()
}

fn lengths() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(prop_oneof![Just(5.0), Just(10.0), Just(15.0)], 1..=5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn runs_are_deterministic(ls in lengths(), seed in any::<u64>(), tc_ms in 0.2f64..50.0) {
        let consts = PhysicsConstants::default();
        let top = ChainTopology::new(&ls, tc_ms * 1e-3, &consts).unwrap();
        for p in Protocol::ALL {
            let run = || {
                let mut src = sources(&top, 0.97, 3.0, 0.01);
                let mut ctl = Controller::new(p, &top);
                main_loop(&top, &mut src, &mut ctl, 0.02, &mut link_rngs(seed, top.n())).unwrap()
            };
            prop_assert_eq!(run(), run());
        }
    }

    #[test]
    fn events_are_ordered_and_physical(ls in lengths(), seed in any::<u64>(), tc_ms in 0.2f64..50.0) {
        let consts = PhysicsConstants::default();
        let top = ChainTopology::new(&ls, tc_ms * 1e-3, &consts).unwrap();
        for p in Protocol::ALL {
            let mut src = sources(&top, 0.97, 3.0, 0.02);
            let mut ctl = Controller::new(p, &top);
            let ev = main_loop(&top, &mut src, &mut ctl, 0.02, &mut link_rngs(seed, top.n())).unwrap();
            for w in ev.windows(2) {
                prop_assert!(w[0].t_emit <= w[1].t_emit);
            }
            for e in &ev {
                prop_assert!(e.fidelity >= 0.25 && e.fidelity <= 1.0);
                prop_assert!(e.age >= 0.0);
                prop_assert!(e.dwell >= 0.0);
                if p == Protocol::Simultaneous {
                    prop_assert_eq!(e.dwell, 0.0);
                }
            }
        }
    }

    #[test]
    fn huge_memory_gives_the_product_fidelity(n in 1usize..=5, f in 0.985f64..1.0, seed in any::<u64>()) {
        let consts = PhysicsConstants::default();
        let top = ChainTopology::new(&vec![10.0; n], 1e12, &consts).unwrap();
        let want = 0.25 + 0.75 * ((4.0 * f - 1.0) / 3.0).powi(n as i32);
        for p in Protocol::ALL {
            let mut src = sources(&top, f, 2.0, 0.0);
            let mut ctl = Controller::new(p, &top);
            let ev = main_loop(&top, &mut src, &mut ctl, 0.01, &mut link_rngs(seed, n)).unwrap();
            prop_assert!(!ev.is_empty());
            for e in ev {
                prop_assert!((e.fidelity - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn consumed_pairs_were_within_cutoff(seed in any::<u64>(), age_ticks in proptest::collection::vec(0u32..6, 3)) {
        // Three link buffers each holding one pair of a given age; only live pairs may be swapped.
        let consts = PhysicsConstants::default();
        let top = ChainTopology::new(&[10.0; 3], 2e-3, &consts).unwrap();
        let tau = top.tau_min;
        let t = 10.0 * tau;
        let mut links = top.link_buffers();
        let mut pairs = Vec::new();
        for (b, &a) in links.iter_mut().zip(&age_ticks) {
            let at = t - a as f64 * tau;
            b.push(LinkPair::new(0.99, at), at);
            pairs.push(*b.iter().next().unwrap());
        }
        let live = pairs.iter().all(|p| !p.expired(t));
        let ev = simultaneous_step(t, top.tc_ext, &mut links);
        prop_assert_eq!(ev.is_some(), live);
        let _ = seed;
    }
}

#[test]
fn sequential_cascade_consumes_fresh_pairs_in_one_tick() {
    let consts = PhysicsConstants::default();
    let top = ChainTopology::new(&[10.0; 4], 1.0, &consts).unwrap();
    let t = top.tau_min;
    let mut links = top.link_buffers();
    let mut chain = top.chain_buffers();
    for b in &mut links {
        b.push(LinkPair::new(0.98, t), t);
    }
    // Link 1 seeds after the extension loop, so the first tick only seeds.
    assert!(sequential_step(t, 1.0, &mut links, &mut chain).is_empty());
    for b in &mut links {
        if b.is_empty() {
            b.push(LinkPair::new(0.98, 2.0 * t), 2.0 * t);
        }
    }
    let ev = sequential_step(2.0 * t, 1.0, &mut links, &mut chain);
    assert_eq!(ev.len(), 1);
    assert!((ev[0].dwell - t).abs() < 1e-15);
}
