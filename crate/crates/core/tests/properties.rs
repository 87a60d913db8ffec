use std::collections::BTreeSet;

use proptest::prelude::*;

use sere_core::clustering::{club_clusters, mcnb_clusters, Partition, UserEmbedding, UserId};
use sere_core::drift::{PhaConfig, PhaDetector};
use sere_core::linalg::DesignMatrix;
use sere_core::mlp::{kaiming_bound, Network, NetworkShape};
use sere_core::plasticity::{SereConfig, UtilityState};

fn as_sets(p: &Partition) -> BTreeSet<BTreeSet<UserId>> {
    p.groups().iter().map(|g| g.iter().copied().collect()).collect()
}

fn points(max_users: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, dim), 1..max_users)
}

proptest! {
    #[test]
    fn club_partition_ignores_input_order(pts in points(16, 2), eps in 0.1f64..1.5, rot in 0usize..16) {
        let emb: Vec<UserEmbedding> =
            pts.iter().enumerate().map(|(i, v)| UserEmbedding::new(i as UserId, v.clone())).collect();
        let mut shuffled = emb.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = club_clusters(&emb, eps).unwrap();
        let b = club_clusters(&shuffled, eps).unwrap();
        prop_assert_eq!(as_sets(&a.partitions[0]), as_sets(&b.partitions[0]));
    }

    #[test]
    fn club_groups_are_closed_under_eps_neighbours(pts in points(16, 3), eps in 0.1f64..1.5) {
        let emb: Vec<UserEmbedding> =
            pts.iter().enumerate().map(|(i, v)| UserEmbedding::new(i as UserId, v.clone())).collect();
        let part = &club_clusters(&emb, eps).unwrap().partitions[0];
        for a in &emb {
            for b in &emb {
                let d: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                if d <= eps {
                    prop_assert_eq!(part.group_of(a.user), part.group_of(b.user));
                }
            }
        }
    }

    #[test]
    fn mcnb_neighbours_in_sorted_order_share_a_group_iff_close(
        rewards in prop::collection::vec(-1.0f64..1.0, 1..20),
        tol in 0.0f64..0.3,
    ) {
        let predicted: Vec<(UserId, f64)> = rewards.iter().enumerate().map(|(i, &r)| (i as UserId, r)).collect();
        let part = mcnb_clusters(&predicted, tol).unwrap();
        let mut sorted = predicted.clone();
        sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        for w in sorted.windows(2) {
            let same = part.group_of(w[0].0) == part.group_of(w[1].0);
            prop_assert_eq!(same, w[1].1 - w[0].1 <= tol);
        }
    }

    #[test]
    fn width_never_grows_after_an_update(
        phis in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 1..30),
        probe in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let mut a = DesignMatrix::new(5, 1.0, 7).unwrap();
        let mut last = a.width(&probe).unwrap();
        for phi in &phis {
            a.rank_one_update(phi).unwrap();
            let w = a.width(&probe).unwrap();
            prop_assert!(w <= last + 1e-12);
            last = w;
        }
        prop_assert!(a.inverse_residual() < 1e-9);
    }

    #[test]
    fn rate_stays_within_bounds(errors in prop::collection::vec(0.0f64..2.0, 1..300)) {
        let cfg = PhaConfig::default();
        let mut det = PhaDetector::new(cfg).unwrap();
        for e in errors {
            det.observe(e).unwrap();
            let d = det.current_rho();
            prop_assert!(d.rho >= cfg.rho_min && d.rho <= cfg.rho_max);
            prop_assert_eq!(d.drift, d.rho == cfg.rho_max && d.deviation > cfg.threshold);
        }
    }

    #[test]
    fn utilities_stay_non_negative_and_ages_count_steps(
        steps in 1usize..60,
        seed in any::<u64>(),
        rho in 0.0f64..0.5,
    ) {
        let shape = NetworkShape::with_hidden(3, &[6, 4]).unwrap();
        let mut net = Network::kaiming(shape.clone(), seed);
        let cfg = SereConfig { maturity: 3, ..Default::default() };
        let mut st = UtilityState::new(&shape, cfg, seed).unwrap();
        let mut resets = 0;
        for t in 0..steps {
            let x = [t as f64 * 0.1, 1.0, -0.5];
            let trace = net.train_step(&x, 0.3, 0.05).unwrap();
            resets += st.step(&mut net, &trace, rho).unwrap().len();
        }
        prop_assert!(st.utilities().iter().flatten().all(|&u| u >= 0.0));
        prop_assert!(st.ages().iter().flatten().all(|&a| a as usize <= steps));
        if resets == 0 {
            prop_assert!(st.ages().iter().flatten().all(|&a| a as usize == steps));
        }
    }
}

#[test]
fn kaiming_draws_match_uniform_moments() {
    let shape = NetworkShape::new(vec![50, 400, 1]).unwrap();
    let net = Network::kaiming(shape, 9);
    let w = net.layers()[0].weights();
    let bound = kaiming_bound(50);
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(w.iter().all(|v| v.abs() <= bound));
    // U(-b, b): mean 0, variance b^2 / 3 = 2 / fan_in
    assert!(mean.abs() < 0.01, "{mean}");
    assert!((var - 2.0 / 50.0).abs() < 0.002, "{var}");
}

#[test]
fn training_reduces_loss_on_a_fixed_target() {
    let shape = NetworkShape::with_hidden(4, &[16]).unwrap();
    let mut net = Network::kaiming(shape, 1);
    let x = [0.5, -0.2, 0.1, 0.9];
    let before = net.loss(&x, 0.7).unwrap();
    for _ in 0..200 {
        net.train_step(&x, 0.7, 0.05).unwrap();
    }
    assert!(net.loss(&x, 0.7).unwrap() < 1e-3 * before.max(1e-3));
}
