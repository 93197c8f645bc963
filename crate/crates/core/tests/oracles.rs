//! Independent oracles for the allocator and whole-run invariants.
//!
//! The brute-force enumerator below shares no code with the library: it
//! walks every assignment of subcarriers to eligible users and keeps the one
//! with the largest weighted rate sum.

use ofdma_sched::channel::RateMatrix;
use ofdma_sched::io::{normalized_trace, write_sweep_csv, SweepRow};
use ofdma_sched::scheduler::{
    allocate_given_lambda, check_theorem1, exp_priority_values, mu_of, weighted_objective, user_weights, SchedulerInput,
    SchedulerKind, UserDemand,
};
use ofdma_sched::sim::{run_simulation_with, RunSummary, SimConfig};
use proptest::prelude::*;

/// Exhaustive optimum of `Σ_k w(owner_k)·r(owner_k, k)` over all `N^K`
/// assignments to eligible users.
fn brute_force_optimum(rates: &[Vec<f64>], weights: &[Option<f64>]) -> f64 {
    let eligible: Vec<usize> = (0..weights.len()).filter(|&i| weights[i].is_some()).collect();
    let k_total = rates[0].len();
    let mut digits = vec![0usize; k_total];
    let mut best = f64::NEG_INFINITY;
    loop {
        let value: f64 = digits
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                let u = eligible[d];
                weights[u].unwrap() * rates[u][k]
            })
            .sum();
        best = best.max(value);
        let mut pos = 0;
        loop {
            if pos == k_total {
                return best;
            }
            digits[pos] += 1;
            if digits[pos] < eligible.len() {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

#[derive(Clone, Debug)]
struct Instance {
    rates: Vec<Vec<f64>>,
    users: Vec<UserDemand>,
    priorities: Vec<f64>,
    lambda: f64,
}

impl Instance {
    fn matrix(&self) -> RateMatrix {
        RateMatrix::from_rows(&self.rates).unwrap()
    }
}

fn demand(is_qos: bool, backlog: bool) -> UserDemand {
    if is_qos {
        UserDemand {
            is_qos: true,
            mu: 40.0,
            hol_delay_s: 0.01,
            backlog_bits: if backlog { 1000.0 } else { 0.0 },
        }
    } else {
        UserDemand::best_effort()
    }
}

/// Small instances with at least one best-effort user, so every subcarrier
/// always has an eligible owner.
fn instance(max_users: usize, max_subcarriers: usize) -> impl Strategy<Value = Instance> {
    (2..=max_users, 1..=max_subcarriers)
        .prop_flat_map(|(n, k)| {
            (
                prop::collection::vec(prop::collection::vec(0.0f64..1e6, k), n),
                prop::collection::vec((any::<bool>(), any::<bool>()), n - 1),
                prop::collection::vec(0.01f64..100.0, n),
                0.0f64..50.0,
            )
        })
        .prop_map(|(rates, kinds, priorities, lambda)| {
            let mut users: Vec<UserDemand> = kinds.iter().map(|&(q, b)| demand(q, b)).collect();
            users.push(UserDemand::best_effort());
            Instance {
                rates,
                users,
                priorities,
                lambda,
            }
        })
}

fn be_subcarriers(owner: &[usize], users: &[UserDemand]) -> Vec<usize> {
    (0..owner.len()).filter(|&k| !users[owner[k]].is_qos).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn allocator_matches_exhaustive_search(inst in instance(4, 6)) {
        let m = inst.matrix();
        let input = SchedulerInput { rates: &m, users: &inst.users, slot_length_s: 1e-4 };
        let alloc = allocate_given_lambda(&input, &inst.priorities, inst.lambda).unwrap();
        let weights = user_weights(&input, &inst.priorities, inst.lambda);
        let best = brute_force_optimum(&inst.rates, &weights);
        prop_assert!((alloc.objective - best).abs() <= 1e-9 * best.abs().max(1.0), "{} vs {}", alloc.objective, best);
    }

    #[test]
    fn allocation_is_a_partition_of_eligible_users(inst in instance(6, 32)) {
        let m = inst.matrix();
        let input = SchedulerInput { rates: &m, users: &inst.users, slot_length_s: 1e-4 };
        let alloc = allocate_given_lambda(&input, &inst.priorities, inst.lambda).unwrap();
        prop_assert_eq!(alloc.owner.len(), m.num_subcarriers());
        for &o in &alloc.owner {
            prop_assert!(o < inst.users.len());
            prop_assert!(inst.users[o].is_eligible());
        }
    }

    #[test]
    fn optimum_satisfies_the_cross_class_conditions(inst in instance(6, 32)) {
        let m = inst.matrix();
        let input = SchedulerInput { rates: &m, users: &inst.users, slot_length_s: 1e-4 };
        let alloc = allocate_given_lambda(&input, &inst.priorities, inst.lambda).unwrap();
        prop_assert!(check_theorem1(&alloc, &input, &inst.priorities, inst.lambda).is_empty());
    }

    #[test]
    fn raising_lambda_only_adds_best_effort_subcarriers(inst in instance(6, 32), factor in 1.0f64..10.0) {
        let m = inst.matrix();
        let input = SchedulerInput { rates: &m, users: &inst.users, slot_length_s: 1e-4 };
        let low = allocate_given_lambda(&input, &inst.priorities, inst.lambda).unwrap();
        let high = allocate_given_lambda(&input, &inst.priorities, inst.lambda * factor).unwrap();
        let low_be = be_subcarriers(&low.owner, &inst.users);
        let high_be = be_subcarriers(&high.owner, &inst.users);
        for k in low_be {
            prop_assert!(high_be.contains(&k), "subcarrier {} left best effort", k);
        }
    }

    #[test]
    fn common_scaling_leaves_the_allocation_unchanged(inst in instance(6, 32), c in 0.01f64..100.0) {
        let m = inst.matrix();
        let input = SchedulerInput { rates: &m, users: &inst.users, slot_length_s: 1e-4 };
        let a = allocate_given_lambda(&input, &inst.priorities, inst.lambda).unwrap();
        let scaled: Vec<f64> = inst.priorities.iter().map(|p| p * c).collect();
        let b = allocate_given_lambda(&input, &scaled, inst.lambda * c).unwrap();
        // Ties are measure-zero with continuous rates, but rounding can flip
        // a near-tie; the objective then still agrees up to scaling.
        prop_assert!((b.objective - c * a.objective).abs() <= 1e-9 * b.objective.abs().max(1.0));
        let flips = a.owner.iter().zip(&b.owner).filter(|(x, y)| x != y).count();
        prop_assert!(flips == 0 || (b.objective - c * a.objective).abs() <= 1e-9 * b.objective.abs());
    }

    /// Any allocation that passes the condition check and in which each
    /// subcarrier goes to the best user of its owner's class is optimal.
    #[test]
    fn passing_the_condition_check_implies_optimality(inst in instance(4, 6), seed in any::<u64>()) {
        let m = inst.matrix();
        let input = SchedulerInput { rates: &m, users: &inst.users, slot_length_s: 1e-4 };
        let weights = user_weights(&input, &inst.priorities, inst.lambda);
        let k_total = m.num_subcarriers();
        // choose a class per subcarrier at random, then the best user of it
        let mut owner = Vec::with_capacity(k_total);
        for k in 0..k_total {
            let want_qos = (seed >> (k % 64)) & 1 == 1;
            let best_in = |qos: bool| {
                (0..inst.users.len())
                    .filter(|&i| weights[i].is_some() && inst.users[i].is_qos == qos)
                    .max_by(|&a, &b| {
                        (weights[a].unwrap() * m.rate(a, k)).total_cmp(&(weights[b].unwrap() * m.rate(b, k)))
                    })
            };
            owner.push(best_in(want_qos).or_else(|| best_in(!want_qos)).unwrap());
        }
        let objective = weighted_objective(&owner, &m, &weights);
        let alloc = ofdma_sched::scheduler::Allocation { owner, objective };
        if check_theorem1(&alloc, &input, &inst.priorities, inst.lambda).is_empty() {
            let best = brute_force_optimum(&inst.rates, &weights);
            prop_assert!((objective - best).abs() <= 1e-9 * best.abs().max(1.0));
        }
    }

    #[test]
    fn equal_delay_products_give_priority_mu(
        mu in prop::collection::vec(1.0f64..100.0, 1..10),
        product in 0.0f64..20.0,
    ) {
        let hol: Vec<f64> = mu.iter().map(|m| product / m).collect();
        let mut a = vec![0.0; mu.len()];
        exp_priority_values(&mu, &hol, &mut a);
        for (ai, mi) in a.iter().zip(&mu) {
            prop_assert!((ai - mi).abs() <= 1e-9 * mi);
        }
    }

    #[test]
    fn longer_waits_raise_priority(mu in 1.0f64..100.0, h in 0.0f64..1.0, extra in 0.001f64..1.0) {
        let mut a = [0.0; 2];
        exp_priority_values(&[mu, mu], &[h, h + extra], &mut a);
        prop_assert!(a[1] > a[0]);
    }
}

#[test]
fn mu_uses_the_natural_log() {
    let mu = mu_of(0.05, 0.08).unwrap();
    assert!((mu - (-(0.05f64).ln() / 0.08)).abs() < 1e-12);
}

#[test]
fn bits_are_conserved_over_a_long_run() {
    let mut c = SimConfig::default();
    c.sim.num_slots = 100_000;
    c.sim.warmup_slots = 0;
    let mut worst = 0.0f64;
    let mut slots = 0u64;
    run_simulation_with(&c, 0, |m, state| {
        slots += 1;
        assert_eq!(state.last_allocation().unwrap().owner.len(), c.channel.num_subcarriers);
        assert!(m.served_bits.iter().all(|b| *b >= 0.0));
        if m.slot_index % 1000 == 0 {
            worst = worst.max(state.max_conservation_error());
        }
    })
    .unwrap();
    assert_eq!(slots, 100_000);
    assert!(worst < 1e-3, "bits lost or created: {worst}");
}

fn sweep_csv_bytes(config: &SimConfig) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for scheduler in [SchedulerKind::Proposed, SchedulerKind::Baseline] {
        let mut c = config.clone();
        c.sim.scheduler = scheduler;
        let runs: Vec<_> = (0..c.sim.num_runs)
            .map(|r| ofdma_sched::sim::run_simulation(&c, r).unwrap())
            .collect();
        rows.push(SweepRow::new(c.users.streaming as f64, scheduler, &RunSummary::mean(&runs)));
    }
    let path = dir.path().join("sweep.csv");
    write_sweep_csv(&path, &rows).unwrap();
    std::fs::read(&path).unwrap()
}

#[test]
fn same_seed_gives_byte_identical_csv() {
    let mut c = SimConfig::default();
    c.sim.num_slots = 4_000;
    c.sim.warmup_slots = 400;
    c.sim.num_runs = 2;
    c.sim.seed = 7;
    let a = sweep_csv_bytes(&c);
    let b = sweep_csv_bytes(&c);
    assert_eq!(a, b);
    c.sim.seed = 8;
    assert_ne!(sweep_csv_bytes(&c), a);
}

#[test]
fn normalized_trace_ends_at_one() {
    let mut c = SimConfig::default();
    c.sim.num_slots = 5_000;
    c.sim.warmup_slots = 0;
    let m = ofdma_sched::sim::run_simulation(&c, 0).unwrap();
    let last = m.final_lambda.unwrap();
    let n = normalized_trace(&m.lambda_trace, last);
    assert!(!n.is_empty());
    assert!(n.iter().all(|v| v.is_finite()));
}

#[test]
fn expired_real_time_packets_never_linger() {
    let mut c = SimConfig::default();
    assert!(c.traffic.drop_expired);
    c.sim.num_slots = 20_000;
    c.sim.warmup_slots = 0;
    c.users.streaming = 20;
    let dt = c.sim.slot_length_s;
    let mut drops = 0;
    run_simulation_with(&c, 0, |m, state| {
        drops += m.drops[0] + m.drops[1];
        let now = (m.slot_index + 1) as f64 * dt;
        for u in 0..state.num_users() {
            let Some(q) = c.traffic.qos(state.class_of(u)) else { continue };
            let age = state.queue(u).head_of_line_delay(now);
            assert!(age <= q.lifetime_s + 2.0 * dt, "user {u} holds a packet aged {age} s");
        }
    })
    .unwrap();
    assert!(drops > 0, "a loaded cell should expire some packets");
}
