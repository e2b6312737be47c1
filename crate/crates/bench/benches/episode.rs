use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use oti_bench::generated_instance;
use oti_core::principal::PrincipalConfig;
use oti_core::seeding::rng_from_seed;
use oti_core::sim::run_episode;
use oti_core::{
    AgentState, CbVariant, IncentiveBehavior, IncentiveOffer, LocalInstanceSet, Principal,
    SimConfig,
};
use rand::Rng;

fn toy_episode(c: &mut Criterion) {
    let inst = LocalInstanceSet::toy();
    let cfg = SimConfig {
        horizon: 10_000,
        ..Default::default()
    };
    let mut seed = 0;
    c.bench_function("toy episode, T = 1e4", |b| {
        b.iter(|| {
            seed += 1;
            run_episode(black_box(&inst), &cfg, seed).unwrap()
        })
    });
}

fn agent_act(c: &mut Criterion) {
    let means: Vec<f64> = (0..30).map(|k| 0.4 + 0.005 * k as f64).collect();
    let mut agent = AgentState::new(30, 2.0, IncentiveBehavior::AlwaysFollow);
    let mut rng = rng_from_seed(1);
    let play = |agent: &mut AgentState, rng: &mut oti_core::seeding::SimRng| {
        let a = agent.act(IncentiveOffer::NONE, rng);
        let r = if rng.random::<f64>() < means[a.arm] {
            1.0
        } else {
            0.0
        };
        agent.update(a.arm, r).unwrap();
    };
    for _ in 0..10_000 {
        play(&mut agent, &mut rng);
    }
    c.bench_function("agent act + update, K = 30", |b| {
        b.iter(|| play(&mut agent, &mut rng))
    });
}

fn principal_step(c: &mut Criterion) {
    let inst = generated_instance(150, 3);
    let (agents, arms) = (inst.agents(), inst.arms());
    let kappa = 2_000;
    let cfg = PrincipalConfig {
        horizon: 1_000_000_000,
        delta: 0.01,
        kappa,
        cb_variant: CbVariant::Simplified,
        never_ban: false,
        incentives: true,
    };
    let mut p = Principal::new(agents, arms, cfg).unwrap();
    let mut rng = rng_from_seed(4);
    let mut offers = vec![IncentiveOffer::NONE; agents];
    let mut t = 0;
    let mut advance = |p: &mut Principal, t: &mut u64, offers: &mut [IncentiveOffer]| {
        *t += 1;
        p.step_into(*t, offers).unwrap();
        for m in 0..agents {
            let arm = offers[m].arm.unwrap_or((*t as usize + m) % arms);
            let x = if rng.random::<f64>() < inst.mean(m, arm) {
                1.0
            } else {
                0.0
            };
            p.observe(m, arm, x).unwrap();
            if offers[m].arm.is_some() {
                p.record_response(m, true).unwrap();
            }
        }
    };
    for _ in 0..kappa {
        advance(&mut p, &mut t, &mut offers);
    }
    c.bench_function("principal step + observations, M = 150, K = 30", |b| {
        b.iter(|| advance(&mut p, &mut t, &mut offers))
    });
}

criterion_group!(benches, toy_episode, agent_act, principal_step);
criterion_main!(benches);
