mod common;

use std::sync::Arc;

use dagoffload::dag::{compute_ranks, Task, TaskGraph};
use dagoffload::sim::{evaluate_plan, reset, Decision, EpisodeContext, OffloadingPlan, SimError, SystemProfile};
use proptest::prelude::*;

use common::{random_bits, random_config, random_graph, reference_latency, Res, ReferenceModel};

fn plan_of(bits: &[u8]) -> OffloadingPlan {
    OffloadingPlan::from_bits(bits).unwrap()
}

#[test]
fn two_equal_offloaded_tasks_share_the_uplink() {
    let task = |id| Task { id, cycles: 1e7, data_up: 1e4, data_do: 1e4 };
    let g = TaskGraph::new(vec![task(0), task(1)], vec![]).unwrap();
    let p = SystemProfile::reference(10.0);
    let seq = compute_ranks(&g, &p);
    let (_, schedule) = evaluate_plan(&g, &seq, &plan_of(&[1, 1]), &p).unwrap();
    let t_up = 1e4 * 8.0 / 10e6;
    let second = seq.order[1];
    assert!((schedule.slots[second].ft_up - 2.0 * t_up).abs() < 1e-15);
}

#[test]
fn serial_local_chain() {
    let tasks = (0..3).map(|id| Task { id, cycles: 1e7, data_up: 5e3, data_do: 5e3 }).collect();
    let g = TaskGraph::new(tasks, vec![(0, 1), (1, 2)]).unwrap();
    let p = SystemProfile::reference(10.0);
    let seq = compute_ranks(&g, &p);
    let (al, _) = evaluate_plan(&g, &seq, &plan_of(&[0, 0, 0]), &p).unwrap();
    assert!((al - 0.030).abs() < 1e-15);
}

#[test]
fn incomplete_plan_rejected() {
    let g = random_graph(1, 6);
    let p = SystemProfile::reference(10.0);
    let seq = compute_ranks(&g, &p);
    let err = evaluate_plan(&g, &seq, &OffloadingPlan::default(), &p).unwrap_err();
    assert!(matches!(err, SimError::IncompletePlan { .. }));
}

#[test]
fn reset_is_stateless() {
    let cfg = random_config(9, 8);
    let ctx = Arc::new(EpisodeContext::new(dagoffload::generator::generate_dag(&cfg).unwrap(), SystemProfile::reference(7.0), &cfg.embedding_bounds(), 12));
    let fresh = reset(ctx.clone());
    let mut used = reset(ctx.clone());
    while !used.is_done() {
        used.step_mut(Decision::Offload).unwrap();
    }
    assert!(matches!(used.step_mut(Decision::Local), Err(SimError::EpisodeFinished)));
    assert_eq!(reset(ctx), fresh);
    assert_eq!(fresh.latency(), 0.0);
    assert_eq!(fresh.cursor(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluate_plan_matches_reference(seed in 0u64..1_000_000, rate in 4.0f64..22.0) {
        let g = random_graph(seed, 12);
        let p = SystemProfile::reference(rate);
        let seq = compute_ranks(&g, &p);
        let bits = random_bits(seed, g.len());
        let (al, _) = evaluate_plan(&g, &seq, &plan_of(&bits), &p).unwrap();
        prop_assert_eq!(al, reference_latency(&g, &seq, &bits, &p));
    }

    #[test]
    fn stepping_telescopes_to_latency(seed in 0u64..1_000_000, rate in 4.0f64..22.0) {
        let cfg = random_config(seed, 14);
        let g = dagoffload::generator::generate_dag(&cfg).unwrap();
        let ctx = Arc::new(EpisodeContext::new(g, SystemProfile::reference(rate), &cfg.embedding_bounds(), 12));
        let bits = random_bits(seed, ctx.len());
        let mut s = reset(ctx.clone());
        let mut sum = 0.0;
        for &b in &bits {
            let r = s.step_mut(Decision::from_bit(b).unwrap())?;
            prop_assert!(r <= 0.0);
            sum += r;
        }
        let (al, schedule) = evaluate_plan(&ctx.graph, &ctx.seq, &plan_of(&bits), &ctx.profile).unwrap();
        prop_assert_eq!(s.latency(), al);
        prop_assert_eq!(&s.schedule, &schedule);
        prop_assert!((sum + al).abs() < 1e-9);
    }

    #[test]
    fn latency_does_not_grow_with_rate(seed in 0u64..1_000_000) {
        let g = random_graph(seed, 12);
        let bits = random_bits(seed, g.len());
        let seq = compute_ranks(&g, &SystemProfile::reference(10.0));
        let mut last = f64::INFINITY;
        for rate in [4.0, 7.0, 10.0, 13.0, 16.0, 19.0, 22.0] {
            let al = evaluate_plan(&g, &seq, &plan_of(&bits), &SystemProfile::reference(rate)).unwrap().0;
            prop_assert!(al <= last);
            last = al;
        }
    }

    #[test]
    fn schedule_respects_precedence_and_serialization(seed in 0u64..1_000_000, rate in 4.0f64..22.0) {
        let g = random_graph(seed, 12);
        let p = SystemProfile::reference(rate);
        let seq = compute_ranks(&g, &p);
        let bits = random_bits(seed, g.len());
        let (_, s) = evaluate_plan(&g, &seq, &plan_of(&bits), &p).unwrap();
        let mut model = ReferenceModel::new(&g, &seq, &bits, &p);
        for (k, &t) in seq.order.iter().enumerate() {
            let slot = &s.slots[t];
            prop_assert_eq!(slot.ft_ud, model.ft(t, Res::Device));
            prop_assert_eq!(slot.ft_do, model.ft(t, Res::Downlink));
            if bits[k] == 1 {
                prop_assert_eq!(slot.ft_ud, 0.0);
                prop_assert!(0.0 < slot.ft_up && slot.ft_up <= slot.ft_ec && slot.ft_ec <= slot.ft_do);
            } else {
                prop_assert!(slot.ft_ud > 0.0);
                prop_assert_eq!((slot.ft_up, slot.ft_ec, slot.ft_do), (0.0, 0.0, 0.0));
            }
            for &parent in g.parents(t) {
                let ps = &s.slots[parent];
                let done = ps.ft_ud.max(ps.ft_do);
                if bits[k] == 0 {
                    prop_assert!(slot.st_ud >= done);
                } else {
                    prop_assert!(slot.st_up >= ps.ft_ud.max(ps.ft_up));
                    prop_assert!(slot.st_ec >= ps.ft_ec);
                }
            }
        }
        // intervals on one resource never overlap
        let intervals = |f: &dyn Fn(usize) -> Option<(f64, f64)>| {
            let mut v: Vec<(f64, f64)> = (0..g.len()).filter_map(f).collect();
            v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            v.windows(2).all(|w| w[0].1 <= w[1].0)
        };
        let off = |t: usize| bits[seq.position[t]] == 1;
        prop_assert!(intervals(&|t| (!off(t)).then(|| (s.slots[t].st_ud, s.slots[t].ft_ud))));
        prop_assert!(intervals(&|t| off(t).then(|| (s.slots[t].st_up, s.slots[t].ft_up))));
        prop_assert!(intervals(&|t| off(t).then(|| (s.slots[t].st_ec, s.slots[t].ft_ec))));
        prop_assert!(intervals(&|t| off(t).then(|| (s.slots[t].st_do, s.slots[t].ft_do))));
    }

    #[test]
    fn all_local_ignores_rates(seed in 0u64..1_000_000, a in 1.0f64..50.0, b in 1.0f64..50.0) {
        let g = random_graph(seed, 12);
        let pa = SystemProfile::reference(a);
        let seq = compute_ranks(&g, &pa);
        let plan = OffloadingPlan::all(g.len(), Decision::Local);
        let la = evaluate_plan(&g, &seq, &plan, &pa).unwrap().0;
        let lb = evaluate_plan(&g, &seq, &plan, &SystemProfile::reference(b)).unwrap().0;
        prop_assert_eq!(la, lb);
    }
}
