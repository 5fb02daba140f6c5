mod common;

use std::collections::BTreeMap;

use bottleneck_marl::env::observation::{FRAME_FEATURES, REL_X_SCALE, SPEED_SCALE};
use bottleneck_marl::env::{lane_stats, Env, ScenarioConfig, TerminalCause, Transition};
use bottleneck_marl::psar::RefinementTag;
use bottleneck_marl::sim::{MapKind, Vehicle, WorldState};
use bottleneck_marl::{Action, Error, N_ACTIONS};
use common::{cav, env_with, hdv, straight, world};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn all(env: &Env, a: Action) -> BTreeMap<u32, Action> {
    env.agents().into_iter().map(|id| (id, a)).collect()
}

#[test]
fn lane_stats_examples() {
    let net = straight(4);
    let w = world(
        &net,
        vec![
            cav(&net, 0, 0, 100.0, 10.0),
            cav(&net, 1, 0, 200.0, 20.0),
            cav(&net, 2, 1, 100.0, 10.0),
            hdv(&net, 3, 1, 200.0, 10.0),
            hdv(&net, 4, 1, 300.0, 10.0),
            hdv(&net, 5, 1, 400.0, 10.0),
        ],
    );
    let s = lane_stats(&w, 0);
    assert_eq!((s.n, s.density, s.mean_speed, s.penetration), (2, 2.0 / 1300.0, 15.0, 1.0));
    assert_eq!(lane_stats(&w, 1).penetration, 0.25);
    let e = lane_stats(&w, 3);
    assert_eq!((e.n, e.density, e.mean_speed, e.penetration), (0, 0.0, 0.0, 0.0));
}

#[test]
fn lone_cav_observation() {
    let net = straight(4);
    let env = env_with(&net, vec![cav(&net, 0, 1, 100.0, 15.0)]);
    let o = env.observation(0).unwrap();
    assert_eq!(o.mask(), [false; 6]);
    assert!(o.neighbors.iter().all(Option::is_none));
    let expect = [100.0 / 1300.0, net.lane_center(1) / 12.8, 15.0 / 25.0, 0.0, 1.0 / 3.0, 1.0, 0.0, 0.0];
    for (a, b) in o.self_state.iter().zip(expect) {
        assert!((a - b).abs() < 1e-15, "{:?}", o.self_state);
    }
    assert_eq!(o.ego_prev_action, None);
    assert_eq!(o.action_memory, [0.0; 2 * N_ACTIONS]);
    // the ego's own latest frame is itself: zero relatives, present
    let last = &o.ego_history[o.ego_history.len() - FRAME_FEATURES..];
    assert_eq!(last, &[0.0, 0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn leader_at_fifteen_metres() {
    let net = straight(4);
    let env = env_with(&net, vec![cav(&net, 0, 1, 100.0, 15.0), hdv(&net, 1, 1, 115.0, 15.0)]);
    let o = env.observation(0).unwrap();
    assert_eq!(o.mask(), [true, false, false, false, false, false]);
    let n = o.neighbors[0].as_ref().unwrap();
    assert_eq!((n.id, n.dx, n.dv, n.dy), (1, 15.0, 0.0, 0.0));
    assert_eq!(&n.history[n.history.len() - FRAME_FEATURES..], &[15.0 / REL_X_SCALE, 0.0, 0.0, 0.0, 1.0]);
    assert_eq!(n.prev_action, None);
}

/// Rebuilds the parts of an observation that come straight from raw state.
fn rederive(w: &WorldState, id: u32, o: &bottleneck_marl::env::Observation) {
    let ego = w.vehicle(id).unwrap();
    let lanes = [Some(ego.lane), Some(ego.lane + 1), ego.lane.checked_sub(1)];
    for (k, lane) in lanes.iter().enumerate() {
        for lead in [true, false] {
            let slot = 2 * k + usize::from(!lead);
            let best = w
                .vehicles
                .iter()
                .filter(|v| v.id != id && Some(v.lane) == *lane && (v.x > ego.x) == lead)
                .min_by(|a, b| (a.x - ego.x).abs().total_cmp(&(b.x - ego.x).abs()).then(a.id.cmp(&b.id)));
            match (best, &o.neighbors[slot]) {
                (None, None) => {}
                (Some(v), Some(n)) => {
                    assert_eq!(n.id, v.id);
                    assert_eq!((n.dx, n.dy, n.dv, n.theta, n.kind), (v.x - ego.x, v.y - ego.y, v.v - ego.v, v.theta, v.kind));
                    let depth = w.history.len();
                    let frames: Vec<f64> = w
                        .history
                        .iter()
                        .flat_map(|f| match f.states.get(&v.id) {
                            Some(s) => vec![(s.x - ego.x) / 50.0, (s.y - ego.y) / 3.2, (s.v - ego.v) / 25.0, s.theta, 1.0],
                            None => vec![0.0; 5],
                        })
                        .collect();
                    assert_eq!(&n.history[n.history.len() - 5 * depth..], &frames[..]);
                }
                (b, n) => panic!("slot {slot}: expected {:?}, got {:?}", b.map(|v| v.id), n.as_ref().map(|n| n.id)),
            }
        }
        let block = o.lane_stats[k];
        match lane.filter(|&l| w.network.lane_exists(l, ego.x)) {
            None => assert_eq!(block, [0.0; 5]),
            Some(l) => {
                let inl: Vec<&Vehicle> = w.vehicles.iter().filter(|v| v.lane == l).collect();
                let n = inl.len() as f64;
                let (mean, pen) = if inl.is_empty() {
                    (0.0, 0.0)
                } else {
                    (inl.iter().map(|v| v.v).sum::<f64>() / n, inl.iter().filter(|v| v.is_cav()).count() as f64 / n)
                };
                let dens = if inl.is_empty() { 0.0 } else { n / w.network.lane_length(l) };
                let want = [1.0, n / w.initial_count as f64, dens * 7.0, mean / SPEED_SCALE, pen];
                for (a, b) in block.iter().zip(want) {
                    assert!((a - b).abs() < 1e-12, "lane {l}: {block:?} vs {want:?}");
                }
            }
        }
    }
}

#[test]
fn observations_match_raw_state_through_an_episode() {
    let cfg = ScenarioConfig { map: MapKind::Reduction50, ..ScenarioConfig::default() };
    let mut env = Env::reset(&cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..25 {
        for id in env.agents() {
            rederive(&env.world, id, &env.observation(id).unwrap());
        }
        let acts: BTreeMap<u32, Action> = env.agents().into_iter().map(|id| (id, Action::ALL[rng.random_range(0..5)])).collect();
        let d = env.refine(&acts).unwrap();
        if env.step(&d, 1.0).unwrap().done {
            break;
        }
    }
}

#[test]
fn far_vehicles_do_not_change_an_observation() {
    let net = straight(4);
    let base = vec![
        cav(&net, 0, 0, 300.0, 15.0),
        hdv(&net, 1, 0, 330.0, 15.0),
        hdv(&net, 2, 0, 700.0, 12.0),
        hdv(&net, 3, 1, 280.0, 14.0),
        hdv(&net, 4, 3, 310.0, 20.0),
    ];
    let o = env_with(&net, base.clone()).observation(0).unwrap();
    let mut moved = base.clone();
    moved[2].x = 900.0; // beyond the leader, same lane, same speed
    moved[4].x = 50.0; // two lanes over
    moved[4].v = 3.0;
    assert_eq!(env_with(&net, moved).observation(0).unwrap(), o);
    let mut near = base;
    near[1].x = 331.0;
    assert_ne!(env_with(&net, near).observation(0).unwrap(), o);
}

#[test]
fn padded_slots_are_zero_in_the_flat_encoding() {
    let cfg = ScenarioConfig::default();
    let depth = cfg.sim.history_depth;
    let block = 2 + depth * FRAME_FEATURES + N_ACTIONS;
    for seed in 0..5 {
        let env = Env::reset(&cfg, seed).unwrap();
        for o in env.observations().unwrap() {
            let flat = o.flat(depth);
            let head = o.context().len() + o.ego_history.len() + o.action_memory.len();
            assert_eq!(flat.len(), head + 6 * block);
            for (k, m) in o.mask().iter().enumerate() {
                let b = &flat[head + k * block..head + (k + 1) * block];
                if *m {
                    assert_eq!(b[0], 1.0);
                } else {
                    assert!(b.iter().all(|&x| x == 0.0));
                }
            }
        }
    }
}

#[test]
fn remain_on_free_road_keeps_speed() {
    let net = straight(4);
    let mut env = env_with(&net, vec![cav(&net, 0, 1, 100.0, 15.0)]);
    let t = env.step_actions(&all(&env, Action::Remain), 1.0).unwrap();
    let v = env.world.vehicle(0).unwrap();
    assert!((v.v - 15.0).abs() < 1e-9);
    assert!((v.x - 115.0).abs() < 1e-9);
    assert!(!t.done && (t.sim_time - 1.0).abs() < 1e-12);
}

#[test]
fn accelerate_is_capped_at_the_speed_limit() {
    let net = straight(4);
    let mut env = env_with(&net, vec![cav(&net, 0, 1, 100.0, 25.0)]);
    env.step_actions(&all(&env, Action::Accelerate), 1.0).unwrap();
    assert_eq!(env.world.vehicle(0).unwrap().v, 25.0);
    let mut env = env_with(&net, vec![cav(&net, 0, 1, 100.0, 10.0)]);
    env.step_actions(&all(&env, Action::Accelerate), 1.0).unwrap();
    assert!((env.world.vehicle(0).unwrap().v - 12.0).abs() < 1e-9);
    env.step_actions(&all(&env, Action::Decelerate), 1.0).unwrap();
    assert!((env.world.vehicle(0).unwrap().v - 9.0).abs() < 1e-9);
}

#[test]
fn cav_collision_ends_the_episode() {
    let net = straight(4);
    let mut env = env_with(&net, vec![cav(&net, 0, 1, 100.0, 20.0), hdv(&net, 1, 1, 115.0, 0.0)]);
    let t = env.step_actions(&all(&env, Action::Remain), 1.0).unwrap();
    assert!(t.done && env.is_done());
    assert_eq!(t.cause, Some(TerminalCause::Collision));
    assert_eq!(t.collisions, vec![(0, 1)]);
    assert_eq!(t.reward.r_done, env.cfg.reward.r_collision);
    assert!(t.sim_time < 1.0, "simulation stops at the colliding substep");
    assert!(matches!(env.step_actions(&BTreeMap::new(), 1.0), Err(Error::Contract(_))));
}

#[test]
fn psar_brakes_for_a_stopped_car() {
    let net = straight(4);
    // a broken-down car that cannot leave its lane
    let mut stopped = hdv(&net, 1, 1, 150.0, 0.0);
    stopped.style.as_mut().unwrap().idm.a_max = 1e-9;
    stopped.cooldown = 1e9;
    let run = |psar: bool| {
        let mut env = env_with(&net, vec![cav(&net, 0, 1, 100.0, 20.0), stopped.clone()]);
        env.cfg.psar_enabled = psar;
        let mut tags = Vec::new();
        while !env.is_done() && env.t() < 20 {
            let d = env.refine(&all(&env, Action::Accelerate)).unwrap();
            tags.push(d[&0].refinement.tag);
            env.step(&d, 1.0).unwrap();
        }
        (tags, env.cause(), env.world.sim_time)
    };
    let (tags, _, t_psar) = run(true);
    let (raw, cause, t_raw) = run(false);
    assert!(tags.contains(&RefinementTag::ForceBrake));
    assert!(raw.iter().all(|t| *t == RefinementTag::None));
    assert_eq!(cause, Some(TerminalCause::Collision));
    assert!(t_psar > t_raw);
}

#[test]
fn decisions_must_match_active_cavs() {
    let net = straight(4);
    let env = env_with(&net, vec![cav(&net, 0, 1, 100.0, 15.0), cav(&net, 1, 2, 100.0, 15.0), hdv(&net, 2, 0, 100.0, 15.0)]);
    let partial = BTreeMap::from([(0, Action::Remain)]);
    assert!(matches!(env.clone().step_actions(&partial, 1.0), Err(Error::Contract(_))));
    let to_hdv = BTreeMap::from([(0, Action::Remain), (1, Action::Remain), (2, Action::Remain)]);
    assert!(matches!(env.clone().step_actions(&to_hdv, 1.0), Err(Error::Contract(_))));
    let ghost = BTreeMap::from([(0, Action::Remain), (1, Action::Remain), (9, Action::Remain)]);
    assert!(matches!(env.clone().step_actions(&ghost, 1.0), Err(Error::Contract(_))));
    assert!(matches!(env.observation(2), Err(Error::Contract(_))));
}

#[test]
fn all_cavs_leaving_pays_the_bonus_once() {
    let net = straight(4);
    let mut env = env_with(&net, vec![cav(&net, 0, 1, 1290.0, 20.0), hdv(&net, 1, 0, 500.0, 20.0)]);
    let t = env.step_actions(&all(&env, Action::Remain), 1.0).unwrap();
    assert_eq!(t.cause, Some(TerminalCause::AllExited));
    assert_eq!(t.exited, vec![0]);
    assert_eq!(t.reward.r_done, env.cfg.reward.r_done);
    assert!(t.reward.ids.is_empty());
    assert!(env.step_actions(&BTreeMap::new(), 1.0).is_err());
}

#[test]
fn horizon_truncates() {
    let cfg = ScenarioConfig { horizon: 3, ..ScenarioConfig::desk_scale() };
    let mut env = Env::reset(&cfg, 0).unwrap();
    let mut last = None;
    for _ in 0..3 {
        last = Some(env.step_actions(&all(&env, Action::Remain), 1.0).unwrap());
    }
    let t = last.unwrap();
    assert_eq!((t.t, t.done, t.cause), (3, true, Some(TerminalCause::Horizon)));
    assert_eq!(t.reward.r_done, 0.0);
}

#[test]
fn action_memory_carries_proposed_and_executed() {
    let net = straight(4);
    let mut env = env_with(&net, vec![cav(&net, 0, 1, 100.0, 20.0), hdv(&net, 1, 1, 118.0, 10.0), cav(&net, 2, 2, 90.0, 15.0)]);
    let d = env.refine(&BTreeMap::from([(0, Action::Accelerate), (2, Action::Remain)])).unwrap();
    assert_eq!((d[&0].proposed, d[&0].executed), (Action::Accelerate, Action::Decelerate));
    env.step(&d, 1.0).unwrap();
    let o = env.observation(0).unwrap();
    let mut want = [0.0; 2 * N_ACTIONS];
    want[Action::Accelerate.index()] = 1.0;
    want[N_ACTIONS + Action::Decelerate.index()] = 1.0;
    assert_eq!(o.action_memory, want);
    assert_eq!(o.ego_prev_action, Some(Action::Decelerate));
    // the neighbouring CAV sees the executed action
    let o2 = env.observation(2).unwrap();
    let seen = o2.neighbors.iter().flatten().find(|n| n.id == 0).unwrap();
    assert_eq!(seen.prev_action, Some(Action::Decelerate));
}

#[test]
fn psar_can_be_disabled() {
    let net = straight(4);
    let mut env = env_with(&net, vec![cav(&net, 0, 1, 100.0, 20.0), hdv(&net, 1, 1, 118.0, 10.0)]);
    env.cfg.psar_enabled = false;
    let d = env.refine(&BTreeMap::from([(0, Action::Accelerate)])).unwrap();
    assert_eq!((d[&0].executed, d[&0].refinement.tag), (Action::Accelerate, RefinementTag::None));
}

#[test]
fn without_cavs_the_env_is_the_simulator() {
    let cfg = ScenarioConfig { fleet: bottleneck_marl::sim::FleetConfig { penetration: 0.0, ..Default::default() }, ..Default::default() };
    let mut env = Env::reset(&cfg, 4).unwrap();
    let mut sim = env.world.clone();
    assert!(env.agents().is_empty());
    for _ in 0..120 {
        let t = env.step(&BTreeMap::new(), 1.0).unwrap();
        for _ in 0..cfg.decision_steps {
            sim.step(&BTreeMap::new()).unwrap();
        }
        assert_eq!(serde_json::to_string(&env.world).unwrap(), serde_json::to_string(&sim).unwrap());
        if t.done {
            assert_eq!(t.cause, Some(TerminalCause::AllExited));
            break;
        }
    }
    assert!(env.is_done());
}

#[test]
fn reset_is_deterministic() {
    let cfg = ScenarioConfig::default();
    let run = |seed| {
        let mut env = Env::reset(&cfg, seed).unwrap();
        let mut lines = Vec::new();
        while !env.is_done() {
            let d = env.refine(&all(&env, Action::Accelerate)).unwrap();
            env.step(&d, 0.5).unwrap().write_json_line(&mut lines).unwrap();
        }
        lines
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

#[test]
fn transitions_round_trip_as_json_lines() {
    let mut env = Env::reset(&ScenarioConfig::desk_scale(), 2).unwrap();
    let mut buf = Vec::new();
    let mut sent = Vec::new();
    for _ in 0..5 {
        let d = env.refine(&all(&env, Action::Left)).unwrap();
        let t = env.step(&d, 1.0).unwrap();
        t.write_json_line(&mut buf).unwrap();
        let done = t.done;
        sent.push(t);
        if done {
            break;
        }
    }
    let text = String::from_utf8(buf).unwrap();
    let back: Vec<Transition> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(back, sent);
}

#[test]
fn global_graph_edges_follow_neighbour_sets() {
    let net = straight(4);
    // ego in lane 1; two cars ahead in lane 2: the far one sees the ego as
    // its right follower, the ego only sees the near one
    let env = env_with(&net, vec![cav(&net, 0, 1, 100.0, 15.0), hdv(&net, 1, 2, 110.0, 15.0), hdv(&net, 2, 2, 120.0, 15.0)]);
    let g = env.global_state().unwrap();
    let idx = |id: u32| g.ids.iter().position(|&x| x == id).unwrap();
    assert!(g.edges.contains(&(idx(0), idx(2))));
    assert!(!g.edges.contains(&(idx(2), idx(0))));
    for seed in 0..5 {
        let env = Env::reset(&ScenarioConfig::default(), seed).unwrap();
        let g = env.global_state().unwrap();
        assert_eq!(g.nodes.len(), g.ids.len() * g.node_dim);
        let mut want = Vec::new();
        for (dst, &id) in g.ids.iter().enumerate() {
            for n in env.world.neighbor_slots(id).unwrap().into_iter().flatten() {
                want.push((g.ids.iter().position(|&x| x == n).unwrap(), dst));
            }
        }
        assert_eq!(g.edges, want);
        assert!(g.edges.iter().all(|(s, d)| s != d));
        for (k, id) in g.ids.iter().enumerate() {
            let flag = g.nodes[(k + 1) * g.node_dim - 1];
            assert_eq!(flag == 1.0, env.world.vehicle(*id).unwrap().is_cav());
        }
    }
}
