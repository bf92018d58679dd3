use softgrad::contact::FrictionRegime;
use softgrad::forward::{characteristic_force, forward_step, residual, rollout, ForwardConfig};
use softgrad::ident::scenes;
use softgrad::{assemble_system_matrix, predict, MaterialParams, Scene, SimState};

fn cfg() -> ForwardConfig {
    ForwardConfig::default()
}

#[test]
fn free_fall_matches_closed_form() {
    let mut s = Scene::particles(vec![[0.0, 0.0, 1.0]], vec![2.0], 0.01, 1e-6);
    s.initial_velocities = Some(vec![[1.0, 0.0, 0.0]]);
    let sys = assemble_system_matrix(&s).unwrap();
    let st = s.initial_state();
    let (next, rep) = forward_step(&s, &sys, &st, &cfg()).unwrap();
    assert!(rep.converged);
    let expect = [0.01, 0.0, 1.0 - 9.8e-4];
    for (x, e) in next.q.iter().zip(expect) {
        assert!((x - e).abs() < 1e-15, "{:?}", next.q);
    }
}

#[test]
fn resting_particle_balances_gravity() {
    let s = scenes::particle_block(1.0, 0.0, 1e-6);
    let sys = assemble_system_matrix(&s).unwrap();
    let ro = rollout(&s, &sys, &s.initial_state(), 50, &cfg()).unwrap();
    let c = &ro.caches.last().unwrap().contacts[0];
    // λ_n δ_n = ε² and λ_n ≈ m g at rest.
    assert!((c.lambda[0] * c.delta[0] - 0.5e-6).abs() < 1e-9 * 0.5e-6 * 10.0);
    assert!((c.lambda[0] - 9.8).abs() < 1e-6, "{}", c.lambda[0]);
    let z = ro.final_state().q[2];
    assert!((z - 0.5e-6 / 9.8).abs() < 1e-12, "{z}");
}

#[test]
fn zero_steps_returns_initial_state() {
    let s = scenes::cube(1, MaterialParams::arap(1e3));
    let sys = assemble_system_matrix(&s).unwrap();
    let ro = rollout(&s, &sys, &s.initial_state(), 0, &cfg()).unwrap();
    assert_eq!(ro.states.len(), 1);
    assert!(ro.caches.is_empty());
}

#[test]
fn contact_free_momentum_matches_impulse() {
    let mut s = scenes::cube(1, MaterialParams::neohookean(1e5, 0.3));
    s.fext[0] = 0.3;
    s.fext[13] = -0.2;
    let sys = assemble_system_matrix(&s).unwrap();
    let mut st = s.initial_state();
    st.v.iter_mut().enumerate().for_each(|(i, v)| *v = 0.05 * ((i * 7 % 5) as f64 - 2.0));
    let steps = 20;
    let ro = rollout(&s, &sys, &st, steps, &cfg()).unwrap();
    let mom = |st: &SimState| -> [f64; 3] {
        let mut p = [0.0; 3];
        for (i, v) in st.v.iter().enumerate() {
            p[i % 3] += s.masses[i / 3] * v;
        }
        p
    };
    let (p0, p1) = (mom(&st), mom(ro.final_state()));
    let m = s.total_mass();
    for k in 0..3 {
        let f: f64 = (0..s.n_verts()).map(|v| s.fext[3 * v + k]).sum::<f64>() + m * s.gravity[k];
        let expect = p0[k] + steps as f64 * s.h * f;
        assert!((p1[k] - expect).abs() <= 1e-6 * expect.abs().max(m * 1e-2), "axis {k}: {} vs {expect}", p1[k]);
    }
}

#[test]
fn converged_steps_satisfy_the_tolerance() {
    let s = scenes::hanging_sheet(3, 3, MaterialParams::neohookean(1e3, 0.3));
    let sys = assemble_system_matrix(&s).unwrap();
    let ro = rollout(&s, &sys, &s.initial_state(), 10, &cfg()).unwrap();
    let scale = s.h * s.h * characteristic_force(&s);
    for (t, c) in ro.caches.iter().enumerate() {
        assert!(c.final_residual <= 1e-9, "step {t}: {}", c.final_residual);
        let st = SimState { q: c.q_bar.clone(), v: c.v_bar.clone(), step_index: t };
        let (r, _, _) = residual(&s, &sys, &c.q, &c.q_bar, &predict(&s, &st)).unwrap();
        let rn = r.iter().fold(0.0f64, |a, x| a.max(x.abs())) / scale;
        assert!(rn <= 1e-9);
    }
}

#[test]
fn replay_is_bit_identical() {
    let s = scenes::bar(2, MaterialParams::neohookean(1e5, 0.3));
    let sys = assemble_system_matrix(&s).unwrap();
    let ro = rollout(&s, &sys, &s.initial_state(), 5, &cfg()).unwrap();
    let (again, _) = forward_step(&s, &sys, &ro.states[3], &cfg()).unwrap();
    assert_eq!(again.q, ro.states[4].q);
    assert_eq!(again.v, ro.states[4].v);
}

#[test]
fn pushed_block_creeps_by_the_smoothing_estimate() {
    // Steady creep per step ε²/(μλ_n − F) on the sticking side; the
    // transient decays at a rate of about (h²/m)·ε²/r² per step.
    let s = scenes::friction_block(0.101, 1.0);
    let sys = assemble_system_matrix(&s).unwrap();
    let ro = rollout(&s, &sys, &s.initial_state(), 800, &cfg()).unwrap();
    let c = &ro.caches.last().unwrap().contacts[0];
    assert_eq!(c.regime, FrictionRegime::Sliding);
    let per_step = ro.states[800].q[0] - ro.states[799].q[0];
    let expect = 0.5e-6 / (0.101 * 9.8 - 0.98);
    assert!((per_step - expect).abs() < 1e-3 * expect, "{per_step} vs {expect}");
}

fn cube_on_plane(tilt: f64, mu: f64, vx: f64) -> Scene {
    let mut s = scenes::cube(2, MaterialParams::neohookean(1e5, 0.3));
    s.vertices.iter_mut().for_each(|v| v[2] += 0.03 + 0.2 * tilt);
    s.colliders.push(softgrad::Collider::half_space([tilt, 0.0, 1.0], 0.0, mu));
    s.initial_velocities = Some(vec![[vx, 0.0, 0.0]; s.n_verts()]);
    s
}

#[test]
fn high_friction_impact_converges() {
    // Many sliding contacts land far from their solution on impact; plain
    // Newton crawls here without the smoothing continuation.
    let s = cube_on_plane(0.0, 1.0, 0.0);
    let sys = assemble_system_matrix(&s).unwrap();
    let ro = rollout(&s, &sys, &s.initial_state(), 12, &cfg()).unwrap();
    assert!(ro.caches.iter().any(|c| !c.contacts.is_empty()));
}

#[test]
fn tilted_impact_stops_at_tolerance_or_rounding_noise() {
    let s = cube_on_plane(0.6, 1.0, 0.5);
    let sys = assemble_system_matrix(&s).unwrap();
    let ro = rollout(&s, &sys, &s.initial_state(), 30, &cfg()).unwrap();
    for c in &ro.caches {
        match c.noise_floor {
            None => assert!(c.final_residual <= 1e-9),
            Some(noise) => {
                assert!(noise > 1e-9, "floor acceptance used below the tolerance");
                assert!(c.final_residual <= 4.0 * noise);
            }
        }
    }
}
