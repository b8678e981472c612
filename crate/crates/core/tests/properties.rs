use std::sync::Arc;

use proptest::prelude::*;

use panelbench::episode::{ActionKind, EpisodeMeta, EpisodeRecord, EpisodeStep};
use panelbench::geometry::{norm, Vec3};
use panelbench::kinematics::forward_kinematics;
use panelbench::sim::{Action, Env, Image, Phase, PerturbSpec, SceneId, SceneSpec};
use panelbench::teleop::{quantize_angle, quantize_tenths, ClientMessage};
use panelbench::{CartesianDelta, ChainSpec, JointState};

fn small_vec3(r: f64) -> impl Strategy<Value = Vec3<f64>> {
    [-r..r, -r..r, -r..r]
}

fn cartesian(r: f64) -> impl Strategy<Value = CartesianDelta> {
    (small_vec3(r), small_vec3(r), -1.0..1.0f64).prop_map(|(d_pos, d_rot, g)| CartesianDelta { d_pos, d_rot, g })
}

fn step_strategy(n_joints: usize, frames: bool) -> impl Strategy<Value = EpisodeStep> {
    let image = (1usize..5, 1usize..5).prop_flat_map(|(w, h)| prop::collection::vec(any::<u8>(), w * h * 3).prop_map(move |data| Image { width: w, height: h, data }));
    let view = move || prop::option::of(image.clone()).prop_map(move |v| v.filter(|_| frames));
    (
        prop::collection::vec(-4.0f32..4.0, n_joints),
        prop::array::uniform6(-50.0f32..50.0),
        prop::array::uniform8(-2.0f32..2.0),
        prop::array::uniform7(-1.0f32..1.0),
        prop::option::of(-5.0f32..0.0),
        view(),
        view(),
    )
        .prop_map(|(q, f, s, action, reward, agent_view, wrist_view)| EpisodeStep { q, f, s, action, reward, agent_view, wrist_view })
}

fn record_strategy() -> impl Strategy<Value = EpisodeRecord> {
    (2usize..8, any::<bool>()).prop_flat_map(|(n, frames)| {
        (
            prop::collection::vec(step_strategy(n, frames), 1..20),
            "[a-z][a-z ]{0,39}",
            any::<bool>(),
            any::<u64>(),
            0.0f32..0.05,
            prop::sample::select(vec![20.0f32, 100.0]),
            prop::sample::select(vec![ActionKind::Cartesian, ActionKind::JointDelta, ActionKind::SliderTarget]),
            "[a-z-]{1,12}",
        )
            .prop_map(|(steps, instruction, desk, seed, perturb, hz, action_kind, operator)| EpisodeRecord {
                metadata: EpisodeMeta { operator, duration_s: steps.len() as f32 / hz },
                steps,
                instruction,
                scene_id: if desk { SceneId::Desk } else { SceneId::Ground },
                seed,
                perturb,
                hz,
                action_kind,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fk_orientation_stays_unit(q in prop::collection::vec(-3.0f64..3.0, 6)) {
        let chain = ChainSpec::ur5e_like();
        let pose = forward_kinematics(&chain, &JointState::new(q)).unwrap();
        prop_assert!((pose.orientation.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn clamp_keeps_joints_in_limits(q in prop::collection::vec(-10.0f64..10.0, 6)) {
        let chain = ChainSpec::ur5e_like();
        let mut q = q;
        chain.clamp(&mut q);
        for (v, (lo, hi)) in q.iter().zip(chain.limits()) {
            prop_assert!(*lo <= *v && *v <= *hi);
        }
    }

    #[test]
    fn capped_delta_respects_caps(d in cartesian(1.0), cp in 1e-4f64..0.1, cr in 1e-4f64..0.5) {
        let c = d.capped(cp, cr);
        prop_assert!(norm(c.d_pos) <= cp * (1.0 + 1e-12));
        prop_assert!(norm(c.d_rot) <= cr * (1.0 + 1e-12));
    }

    #[test]
    fn slider_quantization_is_exact(angle in -4.0f64..4.0, lo in -3.2f64..-0.2, hi in 0.2f64..3.2) {
        let k = quantize_tenths(angle, lo, hi).unwrap();
        let a = quantize_angle(angle, lo, hi).unwrap();
        prop_assert!(lo <= a && a <= hi);
        prop_assert!((a * 10.0 - k as f64).abs() < 1e-12);
        let nearest = (angle * 10.0).round() / 10.0;
        if nearest >= lo && nearest <= hi {
            prop_assert!((a - angle).abs() <= 0.05 + 1e-12);
        } else if angle >= lo && angle <= hi {
            prop_assert!((a - angle).abs() < 0.1);
        }
    }

    #[test]
    fn episode_round_trip(rec in record_strategy()) {
        let bytes = rec.to_bytes().unwrap();
        let back = EpisodeRecord::from_bytes(&bytes, "prop").unwrap();
        prop_assert_eq!(&back, &rec);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn wire_messages_round_trip(d in cartesian(0.01), joint in 0usize..6, angle in -3.0f64..3.0, g in prop::option::of(-1.0f64..1.0)) {
        let msgs = [
            ClientMessage::Key { dx: d.d_pos[0], dy: d.d_pos[1], dz: d.d_pos[2], drx: d.d_rot[0], dry: d.d_rot[1], drz: d.d_rot[2], g: d.g },
            ClientMessage::Slider { joint, angle, g },
            ClientMessage::Record { on: g.is_some() },
        ];
        for m in msgs {
            let line = m.to_line();
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(ClientMessage::parse(&line).unwrap(), m);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn env_is_deterministic_and_success_nested(seed in any::<u64>(), actions in prop::collection::vec(cartesian(0.02), 1..30)) {
        let scene = Arc::new(SceneSpec::desk());
        let run = || {
            let mut env = Env::new(scene.clone());
            env.reset(Some(&PerturbSpec::default()), seed).unwrap();
            let mut out = vec![env.observe_full()];
            for a in &actions {
                env.step(&Action::Cartesian(*a)).unwrap();
                out.push(env.observe_full());
                if env.check_success(Phase::Align) {
                    assert!(env.check_success(Phase::Place));
                }
            }
            out
        };
        prop_assert_eq!(run(), run());
    }
}
