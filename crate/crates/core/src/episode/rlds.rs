//! Export to an RLDS-style steps-of-dicts layout (JSON) and flat CSV.
//!
//! JSON mapping, one object per episode:
//!
//! ```text
//! episode_metadata: { scene, seed, perturb, hz, action_kind, operator, duration_s }
//! steps[i]:
//!   is_first, is_last, is_terminal      booleans (is_terminal = is_last)
//!   language_instruction                episode instruction
//!   observation.joint_state             q
//!   observation.force_torque            f
//!   observation.object_state            s
//!   observation.image                   base64 PPM of the agent view, if stored
//!   observation.wrist_image             base64 PPM of the wrist view, if stored
//!   action                              7-vector
//!   reward                              number or null
//!   discount                            1.0
//! ```

use base64::Engine;
use serde_json::{json, Value};

use super::EpisodeRecord;

pub fn to_rlds_json(rec: &EpisodeRecord) -> Value {
    let n = rec.steps.len();
    let b64 = base64::engine::general_purpose::STANDARD;
    let steps: Vec<Value> = rec
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut obs = json!({
                "joint_state": s.q,
                "force_torque": s.f,
                "object_state": s.s,
            });
            if let Some(img) = &s.agent_view {
                obs["image"] = Value::String(b64.encode(img.to_ppm()));
            }
            if let Some(img) = &s.wrist_view {
                obs["wrist_image"] = Value::String(b64.encode(img.to_ppm()));
            }
            json!({
                "is_first": i == 0,
                "is_last": i + 1 == n,
                "is_terminal": i + 1 == n,
                "language_instruction": rec.instruction,
                "observation": obs,
                "action": s.action,
                "reward": s.reward,
                "discount": 1.0,
            })
        })
        .collect();
    json!({
        "episode_metadata": {
            "scene": rec.scene_id.name(),
            "seed": rec.seed,
            "perturb": rec.perturb,
            "hz": rec.hz,
            "action_kind": rec.action_kind.name(),
            "operator": rec.metadata.operator,
            "duration_s": rec.metadata.duration_s,
        },
        "steps": steps,
    })
}

/// One row per step: `t, q.., f.., s.., action.., reward`.
pub fn to_csv(rec: &EpisodeRecord) -> String {
    let nj = rec.n_joints();
    let mut header = vec!["t".to_string()];
    header.extend((0..nj).map(|i| format!("q{i}")));
    header.extend(["fx", "fy", "fz", "tx", "ty", "tz"].map(String::from));
    header.extend(["px", "py", "pz", "qw", "qx", "qy", "qz", "attached"].map(String::from));
    header.extend(["a0", "a1", "a2", "a3", "a4", "a5", "g"].map(String::from));
    header.push("reward".into());
    let mut out = header.join(",");
    out.push('\n');
    for (t, s) in rec.steps.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(s.q.iter().chain(&s.f).chain(&s.s).chain(&s.action).map(|v| v.to_string()));
        row.push(s.reward.map(|r| r.to_string()).unwrap_or_default());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::tests::sample;

    #[test]
    fn json_has_step_dicts_and_flags() {
        let rec = sample(4, true);
        let v = to_rlds_json(&rec);
        let steps = v["steps"].as_array().unwrap();
        assert_eq!(steps.len(), 4);
        assert_eq!(steps[0]["is_first"], true);
        assert_eq!(steps[3]["is_last"], true);
        assert_eq!(steps[1]["is_last"], false);
        assert_eq!(steps[0]["observation"]["joint_state"].as_array().unwrap().len(), 6);
        assert!(steps[0]["observation"]["image"].is_string());
        assert!(steps[1]["observation"].get("image").is_none());
        assert_eq!(steps[0]["reward"], json!(-0.0));
        assert!(steps[1]["reward"].is_null());
        assert_eq!(v["episode_metadata"]["scene"], "desk");
    }

    #[test]
    fn csv_shape() {
        let rec = sample(3, false);
        let csv = to_csv(&rec);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        let cols = lines[0].split(',').count();
        assert_eq!(cols, 1 + 6 + 6 + 8 + 7 + 1);
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
    }
}
