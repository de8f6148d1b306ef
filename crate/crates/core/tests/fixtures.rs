use std::path::PathBuf;

use serde_json::Value;
use strider_core::randomization::{DrConfig, EmbodimentVariant};
use strider_core::robot_model::{parse_model, validate_model, ParseOptions, RobotModel};
use strider_core::sim::{Actuation, PhysicsParams, World};
use strider_core::unified_space::build_mapping;

fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../robots").join(name)
}

fn fixture(name: &str) -> RobotModel {
    parse_model(&fixture_path(name), ParseOptions::default()).unwrap()
}

const FIXTURES: [&str; 3] = ["biped6.json", "quad12.json", "h1_like.json"];

#[test]
fn fixtures_are_valid_and_map() {
    for f in FIXTURES {
        let m = fixture(f);
        assert!(validate_model(&m).iter().all(|v| !v.is_error()), "{f}");
        let map = build_mapping(&m).unwrap();
        assert_eq!(map.n_phys(), m.n_joints());
    }
}

#[test]
fn biped_fixture_echoes_its_file() {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(fixture_path("biped6.json")).unwrap()).unwrap();
    let m = fixture("biped6.json");
    assert_eq!(m.name, doc["name"].as_str().unwrap());
    assert_eq!(m.n_joints(), 6);
    assert_eq!(m.nominal_base_height, doc["nominal_base_height"].as_f64().unwrap());
    let links = doc["links"].as_array().unwrap();
    assert_eq!(m.links.len(), links.len());
    for (l, d) in m.links.iter().zip(links) {
        assert_eq!(l.name, d["name"].as_str().unwrap());
        assert_eq!(l.length, d["length"].as_f64().unwrap());
        assert_eq!(l.mass, d["mass"].as_f64().unwrap());
        assert_eq!(l.com_offset, d["com_offset"].as_f64().unwrap());
        assert_eq!(l.inertia_com, d["inertia_com"].as_f64().unwrap());
    }
    for (j, d) in m.joints.iter().zip(doc["joints"].as_array().unwrap()) {
        assert_eq!(j.name, d["name"].as_str().unwrap());
        assert_eq!(j.kp, d["kp"].as_f64().unwrap());
        assert_eq!(j.kd, d["kd"].as_f64().unwrap());
        assert_eq!(j.tau_max, d["tau_max"].as_f64().unwrap());
        assert_eq!(j.offset, d["offset"].as_f64().unwrap());
    }
}

#[test]
fn heavy_biped_total_mass() {
    let m = fixture("h1_like.json");
    assert!((m.total_mass - 51.6).abs() < 1e-9, "{}", m.total_mass);
}

#[test]
fn fixtures_stand_twenty_seconds() {
    for f in FIXTURES {
        let m = fixture(f);
        let v = EmbodimentVariant::nominal(&m, &DrConfig::disabled());
        let w = World::<f64>::from_variant(&v, PhysicsParams::default());
        let mut s = w.pose_state(&m, [0.0, m.nominal_base_height], 0.0, &m.nominal_pose);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            w.step(&mut s, Actuation::PdTarget(&m.nominal_pose), [0.0, 0.0]);
            worst = worst.max(w.max_joint_residual(&s));
            let base = s.bodies[w.base()];
            assert!(base.pos[1] > 0.5 * m.nominal_base_height, "{f} fell");
            assert!(base.angle.abs() < 1.0, "{f} tipped");
        }
        assert!(worst < 1e-3, "{f}: {worst}");
    }
}
