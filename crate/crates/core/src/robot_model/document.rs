//! JSON robot description format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{validate_model, Joint, Link, ModelError, RobotModel};
use crate::roster::{slot_index, UNMAPPED};

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Unknown keys produce warnings instead of a syntax error.
    pub lenient: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    name: String,
    nominal_base_height: f64,
    base_link: String,
    links: Vec<LinkDoc>,
    joints: Vec<JointDoc>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    name: String,
    length: f64,
    mass: f64,
    com_offset: f64,
    inertia_com: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    name: String,
    parent: String,
    child: String,
    limits: [f64; 2],
    velocity_limit: f64,
    kp: f64,
    kd: f64,
    tau_max: f64,
    unified_role: String,
    sign: f64,
    offset: f64,
    nominal: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor: Option<[f64; 2]>,
}

const TOP_KEYS: &[&str] = &["name", "nominal_base_height", "base_link", "links", "joints", "metadata"];
const LINK_KEYS: &[&str] = &["name", "length", "mass", "com_offset", "inertia_com"];
const JOINT_KEYS: &[&str] = &[
    "name",
    "parent",
    "child",
    "limits",
    "velocity_limit",
    "kp",
    "kd",
    "tau_max",
    "unified_role",
    "sign",
    "offset",
    "nominal",
    "anchor",
];

fn syntax(e: serde_json::Error) -> ModelError {
    ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn strip_unknown(obj: &mut Value, allowed: &[&str], ctx: &str, warnings: &mut Vec<String>) {
    if let Value::Object(map) = obj {
        let unknown: Vec<String> = map
            .keys()
            .filter(|k| !allowed.contains(&k.as_str()))
            .cloned()
            .collect();
        for k in unknown {
            warnings.push(format!("ignoring unknown key `{k}` in {ctx}"));
            map.remove(&k);
        }
    }
}

/// Reads and validates a robot description file.
pub fn parse_model(path: &Path, opts: ParseOptions) -> Result<RobotModel, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_model_str(&text, opts)
}

pub fn parse_model_str(text: &str, opts: ParseOptions) -> Result<RobotModel, ModelError> {
    let doc: ModelDoc = if opts.lenient {
        let mut value: Value = serde_json::from_str(text).map_err(syntax)?;
        let mut warnings = Vec::new();
        strip_unknown(&mut value, TOP_KEYS, "robot", &mut warnings);
        for (section, keys) in [("links", LINK_KEYS), ("joints", JOINT_KEYS)] {
            if let Some(Value::Array(items)) = value.get_mut(section) {
                for (i, item) in items.iter_mut().enumerate() {
                    strip_unknown(item, keys, &format!("{section}[{i}]"), &mut warnings);
                }
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        serde_json::from_value(value).map_err(syntax)?
    } else {
        serde_json::from_str(text).map_err(syntax)?
    };
    let model = from_doc(doc)?;
    if let Some(v) = validate_model(&model).into_iter().find(|v| v.is_error()) {
        return Err(v.into());
    }
    Ok(model)
}

fn from_doc(doc: ModelDoc) -> Result<RobotModel, ModelError> {
    let links: Vec<Link> = doc
        .links
        .into_iter()
        .map(|l| Link {
            name: l.name,
            length: l.length,
            mass: l.mass,
            com_offset: l.com_offset,
            inertia_com: l.inertia_com,
        })
        .collect();
    let find = |name: &str| {
        links
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| ModelError::MissingLink(name.to_string()))
    };
    let base_link = find(&doc.base_link)?;
    let mut joints = Vec::with_capacity(doc.joints.len());
    let mut nominal = Vec::with_capacity(doc.joints.len());
    for j in doc.joints {
        let unified_role = if j.unified_role == UNMAPPED {
            None
        } else {
            Some(slot_index(&j.unified_role).ok_or_else(|| ModelError::UnknownRole(j.unified_role.clone()))?)
        };
        joints.push(Joint {
            parent: find(&j.parent)?,
            child: find(&j.child)?,
            name: j.name,
            limits: j.limits,
            velocity_limit: j.velocity_limit,
            kp: j.kp,
            kd: j.kd,
            tau_max: j.tau_max,
            unified_role,
            sign: j.sign,
            offset: j.offset,
            anchor: j.anchor,
        });
        nominal.push(j.nominal);
    }
    let mut m = RobotModel::new(doc.name, links, joints, base_link, doc.nominal_base_height, nominal);
    m.metadata = doc.metadata;
    Ok(m)
}

/// Pretty JSON in the same schema [`parse_model`] reads.
pub fn serialize_model(m: &RobotModel) -> String {
    let doc = ModelDoc {
        name: m.name.clone(),
        nominal_base_height: m.nominal_base_height,
        base_link: m.links[m.base_link].name.clone(),
        links: m
            .links
            .iter()
            .map(|l| LinkDoc {
                name: l.name.clone(),
                length: l.length,
                mass: l.mass,
                com_offset: l.com_offset,
                inertia_com: l.inertia_com,
            })
            .collect(),
        joints: m
            .joints
            .iter()
            .zip(&m.nominal_pose)
            .map(|(j, &q)| JointDoc {
                name: j.name.clone(),
                parent: m.links[j.parent].name.clone(),
                child: m.links[j.child].name.clone(),
                limits: j.limits,
                velocity_limit: j.velocity_limit,
                kp: j.kp,
                kd: j.kd,
                tau_max: j.tau_max,
                unified_role: j.role_name().to_string(),
                sign: j.sign,
                offset: j.offset,
                nominal: q,
                anchor: j.anchor,
            })
            .collect(),
        metadata: m.metadata.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("model serializes")
}
