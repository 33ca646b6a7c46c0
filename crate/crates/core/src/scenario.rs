//! Scenario files: the JSON document that describes a pipe, its joints and
//! every overridable robot parameter. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::LegGeometry;
use crate::mobile_base::{BasePose, DriveConfig};
use crate::pipe_world::{
    required_sector_volume, CorrosionMap, JointSpec, PipeSegment, PipeSpec, SealMap, Volume,
    DEFAULT_GROOVE_DEPTH_MM, DEFAULT_GROOVE_WIDTH_MM, DEFAULT_SECTOR_COUNT, DEFAULT_SOCKET_WIDTH_MM,
    MAX_DIAMETER_MM, MIN_DIAMETER_MM, MIN_SECTOR_COUNT,
};
use crate::tool_system::{CartridgeConfig, ToolConfig};

pub const DEFAULT_SCENARIO_JSON: &str = include_str!("../../../scenarios/default.json");
pub const DEFAULT_SENSOR_NOISE_MM: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// A validated scenario: the pipe plus all robot parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub pipe: PipeSpec,
    pub seed: u64,
    pub sensor_noise_mm: f64,
    pub start: BasePose,
    pub leg_geometry: LegGeometry,
    pub drive: DriveConfig,
    pub tool: ToolConfig,
    pub cartridge: CartridgeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum CorrosionSpec {
    Uniform(f64),
    Sectors(Vec<f64>),
}

impl Default for CorrosionSpec {
    fn default() -> Self {
        CorrosionSpec::Uniform(1.0)
    }
}

fn default_socket() -> f64 {
    DEFAULT_SOCKET_WIDTH_MM
}
fn default_groove_width() -> f64 {
    DEFAULT_GROOVE_WIDTH_MM
}
fn default_groove_depth() -> f64 {
    DEFAULT_GROOVE_DEPTH_MM
}
fn default_sectors() -> usize {
    DEFAULT_SECTOR_COUNT
}
fn default_noise() -> f64 {
    DEFAULT_SENSOR_NOISE_MM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointFile {
    axial_pos_mm: f64,
    #[serde(default = "default_socket")]
    socket_width_mm: f64,
    #[serde(default = "default_groove_width")]
    groove_width_mm: f64,
    #[serde(default = "default_groove_depth")]
    groove_depth_mm: f64,
    #[serde(default)]
    axial_offset_mm: f64,
    #[serde(default)]
    corrosion: CorrosionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corrosion_initial: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seal_volume_pl: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointPattern {
    spacing_mm: f64,
    #[serde(default = "default_socket")]
    socket_width_mm: f64,
    #[serde(default = "default_groove_width")]
    groove_width_mm: f64,
    #[serde(default = "default_groove_depth")]
    groove_depth_mm: f64,
    #[serde(default)]
    axial_offset_mm: f64,
    #[serde(default)]
    corrosion: CorrosionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StartPose {
    #[serde(default)]
    axial_mm: f64,
    #[serde(default)]
    lateral_mm: f64,
    #[serde(default)]
    yaw_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    segments: Vec<PipeSegment>,
    #[serde(default)]
    joints: Vec<JointFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joint_pattern: Option<JointPattern>,
    #[serde(default = "default_sectors")]
    sector_count: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_noise")]
    sensor_noise_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start: Option<StartPose>,
    #[serde(default)]
    leg_geometry: LegGeometry,
    #[serde(default)]
    drive: DriveConfig,
    #[serde(default)]
    tool: ToolConfig,
    #[serde(default)]
    cartridge: CartridgeConfig,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        file.into_scenario()
    }

    pub fn default_mission() -> Self {
        Self::from_json(DEFAULT_SCENARIO_JSON).expect("bundled default scenario is valid")
    }

    /// Single straight pipe with evenly spaced, uniformly corroded joints.
    pub fn uniform(diameter_mm: f64, length_mm: f64, spacing_mm: Option<f64>, seed: u64) -> Result<Self, ScenarioError> {
        let file = ScenarioFile {
            segments: vec![PipeSegment { inner_diameter_mm: diameter_mm, length_mm }],
            joints: vec![],
            joint_pattern: spacing_mm.map(|spacing_mm| JointPattern {
                spacing_mm,
                socket_width_mm: DEFAULT_SOCKET_WIDTH_MM,
                groove_width_mm: DEFAULT_GROOVE_WIDTH_MM,
                groove_depth_mm: DEFAULT_GROOVE_DEPTH_MM,
                axial_offset_mm: 0.0,
                corrosion: CorrosionSpec::Uniform(1.0),
            }),
            sector_count: DEFAULT_SECTOR_COUNT,
            seed,
            sensor_noise_mm: DEFAULT_SENSOR_NOISE_MM,
            start: None,
            leg_geometry: LegGeometry::default(),
            drive: DriveConfig::default(),
            tool: ToolConfig::default(),
            cartridge: CartridgeConfig::default(),
        };
        file.into_scenario()
    }

    pub fn sector_count(&self) -> usize {
        self.pipe.joints.first().map(|j| j.sector_count()).unwrap_or(DEFAULT_SECTOR_COUNT)
    }

    /// Serialise with every joint written out explicitly.
    pub fn to_json(&self) -> String {
        let joints = self
            .pipe
            .joints
            .iter()
            .map(|j| {
                let pristine = j.corrosion.initial == j.corrosion.levels;
                let unsealed = j.seal.deposited.iter().all(|v| *v == Volume::ZERO);
                JointFile {
                    axial_pos_mm: j.axial_pos_mm,
                    socket_width_mm: j.socket_width_mm,
                    groove_width_mm: j.groove_width_mm,
                    groove_depth_mm: j.groove_depth_mm,
                    axial_offset_mm: j.axial_offset_mm,
                    corrosion: CorrosionSpec::Sectors(j.corrosion.levels.clone()),
                    corrosion_initial: (!pristine).then(|| j.corrosion.initial.clone()),
                    seal_volume_pl: (!unsealed).then(|| j.seal.deposited.iter().map(|v| v.0).collect()),
                    finished: j.finished,
                }
            })
            .collect();
        let file = ScenarioFile {
            segments: self.pipe.segments.clone(),
            joints,
            joint_pattern: None,
            sector_count: self.sector_count(),
            seed: self.seed,
            sensor_noise_mm: self.sensor_noise_mm,
            start: (self.start != BasePose::default()).then_some(StartPose {
                axial_mm: self.start.axial_mm,
                lateral_mm: self.start.lateral_mm,
                yaw_rad: self.start.yaw_rad,
            }),
            leg_geometry: self.leg_geometry.clone(),
            drive: self.drive.clone(),
            tool: self.tool.clone(),
            cartridge: self.cartridge.clone(),
        };
        serde_json::to_string_pretty(&file).expect("scenario serialises")
    }
}

fn corrosion_levels(spec: &CorrosionSpec, count: usize, what: &str) -> Result<Vec<f64>, ScenarioError> {
    let levels = match spec {
        CorrosionSpec::Uniform(v) => vec![*v; count],
        CorrosionSpec::Sectors(v) => v.clone(),
    };
    check_levels(&levels, count, what)?;
    Ok(levels)
}

fn check_levels(levels: &[f64], count: usize, what: &str) -> Result<(), ScenarioError> {
    if levels.len() != count {
        return Err(invalid(format!("{what}: {} sectors, expected {count}", levels.len())));
    }
    if let Some(v) = levels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid(format!("{what}: corrosion level {v} out of [0,1]")));
    }
    Ok(())
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        if self.segments.is_empty() {
            return Err(invalid("at least one segment is required"));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            let d = seg.inner_diameter_mm;
            if !(MIN_DIAMETER_MM..=MAX_DIAMETER_MM).contains(&d) {
                return Err(invalid(format!("segment {i}: diameter {d} out of [800,1200]")));
            }
            if !(seg.length_mm > 0.0 && seg.length_mm.is_finite()) {
                return Err(invalid(format!("segment {i}: length must be positive")));
            }
        }
        if self.sector_count < MIN_SECTOR_COUNT || self.sector_count > 3600 {
            return Err(invalid(format!("sector_count {} must be in [8, 3600]", self.sector_count)));
        }
        if !(self.sensor_noise_mm >= 0.0 && self.sensor_noise_mm.is_finite()) {
            return Err(invalid("sensor_noise_mm must be non-negative"));
        }
        self.leg_geometry.validate().map_err(|e| invalid(e.to_string()))?;
        self.drive.validate().map_err(invalid)?;
        self.tool.validate().map_err(invalid)?;
        self.cartridge.validate().map_err(invalid)?;

        let mut pipe = PipeSpec { segments: self.segments, joints: Vec::new() };
        let length = pipe.total_length_mm();
        let n = self.sector_count;

        let joint_files = match (self.joint_pattern, self.joints.is_empty()) {
            (Some(_), false) => return Err(invalid("joints and joint_pattern are mutually exclusive")),
            (Some(p), true) => {
                if !(p.spacing_mm > 0.0) {
                    return Err(invalid("joint_pattern.spacing_mm must be positive"));
                }
                let mut files = Vec::new();
                let mut k = 1.0;
                while k * p.spacing_mm < length {
                    files.push(JointFile {
                        axial_pos_mm: k * p.spacing_mm,
                        socket_width_mm: p.socket_width_mm,
                        groove_width_mm: p.groove_width_mm,
                        groove_depth_mm: p.groove_depth_mm,
                        axial_offset_mm: p.axial_offset_mm,
                        corrosion: p.corrosion.clone(),
                        corrosion_initial: None,
                        seal_volume_pl: None,
                        finished: false,
                    });
                    k += 1.0;
                }
                files
            }
            (None, _) => self.joints,
        };

        let mut prev = f64::NEG_INFINITY;
        for (i, jf) in joint_files.into_iter().enumerate() {
            let what = format!("joint {i}");
            let pos = jf.axial_pos_mm;
            if !(0.0..=length).contains(&pos) {
                return Err(invalid(format!("{what}: axial position {pos} outside pipe [0, {length}]")));
            }
            if pos <= prev {
                return Err(invalid(format!("{what}: joint positions must be strictly increasing")));
            }
            prev = pos;
            if !(jf.socket_width_mm > 0.0 && jf.groove_width_mm > 0.0 && jf.groove_depth_mm > 0.0) {
                return Err(invalid(format!("{what}: socket and groove dimensions must be positive")));
            }
            if jf.groove_width_mm > jf.socket_width_mm {
                return Err(invalid(format!("{what}: groove wider than socket")));
            }
            if !jf.axial_offset_mm.is_finite() {
                return Err(invalid(format!("{what}: axial offset must be finite")));
            }
            let levels = corrosion_levels(&jf.corrosion, n, &what)?;
            let initial = match jf.corrosion_initial {
                Some(init) => {
                    check_levels(&init, n, &what)?;
                    init
                }
                None => levels.clone(),
            };
            let required =
                required_sector_volume(jf.groove_width_mm, jf.groove_depth_mm, pipe.diameter_at(pos), n);
            let mut seal = SealMap::empty(n, required);
            if let Some(pl) = jf.seal_volume_pl {
                if pl.len() != n || pl.iter().any(|v| *v < 0) {
                    return Err(invalid(format!("{what}: seal volumes must be {n} non-negative values")));
                }
                seal.deposited = pl.into_iter().map(Volume).collect();
            }
            pipe.joints.push(JointSpec {
                axial_pos_mm: pos,
                socket_width_mm: jf.socket_width_mm,
                groove_width_mm: jf.groove_width_mm,
                groove_depth_mm: jf.groove_depth_mm,
                axial_offset_mm: jf.axial_offset_mm,
                corrosion: CorrosionMap { initial, levels },
                seal,
                finished: jf.finished,
            });
        }

        let start = self
            .start
            .map(|s| BasePose { axial_mm: s.axial_mm, lateral_mm: s.lateral_mm, yaw_rad: s.yaw_rad })
            .unwrap_or_default();
        if !(0.0..=length).contains(&start.axial_mm) {
            return Err(invalid("start.axial_mm outside pipe"));
        }
        let clearance = pipe.diameter_at(start.axial_mm) / 2.0 - self.leg_geometry.body_radius_mm;
        if start.lateral_mm.abs() >= clearance {
            return Err(invalid(format!("start.lateral_mm must be below wall clearance {clearance}")));
        }
        if start.yaw_rad.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(invalid("start.yaw_rad must be within (-pi/2, pi/2)"));
        }

        Ok(Scenario {
            pipe,
            seed: self.seed,
            sensor_noise_mm: self.sensor_noise_mm,
            start,
            leg_geometry: self.leg_geometry,
            drive: self.drive,
            tool: self.tool,
            cartridge: self.cartridge,
        })
    }
}

/// Parse and validate scenario text, returning only the pipe.
pub fn load_pipe_spec(source: &str) -> Result<PipeSpec, ScenarioError> {
    Ok(Scenario::from_json(source)?.pipe)
}

/// Minimal scenario document for a pipe, all robot parameters at defaults.
pub fn save_pipe_spec(spec: &PipeSpec) -> String {
    let scenario = Scenario {
        pipe: spec.clone(),
        seed: 0,
        sensor_noise_mm: DEFAULT_SENSOR_NOISE_MM,
        start: BasePose::default(),
        leg_geometry: LegGeometry::default(),
        drive: DriveConfig::default(),
        tool: ToolConfig::default(),
        cartridge: CartridgeConfig::default(),
    };
    scenario.to_json()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pattern_generates_nineteen_joints() {
        let text = r#"{"segments":[{"inner_diameter_mm":1000,"length_mm":100000}],
                       "joint_pattern":{"spacing_mm":5000}}"#;
        let spec = load_pipe_spec(text).unwrap();
        assert_eq!(spec.joints.len(), 19);
        assert_eq!(spec.joints[0].axial_pos_mm, 5000.0);
        assert_eq!(spec.joints[18].axial_pos_mm, 95_000.0);
        assert_eq!(spec.total_length_mm(), 100_000.0);
    }

    #[test]
    fn default_scenario_is_hundred_meters() {
        let s = Scenario::default_mission();
        assert_eq!(s.pipe.total_length_mm(), 100_000.0);
        assert_eq!(s.pipe.joints.len(), 19);
        assert_eq!(s.sector_count(), 72);
    }

    #[test]
    fn no_joints_is_legal() {
        let spec = load_pipe_spec(r#"{"segments":[{"inner_diameter_mm":900,"length_mm":1000}]}"#).unwrap();
        assert!(spec.joints.is_empty());
    }

    #[test]
    fn diameter_out_of_range() {
        let err = load_pipe_spec(r#"{"segments":[{"inner_diameter_mm":1300,"length_mm":1000}]}"#).unwrap_err();
        assert!(err.to_string().contains("diameter 1300 out of [800,1200]"), "{err}");
        let err = load_pipe_spec(r#"{"segments":[{"inner_diameter_mm":700,"length_mm":1000}]}"#).unwrap_err();
        assert!(err.to_string().contains("diameter 700"));
    }

    #[test]
    fn parse_error_has_line() {
        let text = "{\n  \"segments\": [\n    {\"inner_diameter_mm\": 1000,, \"length_mm\": 5}\n  ]\n}";
        match load_pipe_spec(text) {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"segments":[{"inner_diameter_mm":1000,"length_mm":1000}],"pressure_bar":4}"#;
        let err = load_pipe_spec(text).unwrap_err();
        assert!(err.to_string().contains("pressure_bar"));
        let text = r#"{"segments":[{"inner_diameter_mm":1000,"length_mm":1000}],"tool":{"speed":1}}"#;
        assert!(load_pipe_spec(text).is_err());
    }

    #[test]
    fn joint_invariants() {
        let base = r#"{"segments":[{"inner_diameter_mm":1000,"length_mm":10000}],"joints":JOINTS}"#;
        let cases = [
            (r#"[{"axial_pos_mm":5000},{"axial_pos_mm":4000}]"#, "strictly increasing"),
            (r#"[{"axial_pos_mm":12000}]"#, "outside pipe"),
            (r#"[{"axial_pos_mm":100,"corrosion":1.5}]"#, "out of [0,1]"),
            (r#"[{"axial_pos_mm":100,"corrosion":[0.5,0.5]}]"#, "expected 72"),
            (r#"[{"axial_pos_mm":100,"groove_width_mm":200}]"#, "groove wider"),
        ];
        for (joints, needle) in cases {
            let err = load_pipe_spec(&base.replace("JOINTS", joints)).unwrap_err();
            assert!(err.to_string().contains(needle), "{err} !~ {needle}");
        }
    }

    #[test]
    fn overrides_are_applied() {
        let text = r#"{"segments":[{"inner_diameter_mm":1000,"length_mm":1000}],
            "leg_geometry":{"ramp_rate_mm_s":20},"drive":{"cruise_mm_s":100},
            "tool":{"alpha_straight":0.3},"cartridge":{"piston_diameter_mm":80}}"#;
        let s = Scenario::from_json(text).unwrap();
        assert_eq!(s.leg_geometry.ramp_rate_mm_s, 20.0);
        assert_eq!(s.leg_geometry.spring_rate_n_per_mm, 20.0);
        assert_eq!(s.drive.cruise_mm_s, 100.0);
        assert_eq!(s.tool.alpha_straight, 0.3);
        assert_eq!(s.cartridge.piston_diameter_mm, 80.0);
        let bad = text.replace("\"ramp_rate_mm_s\":20", "\"extension_max_mm\":150");
        assert!(Scenario::from_json(&bad).is_err());
    }

    #[test]
    fn joint_required_volume_follows_local_diameter() {
        let text = r#"{"segments":[{"inner_diameter_mm":800,"length_mm":1000},{"inner_diameter_mm":1200,"length_mm":1000}],
            "joints":[{"axial_pos_mm":500},{"axial_pos_mm":1500}]}"#;
        let spec = load_pipe_spec(text).unwrap();
        let a = spec.joints[0].seal.required_per_sector.mm3();
        let b = spec.joints[1].seal.required_per_sector.mm3();
        assert!((b / a - 1.5).abs() < 1e-9);
    }

    fn arb_scenario() -> impl Strategy<Value = Scenario> {
        (
            prop::collection::vec((800.0f64..=1200.0, 500.0f64..20_000.0), 1..4),
            prop::collection::vec((0.0f64..1.0, -100.0f64..100.0, prop::bool::ANY), 0..5),
            any::<u64>(),
            0.0f64..10.0,
        )
            .prop_map(|(segs, joints, seed, noise)| {
                let segments: Vec<PipeSegment> = segs
                    .into_iter()
                    .map(|(d, l)| PipeSegment { inner_diameter_mm: d, length_mm: l })
                    .collect();
                let length: f64 = segments.iter().map(|s| s.length_mm).sum();
                let step = length / (joints.len() as f64 + 1.0);
                let mut pipe = PipeSpec { segments, joints: vec![] };
                for (i, (c, off, worked)) in joints.into_iter().enumerate() {
                    let pos = step * (i as f64 + 1.0);
                    let req = required_sector_volume(30.0, 15.0, pipe.diameter_at(pos), 72);
                    let mut corrosion = CorrosionMap::uniform(c, 72);
                    let mut seal = SealMap::empty(72, req);
                    if worked {
                        corrosion.levels[3] = c / 3.0;
                        seal.deposited[5] = Volume(12_345);
                    }
                    pipe.joints.push(JointSpec {
                        axial_pos_mm: pos,
                        socket_width_mm: 120.0,
                        groove_width_mm: 30.0,
                        groove_depth_mm: 15.0,
                        axial_offset_mm: off,
                        corrosion,
                        seal,
                        finished: worked,
                    });
                }
                Scenario {
                    pipe,
                    seed,
                    sensor_noise_mm: noise,
                    start: BasePose::default(),
                    leg_geometry: LegGeometry::default(),
                    drive: DriveConfig::default(),
                    tool: ToolConfig::default(),
                    cartridge: CartridgeConfig::default(),
                }
            })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(s in arb_scenario()) {
            let text = s.to_json();
            prop_assert_eq!(Scenario::from_json(&text).unwrap(), s.clone());
            prop_assert_eq!(load_pipe_spec(&save_pipe_spec(&s.pipe)).unwrap(), s.pipe);
        }
    }
}
