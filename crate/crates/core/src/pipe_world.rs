//! Pipe environment: segments, joint sockets, and the per-sector corrosion and
//! seal state that the tool process acts on.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_DIAMETER_MM: f64 = 800.0;
pub const MAX_DIAMETER_MM: f64 = 1200.0;
pub const DEFAULT_SECTOR_COUNT: usize = 72;
pub const MIN_SECTOR_COUNT: usize = 8;
pub const DEFAULT_JOINT_SPACING_MM: f64 = 5000.0;
pub const DEFAULT_SOCKET_WIDTH_MM: f64 = 120.0;
pub const DEFAULT_GROOVE_WIDTH_MM: f64 = 30.0;
pub const DEFAULT_GROOVE_DEPTH_MM: f64 = 15.0;

const PICOLITERS_PER_MM3: f64 = 1.0e6;

/// Sealant volume in picoliters (1e-6 mm³).
///
/// Integer so that cartridge and bead bookkeeping conserve exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Volume(pub i64);

impl Volume {
    pub const ZERO: Volume = Volume(0);

    pub fn from_mm3(mm3: f64) -> Self {
        Volume((mm3 * PICOLITERS_PER_MM3).round() as i64)
    }

    pub fn mm3(self) -> f64 {
        self.0 as f64 / PICOLITERS_PER_MM3
    }

    pub fn picoliters(self) -> i64 {
        self.0
    }
}

impl Add for Volume {
    type Output = Volume;
    fn add(self, rhs: Volume) -> Volume {
        Volume(self.0 + rhs.0)
    }
}

impl AddAssign for Volume {
    fn add_assign(&mut self, rhs: Volume) {
        self.0 += rhs.0;
    }
}

impl Sub for Volume {
    type Output = Volume;
    fn sub(self, rhs: Volume) -> Volume {
        Volume(self.0 - rhs.0)
    }
}

impl SubAssign for Volume {
    fn sub_assign(&mut self, rhs: Volume) {
        self.0 -= rhs.0;
    }
}

impl std::iter::Sum for Volume {
    fn sum<I: Iterator<Item = Volume>>(iter: I) -> Volume {
        Volume(iter.map(|v| v.0).sum())
    }
}

impl fmt::Display for Volume {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} mm³", self.mm3())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipeError {
    #[error("axial position {pos_mm} mm outside pipe [0, {length_mm}]")]
    PositionOutOfRange { pos_mm: f64, length_mm: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipeSegment {
    pub inner_diameter_mm: f64,
    pub length_mm: f64,
}

/// Angular index of the sector containing `theta_rad` on a ring of `count` sectors.
pub fn sector_of(theta_rad: f64, count: usize) -> usize {
    let width = 2.0 * PI / count as f64;
    let wrapped = theta_rad.rem_euclid(2.0 * PI);
    ((wrapped / width).floor() as usize).min(count - 1)
}

/// Center angle of sector `index`.
pub fn sector_center(index: usize, count: usize) -> f64 {
    (index as f64 + 0.5) * 2.0 * PI / count as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrosionMap {
    /// Levels at scenario load; the reference for removal fraction.
    pub initial: Vec<f64>,
    pub levels: Vec<f64>,
}

impl CorrosionMap {
    pub fn uniform(level: f64, count: usize) -> Self {
        Self::from_levels(vec![level; count])
    }

    pub fn from_levels(levels: Vec<f64>) -> Self {
        CorrosionMap { initial: levels.clone(), levels }
    }

    pub fn sector_count(&self) -> usize {
        self.levels.len()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.levels)
    }

    pub fn initial_mean(&self) -> f64 {
        mean(&self.initial)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SealMap {
    pub deposited: Vec<Volume>,
    /// Bead volume that fills one sector of the groove.
    pub required_per_sector: Volume,
}

impl SealMap {
    pub fn empty(count: usize, required_per_sector: Volume) -> Self {
        SealMap { deposited: vec![Volume::ZERO; count], required_per_sector }
    }

    pub fn sector_count(&self) -> usize {
        self.deposited.len()
    }

    pub fn sector_coverage(&self, index: usize) -> f64 {
        if self.required_per_sector.0 <= 0 {
            return 1.0;
        }
        (self.deposited[index].0 as f64 / self.required_per_sector.0 as f64).min(1.0)
    }

    pub fn remaining(&self, index: usize) -> Volume {
        Volume((self.required_per_sector.0 - self.deposited[index].0).max(0))
    }

    pub fn total(&self) -> Volume {
        self.deposited.iter().copied().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub axial_pos_mm: f64,
    pub socket_width_mm: f64,
    pub groove_width_mm: f64,
    pub groove_depth_mm: f64,
    /// Displacement of the socket groove from its nominal position.
    pub axial_offset_mm: f64,
    pub corrosion: CorrosionMap,
    pub seal: SealMap,
    pub finished: bool,
}

impl JointSpec {
    /// Axial position of the groove centre.
    pub fn groove_pos_mm(&self) -> f64 {
        self.axial_pos_mm + self.axial_offset_mm
    }

    pub fn sector_count(&self) -> usize {
        self.corrosion.sector_count()
    }
}

/// Bead volume that fills one sector of a groove at the given diameter.
pub fn required_sector_volume(
    groove_width_mm: f64,
    groove_depth_mm: f64,
    diameter_mm: f64,
    sectors: usize,
) -> Volume {
    Volume::from_mm3(groove_width_mm * groove_depth_mm * PI * diameter_mm / sectors as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipeSpec {
    pub segments: Vec<PipeSegment>,
    pub joints: Vec<JointSpec>,
}

impl PipeSpec {
    pub fn total_length_mm(&self) -> f64 {
        self.segments.iter().map(|s| s.length_mm).sum()
    }

    /// Inner diameter at an axial position; the downstream segment wins at a boundary.
    pub fn diameter_at(&self, axial_mm: f64) -> f64 {
        let mut start = 0.0;
        for seg in &self.segments {
            if axial_mm < start + seg.length_mm {
                return seg.inner_diameter_mm;
            }
            start += seg.length_mm;
        }
        self.segments.last().map(|s| s.inner_diameter_mm).unwrap_or(MIN_DIAMETER_MM)
    }

    pub fn joint_index_near(
        &self,
        axial_pos_mm: f64,
        window_mm: f64,
    ) -> Result<Option<usize>, PipeError> {
        let length_mm = self.total_length_mm();
        if !(0.0..=length_mm).contains(&axial_pos_mm) {
            return Err(PipeError::PositionOutOfRange { pos_mm: axial_pos_mm, length_mm });
        }
        let mut best: Option<(f64, usize)> = None;
        for (i, joint) in self.joints.iter().enumerate() {
            let dist = (joint.axial_pos_mm - axial_pos_mm).abs();
            if dist > window_mm {
                continue;
            }
            // joints are sorted, so on equal distance the earlier (smaller position) wins
            match best {
                Some((d, _)) if d <= dist => {}
                _ => best = Some((dist, i)),
            }
        }
        Ok(best.map(|(_, i)| i))
    }
}

/// Nearest joint within `window_mm` of a query position; ties go to the smaller position.
pub fn joint_near(
    spec: &PipeSpec,
    axial_pos_mm: f64,
    window_mm: f64,
) -> Result<Option<&JointSpec>, PipeError> {
    Ok(spec.joint_index_near(axial_pos_mm, window_mm)?.map(|i| &spec.joints[i]))
}

/// Fraction of the initial corrosion that has been removed.
pub fn removal_fraction(joint: &JointSpec) -> f64 {
    let initial = joint.corrosion.initial_mean();
    if initial <= 0.0 {
        return 1.0;
    }
    1.0 - joint.corrosion.mean() / initial
}

/// Mean per-sector bead coverage, each sector capped at 1.
pub fn seal_coverage(joint: &JointSpec) -> f64 {
    let seal = &joint.seal;
    let n = seal.sector_count();
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|i| seal.sector_coverage(i)).sum::<f64>() / n as f64
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub use crate::scenario::{load_pipe_spec, save_pipe_spec};

#[cfg(test)]
mod tests {
    use super::*;

    fn joint_at(pos: f64) -> JointSpec {
        JointSpec {
            axial_pos_mm: pos,
            socket_width_mm: DEFAULT_SOCKET_WIDTH_MM,
            groove_width_mm: DEFAULT_GROOVE_WIDTH_MM,
            groove_depth_mm: DEFAULT_GROOVE_DEPTH_MM,
            axial_offset_mm: 0.0,
            corrosion: CorrosionMap::uniform(1.0, 72),
            seal: SealMap::empty(72, required_sector_volume(30.0, 15.0, 1000.0, 72)),
            finished: false,
        }
    }

    fn pipe(joints: &[f64]) -> PipeSpec {
        PipeSpec {
            segments: vec![PipeSegment { inner_diameter_mm: 1000.0, length_mm: 20_000.0 }],
            joints: joints.iter().map(|&p| joint_at(p)).collect(),
        }
    }

    #[test]
    fn joint_near_exact_hit() {
        let p = pipe(&[5000.0, 10_000.0]);
        assert_eq!(joint_near(&p, 5000.0, 50.0).unwrap().unwrap().axial_pos_mm, 5000.0);
    }

    #[test]
    fn joint_near_midway_is_none() {
        let p = pipe(&[5000.0, 10_000.0]);
        assert!(joint_near(&p, 7500.0, 100.0).unwrap().is_none());
    }

    #[test]
    fn joint_near_prefers_nearer_then_smaller() {
        let p = pipe(&[4900.0, 5050.0]);
        assert_eq!(joint_near(&p, 5000.0, 200.0).unwrap().unwrap().axial_pos_mm, 5050.0);
        let p = pipe(&[4900.0, 5100.0]);
        assert_eq!(joint_near(&p, 5000.0, 200.0).unwrap().unwrap().axial_pos_mm, 4900.0);
    }

    #[test]
    fn joint_near_rejects_out_of_range() {
        let p = pipe(&[5000.0]);
        assert!(matches!(
            joint_near(&p, -1.0, 10.0),
            Err(PipeError::PositionOutOfRange { .. })
        ));
        assert!(joint_near(&p, 20_001.0, 10.0).is_err());
    }

    #[test]
    fn removal_fraction_cases() {
        let mut j = joint_at(0.0);
        assert_eq!(removal_fraction(&j), 0.0);
        j.corrosion.levels = vec![0.15; 72];
        assert!((removal_fraction(&j) - 0.85).abs() < 1e-12);
        j.corrosion.levels = vec![0.0; 72];
        assert_eq!(removal_fraction(&j), 1.0);
        j.corrosion = CorrosionMap::uniform(0.0, 72);
        assert_eq!(removal_fraction(&j), 1.0);
    }

    #[test]
    fn seal_coverage_cases() {
        let mut j = joint_at(0.0);
        assert_eq!(seal_coverage(&j), 0.0);
        let req = j.seal.required_per_sector;
        for i in 0..36 {
            j.seal.deposited[i] = req;
        }
        assert!((seal_coverage(&j) - 0.5).abs() < 1e-12);
        for i in 0..72 {
            j.seal.deposited[i] = req + req;
        }
        assert_eq!(seal_coverage(&j), 1.0);
    }

    #[test]
    fn sector_lookup_wraps() {
        assert_eq!(sector_of(0.0, 72), 0);
        assert_eq!(sector_of(2.0 * PI - 1e-9, 72), 71);
        assert_eq!(sector_of(-1e-9, 72), 71);
        assert_eq!(sector_of(2.0 * PI, 72), 0);
        assert_eq!(sector_of(sector_center(17, 72), 72), 17);
    }

    #[test]
    fn groove_volume_for_one_meter_pipe() {
        let per_sector = required_sector_volume(30.0, 15.0, 1000.0, 72);
        let total = per_sector.mm3() * 72.0;
        assert!((total - 1.413_716_694e6).abs() < 1.0);
    }

    #[test]
    fn diameter_lookup_by_segment() {
        let p = PipeSpec {
            segments: vec![
                PipeSegment { inner_diameter_mm: 800.0, length_mm: 1000.0 },
                PipeSegment { inner_diameter_mm: 1200.0, length_mm: 1000.0 },
            ],
            joints: vec![],
        };
        assert_eq!(p.diameter_at(0.0), 800.0);
        assert_eq!(p.diameter_at(999.9), 800.0);
        assert_eq!(p.diameter_at(1000.0), 1200.0);
        assert_eq!(p.diameter_at(2000.0), 1200.0);
    }
}
