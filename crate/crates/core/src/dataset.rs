//! Line-delimited dataset records and the landmark map file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Odometry;
use crate::noise::Feature;
use crate::se2::Pose2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkObservation {
    pub id: usize,
    pub x_body: f64,
    pub y_body: f64,
}

impl LandmarkObservation {
    pub fn point(&self) -> Vector2<f64> {
        Vector2::new(self.x_body, self.y_body)
    }
}

/// One timestep. Poses are stored as world-frame `[x, y, θ]` of the robot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimestepRecord {
    pub k: usize,
    pub t: f64,
    pub odom: [f64; 2],
    pub landmarks: Vec<LandmarkObservation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_pose: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_pose: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<[f64; 6]>,
}

pub fn pose_to_record(t: &Pose2) -> [f64; 3] {
    let (x, y, h) = t.world_pose();
    [x, y, h]
}

pub fn pose_from_record(r: &[f64; 3]) -> Pose2 {
    Pose2::from_world_pose(r[0], r[1], r[2])
}

/// A recorded or simulated run.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub dt: f64,
    pub records: Vec<TimestepRecord>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn odometry(&self) -> Vec<Odometry> {
        self.records.iter().map(|r| Odometry::new(r.odom[0], r.odom[1])).collect()
    }

    /// Groundtruth trajectory, if every record carries one.
    pub fn groundtruth(&self) -> Option<Vec<Pose2>> {
        self.records.iter().map(|r| r.gt_pose.as_ref().map(pose_from_record)).collect()
    }

    pub fn pseudo_poses(&self) -> Vec<Option<Pose2>> {
        self.records.iter().map(|r| r.pseudo_pose.as_ref().map(pose_from_record)).collect()
    }

    pub fn features(&self) -> Option<Vec<Feature>> {
        self.records.iter().map(|r| r.feature.map(Feature)).collect()
    }

    /// Contiguous sub-sequence with `k` and `t` kept as recorded.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Sequence {
        Sequence {
            dt: self.dt,
            records: self.records[range].to_vec(),
        }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a dataset; the time step is the mean spacing of `t`.
    pub fn read_jsonl(path: &Path) -> Result<Sequence> {
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TimestepRecord = serde_json::from_str(&line)
                .map_err(|e| Error::InvalidArgument(format!("{}:{}: {e}", path.display(), n + 1)))?;
            records.push(rec);
        }
        if records.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "{}: need at least two records",
                path.display()
            )));
        }
        let dt = (records[records.len() - 1].t - records[0].t) / (records.len() - 1) as f64;
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("{}: timestamps must increase", path.display())));
        }
        Ok(Sequence { dt, records })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapLandmark {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

/// Known landmark map with the sensor gating used to record it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkMap {
    pub landmarks: Vec<MapLandmark>,
    pub fov: f64,
    pub max_range: f64,
}

impl LandmarkMap {
    pub fn position(&self, id: usize) -> Option<Vector2<f64>> {
        // ids are usually dense indices; fall back to a scan otherwise
        match self.landmarks.get(id) {
            Some(l) if l.id == id => Some(Vector2::new(l.x, l.y)),
            _ => self.landmarks.iter().find(|l| l.id == id).map(|l| Vector2::new(l.x, l.y)),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
