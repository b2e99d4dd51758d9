use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{distance, ArrayGeometry, Point};
use super::render::{utterance_rng, SceneSpec};
use crate::error::{Error, Result};

/// Distribution of simulated scenes. Defaults follow the usual moving-speaker
/// setup: square-ish rooms of 3 to 5 m, 2.5 m height, T60 in 0.1..0.3 s and
/// SNR in 2..8 dB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneDistribution {
    pub room_sizes: Vec<f64>,
    pub room_height: f64,
    pub t60_range: [f64; 2],
    pub snr_range: [f64; 2],
    pub duration_s: f64,
    pub sample_rate: u32,
    pub geometry: String,
    pub n_traj_points: usize,
    /// Minimum distance from any wall for sources and the array center.
    pub wall_margin: f64,
    /// Minimum distance between the array center and the source trajectory.
    pub min_source_distance: f64,
    pub n_noise_sources: usize,
    pub sensor_noise_db: f64,
}

impl Default for SceneDistribution {
    fn default() -> Self {
        SceneDistribution {
            room_sizes: vec![3.0, 3.5, 4.0, 4.5, 5.0],
            room_height: 2.5,
            t60_range: [0.1, 0.3],
            snr_range: [2.0, 8.0],
            duration_s: 4.0,
            sample_rate: 16000,
            geometry: "rect5".into(),
            n_traj_points: 128,
            wall_margin: 0.5,
            min_source_distance: 0.5,
            n_noise_sources: 1,
            sensor_noise_db: -30.0,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    distance(p, &[a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]])
}

impl SceneDistribution {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.room_sizes.is_empty() || self.room_sizes.iter().any(|&s| !(s > 2.0 * self.wall_margin)) {
            return bad("room_sizes must be non-empty and exceed twice the wall margin");
        }
        if !(self.room_height > 2.0 * self.wall_margin) {
            return bad("room_height must exceed twice the wall margin");
        }
        if !(self.t60_range[0] >= 0.0 && self.t60_range[1] >= self.t60_range[0]) {
            return bad("t60_range must be an ordered non-negative pair");
        }
        if !(self.snr_range[1] >= self.snr_range[0]) {
            return bad("snr_range must be ordered");
        }
        if self.sample_rate == 0 || self.n_traj_points == 0 {
            return bad("sample_rate and n_traj_points must be positive");
        }
        if ((self.duration_s * self.sample_rate as f64) as usize) < self.n_traj_points {
            return bad("duration too short for the trajectory point count");
        }
        ArrayGeometry::builtin(&self.geometry).map_err(|e| Error::Config(format!("{}", e)))?;
        Ok(())
    }
}

/// Draws the scene with index `index` of the dataset seeded by `seed`. The
/// draw depends only on `(dist, seed, index)`.
pub fn sample_scene(dist: &SceneDistribution, seed: u64, index: u64) -> Result<SceneSpec> {
    dist.validate()?;
    let mut rng = utterance_rng(seed, index);
    let w = *dist.room_sizes.choose(&mut rng).unwrap();
    let d = *dist.room_sizes.choose(&mut rng).unwrap();
    let room = [w, d, dist.room_height];
    let geometry = ArrayGeometry::builtin(&dist.geometry)?;
    let m = dist.wall_margin;
    let inner = |rng: &mut rand_chacha::ChaCha8Rng, z: [f64; 2], pad: f64| -> Point {
        [
            rng.gen_range(m + pad..room[0] - m - pad),
            rng.gen_range(m + pad..room[1] - m - pad),
            uniform(rng, z),
        ]
    };
    let pad = geometry.radius();
    let origin = inner(&mut rng, [0.8, 1.4], pad);
    let (mut start, mut end) = (origin, origin);
    for _ in 0..1000 {
        start = inner(&mut rng, [1.4, 1.9], 0.0);
        end = inner(&mut rng, [1.4, 1.9], 0.0);
        if point_segment_distance(&origin, &start, &end) >= dist.min_source_distance {
            break;
        }
    }
    if point_segment_distance(&origin, &start, &end) < dist.min_source_distance {
        return Err(Error::Config("could not place a trajectory away from the array".into()));
    }
    let noise_positions = (0..dist.n_noise_sources)
        .map(|_| inner(&mut rng, [0.3, 2.0], 0.0))
        .collect();
    Ok(SceneSpec {
        room_dims: room,
        t60: uniform(&mut rng, dist.t60_range),
        src_start: start,
        src_end: end,
        n_traj_points: dist.n_traj_points,
        snr_db: uniform(&mut rng, dist.snr_range),
        sample_rate: dist.sample_rate,
        seed: rng.gen(),
        geometry,
        array_origin: origin,
        num_samples: (dist.duration_s * dist.sample_rate as f64).round() as usize,
        noise_positions,
        sensor_noise_db: dist.sensor_noise_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_valid_and_within_declared_sets() {
        let dist = SceneDistribution::default();
        for i in 0..200 {
            let s = sample_scene(&dist, 5, i).unwrap();
            s.validate().unwrap();
            assert!(dist.room_sizes.contains(&s.room_dims[0]) && dist.room_sizes.contains(&s.room_dims[1]));
            assert_eq!(s.room_dims[2], 2.5);
            assert!((0.1..=0.3).contains(&s.t60) && (2.0..=8.0).contains(&s.snr_db));
            assert!(point_segment_distance(&s.array_origin, &s.src_start, &s.src_end) >= 0.5);
        }
    }

    #[test]
    fn sampling_is_a_pure_function_of_seed_and_index() {
        let dist = SceneDistribution::default();
        assert_eq!(sample_scene(&dist, 1, 3).unwrap(), sample_scene(&dist, 1, 3).unwrap());
        assert_ne!(sample_scene(&dist, 1, 3).unwrap(), sample_scene(&dist, 1, 4).unwrap());
        assert_ne!(sample_scene(&dist, 2, 3).unwrap(), sample_scene(&dist, 1, 3).unwrap());
    }

    #[test]
    fn rejects_bad_distribution() {
        let mut d = SceneDistribution::default();
        d.geometry = "nope".into();
        assert!(matches!(sample_scene(&d, 0, 0), Err(Error::Config(_))));
        let d = SceneDistribution {
            t60_range: [0.3, 0.1],
            ..SceneDistribution::default()
        };
        assert!(d.validate().is_err());
    }
}
