use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

pub(crate) fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Microphone positions in the array's local frame plus the reference channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    mic_positions: Vec<Point>,
    reference_index: usize,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<Point>, reference_index: usize) -> Result<Self> {
        let g = ArrayGeometry {
            mic_positions,
            reference_index,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mic_positions.len();
        if n == 0 {
            return Err(Error::Input("array geometry needs at least one microphone".into()));
        }
        if self.reference_index >= n {
            return Err(Error::Input(format!(
                "reference index {} out of range for {} microphones",
                self.reference_index, n
            )));
        }
        for i in 0..n {
            if self.mic_positions[i].iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("microphone {} has a non-finite position", i)));
            }
            for j in 0..i {
                if distance(&self.mic_positions[i], &self.mic_positions[j]) == 0.0 {
                    return Err(Error::Input(format!("microphones {} and {} coincide", j, i)));
                }
            }
        }
        Ok(())
    }

    /// Built-in arrays: `rect5` is a 19 cm × 10 cm tablet with four corner
    /// microphones and a top-center reference; `grid16` is a 4 × 4 planar grid
    /// with 5 cm pitch referenced at a corner. Both lie in the local x-y plane
    /// and are approximations of the commonly used recording setups.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "rect5" => ArrayGeometry::new(
                alloc::vec![
                    [-0.095, 0.05, 0.0],
                    [0.0, 0.05, 0.0],
                    [0.095, 0.05, 0.0],
                    [-0.095, -0.05, 0.0],
                    [0.095, -0.05, 0.0],
                ],
                1,
            ),
            "grid16" => {
                let pos = (0..16)
                    .map(|i| [(i % 4) as f64 * 0.05 - 0.075, (i / 4) as f64 * 0.05 - 0.075, 0.0])
                    .collect();
                ArrayGeometry::new(pos, 0)
            }
            other => Err(Error::Input(format!(
                "unknown geometry `{}` (expected rect5 or grid16)",
                other
            ))),
        }
    }

    /// Linear array along x with the given spacing, referenced at channel 0.
    pub fn linear(count: usize, spacing: f64) -> Result<Self> {
        let pos = (0..count).map(|i| [i as f64 * spacing, 0.0, 0.0]).collect();
        ArrayGeometry::new(pos, 0)
    }

    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn mic_positions(&self) -> &[Point] {
        &self.mic_positions
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    /// Largest distance of any microphone from the local origin.
    pub fn radius(&self) -> f64 {
        self.mic_positions
            .iter()
            .map(|p| distance(p, &[0.0; 3]))
            .fold(0.0, f64::max)
    }

    /// Subarray selected by `config`, with the reference remapped into it.
    pub fn subset(&self, config: &ChannelConfig) -> Result<ArrayGeometry> {
        config.check_parent(self.num_mics())?;
        ArrayGeometry::new(
            config.indices.iter().map(|&i| self.mic_positions[i]).collect(),
            config.remap_reference(self.reference_index),
        )
    }
}

/// Ordered selection of distinct channels from a parent array.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    indices: Vec<usize>,
}

impl ChannelConfig {
    pub fn new(indices: Vec<usize>, parent_channels: usize) -> Result<Self> {
        let c = ChannelConfig { indices };
        c.check_parent(parent_channels)?;
        Ok(c)
    }

    pub fn identity(channels: usize) -> Self {
        ChannelConfig {
            indices: (0..channels).collect(),
        }
    }

    pub fn check_parent(&self, parent_channels: usize) -> Result<()> {
        let n = self.indices.len();
        if n == 0 || n > parent_channels {
            return Err(Error::Input(format!(
                "channel config selects {} of {} channels",
                n, parent_channels
            )));
        }
        for (k, &i) in self.indices.iter().enumerate() {
            if i >= parent_channels {
                return Err(Error::Input(format!("channel index {} out of range", i)));
            }
            if self.indices[..k].contains(&i) {
                return Err(Error::Input(format!("channel index {} selected twice", i)));
            }
        }
        Ok(())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Position of the parent reference inside the selection; when the
    /// reference was dropped, the first selected channel takes its place.
    pub fn remap_reference(&self, parent_ref: usize) -> usize {
        self.indices.iter().position(|&i| i == parent_ref).unwrap_or(0)
    }
}

/// Uniform channel count in `2..=c_max`, then a uniformly random ordered
/// selection of that many distinct channels.
pub fn sample_channel_config<R: Rng + ?Sized>(c_max: usize, rng: &mut R) -> Result<ChannelConfig> {
    if c_max < 2 {
        return Err(Error::Input(format!("c_max must be at least 2, got {}", c_max)));
    }
    let count = rng.gen_range(2..=c_max);
    let mut all: Vec<usize> = (0..c_max).collect();
    let (chosen, _) = all.partial_shuffle(rng, count);
    Ok(ChannelConfig {
        indices: chosen.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn builtin_geometries() {
        let r = ArrayGeometry::builtin("rect5").unwrap();
        let g = ArrayGeometry::builtin("grid16").unwrap();
        assert_eq!((r.num_mics(), g.num_mics()), (5, 16));
        assert_eq!(r.reference_index(), 1);
        assert_eq!(r.mic_positions()[1], [0.0, 0.05, 0.0]);
        let dx = r.mic_positions()[2][0] - r.mic_positions()[0][0];
        let dy = r.mic_positions()[0][1] - r.mic_positions()[3][1];
        assert!((dx - 0.19).abs() < 1e-12 && (dy - 0.10).abs() < 1e-12);
        assert!((distance(&g.mic_positions()[0], &g.mic_positions()[1]) - 0.05).abs() < 1e-12);
        assert!(matches!(ArrayGeometry::builtin("chime"), Err(Error::Input(_))));
    }

    #[test]
    fn rejects_invalid_geometry() {
        assert!(ArrayGeometry::new(alloc::vec![], 0).is_err());
        assert!(ArrayGeometry::new(alloc::vec![[0.0; 3], [0.0; 3]], 0).is_err());
        assert!(ArrayGeometry::new(alloc::vec![[0.0; 3]], 1).is_err());
    }

    #[test]
    fn random_subset_of_grid16_is_valid() {
        let g = ArrayGeometry::builtin("grid16").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut all: Vec<usize> = (0..16).collect();
        let (pick, _) = all.partial_shuffle(&mut rng, 3);
        let cfg = ChannelConfig::new(pick.to_vec(), 16).unwrap();
        let sub = g.subset(&cfg).unwrap();
        assert_eq!(sub.num_mics(), 3);
        assert_eq!(sub.mic_positions()[0], g.mic_positions()[cfg.indices()[0]]);
    }

    #[test]
    fn reference_remap() {
        let cfg = ChannelConfig::new(alloc::vec![3, 1, 4], 5).unwrap();
        assert_eq!(cfg.remap_reference(1), 1);
        assert_eq!(cfg.remap_reference(0), 0);
        assert!(ChannelConfig::new(alloc::vec![1, 1], 5).is_err());
        assert!(ChannelConfig::new(alloc::vec![5], 5).is_err());
        assert!(ChannelConfig::new(alloc::vec![], 5).is_err());
    }

    #[test]
    fn sampler_with_two_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let c = sample_channel_config(2, &mut rng).unwrap();
            assert!(c.indices() == [0, 1] || c.indices() == [1, 0]);
        }
        assert!(sample_channel_config(1, &mut rng).is_err());
    }

    #[test]
    fn sampler_is_reproducible() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_channel_config(5, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn sampler_count_is_uniform_and_never_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let c = sample_channel_config(5, &mut rng).unwrap();
            c.check_parent(5).unwrap();
            counts[c.len() - 2] += 1;
        }
        let expect = 10_000.0 / 4.0;
        let stat: f64 = counts.iter().map(|&o| (o as f64 - expect).powi(2) / expect).sum();
        let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
        assert!(p > 0.01, "counts {:?}, p {}", counts, p);
    }
}
