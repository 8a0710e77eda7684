//! Synthetic seismograph readings for epicenter placement.
//!
//! Each event has a planar epicenter and an origin time. A sensor at
//! distance `d` records a damped oscillation that starts `d / speed`
//! seconds after the origin with amplitude `1 / (1 + d)`, plus separable
//! correlated noise. The label is the sensor nearest to the epicenter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::correlated_noise_with;
use super::{derive_seed, DatasetMetadata, NoiseSpec, ProcessDataset, Sample, SplitSizes, Splits, Target};
use crate::error::{Error, Result};
use crate::graph::{distance, Graph, Gso};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSpec {
    pub sample_rate_hz: f64,
    /// Propagation speed in coordinate units per second.
    pub speed: f64,
    /// Exponential decay rate of the oscillation envelope, per second.
    pub damping: f64,
    pub frequency_hz: f64,
    /// Origin times are uniform on `[0, max_origin_s]`.
    pub max_origin_s: f64,
    /// Epicenters are uniform on `[x_min, x_max] × [y_min, y_max]`.
    pub region: [f64; 4],
    pub noise: NoiseSpec,
}

impl Default for WaveSpec {
    fn default() -> Self {
        Self {
            sample_rate_hz: 2.0,
            speed: 0.1,
            damping: 0.1,
            frequency_hz: 0.05,
            max_origin_s: 10.0,
            region: [0.0, 1.0, 0.0, 1.0],
            noise: NoiseSpec {
                var_time: 0.3,
                var_nodes: 0.3,
                rho_time: 0.1,
                rho_nodes: 0.1,
            },
        }
    }
}

impl WaveSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.sample_rate_hz, self.speed, self.frequency_hz];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("sample rate, speed and frequency must be positive"));
        }
        if !(self.damping.is_finite() && self.damping >= 0.0) || !(self.max_origin_s >= 0.0) {
            return Err(Error::invalid("damping and origin window must be non-negative"));
        }
        let [x0, x1, y0, y1] = self.region;
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::invalid("epicenter region must have positive area"));
        }
        self.noise.validate()
    }
}

/// Index of the sensor nearest to `epicenter`; ties go to the lower index.
pub fn epicenter_label(coordinates: &[[f64; 2]], epicenter: [f64; 2]) -> usize {
    coordinates
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(best, bd), (i, &c)| {
            let d = distance(c, epicenter);
            if d < bd {
                (i, d)
            } else {
                (best, bd)
            }
        })
        .0
}

/// Noise-free `T × N` readings of one event.
pub fn epicenter_readings(coordinates: &[[f64; 2]], epicenter: [f64; 2], origin_s: f64, t_len: usize, wave: &WaveSpec) -> Vec<f64> {
    let n = coordinates.len();
    let mut out = vec![0.0; t_len * n];
    for (i, &c) in coordinates.iter().enumerate() {
        let d = distance(c, epicenter);
        let onset = origin_s + d / wave.speed;
        let amplitude = 1.0 / (1.0 + d);
        for t in 0..t_len {
            let tau = t as f64 / wave.sample_rate_hz - onset;
            if tau >= 0.0 {
                out[t * n + i] = amplitude
                    * (-wave.damping * tau).exp()
                    * (2.0 * std::f64::consts::PI * wave.frequency_hz * tau).sin();
            }
        }
    }
    out
}

/// Classification samples over a sensor graph that carries coordinates.
pub fn make_epicenter_dataset<T: Scalar>(
    graph: &Graph<T>,
    gso: &Gso<T>,
    sizes: SplitSizes,
    t_len: usize,
    wave: &WaveSpec,
    seed: u64,
) -> Result<ProcessDataset<T>> {
    wave.validate()?;
    if t_len == 0 {
        return Err(Error::invalid("sequence length must be positive"));
    }
    let coords = graph
        .coordinates()
        .ok_or_else(|| Error::invalid("epicenter data needs sensor coordinates"))?;
    let n = coords.len();
    let [x0, x1, y0, y1] = wave.region;
    let mut samples = Vec::with_capacity(sizes.total());
    for index in 0..sizes.total() as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index));
        let epicenter = [rng.random_range(x0..x1), rng.random_range(y0..y1)];
        let origin = rng.random_range(0.0..=wave.max_origin_s);
        let clean = epicenter_readings(coords, epicenter, origin, t_len, wave);
        let noise: Tensor<f64> = correlated_noise_with(t_len, n, &wave.noise, &mut rng)?;
        let values = clean.iter().zip(noise.data()).map(|(&a, &b)| T::lit(a + b)).collect();
        samples.push(Sample {
            input: Tensor::from_vec(&[t_len, n, 1], values)?,
            target: Target::Label(epicenter_label(coords, epicenter)),
        });
    }
    let ds = ProcessDataset {
        samples,
        splits: Splits::contiguous(sizes),
        graph: graph.clone(),
        gso: gso.clone(),
        metadata: DatasetMetadata {
            generator: "epicenter".into(),
            seed,
            noise: wave.noise,
            gso_kind: gso.kind(),
            wave: Some(*wave),
        },
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_gso, knn_graph, GsoKind};

    #[test]
    fn epicenter_on_a_sensor_is_labelled_with_it() {
        let coords = [[0.1, 0.1], [0.8, 0.3], [0.4, 0.9], [0.5, 0.5]];
        for (i, &c) in coords.iter().enumerate() {
            assert_eq!(epicenter_label(&coords, c), i);
        }
    }

    #[test]
    fn nearer_sensor_peaks_higher() {
        let coords = [[0.0, 0.0], [1.0, 0.0]];
        let wave = WaveSpec::default();
        let r = epicenter_readings(&coords, [0.3, 0.0], 0.0, 120, &wave);
        let peak = |i: usize| (0..120).map(|t| r[t * 2 + i].abs()).fold(0.0, f64::max);
        assert!(peak(0) > peak(1));
    }

    #[test]
    fn dataset_labels_match_nearest_sensor() {
        let coords = vec![[0.1, 0.2], [0.9, 0.1], [0.5, 0.5], [0.2, 0.8], [0.8, 0.9]];
        let g = knn_graph::<f64>(&coords, 2).unwrap();
        let s = build_gso(&g, GsoKind::NormalizedAdjacency).unwrap();
        let sizes = SplitSizes { train: 20, val: 0, test: 5 };
        let ds = make_epicenter_dataset(&g, &s, sizes, 60, &WaveSpec::default(), 9).unwrap();
        assert_eq!(ds.samples.len(), 25);
        assert!(ds.is_classification());
        assert_eq!(ds.input_dims(), Some((60, 5, 1)));
        assert_eq!(ds, make_epicenter_dataset(&g, &s, sizes, 60, &WaveSpec::default(), 9).unwrap());
        let plain = Graph::<f64>::empty(5).unwrap();
        assert!(make_epicenter_dataset(&plain, &s, sizes, 60, &WaveSpec::default(), 9).is_err());
    }
}
