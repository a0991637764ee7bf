use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{DatasetRecord, CHANNELS, SIDE};
use crate::error::{Result, SemError};
use crate::rng::RngState;

const NOISE_STD: f64 = 0.05;
const JITTER: f64 = 1.5;

/// Class `c` is a colored Gaussian blob on a grey background with its own
/// hue, centre and radius. Labels cycle `0,1,..,classes-1` so every class
/// appears `⌊n/classes⌋` or `⌈n/classes⌉` times.
pub fn synthetic_dataset(n: usize, classes: usize, seed: u64) -> Result<Vec<DatasetRecord>> {
    if classes == 0 {
        return Err(SemError::domain(
            "synthetic dataset needs at least one class",
        ));
    }
    if n < classes {
        return Err(SemError::domain(format!(
            "synthetic dataset of {n} records cannot cover {classes} classes"
        )));
    }
    let protos: Vec<Prototype> = (0..classes).map(|c| Prototype::new(c, classes)).collect();
    let mut rng = RngState::new(seed, 0x5_1A7).rng();
    Ok((0..n)
        .map(|i| {
            let label = i % classes;
            DatasetRecord {
                image: protos[label].sample(&mut rng),
                label,
                coarse_label: None,
            }
        })
        .collect())
}

struct Prototype {
    color: [f64; CHANNELS],
    cy: f64,
    cx: f64,
    radius: f64,
}

impl Prototype {
    fn new(c: usize, classes: usize) -> Self {
        let hue = c as f64 / classes as f64;
        let color = [0.0, 1.0 / 3.0, 2.0 / 3.0].map(|off: f64| {
            let phase = 2.0 * std::f64::consts::PI * (hue + off);
            0.5 + 0.45 * phase.cos()
        });
        let angle = 2.0 * std::f64::consts::PI * (c as f64 * 0.618_033_988_75).fract();
        Self {
            color,
            cy: 15.5 + 7.0 * angle.sin(),
            cx: 15.5 + 7.0 * angle.cos(),
            radius: 4.0 + (c % 3) as f64 * 1.5,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<f32> {
        let cy = self.cy + rng.random_range(-JITTER..JITTER);
        let cx = self.cx + rng.random_range(-JITTER..JITTER);
        let two_s2 = 2.0 * self.radius * self.radius;
        let noise = Normal::new(0.0, NOISE_STD).expect("finite std");
        let mut image = Vec::with_capacity(CHANNELS * SIDE * SIDE);
        for &col in &self.color {
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let blob = (-d2 / two_s2).exp();
                    let v = 0.5 + (col - 0.5) * blob + noise.sample(rng);
                    image.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
        image
    }
}
