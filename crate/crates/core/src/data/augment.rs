use rand::Rng;

use super::{DatasetRecord, CHANNELS, SIDE};

/// Pad-and-crop plus horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub pad: usize,
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            pad: 4,
            flip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// One concrete draw of the augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropFlip {
    /// Top-left corner of the crop inside the padded image, each in `0..=2·pad`.
    pub dy: usize,
    pub dx: usize,
    pub flip: bool,
}

impl CropFlip {
    pub fn draw(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let span = 2 * cfg.pad + 1;
        Self {
            dy: rng.random_range(0..span),
            dx: rng.random_range(0..span),
            flip: rng.random_bool(cfg.flip_prob.clamp(0.0, 1.0)),
        }
    }
}

/// Apply a fixed crop/flip to a zero-padded copy of the image.
pub fn augment_with(record: &DatasetRecord, pad: usize, draw: CropFlip) -> DatasetRecord {
    let mut image = vec![0.0f32; record.image.len()];
    for c in 0..CHANNELS {
        let src = &record.image[c * SIDE * SIDE..][..SIDE * SIDE];
        let dst = &mut image[c * SIDE * SIDE..][..SIDE * SIDE];
        for y in 0..SIDE {
            let sy = (y + draw.dy) as isize - pad as isize;
            if !(0..SIDE as isize).contains(&sy) {
                continue;
            }
            for x in 0..SIDE {
                let px = if draw.flip { SIDE - 1 - x } else { x };
                let sx = (px + draw.dx) as isize - pad as isize;
                if (0..SIDE as isize).contains(&sx) {
                    dst[y * SIDE + x] = src[sy as usize * SIDE + sx as usize];
                }
            }
        }
    }
    DatasetRecord {
        image,
        ..record.clone()
    }
}

/// Random augmentation; identity when disabled.
pub fn augment(record: &DatasetRecord, cfg: &AugmentConfig, rng: &mut impl Rng) -> DatasetRecord {
    if !cfg.enabled {
        return record.clone();
    }
    augment_with(record, cfg.pad, CropFlip::draw(cfg, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PIXELS;
    use crate::rng::RngState;

    fn ramp() -> DatasetRecord {
        DatasetRecord::new((0..PIXELS).map(|i| (i % 251) as f32 / 251.0).collect(), 3).unwrap()
    }

    #[test]
    fn centered_crop_without_flip_is_identity() {
        let r = ramp();
        let out = augment_with(
            &r,
            4,
            CropFlip {
                dy: 4,
                dx: 4,
                flip: false,
            },
        );
        assert_eq!(out, r);
    }

    #[test]
    fn flip_twice_is_identity() {
        let r = ramp();
        let once = augment_with(
            &r,
            4,
            CropFlip {
                dy: 4,
                dx: 4,
                flip: true,
            },
        );
        assert_ne!(once, r);
        assert_eq!(
            augment_with(
                &once,
                4,
                CropFlip {
                    dy: 4,
                    dx: 4,
                    flip: true
                }
            ),
            r
        );
    }

    #[test]
    fn corner_crop_shifts_and_fills_zero() {
        let r = ramp();
        let out = augment_with(
            &r,
            4,
            CropFlip {
                dy: 0,
                dx: 0,
                flip: false,
            },
        );
        assert_eq!(out.image[0], 0.0);
        assert_eq!(out.image[4 * SIDE + 4], r.image[0]);
        assert_eq!(out.image[SIDE * SIDE - 1], r.image[27 * SIDE + 27]);
    }

    #[test]
    fn disabled_is_identity() {
        let r = ramp();
        let mut rng = RngState::new(0, 0).rng();
        assert_eq!(augment(&r, &AugmentConfig::disabled(), &mut rng), r);
    }
}
