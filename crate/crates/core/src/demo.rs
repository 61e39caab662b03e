//! Deterministic synthetic clips: smooth moving color gradients with a
//! bright traveling blob. Used as self-contained fixtures for the examples,
//! tests, and the `demo-data` command, so the pipeline can run without any
//! external footage.

use crate::tensor::{Dims5, Scalar, Tensor5};

pub fn synthetic_clip<T: Scalar>(
    frames: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Tensor5<T> {
    let mut rng = crate::rng::Rng::from_seed(seed);
    let fx = rng.range(1.0, 2.5);
    let fy = rng.range(1.0, 2.5);
    let (vx, vy) = (rng.range(0.5, 2.0), rng.range(0.3, 1.5));
    let (bx, by) = (rng.range(0.2, 0.8), rng.range(0.2, 0.8));
    let (bvx, bvy) = (rng.range(-1.5, 1.5), rng.range(-1.5, 1.5));
    let radius = rng.range(0.12, 0.25) * height.min(width) as f64;

    let tau = std::f64::consts::TAU;
    let mut out = Tensor5::zeros(Dims5::new(1, 3, frames, height, width));
    for t in 0..frames {
        let cx = (bx * width as f64 + bvx * t as f64).rem_euclid(width as f64);
        let cy = (by * height as f64 + bvy * t as f64).rem_euclid(height as f64);
        for y in 0..height {
            for x in 0..width {
                let u = (x as f64 + vx * t as f64) / width as f64;
                let v = (y as f64 + vy * t as f64) / height as f64;
                let dx = (x as f64 - cx)
                    .abs()
                    .min(width as f64 - (x as f64 - cx).abs());
                let dy = (y as f64 - cy)
                    .abs()
                    .min(height as f64 - (y as f64 - cy).abs());
                let blob = (-(dx * dx + dy * dy) / (radius * radius)).exp();
                for c in 0..3 {
                    let phase = c as f64 * tau / 3.0;
                    let wave = 0.45 * (tau * fx * u + phase).sin() * (tau * fy * v).cos()
                        + 0.25 * (tau * (u + v) + phase).sin();
                    let value = (wave + 0.5 * blob).clamp(-0.95, 0.95);
                    *out.at_mut(0, c, t, y, x) = T::of_f64(value);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_is_deterministic_and_in_range() {
        let a = synthetic_clip::<f32>(4, 16, 16, 9);
        let b = synthetic_clip::<f32>(4, 16, 16, 9);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn consecutive_frames_differ() {
        let clip = synthetic_clip::<f64>(3, 16, 16, 4);
        let (a, b) = (clip.index(0, 0, 0, 0, 0), clip.index(0, 0, 1, 0, 0));
        assert_ne!(clip.data()[a..a + 256], clip.data()[b..b + 256]);
    }
}
