//! Procedurally generated frame sequences with known motion.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blur::FrameSequence;
use crate::tensor::{Shape, Tensor};

/// A white `size x size` square on black, vertically centred, starting at
/// column 4 and moving right by `speed` pixels per frame.
pub fn translating_square(height: usize, width: usize, size: usize, frames: usize, speed: usize, fps: f64) -> FrameSequence {
    let y0 = (height - size) / 2;
    let x0 = 4;
    let frames = (0..frames)
        .map(|t| {
            let left = x0 + t * speed;
            Tensor::from_fn(Shape::new(1, 3, height, width), |_, _, y, x| {
                if (y0..y0 + size).contains(&y) && (left..left + size).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect();
    FrameSequence::new(frames, fps).expect("non-empty, equally shaped frames")
}

#[derive(Debug, Clone, Copy)]
struct Sprite {
    y: isize,
    x: isize,
    h: usize,
    w: usize,
    vy: isize,
    vx: isize,
    color_a: [f64; 3],
    color_b: [f64; 3],
    period: usize,
    diagonal: bool,
}

impl Sprite {
    fn sample(&self, t: usize, y: usize, x: usize) -> Option<[f64; 3]> {
        let top = self.y + self.vy * t as isize;
        let left = self.x + self.vx * t as isize;
        let (dy, dx) = (y as isize - top, x as isize - left);
        if dy < 0 || dx < 0 || dy >= self.h as isize || dx >= self.w as isize {
            return None;
        }
        let phase = if self.diagonal { (dy + dx) as usize } else { dx as usize };
        Some(if (phase / self.period).is_multiple_of(2) {
            self.color_a
        } else {
            self.color_b
        })
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)]
}

/// A static textured background with several striped objects moving at
/// integer velocities of up to 2 px/frame. Everything is deterministic in
/// `seed`; static pixels are identical across frames.
pub fn moving_objects(height: usize, width: usize, frames: usize, objects: usize, seed: u64, fps: f64) -> FrameSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = random_color(&mut rng);
    let tint = random_color(&mut rng);
    let cell = rng.random_range(6..14usize);
    let sprites: Vec<Sprite> = (0..objects)
        .map(|_| {
            let h = rng.random_range(height / 6..height / 2 + 1).max(2);
            let w = rng.random_range(width / 6..width / 2 + 1).max(2);
            let (vy, vx) = loop {
                let v = (rng.random_range(-2..=2i64) as isize, rng.random_range(-2..=2i64) as isize);
                if v != (0, 0) {
                    break v;
                }
            };
            Sprite {
                y: rng.random_range(0..height as i64) as isize - h as isize / 2,
                x: rng.random_range(0..width as i64) as isize - w as isize / 2,
                h,
                w,
                vy,
                vx,
                color_a: random_color(&mut rng),
                color_b: random_color(&mut rng),
                period: rng.random_range(2..6),
                diagonal: rng.random_bool(0.5),
            }
        })
        .collect();
    let frames = (0..frames)
        .map(|t| {
            let mut img = Tensor::zeros(Shape::new(1, 3, height, width));
            for y in 0..height {
                for x in 0..width {
                    let checker = ((y / cell) + (x / cell)) % 2 == 0;
                    let ramp = (x + y) as f64 / (width + height) as f64;
                    let mut rgb = [0.0; 3];
                    for c in 0..3 {
                        let v = base[c] * (0.6 + 0.4 * ramp) + if checker { 0.15 * tint[c] } else { 0.0 };
                        rgb[c] = v.clamp(0.0, 1.0);
                    }
                    // later sprites are drawn on top
                    for s in &sprites {
                        if let Some(col) = s.sample(t, y, x) {
                            rgb = col;
                        }
                    }
                    for (c, v) in rgb.iter().enumerate() {
                        img.set(0, c, y, x, *v);
                    }
                }
            }
            img
        })
        .collect();
    FrameSequence::new(frames, fps).expect("non-empty, equally shaped frames")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_moves_one_pixel_per_frame() {
        let s = translating_square(32, 32, 4, 3, 1, 240.0);
        assert_eq!(s.len(), 3);
        assert_eq!(s.frames()[0].at(0, 0, 14, 4), 1.0);
        assert_eq!(s.frames()[0].at(0, 0, 14, 8), 0.0);
        assert_eq!(s.frames()[2].at(0, 0, 14, 9), 1.0);
        assert_eq!(s.frames()[2].at(0, 0, 14, 5), 0.0);
    }

    #[test]
    fn moving_objects_is_deterministic_and_in_range() {
        let a = moving_objects(24, 20, 5, 3, 9, 240.0);
        let b = moving_objects(24, 20, 5, 3, 9, 240.0);
        assert_eq!(a, b);
        assert!(a.frames().iter().all(|f| f.data().iter().all(|v| (0.0..=1.0).contains(v))));
        assert_ne!(a.frames()[0], a.frames()[4]);
    }
}
