//! Fixtures shared by the benchmarks.

use localblur_core::capture_sim::{Degradation, SceneSpec, SimScene};
use localblur_core::Image;

/// Fully degraded simulated scene of the given size, with sprites and
/// motion scaled to the shorter side.
pub fn degraded_scene(width: usize, height: usize, targets: usize) -> SimScene {
    let short = width.min(height);
    let spec = SceneSpec {
        width,
        height,
        targets,
        frames: 12,
        degradation: Degradation::full(),
        seed: 7,
        sprite_side: (short / 8, short / 4),
        motion: (short as f64 / 32.0, short as f64 / 8.0),
        ..SceneSpec::default()
    };
    SimScene::generate(&spec).expect("valid bench scene")
}

/// Smooth deterministic texture in `[0, 1]`.
pub fn texture(width: usize, height: usize) -> Image {
    Image::from_fn(width, height, 3, |x, y, c| {
        let (x, y) = (x as f64, y as f64);
        0.5 + 0.2 * (0.11 * x + 0.7 * c as f64).sin() * (0.07 * y).cos()
            + 0.1 * (0.013 * x * y).sin()
    })
    .expect("nonempty bench image")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        let s = degraded_scene(128, 96, 1);
        assert_eq!(s.targets.len(), 1);
        let t = texture(16, 8);
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
