use rand::Rng;
use rand_distr::StandardNormal;

use super::Mat;

pub fn normal<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    })
}
