use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::filters::Planes;

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f32 {
    let z: f64 = StandardNormal.sample(rng);
    z as f32
}

pub(crate) fn gaussian<R: Rng + ?Sized>(x: &mut Planes, sigma: f64, rng: &mut R) {
    let s = sigma as f32;
    x.for_each_value(|v| *v += s * normal(rng));
    x.clip();
}

/// Photon counting: `Poisson(x * photons) / photons`.
pub(crate) fn shot<R: Rng + ?Sized>(x: &mut Planes, photons: f64, rng: &mut R) {
    x.for_each_value(|v| {
        let lambda = (*v as f64).max(0.0) * photons;
        *v = if lambda > 0.0 {
            let k: f64 = Poisson::new(lambda).expect("positive rate").sample(rng);
            (k / photons) as f32
        } else {
            0.0
        };
    });
    x.clip();
}

/// Salt-and-pepper: each value is replaced with probability `amount`, by 0
/// or 1 with equal odds.
pub(crate) fn impulse<R: Rng + ?Sized>(x: &mut Planes, amount: f64, rng: &mut R) {
    x.for_each_value(|v| {
        if rng.random_bool(amount) {
            *v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        }
    });
}

pub(crate) fn speckle<R: Rng + ?Sized>(x: &mut Planes, sigma: f64, rng: &mut R) {
    let s = sigma as f32;
    x.for_each_value(|v| *v += *v * s * normal(rng));
    x.clip();
}
