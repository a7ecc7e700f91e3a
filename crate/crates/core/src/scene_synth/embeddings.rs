//! Random unit directions with guaranteed angular separation, used for
//! class embeddings and synthetic prompt sets.

use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

const MAX_ATTEMPTS: usize = 100_000;

pub fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn angle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (norm(a) * norm(b))).clamp(-1.0, 1.0).acos()
}

/// Smallest angle between any two of `vs` (π for fewer than two).
pub fn min_pairwise_angle(vs: &[Vec<f64>]) -> f64 {
    let mut best = std::f64::consts::PI;
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            best = best.min(angle(&vs[i], &vs[j]));
        }
    }
    best
}

/// `count` unit vectors, pairwise at least `min_angle` radians apart, by
/// rejection sampling.
pub fn separated_directions<R: Rng>(rng: &mut R, count: usize, dim: usize, min_angle: f64) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::Config(format!(
                "cannot place {count} directions in {dim} dimensions at least {:.1}° apart",
                min_angle.to_degrees()
            )));
        }
        let v = random_unit(rng, dim);
        if out.iter().all(|u| angle(u, &v) >= min_angle) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Rotates unit `v` by `theta` radians toward a random orthogonal direction.
pub fn tilt<R: Rng>(rng: &mut R, v: &[f64], theta: f64) -> Vec<f64> {
    if v.len() < 2 || theta == 0.0 {
        return v.to_vec();
    }
    loop {
        let r = random_unit(rng, v.len());
        let d: f64 = r.iter().zip(v).map(|(a, b)| a * b).sum();
        let ortho: Vec<f64> = r.iter().zip(v).map(|(a, b)| a - d * b).collect();
        let n = norm(&ortho);
        if n > 1e-6 {
            return v.iter().zip(&ortho).map(|(a, o)| a * theta.cos() + o / n * theta.sin()).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separation_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vs = separated_directions(&mut rng, 6, 8, 60f64.to_radians()).unwrap();
        assert!(min_pairwise_angle(&vs) >= 60f64.to_radians());
        assert!(vs.iter().all(|v| (norm(v) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn impossible_separation_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(separated_directions(&mut rng, 5, 2, 100f64.to_radians()).is_err());
    }

    #[test]
    fn tilt_angle_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_unit(&mut rng, 5);
        let t = tilt(&mut rng, &v, 0.3);
        assert!((angle(&v, &t) - 0.3).abs() < 1e-12);
        assert!((norm(&t) - 1.0).abs() < 1e-12);
    }
}
