use crate::error::Result;
use crate::image::Image;
use crate::metrics::ssim_with_grad;

/// `(1 - w) * L1 + w * (1 - SSIM)` and its gradient with respect to `rendered`.
pub fn photometric_loss(rendered: &Image, target: &Image, ssim_weight: f64) -> Result<(f64, Image)> {
    rendered.ensure_same_shape(target)?;
    let n = (rendered.pixels().len() * 3) as f64;
    let mut l1 = 0.0;
    let mut grad = Image::new(rendered.width(), rendered.height(), [0.0; 3]);
    for ((g, r), t) in grad.pixels_mut().iter_mut().zip(rendered.pixels()).zip(target.pixels()) {
        for c in 0..3 {
            let d = r[c] - t[c];
            l1 += d.abs();
            g[c] = (1.0 - ssim_weight) * sign(d) / n;
        }
    }
    l1 /= n;
    if ssim_weight == 0.0 {
        return Ok((l1, grad));
    }
    let (ssim, d_ssim) = ssim_with_grad(rendered, target)?;
    for (g, ds) in grad.pixels_mut().iter_mut().zip(d_ssim.pixels()) {
        for c in 0..3 {
            g[c] -= ssim_weight * ds[c];
        }
    }
    Ok(((1.0 - ssim_weight) * l1 + ssim_weight * (1.0 - ssim), grad))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_images() {
        let img = Image::new(12, 12, [0.25, 0.5, 0.75]);
        let (loss, grad) = photometric_loss(&img, &img, 0.2).unwrap();
        assert!(loss.abs() < 1e-15);
        assert!(grad.pixels().iter().flatten().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn pure_l1() {
        let a = Image::new(4, 5, [0.6; 3]);
        let b = Image::new(4, 5, [0.5; 3]);
        let (loss, grad) = photometric_loss(&a, &b, 0.0).unwrap();
        assert_relative_eq!(loss, 0.1, epsilon = 1e-12);
        for g in grad.pixels().iter().flatten() {
            assert_eq!(*g, 1.0 / 60.0);
        }
        assert!(photometric_loss(&a, &Image::new(5, 4, [0.0; 3]), 0.2).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mk = |rng: &mut ChaCha8Rng| {
            let px = (0..15 * 13).map(|_| [0, 1, 2].map(|_| rng.gen_range(0.0..1.0))).collect();
            Image::from_pixels(15, 13, px).unwrap()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let (_, grad) = photometric_loss(&a, &b, 0.2).unwrap();
        let h = 1e-6;
        for _ in 0..40 {
            let (x, y, c) = (rng.gen_range(0..15), rng.gen_range(0..13), rng.gen_range(0..3));
            let bump = |delta: f64| {
                let mut img = a.clone();
                let mut v = img.get(x, y);
                v[c] += delta;
                img.set(x, y, v);
                photometric_loss(&img, &b, 0.2).unwrap().0
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            let analytic = grad.get(x, y)[c];
            assert!((numeric - analytic).abs() <= 1e-5 * numeric.abs().max(analytic.abs()).max(1e-3));
        }
    }
}
