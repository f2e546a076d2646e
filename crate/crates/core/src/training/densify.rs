use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::appearance::{logit, probe_grid, sigmoid, Appearance};
use crate::error::{Error, Result};
use crate::renderer::GradientBuffer;
use crate::scene::Scene;

/// Running mean of per-view screen-space gradient norms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub views: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            views: vec![0; n],
        }
    }

    pub fn accumulate(&mut self, grads: &GradientBuffer) {
        for (i, (&g, &vis)) in grads.screen_grad.iter().zip(&grads.visible).enumerate() {
            if vis {
                self.grad_sum[i] += g;
                self.views[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.views[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.views[i] as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensifyParams {
    /// Mean screen-space gradient above which a surfel is cloned or split.
    pub grad_threshold: f64,
    /// Surfels with max scale at or below this are cloned, larger ones split.
    pub clone_scale: f64,
    pub prune_opacity: f64,
    pub max_gaussians: Option<usize>,
    pub split_children: usize,
    pub split_scale_divisor: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyOutcome {
    /// Previous index of each surfel in the new scene (`None` = newly created).
    pub origin: Vec<Option<usize>>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clone small high-gradient surfels, split large ones, then prune
/// transparent ones. Growth stops at `max_gaussians`; when candidates exceed
/// the budget the highest mean gradients win (ties by lower index).
pub fn densify(scene: &mut Scene, stats: &DensifyStats, params: &DensifyParams, rng: &mut impl Rng) -> DensifyOutcome {
    let n = scene.len();
    let mut candidates: Vec<(usize, f64)> = (0..n)
        .map(|i| (i, stats.mean(i)))
        .filter(|&(_, g)| g > params.grad_threshold)
        .collect();
    let extra_per_split = params.split_children.saturating_sub(1).max(1);
    if let Some(cap) = params.max_gaussians {
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut room = cap.saturating_sub(n);
        candidates.retain(|&(i, _)| {
            let cost = if is_small(scene, i, params) { 1 } else { extra_per_split };
            if cost <= room {
                room -= cost;
                true
            } else {
                false
            }
        });
        candidates.sort_by_key(|c| c.0);
    }

    let mut outcome = DensifyOutcome::default();
    let mut split_parent = vec![false; n];
    let mut new_surfels = Vec::new();
    for &(i, _) in &candidates {
        let parent = &scene.surfels[i];
        if is_small(scene, i, params) {
            new_surfels.push(parent.clone());
            outcome.cloned += 1;
        } else {
            split_parent[i] = true;
            outcome.split += 1;
            let frame = parent.geometry.frame();
            let scale = parent.geometry.scale();
            for _ in 0..params.split_children {
                let mut child = parent.clone();
                let du: f64 = rng.sample(StandardNormal);
                let dv: f64 = rng.sample(StandardNormal);
                let offset = frame * Vector3::new(du * scale[0], dv * scale[1], 0.0);
                child.geometry.center += offset;
                for ls in &mut child.geometry.log_scale {
                    *ls -= params.split_scale_divisor.ln();
                }
                new_surfels.push(child);
            }
        }
    }

    let mut surfels = Vec::with_capacity(n + new_surfels.len());
    let mut origin = Vec::with_capacity(n + new_surfels.len());
    for (i, s) in scene.surfels.drain(..).enumerate() {
        if !split_parent[i] {
            surfels.push(s);
            origin.push(Some(i));
        }
    }
    for s in new_surfels {
        surfels.push(s);
        origin.push(None);
    }

    let mut kept = Vec::with_capacity(surfels.len());
    let mut kept_origin = Vec::with_capacity(surfels.len());
    for (s, o) in surfels.into_iter().zip(origin) {
        if s.appearance.peak_opacity() < params.prune_opacity {
            outcome.pruned += 1;
        } else {
            kept.push(s);
            kept_origin.push(o);
        }
    }
    scene.surfels = kept;
    outcome.origin = kept_origin;
    outcome
}

fn is_small(scene: &Scene, i: usize, params: &DensifyParams) -> bool {
    let [su, sv] = scene.surfels[i].geometry.scale();
    su.max(sv) <= params.clone_scale
}

/// Cap every surfel's opacity at `ceiling`. Constant surfels clamp the
/// effective opacity; bilinear corners and kernel weights are clamped
/// individually; the network's opacity bias is pulled below the ceiling and
/// its opacity output weights are damped tenfold.
pub fn reset_opacity(scene: &mut Scene, ceiling: f64) {
    for s in &mut scene.surfels {
        match &mut s.appearance {
            Appearance::Constant { opacity } => {
                *opacity = logit(sigmoid(*opacity).min(ceiling));
            }
            Appearance::Bilinear(b) => {
                for a in &mut b.corner_opacities {
                    *a = a.min(ceiling);
                }
            }
            Appearance::MovableKernels(k) => {
                for a in &mut k.opacities {
                    *a = a.min(ceiling);
                }
            }
            Appearance::TinyMlp(m) => {
                let probe = Appearance::TinyMlp(m.clone());
                let mean = probe_grid().map(|p| probe.eval(p).alpha).sum::<f64>() / 25.0;
                m.b3[3] = mean.min(ceiling);
                let h = m.hidden;
                for w in &mut m.w3[3 * h..4 * h] {
                    *w *= 0.1;
                }
            }
        }
    }
}

/// Percentage of kernel centers lying within `cutoff` of the surfel origin.
pub fn kernel_inside_fraction(scene: &Scene, cutoff: f64) -> Result<f64> {
    let mut inside = 0usize;
    let mut total = 0usize;
    for s in &scene.surfels {
        let Appearance::MovableKernels(k) = &s.appearance else {
            return Err(Error::InvalidVariant(format!(
                "kernel statistics need movable kernels, found {}",
                s.appearance.spec()
            )));
        };
        for c in &k.centers {
            total += 1;
            if (c[0] * c[0] + c[1] * c[1]).sqrt() <= cutoff {
                inside += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidVariant("scene has no kernels".into()));
    }
    Ok(100.0 * inside as f64 / total as f64)
}
