use serde::{Deserialize, Serialize};

use super::{GroundTruth, LabeledSet, TargetSet};
use crate::numkit::{Matrix, Rng};
use crate::{Error, Result};

const MAX_REJECTIONS: usize = 10_000;

/// Keeps only a few target samples for a random subset of classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Imbalance {
    /// Fraction of all target classes (rounded up) that get the reduced count.
    pub class_fraction: f64,
    pub samples: usize,
}

/// Recipe for a Gaussian-blob source/target pair with an affine domain shift.
///
/// Class centers are drawn uniformly from `[-box_half_width, box_half_width]^dim`
/// and rejected until every pair is at least `separation * sigma` apart.
/// Source classes are `N(center, sigma² I)` for the known classes only. Target
/// samples cover known and implicit classes and are pushed through
/// `x -> scale * rotate(x) + translation`, where `rotate` turns the
/// `(axis 0, axis 1)` plane by `rotation` radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftSpec {
    pub num_known: usize,
    pub num_implicit: usize,
    pub dim: usize,
    pub sigma: f64,
    pub separation: f64,
    pub box_half_width: f64,
    pub rotation: f64,
    pub translation: f64,
    pub scale: f64,
    pub source_per_class: usize,
    pub target_per_class: usize,
    pub imbalance: Option<Imbalance>,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec {
            num_known: 4,
            num_implicit: 3,
            dim: 6,
            sigma: 1.0,
            separation: 6.0,
            box_half_width: 6.0,
            rotation: 0.5,
            translation: 1.5,
            scale: 1.1,
            source_per_class: 100,
            target_per_class: 100,
            imbalance: None,
        }
    }
}

impl ShiftSpec {
    /// Like the default, but with centers only `3 sigma` apart.
    pub fn hard() -> Self {
        ShiftSpec {
            separation: 3.0,
            box_half_width: 3.0,
            ..ShiftSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("shift spec: {m}")));
        if self.num_known == 0 || self.dim == 0 {
            return bad("num_known and dim must be >= 1");
        }
        if self.source_per_class == 0 || self.target_per_class == 0 {
            return bad("per-class sample counts must be >= 1");
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return bad("sigma must be > 0");
        }
        if !(self.separation >= 0.0) || !(self.box_half_width > 0.0) || !(self.scale > 0.0) {
            return bad("separation >= 0, box_half_width > 0 and scale > 0 required");
        }
        if !self.rotation.is_finite() || !self.translation.is_finite() {
            return bad("rotation and translation must be finite");
        }
        if self.dim < 2 && self.rotation != 0.0 {
            return bad("rotation needs dim >= 2");
        }
        if let Some(im) = &self.imbalance {
            if !(0.0..=1.0).contains(&im.class_fraction) || im.samples == 0 {
                return bad("imbalance needs class_fraction in [0,1] and samples >= 1");
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_known + self.num_implicit
    }

    fn shift(&self, x: &mut [f64]) {
        if self.dim >= 2 {
            let (s, c) = self.rotation.sin_cos();
            let (a, b) = (x[0], x[1]);
            x[0] = c * a - s * b;
            x[1] = s * a + c * b;
        }
        for v in x.iter_mut() {
            *v = self.scale * *v + self.translation;
        }
    }
}

fn sample_centers(spec: &ShiftSpec, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let min_dist2 = (spec.separation * spec.sigma).powi(2);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes());
    let mut rejections = 0;
    while centers.len() < spec.num_classes() {
        let c: Vec<f64> = (0..spec.dim)
            .map(|_| rng.uniform_range(-spec.box_half_width, spec.box_half_width))
            .collect();
        let ok = centers.iter().all(|o| {
            o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() >= min_dist2
        });
        if ok {
            centers.push(c);
        } else {
            rejections += 1;
            if rejections > MAX_REJECTIONS {
                return Err(Error::Generator(format!(
                    "could not place {} centers {} apart in [-{w}, {w}]^{}; increase box_half_width",
                    spec.num_classes(),
                    spec.separation * spec.sigma,
                    spec.dim,
                    w = spec.box_half_width,
                )));
            }
        }
    }
    Ok(centers)
}

/// Draws a source set, a target set and the target's ground truth.
pub fn generate(spec: &ShiftSpec, rng: &mut Rng) -> Result<(LabeledSet, TargetSet, GroundTruth)> {
    spec.validate()?;
    let centers = sample_centers(spec, rng)?;

    let mut target_counts = vec![spec.target_per_class; spec.num_classes()];
    if let Some(im) = &spec.imbalance {
        let mut classes: Vec<usize> = (0..spec.num_classes()).collect();
        rng.shuffle(&mut classes);
        let n = (im.class_fraction * spec.num_classes() as f64).ceil() as usize;
        for &c in classes.iter().take(n) {
            target_counts[c] = im.samples.min(spec.target_per_class);
        }
    }

    let draw = |class: usize, rng: &mut Rng| -> Vec<f64> {
        centers[class]
            .iter()
            .map(|&m| m + spec.sigma * rng.normal())
            .collect()
    };

    let mut source: Vec<(Vec<f64>, usize)> = Vec::new();
    for class in 0..spec.num_known {
        for _ in 0..spec.source_per_class {
            source.push((draw(class, rng), class));
        }
    }
    let mut target: Vec<(Vec<f64>, usize)> = Vec::new();
    for (class, &count) in target_counts.iter().enumerate() {
        for _ in 0..count {
            let mut x = draw(class, rng);
            spec.shift(&mut x);
            target.push((x, class));
        }
    }
    rng.shuffle(&mut source);
    rng.shuffle(&mut target);

    let (sx, sy): (Vec<_>, Vec<_>) = source.into_iter().unzip();
    let (tx, ty): (Vec<_>, Vec<_>) = target.into_iter().unzip();
    let source = LabeledSet::new(Matrix::from_rows(&sx)?, sy, spec.num_known)?;
    let target = TargetSet::new(Matrix::from_rows(&tx)?)?;
    Ok((source, target, GroundTruth::new(ty)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nearest_centroid_accuracy(set: &LabeledSet) -> f64 {
        let k = set.num_classes();
        let d = set.dim();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (row, &l) in set.features().iter_rows().zip(set.labels()) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(row) {
                *s += v;
            }
        }
        for (s, &c) in sums.iter_mut().zip(&counts) {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
        let correct = set
            .features()
            .iter_rows()
            .zip(set.labels())
            .filter(|(row, &l)| {
                let best = (0..k)
                    .min_by(|&a, &b| {
                        let da: f64 = sums[a].iter().zip(*row).map(|(x, y)| (x - y).powi(2)).sum();
                        let db: f64 = sums[b].iter().zip(*row).map(|(x, y)| (x - y).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                best == l
            })
            .count();
        correct as f64 / set.len() as f64
    }

    #[test]
    fn default_benchmark_shapes_and_separability() {
        let spec = ShiftSpec::default();
        for seed in 0..5 {
            let (s, t, gt) = generate(&spec, &mut Rng::new(seed)).unwrap();
            assert_eq!(s.len(), 400);
            assert_eq!(t.len(), 700);
            assert_eq!(gt.len(), 700);
            assert_eq!(gt.num_implicit(4), 3);
            assert!(nearest_centroid_accuracy(&s) >= 0.99);
        }
    }

    #[test]
    fn closed_set_when_no_implicit_classes() {
        let spec = ShiftSpec {
            num_implicit: 0,
            ..ShiftSpec::default()
        };
        let (_, _, gt) = generate(&spec, &mut Rng::new(1)).unwrap();
        assert!(gt.labels().iter().all(|&l| l < 4));
    }

    #[test]
    fn identity_shift_collapses_to_centers() {
        let spec = ShiftSpec {
            sigma: 1e-12,
            separation: 0.0,
            rotation: 0.0,
            translation: 0.0,
            scale: 1.0,
            num_implicit: 0,
            source_per_class: 3,
            target_per_class: 3,
            ..ShiftSpec::default()
        };
        let (s, t, gt) = generate(&spec, &mut Rng::new(2)).unwrap();
        for (trow, &tl) in t.features().iter_rows().zip(gt.labels()) {
            let srow = s
                .features()
                .iter_rows()
                .zip(s.labels())
                .find(|(_, &l)| l == tl)
                .unwrap()
                .0;
            for (a, b) in trow.iter().zip(srow) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let spec = ShiftSpec::default();
        let a = generate(&spec, &mut Rng::new(7)).unwrap();
        let b = generate(&spec, &mut Rng::new(7)).unwrap();
        let c = generate(&spec, &mut Rng::new(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0.features(), c.0.features());
    }

    #[test]
    fn imbalance_reduces_some_classes() {
        let spec = ShiftSpec {
            imbalance: Some(Imbalance {
                class_fraction: 0.25,
                samples: 10,
            }),
            ..ShiftSpec::default()
        };
        let (_, t, gt) = generate(&spec, &mut Rng::new(3)).unwrap();
        assert_eq!(t.len(), 5 * 100 + 2 * 10);
        let mut counts = vec![0; 7];
        gt.labels().iter().for_each(|&l| counts[l] += 1);
        assert_eq!(counts.iter().filter(|&&c| c == 10).count(), 2);
    }

    #[test]
    fn impossible_packing_fails() {
        let spec = ShiftSpec {
            box_half_width: 0.5,
            ..ShiftSpec::default()
        };
        assert!(matches!(generate(&spec, &mut Rng::new(0)), Err(Error::Generator(_))));
    }

    #[test]
    fn validation() {
        let bad = ShiftSpec {
            num_known: 0,
            ..ShiftSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = ShiftSpec {
            sigma: 0.0,
            ..ShiftSpec::default()
        };
        assert!(bad.validate().is_err());
        assert!(ShiftSpec::hard().validate().is_ok());
    }
}
