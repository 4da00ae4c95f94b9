//! Synthetic Gaussian-cluster fixtures for tests, demos and the `synth`
//! CLI command.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::matrix::Matrix;
use crate::seed;

/// Isotropic Gaussian clusters with means on scaled coordinate axes.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianClusters {
    pub means: Matrix,
    pub sigma: f64,
}

impl GaussianClusters {
    /// `num_classes` means at `a·e_c` with `a` chosen so every pair of means
    /// is exactly `separation·sigma` apart. Needs `dim >= num_classes`.
    pub fn orthogonal(num_classes: usize, dim: usize, separation: f64, sigma: f64) -> Self {
        assert!(dim >= num_classes, "need dim >= num_classes for axis means");
        let scale = separation * sigma / std::f64::consts::SQRT_2;
        let mut means = Matrix::zeros(num_classes, dim);
        for c in 0..num_classes {
            means[(c, c)] = scale;
        }
        Self { means, sigma }
    }

    pub fn num_classes(&self) -> usize {
        self.means.rows()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// `per_class` draws from each listed cluster, grouped by class in the
    /// order given. Labels are the cluster indices.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        classes: &[usize],
        per_class: usize,
        rng: &mut R,
    ) -> (Matrix, Vec<i64>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(classes.len() * per_class * d);
        let mut labels = Vec::with_capacity(classes.len() * per_class);
        for &c in classes {
            let mean = self.means.row(c);
            for _ in 0..per_class {
                for &m in mean {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(m + self.sigma * z);
                }
                labels.push(c as i64);
            }
        }
        let rows = labels.len();
        (Matrix::from_vec(rows, d, data).unwrap(), labels)
    }
}

/// Known/unknown Gaussian-cluster fixture for the open-set pipeline.
/// Known classes are `0..known`; OOD rows carry no labels.
#[derive(Debug, Clone)]
pub struct OpenSetFixture {
    pub train: Matrix,
    pub train_labels: Vec<usize>,
    pub id_test: Matrix,
    pub id_test_labels: Vec<usize>,
    pub ood_test: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenSetSpec {
    pub known: usize,
    pub unknown: usize,
    pub dim: usize,
    /// Inter-mean distance in units of the within-class deviation.
    pub separation: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Draw the "unknown" rows from the known clusters instead (null case).
    pub unknowns_from_known: bool,
}

impl Default for OpenSetSpec {
    fn default() -> Self {
        Self {
            known: 6,
            unknown: 4,
            dim: 64,
            separation: 10.0,
            train_per_class: 500,
            test_per_class: 200,
            unknowns_from_known: false,
        }
    }
}

impl OpenSetSpec {
    pub fn generate(&self, seed_value: u64) -> OpenSetFixture {
        let clusters =
            GaussianClusters::orthogonal(self.known + self.unknown, self.dim, self.separation, 1.0);
        let mut rng = seed::rng(seed_value, "synth/open-set");
        let known: Vec<usize> = (0..self.known).collect();
        let (train, tl) = clusters.sample(&known, self.train_per_class, &mut rng);
        let (id_test, il) = clusters.sample(&known, self.test_per_class, &mut rng);
        let (ood_test, _) = if self.unknowns_from_known {
            // same mixture as the ID test set, one row per draw
            let cycle: Vec<usize> = (0..self.unknown * self.test_per_class)
                .map(|i| i % self.known)
                .collect();
            clusters.sample(&cycle, 1, &mut rng)
        } else {
            let unknown: Vec<usize> = (self.known..self.known + self.unknown).collect();
            clusters.sample(&unknown, self.test_per_class, &mut rng)
        };
        let to_usize = |v: Vec<i64>| v.into_iter().map(|l| l as usize).collect();
        OpenSetFixture {
            train,
            train_labels: to_usize(tl),
            id_test,
            id_test_labels: to_usize(il),
            ood_test,
        }
    }
}

/// Labelled train/test draws from the same clusters, for the incremental
/// protocol.
#[derive(Debug, Clone)]
pub struct ClusterSplit {
    pub train: Matrix,
    pub train_labels: Vec<i64>,
    pub test: Matrix,
    pub test_labels: Vec<i64>,
}

/// `classes` clusters in `dim` dimensions, `separation` deviations apart.
pub fn cluster_split(
    classes: usize,
    dim: usize,
    separation: f64,
    train_per_class: usize,
    test_per_class: usize,
    seed_value: u64,
) -> ClusterSplit {
    let clusters = GaussianClusters::orthogonal(classes, dim, separation, 1.0);
    let mut rng = seed::rng(seed_value, "synth/cluster-split");
    let all: Vec<usize> = (0..classes).collect();
    let (train, train_labels) = clusters.sample(&all, train_per_class, &mut rng);
    let (test, test_labels) = clusters.sample(&all, test_per_class, &mut rng);
    ClusterSplit {
        train,
        train_labels,
        test,
        test_labels,
    }
}

/// Two unit-variance Gaussians at `±offset·e_1` with labels 0 / 1.
#[derive(Debug, Clone)]
pub struct Labeled {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

pub fn two_gaussians(dim: usize, per_class: usize, offset: f64, seed_value: u64) -> Labeled {
    let mut rng = seed::rng(seed_value, "synth/two_gaussians");
    let mut data = Vec::with_capacity(2 * per_class * dim);
    let mut labels = Vec::with_capacity(2 * per_class);
    for (label, sign) in [(0usize, 1.0), (1, -1.0)] {
        for _ in 0..per_class {
            for j in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                data.push(if j == 0 { sign * offset + z } else { z });
            }
            labels.push(label);
        }
    }
    Labeled {
        features: Matrix::from_vec(labels.len(), dim, data).unwrap(),
        labels,
    }
}
