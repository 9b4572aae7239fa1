use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

/// Gaussian-mixture classification benchmark.
///
/// Each class owns `clusters_per_class` isotropic Gaussian clusters with
/// standard deviation `cluster_std`. Cluster centers are drawn from
/// `N(0, separation^2 / dims * I)`, so a center lies about `separation`
/// from the origin and two centers about `separation * sqrt(2)` apart.
/// Several clusters per class make the class regions non-convex.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dims: usize,
    pub clusters_per_class: usize,
    pub separation: f64,
    pub cluster_std: f64,
    pub n_train: usize,
    pub n_unlabeled: usize,
    pub n_dev: usize,
    pub n_test: usize,
}

impl SyntheticSpec {
    /// The fixed desk-scale benchmark: 10 classes, 64 dims, 3 clusters per
    /// class, 5000 train, 20000 unlabeled, 2000 dev and 2000 test rows.
    pub fn benchmark() -> Self {
        Self {
            classes: 10,
            dims: 64,
            clusters_per_class: 3,
            separation: 4.0,
            cluster_std: 1.0,
            n_train: 5000,
            n_unlabeled: 20_000,
            n_dev: 2000,
            n_test: 2000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.dims == 0 || self.clusters_per_class == 0 {
            return Err(Error::Config("dims and clusters_per_class must be positive".into()));
        }
        if !(self.separation >= 0.0) || !(self.cluster_std >= 0.0) {
            return Err(Error::Config("separation and cluster_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// The four i.i.d. splits of a synthetic benchmark.
#[derive(Debug, Clone)]
pub struct SyntheticSplits {
    pub train: Dataset,
    pub unlabeled: Matrix,
    pub dev: Dataset,
    pub test: Dataset,
}

struct Mixture {
    centers: Matrix,
    classes: usize,
    per_class: usize,
    std: f64,
}

impl Mixture {
    fn sample(&self, n: usize, rng: &mut RngStream) -> (Matrix, Vec<usize>) {
        let d = self.centers.cols();
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let class = rng.below(self.classes);
            let cluster = class * self.per_class + rng.below(self.per_class);
            let center = self.centers.row(cluster);
            data.extend(center.iter().map(|c| c + self.std * rng.standard_normal()));
            labels.push(class);
        }
        (Matrix::from_vec_unchecked(n, d, data), labels)
    }
}

/// Draws train, unlabeled, dev and test splits; deterministic per seed.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticSplits> {
    spec.validate()?;
    let root = RngStream::new(seed);
    let mut center_rng = root.child(0);
    let clusters = spec.classes * spec.clusters_per_class;
    let scale = spec.separation / (spec.dims as f64).sqrt();
    let centers = Matrix::from_vec_unchecked(
        clusters,
        spec.dims,
        (0..clusters * spec.dims)
            .map(|_| scale * center_rng.standard_normal())
            .collect(),
    );
    let mixture = Mixture {
        centers,
        classes: spec.classes,
        per_class: spec.clusters_per_class,
        std: spec.cluster_std,
    };
    let labeled = |n: usize, stream: u64| -> Result<Dataset> {
        let (x, y) = mixture.sample(n, &mut root.child(stream));
        Dataset::labeled(x, y, spec.classes)
    };
    Ok(SyntheticSplits {
        train: labeled(spec.n_train, 1)?,
        unlabeled: mixture.sample(spec.n_unlabeled, &mut root.child(2)).0,
        dev: labeled(spec.n_dev, 3)?,
        test: labeled(spec.n_test, 4)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_train: 50,
            n_unlabeled: 0,
            n_dev: 20,
            n_test: 20,
            ..SyntheticSpec::benchmark()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_synthetic(&small(), 3).unwrap();
        let b = make_synthetic(&small(), 3).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = make_synthetic(&small(), 4).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn empty_unlabeled_split() {
        let s = make_synthetic(&small(), 1).unwrap();
        assert_eq!(s.unlabeled.rows(), 0);
        assert_eq!(s.train.len(), 50);
        assert_eq!(s.dev.dim(), 64);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = small();
        spec.classes = 1;
        assert!(matches!(make_synthetic(&spec, 0), Err(Error::Config(_))));
        let mut spec = small();
        spec.separation = -1.0;
        assert!(matches!(make_synthetic(&spec, 0), Err(Error::Config(_))));
    }
}
