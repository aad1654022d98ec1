use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::tensor::Tensor;

use super::io::{list_images, load_image, load_resized};

/// A reference image. It can be compared against a prediction but never
/// handed out as a plain tensor, so no loss can consume it.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    path: PathBuf,
    image: Tensor<f32>,
}

impl GroundTruth {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let image = load_image(&path)?;
        Ok(GroundTruth { path, image })
    }

    pub fn from_tensor(path: impl Into<PathBuf>, image: Tensor<f32>) -> Self {
        GroundTruth {
            path: path.into(),
            image,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn evaluate(&self, pred: &Tensor<f32>) -> Result<MetricReport> {
        MetricReport::compute(pred, &self.image)
    }
}

/// Training inputs plus optional references that only evaluation may read.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub inputs: Vec<PathBuf>,
    ground_truth: Vec<PathBuf>,
}

impl Dataset {
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let inputs = list_images(dir.as_ref())?;
        if inputs.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no images found in {}",
                dir.as_ref().display()
            )));
        }
        Ok(Dataset {
            inputs,
            ground_truth: Vec::new(),
        })
    }

    /// Pairs each input with the same-named file of `gt_dir`.
    pub fn with_ground_truth(mut self, gt_dir: impl AsRef<Path>) -> Result<Self> {
        let gt_dir = gt_dir.as_ref();
        self.ground_truth = self
            .inputs
            .iter()
            .map(|p| gt_dir.join(p.file_name().expect("listed files have names")))
            .collect();
        self.check_isolation()?;
        Ok(self)
    }

    pub fn ground_truth(&self) -> Result<Vec<GroundTruth>> {
        self.ground_truth.iter().map(GroundTruth::load).collect()
    }

    fn check_isolation(&self) -> Result<()> {
        let canon = |p: &PathBuf| std::fs::canonicalize(p).unwrap_or_else(|_| p.clone());
        let gt: BTreeSet<PathBuf> = self.ground_truth.iter().map(canon).collect();
        match self.inputs.iter().find(|p| gt.contains(&canon(p))) {
            Some(p) => Err(Error::InvalidArgument(format!(
                "{} is listed as both a training input and a reference",
                p.display()
            ))),
            None => Ok(()),
        }
    }

    /// Loads every training input at `size`, refusing any reference file.
    pub fn training_images(&self, size: (u32, u32)) -> Result<Vec<Tensor<f32>>> {
        self.check_isolation()?;
        self.inputs.iter().map(|p| load_resized(p, size)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::io::save_png;

    #[test]
    fn references_cannot_double_as_inputs() {
        let dir = tempfile::tempdir().unwrap();
        save_png(&Tensor::zeros(vec![3, 4, 4]), dir.path().join("x.png")).unwrap();
        let ds = Dataset::from_dir(dir.path()).unwrap();
        assert!(ds.clone().with_ground_truth(dir.path()).is_err());
        let other = tempfile::tempdir().unwrap();
        let ds = ds.with_ground_truth(other.path()).unwrap();
        assert_eq!(ds.training_images((4, 4)).unwrap().len(), 1);
        assert!(ds.ground_truth().is_err());
    }

    #[test]
    fn empty_directory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Dataset::from_dir(dir.path()).is_err());
    }
}
