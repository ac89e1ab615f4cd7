//! Teacher-student distillation loss over paired feature tensors and LoRA
//! weight merging.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Dense tensor of shape `(2, height, width, dim)`: two views, row-major
/// pixels, `dim` values per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * height * width * dim {
            return Err(Error::Dimension(format!(
                "tensor payload has {} values, expected 2x{height}x{width}x{dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("tensor contains non-finite values".into()));
        }
        Ok(FeatureTensor {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, dim: usize) -> Self {
        FeatureTensor {
            height,
            width,
            dim,
            data: vec![0.0; 2 * height * width * dim],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [2, self.height, self.width, self.dim]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Encoder features, decoder features and correspondence map of one view
/// pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub encoder: FeatureTensor,
    pub decoder: FeatureTensor,
    pub correspondence: FeatureTensor,
}

impl FeatureBundle {
    pub const TENSOR_NAMES: [&'static str; 3] = ["encoder", "decoder", "correspondence"];

    pub fn new(encoder: FeatureTensor, decoder: FeatureTensor, correspondence: FeatureTensor) -> Result<Self> {
        let b = FeatureBundle {
            encoder,
            decoder,
            correspondence,
        };
        let (h, w) = (b.encoder.height, b.encoder.width);
        for (name, t) in Self::TENSOR_NAMES.iter().zip(b.tensors()) {
            if t.height != h || t.width != w {
                return Err(Error::Shape(format!(
                    "{name} tensor is {}x{}, encoder is {h}x{w}",
                    t.height, t.width
                )));
            }
        }
        Ok(b)
    }

    pub fn tensors(&self) -> [&FeatureTensor; 3] {
        [&self.encoder, &self.decoder, &self.correspondence]
    }

    fn tensors_mut(&mut self) -> [&mut FeatureTensor; 3] {
        [&mut self.encoder, &mut self.decoder, &mut self.correspondence]
    }

    fn check_matches(&self, other: &FeatureBundle, role: &str) -> Result<()> {
        for (name, (a, b)) in Self::TENSOR_NAMES.iter().zip(self.tensors().iter().zip(other.tensors())) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!(
                    "{role} {name} tensor has shape {:?}, teacher has {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Plain sum of squared differences over all three tensors.
    #[default]
    Sum,
    /// Mean squared difference per tensor, summed over the three tensors.
    MeanPerTensor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillLoss {
    pub total: f64,
    pub noisy: f64,
    pub clean: f64,
}

fn squared_distance(teacher: &FeatureBundle, student: &FeatureBundle, reduction: Reduction) -> f64 {
    teacher
        .tensors()
        .iter()
        .zip(student.tensors())
        .map(|(t, s)| {
            let ss: f64 = t.data.iter().zip(&s.data).map(|(a, b)| (a - b) * (a - b)).sum();
            match reduction {
                Reduction::Sum => ss,
                Reduction::MeanPerTensor if t.is_empty() => 0.0,
                Reduction::MeanPerTensor => ss / t.len() as f64,
            }
        })
        .sum()
}

/// `noisy + lambda_clean * clean`, each term the squared distance between
/// the teacher's features and one student's.
///
/// ```
/// use darksfm::adaptation::{distill_loss, FeatureBundle, FeatureTensor, Reduction};
///
/// let t = |v: f64| FeatureTensor::new(1, 1, 1, vec![v, 0.0]).unwrap();
/// let bundle = |e, d, c| FeatureBundle::new(t(e), t(d), t(c)).unwrap();
/// let teacher = bundle(0.0, 0.0, 0.0);
/// let noisy = bundle(1.0, 0.0, 0.0); // squared distance 1
/// let clean = bundle(1.0, 1.0, 0.0); // squared distance 2
/// let loss = distill_loss(&teacher, &noisy, &clean, 0.3, Reduction::Sum).unwrap();
/// assert!((loss.total - 1.6).abs() < 1e-12);
/// ```
pub fn distill_loss(
    teacher: &FeatureBundle,
    student_noisy: &FeatureBundle,
    student_clean: &FeatureBundle,
    lambda_clean: f64,
    reduction: Reduction,
) -> Result<DistillLoss> {
    teacher.check_matches(student_noisy, "noisy student")?;
    teacher.check_matches(student_clean, "clean student")?;
    if !lambda_clean.is_finite() || lambda_clean < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda_clean {lambda_clean} must be non-negative")));
    }
    let noisy = squared_distance(teacher, student_noisy, reduction);
    let clean = squared_distance(teacher, student_clean, reduction);
    Ok(DistillLoss {
        total: noisy + lambda_clean * clean,
        noisy,
        clean,
    })
}

/// Gradient of the distillation total with respect to every element of one
/// student bundle, given that student's weight in the total (1 for the noisy
/// student, `lambda_clean` for the clean one).
pub fn distill_gradient(
    teacher: &FeatureBundle,
    student: &FeatureBundle,
    weight: f64,
    reduction: Reduction,
) -> Result<FeatureBundle> {
    teacher.check_matches(student, "student")?;
    let mut grad = student.clone();
    for (g, t) in grad.tensors_mut().into_iter().zip(teacher.tensors()) {
        let norm = match reduction {
            Reduction::Sum => 1.0,
            Reduction::MeanPerTensor => 1.0 / t.len().max(1) as f64,
        };
        for (gv, tv) in g.data.iter_mut().zip(&t.data) {
            *gv = 2.0 * weight * norm * (*gv - tv);
        }
    }
    Ok(grad)
}

/// Low-rank update `W + (alpha / r) B A` of a frozen weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraDelta {
    pub base: DMatrix<f64>,
    /// `r x n`
    pub down: DMatrix<f64>,
    /// `m x r`
    pub up: DMatrix<f64>,
    pub alpha: f64,
}

impl LoraDelta {
    pub fn rank(&self) -> usize {
        self.down.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.base.shape();
        let r = self.rank();
        if self.down.ncols() != n || self.up.nrows() != m || self.up.ncols() != r {
            return Err(Error::Shape(format!(
                "base {m}x{n}, down {}x{}, up {}x{} are not conformable",
                self.down.nrows(),
                self.down.ncols(),
                self.up.nrows(),
                self.up.ncols()
            )));
        }
        if r == 0 || r > m.min(n) {
            return Err(Error::Shape(format!("rank {r} must lie in 1..={}", m.min(n))));
        }
        Ok(())
    }
}

pub fn lora_merge(delta: &LoraDelta) -> Result<DMatrix<f64>> {
    delta.validate()?;
    let scale = delta.alpha / delta.rank() as f64;
    Ok(&delta.base + scale * (&delta.up * &delta.down))
}
