use crate::data::DataError;
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Labelled samples, each of shape `channels x width`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    channels: usize,
    width: usize,
    features: Vec<S>,
    labels: Vec<usize>,
    num_classes: usize,
}

/// One client's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientSplit<S> {
    pub train: Dataset<S>,
    pub test: Dataset<S>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(
        channels: usize,
        width: usize,
        features: Vec<S>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if channels == 0 || width == 0 || num_classes == 0 {
            return Err(DataError::Shape(format!(
                "channels {channels}, width {width}, classes {num_classes} must all be positive"
            )));
        }
        if features.len() != labels.len() * channels * width {
            return Err(DataError::Shape(format!(
                "{} feature values for {} samples of {channels}x{width}",
                features.len(),
                labels.len()
            )));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(DataError::LabelOutOfRange {
                row,
                label,
                num_classes,
            });
        }
        Ok(Self {
            channels,
            width,
            features,
            labels,
            num_classes,
        })
    }

    pub fn empty_like(&self) -> Self {
        Self {
            features: Vec::new(),
            labels: Vec::new(),
            ..*self
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn sample_shape(&self) -> [usize; 2] {
        [self.channels, self.width]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[S] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[S] {
        let n = self.channels * self.width;
        &self.features[i * n..(i + 1) * n]
    }

    /// `(batch, labels)` for the given sample indices. `idx` must be
    /// non-empty.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<S>, Vec<usize>) {
        assert!(!idx.is_empty(), "empty batch");
        let mut data = Vec::with_capacity(idx.len() * self.channels * self.width);
        for &i in idx {
            data.extend_from_slice(self.sample(i));
        }
        let t = Tensor::new(vec![idx.len(), self.channels, self.width], data).expect("batch shape");
        (t, idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// Consecutive batches covering the dataset in order.
    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = (Tensor<S>, Vec<usize>)> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let chunks: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |c| self.batch(&c))
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let n = self.channels * self.width;
        let mut features = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            features.extend_from_slice(self.sample(i));
        }
        Self {
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ..*self
        }
    }

    /// Concatenation of datasets with identical geometry.
    pub fn concat(parts: &[&Dataset<S>]) -> Result<Self, DataError> {
        let first = parts
            .first()
            .ok_or_else(|| DataError::Shape("nothing to concatenate".into()))?;
        let mut out = first.empty_like();
        for p in parts {
            if p.sample_shape() != first.sample_shape() || p.num_classes != first.num_classes {
                return Err(DataError::Shape("datasets differ in geometry".into()));
            }
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Applies `x -> scale * x + offset` to every feature value.
    pub fn apply_affine(&mut self, scale: S, offset: S) {
        for v in &mut self.features {
            *v = scale * *v + offset;
        }
    }
}
