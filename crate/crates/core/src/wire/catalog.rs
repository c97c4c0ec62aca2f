//! Named split points and the tensors that cross the link at each one.
//!
//! Payload sizes are always computed from shape and element width. The
//! published kilobyte figures are kept only as annotations; several RegNet
//! rows do not match their shapes.

use super::tensor::{data_len, Dtype};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub dims: Vec<u32>,
    pub dtype: Dtype,
}

impl TensorSpec {
    pub fn new(dims: &[u32], dtype: Dtype) -> Self {
        Self {
            dims: dims.to_vec(),
            dtype,
        }
    }

    pub fn data_bytes(&self) -> usize {
        data_len(self.dtype, &self.dims).expect("catalog shapes fit in memory")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPoint {
    pub name: String,
    pub tensors: Vec<TensorSpec>,
    /// Published size in kilobytes, informational only.
    pub reported_kb: Option<f64>,
}

impl SplitPoint {
    /// Sum of element bytes over all tensors.
    pub fn payload_bytes(&self) -> usize {
        self.tensors.iter().map(TensorSpec::data_bytes).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPointCatalog {
    pub model: String,
    pub points: Vec<SplitPoint>,
}

impl SplitPointCatalog {
    /// Image classifier with a split after each block family.
    pub fn regnet() -> Self {
        let f32_point = |name: &str, dims: &[u32], kb: f64| SplitPoint {
            name: name.to_string(),
            tensors: vec![TensorSpec::new(dims, Dtype::F32)],
            reported_kb: Some(kb),
        };
        Self {
            model: "regnet".into(),
            points: vec![
                f32_point("stem", &[1, 32, 192, 192], 4608.0),
                f32_point("block1", &[1, 528, 96, 96], 188_496.0),
                f32_point("block2", &[1, 1056, 48, 48], 9216.0),
                f32_point("block3", &[1, 2904, 24, 24], 5202.0),
                f32_point("block4", &[1, 7392, 12, 12], 41_472.0),
                f32_point("avgpool", &[1, 7392, 1, 1], 29.0),
            ],
        }
    }

    /// Latent diffusion with a split every five denoising iterations.
    ///
    /// Before the loop only the half-precision text embeddings move; inside it
    /// the single-precision latents travel with them; after it only the latents.
    pub fn stable_diffusion() -> Self {
        let latents = TensorSpec::new(&[4, 64, 64], Dtype::F32);
        let embeddings = TensorSpec::new(&[2, 77, 768], Dtype::F16);
        let mut points = vec![SplitPoint {
            name: "denoising0".into(),
            tensors: vec![embeddings.clone()],
            reported_kb: Some(232.0),
        }];
        for i in (5..50).step_by(5) {
            points.push(SplitPoint {
                name: format!("denoising{i}"),
                tensors: vec![latents.clone(), embeddings.clone()],
                reported_kb: Some(296.0),
            });
        }
        points.push(SplitPoint {
            name: "denoising50".into(),
            tensors: vec![latents],
            reported_kb: Some(64.0),
        });
        Self {
            model: "stable-diffusion".into(),
            points,
        }
    }

    pub fn get(&self, name: &str) -> Option<&SplitPoint> {
        self.points.iter().find(|p| p.name == name)
    }

    /// Split point reached after `n` cloud iterations, if the catalog has one.
    pub fn after_iterations(&self, n: u32) -> Option<&SplitPoint> {
        self.get(&format!("denoising{n}"))
    }

    /// Looks a name up in every built-in catalog.
    pub fn find_builtin(name: &str) -> Option<SplitPoint> {
        [Self::stable_diffusion(), Self::regnet()]
            .into_iter()
            .find_map(|c| c.get(name).cloned())
    }
}
