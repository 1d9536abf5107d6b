use crate::error::{Error, Result};
use crate::net::NetworkSpec;
use crate::optim::AdamConfig;
use crate::reg::{RegKind, RegularizerSpec, ScaleMode};

/// Everything a pipeline needs besides the data.
///
/// `network.input_dim` is set by each pipeline. An empty `network.ranks`
/// selects `min(extent, 64)` per mode for grid data.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub network: NetworkSpec,
    pub regularizer: RegularizerSpec,
    /// Rule refreshing the per-sample scale `α`; `None` keeps `α ≡ 1`.
    pub scale_mode: Option<ScaleMode>,
    /// Whether the direction field `(θ, a)` is refreshed (space-variant kind).
    pub update_direction: bool,
    pub lambda: f64,
    /// Sparse-noise weight (HSI only).
    pub gamma: f64,
    /// Resolution factor of the regularization grid.
    pub factor: usize,
    pub adam: AdamConfig,
    pub iterations: usize,
    /// Early stop when the loss changes by less than `plateau_tol` over
    /// `plateau_window` iterations.
    pub plateau_tol: f64,
    pub plateau_window: usize,
    /// Fields are refreshed every `field_stride` iterations.
    pub field_stride: usize,
    /// Clip outputs to the observed value range.
    pub clip: bool,
    /// Raw coordinate ranges mapped onto `[-1, 1]` for scattered data; fitted
    /// to the data when `None`.
    pub coord_ranges: Option<Vec<(f64, f64)>>,
    /// Record the loss every `trace_stride` iterations (0 disables).
    pub trace_stride: usize,
    pub seed: u64,
}

impl TaskConfig {
    fn base(network: NetworkSpec, kind: RegKind, lambda: f64) -> Self {
        Self {
            network,
            regularizer: RegularizerSpec::new(kind),
            scale_mode: None,
            update_direction: false,
            lambda,
            gamma: 0.25,
            factor: 1,
            adam: AdamConfig::default(),
            iterations: 3000,
            plateau_tol: 1e-7,
            plateau_window: 200,
            field_stride: 1,
            clip: true,
            coord_ranges: None,
            trace_stride: 1,
            seed: 0,
        }
    }

    /// Image denoising: tf-net, space-variant NeurTV with the second-order
    /// scale rule, regularization grid three times denser than the image.
    pub fn denoise() -> Self {
        Self {
            scale_mode: Some(ScaleMode::SecondOrder),
            update_direction: true,
            factor: 3,
            ..Self::base(
                NetworkSpec::tf_net(vec![], 64, 3).with_bias(true),
                RegKind::SpaceVariant,
                4e-4,
            )
        }
    }

    /// Inpainting with a channel coordinate that is not regularized.
    pub fn inpaint() -> Self {
        Self {
            scale_mode: Some(ScaleMode::SecondOrder),
            update_direction: true,
            ..Self::base(
                NetworkSpec::tf_net(vec![], 64, 3).with_bias(true),
                RegKind::SpaceVariant,
                3.5e-5,
            )
        }
    }

    /// Mixed-noise HSI denoising with spatial-spectral NeurTV. The low Tucker
    /// ranks keep sparse spikes out of the network.
    pub fn hsi() -> Self {
        Self {
            gamma: 0.25,
            ..Self::base(
                NetworkSpec::tf_net(vec![4, 4, 4], 64, 3).with_bias(true),
                RegKind::Sstv,
                3e-4,
            )
        }
    }

    /// Gaussian-only HSI setting.
    pub fn hsi_gaussian() -> Self {
        Self {
            gamma: 10.0,
            ..Self::hsi()
        }
    }

    /// Point-cloud color regression over `(x, y, z, C)`.
    pub fn pointcloud() -> Self {
        Self {
            scale_mode: Some(ScaleMode::SecondOrder),
            ..Self::base(
                NetworkSpec::sine_mlp(4, 64, 3).with_bias(true),
                RegKind::PointCloud,
                1e-4,
            )
        }
    }

    /// Spatial transcriptomics over `(x, y, g)`.
    pub fn transcriptomics() -> Self {
        Self {
            scale_mode: Some(ScaleMode::SecondOrder),
            update_direction: true,
            ..Self::base(
                NetworkSpec::sine_mlp(3, 64, 3).with_bias(true),
                RegKind::SpaceVariant,
                2.5e-4,
            )
            .with_dims(vec![0, 1])
        }
    }

    /// Wide networks: 150 units per layer, depth 3.
    pub fn full_scale(mut self) -> Self {
        self.network.width = 150;
        self.network.depth = 3;
        self
    }

    pub fn with_dims(mut self, dims: Vec<usize>) -> Self {
        self.regularizer.dims = dims;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.network.seed = seed;
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be finite and >= 0"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", "must be finite and > 0"));
        }
        if self.factor == 0 {
            return Err(Error::invalid("factor", "must be >= 1"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be >= 1"));
        }
        if self.field_stride == 0 {
            return Err(Error::invalid("field_stride", "must be >= 1"));
        }
        if !(self.plateau_tol >= 0.0) {
            return Err(Error::invalid("plateau_tol", "must be >= 0"));
        }
        self.adam.validate()?;
        self.regularizer.validate()
    }
}
