//! Network description (TOML) and its compiled, power-of-two padded form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::fit::{activation, ApproxPoly, FitError, Mode, DEFAULT_INTERVAL};
use crate::packing::{next_pow2, patches, Matrix};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("layer {layer}: {msg}")]
    Layer { layer: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Fc,
    Cv,
    AvgPool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    L2,
}

fn default_activation() -> String {
    "sigmoid".into()
}
fn default_degree() -> usize {
    3
}
fn default_interval() -> (f64, f64) {
    DEFAULT_INTERVAL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Output width of an FC layer.
    #[serde(default)]
    pub out: Option<usize>,
    /// Kernel side `f` of a CV or pooling layer.
    #[serde(default)]
    pub kernel: Option<usize>,
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default)]
    pub filters: Option<usize>,
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_interval")]
    pub interval: (f64, f64),
}

impl LayerSpec {
    pub fn fc(out: usize, activation: &str, degree: usize) -> LayerSpec {
        LayerSpec {
            kind: LayerKind::Fc,
            out: Some(out),
            kernel: None,
            stride: None,
            filters: None,
            activation: activation.into(),
            degree,
            interval: DEFAULT_INTERVAL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Feature count `d` (flattened image size for CV inputs).
    pub input_dim: usize,
    /// `(rows, cols)` of image inputs; required by a CV first layer.
    #[serde(default)]
    pub input_shape: Option<(usize, usize)>,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub loss: Loss,
    pub learning_rate: f64,
    pub local_batch: usize,
    pub global_iters: usize,
}

impl NetworkSpec {
    pub fn from_toml(s: &str) -> Result<NetworkSpec, SpecError> {
        let spec: NetworkSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Plain MLP `d - h_1 - .. - h_l` with one activation everywhere.
    pub fn mlp(d: usize, widths: &[usize], act: &str, degree: usize, lr: f64, b: usize, m: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim: d,
            input_shape: None,
            layers: widths.iter().map(|&h| LayerSpec::fc(h, act, degree)).collect(),
            loss: Loss::L2,
            learning_rate: lr,
            local_batch: b,
            global_iters: m,
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.input_dim == 0 {
            return Err(SpecError::Invalid("input_dim must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(SpecError::Invalid("at least one layer is required".into()));
        }
        if self.local_batch == 0 {
            return Err(SpecError::Invalid("local_batch must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(SpecError::Invalid("learning_rate must be positive".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let err = |msg: &str| SpecError::Layer { layer: i + 1, msg: msg.into() };
            match l.kind {
                LayerKind::Fc if l.out.unwrap_or(0) == 0 => return Err(err("fc layers need a positive `out`")),
                LayerKind::Cv if i != 0 => return Err(err("convolutions are supported as the first layer only")),
                LayerKind::Cv if self.input_shape.is_none() => return Err(err("a convolution needs `input_shape`")),
                LayerKind::Cv if l.kernel.unwrap_or(0) == 0 => return Err(err("cv layers need a positive `kernel`")),
                LayerKind::AvgPool => {
                    if i == 0 || self.layers[i - 1].kind != LayerKind::Cv {
                        return Err(err("average pooling must follow the convolution"));
                    }
                    if i + 1 == self.layers.len() {
                        return Err(err("average pooling cannot be the output layer"));
                    }
                    if l.kernel.unwrap_or(0) < 2 {
                        return Err(err("pooling needs `kernel` >= 2"));
                    }
                }
                _ => {}
            }
        }
        if let Some((r, c)) = self.input_shape {
            if r * c != self.input_dim {
                return Err(SpecError::Invalid(format!("input_shape {r}x{c} does not match input_dim {}", self.input_dim)));
            }
        }
        Ok(())
    }
}

/// Value and derivative polynomials of one layer's activation, power basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub name: String,
    pub value: ApproxPoly,
    pub deriv: ApproxPoly,
}

impl Activation {
    pub fn new(name: &str, degree: usize, interval: (f64, f64)) -> Result<Activation, FitError> {
        let value = activation(name, Mode::Value, degree, interval)?;
        if value.degree() == 0 {
            return Err(FitError::Degree(0));
        }
        Ok(Activation { name: name.to_string(), value, deriv: activation(name, Mode::Derivative, degree, interval)? })
    }

    /// Xavier for saturating activations, He for the ReLU surrogate.
    pub fn uses_he(&self) -> bool {
        matches!(self.name.to_ascii_lowercase().as_str(), "smooth_relu" | "softplus" | "smoothrelu" | "relu")
    }
}

/// Convolution lowered onto the first FC layer: each output column is one
/// (filter, patch) pair and all columns of a filter share its kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLowering {
    pub shape: (usize, usize),
    pub kernel: usize,
    pub stride: usize,
    pub filters: usize,
    pub patches: usize,
    /// Average pooling over the patch grid folded into the following bootstrap.
    pub pool: Option<usize>,
}

impl ConvLowering {
    pub fn patch_grid(&self) -> (usize, usize) {
        ((self.shape.0 - self.kernel) / self.stride + 1, (self.shape.1 - self.kernel) / self.stride + 1)
    }

    /// Pooled output count per filter.
    pub fn pooled(&self) -> usize {
        match self.pool {
            None => self.patches,
            Some(f) => {
                let (r, c) = self.patch_grid();
                (r / f) * (c / f)
            }
        }
    }

    /// Flattened patches of an image row, `f*f` entries each.
    pub fn patch_rows(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let img = Matrix { rows: self.shape.0, cols: self.shape.1, data: x.to_vec() };
        patches(&img, self.kernel, self.stride).expect("validated shape")
    }
}

/// Network in its executed form. `dims[0..=l]` are padded widths of the
/// layers that carry weights; `logical` the unpadded ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    /// Features per sample before any patch lowering.
    pub input_dim: usize,
    pub logical: Vec<usize>,
    pub dims: Vec<usize>,
    pub acts: Vec<Activation>,
    pub conv: Option<ConvLowering>,
    pub learning_rate: f64,
    pub local_batch: usize,
    pub global_iters: usize,
}

impl Network {
    pub fn compile(spec: &NetworkSpec) -> Result<Network, SpecError> {
        spec.validate()?;
        let mut logical = vec![spec.input_dim];
        let mut acts = Vec::new();
        let mut conv = None;
        let mut i = 0;
        while i < spec.layers.len() {
            let l = &spec.layers[i];
            let act = Activation::new(&l.activation, l.degree, l.interval)?;
            match l.kind {
                LayerKind::Fc => logical.push(l.out.unwrap()),
                LayerKind::Cv => {
                    let shape = spec.input_shape.unwrap();
                    let (f, s) = (l.kernel.unwrap(), l.stride.unwrap_or(l.kernel.unwrap()));
                    let n = patches(&Matrix::zeros(shape.0, shape.1), f, s)
                        .map_err(|e| SpecError::Layer { layer: 1, msg: e.to_string() })?
                        .len();
                    let pool = spec.layers.get(1).filter(|p| p.kind == LayerKind::AvgPool).map(|p| p.kernel.unwrap());
                    let lowering = ConvLowering { shape, kernel: f, stride: s, filters: l.filters.unwrap_or(1), patches: n, pool };
                    if let Some(pf) = pool {
                        let (r, c) = lowering.patch_grid();
                        if r % pf != 0 || c % pf != 0 {
                            return Err(SpecError::Layer { layer: 2, msg: format!("{r}x{c} patch grid not divisible by pool {pf}") });
                        }
                        i += 1;
                    }
                    logical[0] = f * f;
                    logical.push(lowering.filters * n);
                    conv = Some(lowering);
                }
                LayerKind::AvgPool => unreachable!("validated: pooling follows the convolution"),
            }
            acts.push(act);
            i += 1;
        }
        // Pooled outputs feed layer 2 at block starts of the unpooled layout,
        // so layer 2 keeps `h_1` padded rows and zero weights past the pooled count.
        let dims: Vec<usize> = logical.iter().map(|&h| next_pow2(h)).collect();
        Ok(Network {
            input_dim: spec.input_dim,
            logical,
            dims,
            acts,
            conv,
            learning_rate: spec.learning_rate,
            local_batch: spec.local_batch,
            global_iters: spec.global_iters,
        })
    }

    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    /// Logical `(rows, cols)` of `W_j` (1-based).
    pub fn weight_shape(&self, j: usize) -> (usize, usize) {
        if j == 1 {
            if let Some(c) = &self.conv {
                return (c.kernel * c.kernel, c.filters);
            }
        }
        if j == 2 {
            if let Some(c) = &self.conv {
                return (c.filters * c.pooled(), self.logical[2]);
            }
        }
        (self.logical[j - 1], self.logical[j])
    }

    pub fn logical_input(&self) -> usize {
        self.input_dim
    }

    pub fn output_width(&self) -> usize {
        *self.logical.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BCW: &str = r#"
input_dim = 9
learning_rate = 1.0
local_batch = 10
global_iters = 100

[[layers]]
kind = "fc"
out = 64

[[layers]]
kind = "fc"
out = 64

[[layers]]
kind = "fc"
out = 2
"#;

    #[test]
    fn parses_and_pads() {
        let spec = NetworkSpec::from_toml(BCW).unwrap();
        let net = Network::compile(&spec).unwrap();
        assert_eq!(net.dims, vec![16, 64, 64, 2]);
        assert_eq!(net.logical, vec![9, 64, 64, 2]);
        assert_eq!(net.acts[0].value.degree(), 3);
        assert_eq!(net.acts[0].deriv.degree(), 2);
    }

    #[test]
    fn errors_name_the_line() {
        let bad = BCW.replace("out = 2", "out = \"two\"");
        let msg = NetworkSpec::from_toml(&bad).unwrap_err().to_string();
        assert!(msg.contains("line"), "{msg}");
        let zero = BCW.replace("out = 2", "out = 0");
        assert!(matches!(NetworkSpec::from_toml(&zero), Err(SpecError::Layer { layer: 3, .. })));
    }

    #[test]
    fn conv_lowering() {
        let spec = NetworkSpec {
            input_dim: 16,
            input_shape: Some((4, 4)),
            layers: vec![
                LayerSpec { kind: LayerKind::Cv, kernel: Some(2), stride: Some(2), filters: Some(1), ..LayerSpec::fc(1, "square", 2) },
                LayerSpec::fc(2, "sigmoid", 3),
            ],
            loss: Loss::L2,
            learning_rate: 0.5,
            local_batch: 1,
            global_iters: 1,
        };
        let net = Network::compile(&spec).unwrap();
        assert_eq!(net.logical, vec![4, 4, 2]);
        assert_eq!(net.weight_shape(1), (4, 1));
    }
}
