use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Xavier normal with the given fan-in and fan-out.
    Xavier {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
}

/// Name, shape and initializer of one learnable tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

impl ParamSpec {
    pub fn weight(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        ParamSpec {
            name: name.into(),
            rows,
            cols,
            init: Init::Xavier {
                fan_in: rows,
                fan_out: cols,
            },
        }
    }

    pub fn bias(name: impl Into<String>, cols: usize) -> Self {
        ParamSpec {
            name: name.into(),
            rows: 1,
            cols,
            init: Init::Zeros,
        }
    }
}

/// Named learnable tensors in a stable order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    tensors: IndexMap<String, Matrix>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Draws every tensor in `specs` from a stream seeded by `seed`.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        for s in specs {
            let m = match s.init {
                Init::Zeros => Matrix::zeros(s.rows, s.cols),
                Init::Xavier { fan_in, fan_out } => {
                    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                    let normal =
                        Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                    let data = (0..s.rows * s.cols)
                        .map(|_| normal.sample(&mut rng))
                        .collect();
                    Matrix::from_vec(s.rows, s.cols, data)?
                }
            };
            params.insert(s.name.clone(), m)?;
        }
        Ok(params)
    }

    pub fn insert(&mut self, name: String, value: Matrix) -> Result<()> {
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter {name}"
            )));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Matrix::is_finite)
    }

    /// Checks that names and shapes match `specs` exactly.
    pub fn check_layout(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for s in specs {
            let m = self
                .get(&s.name)
                .ok_or_else(|| Error::Config(format!("missing parameter {}", s.name)))?;
            if m.shape() != (s.rows, s.cols) {
                return Err(Error::Config(format!(
                    "parameter {} is {}x{}, expected {}x{}",
                    s.name,
                    m.rows(),
                    m.cols(),
                    s.rows,
                    s.cols
                )));
            }
        }
        Ok(())
    }

    /// Records every tensor on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, m)| {
                let v = if trainable {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                };
                (k.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }
}

/// Parameters recorded on a tape, addressable by name.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    /// Binds already-recorded variables by name.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        BoundParams {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Reads the gradient of every parameter after `backward`.
    pub fn grads(&self, tape: &Tape) -> Result<ModelParams> {
        let mut out = ModelParams::new();
        for (name, &v) in &self.vars {
            let g = tape
                .grad(v)
                .cloned()
                .ok_or_else(|| Error::Backward(format!("no gradient reached parameter {name}")))?;
            out.insert(name.clone(), g)?;
        }
        Ok(out)
    }
}
