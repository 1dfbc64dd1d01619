//! Conv-layer bookkeeping shared by both networks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

/// Shape of one same-padded square convolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
}

impl ConvSpec {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize) -> Self {
        ConvSpec {
            name: name.into(),
            cin,
            cout,
            kernel,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Multiplications per output pixel.
    pub fn mults_per_pixel(&self) -> u64 {
        (self.cout * self.cin * self.kernel * self.kernel) as u64
    }

    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }
}

/// Multiplication count of one layer applied at one resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMults {
    pub layer: String,
    pub pixels: u64,
    pub mults: u64,
}

/// He-uniform weights, zero biases.
pub(crate) fn init_params(specs: &[ConvSpec], rng: &mut ChaCha8Rng) -> ParamStore {
    let mut store = ParamStore::new();
    for s in specs {
        let fan_in = (s.cin * s.kernel * s.kernel) as f64;
        let bound = (6.0 / fan_in).sqrt() as f32;
        let n = s.cout * s.cin * s.kernel * s.kernel;
        let w: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        store.push(
            s.weight_name(),
            Tensor::new(vec![s.cout, s.cin, s.kernel, s.kernel], w).expect("sized"),
        );
        store.push(s.bias_name(), Tensor::zeros(vec![s.cout]));
    }
    store
}

/// Checks that `store` holds exactly the tensors `specs` describe, in order.
pub(crate) fn check_params(specs: &[ConvSpec], store: &ParamStore) -> Result<()> {
    let expected: Vec<(String, Vec<usize>)> = specs
        .iter()
        .flat_map(|s| {
            [
                (s.weight_name(), vec![s.cout, s.cin, s.kernel, s.kernel]),
                (s.bias_name(), vec![s.cout]),
            ]
        })
        .collect();
    if expected.len() != store.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} parameter tensors, found {}",
            expected.len(),
            store.len()
        )));
    }
    for ((name, shape), (have_name, t)) in expected.iter().zip(store.iter()) {
        if name != have_name || shape.as_slice() != t.shape() {
            return Err(Error::InvalidArgument(format!(
                "parameter `{have_name}` {:?} does not match expected `{name}` {shape:?}",
                t.shape()
            )));
        }
        if !t.is_finite() {
            return Err(Error::InvalidArgument(format!("parameter `{name}` has non-finite values")));
        }
    }
    Ok(())
}
