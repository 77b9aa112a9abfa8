//! Seeded parameter initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Parameter, Tensor};

/// One row of a model summary. Shapes omit the leading time axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRecord {
    pub name: String,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub parameters: usize,
}

/// Deterministic parameter factory. Weights are drawn uniformly from
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` in creation order.
///
/// A dry-run factory ([`Init::dry_run`]) records names and shapes only and
/// hands out one-element placeholders, so very large architectures can be
/// inspected without allocating their weights.
pub struct Init {
    rng: ChaCha8Rng,
    dry: bool,
    shapes: Vec<(String, Vec<usize>)>,
    params: Vec<Parameter>,
    records: Vec<LayerRecord>,
    scalars: usize,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dry: false,
            shapes: Vec::new(),
            params: Vec::new(),
            records: Vec::new(),
            scalars: 0,
        }
    }

    pub fn dry_run() -> Self {
        Self {
            dry: true,
            ..Self::new(0)
        }
    }

    pub fn is_dry_run(&self) -> bool {
        self.dry
    }

    fn register(&mut self, name: String, shape: &[usize], fill: impl FnOnce(&mut Self, usize) -> Vec<f64>) -> Tensor {
        let n: usize = shape.iter().product();
        self.scalars += n;
        self.shapes.push((name.clone(), shape.to_vec()));
        let t = if self.dry {
            Tensor::parameter(&[1], vec![0.0])
        } else {
            let data = fill(self, n);
            Tensor::parameter(shape, data)
        }
        .expect("parameter shapes are positive");
        self.params.push(Parameter::new(name, t.clone()));
        t
    }

    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.register(name.into(), shape, |init, n| {
            (0..n).map(|_| init.rng.gen_range(-bound..=bound)).collect()
        })
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Tensor {
        self.register(name.into(), shape, |_, n| vec![value; n])
    }

    /// Number of scalars registered so far.
    pub fn scalar_count(&self) -> usize {
        self.scalars
    }

    /// Records a summary row covering every scalar registered since `mark`
    /// (a previous [`Init::scalar_count`]).
    pub fn record(&mut self, name: impl Into<String>, input: &[usize], output: &[usize], mark: usize) {
        self.records.push(LayerRecord {
            name: name.into(),
            input: input.to_vec(),
            output: output.to_vec(),
            parameters: self.scalars - mark,
        });
    }

    pub fn finish(self) -> (Vec<Parameter>, Vec<LayerRecord>) {
        (self.params, self.records)
    }

    pub fn finish_plan(self) -> (Vec<(String, Vec<usize>)>, Vec<LayerRecord>) {
        (self.shapes, self.records)
    }
}
