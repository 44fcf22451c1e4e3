use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Normal(f64),
    /// Normal with std `sqrt(1 / fan_in)`.
    FanIn(usize),
}

/// Named parameter tensors. Values are f64 for computation but always
/// representable as f32, so checkpoints are exact.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
    frozen: Vec<bool>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
            frozen: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let n = shape.iter().product();
        let std = match init {
            Init::Zeros => 0.0,
            Init::Normal(s) => s,
            Init::FanIn(f) => (1.0 / f as f64).sqrt(),
        };
        let values = if std == 0.0 {
            vec![0.0; n]
        } else {
            let d = Normal::new(0.0, std).expect("finite std");
            (0..n).map(|_| round_f32(d.sample(&mut self.rng))).collect()
        };
        self.names.push(name.to_string());
        self.shapes.push(shape.to_vec());
        self.values.push(values);
        self.frozen.push(false);
        ParamId(self.names.len() - 1)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads { grads: self.values.iter().map(|v| vec![0.0; v.len()]).collect() }
    }

    /// All values in id order.
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.grads.iter_mut().flatten().for_each(|g| *g *= c);
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.grads.iter().flatten().copied().collect()
    }
}

#[inline]
pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam; parameters are rounded to f32 after every step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.values.iter().map(|v| vec![0.0; v.len()]).collect();
        Adam { cfg, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for p in 0..store.values.len() {
            if store.frozen[p] {
                continue;
            }
            for i in 0..store.values[p].len() {
                let g = grads.grads[p][i];
                let m = c.beta1 * self.m[p][i] + (1.0 - c.beta1) * g;
                let v = c.beta2 * self.v[p][i] + (1.0 - c.beta2) * g * g;
                self.m[p][i] = m;
                self.v[p][i] = v;
                let upd = c.lr * (m / bc1) / ((v / bc2).sqrt() + c.eps);
                store.values[p][i] = round_f32(store.values[p][i] - upd);
            }
        }
    }
}
