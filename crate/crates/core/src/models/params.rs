//! Named parameter tensors and the dense layers built from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Name-keyed parameters. Names starting with `norm.` are fixed buffers and
/// are never touched by an optimizer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub tensors: BTreeMap<String, Tensor>,
}

pub type Grads = BTreeMap<String, Vec<f64>>;

impl ParamStore {
    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not registered"))
    }

    pub fn is_trainable(name: &str) -> bool {
        !name.starts_with("norm.")
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        self.tensors
            .iter()
            .filter(|(k, _)| Self::is_trainable(k))
            .map(|(k, t)| (k.clone(), vec![0.0; t.numel()]))
            .collect()
    }

    /// Uniform(-1/√fan_in, 1/√fan_in) weights and zero bias for `prefix.w`, `prefix.b`.
    pub fn init_linear(&mut self, prefix: &str, out: usize, inp: usize, rng: &mut ChaCha8Rng) {
        let bound = 1.0 / (inp.max(1) as f64).sqrt();
        let w = Tensor {
            shape: vec![out, inp],
            data: (0..out * inp).map(|_| rng.random_range(-bound..bound)).collect(),
        };
        self.insert(&format!("{prefix}.w"), w);
        self.insert(&format!("{prefix}.b"), Tensor::zeros(&[out]));
    }

    pub fn init_linear_zero(&mut self, prefix: &str, out: usize, inp: usize) {
        self.insert(&format!("{prefix}.w"), Tensor::zeros(&[out, inp]));
        self.insert(&format!("{prefix}.b"), Tensor::zeros(&[out]));
    }

    pub fn linear(&self, prefix: &str) -> Linear<'_> {
        let w = self.get(&format!("{prefix}.w"));
        let b = self.get(&format!("{prefix}.b"));
        Linear {
            prefix: prefix.to_string(),
            out: w.shape[0],
            inp: w.shape[1],
            w: &w.data,
            b: &b.data,
        }
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Borrowed view of a `y = W x + b` layer.
pub struct Linear<'a> {
    prefix: String,
    pub out: usize,
    pub inp: usize,
    w: &'a [f64],
    b: &'a [f64],
}

impl Linear<'_> {
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inp);
        (0..self.out)
            .map(|o| {
                let row = &self.w[o * self.inp..(o + 1) * self.inp];
                self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulate parameter gradients for upstream `g` and return dL/dx.
    pub fn backward(&self, x: &[f64], g: &[f64], grads: &mut Grads) -> Vec<f64> {
        {
            let gw = grads.get_mut(&format!("{}.w", self.prefix)).expect("weight grad slot");
            for (o, go) in g.iter().enumerate() {
                if *go == 0.0 {
                    continue;
                }
                let row = &mut gw[o * self.inp..(o + 1) * self.inp];
                for (r, v) in row.iter_mut().zip(x) {
                    *r += go * v;
                }
            }
        }
        let gb = grads.get_mut(&format!("{}.b", self.prefix)).expect("bias grad slot");
        for (b, go) in gb.iter_mut().zip(g) {
            *b += go;
        }
        self.input_grad(g)
    }

    pub fn input_grad(&self, g: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.inp];
        for (o, go) in g.iter().enumerate() {
            if *go == 0.0 {
                continue;
            }
            let row = &self.w[o * self.inp..(o + 1) * self.inp];
            for (d, w) in dx.iter_mut().zip(row) {
                *d += go * w;
            }
        }
        dx
    }
}

/// NaN inputs stay NaN so divergence is detected downstream.
pub fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| if x < 0.0 { 0.0 } else { x }).collect()
}

pub fn relu_backward(pre: &[f64], g: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(g)
        .map(|(p, g)| if *p > 0.0 { *g } else { 0.0 })
        .collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut p = ParamStore::default();
        let mut rng = seeded_rng(1);
        p.init_linear("l", 3, 4, &mut rng);
        let x = vec![0.5, -1.0, 2.0, 0.1];
        let g = vec![1.0, -0.5, 0.25];
        let mut grads = p.zero_grads();
        let dx = p.linear("l").backward(&x, &g, &mut grads);
        let f =
            |p: &ParamStore, x: &[f64]| -> f64 { p.linear("l").forward(x).iter().zip(&g).map(|(a, b)| a * b).sum() };
        let h = 1e-6;
        for k in 0..4 {
            let mut a = x.clone();
            let mut b = x.clone();
            a[k] += h;
            b[k] -= h;
            assert!(((f(&p, &a) - f(&p, &b)) / (2.0 * h) - dx[k]).abs() < 1e-6);
        }
        for k in 0..12 {
            let mut a = p.clone();
            let mut b = p.clone();
            a.tensors.get_mut("l.w").unwrap().data[k] += h;
            b.tensors.get_mut("l.w").unwrap().data[k] -= h;
            assert!(((f(&a, &x) - f(&b, &x)) / (2.0 * h) - grads["l.w"][k]).abs() < 1e-6);
        }
        assert_eq!(grads["l.b"], g);
    }

    #[test]
    fn buffers_get_no_gradient_slot() {
        let mut p = ParamStore::default();
        p.insert("norm.mean", Tensor::zeros(&[3]));
        p.init_linear_zero("head", 2, 3);
        let g = p.zero_grads();
        assert!(!g.contains_key("norm.mean"));
        assert!(g.contains_key("head.w"));
    }
}
