use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelRng};

/// Dense layer stored input-major: `y = x · w + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    fn init(fan_in: usize, fan_out: usize, rng: &mut ModelRng) -> Self {
        Self {
            w: trunc_normal((fan_in, fan_out), rng),
            b: Array1::zeros(fan_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl Norm {
    fn ones(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    fn zeros(dim: usize) -> Self {
        Self {
            gamma: Array1::zeros(dim),
            beta: Array1::zeros(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1: Norm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
    /// Per-head scale-bias strength.
    pub alpha: Array1<f64>,
}

/// Every learnable tensor of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub patch: Linear,
    pub pos: Array2<f64>,
    pub aux: Linear,
    /// Fusion decay is `exp(log_gamma)` per km, so it is always positive.
    pub log_gamma: Array1<f64>,
    pub blocks: Vec<BlockParams>,
    pub head_ln: Norm,
    pub head1: Linear,
    pub head2: Linear,
}

pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

const INIT_STD: f64 = 0.02;

fn trunc_normal(shape: (usize, usize), rng: &mut ModelRng) -> Array2<f64> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    Array2::from_shape_simple_fn(shape, || loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 2.0 * INIT_STD {
            break x;
        }
    })
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, rng: &mut ModelRng) -> Self {
        let d = cfg.d_model;
        let pp = cfg.patch * cfg.patch;
        let hidden = cfg.mlp_hidden();
        let patch = Linear::init(pp, d, rng);
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let pos = Array2::from_shape_simple_fn((cfg.pos_slots, d), || normal.sample(rng));
        let aux = Linear::init(cfg.aux_dim, d, rng);
        let blocks = (0..cfg.n_blocks)
            .map(|_| BlockParams {
                ln1: Norm::ones(d),
                qkv: Linear::init(d, 3 * d, rng),
                proj: Linear::init(d, d, rng),
                ln2: Norm::ones(d),
                fc1: Linear::init(d, hidden, rng),
                fc2: Linear::init(hidden, d, rng),
                alpha: Array1::zeros(cfg.n_heads),
            })
            .collect();
        Self {
            patch,
            pos,
            aux,
            log_gamma: Array1::from_elem(1, cfg.gamma_init_per_km.ln()),
            blocks,
            head_ln: Norm::ones(2 * d),
            head1: Linear::init(2 * d, cfg.head_hidden, rng),
            head2: Linear::init(cfg.head_hidden, 1, rng),
        }
    }

    /// Same shapes, every entry zero; the gradient accumulator layout.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let hidden = cfg.mlp_hidden();
        Self {
            patch: Linear::zeros(cfg.patch * cfg.patch, d),
            pos: Array2::zeros((cfg.pos_slots, d)),
            aux: Linear::zeros(cfg.aux_dim, d),
            log_gamma: Array1::zeros(1),
            blocks: (0..cfg.n_blocks)
                .map(|_| BlockParams {
                    ln1: Norm::zeros(d),
                    qkv: Linear::zeros(d, 3 * d),
                    proj: Linear::zeros(d, d),
                    ln2: Norm::zeros(d),
                    fc1: Linear::zeros(d, hidden),
                    fc2: Linear::zeros(hidden, d),
                    alpha: Array1::zeros(cfg.n_heads),
                })
                .collect(),
            head_ln: Norm::zeros(2 * d),
            head1: Linear::zeros(2 * d, cfg.head_hidden),
            head2: Linear::zeros(cfg.head_hidden, 1),
        }
    }

    pub fn gamma(&self) -> f64 {
        self.log_gamma[0].exp()
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        fn t2<'a>(out: &mut Vec<TensorRef<'a>>, name: String, a: &'a Array2<f64>) {
            out.push(TensorRef {
                name,
                shape: a.shape().to_vec(),
                data: a.as_slice().expect("standard layout"),
            });
        }
        fn t1<'a>(out: &mut Vec<TensorRef<'a>>, name: String, a: &'a Array1<f64>) {
            out.push(TensorRef {
                name,
                shape: a.shape().to_vec(),
                data: a.as_slice().expect("standard layout"),
            });
        }
        fn lin<'a>(out: &mut Vec<TensorRef<'a>>, name: &str, l: &'a Linear) {
            t2(out, format!("{name}.w"), &l.w);
            t1(out, format!("{name}.b"), &l.b);
        }
        fn norm<'a>(out: &mut Vec<TensorRef<'a>>, name: &str, n: &'a Norm) {
            t1(out, format!("{name}.gamma"), &n.gamma);
            t1(out, format!("{name}.beta"), &n.beta);
        }
        let mut out = Vec::new();
        lin(&mut out, "patch", &self.patch);
        t2(&mut out, "pos".into(), &self.pos);
        lin(&mut out, "aux", &self.aux);
        t1(&mut out, "fusion.log_gamma".into(), &self.log_gamma);
        for (i, b) in self.blocks.iter().enumerate() {
            norm(&mut out, &format!("blocks.{i}.ln1"), &b.ln1);
            lin(&mut out, &format!("blocks.{i}.qkv"), &b.qkv);
            lin(&mut out, &format!("blocks.{i}.proj"), &b.proj);
            norm(&mut out, &format!("blocks.{i}.ln2"), &b.ln2);
            lin(&mut out, &format!("blocks.{i}.fc1"), &b.fc1);
            lin(&mut out, &format!("blocks.{i}.fc2"), &b.fc2);
            t1(&mut out, format!("blocks.{i}.alpha"), &b.alpha);
        }
        norm(&mut out, "head.ln", &self.head_ln);
        lin(&mut out, "head.fc1", &self.head1);
        lin(&mut out, "head.fc2", &self.head2);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        fn t2<'a>(out: &mut Vec<TensorMut<'a>>, name: String, a: &'a mut Array2<f64>) {
            let shape = a.shape().to_vec();
            out.push(TensorMut {
                name,
                shape,
                data: a.as_slice_mut().expect("standard layout"),
            });
        }
        fn t1<'a>(out: &mut Vec<TensorMut<'a>>, name: String, a: &'a mut Array1<f64>) {
            let shape = a.shape().to_vec();
            out.push(TensorMut {
                name,
                shape,
                data: a.as_slice_mut().expect("standard layout"),
            });
        }
        fn lin<'a>(out: &mut Vec<TensorMut<'a>>, name: &str, l: &'a mut Linear) {
            t2(out, format!("{name}.w"), &mut l.w);
            t1(out, format!("{name}.b"), &mut l.b);
        }
        fn norm<'a>(out: &mut Vec<TensorMut<'a>>, name: &str, n: &'a mut Norm) {
            t1(out, format!("{name}.gamma"), &mut n.gamma);
            t1(out, format!("{name}.beta"), &mut n.beta);
        }
        let mut out = Vec::new();
        lin(&mut out, "patch", &mut self.patch);
        t2(&mut out, "pos".into(), &mut self.pos);
        lin(&mut out, "aux", &mut self.aux);
        t1(&mut out, "fusion.log_gamma".into(), &mut self.log_gamma);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            norm(&mut out, &format!("blocks.{i}.ln1"), &mut b.ln1);
            lin(&mut out, &format!("blocks.{i}.qkv"), &mut b.qkv);
            lin(&mut out, &format!("blocks.{i}.proj"), &mut b.proj);
            norm(&mut out, &format!("blocks.{i}.ln2"), &mut b.ln2);
            lin(&mut out, &format!("blocks.{i}.fc1"), &mut b.fc1);
            lin(&mut out, &format!("blocks.{i}.fc2"), &mut b.fc2);
            t1(&mut out, format!("blocks.{i}.alpha"), &mut b.alpha);
        }
        norm(&mut out, "head.ln", &mut self.head_ln);
        lin(&mut out, "head.fc1", &mut self.head1);
        lin(&mut out, "head.fc2", &mut self.head2);
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn set_alpha(&mut self, value: f64) {
        for b in &mut self.blocks {
            b.alpha.fill(value);
        }
    }

    /// Squared L2 norm over every tensor.
    pub fn norm_sq(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum()
    }

    /// Draw `count` distinct random (tensor, index) locations.
    pub fn random_locations(&self, count: usize, rng: &mut ModelRng) -> Vec<(usize, usize)> {
        let sizes: Vec<usize> = self.tensors().iter().map(|t| t.data.len()).collect();
        let total: usize = sizes.iter().sum();
        let mut picked = std::collections::BTreeSet::new();
        while picked.len() < count.min(total) {
            picked.insert(rng.random_range(0..total));
        }
        picked
            .into_iter()
            .map(|mut flat| {
                let mut t = 0;
                while flat >= sizes[t] {
                    flat -= sizes[t];
                    t += 1;
                }
                (t, flat)
            })
            .collect()
    }
}
