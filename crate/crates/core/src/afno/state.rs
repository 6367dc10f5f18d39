use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};
use crate::Scalar;

/// Parameters of one spectral-mixing block.
///
/// Spectral weights are stored per diagonal block as `[block][in][out]`,
/// real and imaginary parts separately; they are shared by every frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub norm1_scale: Vec<T>,
    pub norm1_shift: Vec<T>,
    pub spec_w1_re: Vec<T>,
    pub spec_w1_im: Vec<T>,
    pub spec_b1_re: Vec<T>,
    pub spec_b1_im: Vec<T>,
    pub spec_w2_re: Vec<T>,
    pub spec_w2_im: Vec<T>,
    pub spec_b2_re: Vec<T>,
    pub spec_b2_im: Vec<T>,
    pub norm2_scale: Vec<T>,
    pub norm2_shift: Vec<T>,
    /// `[embed][hidden]`
    pub mlp_w1: Vec<T>,
    pub mlp_b1: Vec<T>,
    /// `[hidden][embed]`
    pub mlp_w2: Vec<T>,
    pub mlp_b2: Vec<T>,
}

macro_rules! block_groups {
    ($self:expr, $prefix:expr, $($ref:tt)+) => {
        vec![
            (format!("{}norm1_scale", $prefix), $($ref)+ $self.norm1_scale),
            (format!("{}norm1_shift", $prefix), $($ref)+ $self.norm1_shift),
            (format!("{}spec_w1_re", $prefix), $($ref)+ $self.spec_w1_re),
            (format!("{}spec_w1_im", $prefix), $($ref)+ $self.spec_w1_im),
            (format!("{}spec_b1_re", $prefix), $($ref)+ $self.spec_b1_re),
            (format!("{}spec_b1_im", $prefix), $($ref)+ $self.spec_b1_im),
            (format!("{}spec_w2_re", $prefix), $($ref)+ $self.spec_w2_re),
            (format!("{}spec_w2_im", $prefix), $($ref)+ $self.spec_w2_im),
            (format!("{}spec_b2_re", $prefix), $($ref)+ $self.spec_b2_re),
            (format!("{}spec_b2_im", $prefix), $($ref)+ $self.spec_b2_im),
            (format!("{}norm2_scale", $prefix), $($ref)+ $self.norm2_scale),
            (format!("{}norm2_shift", $prefix), $($ref)+ $self.norm2_shift),
            (format!("{}mlp_w1", $prefix), $($ref)+ $self.mlp_w1),
            (format!("{}mlp_b1", $prefix), $($ref)+ $self.mlp_b1),
            (format!("{}mlp_w2", $prefix), $($ref)+ $self.mlp_w2),
            (format!("{}mlp_b2", $prefix), $($ref)+ $self.mlp_b2),
        ]
    };
}

impl<T: Scalar> BlockParams<T> {
    fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        let h = cfg.mlp_hidden();
        let spec = cfg.n_freq_blocks * cfg.block_size() * cfg.block_size();
        let z = |n: usize| vec![T::zero(); n];
        Self {
            norm1_scale: z(d),
            norm1_shift: z(d),
            spec_w1_re: z(spec),
            spec_w1_im: z(spec),
            spec_b1_re: z(d),
            spec_b1_im: z(d),
            spec_w2_re: z(spec),
            spec_w2_im: z(spec),
            spec_b2_re: z(d),
            spec_b2_im: z(d),
            norm2_scale: z(d),
            norm2_shift: z(d),
            mlp_w1: z(d * h),
            mlp_b1: z(h),
            mlp_w2: z(h * d),
            mlp_b2: z(d),
        }
    }
}

/// All learnable parameters plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub config: ModelConfig,
    /// `[patch_dim][embed]`
    pub embed_w: Vec<T>,
    pub embed_b: Vec<T>,
    /// `[token][embed]`
    pub pos: Vec<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub norm_scale: Vec<T>,
    pub norm_shift: Vec<T>,
    /// `[embed][head_dim]`
    pub head_w: Vec<T>,
    pub head_b: Vec<T>,
}

impl<T: Scalar> ModelState<T> {
    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.embed_dim;
        let z = |n: usize| vec![T::zero(); n];
        Ok(Self {
            config: config.clone(),
            embed_w: z(config.patch_dim() * d),
            embed_b: z(d),
            pos: z(config.n_tokens() * d),
            blocks: (0..config.n_blocks).map(|_| BlockParams::zeros(config)).collect(),
            norm_scale: z(d),
            norm_shift: z(d),
            head_w: z(d * config.head_dim()),
            head_b: z(config.head_dim()),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    /// Seeded initialization: dense weights from N(0, 2/(fan_in+fan_out)),
    /// spectral weights 0.02 times a perturbed identity, unit norm scales,
    /// zero biases and zero positional encoding.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut s = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embed_dim;
        let hid = config.mlp_hidden();
        let mut glorot = |w: &mut [T], fan_in: usize, fan_out: usize| {
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Normal::new(0.0, std).unwrap();
            for x in w.iter_mut() {
                *x = T::of(dist.sample(&mut rng));
            }
        };
        glorot(&mut s.embed_w, config.patch_dim(), d);
        glorot(&mut s.head_w, d, config.head_dim());
        for b in &mut s.blocks {
            glorot(&mut b.mlp_w1, d, hid);
            glorot(&mut b.mlp_w2, hid, d);
        }
        let bs = config.block_size();
        let jitter = Normal::new(0.0, 0.1).unwrap();
        for b in &mut s.blocks {
            b.norm1_scale.fill(T::one());
            b.norm2_scale.fill(T::one());
            for w in [&mut b.spec_w1_re, &mut b.spec_w2_re] {
                for m in 0..config.n_freq_blocks {
                    for i in 0..bs {
                        for o in 0..bs {
                            let eye = if i == o { 1.0 } else { 0.0 };
                            w[(m * bs + i) * bs + o] = T::of(0.02 * (eye + jitter.sample(&mut rng)));
                        }
                    }
                }
            }
            for w in [&mut b.spec_w1_im, &mut b.spec_w2_im] {
                for x in w.iter_mut() {
                    *x = T::of(0.02 * jitter.sample(&mut rng));
                }
            }
        }
        s.norm_scale.fill(T::one());
        Ok(s)
    }

    /// Named parameter groups in a fixed order.
    pub fn groups(&self) -> Vec<(String, &Vec<T>)> {
        let mut out = vec![
            ("embed_w".to_string(), &self.embed_w),
            ("embed_b".to_string(), &self.embed_b),
            ("pos".to_string(), &self.pos),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(block_groups!(b, format!("block{i}."), &));
        }
        out.push(("norm_scale".to_string(), &self.norm_scale));
        out.push(("norm_shift".to_string(), &self.norm_shift));
        out.push(("head_w".to_string(), &self.head_w));
        out.push(("head_b".to_string(), &self.head_b));
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = vec![
            ("embed_w".to_string(), &mut self.embed_w),
            ("embed_b".to_string(), &mut self.embed_b),
            ("pos".to_string(), &mut self.pos),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(block_groups!(b, format!("block{i}."), &mut));
        }
        out.push(("norm_scale".to_string(), &mut self.norm_scale));
        out.push(("norm_shift".to_string(), &mut self.norm_shift));
        out.push(("head_w".to_string(), &mut self.head_w));
        out.push(("head_b".to_string(), &mut self.head_b));
        out
    }

    pub fn n_params(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    /// `self += alpha * other`, group by group.
    pub fn add_scaled(&mut self, other: &Self, alpha: T) {
        for ((_, dst), (_, src)) in self.groups_mut().into_iter().zip(other.groups()) {
            for (d, &s) in dst.iter_mut().zip(src.iter()) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for (_, g) in self.groups_mut() {
            for x in g.iter_mut() {
                *x *= alpha;
            }
        }
    }

    /// First group holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.groups()
            .into_iter()
            .find(|(_, g)| g.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| n)
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        let mut out = ModelState::<U>::zeros(&self.config).expect("config already validated");
        for ((_, dst), (_, src)) in out.groups_mut().into_iter().zip(self.groups()) {
            for (d, &s) in dst.iter_mut().zip(src.iter()) {
                *d = U::of(s.as_f64());
            }
        }
        out
    }
}
