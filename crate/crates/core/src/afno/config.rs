use std::fmt;
use std::str::FromStr;

use crate::kv::{KvError, KvMap};

use super::ModelError;

/// Elementwise nonlinearity applied separately to the real and imaginary
/// parts inside the spectral MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Self::Relu),
            "identity" => Ok(Self::Identity),
            other => Err(format!("unknown activation {other:?}")),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Relu => "relu",
            Self::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_lat: usize,
    pub n_lon: usize,
    /// Dynamic channels plus any static channels appended after them.
    pub in_channels: usize,
    pub out_channels: usize,
    pub embed_dim: usize,
    pub n_blocks: usize,
    /// Number of diagonal blocks the spectral weights are split into.
    pub n_freq_blocks: usize,
    pub mlp_ratio: f64,
    pub softshrink_lambda: f64,
    pub patch_size: usize,
    pub activation: Activation,
}

const KEYS: [&str; 11] = [
    "n_lat",
    "n_lon",
    "in_channels",
    "out_channels",
    "embed_dim",
    "n_blocks",
    "n_freq_blocks",
    "mlp_ratio",
    "softshrink_lambda",
    "patch_size",
    "activation",
];

impl ModelConfig {
    /// Desk-scale defaults for a grid with `n_dynamic` predicted channels
    /// and `n_static` extra input channels.
    pub fn desk(n_lat: usize, n_lon: usize, n_dynamic: usize, n_static: usize) -> Self {
        Self {
            n_lat,
            n_lon,
            in_channels: n_dynamic + n_static,
            out_channels: n_dynamic,
            embed_dim: 32,
            n_blocks: 4,
            n_freq_blocks: 4,
            mlp_ratio: 2.0,
            softshrink_lambda: 0.0,
            patch_size: 1,
            activation: Activation::Relu,
        }
    }

    /// 8 x 16 grid, 3 dynamic + 1 static channel, embed 16, 2 blocks.
    pub fn tiny() -> Self {
        Self {
            embed_dim: 16,
            n_blocks: 2,
            ..Self::desk(8, 16, 3, 1)
        }
    }

    /// 66 dynamic variables plus orography on the 72 x 144 grid.
    pub fn era5_channels() -> Self {
        Self::desk(72, 144, 66, 1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.n_lat == 0 || self.n_lon == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return bad("grid and channel counts must be positive".into());
        }
        if self.out_channels > self.in_channels {
            return bad("out_channels exceeds in_channels".into());
        }
        if self.embed_dim == 0 || self.n_freq_blocks == 0 || self.embed_dim % self.n_freq_blocks != 0 {
            return bad(format!(
                "embed_dim {} not divisible by n_freq_blocks {}",
                self.embed_dim, self.n_freq_blocks
            ));
        }
        if self.patch_size == 0 || self.n_lat % self.patch_size != 0 || self.n_lon % self.patch_size != 0 {
            return bad(format!(
                "patch_size {} does not divide the {}x{} grid",
                self.patch_size, self.n_lat, self.n_lon
            ));
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return bad("mlp_ratio must be positive".into());
        }
        if !(self.softshrink_lambda >= 0.0) {
            return bad("softshrink_lambda must be non-negative".into());
        }
        Ok(())
    }

    pub fn token_rows(&self) -> usize {
        self.n_lat / self.patch_size
    }

    pub fn token_cols(&self) -> usize {
        self.n_lon / self.patch_size
    }

    pub fn n_tokens(&self) -> usize {
        self.token_rows() * self.token_cols()
    }

    pub fn block_size(&self) -> usize {
        self.embed_dim / self.n_freq_blocks
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }

    /// Input values per token.
    pub fn patch_dim(&self) -> usize {
        self.in_channels * self.patch_size * self.patch_size
    }

    /// Output values per token.
    pub fn head_dim(&self) -> usize {
        self.out_channels * self.patch_size * self.patch_size
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.n_lat * self.n_lon
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.n_lat * self.n_lon
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("n_lat", self.n_lat);
        kv.set("n_lon", self.n_lon);
        kv.set("in_channels", self.in_channels);
        kv.set("out_channels", self.out_channels);
        kv.set("embed_dim", self.embed_dim);
        kv.set("n_blocks", self.n_blocks);
        kv.set("n_freq_blocks", self.n_freq_blocks);
        kv.set("mlp_ratio", self.mlp_ratio);
        kv.set("softshrink_lambda", self.softshrink_lambda);
        kv.set("patch_size", self.patch_size);
        kv.set("activation", self.activation);
        kv
    }

    /// Reads a config; keys other than the model keys are ignored so the
    /// map may carry other records.
    pub fn from_kv(kv: &KvMap) -> Result<Self, KvError> {
        let cfg = Self {
            n_lat: kv.get("n_lat")?,
            n_lon: kv.get("n_lon")?,
            in_channels: kv.get("in_channels")?,
            out_channels: kv.get("out_channels")?,
            embed_dim: kv.get_or("embed_dim", 32)?,
            n_blocks: kv.get_or("n_blocks", 4)?,
            n_freq_blocks: kv.get_or("n_freq_blocks", 4)?,
            mlp_ratio: kv.get_or("mlp_ratio", 2.0)?,
            softshrink_lambda: kv.get_or("softshrink_lambda", 0.0)?,
            patch_size: kv.get_or("patch_size", 1)?,
            activation: kv.get_or("activation", Activation::Relu)?,
        };
        Ok(cfg)
    }

    pub fn keys() -> &'static [&'static str] {
        &KEYS
    }
}
